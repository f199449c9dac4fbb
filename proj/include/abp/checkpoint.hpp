// Copyright 2026 The ABP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef ABP_CHECKPOINT_HPP
#define ABP_CHECKPOINT_HPP

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "json.hpp"

#include "abp/network.hpp"

namespace abp {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Network, mask and free-form metadata restored from a checkpoint.
struct Checkpoint {
    GatedNetwork net;
    GateMask mask;
    nlohmann::json meta = nlohmann::json::object();
};

/// Binary layout (all integers little-endian u32, floats little-endian f32):
///
///   "ABPCKPT\0" | version | header length | header (canonical JSON text:
///   network spec, gate kind and gate geometry, meta) | tensor count |
///   per tensor: name length, name, n, c, h, w, values |
///   block count | one state byte per block | exempt count | exempt indices
///
/// Tensors appear in GatedNetwork::parameters() order.
std::vector<std::uint8_t> encode_checkpoint(const GatedNetwork& net, const GateMask& mask,
                                            const nlohmann::json& meta = nlohmann::json::object());
/// Throws ParseError (with byte offset) on malformed or unsupported input.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const GatedNetwork& net,
                     const GateMask& mask, const nlohmann::json& meta = nlohmann::json::object());
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace abp

#endif  // ABP_CHECKPOINT_HPP
