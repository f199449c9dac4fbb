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

#ifndef ABP_COMPACT_HPP
#define ABP_COMPACT_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "abp/checkpoint.hpp"
#include "abp/network.hpp"

namespace abp {

/// Gate-free network holding only the surviving blocks.
struct CompactModel {
    GatedNetwork net;  // GateKind::None
    GateMask mask;     // all Fixed
    /// Original block index of every compact block.
    std::vector<int> provenance;
    /// The full architecture the model was exported from.
    NetworkSpec baseline;

    const NetworkSpec& spec() const noexcept { return net.spec(); }
    Tensor logits(const Tensor& x) const { return net.logits(x, mask); }
};

/// Copies stem, surviving blocks and classifier. Throws ContractViolation
/// ("export before fixing") if any block is still Active.
CompactModel export_compact(const GatedNetwork& net, const GateMask& mask);

/// Spec restricted to `keep` (ascending original indices), re-indexed.
NetworkSpec restrict_spec(const NetworkSpec& spec, const std::vector<int>& keep);

// MAC counts: convolution C_in*C_out*k*k*H_out*W_out, fully connected
// in*out. Normalization, activations, pooling and pad shortcuts are free.
std::uint64_t stem_flops(const NetworkSpec& spec);
std::uint64_t block_flops(const BlockSpec& block);
std::uint64_t classifier_flops(const NetworkSpec& spec);
std::uint64_t count_flops(const NetworkSpec& spec);
std::uint64_t count_flops(const CompactModel& model);

// Learnable scalars in convolutions, normalization (scale and shift) and
// the classifier (weights and bias). Gates are never counted.
std::uint64_t stem_params(const NetworkSpec& spec);
std::uint64_t block_params(const BlockSpec& block);
std::uint64_t classifier_params(const NetworkSpec& spec);
std::uint64_t count_params(const NetworkSpec& spec);
std::uint64_t count_params(const CompactModel& model);

struct CompressionReport {
    std::string method = "abp";
    std::uint64_t flops_baseline = 0;
    std::uint64_t flops_pruned = 0;
    std::uint64_t params_baseline = 0;
    std::uint64_t params_pruned = 0;

    double flops_drop_pct() const;
    double params_drop_pct() const;

    /// key = value lines.
    std::string to_text() const;
    static std::string csv_header();
    std::string to_csv_row() const;
};

CompressionReport make_report(const NetworkSpec& baseline, const NetworkSpec& pruned,
                              std::string method = "abp");

/// Formats a count in millions with two decimals, e.g. "68.86M".
std::string format_millions(std::uint64_t count);

/// Largest |logit difference| between the masked gated network and the
/// compact model over `inputs`.
float verify_equivalence(const GatedNetwork& net, const GateMask& mask,
                         const CompactModel& compact, const Tensor& inputs);

void save_compact(const std::filesystem::path& path, const CompactModel& model,
                  const nlohmann::json& extra_meta = nlohmann::json::object());
/// Loads a checkpoint written by save_compact.
CompactModel load_compact(const std::filesystem::path& path);
bool is_compact_checkpoint(const nlohmann::json& meta);
CompactModel compact_from_checkpoint(Checkpoint&& ck);

}  // namespace abp

#endif  // ABP_COMPACT_HPP
