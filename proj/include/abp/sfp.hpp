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

#ifndef ABP_SFP_HPP
#define ABP_SFP_HPP

#include <string>
#include <vector>

#include "abp/compact.hpp"
#include "abp/data.hpp"
#include "abp/schedule.hpp"

namespace abp {

/// Soft filter pruning of the first convolution of every block.
struct SfpConfig {
    double rate = 0.0;  // fraction of filters zeroed per layer, [0, 1)
    int epochs = 0;     // fine-tune epochs
    int cadence = 1;    // epochs between mask steps

    /// Throws ConfigError on rate outside [0,1), negative epochs, cadence < 1.
    void validate() const;
    int zeroed_count(int filters) const;
};

/// L2 norm of every output filter of each block's first convolution.
using FilterNorms = std::vector<std::vector<float>>;

FilterNorms filter_norms(const GatedNetwork& net);

/// Filters to zero in one layer: the floor(rate * C) smallest norms,
/// ties to the lower index, returned ascending.
std::vector<int> smallest_filters(const std::vector<float>& norms, double rate);

/// Zeroes the selected conv1 filters of every block. The matching bn1
/// channel keeps its scale and shift; its running mean is moved so the
/// channel is exactly silent at inference. Returns the zeroed filters.
std::vector<std::vector<int>> sfp_mask_step(CompactModel& model, const SfpConfig& cfg);
std::vector<std::vector<int>> sfp_mask_step(GatedNetwork& net, const SfpConfig& cfg);

struct SfpResult {
    CompactModel model;
    /// MAC count of the shrunk model (method "abp-sfp").
    CompressionReport report;
    /// Every block convolution scaled by (1 - rate)^2, the per-layer
    /// channel-ratio convention (method "abp-sfp-nominal").
    CompressionReport nominal_report;
    /// Layers kept whole because their zeroed filters did not match a mask step.
    std::vector<std::string> warnings;
};

/// Removes the filters zeroed by a final mask step together with the bn1
/// channels and the matching conv2 input channels.
SfpResult sfp_finalize(const CompactModel& model, const SfpConfig& cfg);

/// Fine-tunes with a mask step every `cadence` epochs and once more at
/// the end. Training continues the epoch count in `epochs_done` and uses
/// the Stage III learning rate.
CompactModel sfp_finetune(CompactModel model, const Dataset& data, const SfpConfig& sfp,
                          const TrainConfig& cfg, int& epochs_done, const StageHooks& hooks = {});

}  // namespace abp

#endif  // ABP_SFP_HPP
