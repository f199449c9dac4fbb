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

#ifndef ABP_PIPELINE_HPP
#define ABP_PIPELINE_HPP

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "abp/checkpoint.hpp"
#include "abp/compact.hpp"
#include "abp/config.hpp"
#include "abp/sfp.hpp"

namespace abp {

Dataset load_train_data(const RunConfig& cfg);
/// Test split; normalized with the training statistics. Empty when a
/// CIFAR run has no test path.
Dataset load_test_data(const RunConfig& cfg, const Dataset& train);

/// Exclusive ownership of a run directory through a lock file.
class RunLock {
public:
    explicit RunLock(const std::filesystem::path& dir);
    ~RunLock();
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    std::filesystem::path path_;
};

struct RunOptions {
    /// Continue from a checkpoint written by a previous run.
    std::optional<std::filesystem::path> resume;
    /// Progress log; nullptr silences it.
    std::ostream* log = nullptr;
};

struct RunOutcome {
    std::filesystem::path dir;
    GatedNetwork final_net;
    GateMask final_mask;
    CompactModel compact;
    CompressionReport report;
    std::optional<SfpResult> sfp;
    std::vector<std::vector<int>> pruned_per_iteration;
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;  // NaN without a test split
};

/// Stages I to III, export and the optional SFP stage. The run directory
/// <output_dir>/run-<id> receives config.json, metrics.log, mark dumps,
/// stage<k>-iter<j>.ckpt, compact.ckpt, report.txt and report.csv.
RunOutcome run_training(const RunConfig& cfg, const RunOptions& opts = {});

/// Baseline vs pruned cost of a gated or compact checkpoint.
CompressionReport report_for_checkpoint(const Checkpoint& ck);
/// Per-block table: index, stage, channels, state (or provenance for
/// compact models). Never mentions gates for compact models.
std::string block_table(const Checkpoint& ck);

}  // namespace abp

#endif  // ABP_PIPELINE_HPP
