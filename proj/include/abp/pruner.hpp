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

#ifndef ABP_PRUNER_HPP
#define ABP_PRUNER_HPP

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "abp/network.hpp"

namespace abp {

/// Per-block sums of gate marks over the instances seen so far. Blocks that
/// were not gate-controlled when the ledger was opened have no entry.
class MarkLedger {
public:
    MarkLedger() = default;
    /// Opens an entry for every Active, non-exempt block of `mask`.
    explicit MarkLedger(const GateMask& mask);
    /// Ledger with explicit sums (nullopt = absent) and instance count.
    MarkLedger(std::vector<std::optional<double>> sums, std::size_t count);

    int size() const noexcept { return static_cast<int>(sums_.size()); }
    bool present(int block) const { return sums_.at(block).has_value(); }
    std::optional<double> sum(int block) const { return sums_.at(block); }
    std::optional<double> mean(int block) const;
    std::size_t count() const noexcept { return count_; }
    const std::vector<std::optional<double>>& sums() const noexcept { return sums_; }

    /// Adds one batch of marks in block order. Every present entry must
    /// receive exactly one mark per instance; marks for an absent entry
    /// are a ContractViolation.
    void add(const std::vector<std::optional<std::vector<float>>>& marks);

private:
    std::vector<std::optional<double>> sums_;
    std::size_t count_ = 0;
};

MarkLedger accumulate(MarkLedger ledger, const std::vector<std::optional<std::vector<float>>>& marks);

/// Number of blocks removed overall for ratio gamma: floor(gamma * N).
/// A 1e-9 slack absorbs binary representation error of gamma.
int prune_target_count(int num_blocks, double gamma);
/// ceil(floor(gamma * N) / 3), at least 1.
int default_prune_step(int num_blocks, double gamma);

struct PruneState {
    GateMask mask;
    double gamma = 0.0;
    int k = 1;

    int num_blocks() const noexcept { return mask.size(); }
    int target_unpruned() const { return num_blocks() - prune_target_count(num_blocks(), gamma); }
};

/// Validates gamma in [0,1) and k >= 1.
PruneState make_prune_state(GateMask mask, double gamma, int k);

struct PruneStep {
    PruneState state;
    std::vector<int> pruned;  // in pruning order
};

/// Prunes the min(k, unpruned - target) prunable blocks with the lowest
/// sums; ties go to the lower block index. Throws PruningExhausted when no
/// prunable block is left and ContractViolation on an empty ledger.
PruneStep select_and_prune(const PruneState& state, const MarkLedger& ledger);

bool pruning_done(const PruneState& state);

struct StageTwoTrace {
    GateMask mask;
    std::vector<std::vector<int>> iterations;
    bool exhausted = false;
};

/// Stage II control flow, independent of training. Each iteration calls
/// `sweep(mask, iteration)` for a fresh ledger, prunes, then
/// `train(mask, iteration)`.
StageTwoTrace run_prune_loop(
    PruneState state, const std::function<MarkLedger(const GateMask&, int)>& sweep,
    const std::function<void(const GateMask&, int)>& train = {});

/// Plain-text table: iteration, block, stage, M_l (or "absent"), state.
std::string format_mark_dump(const NetworkSpec& spec, const GateMask& mask,
                             const MarkLedger& ledger, int iteration);

}  // namespace abp

#endif  // ABP_PRUNER_HPP
