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

#include "abp/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "abp/errors.hpp"

namespace abp {

MarkLedger::MarkLedger(const GateMask& mask) : sums_(mask.size()) {
    for (int l = 0; l < mask.size(); ++l) {
        if (mask.state(l) == BlockState::Active && !mask.is_exempt(l)) sums_[l] = 0.0;
    }
}

MarkLedger::MarkLedger(std::vector<std::optional<double>> sums, std::size_t count)
    : sums_(std::move(sums)), count_(count) {}

std::optional<double> MarkLedger::mean(int block) const {
    const auto s = sum(block);
    if (!s || count_ == 0) return std::nullopt;
    return *s / static_cast<double>(count_);
}

void MarkLedger::add(const std::vector<std::optional<std::vector<float>>>& marks) {
    if (static_cast<int>(marks.size()) != size()) {
        throw ContractViolation("marks cover " + std::to_string(marks.size()) +
                                " blocks, ledger has " + std::to_string(size()));
    }
    std::optional<std::size_t> batch;
    for (int l = 0; l < size(); ++l) {
        if (!marks[l]) {
            if (sums_[l]) {
                throw ContractViolation("no marks for gate-controlled block " + std::to_string(l));
            }
            continue;
        }
        if (!sums_[l]) {
            throw ContractViolation("marks emitted for block " + std::to_string(l) +
                                    " which is not gate-controlled");
        }
        if (batch && *batch != marks[l]->size()) {
            throw ContractViolation("blocks report different instance counts");
        }
        batch = marks[l]->size();
    }
    // Fixed block order, one writer: sums are reproducible bit for bit.
    for (int l = 0; l < size(); ++l) {
        if (!marks[l]) continue;
        double s = *sums_[l];
        for (float m : *marks[l]) s += m;
        sums_[l] = s;
    }
    if (batch) count_ += *batch;
}

MarkLedger accumulate(MarkLedger ledger, const std::vector<std::optional<std::vector<float>>>& marks) {
    ledger.add(marks);
    return ledger;
}

int prune_target_count(int num_blocks, double gamma) {
    return static_cast<int>(std::floor(gamma * num_blocks + 1e-9));
}

int default_prune_step(int num_blocks, double gamma) {
    const int total = prune_target_count(num_blocks, gamma);
    return std::max(1, (total + 2) / 3);
}

PruneState make_prune_state(GateMask mask, double gamma, int k) {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
    if (k < 1) throw ConfigError("k must be >= 1");
    return {std::move(mask), gamma, k};
}

bool pruning_done(const PruneState& state) {
    return state.mask.unpruned_count() <= state.target_unpruned();
}

PruneStep select_and_prune(const PruneState& state, const MarkLedger& ledger) {
    if (ledger.size() != state.num_blocks()) {
        throw ContractViolation("ledger and mask disagree on block count");
    }
    std::vector<int> candidates;
    for (int l = 0; l < state.num_blocks(); ++l) {
        if (state.mask.state(l) == BlockState::Active && !state.mask.is_exempt(l) &&
            ledger.present(l)) {
            candidates.push_back(l);
        }
    }
    // a sweep over a mask without gated blocks yields an empty ledger too
    if (candidates.empty()) throw PruningExhausted("no prunable block left");
    if (ledger.count() == 0) throw ContractViolation("mark ledger is empty");

    const int quota = std::min<int>(state.k, state.mask.unpruned_count() - state.target_unpruned());
    std::stable_sort(candidates.begin(), candidates.end(), [&](int a, int b) {
        const double sa = *ledger.sum(a);
        const double sb = *ledger.sum(b);
        if (sa != sb) return sa < sb;
        return a < b;
    });
    PruneStep step{state, {}};
    for (int i = 0; i < quota && i < static_cast<int>(candidates.size()); ++i) {
        step.state.mask.prune(candidates[i]);
        step.pruned.push_back(candidates[i]);
    }
    return step;
}

StageTwoTrace run_prune_loop(PruneState state,
                             const std::function<MarkLedger(const GateMask&, int)>& sweep,
                             const std::function<void(const GateMask&, int)>& train) {
    StageTwoTrace trace;
    int iteration = 0;
    while (!pruning_done(state)) {
        ++iteration;
        const MarkLedger ledger = sweep(state.mask, iteration);
        PruneStep step;
        try {
            step = select_and_prune(state, ledger);
        } catch (const PruningExhausted&) {
            trace.exhausted = true;
            break;
        }
        state = std::move(step.state);
        trace.iterations.push_back(std::move(step.pruned));
        if (train) train(state.mask, iteration);
    }
    trace.mask = state.mask;
    return trace;
}

std::string format_mark_dump(const NetworkSpec& spec, const GateMask& mask,
                             const MarkLedger& ledger, int iteration) {
    std::ostringstream out;
    out << "# iteration block stage mark state\n";
    for (int l = 0; l < mask.size(); ++l) {
        out << iteration << ' ' << l << ' ' << spec.blocks.at(l).stage << ' ';
        if (const auto s = ledger.sum(l)) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.6f", *s);
            out << buf;
        } else {
            out << "absent";
        }
        out << ' ' << to_string(mask.state(l)) << (mask.is_exempt(l) ? "(exempt)" : "") << '\n';
    }
    return out.str();
}

}  // namespace abp
