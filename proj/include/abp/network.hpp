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

#ifndef ABP_NETWORK_HPP
#define ABP_NETWORK_HPP

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "abp/gates.hpp"
#include "abp/layers.hpp"
#include "abp/network_spec.hpp"

namespace abp {

/// Pruning state of one block. Active blends the block with its input by
/// the gate mark, Pruned skips it, Fixed runs it without a gate.
enum class BlockState : std::uint8_t { Active = 0, Pruned = 1, Fixed = 2 };

std::string to_string(BlockState s);

/// Per-block states plus the set of blocks that can never be pruned.
class GateMask {
public:
    GateMask() = default;
    GateMask(std::vector<BlockState> states, std::set<int> exempt);

    /// Downsampling blocks exempt and Fixed, every other block Active.
    static GateMask initial(const NetworkSpec& spec);
    /// Every block Fixed (the un-gated network).
    static GateMask all_fixed(const NetworkSpec& spec);

    int size() const noexcept { return static_cast<int>(states_.size()); }
    BlockState state(int block) const { return states_.at(block); }
    const std::vector<BlockState>& states() const noexcept { return states_; }
    const std::set<int>& exempt() const noexcept { return exempt_; }
    bool is_exempt(int block) const { return exempt_.contains(block); }

    /// Pruned is absorbing and exempt blocks can never be pruned; both
    /// violations throw ContractViolation.
    void set_state(int block, BlockState s);
    void prune(int block) { set_state(block, BlockState::Pruned); }
    /// Every block that is not Pruned becomes Fixed.
    void fix_unpruned();

    int unpruned_count() const;
    int count(BlockState s) const;
    /// Indices of blocks not Pruned, ascending.
    std::vector<int> surviving() const;
    std::vector<int> pruned() const;

    bool operator==(const GateMask&) const = default;

private:
    std::vector<BlockState> states_;
    std::set<int> exempt_;
};

class ResidualBlock {
public:
    struct Cache {
        Tensor x;
        Tensor a1;
        BnCache bn1;
        Tensor r1;
        Tensor a2;
        BnCache bn2;
        Tensor out;
    };

    ResidualBlock() = default;
    explicit ResidualBlock(const BlockSpec& spec);

    /// Full block output including its internal shortcut and final ReLU.
    Tensor forward(const Tensor& x, Mode mode, Cache& cache) const;
    Tensor forward(const Tensor& x, Mode mode = Mode::Eval) const;
    Tensor backward(const Tensor& dout, const Cache& cache, Mode mode);
    void commit(const Cache& cache);

    void init(std::mt19937_64& rng);
    void collect(std::vector<Param*>& out);

    BlockSpec spec;
    Conv2d conv1;
    BatchNorm2d bn1;
    Conv2d conv2;
    BatchNorm2d bn2;
};

/// out = block_out * m + input * (1 - m), per instance.
Tensor gated_blend(const Tensor& block_out, const Tensor& input, std::span<const float> marks);

/// One gated block step for the given state. `marks` holds one mark per
/// instance and is only read when the state is Active.
Tensor gated_block_step(const ResidualBlock& block, const Tensor& input,
                        std::span<const float> marks, BlockState state, Mode mode = Mode::Eval);

/// Everything a forward pass keeps for the backward pass.
struct ActivationTrace {
    Mode mode = Mode::Eval;
    Tensor input;
    Tensor stem_pre;
    BnCache stem_bn;
    Tensor stem_out;
    std::vector<ResidualBlock::Cache> blocks;  // x = I_l, out = O_l
    std::vector<Tensor> block_results;         // I_{l+1}
    std::vector<ConvGate::Cache> conv_gates;
    std::vector<RecurGate::StepCache> recur_steps;
    std::vector<std::vector<float>> marks;  // empty when the block emits none
    Tensor feature;                         // f
    Tensor pooled;
    Tensor logits;
};

struct ForwardOptions {
    Mode mode = Mode::Eval;
    /// Replaces every Active gate output with this value (gates not run).
    std::optional<float> forced_mark;
};

struct ForwardResult {
    Tensor logits;
    /// Per block: marks per instance, or nullopt for Pruned/Fixed blocks.
    std::vector<std::optional<std::vector<float>>> marks;
};

/// Block-structured network with one gating module per block.
class GatedNetwork {
public:
    GatedNetwork() = default;
    GatedNetwork(NetworkSpec spec, GateKind gate, std::uint64_t seed,
                 const ConvGateSpec& conv_spec = {}, const RecurGateSpec& recur_spec = {});

    const NetworkSpec& spec() const noexcept { return spec_; }
    GateKind gate_kind() const noexcept { return gate_kind_; }
    const ConvGateSpec& conv_gate_spec() const noexcept { return conv_gate_spec_; }
    const RecurGateSpec& recur_gate_spec() const noexcept { return recur_gate_spec_; }
    int num_blocks() const noexcept { return spec_.num_blocks(); }

    /// Pure in its arguments; Train mode uses batch statistics without
    /// touching the running ones (see commit_statistics).
    ForwardResult forward(const Tensor& x, const GateMask& mask, const ForwardOptions& opts = {},
                          ActivationTrace* trace = nullptr) const;
    Tensor logits(const Tensor& x, const GateMask& mask) const {
        return forward(x, mask).logits;
    }

    /// Accumulates parameter gradients for d(loss)/d(logits) and returns
    /// the input gradient. `dmarks`, when given, adds a direct gradient on
    /// the emitted marks (one vector per block, empty for none).
    Tensor backward(const Tensor& dlogits, const GateMask& mask, const ActivationTrace& trace,
                    std::span<const std::vector<float>> dmarks = {});

    /// Folds Train-mode batch statistics into running statistics.
    void commit_statistics(const GateMask& mask, const ActivationTrace& trace);

    /// Every tensor (learnable and buffers) in checkpoint order.
    std::vector<Param*> parameters();
    std::vector<const Param*> parameters() const;
    /// Only the gate tensors.
    std::vector<Param*> gate_parameters();
    void zero_grad();

    Conv2d stem_conv;
    BatchNorm2d stem_bn;
    std::vector<ResidualBlock> blocks;
    std::vector<ConvGate> conv_gates;
    RecurGate recur_gate;
    Linear classifier;

private:
    void check_mask(const GateMask& mask) const;

    NetworkSpec spec_;
    GateKind gate_kind_ = GateKind::None;
    ConvGateSpec conv_gate_spec_;
    RecurGateSpec recur_gate_spec_;
};

/// Top-1 accuracy of `net` under `mask` in Eval mode.
double accuracy(const GatedNetwork& net, const GateMask& mask, const Tensor& x,
                std::span<const int> labels, int batch_size = 256);

}  // namespace abp

#endif  // ABP_NETWORK_HPP
