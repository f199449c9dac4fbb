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

#include "abp/network.hpp"

#include <algorithm>

#include "abp/errors.hpp"

namespace abp {

std::string to_string(BlockState s) {
    switch (s) {
        case BlockState::Active: return "active";
        case BlockState::Pruned: return "pruned";
        case BlockState::Fixed: return "fixed";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// GateMask

GateMask::GateMask(std::vector<BlockState> states, std::set<int> exempt)
    : states_(std::move(states)), exempt_(std::move(exempt)) {
    for (int e : exempt_) {
        if (e < 0 || e >= size()) throw ContractViolation("exempt index out of range");
        if (states_[e] == BlockState::Pruned) {
            throw ContractViolation("exempt block " + std::to_string(e) + " is pruned");
        }
    }
}

GateMask GateMask::initial(const NetworkSpec& spec) {
    std::vector<BlockState> states;
    std::set<int> exempt;
    for (const auto& b : spec.blocks) {
        if (b.shortcut == Shortcut::PadDownsample) {
            exempt.insert(b.index);
            states.push_back(BlockState::Fixed);
        } else {
            states.push_back(BlockState::Active);
        }
    }
    return GateMask(std::move(states), std::move(exempt));
}

GateMask GateMask::all_fixed(const NetworkSpec& spec) {
    GateMask m = initial(spec);
    m.fix_unpruned();
    return m;
}

void GateMask::set_state(int block, BlockState s) {
    if (block < 0 || block >= size()) {
        throw ContractViolation("block index " + std::to_string(block) + " out of range");
    }
    if (s == BlockState::Pruned && is_exempt(block)) {
        throw ContractViolation("block " + std::to_string(block) + " is exempt from pruning");
    }
    if (states_[block] == BlockState::Pruned && s != BlockState::Pruned) {
        throw ContractViolation("block " + std::to_string(block) + " is already pruned");
    }
    states_[block] = s;
}

void GateMask::fix_unpruned() {
    for (auto& s : states_) {
        if (s != BlockState::Pruned) s = BlockState::Fixed;
    }
}

int GateMask::count(BlockState s) const {
    return static_cast<int>(std::count(states_.begin(), states_.end(), s));
}

int GateMask::unpruned_count() const { return size() - count(BlockState::Pruned); }

std::vector<int> GateMask::surviving() const {
    std::vector<int> out;
    for (int i = 0; i < size(); ++i) {
        if (states_[i] != BlockState::Pruned) out.push_back(i);
    }
    return out;
}

std::vector<int> GateMask::pruned() const {
    std::vector<int> out;
    for (int i = 0; i < size(); ++i) {
        if (states_[i] == BlockState::Pruned) out.push_back(i);
    }
    return out;
}

// ---------------------------------------------------------------------------
// ResidualBlock

ResidualBlock::ResidualBlock(const BlockSpec& s)
    : spec(s),
      conv1("blocks." + std::to_string(s.index) + ".conv1", s.in_shape.channels, s.mid_channels, 3,
            s.stride),
      bn1("blocks." + std::to_string(s.index) + ".bn1", s.mid_channels),
      conv2("blocks." + std::to_string(s.index) + ".conv2", s.mid_channels, s.out_shape.channels,
            3, 1),
      bn2("blocks." + std::to_string(s.index) + ".bn2", s.out_shape.channels) {}

Tensor ResidualBlock::forward(const Tensor& x, Mode mode, Cache& cache) const {
    if (x.c() != spec.in_shape.channels || x.h() != spec.in_shape.height ||
        x.w() != spec.in_shape.width) {
        throw ShapeError("block " + std::to_string(spec.index) + ": input " + x.shape_string() +
                         " does not match " + spec.in_shape.to_string());
    }
    cache.x = x;
    cache.a1 = conv1.forward(x);
    cache.r1 = relu(bn1.forward(cache.a1, mode, cache.bn1));
    cache.a2 = conv2.forward(cache.r1);
    Tensor sum = bn2.forward(cache.a2, mode, cache.bn2);
    if (spec.shortcut == Shortcut::Identity) {
        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += x[i];
    } else {
        const Tensor sc = pad_shortcut(x, spec.out_shape.channels, spec.stride);
        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += sc[i];
    }
    cache.out = relu(sum);
    return cache.out;
}

Tensor ResidualBlock::forward(const Tensor& x, Mode mode) const {
    Cache scratch;
    return forward(x, mode, scratch);
}

Tensor ResidualBlock::backward(const Tensor& dout, const Cache& cache, Mode mode) {
    const Tensor dsum = relu_backward(cache.out, dout);
    Tensor d = bn2.backward(dsum, cache.bn2, mode);
    d = conv2.backward(cache.r1, d);
    d = bn1.backward(relu_backward(cache.r1, d), cache.bn1, mode);
    Tensor dx = conv1.backward(cache.x, d);
    if (spec.shortcut == Shortcut::Identity) {
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dsum[i];
    } else {
        const Tensor dsc = pad_shortcut_backward(dsum, spec.in_shape.channels,
                                                 spec.in_shape.height, spec.in_shape.width,
                                                 spec.stride);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dsc[i];
    }
    return dx;
}

void ResidualBlock::commit(const Cache& cache) {
    bn1.commit(cache.bn1, cache.a1.plane_size() * cache.a1.n());
    bn2.commit(cache.bn2, cache.a2.plane_size() * cache.a2.n());
}

void ResidualBlock::init(std::mt19937_64& rng) {
    conv1.init(rng);
    conv2.init(rng);
}

void ResidualBlock::collect(std::vector<Param*>& out) {
    conv1.collect(out);
    bn1.collect(out);
    conv2.collect(out);
    bn2.collect(out);
}

Tensor gated_blend(const Tensor& block_out, const Tensor& input, std::span<const float> marks) {
    if (!block_out.same_shape(input)) {
        throw ShapeError("gated blend: block output " + block_out.shape_string() +
                         " vs input " + input.shape_string());
    }
    if (static_cast<int>(marks.size()) != input.n()) {
        throw ShapeError("gated blend: one mark per instance required");
    }
    Tensor out(input.n(), input.c(), input.h(), input.w());
    for (int i = 0; i < input.n(); ++i) {
        const float m = marks[i];
        auto o = block_out.instance(i);
        auto x = input.instance(i);
        auto y = out.instance(i);
        for (std::size_t j = 0; j < y.size(); ++j) y[j] = o[j] * m + x[j] * (1.0f - m);
    }
    return out;
}

Tensor gated_block_step(const ResidualBlock& block, const Tensor& input,
                        std::span<const float> marks, BlockState state, Mode mode) {
    switch (state) {
        case BlockState::Pruned:
            if (block.spec.shortcut != Shortcut::Identity) {
                throw ContractViolation("block " + std::to_string(block.spec.index) +
                                        " has a downsampling shortcut and cannot be skipped");
            }
            return input;
        case BlockState::Fixed:
            return block.forward(input, mode);
        case BlockState::Active:
            if (block.spec.shortcut != Shortcut::Identity) {
                throw ContractViolation("block " + std::to_string(block.spec.index) +
                                        " has a downsampling shortcut and cannot be gated");
            }
            return gated_blend(block.forward(input, mode), input, marks);
    }
    return input;
}

// ---------------------------------------------------------------------------
// GatedNetwork

GatedNetwork::GatedNetwork(NetworkSpec spec, GateKind gate, std::uint64_t seed,
                           const ConvGateSpec& conv_spec, const RecurGateSpec& recur_spec)
    : spec_(std::move(spec)),
      gate_kind_(gate),
      conv_gate_spec_(conv_spec),
      recur_gate_spec_(recur_spec) {
    validate(spec_, gate == GateKind::None);
    stem_conv = Conv2d("stem.conv", spec_.input_shape.channels, spec_.stem_channels, 3, 1);
    stem_bn = BatchNorm2d("stem.bn", spec_.stem_channels);
    for (const auto& b : spec_.blocks) blocks.emplace_back(b);
    if (gate == GateKind::Conv) {
        for (const auto& b : spec_.blocks) {
            conv_gates.emplace_back("gates." + std::to_string(b.index), conv_spec, b.in_shape);
        }
    } else if (gate == GateKind::Recur) {
        std::vector<int> channels;
        for (const auto& b : spec_.blocks) channels.push_back(b.in_shape.channels);
        recur_gate = RecurGate("gates.recur", recur_spec, channels);
    }
    classifier = Linear("classifier", spec_.feature_shape().channels, spec_.num_classes);

    std::mt19937_64 rng(seed);
    stem_conv.init(rng);
    for (auto& b : blocks) b.init(rng);
    if (gate == GateKind::Conv) {
        for (auto& g : conv_gates) g.init(rng);
    } else if (gate == GateKind::Recur) {
        recur_gate.init(rng);
    }
    classifier.init(rng);
}

void GatedNetwork::check_mask(const GateMask& mask) const {
    if (mask.size() != num_blocks()) {
        throw ContractViolation("mask has " + std::to_string(mask.size()) + " entries, network has " +
                                std::to_string(num_blocks()) + " blocks");
    }
    for (int l = 0; l < num_blocks(); ++l) {
        const BlockState s = mask.state(l);
        if (s != BlockState::Fixed && spec_.blocks[l].shortcut != Shortcut::Identity) {
            throw ContractViolation("block " + std::to_string(l) +
                                    " has a downsampling shortcut and must stay fixed");
        }
    }
}

ForwardResult GatedNetwork::forward(const Tensor& x, const GateMask& mask,
                                    const ForwardOptions& opts, ActivationTrace* trace) const {
    check_mask(mask);
    const LayerShape& in = spec_.input_shape;
    if (x.c() != in.channels || x.h() != in.height || x.w() != in.width) {
        throw ShapeError("input " + x.shape_string() + " does not match network input " +
                         in.to_string());
    }
    ActivationTrace local;
    ActivationTrace& t = trace ? *trace : local;
    const Mode mode = opts.mode;
    const int n = num_blocks();
    t.mode = mode;
    t.input = x;
    t.stem_pre = stem_conv.forward(x);
    t.stem_out = relu(stem_bn.forward(t.stem_pre, mode, t.stem_bn));
    t.blocks.assign(n, {});
    t.block_results.assign(n, {});
    t.conv_gates.assign(gate_kind_ == GateKind::Conv ? n : 0, {});
    t.recur_steps.assign(gate_kind_ == GateKind::Recur ? n : 0, {});
    t.marks.assign(n, {});

    ForwardResult result;
    result.marks.assign(n, std::nullopt);
    RecurState hidden;
    if (gate_kind_ == GateKind::Recur) hidden = recur_gate.initial_state(x.n());

    Tensor cur = t.stem_out;
    for (int l = 0; l < n; ++l) {
        const BlockState state = mask.state(l);
        if (state == BlockState::Pruned) {
            t.block_results[l] = cur;
            continue;
        }
        Tensor out = blocks[l].forward(cur, mode, t.blocks[l]);
        if (state == BlockState::Fixed) {
            cur = std::move(out);
            t.block_results[l] = cur;
            continue;
        }
        std::vector<float> marks;
        if (opts.forced_mark) {
            marks.assign(x.n(), *opts.forced_mark);
        } else if (gate_kind_ == GateKind::Conv) {
            marks = conv_gates[l].forward(cur, mode, t.conv_gates[l]);
        } else if (gate_kind_ == GateKind::Recur) {
            marks = recur_gate.step(l, cur, hidden, t.recur_steps[l]);
        } else {
            throw ContractViolation("block " + std::to_string(l) +
                                    " is active but the network has no gates");
        }
        cur = gated_blend(out, cur, marks);
        t.block_results[l] = cur;
        t.marks[l] = marks;
        result.marks[l] = std::move(marks);
    }
    t.feature = cur;
    t.pooled = global_avg_pool(cur);
    t.logits = classifier.forward(t.pooled);
    result.logits = t.logits;
    return result;
}

Tensor GatedNetwork::backward(const Tensor& dlogits, const GateMask& mask,
                              const ActivationTrace& t, std::span<const std::vector<float>> dmarks) {
    const Mode mode = t.mode;
    const int n = num_blocks();
    Tensor d = classifier.backward(t.pooled, dlogits);
    d = global_avg_pool_backward(d, t.feature.h(), t.feature.w());

    Tensor dh;
    Tensor dc;
    if (gate_kind_ == GateKind::Recur) {
        dh = Tensor(t.input.n(), recur_gate.hidden_dim(), 1, 1);
        dc = Tensor(t.input.n(), recur_gate.hidden_dim(), 1, 1);
    }
    for (int l = n - 1; l >= 0; --l) {
        const BlockState state = mask.state(l);
        if (state == BlockState::Pruned) continue;
        const ResidualBlock::Cache& bc = t.blocks[l];
        if (state == BlockState::Fixed) {
            d = blocks[l].backward(d, bc, mode);
            continue;
        }
        const std::vector<float>& marks = t.marks[l];
        const int batch = d.n();
        Tensor dblock(d.n(), d.c(), d.h(), d.w());
        Tensor dinput(d.n(), d.c(), d.h(), d.w());
        std::vector<float> dmark(batch, 0.0f);
        for (int i = 0; i < batch; ++i) {
            const float m = marks[i];
            auto g = d.instance(i);
            auto o = bc.out.instance(i);
            auto x = bc.x.instance(i);
            auto gb = dblock.instance(i);
            auto gi = dinput.instance(i);
            double acc = 0.0;
            for (std::size_t j = 0; j < g.size(); ++j) {
                gb[j] = g[j] * m;
                gi[j] = g[j] * (1.0f - m);
                acc += static_cast<double>(g[j]) * (o[j] - x[j]);
            }
            dmark[i] = static_cast<float>(acc);
            if (!dmarks.empty() && !dmarks[l].empty()) dmark[i] += dmarks[l][i];
        }
        const Tensor dx_block = blocks[l].backward(dblock, bc, mode);
        for (std::size_t j = 0; j < dinput.size(); ++j) dinput[j] += dx_block[j];
        const bool gate_ran =
            (gate_kind_ == GateKind::Conv && !t.conv_gates[l].marks.empty()) ||
            (gate_kind_ == GateKind::Recur && !t.recur_steps[l].marks.empty());
        if (gate_ran) {
            Tensor dx_gate;
            if (gate_kind_ == GateKind::Conv) {
                dx_gate = conv_gates[l].backward(dmark, t.conv_gates[l], mode);
            } else {
                dx_gate = recur_gate.step_backward(l, dmark, dh, dc, t.recur_steps[l]);
            }
            for (std::size_t j = 0; j < dinput.size(); ++j) dinput[j] += dx_gate[j];
        }
        d = std::move(dinput);
    }
    d = stem_bn.backward(relu_backward(t.stem_out, d), t.stem_bn, mode);
    return stem_conv.backward(t.input, d);
}

void GatedNetwork::commit_statistics(const GateMask& mask, const ActivationTrace& t) {
    if (t.mode != Mode::Train) return;
    stem_bn.commit(t.stem_bn, t.stem_pre.plane_size() * t.stem_pre.n());
    for (int l = 0; l < num_blocks(); ++l) {
        if (mask.state(l) == BlockState::Pruned) continue;
        blocks[l].commit(t.blocks[l]);
        if (mask.state(l) == BlockState::Active && !t.conv_gates.empty() &&
            !t.conv_gates[l].marks.empty()) {
            conv_gates[l].commit(t.conv_gates[l]);
        }
    }
}

std::vector<Param*> GatedNetwork::parameters() {
    std::vector<Param*> out;
    stem_conv.collect(out);
    stem_bn.collect(out);
    for (auto& b : blocks) b.collect(out);
    if (gate_kind_ == GateKind::Conv) {
        for (auto& g : conv_gates) g.collect(out);
    } else if (gate_kind_ == GateKind::Recur) {
        recur_gate.collect(out);
    }
    classifier.collect(out);
    return out;
}

std::vector<const Param*> GatedNetwork::parameters() const {
    auto mut = const_cast<GatedNetwork*>(this)->parameters();
    return {mut.begin(), mut.end()};
}

std::vector<Param*> GatedNetwork::gate_parameters() {
    std::vector<Param*> out;
    if (gate_kind_ == GateKind::Conv) {
        for (auto& g : conv_gates) g.collect(out);
    } else if (gate_kind_ == GateKind::Recur) {
        recur_gate.collect(out);
    }
    return out;
}

void GatedNetwork::zero_grad() {
    for (Param* p : parameters()) p->zero_grad();
}

double accuracy(const GatedNetwork& net, const GateMask& mask, const Tensor& x,
                std::span<const int> labels, int batch_size) {
    if (x.n() == 0) return 0.0;
    int correct = 0;
    for (int first = 0; first < x.n(); first += batch_size) {
        const int count = std::min(batch_size, x.n() - first);
        const Tensor logits = net.logits(x.slice(first, count), mask);
        for (int i = 0; i < count; ++i) {
            auto row = logits.instance(i);
            const int pred =
                static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
            if (pred == labels[first + i]) ++correct;
        }
    }
    return static_cast<double>(correct) / x.n();
}

}  // namespace abp
