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

#ifndef ABP_GATES_HPP
#define ABP_GATES_HPP

#include <array>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "abp/layers.hpp"
#include "abp/network_spec.hpp"

namespace abp {

enum class GateKind { None, Conv, Recur };

std::string to_string(GateKind kind);
GateKind gate_kind_from_string(const std::string& s);

/// Feed-forward gate: two strided conv+BN+ReLU stages, global average
/// pool, one-unit fully connected head, sigmoid.
struct ConvGateSpec {
    int reduce_channels = 16;
    int kernel = 3;
    std::array<int, 2> conv_strides{2, 2};
    int fc_in = 16;
};

class ConvGate {
public:
    struct Cache {
        Tensor x;
        Tensor a1;
        BnCache bn1;
        Tensor r1;
        Tensor a2;
        BnCache bn2;
        Tensor r2;
        Tensor pooled;
        std::vector<float> marks;
    };

    ConvGate() = default;
    /// Throws ShapeError if `input` is too small for both strided convs.
    ConvGate(const std::string& name, const ConvGateSpec& spec, const LayerShape& input);

    std::vector<float> forward(const Tensor& x, Mode mode, Cache& cache) const;
    /// Returns the gradient with respect to the gate input.
    Tensor backward(std::span<const float> dmark, const Cache& cache, Mode mode);
    void commit(const Cache& cache);

    void init(std::mt19937_64& rng);
    void collect(std::vector<Param*>& out);

    Conv2d conv1;
    BatchNorm2d bn1;
    Conv2d conv2;
    BatchNorm2d bn2;
    Linear fc;
};

struct RecurGateSpec {
    int embed_dim = 16;
    int hidden_dim = 10;
};

/// Recurrent state carried across the gated blocks of one forward pass.
struct RecurState {
    Tensor h;  // (N, hidden, 1, 1)
    Tensor c;
};

/// Per-block 1x1 projection of the pooled block input feeding one LSTM cell
/// shared by the whole network; a linear head and sigmoid give the mark.
class RecurGate {
public:
    struct StepCache {
        int in_h = 0;
        int in_w = 0;
        Tensor pooled;
        Tensor embed;
        Tensor h_prev;
        Tensor c_prev;
        Tensor i, f, g, o;
        Tensor c;
        Tensor tanh_c;
        Tensor h;
        std::vector<float> marks;
    };

    RecurGate() = default;
    RecurGate(const std::string& name, const RecurGateSpec& spec,
              const std::vector<int>& block_in_channels);

    int hidden_dim() const noexcept { return hh.in_features(); }
    RecurState initial_state(int batch) const;

    std::vector<float> step(int block, const Tensor& x, RecurState& state, StepCache& cache) const;
    /// Backpropagates one step. `dh` and `dc` hold the gradient flowing in
    /// from later steps and are replaced by the gradient for earlier steps.
    Tensor step_backward(int block, std::span<const float> dmark, Tensor& dh, Tensor& dc,
                         const StepCache& cache);

    void init(std::mt19937_64& rng);
    /// Projections in block order, then the shared cell and head.
    void collect(std::vector<Param*>& out);

    std::vector<Linear> projections;
    Linear ih;
    Linear hh;
    Linear head;
};

}  // namespace abp

#endif  // ABP_GATES_HPP
