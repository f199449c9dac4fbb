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

#ifndef ABP_LAYERS_HPP
#define ABP_LAYERS_HPP

#include <random>
#include <string>
#include <vector>

#include "abp/tensor.hpp"

namespace abp {

/// Normalization behaviour of a forward pass. Train uses batch statistics,
/// Eval uses the running statistics and is a pure function of parameters.
enum class Mode { Train, Eval };

/// A named tensor owned by a layer. Buffers (running statistics) are saved
/// in checkpoints but are not learnable and carry no gradient.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    bool learnable = true;

    void zero_grad() {
        if (learnable) grad.fill(0.0f);
    }
};

Param make_param(std::string name, int n, int c, int h, int w, float fill = 0.0f);
Param make_buffer(std::string name, int n, int c, int h, int w, float fill = 0.0f);

/// Square-kernel convolution, zero padding of kernel/2, no bias.
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride);

    int in_channels() const noexcept { return weight.value.c(); }
    int out_channels() const noexcept { return weight.value.n(); }
    int kernel() const noexcept { return weight.value.h(); }
    int stride() const noexcept { return stride_; }
    int padding() const noexcept { return kernel() / 2; }
    int output_size(int input) const noexcept {
        return (input + 2 * padding() - kernel()) / stride_ + 1;
    }

    Tensor forward(const Tensor& x) const;
    /// Accumulates into weight.grad and returns the input gradient.
    Tensor backward(const Tensor& x, const Tensor& dy);

    /// Kaiming-normal (fan-out) initialization.
    void init(std::mt19937_64& rng);
    void collect(std::vector<Param*>& out) { out.push_back(&weight); }

    Param weight;

private:
    int stride_ = 1;
};

struct BnCache {
    Tensor xhat;
    std::vector<float> batch_mean;
    std::vector<float> batch_var;
    std::vector<float> inv_std;
};

/// Per-channel batch normalization with affine parameters.
class BatchNorm2d {
public:
    static constexpr float kEps = 1e-5f;
    static constexpr float kMomentum = 0.1f;

    BatchNorm2d() = default;
    BatchNorm2d(const std::string& name, int channels);

    int channels() const noexcept { return gamma.value.n(); }

    Tensor forward(const Tensor& x, Mode mode, BnCache& cache) const;
    Tensor forward(const Tensor& x) const;
    /// Folds the batch statistics of a Train-mode forward into the running ones.
    void commit(const BnCache& cache, std::size_t count_per_channel);
    Tensor backward(const Tensor& dy, const BnCache& cache, Mode mode);

    void collect(std::vector<Param*>& out);

    Param gamma;
    Param beta;
    Param running_mean;
    Param running_var;
};

/// Fully connected layer y = W x + b over flattened instances.
class Linear {
public:
    Linear() = default;
    Linear(const std::string& name, int in_features, int out_features);

    int in_features() const noexcept { return weight.value.c(); }
    int out_features() const noexcept { return weight.value.n(); }

    Tensor forward(const Tensor& x) const;
    Tensor backward(const Tensor& x, const Tensor& dy);

    /// Uniform(-1/sqrt(in), 1/sqrt(in)) for weight and bias.
    void init(std::mt19937_64& rng);
    void collect(std::vector<Param*>& out);

    Param weight;  // (out, in, 1, 1)
    Param bias;    // (out, 1, 1, 1)
};

Tensor relu(const Tensor& x);
/// Gradient of relu given its output.
Tensor relu_backward(const Tensor& y, const Tensor& dy);

/// Global average pool to (N, C, 1, 1).
Tensor global_avg_pool(const Tensor& x);
Tensor global_avg_pool_backward(const Tensor& dy, int h, int w);

/// Parameter-free downsampling shortcut: spatial subsampling by `stride`
/// and zero channel padding split evenly before/after.
Tensor pad_shortcut(const Tensor& x, int out_channels, int stride);
Tensor pad_shortcut_backward(const Tensor& dy, int in_channels, int in_h, int in_w, int stride);

float sigmoid(float x);

}  // namespace abp

#endif  // ABP_LAYERS_HPP
