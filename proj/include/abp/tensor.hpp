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

#ifndef ABP_TENSOR_HPP
#define ABP_TENSOR_HPP

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace abp {

/// Dense float tensor in NCHW layout. Vectors and matrices use trailing
/// unit dimensions, e.g. a batch of logits is (N, C, 1, 1).
class Tensor {
public:
    Tensor() = default;
    Tensor(int n, int c, int h, int w, float fill = 0.0f);

    int n() const noexcept { return n_; }
    int c() const noexcept { return c_; }
    int h() const noexcept { return h_; }
    int w() const noexcept { return w_; }

    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    /// Elements of one instance (C*H*W).
    std::size_t instance_size() const noexcept {
        return static_cast<std::size_t>(c_) * h_ * w_;
    }
    std::size_t plane_size() const noexcept { return static_cast<std::size_t>(h_) * w_; }

    float* data() noexcept { return data_.data(); }
    const float* data() const noexcept { return data_.data(); }
    std::span<float> span() noexcept { return data_; }
    std::span<const float> span() const noexcept { return data_; }

    std::span<float> instance(int i) noexcept;
    std::span<const float> instance(int i) const noexcept;

    float& at(int i, int ch, int y, int x) noexcept {
        return data_[((static_cast<std::size_t>(i) * c_ + ch) * h_ + y) * w_ + x];
    }
    float at(int i, int ch, int y, int x) const noexcept {
        return data_[((static_cast<std::size_t>(i) * c_ + ch) * h_ + y) * w_ + x];
    }
    float& operator[](std::size_t i) noexcept { return data_[i]; }
    float operator[](std::size_t i) const noexcept { return data_[i]; }

    bool same_shape(const Tensor& other) const noexcept {
        return n_ == other.n_ && c_ == other.c_ && h_ == other.h_ && w_ == other.w_;
    }
    std::string shape_string() const;

    void fill(float v);

    /// Copies instances [first, first + count) into a new tensor.
    Tensor slice(int first, int count) const;

    bool operator==(const Tensor& other) const = default;

private:
    int n_ = 0;
    int c_ = 0;
    int h_ = 0;
    int w_ = 0;
    std::vector<float> data_;
};

/// Stacks tensors with identical per-instance shape along the batch axis.
Tensor concat_batch(std::span<const Tensor> parts);

/// Largest elementwise |a - b|; throws ShapeError when shapes differ.
float max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace abp

#endif  // ABP_TENSOR_HPP
