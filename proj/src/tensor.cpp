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

#include "abp/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "abp/errors.hpp"

namespace abp {

Tensor::Tensor(int n, int c, int h, int w, float fill)
    : n_(n), c_(c), h_(h), w_(w) {
    if (n < 0 || c < 0 || h < 0 || w < 0) {
        throw ShapeError("negative tensor dimension");
    }
    data_.assign(static_cast<std::size_t>(n) * c * h * w, fill);
}

std::span<float> Tensor::instance(int i) noexcept {
    return std::span<float>(data_).subspan(static_cast<std::size_t>(i) * instance_size(),
                                           instance_size());
}

std::span<const float> Tensor::instance(int i) const noexcept {
    return std::span<const float>(data_).subspan(static_cast<std::size_t>(i) * instance_size(),
                                                 instance_size());
}

std::string Tensor::shape_string() const {
    return "(" + std::to_string(n_) + "," + std::to_string(c_) + "," + std::to_string(h_) + "," +
           std::to_string(w_) + ")";
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::slice(int first, int count) const {
    if (first < 0 || count < 0 || first + count > n_) {
        throw ShapeError("slice [" + std::to_string(first) + ", " + std::to_string(first + count) +
                         ") out of range for batch of " + std::to_string(n_));
    }
    Tensor out(count, c_, h_, w_);
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(first * instance_size()),
                count * instance_size(), out.data_.begin());
    return out;
}

Tensor concat_batch(std::span<const Tensor> parts) {
    if (parts.empty()) return {};
    int total = 0;
    for (const auto& p : parts) {
        if (p.c() != parts[0].c() || p.h() != parts[0].h() || p.w() != parts[0].w()) {
            throw ShapeError("concat_batch: mismatched instance shapes " + p.shape_string() +
                             " vs " + parts[0].shape_string());
        }
        total += p.n();
    }
    Tensor out(total, parts[0].c(), parts[0].h(), parts[0].w());
    float* dst = out.data();
    for (const auto& p : parts) dst = std::copy(p.data(), p.data() + p.size(), dst);
    return out;
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw ShapeError("max_abs_diff: " + a.shape_string() + " vs " + b.shape_string());
    }
    float worst = 0.0f;
    for (std::size_t i = 0; i < a.size(); ++i) {
        float d = std::fabs(a[i] - b[i]);
        if (std::isnan(d)) return d;
        worst = std::max(worst, d);
    }
    return worst;
}

}  // namespace abp
