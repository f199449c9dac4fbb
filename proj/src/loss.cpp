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

#include "abp/loss.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "abp/errors.hpp"

namespace abp {

namespace {

void check_finite(const Tensor& t, const char* what) {
    for (float v : t.span()) {
        if (!std::isfinite(v)) throw NumericError(std::string(what) + " contain non-finite values");
    }
}

/// log-softmax of row / tau, computed in double.
std::vector<double> log_softmax(std::span<const float> row, double tau) {
    std::vector<double> z(row.size());
    double mx = -INFINITY;
    for (std::size_t k = 0; k < row.size(); ++k) {
        z[k] = row[k] / tau;
        mx = std::max(mx, z[k]);
    }
    double s = 0.0;
    for (double v : z) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    for (double& v : z) v -= lse;
    return z;
}

}  // namespace

LossValue loss_stage1(const Tensor& logits, std::span<const int> labels) {
    check_finite(logits, "logits");
    const int n = logits.n();
    const int classes = static_cast<int>(logits.instance_size());
    if (static_cast<int>(labels.size()) != n) {
        throw ContractViolation("one label per instance required");
    }
    LossValue out;
    out.grad = Tensor(logits.n(), logits.c(), logits.h(), logits.w());
    if (n == 0) return out;
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y < 0 || y >= classes) {
            throw ContractViolation("label " + std::to_string(y) + " outside [0, " +
                                    std::to_string(classes) + ")");
        }
        const auto lp = log_softmax(logits.instance(i), 1.0);
        total -= lp[y];
        auto g = out.grad.instance(i);
        for (int k = 0; k < classes; ++k) {
            g[k] = static_cast<float>((std::exp(lp[k]) - (k == y ? 1.0 : 0.0)) / n);
        }
    }
    out.value = total / n;
    return out;
}

LossValue loss_kd(const Tensor& student_logits, const Tensor& teacher_logits, double tau) {
    if (!(tau > 0.0)) throw ConfigError("distillation temperature must be positive");
    if (!student_logits.same_shape(teacher_logits)) {
        throw ShapeError("student " + student_logits.shape_string() + " vs teacher " +
                         teacher_logits.shape_string());
    }
    check_finite(student_logits, "student logits");
    check_finite(teacher_logits, "teacher logits");
    const int n = student_logits.n();
    const int classes = static_cast<int>(student_logits.instance_size());
    LossValue out;
    out.grad = Tensor(student_logits.n(), student_logits.c(), student_logits.h(),
                      student_logits.w());
    if (n == 0) return out;
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const auto ls = log_softmax(student_logits.instance(i), tau);
        const auto lt = log_softmax(teacher_logits.instance(i), tau);
        auto g = out.grad.instance(i);
        for (int k = 0; k < classes; ++k) {
            const double pt = std::exp(lt[k]);
            total += pt * (lt[k] - ls[k]);
            g[k] = static_cast<float>((std::exp(ls[k]) - pt) / (tau * n));
        }
    }
    out.value = total / n;
    return out;
}

double loss_stage2(double ce, double kd, double lambda) {
    if (!std::isfinite(ce) || !std::isfinite(kd)) throw NumericError("non-finite loss term");
    return ce + lambda * kd;
}

LossValue loss_stage2(const LossValue& ce, const LossValue& kd, double lambda) {
    if (!ce.grad.same_shape(kd.grad)) throw ShapeError("loss gradients differ in shape");
    LossValue out;
    out.value = loss_stage2(ce.value, kd.value, lambda);
    out.grad = ce.grad;
    for (std::size_t i = 0; i < out.grad.size(); ++i) {
        out.grad[i] += static_cast<float>(lambda) * kd.grad[i];
    }
    return out;
}

}  // namespace abp
