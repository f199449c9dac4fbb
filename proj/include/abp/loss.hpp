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

#ifndef ABP_LOSS_HPP
#define ABP_LOSS_HPP

#include <span>

#include "abp/tensor.hpp"

namespace abp {

/// A batch-mean loss and its gradient with respect to the logits.
struct LossValue {
    double value = 0.0;
    Tensor grad;
};

/// Mean softmax cross-entropy. Throws NumericError on non-finite logits
/// and ContractViolation on labels outside [0, C).
LossValue loss_stage1(const Tensor& logits, std::span<const int> labels);

/// Batch-mean KL(teacher || student) between temperature-softened
/// distributions. The gradient is taken with respect to the student only.
LossValue loss_kd(const Tensor& student_logits, const Tensor& teacher_logits, double tau);

/// ce + lambda * kd.
double loss_stage2(double ce, double kd, double lambda);
LossValue loss_stage2(const LossValue& ce, const LossValue& kd, double lambda);

}  // namespace abp

#endif  // ABP_LOSS_HPP
