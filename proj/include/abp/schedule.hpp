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

#ifndef ABP_SCHEDULE_HPP
#define ABP_SCHEDULE_HPP

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "abp/data.hpp"
#include "abp/network.hpp"
#include "abp/pruner.hpp"

namespace abp {

/// Hyper-parameters of the three-stage schedule.
struct TrainConfig {
    int epochs_stage1 = 5;
    int epochs_stage2 = 3;  // per pruning iteration
    int epochs_stage3 = 5;

    double lr = 0.1;
    /// Multiplier applied on entering Stage II and again on entering Stage III.
    double stage_decay = 0.1;
    /// Multiplier applied inside a phase from the decay epoch on.
    double epoch_decay = 0.1;
    /// 0-based epoch of each pruning iteration from which epoch_decay
    /// applies; < 0 disables.
    int stage2_decay_epoch = 2;
    int stage3_decay_epoch = -1;

    double momentum = 0.9;
    double weight_decay = 5e-4;

    double gamma = 0.4;
    /// Blocks pruned per iteration; 0 selects ceil(floor(gamma*N)/3).
    int k = 0;
    double tau = 3.0;
    /// Distillation weight; tau^2 when unset.
    std::optional<double> lambda;

    int batch_size = 128;
    std::uint64_t seed = 0;
    Augmentation augmentation;

    double resolved_lambda() const { return lambda.value_or(tau * tau); }
    int resolved_k(int num_blocks) const {
        return k > 0 ? k : default_prune_step(num_blocks, gamma);
    }
    /// Throws ConfigError on non-positive tau, negative epochs, bad gamma.
    void validate() const;

    static TrainConfig paper_profile();
    static TrainConfig desk_profile();
};

/// Learning rate of epoch `epoch_in_phase` (0-based) of `stage` (1..3).
double learning_rate(const TrainConfig& cfg, int stage, int epoch_in_phase);

/// SGD with momentum and L2 weight decay (PyTorch convention).
class Sgd {
public:
    Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}
    void step(const std::vector<Param*>& params, double lr);

private:
    double momentum_;
    double weight_decay_;
    std::vector<Tensor> velocity_;
};

/// Frozen copy of the model used as distillation teacher.
class TeacherSnapshot {
public:
    TeacherSnapshot(const GatedNetwork& net, const GateMask& mask) : net_(net), mask_(mask) {}

    /// Eval-mode logits.
    Tensor logits(const Tensor& x) const { return net_.logits(x, mask_); }
    const GatedNetwork& net() const noexcept { return net_; }
    const GateMask& mask() const noexcept { return mask_; }

private:
    const GatedNetwork net_;
    const GateMask mask_;
};

/// Network, mask and the count of epochs trained so far. The epoch count
/// seeds batch order and augmentation, so a state restored from a
/// checkpoint continues bit-identically.
struct ModelState {
    GatedNetwork net;
    GateMask mask;
    int epochs_done = 0;
};

struct EpochMetrics {
    int epoch = 0;  // global, 0-based
    int stage = 1;
    int iteration = 0;
    double lr = 0.0;
    double loss_ce = 0.0;
    double loss_kd = 0.0;
    double accuracy = 0.0;  // running training accuracy
    int unpruned = 0;

    std::string to_log_line() const;
};

struct StageHooks {
    std::function<void(const EpochMetrics&)> on_epoch;
    /// Called at stage boundaries and after every pruning iteration.
    std::function<void(const ModelState&, int stage, int iteration)> on_checkpoint;
    std::function<void(const MarkLedger&, const GateMask&, int iteration)> on_marks;
    std::function<void(const std::string&)> on_warning;
};

/// Parameters that receive updates under `mask`: stem, unpruned blocks,
/// gates of Active blocks, classifier.
std::vector<Param*> trainable_parameters(GatedNetwork& net, const GateMask& mask);

/// One epoch of SGD. With a teacher the loss is CE + lambda * KD.
EpochMetrics train_epoch(ModelState& model, const Dataset& data, const TrainConfig& cfg,
                         double lr, Sgd& opt, const TeacherSnapshot* teacher = nullptr);

/// Eval-mode sweep over the whole dataset in file order.
MarkLedger sweep_marks(const GatedNetwork& net, const GateMask& mask, const Dataset& data,
                       int batch_size);

double evaluate(const GatedNetwork& net, const GateMask& mask, const Dataset& data,
                int batch_size = 256);

ModelState run_stage1(ModelState model, const Dataset& data, const TrainConfig& cfg,
                      const StageHooks& hooks = {});

struct StageTwoResult {
    ModelState model;
    std::vector<std::vector<int>> pruned_per_iteration;
    bool exhausted = false;
    int pruned_total() const;
};

/// `iterations_done` offsets iteration numbers when resuming mid-stage.
StageTwoResult run_stage2(ModelState model, const Dataset& data, const TrainConfig& cfg,
                          const StageHooks& hooks = {}, int iterations_done = 0);

ModelState run_stage3(ModelState model, const Dataset& data, const TrainConfig& cfg,
                      const StageHooks& hooks = {});

}  // namespace abp

#endif  // ABP_SCHEDULE_HPP
