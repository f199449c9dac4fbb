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

#include "abp/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "abp/errors.hpp"
#include "abp/loss.hpp"

namespace abp {

void TrainConfig::validate() const {
    if (epochs_stage1 < 0 || epochs_stage2 < 0 || epochs_stage3 < 0) {
        throw ConfigError("epoch counts must be >= 0");
    }
    if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must be in [0, 1)");
    if (k < 0) throw ConfigError("k must be >= 1 (or 0 for the default)");
    if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (lambda && *lambda < 0.0) throw ConfigError("lambda must be >= 0");
    if (momentum < 0.0 || weight_decay < 0.0) {
        throw ConfigError("momentum and weight_decay must be >= 0");
    }
}

TrainConfig TrainConfig::paper_profile() {
    TrainConfig c;
    c.epochs_stage1 = 60;
    c.epochs_stage2 = 30;
    c.epochs_stage3 = 60;
    c.stage2_decay_epoch = 20;
    c.stage3_decay_epoch = -1;
    c.augmentation = {true, true, 4};
    return c;
}

TrainConfig TrainConfig::desk_profile() {
    TrainConfig c;
    c.epochs_stage1 = 5;
    c.epochs_stage2 = 3;
    c.epochs_stage3 = 5;
    c.stage2_decay_epoch = 2;
    c.stage3_decay_epoch = -1;
    return c;
}

double learning_rate(const TrainConfig& cfg, int stage, int epoch_in_phase) {
    switch (stage) {
        case 1:
            return cfg.lr;
        case 2: {
            double lr = cfg.lr * cfg.stage_decay;
            if (cfg.stage2_decay_epoch >= 0 && epoch_in_phase >= cfg.stage2_decay_epoch) {
                lr *= cfg.epoch_decay;
            }
            return lr;
        }
        case 3: {
            double lr = cfg.lr * cfg.stage_decay * cfg.stage_decay;
            if (cfg.stage3_decay_epoch >= 0 && epoch_in_phase >= cfg.stage3_decay_epoch) {
                lr *= cfg.epoch_decay;
            }
            return lr;
        }
        default:
            throw ConfigError("stage must be 1, 2 or 3");
    }
}

void Sgd::step(const std::vector<Param*>& params, double lr) {
    if (velocity_.empty()) {
        velocity_.reserve(params.size());
        for (const Param* p : params) {
            velocity_.emplace_back(p->value.n(), p->value.c(), p->value.h(), p->value.w());
        }
    }
    if (velocity_.size() != params.size()) {
        throw ContractViolation("optimizer parameter list changed within a phase");
    }
    const float m = static_cast<float>(momentum_);
    const float wd = static_cast<float>(weight_decay_);
    const float rate = static_cast<float>(lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Param& p = *params[i];
        auto v = velocity_[i].span();
        auto w = p.value.span();
        auto g = p.grad.span();
        for (std::size_t j = 0; j < w.size(); ++j) {
            const float d = g[j] + wd * w[j];
            v[j] = m * v[j] + d;
            w[j] -= rate * v[j];
        }
    }
}

std::string EpochMetrics::to_log_line() const {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "epoch=%d stage=%d iteration=%d lr=%.6g loss_ce=%.6f loss_kd=%.6f "
                  "accuracy=%.4f unpruned_count=%d",
                  epoch, stage, iteration, lr, loss_ce, loss_kd, accuracy, unpruned);
    return buf;
}

std::vector<Param*> trainable_parameters(GatedNetwork& net, const GateMask& mask) {
    std::vector<Param*> all;
    net.stem_conv.collect(all);
    net.stem_bn.collect(all);
    for (int l = 0; l < net.num_blocks(); ++l) {
        if (mask.state(l) != BlockState::Pruned) net.blocks[l].collect(all);
    }
    bool any_active = false;
    for (int l = 0; l < net.num_blocks(); ++l) {
        if (mask.state(l) != BlockState::Active) continue;
        any_active = true;
        if (net.gate_kind() == GateKind::Conv) net.conv_gates[l].collect(all);
        if (net.gate_kind() == GateKind::Recur) net.recur_gate.projections[l].collect(all);
    }
    if (any_active && net.gate_kind() == GateKind::Recur) {
        net.recur_gate.ih.collect(all);
        net.recur_gate.hh.collect(all);
        net.recur_gate.head.collect(all);
    }
    net.classifier.collect(all);
    std::vector<Param*> out;
    std::copy_if(all.begin(), all.end(), std::back_inserter(out),
                 [](const Param* p) { return p->learnable; });
    return out;
}

EpochMetrics train_epoch(ModelState& model, const Dataset& data, const TrainConfig& cfg,
                         double lr, Sgd& opt, const TeacherSnapshot* teacher) {
    if (data.empty()) throw ConfigError("training set is empty");
    const auto params = trainable_parameters(model.net, model.mask);
    const int epoch = model.epochs_done;
    const auto order = batches(data.size(), cfg.batch_size, cfg.seed, epoch);
    const double lambda = cfg.resolved_lambda();

    double ce_sum = 0.0;
    double kd_sum = 0.0;
    std::size_t correct = 0;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < order.size(); ++b) {
        const auto& idx = order[b];
        const std::uint64_t aug_seed =
            mix_seed(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)), b);
        const Tensor x = augmented_images(data, idx, cfg.augmentation, aug_seed);
        const std::vector<int> labels = data.labels(idx);

        ActivationTrace trace;
        const ForwardResult res =
            model.net.forward(x, model.mask, {Mode::Train, std::nullopt}, &trace);
        LossValue loss = loss_stage1(res.logits, labels);
        ce_sum += loss.value * static_cast<double>(idx.size());
        if (teacher != nullptr) {
            const LossValue kd = loss_kd(res.logits, teacher->logits(x), cfg.tau);
            kd_sum += kd.value * static_cast<double>(idx.size());
            loss = loss_stage2(loss, kd, lambda);
        }
        if (!std::isfinite(loss.value)) {
            throw NumericError("loss diverged in epoch " + std::to_string(epoch));
        }

        for (int i = 0; i < res.logits.n(); ++i) {
            auto row = res.logits.instance(i);
            const auto pred = std::max_element(row.begin(), row.end()) - row.begin();
            if (pred == labels[i]) ++correct;
        }
        seen += idx.size();

        model.net.zero_grad();
        model.net.backward(loss.grad, model.mask, trace);
        model.net.commit_statistics(model.mask, trace);
        opt.step(params, lr);
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    m.loss_ce = ce_sum / static_cast<double>(seen);
    m.loss_kd = kd_sum / static_cast<double>(seen);
    m.accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    m.unpruned = model.mask.unpruned_count();
    ++model.epochs_done;
    return m;
}

MarkLedger sweep_marks(const GatedNetwork& net, const GateMask& mask, const Dataset& data,
                       int batch_size) {
    MarkLedger ledger(mask);
    std::vector<int> idx(data.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t first = 0; first < idx.size(); first += batch_size) {
        const std::size_t count = std::min<std::size_t>(batch_size, idx.size() - first);
        std::span<const int> chunk(idx.data() + first, count);
        const ForwardResult res = net.forward(data.images(chunk), mask);
        ledger.add(res.marks);
    }
    return ledger;
}

double evaluate(const GatedNetwork& net, const GateMask& mask, const Dataset& data,
                int batch_size) {
    if (data.empty()) return 0.0;
    std::size_t correct = 0;
    std::vector<int> idx(data.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t first = 0; first < idx.size(); first += batch_size) {
        const std::size_t count = std::min<std::size_t>(batch_size, idx.size() - first);
        std::span<const int> chunk(idx.data() + first, count);
        const Tensor logits = net.logits(data.images(chunk), mask);
        for (std::size_t i = 0; i < count; ++i) {
            auto row = logits.instance(static_cast<int>(i));
            const auto pred = std::max_element(row.begin(), row.end()) - row.begin();
            if (pred == data.records[chunk[i]].label) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace {

void run_phase(ModelState& model, const Dataset& data, const TrainConfig& cfg, int stage,
               int iteration, int epochs, const TeacherSnapshot* teacher,
               const StageHooks& hooks) {
    Sgd opt(cfg.momentum, cfg.weight_decay);  // fresh per phase
    for (int e = 0; e < epochs; ++e) {
        const double lr = learning_rate(cfg, stage, e);
        EpochMetrics m = train_epoch(model, data, cfg, lr, opt, teacher);
        m.stage = stage;
        m.iteration = iteration;
        if (hooks.on_epoch) hooks.on_epoch(m);
    }
}

}  // namespace

ModelState run_stage1(ModelState model, const Dataset& data, const TrainConfig& cfg,
                      const StageHooks& hooks) {
    cfg.validate();
    if (model.mask.count(BlockState::Pruned) != 0) {
        throw ContractViolation("stage I expects no pruned blocks");
    }
    if (cfg.epochs_stage1 > 0 && data.empty()) throw ConfigError("training set is empty");
    run_phase(model, data, cfg, 1, 0, cfg.epochs_stage1, nullptr, hooks);
    if (hooks.on_checkpoint) hooks.on_checkpoint(model, 1, 0);
    return model;
}

int StageTwoResult::pruned_total() const {
    int n = 0;
    for (const auto& it : pruned_per_iteration) n += static_cast<int>(it.size());
    return n;
}

StageTwoResult run_stage2(ModelState model, const Dataset& data, const TrainConfig& cfg,
                          const StageHooks& hooks, int iterations_done) {
    cfg.validate();
    StageTwoResult result;
    if (prune_target_count(model.mask.size(), cfg.gamma) == 0) {
        result.model = std::move(model);
        return result;
    }
    if (data.empty()) throw ConfigError("training set is empty");

    const int already = model.mask.count(BlockState::Pruned);
    PruneState state = make_prune_state(model.mask, cfg.gamma, cfg.resolved_k(model.mask.size()));
    std::optional<TeacherSnapshot> teacher;

    auto sweep = [&](const GateMask& mask, int local) {
        const int iteration = local + iterations_done;
        teacher.emplace(model.net, mask);
        MarkLedger ledger = sweep_marks(model.net, mask, data, std::max(cfg.batch_size, 256));
        if (hooks.on_marks) hooks.on_marks(ledger, mask, iteration);
        return ledger;
    };
    auto train = [&](const GateMask& mask, int local) {
        const int iteration = local + iterations_done;
        model.mask = mask;
        run_phase(model, data, cfg, 2, iteration, cfg.epochs_stage2, &*teacher, hooks);
        if (hooks.on_checkpoint) hooks.on_checkpoint(model, 2, iteration);
    };

    StageTwoTrace trace;
    if (!pruning_done(state)) trace = run_prune_loop(std::move(state), sweep, train);
    else trace.mask = model.mask;
    if (trace.exhausted && hooks.on_warning) {
        hooks.on_warning("pruning exhausted with " +
                         std::to_string(trace.mask.count(BlockState::Pruned) - already) +
                         " blocks pruned in stage II; target not reached");
    }
    model.mask = trace.mask;
    result.model = std::move(model);
    result.pruned_per_iteration = std::move(trace.iterations);
    result.exhausted = trace.exhausted;
    return result;
}

ModelState run_stage3(ModelState model, const Dataset& data, const TrainConfig& cfg,
                      const StageHooks& hooks) {
    cfg.validate();
    if (cfg.epochs_stage3 > 0 && data.empty()) throw ConfigError("training set is empty");
    model.mask.fix_unpruned();
    run_phase(model, data, cfg, 3, 0, cfg.epochs_stage3, nullptr, hooks);
    if (hooks.on_checkpoint) hooks.on_checkpoint(model, 3, 0);
    return model;
}

}  // namespace abp
