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

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "abp/config.hpp"
#include "abp/errors.hpp"
#include "abp/loss.hpp"
#include "abp/schedule.hpp"
#include "test_util.hpp"

namespace abp {
namespace {

Dataset blobs(int classes, int per_class, std::uint64_t seed = 1) {
    SyntheticSpec spec;
    spec.num_classes = classes;
    spec.samples_per_class = per_class;
    spec.image_size = 16;
    spec.seed = seed;
    Dataset d = synthetic_generate(spec);
    d.norm = compute_normalization(d);
    return d;
}

// 3 blocks, one per stage; blocks 1 and 2 downsample
NetworkSpec three_block(int classes) { return cifar_resnet({1, 1, 1}, {4, 8, 16}, {3, 16, 16}, classes); }

// 6 blocks, two per stage; blocks 2 and 4 downsample
NetworkSpec six_block(int classes) { return cifar_resnet({2, 2, 2}, {4, 8, 16}, {3, 16, 16}, classes); }

ModelState fresh(const NetworkSpec& spec, GateKind gate, std::uint64_t seed) {
    GatedNetwork net(spec, gate, seed);
    GateMask mask = GateMask::initial(net.spec());
    return {std::move(net), std::move(mask), 0};
}

TrainConfig small_config() {
    TrainConfig c = TrainConfig::desk_profile();
    c.batch_size = 16;
    c.lr = 0.05;
    c.seed = 3;
    return c;
}

bool same_params(const GatedNetwork& a, const GatedNetwork& b) {
    const auto pa = a.parameters();
    const auto pb = b.parameters();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (pa[i]->value.size() != pb[i]->value.size()) return false;
        if (std::memcmp(pa[i]->value.data(), pb[i]->value.data(), pa[i]->value.size() * sizeof(float)) != 0)
            return false;
    }
    return true;
}

// whole-dataset CE with batch statistics; a pure function of the parameters
double full_batch_loss(const ModelState& m, const Dataset& d) {
    const ForwardResult r = m.net.forward(d.all_images(), m.mask, {Mode::Train, std::nullopt});
    const std::vector<int> labels = d.all_labels();
    return loss_stage1(r.logits, labels).value;
}

TEST(LearningRate, Trace) {
    TrainConfig c = TrainConfig::desk_profile();
    EXPECT_DOUBLE_EQ(learning_rate(c, 1, 0), 0.1);
    EXPECT_DOUBLE_EQ(learning_rate(c, 1, 4), 0.1);
    EXPECT_NEAR(learning_rate(c, 2, 0), 0.01, 1e-15);
    EXPECT_NEAR(learning_rate(c, 2, 1), 0.01, 1e-15);
    EXPECT_NEAR(learning_rate(c, 2, 2), 0.001, 1e-15);
    EXPECT_NEAR(learning_rate(c, 3, 0), 0.001, 1e-15);
    EXPECT_NEAR(learning_rate(c, 3, 4), 0.001, 1e-15);
    const TrainConfig p = TrainConfig::paper_profile();
    EXPECT_NEAR(learning_rate(p, 2, 19), 0.01, 1e-15);
    EXPECT_NEAR(learning_rate(p, 2, 20), 0.001, 1e-15);
    EXPECT_NEAR(learning_rate(p, 2, 29), 0.001, 1e-15);
    TrainConfig s3 = p;
    s3.stage3_decay_epoch = 40;
    EXPECT_NEAR(learning_rate(s3, 3, 39), 0.001, 1e-15);
    EXPECT_NEAR(learning_rate(s3, 3, 40), 0.0001, 1e-15);
    EXPECT_THROW(learning_rate(c, 4, 0), ConfigError);
}

TEST(LearningRate, RecordedTraceMatchesSchedule) {
    const Dataset d = blobs(4, 8);
    TrainConfig cfg = small_config();
    cfg.epochs_stage1 = 2;
    cfg.epochs_stage2 = 3;
    cfg.epochs_stage3 = 2;
    cfg.gamma = 0.5;
    cfg.k = 1;
    std::vector<EpochMetrics> log;
    StageHooks hooks;
    hooks.on_epoch = [&](const EpochMetrics& m) { log.push_back(m); };
    ModelState m = run_stage1(fresh(six_block(4), GateKind::Conv, 1), d, cfg, hooks);
    StageTwoResult two = run_stage2(std::move(m), d, cfg, hooks);
    run_stage3(std::move(two.model), d, cfg, hooks);
    // 2 + 3 iterations * 3 + 2 epochs
    ASSERT_EQ(log.size(), 13u);
    for (std::size_t i = 0; i < log.size(); ++i) {
        EXPECT_EQ(log[i].epoch, static_cast<int>(i));
        int in_phase = 0;
        if (log[i].stage == 2) in_phase = (static_cast<int>(i) - 2) % 3;
        if (log[i].stage == 3) in_phase = static_cast<int>(i) - 11;
        if (log[i].stage == 1) in_phase = static_cast<int>(i);
        EXPECT_DOUBLE_EQ(log[i].lr, learning_rate(cfg, log[i].stage, in_phase)) << i;
    }
    EXPECT_EQ(log[0].stage, 1);
    EXPECT_EQ(log[2].stage, 2);
    EXPECT_EQ(log[2].iteration, 1);
    EXPECT_EQ(log[10].iteration, 3);
    EXPECT_EQ(log[12].stage, 3);
    EXPECT_EQ(log[12].unpruned, 3);
    EXPECT_GT(log[2].loss_kd, 0.0);
    EXPECT_EQ(log[0].loss_kd, 0.0);
}

TEST(Metrics, LogLine) {
    EpochMetrics m;
    m.epoch = 4;
    m.stage = 2;
    m.iteration = 1;
    m.lr = 0.01;
    m.loss_ce = 0.5;
    m.loss_kd = 0.25;
    m.accuracy = 0.75;
    m.unpruned = 9;
    EXPECT_EQ(m.to_log_line(),
              "epoch=4 stage=2 iteration=1 lr=0.01 loss_ce=0.500000 loss_kd=0.250000 accuracy=0.7500 "
              "unpruned_count=9");
}

TEST(Config, LambdaResolution) {
    TrainConfig c;
    EXPECT_DOUBLE_EQ(c.resolved_lambda(), 9.0);
    const RunConfig r = run_config_from_json({{"train", {{"tau", 2.0}}}});
    EXPECT_DOUBLE_EQ(r.train.resolved_lambda(), 4.0);
    const RunConfig o = run_config_from_json({{"train", {{"tau", 2.0}, {"lambda", 1.5}}}});
    EXPECT_DOUBLE_EQ(o.train.resolved_lambda(), 1.5);
}

TEST(Config, Validation) {
    TrainConfig c;
    c.tau = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrainConfig{};
    c.gamma = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrainConfig{};
    c.epochs_stage2 = -1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrainConfig{};
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_NO_THROW(TrainConfig{}.validate());
}

TEST(Config, DefaultStep) {
    TrainConfig c;
    c.gamma = 0.4;
    EXPECT_EQ(c.resolved_k(27), 4);
    c.k = 2;
    EXPECT_EQ(c.resolved_k(27), 2);
}

TEST(Config, Precedence) {
    // defaults
    RunConfig r = resolve_config(nlohmann::json::object(), nlohmann::json::object());
    EXPECT_EQ(r.train.epochs_stage1, 5);
    EXPECT_EQ(r.profile, "desk");
    // profile from the file
    r = resolve_config({{"profile", "paper"}}, nlohmann::json::object());
    EXPECT_EQ(r.train.epochs_stage1, 60);
    EXPECT_EQ(r.train.stage2_decay_epoch, 20);
    EXPECT_TRUE(r.train.augmentation.crop);
    // the file beats the profile
    r = resolve_config({{"profile", "paper"}, {"train", {{"epochs_stage1", 7}}}}, nlohmann::json::object());
    EXPECT_EQ(r.train.epochs_stage1, 7);
    EXPECT_EQ(r.train.epochs_stage2, 30);
    // flags beat the file, profile flag beats the file's profile
    r = resolve_config({{"profile", "paper"}, {"train", {{"epochs_stage1", 7}, {"gamma", 0.2}}}},
                       {{"profile", "desk"}, {"train", {{"gamma", 0.6}}}});
    EXPECT_EQ(r.train.epochs_stage1, 7);
    EXPECT_EQ(r.train.epochs_stage2, 3);
    EXPECT_DOUBLE_EQ(r.train.gamma, 0.6);
}

TEST(Config, UnknownKeysAreRejectedWithPath) {
    try {
        resolve_config({{"train", {{"epochz", 1}}}}, nlohmann::json::object());
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("train.epochz"), std::string::npos);
    }
    EXPECT_THROW(resolve_config({{"nope", 1}}, nlohmann::json::object()), ConfigError);
    EXPECT_THROW(resolve_config({{"data", {{"synthetic", {{"colour", 1}}}}}}, nlohmann::json::object()),
                 ConfigError);
    EXPECT_THROW(resolve_config({{"profile", "huge"}}, nlohmann::json::object()), ConfigError);
    EXPECT_THROW(resolve_config({{"train", {{"gamma", "high"}}}}, nlohmann::json::object()), ConfigError);
    EXPECT_THROW(resolve_config({{"arch", "rn99"}}, nlohmann::json::object()), ConfigError);
}

TEST(Config, JsonRoundTripAndFile) {
    RunConfig r = resolve_config({{"arch", "rn20"}, {"gate", "recur"}, {"train", {{"lambda", 2.0}}}},
                                 {{"sfp", {{"rate", 0.3}}}});
    const RunConfig back = run_config_from_json(to_json(r));
    EXPECT_EQ(to_json(back), to_json(r));
    EXPECT_EQ(back.gate, GateKind::Recur);
    EXPECT_EQ(back.resolved_run_id(), "rn20-recur-s0");

    const auto path = std::filesystem::temp_directory_path() / "abp_cfg_test.json";
    std::ofstream(path) << R"({"train": {"seed": 11}})";
    EXPECT_EQ(read_config_file(path).at("train").at("seed"), 11);
    std::ofstream(path) << "{ not json";
    EXPECT_THROW(read_config_file(path), ConfigError);
    std::filesystem::remove(path);
    EXPECT_THROW(read_config_file(path), ConfigError);
}

TEST(Sgd, MomentumAndDecay) {
    Param p = make_param("w", 1, 2, 1, 1);
    p.value[0] = 1.0f;
    p.value[1] = -2.0f;
    p.grad[0] = 0.5f;
    p.grad[1] = 0.0f;
    Sgd opt(0.9, 0.1);
    opt.step({&p}, 0.1);
    // v = g + wd*w; w -= lr*v
    EXPECT_FLOAT_EQ(p.value[0], 1.0f - 0.1f * (0.5f + 0.1f));
    EXPECT_FLOAT_EQ(p.value[1], -2.0f - 0.1f * (-0.2f));
    const float v0 = 0.6f;
    const float w0 = p.value[0];
    opt.step({&p}, 0.1);
    EXPECT_FLOAT_EQ(p.value[0], w0 - 0.1f * (0.9f * v0 + 0.5f + 0.1f * w0));
    Param q = make_param("q", 1, 1, 1, 1);
    EXPECT_THROW(opt.step({&p, &q}, 0.1), ContractViolation);
}

TEST(Trainable, FollowsMask) {
    GatedNetwork net(arch_spec("micro", 4, 16), GateKind::Conv, 1);
    GateMask mask = GateMask::initial(net.spec());
    mask.prune(0);
    mask.set_state(1, BlockState::Fixed);
    std::vector<std::string> names;
    for (Param* p : trainable_parameters(net, mask)) names.push_back(p->name);
    auto has = [&](const std::string& prefix) {
        return std::any_of(names.begin(), names.end(), [&](const std::string& n) { return n.rfind(prefix, 0) == 0; });
    };
    EXPECT_FALSE(has("blocks.0."));
    EXPECT_FALSE(has("gates.0."));
    EXPECT_TRUE(has("blocks.1."));
    EXPECT_FALSE(has("gates.1."));
    EXPECT_TRUE(has("gates.2."));
    EXPECT_FALSE(has("gates.3."));  // exempt
    EXPECT_TRUE(has("stem."));
    EXPECT_TRUE(has("classifier."));
    for (const auto& n : names) EXPECT_EQ(n.find("running_"), std::string::npos) << n;
}

TEST(Stage1, ZeroEpochsLeavesNetworkUnchanged) {
    const Dataset d = blobs(2, 8);
    TrainConfig cfg = small_config();
    cfg.epochs_stage1 = 0;
    const ModelState start = fresh(three_block(2), GateKind::Conv, 4);
    int checkpoints = 0;
    StageHooks hooks;
    hooks.on_checkpoint = [&](const ModelState&, int stage, int) {
        EXPECT_EQ(stage, 1);
        ++checkpoints;
    };
    const ModelState out = run_stage1(start, d, cfg, hooks);
    EXPECT_TRUE(same_params(out.net, start.net));
    EXPECT_EQ(out.epochs_done, 0);
    EXPECT_EQ(checkpoints, 1);
}

TEST(Stage1, OneEpochReducesLoss) {
    const Dataset d = blobs(2, 64, 5);
    TrainConfig cfg = small_config();
    cfg.epochs_stage1 = 1;
    const ModelState start = fresh(three_block(2), GateKind::Conv, 6);
    const ModelState out = run_stage1(start, d, cfg);
    EXPECT_LT(full_batch_loss(out, d), full_batch_loss(start, d));
    EXPECT_EQ(out.epochs_done, 1);
}

TEST(Stage1, Deterministic) {
    const Dataset d = blobs(4, 8);
    TrainConfig cfg = small_config();
    cfg.epochs_stage1 = 2;
    const ModelState a = run_stage1(fresh(three_block(4), GateKind::Recur, 7), d, cfg);
    const ModelState b = run_stage1(fresh(three_block(4), GateKind::Recur, 7), d, cfg);
    EXPECT_TRUE(same_params(a.net, b.net));
    cfg.seed = 4;
    const ModelState c = run_stage1(fresh(three_block(4), GateKind::Recur, 7), d, cfg);
    EXPECT_FALSE(same_params(a.net, c.net));
}

TEST(Stage1, Errors) {
    TrainConfig cfg = small_config();
    EXPECT_THROW(run_stage1(fresh(three_block(2), GateKind::Conv, 1), Dataset{}, cfg), ConfigError);
    ModelState pruned = fresh(six_block(2), GateKind::Conv, 1);
    pruned.mask.prune(0);
    EXPECT_THROW(run_stage1(pruned, blobs(2, 4), cfg), ContractViolation);
}

TEST(Stage2, ZeroRatioIsNoOp) {
    const Dataset d = blobs(2, 8);
    TrainConfig cfg = small_config();
    cfg.gamma = 0.0;
    const ModelState start = fresh(six_block(2), GateKind::Conv, 2);
    const StageTwoResult r = run_stage2(start, d, cfg);
    EXPECT_TRUE(r.pruned_per_iteration.empty());
    EXPECT_EQ(r.model.mask, start.mask);
    EXPECT_TRUE(same_params(r.model.net, start.net));
}

TEST(Stage2, SixBlocksHalfRatioPrunesThreeInOneIteration) {
    const Dataset d = blobs(2, 8);
    TrainConfig cfg = small_config();
    cfg.gamma = 0.5;
    cfg.k = 3;
    cfg.epochs_stage2 = 1;
    std::vector<int> mark_iterations;
    std::vector<std::pair<int, int>> checkpoints;
    StageHooks hooks;
    hooks.on_marks = [&](const MarkLedger& ledger, const GateMask& mask, int it) {
        mark_iterations.push_back(it);
        EXPECT_EQ(ledger.count(), d.size());
        EXPECT_FALSE(ledger.present(2));
        EXPECT_FALSE(ledger.present(4));
        EXPECT_EQ(mask.count(BlockState::Pruned), 0);
    };
    hooks.on_checkpoint = [&](const ModelState&, int stage, int it) { checkpoints.emplace_back(stage, it); };
    const StageTwoResult r = run_stage2(fresh(six_block(2), GateKind::Conv, 3), d, cfg, hooks);
    ASSERT_EQ(r.pruned_per_iteration.size(), 1u);
    EXPECT_EQ(r.pruned_per_iteration[0].size(), 3u);
    EXPECT_EQ(r.pruned_total(), 3);
    EXPECT_EQ(r.model.mask.count(BlockState::Pruned), 3);
    EXPECT_NE(r.model.mask.state(2), BlockState::Pruned);
    EXPECT_NE(r.model.mask.state(4), BlockState::Pruned);
    EXPECT_FALSE(r.exhausted);
    EXPECT_EQ(mark_iterations, (std::vector<int>{1}));
    EXPECT_EQ(checkpoints, (std::vector<std::pair<int, int>>{{2, 1}}));
}

TEST(Stage2, ExhaustionWarns) {
    const Dataset d = blobs(2, 4);
    TrainConfig cfg = small_config();
    cfg.gamma = 0.9;  // floor(0.9*3) = 2 but only block 0 is prunable
    cfg.epochs_stage2 = 0;
    std::string warning;
    StageHooks hooks;
    hooks.on_warning = [&](const std::string& w) { warning = w; };
    const StageTwoResult r = run_stage2(fresh(three_block(2), GateKind::Conv, 3), d, cfg, hooks);
    EXPECT_TRUE(r.exhausted);
    EXPECT_EQ(r.pruned_total(), 1);
    EXPECT_NE(warning.find("exhausted"), std::string::npos);
}

TEST(Stage2, Deterministic) {
    const Dataset d = blobs(2, 8);
    TrainConfig cfg = small_config();
    cfg.gamma = 0.5;
    cfg.k = 1;
    cfg.epochs_stage2 = 1;
    const StageTwoResult a = run_stage2(fresh(six_block(2), GateKind::Recur, 9), d, cfg);
    const StageTwoResult b = run_stage2(fresh(six_block(2), GateKind::Recur, 9), d, cfg);
    EXPECT_EQ(a.pruned_per_iteration, b.pruned_per_iteration);
    EXPECT_TRUE(same_params(a.model.net, b.model.net));
}

TEST(Teacher, NeverChangesDuringTraining) {
    const Dataset d = blobs(2, 16);
    TrainConfig cfg = small_config();
    ModelState student = fresh(six_block(2), GateKind::Conv, 5);
    const TeacherSnapshot teacher(student.net, student.mask);
    const GatedNetwork before = teacher.net();
    student.mask.prune(1);
    Sgd opt(cfg.momentum, cfg.weight_decay);
    for (int e = 0; e < 2; ++e) train_epoch(student, d, cfg, 0.05, opt, &teacher);
    EXPECT_TRUE(same_params(teacher.net(), before));
    EXPECT_FALSE(same_params(student.net, before));
    EXPECT_EQ(teacher.mask().count(BlockState::Pruned), 0);
}

TEST(Stage3, FixesMasksAndIgnoresGates) {
    const Dataset d = blobs(2, 8);
    TrainConfig cfg = small_config();
    cfg.epochs_stage3 = 0;
    ModelState m = fresh(six_block(2), GateKind::Conv, 11);
    m.mask.prune(1);
    const ModelState start = m;
    ModelState out = run_stage3(m, d, cfg);
    EXPECT_TRUE(same_params(out.net, start.net));
    EXPECT_EQ(out.mask.count(BlockState::Active), 0);
    EXPECT_EQ(out.mask.pruned(), (std::vector<int>{1}));

    cfg.epochs_stage3 = 1;
    out = run_stage3(start, d, cfg);
    const Tensor x = test::random_tensor(3, 3, 16, 16, 4);
    const Tensor before = out.net.logits(x, out.mask);
    for (Param* p : out.net.gate_parameters()) test::randomize(*p, 3, 1.0f);
    EXPECT_EQ(out.net.logits(x, out.mask), before);
    EXPECT_EQ(out.mask.pruned(), (std::vector<int>{1}));
}

}  // namespace
}  // namespace abp
