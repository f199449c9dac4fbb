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
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "abp/errors.hpp"
#include "abp/loss.hpp"
#include "abp/sfp.hpp"
#include "test_util.hpp"

namespace abp {
namespace {

NetworkSpec micro() { return arch_spec("micro", 4, 16); }

int zero_filters(const Tensor& w) {
    int n = 0;
    for (int f = 0; f < w.n(); ++f) {
        const auto inst = w.instance(f);
        n += std::all_of(inst.begin(), inst.end(), [](float v) { return v == 0.0f; });
    }
    return n;
}

// Compact micro model with blocks 1 and 8 removed and varied statistics.
CompactModel sample_compact(std::uint64_t seed) {
    GatedNetwork net(micro(), GateKind::Conv, seed);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.5f, 1.5f);
    std::normal_distribution<float> n(0.0f, 0.3f);
    for (Param* p : net.parameters()) {
        if (p->name.ends_with("running_var")) {
            for (float& v : p->value.span()) v = u(rng);
        } else if (p->name.ends_with("running_mean") || p->name.ends_with("beta")) {
            for (float& v : p->value.span()) v = n(rng);
        }
    }
    GateMask mask = GateMask::initial(net.spec());
    mask.prune(1);
    mask.prune(8);
    mask.fix_unpruned();
    return export_compact(net, mask);
}

Dataset small_data() {
    SyntheticSpec spec;
    spec.num_classes = 4;
    spec.samples_per_class = 16;
    spec.image_size = 16;
    spec.seed = 2;
    Dataset d = synthetic_generate(spec);
    d.norm = compute_normalization(d);
    return d;
}

TEST(Config, Validation) {
    SfpConfig c;
    c.rate = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c.rate = -0.1;
    EXPECT_THROW(c.validate(), ConfigError);
    c.rate = 0.5;
    c.cadence = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c.cadence = 1;
    c.epochs = -1;
    EXPECT_THROW(c.validate(), ConfigError);
    c.epochs = 0;
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.zeroed_count(16), 8);
    c.rate = 0.3;
    EXPECT_EQ(c.zeroed_count(10), 3);
    EXPECT_EQ(c.zeroed_count(4), 1);
}

TEST(Select, SmallestHalf) {
    EXPECT_EQ(smallest_filters({1, 2, 3, 4}, 0.5), (std::vector<int>{0, 1}));
    EXPECT_EQ(smallest_filters({4, 3, 2, 1}, 0.5), (std::vector<int>{2, 3}));
    EXPECT_EQ(smallest_filters({2, 1, 1, 1}, 0.5), (std::vector<int>{1, 2}));  // ties to lower index
    EXPECT_TRUE(smallest_filters({1, 2, 3, 4}, 0.0).empty());
    EXPECT_THROW(smallest_filters({1, 2}, 1.0), ConfigError);
}

TEST(MaskStep, NormsOneToFourZeroFirstTwo) {
    CompactModel m = sample_compact(1);
    Tensor& w = m.net.blocks[0].conv1.weight.value;
    ASSERT_EQ(w.n(), 4);
    for (int f = 0; f < 4; ++f) {
        auto inst = w.instance(f);
        std::fill(inst.begin(), inst.end(), 0.0f);
        inst[0] = static_cast<float>(f + 1);  // norm f + 1
    }
    SfpConfig cfg;
    cfg.rate = 0.5;
    const auto zeroed = sfp_mask_step(m, cfg);
    EXPECT_EQ(zeroed[0], (std::vector<int>{0, 1}));
    EXPECT_EQ(w.instance(0)[0], 0.0f);
    EXPECT_EQ(w.instance(1)[0], 0.0f);
    EXPECT_EQ(w.instance(2)[0], 3.0f);
    EXPECT_EQ(w.instance(3)[0], 4.0f);
}

TEST(MaskStep, RateZeroLeavesModelUnchanged) {
    CompactModel m = sample_compact(2);
    const CompactModel before = m;
    SfpConfig cfg;
    const auto zeroed = sfp_mask_step(m, cfg);
    for (const auto& z : zeroed) EXPECT_TRUE(z.empty());
    const auto a = m.net.parameters();
    const auto b = before.net.parameters();
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i]->value, b[i]->value) << a[i]->name;
}

TEST(MaskStep, ExactZeroCountPerLayer) {
    for (double rate : {0.25, 0.3, 0.5, 0.75}) {
        CompactModel m = sample_compact(3);
        SfpConfig cfg;
        cfg.rate = rate;
        const FilterNorms norms = filter_norms(m.net);
        const auto zeroed = sfp_mask_step(m, cfg);
        for (std::size_t l = 0; l < m.net.blocks.size(); ++l) {
            const Tensor& w = m.net.blocks[l].conv1.weight.value;
            EXPECT_EQ(zero_filters(w), cfg.zeroed_count(w.n())) << rate << " block " << l;
            EXPECT_EQ(zeroed[l], smallest_filters(norms[l], rate));
            // the second convolution is never masked
            EXPECT_EQ(zero_filters(m.net.blocks[l].conv2.weight.value), 0);
        }
    }
}

TEST(MaskStep, RepeatedStepIsFixedPoint) {
    CompactModel m = sample_compact(4);
    SfpConfig cfg;
    cfg.rate = 0.5;
    const auto first = sfp_mask_step(m, cfg);
    const auto second = sfp_mask_step(m, cfg);
    EXPECT_EQ(first, second);
}

TEST(MaskStep, ZeroedChannelsAreSilentAtInference) {
    CompactModel m = sample_compact(5);
    SfpConfig cfg;
    cfg.rate = 0.5;
    const auto zeroed = sfp_mask_step(m, cfg);
    const Tensor x = test::random_tensor(4, 3, 16, 16, 9);
    // block 0 sees the stem output; its zeroed channels must be exactly 0 after bn1 + relu
    Tensor stem = test::naive_relu(test::naive_bn_eval(test::naive_conv(x, m.net.stem_conv.weight.value, 1), m.net.stem_bn));
    const auto& b = m.net.blocks[0];
    const Tensor r1 = test::naive_relu(test::naive_bn_eval(test::naive_conv(stem, b.conv1.weight.value, 1), b.bn1));
    for (int f : zeroed[0])
        for (int i = 0; i < r1.n(); ++i)
            for (int y = 0; y < r1.h(); ++y)
                for (int xx = 0; xx < r1.w(); ++xx) EXPECT_EQ(r1.at(i, f, y, xx), 0.0f);
}

TEST(MaskStep, ZeroedFilterRegrowsUnderOneStep) {
    CompactModel m = sample_compact(6);
    for (auto& b : m.net.blocks)
        for (float& v : b.bn1.beta.value.span()) v = 0.2f;  // ReLU open for every channel
    SfpConfig cfg;
    cfg.rate = 0.5;
    const auto zeroed = sfp_mask_step(m, cfg);

    const Dataset d = small_data();
    std::vector<int> idx(16);
    for (int i = 0; i < 16; ++i) idx[i] = i * 4;
    const Tensor x = d.images(idx);
    const std::vector<int> y = d.labels(idx);
    ForwardOptions opts;
    opts.mode = Mode::Train;
    ActivationTrace trace;
    const ForwardResult out = m.net.forward(x, m.mask, opts, &trace);
    const LossValue loss = loss_stage1(out.logits, y);
    m.net.zero_grad();
    m.net.backward(loss.grad, m.mask, trace);

    std::vector<Param*> params;
    for (Param* p : m.net.parameters())
        if (p->learnable) params.push_back(p);
    int with_grad = 0;
    for (std::size_t l = 0; l < m.net.blocks.size(); ++l)
        for (int f : zeroed[l]) {
            const auto g = m.net.blocks[l].conv1.weight.grad.instance(f);
            with_grad += std::any_of(g.begin(), g.end(), [](float v) { return v != 0.0f; });
        }
    ASSERT_GT(with_grad, 0);

    Sgd opt(0.9, 5e-4);
    opt.step(params, 0.01);
    for (std::size_t l = 0; l < m.net.blocks.size(); ++l)
        for (int f : zeroed[l]) {
            const auto g = m.net.blocks[l].conv1.weight.grad.instance(f);
            if (std::none_of(g.begin(), g.end(), [](float v) { return v != 0.0f; })) continue;
            const auto w = m.net.blocks[l].conv1.weight.value.instance(f);
            EXPECT_TRUE(std::any_of(w.begin(), w.end(), [](float v) { return v != 0.0f; }))
                << "block " << l << " filter " << f;
        }
}

TEST(Finalize, RateZeroIsIdentity) {
    const CompactModel m = sample_compact(7);
    const SfpResult r = sfp_finalize(m, SfpConfig{});
    EXPECT_EQ(r.model.spec(), m.spec());
    EXPECT_TRUE(r.warnings.empty());
    const Tensor x = test::random_tensor(5, 3, 16, 16, 1);
    EXPECT_EQ(r.model.logits(x), m.logits(x));
}

TEST(Finalize, MatchesSoftMaskedModel) {
    for (double rate : {0.25, 0.5, 0.75}) {
        CompactModel m = sample_compact(8);
        SfpConfig cfg;
        cfg.rate = rate;
        sfp_mask_step(m, cfg);
        const SfpResult r = sfp_finalize(m, cfg);
        EXPECT_TRUE(r.warnings.empty());
        EXPECT_LT(count_params(r.model), count_params(m));
        EXPECT_LT(count_flops(r.model), count_flops(m));
        for (std::size_t l = 0; l < m.net.blocks.size(); ++l) {
            const int mid = m.spec().blocks[l].mid_channels;
            EXPECT_EQ(r.model.spec().blocks[l].mid_channels, mid - cfg.zeroed_count(mid));
        }
        const Tensor x = test::random_tensor(100, 3, 16, 16, 12);
        EXPECT_LT(max_abs_diff(r.model.logits(x), m.logits(x)), 1e-5f) << rate;
        EXPECT_EQ(r.report.method, "abp-sfp");
        EXPECT_EQ(r.nominal_report.method, "abp-sfp-nominal");
        EXPECT_EQ(r.report.flops_pruned, count_flops(r.model));
    }
}

TEST(Finalize, MismatchedLayerIsKeptWithWarning) {
    CompactModel m = sample_compact(9);
    SfpConfig cfg;
    cfg.rate = 0.5;
    sfp_mask_step(m, cfg);
    // block 2 loses one filter too many
    Tensor& w = m.net.blocks[2].conv1.weight.value;
    for (int f = 0; f < w.n(); ++f) {
        auto inst = w.instance(f);
        if (std::any_of(inst.begin(), inst.end(), [](float v) { return v != 0.0f; })) {
            std::fill(inst.begin(), inst.end(), 0.0f);
            break;
        }
    }
    const SfpResult r = sfp_finalize(m, cfg);
    ASSERT_EQ(r.warnings.size(), 1u);
    EXPECT_NE(r.warnings[0].find("block 2"), std::string::npos);
    EXPECT_EQ(r.model.spec().blocks[2].mid_channels, m.spec().blocks[2].mid_channels);
    EXPECT_LT(r.model.spec().blocks[0].mid_channels, m.spec().blocks[0].mid_channels);
}

TEST(Finalize, FlopsStrictlyOrdered) {
    CompactModel m = sample_compact(10);
    SfpConfig cfg;
    cfg.rate = 0.5;
    sfp_mask_step(m, cfg);
    const SfpResult r = sfp_finalize(m, cfg);
    const std::uint64_t base = count_flops(micro());
    EXPECT_LT(count_flops(m), base);
    EXPECT_LT(r.report.flops_pruned, count_flops(m));
    EXPECT_EQ(r.report.flops_baseline, base);
    EXPECT_LT(r.nominal_report.flops_pruned, count_flops(m));
    EXPECT_GT(r.report.flops_drop_pct(), make_report(micro(), m.spec()).flops_drop_pct());
}

TEST(Finalize, NominalReportScalesBlocks) {
    const NetworkSpec rn56 = arch_spec("rn56", 10, 32);
    GatedNetwork net(rn56, GateKind::None, 1);
    GateMask mask = GateMask::all_fixed(rn56);
    const CompactModel m = export_compact(net, mask);
    SfpConfig cfg;
    cfg.rate = 0.5;
    const SfpResult r = sfp_finalize(m, cfg);  // nothing zeroed yet: warnings, layers kept
    EXPECT_EQ(r.warnings.size(), static_cast<std::size_t>(rn56.num_blocks()));
    std::uint64_t blocks = 0;
    for (const auto& b : rn56.blocks) blocks += block_flops(b);
    const double expected = static_cast<double>(stem_flops(rn56) + classifier_flops(rn56)) + 0.25 * blocks;
    EXPECT_NEAR(static_cast<double>(r.nominal_report.flops_pruned), expected, 1.0);
}

TEST(Finetune, EndsOnMaskStepAndCountsEpochs) {
    CompactModel m = sample_compact(11);
    const Dataset d = small_data();
    TrainConfig cfg;
    cfg.batch_size = 16;
    cfg.lr = 0.05;
    SfpConfig sfp;
    sfp.rate = 0.5;
    sfp.epochs = 2;
    int epochs_done = 7;
    std::vector<EpochMetrics> seen;
    StageHooks hooks;
    hooks.on_epoch = [&](const EpochMetrics& e) { seen.push_back(e); };
    const CompactModel out = sfp_finetune(m, d, sfp, cfg, epochs_done, hooks);
    EXPECT_EQ(epochs_done, 9);
    ASSERT_EQ(seen.size(), 2u);
    EXPECT_EQ(seen[0].stage, 4);
    EXPECT_EQ(seen[0].epoch, 7);
    EXPECT_DOUBLE_EQ(seen[0].lr, learning_rate(cfg, 3, 0));
    for (const auto& b : out.net.blocks)
        EXPECT_EQ(zero_filters(b.conv1.weight.value), sfp.zeroed_count(b.conv1.weight.value.n()));
    const SfpResult r = sfp_finalize(out, sfp);
    EXPECT_TRUE(r.warnings.empty());
    EXPECT_LT(max_abs_diff(r.model.logits(d.all_images()), out.logits(d.all_images())), 1e-5f);
}

TEST(Finetune, RateZeroSkipsTraining) {
    const CompactModel m = sample_compact(12);
    int epochs_done = 3;
    SfpConfig sfp;
    sfp.epochs = 4;
    const CompactModel out = sfp_finetune(m, small_data(), sfp, TrainConfig{}, epochs_done);
    EXPECT_EQ(epochs_done, 3);
    const Tensor x = test::random_tensor(2, 3, 16, 16, 1);
    EXPECT_EQ(out.logits(x), m.logits(x));
}

}  // namespace
}  // namespace abp
