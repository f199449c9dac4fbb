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

#include <gtest/gtest.h>

#include "abp/errors.hpp"
#include "abp/layers.hpp"
#include "test_util.hpp"

namespace abp {
namespace {

using test::gradient_error;
using test::random_tensor;

TEST(Conv2d, MatchesNaiveConvolution) {
    for (int k : {1, 3}) {
        for (int stride : {1, 2}) {
            Conv2d conv("c", 3, 5, k, stride);
            test::randomize(conv.weight, 11 + k + stride);
            const Tensor x = random_tensor(2, 3, 7, 6, 3);
            const Tensor y = conv.forward(x);
            const Tensor ref = test::naive_conv(x, conv.weight.value, stride);
            ASSERT_TRUE(y.same_shape(ref)) << y.shape_string() << " vs " << ref.shape_string();
            EXPECT_LT(max_abs_diff(y, ref), 1e-5f) << "k=" << k << " stride=" << stride;
        }
    }
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
    Conv2d conv("c", 2, 3, 3, 2);
    test::randomize(conv.weight, 5);
    Tensor x = random_tensor(2, 2, 5, 5, 6);
    const Tensor wts = random_tensor(2, 3, 3, 3, 7);
    auto loss = [&] { return test::weighted_sum(conv.forward(x), wts); };
    conv.weight.zero_grad();
    const Tensor dx = conv.backward(x, wts);
    EXPECT_LT(gradient_error(x.span(), dx.span(), loss), 2e-2);
    EXPECT_LT(gradient_error(conv.weight.value.span(), conv.weight.grad.span(), loss), 2e-2);
}

TEST(Conv2d, GradientAccumulates) {
    Conv2d conv("c", 1, 1, 3, 1);
    test::randomize(conv.weight, 1);
    const Tensor x = random_tensor(1, 1, 4, 4, 2);
    const Tensor dy = random_tensor(1, 1, 4, 4, 3);
    conv.weight.zero_grad();
    conv.backward(x, dy);
    const Tensor once = conv.weight.grad;
    conv.backward(x, dy);
    for (std::size_t i = 0; i < once.size(); ++i) {
        EXPECT_FLOAT_EQ(conv.weight.grad[i], 2.0f * once[i]);
    }
}

TEST(BatchNorm2d, EvalMatchesFormula) {
    BatchNorm2d bn("bn", 3);
    test::randomize(bn.gamma, 1, 0.5f, 1.0f);
    test::randomize(bn.beta, 2);
    test::randomize(bn.running_mean, 3);
    for (float& v : bn.running_var.value.span()) v = 0.7f;
    const Tensor x = random_tensor(2, 3, 4, 4, 4);
    EXPECT_LT(max_abs_diff(bn.forward(x), test::naive_bn_eval(x, bn)), 1e-5f);
}

TEST(BatchNorm2d, TrainModeNormalizesAndLeavesRunningStats) {
    BatchNorm2d bn("bn", 2);
    const Tensor x = random_tensor(4, 2, 3, 3, 9, 3.0f);
    BnCache cache;
    const Tensor y = bn.forward(x, Mode::Train, cache);
    for (int c = 0; c < 2; ++c) {
        double s = 0.0, sq = 0.0;
        for (int i = 0; i < 4; ++i)
            for (int p = 0; p < 9; ++p) {
                const double v = y.instance(i)[c * 9 + p];
                s += v;
                sq += v * v;
            }
        EXPECT_NEAR(s / 36.0, 0.0, 1e-5);
        EXPECT_NEAR(sq / 36.0, 1.0, 1e-3);
    }
    EXPECT_EQ(bn.running_mean.value[0], 0.0f);
    EXPECT_EQ(bn.running_var.value[0], 1.0f);
}

TEST(BatchNorm2d, CommitUsesMomentumAndUnbiasedVariance) {
    BatchNorm2d bn("bn", 1);
    Tensor x(1, 1, 1, 4);
    x[0] = 1;
    x[1] = 2;
    x[2] = 3;
    x[3] = 6;
    BnCache cache;
    bn.forward(x, Mode::Train, cache);
    bn.commit(cache, 4);
    // mean 3, biased var 3.5, unbiased 14/3
    EXPECT_NEAR(bn.running_mean.value[0], 0.1 * 3.0, 1e-6);
    EXPECT_NEAR(bn.running_var.value[0], 0.9 + 0.1 * 14.0 / 3.0, 1e-6);
}

TEST(BatchNorm2d, TrainGradientsMatchFiniteDifferences) {
    BatchNorm2d bn("bn", 2);
    test::randomize(bn.gamma, 1, 0.3f, 1.0f);
    test::randomize(bn.beta, 2);
    Tensor x = random_tensor(3, 2, 2, 2, 3);
    const Tensor wts = random_tensor(3, 2, 2, 2, 4);
    auto loss = [&] {
        BnCache c;
        return test::weighted_sum(bn.forward(x, Mode::Train, c), wts);
    };
    BnCache cache;
    bn.forward(x, Mode::Train, cache);
    bn.gamma.zero_grad();
    bn.beta.zero_grad();
    const Tensor dx = bn.backward(wts, cache, Mode::Train);
    EXPECT_LT(gradient_error(x.span(), dx.span(), loss), 2e-2);
    EXPECT_LT(gradient_error(bn.gamma.value.span(), bn.gamma.grad.span(), loss), 2e-2);
    EXPECT_LT(gradient_error(bn.beta.value.span(), bn.beta.grad.span(), loss), 2e-2);
}

TEST(BatchNorm2d, EvalGradientsMatchFiniteDifferences) {
    BatchNorm2d bn("bn", 2);
    test::randomize(bn.gamma, 1, 0.3f, 1.0f);
    test::randomize(bn.running_mean, 5);
    for (float& v : bn.running_var.value.span()) v = 2.0f;
    Tensor x = random_tensor(2, 2, 2, 2, 3);
    const Tensor wts = random_tensor(2, 2, 2, 2, 4);
    auto loss = [&] { return test::weighted_sum(bn.forward(x), wts); };
    BnCache cache;
    bn.forward(x, Mode::Eval, cache);
    const Tensor dx = bn.backward(wts, cache, Mode::Eval);
    EXPECT_LT(gradient_error(x.span(), dx.span(), loss), 2e-2);
}

TEST(Linear, ForwardAndGradients) {
    Linear fc("fc", 4, 3);
    test::randomize(fc.weight, 1);
    test::randomize(fc.bias, 2);
    Tensor x = random_tensor(2, 4, 1, 1, 3);
    const Tensor y = fc.forward(x);
    ASSERT_EQ(y.c(), 3);
    for (int i = 0; i < 2; ++i)
        for (int o = 0; o < 3; ++o) {
            double acc = fc.bias.value[o];
            for (int j = 0; j < 4; ++j) acc += fc.weight.value.at(o, j, 0, 0) * x.at(i, j, 0, 0);
            EXPECT_NEAR(y.at(i, o, 0, 0), acc, 1e-5);
        }
    const Tensor wts = random_tensor(2, 3, 1, 1, 4);
    auto loss = [&] { return test::weighted_sum(fc.forward(x), wts); };
    fc.weight.zero_grad();
    fc.bias.zero_grad();
    const Tensor dx = fc.backward(x, wts);
    EXPECT_LT(gradient_error(x.span(), dx.span(), loss), 1e-2);
    EXPECT_LT(gradient_error(fc.weight.value.span(), fc.weight.grad.span(), loss), 1e-2);
    EXPECT_LT(gradient_error(fc.bias.value.span(), fc.bias.grad.span(), loss), 1e-2);
}

TEST(PadShortcut, SubsamplesAndPadsChannelsEvenly) {
    const Tensor x = random_tensor(1, 2, 4, 4, 1);
    const Tensor y = pad_shortcut(x, 4, 2);
    ASSERT_EQ(y.c(), 4);
    ASSERT_EQ(y.h(), 2);
    for (int yy = 0; yy < 2; ++yy)
        for (int xx = 0; xx < 2; ++xx) {
            EXPECT_EQ(y.at(0, 0, yy, xx), 0.0f);
            EXPECT_EQ(y.at(0, 1, yy, xx), x.at(0, 0, 2 * yy, 2 * xx));
            EXPECT_EQ(y.at(0, 2, yy, xx), x.at(0, 1, 2 * yy, 2 * xx));
            EXPECT_EQ(y.at(0, 3, yy, xx), 0.0f);
        }
    Tensor xm = x;
    const Tensor wts = random_tensor(1, 4, 2, 2, 2);
    auto loss = [&] { return test::weighted_sum(pad_shortcut(xm, 4, 2), wts); };
    const Tensor dx = pad_shortcut_backward(wts, 2, 4, 4, 2);
    EXPECT_LT(gradient_error(xm.span(), dx.span(), loss), 1e-2);
}

TEST(Activations, ReluPoolSigmoid) {
    Tensor x(1, 1, 1, 4);
    x[0] = -1;
    x[1] = 0;
    x[2] = 2;
    x[3] = 3;
    const Tensor r = relu(x);
    EXPECT_EQ(r[0], 0.0f);
    EXPECT_EQ(r[2], 2.0f);
    Tensor dy(1, 1, 1, 4, 1.0f);
    const Tensor dr = relu_backward(r, dy);
    EXPECT_EQ(dr[0], 0.0f);
    EXPECT_EQ(dr[1], 0.0f);
    EXPECT_EQ(dr[2], 1.0f);
    EXPECT_FLOAT_EQ(global_avg_pool(x)[0], 1.0f);
    EXPECT_FLOAT_EQ(sigmoid(0.0f), 0.5f);
    EXPECT_GT(sigmoid(-100.0f), -1e-30f);
    EXPECT_LE(sigmoid(100.0f), 1.0f);
}

TEST(Tensor, SliceConcatAndDiff) {
    const Tensor x = random_tensor(5, 2, 3, 3, 1);
    const Tensor a = x.slice(0, 2);
    const Tensor b = x.slice(2, 3);
    const std::vector<Tensor> parts{a, b};
    EXPECT_EQ(concat_batch(parts), x);
    EXPECT_THROW(max_abs_diff(a, b), ShapeError);
}

}  // namespace
}  // namespace abp
