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

#include "abp/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "abp/errors.hpp"

namespace abp {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void im2col(const float* x, int channels, int h, int w, int k, int stride, int pad, int oh, int ow,
            float* cols) {
    const int plane = oh * ow;
    for (int c = 0; c < channels; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                float* row = cols + static_cast<std::size_t>((c * k + ky) * k + kx) * plane;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    float* dst = row + oy * ow;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst, dst + ow, 0.0f);
                        continue;
                    }
                    const float* src = x + (static_cast<std::size_t>(c) * h + iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0f;
                    }
                }
            }
        }
    }
}

void col2im(const float* cols, int channels, int h, int w, int k, int stride, int pad, int oh,
            int ow, float* x) {
    const int plane = oh * ow;
    for (int c = 0; c < channels; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const float* row = cols + static_cast<std::size_t>((c * k + ky) * k + kx) * plane;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    float* dst = x + (static_cast<std::size_t>(c) * h + iy) * w;
                    const float* src = row + oy * ow;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Param make_param(std::string name, int n, int c, int h, int w, float fill) {
    Param p;
    p.name = std::move(name);
    p.value = Tensor(n, c, h, w, fill);
    p.grad = Tensor(n, c, h, w);
    p.learnable = true;
    return p;
}

Param make_buffer(std::string name, int n, int c, int h, int w, float fill) {
    Param p;
    p.name = std::move(name);
    p.value = Tensor(n, c, h, w, fill);
    p.learnable = false;
    return p;
}

float sigmoid(float x) { return 1.0f / (1.0f + std::exp(-x)); }

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride)
    : weight(make_param(name + ".weight", out_channels, in_channels, kernel, kernel)),
      stride_(stride) {
    if (in_channels < 1 || out_channels < 1 || kernel < 1 || stride < 1) {
        throw ShapeError("conv " + name + ": non-positive geometry");
    }
}

Tensor Conv2d::forward(const Tensor& x) const {
    if (x.c() != in_channels()) {
        throw ShapeError("conv " + weight.name + ": expected " + std::to_string(in_channels()) +
                         " input channels, got " + x.shape_string());
    }
    const int k = kernel();
    const int oh = output_size(x.h());
    const int ow = output_size(x.w());
    const int kdim = in_channels() * k * k;
    const int plane = oh * ow;
    Tensor y(x.n(), out_channels(), oh, ow);
    std::vector<float> cols(static_cast<std::size_t>(kdim) * plane);
    ConstMapMat wmat(weight.value.data(), out_channels(), kdim);
    for (int i = 0; i < x.n(); ++i) {
        im2col(x.instance(i).data(), x.c(), x.h(), x.w(), k, stride_, padding(), oh, ow,
               cols.data());
        ConstMapMat cmat(cols.data(), kdim, plane);
        MapMat ymat(y.instance(i).data(), out_channels(), plane);
        ymat.noalias() = wmat * cmat;
    }
    return y;
}

Tensor Conv2d::backward(const Tensor& x, const Tensor& dy) {
    const int k = kernel();
    const int oh = dy.h();
    const int ow = dy.w();
    const int kdim = in_channels() * k * k;
    const int plane = oh * ow;
    Tensor dx(x.n(), x.c(), x.h(), x.w());
    std::vector<float> cols(static_cast<std::size_t>(kdim) * plane);
    std::vector<float> dcols(cols.size());
    ConstMapMat wmat(weight.value.data(), out_channels(), kdim);
    MapMat gmat(weight.grad.data(), out_channels(), kdim);
    for (int i = 0; i < x.n(); ++i) {
        im2col(x.instance(i).data(), x.c(), x.h(), x.w(), k, stride_, padding(), oh, ow,
               cols.data());
        ConstMapMat cmat(cols.data(), kdim, plane);
        ConstMapMat dymat(dy.instance(i).data(), out_channels(), plane);
        gmat.noalias() += dymat * cmat.transpose();
        MapMat dcmat(dcols.data(), kdim, plane);
        dcmat.noalias() = wmat.transpose() * dymat;
        col2im(dcols.data(), x.c(), x.h(), x.w(), k, stride_, padding(), oh, ow,
               dx.instance(i).data());
    }
    return dx;
}

void Conv2d::init(std::mt19937_64& rng) {
    const float fan_out = static_cast<float>(out_channels() * kernel() * kernel());
    std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / fan_out));
    for (auto& v : weight.value.span()) v = dist(rng);
}

// ---------------------------------------------------------------------------
// BatchNorm2d

BatchNorm2d::BatchNorm2d(const std::string& name, int channels)
    : gamma(make_param(name + ".gamma", channels, 1, 1, 1, 1.0f)),
      beta(make_param(name + ".beta", channels, 1, 1, 1, 0.0f)),
      running_mean(make_buffer(name + ".running_mean", channels, 1, 1, 1, 0.0f)),
      running_var(make_buffer(name + ".running_var", channels, 1, 1, 1, 1.0f)) {}

Tensor BatchNorm2d::forward(const Tensor& x, Mode mode, BnCache& cache) const {
    const int channels = this->channels();
    if (x.c() != channels) {
        throw ShapeError("batchnorm " + gamma.name + ": expected " + std::to_string(channels) +
                         " channels, got " + x.shape_string());
    }
    const std::size_t plane = x.plane_size();
    const std::size_t count = plane * x.n();
    cache.batch_mean.assign(channels, 0.0f);
    cache.batch_var.assign(channels, 0.0f);
    cache.inv_std.assign(channels, 0.0f);
    cache.xhat = Tensor(x.n(), x.c(), x.h(), x.w());
    Tensor y(x.n(), x.c(), x.h(), x.w());
    for (int c = 0; c < channels; ++c) {
        float mean = 0.0f;
        float var = 0.0f;
        if (mode == Mode::Train) {
            double sum = 0.0;
            for (int i = 0; i < x.n(); ++i) {
                const float* p = x.instance(i).data() + c * plane;
                for (std::size_t j = 0; j < plane; ++j) sum += p[j];
            }
            const double m = count ? sum / static_cast<double>(count) : 0.0;
            double sq = 0.0;
            for (int i = 0; i < x.n(); ++i) {
                const float* p = x.instance(i).data() + c * plane;
                for (std::size_t j = 0; j < plane; ++j) {
                    const double d = p[j] - m;
                    sq += d * d;
                }
            }
            mean = static_cast<float>(m);
            var = count ? static_cast<float>(sq / static_cast<double>(count)) : 0.0f;
        } else {
            mean = running_mean.value[c];
            var = running_var.value[c];
        }
        const float inv = 1.0f / std::sqrt(var + kEps);
        cache.batch_mean[c] = mean;
        cache.batch_var[c] = var;
        cache.inv_std[c] = inv;
        const float g = gamma.value[c];
        const float b = beta.value[c];
        for (int i = 0; i < x.n(); ++i) {
            const float* p = x.instance(i).data() + c * plane;
            float* xh = cache.xhat.instance(i).data() + c * plane;
            float* q = y.instance(i).data() + c * plane;
            for (std::size_t j = 0; j < plane; ++j) {
                xh[j] = (p[j] - mean) * inv;
                q[j] = g * xh[j] + b;
            }
        }
    }
    return y;
}

Tensor BatchNorm2d::forward(const Tensor& x) const {
    BnCache scratch;
    return forward(x, Mode::Eval, scratch);
}

void BatchNorm2d::commit(const BnCache& cache, std::size_t count_per_channel) {
    const float unbias = count_per_channel > 1
                             ? static_cast<float>(count_per_channel) /
                                   static_cast<float>(count_per_channel - 1)
                             : 1.0f;
    for (int c = 0; c < channels(); ++c) {
        running_mean.value[c] =
            (1.0f - kMomentum) * running_mean.value[c] + kMomentum * cache.batch_mean[c];
        running_var.value[c] =
            (1.0f - kMomentum) * running_var.value[c] + kMomentum * cache.batch_var[c] * unbias;
    }
}

Tensor BatchNorm2d::backward(const Tensor& dy, const BnCache& cache, Mode mode) {
    const std::size_t plane = dy.plane_size();
    const double count = static_cast<double>(plane * dy.n());
    Tensor dx(dy.n(), dy.c(), dy.h(), dy.w());
    for (int c = 0; c < channels(); ++c) {
        double sum_dy = 0.0;
        double sum_dy_xhat = 0.0;
        for (int i = 0; i < dy.n(); ++i) {
            const float* g = dy.instance(i).data() + c * plane;
            const float* xh = cache.xhat.instance(i).data() + c * plane;
            for (std::size_t j = 0; j < plane; ++j) {
                sum_dy += g[j];
                sum_dy_xhat += static_cast<double>(g[j]) * xh[j];
            }
        }
        gamma.grad[c] += static_cast<float>(sum_dy_xhat);
        beta.grad[c] += static_cast<float>(sum_dy);
        const float scale = gamma.value[c] * cache.inv_std[c];
        const float mean_dy = static_cast<float>(sum_dy / count);
        const float mean_dy_xhat = static_cast<float>(sum_dy_xhat / count);
        for (int i = 0; i < dy.n(); ++i) {
            const float* g = dy.instance(i).data() + c * plane;
            const float* xh = cache.xhat.instance(i).data() + c * plane;
            float* out = dx.instance(i).data() + c * plane;
            if (mode == Mode::Train) {
                for (std::size_t j = 0; j < plane; ++j) {
                    out[j] = scale * (g[j] - mean_dy - xh[j] * mean_dy_xhat);
                }
            } else {
                for (std::size_t j = 0; j < plane; ++j) out[j] = scale * g[j];
            }
        }
    }
    return dx;
}

void BatchNorm2d::collect(std::vector<Param*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
    out.push_back(&running_mean);
    out.push_back(&running_var);
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(const std::string& name, int in_features, int out_features)
    : weight(make_param(name + ".weight", out_features, in_features, 1, 1)),
      bias(make_param(name + ".bias", out_features, 1, 1, 1)) {
    if (in_features < 1 || out_features < 1) {
        throw ShapeError("linear " + name + ": non-positive geometry");
    }
}

Tensor Linear::forward(const Tensor& x) const {
    const int in = in_features();
    if (static_cast<int>(x.instance_size()) != in) {
        throw ShapeError("linear " + weight.name + ": expected " + std::to_string(in) +
                         " features, got " + x.shape_string());
    }
    Tensor y(x.n(), out_features(), 1, 1);
    ConstMapMat xm(x.data(), x.n(), in);
    ConstMapMat wm(weight.value.data(), out_features(), in);
    MapMat ym(y.data(), x.n(), out_features());
    // Row-at-a-time keeps each instance's arithmetic independent of batch size.
    for (int i = 0; i < x.n(); ++i) {
        ym.row(i).noalias() = xm.row(i) * wm.transpose();
        for (int o = 0; o < out_features(); ++o) ym(i, o) += bias.value[o];
    }
    return y;
}

Tensor Linear::backward(const Tensor& x, const Tensor& dy) {
    const int in = in_features();
    Tensor dx(x.n(), x.c(), x.h(), x.w());
    ConstMapMat xm(x.data(), x.n(), in);
    ConstMapMat dym(dy.data(), dy.n(), out_features());
    ConstMapMat wm(weight.value.data(), out_features(), in);
    MapMat gw(weight.grad.data(), out_features(), in);
    MapMat dxm(dx.data(), x.n(), in);
    gw.noalias() += dym.transpose() * xm;
    for (int i = 0; i < dy.n(); ++i) {
        for (int o = 0; o < out_features(); ++o) bias.grad[o] += dym(i, o);
    }
    dxm.noalias() = dym * wm;
    return dx;
}

void Linear::init(std::mt19937_64& rng) {
    const float bound = 1.0f / std::sqrt(static_cast<float>(in_features()));
    std::uniform_real_distribution<float> dist(-bound, bound);
    for (auto& v : weight.value.span()) v = dist(rng);
    for (auto& v : bias.value.span()) v = dist(rng);
}

void Linear::collect(std::vector<Param*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
}

// ---------------------------------------------------------------------------
// Stateless ops

Tensor relu(const Tensor& x) {
    Tensor y = x;
    for (auto& v : y.span()) v = v > 0.0f ? v : 0.0f;
    return y;
}

Tensor relu_backward(const Tensor& y, const Tensor& dy) {
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i) {
        if (!(y[i] > 0.0f)) dx[i] = 0.0f;
    }
    return dx;
}

Tensor global_avg_pool(const Tensor& x) {
    Tensor y(x.n(), x.c(), 1, 1);
    const std::size_t plane = x.plane_size();
    for (int i = 0; i < x.n(); ++i) {
        for (int c = 0; c < x.c(); ++c) {
            const float* p = x.instance(i).data() + c * plane;
            double s = 0.0;
            for (std::size_t j = 0; j < plane; ++j) s += p[j];
            y.at(i, c, 0, 0) = static_cast<float>(s / static_cast<double>(plane));
        }
    }
    return y;
}

Tensor global_avg_pool_backward(const Tensor& dy, int h, int w) {
    Tensor dx(dy.n(), dy.c(), h, w);
    const float inv = 1.0f / static_cast<float>(h * w);
    const std::size_t plane = dx.plane_size();
    for (int i = 0; i < dy.n(); ++i) {
        for (int c = 0; c < dy.c(); ++c) {
            float* p = dx.instance(i).data() + c * plane;
            std::fill(p, p + plane, dy.at(i, c, 0, 0) * inv);
        }
    }
    return dx;
}

Tensor pad_shortcut(const Tensor& x, int out_channels, int stride) {
    if (out_channels < x.c()) {
        throw ShapeError("pad shortcut cannot reduce channels");
    }
    const int front = (out_channels - x.c()) / 2;
    const int oh = (x.h() + stride - 1) / stride;
    const int ow = (x.w() + stride - 1) / stride;
    Tensor y(x.n(), out_channels, oh, ow);
    for (int i = 0; i < x.n(); ++i) {
        for (int c = 0; c < x.c(); ++c) {
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    y.at(i, c + front, oy, ox) = x.at(i, c, oy * stride, ox * stride);
                }
            }
        }
    }
    return y;
}

Tensor pad_shortcut_backward(const Tensor& dy, int in_channels, int in_h, int in_w, int stride) {
    const int front = (dy.c() - in_channels) / 2;
    Tensor dx(dy.n(), in_channels, in_h, in_w);
    for (int i = 0; i < dy.n(); ++i) {
        for (int c = 0; c < in_channels; ++c) {
            for (int oy = 0; oy < dy.h(); ++oy) {
                for (int ox = 0; ox < dy.w(); ++ox) {
                    dx.at(i, c, oy * stride, ox * stride) = dy.at(i, c + front, oy, ox);
                }
            }
        }
    }
    return dx;
}

}  // namespace abp
