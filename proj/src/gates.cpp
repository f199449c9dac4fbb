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

#include "abp/gates.hpp"

#include <cmath>

#include "abp/errors.hpp"

namespace abp {

std::string to_string(GateKind kind) {
    switch (kind) {
        case GateKind::None: return "none";
        case GateKind::Conv: return "conv";
        case GateKind::Recur: return "recur";
    }
    return "none";
}

GateKind gate_kind_from_string(const std::string& s) {
    if (s == "conv") return GateKind::Conv;
    if (s == "recur") return GateKind::Recur;
    if (s == "none") return GateKind::None;
    throw ConfigError("gate must be \"conv\" or \"recur\", got \"" + s + "\"");
}

// ---------------------------------------------------------------------------
// ConvGate

ConvGate::ConvGate(const std::string& name, const ConvGateSpec& spec, const LayerShape& input) {
    const int s1 = spec.conv_strides[0];
    const int s2 = spec.conv_strides[1];
    if (spec.reduce_channels < 1 || spec.kernel < 1 || s1 < 1 || s2 < 1) {
        throw ConfigError("conv gate " + name + ": non-positive geometry");
    }
    if (spec.fc_in != spec.reduce_channels) {
        throw ConfigError("conv gate " + name + ": fc_in must equal reduce_channels");
    }
    if (input.height < s1 * s2 || input.width < s1 * s2) {
        throw ShapeError("conv gate " + name + ": input " + input.to_string() +
                         " too small for two strided convolutions");
    }
    conv1 = Conv2d(name + ".conv1", input.channels, spec.reduce_channels, spec.kernel, s1);
    bn1 = BatchNorm2d(name + ".bn1", spec.reduce_channels);
    conv2 = Conv2d(name + ".conv2", spec.reduce_channels, spec.reduce_channels, spec.kernel, s2);
    bn2 = BatchNorm2d(name + ".bn2", spec.reduce_channels);
    fc = Linear(name + ".fc", spec.fc_in, 1);
}

std::vector<float> ConvGate::forward(const Tensor& x, Mode mode, Cache& cache) const {
    cache.x = x;
    cache.a1 = conv1.forward(x);
    cache.r1 = relu(bn1.forward(cache.a1, mode, cache.bn1));
    cache.a2 = conv2.forward(cache.r1);
    cache.r2 = relu(bn2.forward(cache.a2, mode, cache.bn2));
    cache.pooled = global_avg_pool(cache.r2);
    const Tensor logit = fc.forward(cache.pooled);
    cache.marks.resize(x.n());
    for (int i = 0; i < x.n(); ++i) cache.marks[i] = sigmoid(logit[i]);
    return cache.marks;
}

Tensor ConvGate::backward(std::span<const float> dmark, const Cache& cache, Mode mode) {
    Tensor dlogit(cache.x.n(), 1, 1, 1);
    for (int i = 0; i < cache.x.n(); ++i) {
        const float m = cache.marks[i];
        dlogit[i] = dmark[i] * m * (1.0f - m);
    }
    Tensor d = fc.backward(cache.pooled, dlogit);
    d = global_avg_pool_backward(d, cache.r2.h(), cache.r2.w());
    d = bn2.backward(relu_backward(cache.r2, d), cache.bn2, mode);
    d = conv2.backward(cache.r1, d);
    d = bn1.backward(relu_backward(cache.r1, d), cache.bn1, mode);
    return conv1.backward(cache.x, d);
}

void ConvGate::commit(const Cache& cache) {
    bn1.commit(cache.bn1, cache.a1.plane_size() * cache.a1.n());
    bn2.commit(cache.bn2, cache.a2.plane_size() * cache.a2.n());
}

void ConvGate::init(std::mt19937_64& rng) {
    conv1.init(rng);
    conv2.init(rng);
    fc.init(rng);
}

void ConvGate::collect(std::vector<Param*>& out) {
    conv1.collect(out);
    bn1.collect(out);
    conv2.collect(out);
    bn2.collect(out);
    fc.collect(out);
}

// ---------------------------------------------------------------------------
// RecurGate

RecurGate::RecurGate(const std::string& name, const RecurGateSpec& spec,
                     const std::vector<int>& block_in_channels) {
    if (spec.embed_dim < 1 || spec.hidden_dim < 1) {
        throw ConfigError("recurrent gate: non-positive dimensions");
    }
    for (std::size_t l = 0; l < block_in_channels.size(); ++l) {
        projections.emplace_back(name + ".proj" + std::to_string(l), block_in_channels[l],
                                 spec.embed_dim);
    }
    ih = Linear(name + ".lstm.ih", spec.embed_dim, 4 * spec.hidden_dim);
    hh = Linear(name + ".lstm.hh", spec.hidden_dim, 4 * spec.hidden_dim);
    head = Linear(name + ".head", spec.hidden_dim, 1);
}

RecurState RecurGate::initial_state(int batch) const {
    return {Tensor(batch, hidden_dim(), 1, 1), Tensor(batch, hidden_dim(), 1, 1)};
}

std::vector<float> RecurGate::step(int block, const Tensor& x, RecurState& state,
                                   StepCache& cache) const {
    const int hd = hidden_dim();
    if (state.h.c() != hd || state.c.c() != hd || state.h.n() != x.n() ||
        state.c.n() != x.n()) {
        throw ContractViolation("recurrent state width " + std::to_string(state.h.c()) +
                                " does not match hidden_dim " + std::to_string(hd));
    }
    const int n = x.n();
    cache.in_h = x.h();
    cache.in_w = x.w();
    cache.pooled = global_avg_pool(x);
    cache.embed = projections.at(block).forward(cache.pooled);
    cache.h_prev = state.h;
    cache.c_prev = state.c;
    Tensor pre = ih.forward(cache.embed);
    const Tensor rec = hh.forward(state.h);
    for (std::size_t k = 0; k < pre.size(); ++k) pre[k] += rec[k];

    cache.i = cache.f = cache.g = cache.o = cache.c = cache.tanh_c = cache.h =
        Tensor(n, hd, 1, 1);
    for (int b = 0; b < n; ++b) {
        for (int u = 0; u < hd; ++u) {
            const float* z = pre.instance(b).data();
            const float iv = sigmoid(z[u]);
            const float fv = sigmoid(z[hd + u]);
            const float gv = std::tanh(z[2 * hd + u]);
            const float ov = sigmoid(z[3 * hd + u]);
            const float cv = fv * state.c.at(b, u, 0, 0) + iv * gv;
            const float tc = std::tanh(cv);
            cache.i.at(b, u, 0, 0) = iv;
            cache.f.at(b, u, 0, 0) = fv;
            cache.g.at(b, u, 0, 0) = gv;
            cache.o.at(b, u, 0, 0) = ov;
            cache.c.at(b, u, 0, 0) = cv;
            cache.tanh_c.at(b, u, 0, 0) = tc;
            cache.h.at(b, u, 0, 0) = ov * tc;
        }
    }
    state.h = cache.h;
    state.c = cache.c;
    const Tensor logit = head.forward(cache.h);
    cache.marks.resize(n);
    for (int b = 0; b < n; ++b) cache.marks[b] = sigmoid(logit[b]);
    return cache.marks;
}

Tensor RecurGate::step_backward(int block, std::span<const float> dmark, Tensor& dh, Tensor& dc,
                                const StepCache& cache) {
    const int n = cache.h.n();
    const int hd = hidden_dim();
    Tensor dlogit(n, 1, 1, 1);
    for (int b = 0; b < n; ++b) {
        const float m = cache.marks[b];
        dlogit[b] = dmark[b] * m * (1.0f - m);
    }
    Tensor dh_total = head.backward(cache.h, dlogit);
    for (std::size_t k = 0; k < dh_total.size(); ++k) dh_total[k] += dh[k];

    Tensor dpre(n, 4 * hd, 1, 1);
    Tensor dc_prev(n, hd, 1, 1);
    for (int b = 0; b < n; ++b) {
        for (int u = 0; u < hd; ++u) {
            const float iv = cache.i.at(b, u, 0, 0);
            const float fv = cache.f.at(b, u, 0, 0);
            const float gv = cache.g.at(b, u, 0, 0);
            const float ov = cache.o.at(b, u, 0, 0);
            const float tc = cache.tanh_c.at(b, u, 0, 0);
            const float dhv = dh_total.at(b, u, 0, 0);
            const float dcv = dhv * ov * (1.0f - tc * tc) + dc.at(b, u, 0, 0);
            float* z = dpre.instance(b).data();
            z[u] = dcv * gv * iv * (1.0f - iv);
            z[hd + u] = dcv * cache.c_prev.at(b, u, 0, 0) * fv * (1.0f - fv);
            z[2 * hd + u] = dcv * iv * (1.0f - gv * gv);
            z[3 * hd + u] = dhv * tc * ov * (1.0f - ov);
            dc_prev.at(b, u, 0, 0) = dcv * fv;
        }
    }
    const Tensor dembed = ih.backward(cache.embed, dpre);
    dh = hh.backward(cache.h_prev, dpre);
    dc = std::move(dc_prev);
    const Tensor dpooled = projections.at(block).backward(cache.pooled, dembed);
    return global_avg_pool_backward(dpooled, cache.in_h, cache.in_w);
}

void RecurGate::init(std::mt19937_64& rng) {
    for (auto& p : projections) p.init(rng);
    ih.init(rng);
    hh.init(rng);
    head.init(rng);
}

void RecurGate::collect(std::vector<Param*>& out) {
    for (auto& p : projections) p.collect(out);
    ih.collect(out);
    hh.collect(out);
    head.collect(out);
}

}  // namespace abp
