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

#include "abp/sfp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "abp/errors.hpp"

namespace abp {

void SfpConfig::validate() const {
    if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("sfp rate must be in [0, 1)");
    if (epochs < 0) throw ConfigError("sfp epochs must be >= 0");
    if (cadence < 1) throw ConfigError("sfp cadence must be >= 1");
}

int SfpConfig::zeroed_count(int filters) const {
    return static_cast<int>(std::floor(rate * filters + 1e-9));
}

FilterNorms filter_norms(const GatedNetwork& net) {
    FilterNorms out;
    for (const auto& b : net.blocks) {
        const Tensor& w = b.conv1.weight.value;
        std::vector<float> norms(w.n());
        for (int f = 0; f < w.n(); ++f) {
            double sq = 0.0;
            for (float v : w.instance(f)) sq += static_cast<double>(v) * v;
            norms[f] = static_cast<float>(std::sqrt(sq));
        }
        out.push_back(std::move(norms));
    }
    return out;
}

std::vector<int> smallest_filters(const std::vector<float>& norms, double rate) {
    SfpConfig cfg;
    cfg.rate = rate;
    cfg.validate();
    std::vector<int> order(norms.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return norms[a] < norms[b]; });
    order.resize(cfg.zeroed_count(static_cast<int>(norms.size())));
    std::sort(order.begin(), order.end());
    return order;
}

std::vector<std::vector<int>> sfp_mask_step(GatedNetwork& net, const SfpConfig& cfg) {
    cfg.validate();
    const FilterNorms norms = filter_norms(net);
    std::vector<std::vector<int>> zeroed;
    for (std::size_t l = 0; l < net.blocks.size(); ++l) {
        auto& b = net.blocks[l];
        auto picked = smallest_filters(norms[l], cfg.rate);
        for (int f : picked) {
            for (float& v : b.conv1.weight.value.instance(f)) v = 0.0f;
            // conv output is 0, so eval output is gamma*(-mean)/sigma + beta
            float& beta = b.bn1.beta.value[f];
            const float gamma = b.bn1.gamma.value[f];
            float& mean = b.bn1.running_mean.value[f];
            const float sigma = std::sqrt(b.bn1.running_var.value[f] + BatchNorm2d::kEps);
            if (beta <= 0.0f) {
                mean = 0.0f;
            } else if (gamma != 0.0f) {
                mean = beta * sigma / gamma * (1.0f + 1e-6f);
            } else {
                beta = 0.0f;
                mean = 0.0f;
            }
        }
        zeroed.push_back(std::move(picked));
    }
    return zeroed;
}

std::vector<std::vector<int>> sfp_mask_step(CompactModel& model, const SfpConfig& cfg) {
    return sfp_mask_step(model.net, cfg);
}

namespace {

std::vector<int> nonzero_filters(const Tensor& w) {
    std::vector<int> keep;
    for (int f = 0; f < w.n(); ++f) {
        const auto inst = w.instance(f);
        if (std::any_of(inst.begin(), inst.end(), [](float v) { return v != 0.0f; })) {
            keep.push_back(f);
        }
    }
    return keep;
}

std::uint64_t nominal_flops(const NetworkSpec& spec, double rate) {
    const double keep = (1.0 - rate) * (1.0 - rate);
    double total = static_cast<double>(stem_flops(spec) + classifier_flops(spec));
    for (const auto& b : spec.blocks) total += static_cast<double>(block_flops(b)) * keep;
    return static_cast<std::uint64_t>(std::llround(total));
}

std::uint64_t nominal_params(const NetworkSpec& spec, double rate) {
    const double keep = (1.0 - rate) * (1.0 - rate);
    double total = static_cast<double>(stem_params(spec) + classifier_params(spec));
    for (const auto& b : spec.blocks) total += static_cast<double>(block_params(b)) * keep;
    return static_cast<std::uint64_t>(std::llround(total));
}

}  // namespace

SfpResult sfp_finalize(const CompactModel& model, const SfpConfig& cfg) {
    cfg.validate();
    SfpResult result;
    NetworkSpec spec = model.spec();
    std::vector<std::vector<int>> keep;
    for (std::size_t l = 0; l < model.net.blocks.size(); ++l) {
        auto kept = nonzero_filters(model.net.blocks[l].conv1.weight.value);
        const int mid = spec.blocks[l].mid_channels;
        // a zeroed filter is only removed if the layer lost exactly the
        // masked count; otherwise keep the layer whole
        if (kept.size() != static_cast<std::size_t>(mid - cfg.zeroed_count(mid)) || kept.empty()) {
            if (cfg.zeroed_count(mid) > 0) {
                result.warnings.push_back("block " + std::to_string(l) +
                                          ": zeroed filters do not match the mask, layer kept");
            }
            kept.resize(mid);
            std::iota(kept.begin(), kept.end(), 0);
        }
        spec.blocks[l].mid_channels = static_cast<int>(kept.size());
        keep.push_back(std::move(kept));
    }

    CompactModel out;
    out.provenance = model.provenance;
    out.baseline = model.baseline;
    out.net = GatedNetwork(spec, GateKind::None, 0);
    out.mask = GateMask::all_fixed(spec);
    out.net.stem_conv = model.net.stem_conv;
    out.net.stem_bn = model.net.stem_bn;
    out.net.classifier = model.net.classifier;

    for (std::size_t l = 0; l < keep.size(); ++l) {
        const auto& src = model.net.blocks[l];
        auto& dst = out.net.blocks[l];
        const auto& kept = keep[l];
        for (std::size_t j = 0; j < kept.size(); ++j) {
            const int f = kept[j];
            auto from = src.conv1.weight.value.instance(f);
            std::copy(from.begin(), from.end(),
                      dst.conv1.weight.value.instance(static_cast<int>(j)).begin());
            dst.bn1.gamma.value[j] = src.bn1.gamma.value[f];
            dst.bn1.beta.value[j] = src.bn1.beta.value[f];
            dst.bn1.running_mean.value[j] = src.bn1.running_mean.value[f];
            dst.bn1.running_var.value[j] = src.bn1.running_var.value[f];
        }
        const Tensor& w2 = src.conv2.weight.value;
        Tensor& d2 = dst.conv2.weight.value;
        for (int o = 0; o < w2.n(); ++o) {
            for (std::size_t j = 0; j < kept.size(); ++j) {
                for (int y = 0; y < w2.h(); ++y) {
                    for (int x = 0; x < w2.w(); ++x) {
                        d2.at(o, static_cast<int>(j), y, x) = w2.at(o, kept[j], y, x);
                    }
                }
            }
        }
        dst.bn2 = src.bn2;
    }

    result.model = std::move(out);
    result.report = make_report(model.baseline, result.model.spec(), "abp-sfp");
    result.nominal_report = make_report(model.baseline, model.spec(), "abp-sfp-nominal");
    result.nominal_report.flops_pruned = nominal_flops(model.spec(), cfg.rate);
    result.nominal_report.params_pruned = nominal_params(model.spec(), cfg.rate);
    return result;
}

CompactModel sfp_finetune(CompactModel model, const Dataset& data, const SfpConfig& sfp,
                          const TrainConfig& cfg, int& epochs_done, const StageHooks& hooks) {
    sfp.validate();
    if (sfp.rate == 0.0) return model;
    ModelState state{std::move(model.net), std::move(model.mask), epochs_done};
    sfp_mask_step(state.net, sfp);
    Sgd opt(cfg.momentum, cfg.weight_decay);
    for (int e = 0; e < sfp.epochs; ++e) {
        const double lr = learning_rate(cfg, 3, e);
        EpochMetrics m = train_epoch(state, data, cfg, lr, opt);
        m.stage = 4;  // SFP fine-tune
        if (hooks.on_epoch) hooks.on_epoch(m);
        if ((e + 1) % sfp.cadence == 0 || e + 1 == sfp.epochs) {
            sfp_mask_step(state.net, sfp);
        }
    }
    epochs_done = state.epochs_done;
    model.net = std::move(state.net);
    model.mask = std::move(state.mask);
    return model;
}

}  // namespace abp
