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

#include "abp/compact.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "abp/errors.hpp"

namespace abp {

namespace {

template <typename Layer>
void copy_values(Layer& dst, const Layer& src) {
    std::vector<Param*> d;
    std::vector<Param*> s;
    dst.collect(d);
    const_cast<Layer&>(src).collect(s);
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (!d[i]->value.same_shape(s[i]->value)) {
            throw ShapeError("cannot copy " + s[i]->name + " into " + d[i]->name);
        }
        d[i]->value = s[i]->value;
    }
}

std::uint64_t u64(int v) { return static_cast<std::uint64_t>(v); }

}  // namespace

NetworkSpec restrict_spec(const NetworkSpec& spec, const std::vector<int>& keep) {
    NetworkSpec out = spec;
    out.blocks.clear();
    for (int idx : keep) {
        BlockSpec b = spec.blocks.at(idx);
        b.index = out.num_blocks();
        out.blocks.push_back(b);
    }
    validate(out, true);
    return out;
}

CompactModel export_compact(const GatedNetwork& net, const GateMask& mask) {
    if (mask.size() != net.num_blocks()) {
        throw ContractViolation("mask does not match network block count");
    }
    for (int l = 0; l < mask.size(); ++l) {
        if (mask.state(l) == BlockState::Active) {
            throw ContractViolation("export before fixing: block " + std::to_string(l) +
                                    " is still gate-controlled");
        }
    }
    CompactModel model;
    model.baseline = net.spec();
    model.provenance = mask.surviving();
    model.net = GatedNetwork(restrict_spec(net.spec(), model.provenance), GateKind::None, 0);
    model.mask = GateMask::all_fixed(model.net.spec());

    copy_values(model.net.stem_conv, net.stem_conv);
    copy_values(model.net.stem_bn, net.stem_bn);
    for (std::size_t i = 0; i < model.provenance.size(); ++i) {
        copy_values(model.net.blocks[i], net.blocks[model.provenance[i]]);
    }
    copy_values(model.net.classifier, net.classifier);
    return model;
}

// ---------------------------------------------------------------------------
// Cost model

std::uint64_t stem_flops(const NetworkSpec& spec) {
    const LayerShape s = spec.stem_shape();
    return u64(spec.input_shape.channels) * u64(s.channels) * 9 * u64(s.height) * u64(s.width);
}

std::uint64_t block_flops(const BlockSpec& b) {
    const std::uint64_t plane = u64(b.out_shape.height) * u64(b.out_shape.width);
    const std::uint64_t conv1 = u64(b.in_shape.channels) * u64(b.mid_channels) * 9 * plane;
    const std::uint64_t conv2 = u64(b.mid_channels) * u64(b.out_shape.channels) * 9 * plane;
    return conv1 + conv2;
}

std::uint64_t classifier_flops(const NetworkSpec& spec) {
    return u64(spec.feature_shape().channels) * u64(spec.num_classes);
}

std::uint64_t count_flops(const NetworkSpec& spec) {
    std::uint64_t total = stem_flops(spec) + classifier_flops(spec);
    for (const auto& b : spec.blocks) total += block_flops(b);
    return total;
}

std::uint64_t count_flops(const CompactModel& model) { return count_flops(model.spec()); }

std::uint64_t stem_params(const NetworkSpec& spec) {
    const int c = spec.stem_channels;
    return u64(spec.input_shape.channels) * u64(c) * 9 + 2 * u64(c);
}

std::uint64_t block_params(const BlockSpec& b) {
    const std::uint64_t mid = u64(b.mid_channels);
    const std::uint64_t out = u64(b.out_shape.channels);
    return u64(b.in_shape.channels) * mid * 9 + 2 * mid + mid * out * 9 + 2 * out;
}

std::uint64_t classifier_params(const NetworkSpec& spec) {
    return u64(spec.feature_shape().channels) * u64(spec.num_classes) + u64(spec.num_classes);
}

std::uint64_t count_params(const NetworkSpec& spec) {
    std::uint64_t total = stem_params(spec) + classifier_params(spec);
    for (const auto& b : spec.blocks) total += block_params(b);
    return total;
}

std::uint64_t count_params(const CompactModel& model) { return count_params(model.spec()); }

// ---------------------------------------------------------------------------
// Reports

namespace {

double drop(std::uint64_t baseline, std::uint64_t pruned) {
    if (baseline == 0) return 0.0;
    return (1.0 - static_cast<double>(pruned) / static_cast<double>(baseline)) * 100.0;
}

std::string fixed2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

}  // namespace

double CompressionReport::flops_drop_pct() const { return drop(flops_baseline, flops_pruned); }
double CompressionReport::params_drop_pct() const { return drop(params_baseline, params_pruned); }

std::string format_millions(std::uint64_t count) {
    return fixed2(static_cast<double>(count) / 1e6) + "M";
}

std::string CompressionReport::to_text() const {
    std::ostringstream out;
    out << "method = " << method << '\n'
        << "flops_baseline = " << flops_baseline << " (" << format_millions(flops_baseline) << ")\n"
        << "flops_pruned = " << flops_pruned << " (" << format_millions(flops_pruned) << ")\n"
        << "flops_drop_pct = " << fixed2(flops_drop_pct()) << '\n'
        << "params_baseline = " << params_baseline << " (" << format_millions(params_baseline)
        << ")\n"
        << "params_pruned = " << params_pruned << " (" << format_millions(params_pruned) << ")\n"
        << "params_drop_pct = " << fixed2(params_drop_pct()) << '\n';
    return out.str();
}

std::string CompressionReport::csv_header() {
    return "method,flops_baseline,flops_pruned,flops_drop_pct,params_baseline,params_pruned,"
           "params_drop_pct";
}

std::string CompressionReport::to_csv_row() const {
    std::ostringstream out;
    out << method << ',' << flops_baseline << ',' << flops_pruned << ',' << fixed2(flops_drop_pct())
        << ',' << params_baseline << ',' << params_pruned << ',' << fixed2(params_drop_pct());
    return out.str();
}

CompressionReport make_report(const NetworkSpec& baseline, const NetworkSpec& pruned,
                              std::string method) {
    CompressionReport r;
    r.method = std::move(method);
    r.flops_baseline = count_flops(baseline);
    r.flops_pruned = count_flops(pruned);
    r.params_baseline = count_params(baseline);
    r.params_pruned = count_params(pruned);
    return r;
}

float verify_equivalence(const GatedNetwork& net, const GateMask& mask,
                         const CompactModel& compact, const Tensor& inputs) {
    return max_abs_diff(net.logits(inputs, mask), compact.logits(inputs));
}

// ---------------------------------------------------------------------------
// Persistence

void save_compact(const std::filesystem::path& path, const CompactModel& model,
                  const nlohmann::json& extra_meta) {
    nlohmann::json meta = extra_meta;
    meta["compact"] = true;
    meta["provenance"] = model.provenance;
    meta["baseline_spec"] = to_json(model.baseline);
    save_checkpoint(path, model.net, model.mask, meta);
}

bool is_compact_checkpoint(const nlohmann::json& meta) {
    return meta.is_object() && meta.value("compact", false);
}

CompactModel compact_from_checkpoint(Checkpoint&& ck) {
    if (!is_compact_checkpoint(ck.meta)) {
        throw ConfigError("checkpoint is not a compact model");
    }
    CompactModel model;
    model.net = std::move(ck.net);
    model.mask = std::move(ck.mask);
    model.provenance = ck.meta.at("provenance").get<std::vector<int>>();
    model.baseline = network_spec_from_json(ck.meta.at("baseline_spec"));
    return model;
}

CompactModel load_compact(const std::filesystem::path& path) {
    return compact_from_checkpoint(load_checkpoint(path));
}

}  // namespace abp
