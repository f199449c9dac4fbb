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

#include "abp/network_spec.hpp"

#include "abp/errors.hpp"

namespace abp {

std::string LayerShape::to_string() const {
    return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
}

LayerShape NetworkSpec::stem_shape() const {
    return {stem_channels, input_shape.height, input_shape.width};
}

LayerShape NetworkSpec::feature_shape() const {
    return blocks.empty() ? stem_shape() : blocks.back().out_shape;
}

namespace {

bool positive(const LayerShape& s) { return s.channels >= 1 && s.height >= 1 && s.width >= 1; }

std::string block_name(int i) { return "block " + std::to_string(i); }

}  // namespace

void validate(const NetworkSpec& spec, bool allow_empty) {
    if (!positive(spec.input_shape)) throw ShapeError("input shape must be positive");
    if (spec.stem_channels < 1) throw ShapeError("stem channels must be positive");
    if (spec.num_classes < 1) throw ShapeError("num_classes must be positive");
    if (spec.blocks.empty() && !allow_empty) throw ShapeError("network has no blocks");

    LayerShape prev = spec.stem_shape();
    for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
        const BlockSpec& b = spec.blocks[i];
        const std::string pair = i == 0 ? "stem -> " + block_name(0)
                                        : block_name(static_cast<int>(i) - 1) + " -> " +
                                              block_name(static_cast<int>(i));
        if (b.index != static_cast<int>(i)) {
            throw ShapeError(block_name(static_cast<int>(i)) + " has index " +
                             std::to_string(b.index));
        }
        if (!positive(b.in_shape) || !positive(b.out_shape) || b.mid_channels < 1) {
            throw ShapeError(block_name(b.index) + " has a non-positive dimension");
        }
        if (b.in_shape != prev) {
            throw ShapeError("shape mismatch between " + pair + ": " + prev.to_string() + " vs " +
                             b.in_shape.to_string());
        }
        if (b.kind != BlockKind::BasicResidual) {
            throw ShapeError(block_name(b.index) + " must be a residual block");
        }
        if (b.stride != 1 && b.stride != 2) {
            throw ShapeError(block_name(b.index) + " stride must be 1 or 2");
        }
        const int eh = (b.in_shape.height + b.stride - 1) / b.stride;
        const int ew = (b.in_shape.width + b.stride - 1) / b.stride;
        if (b.out_shape.height != eh || b.out_shape.width != ew) {
            throw ShapeError(block_name(b.index) + " spatial size inconsistent with stride");
        }
        const bool same = b.in_shape == b.out_shape;
        if ((b.shortcut == Shortcut::Identity) != same) {
            throw ShapeError(block_name(b.index) +
                             ": identity shortcut requires equal in/out shapes");
        }
        if (b.shortcut == Shortcut::PadDownsample && b.out_shape.channels < b.in_shape.channels) {
            throw ShapeError(block_name(b.index) + ": pad shortcut cannot reduce channels");
        }
        prev = b.out_shape;
    }
}

NetworkSpec cifar_resnet(const std::vector<int>& stage_blocks, const std::vector<int>& widths,
                         LayerShape input, int num_classes) {
    if (stage_blocks.size() != widths.size() || stage_blocks.empty()) {
        throw ConfigError("stage_blocks and widths must be non-empty and equally long");
    }
    NetworkSpec spec;
    spec.input_shape = input;
    spec.stem_channels = widths.front();
    spec.num_classes = num_classes;
    LayerShape cur = spec.stem_shape();
    for (std::size_t s = 0; s < stage_blocks.size(); ++s) {
        for (int j = 0; j < stage_blocks[s]; ++j) {
            BlockSpec b;
            b.index = spec.num_blocks();
            b.stage = static_cast<int>(s);
            b.in_shape = cur;
            b.stride = (s > 0 && j == 0) ? 2 : 1;
            b.out_shape = {widths[s], (cur.height + b.stride - 1) / b.stride,
                           (cur.width + b.stride - 1) / b.stride};
            b.mid_channels = widths[s];
            b.shortcut = b.in_shape == b.out_shape ? Shortcut::Identity : Shortcut::PadDownsample;
            spec.blocks.push_back(b);
            cur = b.out_shape;
        }
    }
    validate(spec);
    return spec;
}

std::vector<std::string> known_archs() { return {"micro", "rn20", "rn32", "rn56", "rn110"}; }

NetworkSpec arch_spec(const std::string& arch, int num_classes, int image_size) {
    const LayerShape input{3, image_size, image_size};
    auto standard = [&](int per_stage) {
        return cifar_resnet({per_stage, per_stage, per_stage}, {16, 32, 64}, input, num_classes);
    };
    if (arch == "rn20") return standard(3);
    if (arch == "rn32") return standard(5);
    if (arch == "rn56") return standard(9);
    if (arch == "rn110") return standard(18);
    if (arch == "micro") return cifar_resnet({3, 4, 4}, {4, 8, 16}, input, num_classes);
    throw ConfigError("unknown arch '" + arch + "'");
}

// ---------------------------------------------------------------------------
// JSON

namespace {

nlohmann::json shape_json(const LayerShape& s) {
    return nlohmann::json::array({s.channels, s.height, s.width});
}

LayerShape shape_from(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 3) throw ConfigError("shape must be [c, h, w]");
    return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}

}  // namespace

nlohmann::json to_json(const NetworkSpec& spec) {
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& b : spec.blocks) {
        blocks.push_back({{"index", b.index},
                          {"stage", b.stage},
                          {"in", shape_json(b.in_shape)},
                          {"out", shape_json(b.out_shape)},
                          {"mid", b.mid_channels},
                          {"stride", b.stride},
                          {"shortcut", b.shortcut == Shortcut::Identity ? "identity" : "pad"}});
    }
    return {{"input", shape_json(spec.input_shape)},
            {"stem_channels", spec.stem_channels},
            {"num_classes", spec.num_classes},
            {"blocks", blocks}};
}

NetworkSpec network_spec_from_json(const nlohmann::json& j) {
    try {
        NetworkSpec spec;
        spec.input_shape = shape_from(j.at("input"));
        spec.stem_channels = j.at("stem_channels").get<int>();
        spec.num_classes = j.at("num_classes").get<int>();
        for (const auto& jb : j.at("blocks")) {
            BlockSpec b;
            b.index = jb.at("index").get<int>();
            b.stage = jb.at("stage").get<int>();
            b.in_shape = shape_from(jb.at("in"));
            b.out_shape = shape_from(jb.at("out"));
            b.mid_channels = jb.at("mid").get<int>();
            b.stride = jb.at("stride").get<int>();
            const auto sc = jb.at("shortcut").get<std::string>();
            if (sc != "identity" && sc != "pad") throw ConfigError("unknown shortcut " + sc);
            b.shortcut = sc == "identity" ? Shortcut::Identity : Shortcut::PadDownsample;
            spec.blocks.push_back(b);
        }
        validate(spec, true);
        return spec;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed network spec: ") + e.what());
    }
}

}  // namespace abp
