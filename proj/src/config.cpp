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

#include "abp/config.hpp"

#include <fstream>

#include "abp/errors.hpp"
#include "abp/network_spec.hpp"

namespace abp {

using nlohmann::json;

int RunConfig::num_classes() const {
    if (data.format == "cifar10") return 10;
    if (data.format == "cifar100") return 100;
    return data.synthetic.num_classes;
}

int RunConfig::image_size() const {
    return data.format == "synthetic" ? data.synthetic.image_size : 32;
}

std::string RunConfig::resolved_run_id() const {
    if (!run_id.empty()) return run_id;
    return arch + "-" + to_string(gate) + "-s" + std::to_string(train.seed);
}

void RunConfig::validate() const {
    const auto archs = known_archs();
    if (std::find(archs.begin(), archs.end(), arch) == archs.end()) {
        throw ConfigError("unknown arch '" + arch + "'");
    }
    if (gate == GateKind::None) throw ConfigError("training needs a gate: conv or recur");
    if (data.format != "synthetic" && data.format != "cifar10" && data.format != "cifar100") {
        throw ConfigError("data.format must be synthetic, cifar10 or cifar100");
    }
    if (data.format != "synthetic" && data.train_path.empty()) {
        throw ConfigError("data.train is required for " + data.format);
    }
    train.validate();
    sfp.validate();
}

json default_config_json() {
    const TrainConfig t = TrainConfig::desk_profile();
    const SyntheticSpec s;
    return {
        {"arch", "micro"},
        {"gate", "conv"},
        {"profile", "desk"},
        {"output_dir", "runs"},
        {"run_id", ""},
        {"train",
         {{"epochs_stage1", t.epochs_stage1},
          {"epochs_stage2", t.epochs_stage2},
          {"epochs_stage3", t.epochs_stage3},
          {"lr", t.lr},
          {"stage_decay", t.stage_decay},
          {"epoch_decay", t.epoch_decay},
          {"stage2_decay_epoch", t.stage2_decay_epoch},
          {"stage3_decay_epoch", t.stage3_decay_epoch},
          {"momentum", t.momentum},
          {"weight_decay", t.weight_decay},
          {"gamma", t.gamma},
          {"k", t.k},
          {"tau", t.tau},
          {"lambda", nullptr},
          {"batch_size", t.batch_size},
          {"seed", t.seed},
          {"augment_crop", t.augmentation.crop},
          {"augment_flip", t.augmentation.flip},
          {"augment_pad", t.augmentation.pad}}},
        {"sfp", {{"rate", 0.0}, {"epochs", 0}, {"cadence", 1}}},
        {"data",
         {{"format", "synthetic"},
          {"train", ""},
          {"test", ""},
          {"normalize_from_data", false},
          {"synthetic",
           {{"classes", s.num_classes},
            {"samples_per_class", s.samples_per_class},
            {"test_per_class", 32},
            {"image_size", s.image_size},
            {"seed", s.seed},
            {"separation", s.blob_separation}}}}},
    };
}

json profile_overlay(const std::string& name) {
    if (name == "desk") return json::object();
    if (name == "paper") {
        const TrainConfig t = TrainConfig::paper_profile();
        return {{"train",
                 {{"epochs_stage1", t.epochs_stage1},
                  {"epochs_stage2", t.epochs_stage2},
                  {"epochs_stage3", t.epochs_stage3},
                  {"stage2_decay_epoch", t.stage2_decay_epoch},
                  {"stage3_decay_epoch", t.stage3_decay_epoch},
                  {"augment_crop", t.augmentation.crop},
                  {"augment_flip", t.augmentation.flip}}}};
    }
    throw ConfigError("unknown profile '" + name + "' (expected desk or paper)");
}

namespace {

void merge_at(json& base, const json& patch, const std::string& prefix) {
    if (!patch.is_object()) throw ConfigError("config section '" + prefix + "' must be an object");
    for (const auto& [key, value] : patch.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!base.contains(key)) throw ConfigError("unknown config key '" + path + "'");
        json& slot = base[key];
        if (slot.is_object()) {
            merge_at(slot, value, path);
        } else if (value.is_object() || value.is_array()) {
            throw ConfigError("config key '" + path + "' expects a scalar");
        } else {
            slot = value;
        }
    }
}

template <typename T>
T get(const json& j, const char* key, const std::string& section) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config key '" + section + key + "' has the wrong type");
    }
}

}  // namespace

void merge_config(json& base, const json& patch) { merge_at(base, patch, ""); }

RunConfig run_config_from_json(const json& doc) {
    json full = default_config_json();
    merge_config(full, doc);
    RunConfig c;
    c.arch = get<std::string>(full, "arch", "");
    c.gate = gate_kind_from_string(get<std::string>(full, "gate", ""));
    c.profile = get<std::string>(full, "profile", "");
    c.output_dir = get<std::string>(full, "output_dir", "");
    c.run_id = get<std::string>(full, "run_id", "");

    const json& t = full.at("train");
    const std::string ts = "train.";
    c.train.epochs_stage1 = get<int>(t, "epochs_stage1", ts);
    c.train.epochs_stage2 = get<int>(t, "epochs_stage2", ts);
    c.train.epochs_stage3 = get<int>(t, "epochs_stage3", ts);
    c.train.lr = get<double>(t, "lr", ts);
    c.train.stage_decay = get<double>(t, "stage_decay", ts);
    c.train.epoch_decay = get<double>(t, "epoch_decay", ts);
    c.train.stage2_decay_epoch = get<int>(t, "stage2_decay_epoch", ts);
    c.train.stage3_decay_epoch = get<int>(t, "stage3_decay_epoch", ts);
    c.train.momentum = get<double>(t, "momentum", ts);
    c.train.weight_decay = get<double>(t, "weight_decay", ts);
    c.train.gamma = get<double>(t, "gamma", ts);
    c.train.k = get<int>(t, "k", ts);
    c.train.tau = get<double>(t, "tau", ts);
    if (t.at("lambda").is_null()) {
        c.train.lambda.reset();
    } else {
        c.train.lambda = get<double>(t, "lambda", ts);
    }
    c.train.batch_size = get<int>(t, "batch_size", ts);
    c.train.seed = get<std::uint64_t>(t, "seed", ts);
    c.train.augmentation.crop = get<bool>(t, "augment_crop", ts);
    c.train.augmentation.flip = get<bool>(t, "augment_flip", ts);
    c.train.augmentation.pad = get<int>(t, "augment_pad", ts);

    const json& s = full.at("sfp");
    c.sfp.rate = get<double>(s, "rate", "sfp.");
    c.sfp.epochs = get<int>(s, "epochs", "sfp.");
    c.sfp.cadence = get<int>(s, "cadence", "sfp.");

    const json& d = full.at("data");
    c.data.format = get<std::string>(d, "format", "data.");
    c.data.train_path = get<std::string>(d, "train", "data.");
    c.data.test_path = get<std::string>(d, "test", "data.");
    c.data.normalize_from_data = get<bool>(d, "normalize_from_data", "data.");
    const json& y = d.at("synthetic");
    const std::string ys = "data.synthetic.";
    c.data.synthetic.num_classes = get<int>(y, "classes", ys);
    c.data.synthetic.samples_per_class = get<int>(y, "samples_per_class", ys);
    c.data.synthetic_test_per_class = get<int>(y, "test_per_class", ys);
    c.data.synthetic.image_size = get<int>(y, "image_size", ys);
    c.data.synthetic.seed = get<std::uint64_t>(y, "seed", ys);
    c.data.synthetic.blob_separation = get<float>(y, "separation", ys);
    c.validate();
    return c;
}

json to_json(const RunConfig& c) {
    json j = default_config_json();
    j["arch"] = c.arch;
    j["gate"] = to_string(c.gate);
    j["profile"] = c.profile;
    j["output_dir"] = c.output_dir;
    j["run_id"] = c.run_id;
    json& t = j["train"];
    t["epochs_stage1"] = c.train.epochs_stage1;
    t["epochs_stage2"] = c.train.epochs_stage2;
    t["epochs_stage3"] = c.train.epochs_stage3;
    t["lr"] = c.train.lr;
    t["stage_decay"] = c.train.stage_decay;
    t["epoch_decay"] = c.train.epoch_decay;
    t["stage2_decay_epoch"] = c.train.stage2_decay_epoch;
    t["stage3_decay_epoch"] = c.train.stage3_decay_epoch;
    t["momentum"] = c.train.momentum;
    t["weight_decay"] = c.train.weight_decay;
    t["gamma"] = c.train.gamma;
    t["k"] = c.train.k;
    t["tau"] = c.train.tau;
    t["lambda"] = c.train.lambda ? json(*c.train.lambda) : json(nullptr);
    t["batch_size"] = c.train.batch_size;
    t["seed"] = c.train.seed;
    t["augment_crop"] = c.train.augmentation.crop;
    t["augment_flip"] = c.train.augmentation.flip;
    t["augment_pad"] = c.train.augmentation.pad;
    j["sfp"] = {{"rate", c.sfp.rate}, {"epochs", c.sfp.epochs}, {"cadence", c.sfp.cadence}};
    json& d = j["data"];
    d["format"] = c.data.format;
    d["train"] = c.data.train_path;
    d["test"] = c.data.test_path;
    d["normalize_from_data"] = c.data.normalize_from_data;
    d["synthetic"] = {{"classes", c.data.synthetic.num_classes},
                      {"samples_per_class", c.data.synthetic.samples_per_class},
                      {"test_per_class", c.data.synthetic_test_per_class},
                      {"image_size", c.data.synthetic.image_size},
                      {"seed", c.data.synthetic.seed},
                      {"separation", c.data.synthetic.blob_separation}};
    return j;
}

RunConfig resolve_config(const json& file_doc, const json& flags) {
    std::string profile = "desk";
    if (file_doc.is_object() && file_doc.contains("profile")) {
        profile = file_doc.at("profile").get<std::string>();
    }
    if (flags.is_object() && flags.contains("profile")) {
        profile = flags.at("profile").get<std::string>();
    }
    json doc = default_config_json();
    merge_config(doc, profile_overlay(profile));
    if (!file_doc.is_null()) merge_config(doc, file_doc);
    if (!flags.is_null()) merge_config(doc, flags);
    doc["profile"] = profile;
    return run_config_from_json(doc);
}

json read_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file " + path.string() + ": " + e.what());
    }
}

}  // namespace abp
