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

#ifndef ABP_CONFIG_HPP
#define ABP_CONFIG_HPP

#include <filesystem>
#include <string>

#include "json.hpp"

#include "abp/data.hpp"
#include "abp/gates.hpp"
#include "abp/schedule.hpp"
#include "abp/sfp.hpp"

namespace abp {

struct DataConfig {
    /// "synthetic", "cifar10" or "cifar100".
    std::string format = "synthetic";
    std::string train_path;
    std::string test_path;
    SyntheticSpec synthetic;
    int synthetic_test_per_class = 32;
    bool normalize_from_data = false;
};

/// Everything a training run needs. Built from a JSON document whose keys
/// must all be known.
struct RunConfig {
    std::string arch = "micro";
    GateKind gate = GateKind::Conv;
    std::string profile = "desk";
    TrainConfig train = TrainConfig::desk_profile();
    SfpConfig sfp;  // rate 0 disables
    DataConfig data;
    std::string output_dir = "runs";
    std::string run_id;  // empty: derived from arch and seed

    int num_classes() const;
    int image_size() const;
    std::string resolved_run_id() const;
    void validate() const;
};

/// Full default document (desk profile).
nlohmann::json default_config_json();
/// Keys a named profile overrides. Throws ConfigError on unknown names.
nlohmann::json profile_overlay(const std::string& name);

/// Recursively overlays `patch` onto `base`. A key absent from `base`
/// raises ConfigError naming its dotted path.
void merge_config(nlohmann::json& base, const nlohmann::json& patch);

RunConfig run_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const RunConfig& cfg);

/// defaults, then the profile, then the file, then `flags`. The profile is
/// taken from flags, else the file, else "desk".
RunConfig resolve_config(const nlohmann::json& file_doc, const nlohmann::json& flags);
nlohmann::json read_config_file(const std::filesystem::path& path);

}  // namespace abp

#endif  // ABP_CONFIG_HPP
