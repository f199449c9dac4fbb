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

// abp: train, report, eval, export, flops.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "abp/checkpoint.hpp"
#include "abp/compact.hpp"
#include "abp/config.hpp"
#include "abp/errors.hpp"
#include "abp/pipeline.hpp"

namespace {

using nlohmann::json;

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct TrainFlags {
    std::string config;
    std::optional<std::string> profile, arch, gate, data_format, train_data, test_data, out,
        run_id;
    std::optional<double> gamma, tau, lambda, lr, sfp_rate;
    std::optional<int> k, batch_size, e1, e2, e3, sfp_epochs;
    std::optional<std::uint64_t> seed;
    std::string resume;
    bool csv = false;
    bool quiet = false;
};

json flags_json(const TrainFlags& f) {
    json j = json::object();
    auto put = [](json& dst, const char* key, const auto& opt) {
        if (opt) dst[key] = *opt;
    };
    put(j, "profile", f.profile);
    put(j, "arch", f.arch);
    put(j, "gate", f.gate);
    put(j, "output_dir", f.out);
    put(j, "run_id", f.run_id);
    json t = json::object();
    put(t, "gamma", f.gamma);
    put(t, "k", f.k);
    put(t, "tau", f.tau);
    put(t, "lambda", f.lambda);
    put(t, "lr", f.lr);
    put(t, "batch_size", f.batch_size);
    put(t, "seed", f.seed);
    put(t, "epochs_stage1", f.e1);
    put(t, "epochs_stage2", f.e2);
    put(t, "epochs_stage3", f.e3);
    if (!t.empty()) j["train"] = t;
    json s = json::object();
    put(s, "rate", f.sfp_rate);
    put(s, "epochs", f.sfp_epochs);
    if (!s.empty()) j["sfp"] = s;
    json d = json::object();
    put(d, "format", f.data_format);
    put(d, "train", f.train_data);
    put(d, "test", f.test_data);
    if (!d.empty()) j["data"] = d;
    return j;
}

int cmd_train(const TrainFlags& f) {
    abp::RunOptions opts;
    if (!f.quiet) opts.log = &std::cerr;
    abp::RunConfig cfg;
    if (!f.resume.empty()) {
        // the checkpoint carries the configuration of its run
        const abp::Checkpoint ck = abp::load_checkpoint(f.resume);
        if (!ck.meta.contains("config")) throw abp::ConfigError("checkpoint has no run config");
        cfg = abp::run_config_from_json(ck.meta.at("config"));
        opts.resume = f.resume;
    } else {
        json file = f.config.empty() ? json(nullptr) : abp::read_config_file(f.config);
        if (const char* env = std::getenv("ABP_SEED")) {
            char* end = nullptr;
            const unsigned long long seed = std::strtoull(env, &end, 10);
            if (end == env || *end != '\0') throw abp::ConfigError("ABP_SEED must be an integer");
            if (file.is_null()) file = json::object();
            file["train"]["seed"] = seed;
        }
        cfg = abp::resolve_config(file, flags_json(f));
    }
    const abp::RunOutcome out = abp::run_training(cfg, opts);
    if (f.csv) {
        std::cout << abp::CompressionReport::csv_header() << '\n' << out.report.to_csv_row() << '\n';
        if (out.sfp) {
            std::cout << out.sfp->report.to_csv_row() << '\n'
                      << out.sfp->nominal_report.to_csv_row() << '\n';
        }
    } else {
        std::ifstream report(out.dir / "report.txt");
        std::cout << "run_dir = " << out.dir.string() << '\n' << report.rdbuf();
    }
    return 0;
}

int cmd_report(const std::string& path, bool csv) {
    const abp::Checkpoint ck = abp::load_checkpoint(path);
    const abp::CompressionReport r = abp::report_for_checkpoint(ck);
    if (csv) {
        std::cout << abp::CompressionReport::csv_header() << '\n' << r.to_csv_row() << '\n';
    } else {
        std::cout << r.to_text() << '\n' << abp::block_table(ck);
    }
    return 0;
}

int cmd_eval(const std::string& path, const std::string& config, const std::string& format,
             const std::string& data, const std::string& split) {
    const abp::Checkpoint ck = abp::load_checkpoint(path);
    json doc = config.empty() ? json::object() : abp::read_config_file(config);
    if (config.empty() && ck.meta.contains("config")) doc = ck.meta.at("config");
    if (!format.empty()) doc["data"]["format"] = format;
    if (!data.empty()) doc["data"][split == "test" ? "test" : "train"] = data;
    if (split == "test" && !data.empty() && doc["data"].value("train", std::string()).empty()) {
        doc["data"]["train"] = data;
    }
    const abp::RunConfig cfg = abp::resolve_config(doc, nullptr);
    const abp::Dataset train = abp::load_train_data(cfg);
    const abp::Dataset set = split == "test" ? abp::load_test_data(cfg, train) : train;
    if (set.num_classes != ck.net.spec().num_classes) {
        throw abp::ConfigError("dataset has " + std::to_string(set.num_classes) +
                               " classes, model has " +
                               std::to_string(ck.net.spec().num_classes));
    }
    std::cout << "accuracy = " << abp::evaluate(ck.net, ck.mask, set) << '\n';
    return 0;
}

int cmd_export(const std::string& in, const std::string& out) {
    abp::Checkpoint ck = abp::load_checkpoint(in);
    if (abp::is_compact_checkpoint(ck.meta)) throw abp::ConfigError(in + " is already compact");
    const abp::CompactModel model = abp::export_compact(ck.net, ck.mask);
    json meta = json::object();
    for (const char* key : {"seed", "config"}) {
        if (ck.meta.contains(key)) meta[key] = ck.meta[key];
    }
    abp::save_compact(out, model, meta);
    std::cout << abp::make_report(model.baseline, model.spec()).to_text();
    return 0;
}

int cmd_flops(const std::string& arch, int classes, int image, const std::vector<int>& prune,
              bool csv) {
    const abp::NetworkSpec spec = abp::arch_spec(arch, classes, image);
    const abp::GateMask initial = abp::GateMask::initial(spec);
    std::vector<int> keep;
    for (int b = 0; b < spec.num_blocks(); ++b) {
        if (std::find(prune.begin(), prune.end(), b) != prune.end()) {
            if (initial.is_exempt(b)) {
                throw abp::ConfigError("block " + std::to_string(b) + " is a downsampling block");
            }
            continue;
        }
        keep.push_back(b);
    }
    const auto r = abp::make_report(spec, abp::restrict_spec(spec, keep));
    if (csv) {
        std::cout << abp::CompressionReport::csv_header() << '\n' << r.to_csv_row() << '\n';
    } else {
        std::cout << r.to_text();
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Automatic block-wise pruning toolkit"};
    app.require_subcommand(1);

    TrainFlags tf;
    auto* train = app.add_subcommand("train", "run stages I-III, export and optional SFP");
    train->add_option("--config", tf.config, "JSON config file");
    train->add_option("--profile", tf.profile, "desk or paper");
    train->add_option("--arch", tf.arch, "micro, rn20, rn32, rn56 or rn110");
    train->add_option("--gate", tf.gate, "conv or recur");
    train->add_option("--gamma", tf.gamma, "fraction of blocks to prune");
    train->add_option("--k", tf.k, "blocks pruned per iteration");
    train->add_option("--tau", tf.tau, "distillation temperature");
    train->add_option("--lambda", tf.lambda, "distillation weight (default tau^2)");
    train->add_option("--lr", tf.lr, "initial learning rate");
    train->add_option("--batch-size", tf.batch_size);
    train->add_option("--seed", tf.seed);
    train->add_option("--epochs-stage1", tf.e1);
    train->add_option("--epochs-stage2", tf.e2, "epochs per pruning iteration");
    train->add_option("--epochs-stage3", tf.e3);
    train->add_option("--sfp-rate", tf.sfp_rate, "filter fraction for soft filter pruning");
    train->add_option("--sfp-epochs", tf.sfp_epochs);
    train->add_option("--data-format", tf.data_format, "synthetic, cifar10 or cifar100");
    train->add_option("--train-data", tf.train_data, "CIFAR binary training file");
    train->add_option("--test-data", tf.test_data, "CIFAR binary test file");
    train->add_option("--out", tf.out, "output directory");
    train->add_option("--run-id", tf.run_id);
    train->add_option("--resume", tf.resume, "checkpoint to continue from");
    train->add_flag("--csv", tf.csv, "print the report as CSV");
    train->add_flag("--quiet", tf.quiet, "no progress log");

    std::string report_path;
    bool report_csv = false;
    auto* report = app.add_subcommand("report", "cost report of a checkpoint");
    report->add_option("checkpoint", report_path)->required();
    report->add_flag("--csv", report_csv);

    std::string eval_path, eval_config, eval_format, eval_data, eval_split = "test";
    auto* eval = app.add_subcommand("eval", "top-1 accuracy of a checkpoint");
    eval->add_option("checkpoint", eval_path)->required();
    eval->add_option("--config", eval_config, "config describing the dataset");
    eval->add_option("--data-format", eval_format);
    eval->add_option("--data", eval_data, "CIFAR binary file");
    eval->add_option("--split", eval_split)->check(CLI::IsMember({"train", "test"}));

    std::string export_in, export_out;
    auto* exp = app.add_subcommand("export", "compact model from a fixed checkpoint");
    exp->add_option("checkpoint", export_in)->required();
    exp->add_option("-o,--output", export_out)->required();

    std::string flops_arch = "rn32";
    int flops_classes = 10;
    int flops_image = 32;
    std::vector<int> flops_prune;
    bool flops_csv = false;
    auto* flops = app.add_subcommand("flops", "cost of an architecture with blocks removed");
    flops->add_option("--arch", flops_arch);
    flops->add_option("--classes", flops_classes);
    flops->add_option("--image-size", flops_image);
    flops->add_option("--prune", flops_prune, "block indices to remove")->delimiter(',');
    flops->add_flag("--csv", flops_csv);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (*train) return cmd_train(tf);
        if (*report) return cmd_report(report_path, report_csv);
        if (*eval) return cmd_eval(eval_path, eval_config, eval_format, eval_data, eval_split);
        if (*exp) return cmd_export(export_in, export_out);
        if (*flops) return cmd_flops(flops_arch, flops_classes, flops_image, flops_prune, flops_csv);
    } catch (const abp::ConfigError& e) {
        std::cerr << "abp: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "abp: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitUsage;
}
