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

#include "abp/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "abp/errors.hpp"

namespace abp {

namespace fs = std::filesystem;
using nlohmann::json;

Dataset load_train_data(const RunConfig& cfg) {
    if (cfg.data.format == "synthetic") {
        SyntheticSpec s = cfg.data.synthetic;
        s.split = 0;
        return synthetic_generate(s);
    }
    CifarOptions o;
    o.num_classes = cfg.num_classes();
    o.label_bytes = cfg.data.format == "cifar100" ? 2 : 1;
    o.compute_normalization = cfg.data.normalize_from_data;
    return load_cifar_binary(cfg.data.train_path, o);
}

Dataset load_test_data(const RunConfig& cfg, const Dataset& train) {
    Dataset test;
    if (cfg.data.format == "synthetic") {
        SyntheticSpec s = cfg.data.synthetic;
        s.split = 1;
        s.samples_per_class = cfg.data.synthetic_test_per_class;
        test = synthetic_generate(s);
    } else if (!cfg.data.test_path.empty()) {
        CifarOptions o;
        o.num_classes = cfg.num_classes();
        o.label_bytes = cfg.data.format == "cifar100" ? 2 : 1;
        test = load_cifar_binary(cfg.data.test_path, o);
    } else {
        test.num_classes = train.num_classes;
        test.image_size = train.image_size;
    }
    test.norm = train.norm;
    return test;
}

RunLock::RunLock(const fs::path& dir) : path_(dir / "lock") {
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (f == nullptr) {
        throw Error("run directory " + dir.string() + " is locked by another run (" +
                    path_.string() + ")");
    }
    std::fclose(f);
}

RunLock::~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

std::string ckpt_name(int stage, int iteration) {
    return "stage" + std::to_string(stage) + "-iter" + std::to_string(iteration) + ".ckpt";
}

}  // namespace

RunOutcome run_training(const RunConfig& cfg, const RunOptions& opts) {
    cfg.validate();
    const Dataset train = load_train_data(cfg);
    const Dataset test = load_test_data(cfg, train);
    if (train.empty()) throw ConfigError("training set is empty");
    if (train.image_size != cfg.image_size()) {
        throw ConfigError("dataset image size does not match the configuration");
    }

    RunOutcome out;
    out.dir = fs::path(cfg.output_dir) / ("run-" + cfg.resolved_run_id());
    fs::create_directories(out.dir);
    RunLock lock(out.dir);
    write_text(out.dir / "config.json", to_json(cfg).dump(2) + "\n");

    std::ofstream metrics(out.dir / "metrics.log", opts.resume ? std::ios::app : std::ios::trunc);
    auto log = [&](const std::string& line) {
        if (opts.log != nullptr) *opts.log << line << '\n';
    };

    int stage_done = 0;
    int iterations_done = 0;
    std::vector<std::vector<int>> history;
    ModelState model{GatedNetwork(arch_spec(cfg.arch, cfg.num_classes(), cfg.image_size()),
                                  cfg.gate, cfg.train.seed),
                     GateMask(), 0};
    model.mask = GateMask::initial(model.net.spec());
    const NetworkSpec spec = model.net.spec();

    if (opts.resume) {
        Checkpoint ck = load_checkpoint(*opts.resume);
        if (is_compact_checkpoint(ck.meta)) throw ConfigError("cannot resume from a compact model");
        model.net = std::move(ck.net);
        model.mask = std::move(ck.mask);
        model.epochs_done = ck.meta.at("epochs_done").get<int>();
        stage_done = ck.meta.at("stage").get<int>();
        iterations_done = ck.meta.at("iteration").get<int>();
        history = ck.meta.value("pruned_per_iteration", std::vector<std::vector<int>>{});
        log("resumed from " + opts.resume->string() + " (stage " + std::to_string(stage_done) +
            ", iteration " + std::to_string(iterations_done) + ")");
    }

    StageHooks hooks;
    hooks.on_epoch = [&](const EpochMetrics& m) {
        const std::string line = m.to_log_line();
        metrics << line << '\n';
        metrics.flush();
        log(line);
    };
    hooks.on_checkpoint = [&](const ModelState& s, int stage, int iteration) {
        json meta = {{"stage", stage},
                     {"iteration", iteration},
                     {"epochs_done", s.epochs_done},
                     {"seed", cfg.train.seed},
                     {"config", to_json(cfg)}};
        if (stage == 2) history.push_back(s.mask.pruned());
        meta["pruned_per_iteration"] = history;
        save_checkpoint(out.dir / ckpt_name(stage, iteration), s.net, s.mask, meta);
    };
    hooks.on_marks = [&](const MarkLedger& ledger, const GateMask& mask, int iteration) {
        write_text(out.dir / ("marks-iter" + std::to_string(iteration) + ".txt"),
                   format_mark_dump(spec, mask, ledger, iteration));
    };
    hooks.on_warning = [&](const std::string& w) {
        metrics << "warning: " << w << '\n';
        log("warning: " + w);
    };

    if (stage_done < 1) model = run_stage1(std::move(model), train, cfg.train, hooks);
    if (stage_done < 3) {
        StageTwoResult r = run_stage2(std::move(model), train, cfg.train, hooks, iterations_done);
        model = std::move(r.model);
        out.pruned_per_iteration = history;
        model = run_stage3(std::move(model), train, cfg.train, hooks);
    }
    out.pruned_per_iteration = history;

    out.compact = export_compact(model.net, model.mask);
    out.report = make_report(out.compact.baseline, out.compact.spec(), "abp");
    save_compact(out.dir / "compact.ckpt", out.compact,
                 {{"seed", cfg.train.seed},
                  {"epochs_done", model.epochs_done},
                  {"config", to_json(cfg)}});

    std::string text = out.report.to_text();
    std::string csv = CompressionReport::csv_header() + "\n" + out.report.to_csv_row() + "\n";

    const GatedNetwork* eval_net = &out.compact.net;
    const GateMask* eval_mask = &out.compact.mask;
    if (cfg.sfp.rate > 0.0) {
        int epochs = model.epochs_done;
        CompactModel tuned = sfp_finetune(out.compact, train, cfg.sfp, cfg.train, epochs, hooks);
        out.sfp = sfp_finalize(tuned, cfg.sfp);
        for (const auto& w : out.sfp->warnings) hooks.on_warning(w);
        save_compact(out.dir / "sfp.ckpt", out.sfp->model,
                     {{"seed", cfg.train.seed}, {"sfp_rate", cfg.sfp.rate}, {"config", to_json(cfg)}});
        text += "\n" + out.sfp->report.to_text() + "\n" + out.sfp->nominal_report.to_text();
        csv += out.sfp->report.to_csv_row() + "\n" + out.sfp->nominal_report.to_csv_row() + "\n";
        eval_net = &out.sfp->model.net;
        eval_mask = &out.sfp->model.mask;
    }

    out.train_accuracy = evaluate(*eval_net, *eval_mask, train);
    out.test_accuracy =
        test.empty() ? std::numeric_limits<double>::quiet_NaN() : evaluate(*eval_net, *eval_mask, test);
    char acc[128];
    std::snprintf(acc, sizeof acc, "train_accuracy = %.4f\ntest_accuracy = %.4f\n",
                  out.train_accuracy, out.test_accuracy);
    text += acc;
    write_text(out.dir / "report.txt", text);
    write_text(out.dir / "report.csv", csv);
    log("report written to " + (out.dir / "report.txt").string());

    out.final_net = std::move(model.net);
    out.final_mask = std::move(model.mask);
    return out;
}

CompressionReport report_for_checkpoint(const Checkpoint& ck) {
    if (is_compact_checkpoint(ck.meta)) {
        const NetworkSpec baseline = network_spec_from_json(ck.meta.at("baseline_spec"));
        const std::string method = ck.meta.contains("sfp_rate") ? "abp-sfp" : "abp";
        return make_report(baseline, ck.net.spec(), method);
    }
    return make_report(ck.net.spec(), restrict_spec(ck.net.spec(), ck.mask.surviving()), "abp");
}

std::string block_table(const Checkpoint& ck) {
    std::ostringstream s;
    const bool compact = is_compact_checkpoint(ck.meta);
    std::vector<int> provenance;
    if (compact) provenance = ck.meta.at("provenance").get<std::vector<int>>();
    s << (compact ? "# block origin stage in out mid\n" : "# block stage in out mid state\n");
    for (const auto& b : ck.net.spec().blocks) {
        s << b.index << ' ';
        if (compact) s << provenance.at(b.index) << ' ';
        s << b.stage << ' ' << b.in_shape.to_string() << ' ' << b.out_shape.to_string() << ' '
          << b.mid_channels;
        if (!compact) {
            s << ' ' << to_string(ck.mask.state(b.index))
              << (ck.mask.is_exempt(b.index) ? "(exempt)" : "");
        }
        s << '\n';
    }
    return s.str();
}

}  // namespace abp
