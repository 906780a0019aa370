// fsprompt: pretrain a toy dual encoder, tune prompts on a base-to-novel
// task, evaluate, and run the ablation / shift sweeps.
#include "fsprompt/ablation.hpp"
#include "fsprompt/checkpoint.hpp"
#include "fsprompt/dataset.hpp"
#include "fsprompt/error.hpp"
#include "fsprompt/pretrain.hpp"
#include "fsprompt/run_config.hpp"
#include "fsprompt/trainer.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using namespace fsprompt;

namespace {

struct Globals {
    std::string config_path;
    std::string out_dir;
    std::map<std::string, std::string> overrides;  // flag values, by config key
};

void emit_error(const std::string& code, const std::string& message) {
    nlohmann::json j;
    j["error"] = code;
    j["message"] = message;
    std::cerr << j.dump() << std::endl;
}

fs::path output_dir(const Globals& g) {
    fs::path out = "fsprompt_out";
    if (const char* env = std::getenv("FSPROMPT_OUT_DIR"); env && *env) out = env;
    if (!g.out_dir.empty()) out = g.out_dir;
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw IoError("cannot create output directory " + out.string() + ": " + ec.message());
    return out;
}

RunConfig resolve_config(const Globals& g) {
    RunConfig cfg = g.config_path.empty() ? RunConfig{} : RunConfig::load(g.config_path);
    for (const auto& [k, v] : g.overrides) cfg.set(k, v);
    cfg.validate();
    return cfg;
}

template <typename T>
std::vector<T> parse_list(const std::string& text, T (*conv)(const std::string&)) {
    std::vector<T> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(conv(item));
    if (out.empty()) throw ConfigError("empty list '" + text + "'");
    return out;
}

double to_double(const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || used == 0) throw ConfigError("expected a number, got '" + s + "'");
    return v;
}

std::uint64_t to_seed(const std::string& s) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
        throw ConfigError("expected a seed, got '" + s + "'");
    return std::stoull(s);
}

Method to_method(const std::string& s) { return parse_method(s); }

BackboneWeights load_or_fail(const fs::path& path) {
    if (!fs::exists(path)) throw IoError("backbone checkpoint " + path.string() + " not found; run 'pretrain' first");
    return load_backbone(Checkpoint::load(path));
}

// The downstream corpus is sized from the backbone so a config cannot drift
// from the checkpoint it is paired with.
SyntheticCorpus downstream(const RunConfig& cfg, const BackboneWeights& w) {
    if (cfg.data.classes != w.config().classes)
        throw ConfigError("config has " + std::to_string(cfg.data.classes) + " classes, backbone was pretrained with " +
                          std::to_string(w.config().classes));
    return generate_dataset(cfg.data, w.config());
}

void report_warnings(const TuneResult& r) {
    for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
}

int cmd_pretrain(const Globals& g) {
    const RunConfig cfg = resolve_config(g);
    const fs::path out = output_dir(g);
    const SyntheticCorpus corpus = generate_dataset(cfg.pretrain_data, cfg.encoder);
    const PretrainResult r = pretrain_contrastive(corpus.samples, cfg.encoder, cfg.pretrain, cfg.pretrain.init_seed);
    Checkpoint ckpt;
    store_backbone(ckpt, r.weights);
    ckpt.save(out / "backbone.ckpt");
    cfg.save(out / "config.txt");
    {
        std::ofstream f(out / "pretrain_loss.csv", std::ios::trunc);
        if (!f) throw IoError("cannot write pretrain_loss.csv");
        f << "step,loss\n";
        char buf[64];
        for (std::size_t i = 0; i < r.loss_history.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, r.loss_history[i]);
            f << buf;
        }
    }
    std::vector<std::size_t> ids(cfg.encoder.classes);
    for (std::size_t c = 0; c < ids.size(); ++c) ids[c] = c;
    const double zs = zero_shot_accuracy(corpus.samples, ids, r.weights);
    std::printf("pretrained %zu steps, final loss %.4f, zero-shot accuracy %.2f%% -> %s\n", r.loss_history.size(),
                r.loss_history.back(), 100.0 * zs, (out / "backbone.ckpt").c_str());
    return 0;
}

int cmd_tune(const Globals& g, const std::string& backbone) {
    const RunConfig cfg = resolve_config(g);
    const fs::path out = output_dir(g);
    const BackboneWeights w = load_or_fail(backbone.empty() ? out / "backbone.ckpt" : fs::path(backbone));
    const SyntheticCorpus corpus = downstream(cfg, w);
    const FewShotTask task = split_base_novel(corpus, cfg.task_options(), cfg.train.seed);
    const TuneResult r = tune(task, w, cfg.train);
    report_warnings(r);

    Checkpoint ckpt;
    store_prompts(ckpt, r.prompts);
    store_surgery(ckpt, r.surgery);
    ckpt.put("tune/mode", Tensor::scalar(static_cast<double>(cfg.train.mode)));
    ckpt.put("tune/seed", Tensor::scalar(static_cast<double>(cfg.train.seed)));
    ckpt.put("tune/final_fs", Tensor::scalar(r.telemetry.back().fs));
    ckpt.save(out / "tuned.ckpt");
    write_telemetry_csv(r.telemetry, out / "telemetry.csv");
    write_manifest(corpus, task, out / "manifest.csv");
    cfg.save(out / "config.txt");
    const auto& last = r.telemetry.back();
    std::printf("tuned %s seed %llu: %zu steps, final ce %.4f fs %.4f -> %s\n", to_string(cfg.train.mode),
                static_cast<unsigned long long>(cfg.train.seed), r.telemetry.size(), last.ce, last.fs,
                (out / "tuned.ckpt").c_str());
    return 0;
}

int cmd_eval(const Globals& g, const std::string& backbone, const std::string& tuned_path, bool embeddings,
             bool all_classes) {
    RunConfig cfg = resolve_config(g);
    const fs::path out = output_dir(g);
    const BackboneWeights w = load_or_fail(backbone.empty() ? out / "backbone.ckpt" : fs::path(backbone));
    const fs::path tp = tuned_path.empty() ? out / "tuned.ckpt" : fs::path(tuned_path);
    if (!fs::exists(tp)) throw IoError("tuned checkpoint " + tp.string() + " not found; run 'tune' first");
    const Checkpoint ckpt = Checkpoint::load(tp);
    cfg.train.mode = static_cast<Method>(static_cast<int>(ckpt.get_scalar("tune/mode")));
    cfg.train.seed = static_cast<std::uint64_t>(ckpt.get_scalar("tune/seed"));

    TuneResult state;
    state.prompts = load_prompts(ckpt);
    state.surgery = load_surgery(ckpt, cfg.train.gamma, cfg.train.beta);
    const SyntheticCorpus corpus = downstream(cfg, w);
    const FewShotTask task = split_base_novel(corpus, cfg.task_options(), cfg.train.seed);
    EvalOptions opts;
    opts.embeddings = embeddings;
    opts.all_classes = all_classes;
    EvalReport report = evaluate(task, state, w, cfg.train, opts);
    report.final_fs_loss = ckpt.get_scalar("tune/final_fs");
    write_report_json(report, out / "report.json");
    if (embeddings) write_embeddings_csv(report.embeddings, out / "embeddings.csv");
    std::printf("base %.2f%%  novel %.2f%%  HM %.2f  -> %s\n", report.base_acc, report.novel_acc, report.hm,
                (out / "report.json").c_str());
    return 0;
}

int cmd_ablate(const Globals& g, const std::string& backbone, const std::string& grid, const std::string& seeds,
               const std::string& modes) {
    const RunConfig cfg = resolve_config(g);
    const fs::path out = output_dir(g);
    const BackboneWeights w = load_or_fail(backbone.empty() ? out / "backbone.ckpt" : fs::path(backbone));
    const SyntheticCorpus corpus = downstream(cfg, w);
    const auto table = run_ablation(parse_list(grid, to_double), parse_list(modes, to_method), cfg.train,
                                    parse_list(seeds, to_seed), corpus, cfg.task_options(), w);
    write_ablation_csv(table, out / "ablation.csv");
    std::printf("%-10s %-20s %14s %14s %14s\n", "lambda_fs", "mode", "base", "novel", "HM");
    for (const auto& r : table.rows)
        std::printf("%-10g %-20s %7.2f+-%-5.2f %7.2f+-%-5.2f %7.2f+-%-5.2f\n", r.lambda_fs, to_string(r.mode),
                    r.base.mean, r.base.std, r.novel.mean, r.novel.std, r.hm.mean, r.hm.std);
    return 0;
}

int cmd_report(const Globals& g, const std::string& backbone, const std::string& seeds, const std::string& modes) {
    const RunConfig cfg = resolve_config(g);
    const fs::path out = output_dir(g);
    const BackboneWeights w = load_or_fail(backbone.empty() ? out / "backbone.ckpt" : fs::path(backbone));
    const SyntheticCorpus corpus = downstream(cfg, w);
    std::vector<TrainConfig> configs;
    for (Method m : parse_list(modes, to_method))
        for (std::uint64_t s : parse_list(seeds, to_seed)) {
            TrainConfig c = cfg.train;
            c.mode = m;
            c.seed = s;
            configs.push_back(c);
        }
    EvalOptions eo;
    eo.embeddings = true;
    const auto runs = run_many(corpus, cfg.task_options(), w, configs, eo);
    const auto rows = shift_report(runs, out);
    std::printf("%-28s %12s %12s %12s %8s\n", "run", "vision_norm", "text_norm", "discrepancy", "HM");
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::printf("%-28s %12.4f %12.4f %12.4f %8.2f\n", rows[i].run.c_str(), rows[i].mean_vision(),
                    rows[i].mean_text(), rows[i].mean_discrepancy(), runs[i].report.hm);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Feature-shift-aware prompt tuning on a toy dual encoder"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config_path, "flat key = value config file")->check(CLI::ExistingFile);
    app.add_option("--out", g.out_dir, "output directory (default: $FSPROMPT_OUT_DIR or ./fsprompt_out)");

    // Every config key doubles as a flag; flags win over the config file.
    std::map<std::string, std::string> raw;
    for (const auto& key : RunConfig::keys())
        app.add_option("--" + key, raw[key], "config field " + key)->group("Config fields");

    std::string backbone, tuned_path, grid = "0,0.5,1,2", seeds = "0,1,2", modes_ablate, modes_report;
    bool embeddings = false, all_classes = false;
    for (const auto& m : ablation_modes()) modes_ablate += std::string(modes_ablate.empty() ? "" : ",") + to_string(m);
    modes_report = "IVLP,RESTORE_no_surgery,LPT,VPT";

    auto* pretrain = app.add_subcommand("pretrain", "contrastive pretraining of the backbone -> backbone.ckpt");
    auto* tune_cmd = app.add_subcommand("tune", "prompt tuning on the base classes -> tuned.ckpt, telemetry.csv");
    auto* eval = app.add_subcommand("eval", "base / novel accuracy of a tuned checkpoint -> report.json");
    auto* ablate = app.add_subcommand("ablate", "lambda_fs x surgery-mode sweep -> ablation.csv");
    auto* report = app.add_subcommand("report", "shift statistics per mode -> shift_*.csv, embeddings.csv");
    for (auto* sub : {tune_cmd, eval, ablate, report})
        sub->add_option("--backbone", backbone, "backbone checkpoint (default: <out>/backbone.ckpt)");
    eval->add_option("--tuned", tuned_path, "tuned checkpoint (default: <out>/tuned.ckpt)");
    eval->add_flag("--embeddings", embeddings, "also write embeddings.csv");
    eval->add_flag("--all-classes", all_classes, "score both test sets against all classes");
    ablate->add_option("--grid", grid, "comma-separated lambda_fs values")->capture_default_str();
    ablate->add_option("--seeds", seeds, "comma-separated seeds")->capture_default_str();
    ablate->add_option("--modes", modes_ablate, "comma-separated methods")->capture_default_str();
    report->add_option("--seeds", seeds, "comma-separated seeds")->capture_default_str();
    report->add_option("--modes", modes_report, "comma-separated methods")->capture_default_str();
    for (auto* sub : {pretrain, tune_cmd, eval, ablate, report}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        emit_error("usage", e.what());
        return 2;
    }

    try {
        for (const auto& key : RunConfig::keys())
            if (app.count("--" + key) > 0) g.overrides[key] = raw[key];
        if (pretrain->parsed()) return cmd_pretrain(g);
        if (tune_cmd->parsed()) return cmd_tune(g, backbone);
        if (eval->parsed()) return cmd_eval(g, backbone, tuned_path, embeddings, all_classes);
        if (ablate->parsed()) return cmd_ablate(g, backbone, grid, seeds, modes_ablate);
        if (report->parsed()) return cmd_report(g, backbone, seeds, modes_report);
    } catch (const Error& e) {
        emit_error(e.code(), e.what());
        return 1;
    } catch (const std::exception& e) {
        emit_error("internal", e.what());
        return 1;
    }
    return 0;
}
