#include "fsprompt/ablation.hpp"

#include "fsprompt/error.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

namespace fsprompt {

namespace {

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
    out.flush();
    if (!out) throw IoError("failed writing " + path.string());
}

double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

ExperimentResult run_experiment(const SyntheticCorpus& corpus, const TaskOptions& task, const BackboneWeights& weights,
                                const TrainConfig& cfg, const EvalOptions& eval) {
    TaskOptions opts = task;
    opts.shots = cfg.shots;
    const FewShotTask t = split_base_novel(corpus, opts, cfg.seed);
    ExperimentResult r;
    r.config = cfg;
    r.tuned = tune(t, weights, cfg);
    r.report = evaluate(t, r.tuned, weights, cfg, eval);
    return r;
}

std::vector<ExperimentResult> run_many(const SyntheticCorpus& corpus, const TaskOptions& task,
                                       const BackboneWeights& weights, const std::vector<TrainConfig>& configs,
                                       const EvalOptions& eval) {
    for (const auto& c : configs) c.validate();
    std::vector<ExperimentResult> out(configs.size());
    std::vector<std::exception_ptr> errors(configs.size());
    const auto n = static_cast<long>(configs.size());
#pragma omp parallel for schedule(dynamic, 1)
    for (long i = 0; i < n; ++i) {
        try {
            out[static_cast<std::size_t>(i)] =
                run_experiment(corpus, task, weights, configs[static_cast<std::size_t>(i)], eval);
        } catch (...) {
            errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

MeanStd mean_std(const std::vector<double>& values) {
    MeanStd r;
    if (values.empty()) return r;
    r.mean = mean(values);
    double ss = 0.0;
    for (double v : values) ss += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(values.size()));
    return r;
}

const AblationRow& AblationTable::at(double lambda_fs, Method mode) const {
    for (const auto& r : rows)
        if (r.lambda_fs == lambda_fs && r.mode == mode) return r;
    throw ConfigError("ablation table has no row for lambda_fs=" + num(lambda_fs) + " mode=" + to_string(mode));
}

std::vector<Method> ablation_modes() { return {Method::RESTORE_no_surgery, Method::fixed_alpha, Method::RESTORE}; }

AblationTable run_ablation(const std::vector<double>& grid, const std::vector<Method>& modes, const TrainConfig& cfg,
                           const std::vector<std::uint64_t>& seeds, const SyntheticCorpus& corpus,
                           const TaskOptions& task, const BackboneWeights& weights) {
    if (grid.empty()) throw ConfigError("ablation grid is empty");
    if (modes.empty() || seeds.empty()) throw ConfigError("ablation needs at least one mode and one seed");
    std::vector<TrainConfig> configs;
    for (double lambda : grid)
        for (Method m : modes)
            for (std::uint64_t s : seeds) {
                TrainConfig c = cfg;
                c.lambda_fs = lambda;
                c.mode = m;
                c.seed = s;
                configs.push_back(c);
            }
    const auto results = run_many(corpus, task, weights, configs);

    AblationTable table;
    std::size_t i = 0;
    for (double lambda : grid)
        for (Method m : modes) {
            AblationRow row;
            row.lambda_fs = lambda;
            row.mode = m;
            row.seeds = seeds.size();
            std::vector<double> base, novel, hm;
            for (std::size_t s = 0; s < seeds.size(); ++s, ++i) {
                base.push_back(results[i].report.base_acc);
                novel.push_back(results[i].report.novel_acc);
                hm.push_back(results[i].report.hm);
            }
            row.base = mean_std(base);
            row.novel = mean_std(novel);
            row.hm = mean_std(hm);
            row.hm_per_seed = hm;
            row.novel_per_seed = novel;
            table.rows.push_back(std::move(row));
        }
    return table;
}

void write_ablation_csv(const AblationTable& table, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "lambda_fs,mode,seeds,base_mean,base_std,novel_mean,novel_std,hm_mean,hm_std\n";
    for (const auto& r : table.rows)
        out << num(r.lambda_fs) << ',' << to_string(r.mode) << ',' << r.seeds << ',' << num(r.base.mean) << ','
            << num(r.base.std) << ',' << num(r.novel.mean) << ',' << num(r.novel.std) << ',' << num(r.hm.mean) << ','
            << num(r.hm.std) << '\n';
    finish(out, path);
}

namespace {

void telemetry_rows(std::ostream& out, const std::string& prefix, const std::vector<StepTelemetry>& telemetry,
                    bool with_alpha) {
    for (const auto& t : telemetry)
        for (Tower tower : {Tower::vision, Tower::text}) {
            const auto& norms = tower == Tower::vision ? t.vision_norms : t.text_norms;
            const double alpha = tower == Tower::vision ? t.alpha_vision : t.alpha_text;
            for (std::size_t l = 0; l < norms.size(); ++l) {
                out << prefix << t.step << ',' << l << ',' << to_string(tower) << ',' << num(norms[l]) << ','
                    << num(t.fs);
                if (with_alpha) out << ',' << num(alpha);
                out << '\n';
            }
        }
}

}  // namespace

void write_telemetry_csv(const std::vector<StepTelemetry>& telemetry, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "step,layer,modality,norm,fs_loss,alpha\n";
    telemetry_rows(out, "", telemetry, true);
    finish(out, path);
}

void write_report_json(const EvalReport& report, const std::filesystem::path& path) {
    nlohmann::ordered_json j;
    j["base_acc"] = report.base_acc;
    j["novel_acc"] = report.novel_acc;
    j["hm"] = report.hm;
    nlohmann::ordered_json per_class = nlohmann::ordered_json::object();
    for (const auto& [cls, acc] : report.per_class_acc) per_class[std::to_string(cls)] = acc;
    j["per_class_acc"] = per_class;
    j["mean_vision_shift"] = report.mean_vision_shift;
    j["mean_text_shift"] = report.mean_text_shift;
    j["final_fs_loss"] = report.final_fs_loss;
    auto out = open_out(path);
    out << j.dump(2) << '\n';
    finish(out, path);
}

namespace {

void embedding_rows(std::ostream& out, const std::string& prefix, const Embeddings& e) {
    for (const auto& r : e.rows) {
        out << prefix << r.kind << ',' << r.split << ',' << r.label;
        for (double v : r.values) out << ',' << num(v);
        out << '\n';
    }
}

void embedding_header(std::ostream& out, const std::string& prefix, std::size_t dims) {
    out << prefix << "kind,split,label";
    for (std::size_t i = 0; i < dims; ++i) out << ",f" << i;
    out << '\n';
}

std::size_t embedding_dims(const Embeddings& e) { return e.rows.empty() ? 0 : e.rows.front().values.size(); }

}  // namespace

void write_embeddings_csv(const Embeddings& embeddings, const std::filesystem::path& path) {
    auto out = open_out(path);
    embedding_header(out, "", embedding_dims(embeddings));
    embedding_rows(out, "", embeddings);
    finish(out, path);
}

double ShiftSummaryRow::mean_vision() const { return mean(vision); }
double ShiftSummaryRow::mean_text() const { return mean(text); }
double ShiftSummaryRow::mean_discrepancy() const { return mean(discrepancy); }

ShiftSummaryRow summarize_shifts(const ExperimentResult& run) {
    const auto& tel = run.tuned.telemetry;
    if (tel.empty()) throw ConfigError("shift summary needs a nonempty telemetry stream");
    ShiftSummaryRow row;
    row.mode = run.config.mode;
    row.seed = run.config.seed;
    row.run = std::string(to_string(row.mode)) + "/seed" + std::to_string(row.seed);
    const std::size_t layers = tel.front().vision_norms.size();
    row.vision.assign(layers, 0.0);
    row.text.assign(layers, 0.0);
    row.discrepancy.assign(layers, 0.0);
    for (const auto& t : tel)
        for (std::size_t l = 0; l < layers; ++l) {
            row.vision[l] += t.vision_norms[l];
            row.text[l] += t.text_norms[l];
            row.discrepancy[l] += std::abs(t.vision_norms[l] - t.text_norms[l]);
        }
    const auto n = static_cast<double>(tel.size());
    for (std::size_t l = 0; l < layers; ++l) {
        row.vision[l] /= n;
        row.text[l] /= n;
        row.discrepancy[l] /= n;
    }
    return row;
}

std::vector<ShiftSummaryRow> shift_report(const std::vector<ExperimentResult>& runs, const std::filesystem::path& out) {
    if (runs.empty()) throw ConfigError("shift report needs at least one run");
    std::error_code ec;
    std::filesystem::create_directories(out, ec);
    if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());

    std::vector<ShiftSummaryRow> rows;
    for (const auto& r : runs) rows.push_back(summarize_shifts(r));

    {
        const auto path = out / "shift_telemetry.csv";
        auto f = open_out(path);
        f << "run,step,layer,modality,norm,fs_loss\n";
        for (std::size_t i = 0; i < runs.size(); ++i) telemetry_rows(f, rows[i].run + ",", runs[i].tuned.telemetry, false);
        finish(f, path);
    }
    {
        const auto path = out / "shift_summary.csv";
        auto f = open_out(path);
        f << "run,mode,seed,layer,vision_norm,text_norm,discrepancy\n";
        for (const auto& r : rows) {
            const std::string prefix = r.run + ',' + to_string(r.mode) + ',' + std::to_string(r.seed) + ',';
            for (std::size_t l = 0; l < r.vision.size(); ++l)
                f << prefix << l << ',' << num(r.vision[l]) << ',' << num(r.text[l]) << ',' << num(r.discrepancy[l])
                  << '\n';
            f << prefix << "mean," << num(r.mean_vision()) << ',' << num(r.mean_text()) << ','
              << num(r.mean_discrepancy()) << '\n';
        }
        finish(f, path);
    }
    {
        const auto path = out / "shift_modes.csv";
        auto f = open_out(path);
        f << "mode,vision_norm,text_norm,discrepancy\n";
        std::vector<Method> order;
        std::map<Method, std::vector<const ShiftSummaryRow*>> by_mode;
        for (const auto& r : rows) {
            if (!by_mode.count(r.mode)) order.push_back(r.mode);
            by_mode[r.mode].push_back(&r);
        }
        for (Method m : order) {
            std::vector<double> v, t, d;
            for (const auto* r : by_mode[m]) {
                v.push_back(r->mean_vision());
                t.push_back(r->mean_text());
                d.push_back(r->mean_discrepancy());
            }
            f << to_string(m) << ',' << num(mean(v)) << ',' << num(mean(t)) << ',' << num(mean(d)) << '\n';
        }
        finish(f, path);
    }
    {
        const auto path = out / "embeddings.csv";
        auto f = open_out(path);
        std::size_t dims = 0;
        for (const auto& r : runs) dims = std::max(dims, embedding_dims(r.report.embeddings));
        embedding_header(f, "run,", dims);
        for (std::size_t i = 0; i < runs.size(); ++i) embedding_rows(f, rows[i].run + ",", runs[i].report.embeddings);
        finish(f, path);
    }
    return rows;
}

}  // namespace fsprompt
