#include "fsprompt/trainer.hpp"

#include "fsprompt/autodiff.hpp"
#include "fsprompt/error.hpp"
#include "fsprompt/pretrain.hpp"
#include "fsprompt/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace fsprompt {

const char* to_string(Method method) {
    switch (method) {
    case Method::LPT: return "LPT";
    case Method::VPT: return "VPT";
    case Method::IVLP: return "IVLP";
    case Method::RESTORE: return "RESTORE";
    case Method::RESTORE_no_surgery: return "RESTORE_no_surgery";
    case Method::fixed_alpha: return "fixed_alpha";
    }
    return "?";
}

Method parse_method(const std::string& text) {
    for (Method m : {Method::LPT, Method::VPT, Method::IVLP, Method::RESTORE, Method::RESTORE_no_surgery,
                     Method::fixed_alpha})
        if (text == to_string(m)) return m;
    throw ConfigError("unknown mode '" + text + "'");
}

PromptMode prompt_mode_for(Method method) {
    switch (method) {
    case Method::LPT: return PromptMode::LPT;
    case Method::VPT: return PromptMode::VPT;
    default: return PromptMode::IVLP;
    }
}

SurgeryMode surgery_mode_for(Method method) {
    switch (method) {
    case Method::RESTORE: return SurgeryMode::dynamic;
    case Method::fixed_alpha: return SurgeryMode::fixed;
    default: return SurgeryMode::none;
    }
}

bool uses_fs_loss(Method method) {
    return method == Method::RESTORE || method == Method::RESTORE_no_surgery || method == Method::fixed_alpha;
}

void TrainConfig::validate() const {
    if (lambda_fs < 0.0) throw ConfigError("lambda_fs must be >= 0");
    if (lr < 0.0) throw ConfigError("lr must be >= 0");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (shots == 0) throw ConfigError("shots must be positive");
    if (gamma < 0.0 || beta < 0.0) throw ConfigError("gamma and beta must be >= 0");
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    if (fixed_alpha < 0.0) throw ConfigError("fixed_alpha must be >= 0");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
}

PredictOptions TrainConfig::predict_options() const {
    PredictOptions o;
    o.surgery = surgery_mode_for(mode);
    o.fixed_alpha = fixed_alpha;
    o.alpha_grad = alpha_grad;
    o.use_tau = use_tau;
    o.tau = tau;
    o.record_shifts = true;
    o.shift.rms = rms_norm;
    o.shift.stop_clean_grad = stop_clean_grad;
    return o;
}

double StepTelemetry::discrepancy() const {
    if (vision_norms.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t l = 0; l < vision_norms.size(); ++l) total += std::abs(vision_norms[l] - text_norms[l]);
    return total / static_cast<double>(vision_norms.size());
}

namespace {

Tensor one_hot(std::span<const std::size_t> labels, std::size_t classes) {
    std::vector<double> data(labels.size() * classes, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= classes) throw ConfigError("label outside class range");
        data[i * classes + labels[i]] = 1.0;
    }
    return Tensor({labels.size(), classes}, std::move(data));
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::vector<std::size_t> relabel(std::span<const std::size_t> labels, std::span<const std::size_t> class_ids) {
    std::vector<std::size_t> out;
    out.reserve(labels.size());
    for (std::size_t y : labels) {
        const auto it = std::find(class_ids.begin(), class_ids.end(), y);
        if (it == class_ids.end()) throw ConfigError("sample label not among the candidate classes");
        out.push_back(static_cast<std::size_t>(it - class_ids.begin()));
    }
    return out;
}

std::string dump_record(const StepTelemetry& t) {
    std::ostringstream os;
    os << "step " << t.step << " ce=" << t.ce << " fs=" << t.fs << " vision_norms=[";
    for (double v : t.vision_norms) os << ' ' << v;
    os << " ] text_norms=[";
    for (double v : t.text_norms) os << ' ' << v;
    os << " ]";
    return os.str();
}

}  // namespace

StepLoss compute_step_loss(std::span<const Tensor> images, std::span<const std::size_t> labels,
                           std::span<const std::size_t> class_ids, const PromptSet& prompts,
                           const SurgeryParams& surgery, const BackboneWeights& weights, const TrainConfig& cfg) {
    StepLoss out;
    out.prediction = tuned_predict(images, class_ids, prompts, surgery, weights, cfg.predict_options());
    out.ce = soft_cross_entropy(out.prediction.logits, one_hot(labels, class_ids.size()));
    out.total = out.ce;
    if (uses_fs_loss(cfg.mode) && cfg.lambda_fs > 0.0) {
        out.fs = fs_total_loss(out.prediction.shifts);
        out.total = ops::add(out.ce, ops::scale(out.fs, cfg.lambda_fs));
    }
    return out;
}

TuneResult initial_state(const TrainConfig& cfg, const EncoderConfig& encoder) {
    cfg.validate();
    TuneResult r;
    r.prompts = init_prompts(cfg.a, cfg.b, prompt_mode_for(cfg.mode), encoder, cfg.seed);
    const std::size_t hidden = cfg.surgery_hidden == 0 ? 4 * encoder.embed_dim : cfg.surgery_hidden;
    r.surgery = SurgeryParams::initialize(encoder.embed_dim, hidden, cfg.seed);
    r.surgery.gamma = cfg.gamma;
    r.surgery.beta = cfg.beta;
    return r;
}

TuneResult tune(const FewShotTask& task, const BackboneWeights& weights, const TrainConfig& cfg, std::size_t max_steps) {
    TuneResult state = initial_state(cfg, weights.config());
    tune_from(state, task, weights, cfg, max_steps);
    return state;
}

void tune_from(TuneResult& state, const FewShotTask& task, const BackboneWeights& weights, const TrainConfig& cfg,
               std::size_t max_steps) {
    cfg.validate();
    if (!weights.frozen()) throw ConfigError("tune requires frozen backbone weights");
    if (!uses_fs_loss(cfg.mode) && cfg.lambda_fs > 0.0 &&
        (cfg.mode == Method::LPT || cfg.mode == Method::VPT))
        state.warnings.push_back(std::string("fs loss skipped: mode ") + to_string(cfg.mode) +
                                 " prompts a single modality");

    const auto base = task.base_classes();
    const std::vector<std::size_t> class_ids(base.begin(), base.end());
    const LabeledImages& support = task.support();
    const std::vector<std::size_t> labels = relabel(support.labels, class_ids);

    std::vector<Tensor> params = state.prompts.parameters();
    const SurgeryMode surgery_mode = surgery_mode_for(cfg.mode);
    if (surgery_mode != SurgeryMode::none)
        for (auto& p : state.surgery.parameters()) params.push_back(p);
    SgdMomentum opt(cfg.lr, cfg.momentum);

    Rng order_rng(cfg.seed, 0x6f726472);
    std::vector<std::size_t> order(support.images.size());
    std::iota(order.begin(), order.end(), 0);

    std::size_t step = state.telemetry.empty() ? 0 : state.telemetry.back().step + 1;
    std::size_t done = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        order_rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            if (max_steps != 0 && done >= max_steps) return;
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            std::vector<Tensor> images;
            std::vector<std::size_t> batch_labels;
            for (std::size_t i = start; i < stop; ++i) {
                images.push_back(support.images[order[i]]);
                batch_labels.push_back(labels[order[i]]);
            }

            Graph graph;
            GraphScope scope(graph);
            StepLoss loss = compute_step_loss(images, batch_labels, class_ids, state.prompts, state.surgery, weights, cfg);

            StepTelemetry t;
            t.step = step;
            t.epoch = epoch;
            t.ce = loss.ce.item();
            t.fs = loss.fs.numel() == 1 ? loss.fs.item() : 0.0;
            t.total = loss.total.item();
            const std::size_t layers = weights.config().layers;
            const auto& shifts = loss.prediction.shifts;
            t.vision_norms = shifts.vision.empty() ? std::vector<double>(layers, 0.0) : shifts.layer_norm_values(Tower::vision);
            t.text_norms = shifts.text.empty() ? std::vector<double>(layers, 0.0) : shifts.layer_norm_values(Tower::text);
            t.alpha_vision = mean_of(loss.prediction.alpha_vision);
            t.alpha_text = mean_of(loss.prediction.alpha_text);
            if (!std::isfinite(t.total))
                throw Error("non_finite_loss", "non-finite loss; last shift record: " + dump_record(t));
            state.telemetry.push_back(std::move(t));

            if (loss.total.requires_grad()) {
                graph.backward(loss.total);
                opt.step(params);
            }
            ++step;
            ++done;
        }
    }
}

double support_loss(const FewShotTask& task, const TuneResult& state, const BackboneWeights& weights,
                    const TrainConfig& cfg) {
    const auto base = task.base_classes();
    const std::vector<std::size_t> class_ids(base.begin(), base.end());
    const LabeledImages& support = task.support();
    const auto labels = relabel(support.labels, class_ids);
    const StepLoss loss = compute_step_loss(support.images, labels, class_ids, state.prompts, state.surgery, weights, cfg);
    return loss.ce.item();
}

double harmonic_mean(double base, double novel) {
    if (base + novel <= 0.0) return 0.0;
    return 2.0 * base * novel / (base + novel);
}

namespace {

struct SplitScore {
    std::size_t correct = 0;
    std::size_t total = 0;
    std::map<std::size_t, std::pair<std::size_t, std::size_t>> per_class;  // class -> (correct, total)
    std::vector<double> vision_norms;
    std::vector<double> text_norms;
};

void score_split(const LabeledImages& data, std::span<const std::size_t> class_ids, const std::string& split_name,
                 const TuneResult& tuned, const BackboneWeights& weights, const TrainConfig& cfg,
                 const EvalOptions& options, SplitScore& score, Embeddings* embeddings) {
    if (data.images.empty()) throw ConfigError("evaluate: empty " + split_name + " test set");
    const PredictOptions popts = cfg.predict_options();
    const std::size_t chunk = std::max<std::size_t>(1, options.chunk);
    for (std::size_t start = 0; start < data.images.size(); start += chunk) {
        const std::size_t stop = std::min(data.images.size(), start + chunk);
        std::span<const Tensor> images(data.images.data() + start, stop - start);
        const Prediction pred = tuned_predict(images, class_ids, tuned.prompts, tuned.surgery, weights, popts);
        const std::size_t k = class_ids.size();
        const auto logits = pred.logits.data();
        for (std::size_t i = 0; i < images.size(); ++i) {
            const auto row = logits.subspan(i * k, k);
            const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
            const std::size_t truth = data.labels[start + i];
            const bool hit = class_ids[best] == truth;
            score.correct += hit ? 1 : 0;
            ++score.total;
            auto& pc = score.per_class[truth];
            pc.first += hit ? 1 : 0;
            ++pc.second;
            if (embeddings) {
                const auto f = pred.image_features.data().subspan(i * pred.image_features.cols(), pred.image_features.cols());
                embeddings->rows.push_back({"image", split_name, truth, std::vector<double>(f.begin(), f.end())});
            }
        }
        for (const auto& s : pred.shifts.vision)
            for (double v : s.norm_values()) score.vision_norms.push_back(v);
        for (const auto& s : pred.shifts.text)
            for (double v : s.norm_values()) score.text_norms.push_back(v);
        if (embeddings && start == 0) {
            const std::size_t d = pred.class_features.cols();
            for (std::size_t c = 0; c < class_ids.size(); ++c) {
                const auto f = pred.class_features.data().subspan(c * d, d);
                embeddings->rows.push_back({"class", split_name, class_ids[c], std::vector<double>(f.begin(), f.end())});
            }
        }
    }
}

}  // namespace

EvalReport evaluate(const FewShotTask& task, const TuneResult& tuned, const BackboneWeights& weights,
                    const TrainConfig& cfg, const EvalOptions& options) {
    const auto base_span = task.base_classes();
    const auto novel_span = task.novel_classes();
    std::vector<std::size_t> base(base_span.begin(), base_span.end());
    std::vector<std::size_t> novel(novel_span.begin(), novel_span.end());
    if (options.all_classes) {
        std::vector<std::size_t> all(base);
        all.insert(all.end(), novel.begin(), novel.end());
        std::sort(all.begin(), all.end());
        base = all;
        novel = all;
    }

    EvalReport report;
    Embeddings* emb = options.embeddings ? &report.embeddings : nullptr;
    SplitScore base_score, novel_score;
    score_split(task.base_test(), base, "base", tuned, weights, cfg, options, base_score, emb);
    score_split(task.novel_test(), novel, "novel", tuned, weights, cfg, options, novel_score, emb);

    report.base_acc = 100.0 * static_cast<double>(base_score.correct) / static_cast<double>(base_score.total);
    report.novel_acc = 100.0 * static_cast<double>(novel_score.correct) / static_cast<double>(novel_score.total);
    report.hm = harmonic_mean(report.base_acc, report.novel_acc);
    for (const auto* s : {&base_score, &novel_score})
        for (const auto& [cls, ct] : s->per_class)
            report.per_class_acc[cls] = 100.0 * static_cast<double>(ct.first) / static_cast<double>(ct.second);

    std::vector<double> vn = base_score.vision_norms, tn = base_score.text_norms;
    vn.insert(vn.end(), novel_score.vision_norms.begin(), novel_score.vision_norms.end());
    tn.insert(tn.end(), novel_score.text_norms.begin(), novel_score.text_norms.end());
    report.mean_vision_shift = mean_of(vn);
    report.mean_text_shift = mean_of(tn);
    report.final_fs_loss = tuned.telemetry.empty() ? 0.0 : tuned.telemetry.back().fs;
    return report;
}

}  // namespace fsprompt
