#pragma once

#include "fsprompt/dataset.hpp"
#include "fsprompt/encoder.hpp"
#include "fsprompt/feature_shift.hpp"
#include "fsprompt/prompts.hpp"
#include "fsprompt/surgery.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace fsprompt {

// Tuning method. RESTORE = both prompts + consistency loss + shift-driven
// surgery; RESTORE_no_surgery drops the adapter; fixed_alpha uses the adapter
// with a constant coefficient. LPT/VPT/IVLP are plain prompt tuning.
enum class Method { LPT, VPT, IVLP, RESTORE, RESTORE_no_surgery, fixed_alpha };

const char* to_string(Method method);
Method parse_method(const std::string& text);
PromptMode prompt_mode_for(Method method);
SurgeryMode surgery_mode_for(Method method);
bool uses_fs_loss(Method method);

struct TrainConfig {
    double lambda_fs = 1.0;
    double lr = 0.0035;
    std::size_t batch_size = 4;
    std::size_t epochs = 10;
    std::size_t shots = 16;
    std::uint64_t seed = 0;
    Method mode = Method::RESTORE;
    double gamma = 0.1;
    double beta = 0.1;
    double tau = 0.07;
    std::size_t a = 2;
    std::size_t b = 2;

    double momentum = 0.0;
    double fixed_alpha = 0.1;
    bool use_tau = true;
    bool rms_norm = false;
    bool stop_clean_grad = false;
    bool alpha_grad = false;
    std::size_t surgery_hidden = 0;  // 0 = 4 * embed_dim

    void validate() const;
    PredictOptions predict_options() const;
};

struct StepTelemetry {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double ce = 0.0;
    double fs = 0.0;
    double total = 0.0;
    std::vector<double> vision_norms;  // per layer, batch mean (zeros when not prompted)
    std::vector<double> text_norms;
    double alpha_vision = 0.0;  // batch mean
    double alpha_text = 0.0;

    double discrepancy() const;  // mean over layers of |vision - text|
};

struct TuneResult {
    PromptSet prompts;
    SurgeryParams surgery;
    std::vector<StepTelemetry> telemetry;
    std::vector<std::string> warnings;
};

struct StepLoss {
    Tensor ce;
    Tensor fs;     // empty when the method has no consistency term
    Tensor total;
    Prediction prediction;
};

// Forward pass of one minibatch and its objective. Labels index base classes.
StepLoss compute_step_loss(std::span<const Tensor> images, std::span<const std::size_t> labels,
                           std::span<const std::size_t> class_ids, const PromptSet& prompts,
                           const SurgeryParams& surgery, const BackboneWeights& weights, const TrainConfig& cfg);

// Fresh prompts and surgery parameters for a run, seeded by cfg.seed.
TuneResult initial_state(const TrainConfig& cfg, const EncoderConfig& encoder);

// Minibatch SGD over the support set. Only prompts and surgery parameters
// are updated; `max_steps` (0 = unlimited) truncates the run.
TuneResult tune(const FewShotTask& task, const BackboneWeights& weights, const TrainConfig& cfg,
                std::size_t max_steps = 0);

// Continues from an existing state instead of a fresh one.
void tune_from(TuneResult& state, const FewShotTask& task, const BackboneWeights& weights, const TrainConfig& cfg,
               std::size_t max_steps = 0);

// Mean CE over the full support set with the current parameters.
double support_loss(const FewShotTask& task, const TuneResult& state, const BackboneWeights& weights,
                    const TrainConfig& cfg);

double harmonic_mean(double base, double novel);

struct Embeddings {
    struct Row {
        std::string kind;  // "image" or "class"
        std::string split;  // base / novel
        std::size_t label = 0;
        std::vector<double> values;
    };
    std::vector<Row> rows;
};

struct EvalReport {
    double base_acc = 0.0;   // percent
    double novel_acc = 0.0;  // percent
    double hm = 0.0;
    std::map<std::size_t, double> per_class_acc;  // percent
    double mean_vision_shift = 0.0;
    double mean_text_shift = 0.0;
    double final_fs_loss = 0.0;
    Embeddings embeddings;
};

struct EvalOptions {
    bool all_classes = false;   // score against all K classes instead of the split's own
    bool embeddings = false;
    std::size_t chunk = 32;
};

EvalReport evaluate(const FewShotTask& task, const TuneResult& tuned, const BackboneWeights& weights,
                    const TrainConfig& cfg, const EvalOptions& options = {});

}  // namespace fsprompt
