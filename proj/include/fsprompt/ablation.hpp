#pragma once

#include "fsprompt/dataset.hpp"
#include "fsprompt/encoder.hpp"
#include "fsprompt/trainer.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace fsprompt {

struct ExperimentResult {
    TrainConfig config;
    TuneResult tuned;
    EvalReport report;
};

// One tune + evaluate on the task drawn for cfg.seed.
ExperimentResult run_experiment(const SyntheticCorpus& corpus, const TaskOptions& task, const BackboneWeights& weights,
                                const TrainConfig& cfg, const EvalOptions& eval = {});

// Independent runs, spread over OpenMP threads. Results keep the input order.
std::vector<ExperimentResult> run_many(const SyntheticCorpus& corpus, const TaskOptions& task,
                                       const BackboneWeights& weights, const std::vector<TrainConfig>& configs,
                                       const EvalOptions& eval = {});

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // population std over seeds
};

MeanStd mean_std(const std::vector<double>& values);

struct AblationRow {
    double lambda_fs = 0.0;
    Method mode = Method::RESTORE;
    std::size_t seeds = 0;
    MeanStd base, novel, hm;
    std::vector<double> hm_per_seed;
    std::vector<double> novel_per_seed;
};

struct AblationTable {
    std::vector<AblationRow> rows;
    const AblationRow& at(double lambda_fs, Method mode) const;
};

// Grid over lambda_fs x {RESTORE_no_surgery, fixed_alpha, RESTORE} x seeds.
AblationTable run_ablation(const std::vector<double>& grid, const std::vector<Method>& modes, const TrainConfig& cfg,
                           const std::vector<std::uint64_t>& seeds, const SyntheticCorpus& corpus,
                           const TaskOptions& task, const BackboneWeights& weights);

std::vector<Method> ablation_modes();

// lambda_fs,mode,seeds,base_mean,base_std,novel_mean,novel_std,hm_mean,hm_std
void write_ablation_csv(const AblationTable& table, const std::filesystem::path& path);

// step,layer,modality,norm,fs_loss,alpha
void write_telemetry_csv(const std::vector<StepTelemetry>& telemetry, const std::filesystem::path& path);

void write_report_json(const EvalReport& report, const std::filesystem::path& path);

// kind,split,label,f0..f{d-1}
void write_embeddings_csv(const Embeddings& embeddings, const std::filesystem::path& path);

struct ShiftSummaryRow {
    std::string run;  // e.g. "IVLP/seed0"
    Method mode = Method::IVLP;
    std::uint64_t seed = 0;
    std::vector<double> vision;  // per layer, mean over steps
    std::vector<double> text;
    std::vector<double> discrepancy;  // per layer, mean over steps of |v - t|

    double mean_vision() const;
    double mean_text() const;
    double mean_discrepancy() const;
};

ShiftSummaryRow summarize_shifts(const ExperimentResult& run);

// Writes into `out`:
//   shift_telemetry.csv  run,step,layer,modality,norm,fs_loss
//   shift_summary.csv    run,mode,seed,layer,vision_norm,text_norm,discrepancy
//                        (one row per layer plus a layer="mean" row)
//   shift_modes.csv      mode,vision_norm,text_norm,discrepancy (averaged over runs)
//   embeddings.csv       run,kind,split,label,f0..  (runs evaluated with embeddings)
std::vector<ShiftSummaryRow> shift_report(const std::vector<ExperimentResult>& runs, const std::filesystem::path& out);

}  // namespace fsprompt
