#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "totkit/dataset.hpp"
#include "totkit/features.hpp"
#include "totkit/model.hpp"

namespace totkit::eval {

using dataset::Dataset;
using dataset::Episode;
using features::ActivityClass;
using features::FeatureMask;
using model::ModelConfig;
using model::ModelParams;
using model::Outputs;
using model::Targets3;
using model::TrainHyper;

struct MaeSummary {
    double e = 0.0;
    double f = 0.0;
    double h = 0.0;
    double tot = 0.0;  // mean |max(o) - max(t)|, not derivable from the components
    std::size_t count = 0;
};

// Component MAEs plus the max-rule take-over-time MAE over aligned lists.
// Throws ConfigError on empty input, ShapeError on misaligned lists.
MaeSummary compute_mae(const std::vector<Outputs>& predictions, const std::vector<Targets3>& targets);

struct ActivityRow {
    ActivityClass activity{};
    std::size_t count = 0;
    MaeSummary mae;
    double tot_abs_error_sd = 0.0;  // SD of the per-sample |TOT error|
    double mean_tot_target = 0.0;   // mean target TOT of the subset
};

struct EvalReport {
    std::string model_id;
    std::string dataset_id;
    MaeSummary overall;
    std::vector<ActivityRow> per_activity;  // one row per activity present, code order
};

// Forward pass over every episode's TOR window, overall and per-activity
// error summary.
EvalReport evaluate_model(const ModelConfig& cfg, const ModelParams& params,
                          const std::vector<const Episode*>& episodes, const std::string& model_id = "",
                          const std::string& dataset_id = "");

// --- Ablation over feature combinations ----------------------------------------

struct AblationSpec {
    std::vector<FeatureMask> masks;

    // The canonical 11-row combination study: F; G; H; H+S; H+O; H+S+O;
    // G+H+O; G+H+S+O; F+G+H+S; F+G+H+O; F+G+H+S+O.
    static AblationSpec defaults();
    // Masks must be non-empty and mutually distinct.
    void validate() const;
};

struct AblationRow {
    FeatureMask mask;
    MaeSummary val_mae;  // validation-split errors
};

// Trains one model per mask — identical seed and hyperparameters across
// rows so differences are attributable to the feature families — and
// evaluates each on the validation split. Runs execute in parallel; the row
// order always follows the spec order.
std::vector<AblationRow> run_ablation(const AblationSpec& spec, const Dataset& ds, const ModelConfig& base_cfg,
                                      const TrainHyper& hyper, std::uint64_t seed);

std::string ablation_to_csv(const std::vector<AblationRow>& rows);

// --- Training-set-size study -----------------------------------------------------

struct FractionRow {
    double fraction = 1.0;
    std::size_t train_count = 0;
    MaeSummary test_mae;
};

// Stratified subsampling of the training split only (fraction 1.0 keeps it
// intact); one model per fraction, all with the same training seed, each
// evaluated on the untouched test split. Subsample draw i uses the
// (seed, i) sub-stream. Throws ConfigError if a fraction empties a class.
std::vector<FractionRow> data_fraction_experiment(const Dataset& ds, const std::vector<double>& fractions,
                                                  const ModelConfig& base_cfg, const TrainHyper& hyper,
                                                  std::uint64_t seed);

std::string fractions_to_csv(const std::vector<FractionRow>& rows);

// --- Report rendering -------------------------------------------------------------

enum class ReportFormat { kCsv, kSvg, kMarkdown };

ReportFormat report_format_from_string(const std::string& s);

// Writes deterministic files under `prefix` (e.g. prefix_overall.csv,
// prefix_per_activity.csv / .svg / .md) and returns their paths.
std::vector<std::string> emit_report(const EvalReport& report, ReportFormat format, const std::string& prefix);

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);

// MAE reference values from the original study on its private dataset;
// rendered in report footers for context only, never used as targets.
struct ReferenceValues {
    double val_full_feature_tot_mae = 0.7912;
    double test_id_lstms_tot_mae = 0.9144;
    double test_baseline_tot_mae = 0.9457;
};

inline constexpr const char* kReferenceFooter =
    "reference (original study, private dataset - not a target): "
    "validation TOT MAE 0.7912 s full-feature; test TOT MAE 0.9144 s vs 0.9457 s single-LSTM baseline";

}  // namespace totkit::eval
