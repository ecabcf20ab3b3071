#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "gradfaith/metrics.hpp"
#include "gradfaith/phantom.hpp"
#include "gradfaith/train.hpp"

namespace gradfaith {

inline constexpr const char* kToolVersion = "0.1.0";

// ---- run manifests ----------------------------------------------------------
// Plain key=value lines recording the fully resolved configuration of a run.
// Commands write the manifest before any other output and append the end
// timestamp afterwards.

using ManifestEntries = std::vector<std::pair<std::string, std::string>>;

void write_manifest(const std::filesystem::path&, const ManifestEntries&);
void append_manifest(const std::filesystem::path&, const ManifestEntries&);
std::string iso8601_utc_now();

// ---- split files --------------------------------------------------------------

void save_split(const std::filesystem::path&, const DatasetSplit&);  // id,subset CSV
DatasetSplit load_split(const std::filesystem::path&);

// ---- evaluation pipeline --------------------------------------------------------

struct ModelReport {
  std::string label;  // "<preset>-seed<k>"
  MetricRecord record;
  ConfusionMatrix confusion;
  int correct_count = 0;  // correctly classified test samples
};

struct EvaluationResult {
  std::vector<ModelReport> models;
  int test_count = 0;
};

/// Full audit of trained checkpoints on the test split: predictions,
/// confusion matrix and macro classification metrics, per-sample heatmaps
/// targeting the true class (gradients seeded from the logit), localization
/// accuracy, mean perturbation faithfulness, and cross-seed consistency
/// grouped by architecture (checkpoints with identical config fingerprints
/// form one group; the effective run count per group comes from the
/// checkpoint list, with config.run_count recording the intended R).
/// timing_reps = 0 disables inference timing; time_ms is reported as 0.
EvaluationResult evaluate_checkpoints(const std::vector<ModelParams>&,
                                      const std::vector<Sample>& dataset, const DatasetSplit&,
                                      const EvalConfig&, int timing_reps = 25);

// ---- report serialization ----------------------------------------------------------
// CSV columns:
// model,sensitivity,specificity,precision,recall,f1,accuracy,time_ms,
// loc_acc,faith,consist,eligible_mask_count
// Metric fields carry 4 decimals; empty optional fields stay empty. The
// JSON mirror holds the same fields (null for empty) at 6 significant
// digits plus run metadata.

void write_report_csv(const std::filesystem::path&, const EvaluationResult&);
void write_report_json(const std::filesystem::path&, const EvaluationResult&,
                       const ManifestEntries& metadata);
void write_confusion_csv(const std::filesystem::path&, const ConfusionMatrix&);
void write_train_record_csv(const std::filesystem::path&, const TrainRecord&);
void print_report_table(std::ostream&, const EvaluationResult&);

// ---- heatmap overlay rendering ----------------------------------------------------

struct OverlayChannels {
  Grid r, g, b;
};

/// Blend heat into the red channel: r = (1-beta)*gray + beta*heat,
/// g = b = (1-beta)*gray.
OverlayChannels render_overlay(const Grid& gray, const Grid& heat, double beta = 0.5);

}  // namespace gradfaith
