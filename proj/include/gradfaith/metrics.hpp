#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gradfaith/gradcam.hpp"

namespace gradfaith {

using MaskGrid = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct BinaryMask {
  MaskGrid values;
  int positives = 0;

  static BinaryMask of(MaskGrid m) {
    BinaryMask b{std::move(m), 0};
    b.positives = static_cast<int>(b.values.count());
    return b;
  }
  static BinaryMask empty(int h, int w) { return of(MaskGrid::Constant(h, w, false)); }
  bool is_empty() const { return positives == 0; }
};

// How masked-out pixels are filled for the perturbation score.
enum class MaskFill { Multiplicative, MeanFill };

struct EvalConfig {
  double binarize_threshold = 0.5;  // in (0,1)
  int run_count = 3;                // R >= 2 for the consistency metric
  int reference_index = 0;          // which run is the consistency reference
  ScoreMode faith_score_mode = ScoreMode::Probability;
  MaskFill fill = MaskFill::Multiplicative;
  double fill_value = 0.0;  // used by MeanFill
};

struct MetricRecord {
  std::string model;
  std::uint64_t seed = 0;
  std::optional<double> loc_acc;  // empty when no sample has a nonempty mask
  double faith_mean = 0.0;
  std::optional<double> consist;  // empty when fewer than 2 runs
  double sensitivity = 0.0, specificity = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0,
         accuracy = 0.0;
  double inference_ms = 0.0;
  int eligible_mask_count = 0;
};

struct ConfusionMatrix {
  Eigen::MatrixXi counts;  // rows = true class, cols = predicted class
  int total() const { return counts.sum(); }
};

struct ClassMetrics {
  double sensitivity, specificity, precision, recall, f1;
};

struct MetricsSummary {
  std::vector<ClassMetrics> per_class;
  ClassMetrics macro;
  double accuracy;
  bool zero_denominator_hit;  // some ratio had an empty denominator and was reported as 0
};

/// Pixel true iff normalized heatmap value >= tau.
BinaryMask binarize(const Heatmap&, double tau);

struct LocAccResult {
  double value;
  int eligible;  // samples with a nonempty ground-truth mask
};

/// Mean over eligible samples of |binarize(heatmap) AND mask| / |mask|.
/// ContractError when no sample has a nonempty mask.
LocAccResult loc_acc(std::span<const Heatmap>, std::span<const BinaryMask>, double tau);

/// score(x)_y - score(x * (1 - L))_y, the confidence drop when the salient
/// region is suppressed. The soft mask multiplies every channel.
double faith_single(const ModelParams&, const Tensor& x, int label, const Heatmap&,
                    ScoreMode mode = ScoreMode::Probability,
                    MaskFill fill = MaskFill::Multiplicative, double fill_value = 0.0);

double faith_mean(const ModelParams&, std::span<const Tensor> inputs, std::span<const int> labels,
                  std::span<const Heatmap>, ScoreMode mode = ScoreMode::Probability,
                  MaskFill fill = MaskFill::Multiplicative, double fill_value = 0.0);

/// |a AND b| / |a OR b|; 1.0 when both masks are empty.
double iou(const BinaryMask& a, const BinaryMask& b);

/// Mean IoU of each non-reference run's binarized maps against the
/// reference run, averaged over runs: (1/(R-1)) * sum_{r != ref}.
double consistency(const std::vector<std::vector<Heatmap>>& runs, int reference_index, double tau);

ConfusionMatrix confusion_matrix(std::span<const int> predictions, std::span<const int> labels,
                                 int classes);

/// One-vs-rest per class plus unweighted macro averages; ratios with an
/// empty denominator are reported as 0 and flagged.
MetricsSummary classification_metrics(const ConfusionMatrix&);

}  // namespace gradfaith
