#include "gradfaith/metrics.hpp"

#include <cmath>

namespace gradfaith {

BinaryMask binarize(const Heatmap& h, double tau) {
  if (tau <= 0.0 || tau >= 1.0)
    throw InputError("binarize: threshold must lie in (0,1), got " + std::to_string(tau));
  return BinaryMask::of(h.normalized >= tau);
}

LocAccResult loc_acc(std::span<const Heatmap> heatmaps, std::span<const BinaryMask> masks,
                     double tau) {
  if (heatmaps.size() != masks.size())
    throw InputError("loc_acc: " + std::to_string(heatmaps.size()) + " heatmaps vs " +
                     std::to_string(masks.size()) + " masks");
  double total = 0.0;
  int eligible = 0;
  for (std::size_t i = 0; i < heatmaps.size(); ++i) {
    if (masks[i].is_empty()) continue;
    const BinaryMask bin = binarize(heatmaps[i], tau);
    if (bin.values.rows() != masks[i].values.rows() || bin.values.cols() != masks[i].values.cols())
      throw InputError("loc_acc: heatmap and mask dimensions differ at sample " +
                       std::to_string(i));
    const int hit = static_cast<int>((bin.values && masks[i].values).count());
    total += double(hit) / masks[i].positives;
    ++eligible;
  }
  if (eligible == 0)
    throw ContractError("loc_acc: no sample has a nonempty ground-truth mask");
  return {total / eligible, eligible};
}

namespace {

double class_score(const ModelParams& params, const Tensor& x, int label, ScoreMode mode) {
  const Tensor logits = forward(params, x);
  if (label < 0 || label >= logits.size())
    throw InputError("faith: label " + std::to_string(label) + " out of range");
  if (mode == ScoreMode::Logit) return logits.values[label];
  Tape tape(false);
  return softmax(tape, logits).values[label];
}

}  // namespace

double faith_single(const ModelParams& params, const Tensor& x, int label, const Heatmap& h,
                    ScoreMode mode, MaskFill fill, double fill_value) {
  const int height = x.shape.at(1), width = x.shape.at(2);
  if (h.normalized.rows() != height || h.normalized.cols() != width)
    throw ShapeError("faith_single: heatmap " + std::to_string(h.normalized.rows()) + "x" +
                     std::to_string(h.normalized.cols()) + " does not match input " +
                     shape_str(x.shape));
  Tensor masked = x;
  masked.node = -1;
  const Eigen::Index hw = static_cast<Eigen::Index>(height) * width;
  Eigen::Map<const Array> heat(h.normalized.data(), hw);
  for (int c = 0; c < x.shape[0]; ++c) {
    auto px = masked.values.segment(static_cast<Eigen::Index>(c) * hw, hw);
    if (fill == MaskFill::Multiplicative)
      px *= (1.0 - heat);
    else
      px = px * (1.0 - heat) + fill_value * heat;
  }
  return class_score(params, x, label, mode) - class_score(params, masked, label, mode);
}

double faith_mean(const ModelParams& params, std::span<const Tensor> inputs,
                  std::span<const int> labels, std::span<const Heatmap> heatmaps, ScoreMode mode,
                  MaskFill fill, double fill_value) {
  if (inputs.empty()) throw ContractError("faith_mean: empty evaluation split");
  if (inputs.size() != labels.size() || inputs.size() != heatmaps.size())
    throw InputError("faith_mean: misaligned inputs, labels, and heatmaps");
  double total = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    total += faith_single(params, inputs[i], labels[i], heatmaps[i], mode, fill, fill_value);
  return total / double(inputs.size());
}

double iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.values.rows() != b.values.rows() || a.values.cols() != b.values.cols())
    throw InputError("iou: mask dimensions differ");
  const int inter = static_cast<int>((a.values && b.values).count());
  const int uni = static_cast<int>((a.values || b.values).count());
  if (uni == 0) return 1.0;  // two empty masks agree
  return double(inter) / uni;
}

double consistency(const std::vector<std::vector<Heatmap>>& runs, int reference_index,
                   double tau) {
  const int r = static_cast<int>(runs.size());
  if (r < 2) throw ContractError("consistency: needs at least 2 runs, got " + std::to_string(r));
  if (reference_index < 0 || reference_index >= r)
    throw InputError("consistency: reference index " + std::to_string(reference_index) +
                     " out of range");
  const std::size_t images = runs[0].size();
  if (images == 0) throw ContractError("consistency: empty image list");
  for (const auto& run : runs)
    if (run.size() != images) throw InputError("consistency: runs cover different image sets");

  std::vector<std::vector<BinaryMask>> bin(runs.size());
  for (std::size_t i = 0; i < runs.size(); ++i) {
    bin[i].reserve(images);
    for (const Heatmap& h : runs[i]) bin[i].push_back(binarize(h, tau));
  }

  double total = 0.0;
  for (int run = 0; run < r; ++run) {
    if (run == reference_index) continue;  // the reference is not compared with itself
    double run_mean = 0.0;
    for (std::size_t img = 0; img < images; ++img)
      run_mean += iou(bin[static_cast<std::size_t>(run)][img],
                      bin[static_cast<std::size_t>(reference_index)][img]);
    total += run_mean / double(images);
  }
  return total / double(r - 1);
}

ConfusionMatrix confusion_matrix(std::span<const int> predictions, std::span<const int> labels,
                                 int classes) {
  if (predictions.size() != labels.size())
    throw InputError("confusion_matrix: " + std::to_string(predictions.size()) +
                     " predictions vs " + std::to_string(labels.size()) + " labels");
  ConfusionMatrix cm{Eigen::MatrixXi::Zero(classes, classes)};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes || predictions[i] < 0 || predictions[i] >= classes)
      throw InputError("confusion_matrix: class index out of range at sample " +
                       std::to_string(i));
    cm.counts(labels[i], predictions[i]) += 1;
  }
  return cm;
}

MetricsSummary classification_metrics(const ConfusionMatrix& cm) {
  const int k = static_cast<int>(cm.counts.rows());
  const int total = cm.total();
  MetricsSummary s{};
  s.zero_denominator_hit = false;

  auto ratio = [&s](double num, double den) {
    if (den == 0.0) {
      s.zero_denominator_hit = true;
      return 0.0;
    }
    return num / den;
  };

  for (int c = 0; c < k; ++c) {
    const double tp = cm.counts(c, c);
    const double fn = cm.counts.row(c).sum() - tp;
    const double fp = cm.counts.col(c).sum() - tp;
    const double tn = total - tp - fn - fp;
    ClassMetrics m{};
    m.sensitivity = ratio(tp, tp + fn);
    m.specificity = ratio(tn, tn + fp);
    m.precision = ratio(tp, tp + fp);
    m.recall = m.sensitivity;
    m.f1 = ratio(2.0 * m.precision * m.recall, m.precision + m.recall);
    s.per_class.push_back(m);
  }

  ClassMetrics macro{};
  for (const ClassMetrics& m : s.per_class) {
    macro.sensitivity += m.sensitivity;
    macro.specificity += m.specificity;
    macro.precision += m.precision;
    macro.recall += m.recall;
    macro.f1 += m.f1;
  }
  macro.sensitivity /= k;
  macro.specificity /= k;
  macro.precision /= k;
  macro.recall /= k;
  macro.f1 /= k;
  s.macro = macro;
  s.accuracy = ratio(cm.counts.trace(), total);
  return s;
}

}  // namespace gradfaith
