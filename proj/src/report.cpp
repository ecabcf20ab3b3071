#include "gradfaith/report.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <unordered_map>

namespace gradfaith {

namespace {

std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// Round to 6 significant digits for the JSON mirror.
double sig6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return std::strtod(buf, nullptr);
}

std::ofstream open_out(const std::filesystem::path& path, bool append = false) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  return out;
}

}  // namespace

std::string iso8601_utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_manifest(const std::filesystem::path& path, const ManifestEntries& entries) {
  auto out = open_out(path);
  for (const auto& [k, v] : entries) out << k << '=' << v << '\n';
  if (!out) throw FormatError("write failed for '" + path.string() + "'");
}

void append_manifest(const std::filesystem::path& path, const ManifestEntries& entries) {
  auto out = open_out(path, true);
  for (const auto& [k, v] : entries) out << k << '=' << v << '\n';
}

void save_split(const std::filesystem::path& path, const DatasetSplit& split) {
  auto out = open_out(path);
  out << "id,subset\n";
  for (int id : split.train) out << id << ",train\n";
  for (int id : split.val) out << id << ",val\n";
  for (int id : split.test) out << id << ",test\n";
  if (!out) throw FormatError("write failed for '" + path.string() + "'");
}

DatasetSplit load_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open split file '" + path.string() + "'");
  DatasetSplit split;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || (line_no == 1 && line == "id,subset")) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw FormatError("split file: missing comma at line " + std::to_string(line_no));
    int id;
    try {
      id = std::stoi(line.substr(0, comma));
    } catch (const std::exception&) {
      throw FormatError("split file: bad id at line " + std::to_string(line_no));
    }
    const std::string subset = line.substr(comma + 1);
    if (subset == "train")
      split.train.push_back(id);
    else if (subset == "val")
      split.val.push_back(id);
    else if (subset == "test")
      split.test.push_back(id);
    else
      throw FormatError("split file: unknown subset '" + subset + "' at line " +
                        std::to_string(line_no));
  }
  return split;
}

// ---- evaluation pipeline ----------------------------------------------------------

EvaluationResult evaluate_checkpoints(const std::vector<ModelParams>& checkpoints,
                                      const std::vector<Sample>& dataset,
                                      const DatasetSplit& split, const EvalConfig& config,
                                      int timing_reps) {
  if (checkpoints.empty()) throw InputError("evaluate: no checkpoints given");
  if (split.test.empty()) throw ContractError("evaluate: empty test split");
  if (config.binarize_threshold <= 0.0 || config.binarize_threshold >= 1.0)
    throw InputError("evaluate: tau must lie in (0,1)");

  std::unordered_map<int, std::size_t> index;
  for (std::size_t i = 0; i < dataset.size(); ++i) index.emplace(dataset[i].id, i);

  std::vector<const Sample*> test;
  test.reserve(split.test.size());
  for (int id : split.test) {
    auto it = index.find(id);
    if (it == index.end()) throw InputError("evaluate: split references unknown id " +
                                            std::to_string(id));
    test.push_back(&dataset[it->second]);
  }

  std::vector<Tensor> inputs;
  std::vector<int> labels;
  std::vector<const BinaryMask*> masks;
  inputs.reserve(test.size());
  for (const Sample* s : test) {
    inputs.push_back(to_tensor(s->image));
    labels.push_back(s->label);
    masks.push_back(&s->mask);
  }

  double mean_intensity = 0.0;
  if (config.fill == MaskFill::MeanFill) {
    double total = 0.0;
    for (const Sample* s : test) total += s->image.mean();
    mean_intensity = total / double(test.size());
  }

  const int classes = checkpoints[0].config.classes;
  EvaluationResult result;
  result.test_count = static_cast<int>(test.size());

  std::vector<std::vector<Heatmap>> heatmaps_per_model(checkpoints.size());
  for (std::size_t m = 0; m < checkpoints.size(); ++m) {
    const ModelParams& params = checkpoints[m];
    ModelReport report;
    report.label = params.config.preset + "-seed" + std::to_string(params.seed);
    report.record.model = report.label;
    report.record.seed = params.seed;

    std::vector<int> preds;
    preds.reserve(test.size());
    for (const Tensor& x : inputs) preds.push_back(predict(params, x));
    report.confusion = confusion_matrix(preds, labels, classes);
    for (std::size_t i = 0; i < preds.size(); ++i)
      if (preds[i] == labels[i]) ++report.correct_count;

    const MetricsSummary cls = classification_metrics(report.confusion);
    report.record.sensitivity = cls.macro.sensitivity;
    report.record.specificity = cls.macro.specificity;
    report.record.precision = cls.macro.precision;
    report.record.recall = cls.macro.recall;
    report.record.f1 = cls.macro.f1;
    report.record.accuracy = cls.accuracy;

    // Heatmaps target the true class of each sample.
    auto& heatmaps = heatmaps_per_model[m];
    heatmaps.reserve(test.size());
    for (std::size_t i = 0; i < test.size(); ++i)
      heatmaps.push_back(explain(params, inputs[i], labels[i], ScoreMode::Logit));

    int eligible = 0;
    for (const BinaryMask* mask : masks)
      if (!mask->is_empty()) ++eligible;
    report.record.eligible_mask_count = eligible;
    if (eligible > 0) {
      std::vector<BinaryMask> mask_copies;
      mask_copies.reserve(masks.size());
      for (const BinaryMask* mask : masks) mask_copies.push_back(*mask);
      report.record.loc_acc = loc_acc(heatmaps, mask_copies, config.binarize_threshold).value;
    }

    report.record.faith_mean = faith_mean(params, inputs, labels, heatmaps,
                                          config.faith_score_mode, config.fill, mean_intensity);

    if (timing_reps > 0)
      report.record.inference_ms = measure_inference_ms(params, dataset, split.test, timing_reps);

    result.models.push_back(std::move(report));
  }

  // Consistency groups: checkpoints sharing a config fingerprint.
  std::vector<std::pair<std::uint32_t, std::vector<std::size_t>>> groups;
  for (std::size_t m = 0; m < checkpoints.size(); ++m) {
    bool found = false;
    for (auto& [fp, members] : groups)
      if (fp == checkpoints[m].fingerprint) {
        members.push_back(m);
        found = true;
        break;
      }
    if (!found) groups.push_back({checkpoints[m].fingerprint, {m}});
  }
  for (const auto& [fp, members] : groups) {
    if (members.size() < 2) continue;
    if (config.reference_index < 0 ||
        config.reference_index >= static_cast<int>(members.size()))
      throw InputError("evaluate: consistency reference index " +
                       std::to_string(config.reference_index) + " out of range for group of " +
                       std::to_string(members.size()));
    std::vector<std::vector<Heatmap>> runs;
    runs.reserve(members.size());
    for (std::size_t m : members) runs.push_back(heatmaps_per_model[m]);
    const double consist =
        consistency(runs, config.reference_index, config.binarize_threshold);
    for (std::size_t m : members) result.models[m].record.consist = consist;
  }
  return result;
}

// ---- serialization -------------------------------------------------------------------

void write_report_csv(const std::filesystem::path& path, const EvaluationResult& result) {
  auto out = open_out(path);
  out << "model,sensitivity,specificity,precision,recall,f1,accuracy,time_ms,"
         "loc_acc,faith,consist,eligible_mask_count\n";
  for (const ModelReport& m : result.models) {
    const MetricRecord& r = m.record;
    out << r.model << ',' << fmt4(r.sensitivity) << ',' << fmt4(r.specificity) << ','
        << fmt4(r.precision) << ',' << fmt4(r.recall) << ',' << fmt4(r.f1) << ','
        << fmt4(r.accuracy) << ',' << fmt4(r.inference_ms) << ','
        << (r.loc_acc ? fmt4(*r.loc_acc) : "") << ',' << fmt4(r.faith_mean) << ','
        << (r.consist ? fmt4(*r.consist) : "") << ',' << r.eligible_mask_count << '\n';
  }
  if (!out) throw FormatError("write failed for '" + path.string() + "'");
}

void write_report_json(const std::filesystem::path& path, const EvaluationResult& result,
                       const ManifestEntries& metadata) {
  nlohmann::ordered_json doc;
  doc["tool_version"] = kToolVersion;
  for (const auto& [k, v] : metadata) doc["run"][k] = v;
  doc["test_count"] = result.test_count;
  doc["classification_averaging"] = "macro";
  doc["rows"] = nlohmann::ordered_json::array();
  for (const ModelReport& m : result.models) {
    const MetricRecord& r = m.record;
    nlohmann::ordered_json row;
    row["model"] = r.model;
    row["sensitivity"] = sig6(r.sensitivity);
    row["specificity"] = sig6(r.specificity);
    row["precision"] = sig6(r.precision);
    row["recall"] = sig6(r.recall);
    row["f1"] = sig6(r.f1);
    row["accuracy"] = sig6(r.accuracy);
    row["time_ms"] = sig6(r.inference_ms);
    if (r.loc_acc)
      row["loc_acc"] = sig6(*r.loc_acc);
    else
      row["loc_acc"] = nullptr;
    row["faith"] = sig6(r.faith_mean);
    if (r.consist)
      row["consist"] = sig6(*r.consist);
    else
      row["consist"] = nullptr;
    row["eligible_mask_count"] = r.eligible_mask_count;
    row["correct_count"] = m.correct_count;
    doc["rows"].push_back(std::move(row));
  }
  auto out = open_out(path);
  out << doc.dump(2) << '\n';
  if (!out) throw FormatError("write failed for '" + path.string() + "'");
}

void write_confusion_csv(const std::filesystem::path& path, const ConfusionMatrix& cm) {
  auto out = open_out(path);
  const int k = static_cast<int>(cm.counts.rows());
  for (int c = 0; c < k; ++c) out << ',' << (c < 3 ? kClassNames[c] : "class" + std::to_string(c));
  out << '\n';
  for (int row = 0; row < k; ++row) {
    out << (row < 3 ? kClassNames[row] : "class" + std::to_string(row));
    for (int col = 0; col < k; ++col) out << ',' << cm.counts(row, col);
    out << '\n';
  }
  if (!out) throw FormatError("write failed for '" + path.string() + "'");
}

void write_train_record_csv(const std::filesystem::path& path, const TrainRecord& record) {
  auto out = open_out(path);
  out << "epoch,train_loss,val_accuracy\n";
  char buf[64];
  for (std::size_t e = 0; e < record.train_loss.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.4f", e + 1, record.train_loss[e],
                  record.val_accuracy[e]);
    out << buf << '\n';
  }
  if (!out) throw FormatError("write failed for '" + path.string() + "'");
}

void print_report_table(std::ostream& os, const EvaluationResult& result) {
  os << std::left << std::setw(20) << "model" << std::right << std::setw(7) << "sens"
     << std::setw(7) << "spec" << std::setw(7) << "prec" << std::setw(7) << "recall"
     << std::setw(7) << "f1" << std::setw(7) << "acc" << std::setw(9) << "time_ms" << std::setw(9)
     << "loc_acc" << std::setw(9) << "faith" << std::setw(9) << "consist" << std::setw(7)
     << "masks" << '\n';
  for (const ModelReport& m : result.models) {
    const MetricRecord& r = m.record;
    os << std::left << std::setw(20) << r.model << std::right << std::setw(7)
       << fmt4(r.sensitivity).substr(0, 6) << std::setw(7) << fmt4(r.specificity).substr(0, 6)
       << std::setw(7) << fmt4(r.precision).substr(0, 6) << std::setw(7)
       << fmt4(r.recall).substr(0, 6) << std::setw(7) << fmt4(r.f1).substr(0, 6) << std::setw(7)
       << fmt4(r.accuracy).substr(0, 6) << std::setw(9) << fmt4(r.inference_ms) << std::setw(9)
       << (r.loc_acc ? fmt4(*r.loc_acc) : "-") << std::setw(9) << fmt4(r.faith_mean)
       << std::setw(9) << (r.consist ? fmt4(*r.consist) : "-") << std::setw(7)
       << r.eligible_mask_count << '\n';
  }
}

OverlayChannels render_overlay(const Grid& gray, const Grid& heat, double beta) {
  if (gray.rows() != heat.rows() || gray.cols() != heat.cols())
    throw ShapeError("render_overlay: image and heatmap dimensions differ");
  OverlayChannels ch;
  ch.r = (1.0 - beta) * gray + beta * heat;
  ch.g = (1.0 - beta) * gray;
  ch.b = ch.g;
  return ch;
}

}  // namespace gradfaith
