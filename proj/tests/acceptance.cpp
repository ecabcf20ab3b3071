// Acceptance suite: one pass/fail line per criterion, nonzero exit if any
// criterion fails. Criteria 5 and 6 run the full phantom pipeline; budget
// them several minutes on a desktop CPU.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gradfaith/gradcam.hpp"
#include "gradfaith/image_io.hpp"
#include "gradfaith/metrics.hpp"
#include "gradfaith/model.hpp"
#include "gradfaith/phantom.hpp"
#include "gradfaith/report.hpp"
#include "gradfaith/train.hpp"
#include "gradfaith/verify.hpp"
#include "op_cases.hpp"
#include "testutil.hpp"

using namespace gradfaith;
using check::gradcheck_op;
using check::norm_rel_err;
using check::random_tensor;

namespace {

struct Outcome {
  bool passed;
  std::string detail;
};

void expect(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- criterion 1: gradient oracle ------------------------------------------------

Outcome criterion_gradient_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_op = 0.0;
  Rng rng(20260801);
  for (const testutil::OpCase& oc : testutil::op_cases()) {
    for (int inst = 0; inst < 100; ++inst) {
      auto inputs = oc.inputs(rng);
      Tensor proj = random_tensor(rng, oc.out_shape);
      const double err = gradcheck_op(oc.op, inputs, proj, 1e-6);
      worst_op = std::max(worst_op, err);
      if (err > 1e-5)
        throw Error(std::string("op '") + oc.name + "' instance " + std::to_string(inst) +
                    " gradient error " + std::to_string(err));
    }
  }

  // Full forward passes of every preset at 16x16: every parameter gradient
  // against central differences, compared as one whole-model vector.
  double worst_model = 0.0;
  for (const std::string& preset : preset_names()) {
    ModelConfig cfg = preset_config(preset, {1, 16, 16});
    ModelParams params = init_params(cfg, rng.next_u64());
    Tensor x = random_tensor(rng, {1, 16, 16}, 0, 1);
    const int label = rng.uniform_int(0, 2);

    Tape tape;
    auto bound = bind_params(tape, params);
    Tensor xl = tape.leaf(x);
    Tensor loss = cross_entropy(tape, run_layers(tape, cfg, bound, xl, nullptr), label);
    std::vector<int> wanted;
    for (const Tensor& b : bound) wanted.push_back(b.node);
    GradientSet grads = tape.backward(loss, wanted);

    std::int64_t total = 0;
    for (const NamedTensor& t : params.tensors) total += t.value.size();
    Tensor analytic = Tensor::zeros({static_cast<int>(total)});
    Tensor fd = Tensor::zeros({static_cast<int>(total)});

    auto loss_at = [&](const ModelParams& probe) {
      Tape t(false);
      auto b = bind_params(t, probe);
      Tensor xi = t.leaf(x);
      return cross_entropy(t, run_layers(t, cfg, b, xi, nullptr), label).item();
    };

    ModelParams probe = params;
    std::int64_t at = 0;
    const double h = 1e-6;
    for (std::size_t ti = 0; ti < params.tensors.size(); ++ti) {
      const Tensor& g = grads.at(bound[ti]);
      for (Eigen::Index e = 0; e < g.size(); ++e) {
        analytic.values[at] = g.values[e];
        double& cell = probe.tensors[ti].value.values[e];
        const double orig = cell;
        cell = orig + h;
        const double fp = loss_at(probe);
        cell = orig - h;
        const double fm = loss_at(probe);
        cell = orig;
        fd.values[at] = (fp - fm) / (2.0 * h);
        ++at;
      }
    }
    const double err = norm_rel_err(analytic, fd);
    worst_model = std::max(worst_model, err);
    if (err > 1e-5) throw Error("preset " + preset + " full-model gradient error " +
                                std::to_string(err));
  }

  const double secs = elapsed_s(t0);
  expect(secs <= 120.0, "gradient oracle exceeded the 2 minute budget: " +
                            std::to_string(secs) + " s");
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "max op err %.2e, max full-model err %.2e, %.1f s (budget 120 s)", worst_op,
                worst_model, secs);
  return {true, buf};
}

// ---- criterion 2: Grad-CAM oracle ------------------------------------------------

Outcome criterion_gradcam_oracle() {
  Rng rng(4202);
  double worst = 0.0;
  for (int inst = 0; inst < 50; ++inst) {
    const int d = rng.uniform_int(1, 4), hw = rng.uniform_int(2, 6);
    Tensor a = random_tensor(rng, {d, hw, hw});
    Tensor w = random_tensor(rng, {d, 3});
    Tensor b = random_tensor(rng, {3});
    const int target = rng.uniform_int(0, 2);

    auto tape = std::make_shared<Tape>(true);
    Tensor al = tape->leaf(a);
    Tensor logits = dense(*tape, global_avg_pool(*tape, al), tape->leaf(w), tape->leaf(b));
    ForwardTrace trace{logits, al, tape, {}};
    ChannelWeights alpha = channel_weights(trace, target, ScoreMode::Logit);

    Tensor fd = finite_diff_gradient(
        [&](const Tensor& probe) {
          Tape t(false);
          return dense(t, global_avg_pool(t, probe), w, b).values[target];
        },
        a, 1e-6);
    Tensor alpha_fd = Tensor::zeros({d});
    for (int k = 0; k < d; ++k)
      alpha_fd.values[k] =
          fd.values.segment(static_cast<Eigen::Index>(k) * hw * hw, hw * hw).mean();
    Tensor alpha_t = Tensor::zeros({d});
    alpha_t.values = alpha.alpha;
    const double err = norm_rel_err(alpha_t, alpha_fd);
    worst = std::max(worst, err);
    expect(err <= 1e-5, "alpha mismatch " + std::to_string(err) + " at instance " +
                            std::to_string(inst));
  }

  // Nonnegativity over 100 random (model, image) pairs.
  const auto presets = preset_names();
  for (int inst = 0; inst < 100; ++inst) {
    auto cfg = preset_config(presets[static_cast<std::size_t>(inst) % presets.size()],
                             {1, 16, 16});
    ModelParams p = init_params(cfg, rng.next_u64());
    Tensor x = random_tensor(rng, {1, 16, 16}, 0, 1);
    Heatmap hm = explain(p, x, rng.uniform_int(0, 2));
    expect(hm.raw.minCoeff() >= 0.0, "raw map negative at instance " + std::to_string(inst));
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "max alpha err %.2e; raw >= 0 on 100 pairs", worst);
  return {true, buf};
}

// ---- criterion 3: logit-scale invariance ---------------------------------------

Outcome criterion_scale_invariance() {
  Rng rng(4203);
  double worst = 0.0;
  for (const std::string& preset : preset_names()) {
    auto cfg = preset_config(preset, {1, 16, 16});
    ModelParams p = init_params(cfg, rng.next_u64());
    for (int img = 0; img < 3; ++img) {
      Tensor x = random_tensor(rng, {1, 16, 16}, 0, 1);
      const int target = rng.uniform_int(0, 2);
      Heatmap base = explain(p, x, target, ScoreMode::Logit);
      for (double gamma : {0.1, 3.0, 100.0}) {
        ModelParams scaled = p;
        scaled.tensors[scaled.tensors.size() - 2].value.values *= gamma;
        scaled.tensors[scaled.tensors.size() - 1].value.values *= gamma;
        Heatmap hm = explain(scaled, x, target, ScoreMode::Logit);
        const double diff = (hm.normalized - base.normalized).abs().maxCoeff();
        worst = std::max(worst, diff);
        expect(diff <= 1e-9, preset + " gamma " + std::to_string(gamma) +
                                 " changed the map by " + std::to_string(diff));
      }
    }
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "max map change %.2e (allowed 1e-9)", worst);
  return {true, buf};
}

// ---- criterion 4: metric analytics -----------------------------------------------

Outcome criterion_metric_analytics() {
  auto heat_of = [](Grid g) {
    Heatmap hm;
    hm.raw = g;
    hm.normalized = std::move(g);
    return hm;
  };

  // loc_acc on constructed full-coverage and disjoint cases
  Grid left = Grid::Zero(6, 6);
  left.block(0, 0, 6, 3).setConstant(1.0);
  MaskGrid inside = MaskGrid::Constant(6, 6, false);
  inside(2, 0) = inside(4, 2) = true;
  MaskGrid outside = MaskGrid::Constant(6, 6, false);
  outside(2, 5) = true;
  std::vector<Heatmap> maps{heat_of(left)};
  std::vector<BinaryMask> masks{BinaryMask::of(inside)};
  expect(loc_acc(maps, masks, 0.5).value == 1.0, "full coverage LocAcc != 1.0");
  masks[0] = BinaryMask::of(outside);
  expect(loc_acc(maps, masks, 0.5).value == 0.0, "disjoint LocAcc != 0.0");

  // IoU symmetry and bounds on 1000 random mask pairs
  Rng rng(4204);
  for (int inst = 0; inst < 1000; ++inst) {
    MaskGrid a(5, 5), b(5, 5);
    for (int i = 0; i < 25; ++i) {
      a.data()[i] = rng.next_double() < 0.4;
      b.data()[i] = rng.next_double() < 0.4;
    }
    const double ab = iou(BinaryMask::of(a), BinaryMask::of(b));
    const double ba = iou(BinaryMask::of(b), BinaryMask::of(a));
    expect(ab == ba, "IoU asymmetric");
    expect(ab >= 0.0 && ab <= 1.0, "IoU out of [0,1]");
  }

  // faith_single exactly 0 for a constant-output model
  auto cfg = preset_config("cnn-a", {1, 16, 16});
  ModelParams constant = init_params(cfg, 5);
  constant.tensors[constant.tensors.size() - 2].value.values.setZero();
  constant.tensors[constant.tensors.size() - 1].value.values.setZero();
  Tensor x = random_tensor(rng, {1, 16, 16}, 0, 1);
  Heatmap blanket = heat_of(Grid::Constant(16, 16, 0.7));
  expect(faith_single(constant, x, 0, blanket, ScoreMode::Probability) == 0.0,
         "constant model Faith != 0");

  // consistency of identical runs is exactly 1.0
  Grid blob = Grid::Zero(4, 4);
  blob.block(1, 1, 2, 2).setConstant(1.0);
  std::vector<std::vector<Heatmap>> runs{{heat_of(blob)}, {heat_of(blob)}, {heat_of(blob)}};
  expect(consistency(runs, 0, 0.5) == 1.0, "identical-run consistency != 1.0");

  return {true, "LocAcc/IoU/Faith/Consist closed-form cases exact"};
}

// ---- criterion 5: end-to-end phantom run ----------------------------------------

Outcome criterion_end_to_end() {
  const auto t0 = std::chrono::steady_clock::now();

  PhantomConfig pc;  // library defaults: 64x64, 100 per class
  const std::uint64_t seed = 42;
  auto samples = generate(pc, seed);
  DatasetSplit sp = split(samples, seed);

  ModelConfig cfg = preset_config("cnn-a", {1, 64, 64});
  TrainConfig tc;  // defaults: 50 epochs, batch 16, lr 0.01, momentum 0.9
  tc.seed = seed;
  auto [trained, record] = train(cfg, tc, samples, sp);
  ModelParams untrained = init_params(cfg, seed);

  const double accuracy = evaluate_accuracy(trained, samples, sp.test);

  // Heatmaps for the test split targeting the true class.
  std::vector<Tensor> inputs;
  std::vector<int> labels;
  std::vector<BinaryMask> masks;
  std::vector<Heatmap> heat_trained, heat_untrained;
  std::unordered_map<int, const Sample*> index;
  for (const Sample& s : samples) index.emplace(s.id, &s);
  for (int id : sp.test) {
    const Sample& s = *index.at(id);
    inputs.push_back(to_tensor(s.image));
    labels.push_back(s.label);
    masks.push_back(s.mask);
    heat_trained.push_back(explain(trained, inputs.back(), s.label));
    heat_untrained.push_back(explain(untrained, inputs.back(), s.label));
  }
  const double loc_trained = loc_acc(heat_trained, masks, 0.5).value;
  const double loc_untrained = loc_acc(heat_untrained, masks, 0.5).value;
  const double faith = faith_mean(trained, inputs, labels, heat_trained);

  const double secs = elapsed_s(t0);
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "acc %.4f (>=0.90), LocAcc %.4f vs untrained %.4f (gap >= 0.15), faith %.4f "
                "(>0), %.0f s (budget 900 s)",
                accuracy, loc_trained, loc_untrained, faith, secs);
  expect(accuracy >= 0.90, std::string("test accuracy too low: ") + buf);
  expect(loc_trained - loc_untrained >= 0.15, std::string("LocAcc gap too small: ") + buf);
  expect(faith > 0.0, std::string("mean Faith not positive: ") + buf);
  expect(secs <= 900.0, std::string("run exceeded 15 minutes: ") + buf);
  return {true, buf};
}

// ---- criterion 6: consistency pipeline via the CLI -------------------------------

std::string cli_path() {
  const char* env = std::getenv("GRADFAITH_CLI");
  if (!env) throw Error("GRADFAITH_CLI not set");
  return env;
}

int run_cli(const std::string& args, const std::filesystem::path& cwd) {
  const std::string cmd = "cd '" + cwd.string() + "' && '" + cli_path() + "' " + args +
                          " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> snapshot_outputs(const std::filesystem::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel = std::filesystem::relative(entry.path(), root).string();
    if (rel.find(".manifest") != std::string::npos) continue;  // carries timestamps by design
    files[rel] = testutil::read_file(entry.path());
  }
  return files;
}

Outcome criterion_consistency_pipeline() {
  testutil::TempDir dir("acceptance-pipeline");
  auto run_once = [&](const std::string& sub) {
    const auto root = dir.path / sub;
    std::filesystem::create_directories(root);
    expect(run_cli("generate --out data.gfds --per-class 20 --seed 7", root) == 0,
           "generate failed");
    expect(run_cli("train --data data.gfds --model cnn-a --seeds 1,2,3 --epochs 8 --out m",
                   root) == 0,
           "train failed");
    expect(run_cli("evaluate --data data.gfds --ckpts m/cnn-a-seed1.gfck,m/cnn-a-seed2.gfck,"
                   "m/cnn-a-seed3.gfck --timing-reps 0 --out report.csv",
                   root) == 0,
           "evaluate failed");
    return snapshot_outputs(root);
  };

  auto first = run_once("a");

  // Parse the report: 12 populated columns, consist within [0,1].
  std::stringstream csv(first.at("report.csv"));
  std::string line;
  std::getline(csv, line);
  expect(line ==
             "model,sensitivity,specificity,precision,recall,f1,accuracy,time_ms,loc_acc,faith,"
             "consist,eligible_mask_count",
         "report header mismatch");
  int rows = 0;
  double consist_value = -1.0;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    ++rows;
    expect(line.find(",,") == std::string::npos, "unpopulated column in: " + line);
    std::stringstream cells(line);
    std::string cell;
    for (int c = 0; c < 11; ++c) std::getline(cells, cell, ',');
    consist_value = std::stod(cell);
    expect(consist_value >= 0.0 && consist_value <= 1.0,
           "consist out of [0,1]: " + std::to_string(consist_value));
  }
  expect(rows == 3, "expected 3 report rows, got " + std::to_string(rows));

  auto second = run_once("b");
  expect(first.size() == second.size(), "rerun produced a different file set");
  for (const auto& [rel, bytes] : first) {
    auto it = second.find(rel);
    expect(it != second.end(), "rerun is missing " + rel);
    expect(it->second == bytes, "rerun differs byte-for-byte in " + rel);
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "consist %.4f in [0,1]; %zu outputs byte-identical on rerun",
                consist_value, first.size());
  return {true, buf};
}

// ---- criterion 7: classification metrics ------------------------------------------

Outcome criterion_classification_metrics() {
  Rng rng(4207);
  for (int inst = 0; inst < 100; ++inst) {
    Eigen::MatrixXi m(3, 3);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) m(r, c) = rng.uniform_int(0, 30);
    if (m.sum() == 0) m(0, 0) = 1;
    MetricsSummary s = classification_metrics(ConfusionMatrix{m});
    const int diag = m(0, 0) + m(1, 1) + m(2, 2);
    expect(std::abs(s.accuracy - double(diag) / m.sum()) <= 1e-12, "accuracy recount mismatch");
    for (int c = 0; c < 3; ++c) {
      const double tp = m(c, c);
      const double fn = m.row(c).sum() - tp;
      const double fp = m.col(c).sum() - tp;
      const double tn = m.sum() - tp - fn - fp;
      auto ratio = [](double num, double den) { return den == 0.0 ? 0.0 : num / den; };
      expect(std::abs(s.per_class[c].sensitivity - ratio(tp, tp + fn)) <= 1e-12,
             "sensitivity recount mismatch");
      expect(std::abs(s.per_class[c].specificity - ratio(tn, tn + fp)) <= 1e-12,
             "specificity recount mismatch");
      expect(std::abs(s.per_class[c].precision - ratio(tp, tp + fp)) <= 1e-12,
             "precision recount mismatch");
    }
  }

  ConfusionMatrix hand{Eigen::MatrixXi{{5, 0, 0}, {0, 0, 5}, {0, 0, 5}}};
  const double acc = classification_metrics(hand).accuracy;
  expect(std::abs(acc - 10.0 / 15.0) <= 1e-12,
         "hand-computed case accuracy " + std::to_string(acc));
  return {true, "100 random recounts within 1e-12; hand case accuracy 0.6667"};
}

// ---- criterion 8: format fidelity ---------------------------------------------------

Outcome criterion_format_fidelity() {
  testutil::TempDir dir("acceptance-formats");

  // GFDS bitwise round-trip
  auto samples = generate(testutil::tiny_phantom(5), 3);
  save_dataset(samples, dir.path / "a.gfds");
  save_dataset(load_dataset(dir.path / "a.gfds"), dir.path / "b.gfds");
  expect(testutil::read_file(dir.path / "a.gfds") == testutil::read_file(dir.path / "b.gfds"),
         "GFDS round-trip not bitwise");

  // GFCK bitwise round-trip
  ModelParams p = init_params(preset_config("cnn-dense", {1, 32, 32}), 11);
  save_params(p, dir.path / "a.gfck");
  save_params(load_params(dir.path / "a.gfck"), dir.path / "b.gfck");
  expect(testutil::read_file(dir.path / "a.gfck") == testutil::read_file(dir.path / "b.gfck"),
         "GFCK round-trip not bitwise");

  // PGM/PPM parse under the library reader
  Rng rng(4208);
  Grid img(24, 17);
  for (int i = 0; i < img.size(); ++i) img.data()[i] = rng.next_double();
  write_pgm(dir.path / "img.pgm", img);
  Grid back = read_pgm(dir.path / "img.pgm");
  expect(back.rows() == 24 && back.cols() == 17, "PGM dimensions changed");
  expect((back - img).abs().maxCoeff() <= 0.5 / 255.0 + 1e-12, "PGM quantization bound");
  write_ppm(dir.path / "img.ppm", img, img * 0.5, Grid::Zero(24, 17));

  // ... and under an external netpbm-compatible reader (PIL).
  const std::string script =
      "import sys\n"
      "from PIL import Image\n"
      "g = Image.open(sys.argv[1]); c = Image.open(sys.argv[2])\n"
      "assert g.mode == 'L' and g.size == (17, 24), g\n"
      "assert c.mode == 'RGB' and c.size == (17, 24), c\n"
      "print('ok')\n";
  std::ofstream(dir.path / "check.py") << script;
  const std::string cmd = "python3 '" + (dir.path / "check.py").string() + "' '" +
                          (dir.path / "img.pgm").string() + "' '" +
                          (dir.path / "img.ppm").string() + "' > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  expect(WIFEXITED(status) && WEXITSTATUS(status) == 0,
         "external reader (PIL) rejected the PGM/PPM outputs");

  return {true, "GFDS/GFCK bitwise; PGM/PPM parse internally and under PIL"};
}

}  // namespace

int main() {
  struct Entry {
    const char* name;
    std::function<Outcome()> fn;
  };
  const std::vector<Entry> criteria{
      {"1 gradient-oracle", criterion_gradient_oracle},
      {"2 gradcam-oracle", criterion_gradcam_oracle},
      {"3 logit-scale-invariance", criterion_scale_invariance},
      {"4 metric-analytics", criterion_metric_analytics},
      {"5 end-to-end-phantom", criterion_end_to_end},
      {"6 consistency-pipeline", criterion_consistency_pipeline},
      {"7 classification-metrics", criterion_classification_metrics},
      {"8 format-fidelity", criterion_format_fidelity},
  };

  int failures = 0;
  for (const Entry& entry : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome outcome{false, ""};
    try {
      outcome = entry.fn();
    } catch (const std::exception& e) {
      outcome = {false, e.what()};
    }
    if (!outcome.passed) ++failures;
    std::printf("[%s] %-28s %6.1fs  %s\n", outcome.passed ? "PASS" : "FAIL", entry.name,
                elapsed_s(t0), outcome.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("acceptance: %zu/%zu criteria passed\n", criteria.size() - failures,
              criteria.size());
  return failures == 0 ? 0 : 1;
}
