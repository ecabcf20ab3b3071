// Command-line harness: generate phantom data, train seeded models, emit
// Grad-CAM overlays, audit faithfulness metrics, and self-verify.
//
// Exit codes: 0 success, 1 verification/metric failure, 2 usage error,
// 3 IO/format error.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>

#include "gradfaith/gradcam.hpp"
#include "gradfaith/image_io.hpp"
#include "gradfaith/model.hpp"
#include "gradfaith/phantom.hpp"
#include "gradfaith/report.hpp"
#include "gradfaith/train.hpp"
#include "gradfaith/verify.hpp"

namespace fs = std::filesystem;
using namespace gradfaith;

namespace {

constexpr double kOverlayBeta = 0.5;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

template <typename T>
std::string join(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_same_v<T, std::string>)
      out += values[i];
    else
      out += std::to_string(values[i]);
  }
  return out;
}

ManifestEntries manifest_header(const std::string& command) {
  return {{"command", command},
          {"tool_version", kToolVersion},
          {"timestamp_start", iso8601_utc_now()}};
}

void finish_manifest(const fs::path& path) {
  append_manifest(path, {{"timestamp_end", iso8601_utc_now()}});
}

std::unordered_map<int, const Sample*> by_id(const std::vector<Sample>& samples) {
  std::unordered_map<int, const Sample*> map;
  for (const Sample& s : samples) map.emplace(s.id, &s);
  return map;
}

// ---- generate -----------------------------------------------------------------

struct GenerateArgs {
  std::string out;
  int size = 64;
  int per_class = 100;
  std::uint64_t seed = 42;
  double noise = 0.05;
  double contrast = 0.35;
};

int cmd_generate(const GenerateArgs& args) {
  PhantomConfig cfg;
  cfg.size = args.size;
  cfg.per_class = args.per_class;
  cfg.noise_sigma = args.noise;
  cfg.contrast = args.contrast;

  const fs::path out = args.out;
  const fs::path split_path = args.out + ".split";
  const fs::path manifest_path = args.out + ".manifest";

  auto manifest = manifest_header("generate");
  manifest.insert(manifest.end(), {{"out", out.string()},
                                   {"split_file", split_path.string()},
                                   {"size", std::to_string(args.size)},
                                   {"per_class", std::to_string(args.per_class)},
                                   {"seed", std::to_string(args.seed)},
                                   {"noise", fmt(args.noise)},
                                   {"contrast", fmt(args.contrast)},
                                   {"ratios", "0.6,0.2,0.2"}});
  write_manifest(manifest_path, manifest);

  const auto samples = generate(cfg, args.seed);
  save_dataset(samples, out);
  const DatasetSplit sp = split(samples, args.seed);
  save_split(split_path, sp);
  finish_manifest(manifest_path);

  int counts[3] = {0, 0, 0};
  for (const Sample& s : samples) counts[s.label]++;
  for (int c = 0; c < 3; ++c)
    std::cout << kClassNames[c] << ": " << counts[c] << '\n';
  std::cout << "dataset: " << out.string() << "\nsplit: " << split_path.string()
            << " (train " << sp.train.size() << ", val " << sp.val.size() << ", test "
            << sp.test.size() << ")\n";
  return 0;
}

// ---- train --------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string split_file;
  std::string model = "cnn-a";
  std::vector<std::uint64_t> seeds{42};
  int epochs = 50;
  double lr = 0.01;
  double momentum = 0.9;
  int batch = 16;
  std::string capture;
  std::string out = ".";
};

int cmd_train(const TrainArgs& args) {
  const auto samples = load_dataset(args.data);
  if (samples.empty()) throw InputError("train: dataset is empty");
  const fs::path split_path = args.split_file.empty() ? args.data + ".split" : args.split_file;
  const DatasetSplit sp = load_split(split_path);

  const int h = static_cast<int>(samples[0].image.rows());
  const int w = static_cast<int>(samples[0].image.cols());
  ModelConfig cfg = preset_config(args.model, {1, h, w});
  if (!args.capture.empty()) {
    cfg.capture_layer = args.capture;
    validate(cfg);
  }
  if (args.seeds.empty()) throw InputError("train: at least one seed required");
  for (std::size_t i = 0; i < args.seeds.size(); ++i)
    for (std::size_t j = i + 1; j < args.seeds.size(); ++j)
      if (args.seeds[i] == args.seeds[j])
        throw InputError("train: duplicate seed " + std::to_string(args.seeds[i]));

  const fs::path out_dir = args.out;
  fs::create_directories(out_dir);
  const fs::path manifest_path = out_dir / ("train-" + args.model + ".manifest");
  auto manifest = manifest_header("train");
  manifest.insert(manifest.end(), {{"data", args.data},
                                   {"split_file", split_path.string()},
                                   {"model", args.model},
                                   {"capture", cfg.capture_layer},
                                   {"seeds", join(args.seeds)},
                                   {"epochs", std::to_string(args.epochs)},
                                   {"lr", fmt(args.lr)},
                                   {"momentum", fmt(args.momentum)},
                                   {"batch", std::to_string(args.batch)},
                                   {"shuffle", "true"},
                                   {"out", out_dir.string()}});
  write_manifest(manifest_path, manifest);

  for (std::uint64_t seed : args.seeds) {
    TrainConfig tc;
    tc.epochs = args.epochs;
    tc.learning_rate = args.lr;
    tc.momentum = args.momentum;
    tc.batch_size = args.batch;
    tc.seed = seed;
    auto [params, record] = train(cfg, tc, samples, sp);

    const std::string stem = args.model + "-seed" + std::to_string(seed);
    save_params(params, out_dir / (stem + ".gfck"));
    write_train_record_csv(out_dir / (stem + ".train.csv"), record);
    std::cout << stem << ": final loss " << record.train_loss.back() << ", val acc "
              << record.val_accuracy.back() << ", " << record.wall_seconds << " s\n";
  }
  finish_manifest(manifest_path);
  return 0;
}

// ---- explain ------------------------------------------------------------------

struct ExplainArgs {
  std::string ckpt;
  std::string data;
  std::vector<int> ids;
  std::string target = "auto";  // auto | 0 | 1 | 2
  double tau = 0.5;
  std::string score_mode = "logit";
  std::string out_dir = "explain-out";
};

int cmd_explain(const ExplainArgs& args) {
  const ModelParams params = load_params(args.ckpt);
  const auto samples = load_dataset(args.data);
  const auto index = by_id(samples);
  if (args.ids.empty()) throw InputError("explain: no sample ids given");
  const ScoreMode mode = parse_score_mode(args.score_mode);
  if (args.target != "auto" && args.target != "0" && args.target != "1" && args.target != "2")
    throw InputError("explain: --class must be auto, 0, 1, or 2");

  const fs::path out_dir = args.out_dir;
  fs::create_directories(out_dir);
  const fs::path manifest_path = out_dir / "explain.manifest";
  auto manifest = manifest_header("explain");
  manifest.insert(manifest.end(), {{"ckpt", args.ckpt},
                                   {"data", args.data},
                                   {"ids", join(args.ids)},
                                   {"class", args.target},
                                   {"tau", fmt(args.tau)},
                                   {"score_mode", args.score_mode},
                                   {"overlay_beta", fmt(kOverlayBeta)},
                                   {"out_dir", out_dir.string()}});
  write_manifest(manifest_path, manifest);

  for (int id : args.ids) {
    auto it = index.find(id);
    if (it == index.end()) throw InputError("explain: sample id " + std::to_string(id) +
                                            " not found in dataset");
    const Sample& s = *it->second;
    const Tensor x = to_tensor(s.image);
    const int target = args.target == "auto" ? predict(params, x) : std::stoi(args.target);
    const Heatmap hm = explain(params, x, target, mode);

    const std::string stem = "id" + std::to_string(id);
    write_pgm(out_dir / (stem + "_input.pgm"), s.image);
    write_pgm(out_dir / (stem + "_heatmap.pgm"), hm.normalized);
    const OverlayChannels ch = render_overlay(s.image, hm.normalized, kOverlayBeta);
    write_ppm(out_dir / (stem + "_overlay.ppm"), ch.r, ch.g, ch.b);
    std::cout << stem << ": class " << target << " (" << kClassNames[target] << ")\n";
  }
  finish_manifest(manifest_path);
  return 0;
}

// ---- evaluate -----------------------------------------------------------------

struct EvaluateArgs {
  std::string data;
  std::string split_file;
  std::vector<std::string> ckpts;
  double tau = 0.5;
  std::string score_mode = "probability";
  std::string fill = "multiplicative";
  int reference = 0;
  int timing_reps = 25;
  std::string out = "report.csv";
  std::string json;
};

int cmd_evaluate(const EvaluateArgs& args) {
  if (args.ckpts.empty()) throw InputError("evaluate: at least one checkpoint required");
  const auto samples = load_dataset(args.data);
  const fs::path split_path = args.split_file.empty() ? args.data + ".split" : args.split_file;
  const DatasetSplit sp = load_split(split_path);

  std::vector<ModelParams> checkpoints;
  checkpoints.reserve(args.ckpts.size());
  for (const std::string& path : args.ckpts) checkpoints.push_back(load_params(path));

  EvalConfig config;
  config.binarize_threshold = args.tau;
  config.run_count = static_cast<int>(args.ckpts.size());
  config.faith_score_mode = parse_score_mode(args.score_mode);
  config.reference_index = args.reference;
  if (args.fill == "multiplicative")
    config.fill = MaskFill::Multiplicative;
  else if (args.fill == "mean")
    config.fill = MaskFill::MeanFill;
  else
    throw InputError("evaluate: --fill must be multiplicative or mean");

  const fs::path out_csv = args.out;
  const fs::path out_json =
      args.json.empty() ? fs::path(args.out).replace_extension(".json") : fs::path(args.json);
  const fs::path manifest_path = args.out + ".manifest";

  ManifestEntries run_meta{{"data", args.data},
                           {"split_file", split_path.string()},
                           {"ckpts", join(args.ckpts)},
                           {"tau", fmt(args.tau)},
                           {"faith_score_mode", args.score_mode},
                           {"gradcam_score_mode", "logit"},
                           {"heatmap_target", "true-class"},
                           {"fill", args.fill},
                           {"reference", std::to_string(args.reference)},
                           {"timing_reps", std::to_string(args.timing_reps)},
                           {"out", out_csv.string()},
                           {"json", out_json.string()}};
  auto manifest = manifest_header("evaluate");
  manifest.insert(manifest.end(), run_meta.begin(), run_meta.end());
  write_manifest(manifest_path, manifest);

  const EvaluationResult result =
      evaluate_checkpoints(checkpoints, samples, sp, config, args.timing_reps);

  write_report_csv(out_csv, result);
  write_report_json(out_json, result, run_meta);
  const fs::path conf_dir = out_csv.parent_path();
  for (const ModelReport& m : result.models)
    write_confusion_csv(
        (conf_dir.empty() ? fs::path(".") : conf_dir) / ("confusion_" + m.label + ".csv"),
        m.confusion);
  finish_manifest(manifest_path);

  print_report_table(std::cout, result);
  std::cout << "report: " << out_csv.string() << "\njson: " << out_json.string() << '\n';
  return 0;
}

// ---- verify ---------------------------------------------------------------------

int cmd_verify(const std::string& fault_op) {
  VerifyOptions options;
  options.inject_fault_op = fault_op;
  const auto checks = run_verification(options);

  std::map<std::string, std::pair<int, int>> by_suite;  // suite -> {passed, total}
  std::vector<const VerifyCheck*> failures;
  for (const VerifyCheck& c : checks) {
    auto& [passed, total] = by_suite[c.suite];
    ++total;
    if (c.passed)
      ++passed;
    else
      failures.push_back(&c);
  }
  for (const auto& [suite, counts] : by_suite)
    std::cout << "suite " << suite << ": " << counts.first << "/" << counts.second
              << " passed\n";
  for (const VerifyCheck* f : failures)
    std::cout << "FAIL [" << f->suite << "] " << f->name << ": " << f->detail << '\n';
  std::cout << (failures.empty() ? "verify: PASS (" : "verify: FAIL (") << checks.size()
            << " checks)\n";
  return failures.empty() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grad-CAM faithfulness audit toolkit"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* cg = app.add_subcommand("generate", "Generate a synthetic phantom dataset");
  cg->add_option("--out", gen.out, "Output GFDS path")->required();
  cg->add_option("--size", gen.size, "Image side length")->capture_default_str();
  cg->add_option("--per-class", gen.per_class, "Samples per class")->capture_default_str();
  cg->add_option("--seed", gen.seed, "Generation and split seed")->capture_default_str();
  cg->add_option("--noise", gen.noise, "Gaussian noise sigma")->capture_default_str();
  cg->add_option("--contrast", gen.contrast, "Lesion/lung intensity contrast")->capture_default_str();

  TrainArgs tr;
  auto* ct = app.add_subcommand("train", "Train one or more seeded models");
  ct->add_option("--data", tr.data, "GFDS dataset path")->required();
  ct->add_option("--split", tr.split_file, "Split file (default <data>.split)");
  ct->add_option("--model", tr.model, "Preset: cnn-a, cnn-b, cnn-dense, tiny-vit")->capture_default_str();
  ct->add_option("--seeds", tr.seeds, "Comma-separated training seeds")
      ->capture_default_str()
      ->delimiter(',');
  ct->add_option("--epochs", tr.epochs, "Training epochs")->capture_default_str();
  ct->add_option("--lr", tr.lr, "Learning rate")->capture_default_str();
  ct->add_option("--momentum", tr.momentum, "SGD momentum")->capture_default_str();
  ct->add_option("--batch", tr.batch, "Mini-batch size")->capture_default_str();
  ct->add_option("--capture", tr.capture, "Override the Grad-CAM capture layer");
  ct->add_option("--out", tr.out, "Output directory")->capture_default_str();

  ExplainArgs ex;
  auto* ce = app.add_subcommand("explain", "Write heatmap images for chosen samples");
  ce->add_option("--ckpt", ex.ckpt, "GFCK checkpoint path")->required();
  ce->add_option("--data", ex.data, "GFDS dataset path")->required();
  ce->add_option("--ids", ex.ids, "Comma-separated sample ids")->required()->delimiter(',');
  ce->add_option("--class", ex.target, "Target class: auto, 0, 1, or 2")->capture_default_str();
  ce->add_option("--tau", ex.tau, "Binarization threshold (recorded in the manifest)")->capture_default_str();
  ce->add_option("--score-mode", ex.score_mode, "Gradient seed: logit or probability")->capture_default_str();
  ce->add_option("--out-dir", ex.out_dir, "Output directory")->capture_default_str();

  EvaluateArgs ev;
  auto* cv = app.add_subcommand("evaluate", "Run the faithfulness audit and write reports");
  cv->add_option("--data", ev.data, "GFDS dataset path")->required();
  cv->add_option("--split", ev.split_file, "Split file (default <data>.split)");
  cv->add_option("--ckpts", ev.ckpts, "Comma-separated checkpoint paths")
      ->required()
      ->delimiter(',');
  cv->add_option("--tau", ev.tau, "Binarization threshold")->capture_default_str();
  cv->add_option("--score-mode", ev.score_mode,
                 "Perturbation score: probability or logit")->capture_default_str();
  cv->add_option("--fill", ev.fill, "Masking fill: multiplicative or mean")->capture_default_str();
  cv->add_option("--ref", ev.reference, "Consistency reference index within each group")->capture_default_str();
  cv->add_option("--timing-reps", ev.timing_reps,
                 "Inference timing repetitions (0 disables timing)")->capture_default_str();
  cv->add_option("--out", ev.out, "Report CSV path")->capture_default_str();
  cv->add_option("--json", ev.json, "Report JSON path (default: CSV with .json)");

  std::string fault_op;
  auto* cf = app.add_subcommand("verify", "Run the built-in verification suites");
  cf->add_option("--inject-gradient-fault", fault_op,
                 "Corrupt the named op's gradient check (failure-path test hook)")
      ->group("");  // hidden

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (cg->parsed()) return cmd_generate(gen);
    if (ct->parsed()) return cmd_train(tr);
    if (ce->parsed()) return cmd_explain(ex);
    if (cv->parsed()) return cmd_evaluate(ev);
    if (cf->parsed()) return cmd_verify(fault_op);
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const TrainingError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const Error& e) {  // shape / config / input errors
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
