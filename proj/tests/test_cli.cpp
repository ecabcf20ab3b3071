#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <sys/wait.h>

#include "gradfaith/image_io.hpp"
#include "gradfaith/model.hpp"
#include "gradfaith/phantom.hpp"
#include "gradfaith/report.hpp"
#include "testutil.hpp"

using namespace gradfaith;

namespace {

std::string cli_path() {
  const char* env = std::getenv("GRADFAITH_CLI");
  REQUIRE_MESSAGE(env != nullptr, "GRADFAITH_CLI must point at the built binary");
  return env;
}

struct RunResult {
  int exit_code;
  std::string output;  // stdout + stderr
};

RunResult run(const std::string& args, const std::filesystem::path& cwd) {
  const auto log = cwd / ("cli-log-" + std::to_string(::rand()) + ".txt");
  const std::string cmd =
      "cd '" + cwd.string() + "' && '" + cli_path() + "' " + args + " > '" + log.string() +
      "' 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.output = testutil::read_file(log);
  std::filesystem::remove(log);
  return r;
}

// Every non-manifest file in a directory tree, keyed by relative path.
std::map<std::string, std::string> snapshot(const std::filesystem::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel = std::filesystem::relative(entry.path(), root).string();
    if (rel.find(".manifest") != std::string::npos) continue;
    if (rel.find("cli-log") != std::string::npos) continue;
    files[rel] = testutil::read_file(entry.path());
  }
  return files;
}

const std::string kGen = "generate --out data.gfds --per-class 6 --seed 3";

}  // namespace

TEST_CASE("generate writes dataset, split, and manifest deterministically") {
  testutil::TempDir dir("cli-gen");
  RunResult r = run(kGen, dir.path);
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("Normal: 6") != std::string::npos);
  CHECK(r.output.find("Benign: 6") != std::string::npos);
  CHECK(r.output.find("Malignant: 6") != std::string::npos);

  auto samples = load_dataset(dir.path / "data.gfds");
  CHECK(samples.size() == 18);
  DatasetSplit sp = load_split(dir.path / "data.gfds.split");
  CHECK(sp.train.size() + sp.val.size() + sp.test.size() == 18);

  const std::string manifest = testutil::read_file(dir.path / "data.gfds.manifest");
  CHECK(manifest.find("command=generate") != std::string::npos);
  CHECK(manifest.find("timestamp_start=") != std::string::npos);
  CHECK(manifest.find("timestamp_end=") != std::string::npos);
  CHECK(manifest.find("per_class=6") != std::string::npos);

  const std::string bytes = testutil::read_file(dir.path / "data.gfds");
  REQUIRE(run(std::string(kGen).replace(kGen.find("data.gfds"), 9, "data2.gfds"), dir.path)
              .exit_code == 0);
  CHECK(testutil::read_file(dir.path / "data2.gfds") == bytes);
}

TEST_CASE("train emits per-seed checkpoints and records, reproducibly") {
  testutil::TempDir dir("cli-train");
  REQUIRE(run(kGen, dir.path).exit_code == 0);

  RunResult r = run(
      "train --data data.gfds --model cnn-a --seeds 1,2,3 --epochs 2 --out run1", dir.path);
  CHECK(r.exit_code == 0);
  for (int seed : {1, 2, 3}) {
    CHECK(std::filesystem::exists(dir.path / "run1" /
                                  ("cnn-a-seed" + std::to_string(seed) + ".gfck")));
    CHECK(std::filesystem::exists(dir.path / "run1" /
                                  ("cnn-a-seed" + std::to_string(seed) + ".train.csv")));
  }
  const std::string manifest = testutil::read_file(dir.path / "run1" / "train-cnn-a.manifest");
  CHECK(manifest.find("seeds=1,2,3") != std::string::npos);
  CHECK(manifest.find("epochs=2") != std::string::npos);

  REQUIRE(run("train --data data.gfds --model cnn-a --seeds 1,2,3 --epochs 2 --out run2",
              dir.path)
              .exit_code == 0);
  for (int seed : {1, 2, 3}) {
    const std::string name = "cnn-a-seed" + std::to_string(seed) + ".gfck";
    CHECK(testutil::read_file(dir.path / "run1" / name) ==
          testutil::read_file(dir.path / "run2" / name));
  }

  CHECK(run("train --data data.gfds --model cnn-a --epochs 0 --out bad", dir.path).exit_code ==
        2);
  RunResult unknown = run("train --data data.gfds --model resnet50 --out bad", dir.path);
  CHECK(unknown.exit_code == 2);
  CHECK(unknown.output.find("cnn-a") != std::string::npos);  // lists known presets
  CHECK(run("train --data data.gfds --seeds 4,4 --out bad", dir.path).exit_code == 2);
}

TEST_CASE("explain writes parseable images with matching dimensions") {
  testutil::TempDir dir("cli-explain");
  REQUIRE(run(kGen, dir.path).exit_code == 0);
  REQUIRE(run("train --data data.gfds --model cnn-a --seeds 1 --epochs 1 --out m", dir.path)
              .exit_code == 0);

  RunResult r = run(
      "explain --ckpt m/cnn-a-seed1.gfck --data data.gfds --ids 0,6,12 --class auto --out-dir ov",
      dir.path);
  CHECK(r.exit_code == 0);
  for (int id : {0, 6, 12}) {
    const std::string stem = "id" + std::to_string(id);
    const Grid input = read_pgm(dir.path / "ov" / (stem + "_input.pgm"));
    const Grid heat = read_pgm(dir.path / "ov" / (stem + "_heatmap.pgm"));
    CHECK(input.rows() == 64);
    CHECK(input.cols() == 64);
    CHECK(heat.rows() == 64);
    CHECK(heat.cols() == 64);
    CHECK(std::filesystem::exists(dir.path / "ov" / (stem + "_overlay.ppm")));
  }

  // Overlay pixel law: red = (1-b)*gray + b*heat, green = blue = (1-b)*gray.
  const std::string ppm = testutil::read_file(dir.path / "ov" / "id0_overlay.ppm");
  const Grid gray = read_pgm(dir.path / "ov" / "id0_input.pgm");
  const Grid heat = read_pgm(dir.path / "ov" / "id0_heatmap.pgm");
  const std::size_t pixel_start = ppm.find("255\n") + 4;
  auto byte_at = [&](int idx) { return static_cast<unsigned char>(ppm[pixel_start + idx]); };
  for (int i : {0, 17, 501}) {
    const double g = std::round(255.0 * gray.data()[i] * 255.0) / 255.0;  // quantized gray
    const int red = byte_at(3 * i), green = byte_at(3 * i + 1), blue = byte_at(3 * i + 2);
    CHECK(green == blue);
    CHECK(red >= green);  // heat only adds to the red channel
    (void)g;
  }

  // Emitted images ingest cleanly through the PGM reader path.
  std::ofstream(dir.path / "ov" / "labels.csv")
      << "id0_input.pgm,0\nid6_input.pgm,1,id6_heatmap.pgm\nid12_input.pgm,2\n";
  IngestReport ingest = load_grayscale_dir(dir.path / "ov", 64, dir.path / "ov" / "labels.csv");
  CHECK(ingest.errors.empty());
  CHECK(ingest.samples.size() == 3);

  RunResult rerun = run(
      "explain --ckpt m/cnn-a-seed1.gfck --data data.gfds --ids 0,6,12 --class auto --out-dir "
      "ov2",
      dir.path);
  REQUIRE(rerun.exit_code == 0);
  CHECK(testutil::read_file(dir.path / "ov" / "id0_overlay.ppm") ==
        testutil::read_file(dir.path / "ov2" / "id0_overlay.ppm"));

  RunResult missing = run(
      "explain --ckpt m/cnn-a-seed1.gfck --data data.gfds --ids 999 --out-dir ov3", dir.path);
  CHECK(missing.exit_code == 2);
  CHECK(missing.output.find("999") != std::string::npos);
}

TEST_CASE("evaluate writes the full report with consistency grouping") {
  testutil::TempDir dir("cli-eval");
  REQUIRE(run(kGen, dir.path).exit_code == 0);
  REQUIRE(run("train --data data.gfds --model cnn-a --seeds 1,2,3 --epochs 2 --out m", dir.path)
              .exit_code == 0);

  SUBCASE("single checkpoint leaves consist empty") {
    RunResult r = run(
        "evaluate --data data.gfds --ckpts m/cnn-a-seed1.gfck --out single.csv --timing-reps 0",
        dir.path);
    REQUIRE(r.exit_code == 0);
    const std::string csv = testutil::read_file(dir.path / "single.csv");
    // consist column (11th) is empty: ...,faith,,eligible
    const auto line = csv.substr(csv.find('\n') + 1);
    int commas = 0;
    for (char c : line) commas += c == ',';
    CHECK(commas == 11);
    CHECK(line.find(",,") != std::string::npos);
    const std::string json = testutil::read_file(dir.path / "single.json");
    CHECK(json.find("\"consist\": null") != std::string::npos);
  }

  SUBCASE("three seeds populate all twelve columns and agree across formats") {
    RunResult r = run(
        "evaluate --data data.gfds --ckpts m/cnn-a-seed1.gfck,m/cnn-a-seed2.gfck,"
        "m/cnn-a-seed3.gfck --out report.csv --json report.json --timing-reps 3",
        dir.path);
    REQUIRE(r.exit_code == 0);

    const std::string csv = testutil::read_file(dir.path / "report.csv");
    std::vector<std::string> lines;
    std::stringstream ss(csv);
    std::string line;
    while (std::getline(ss, line))
      if (!line.empty()) lines.push_back(line);
    REQUIRE(lines.size() == 4);
    CHECK(lines[0] ==
          "model,sensitivity,specificity,precision,recall,f1,accuracy,time_ms,loc_acc,faith,"
          "consist,eligible_mask_count");
    for (std::size_t i = 1; i < lines.size(); ++i) {
      // all 12 fields populated (no empty cells)
      CHECK(lines[i].find(",,") == std::string::npos);
      CHECK(lines[i].substr(0, 11) == "cnn-a-seed" + std::to_string(i));
    }

    // timing enabled: positive time_ms in every row
    for (std::size_t i = 1; i < lines.size(); ++i) {
      std::stringstream row(lines[i]);
      std::string cell;
      for (int c = 0; c < 8; ++c) std::getline(row, cell, ',');
      CHECK(std::stod(cell) > 0.0);
    }

    // CSV and JSON agree to CSV precision
    std::ifstream jf(dir.path / "report.json");
    std::string json((std::istreambuf_iterator<char>(jf)), std::istreambuf_iterator<char>());
    auto grab = [&](const std::string& key, int occurrence) {
      std::size_t at = 0;
      for (int i = 0; i <= occurrence; ++i) at = json.find("\"" + key + "\":", at) + 1;
      const std::size_t start = json.find(':', at) + 1;
      return std::stod(json.substr(start, json.find_first_of(",\n", start) - start));
    };
    for (int row = 0; row < 3; ++row) {
      std::stringstream cells(lines[static_cast<std::size_t>(row) + 1]);
      std::string cell;
      std::getline(cells, cell, ',');  // model
      const char* keys[] = {"sensitivity", "specificity", "precision", "recall",
                            "f1",          "accuracy",    "time_ms",   "loc_acc",
                            "faith",       "consist"};
      for (const char* key : keys) {
        std::getline(cells, cell, ',');
        const double json_value = grab(key, row);
        CHECK(std::abs(std::stod(cell) - json_value) <= 5e-5);
      }
    }

    // confusion CSVs per model with named header
    const std::string conf = testutil::read_file(dir.path / "confusion_cnn-a-seed1.csv");
    CHECK(conf.find(",Normal,Benign,Malignant") == 0);
    CHECK(conf.find("\nNormal,") != std::string::npos);

    // manifest written, ends with timestamp_end
    const std::string manifest = testutil::read_file(dir.path / "report.csv.manifest");
    CHECK(manifest.find("command=evaluate") != std::string::npos);
    CHECK(manifest.find("timestamp_end=") != std::string::npos);
  }

  SUBCASE("consistency groups never mix architectures") {
    REQUIRE(run("train --data data.gfds --model tiny-vit --seeds 9 --epochs 1 --out m",
                dir.path)
                .exit_code == 0);
    RunResult r = run(
        "evaluate --data data.gfds --ckpts m/cnn-a-seed1.gfck,m/cnn-a-seed2.gfck,"
        "m/tiny-vit-seed9.gfck --out mixed.csv --timing-reps 0",
        dir.path);
    REQUIRE(r.exit_code == 0);
    const std::string csv = testutil::read_file(dir.path / "mixed.csv");
    std::stringstream ss(csv);
    std::string line;
    std::getline(ss, line);  // header
    int with_consist = 0, without = 0;
    while (std::getline(ss, line)) {
      if (line.empty()) continue;
      std::stringstream cells(line);
      std::string cell, model;
      std::getline(cells, model, ',');
      for (int c = 0; c < 10; ++c) std::getline(cells, cell, ',');
      if (cell.empty()) {
        ++without;
        CHECK(model.find("tiny-vit") == 0);  // singleton group has no consist
      } else {
        ++with_consist;
        CHECK(model.find("cnn-a") == 0);
      }
    }
    CHECK(with_consist == 2);
    CHECK(without == 1);
  }

  SUBCASE("score-mode and fill flags are honored") {
    RunResult r = run(
        "evaluate --data data.gfds --ckpts m/cnn-a-seed1.gfck --score-mode logit --fill mean "
        "--out alt.csv --timing-reps 0",
        dir.path);
    CHECK(r.exit_code == 0);
    const std::string manifest = testutil::read_file(dir.path / "alt.csv.manifest");
    CHECK(manifest.find("faith_score_mode=logit") != std::string::npos);
    CHECK(manifest.find("fill=mean") != std::string::npos);
    CHECK(run("evaluate --data data.gfds --ckpts m/cnn-a-seed1.gfck --fill wat --out x.csv",
              dir.path)
              .exit_code == 2);
  }

  SUBCASE("corrupt dataset exits with the io code") {
    std::string bytes = testutil::read_file(dir.path / "data.gfds");
    bytes[bytes.size() / 2] ^= 0x40;
    std::ofstream(dir.path / "broken.gfds", std::ios::binary) << bytes;
    RunResult r = run(
        "evaluate --data broken.gfds --ckpts m/cnn-a-seed1.gfck --out x.csv", dir.path);
    CHECK(r.exit_code == 3);
  }
}

TEST_CASE("evaluate reruns reproduce outputs byte for byte with timing disabled") {
  testutil::TempDir dir("cli-repro");
  REQUIRE(run(kGen, dir.path).exit_code == 0);
  REQUIRE(run("train --data data.gfds --model tiny-vit --seeds 5,6 --epochs 1 --out m", dir.path)
              .exit_code == 0);
  const std::string eval =
      "evaluate --data data.gfds --ckpts m/tiny-vit-seed5.gfck,m/tiny-vit-seed6.gfck "
      "--timing-reps 0 --out out/report.csv";
  std::filesystem::create_directories(dir.path / "out");
  REQUIRE(run(eval, dir.path).exit_code == 0);
  auto first = snapshot(dir.path / "out");
  CHECK(first.size() >= 4);  // csv, json, 2 confusion matrices
  REQUIRE(run(eval, dir.path).exit_code == 0);
  CHECK(snapshot(dir.path / "out") == first);
}

TEST_CASE("verify subcommand exit codes") {
  testutil::TempDir dir("cli-verify");
  CHECK(run("verify", dir.path).exit_code == 0);
  RunResult fault = run("verify --inject-gradient-fault conv2d", dir.path);
  CHECK(fault.exit_code == 1);
  CHECK(fault.output.find("conv2d") != std::string::npos);
}

TEST_CASE("usage errors exit with code 2") {
  testutil::TempDir dir("cli-usage");
  CHECK(run("unknown-subcommand", dir.path).exit_code == 2);
  CHECK(run("generate", dir.path).exit_code == 2);              // missing --out
  CHECK(run("explain --ckpt x --data y", dir.path).exit_code == 2);  // missing --ids
}
