#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gradfaith/report.hpp"
#include "gradfaith/train.hpp"
#include "testutil.hpp"

using namespace gradfaith;

namespace {

struct TinyData {
  std::vector<Sample> samples;
  DatasetSplit split_;
};

TinyData tiny_data(int per_class, std::uint64_t seed) {
  TinyData d;
  d.samples = generate(testutil::tiny_phantom(per_class), seed);
  d.split_ = split(d.samples, seed);
  return d;
}

}  // namespace

TEST_CASE("one sgd step on a quadratic matches the closed form") {
  const double w0 = -0.4, lr = 0.05, mu = 0.9;
  Array theta = Array::Constant(1, w0), velocity = Array::Zero(1);
  // f(w) = w^2, f'(w) = 2w
  Array grad = Array::Constant(1, 2.0 * w0);
  sgd_step(theta, velocity, grad, lr, mu);
  CHECK(theta[0] == doctest::Approx(w0 - lr * 2.0 * w0).epsilon(1e-15));
  const double v1 = 2.0 * w0;
  Array grad2 = Array::Constant(1, 2.0 * theta[0]);
  const double expected = theta[0] - lr * (mu * v1 + grad2[0]);
  sgd_step(theta, velocity, grad2, lr, mu);
  CHECK(theta[0] == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("training is bitwise deterministic") {
  auto d = tiny_data(4, 21);
  auto cfg = preset_config("cnn-a", {1, 32, 32});
  TrainConfig tc;
  tc.epochs = 3;
  tc.seed = 9;
  auto [p1, r1] = train(cfg, tc, d.samples, d.split_);
  auto [p2, r2] = train(cfg, tc, d.samples, d.split_);
  for (std::size_t i = 0; i < p1.tensors.size(); ++i)
    CHECK((p1.tensors[i].value.values == p2.tensors[i].value.values).all());
  CHECK(r1.train_loss == r2.train_loss);
  CHECK(r1.val_accuracy == r2.val_accuracy);
  CHECK(r1.final_epoch == 3);
  CHECK(r1.train_loss.size() == 3);
  CHECK(r1.val_accuracy.size() == 3);
  CHECK(r1.wall_seconds > 0.0);
}

TEST_CASE("zero learning rate leaves parameters at initialization") {
  auto d = tiny_data(4, 22);
  auto cfg = preset_config("cnn-a", {1, 32, 32});
  TrainConfig tc;
  tc.epochs = 2;
  tc.learning_rate = 0.0;
  tc.seed = 11;
  auto [params, record] = train(cfg, tc, d.samples, d.split_);
  ModelParams fresh = init_params(cfg, 11);
  for (std::size_t i = 0; i < params.tensors.size(); ++i)
    CHECK((params.tensors[i].value.values == fresh.tensors[i].value.values).all());
}

TEST_CASE("a single sample is memorized in 200 epochs") {
  auto samples = generate(testutil::tiny_phantom(1), 23);
  DatasetSplit sp;
  sp.train = {samples[2].id};
  auto cfg = preset_config("cnn-a", {1, 32, 32});
  TrainConfig tc;
  tc.epochs = 200;
  tc.batch_size = 1;
  tc.seed = 7;
  auto [params, record] = train(cfg, tc, samples, sp);
  CHECK(record.train_loss.back() < 0.01);
  CHECK(evaluate_accuracy(params, samples, sp.train) == 1.0);
}

TEST_CASE("loss falls over training for every preset") {
  auto d = tiny_data(6, 24);
  for (const std::string& preset : preset_names()) {
    auto cfg = preset_config(preset, {1, 32, 32});
    TrainConfig tc;
    tc.epochs = 12;
    tc.seed = 3;
    auto [params, record] = train(cfg, tc, d.samples, d.split_);
    INFO("preset ", preset);
    CHECK(record.train_loss.back() < record.train_loss.front());
  }
}

TEST_CASE("a non-finite loss aborts with the epoch and batch index") {
  auto d = tiny_data(4, 25);
  // Poison one training image; the NaN reaches the loss in the batch that
  // contains it.
  for (Sample& s : d.samples)
    if (s.id == d.split_.train.front()) s.image(3, 3) = std::nan("");
  auto cfg = preset_config("cnn-a", {1, 32, 32});
  TrainConfig tc;
  tc.epochs = 2;
  tc.seed = 2;
  try {
    train(cfg, tc, d.samples, d.split_);
    FAIL("non-finite loss did not abort");
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch") != std::string::npos);
    CHECK(msg.find("batch") != std::string::npos);
  }
}

TEST_CASE("invalid train configs are rejected") {
  auto d = tiny_data(4, 26);
  auto cfg = preset_config("cnn-a", {1, 32, 32});
  TrainConfig tc;
  tc.epochs = 0;
  CHECK_THROWS_AS(train(cfg, tc, d.samples, d.split_), InputError);
  tc.epochs = 1;
  tc.batch_size = 0;
  CHECK_THROWS_AS(train(cfg, tc, d.samples, d.split_), InputError);
  tc.batch_size = 1;
  tc.momentum = 1.0;
  CHECK_THROWS_AS(train(cfg, tc, d.samples, d.split_), InputError);
}

TEST_CASE("zeroed head scores exactly the class-0 share on a balanced split") {
  auto d = tiny_data(5, 27);
  auto cfg = preset_config("cnn-a", {1, 32, 32});
  ModelParams p = init_params(cfg, 1);
  p.tensors[p.tensors.size() - 2].value.values.setZero();
  p.tensors[p.tensors.size() - 1].value.values.setZero();
  // Ties resolve to class 0, so accuracy equals the fraction of class-0 ids.
  std::vector<int> ids;
  for (const Sample& s : d.samples) ids.push_back(s.id);
  int zeros = 0;
  for (const Sample& s : d.samples)
    if (s.label == 0) ++zeros;
  CHECK(evaluate_accuracy(p, d.samples, ids) ==
        doctest::Approx(double(zeros) / double(ids.size())).epsilon(1e-12));
}

TEST_CASE("inference timing is positive and needs ids") {
  auto d = tiny_data(4, 28);
  auto cfg = preset_config("cnn-a", {1, 32, 32});
  ModelParams p = init_params(cfg, 1);
  CHECK(measure_inference_ms(p, d.samples, d.split_.test) > 0.0);
  CHECK_THROWS_AS(measure_inference_ms(p, d.samples, {}), ContractError);
  CHECK_THROWS_AS(evaluate_accuracy(p, d.samples, {}), ContractError);
}

TEST_CASE("ensembles are independent per-seed runs in seed order") {
  auto d = tiny_data(4, 29);
  auto cfg = preset_config("cnn-a", {1, 32, 32});
  TrainConfig tc;
  tc.epochs = 2;

  const std::vector<std::uint64_t> fwd{1, 2}, rev{2, 1};
  auto a = train_ensemble(cfg, tc, d.samples, d.split_, fwd);
  auto b = train_ensemble(cfg, tc, d.samples, d.split_, rev);
  REQUIRE(a.size() == 2);
  REQUIRE(b.size() == 2);

  bool differ = false;
  for (std::size_t i = 0; i < a[0].tensors.size(); ++i)
    differ = differ || (a[0].tensors[i].value.values != a[1].tensors[i].value.values).any();
  CHECK(differ);

  // running [1,2] then [2,1] returns the same members, swapped
  for (std::size_t i = 0; i < a[0].tensors.size(); ++i) {
    CHECK((a[0].tensors[i].value.values == b[1].tensors[i].value.values).all());
    CHECK((a[1].tensors[i].value.values == b[0].tensors[i].value.values).all());
  }

  // each member reproduces its solo run bitwise
  TrainConfig solo = tc;
  solo.seed = 1;
  auto [one, rec] = train(cfg, solo, d.samples, d.split_);
  for (std::size_t i = 0; i < one.tensors.size(); ++i)
    CHECK((one.tensors[i].value.values == a[0].tensors[i].value.values).all());

  const std::vector<std::uint64_t> dup{3, 3};
  CHECK_THROWS_AS(train_ensemble(cfg, tc, d.samples, d.split_, dup), InputError);
  const std::vector<std::uint64_t> single{3};
  CHECK_THROWS_AS(train_ensemble(cfg, tc, d.samples, d.split_, single), ContractError);
}

TEST_CASE("train record csv has the documented columns") {
  auto d = tiny_data(4, 30);
  auto cfg = preset_config("cnn-a", {1, 32, 32});
  TrainConfig tc;
  tc.epochs = 2;
  auto [params, record] = train(cfg, tc, d.samples, d.split_);

  testutil::TempDir dir("train-record");
  const auto path = dir.path / "record.csv";
  write_train_record_csv(path, record);
  const std::string csv = testutil::read_file(path);
  CHECK(csv.find("epoch,train_loss,val_accuracy\n1,") == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);  // header + 2 epochs
}
