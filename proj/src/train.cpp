#include "gradfaith/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <unordered_map>

#include "gradfaith/rng.hpp"

namespace gradfaith {

namespace {

void check_config(const TrainConfig& tc) {
  if (tc.epochs < 1) throw InputError("train: epochs must be >= 1");
  if (tc.batch_size < 1) throw InputError("train: batch size must be >= 1");
  if (tc.learning_rate < 0.0) throw InputError("train: learning rate must be >= 0");
  if (tc.momentum < 0.0 || tc.momentum >= 1.0) throw InputError("train: momentum must lie in [0,1)");
}

std::unordered_map<int, std::size_t> index_by_id(const std::vector<Sample>& dataset) {
  std::unordered_map<int, std::size_t> map;
  for (std::size_t i = 0; i < dataset.size(); ++i) map.emplace(dataset[i].id, i);
  return map;
}

const Sample& sample_for(const std::vector<Sample>& dataset,
                         const std::unordered_map<int, std::size_t>& index, int id) {
  auto it = index.find(id);
  if (it == index.end()) throw InputError("unknown sample id " + std::to_string(id));
  return dataset[it->second];
}

}  // namespace

void sgd_step(Array& theta, Array& velocity, const Array& grad, double lr, double momentum) {
  velocity = momentum * velocity + grad;
  theta -= lr * velocity;
}

std::pair<ModelParams, TrainRecord> train(const ModelConfig& mc, const TrainConfig& tc,
                                          const std::vector<Sample>& dataset,
                                          const DatasetSplit& split) {
  check_config(tc);
  if (dataset.empty()) throw InputError("train: empty dataset");
  if (split.train.empty()) throw InputError("train: empty training split");
  const auto index = index_by_id(dataset);

  ModelParams params = init_params(mc, tc.seed);
  std::vector<Array> velocity;
  velocity.reserve(params.tensors.size());
  for (const NamedTensor& t : params.tensors) velocity.push_back(Array::Zero(t.value.size()));

  TrainRecord record;
  const Rng shuffle_root(tc.seed);
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<int> order = split.train;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    if (tc.shuffle) {
      // Epoch stream forked from (seed, epoch) so the order does not depend
      // on earlier epochs' draws.
      Rng rng = shuffle_root.fork(static_cast<std::uint64_t>(epoch));
      order = split.train;
      for (std::size_t i = order.size() - 1; i > 0; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i)));
        std::swap(order[i], order[j]);
      }
    }

    double loss_sum = 0.0;
    int batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size, ++batch_index) {
      const std::size_t stop = std::min(order.size(), start + tc.batch_size);
      const int batch = static_cast<int>(stop - start);

      Tape tape(true);
      auto bound = bind_params(tape, params);
      Tensor total;
      for (std::size_t i = start; i < stop; ++i) {
        const Sample& s = sample_for(dataset, index, order[i]);
        Tensor x = tape.leaf(to_tensor(s.image));
        Tensor logits = run_layers(tape, mc, bound, x, nullptr);
        Tensor loss = cross_entropy(tape, logits, s.label);
        total = i == start ? loss : add(tape, total, loss);
      }
      Tensor batch_loss = mul_elementwise(tape, total, Tensor::scalar(1.0 / batch));
      const double loss_value = batch_loss.item();
      if (!std::isfinite(loss_value))
        throw TrainingError("training diverged: loss is not finite at epoch " +
                            std::to_string(epoch + 1) + ", batch " + std::to_string(batch_index) +
                            " (learning rate too high?)");
      loss_sum += loss_value * batch;

      std::vector<int> wanted;
      wanted.reserve(bound.size());
      for (const Tensor& b : bound) wanted.push_back(b.node);
      GradientSet grads = tape.backward(batch_loss, wanted);
      for (std::size_t tI = 0; tI < params.tensors.size(); ++tI)
        sgd_step(params.tensors[tI].value.values, velocity[tI], grads.at(bound[tI]).values,
                 tc.learning_rate, tc.momentum);
    }

    record.train_loss.push_back(loss_sum / double(order.size()));
    record.val_accuracy.push_back(
        split.val.empty() ? 0.0 : evaluate_accuracy(params, dataset, split.val));
  }

  record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  record.final_epoch = tc.epochs;
  return {std::move(params), std::move(record)};
}

double evaluate_accuracy(const ModelParams& params, const std::vector<Sample>& dataset,
                         std::span<const int> ids) {
  if (ids.empty()) throw ContractError("evaluate_accuracy: empty id list");
  const auto index = index_by_id(dataset);
  int correct = 0;
  for (int id : ids) {
    const Sample& s = sample_for(dataset, index, id);
    if (predict(params, to_tensor(s.image)) == s.label) ++correct;
  }
  return double(correct) / double(ids.size());
}

double measure_inference_ms(const ModelParams& params, const std::vector<Sample>& dataset,
                            std::span<const int> ids, int min_reps) {
  if (ids.empty()) throw ContractError("measure_inference_ms: empty id list");
  const auto index = index_by_id(dataset);
  const int reps = std::max(min_reps, 20);
  std::vector<double> ms;
  ms.reserve(static_cast<std::size_t>(reps));
  for (int r = 0; r < reps; ++r) {
    const Sample& s = sample_for(dataset, index, ids[static_cast<std::size_t>(r) % ids.size()]);
    const Tensor x = to_tensor(s.image);
    const auto t0 = std::chrono::steady_clock::now();
    forward(params, x);
    const auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(ms.begin(), ms.end());
  return ms[ms.size() / 2];
}

std::vector<ModelParams> train_ensemble(const ModelConfig& mc, const TrainConfig& tc,
                                        const std::vector<Sample>& dataset,
                                        const DatasetSplit& split,
                                        std::span<const std::uint64_t> seeds,
                                        std::vector<TrainRecord>* records) {
  if (seeds.size() < 2) throw ContractError("train_ensemble: needs at least 2 seeds");
  for (std::size_t i = 0; i < seeds.size(); ++i)
    for (std::size_t j = i + 1; j < seeds.size(); ++j)
      if (seeds[i] == seeds[j])
        throw InputError("train_ensemble: duplicate seed " + std::to_string(seeds[i]));

  std::vector<ModelParams> out;
  out.reserve(seeds.size());
  for (std::uint64_t seed : seeds) {
    TrainConfig run = tc;
    run.seed = seed;
    auto [params, record] = train(mc, run, dataset, split);
    out.push_back(std::move(params));
    if (records) records->push_back(std::move(record));
  }
  return out;
}

}  // namespace gradfaith
