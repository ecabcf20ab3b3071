#pragma once

#include <span>
#include <utility>
#include <vector>

#include "gradfaith/model.hpp"
#include "gradfaith/phantom.hpp"

namespace gradfaith {

struct TrainConfig {
  int epochs = 50;
  int batch_size = 16;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  bool shuffle = true;
};

struct TrainRecord {
  std::vector<double> train_loss;    // per-epoch mean over training samples
  std::vector<double> val_accuracy;  // per-epoch, on the validation split
  double wall_seconds = 0.0;
  int final_epoch = 0;
};

/// One momentum-SGD update on a flat parameter block:
/// v <- momentum*v + grad; theta <- theta - lr*v.
void sgd_step(Array& theta, Array& velocity, const Array& grad, double lr, double momentum);

/// SGD with momentum on the mini-batch mean cross-entropy. Init and the
/// per-epoch shuffle both derive from the run seed, so the result is a
/// pure function of (model_config, train_config, dataset, split).
/// Diverging to NaN aborts with the epoch and batch index.
std::pair<ModelParams, TrainRecord> train(const ModelConfig&, const TrainConfig&,
                                          const std::vector<Sample>& dataset,
                                          const DatasetSplit&);

double evaluate_accuracy(const ModelParams&, const std::vector<Sample>& dataset,
                         std::span<const int> ids);

/// Median wall-clock milliseconds of a single-image forward pass over at
/// least `min_reps` repetitions.
double measure_inference_ms(const ModelParams&, const std::vector<Sample>& dataset,
                            std::span<const int> ids, int min_reps = 20);

/// Independent train() per seed; result order matches seed order.
std::vector<ModelParams> train_ensemble(const ModelConfig&, const TrainConfig&,
                                        const std::vector<Sample>& dataset, const DatasetSplit&,
                                        std::span<const std::uint64_t> seeds,
                                        std::vector<TrainRecord>* records = nullptr);

}  // namespace gradfaith
