#pragma once

#include <string>

#include "gradfaith/model.hpp"
#include "gradfaith/tensor.hpp"

namespace gradfaith {

// Row-major 2-D grid; shared by heatmaps, images, and masks.
using Grid = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Which model output seeds the class-score gradient.
enum class ScoreMode { Logit, Probability };

std::string score_mode_name(ScoreMode);
ScoreMode parse_score_mode(const std::string&);  // "logit" | "probability"

/// Per-channel weights: the spatial mean of d(score_c)/d(activation_k).
struct ChannelWeights {
  Eigen::ArrayXd alpha;  // length D
  int target_class;
};

struct Heatmap {
  Grid raw;         // H'xW', nonnegative
  Grid normalized;  // HxW in [0,1]; all zeros when raw is constant
  int target_class = 0;
  std::string capture_layer;
  std::uint64_t model_seed = 0;
  ScoreMode score_mode = ScoreMode::Logit;
};

/// alpha_k = mean over spatial positions of d(score_c)/dA_k, read from the
/// trace's live tape. Throws ContractError if the tape is gone.
ChannelWeights channel_weights(const ForwardTrace&, int target_class, ScoreMode);

/// ReLU(sum_k alpha_k * A_k), elementwise over the activation grid.
Grid raw_map(const ChannelWeights&, const Tensor& activation);

/// Corner-aligned bilinear interpolation to (out_h, out_w); upsampling only.
Grid upsample_bilinear(const Grid&, int out_h, int out_w);

/// (v - min) / (max - min); an all-constant map collapses to all zeros.
Grid normalize_minmax(const Grid&);

/// Full pipeline: forward with capture, channel weights, weighted map,
/// upsample to the input resolution, min-max normalize.
Heatmap explain(const ModelParams&, const Tensor& x, int target_class,
                ScoreMode mode = ScoreMode::Logit);

}  // namespace gradfaith
