#include "gradfaith/gradcam.hpp"

#include <algorithm>
#include <cmath>

namespace gradfaith {

std::string score_mode_name(ScoreMode m) {
  return m == ScoreMode::Logit ? "logit" : "probability";
}

ScoreMode parse_score_mode(const std::string& s) {
  if (s == "logit") return ScoreMode::Logit;
  if (s == "probability") return ScoreMode::Probability;
  throw InputError("unknown score mode '" + s + "' (expected logit or probability)");
}

ChannelWeights channel_weights(const ForwardTrace& trace, int target_class, ScoreMode mode) {
  if (!trace.tape) throw ContractError("channel_weights: trace has no live tape");
  if (trace.activation.rank() != 3)
    throw ContractError("channel_weights: captured activation must be [D,H',W'], got " +
                        shape_str(trace.activation.shape));
  const int classes = trace.logits.shape.at(0);
  if (target_class < 0 || target_class >= classes)
    throw InputError("target class " + std::to_string(target_class) + " out of range for K=" +
                     std::to_string(classes));

  Tape& tape = *trace.tape;
  Tensor score = mode == ScoreMode::Logit
                     ? pick(tape, trace.logits, target_class)
                     : pick(tape, softmax(tape, trace.logits), target_class);
  GradientSet grads = tape.backward(score, {trace.activation.node});
  const Tensor& g = grads.at(trace.activation);

  const int d = g.shape[0];
  const Eigen::Index hw = static_cast<Eigen::Index>(g.shape[1]) * g.shape[2];
  ChannelWeights w{Eigen::ArrayXd(d), target_class};
  for (int k = 0; k < d; ++k) w.alpha[k] = g.values.segment(k * hw, hw).mean();
  return w;
}

Grid raw_map(const ChannelWeights& w, const Tensor& activation) {
  if (activation.rank() != 3)
    throw ShapeError("raw_map: activation must be [D,H',W'], got " + shape_str(activation.shape));
  const int d = activation.shape[0], h = activation.shape[1], wd = activation.shape[2];
  if (w.alpha.size() != d)
    throw ShapeError("raw_map: " + std::to_string(w.alpha.size()) + " weights for " +
                     std::to_string(d) + " channels");
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * wd;
  Array acc = Array::Zero(hw);
  for (int k = 0; k < d; ++k) acc += w.alpha[k] * activation.values.segment(k * hw, hw);
  Grid out(h, wd);
  Eigen::Map<Array>(out.data(), hw) = acc.max(0.0);
  return out;
}

Grid upsample_bilinear(const Grid& map, int out_h, int out_w) {
  const int in_h = static_cast<int>(map.rows()), in_w = static_cast<int>(map.cols());
  if (out_h < in_h || out_w < in_w)
    throw InputError("upsample_bilinear: target " + std::to_string(out_h) + "x" +
                     std::to_string(out_w) + " smaller than source " + std::to_string(in_h) + "x" +
                     std::to_string(in_w));
  Grid out(out_h, out_w);
  for (int r = 0; r < out_h; ++r) {
    const double y = out_h == 1 ? 0.0 : double(r) * (in_h - 1) / (out_h - 1);
    const int y0 = static_cast<int>(std::floor(y));
    const int y1 = std::min(y0 + 1, in_h - 1);
    const double fy = y - y0;
    for (int c = 0; c < out_w; ++c) {
      const double x = out_w == 1 ? 0.0 : double(c) * (in_w - 1) / (out_w - 1);
      const int x0 = static_cast<int>(std::floor(x));
      const int x1 = std::min(x0 + 1, in_w - 1);
      const double fx = x - x0;
      out(r, c) = (1 - fy) * ((1 - fx) * map(y0, x0) + fx * map(y0, x1)) +
                  fy * ((1 - fx) * map(y1, x0) + fx * map(y1, x1));
    }
  }
  return out;
}

Grid normalize_minmax(const Grid& map) {
  const double lo = map.minCoeff(), hi = map.maxCoeff();
  if (hi == lo) return Grid::Zero(map.rows(), map.cols());
  return (map - lo) / (hi - lo);
}

Heatmap explain(const ModelParams& params, const Tensor& x, int target_class, ScoreMode mode) {
  ForwardTrace trace = forward_with_capture(params, x);
  ChannelWeights w = channel_weights(trace, target_class, mode);
  Heatmap h;
  h.raw = raw_map(w, trace.activation);
  h.normalized = normalize_minmax(upsample_bilinear(h.raw, x.shape[1], x.shape[2]));
  h.target_class = target_class;
  h.capture_layer = params.config.capture_layer;
  h.model_seed = params.seed;
  h.score_mode = mode;
  return h;
}

}  // namespace gradfaith
