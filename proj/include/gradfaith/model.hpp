#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "gradfaith/tensor.hpp"

namespace gradfaith {

// ---- layer vocabulary -----------------------------------------------------

struct ConvSpec {
  int out_channels, kernel, stride, padding;
};
struct ReLUSpec {};
struct MaxPoolSpec {
  int window, stride;
};
struct GlobalAvgPoolSpec {};
struct DenseSpec {
  int out_features;
};
// Non-overlapping patch projection to a token sequence plus a learned
// positional table (zero-initialized). Requires a square patch grid.
struct PatchEmbedSpec {
  int patch, embed_dim;
};
// Pre-norm single-head self-attention followed by a 2x-wide feed-forward,
// both with residual connections.
struct AttentionBlockSpec {
  int embed_dim;
};
// Concatenating skip: out = concat(x, relu(conv_growth(x))), same spatial size.
struct DenseBlockSpec {
  int growth, kernel;
};

using LayerOp = std::variant<ConvSpec, ReLUSpec, MaxPoolSpec, GlobalAvgPoolSpec, DenseSpec,
                             PatchEmbedSpec, AttentionBlockSpec, DenseBlockSpec>;

struct LayerSpec {
  std::string name;
  LayerOp op;
};

struct ModelConfig {
  std::string preset = "custom";
  std::array<int, 3> input{1, 64, 64};  // C,H,W
  int classes = 3;
  std::vector<LayerSpec> layers;        // must terminate in Dense(classes)
  std::string capture_layer;            // whose output is read as the activation A
};

// Output geometry of one layer in the shape chain.
struct LayerShape {
  enum class Kind { Spatial, Tokens, Flat };
  Kind kind;
  std::array<int, 3> dims;  // Spatial: C,H,W; Tokens: T,E,unused; Flat: N,unused,unused
  std::string name;
  std::string describe() const;
};

/// Walk the layer list computing every output shape; throws ConfigError
/// naming the first inconsistent layer. Also validates name uniqueness,
/// the terminal Dense(classes), and the capture layer when set.
std::vector<LayerShape> validate(const ModelConfig&);

/// Shape of the captured activation as [D,H',W'] (token layers report the
/// embed_dim x sqrt(T) x sqrt(T) grid used for capture).
std::array<int, 3> capture_shape(const ModelConfig&);

// ---- parameters -------------------------------------------------------------

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct ModelParams {
  ModelConfig config;
  std::uint64_t seed = 0;
  std::uint32_t fingerprint = 0;
  std::vector<NamedTensor> tensors;
};

/// Canonical single-line text encoding of a config; the fingerprint is the
/// CRC-32 of these bytes. decode_config(encode_config(c)) reproduces c.
std::string encode_config(const ModelConfig&);
ModelConfig decode_config(const std::string& text);
std::uint32_t config_fingerprint(const ModelConfig&);

/// Deterministic Glorot-uniform init: weight tensors draw from the seeded
/// generator in declaration order, bound sqrt(6/(fan_in+fan_out)); biases
/// and positional tables start at zero.
ModelParams init_params(const ModelConfig&, std::uint64_t seed);

// ---- execution ----------------------------------------------------------------

struct ForwardTrace {
  Tensor logits;
  Tensor activation;  // captured layer output, [D,H',W']
  std::shared_ptr<Tape> tape;
  std::vector<Tensor> bound_params;  // tape-bound copies, ModelParams order
};

/// Register every parameter tensor as a tape leaf; order matches
/// ModelParams::tensors. Training drives updates through these handles.
std::vector<Tensor> bind_params(Tape&, const ModelParams&);

/// Run the layer stack from an already-bound input. When `capture_out` is
/// non-null the configured capture layer's output is routed through it as a
/// [D,H',W'] tensor that stays on the differentiation path.
Tensor run_layers(Tape&, const ModelConfig&, std::span<const Tensor> bound, const Tensor& x_leaf,
                  Tensor* capture_out);

ForwardTrace forward_with_capture(const ModelParams&, const Tensor& x);
Tensor forward(const ModelParams&, const Tensor& x);  // logits only, nothing recorded
int predict(const ModelParams&, const Tensor& x);     // argmax, lowest index on ties

// GFCK checkpoint container; save/load round-trips bitwise.
void save_params(const ModelParams&, const std::filesystem::path&);
ModelParams load_params(const std::filesystem::path&);

// ---- presets --------------------------------------------------------------------

/// cnn-a, cnn-b, cnn-dense, tiny-vit. Capture defaults to the last
/// spatially-shaped layer before global pooling.
ModelConfig preset_config(const std::string& name, std::array<int, 3> input = {1, 64, 64},
                          int classes = 3);
std::vector<std::string> preset_names();

}  // namespace gradfaith
