#include "gradfaith/model.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "gradfaith/rng.hpp"
#include "serialize.hpp"

namespace gradfaith {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

int isqrt_exact(int n, const std::string& layer) {
  int g = static_cast<int>(std::lround(std::sqrt(double(n))));
  if (g * g != n)
    throw ConfigError("layer '" + layer + "': token count " + std::to_string(n) +
                      " is not a perfect square, cannot form a capture grid");
  return g;
}

}  // namespace

std::string LayerShape::describe() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::Spatial:
      os << dims[0] << 'x' << dims[1] << 'x' << dims[2] << " (spatial)";
      break;
    case Kind::Tokens:
      os << dims[0] << 'x' << dims[1] << " (tokens)";
      break;
    case Kind::Flat:
      os << dims[0] << " (flat)";
      break;
  }
  return os.str();
}

std::vector<LayerShape> validate(const ModelConfig& cfg) {
  if (cfg.input[0] < 1 || cfg.input[1] < 1 || cfg.input[2] < 1)
    throw ConfigError("input shape must be positive, got " +
                      shape_str({cfg.input[0], cfg.input[1], cfg.input[2]}));
  if (cfg.classes < 2) throw ConfigError("class count must be >= 2");
  if (cfg.layers.empty()) throw ConfigError("layer list is empty");

  std::vector<LayerShape> chain;
  LayerShape cur{LayerShape::Kind::Spatial, {cfg.input[0], cfg.input[1], cfg.input[2]}, "input"};

  for (std::size_t li = 0; li < cfg.layers.size(); ++li) {
    const LayerSpec& l = cfg.layers[li];
    const std::string label = l.name.empty() ? "#" + std::to_string(li) : l.name;
    if (!l.name.empty())
      for (std::size_t j = 0; j < li; ++j)
        if (cfg.layers[j].name == l.name)
          throw ConfigError("duplicate layer name '" + l.name + "'");

    std::visit(
        overloaded{
            [&](const ConvSpec& c) {
              if (cur.kind != LayerShape::Kind::Spatial)
                throw ConfigError("layer '" + label + "' (Conv) expects a spatial input, got " +
                                  cur.describe());
              if (c.out_channels < 1 || c.kernel < 1 || c.stride < 1 || c.padding < 0)
                throw ConfigError("layer '" + label + "' (Conv) has non-positive arguments");
              const int H = cur.dims[1], W = cur.dims[2];
              if (H + 2 * c.padding < c.kernel || W + 2 * c.padding < c.kernel)
                throw ConfigError("layer '" + label + "': kernel does not fit padded input");
              const int oh = (H + 2 * c.padding - c.kernel) / c.stride + 1;
              const int ow = (W + 2 * c.padding - c.kernel) / c.stride + 1;
              if (oh < 1 || ow < 1)
                throw ConfigError("layer '" + label + "': non-positive output size");
              cur = {LayerShape::Kind::Spatial, {c.out_channels, oh, ow}, l.name};
            },
            [&](const ReLUSpec&) {},
            [&](const MaxPoolSpec& m) {
              if (cur.kind != LayerShape::Kind::Spatial)
                throw ConfigError("layer '" + label + "' (MaxPool) expects a spatial input, got " +
                                  cur.describe());
              if (m.window < 1 || m.stride < 1)
                throw ConfigError("layer '" + label + "' (MaxPool) has non-positive arguments");
              const int H = cur.dims[1], W = cur.dims[2];
              if (m.window > H || m.window > W)
                throw ConfigError("layer '" + label + "': pooling window does not fit input");
              cur = {LayerShape::Kind::Spatial,
                     {cur.dims[0], (H - m.window) / m.stride + 1, (W - m.window) / m.stride + 1},
                     l.name};
            },
            [&](const GlobalAvgPoolSpec&) {
              if (cur.kind == LayerShape::Kind::Spatial)
                cur = {LayerShape::Kind::Flat, {cur.dims[0], 0, 0}, l.name};
              else if (cur.kind == LayerShape::Kind::Tokens)
                cur = {LayerShape::Kind::Flat, {cur.dims[1], 0, 0}, l.name};
              else
                throw ConfigError("layer '" + label +
                                  "' (GlobalAvgPool) expects spatial or token input");
            },
            [&](const DenseSpec& d) {
              if (d.out_features < 1)
                throw ConfigError("layer '" + label + "' (Dense) has non-positive width");
              int in = cur.dims[0];
              if (cur.kind == LayerShape::Kind::Spatial)
                in = cur.dims[0] * cur.dims[1] * cur.dims[2];
              else if (cur.kind == LayerShape::Kind::Tokens)
                in = cur.dims[0] * cur.dims[1];
              // dims[1] stashes the fan-in for the parameter schema
              cur = {LayerShape::Kind::Flat, {d.out_features, in, 0}, l.name};
            },
            [&](const PatchEmbedSpec& p) {
              if (cur.kind != LayerShape::Kind::Spatial)
                throw ConfigError("layer '" + label + "' (PatchEmbed) expects a spatial input");
              if (p.patch < 1 || p.embed_dim < 1)
                throw ConfigError("layer '" + label + "' (PatchEmbed) has non-positive arguments");
              const int H = cur.dims[1], W = cur.dims[2];
              if (H % p.patch != 0 || W % p.patch != 0)
                throw ConfigError("layer '" + label + "': patch size " + std::to_string(p.patch) +
                                  " does not divide input " + cur.describe());
              const int gh = H / p.patch, gw = W / p.patch;
              if (gh != gw)
                throw ConfigError("layer '" + label + "': patch grid " + std::to_string(gh) + "x" +
                                  std::to_string(gw) + " must be square");
              cur = {LayerShape::Kind::Tokens, {gh * gw, p.embed_dim, 0}, l.name};
            },
            [&](const AttentionBlockSpec& a) {
              if (cur.kind != LayerShape::Kind::Tokens)
                throw ConfigError("layer '" + label +
                                  "' (AttentionBlock) expects token input, got " + cur.describe());
              if (cur.dims[1] != a.embed_dim)
                throw ConfigError("layer '" + label + "': embed_dim " +
                                  std::to_string(a.embed_dim) + " does not match input " +
                                  cur.describe());
            },
            [&](const DenseBlockSpec& d) {
              if (cur.kind != LayerShape::Kind::Spatial)
                throw ConfigError("layer '" + label + "' (DenseBlock) expects a spatial input");
              if (d.growth < 1 || d.kernel < 1 || d.kernel % 2 == 0)
                throw ConfigError("layer '" + label +
                                  "' (DenseBlock) needs positive growth and an odd kernel");
              if (cur.dims[1] < d.kernel || cur.dims[2] < d.kernel)
                throw ConfigError("layer '" + label + "': kernel does not fit input");
              cur = {LayerShape::Kind::Spatial,
                     {cur.dims[0] + d.growth, cur.dims[1], cur.dims[2]},
                     l.name};
            },
        },
        l.op);
    cur.name = l.name;
    chain.push_back(cur);
  }

  const LayerShape& last = chain.back();
  if (!std::holds_alternative<DenseSpec>(cfg.layers.back().op) ||
      last.kind != LayerShape::Kind::Flat || last.dims[0] != cfg.classes)
    throw ConfigError("layer list must terminate in Dense(" + std::to_string(cfg.classes) + ")");

  if (!cfg.capture_layer.empty()) {
    bool found = false;
    for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
      if (cfg.layers[i].name != cfg.capture_layer) continue;
      found = true;
      const LayerShape& s = chain[i];
      if (s.kind == LayerShape::Kind::Flat)
        throw ConfigError("capture layer '" + cfg.capture_layer +
                          "' has flat output; a spatial activation is required");
      if (s.kind == LayerShape::Kind::Tokens) isqrt_exact(s.dims[0], cfg.capture_layer);
    }
    if (!found) throw ConfigError("capture layer '" + cfg.capture_layer + "' not found");
  }
  return chain;
}

std::array<int, 3> capture_shape(const ModelConfig& cfg) {
  if (cfg.capture_layer.empty()) throw ConfigError("no capture layer configured");
  auto chain = validate(cfg);
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    if (cfg.layers[i].name != cfg.capture_layer) continue;
    const LayerShape& s = chain[i];
    if (s.kind == LayerShape::Kind::Spatial) return s.dims;
    const int g = isqrt_exact(s.dims[0], cfg.capture_layer);
    return {s.dims[1], g, g};
  }
  throw ConfigError("capture layer '" + cfg.capture_layer + "' not found");
}

// ---- canonical text form ----------------------------------------------------

namespace {

std::string op_text(const LayerOp& op) {
  char buf[64];
  return std::visit(
      overloaded{
          [&](const ConvSpec& c) {
            std::snprintf(buf, sizeof buf, "Conv(%d,%d,%d,%d)", c.out_channels, c.kernel, c.stride,
                          c.padding);
            return std::string(buf);
          },
          [&](const ReLUSpec&) { return std::string("ReLU"); },
          [&](const MaxPoolSpec& m) {
            std::snprintf(buf, sizeof buf, "MaxPool(%d,%d)", m.window, m.stride);
            return std::string(buf);
          },
          [&](const GlobalAvgPoolSpec&) { return std::string("GlobalAvgPool"); },
          [&](const DenseSpec& d) {
            std::snprintf(buf, sizeof buf, "Dense(%d)", d.out_features);
            return std::string(buf);
          },
          [&](const PatchEmbedSpec& p) {
            std::snprintf(buf, sizeof buf, "PatchEmbed(%d,%d)", p.patch, p.embed_dim);
            return std::string(buf);
          },
          [&](const AttentionBlockSpec& a) {
            std::snprintf(buf, sizeof buf, "AttentionBlock(%d)", a.embed_dim);
            return std::string(buf);
          },
          [&](const DenseBlockSpec& d) {
            std::snprintf(buf, sizeof buf, "DenseBlock(%d,%d)", d.growth, d.kernel);
            return std::string(buf);
          },
      },
      op);
}

std::vector<int> parse_int_args(const std::string& args, std::size_t want, const std::string& at) {
  std::vector<int> out;
  std::stringstream ss(args);
  std::string tok;
  while (std::getline(ss, tok, ','))
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw FormatError("config: bad integer '" + tok + "' in " + at);
    }
  if (out.size() != want)
    throw FormatError("config: expected " + std::to_string(want) + " arguments in " + at);
  return out;
}

LayerOp parse_op(const std::string& text, const std::string& at) {
  const auto paren = text.find('(');
  std::string kind = paren == std::string::npos ? text : text.substr(0, paren);
  std::string args;
  if (paren != std::string::npos) {
    if (text.empty() || text.back() != ')')
      throw FormatError("config: unbalanced parentheses in " + at);
    args = text.substr(paren + 1, text.size() - paren - 2);
  }
  if (kind == "Conv") {
    auto v = parse_int_args(args, 4, at);
    return ConvSpec{v[0], v[1], v[2], v[3]};
  }
  if (kind == "ReLU") return ReLUSpec{};
  if (kind == "MaxPool") {
    auto v = parse_int_args(args, 2, at);
    return MaxPoolSpec{v[0], v[1]};
  }
  if (kind == "GlobalAvgPool") return GlobalAvgPoolSpec{};
  if (kind == "Dense") {
    auto v = parse_int_args(args, 1, at);
    return DenseSpec{v[0]};
  }
  if (kind == "PatchEmbed") {
    auto v = parse_int_args(args, 2, at);
    return PatchEmbedSpec{v[0], v[1]};
  }
  if (kind == "AttentionBlock") {
    auto v = parse_int_args(args, 1, at);
    return AttentionBlockSpec{v[0]};
  }
  if (kind == "DenseBlock") {
    auto v = parse_int_args(args, 2, at);
    return DenseBlockSpec{v[0], v[1]};
  }
  throw FormatError("config: unknown layer kind '" + kind + "'");
}

}  // namespace

std::string encode_config(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "preset=" << cfg.preset << ";input=" << cfg.input[0] << ',' << cfg.input[1] << ','
     << cfg.input[2] << ";classes=" << cfg.classes << ";capture=" << cfg.capture_layer
     << ";layers=";
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    if (i) os << '|';
    os << cfg.layers[i].name << ':' << op_text(cfg.layers[i].op);
  }
  return os.str();
}

ModelConfig decode_config(const std::string& text) {
  ModelConfig cfg;
  cfg.layers.clear();
  std::stringstream ss(text);
  std::string field;
  bool saw_layers = false;
  while (std::getline(ss, field, ';')) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw FormatError("config: field without '=': '" + field + "'");
    const std::string key = field.substr(0, eq), val = field.substr(eq + 1);
    if (key == "preset") {
      cfg.preset = val;
    } else if (key == "input") {
      auto v = parse_int_args(val, 3, "input");
      cfg.input = {v[0], v[1], v[2]};
    } else if (key == "classes") {
      try {
        cfg.classes = std::stoi(val);
      } catch (const std::exception&) {
        throw FormatError("config: bad class count '" + val + "'");
      }
    } else if (key == "capture") {
      cfg.capture_layer = val;
    } else if (key == "layers") {
      saw_layers = true;
      std::stringstream ls(val);
      std::string entry;
      while (std::getline(ls, entry, '|')) {
        const auto colon = entry.find(':');
        if (colon == std::string::npos)
          throw FormatError("config: layer entry without ':': '" + entry + "'");
        cfg.layers.push_back(
            LayerSpec{entry.substr(0, colon), parse_op(entry.substr(colon + 1), entry)});
      }
    } else {
      throw FormatError("config: unknown field '" + key + "'");
    }
  }
  if (!saw_layers) throw FormatError("config: missing layers field");
  return cfg;
}

std::uint32_t config_fingerprint(const ModelConfig& cfg) {
  const std::string text = encode_config(cfg);
  return detail::crc32_of(text.data(), text.size());
}

// ---- parameter schema and init ------------------------------------------------

namespace {

struct ParamDef {
  std::string name;
  Shape shape;
  bool draws;    // Glorot-uniform weights draw; biases and position tables are zero
  double bound;  // sqrt(6 / (fan_in + fan_out)) when draws
};

double glorot(int fan_in, int fan_out) { return std::sqrt(6.0 / (fan_in + fan_out)); }

std::vector<ParamDef> param_schema(const ModelConfig& cfg) {
  auto chain = validate(cfg);
  std::vector<ParamDef> defs;
  LayerShape in{LayerShape::Kind::Spatial, {cfg.input[0], cfg.input[1], cfg.input[2]}, "input"};
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    const LayerSpec& l = cfg.layers[i];
    const std::string nm = l.name.empty() ? "layer" + std::to_string(i) : l.name;
    std::visit(
        overloaded{
            [&](const ConvSpec& c) {
              const int ci = in.dims[0];
              defs.push_back(
                  {nm + ".weight",
                   {c.out_channels, ci, c.kernel, c.kernel},
                   true,
                   glorot(ci * c.kernel * c.kernel, c.out_channels * c.kernel * c.kernel)});
              defs.push_back({nm + ".bias", {c.out_channels}, false, 0.0});
            },
            [&](const ReLUSpec&) {},
            [&](const MaxPoolSpec&) {},
            [&](const GlobalAvgPoolSpec&) {},
            [&](const DenseSpec& d) {
              const int fan_in = chain[i].dims[1];  // stashed by validate
              defs.push_back(
                  {nm + ".weight", {fan_in, d.out_features}, true, glorot(fan_in, d.out_features)});
              defs.push_back({nm + ".bias", {d.out_features}, false, 0.0});
            },
            [&](const PatchEmbedSpec& p) {
              const int ci = in.dims[0];
              const int tokens = chain[i].dims[0];
              defs.push_back({nm + ".weight",
                              {p.embed_dim, ci, p.patch, p.patch},
                              true,
                              glorot(ci * p.patch * p.patch, p.embed_dim * p.patch * p.patch)});
              defs.push_back({nm + ".bias", {p.embed_dim}, false, 0.0});
              defs.push_back({nm + ".pos", {tokens, p.embed_dim}, false, 0.0});
            },
            [&](const AttentionBlockSpec& a) {
              const int e = a.embed_dim;
              const double bw = glorot(e, e);
              for (const char* part : {"wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"}) {
                if (part[0] == 'w')
                  defs.push_back({nm + "." + part, {e, e}, true, bw});
                else
                  defs.push_back({nm + "." + part, {e}, false, 0.0});
              }
              defs.push_back({nm + ".w1", {e, 2 * e}, true, glorot(e, 2 * e)});
              defs.push_back({nm + ".b1", {2 * e}, false, 0.0});
              defs.push_back({nm + ".w2", {2 * e, e}, true, glorot(2 * e, e)});
              defs.push_back({nm + ".b2", {e}, false, 0.0});
            },
            [&](const DenseBlockSpec& d) {
              const int ci = in.dims[0];
              defs.push_back({nm + ".weight",
                              {d.growth, ci, d.kernel, d.kernel},
                              true,
                              glorot(ci * d.kernel * d.kernel, d.growth * d.kernel * d.kernel)});
              defs.push_back({nm + ".bias", {d.growth}, false, 0.0});
            },
        },
        l.op);
    in = chain[i];
  }
  return defs;
}

}  // namespace

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams p;
  p.config = cfg;
  p.seed = seed;
  p.fingerprint = config_fingerprint(cfg);
  Rng rng(seed);
  for (const ParamDef& def : param_schema(cfg)) {
    Tensor t = Tensor::zeros(def.shape);
    if (def.draws)
      for (Eigen::Index i = 0; i < t.size(); ++i) t.values[i] = rng.uniform(-def.bound, def.bound);
    p.tensors.push_back({def.name, std::move(t)});
  }
  return p;
}

// ---- execution ------------------------------------------------------------------

std::vector<Tensor> bind_params(Tape& tape, const ModelParams& p) {
  std::vector<Tensor> bound;
  bound.reserve(p.tensors.size());
  for (const NamedTensor& t : p.tensors) bound.push_back(tape.leaf(t.value));
  return bound;
}

namespace {

Tensor apply_layer(Tape& t, const LayerSpec& l, std::span<const Tensor> bound, std::size_t& pi,
                   const Tensor& in) {
  return std::visit(
      overloaded{
          [&](const ConvSpec& c) {
            const Tensor &w = bound[pi], &b = bound[pi + 1];
            pi += 2;
            return conv2d(t, in, w, b, c.stride, c.padding);
          },
          [&](const ReLUSpec&) { return relu(t, in); },
          [&](const MaxPoolSpec& m) { return max_pool2d(t, in, m.window, m.stride); },
          [&](const GlobalAvgPoolSpec&) {
            return in.rank() == 3 ? global_avg_pool(t, in) : col_mean(t, in);
          },
          [&](const DenseSpec&) {
            Tensor flat = in.rank() == 1 ? in : reshape(t, in, Shape{static_cast<int>(in.size())});
            const Tensor &w = bound[pi], &b = bound[pi + 1];
            pi += 2;
            return dense(t, flat, w, b);
          },
          [&](const PatchEmbedSpec& p) {
            const Tensor &w = bound[pi], &b = bound[pi + 1], &pos = bound[pi + 2];
            pi += 3;
            Tensor c = conv2d(t, in, w, b, p.patch, 0);  // [E,g,g]
            const int e = c.shape[0], tokens = c.shape[1] * c.shape[2];
            Tensor tok = transpose(t, reshape(t, c, Shape{e, tokens}));  // [T,E]
            return add(t, tok, pos);
          },
          [&](const AttentionBlockSpec& a) {
            const Tensor &wq = bound[pi], &bq = bound[pi + 1], &wk = bound[pi + 2],
                         &bk = bound[pi + 3], &wv = bound[pi + 4], &bv = bound[pi + 5],
                         &wo = bound[pi + 6], &bo = bound[pi + 7], &w1 = bound[pi + 8],
                         &b1 = bound[pi + 9], &w2 = bound[pi + 10], &b2 = bound[pi + 11];
            pi += 12;
            Tensor z = layer_norm(t, in);
            Tensor q = dense(t, z, wq, bq);
            Tensor k = dense(t, z, wk, bk);
            Tensor v = dense(t, z, wv, bv);
            Tensor s = matmul(t, q, transpose(t, k));
            s = mul_elementwise(t, s, Tensor::scalar(1.0 / std::sqrt(double(a.embed_dim))));
            Tensor att = dense(t, matmul(t, softmax_rows(t, s), v), wo, bo);
            Tensor h = add(t, in, att);
            Tensor z2 = layer_norm(t, h);
            Tensor f = dense(t, relu(t, dense(t, z2, w1, b1)), w2, b2);
            return add(t, h, f);
          },
          [&](const DenseBlockSpec& d) {
            const Tensor &w = bound[pi], &b = bound[pi + 1];
            pi += 2;
            return concat_channels(t, in, relu(t, conv2d(t, in, w, b, 1, (d.kernel - 1) / 2)));
          },
      },
      l.op);
}

}  // namespace

Tensor run_layers(Tape& tape, const ModelConfig& cfg, std::span<const Tensor> bound,
                  const Tensor& x_leaf, Tensor* capture_out) {
  if (capture_out && cfg.capture_layer.empty())
    throw ContractError("run_layers: capture requested but no capture layer configured");
  std::size_t pi = 0;
  Tensor cur = x_leaf;
  for (const LayerSpec& l : cfg.layers) {
    cur = apply_layer(tape, l, bound, pi, cur);
    if (capture_out && !cfg.capture_layer.empty() && l.name == cfg.capture_layer) {
      if (cur.rank() == 3) {
        *capture_out = cur;
      } else if (cur.rank() == 2) {
        // Token sequence: expose the embed_dim x g x g grid and route the
        // network through it so the activation stays on the gradient path.
        const int tokens = cur.shape[0], e = cur.shape[1];
        const int g = isqrt_exact(tokens, l.name);
        Tensor grid = reshape(tape, transpose(tape, cur), Shape{e, g, g});
        *capture_out = grid;
        cur = transpose(tape, reshape(tape, grid, Shape{e, tokens}));
      } else {
        throw ConfigError("capture layer '" + l.name + "' has flat output");
      }
    }
  }
  return cur;
}

namespace {

void check_input_shape(const ModelParams& p, const Tensor& x) {
  const Shape want{p.config.input[0], p.config.input[1], p.config.input[2]};
  if (x.shape != want)
    throw InputError("input shape " + shape_str(x.shape) + " does not match model input " +
                     shape_str(want));
}

}  // namespace

ForwardTrace forward_with_capture(const ModelParams& p, const Tensor& x) {
  check_input_shape(p, x);
  if (p.config.capture_layer.empty())
    throw ConfigError("model has no capture layer configured");
  auto tape = std::make_shared<Tape>(true);
  auto bound = bind_params(*tape, p);
  Tensor xl = tape->leaf(x);
  Tensor cap;
  Tensor logits = run_layers(*tape, p.config, bound, xl, &cap);
  if (cap.size() == 0)
    throw ConfigError("capture layer '" + p.config.capture_layer + "' produced no activation");
  return ForwardTrace{std::move(logits), std::move(cap), std::move(tape), std::move(bound)};
}

Tensor forward(const ModelParams& p, const Tensor& x) {
  check_input_shape(p, x);
  Tape tape(false);
  auto bound = bind_params(tape, p);
  Tensor xl = tape.leaf(x);
  return run_layers(tape, p.config, bound, xl, nullptr);
}

int predict(const ModelParams& p, const Tensor& x) {
  const Tensor logits = forward(p, x);
  int best = 0;
  for (int i = 1; i < logits.size(); ++i)
    if (logits.values[i] > logits.values[best]) best = i;  // lowest index wins ties
  return best;
}

// ---- GFCK checkpoint container -----------------------------------------------

namespace {
constexpr std::uint32_t kCheckpointVersion = 1;
}

void save_params(const ModelParams& p, const std::filesystem::path& path) {
  detail::ByteWriter w;
  w.str("GFCK");
  w.u32(kCheckpointVersion);
  w.u32(p.fingerprint);
  w.u64(p.seed);
  const std::string cfg = encode_config(p.config);
  w.u32(static_cast<std::uint32_t>(cfg.size()));
  w.str(cfg);
  w.u32(static_cast<std::uint32_t>(p.tensors.size()));
  for (const NamedTensor& t : p.tensors) {
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.value.shape.size()));
    for (int d : t.value.shape) w.u32(static_cast<std::uint32_t>(d));
    for (Eigen::Index i = 0; i < t.value.size(); ++i) w.f64(t.value.values[i]);
  }
  w.crc_trailer();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  out.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
  if (!out) throw FormatError("write failed for '" + path.string() + "'");
}

ModelParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint '" + path.string() + "'");
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  detail::ByteReader r(buf);
  if (r.str(4, "magic") != "GFCK") throw FormatError("not a GFCK checkpoint", 0);
  r.check_crc_trailer("checkpoint");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);

  ModelParams p;
  p.fingerprint = r.u32("fingerprint");
  p.seed = r.u64("seed");
  const std::uint32_t cfg_len = r.u32("config length");
  p.config = decode_config(r.str(cfg_len, "config"));
  if (config_fingerprint(p.config) != p.fingerprint)
    throw FormatError("checkpoint fingerprint does not match its config", 8);

  const auto schema = param_schema(p.config);
  const std::uint32_t count = r.u32("tensor count");
  if (count != schema.size())
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, config needs " +
                      std::to_string(schema.size()));
  for (const ParamDef& def : schema) {
    const std::uint16_t nlen = r.u16("tensor name length");
    const std::string name = r.str(nlen, "tensor name");
    if (name != def.name)
      throw FormatError("unexpected tensor '" + name + "', wanted '" + def.name + "'",
                        static_cast<long long>(r.pos - nlen));
    const std::uint32_t rank = r.u32("tensor rank");
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<int>(r.u32("tensor dim")));
    if (shape != def.shape)
      throw FormatError("tensor '" + name + "' has shape " + shape_str(shape) + ", wanted " +
                        shape_str(def.shape));
    Tensor t = Tensor::zeros(shape);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.values[i] = r.f64("tensor values");
    p.tensors.push_back({name, std::move(t)});
  }
  return p;
}

// ---- presets --------------------------------------------------------------------

ModelConfig preset_config(const std::string& name, std::array<int, 3> input, int classes) {
  ModelConfig cfg;
  cfg.preset = name;
  cfg.input = input;
  cfg.classes = classes;
  if (name == "cnn-a") {
    // The pool stack between the capture layer and GAP concentrates blob
    // evidence; plain 16x16 GAP starves the conv gradients at the default
    // learning rate.
    cfg.layers = {
        {"conv1", ConvSpec{12, 3, 1, 1}}, {"relu1", ReLUSpec{}}, {"pool1", MaxPoolSpec{2, 2}},
        {"conv2", ConvSpec{24, 3, 1, 1}}, {"relu2", ReLUSpec{}}, {"pool2", MaxPoolSpec{2, 2}},
        {"conv3", ConvSpec{24, 3, 1, 1}}, {"relu3", ReLUSpec{}}, {"pool3", MaxPoolSpec{2, 2}},
        {"pool4", MaxPoolSpec{2, 2}},     {"gap", GlobalAvgPoolSpec{}},
        {"fc", DenseSpec{classes}},
    };
    cfg.capture_layer = "relu3";
  } else if (name == "cnn-b") {
    cfg.layers = {
        {"conv1", ConvSpec{8, 3, 1, 1}},  {"relu1", ReLUSpec{}}, {"pool1", MaxPoolSpec{2, 2}},
        {"conv2", ConvSpec{16, 3, 1, 1}}, {"relu2", ReLUSpec{}}, {"pool2", MaxPoolSpec{2, 2}},
        {"conv3", ConvSpec{32, 3, 1, 1}}, {"relu3", ReLUSpec{}}, {"pool3", MaxPoolSpec{2, 2}},
        {"conv4", ConvSpec{64, 3, 1, 1}}, {"relu4", ReLUSpec{}}, {"gap", GlobalAvgPoolSpec{}},
        {"fc", DenseSpec{classes}},
    };
    cfg.capture_layer = "relu4";
  } else if (name == "cnn-dense") {
    cfg.layers = {
        {"conv1", ConvSpec{8, 3, 1, 1}},    {"relu1", ReLUSpec{}},
        {"pool1", MaxPoolSpec{2, 2}},       {"dblock1", DenseBlockSpec{8, 3}},
        {"dblock2", DenseBlockSpec{8, 3}},  {"pool2", MaxPoolSpec{2, 2}},
        {"dblock3", DenseBlockSpec{16, 3}}, {"gap", GlobalAvgPoolSpec{}},
        {"fc", DenseSpec{classes}},
    };
    cfg.capture_layer = "dblock3";
  } else if (name == "tiny-vit") {
    cfg.layers = {
        {"patch", PatchEmbedSpec{8, 16}},  {"attn1", AttentionBlockSpec{16}},
        {"attn2", AttentionBlockSpec{16}}, {"gap", GlobalAvgPoolSpec{}},
        {"fc", DenseSpec{classes}},
    };
    cfg.capture_layer = "attn2";
  } else {
    std::string known;
    for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw InputError("unknown preset '" + name + "'; known presets: " + known);
  }
  validate(cfg);
  return cfg;
}

std::vector<std::string> preset_names() { return {"cnn-a", "cnn-b", "cnn-dense", "tiny-vit"}; }

}  // namespace gradfaith
