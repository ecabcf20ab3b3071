#include "gradfaith/verify.hpp"

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "gradfaith/gradcam.hpp"
#include "gradfaith/image_io.hpp"
#include "gradfaith/metrics.hpp"
#include "gradfaith/model.hpp"
#include "gradfaith/phantom.hpp"
#include "gradfaith/report.hpp"
#include "gradfaith/train.hpp"

namespace gradfaith {

namespace check {

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

double max_rel_err(const Tensor& analytic, const Tensor& fd) {
  if (analytic.shape != fd.shape)
    throw ShapeError("max_rel_err: shapes differ " + shape_str(analytic.shape) + " vs " +
                     shape_str(fd.shape));
  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i)
    worst = std::max(worst, rel_err(analytic.values[i], fd.values[i]));
  return worst;
}

double norm_rel_err(const Tensor& analytic, const Tensor& fd) {
  if (analytic.shape != fd.shape)
    throw ShapeError("norm_rel_err: shapes differ " + shape_str(analytic.shape) + " vs " +
                     shape_str(fd.shape));
  const double na = std::sqrt(analytic.values.square().sum());
  const double nb = std::sqrt(fd.values.square().sum());
  const double diff = std::sqrt((analytic.values - fd.values).square().sum());
  return diff / std::max({na, nb, 1e-8});
}

Tensor random_tensor(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (Eigen::Index i = 0; i < t.size(); ++i) t.values[i] = rng.uniform(lo, hi);
  return t;
}

double gradcheck_op(const OpFn& op, const std::vector<Tensor>& inputs, const Tensor& proj,
                    double h, double fault) {
  Tape tape;
  std::vector<Tensor> bound;
  bound.reserve(inputs.size());
  for (const Tensor& t : inputs) bound.push_back(tape.leaf(t));
  Tensor out = op(tape, bound);
  if (out.shape != proj.shape)
    throw ShapeError("gradcheck_op: projection shape " + shape_str(proj.shape) +
                     " does not match output " + shape_str(out.shape));
  Tensor loss = sum(tape, mul_elementwise(tape, out, proj));
  std::vector<int> wanted;
  for (const Tensor& b : bound) wanted.push_back(b.node);
  GradientSet grads = tape.backward(loss, wanted);

  double worst = 0.0;
  for (std::size_t j = 0; j < inputs.size(); ++j) {
    Tensor fd = finite_diff_gradient(
        [&](const Tensor& x) {
          Tape probe_tape(false);
          std::vector<Tensor> probe = inputs;
          probe[j] = x;
          Tensor o = op(probe_tape, probe);
          return (o.values * proj.values).sum();
        },
        inputs[j], h);
    Tensor analytic = grads.at(bound[j]);
    if (fault != 0.0) analytic.values += fault;
    worst = std::max(worst, norm_rel_err(analytic, fd));
  }
  return worst;
}

Tensor conv2d_reference(const Tensor& input, const Tensor& kernels, const Tensor& bias, int stride,
                        int padding) {
  const int C = input.shape.at(0), H = input.shape.at(1), W = input.shape.at(2);
  const int D = kernels.shape.at(0), k = kernels.shape.at(2);
  const int oh = (H + 2 * padding - k) / stride + 1;
  const int ow = (W + 2 * padding - k) / stride + 1;
  Tensor out = Tensor::zeros({D, oh, ow});
  for (int d = 0; d < D; ++d)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        double acc = bias.values[d];
        for (int c = 0; c < C; ++c)
          for (int u = 0; u < k; ++u)
            for (int v = 0; v < k; ++v) {
              const int y = i * stride + u - padding;
              const int x = j * stride + v - padding;
              if (y < 0 || y >= H || x < 0 || x >= W) continue;
              acc += input.values[(static_cast<Eigen::Index>(c) * H + y) * W + x] *
                     kernels.values[((static_cast<Eigen::Index>(d) * C + c) * k + u) * k + v];
            }
        out.values[(static_cast<Eigen::Index>(d) * oh + i) * ow + j] = acc;
      }
  return out;
}

}  // namespace check

namespace {

using check::conv2d_reference;
using check::gradcheck_op;
using check::max_rel_err;
using check::random_tensor;
using check::rel_err;

constexpr double kGradTol = 1e-5;

struct Harness {
  std::vector<VerifyCheck> results;
  std::string suite;

  void section(std::string s) { suite = std::move(s); }
  void run(const std::string& name, const std::function<void()>& fn) {
    try {
      fn();
      results.push_back({suite, name, true, ""});
    } catch (const std::exception& e) {
      results.push_back({suite, name, false, e.what()});
    }
  }
};

void expect(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

void expect_near(double got, double want, double tol, const std::string& what) {
  if (!(std::abs(got - want) <= tol))
    throw Error(what + ": got " + std::to_string(got) + ", wanted " + std::to_string(want));
}

std::filesystem::path temp_file(const std::string& stem) {
  static std::atomic<int> counter{0};
  return std::filesystem::temp_directory_path() /
         (stem + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
}

// Random values kept away from zero so ReLU kinks cannot straddle the
// finite-difference step.
Tensor random_signed(Rng& rng, Shape shape, double min_mag = 0.05) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    const double mag = rng.uniform(min_mag, 1.0);
    t.values[i] = rng.uniform(0.0, 1.0) < 0.5 ? -mag : mag;
  }
  return t;
}

// ---- suites -------------------------------------------------------------------

void suite_autodiff_analytic(Harness& h) {
  h.section("autodiff-analytic");

  h.run("add componentwise", [] {
    Tape t(false);
    Tensor r = add(t, Tensor::of({2}, {1, 2}), Tensor::of({2}, {3, 4}));
    expect(r.values[0] == 4 && r.values[1] == 6, "add([1,2],[3,4]) != [4,6]");
  });

  h.run("matmul identity", [] {
    Rng rng(11);
    Tape t(false);
    Tensor eye = Tensor::zeros({3, 3});
    for (int i = 0; i < 3; ++i) eye.values[i * 3 + i] = 1.0;
    Tensor m = random_tensor(rng, {3, 3});
    Tensor r = matmul(t, eye, m);
    expect((r.values - m.values).abs().maxCoeff() == 0.0, "I3 * M != M");
  });

  h.run("softmax uniform", [] {
    Tape t(false);
    Tensor s = softmax(t, Tensor::zeros({3}));
    for (int i = 0; i < 3; ++i) expect_near(s.values[i], 1.0 / 3.0, 1e-12, "softmax([0,0,0])");
  });

  h.run("softmax simplex", [] {
    Rng rng(12);
    for (int inst = 0; inst < 50; ++inst) {
      Tape t(false);
      Tensor s = softmax(t, random_tensor(rng, {5}, -10, 10));
      expect(s.values.minCoeff() > 0.0 && s.values.maxCoeff() < 1.0, "softmax out of (0,1)");
      expect_near(s.values.sum(), 1.0, 1e-12, "softmax sum");
    }
  });

  h.run("relu definition", [] {
    Tape t(false);
    Tensor r = relu(t, Tensor::of({3}, {-1, 0, 2}));
    expect(r.values[0] == 0 && r.values[1] == 0 && r.values[2] == 2, "relu([-1,0,2])");
  });

  h.run("cross-entropy uniform = ln K", [] {
    Tape t(false);
    for (int label = 0; label < 3; ++label)
      expect_near(cross_entropy(t, Tensor::zeros({3}), label).item(), std::log(3.0), 1e-12,
                  "CE at uniform logits");
  });

  h.run("cross-entropy saturated", [] {
    Tape t(false);
    expect(cross_entropy(t, Tensor::of({3}, {20, -20, -20}), 0).item() < 1e-8,
           "CE saturated correct class should be ~0");
  });

  h.run("cross-entropy nonnegative", [] {
    Rng rng(13);
    Tape t(false);
    for (int inst = 0; inst < 50; ++inst) {
      Tensor logits = random_tensor(rng, {4}, -10, 10);
      expect(cross_entropy(t, logits, rng.uniform_int(0, 3)).item() >= 0.0, "CE < 0");
    }
  });

  h.run("backward of sum is ones", [] {
    Tape t;
    Tensor x = t.leaf(Tensor::of({4}, {1, -2, 3, 0.5}));
    auto g = t.backward(sum(t, x), {x.node});
    expect((g.at(x).values == 1.0).all(), "d(sum)/dx != 1");
  });

  h.run("relu dead unit has zero gradient", [] {
    Tape t;
    Tensor x = t.leaf(Tensor::of({1}, {-0.7}));
    auto g = t.backward(sum(t, relu(t, x)), {x.node});
    expect(g.at(x).values[0] == 0.0, "gradient through dead relu != 0");
  });

  h.run("global_avg_pool spreads 1/(H'W')", [] {
    Tape t;
    Rng rng(14);
    Tensor a = t.leaf(random_tensor(rng, {2, 3, 3}));
    Tensor pooled = global_avg_pool(t, a);
    auto g = t.backward(pick(t, pooled, 0), {a.node});
    for (int i = 0; i < 9; ++i)
      expect_near(g.at(a).values[i], 1.0 / 9.0, 1e-15, "gap gradient cell");
    for (int i = 9; i < 18; ++i) expect(g.at(a).values[i] == 0.0, "gap gradient other channel");
  });

  h.run("finite-diff on sum of squares", [] {
    Tensor fd = finite_diff_gradient(
        [](const Tensor& x) { return (x.values * x.values).sum(); }, Tensor::of({2}, {1, 2}),
        1e-6);
    expect_near(fd.values[0], 2.0, 1e-6, "d(sum sq)/dx0");
    expect_near(fd.values[1], 4.0, 1e-6, "d(sum sq)/dx1");
  });

  h.run("cross-entropy gradient = softmax - onehot", [] {
    Tape t;
    Tensor logits = t.leaf(Tensor::zeros({3}));
    auto g = t.backward(cross_entropy(t, logits, 1), {logits.node});
    const double third = 1.0 / 3.0;
    expect_near(g.at(logits).values[0], third, 1e-12, "CE grad[0]");
    expect_near(g.at(logits).values[1], third - 1.0, 1e-12, "CE grad[1]");
    expect_near(g.at(logits).values[2], third, 1e-12, "CE grad[2]");
    Tensor fd = finite_diff_gradient(
        [](const Tensor& z) {
          Tape probe(false);
          return cross_entropy(probe, z, 1).item();
        },
        Tensor::zeros({3}), 1e-6);
    expect(max_rel_err(g.at(logits), fd) <= kGradTol, "CE grad vs finite differences");
  });

  h.run("d sum(a*b) / da = b", [] {
    Rng rng(15);
    Tensor a = random_tensor(rng, {6}), b = random_tensor(rng, {6});
    Tape t;
    Tensor al = t.leaf(a), bl = t.leaf(b);
    auto g = t.backward(sum(t, mul_elementwise(t, al, bl)), {al.node});
    expect((g.at(al).values - b.values).abs().maxCoeff() < 1e-15, "grad != b");
    Tensor fd = finite_diff_gradient(
        [&](const Tensor& x) { return (x.values * b.values).sum(); }, a, 1e-6);
    expect(max_rel_err(g.at(al), fd) <= kGradTol, "grad vs finite differences");
  });
}

void suite_gradient_checks(Harness& h, const VerifyOptions& options) {
  h.section("gradient-checks");
  const int instances = 10;

  auto fault_for = [&](const char* op) {
    return options.inject_fault_op == op ? 1e-3 : 0.0;
  };

  auto run_op = [&](const char* name, Shape out_shape,
                    const std::function<std::vector<Tensor>(Rng&)>& make_inputs,
                    const check::OpFn& op) {
    h.run(std::string("gradcheck ") + name, [&, name] {
      Rng rng(100 + static_cast<std::uint64_t>(name[0]) * 7 + name[1]);
      double worst = 0.0;
      for (int i = 0; i < instances; ++i) {
        auto inputs = make_inputs(rng);
        Tensor proj = random_tensor(rng, out_shape);
        worst = std::max(worst, gradcheck_op(op, inputs, proj, 1e-6, fault_for(name)));
      }
      expect(worst <= kGradTol, std::string("op '") + name + "' gradient error " +
                                    std::to_string(worst) + " exceeds 1e-5");
    });
  };

  run_op(
      "add", {2, 3}, [](Rng& r) { return std::vector<Tensor>{random_tensor(r, {2, 3}),
                                                             random_tensor(r, {2, 3})}; },
      [](Tape& t, std::span<const Tensor> in) { return add(t, in[0], in[1]); });
  run_op(
      "add-scalar", {2, 3},
      [](Rng& r) { return std::vector<Tensor>{random_tensor(r, {1}), random_tensor(r, {2, 3})}; },
      [](Tape& t, std::span<const Tensor> in) { return add(t, in[0], in[1]); });
  run_op(
      "mul_elementwise", {2, 3},
      [](Rng& r) {
        return std::vector<Tensor>{random_tensor(r, {2, 3}), random_tensor(r, {2, 3})};
      },
      [](Tape& t, std::span<const Tensor> in) { return mul_elementwise(t, in[0], in[1]); });
  run_op(
      "mul-scalar", {2, 3},
      [](Rng& r) { return std::vector<Tensor>{random_tensor(r, {2, 3}), random_tensor(r, {1})}; },
      [](Tape& t, std::span<const Tensor> in) { return mul_elementwise(t, in[0], in[1]); });
  run_op(
      "matmul", {3, 2},
      [](Rng& r) { return std::vector<Tensor>{random_tensor(r, {3, 4}), random_tensor(r, {4, 2})}; },
      [](Tape& t, std::span<const Tensor> in) { return matmul(t, in[0], in[1]); });
  run_op(
      "conv2d", {3, 5, 5},
      [](Rng& r) {
        return std::vector<Tensor>{random_tensor(r, {2, 5, 5}), random_tensor(r, {3, 2, 3, 3}),
                                   random_tensor(r, {3})};
      },
      [](Tape& t, std::span<const Tensor> in) { return conv2d(t, in[0], in[1], in[2], 1, 1); });
  run_op(
      "conv2d-strided", {3, 2, 2},
      [](Rng& r) {
        return std::vector<Tensor>{random_tensor(r, {2, 5, 5}), random_tensor(r, {3, 2, 3, 3}),
                                   random_tensor(r, {3})};
      },
      [](Tape& t, std::span<const Tensor> in) { return conv2d(t, in[0], in[1], in[2], 2, 0); });
  run_op(
      "relu", {7}, [](Rng& r) { return std::vector<Tensor>{random_signed(r, {7})}; },
      [](Tape& t, std::span<const Tensor> in) { return relu(t, in[0]); });
  run_op(
      "max_pool2d", {2, 2, 2},
      [](Rng& r) { return std::vector<Tensor>{random_tensor(r, {2, 4, 4})}; },
      [](Tape& t, std::span<const Tensor> in) { return max_pool2d(t, in[0], 2, 2); });
  run_op(
      "global_avg_pool", {3},
      [](Rng& r) { return std::vector<Tensor>{random_tensor(r, {3, 4, 4})}; },
      [](Tape& t, std::span<const Tensor> in) { return global_avg_pool(t, in[0]); });
  run_op(
      "col_mean", {3}, [](Rng& r) { return std::vector<Tensor>{random_tensor(r, {6, 3})}; },
      [](Tape& t, std::span<const Tensor> in) { return col_mean(t, in[0]); });
  run_op(
      "dense", {4},
      [](Rng& r) {
        return std::vector<Tensor>{random_tensor(r, {5}), random_tensor(r, {5, 4}),
                                   random_tensor(r, {4})};
      },
      [](Tape& t, std::span<const Tensor> in) { return dense(t, in[0], in[1], in[2]); });
  run_op(
      "dense-matrix", {3, 4},
      [](Rng& r) {
        return std::vector<Tensor>{random_tensor(r, {3, 5}), random_tensor(r, {5, 4}),
                                   random_tensor(r, {4})};
      },
      [](Tape& t, std::span<const Tensor> in) { return dense(t, in[0], in[1], in[2]); });
  run_op(
      "layer_norm", {4, 6}, [](Rng& r) { return std::vector<Tensor>{random_tensor(r, {4, 6})}; },
      [](Tape& t, std::span<const Tensor> in) { return layer_norm(t, in[0]); });
  run_op(
      "softmax", {5}, [](Rng& r) { return std::vector<Tensor>{random_tensor(r, {5}, -4, 4)}; },
      [](Tape& t, std::span<const Tensor> in) { return softmax(t, in[0]); });
  run_op(
      "softmax_rows", {3, 4},
      [](Rng& r) { return std::vector<Tensor>{random_tensor(r, {3, 4}, -4, 4)}; },
      [](Tape& t, std::span<const Tensor> in) { return softmax_rows(t, in[0]); });
  run_op(
      "cross_entropy", {1},
      [](Rng& r) { return std::vector<Tensor>{random_tensor(r, {4}, -3, 3)}; },
      [](Tape& t, std::span<const Tensor> in) { return cross_entropy(t, in[0], 2); });
  run_op(
      "transpose", {4, 3}, [](Rng& r) { return std::vector<Tensor>{random_tensor(r, {3, 4})}; },
      [](Tape& t, std::span<const Tensor> in) { return transpose(t, in[0]); });
  run_op(
      "reshape", {3, 4}, [](Rng& r) { return std::vector<Tensor>{random_tensor(r, {2, 6})}; },
      [](Tape& t, std::span<const Tensor> in) { return reshape(t, in[0], {3, 4}); });
  run_op(
      "concat_channels", {3, 3, 3},
      [](Rng& r) {
        return std::vector<Tensor>{random_tensor(r, {2, 3, 3}), random_tensor(r, {1, 3, 3})};
      },
      [](Tape& t, std::span<const Tensor> in) { return concat_channels(t, in[0], in[1]); });
  run_op(
      "pick", {1}, [](Rng& r) { return std::vector<Tensor>{random_tensor(r, {7})}; },
      [](Tape& t, std::span<const Tensor> in) { return pick(t, in[0], 3); });
  run_op(
      "sum", {1}, [](Rng& r) { return std::vector<Tensor>{random_tensor(r, {9})}; },
      [](Tape& t, std::span<const Tensor> in) { return sum(t, in[0]); });
}

void suite_conv_reference(Harness& h) {
  h.section("conv-reference");

  h.run("1x1 identity kernel", [] {
    Rng rng(21);
    Tape t(false);
    Tensor img = random_tensor(rng, {1, 4, 4});
    Tensor out = conv2d(t, img, Tensor::of({1, 1, 1, 1}, {1.0}), Tensor::zeros({1}), 1, 0);
    expect((out.values - img.values).abs().maxCoeff() == 0.0, "1x1 identity kernel changed input");
  });

  h.run("3x3 ones kernel on one-hot", [] {
    Tape t(false);
    Tensor img = Tensor::zeros({1, 5, 5});
    img.values[2 * 5 + 2] = 1.0;  // hot pixel at (2,2)
    Tensor out = conv2d(t, img, Tensor::full({1, 1, 3, 3}, 1.0), Tensor::zeros({1}), 1, 1);
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 5; ++x) {
        const double want = (std::abs(y - 2) <= 1 && std::abs(x - 2) <= 1) ? 1.0 : 0.0;
        expect(out.values[y * 5 + x] == want, "3x3 block of ones mismatch");
      }
  });

  h.run("random instances vs quadruple loop", [] {
    Rng rng(22);
    Tape t(false);
    for (int inst = 0; inst < 20; ++inst) {
      const int c = rng.uniform_int(1, 3), d = rng.uniform_int(1, 3);
      const int k = rng.uniform_int(1, 3), s = rng.uniform_int(1, 2), p = rng.uniform_int(0, 1);
      const int hw = rng.uniform_int(k, 6);
      Tensor img = random_tensor(rng, {c, hw, hw});
      Tensor ker = random_tensor(rng, {d, c, k, k});
      Tensor bias = random_tensor(rng, {d});
      Tensor got = conv2d(t, img, ker, bias, s, p);
      Tensor want = conv2d_reference(img, ker, bias, s, p);
      expect(got.shape == want.shape, "conv shape mismatch vs reference");
      expect((got.values - want.values).abs().maxCoeff() <= 1e-12,
             "conv2d diverges from quadruple-loop reference");
    }
  });
}

void suite_models(Harness& h) {
  h.section("models");

  h.run("shape chain examples", [] {
    ModelConfig cfg;
    cfg.input = {1, 64, 64};
    cfg.layers = {{"conv", ConvSpec{8, 3, 1, 1}},
                  {"pool", MaxPoolSpec{2, 2}},
                  {"gap", GlobalAvgPoolSpec{}},
                  {"fc", DenseSpec{3}}};
    auto chain = validate(cfg);
    expect(chain[0].describe() == "8x64x64 (spatial)", "Conv(8,3,1,1) on 1x64x64");
    expect(chain[1].describe() == "8x32x32 (spatial)", "MaxPool(2,2) on 8x64x64");

    ModelConfig vit = preset_config("tiny-vit", {1, 64, 64});
    auto vchain = validate(vit);
    expect(vchain[0].kind == LayerShape::Kind::Tokens && vchain[0].dims[0] == 64 &&
               vchain[0].dims[1] == 16,
           "PatchEmbed(8,16) on 1x64x64 should give 64 tokens of width 16");
  });

  h.run("capture shape after two pools", [] {
    auto cfg = preset_config("cnn-a", {1, 64, 64});
    auto cap = capture_shape(cfg);
    expect(cap[0] == 24 && cap[1] == 16 && cap[2] == 16, "cnn-a capture should be 24x16x16");
  });

  h.run("init determinism and seed sensitivity", [] {
    auto cfg = preset_config("cnn-a", {1, 16, 16});
    ModelParams a = init_params(cfg, 7), b = init_params(cfg, 7), c = init_params(cfg, 8);
    bool same = true, differ = false;
    for (std::size_t i = 0; i < a.tensors.size(); ++i) {
      same = same && (a.tensors[i].value.values == b.tensors[i].value.values).all();
      differ = differ || (a.tensors[i].value.values != c.tensors[i].value.values).any();
    }
    expect(same, "init_params(c,7) twice is not bitwise identical");
    expect(differ, "init_params(c,7) and (c,8) are identical");
  });

  h.run("glorot sample mean within 3 sigma", [] {
    ModelConfig cfg;
    cfg.input = {1, 1, 1};
    cfg.layers = {{"fc0", DenseSpec{10000}}, {"fc", DenseSpec{3}}};
    ModelParams p = init_params(cfg, 42);
    const Tensor& w = p.tensors[0].value;  // 1x10000 weight draws
    const double bound = std::sqrt(6.0 / (1 + 10000));
    const double sigma_mean = bound / std::sqrt(3.0 * w.size());
    expect(std::abs(w.values.mean()) <= 3.0 * sigma_mean, "weight sample mean beyond 3 sigma");
  });

  h.run("predict argmax and tie rule", [] {
    ModelConfig cfg;
    cfg.input = {1, 1, 1};
    cfg.layers = {{"fc", DenseSpec{3}}};
    ModelParams p = init_params(cfg, 0);
    p.tensors[0].value = Tensor::zeros({1, 3});
    p.tensors[1].value = Tensor::of({3}, {0.1, 0.9, 0.3});
    expect(predict(p, Tensor::zeros({1, 1, 1})) == 1, "argmax of [0.1,0.9,0.3]");
    p.tensors[1].value = Tensor::of({3}, {0.5, 0.5, 0.1});
    expect(predict(p, Tensor::zeros({1, 1, 1})) == 0, "exact tie should pick class 0");
  });

  h.run("zero final layer gives uniform softmax", [] {
    auto cfg = preset_config("cnn-a", {1, 16, 16});
    ModelParams p = init_params(cfg, 3);
    p.tensors[p.tensors.size() - 2].value.values.setZero();  // fc.weight
    p.tensors[p.tensors.size() - 1].value.values.setZero();  // fc.bias
    Rng rng(31);
    Tensor x = random_tensor(rng, {1, 16, 16}, 0, 1);
    Tape t(false);
    Tensor probs = softmax(t, forward(p, x));
    for (int i = 0; i < 3; ++i) expect_near(probs.values[i], 1.0 / 3.0, 1e-12, "uniform softmax");
  });

  h.run("checkpoint round-trip", [] {
    auto cfg = preset_config("cnn-dense", {1, 16, 16});
    ModelParams p = init_params(cfg, 99);
    const auto path = temp_file("verify-ckpt");
    save_params(p, path);
    ModelParams q = load_params(path);
    expect(q.seed == p.seed && q.fingerprint == p.fingerprint, "checkpoint header mismatch");
    for (std::size_t i = 0; i < p.tensors.size(); ++i)
      expect(p.tensors[i].name == q.tensors[i].name &&
                 (p.tensors[i].value.values == q.tensors[i].value.values).all(),
             "checkpoint tensors not bitwise identical");
    Rng rng(32);
    Tensor x = random_tensor(rng, {1, 16, 16}, 0, 1);
    expect((forward(p, x).values == forward(q, x).values).all(),
           "reloaded checkpoint changes logits");
    std::filesystem::remove(path);
  });
}

void suite_gradcam(Harness& h) {
  h.section("gradcam");

  // Hand-built trace: activation -> global average pool -> identity dense.
  auto gap_identity_trace = [](const Tensor& activation, int classes) {
    auto tape = std::make_shared<Tape>(true);
    Tensor a = tape->leaf(activation);
    Tensor pooled = global_avg_pool(*tape, a);
    Tensor w = Tensor::zeros({activation.shape[0], classes});
    for (int i = 0; i < std::min(activation.shape[0], classes); ++i)
      w.values[i * classes + i] = 1.0;
    Tensor logits = dense(*tape, pooled, tape->leaf(w), tape->leaf(Tensor::zeros({classes})));
    return ForwardTrace{logits, a, tape, {}};
  };

  h.run("alpha for gap + identity dense", [&] {
    Rng rng(41);
    Tensor a = random_tensor(rng, {3, 2, 2});
    auto trace = gap_identity_trace(a, 3);
    ChannelWeights w = channel_weights(trace, 1, ScoreMode::Logit);
    expect_near(w.alpha[0], 0.0, 1e-15, "alpha[0]");
    expect_near(w.alpha[1], 0.25, 1e-15, "alpha[1] should be 1/(H'W')");
    expect_near(w.alpha[2], 0.0, 1e-15, "alpha[2]");
  });

  h.run("alpha scales with final dense", [&] {
    auto cfg = preset_config("cnn-a", {1, 16, 16});
    ModelParams p = init_params(cfg, 5);
    Rng rng(42);
    Tensor x = random_tensor(rng, {1, 16, 16}, 0, 1);
    ChannelWeights w1 = channel_weights(forward_with_capture(p, x), 2, ScoreMode::Logit);
    p.tensors[p.tensors.size() - 2].value.values *= 2.0;
    p.tensors[p.tensors.size() - 1].value.values *= 2.0;
    ChannelWeights w2 = channel_weights(forward_with_capture(p, x), 2, ScoreMode::Logit);
    expect((w2.alpha - 2.0 * w1.alpha).abs().maxCoeff() <= 1e-12,
           "doubling the head should double alpha");
  });

  h.run("alpha matches finite differences on A", [&] {
    Rng rng(43);
    for (int inst = 0; inst < 5; ++inst) {
      const int d = rng.uniform_int(2, 4), hw = rng.uniform_int(2, 4);
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
            Tape t2(false);
            Tensor l2 = dense(t2, global_avg_pool(t2, probe), w, b);
            return l2.values[target];
          },
          a, 1e-6);
      for (int k = 0; k < d; ++k) {
        const double alpha_fd =
            fd.values.segment(static_cast<Eigen::Index>(k) * hw * hw, hw * hw).mean();
        expect(rel_err(alpha.alpha[k], alpha_fd) <= kGradTol, "alpha vs finite differences");
      }
    }
  });

  h.run("raw map relu cases", [] {
    Tensor a = Tensor::of({2, 1, 2}, {1.0, 2.0, 1.0, 2.0});
    Grid zero = raw_map(ChannelWeights{Eigen::ArrayXd::Constant(2, -1.0), 0}, a);
    expect(zero.maxCoeff() == 0.0, "negative alpha on nonneg A should give zeros");

    Eigen::ArrayXd one(1);
    one[0] = 1.0;
    Tensor single = Tensor::of({1, 2, 2}, {-1.0, 0.5, 2.0, -0.25});
    Grid r = raw_map(ChannelWeights{one, 0}, single);
    expect(r(0, 0) == 0.0 && r(0, 1) == 0.5 && r(1, 0) == 2.0 && r(1, 1) == 0.0,
           "single channel raw map should be relu(A)");

    Eigen::ArrayXd cancel(2);
    cancel[0] = 1.0;
    cancel[1] = -1.0;
    Grid c = raw_map(ChannelWeights{cancel, 0}, a);
    expect(c.abs().maxCoeff() == 0.0, "alpha=(1,-1) on equal channels should cancel");
  });

  h.run("upsample bilinear cases", [] {
    Grid constant = Grid::Constant(2, 2, 0.7);
    expect((upsample_bilinear(constant, 5, 7) - 0.7).abs().maxCoeff() <= 1e-15,
           "constant map should stay constant");

    Grid ramp(2, 2);
    ramp << 0, 1, 0, 1;
    Grid up = upsample_bilinear(ramp, 2, 4);
    for (int r = 0; r < 2; ++r) {
      expect_near(up(r, 0), 0.0, 1e-15, "ramp col 0");
      expect_near(up(r, 1), 1.0 / 3.0, 1e-15, "ramp col 1");
      expect_near(up(r, 2), 2.0 / 3.0, 1e-15, "ramp col 2");
      expect_near(up(r, 3), 1.0, 1e-15, "ramp col 3");
    }

    Grid same = upsample_bilinear(ramp, 2, 2);
    expect((same - ramp).abs().maxCoeff() == 0.0, "same-size upsample should be identity");
  });

  h.run("normalize min-max cases", [] {
    Grid m(1, 3);
    m << 2, 4, 6;
    Grid n = normalize_minmax(m);
    expect(n(0, 0) == 0.0 && n(0, 1) == 0.5 && n(0, 2) == 1.0, "normalize [2,4,6]");
    expect(normalize_minmax(Grid::Constant(3, 3, 5.0)).abs().maxCoeff() == 0.0,
           "constant map should normalize to zeros");
    expect((normalize_minmax(n) - n).abs().maxCoeff() == 0.0, "normalize should be idempotent");
  });

  h.run("logit-scale invariance of normalized map", [] {
    auto cfg = preset_config("cnn-a", {1, 16, 16});
    ModelParams p = init_params(cfg, 6);
    Rng rng(44);
    Tensor x = random_tensor(rng, {1, 16, 16}, 0, 1);
    Heatmap base = explain(p, x, 1, ScoreMode::Logit);
    for (double gamma : {0.1, 3.0, 100.0}) {
      ModelParams scaled = p;
      scaled.tensors[scaled.tensors.size() - 2].value.values *= gamma;
      scaled.tensors[scaled.tensors.size() - 1].value.values *= gamma;
      Heatmap hm = explain(scaled, x, 1, ScoreMode::Logit);
      expect((hm.normalized - base.normalized).abs().maxCoeff() <= 1e-9,
             "normalized map changed under logit scaling");
    }
  });

  h.run("explain determinism and nonnegativity", [] {
    Rng rng(45);
    for (const char* preset : {"cnn-a", "tiny-vit"}) {
      auto cfg = preset_config(preset, {1, 16, 16});
      ModelParams p = init_params(cfg, rng.next_u64());
      Tensor x = random_tensor(rng, {1, 16, 16}, 0, 1);
      Heatmap a = explain(p, x, 0), b = explain(p, x, 0);
      expect((a.raw == b.raw).all() && (a.normalized == b.normalized).all(),
             "explain is not deterministic");
      expect(a.raw.minCoeff() >= 0.0, "raw map went negative");
    }
  });

  h.run("1x1 positive conv capture is monotone in input", [] {
    ModelConfig cfg;
    cfg.input = {1, 6, 6};
    cfg.layers = {{"conv1", ConvSpec{1, 1, 1, 0}},
                  {"gap", GlobalAvgPoolSpec{}},
                  {"fc", DenseSpec{3}}};
    cfg.capture_layer = "conv1";
    ModelParams p = init_params(cfg, 0);
    p.tensors[0].value = Tensor::of({1, 1, 1, 1}, {2.0});  // positive 1x1 conv
    p.tensors[1].value = Tensor::zeros({1});
    p.tensors[2].value = Tensor::of({1, 3}, {1.0, 0.0, 0.0});
    p.tensors[3].value = Tensor::zeros({3});
    Rng rng(46);
    Tensor x = random_tensor(rng, {1, 6, 6}, 0, 1);
    Heatmap hm = explain(p, x, 0, ScoreMode::Logit);
    Grid img(6, 6);
    for (int i = 0; i < 36; ++i) img.data()[i] = x.values[i];
    expect((hm.normalized - normalize_minmax(img)).abs().maxCoeff() <= 1e-12,
           "normalized map should be the min-max normalized input");
  });
}

void suite_metrics(Harness& h) {
  h.section("metrics");

  auto heat_of = [](const Grid& normalized) {
    Heatmap hm;
    hm.raw = normalized;
    hm.normalized = normalized;
    return hm;
  };

  h.run("binarize cases", [&] {
    Grid zeros = Grid::Zero(4, 4);
    expect(binarize(heat_of(zeros), 0.5).is_empty(), "zero map should give an empty mask");

    Grid board = Grid::Zero(2, 2);
    board(0, 0) = 1.0;
    board(1, 1) = 1.0;
    BinaryMask m = binarize(heat_of(board), 0.5);
    expect(m.values(0, 0) && !m.values(0, 1) && !m.values(1, 0) && m.values(1, 1),
           "checkerboard at tau=0.5 should keep exactly the 1 cells");

    Grid spot = Grid::Zero(3, 3);
    spot(1, 2) = 0.4;
    expect(binarize(heat_of(spot), 1e-9).values(1, 2), "tiny tau should include positive pixels");
  });

  h.run("binarize grows as tau falls", [&] {
    Rng rng(51);
    for (int inst = 0; inst < 30; ++inst) {
      Grid m(5, 5);
      for (int i = 0; i < 25; ++i) m.data()[i] = rng.next_double();
      BinaryMask hi = binarize(heat_of(m), 0.7), lo = binarize(heat_of(m), 0.3);
      expect(((!hi.values) || lo.values).all(), "lowering tau removed a pixel");
    }
  });

  h.run("loc_acc full, disjoint, half", [&] {
    Grid left = Grid::Zero(4, 4);
    left.block(0, 0, 4, 2).setConstant(1.0);
    MaskGrid inside = MaskGrid::Constant(4, 4, false);
    inside(1, 0) = inside(2, 1) = true;
    std::vector<Heatmap> maps{heat_of(left)};
    std::vector<BinaryMask> masks{BinaryMask::of(inside)};
    expect_near(loc_acc(maps, masks, 0.5).value, 1.0, 1e-15, "covered mask");

    MaskGrid outside = MaskGrid::Constant(4, 4, false);
    outside(0, 3) = outside(3, 3) = true;
    masks[0] = BinaryMask::of(outside);
    expect_near(loc_acc(maps, masks, 0.5).value, 0.0, 1e-15, "disjoint mask");

    // 10-pixel mask, map covering exactly 5 of them.
    Grid cover = Grid::Zero(4, 4);
    MaskGrid ten = MaskGrid::Constant(4, 4, false);
    int placed = 0;
    for (int r = 0; r < 4 && placed < 10; ++r)
      for (int c = 0; c < 4 && placed < 10; ++c) {
        ten(r, c) = true;
        if (placed < 5) cover(r, c) = 1.0;
        ++placed;
      }
    maps[0] = heat_of(cover);
    masks[0] = BinaryMask::of(ten);
    expect_near(loc_acc(maps, masks, 0.5).value, 0.5, 1e-15, "half-covered mask");
  });

  h.run("loc_acc saturation pitfall is pinned", [&] {
    // A map that is positive everywhere covers any mask: coverage, not IoU.
    Grid ones = Grid::Constant(6, 6, 1.0);
    MaskGrid any = MaskGrid::Constant(6, 6, false);
    any(2, 3) = any(5, 0) = true;
    std::vector<Heatmap> maps{heat_of(ones)};
    std::vector<BinaryMask> masks{BinaryMask::of(any)};
    expect_near(loc_acc(maps, masks, 0.5).value, 1.0, 1e-15, "all-positive map");
  });

  h.run("iou cases and symmetry", [] {
    MaskGrid a = MaskGrid::Constant(3, 3, false), b = MaskGrid::Constant(3, 3, false);
    a(0, 0) = a(0, 1) = true;
    b(0, 0) = b(0, 1) = b(1, 0) = b(1, 1) = true;
    expect_near(iou(BinaryMask::of(a), BinaryMask::of(b)), 0.5, 1e-15, "2 vs 4 sharing 2");
    expect_near(iou(BinaryMask::of(a), BinaryMask::of(a)), 1.0, 1e-15, "identical masks");

    MaskGrid c = MaskGrid::Constant(3, 3, false);
    c(2, 2) = true;
    expect_near(iou(BinaryMask::of(a), BinaryMask::of(c)), 0.0, 1e-15, "disjoint masks");

    MaskGrid empty = MaskGrid::Constant(3, 3, false);
    expect_near(iou(BinaryMask::of(empty), BinaryMask::of(empty)), 1.0, 1e-15, "both empty");
    expect_near(iou(BinaryMask::of(empty), BinaryMask::of(a)), 0.0, 1e-15, "empty vs nonempty");

    Rng rng(52);
    for (int inst = 0; inst < 50; ++inst) {
      MaskGrid x(4, 4), y(4, 4);
      for (int i = 0; i < 16; ++i) {
        x.data()[i] = rng.next_double() < 0.5;
        y.data()[i] = rng.next_double() < 0.5;
      }
      const double xy = iou(BinaryMask::of(x), BinaryMask::of(y));
      const double yx = iou(BinaryMask::of(y), BinaryMask::of(x));
      expect(xy == yx, "iou is not symmetric");
      expect(xy >= 0.0 && xy <= 1.0, "iou out of [0,1]");
    }
  });

  h.run("consistency identical and disjoint", [&] {
    Grid blob = Grid::Zero(4, 4);
    blob.block(0, 0, 2, 2).setConstant(1.0);
    Grid other = Grid::Zero(4, 4);
    other.block(2, 2, 2, 2).setConstant(1.0);
    std::vector<std::vector<Heatmap>> identical{{heat_of(blob)}, {heat_of(blob)}, {heat_of(blob)}};
    expect_near(consistency(identical, 0, 0.5), 1.0, 1e-15, "identical runs");
    std::vector<std::vector<Heatmap>> disjoint{{heat_of(blob)}, {heat_of(other)}, {heat_of(other)}};
    expect_near(consistency(disjoint, 0, 0.5), 0.0, 1e-15, "disjoint runs");

    Rng rng(53);
    for (int inst = 0; inst < 50; ++inst) {
      std::vector<std::vector<Heatmap>> runs;
      for (int r = 0; r < 3; ++r) {
        Grid m(3, 3);
        for (int i = 0; i < 9; ++i) m.data()[i] = rng.next_double();
        runs.push_back({heat_of(m)});
      }
      const double v = consistency(runs, 0, 0.5);
      expect(v >= 0.0 && v <= 1.0, "consistency out of [0,1]");
    }
  });

  h.run("confusion matrix analytics", [] {
    std::vector<int> preds, labels;
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 10; ++i) {
        preds.push_back(c);
        labels.push_back(c);
      }
    MetricsSummary perfect = classification_metrics(confusion_matrix(preds, labels, 3));
    expect(perfect.accuracy == 1.0 && perfect.macro.sensitivity == 1.0 &&
               perfect.macro.specificity == 1.0 && perfect.macro.f1 == 1.0,
           "diagonal confusion matrix should score all ones");

    ConfusionMatrix cm{Eigen::MatrixXi{{5, 0, 0}, {0, 0, 5}, {0, 0, 5}}};
    MetricsSummary s = classification_metrics(cm);
    expect_near(s.accuracy, 10.0 / 15.0, 1e-12, "hand-computed accuracy");
    expect(s.per_class[1].sensitivity == 0.0, "class-1 sensitivity should be 0");
    expect(s.zero_denominator_hit, "class-1 precision has an empty denominator");
  });

  h.run("metrics vs brute-force recount", [] {
    Rng rng(54);
    for (int inst = 0; inst < 30; ++inst) {
      Eigen::MatrixXi m(3, 3);
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) m(r, c) = rng.uniform_int(0, 20);
      if (m.sum() == 0) m(0, 0) = 1;
      MetricsSummary s = classification_metrics(ConfusionMatrix{m});
      int diag = 0;
      for (int c = 0; c < 3; ++c) diag += m(c, c);
      expect(std::abs(s.accuracy - double(diag) / m.sum()) <= 1e-12,
             "accuracy vs brute-force recount");
      for (int c = 0; c < 3; ++c) {
        int tp = m(c, c), fn = 0, fp = 0;
        for (int o = 0; o < 3; ++o)
          if (o != c) {
            fn += m(c, o);
            fp += m(o, c);
          }
        const double want_sens = (tp + fn) == 0 ? 0.0 : double(tp) / (tp + fn);
        const double want_prec = (tp + fp) == 0 ? 0.0 : double(tp) / (tp + fp);
        expect(std::abs(s.per_class[c].sensitivity - want_sens) <= 1e-12, "sensitivity recount");
        expect(std::abs(s.per_class[c].precision - want_prec) <= 1e-12, "precision recount");
      }
    }
  });

  h.run("faith is exactly zero for constant model", [&] {
    auto cfg = preset_config("cnn-a", {1, 16, 16});
    ModelParams p = init_params(cfg, 9);
    p.tensors[p.tensors.size() - 2].value.values.setZero();
    p.tensors[p.tensors.size() - 1].value.values.setZero();
    Rng rng(55);
    Tensor x = random_tensor(rng, {1, 16, 16}, 0, 1);
    Grid heat = Grid::Constant(16, 16, 0.8);
    Heatmap hm = heat_of(heat);
    expect(faith_single(p, x, 0, hm, ScoreMode::Probability) == 0.0,
           "constant model should have zero faith");
    expect(faith_single(p, x, 0, hm, ScoreMode::Logit) == 0.0,
           "constant model should have zero faith (logit)");
  });

  h.run("faith is exactly zero for zero heatmap", [&] {
    auto cfg = preset_config("cnn-a", {1, 16, 16});
    ModelParams p = init_params(cfg, 10);
    Rng rng(56);
    Tensor x = random_tensor(rng, {1, 16, 16}, 0, 1);
    Heatmap hm = heat_of(Grid::Zero(16, 16));
    expect(faith_single(p, x, 1, hm) == 0.0, "zero heatmap leaves the input unchanged");
  });
}

void suite_phantom(Harness& h) {
  h.section("phantom");

  PhantomConfig small;
  small.size = 64;
  small.per_class = 12;

  h.run("generation determinism", [&] {
    auto a = generate(small, 5), b = generate(small, 5);
    expect(a.size() == b.size(), "dataset sizes differ");
    for (std::size_t i = 0; i < a.size(); ++i)
      expect(a[i].id == b[i].id && a[i].label == b[i].label &&
                 (a[i].image == b[i].image).all() &&
                 (a[i].mask.values == b[i].mask.values).all(),
             "generate(c,5) twice differs");
    auto c = generate(small, 6);
    bool differ = false;
    for (std::size_t i = 0; i < a.size(); ++i)
      differ = differ || (a[i].image != c[i].image).any();
    expect(differ, "different seeds gave identical datasets");
  });

  h.run("label/mask coupling and lung containment", [&] {
    auto samples = generate(small, 7);
    const BinaryMask lung = lung_field_mask(small);
    for (const Sample& s : samples) {
      if (s.label == kNormal)
        expect(s.mask.is_empty(), "Normal sample has a mask");
      else
        expect(!s.mask.is_empty(), "lesion sample has an empty mask");
      expect(((!s.mask.values) || lung.values).all(), "mask pixel outside the lung field");
    }
  });

  h.run("malignant masks larger than benign", [&] {
    auto samples = generate(small, 8);
    int benign_max = 0, malignant_min = 1 << 30;
    for (const Sample& s : samples) {
      if (s.label == kBenign) benign_max = std::max(benign_max, s.mask.positives);
      if (s.label == kMalignant) malignant_min = std::min(malignant_min, s.mask.positives);
    }
    expect(malignant_min > benign_max, "malignant mask area should exceed benign");
  });

  h.run("lesion contrast equals delta before noise", [&] {
    PhantomConfig clean = small;
    clean.noise_sigma = 0.0;
    clean.per_class = 6;
    auto samples = generate(clean, 9);
    const BinaryMask lung = lung_field_mask(clean);
    for (const Sample& s : samples) {
      if (s.label == kNormal) continue;
      double inside = 0.0, lung_out = 0.0;
      int n_in = 0, n_out = 0;
      for (int y = 0; y < clean.size; ++y)
        for (int x = 0; x < clean.size; ++x) {
          if (s.mask.values(y, x)) {
            inside += s.image(y, x);
            ++n_in;
          } else if (lung.values(y, x)) {
            lung_out += s.image(y, x);
            ++n_out;
          }
        }
      expect_near(inside / n_in - lung_out / n_out, clean.contrast, 1e-12,
                  "mask/lung intensity difference");
    }
  });

  h.run("split ratios and partition", [&] {
    PhantomConfig cfg = small;
    cfg.per_class = 10;
    auto samples = generate(cfg, 10);
    DatasetSplit sp = split(samples, 1);
    expect(sp.train.size() == 18 && sp.val.size() == 6 && sp.test.size() == 6,
           "10 per class should split 6/2/2 per class");
    std::vector<int> all;
    for (auto* lst : {&sp.train, &sp.val, &sp.test})
      for (int id : *lst) all.push_back(id);
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < all.size(); ++i)
      expect(all[i] == static_cast<int>(i), "splits are not a partition of the ids");

    // Per-class exact 60:20:20 for 100 per class.
    PhantomConfig big = small;
    big.per_class = 100;
    big.size = 64;
    auto large = generate(big, 11);
    DatasetSplit sp2 = split(large, 2);
    expect(sp2.train.size() == 180 && sp2.val.size() == 60 && sp2.test.size() == 60,
           "100 per class should split 60/20/20 per class");
  });
}

void suite_io(Harness& h) {
  h.section("io");

  h.run("gfds round-trip", [] {
    PhantomConfig cfg;
    cfg.size = 32;
    cfg.per_class = 4;
    cfg.benign_radius_min = 1.0;
    cfg.benign_radius_max = 1.6;
    cfg.malignant_radius_min = 2.0;
    cfg.malignant_radius_max = 2.5;
    auto samples = generate(cfg, 3);
    const auto path = temp_file("verify-gfds");
    save_dataset(samples, path);
    auto loaded = load_dataset(path);
    expect(loaded.size() == samples.size(), "sample count changed");
    for (std::size_t i = 0; i < samples.size(); ++i)
      expect(loaded[i].id == samples[i].id && loaded[i].label == samples[i].label &&
                 (loaded[i].image == samples[i].image).all() &&
                 (loaded[i].mask.values == samples[i].mask.values).all(),
             "dataset round-trip is not bitwise");
    std::filesystem::remove(path);

    const auto empty_path = temp_file("verify-gfds-empty");
    save_dataset({}, empty_path);
    expect(load_dataset(empty_path).empty(), "empty dataset round-trip");
    std::filesystem::remove(empty_path);
  });

  h.run("gfds truncation names an offset", [] {
    PhantomConfig cfg;
    cfg.size = 32;
    cfg.per_class = 4;
    cfg.benign_radius_min = 1.0;
    cfg.benign_radius_max = 1.6;
    cfg.malignant_radius_min = 2.0;
    cfg.malignant_radius_max = 2.5;
    const auto path = temp_file("verify-gfds-trunc");
    save_dataset(generate(cfg, 4), path);
    const auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size / 2);
    try {
      load_dataset(path);
      throw Error("truncated dataset was accepted");
    } catch (const FormatError& e) {
      expect(std::string(e.what()).find("offset") != std::string::npos,
             "truncation error lacks a byte offset");
    }
    std::filesystem::remove(path);
  });

  h.run("gfck corruption fails the checksum", [] {
    auto cfg = preset_config("cnn-a", {1, 16, 16});
    const auto path = temp_file("verify-gfck-corrupt");
    save_params(init_params(cfg, 1), path);
    {
      std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
      f.seekp(64);
      char byte;
      f.seekg(64);
      f.get(byte);
      byte = static_cast<char>(byte ^ 0xFF);
      f.seekp(64);
      f.put(byte);
    }
    try {
      load_params(path);
      throw Error("corrupt checkpoint was accepted");
    } catch (const FormatError&) {
    }
    std::filesystem::remove(path);
  });

  h.run("pgm round-trip within quantization", [] {
    Rng rng(61);
    Grid img(9, 7);
    for (int i = 0; i < img.size(); ++i) img.data()[i] = rng.next_double();
    const auto path = temp_file("verify-pgm");
    write_pgm(path, img);
    Grid back = read_pgm(path);
    expect(back.rows() == img.rows() && back.cols() == img.cols(), "pgm dims changed");
    expect((back - img).abs().maxCoeff() <= 0.5 / 255.0 + 1e-12,
           "pgm round-trip exceeds the quantization bound");
    std::filesystem::remove(path);
  });

  h.run("pgm bad magic is rejected", [] {
    const auto path = temp_file("verify-pgm-bad");
    std::ofstream(path) << "P2\n2 2\n255\n0 0 0 0\n";
    try {
      read_pgm(path);
      throw Error("ascii pgm was accepted as P5");
    } catch (const FormatError&) {
    }
    std::filesystem::remove(path);
  });
}

void suite_training(Harness& h) {
  h.section("training");

  h.run("sgd step matches closed form", [] {
    // Quadratic loss f(w) = (w*x - y)^2 via tape ops, one parameter.
    const double w0 = 0.8, x = 1.5, y = 0.3, lr = 0.1, mu = 0.9;
    Tape t;
    Tensor w = t.leaf(Tensor::scalar(w0));
    Tensor err = add(t, mul_elementwise(t, w, Tensor::scalar(x)), Tensor::scalar(-y));
    Tensor loss = mul_elementwise(t, err, err);
    auto g = t.backward(loss, {w.node});
    const double grad = g.at(w).values[0];
    expect_near(grad, 2.0 * (w0 * x - y) * x, 1e-12, "quadratic gradient");
    Array theta = Array::Constant(1, w0), velocity = Array::Zero(1);
    sgd_step(theta, velocity, g.at(w).values, lr, mu);
    expect_near(theta[0], w0 - lr * 2.0 * (w0 * x - y) * x, 1e-12, "sgd update");
    // A second step picks up the momentum term.
    sgd_step(theta, velocity, g.at(w).values, lr, mu);
    expect_near(theta[0], w0 - lr * grad - lr * (mu * grad + grad), 1e-12, "momentum update");
  });

  PhantomConfig tiny;
  tiny.size = 32;
  tiny.per_class = 4;
  tiny.benign_radius_min = 1.0;
  tiny.benign_radius_max = 1.6;
  tiny.malignant_radius_min = 2.0;
  tiny.malignant_radius_max = 2.5;

  h.run("zero learning rate leaves init unchanged", [&] {
    auto samples = generate(tiny, 12);
    DatasetSplit sp = split(samples, 12);
    auto cfg = preset_config("cnn-a", {1, 32, 32});
    TrainConfig tc;
    tc.epochs = 1;
    tc.learning_rate = 0.0;
    tc.seed = 3;
    auto [params, record] = train(cfg, tc, samples, sp);
    ModelParams fresh = init_params(cfg, 3);
    for (std::size_t i = 0; i < params.tensors.size(); ++i)
      expect((params.tensors[i].value.values == fresh.tensors[i].value.values).all(),
             "lr=0 changed the parameters");
  });

  h.run("training determinism", [&] {
    auto samples = generate(tiny, 13);
    DatasetSplit sp = split(samples, 13);
    auto cfg = preset_config("cnn-a", {1, 32, 32});
    TrainConfig tc;
    tc.epochs = 2;
    tc.seed = 4;
    auto [p1, r1] = train(cfg, tc, samples, sp);
    auto [p2, r2] = train(cfg, tc, samples, sp);
    for (std::size_t i = 0; i < p1.tensors.size(); ++i)
      expect((p1.tensors[i].value.values == p2.tensors[i].value.values).all(),
             "identical runs differ bitwise");
    expect(r1.train_loss == r2.train_loss && r1.val_accuracy == r2.val_accuracy,
           "identical runs record different histories");
  });

  h.run("single-sample overfit", [&] {
    PhantomConfig one = tiny;
    one.per_class = 1;
    auto samples = generate(one, 14);
    DatasetSplit sp;
    sp.train = {samples[2].id};  // one malignant sample
    auto cfg = preset_config("cnn-a", {1, 32, 32});
    TrainConfig tc;
    tc.epochs = 200;
    tc.batch_size = 1;
    tc.seed = 5;
    auto [params, record] = train(cfg, tc, samples, sp);
    expect(record.train_loss.back() < 0.01,
           "single-sample loss after 200 epochs is " + std::to_string(record.train_loss.back()));
  });

  h.run("ensemble seeds are independent", [&] {
    auto samples = generate(tiny, 15);
    DatasetSplit sp = split(samples, 15);
    auto cfg = preset_config("cnn-a", {1, 32, 32});
    TrainConfig tc;
    tc.epochs = 1;
    const std::vector<std::uint64_t> seeds{1, 2};
    auto members = train_ensemble(cfg, tc, samples, sp, seeds);
    bool differ = false;
    for (std::size_t i = 0; i < members[0].tensors.size(); ++i)
      differ = differ || (members[0].tensors[i].value.values !=
                          members[1].tensors[i].value.values)
                             .any();
    expect(differ, "distinct seeds gave identical parameters");

    TrainConfig solo = tc;
    solo.seed = 2;
    auto [alone, rec] = train(cfg, solo, samples, sp);
    for (std::size_t i = 0; i < alone.tensors.size(); ++i)
      expect((alone.tensors[i].value.values == members[1].tensors[i].value.values).all(),
             "ensemble member does not reproduce its solo run");
  });
}

}  // namespace

std::vector<VerifyCheck> run_verification(const VerifyOptions& options) {
  Harness h;
  suite_autodiff_analytic(h);
  suite_gradient_checks(h, options);
  suite_conv_reference(h);
  suite_models(h);
  suite_gradcam(h);
  suite_metrics(h);
  suite_phantom(h);
  suite_io(h);
  suite_training(h);
  return std::move(h.results);
}

}  // namespace gradfaith
