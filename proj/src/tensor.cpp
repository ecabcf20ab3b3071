#include "gradfaith/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

namespace gradfaith {

std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

namespace {

void require_positive_dims(const Shape& s, const char* what) {
  for (int d : s)
    if (d <= 0) throw ShapeError(std::string(what) + ": non-positive dimension in " + shape_str(s));
}

void require_rank(const Tensor& t, int rank, const char* what) {
  if (t.rank() != rank)
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape));
}

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                   " do not conform");
}

}  // namespace

Tensor::Tensor(Shape s, Array v) : shape(std::move(s)), values(std::move(v)) {
  require_positive_dims(shape, "Tensor");
  if (numel(shape) != values.size())
    throw ShapeError("Tensor: shape " + shape_str(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
}

Tensor Tensor::zeros(Shape s) {
  std::int64_t n = numel(s);
  return Tensor(std::move(s), Array::Zero(n));
}

Tensor Tensor::full(Shape s, double v) {
  std::int64_t n = numel(s);
  return Tensor(std::move(s), Array::Constant(n, v));
}

Tensor Tensor::of(Shape s, std::initializer_list<double> v) {
  Array a(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) a[i++] = x;
  return Tensor(std::move(s), std::move(a));
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item(): tensor has " + std::to_string(size()) + " elements");
  return values[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
  if (static_cast<int>(idx.size()) != rank())
    throw ShapeError("at(): index rank mismatch for " + shape_str(shape));
  std::int64_t flat = 0;
  int axis = 0;
  for (int i : idx) {
    if (i < 0 || i >= shape[axis]) throw InputError("at(): index out of range");
    flat = flat * shape[axis] + i;
    ++axis;
  }
  return values[flat];
}

const Tensor& GradientSet::at(int node) const {
  auto it = grads_.find(node);
  if (it == grads_.end())
    throw ContractError("GradientSet: no gradient recorded for node " + std::to_string(node));
  return it->second;
}

Tensor Tape::leaf(const Tensor& t) {
  Tensor out = t;
  if (recording_) {
    nodes_.push_back(Node{t.shape, nullptr});
    out.node = static_cast<int>(nodes_.size()) - 1;
  } else {
    out.node = -1;
  }
  return out;
}

int Tape::push(Shape shape, BackwardFn fn) {
  nodes_.push_back(Node{std::move(shape), std::move(fn)});
  return static_cast<int>(nodes_.size()) - 1;
}

GradientSet Tape::backward(const Tensor& scalar, std::span<const int> wrt) const {
  if (scalar.size() != 1)
    throw ContractError("backward: seed must be a scalar, got " + shape_str(scalar.shape));
  if (scalar.node < 0 || scalar.node >= static_cast<int>(nodes_.size()))
    throw ContractError("backward: seed is not recorded on this tape");
  for (int id : wrt)
    if (id < 0 || id >= static_cast<int>(nodes_.size()))
      throw ContractError("backward: requested node " + std::to_string(id) +
                          " is not on this tape");

  std::vector<Array> slot(nodes_.size());
  slot[static_cast<std::size_t>(scalar.node)] = Array::Ones(1);
  Accum acc{slot};
  for (int i = scalar.node; i >= 0; --i) {
    const auto idx = static_cast<std::size_t>(i);
    if (slot[idx].size() == 0) continue;
    if (nodes_[idx].fn) nodes_[idx].fn(slot[idx], acc);
  }

  GradientSet out;
  for (int id : wrt) {
    const auto idx = static_cast<std::size_t>(id);
    if (slot[idx].size() != 0)
      out.put(id, Tensor(nodes_[idx].shape, slot[idx]));
    else
      out.put(id, Tensor::zeros(nodes_[idx].shape));
  }
  return out;
}

// ---- elementwise ----------------------------------------------------------

namespace {

bool is_scalar(const Tensor& t) { return t.size() == 1; }

}  // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  Tensor out;
  if (a.shape == b.shape) {
    out = Tensor(a.shape, a.values + b.values);
    if (tape.recording()) {
      int pa = a.node, pb = b.node;
      out.node = tape.push(out.shape, [pa, pb](const Array& g, Tape::Accum& acc) {
        acc.add(pa, g);
        acc.add(pb, g);
      });
    }
    return out;
  }
  if (is_scalar(a)) {
    out = Tensor(b.shape, a.values[0] + b.values);
    if (tape.recording()) {
      int pa = a.node, pb = b.node;
      out.node = tape.push(out.shape, [pa, pb](const Array& g, Tape::Accum& acc) {
        acc.add(pa, Array::Constant(1, g.sum()));
        acc.add(pb, g);
      });
    }
    return out;
  }
  if (is_scalar(b)) return add(tape, b, a);
  shape_mismatch("add", a.shape, b.shape);
}

Tensor mul_elementwise(Tape& tape, const Tensor& a, const Tensor& b) {
  Tensor out;
  if (a.shape == b.shape) {
    out = Tensor(a.shape, a.values * b.values);
    if (tape.recording()) {
      int pa = a.node, pb = b.node;
      Array av = a.values, bv = b.values;
      out.node = tape.push(out.shape, [pa, pb, av, bv](const Array& g, Tape::Accum& acc) {
        acc.add(pa, g * bv);
        acc.add(pb, g * av);
      });
    }
    return out;
  }
  if (is_scalar(a)) {
    out = Tensor(b.shape, a.values[0] * b.values);
    if (tape.recording()) {
      int pa = a.node, pb = b.node;
      double s = a.values[0];
      Array bv = b.values;
      out.node = tape.push(out.shape, [pa, pb, s, bv](const Array& g, Tape::Accum& acc) {
        acc.add(pa, Array::Constant(1, (g * bv).sum()));
        acc.add(pb, g * s);
      });
    }
    return out;
  }
  if (is_scalar(b)) return mul_elementwise(tape, b, a);
  shape_mismatch("mul_elementwise", a.shape, b.shape);
}

// ---- matrix ops ------------------------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  if (a.shape[1] != b.shape[0]) shape_mismatch("matmul", a.shape, b.shape);
  const int m = a.shape[0], n = a.shape[1], p = b.shape[1];
  CMapRM A(a.values.data(), m, n), B(b.values.data(), n, p);
  Array ov(static_cast<Eigen::Index>(m) * p);
  MapRM(ov.data(), m, p) = A * B;
  Tensor out({m, p}, std::move(ov));
  if (tape.recording()) {
    int pa = a.node, pb = b.node;
    Array av = a.values, bv = b.values;
    out.node = tape.push(out.shape, [pa, pb, av, bv, m, n, p](const Array& g, Tape::Accum& acc) {
      CMapRM G(g.data(), m, p), A2(av.data(), m, n), B2(bv.data(), n, p);
      Array da(static_cast<Eigen::Index>(m) * n), db(static_cast<Eigen::Index>(n) * p);
      MapRM(da.data(), m, n) = G * B2.transpose();
      MapRM(db.data(), n, p) = A2.transpose() * G;
      acc.add(pa, da);
      acc.add(pb, db);
    });
  }
  return out;
}

Tensor dense(Tape& tape, const Tensor& a, const Tensor& W, const Tensor& b) {
  require_rank(W, 2, "dense weights");
  const int in = W.shape[0], outf = W.shape[1];
  if (b.shape != Shape{outf}) shape_mismatch("dense bias", W.shape, b.shape);
  int rows;
  if (a.rank() == 1) {
    if (a.shape[0] != in) shape_mismatch("dense", a.shape, W.shape);
    rows = 1;
  } else if (a.rank() == 2) {
    if (a.shape[1] != in) shape_mismatch("dense", a.shape, W.shape);
    rows = a.shape[0];
  } else {
    throw ShapeError("dense: input must be rank 1 or 2, got " + shape_str(a.shape));
  }
  CMapRM A(a.values.data(), rows, in), Wm(W.values.data(), in, outf);
  Eigen::Map<const Eigen::RowVectorXd> bv(b.values.data(), outf);
  Array ov(static_cast<Eigen::Index>(rows) * outf);
  MapRM O(ov.data(), rows, outf);
  O = (A * Wm).rowwise() + bv;
  Tensor out(a.rank() == 1 ? Shape{outf} : Shape{rows, outf}, std::move(ov));
  if (tape.recording()) {
    int pa = a.node, pw = W.node, pb = b.node;
    Array av = a.values, wv = W.values;
    out.node =
        tape.push(out.shape, [pa, pw, pb, av, wv, rows, in, outf](const Array& g, Tape::Accum& acc) {
          CMapRM G(g.data(), rows, outf), A2(av.data(), rows, in), W2(wv.data(), in, outf);
          Array da(static_cast<Eigen::Index>(rows) * in), dw(static_cast<Eigen::Index>(in) * outf);
          MapRM(da.data(), rows, in) = G * W2.transpose();
          MapRM(dw.data(), in, outf) = A2.transpose() * G;
          Array db(outf);
          Eigen::Map<Eigen::RowVectorXd>(db.data(), outf) = G.colwise().sum();
          acc.add(pa, da);
          acc.add(pw, dw);
          acc.add(pb, db);
        });
  }
  return out;
}

Tensor transpose(Tape& tape, const Tensor& a) {
  require_rank(a, 2, "transpose");
  const int m = a.shape[0], n = a.shape[1];
  Array ov(a.values.size());
  MapRM(ov.data(), n, m) = CMapRM(a.values.data(), m, n).transpose();
  Tensor out({n, m}, std::move(ov));
  if (tape.recording()) {
    int pa = a.node;
    out.node = tape.push(out.shape, [pa, m, n](const Array& g, Tape::Accum& acc) {
      Array da(g.size());
      MapRM(da.data(), m, n) = CMapRM(g.data(), n, m).transpose();
      acc.add(pa, da);
    });
  }
  return out;
}

Tensor reshape(Tape& tape, const Tensor& a, Shape target) {
  if (numel(target) != a.size()) shape_mismatch("reshape", a.shape, target);
  Tensor out(std::move(target), a.values);
  if (tape.recording()) {
    int pa = a.node;
    out.node = tape.push(out.shape, [pa](const Array& g, Tape::Accum& acc) { acc.add(pa, g); });
  }
  return out;
}

Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b) {
  require_rank(a, 3, "concat_channels lhs");
  require_rank(b, 3, "concat_channels rhs");
  if (a.shape[1] != b.shape[1] || a.shape[2] != b.shape[2])
    shape_mismatch("concat_channels", a.shape, b.shape);
  Array ov(a.size() + b.size());
  ov.head(a.size()) = a.values;
  ov.tail(b.size()) = b.values;
  Tensor out({a.shape[0] + b.shape[0], a.shape[1], a.shape[2]}, std::move(ov));
  if (tape.recording()) {
    int pa = a.node, pb = b.node;
    Eigen::Index na = a.size(), nb = b.size();
    out.node = tape.push(out.shape, [pa, pb, na, nb](const Array& g, Tape::Accum& acc) {
      acc.add(pa, g.head(na));
      acc.add(pb, g.tail(nb));
    });
  }
  return out;
}

// ---- convolution -----------------------------------------------------------

namespace {

// Lay out every receptive field as one column: (C*k*k) x (H'*W').
MatRM im2col(const Array& in, int C, int H, int W, int k, int stride, int pad, int oh, int ow) {
  MatRM cols(static_cast<Eigen::Index>(C) * k * k, static_cast<Eigen::Index>(oh) * ow);
  for (int c = 0; c < C; ++c)
    for (int u = 0; u < k; ++u)
      for (int v = 0; v < k; ++v) {
        const Eigen::Index row = (static_cast<Eigen::Index>(c) * k + u) * k + v;
        for (int i = 0; i < oh; ++i) {
          const int y = i * stride + u - pad;
          for (int j = 0; j < ow; ++j) {
            const int x = j * stride + v - pad;
            double val = 0.0;
            if (y >= 0 && y < H && x >= 0 && x < W)
              val = in[(static_cast<Eigen::Index>(c) * H + y) * W + x];
            cols(row, static_cast<Eigen::Index>(i) * ow + j) = val;
          }
        }
      }
  return cols;
}

void col2im_add(const MatRM& cols, Array& din, int C, int H, int W, int k, int stride, int pad,
                int oh, int ow) {
  for (int c = 0; c < C; ++c)
    for (int u = 0; u < k; ++u)
      for (int v = 0; v < k; ++v) {
        const Eigen::Index row = (static_cast<Eigen::Index>(c) * k + u) * k + v;
        for (int i = 0; i < oh; ++i) {
          const int y = i * stride + u - pad;
          if (y < 0 || y >= H) continue;
          for (int j = 0; j < ow; ++j) {
            const int x = j * stride + v - pad;
            if (x < 0 || x >= W) continue;
            din[(static_cast<Eigen::Index>(c) * H + y) * W + x] +=
                cols(row, static_cast<Eigen::Index>(i) * ow + j);
          }
        }
      }
}

}  // namespace

Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernels, const Tensor& bias,
              int stride, int padding) {
  require_rank(input, 3, "conv2d input");
  require_rank(kernels, 4, "conv2d kernels");
  require_rank(bias, 1, "conv2d bias");
  const int C = input.shape[0], H = input.shape[1], W = input.shape[2];
  const int D = kernels.shape[0], k = kernels.shape[2];
  if (kernels.shape[1] != C) shape_mismatch("conv2d", input.shape, kernels.shape);
  if (kernels.shape[3] != k) throw ShapeError("conv2d: kernels must be square, got " + shape_str(kernels.shape));
  if (bias.shape[0] != D) shape_mismatch("conv2d bias", kernels.shape, bias.shape);
  if (stride < 1 || padding < 0) throw ConfigError("conv2d: stride must be >= 1 and padding >= 0");
  const int oh = (H + 2 * padding - k) / stride + 1;
  const int ow = (W + 2 * padding - k) / stride + 1;
  if (H + 2 * padding < k || W + 2 * padding < k || oh < 1 || ow < 1)
    throw ConfigError("conv2d: kernel " + std::to_string(k) + " with stride " +
                      std::to_string(stride) + ", padding " + std::to_string(padding) +
                      " gives non-positive output for input " + shape_str(input.shape));

  MatRM cols = im2col(input.values, C, H, W, k, stride, padding, oh, ow);
  CMapRM K(kernels.values.data(), D, static_cast<Eigen::Index>(C) * k * k);
  Array ov(static_cast<Eigen::Index>(D) * oh * ow);
  MapRM O(ov.data(), D, static_cast<Eigen::Index>(oh) * ow);
  O = K * cols;
  O.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.values.data(), D);
  Tensor out({D, oh, ow}, std::move(ov));

  if (tape.recording()) {
    int pi = input.node, pk = kernels.node, pb = bias.node;
    Array iv = input.values, kv = kernels.values;
    out.node = tape.push(out.shape, [pi, pk, pb, iv, kv, C, H, W, D, k, stride, padding, oh,
                                     ow](const Array& g, Tape::Accum& acc) {
      CMapRM G(g.data(), D, static_cast<Eigen::Index>(oh) * ow);
      MatRM cols2 = im2col(iv, C, H, W, k, stride, padding, oh, ow);
      CMapRM K2(kv.data(), D, static_cast<Eigen::Index>(C) * k * k);
      if (pk >= 0) {
        Array dk(kv.size());
        MapRM(dk.data(), D, static_cast<Eigen::Index>(C) * k * k) = G * cols2.transpose();
        acc.add(pk, dk);
      }
      if (pb >= 0) {
        Array db(D);
        Eigen::Map<Eigen::VectorXd>(db.data(), D) = G.rowwise().sum();
        acc.add(pb, db);
      }
      if (pi >= 0) {
        MatRM dcols = K2.transpose() * G;
        Array din = Array::Zero(iv.size());
        col2im_add(dcols, din, C, H, W, k, stride, padding, oh, ow);
        acc.add(pi, din);
      }
    });
  }
  return out;
}

// ---- pointwise / pooling -----------------------------------------------------

Tensor relu(Tape& tape, const Tensor& a) {
  Tensor out(a.shape, a.values.max(0.0));
  if (tape.recording()) {
    int pa = a.node;
    Array av = a.values;
    out.node = tape.push(out.shape, [pa, av](const Array& g, Tape::Accum& acc) {
      acc.add(pa, g * (av > 0.0).cast<double>());
    });
  }
  return out;
}

Tensor max_pool2d(Tape& tape, const Tensor& a, int window, int stride) {
  require_rank(a, 3, "max_pool2d");
  const int C = a.shape[0], H = a.shape[1], W = a.shape[2];
  if (window < 1 || stride < 1) throw ConfigError("max_pool2d: window and stride must be >= 1");
  if (window > H || window > W)
    throw ConfigError("max_pool2d: window " + std::to_string(window) + " does not fit input " +
                      shape_str(a.shape));
  const int oh = (H - window) / stride + 1;
  const int ow = (W - window) / stride + 1;
  Array ov(static_cast<Eigen::Index>(C) * oh * ow);
  std::vector<Eigen::Index> argmax(static_cast<std::size_t>(C) * oh * ow);
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        double best = -std::numeric_limits<double>::infinity();
        Eigen::Index best_idx = 0;
        for (int u = 0; u < window; ++u)
          for (int v = 0; v < window; ++v) {
            const Eigen::Index idx =
                (static_cast<Eigen::Index>(c) * H + i * stride + u) * W + j * stride + v;
            if (a.values[idx] > best) {  // first maximum wins on ties
              best = a.values[idx];
              best_idx = idx;
            }
          }
        const Eigen::Index o = (static_cast<Eigen::Index>(c) * oh + i) * ow + j;
        ov[o] = best;
        argmax[static_cast<std::size_t>(o)] = best_idx;
      }
  Tensor out({C, oh, ow}, std::move(ov));
  if (tape.recording()) {
    int pa = a.node;
    Eigen::Index in_size = a.size();
    out.node = tape.push(out.shape, [pa, argmax, in_size](const Array& g, Tape::Accum& acc) {
      Array da = Array::Zero(in_size);
      for (Eigen::Index o = 0; o < g.size(); ++o) da[argmax[static_cast<std::size_t>(o)]] += g[o];
      acc.add(pa, da);
    });
  }
  return out;
}

Tensor global_avg_pool(Tape& tape, const Tensor& a) {
  require_rank(a, 3, "global_avg_pool");
  const int D = a.shape[0];
  const Eigen::Index hw = static_cast<Eigen::Index>(a.shape[1]) * a.shape[2];
  Array ov(D);
  for (int d = 0; d < D; ++d) ov[d] = a.values.segment(d * hw, hw).mean();
  Tensor out({D}, std::move(ov));
  if (tape.recording()) {
    int pa = a.node;
    out.node = tape.push(out.shape, [pa, D, hw](const Array& g, Tape::Accum& acc) {
      Array da(static_cast<Eigen::Index>(D) * hw);
      for (int d = 0; d < D; ++d) da.segment(d * hw, hw).setConstant(g[d] / double(hw));
      acc.add(pa, da);
    });
  }
  return out;
}

Tensor col_mean(Tape& tape, const Tensor& a) {
  require_rank(a, 2, "col_mean");
  const int T = a.shape[0], E = a.shape[1];
  Array ov(E);
  Eigen::Map<Eigen::RowVectorXd>(ov.data(), E) =
      CMapRM(a.values.data(), T, E).colwise().mean();
  Tensor out({E}, std::move(ov));
  if (tape.recording()) {
    int pa = a.node;
    out.node = tape.push(out.shape, [pa, T, E](const Array& g, Tape::Accum& acc) {
      Array da(static_cast<Eigen::Index>(T) * E);
      MapRM(da.data(), T, E).rowwise() = Eigen::Map<const Eigen::RowVectorXd>(g.data(), E) / double(T);
      acc.add(pa, da);
    });
  }
  return out;
}

// ---- normalization / softmax / loss -----------------------------------------

namespace {

constexpr double kLayerNormEps = 1e-5;

// 1-D softmax with max subtraction; writes into out.
void softmax_into(const double* z, double* out, int n) {
  double m = z[0];
  for (int i = 1; i < n; ++i) m = std::max(m, z[i]);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    out[i] = std::exp(z[i] - m);
    total += out[i];
  }
  for (int i = 0; i < n; ++i) out[i] /= total;
}

}  // namespace

Tensor layer_norm(Tape& tape, const Tensor& a) {
  if (a.rank() != 1 && a.rank() != 2)
    throw ShapeError("layer_norm: input must be rank 1 or 2, got " + shape_str(a.shape));
  const int rows = a.rank() == 2 ? a.shape[0] : 1;
  const int n = a.rank() == 2 ? a.shape[1] : a.shape[0];
  Array ov(a.values.size());
  Array inv_std(rows);
  for (int r = 0; r < rows; ++r) {
    auto x = a.values.segment(static_cast<Eigen::Index>(r) * n, n);
    const double mu = x.mean();
    const double var = (x - mu).square().mean();
    const double s = std::sqrt(var + kLayerNormEps);
    ov.segment(static_cast<Eigen::Index>(r) * n, n) = (x - mu) / s;
    inv_std[r] = 1.0 / s;
  }
  Tensor out(a.shape, std::move(ov));
  if (tape.recording()) {
    int pa = a.node;
    Array y = out.values;
    out.node = tape.push(out.shape, [pa, y, inv_std, rows, n](const Array& g, Tape::Accum& acc) {
      Array da(g.size());
      for (int r = 0; r < rows; ++r) {
        auto gr = g.segment(static_cast<Eigen::Index>(r) * n, n);
        auto yr = y.segment(static_cast<Eigen::Index>(r) * n, n);
        const double gm = gr.mean();
        const double gy = (gr * yr).mean();
        da.segment(static_cast<Eigen::Index>(r) * n, n) = inv_std[r] * (gr - gm - yr * gy);
      }
      acc.add(pa, da);
    });
  }
  return out;
}

Tensor softmax(Tape& tape, const Tensor& a) {
  require_rank(a, 1, "softmax");
  Array ov(a.size());
  softmax_into(a.values.data(), ov.data(), static_cast<int>(a.size()));
  Tensor out(a.shape, std::move(ov));
  if (tape.recording()) {
    int pa = a.node;
    Array y = out.values;
    out.node = tape.push(out.shape, [pa, y](const Array& g, Tape::Accum& acc) {
      const double dot = (g * y).sum();
      acc.add(pa, y * (g - dot));
    });
  }
  return out;
}

Tensor softmax_rows(Tape& tape, const Tensor& a) {
  require_rank(a, 2, "softmax_rows");
  const int rows = a.shape[0], n = a.shape[1];
  Array ov(a.size());
  for (int r = 0; r < rows; ++r)
    softmax_into(a.values.data() + static_cast<Eigen::Index>(r) * n,
                 ov.data() + static_cast<Eigen::Index>(r) * n, n);
  Tensor out(a.shape, std::move(ov));
  if (tape.recording()) {
    int pa = a.node;
    Array y = out.values;
    out.node = tape.push(out.shape, [pa, y, rows, n](const Array& g, Tape::Accum& acc) {
      Array da(g.size());
      for (int r = 0; r < rows; ++r) {
        auto gr = g.segment(static_cast<Eigen::Index>(r) * n, n);
        auto yr = y.segment(static_cast<Eigen::Index>(r) * n, n);
        const double dot = (gr * yr).sum();
        da.segment(static_cast<Eigen::Index>(r) * n, n) = yr * (gr - dot);
      }
      acc.add(pa, da);
    });
  }
  return out;
}

Tensor cross_entropy(Tape& tape, const Tensor& logits, int label) {
  require_rank(logits, 1, "cross_entropy");
  const int K = logits.shape[0];
  if (label < 0 || label >= K)
    throw InputError("cross_entropy: label " + std::to_string(label) + " out of range for K=" +
                     std::to_string(K));
  const double m = logits.values.maxCoeff();
  const double lse = m + std::log((logits.values - m).exp().sum());
  Tensor out = Tensor::scalar(lse - logits.values[label]);
  if (tape.recording()) {
    int pa = logits.node;
    Array probs(K);
    softmax_into(logits.values.data(), probs.data(), K);
    out.node = tape.push(out.shape, [pa, probs, label](const Array& g, Tape::Accum& acc) {
      Array da = probs * g[0];
      da[label] -= g[0];
      acc.add(pa, da);
    });
  }
  return out;
}

// ---- reductions / selection ---------------------------------------------------

Tensor sum(Tape& tape, const Tensor& a) {
  Tensor out = Tensor::scalar(a.values.sum());
  if (tape.recording()) {
    int pa = a.node;
    Eigen::Index n = a.size();
    out.node = tape.push(out.shape, [pa, n](const Array& g, Tape::Accum& acc) {
      acc.add(pa, Array::Constant(n, g[0]));
    });
  }
  return out;
}

Tensor pick(Tape& tape, const Tensor& a, int index) {
  if (index < 0 || index >= a.size())
    throw InputError("pick: index " + std::to_string(index) + " out of range for " +
                     shape_str(a.shape));
  Tensor out = Tensor::scalar(a.values[index]);
  if (tape.recording()) {
    int pa = a.node;
    Eigen::Index n = a.size();
    out.node = tape.push(out.shape, [pa, n, index](const Array& g, Tape::Accum& acc) {
      Array da = Array::Zero(n);
      da[index] = g[0];
      acc.add(pa, da);
    });
  }
  return out;
}

Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f, const Tensor& at,
                            double h) {
  if (h <= 0.0) throw InputError("finite_diff_gradient: h must be positive");
  Tensor grad = Tensor::zeros(at.shape);
  Tensor probe = at;
  probe.node = -1;
  for (Eigen::Index i = 0; i < at.size(); ++i) {
    const double orig = probe.values[i];
    probe.values[i] = orig + h;
    const double fp = f(probe);
    probe.values[i] = orig - h;
    const double fm = f(probe);
    probe.values[i] = orig;
    grad.values[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

}  // namespace gradfaith
