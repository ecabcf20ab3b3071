#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gradfaith/errors.hpp"

namespace gradfaith {

using Shape = std::vector<int>;
using Array = Eigen::ArrayXd;

// Row-major dense matrix views over flat tensor storage.
using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

std::int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tape;

/// Dense row-major tensor of 64-bit reals. `node` is the handle into the
/// tape that recorded it; -1 marks a constant outside any computation graph.
struct Tensor {
  Shape shape;
  Array values;
  int node = -1;

  Tensor() = default;
  Tensor(Shape s, Array v);

  static Tensor zeros(Shape s);
  static Tensor full(Shape s, double v);
  static Tensor scalar(double v) { return full({1}, v); }
  static Tensor of(Shape s, std::initializer_list<double> v);

  std::int64_t size() const { return values.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  double item() const;  // single element; ContractError otherwise
  // Row-major multi-index access, rank must match.
  double at(std::initializer_list<int> idx) const;
};

/// Gradients keyed by tape node id; each entry has the shape of the
/// corresponding forward value.
class GradientSet {
 public:
  void put(int node, Tensor grad) { grads_.emplace(node, std::move(grad)); }
  const Tensor& at(int node) const;
  const Tensor& at(const Tensor& t) const { return at(t.node); }
  bool contains(int node) const { return grads_.count(node) != 0; }
  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<int, Tensor> grads_;
};

/// Append-only record of one computation. Nodes hold the backward rule of
/// the operation that produced them; parents always precede children, so a
/// single reverse sweep visits each node once.
///
/// A tape and its tensors form one single-threaded context. Constructing
/// with recording=false gives a cheap inference mode: ops validate and
/// compute forward values but append nothing.
class Tape {
 public:
  struct Accum {
    std::vector<Array>& slot;
    void add(int node, const Array& g) {
      if (node < 0) return;
      if (slot[static_cast<std::size_t>(node)].size() == 0)
        slot[static_cast<std::size_t>(node)] = g;
      else
        slot[static_cast<std::size_t>(node)] += g;
    }
  };
  using BackwardFn = std::function<void(const Array& g, Accum& acc)>;

  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  /// Register a leaf (input or parameter). Returns a copy carrying a node id.
  Tensor leaf(const Tensor& t);

  /// Append an interior node; used by the op implementations.
  int push(Shape shape, BackwardFn fn);

  /// Reverse-mode sweep seeded with 1.0 at `scalar`. Returns a gradient for
  /// every requested node (zeros when the node does not feed the scalar).
  GradientSet backward(const Tensor& scalar, std::span<const int> wrt) const;
  GradientSet backward(const Tensor& scalar, std::initializer_list<int> wrt) const {
    return backward(scalar, std::span<const int>(wrt.begin(), wrt.size()));
  }

 private:
  struct Node {
    Shape shape;
    BackwardFn fn;  // empty for leaves
  };
  std::vector<Node> nodes_;
  bool recording_;
};

// ---- recorded operations ------------------------------------------------
// Elementwise ops accept equal shapes or a one-element tensor broadcast
// against the other operand; anything else is a ShapeError.

Tensor add(Tape&, const Tensor& a, const Tensor& b);
Tensor mul_elementwise(Tape&, const Tensor& a, const Tensor& b);
Tensor matmul(Tape&, const Tensor& a, const Tensor& b);  // [M,N]x[N,P]

/// Cross-correlation (no kernel flip) with zero padding.
/// input [C,H,W], kernels [D,C,k,k], bias [D] -> [D,H',W'].
Tensor conv2d(Tape&, const Tensor& input, const Tensor& kernels, const Tensor& bias,
              int stride, int padding);

Tensor relu(Tape&, const Tensor& a);  // subgradient at 0 is 0
Tensor max_pool2d(Tape&, const Tensor& a, int window, int stride);  // [C,H,W]
Tensor global_avg_pool(Tape&, const Tensor& a);  // [D,H,W] -> [D]
Tensor col_mean(Tape&, const Tensor& a);         // [T,E] -> [E], mean over rows

/// a [N] or [T,E]; W [in,out]; b [out]. Matrix input applies the same
/// affine map to every row.
Tensor dense(Tape&, const Tensor& a, const Tensor& W, const Tensor& b);

/// Normalize over the last dimension: (x - mean) / sqrt(var + 1e-5),
/// biased variance, no learned scale or shift.
Tensor layer_norm(Tape&, const Tensor& a);

Tensor softmax(Tape&, const Tensor& a);       // 1-D, max-subtracted
Tensor softmax_rows(Tape&, const Tensor& a);  // 2-D, per row

/// -log softmax(logits)[label] via the log-sum-exp form.
Tensor cross_entropy(Tape&, const Tensor& logits, int label);

Tensor sum(Tape&, const Tensor& a);            // -> scalar
Tensor pick(Tape&, const Tensor& a, int index);  // flat element -> scalar
Tensor transpose(Tape&, const Tensor& a);      // 2-D
Tensor reshape(Tape&, const Tensor& a, Shape target);
Tensor concat_channels(Tape&, const Tensor& a, const Tensor& b);  // [C1,H,W]+[C2,H,W]

/// Central-difference gradient of a scalar-valued function, the oracle the
/// recorded backward rules are checked against. Independent of the tape:
/// it only re-evaluates `f` at perturbed copies of `at`.
Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f,
                            const Tensor& at, double h);

}  // namespace gradfaith
