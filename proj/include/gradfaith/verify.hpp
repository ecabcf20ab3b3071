#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gradfaith/rng.hpp"
#include "gradfaith/tensor.hpp"

namespace gradfaith {

struct VerifyOptions {
  // Test-only hook: corrupt the named op's analytic gradient inside the
  // gradient-check suite so the failure path can be exercised.
  std::string inject_fault_op;
};

struct VerifyCheck {
  std::string suite;
  std::string name;
  bool passed;
  std::string detail;
};

/// Run every built-in analytic-case, oracle, and invariant check across
/// the library. Deterministic; used by the `verify` CLI command.
std::vector<VerifyCheck> run_verification(const VerifyOptions& = {});

// Shared oracle helpers (also used by the test suites).
namespace check {

/// |a-b| / max(|a|,|b|,1e-8)
double rel_err(double a, double b);
double max_rel_err(const Tensor& analytic, const Tensor& fd);

/// ||a-b|| / max(||a||,||b||,1e-8) over whole gradient vectors; robust to
/// finite-difference round-off on near-zero elements.
double norm_rel_err(const Tensor& analytic, const Tensor& fd);

Tensor random_tensor(Rng&, Shape, double lo = -1.0, double hi = 1.0);

using OpFn = std::function<Tensor(Tape&, std::span<const Tensor>)>;

/// Gradient-check an operation against central finite differences
/// (h default 1e-6): loss = <op(inputs), proj>, reverse-mode gradients of
/// every input compared elementwise. Returns the worst relative error.
/// `fault` shifts the analytic side (failure-path hook).
double gradcheck_op(const OpFn& op, const std::vector<Tensor>& inputs, const Tensor& proj,
                    double h = 1e-6, double fault = 0.0);

/// Direct quadruple-loop cross-correlation, the independent reference for
/// the im2col implementation.
Tensor conv2d_reference(const Tensor& input, const Tensor& kernels, const Tensor& bias,
                        int stride, int padding);

}  // namespace check

}  // namespace gradfaith
