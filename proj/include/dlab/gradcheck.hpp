#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dlab/nn.hpp"

namespace dlab {

enum class Precision { f32, f64 };

/// Norm-wise relative error ||a - b|| / max(||a||, ||b||, 1e-12).
double relative_error(const Vector<double>& a, const Vector<double>& b);

/// Test loss used by the checks: sum(R .* z) + 0.5 * sum(z .* z) over the
/// logits z, evaluated in double.
double probe_loss(const TensorD& logits, const TensorD& projection);

/// Compares backward() against central differences of probe_loss for every
/// parameter. Returns the worst relative error over any layer's parameter set.
template <typename Scalar>
double check_network_gradients(Network<Scalar>& net, const Tensor<Scalar>& batch, const TensorD& projection,
                               double step);

struct GradcheckCase {
  std::string name;
  int instances = 0;
  Index max_params = 0;
  double max_error = 0;
  double tolerance = 0;
  /// Draws discarded because an input sat too close to a ReLU kink or a pooling tie.
  int redraws = 0;
  bool passed() const { return max_error < tolerance; }
};

struct GradcheckReport {
  Precision precision = Precision::f64;
  std::vector<GradcheckCase> cases;
  double seconds = 0;
  bool passed() const;
};

/// Runs the finite-difference suite: one case per layer kind (each inside a
/// small network ending in a dense layer) plus kd_loss in both divergence
/// directions. Tolerances are 1e-5 (f64) and 1e-3 (f32); kd_loss is computed
/// in double and is checked in f64 runs only.
GradcheckReport run_gradcheck(std::uint64_t seed, Precision precision, int instances = 20);

}  // namespace dlab
