#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Core>

#include "dlab/error.hpp"
#include "dlab/tensor.hpp"

namespace dlab {

/// Lower clamp applied to probabilities inside every logarithm.
inline constexpr double kProbEpsilon = 1e-12;

/// A categorical distribution over C classes.
template <typename Scalar>
using ProbVector = Vector<Scalar>;

namespace detail {

template <typename DerivedA, typename DerivedB>
void require_same_length(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b,
                         const char* op) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(op) + ": length mismatch (" + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()) + ")");
  }
}

template <typename Scalar>
Scalar clamped_log(Scalar p) {
  return std::log(std::max(p, static_cast<Scalar>(kProbEpsilon)));
}

}  // namespace detail

/// Temperature-scaled softmax, exp(z/T) / sum exp(z/T), evaluated after
/// subtracting the maximum logit.
template <typename Derived>
ProbVector<typename Derived::Scalar> softmax_t(const Eigen::MatrixBase<Derived>& logits,
                                               typename Derived::Scalar temperature) {
  using Scalar = typename Derived::Scalar;
  if (!(temperature > 0) || !std::isfinite(temperature)) {
    throw ValueError("softmax_t: temperature must be positive and finite, got " +
                     std::to_string(temperature));
  }
  if (!logits.allFinite()) throw ValueError("softmax_t: non-finite logits");
  ProbVector<Scalar> scaled = logits.reshaped() / temperature;
  if (scaled.size() == 0) return scaled;
  scaled.array() = (scaled.array() - scaled.maxCoeff()).exp();
  return scaled / scaled.sum();
}

/// log of softmax_t, computed via log-sum-exp.
template <typename Derived>
ProbVector<typename Derived::Scalar> log_softmax_t(const Eigen::MatrixBase<Derived>& logits,
                                                   typename Derived::Scalar temperature) {
  using Scalar = typename Derived::Scalar;
  if (!(temperature > 0)) throw ValueError("log_softmax_t: temperature must be positive");
  ProbVector<Scalar> scaled = logits.reshaped() / temperature;
  const Scalar m = scaled.maxCoeff();
  const Scalar lse = m + std::log((scaled.array() - m).exp().sum());
  return scaled.array() - lse;
}

/// -sum target_i log(max(pred_i, eps)). Terms with target_i == 0 contribute 0.
template <typename DerivedP, typename DerivedT>
typename DerivedP::Scalar cross_entropy(const Eigen::MatrixBase<DerivedP>& pred,
                                        const Eigen::MatrixBase<DerivedT>& target) {
  using Scalar = typename DerivedP::Scalar;
  detail::require_same_length(pred, target, "cross_entropy");
  Scalar sum = 0;
  for (Index i = 0; i < pred.size(); ++i) {
    const Scalar t = static_cast<Scalar>(target.reshaped()(i));
    if (t != 0) sum -= t * detail::clamped_log(pred.reshaped()(i));
  }
  return sum;
}

/// sum p_i log(p_i / q_i) with both sides clamped below by eps and 0 log 0 = 0.
template <typename DerivedP, typename DerivedQ>
typename DerivedP::Scalar kl_div(const Eigen::MatrixBase<DerivedP>& p,
                                 const Eigen::MatrixBase<DerivedQ>& q) {
  using Scalar = typename DerivedP::Scalar;
  detail::require_same_length(p, q, "kl_div");
  Scalar sum = 0;
  for (Index i = 0; i < p.size(); ++i) {
    const Scalar pi = p.reshaped()(i);
    if (pi <= 0) continue;
    sum += pi * (detail::clamped_log(pi) - detail::clamped_log(static_cast<Scalar>(q.reshaped()(i))));
  }
  return std::max(sum, Scalar(0));
}

template <typename Derived>
typename Derived::Scalar entropy(const Eigen::MatrixBase<Derived>& p) {
  using Scalar = typename Derived::Scalar;
  Scalar sum = 0;
  for (Index i = 0; i < p.size(); ++i) {
    const Scalar pi = p.reshaped()(i);
    if (pi > 0) sum -= pi * std::log(pi);
  }
  return sum;
}

/// Index of the largest entry; ties resolve to the lowest index.
template <typename Derived>
Index argmax(const Eigen::MatrixBase<Derived>& v) {
  Index best = 0;
  for (Index i = 1; i < v.size(); ++i) {
    if (v.reshaped()(i) > v.reshaped()(best)) best = i;
  }
  return best;
}

}  // namespace dlab
