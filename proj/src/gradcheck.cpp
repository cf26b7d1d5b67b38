#include "dlab/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>

#include "dlab/distill.hpp"

namespace dlab {

double relative_error(const Vector<double>& a, const Vector<double>& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / scale;
}

double probe_loss(const TensorD& logits, const TensorD& projection) {
  if (logits.shape() != projection.shape()) throw ShapeError("probe_loss: shape mismatch");
  return logits.flat().dot(projection.flat()) + 0.5 * logits.flat().squaredNorm();
}

template <typename Scalar>
double check_network_gradients(Network<Scalar>& net, const Tensor<Scalar>& batch, const TensorD& projection,
                               double step) {
  const auto out = forward_record(net, batch);
  const TensorD z = out.logits.template cast<double>();
  TensorD dz(z.shape(), z.flat() + projection.flat());
  backward(net, dz.cast<Scalar>());
  const Vector<double> analytic = net.gradients().template cast<double>();

  const Vector<Scalar> base = net.parameters();
  // The denominator uses the perturbations actually representable in Scalar.
  auto loss_at = [&](Index k, Scalar value) {
    Vector<Scalar> p = base;
    p[k] = value;
    net.set_parameters(p);
    return probe_loss(forward(net, batch).logits.template cast<double>(), projection);
  };
  auto central = [&](Index k) {
    const auto hi = static_cast<Scalar>(static_cast<double>(base[k]) + step);
    const auto lo = static_cast<Scalar>(static_cast<double>(base[k]) - step);
    return (loss_at(k, hi) - loss_at(k, lo)) / (static_cast<double>(hi) - static_cast<double>(lo));
  };

  double worst = 0;
  Index offset = 0;
  for (const auto& layer : net.layers()) {
    Index n = 0;
    for (const auto& param : layer.params) n += param.value.size();
    if (n == 0) continue;
    Vector<double> numeric(n);
    for (Index k = 0; k < n; ++k) numeric[k] = central(offset + k);
    worst = std::max(worst, relative_error(analytic.segment(offset, n), numeric));
    offset += n;
  }
  net.set_parameters(base);
  return worst;
}

template double check_network_gradients(Network<float>&, const Tensor<float>&, const TensorD&, double);
template double check_network_gradients(Network<double>&, const Tensor<double>&, const TensorD&, double);

bool GradcheckReport::passed() const {
  return !cases.empty() && std::all_of(cases.begin(), cases.end(), [](const auto& c) { return c.passed(); });
}

namespace {

struct NetCase {
  std::string name;
  Shape input;
  std::vector<LayerSpec> specs;
  Index tap;
};

std::vector<NetCase> network_cases() {
  using L = LayerSpec;
  return {
      {"dense", {6}, {L::dense(6, 4), L::dense(4, 3)}, 0},
      {"conv2d_valid", {2, 4, 4}, {L::conv2d(2, 2, 2, Padding::valid), L::flatten(), L::dense(18, 2)}, 1},
      {"conv2d_same", {1, 4, 4}, {L::conv2d(1, 1, 3, Padding::same), L::flatten(), L::dense(16, 3)}, 1},
      {"maxpool2d",
       {1, 5, 5},
       {L::conv2d(1, 2, 2, Padding::valid), L::maxpool2d(2), L::flatten(), L::dense(8, 3)},
       2},
      {"relu", {4}, {L::dense(4, 5), L::relu(), L::dense(5, 3)}, 1},
      {"flatten", {2, 3, 3}, {L::flatten(), L::dense(18, 3)}, 0},
  };
}

template <typename Scalar>
Tensor<Scalar> normal_tensor(const Shape& shape, Rng& rng, double scale) {
  Tensor<Scalar> t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(scale * rng.normal());
  return t;
}

/// Smallest distance of any recorded activation to a non-differentiable point.
template <typename Scalar>
double kink_margin(const Network<Scalar>& net) {
  double margin = std::numeric_limits<double>::infinity();
  const auto& tape = *net.tape();
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    const auto& layer = net.layers()[i];
    const auto& x = tape.layer_inputs[i];
    if (layer.spec.kind == LayerKind::relu) {
      for (Index k = 0; k < x.size(); ++k) margin = std::min(margin, std::abs(static_cast<double>(x[k])));
    } else if (layer.spec.kind == LayerKind::maxpool2d) {
      const Index c = layer.in_shape[0], h = layer.in_shape[1], w = layer.in_shape[2];
      const Index s = layer.spec.pool;
      const Index batch = x.dim(0);
      for (Index b = 0; b < batch; ++b) {
        for (Index ch = 0; ch < c; ++ch) {
          for (Index oy = 0; oy < h / s; ++oy) {
            for (Index ox = 0; ox < w / s; ++ox) {
              double best = -std::numeric_limits<double>::infinity(), second = best;
              for (Index dy = 0; dy < s; ++dy) {
                for (Index dx = 0; dx < s; ++dx) {
                  const double v = x[((b * c + ch) * h + oy * s + dy) * w + ox * s + dx];
                  if (v > best) {
                    second = best;
                    best = v;
                  } else if (v > second) {
                    second = v;
                  }
                }
              }
              margin = std::min(margin, best - second);
            }
          }
        }
      }
    }
  }
  return margin;
}

template <typename Scalar>
GradcheckCase run_network_case(const NetCase& nc, std::uint64_t seed, int instances, double step, double tolerance) {
  GradcheckCase result{nc.name, 0, 0, 0, tolerance, 0};
  constexpr Index kBatch = 3;
  for (int i = 0; i < instances; ++i) {
    Rng rng(derive_seed(seed, nc.name, static_cast<std::uint64_t>(i)));
    for (;;) {
      Network<Scalar> net(nc.input, nc.specs, nc.tap);
      net.set_parameters(normal_tensor<Scalar>({net.parameter_count()}, rng, 0.5).flat());
      Shape batch_shape{kBatch};
      batch_shape.insert(batch_shape.end(), nc.input.begin(), nc.input.end());
      const auto batch = normal_tensor<Scalar>(batch_shape, rng, 1.0);
      const auto projection = normal_tensor<double>({kBatch, net.num_classes()}, rng, 1.0);

      forward_record(net, batch);
      // A perturbation of size `step` moves activations by at most ~step * |input| * |weights|.
      const double scale = 1.0 + batch.flat().cwiseAbs().maxCoeff();
      if (kink_margin(net) < 4 * step * scale) {
        ++result.redraws;
        continue;
      }
      result.max_params = std::max(result.max_params, net.parameter_count());
      result.max_error = std::max(result.max_error, check_network_gradients(net, batch, projection, step));
      ++result.instances;
      break;
    }
  }
  return result;
}

GradcheckCase run_kd_case(KlDirection direction, std::uint64_t seed, int instances) {
  GradcheckCase result{"kd_loss_" + to_string(direction), 0, 0, 0, 1e-5, 0};
  const double step = 1e-5;
  for (int i = 0; i < instances; ++i) {
    Rng rng(derive_seed(seed, result.name, static_cast<std::uint64_t>(i)));
    const Index b = rng.uniform_int(1, 4), c = rng.uniform_int(2, 6);
    const auto zs = normal_tensor<double>({b, c}, rng, 2.0);
    const auto zt = normal_tensor<double>({b, c}, rng, 2.0);
    TensorD labels({b, c});
    for (Index r = 0; r < b; ++r) {
      if (i % 2 == 0) {
        labels[r * c + rng.uniform_int(0, c - 1)] = 1.0;
      } else {
        double sum = 0;
        for (Index k = 0; k < c; ++k) sum += (labels[r * c + k] = rng.uniform() + 1e-3);
        for (Index k = 0; k < c; ++k) labels[r * c + k] /= sum;
      }
    }
    const double tau = 0.5 + 19.5 * rng.uniform();
    const double w = rng.uniform();
    const auto analytic = kd_loss(zs, zt, labels, tau, w, direction).grad;
    Vector<double> numeric(zs.size());
    for (Index k = 0; k < zs.size(); ++k) {
      TensorD plus = zs, minus = zs;
      plus[k] += step;
      minus[k] -= step;
      numeric[k] = (kd_loss(plus, zt, labels, tau, w, direction).loss -
                    kd_loss(minus, zt, labels, tau, w, direction).loss) /
                   (2 * step);
    }
    result.max_params = std::max(result.max_params, zs.size());
    result.max_error = std::max(result.max_error, relative_error(analytic.flat(), numeric));
    ++result.instances;
  }
  return result;
}

}  // namespace

GradcheckReport run_gradcheck(std::uint64_t seed, Precision precision, int instances) {
  if (instances < 1) throw ValueError("gradcheck: need at least one instance");
  const auto start = std::chrono::steady_clock::now();
  GradcheckReport report;
  report.precision = precision;
  for (const auto& nc : network_cases()) {
    report.cases.push_back(precision == Precision::f64
                               ? run_network_case<double>(nc, seed, instances, 1e-5, 1e-5)
                               : run_network_case<float>(nc, seed, instances, 1e-2, 1e-3));
  }
  if (precision == Precision::f64) {
    for (auto d : {KlDirection::student_teacher, KlDirection::teacher_student}) {
      report.cases.push_back(run_kd_case(d, seed, instances));
    }
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace dlab
