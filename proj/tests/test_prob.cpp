#include <doctest.h>

#include <cmath>
#include <numbers>

#include "dlab/error.hpp"
#include "dlab/prob.hpp"
#include "dlab/rng.hpp"

using namespace dlab;

namespace {

Vector<double> vec(std::initializer_list<double> v) {
  Vector<double> out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

Vector<double> random_distribution(Rng& rng, Index c) {
  Vector<double> p(c);
  for (Index k = 0; k < c; ++k) p[k] = rng.uniform() * (rng.bernoulli(0.2) ? 0.0 : 1.0) + 1e-300;
  return p / p.sum();
}

}  // namespace

TEST_CASE("softmax closed forms") {
  const auto uniform = softmax_t(vec({3, 3, 3, 3}), 0.7);
  for (Index i = 0; i < 4; ++i) CHECK(uniform[i] == doctest::Approx(0.25).epsilon(1e-15));

  const double e = std::numbers::e;
  const auto p = softmax_t(vec({1, 2}), 1.0);
  CHECK(p[0] == doctest::Approx(1 / (1 + e)).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(e / (1 + e)).epsilon(1e-15));
  CHECK(p[0] == doctest::Approx(0.2689).epsilon(1e-4));

  const auto hot = softmax_t(vec({1, 2}), 10000.0);
  CHECK(std::abs(hot[0] - 0.5) < 1e-4);
  CHECK(std::abs(hot[1] - 0.5) < 1e-4);
}

TEST_CASE("softmax is stable for large logits and rejects bad input") {
  const auto p = softmax_t(vec({1000, 1001, -1000}), 1.0);
  CHECK(p.allFinite());
  CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(softmax_t(vec({1, 2}), 0.0), ValueError);
  CHECK_THROWS_AS(softmax_t(vec({1, 2}), -1.0), ValueError);
  CHECK_THROWS_AS(softmax_t(vec({1, NAN}), 1.0), ValueError);
}

TEST_CASE("softmax invariants on random logits") {
  Rng rng(21);
  for (int trial = 0; trial < 500; ++trial) {
    const Index c = rng.uniform_int(1, 12);
    Vector<double> z(c);
    for (Index k = 0; k < c; ++k) z[k] = 10 * rng.normal();
    const double t = 0.05 + 50 * rng.uniform();
    const auto p = softmax_t(z, t);
    CHECK(std::abs(p.sum() - 1) < 1e-6);
    CHECK((p.array() >= 0).all());
    const Vector<double> shifted = (z.array() + 37.5 * rng.normal()).matrix();
    CHECK((softmax_t(shifted, t) - p).cwiseAbs().maxCoeff() < 1e-6);

    // Entropy never decreases along an increasing temperature grid.
    double previous = -1;
    for (double temp = 0.05; temp < 200; temp *= 1.3) {
      const double h = entropy(softmax_t(z, temp));
      CHECK(h >= previous - 1e-12);
      previous = h;
    }
  }
}

TEST_CASE("log_softmax agrees with log of softmax") {
  const auto z = vec({0.3, -2, 5, 1});
  const auto lp = log_softmax_t(z, 2.0);
  const auto p = softmax_t(z, 2.0);
  for (Index i = 0; i < 4; ++i) CHECK(lp[i] == doctest::Approx(std::log(p[i])).epsilon(1e-14));
}

TEST_CASE("cross entropy closed forms") {
  CHECK(cross_entropy(vec({0, 1, 0}), vec({0, 1, 0})) == doctest::Approx(0.0));
  CHECK(cross_entropy(vec({0.25, 0.25, 0.25, 0.25}), vec({0.1, 0.2, 0.3, 0.4})) ==
        doctest::Approx(std::log(4.0)).epsilon(1e-14));
  CHECK(cross_entropy(vec({0.7, 0.3}), vec({1, 0})) == doctest::Approx(-std::log(0.7)).epsilon(1e-14));
  CHECK(cross_entropy(vec({0.7, 0.3}), vec({1, 0})) == doctest::Approx(0.35667).epsilon(1e-5));
  // A zero prediction under positive target mass is clamped, not infinite.
  CHECK(cross_entropy(vec({1, 0}), vec({0, 1})) == doctest::Approx(-std::log(kProbEpsilon)));
  CHECK_THROWS_AS(cross_entropy(vec({0.5, 0.5}), vec({1, 0, 0})), ShapeError);
}

TEST_CASE("cross entropy is bounded below by the target entropy") {
  Rng rng(8);
  for (int trial = 0; trial < 300; ++trial) {
    const Index c = rng.uniform_int(2, 10);
    const auto p = random_distribution(rng, c);
    const auto t = random_distribution(rng, c);
    CHECK(cross_entropy(p, t) >= entropy(t) - 1e-12);
  }
}

TEST_CASE("kl divergence closed forms") {
  CHECK(kl_div(vec({0.2, 0.8}), vec({0.2, 0.8})) == doctest::Approx(0.0));
  CHECK(kl_div(vec({1, 0}), vec({0.5, 0.5})) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(kl_div(vec({1, 0}), vec({0.5, 0.5})) == doctest::Approx(0.6931).epsilon(1e-4));
  const double expected = 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1);
  CHECK(kl_div(vec({0.5, 0.5}), vec({0.9, 0.1})) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(kl_div(vec({0.5, 0.5}), vec({0.9, 0.1})) == doctest::Approx(0.5108).epsilon(1e-4));
  CHECK_THROWS_AS(kl_div(vec({0.5, 0.5}), vec({1.0})), ShapeError);
}

TEST_CASE("kl divergence is nonnegative and vanishes on equal arguments") {
  Rng rng(9);
  for (int trial = 0; trial < 1000; ++trial) {
    const Index c = rng.uniform_int(1, 10);
    const auto p = random_distribution(rng, c);
    const auto q = random_distribution(rng, c);
    CHECK(kl_div(p, q) >= 0);
    CHECK(kl_div(p, p) <= 1e-9);
  }
}

TEST_CASE("argmax breaks ties toward the lowest index") {
  CHECK(argmax(vec({0.4, 0.4, 0.2})) == 0);
  CHECK(argmax(vec({0.1, 0.3, 0.3, 0.3})) == 1);
}
