#include <doctest.h>

#include <cmath>

#include "dlab/error.hpp"
#include "dlab/gradcheck.hpp"
#include "dlab/nn.hpp"

using namespace dlab;

namespace {

template <typename S>
void set_param(Network<S>& net, std::size_t layer, std::size_t param, const std::vector<S>& values) {
  auto& t = net.layers()[layer].params[param].value;
  REQUIRE(t.size() == static_cast<Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) t[static_cast<Index>(i)] = values[i];
}

TensorD batch_of(Shape shape, std::vector<double> values) {
  return TensorD(std::move(shape), Eigen::Map<Vector<double>>(values.data(), static_cast<Index>(values.size())));
}

}  // namespace

TEST_CASE("tensor shape contract") {
  TensorF t({2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(t.rank() == 3);
  CHECK(t.matrix().rows() == 2);
  CHECK(t.matrix().cols() == 12);
  CHECK_THROWS_AS(TensorF({2, -1}), ShapeError);
  CHECK_THROWS_AS(t.reshaped({5, 5}), ShapeError);
  CHECK(t.reshaped({24}).shape() == Shape{24});
  CHECK(TensorF(Shape{}).size() == 1);
  CHECK(TensorF({0, 3}).size() == 0);
  CHECK_THROWS_AS(TensorF({2}, Vector<float>::Zero(3)), ShapeError);
}

TEST_CASE("identity dense layer passes input through") {
  NetworkD net({3}, {LayerSpec::dense(3, 3)}, 0);
  set_param<double>(net, 0, 0, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const auto x = batch_of({2, 3}, {0.5, -1, 2, 3, 4, -5});
  CHECK(forward(net, x).logits == x);
}

TEST_CASE("zero network outputs zero logits") {
  auto net = build_network<float>(ArchSpec{"cnn", 2, 3, 4, false}, {1, 8, 8}, 3);
  TensorF x({2, 1, 8, 8});
  for (Index i = 0; i < x.size(); ++i) x[i] = static_cast<float>(std::sin(i));
  const auto out = forward(net, x);
  CHECK(out.logits.shape() == Shape{2, 3});
  CHECK(out.logits.flat().isZero(0));
  CHECK(out.embeddings.shape() == Shape{2, 4});
}

TEST_CASE("2x2 valid convolution matches hand-unrolled sums") {
  // Image 1..9 row-major, kernel [[1,2],[3,4]], bias 0.5:
  // out(0,0) = 1*1 + 2*2 + 3*4 + 4*5 + 0.5 = 37.5, and so on.
  NetworkD net({1, 3, 3}, {LayerSpec::conv2d(1, 1, 2, Padding::valid), LayerSpec::flatten()}, 0);
  set_param<double>(net, 0, 0, {1, 2, 3, 4});
  set_param<double>(net, 0, 1, {0.5});
  const auto out = forward(net, batch_of({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}));
  REQUIRE(out.logits.shape() == Shape{1, 4});
  CHECK(out.logits[0] == 37.5);
  CHECK(out.logits[1] == 47.5);
  CHECK(out.logits[2] == 67.5);
  CHECK(out.logits[3] == 77.5);
}

TEST_CASE("same padding keeps spatial size and zero-pads") {
  NetworkD net({1, 3, 3}, {LayerSpec::conv2d(1, 1, 3, Padding::same), LayerSpec::flatten()}, 0);
  set_param<double>(net, 0, 0, {0, 0, 0, 0, 0, 0, 0, 0, 1});  // picks the bottom-right neighbour
  const auto out = forward(net, batch_of({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}));
  const std::vector<double> expect{5, 6, 0, 8, 9, 0, 0, 0, 0};
  for (Index i = 0; i < 9; ++i) CHECK(out.logits[i] == expect[static_cast<std::size_t>(i)]);
}

TEST_CASE("two input channels and two output channels") {
  NetworkD net({2, 2, 2}, {LayerSpec::conv2d(2, 2, 2, Padding::valid), LayerSpec::flatten()}, 0);
  // Output channel 0 sums channel 0; output channel 1 takes channel 1 minus channel 0.
  set_param<double>(net, 0, 0, {1, 1, 1, 1, 0, 0, 0, 0, -1, -1, -1, -1, 1, 1, 1, 1});
  set_param<double>(net, 0, 1, {0, 1});
  const auto out = forward(net, batch_of({1, 2, 2, 2}, {1, 2, 3, 4, 10, 20, 30, 40}));
  CHECK(out.logits[0] == 10);
  CHECK(out.logits[1] == 91);
}

TEST_CASE("maxpool floors and takes the first maximum") {
  NetworkD net({1, 3, 3}, {LayerSpec::maxpool2d(2), LayerSpec::flatten()}, 0);
  const auto x = batch_of({1, 1, 3, 3}, {1, 7, 9, 7, 2, 9, 9, 9, 9});
  const auto out = forward(net, x);
  REQUIRE(out.logits.shape() == Shape{1, 1});
  CHECK(out.logits[0] == 7);
  auto rec = net;
  forward_record(rec, x);
  REQUIRE(rec.tape());
  CHECK(rec.tape()->pool_argmax[0][0] == 1);
}

TEST_CASE("shape errors name the offending layer") {
  try {
    NetworkF net({3, 4, 4}, {LayerSpec::conv2d(3, 2, 3, Padding::valid), LayerSpec::dense(8, 2)}, 0);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("layer 1 (dense)") != std::string::npos);
  }
  CHECK_THROWS_AS(NetworkF({6}, {LayerSpec::dense(6, 3), LayerSpec::flatten(), LayerSpec::maxpool2d(2)}, 0),
                  ShapeError);
  CHECK_THROWS_AS(NetworkF({2, 2, 2}, {LayerSpec::relu()}, 0), ShapeError);  // no [C] output
  NetworkF net({4}, {LayerSpec::dense(4, 2)}, 0);
  CHECK_THROWS_AS(forward(net, TensorF({2, 5})), ShapeError);
}

TEST_CASE("backward before forward is rejected") {
  NetworkD net({2}, {LayerSpec::dense(2, 2)}, 0);
  CHECK_THROWS_AS(backward(net, TensorD({1, 2})), Error);
}

TEST_CASE("zero upstream gradient zeroes every parameter gradient") {
  auto net = build_network<double>(ArchSpec{"lenet", 2, 0, 5, false}, {1, 6, 6}, 3);
  Rng rng(3);
  net.init(rng);
  TensorD x({2, 1, 6, 6});
  for (Index i = 0; i < x.size(); ++i) x[i] = rng.normal();
  forward_record(net, x);
  backward(net, TensorD({2, 3}));
  CHECK(net.gradients().isZero(0));
}

TEST_CASE("dense layer with quadratic loss has the analytic gradient") {
  // z = w1 x1 + w2 x2 + c, L = z^2 / 2  =>  dL/dw = z x, dL/dc = z.
  NetworkD net({2}, {LayerSpec::dense(2, 1)}, 0);
  set_param<double>(net, 0, 0, {0.5, -2});
  set_param<double>(net, 0, 1, {0.25});
  const auto x = batch_of({1, 2}, {3, 1});
  const auto z = forward_record(net, x).logits;  // 1.5 - 2 + 0.25 = -0.25
  CHECK(z[0] == -0.25);
  backward(net, z);
  const auto g = net.gradients();
  CHECK(g[0] == doctest::Approx(-0.75).epsilon(1e-15));
  CHECK(g[1] == doctest::Approx(-0.25).epsilon(1e-15));
  CHECK(g[2] == doctest::Approx(-0.25).epsilon(1e-15));
}

TEST_CASE("sgd recurrence") {
  auto make = [] {
    NetworkD net({2}, {LayerSpec::dense(2, 1)}, 0);
    set_param<double>(net, 0, 0, {1, 2});
    set_param<double>(net, 0, 1, {3});
    for (auto& p : net.layers()[0].params) p.grad.flat().setConstant(0.5);
    return net;
  };
  SUBCASE("lr = 0 leaves parameters unchanged") {
    auto net = make();
    const auto before = net.parameters();
    sgd_step(net, {0.0, 0.9, 0.1});
    CHECK(net.parameters() == before);
  }
  SUBCASE("plain step") {
    auto net = make();
    const auto before = net.parameters();
    sgd_step(net, {0.1, 0.0, 0.0});
    CHECK(net.parameters() == (before.array() - 0.1 * 0.5).matrix());
  }
  SUBCASE("two momentum steps move lr * g * 2.9") {
    auto net = make();
    const auto before = net.parameters();
    sgd_step(net, {0.1, 0.9, 0.0});
    sgd_step(net, {0.1, 0.9, 0.0});
    const Vector<double> moved = before - net.parameters();
    for (Index i = 0; i < moved.size(); ++i) CHECK(moved[i] == doctest::Approx(0.1 * 0.5 * 2.9).epsilon(1e-14));
  }
  SUBCASE("decoupled weight decay") {
    auto net = make();
    sgd_step(net, {0.1, 0.0, 0.2});
    CHECK(net.parameters()[0] == doctest::Approx(1 - 0.1 * (0.5 + 0.2 * 1)).epsilon(1e-15));
  }
  SUBCASE("domain") {
    auto net = make();
    CHECK_THROWS_AS(sgd_step(net, {-0.1, 0.9, 0.0}), ValueError);
    CHECK_THROWS_AS(sgd_step(net, {0.1, 1.0, 0.0}), ValueError);
    CHECK_THROWS_AS(sgd_step(net, {0.1, 0.5, -1.0}), ValueError);
  }
}

TEST_CASE("initialization and training are deterministic") {
  auto run = [] {
    auto net = build_network<float>(ArchSpec{"cnn", 2, 3, 4, false}, {1, 8, 8}, 3);
    Rng rng(11);
    net.init(rng);
    TensorF x({4, 1, 8, 8});
    for (Index i = 0; i < x.size(); ++i) x[i] = static_cast<float>(rng.uniform());
    for (int step = 0; step < 5; ++step) {
      const auto out = forward_record(net, x);
      backward(net, out.logits);
      sgd_step(net, {0.05, 0.9, 1e-4});
    }
    return net.parameters();
  };
  CHECK(run() == run());
}

TEST_CASE("parameters round-trip through cast and set_parameters") {
  auto net = build_network<float>(ArchSpec{"mlp", 0, 0, 6, false}, {2, 3, 3}, 4);
  Rng rng(5);
  net.init(rng);
  const auto d = net.cast<double>();
  CHECK(d.parameters().cast<float>() == net.parameters());
  CHECK(d.parameter_count() == 18 * 6 + 6 + 6 * 4 + 4);
  CHECK_THROWS_AS(net.set_parameters(Vector<float>::Zero(3)), ShapeError);
}

TEST_CASE("finite-difference suite") {
  for (auto p : {Precision::f64, Precision::f32}) {
    const auto report = run_gradcheck(17, p);
    for (const auto& c : report.cases) {
      INFO(c.name);
      CHECK(c.instances >= 20);
      CHECK(c.max_params <= 64);
      CHECK(c.max_error < c.tolerance);
    }
    CHECK(report.passed());
  }
}
