#include <cmath>

#include "doctest.h"

#include "p2c/rng.hpp"
#include "p2c/tape.hpp"

using namespace p2c;

namespace {

// Naive triple-loop oracle kept separate from the tape's affine.
std::vector<double> matvec_oracle(const Tensor& W, const Tensor& x, const Tensor& b) {
  std::vector<double> y(W.dim(0));
  for (std::size_t i = 0; i < W.dim(0); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < W.dim(1); ++j) s += W.at(i, j) * x[j];
    y[i] = s + b[i];
  }
  return y;
}

long double lse_oracle(const Tensor& z) {
  long double s = 0.0L;
  for (double v : z.values()) s += std::exp(static_cast<long double>(v));
  return std::log(s);
}

}  // namespace

TEST_CASE("affine: identity and zero-input cases") {
  Tape t;
  Var y = affine(t.constant(Tensor::vector({1, 0})), t.constant(Tensor::identity(2)), t.constant(Tensor::vector({0, 0})));
  CHECK(y.value() == Tensor::vector({1, 0}));
  Var z = affine(t.constant(Tensor::vector({0, 0})), t.constant(Tensor::matrix(2, 2, {5, -2, 7, 1})),
                 t.constant(Tensor::vector({3, -1})));
  CHECK(z.value() == Tensor::vector({3, -1}));
}

TEST_CASE("affine: random 3x2 against a matrix-multiply oracle") {
  Rng rng(11);
  const Tensor W = rng.normal_tensor({3, 2});
  const Tensor x = rng.normal_tensor({2});
  const Tensor b = rng.normal_tensor({3});
  Tape t;
  Var y = affine(t.constant(x), t.constant(W), t.constant(b));
  const auto want = matvec_oracle(W, x, b);
  for (std::size_t i = 0; i < 3; ++i) CHECK(y.value()[i] == doctest::Approx(want[i]).epsilon(1e-15));
}

TEST_CASE("affine: shape mismatch names both shapes") {
  Tape t;
  try {
    affine(t.constant(Tensor({3})), t.constant(Tensor({2, 2})), t.constant(Tensor({2})));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x2]") != std::string::npos);
    CHECK(msg.find("[3]") != std::string::npos);
  }
}

TEST_CASE("tanh_elem values and gradient") {
  Tape t;
  CHECK(tanh_elem(t.constant(Tensor::vector({0}))).value()[0] == 0.0);
  CHECK(std::abs(tanh_elem(t.constant(Tensor::vector({1e9}))).value()[0] - 1.0) < 1e-12);
  const auto rep = check_gradients(
      [](Tape& tp, const ParamMap& p) { return mean(tanh_elem(tp.parameter("x", p.at("x")))); },
      {{"x", Tensor::vector({0.5})}});
  CHECK(rep.worst < 1e-6);
}

TEST_CASE("relu_elem values, boundary subgradient and gradient") {
  Tape t;
  CHECK(relu_elem(t.constant(Tensor::vector({-1, 2}))).value() == Tensor::vector({0, 2}));
  Var x = t.parameter("x", Tensor::vector({0.0, -3.0, 4.0}));
  Var loss = mean(relu_elem(x));
  t.backward(loss);
  const Tensor g = t.grad(x);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 0.0);
  CHECK(g[2] == doctest::Approx(1.0 / 3.0));
  const auto rep = check_gradients(
      [](Tape& tp, const ParamMap& p) { return mean(relu_elem(tp.parameter("x", p.at("x")))); },
      {{"x", Tensor::vector({0.7, -0.4, 1.3, -2.0})}});
  CHECK(rep.worst < 1e-6);
}

TEST_CASE("l2_normalize") {
  Tape t;
  const Tensor y = l2_normalize(t.constant(Tensor::vector({3, 4}))).value();
  CHECK(y[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(y[1] == doctest::Approx(0.8).epsilon(1e-15));
  const Tensor u = Tensor::vector({0, 1, 0});
  CHECK(l2_normalize(t.constant(u)).value() == u);
  CHECK_THROWS_AS(l2_normalize(t.constant(Tensor({4}))), DegenerateEmbeddingError);
  for (double scale : {1e200, 1e150}) {
    const Tensor big = l2_normalize(t.constant(Tensor::vector({3 * scale, 4 * scale}))).value();
    CHECK(big[0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(big[1] == doctest::Approx(0.8).epsilon(1e-15));
  }
  CHECK(std::isnan(l2_normalize(t.constant(Tensor::vector({1.0, std::nan("")}))).value()[0]));

  Rng rng(3);
  const Tensor w = rng.normal_tensor({4});
  const auto rep = check_gradients(
      [&](Tape& tp, const ParamMap& p) {
        Var n = l2_normalize(tp.parameter("x", p.at("x")));
        return mse(n, tp.constant(w));
      },
      {{"x", rng.normal_tensor({4})}});
  CHECK(rep.worst < 1e-6);
}

TEST_CASE("softmax_cross_entropy") {
  Tape t;
  CHECK(scalar(softmax_cross_entropy(t.constant(Tensor::vector({0.3, 0.3, 0.3, 0.3})), 2)) ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(std::abs(scalar(softmax_cross_entropy(t.constant(Tensor::vector({1000, 0, 0, 0})), 0))) < 1e-9);
  CHECK_THROWS_AS(softmax_cross_entropy(t.constant(Tensor::vector({1, 2})), 2), IndexError);

  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor z = rng.normal_tensor({6}, 3.0);
    const std::size_t y = rng.below(6);
    const long double want = lse_oracle(z) - static_cast<long double>(z[y]);
    CHECK(std::abs(scalar(softmax_cross_entropy(t.constant(z), y)) - static_cast<double>(want)) < 1e-12);
  }
}

TEST_CASE("mse") {
  Tape t;
  const Tensor a = Tensor::vector({1.5, -2, 3});
  CHECK(scalar(mse(t.constant(a), t.constant(a))) == 0.0);
  CHECK(scalar(mse(t.constant(Tensor::vector({1, 1})), t.constant(Tensor::vector({0, 0})))) == 1.0);
  CHECK_THROWS_AS(mse(t.constant(Tensor({2})), t.constant(Tensor({3}))), DimensionError);

  Rng rng(8);
  const Tensor p = rng.normal_tensor({7});
  const Tensor q = rng.normal_tensor({7});
  double acc = 0.0;
  for (std::size_t i = 0; i < 7; ++i) acc += (p[i] - q[i]) * (p[i] - q[i]);
  CHECK(scalar(mse(t.constant(p), t.constant(q))) == doctest::Approx(acc / 7.0).epsilon(1e-14));

  Var pa = t.parameter("a", p);
  Var pb = t.parameter("b", q);
  t.backward(mse(pa, pb));
  for (std::size_t i = 0; i < 7; ++i) {
    CHECK(t.grad(pa)[i] == doctest::Approx(2.0 * (p[i] - q[i]) / 7.0));
    CHECK(t.grad(pb)[i] == doctest::Approx(-2.0 * (p[i] - q[i]) / 7.0));
  }
}

TEST_CASE("check_gradients: affine + mse toy graph and a constant loss") {
  Rng rng(21);
  const Tensor target = rng.normal_tensor({3});
  const ParamMap params{{"W", rng.normal_tensor({3, 4})}, {"b", rng.normal_tensor({3})}, {"x", rng.normal_tensor({4})}};
  const auto rep = check_gradients(
      [&](Tape& tp, const ParamMap& p) {
        Var y = affine(tp.parameter("x", p.at("x")), tp.parameter("W", p.at("W")), tp.parameter("b", p.at("b")));
        return mse(y, tp.constant(target));
      },
      params);
  CHECK(rep.worst < 1e-6);

  const auto flat = check_gradients(
      [](Tape& tp, const ParamMap& p) {
        tp.parameter("W", p.at("W"));
        return tp.constant(Tensor::vector({2.5}));
      },
      {{"W", rng.normal_tensor({2, 2})}});
  for (double g : flat.analytic.at("W").values()) CHECK(g == 0.0);
}

TEST_CASE("check_gradients propagates a non-finite loss") {
  CHECK_THROWS_AS(check_gradients(
                      [](Tape& tp, const ParamMap& p) {
                        Var x = tp.parameter("x", p.at("x"));
                        return add(mean(x), tp.constant(Tensor::vector({std::nan("")})));
                      },
                      {{"x", Tensor::vector({1.0})}}),
                  NonFiniteError);
}

TEST_CASE("property: every primitive passes randomized gradient checks") {
  Rng rng(99);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor target = rng.normal_tensor({3});
    const std::size_t label = rng.below(3);
    ParamMap params{{"x", rng.normal_tensor({4})},
                    {"W", rng.normal_tensor({3, 4})},
                    {"b", rng.normal_tensor({3})},
                    {"v", rng.normal_tensor({2, 3})}};
    // Keep relu inputs away from the kink.
    for (double& v : params.at("x").data()) {
      if (std::abs(v) < 0.05) v += 0.1;
    }
    const auto rep = check_gradients(
        [&](Tape& tp, const ParamMap& p) {
          Var x = tp.parameter("x", p.at("x"));
          Var W = tp.parameter("W", p.at("W"));
          Var b = tp.parameter("b", p.at("b"));
          Var v = tp.parameter("v", p.at("v"));
          Var h = tanh_elem(affine(relu_elem(x), W, b));
          Var n = l2_normalize(h);
          Var rows[] = {n, slice(reshape(v, {6}), 3, 3)};
          Var stacked = stack_rows(rows);
          Var logits = affine(n, stacked, tp.constant(Tensor({2})));
          Var ce = softmax_cross_entropy(scale(concat({logits, slice(h, 0, 1)}), 2.0), label % 3);
          return add(ce, add(mse(h, tp.constant(target)), mean(x)));
        },
        params);
    CHECK(rep.worst < 1e-4);
  }
}

TEST_CASE("property: softmax cross-entropy is shift invariant") {
  Rng rng(4);
  Tape t;
  for (int trial = 0; trial < 50; ++trial) {
    Tensor z = rng.normal_tensor({5}, 4.0);
    const std::size_t y = rng.below(5);
    const double c = 200.0 * (rng.uniform() - 0.5);
    Tensor shifted = z;
    for (double& v : shifted.data()) v += c;
    CHECK(std::abs(scalar(softmax_cross_entropy(t.constant(z), y)) -
                   scalar(softmax_cross_entropy(t.constant(shifted), y))) < 1e-9);
  }
}

TEST_CASE("property: l2_normalize output has unit norm") {
  Rng rng(6);
  Tape t;
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor x = rng.normal_tensor({1 + rng.below(12)}, std::pow(10.0, 4.0 * rng.uniform() - 2.0));
    CHECK(std::abs(l2_normalize(t.constant(x)).value().norm() - 1.0) < 1e-12);
  }
}

TEST_CASE("property: primitives are deterministic") {
  auto run = [] {
    Rng rng(77);
    Tape t;
    Var x = t.parameter("x", rng.normal_tensor({5}));
    Var W = t.parameter("W", rng.normal_tensor({4, 5}));
    Var loss = softmax_cross_entropy(tanh_elem(affine(x, W, t.constant(Tensor({4})))), 1);
    t.backward(loss);
    return std::make_pair(scalar(loss), t.parameter_grads());
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("backward visits nodes in reverse order; one registration per name") {
  Tape t;
  Var x = t.parameter("x", Tensor::vector({2.0}));
  CHECK_THROWS(t.parameter("x", Tensor::vector({1.0})));
  // y = (2x) + (2x) exercises gradient accumulation at a shared node.
  Var y2 = scale(x, 2.0);
  Var y = add(y2, y2);
  t.backward(mean(y));
  CHECK(t.grad(x)[0] == 4.0);
  CHECK(t.grad(x).shape() == x.shape());
}
