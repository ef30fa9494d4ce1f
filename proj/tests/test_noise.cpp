#include <cmath>

#include "doctest.h"

#include "p2c/noise.hpp"

using namespace p2c;

namespace {

ScheduleSpec spec(ScheduleKind kind, std::size_t T = 50, double sigma_max = 1.0) {
  return ScheduleSpec{kind, sigma_max, T, 12.0};
}

const ScheduleKind kAll[] = {ScheduleKind::constant, ScheduleKind::linear, ScheduleKind::cosine,
                             ScheduleKind::sigmoid};

PromptSet toy_prompts(Rng& rng) {
  PromptSet ps;
  ps.P_cls = rng.normal_tensor({2, 3});
  ps.P_att = rng.normal_tensor({2, 2, 3});
  ps.anchors = rng.normal_tensor({2, 3});
  ps.class_tokens = rng.normal_tensor({4, 3});
  return ps;
}

}  // namespace

TEST_CASE("schedule endpoints and midpoints") {
  CHECK(schedule_value(spec(ScheduleKind::sigmoid), 0) == 1.0);
  CHECK(schedule_value(spec(ScheduleKind::sigmoid), 50) == 0.0);
  CHECK(schedule_value(spec(ScheduleKind::sigmoid), 25) == 0.5);
  CHECK(schedule_value(spec(ScheduleKind::linear, 40), 10) == 0.75);
  CHECK(schedule_value(spec(ScheduleKind::cosine), 25) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(schedule_value(spec(ScheduleKind::constant), 50) == 1.0);
  CHECK_THROWS_AS(schedule_value(spec(ScheduleKind::linear), 51), std::out_of_range);
  CHECK_THROWS_AS(schedule_value(spec(ScheduleKind::linear), -1), std::out_of_range);
}

TEST_CASE("sigmoid matches the logistic normalization it is derived from") {
  const double k = 12.0;
  auto r = [&](double u) { return 1.0 / (1.0 + std::exp(k * (u - 0.5))); };
  for (std::size_t t = 0; t <= 50; ++t) {
    const double u = static_cast<double>(t) / 50.0;
    const double want = (r(u) - r(1.0)) / (r(0.0) - r(1.0));
    CHECK(schedule_value(spec(ScheduleKind::sigmoid), static_cast<double>(t)) == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("sigma_at") {
  for (std::size_t t = 0; t <= 50; ++t) {
    CHECK(sigma_at(spec(ScheduleKind::constant, 50, 0.015), static_cast<double>(t)) == 0.015);
  }
  for (ScheduleKind k : kAll) CHECK(sigma_at(spec(k, 50, 0.0), 13) == 0.0);
  CHECK(sigma_at(spec(ScheduleKind::sigmoid, 50, 0.015), 25) == doctest::Approx(0.0075).epsilon(1e-15));
}

TEST_CASE("property: schedules start at 1 and never increase") {
  for (std::size_t T : {1u, 2u, 7u, 50u, 301u}) {
    for (ScheduleKind k : kAll) {
      const ScheduleSpec s = spec(k, T);
      CHECK(schedule_value(s, 0) == 1.0);
      double prev = 1.0;
      for (std::size_t t = 1; t <= T; ++t) {
        const double v = schedule_value(s, static_cast<double>(t));
        CHECK(v <= prev);
        CHECK(v >= 0.0);
        prev = v;
      }
      if (k != ScheduleKind::constant) CHECK(schedule_value(s, static_cast<double>(T)) == 0.0);
    }
  }
}

TEST_CASE("schedule spec validation") {
  CHECK_THROWS(ScheduleSpec{ScheduleKind::linear, -0.1, 10, 12.0}.validate());
  CHECK_THROWS(ScheduleSpec{ScheduleKind::linear, 0.1, 0, 12.0}.validate());
  CHECK_THROWS(ScheduleSpec{ScheduleKind::sigmoid, 0.1, 10, 0.0}.validate());
  CHECK_NOTHROW(ScheduleSpec{}.validate());
}

TEST_CASE("GM draws: Monte-Carlo mean, std and covariance") {
  const NoiseModel nm = make_gaussian(3);
  Rng rng(2024);
  const double sigma = 0.01;
  const std::size_t n = 100000;
  double sum[3] = {0, 0, 0};
  double sq[3] = {0, 0, 0};
  double cross01 = 0.0, cross12 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor e = sample_noise(nm, sigma, {3}, rng).epsilon;
    for (int j = 0; j < 3; ++j) {
      sum[j] += e[j];
      sq[j] += e[j] * e[j];
    }
    cross01 += e[0] * e[1];
    cross12 += e[1] * e[2];
  }
  const double N = static_cast<double>(n);
  for (int j = 0; j < 3; ++j) {
    const double mean = sum[j] / N;
    const double sd = std::sqrt(sq[j] / N - mean * mean);
    CHECK(std::abs(mean) < 3.0 * sigma / std::sqrt(N));
    CHECK(std::abs(sd - sigma) < 3.0 * sigma / std::sqrt(2.0 * N));
  }
  const double se_cov = sigma * sigma / std::sqrt(N);
  CHECK(std::abs(cross01 / N) < 4.0 * se_cov);
  CHECK(std::abs(cross12 / N) < 4.0 * se_cov);
}

TEST_CASE("GMM mixture is mean-zero by construction and empirically") {
  Rng build(5);
  const NoiseModel nm = make_mixture(3, 4, 0.5, build);
  CHECK_NOTHROW(nm.validate());
  for (std::size_t i = 0; i < 4; ++i) {
    double m = 0.0;
    for (std::size_t k = 0; k < 3; ++k) m += nm.weights[k] * nm.means[k][i];
    CHECK(std::abs(m) < 1e-12);
  }

  auto check_empirical_mean = [](const NoiseModel& model, std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t n = 100000;
    const std::size_t d = model.dim();
    std::vector<double> sum(d, 0.0), sq(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const Tensor e = sample_noise(model, 0.01, {d}, rng).epsilon;
      for (std::size_t j = 0; j < d; ++j) {
        sum[j] += e[j];
        sq[j] += e[j] * e[j];
      }
    }
    const double N = static_cast<double>(n);
    for (std::size_t j = 0; j < d; ++j) {
      const double mean = sum[j] / N;
      const double se = std::sqrt((sq[j] / N - mean * mean) / N);
      CHECK(std::abs(mean) < 3.0 * se);
    }
  };
  check_empirical_mean(nm, 6);

  NoiseModel sym{NoiseKind::gmm, {0.5, 0.5}, {Tensor::vector({2.0, -1.0}), Tensor::vector({-2.0, 1.0})}, {1.0, 1.0}};
  CHECK_NOTHROW(sym.validate());
  check_empirical_mean(sym, 7);
}

TEST_CASE("noise model validation") {
  CHECK_THROWS(NoiseModel{NoiseKind::gmm, {0.5, 0.4}, {Tensor({2}), Tensor({2})}, {1.0, 1.0}}.validate());
  CHECK_THROWS(NoiseModel{NoiseKind::gmm, {0.5, 0.5}, {Tensor::vector({1, 0}), Tensor({2})}, {1.0, 1.0}}.validate());
  CHECK_THROWS(NoiseModel{NoiseKind::gm, {1.0}, {Tensor({2})}, {0.0}}.validate());
  const NoiseModel g = make_gaussian(5);
  CHECK(g.components() == 1);
  CHECK(g.means[0] == Tensor({5}));
  CHECK(g.ratios[0] == 1.0);
}

TEST_CASE("sample_noise: zero sigma, shape, determinism") {
  Rng a(1), b(1);
  const NoiseModel nm = make_mixture(3, 12, 0.5, a);
  make_mixture(3, 12, 0.5, b);
  const NoiseDraw z = sample_noise(nm, 0.0, {3, 4}, a);
  CHECK(z.epsilon == Tensor({3, 4}));
  // sigma = 0 leaves the stream untouched.
  CHECK(a.normal() == b.normal());

  const NoiseDraw d1 = sample_noise(nm, 0.02, {3, 4}, a);
  const NoiseDraw d2 = sample_noise(nm, 0.02, {3, 4}, b);
  CHECK(d1.epsilon.shape() == Shape{3, 4});
  CHECK(d1.epsilon == d2.epsilon);
  CHECK(d1.component == d2.component);
  CHECK_THROWS_AS(sample_noise(nm, 0.02, {13}, a), DimensionError);
  CHECK_THROWS(sample_noise(nm, -0.1, {2}, a));
}

TEST_CASE("sample_noise composes sigma * mu_k + sigma * rho_k * z") {
  NoiseModel nm{NoiseKind::gmm, {0.5, 0.5}, {Tensor::vector({1.0, 2.0, 3.0}), Tensor::vector({-1.0, -2.0, -3.0})},
                {2.0, 0.5}};
  Rng rng(31), replay(31);
  const NoiseDraw d = sample_noise(nm, 0.1, {2}, rng, 1);
  const std::size_t k = replay.categorical(nm.weights);
  CHECK(d.component == k);
  for (std::size_t i = 0; i < 2; ++i) {
    const double z = replay.normal();
    CHECK(d.epsilon[i] == 0.1 * nm.means[k][1 + i] + 0.1 * nm.ratios[k] * z);
  }
}

TEST_CASE("perturb_prompts") {
  Rng init(9);
  const PromptSet ps = toy_prompts(init);
  const NoiseModel nm = make_mixture(3, 18, 0.5, init);
  Rng rng(10);

  const PerturbedPrompts same = perturb_prompts(ps, nm, 0.0, rng);
  CHECK(same.P_cls == ps.P_cls);
  CHECK(same.P_att == ps.P_att);

  const PromptSet before = ps;
  const PerturbedPrompts noisy = perturb_prompts(ps, nm, 0.05, rng);
  CHECK(ps.P_cls == before.P_cls);
  CHECK(noisy.draws.size() == 2);
  CHECK(noisy.draws[0].epsilon.shape() == ps.P_cls.shape());
  CHECK(noisy.draws[1].epsilon.shape() == ps.P_att.shape());
  double diff = 0.0;
  for (std::size_t i = 0; i < ps.P_cls.size(); ++i) diff += std::abs(noisy.P_cls[i] - ps.P_cls[i]);
  CHECK(diff > 0.0);

  const PerturbedPrompts shared = perturb_prompts(ps, nm, 0.05, rng, true);
  CHECK(shared.draws.size() == 1);
  CHECK(shared.eps_cls.shape() == ps.P_cls.shape());
  CHECK(shared.eps_att.shape() == ps.P_att.shape());
}

TEST_CASE("gradient through the perturbation is the identity") {
  Rng init(12);
  const PromptSet ps = toy_prompts(init);
  const NoiseModel nm = make_gaussian(18);
  Rng rng(13);
  const PerturbedPrompts pp = perturb_prompts(ps, nm, 0.1, rng);
  const Tensor w = init.normal_tensor({6});

  Tape through;
  Var P = through.parameter("P", ps.P_cls);
  Var noisy = add(P, through.constant(pp.eps_cls));
  through.backward(mse(tanh_elem(reshape(noisy, {6})), through.constant(w)));

  Tape direct;
  Var Pt = direct.parameter("P", pp.P_cls);
  direct.backward(mse(tanh_elem(reshape(Pt, {6})), direct.constant(w)));

  CHECK(through.grad(P) == direct.grad(Pt));

  const auto rep = check_gradients(
      [&](Tape& t, const ParamMap& p) {
        Var x = add(t.parameter("P", p.at("P")), t.constant(pp.eps_cls));
        return mse(tanh_elem(reshape(x, {6})), t.constant(w));
      },
      {{"P", ps.P_cls}});
  CHECK(rep.worst < 1e-6);
}
