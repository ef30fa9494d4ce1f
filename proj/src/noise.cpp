#include "p2c/noise.hpp"

#include <cmath>
#include <numbers>

#include "p2c/json_io.hpp"

namespace p2c {

ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "constant") return ScheduleKind::constant;
  if (s == "linear") return ScheduleKind::linear;
  if (s == "cosine") return ScheduleKind::cosine;
  if (s == "sigmoid") return ScheduleKind::sigmoid;
  throw ValidationError("unknown schedule '" + s + "' (expected constant, linear, cosine or sigmoid)");
}

std::string to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::constant: return "constant";
    case ScheduleKind::linear: return "linear";
    case ScheduleKind::cosine: return "cosine";
    case ScheduleKind::sigmoid: return "sigmoid";
  }
  return "?";
}

void ScheduleSpec::validate() const {
  if (!(sigma_max >= 0.0)) throw ValidationError("noise.sigma_max must be >= 0");
  if (T < 1) throw ValidationError("schedule: T must be >= 1");
  if (!(k > 0.0)) throw ValidationError("noise.sigmoid_k must be > 0");
}

double schedule_value(const ScheduleSpec& s, double t) {
  const double T = static_cast<double>(s.T);
  if (!(t >= 0.0 && t <= T)) {
    throw std::out_of_range("schedule_value: t=" + std::to_string(t) + " outside [0, " + std::to_string(s.T) + "]");
  }
  const double u = t / T;
  switch (s.kind) {
    case ScheduleKind::constant: return 1.0;
    case ScheduleKind::linear: return 1.0 - u;
    case ScheduleKind::cosine: return t == T ? 0.0 : 0.5 * (1.0 + std::cos(std::numbers::pi * u));
    case ScheduleKind::sigmoid: {
      // r(u) = 1/(1+exp(k(u-1/2))) = 1/2 - tanh(k(u-1/2)/2)/2, normalized so
      // that S(0)=1 and S(T)=0; the tanh form makes S(T/2) exactly 1/2.
      const double edge = std::tanh(s.k / 4.0);
      return (edge - std::tanh(s.k * (u - 0.5) / 2.0)) / (2.0 * edge);
    }
  }
  return 1.0;
}

double sigma_at(const ScheduleSpec& s, double t) { return s.sigma_max * schedule_value(s, t); }

NoiseKind noise_kind_from_string(const std::string& s) {
  if (s == "gm") return NoiseKind::gm;
  if (s == "gmm") return NoiseKind::gmm;
  throw ValidationError("unknown noise kind '" + s + "' (expected gm or gmm)");
}

std::string to_string(NoiseKind k) { return k == NoiseKind::gm ? "gm" : "gmm"; }

void NoiseModel::validate() const {
  const std::size_t K = weights.size();
  if (K < 1 || means.size() != K || ratios.size() != K) throw std::invalid_argument("noise model: inconsistent sizes");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("noise model: negative weight");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("noise model: weights do not sum to 1");
  for (double r : ratios) {
    if (!(r > 0.0)) throw std::invalid_argument("noise model: std ratios must be positive");
  }
  const std::size_t d = means.front().size();
  for (std::size_t i = 0; i < d; ++i) {
    double m = 0.0;
    for (std::size_t k = 0; k < K; ++k) m += weights[k] * means[k][i];
    if (std::abs(m) > 1e-12) throw std::invalid_argument("noise model: mixture mean is not zero");
  }
}

NoiseModel make_gaussian(std::size_t d) {
  return NoiseModel{NoiseKind::gm, {1.0}, {Tensor({d})}, {1.0}};
}

NoiseModel make_mixture(std::size_t K, std::size_t d, double mean_std, Rng& rng) {
  if (K < 1) throw ValidationError("noise.K must be >= 1");
  NoiseModel nm;
  nm.kind = NoiseKind::gmm;
  nm.weights.assign(K, 1.0 / static_cast<double>(K));
  nm.ratios.assign(K, 1.0);
  for (std::size_t k = 0; k < K; ++k) nm.means.push_back(rng.normal_tensor({d}, mean_std));
  for (std::size_t i = 0; i < d; ++i) {
    double m = 0.0;
    for (std::size_t k = 0; k < K; ++k) m += nm.weights[k] * nm.means[k][i];
    for (std::size_t k = 0; k < K; ++k) nm.means[k][i] -= m;
  }
  nm.validate();
  return nm;
}

NoiseDraw sample_noise(const NoiseModel& nm, double sigma_t, const Shape& shape, Rng& rng, std::size_t offset) {
  if (!(sigma_t >= 0.0)) throw std::invalid_argument("sample_noise: sigma_t must be >= 0");
  NoiseDraw draw{Tensor(shape), sigma_t, 0};
  if (sigma_t == 0.0) return draw;
  if (offset + draw.epsilon.size() > nm.dim()) {
    throw DimensionError("sample_noise: target " + shape_str(shape) + " at offset " + std::to_string(offset) +
                         " exceeds noise dimension " + std::to_string(nm.dim()));
  }
  if (nm.components() > 1) draw.component = rng.categorical(nm.weights);
  const Tensor& mu = nm.means[draw.component];
  const double rho = nm.ratios[draw.component];
  for (std::size_t i = 0; i < draw.epsilon.size(); ++i) {
    draw.epsilon[i] = sigma_t * mu[offset + i] + sigma_t * rho * rng.normal();
  }
  return draw;
}

static Tensor plus(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

PerturbedPrompts perturb_prompts(const PromptSet& ps, const NoiseModel& nm, double sigma_t, Rng& rng,
                                 bool shared_draw) {
  PerturbedPrompts out;
  const std::size_t n_cls = ps.P_cls.size();
  if (shared_draw) {
    NoiseDraw joint = sample_noise(nm, sigma_t, {n_cls + ps.P_att.size()}, rng);
    const auto& e = joint.epsilon.values();
    out.eps_cls = Tensor(ps.P_cls.shape(), std::vector<double>(e.begin(), e.begin() + n_cls));
    if (ps.has_attributes()) out.eps_att = Tensor(ps.P_att.shape(), std::vector<double>(e.begin() + n_cls, e.end()));
    out.draws.push_back(std::move(joint));
  } else {
    NoiseDraw d_cls = sample_noise(nm, sigma_t, ps.P_cls.shape(), rng, 0);
    out.eps_cls = d_cls.epsilon;
    out.draws.push_back(std::move(d_cls));
    if (ps.has_attributes()) {
      NoiseDraw d_att = sample_noise(nm, sigma_t, ps.P_att.shape(), rng, n_cls);
      out.eps_att = d_att.epsilon;
      out.draws.push_back(std::move(d_att));
    }
  }
  out.P_cls = plus(ps.P_cls, out.eps_cls);
  if (ps.has_attributes()) out.P_att = plus(ps.P_att, out.eps_att);
  return out;
}

}  // namespace p2c
