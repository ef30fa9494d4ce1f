#pragma once

// Annealed prompt perturbation: schedule functions, Gaussian / Gaussian-mixture
// noise generators and the additive perturbation of the learnable prompts.

#include <string>
#include <vector>

#include "p2c/prompts.hpp"
#include "p2c/rng.hpp"
#include "p2c/tensor.hpp"

namespace p2c {

enum class ScheduleKind { constant, linear, cosine, sigmoid };

ScheduleKind schedule_kind_from_string(const std::string& s);
std::string to_string(ScheduleKind k);

struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::sigmoid;
  double sigma_max = 0.015;
  std::size_t T = 50;
  double k = 12.0;  // sigmoid steepness

  void validate() const;
};

// S(t, T) in [0, 1], S(0) = 1. Annealing kinds reach 0 at t = T.
double schedule_value(const ScheduleSpec& s, double t);
double sigma_at(const ScheduleSpec& s, double t);

enum class NoiseKind { gm, gmm };

NoiseKind noise_kind_from_string(const std::string& s);
std::string to_string(NoiseKind k);

// Mixture over d-dimensional noise with unit-scale component means mu_k and
// std ratios rho_k. The mixture mean sum_k pi_k mu_k is zero.
struct NoiseModel {
  NoiseKind kind = NoiseKind::gm;
  std::vector<double> weights;
  std::vector<Tensor> means;
  std::vector<double> ratios;

  std::size_t components() const noexcept { return weights.size(); }
  std::size_t dim() const { return means.front().size(); }
  void validate() const;
};

NoiseModel make_gaussian(std::size_t d);
// K components, uniform weights, means ~ N(0, mean_std^2 I) recentred to a
// zero mixture mean, unit std ratios.
NoiseModel make_mixture(std::size_t K, std::size_t d, double mean_std, Rng& rng);

struct NoiseDraw {
  Tensor epsilon;
  double sigma_t = 0.0;
  std::size_t component = 0;
};

// epsilon = sigma_t * mu_k + sigma_t * rho_k * z, with the component means
// read from `offset` onward so a draw can cover a slice of the model's space.
NoiseDraw sample_noise(const NoiseModel& nm, double sigma_t, const Shape& shape, Rng& rng, std::size_t offset = 0);

struct PerturbedPrompts {
  Tensor P_cls;
  Tensor P_att;  // empty when the prompt set has no attributes
  Tensor eps_cls;
  Tensor eps_att;
  std::vector<NoiseDraw> draws;
};

// Independent draw per learnable tensor, or one joint draw over the flattened
// prompts when `shared_draw` is set. The input prompt set is not modified.
PerturbedPrompts perturb_prompts(const PromptSet& ps, const NoiseModel& nm, double sigma_t, Rng& rng,
                                 bool shared_draw = false);

}  // namespace p2c
