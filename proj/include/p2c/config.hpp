#pragma once

// Run configuration: one JSON file with sections prompts, noise, mapper,
// train, data and eval. Every key has a default; unknown keys are rejected.

#include <cstdint>
#include <string>
#include <vector>

#include "p2c/json_io.hpp"
#include "p2c/mapper.hpp"
#include "p2c/noise.hpp"
#include "p2c/prompts.hpp"
#include "p2c/synthdata.hpp"

namespace p2c {

struct NoiseConfig {
  NoiseKind kind = NoiseKind::gmm;
  std::size_t K = 3;
  double sigma_max = 0.015;
  ScheduleKind schedule = ScheduleKind::sigmoid;
  double sigmoid_k = 12.0;
  bool shared_draw = false;
  double gmm_mean_std = 0.5;
};

struct MapperConfig {
  std::size_t s_H = 2;
  double sigma_aux = 0.01;
  double lambda = 0.1;
  bool detach_clean = true;
  bool vis_from_noisy = true;
  bool aux_updates_prompts = true;

  AuxLossSpec aux_spec() const { return AuxLossSpec{sigma_aux, lambda, detach_clean, aux_updates_prompts}; }
};

enum class LrSchedule { constant, cosine };

struct TrainConfig {
  double lr = 3.5e-3;
  std::size_t batch_size = 4;
  std::size_t epochs = 50;
  std::uint64_t seed = 1;
  LrSchedule lr_schedule = LrSchedule::constant;
  bool dpd = true;
  bool aux = true;
};

struct EvalConfig {
  std::size_t n_seeds = 5;
  std::size_t curve_downsample = 10;
  ShiftKind shift_kind = ShiftKind::mean_shift;
  std::vector<double> shift_magnitudes{0.0, 0.5, 1.0, 1.5, 2.0};
  std::uint64_t shift_seed = 7;
};

struct RunConfig {
  PromptConfig prompts;
  NoiseConfig noise;
  MapperConfig mapper;
  TrainConfig train;
  GenConfig data;
  EvalConfig eval;

  ScheduleSpec schedule() const {
    return ScheduleSpec{noise.schedule, noise.sigma_max, train.epochs == 0 ? 1 : train.epochs, noise.sigmoid_k};
  }

  void validate() const;
  json to_json() const;
  // SHA-256 of the canonical (sorted-key) JSON serialization.
  std::string hash() const;
};

// Strict parse. With `require_data_seed`, data.seed must be present: task
// files are records of how they were generated, so gen-data refuses to guess.
RunConfig parse_config(const json& j, bool require_data_seed = false);
RunConfig load_config(const std::filesystem::path& path, bool require_data_seed = false);

std::string to_string(LrSchedule s);

}  // namespace p2c
