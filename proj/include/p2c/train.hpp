#pragma once

// Total objective, SGD loop and curve logging.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "p2c/config.hpp"
#include "p2c/mapper.hpp"
#include "p2c/noise.hpp"
#include "p2c/prompts.hpp"
#include "p2c/synthdata.hpp"
#include "p2c/tape.hpp"

namespace p2c {

struct TrainState {
  PromptConfig prompt_cfg;
  PromptSet prompts;
  VlMapper mapper;
  FrozenEncoders encoders;
  NoiseModel noise_model;

  // "P_cls", "P_att" (when present) and "mapper.W1" .. "mapper.b2".
  ParamMap learnable() const;
  void set_learnable(const ParamMap& params);
};

// Builds the frozen encoders, prompts, mapper and noise model from independent
// substreams of cfg.train.seed, so runs that differ only in their flags start
// from the same point.
TrainState init_state(const RunConfig& cfg, const SynthTask& task);

struct Batch {
  std::vector<Tensor> x;
  std::vector<std::size_t> y;  // global class indices
};

// Noise realizations for one step. eps_* are left empty when DPD is off.
struct StepNoise {
  Tensor eps_cls;
  Tensor eps_att;
  Tensor eta;
};

struct LossOptions {
  bool dpd = true;
  bool aux = true;
  bool vis_from_noisy = true;
  AuxLossSpec aux_spec;
};

LossOptions loss_options(const RunConfig& cfg);

struct LossTerms {
  Var total;
  Var cls;
  Var aux;
};

// L_cls over `class_set` plus lambda * L_aux, with every parameter in `params`
// registered on `tape`. Frozen parts are read from `state`.
LossTerms build_loss(Tape& tape, const ParamMap& params, const TrainState& state, const Batch& batch,
                     std::span<const std::size_t> class_set, const StepNoise& noise, const LossOptions& opt);

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss_total = 0.0;
  double loss_cls = 0.0;
  double loss_aux = 0.0;
  double sigma_t = 0.0;
  double epoch_wall_ms = 0.0;
};

struct StepStreams {
  Rng& dpd;
  Rng& aux;
};

StepRecord training_step(TrainState& state, const RunConfig& cfg, const Batch& batch,
                         std::span<const std::size_t> class_set, std::size_t epoch, double lr, StepStreams rng);

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<double> epoch_wall_ms;
};

TrainLog run_training(const RunConfig& cfg, const SynthTask& task, TrainState& state);

class DegenerateTimingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// (mean p2c epoch ms / mean baseline epoch ms - 1) * 100.
double overhead_report(std::span<const double> baseline_epoch_ms, std::span<const double> p2c_epoch_ms);
double overhead_report(const TrainLog& baseline, const TrainLog& p2c);

std::string curves_csv(const TrainLog& log);
// Reads back the epoch_wall_ms column, one value per epoch.
std::vector<double> epoch_ms_from_curves(const std::string& csv);

json params_to_json(const TrainState& state);
// Restores the learnable tensors of `state` from a params file written by
// params_to_json; the frozen checksum must match.
void params_from_json(const json& j, TrainState& state);

}  // namespace p2c
