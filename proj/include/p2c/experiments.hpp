#pragma once

// Run drivers behind the CLI: single runs, ablations, sweeps, shift
// evaluation and plot-data emission. Every run owns its config, rng streams
// and output directory, so runs can execute on a worker pool.

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "p2c/config.hpp"
#include "p2c/eval.hpp"
#include "p2c/train.hpp"

namespace p2c {

namespace fs = std::filesystem;

struct RunResult {
  EvalReport report;
  TrainLog log;
  TrainState state;
};

// Train from scratch and evaluate on both splits.
RunResult run_one(const RunConfig& cfg, const SynthTask& task);

// Free-form labels stored next to the run so `report` can group runs.
struct RunMeta {
  std::string label;
  std::string variant;
  std::string axis;
  std::string value;
};

// curves.csv, report.json, params.json and run_meta.json under `dir`.
void write_run(const fs::path& dir, const RunConfig& cfg, const RunResult& r, const RunMeta& meta = {});

// Rebuilds the trained state saved by write_run. The task must be the one
// the params were trained on (checked through the frozen checksum).
TrainState load_trained(const fs::path& params_file, const SynthTask& task, RunConfig* cfg_out = nullptr);

// Calls fn(i) for i in [0, n) on up to `jobs` threads. The first exception
// thrown by any call is rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

struct AblationVariant {
  std::string name;
  std::string slug;  // directory name
  bool dpd;
  bool aux;
  NoiseKind kind;
};

const std::vector<AblationVariant>& ablation_variants();
RunConfig apply_variant(RunConfig cfg, const AblationVariant& v);

struct AblationRow {
  std::string variant;
  std::uint64_t seed = 0;
  double base_acc = 0.0;
  double novel_acc = 0.0;
  double hm = 0.0;
};

struct AblationResult {
  std::vector<AblationRow> rows;  // variant-major, seeds ascending
  std::vector<double> mean_hm;    // per variant, in ablation_variants() order
  std::vector<double> delta_hm;   // mean_hm - mean_hm[baseline]
};

// Seeds are cfg.train.seed, cfg.train.seed + 1, ... (cfg.eval.n_seeds of
// them). With a non-empty `out`, per-run directories and ablation.csv are
// written under it.
AblationResult run_ablation(const RunConfig& cfg, const SynthTask& task, const fs::path& out, std::size_t jobs);
std::string ablation_csv(const AblationResult& r, const std::string& config_hash);

enum class SweepAxis { schedule, sigma_max, sigma_aux, lambda, s_H, TL };
SweepAxis sweep_axis_from_string(const std::string& s);
std::string to_string(SweepAxis a);
// Sets one axis value, given as text; throws ValidationError on bad values.
RunConfig apply_axis(RunConfig cfg, SweepAxis axis, const std::string& value);

struct SweepRow {
  std::string value;
  std::uint64_t seed = 0;
  double base_acc = 0.0;
  double novel_acc = 0.0;
  double hm = 0.0;
  std::string config_hash;
};

struct SweepSummary {
  std::string value;
  std::size_t n = 0;
  double hm_mean = 0.0;
  double hm_std = 0.0;  // sample standard deviation, 0 for a single run
  double base_mean = 0.0;
  double novel_mean = 0.0;
};

struct SweepResult {
  SweepAxis axis;
  std::vector<SweepRow> rows;  // value-major in the given order, seeds ascending
  std::vector<SweepSummary> summary;
};

SweepResult run_sweep(const RunConfig& cfg, const SynthTask& task, SweepAxis axis,
                      const std::vector<std::string>& values, const fs::path& out, std::size_t jobs);
std::string sweep_csv(const SweepResult& r);
std::string sweep_summary_csv(const SweepResult& r);

struct ShiftRow {
  ShiftKind kind;
  double magnitude = 0.0;
  double base_acc = 0.0;
  double novel_acc = 0.0;
  double hm = 0.0;
};

// One row per magnitude, sorted ascending. The shift direction is drawn from
// cfg.eval.shift_seed and is the same for every magnitude.
std::vector<ShiftRow> shift_eval(const TrainState& state, const SynthTask& task, ShiftKind kind,
                                 std::vector<double> magnitudes, std::uint64_t shift_seed);
std::string shift_csv(const std::vector<ShiftRow>& rows);

struct ReportOutputs {
  std::string curves;
  std::string variants;
  std::string sweep;
  std::string overhead;
  std::vector<double> overhead_pct;  // one per (baseline, P2C) seed pair
};

// Run directories are those holding report.json; a given directory without
// one is searched recursively. The merged output is sorted by run label and
// does not depend on the order of `inputs`.
ReportOutputs build_report(const std::vector<fs::path>& inputs, std::size_t curve_downsample);
void write_report(const fs::path& out, const ReportOutputs& r);

double sample_mean(const std::vector<double>& v);
double sample_std(const std::vector<double>& v);

}  // namespace p2c
