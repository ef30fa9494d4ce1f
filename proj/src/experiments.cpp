#include "p2c/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace p2c {

RunResult run_one(const RunConfig& cfg, const SynthTask& task) {
  const auto start = std::chrono::steady_clock::now();
  RunResult r{{}, {}, init_state(cfg, task)};
  r.log = run_training(cfg, task, r.state);
  r.report = evaluate(r.state, task, cfg);
  r.report.total_wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return r;
}

void write_run(const fs::path& dir, const RunConfig& cfg, const RunResult& r, const RunMeta& meta) {
  write_text_file(dir / "curves.csv", curves_csv(r.log));
  write_text_file(dir / "report.json", to_json(r.report).dump(2) + "\n");
  json params = params_to_json(r.state);
  params["config"] = cfg.to_json();
  write_text_file(dir / "params.json", params.dump() + "\n");
  const json m{{"label", meta.label.empty() ? dir.filename().string() : meta.label},
               {"variant", meta.variant},
               {"axis", meta.axis},
               {"value", meta.value},
               {"seed", cfg.train.seed},
               {"config_hash", r.report.config_hash}};
  write_text_file(dir / "run_meta.json", m.dump(2) + "\n");
}

TrainState load_trained(const fs::path& params_file, const SynthTask& task, RunConfig* cfg_out) {
  const json j = read_json_file(params_file);
  const RunConfig cfg = parse_config(require(j, "config", "params"));
  TrainState state = init_state(cfg, task);
  params_from_json(j, state);
  if (cfg_out) *cfg_out = cfg;
  return state;
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first;
  std::mutex mu;
  {
    std::vector<std::jthread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(mu);
            if (!first) first = std::current_exception();
          }
        }
      });
    }
  }
  if (first) std::rethrow_exception(first);
}

const std::vector<AblationVariant>& ablation_variants() {
  static const std::vector<AblationVariant> v{
      {"baseline", "baseline", false, false, NoiseKind::gmm},
      {"+DPD(GM)", "dpd_gm", true, false, NoiseKind::gm},
      {"+DPD(GMM)", "dpd_gmm", true, false, NoiseKind::gmm},
      {"+DPD(GM)+aux", "dpd_gm_aux", true, true, NoiseKind::gm},
      {"P2C", "p2c", true, true, NoiseKind::gmm},
  };
  return v;
}

RunConfig apply_variant(RunConfig cfg, const AblationVariant& v) {
  cfg.train.dpd = v.dpd;
  cfg.train.aux = v.aux;
  cfg.noise.kind = v.kind;
  return cfg;
}

double sample_mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = sample_mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

static std::string seed_dir(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

AblationResult run_ablation(const RunConfig& cfg, const SynthTask& task, const fs::path& out, std::size_t jobs) {
  const auto& variants = ablation_variants();
  const std::size_t S = cfg.eval.n_seeds;
  AblationResult res;
  res.rows.resize(variants.size() * S);
  parallel_for(res.rows.size(), jobs, [&](std::size_t i) {
    const AblationVariant& v = variants[i / S];
    RunConfig rc = apply_variant(cfg, v);
    rc.train.seed = cfg.train.seed + i % S;
    const RunResult r = run_one(rc, task);
    res.rows[i] = AblationRow{v.name, rc.train.seed, r.report.base_acc, r.report.novel_acc, r.report.hm};
    if (!out.empty()) {
      write_run(out / v.slug / seed_dir(rc.train.seed), rc, r,
                RunMeta{"ablate/" + v.slug + "/" + seed_dir(rc.train.seed), v.name, "", ""});
    }
  });
  for (std::size_t k = 0; k < variants.size(); ++k) {
    std::vector<double> hm;
    for (std::size_t s = 0; s < S; ++s) hm.push_back(res.rows[k * S + s].hm);
    res.mean_hm.push_back(sample_mean(hm));
  }
  for (double m : res.mean_hm) res.delta_hm.push_back(m - res.mean_hm.front());
  if (!out.empty()) write_text_file(out / "ablation.csv", ablation_csv(res, cfg.hash()));
  return res;
}

std::string ablation_csv(const AblationResult& r, const std::string& config_hash) {
  const auto& variants = ablation_variants();
  std::string out = "variant,seed,base_acc,novel_acc,hm,delta_hm,config_hash\n";
  const std::size_t S = r.rows.size() / variants.size();
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    const AblationRow& row = r.rows[i];
    const double paired = row.hm - r.rows[i % S].hm;
    out += row.variant + "," + std::to_string(row.seed) + "," + fmt9(row.base_acc) + "," + fmt9(row.novel_acc) + "," +
           fmt9(row.hm) + "," + fmt9(paired) + "," + config_hash + "\n";
  }
  for (std::size_t k = 0; k < variants.size(); ++k) {
    std::vector<double> base, novel;
    for (std::size_t s = 0; s < S; ++s) {
      base.push_back(r.rows[k * S + s].base_acc);
      novel.push_back(r.rows[k * S + s].novel_acc);
    }
    out += variants[k].name + ",mean," + fmt9(sample_mean(base)) + "," + fmt9(sample_mean(novel)) + "," +
           fmt9(r.mean_hm[k]) + "," + fmt9(r.delta_hm[k]) + "," + config_hash + "\n";
  }
  return out;
}

SweepAxis sweep_axis_from_string(const std::string& s) {
  if (s == "schedule") return SweepAxis::schedule;
  if (s == "sigma_max") return SweepAxis::sigma_max;
  if (s == "sigma_aux") return SweepAxis::sigma_aux;
  if (s == "lambda") return SweepAxis::lambda;
  if (s == "s_H") return SweepAxis::s_H;
  if (s == "TL") return SweepAxis::TL;
  throw ValidationError("unknown sweep axis '" + s + "' (expected schedule, sigma_max, sigma_aux, lambda, s_H or TL)");
}

std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::schedule: return "schedule";
    case SweepAxis::sigma_max: return "sigma_max";
    case SweepAxis::sigma_aux: return "sigma_aux";
    case SweepAxis::lambda: return "lambda";
    case SweepAxis::s_H: return "s_H";
    case SweepAxis::TL: return "TL";
  }
  return "?";
}

static double parse_double(const std::string& axis, const std::string& v) {
  std::size_t used = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ValidationError("sweep " + axis + ": '" + v + "' is not a number");
  return d;
}

static std::size_t parse_count(const std::string& axis, const std::string& v) {
  const double d = parse_double(axis, v);
  if (d < 1.0 || d != std::floor(d)) throw ValidationError("sweep " + axis + ": '" + v + "' is not a positive integer");
  return static_cast<std::size_t>(d);
}

RunConfig apply_axis(RunConfig cfg, SweepAxis axis, const std::string& value) {
  const std::string name = to_string(axis);
  switch (axis) {
    case SweepAxis::schedule: cfg.noise.schedule = schedule_kind_from_string(value); break;
    case SweepAxis::sigma_max: cfg.noise.sigma_max = parse_double(name, value); break;
    case SweepAxis::sigma_aux: cfg.mapper.sigma_aux = parse_double(name, value); break;
    case SweepAxis::lambda: cfg.mapper.lambda = parse_double(name, value); break;
    case SweepAxis::s_H: cfg.mapper.s_H = parse_count(name, value); break;
    case SweepAxis::TL: cfg.prompts.TL_att = parse_count(name, value); break;
  }
  cfg.validate();
  return cfg;
}

static std::string safe_component(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_') ? c : '_';
  return out;
}

SweepResult run_sweep(const RunConfig& cfg, const SynthTask& task, SweepAxis axis,
                      const std::vector<std::string>& values, const fs::path& out, std::size_t jobs) {
  if (values.empty()) throw ValidationError("sweep: no values given");
  std::vector<RunConfig> per_value;
  for (const std::string& v : values) per_value.push_back(apply_axis(cfg, axis, v));

  const std::size_t S = cfg.eval.n_seeds;
  SweepResult res{axis, std::vector<SweepRow>(values.size() * S), {}};
  const std::string axis_name = to_string(axis);
  parallel_for(res.rows.size(), jobs, [&](std::size_t i) {
    RunConfig rc = per_value[i / S];
    rc.train.seed = cfg.train.seed + i % S;
    const RunResult r = run_one(rc, task);
    const std::string& v = values[i / S];
    res.rows[i] = SweepRow{v, rc.train.seed, r.report.base_acc, r.report.novel_acc, r.report.hm, r.report.config_hash};
    if (!out.empty()) {
      const std::string sub = axis_name + "=" + safe_component(v);
      write_run(out / sub / seed_dir(rc.train.seed), rc, r,
                RunMeta{"sweep/" + sub + "/" + seed_dir(rc.train.seed), "", axis_name, v});
    }
  });
  for (std::size_t k = 0; k < values.size(); ++k) {
    std::vector<double> hm, base, novel;
    for (std::size_t s = 0; s < S; ++s) {
      const SweepRow& row = res.rows[k * S + s];
      hm.push_back(row.hm);
      base.push_back(row.base_acc);
      novel.push_back(row.novel_acc);
    }
    res.summary.push_back(
        SweepSummary{values[k], S, sample_mean(hm), sample_std(hm), sample_mean(base), sample_mean(novel)});
  }
  if (!out.empty()) {
    write_text_file(out / "sweep.csv", sweep_csv(res));
    write_text_file(out / "sweep_summary.csv", sweep_summary_csv(res));
  }
  return res;
}

std::string sweep_csv(const SweepResult& r) {
  std::string out = "axis,value,seed,base_acc,novel_acc,hm,config_hash\n";
  for (const SweepRow& row : r.rows) {
    out += to_string(r.axis) + "," + row.value + "," + std::to_string(row.seed) + "," + fmt9(row.base_acc) + "," +
           fmt9(row.novel_acc) + "," + fmt9(row.hm) + "," + row.config_hash + "\n";
  }
  return out;
}

std::string sweep_summary_csv(const SweepResult& r) {
  std::string out = "axis,value,n,base_mean,novel_mean,hm_mean,hm_std\n";
  for (const SweepSummary& s : r.summary) {
    out += to_string(r.axis) + "," + s.value + "," + std::to_string(s.n) + "," + fmt9(s.base_mean) + "," +
           fmt9(s.novel_mean) + "," + fmt9(s.hm_mean) + "," + fmt9(s.hm_std) + "\n";
  }
  return out;
}

std::vector<ShiftRow> shift_eval(const TrainState& state, const SynthTask& task, ShiftKind kind,
                                 std::vector<double> magnitudes, std::uint64_t shift_seed) {
  std::sort(magnitudes.begin(), magnitudes.end());
  std::vector<ShiftRow> rows;
  for (double m : magnitudes) {
    if (!(m >= 0.0)) throw ValidationError("shift magnitudes must be >= 0");
    Rng rng = Rng::derive(shift_seed, 0, "shift");
    const SynthTask shifted = apply_shift(task, ShiftSpec{kind, m}, rng);
    const double base = evaluate_split(state, shifted, Split::base).accuracy;
    const double novel = evaluate_split(state, shifted, Split::novel).accuracy;
    rows.push_back(ShiftRow{kind, m, base, novel, harmonic_mean(base, novel)});
  }
  return rows;
}

std::string shift_csv(const std::vector<ShiftRow>& rows) {
  std::string out = "kind,magnitude,base_acc,novel_acc,hm\n";
  for (const ShiftRow& r : rows) {
    out += to_string(r.kind) + "," + fmt9(r.magnitude) + "," + fmt9(r.base_acc) + "," + fmt9(r.novel_acc) + "," +
           fmt9(r.hm) + "\n";
  }
  return out;
}

namespace {

struct LoadedRun {
  fs::path dir;
  std::string label;
  std::string variant;
  std::string axis;
  std::string value;
  std::uint64_t seed = 0;
  EvalReport report;
  std::string curves;
};

LoadedRun load_run(const fs::path& dir) {
  LoadedRun run;
  run.dir = dir;
  run.report = report_from_json(read_json_file(dir / "report.json"));
  run.seed = run.report.seed;
  if (!fs::exists(dir / "curves.csv")) throw ValidationError("run " + dir.string() + " is missing curves.csv");
  run.curves = read_text_file(dir / "curves.csv");
  run.label = dir.string();
  if (fs::exists(dir / "run_meta.json")) {
    const json m = read_json_file(dir / "run_meta.json");
    run.label = m.value("label", run.label);
    run.variant = m.value("variant", "");
    run.axis = m.value("axis", "");
    run.value = m.value("value", "");
  }
  return run;
}

void collect(const fs::path& p, std::vector<fs::path>& found) {
  if (fs::exists(p / "report.json")) {
    found.push_back(p);
    return;
  }
  for (const auto& entry : fs::directory_iterator(p)) {
    if (entry.is_directory()) collect(entry.path(), found);
  }
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream row(line);
  for (std::string cell; std::getline(row, cell, ',');) cells.push_back(cell);
  return cells;
}

// Sweep values sort numerically when they parse as numbers.
bool value_less(const std::string& a, const std::string& b) {
  char* ea = nullptr;
  char* eb = nullptr;
  const double da = std::strtod(a.c_str(), &ea);
  const double db = std::strtod(b.c_str(), &eb);
  const bool na = !a.empty() && *ea == '\0';
  const bool nb = !b.empty() && *eb == '\0';
  if (na && nb && da != db) return da < db;
  if (na != nb) return na;
  return a < b;
}

}  // namespace

ReportOutputs build_report(const std::vector<fs::path>& inputs, std::size_t curve_downsample) {
  if (inputs.empty()) throw ValidationError("report: no run directories given");
  if (curve_downsample < 1) throw ValidationError("report: curve downsample must be >= 1");
  std::vector<fs::path> dirs;
  for (const fs::path& p : inputs) {
    if (!fs::is_directory(p)) throw ValidationError("report: " + p.string() + " is not a directory");
    const std::size_t before = dirs.size();
    collect(p, dirs);
    if (dirs.size() == before) throw ValidationError("report: no report.json found under " + p.string());
  }
  std::vector<LoadedRun> runs;
  for (const fs::path& d : dirs) runs.push_back(load_run(d));
  std::sort(runs.begin(), runs.end(), [](const LoadedRun& a, const LoadedRun& b) {
    return a.label != b.label ? a.label < b.label : a.dir < b.dir;
  });
  runs.erase(std::unique(runs.begin(), runs.end(), [](const LoadedRun& a, const LoadedRun& b) { return a.dir == b.dir; }),
             runs.end());

  ReportOutputs out;
  out.curves = "run,epoch,step,loss_total,loss_cls,loss_aux,sigma_t\n";
  for (const LoadedRun& run : runs) {
    std::istringstream in(run.curves);
    std::string line;
    std::getline(in, line);
    std::size_t row = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (row++ % curve_downsample != 0) continue;
      const auto c = split_csv_line(line);
      if (c.size() != 7) throw ValidationError("report: malformed curves.csv in " + run.dir.string());
      out.curves += run.label + "," + c[0] + "," + c[1] + "," + c[2] + "," + c[3] + "," + c[4] + "," + c[5] + "\n";
    }
  }

  const auto& variants = ablation_variants();
  auto variant_rank = [&](const std::string& name) {
    for (std::size_t k = 0; k < variants.size(); ++k) {
      if (variants[k].name == name) return k;
    }
    return variants.size();
  };
  std::map<std::string, std::vector<const LoadedRun*>> by_variant;
  for (const LoadedRun& run : runs) {
    if (!run.variant.empty()) by_variant[run.variant].push_back(&run);
  }
  std::vector<std::string> variant_names;
  for (const auto& [name, _] : by_variant) variant_names.push_back(name);
  std::stable_sort(variant_names.begin(), variant_names.end(),
                   [&](const std::string& a, const std::string& b) { return variant_rank(a) < variant_rank(b); });
  out.variants = "variant,n,base_mean,novel_mean,hm_mean,hm_std\n";
  for (const std::string& name : variant_names) {
    std::vector<double> base, novel, hm;
    for (const LoadedRun* r : by_variant[name]) {
      base.push_back(r->report.base_acc);
      novel.push_back(r->report.novel_acc);
      hm.push_back(r->report.hm);
    }
    out.variants += name + "," + std::to_string(hm.size()) + "," + fmt9(sample_mean(base)) + "," +
                    fmt9(sample_mean(novel)) + "," + fmt9(sample_mean(hm)) + "," + fmt9(sample_std(hm)) + "\n";
  }

  std::map<std::string, std::vector<std::pair<std::string, double>>> by_axis;
  for (const LoadedRun& run : runs) {
    if (!run.axis.empty()) by_axis[run.axis].emplace_back(run.value, run.report.hm);
  }
  out.sweep = "axis,value,n,hm_mean,hm_std\n";
  for (auto& [axis, points] : by_axis) {
    std::map<std::string, std::vector<double>> per_value;
    for (const auto& [v, hm] : points) per_value[v].push_back(hm);
    std::vector<std::string> keys;
    for (const auto& [v, _] : per_value) keys.push_back(v);
    std::sort(keys.begin(), keys.end(), value_less);
    for (const std::string& v : keys) {
      const auto& hm = per_value[v];
      out.sweep += axis + "," + v + "," + std::to_string(hm.size()) + "," + fmt9(sample_mean(hm)) + "," +
                   fmt9(sample_std(hm)) + "\n";
    }
  }

  std::map<std::uint64_t, const LoadedRun*> baseline, p2c;
  for (const LoadedRun& run : runs) {
    if (run.variant == "baseline") baseline.emplace(run.seed, &run);
    if (run.variant == "P2C") p2c.emplace(run.seed, &run);
  }
  out.overhead = "seed,baseline_epoch_ms,p2c_epoch_ms,overhead_pct\n";
  std::vector<double> base_ms_all, p2c_ms_all;
  for (const auto& [seed, b] : baseline) {
    const auto it = p2c.find(seed);
    if (it == p2c.end()) continue;
    const std::vector<double> bm = epoch_ms_from_curves(b->curves);
    const std::vector<double> pm = epoch_ms_from_curves(it->second->curves);
    const double pct = overhead_report(bm, pm);
    out.overhead_pct.push_back(pct);
    base_ms_all.push_back(sample_mean(bm));
    p2c_ms_all.push_back(sample_mean(pm));
    out.overhead += std::to_string(seed) + "," + fmt9(base_ms_all.back()) + "," + fmt9(p2c_ms_all.back()) + "," +
                    fmt9(pct) + "\n";
  }
  if (!out.overhead_pct.empty()) {
    out.overhead += "mean," + fmt9(sample_mean(base_ms_all)) + "," + fmt9(sample_mean(p2c_ms_all)) + "," +
                    fmt9(sample_mean(out.overhead_pct)) + "\n";
  }
  return out;
}

void write_report(const fs::path& out, const ReportOutputs& r) {
  write_text_file(out / "plot_curves.csv", r.curves);
  write_text_file(out / "plot_variants.csv", r.variants);
  write_text_file(out / "plot_sweep.csv", r.sweep);
  write_text_file(out / "plot_overhead.csv", r.overhead);
}

}  // namespace p2c
