// p2c: command-line front end for the prompt-denoising lab.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "p2c/config.hpp"
#include "p2c/eval.hpp"
#include "p2c/experiments.hpp"
#include "p2c/synthdata.hpp"
#include "p2c/train.hpp"

namespace {

using namespace p2c;

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

struct Globals {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
};

RunConfig load(const Globals& g, bool for_gen_data = false) {
  json j = json::object();
  if (!g.config.empty()) j = read_json_file(g.config);
  if (for_gen_data && g.seed) {
    if (!j.is_object()) throw ValidationError("config must be a JSON object");
    j["data"]["seed"] = *g.seed;
  }
  RunConfig cfg = parse_config(j, for_gen_data);
  if (!for_gen_data && g.seed) cfg.train.seed = *g.seed;
  return cfg;
}

SynthTask load_task(const std::string& path, const RunConfig& cfg) {
  if (path.empty()) return generate_task(cfg.data);
  return task_from_json(read_json_file(path));
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

void print_report(const EvalReport& r) {
  std::cout << "base " << pct(r.base_acc) << "  novel " << pct(r.novel_acc) << "  hm " << pct(r.hm)
            << "  macro-F1(base) " << pct(r.macro_f1_base) << "\n";
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur += c;
    }
  }
  if (!cur.empty() || !out.empty()) out.push_back(cur);
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"Annealed prompt-noise and denoising-mapper lab"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "run config (JSON)");
  app.add_option("--out", g.out, "output file (gen-data) or directory");
  app.add_option("--seed", g.seed, "training seed; data seed for gen-data");
  app.add_option("--jobs", g.jobs, "parallel runs for ablate/sweep")->check(CLI::PositiveNumber);

  std::string task_path, params_path, axis, values, kind, magnitudes;
  std::vector<std::string> run_dirs;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic task file");
  auto* train = app.add_subcommand("train", "train one model and evaluate it");
  train->add_option("--task", task_path, "task file (generated from the config when omitted)");
  auto* eval = app.add_subcommand("eval", "evaluate saved params on a task");
  eval->add_option("--task", task_path, "task file");
  eval->add_option("--params", params_path, "params.json from a train run")->required();
  auto* ablate = app.add_subcommand("ablate", "run the five ablation variants over seeds");
  ablate->add_option("--task", task_path, "task file");
  auto* sweep = app.add_subcommand("sweep", "one-axis hyperparameter sweep over seeds");
  sweep->add_option("--task", task_path, "task file");
  sweep->add_option("--axis", axis, "schedule|sigma_max|sigma_aux|lambda|s_H|TL")->required();
  sweep->add_option("--values", values, "comma-separated values")->required();
  auto* shift = app.add_subcommand("shift-eval", "evaluate saved params on shifted test sets");
  shift->add_option("--task", task_path, "task file");
  shift->add_option("--params", params_path, "params.json from a train run")->required();
  shift->add_option("--kind", kind, "mean_shift|linear_warp (default from config)");
  shift->add_option("--magnitudes", magnitudes, "comma-separated magnitudes (default from config)");
  auto* report = app.add_subcommand("report", "merge run directories into plot data");
  report->add_option("runs", run_dirs, "run directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }
  const std::string out = g.out.empty() ? (gen->parsed() ? "task.json" : ".") : g.out;

  if (gen->parsed()) {
    const RunConfig cfg = load(g, true);
    const SynthTask task = generate_task(cfg.data);
    write_text_file(out, to_json(task).dump() + "\n");
    std::cout << "wrote " << out << "\n";
    return 0;
  }

  const RunConfig cfg = load(g);
  if (train->parsed()) {
    const SynthTask task = load_task(task_path, cfg);
    const RunResult r = run_one(cfg, task);
    write_run(out, cfg, r, RunMeta{"train/seed_" + std::to_string(cfg.train.seed), "", "", ""});
    print_report(r.report);
    return 0;
  }
  if (eval->parsed()) {
    const SynthTask task = load_task(task_path, cfg);
    const auto start = std::chrono::steady_clock::now();
    RunConfig trained_cfg;
    const TrainState state = load_trained(params_path, task, &trained_cfg);
    EvalReport r = evaluate(state, task, trained_cfg);
    r.total_wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    write_text_file(fs::path(out) / "report.json", to_json(r).dump(2) + "\n");
    print_report(r);
    return 0;
  }
  if (ablate->parsed()) {
    const SynthTask task = load_task(task_path, cfg);
    const AblationResult r = run_ablation(cfg, task, out, g.jobs);
    const auto& variants = ablation_variants();
    for (std::size_t k = 0; k < variants.size(); ++k) {
      std::cout << variants[k].name << ": mean hm " << pct(r.mean_hm[k]) << " (delta " << pct(r.delta_hm[k])
                << ")\n";
    }
    return 0;
  }
  if (sweep->parsed()) {
    const SynthTask task = load_task(task_path, cfg);
    const SweepResult r = run_sweep(cfg, task, sweep_axis_from_string(axis), split_list(values), out, g.jobs);
    for (const SweepSummary& s : r.summary) {
      std::cout << axis << "=" << s.value << ": hm " << pct(s.hm_mean) << " +/- " << pct(s.hm_std) << "\n";
    }
    return 0;
  }
  if (shift->parsed()) {
    const SynthTask task = load_task(task_path, cfg);
    RunConfig trained_cfg;
    const TrainState state = load_trained(params_path, task, &trained_cfg);
    const ShiftKind k = kind.empty() ? cfg.eval.shift_kind : shift_kind_from_string(kind);
    std::vector<double> mags = cfg.eval.shift_magnitudes;
    if (!magnitudes.empty()) {
      mags.clear();
      for (const std::string& m : split_list(magnitudes)) {
        try {
          std::size_t used = 0;
          mags.push_back(std::stod(m, &used));
          if (used != m.size()) throw std::invalid_argument(m);
        } catch (const std::exception&) {
          throw ValidationError("--magnitudes: '" + m + "' is not a number");
        }
      }
    }
    const auto rows = shift_eval(state, task, k, mags, cfg.eval.shift_seed);
    write_text_file(fs::path(out) / "shift.csv", shift_csv(rows));
    for (const ShiftRow& r : rows) std::cout << "magnitude " << r.magnitude << ": hm " << pct(r.hm) << "\n";
    return 0;
  }
  if (report->parsed()) {
    std::vector<fs::path> dirs(run_dirs.begin(), run_dirs.end());
    const ReportOutputs r = build_report(dirs, cfg.eval.curve_downsample);
    write_report(out, r);
    if (!r.overhead_pct.empty()) {
      std::cout << "P2C vs baseline per-epoch overhead: " << pct(sample_mean(r.overhead_pct)) << "%\n";
    }
    return 0;
  }
  return kExitValidation;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const p2c::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const p2c::GenerationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
