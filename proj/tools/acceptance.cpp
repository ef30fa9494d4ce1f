// Acceptance run: one PASS/FAIL line per criterion. Exits 0 only when every
// criterion passes or is listed in --known-red.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "oracle.hpp"

#include "p2c/experiments.hpp"

using namespace p2c;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::vector<int> failed;

void report(int id, const std::string& name, const std::function<Outcome()>& check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) failed.push_back(id);
  std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << id << " " << name << ": " << o.detail << std::endl;
}

RunConfig reference_config() { return RunConfig{}; }

Batch batch_of(const SynthTask& task, std::size_t first, std::size_t n) {
  Batch b;
  for (std::size_t i = first; i < first + n; ++i) {
    b.x.push_back(task.train.sample(i));
    b.y.push_back(task.train.y[i]);
  }
  return b;
}

Outcome gradient_check(const SynthTask& task) {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string where;
  double at_a = 0.0, at_n = 0.0;
  for (std::uint64_t seed : {101, 202, 303}) {
    RunConfig cfg = reference_config();
    cfg.train.seed = seed;
    cfg.mapper.detach_clean = false;
    TrainState s = init_state(cfg, task);
    ParamMap p = s.learnable();
    Rng rng(seed);
    for (auto& [name, t] : p) {
      for (std::size_t i = 0; i < t.size(); ++i) t[i] += 0.1 * rng.normal();
    }
    s.set_learnable(p);
    const PerturbedPrompts pp = perturb_prompts(s.prompts, s.noise_model, cfg.noise.sigma_max, rng);
    const StepNoise noise{pp.eps_cls, pp.eps_att, draw_eta(s.mapper.d_in(), cfg.mapper.sigma_aux, rng)};
    const Batch batch = batch_of(task, rng.below(task.train.size() - cfg.train.batch_size), cfg.train.batch_size);
    const auto classes = task.classes(Split::base);
    const GradCheckReport r = check_gradients(
        [&](Tape& t, const ParamMap& params) {
          return build_loss(t, params, s, batch, classes, noise, loss_options(cfg)).total;
        },
        s.learnable());
    if (r.worst >= worst) {
      worst = r.worst;
      where = r.worst_param + "[" + std::to_string(r.worst_index) + "], state " + std::to_string(seed);
      at_a = r.worst_analytic;
      at_n = r.worst_numeric;
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 30.0, "worst rel err " + fmt("%.2e", worst) + " < 1e-4 at " + where + " (analytic " +
                                           fmt("%.3e", at_a) + ", numeric " + fmt("%.3e", at_n) + "), " +
                                           fmt("%.1f", secs) + " s < 30 s"};
}

Outcome identities(const SynthTask& task) {
  const RunConfig cfg = reference_config();
  TrainState s = init_state(cfg, task);
  const TrainLog log = run_training(cfg, task, s);
  const ScheduleSpec sched = cfg.schedule();
  double worst_sum = 0.0, worst_sigma = 0.0;
  for (const StepRecord& r : log.steps) {
    worst_sum = std::max(worst_sum, std::abs(r.loss_total - (r.loss_cls + cfg.mapper.lambda * r.loss_aux)));
    const double want = cfg.noise.sigma_max * schedule_value(sched, static_cast<double>(r.epoch));
    worst_sigma = std::max(worst_sigma, std::abs(r.sigma_t - want));
  }

  RunConfig quiet = cfg;
  quiet.mapper.sigma_aux = 0.0;
  quiet.train.epochs = 5;
  TrainState q = init_state(quiet, task);
  const TrainLog qlog = run_training(quiet, task, q);
  const bool aux_zero =
      std::all_of(qlog.steps.begin(), qlog.steps.end(), [](const StepRecord& r) { return r.loss_aux == 0.0; });

  const bool pass = worst_sum <= 1e-9 && worst_sigma <= 1e-15 && aux_zero && !log.steps.empty();
  return {pass, "max |total-(cls+lambda*aux)| " + fmt("%.1e", worst_sum) + " <= 1e-9, max |sigma_t-sigma_max*S| " +
                    fmt("%.1e", worst_sigma) + ", L_aux==0 with sigma_aux=0: " + (aux_zero ? "yes" : "no")};
}

Outcome schedules() {
  std::vector<std::string> bad;
  for (std::size_t T : {1, 7, 10, 50, 200}) {
    for (ScheduleKind k : {ScheduleKind::constant, ScheduleKind::linear, ScheduleKind::cosine, ScheduleKind::sigmoid}) {
      const ScheduleSpec s{k, 0.015, T, 12.0};
      const std::string tag = to_string(k) + "/T=" + std::to_string(T);
      if (schedule_value(s, 0.0) != 1.0) bad.push_back(tag + " S(0)");
      if (k == ScheduleKind::constant) continue;
      if (schedule_value(s, static_cast<double>(T)) != 0.0) bad.push_back(tag + " S(T)");
      for (std::size_t t = 1; t <= T; ++t) {
        if (schedule_value(s, static_cast<double>(t)) > schedule_value(s, static_cast<double>(t - 1))) {
          bad.push_back(tag + " increases at t=" + std::to_string(t));
          break;
        }
      }
      if (k == ScheduleKind::sigmoid && schedule_value(s, static_cast<double>(T) / 2.0) != 0.5) {
        bad.push_back(tag + " S(T/2)");
      }
    }
  }
  std::string detail = "4 kinds x T in {1,7,10,50,200}";
  for (const std::string& b : bad) detail += "; " + b;
  return {bad.empty(), detail};
}

Outcome noise_statistics() {
  const std::size_t N = 100000;
  const double sigma = 0.01;
  const NoiseModel gm = make_gaussian(1);
  Rng rng(2024);
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const double e = sample_noise(gm, sigma, {1}, rng).epsilon[0];
    sum += e;
    sq += e * e;
  }
  const double n = static_cast<double>(N);
  const double mean = sum / n;
  const double sd = std::sqrt((sq - n * mean * mean) / (n - 1.0));
  const bool mean_ok = std::abs(mean) < 3.0 * sigma / std::sqrt(n);
  const bool sd_ok = std::abs(sd - sigma) < 3.0 * sigma / std::sqrt(2.0 * (n - 1.0));

  Rng mrng(77);
  const std::size_t d = 4;
  const NoiseModel gmm = make_mixture(3, d, 0.5, mrng);
  std::vector<double> msum(d), msq(d);
  for (std::size_t i = 0; i < N; ++i) {
    const Tensor e = sample_noise(gmm, sigma, {d}, rng).epsilon;
    for (std::size_t j = 0; j < d; ++j) {
      msum[j] += e[j];
      msq[j] += e[j] * e[j];
    }
  }
  bool gmm_ok = true;
  double worst_z = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double m = msum[j] / n;
    const double s = std::sqrt((msq[j] - n * m * m) / (n - 1.0));
    const double z = std::abs(m) / (s / std::sqrt(n));
    worst_z = std::max(worst_z, z);
    gmm_ok = gmm_ok && z < 3.0;
  }

  Rng a(9), b(9);
  bool same = true;
  for (int i = 0; i < 1000; ++i) {
    same = same && sample_noise(gmm, sigma, {d}, a).epsilon == sample_noise(gmm, sigma, {d}, b).epsilon;
  }
  return {mean_ok && sd_ok && gmm_ok && same,
          "GM mean " + fmt("%.2e", mean) + ", std " + fmt("%.5f", sd) + " (3-SE bands), GMM max |z| " +
              fmt("%.2f", worst_z) + " < 3, seeded draws identical: " + (same ? "yes" : "no")};
}

double confusion_macro_f1(const std::vector<std::size_t>& truth, const std::vector<std::size_t>& pred,
                          const std::vector<std::size_t>& classes) {
  const std::size_t C = classes.size();
  std::vector<std::vector<std::size_t>> M(C, std::vector<std::size_t>(C));
  auto idx = [&](std::size_t c) { return static_cast<std::size_t>(std::find(classes.begin(), classes.end(), c) - classes.begin()); };
  for (std::size_t i = 0; i < truth.size(); ++i) ++M[idx(truth[i])][idx(pred[i])];
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < C; ++c) {
    std::size_t row = 0, col = 0;
    for (std::size_t k = 0; k < C; ++k) {
      row += M[c][k];
      col += M[k][c];
    }
    if (row == 0) continue;
    const double p = col == 0 ? 0.0 : static_cast<double>(M[c][c]) / static_cast<double>(col);
    const double r = static_cast<double>(M[c][c]) / static_cast<double>(row);
    sum += p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
    ++n;
  }
  return 100.0 * sum / static_cast<double>(n);
}

Outcome metric_oracles(const SynthTask& task) {
  const std::string hm = fmt("%.1f", harmonic_mean(96.6, 84.3));

  Rng rng(5);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t C = 2 + rng.below(9);
    std::vector<std::size_t> classes(C);
    for (std::size_t i = 0; i < C; ++i) classes[i] = 2 * i + rng.below(2);
    const std::size_t N = 1 + rng.below(200);
    std::vector<std::size_t> truth(N), pred(N);
    for (std::size_t i = 0; i < N; ++i) {
      truth[i] = classes[rng.below(C)];
      pred[i] = classes[rng.below(C)];
    }
    if (macro_f1(count_predictions(truth, pred, classes)) != confusion_macro_f1(truth, pred, classes)) ++mismatches;
  }

  const RunConfig cfg = reference_config();
  TrainState s = init_state(cfg, task);
  RunConfig short_cfg = cfg;
  short_cfg.train.epochs = 10;
  run_training(short_cfg, task, s);
  bool acc_exact = true;
  for (Split split : {Split::base, Split::novel}) {
    const SampleSet& set = task.test(split);
    const auto classes = task.classes(split);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < set.size(); ++i) {
      const auto cos = oracle::cosines(s.prompt_cfg, s.prompts, s.encoders, s.mapper, set.sample(i).values(), classes);
      const std::size_t best = classes[static_cast<std::size_t>(std::max_element(cos.begin(), cos.end()) - cos.begin())];
      correct += best == set.y[i];
    }
    const double want = 100.0 * static_cast<double>(correct) / static_cast<double>(set.size());
    acc_exact = acc_exact && evaluate_split(s, task, split).accuracy == want;
  }
  return {hm == "90.0" && mismatches == 0 && acc_exact,
          "HM(96.6, 84.3) = " + hm + ", macro-F1 mismatches " + std::to_string(mismatches) +
              "/100, evaluate_split == cosine oracle: " + (acc_exact ? "yes" : "no")};
}

Outcome ablation(const SynthTask& task, const fs::path& out, double* seconds) {
  const auto t0 = Clock::now();
  const RunConfig cfg = reference_config();
  const AblationResult r = run_ablation(cfg, task, out, 1);
  *seconds = seconds_since(t0);
  const auto& v = ablation_variants();
  std::string detail;
  for (std::size_t k = 0; k < v.size(); ++k) detail += v[k].name + " " + fmt("%.2f", r.mean_hm[k]) + ", ";
  const double base = r.mean_hm[0];
  const bool dpd = r.mean_hm[1] > base && r.mean_hm[2] > base;
  const bool p2c = r.mean_hm[4] > base;
  const bool in_band = base >= 55.0 && base <= 85.0;
  detail += "baseline in [55,85]: " + std::string(in_band ? "yes" : "no") + ", " + fmt("%.1f", *seconds) + " s < 600 s";
  return {dpd && p2c && *seconds < 600.0, "mean HM over " + std::to_string(cfg.eval.n_seeds) + " seeds: " + detail};
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string drop_last_column(const std::string& csv) {
  std::istringstream in(csv);
  std::string out, line;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

std::string drop_wall_time(const std::string& report_text) {
  json j = json::parse(report_text);
  j.erase("total_wall_ms");
  return j.dump();
}

Outcome determinism(const std::string& cli, const fs::path& work) {
  if (cli.empty() || !fs::exists(cli)) return {false, "p2c binary not found at '" + cli + "'"};
  fs::create_directories(work);
  for (const char* run : {"det_a", "det_b"}) {
    const std::string cmd = "\"" + cli + "\" --out \"" + (work / run).string() + "\" train > \"" +
                            (work / (std::string(run) + ".log")).string() + "\" 2>&1";
    if (std::system(cmd.c_str()) != 0) return {false, std::string("train ") + run + " failed"};
  }
  const std::string ca = read_file(work / "det_a" / "curves.csv");
  const std::string cb = read_file(work / "det_b" / "curves.csv");
  const bool curves = !ca.empty() && drop_last_column(ca) == drop_last_column(cb);
  const bool reports = drop_wall_time(read_file(work / "det_a" / "report.json")) ==
                       drop_wall_time(read_file(work / "det_b" / "report.json"));
  const bool params = read_file(work / "det_a" / "params.json") == read_file(work / "det_b" / "params.json");
  return {curves && reports && params, std::string("curves.csv identical (minus epoch_wall_ms): ") +
                                           (curves ? "yes" : "no") + ", report.json identical (minus total_wall_ms): " +
                                           (reports ? "yes" : "no") + ", params.json identical: " +
                                           (params ? "yes" : "no")};
}

Outcome overhead(const fs::path& ablation_dir) {
  const ReportOutputs r = build_report({ablation_dir}, 10);
  write_report(ablation_dir / "report", r);
  if (r.overhead_pct.empty()) return {false, "no baseline/P2C seed pairs found"};
  const double pct = sample_mean(r.overhead_pct);
  return {std::isfinite(pct), "P2C vs baseline per-epoch overhead " + fmt("%+.1f", pct) + "% over " +
                                  std::to_string(r.overhead_pct.size()) + " seed pairs (reported, no tolerance)"};
}

Outcome convergence(const SynthTask& task) {
  std::string detail;
  bool pass = true;
  for (const bool on : {false, true}) {
    RunConfig cfg = reference_config();
    cfg.train.dpd = on;
    cfg.train.aux = on;
    TrainState s = init_state(cfg, task);
    const TrainLog log = run_training(cfg, task, s);
    double first = 0.0;
    std::size_t n_first = 0;
    std::vector<double> last_epoch;
    for (const StepRecord& r : log.steps) {
      if (r.epoch == 0) first += r.loss_total, ++n_first;
      if (r.epoch + 1 == cfg.train.epochs) last_epoch.push_back(r.loss_total);
    }
    const std::size_t w = std::min<std::size_t>(20, last_epoch.size());
    const std::vector<double> tail(last_epoch.end() - static_cast<std::ptrdiff_t>(w), last_epoch.end());
    const double tail_mean = sample_mean(tail);
    const double epoch0 = first / static_cast<double>(n_first);
    pass = pass && tail_mean < epoch0;
    detail += std::string(on ? "P2C " : "baseline ") + fmt("%.4f", tail_mean) + " < " + fmt("%.4f", epoch0) +
              (on ? "" : ", ");
  }
  return {pass, "final-epoch trailing-20 mean vs epoch-0 mean: " + detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"p2c acceptance criteria"};
#ifdef P2C_CLI_PATH
  std::string cli = P2C_CLI_PATH;
#else
  std::string cli;
#endif
  fs::path work = fs::temp_directory_path() / "p2c_acceptance";
  std::vector<int> known_red;
  app.add_option("--cli", cli, "p2c binary used for the determinism check");
  app.add_option("--work", work, "scratch directory");
  app.add_option("--known-red", known_red, "criteria reported as failing but not counted in the exit code");
  CLI11_PARSE(app, argc, argv);
  fs::remove_all(work);
  fs::create_directories(work);

  const SynthTask task = generate_task(reference_config().data);
  double ablation_secs = 0.0;

  report(1, "gradient correctness", [&] { return gradient_check(task); });
  report(2, "loss and schedule identities", [&] { return identities(task); });
  report(3, "schedule suite", [] { return schedules(); });
  report(4, "noise statistics", [] { return noise_statistics(); });
  report(5, "metric oracles", [&] { return metric_oracles(task); });
  report(6, "ablation direction", [&] { return ablation(task, work / "ablate", &ablation_secs); });
  report(7, "train determinism", [&] { return determinism(cli, work); });
  report(8, "overhead measurement", [&] { return overhead(work / "ablate"); });
  report(9, "convergence", [&] { return convergence(task); });

  std::size_t unexpected = 0;
  std::string red;
  for (int id : failed) {
    red += (red.empty() ? "" : ", ") + std::to_string(id);
    if (std::find(known_red.begin(), known_red.end(), id) == known_red.end()) ++unexpected;
  }
  std::cout << 9 - failed.size() << "/9 criteria passed";
  if (!failed.empty()) std::cout << "; failing: " << red;
  if (!failed.empty() && unexpected == 0) std::cout << " (all listed as known red)";
  std::cout << std::endl;
  return unexpected == 0 ? 0 : 1;
}
