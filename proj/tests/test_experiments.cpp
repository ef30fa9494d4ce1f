#include <atomic>
#include <cmath>
#include <sstream>

#include "doctest.h"

#include "p2c/experiments.hpp"

using namespace p2c;

namespace {

RunConfig tiny_config() {
  RunConfig c;
  c.train.epochs = 2;
  c.data.C_base = 3;
  c.data.C_novel = 2;
  c.data.shots = 4;
  c.data.test_per_class = 6;
  c.eval.n_seeds = 2;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("p2c_test_experiments_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("ablation variants and flags") {
  const auto& v = ablation_variants();
  REQUIRE(v.size() == 5);
  CHECK(v[0].name == "baseline");
  CHECK(!v[0].dpd);
  CHECK(!v[0].aux);
  CHECK(v[4].name == "P2C");
  CHECK(v[4].dpd);
  CHECK(v[4].aux);
  CHECK(v[4].kind == NoiseKind::gmm);
  CHECK(v[1].kind == NoiseKind::gm);
  const RunConfig c = apply_variant(RunConfig{}, v[0]);
  CHECK(!c.train.dpd);
  CHECK(!c.train.aux);
}

TEST_CASE("ablation rows, paired deltas and artifacts") {
  const RunConfig cfg = tiny_config();
  const SynthTask task = generate_task(cfg.data);
  const fs::path out = scratch("ablate");
  const AblationResult r = run_ablation(cfg, task, out, 2);
  REQUIRE(r.rows.size() == 10);
  CHECK(r.rows[0].seed == cfg.train.seed);
  CHECK(r.rows[1].seed == cfg.train.seed + 1);
  for (std::size_t k = 0; k < 5; ++k) {
    CHECK(r.mean_hm[k] == doctest::Approx((r.rows[2 * k].hm + r.rows[2 * k + 1].hm) / 2.0));
    CHECK(r.delta_hm[k] == doctest::Approx(r.mean_hm[k] - r.mean_hm[0]));
  }
  CHECK(r.delta_hm[0] == 0.0);
  CHECK(fs::exists(out / "p2c" / "seed_2" / "report.json"));
  CHECK(fs::exists(out / "baseline" / "seed_1" / "curves.csv"));
  const std::string csv = read_text_file(out / "ablation.csv");
  CHECK(count_lines(csv) == 1 + 10 + 5);
  CHECK(csv.find("P2C,mean,") != std::string::npos);

  const AblationResult serial = run_ablation(cfg, task, {}, 1);
  for (std::size_t i = 0; i < r.rows.size(); ++i) CHECK(serial.rows[i].hm == r.rows[i].hm);
}

TEST_CASE("sweep row counts and summaries") {
  RunConfig cfg = tiny_config();
  const SynthTask task = generate_task(cfg.data);
  const SweepResult s =
      run_sweep(cfg, task, SweepAxis::schedule, {"constant", "linear", "cosine", "sigmoid"}, scratch("sweep"), 1);
  CHECK(s.rows.size() == 4 * cfg.eval.n_seeds);
  CHECK(count_lines(sweep_csv(s)) == 1 + 4 * cfg.eval.n_seeds);
  CHECK(count_lines(sweep_summary_csv(s)) == 5);
  for (const SweepSummary& row : s.summary) CHECK(row.n == cfg.eval.n_seeds);

  cfg.eval.n_seeds = 1;
  const SweepResult one = run_sweep(cfg, task, SweepAxis::lambda, {"0.5"}, {}, 1);
  REQUIRE(one.rows.size() == 1);
  CHECK(one.summary[0].hm_std == 0.0);
  CHECK(one.summary[0].hm_mean == one.rows[0].hm);

  CHECK_THROWS_AS(run_sweep(cfg, task, SweepAxis::sigma_max, {}, {}, 1), ValidationError);
  CHECK_THROWS_AS(apply_axis(cfg, SweepAxis::sigma_max, "abc"), ValidationError);
  CHECK_THROWS_AS(apply_axis(cfg, SweepAxis::schedule, "stepwise"), ValidationError);
  CHECK_THROWS_AS(sweep_axis_from_string("depth"), ValidationError);
  CHECK(apply_axis(cfg, SweepAxis::TL, "3").prompts.TL_att == 3);
  CHECK(apply_axis(cfg, SweepAxis::sigma_aux, "0.2").mapper.sigma_aux == 0.2);
}

TEST_CASE("sample statistics") {
  CHECK(sample_mean({1.0, 2.0, 3.0}) == 2.0);
  CHECK(sample_std({1.0, 2.0, 3.0}) == doctest::Approx(1.0));
  CHECK(sample_std({4.0}) == 0.0);
}

TEST_CASE("shift evaluation") {
  const RunConfig cfg = tiny_config();
  const SynthTask task = generate_task(cfg.data);
  const RunResult run = run_one(cfg, task);
  const auto rows = shift_eval(run.state, task, ShiftKind::mean_shift, {2.0, 0.0, 1.0}, 7);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].magnitude == 0.0);
  CHECK(rows[1].magnitude == 1.0);
  CHECK(rows[2].magnitude == 2.0);
  CHECK(rows[0].base_acc == run.report.base_acc);
  CHECK(rows[0].novel_acc == run.report.novel_acc);
  CHECK(rows[0].hm == run.report.hm);
  CHECK(count_lines(shift_csv(rows)) == 4);
  CHECK_THROWS_AS(shift_eval(run.state, task, ShiftKind::linear_warp, {-1.0}, 7), ValidationError);
}

TEST_CASE("saved runs reload to the same predictions") {
  const RunConfig cfg = tiny_config();
  const SynthTask task = generate_task(cfg.data);
  const RunResult run = run_one(cfg, task);
  const fs::path dir = scratch("reload");
  write_run(dir, cfg, run);
  RunConfig loaded_cfg;
  const TrainState s = load_trained(dir / "params.json", task, &loaded_cfg);
  CHECK(loaded_cfg.hash() == cfg.hash());
  CHECK(s.learnable() == run.state.learnable());
  CHECK(evaluate(s, task, loaded_cfg).hm == run.report.hm);
}

TEST_CASE("report merging") {
  RunConfig cfg = tiny_config();
  cfg.train.epochs = 3;
  const SynthTask task = generate_task(cfg.data);
  const fs::path root = scratch("report");
  const AblationResult ab = run_ablation(cfg, task, root / "ablate", 1);
  run_sweep(cfg, task, SweepAxis::sigma_max, {"0.1", "0.02", "0.3"}, root / "sweep", 1);

  const std::size_t steps_per_run = cfg.train.epochs * ((task.train.size() + cfg.train.batch_size - 1) / cfg.train.batch_size);
  const std::size_t ds = 4;
  const ReportOutputs r = build_report({root / "ablate"}, ds);
  const std::size_t per_run = (steps_per_run + ds - 1) / ds;
  CHECK(count_lines(r.curves) == 1 + 10 * per_run);
  CHECK(count_lines(r.variants) == 6);
  CHECK(r.variants.find("\nbaseline,2,") != std::string::npos);
  CHECK(r.overhead_pct.size() == 2);
  CHECK(count_lines(r.overhead) == 1 + 2 + 1);
  for (double pct : r.overhead_pct) CHECK(std::isfinite(pct));

  const ReportOutputs both = build_report({root / "ablate", root / "sweep"}, ds);
  const ReportOutputs swapped = build_report({root / "sweep", root / "ablate"}, ds);
  CHECK(both.curves == swapped.curves);
  CHECK(both.variants == swapped.variants);
  CHECK(both.sweep == swapped.sweep);
  CHECK(both.overhead == swapped.overhead);
  const auto first_value = both.sweep.find("sigma_max,0.02,");
  CHECK(first_value != std::string::npos);
  CHECK(first_value < both.sweep.find("sigma_max,0.1,"));
  CHECK(both.sweep.find("sigma_max,0.1,") < both.sweep.find("sigma_max,0.3,"));

  fs::remove(root / "ablate" / "p2c" / "seed_1" / "curves.csv");
  try {
    build_report({root / "ablate"}, ds);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("curves.csv") != std::string::npos);
  }
  const fs::path empty = root / "empty";
  fs::create_directories(empty);
  CHECK_THROWS_AS(build_report({empty}, ds), ValidationError);
  CHECK_THROWS_AS(build_report({root / "sweep"}, 0), ValidationError);
}

TEST_CASE("parallel_for covers every index once and rethrows") {
  for (const std::size_t jobs : {1, 3, 8}) {
    std::vector<std::atomic<int>> hits(37);
    parallel_for(hits.size(), jobs, [&](std::size_t i) { ++hits[i]; });
    for (const auto& h : hits) CHECK(h.load() == 1);
  }
  CHECK_THROWS_AS(parallel_for(10, 3,
                               [](std::size_t i) {
                                 if (i == 6) throw ValidationError("boom");
                               }),
                  ValidationError);
  parallel_for(0, 4, [](std::size_t) { FAIL("no calls expected"); });
}
