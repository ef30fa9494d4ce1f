#include <cmath>

#include "doctest.h"

#include "p2c/train.hpp"

using namespace p2c;

namespace {

RunConfig small_config(std::size_t epochs = 4) {
  RunConfig c;
  c.train.epochs = epochs;
  c.data.C_base = 4;
  c.data.C_novel = 2;
  c.data.shots = 4;
  c.data.test_per_class = 8;
  return c;
}

std::string without_wall_time(const std::string& csv) {
  std::string out;
  std::size_t start = 0;
  while (start < csv.size()) {
    const std::size_t end = csv.find('\n', start);
    const std::string line = csv.substr(start, end - start);
    out += line.substr(0, line.rfind(',')) + "\n";
    start = end + 1;
  }
  return out;
}

Batch first_batch(const SynthTask& task, std::size_t n) {
  Batch b;
  for (std::size_t i = 0; i < n; ++i) {
    b.x.push_back(task.train.sample(i));
    b.y.push_back(task.train.y[i]);
  }
  return b;
}

}  // namespace

TEST_CASE("learnable parameter set") {
  const RunConfig cfg = small_config();
  const SynthTask task = generate_task(cfg.data);
  const TrainState s = init_state(cfg, task);
  const ParamMap p = s.learnable();
  CHECK(p.size() == 6);
  for (const char* name : {"P_cls", "P_att", "mapper.W1", "mapper.b1", "mapper.W2", "mapper.b2"}) {
    CHECK(p.contains(name));
  }
  CHECK(p.at("mapper.W1").shape() == Shape{s.mapper.d_in() * cfg.mapper.s_H, s.mapper.d_in()});

  RunConfig bad = cfg;
  bad.prompts.d_tok = 4;
  CHECK_THROWS_AS(init_state(bad, task), ValidationError);
}

TEST_CASE("variants differing only in flags start from the same state") {
  RunConfig a = small_config();
  RunConfig b = a;
  b.train.dpd = false;
  b.train.aux = false;
  const SynthTask task = generate_task(a.data);
  CHECK(init_state(a, task).learnable() == init_state(b, task).learnable());
}

TEST_CASE("both components off: loss_total is loss_cls exactly") {
  RunConfig cfg = small_config();
  cfg.train.dpd = false;
  cfg.train.aux = false;
  const SynthTask task = generate_task(cfg.data);
  TrainState s = init_state(cfg, task);
  const TrainLog log = run_training(cfg, task, s);
  for (const StepRecord& r : log.steps) {
    CHECK(r.loss_total == r.loss_cls);
    CHECK(r.loss_aux == 0.0);
  }
}

TEST_CASE("lambda = 0 with the aux loss on updates exactly like the aux loss off") {
  RunConfig on = small_config(3);
  on.mapper.lambda = 0.0;
  RunConfig off = on;
  off.train.aux = false;
  const SynthTask task = generate_task(on.data);
  TrainState a = init_state(on, task);
  TrainState b = init_state(off, task);
  run_training(on, task, a);
  run_training(off, task, b);
  CHECK(a.learnable() == b.learnable());
}

TEST_CASE("one step matches a finite-difference oracle on L_total") {
  RunConfig cfg;
  cfg.data.C_base = 2;
  cfg.data.C_novel = 1;
  cfg.data.shots = 1;
  cfg.data.test_per_class = 2;
  cfg.train.batch_size = 2;
  cfg.train.lr = 0.05;
  cfg.mapper.detach_clean = false;
  const SynthTask task = generate_task(cfg.data);
  TrainState s = init_state(cfg, task);
  const TrainState before = s;
  const Batch batch = first_batch(task, 2);
  const std::vector<std::size_t> classes{0, 1};

  Rng dpd(5), aux(6), dpd_copy(5), aux_copy(6);
  training_step(s, cfg, batch, classes, 3, cfg.train.lr, StepStreams{dpd, aux});

  const double sigma = sigma_at(cfg.schedule(), 3);
  const PerturbedPrompts pp = perturb_prompts(before.prompts, before.noise_model, sigma, dpd_copy);
  const StepNoise noise{pp.eps_cls, pp.eps_att, draw_eta(before.mapper.d_in(), cfg.mapper.sigma_aux, aux_copy)};
  const GraphBuilder total = [&](Tape& t, const ParamMap& p) {
    return build_loss(t, p, before, batch, classes, noise, loss_options(cfg)).total;
  };
  const ParamMap p0 = before.learnable();
  ParamMap work = p0;
  const double h = 1e-6;
  for (std::size_t i = 0; i < p0.at("P_cls").size(); ++i) {
    work.at("P_cls")[i] = p0.at("P_cls")[i] + h;
    Tape up_tape;
    const double up = scalar(total(up_tape, work));
    work.at("P_cls")[i] = p0.at("P_cls")[i] - h;
    Tape down_tape;
    const double down = scalar(total(down_tape, work));
    work.at("P_cls")[i] = p0.at("P_cls")[i];
    const double want = p0.at("P_cls")[i] - cfg.train.lr * (up - down) / (2.0 * h);
    CHECK(s.prompts.P_cls[i] == doctest::Approx(want).epsilon(1e-8).scale(1e-4));
  }
  CHECK(s.prompts.class_tokens == before.prompts.class_tokens);
}

TEST_CASE("T = 0 leaves parameters unchanged") {
  const RunConfig cfg = small_config(0);
  const SynthTask task = generate_task(cfg.data);
  TrainState s = init_state(cfg, task);
  const ParamMap p = s.learnable();
  const TrainLog log = run_training(cfg, task, s);
  CHECK(log.steps.empty());
  CHECK(s.learnable() == p);
}

TEST_CASE("no noise and lr = 0: parameters bit-identical") {
  RunConfig cfg = small_config(3);
  cfg.train.lr = 0.0;
  cfg.noise.sigma_max = 0.0;
  cfg.mapper.sigma_aux = 0.0;
  const SynthTask task = generate_task(cfg.data);
  TrainState s = init_state(cfg, task);
  const ParamMap p = s.learnable();
  run_training(cfg, task, s);
  CHECK(s.learnable() == p);
}

TEST_CASE("logging contract and determinism") {
  const RunConfig cfg = small_config(6);
  const SynthTask task = generate_task(cfg.data);
  TrainState a = init_state(cfg, task);
  TrainState b = init_state(cfg, task);
  const std::string frozen = frozen_checksum(a.encoders, a.prompts);
  const TrainLog la = run_training(cfg, task, a);
  const TrainLog lb = run_training(cfg, task, b);
  CHECK(frozen_checksum(a.encoders, a.prompts) == frozen);
  CHECK(la.steps.size() == 6 * 16 / 4);
  CHECK(la.epoch_wall_ms.size() == 6);
  for (std::size_t i = 0; i < la.steps.size(); ++i) {
    const StepRecord& r = la.steps[i];
    CHECK(r.step == i);
    CHECK(r.sigma_t == sigma_at(cfg.schedule(), static_cast<double>(r.epoch)));
    CHECK(std::abs(r.loss_total - (r.loss_cls + cfg.mapper.lambda * r.loss_aux)) <= 1e-9);
    CHECK(r.epoch_wall_ms == la.epoch_wall_ms[r.epoch]);
    CHECK(std::isfinite(r.loss_total));
  }
  CHECK(a.learnable() == b.learnable());
  CHECK(without_wall_time(curves_csv(la)) == without_wall_time(curves_csv(lb)));
  CHECK(curves_csv(la).rfind("epoch,step,loss_total,loss_cls,loss_aux,sigma_t,epoch_wall_ms\n", 0) == 0);
  CHECK(epoch_ms_from_curves(curves_csv(la)).size() == 6);
}

TEST_CASE("cosine learning-rate option changes the trajectory but not the first epoch") {
  RunConfig cfg = small_config(2);
  RunConfig cos = cfg;
  cos.train.lr_schedule = LrSchedule::cosine;
  const SynthTask task = generate_task(cfg.data);
  TrainState a = init_state(cfg, task);
  TrainState b = init_state(cos, task);
  const TrainLog la = run_training(cfg, task, a);
  const TrainLog lb = run_training(cos, task, b);
  CHECK(la.steps[3].loss_total == lb.steps[3].loss_total);
  CHECK(la.steps.back().loss_total != lb.steps.back().loss_total);
}

namespace {

GradCheckReport full_graph_check(bool aux) {
  RunConfig cfg = small_config(1);
  cfg.mapper.detach_clean = false;
  cfg.train.aux = aux;
  const SynthTask task = generate_task(cfg.data);
  const TrainState s = init_state(cfg, task);
  Rng rng(3);
  const PerturbedPrompts pp = perturb_prompts(s.prompts, s.noise_model, 0.015, rng);
  const StepNoise noise{pp.eps_cls, pp.eps_att, draw_eta(s.mapper.d_in(), 0.01, rng)};
  const Batch batch = first_batch(task, 4);
  const auto classes = task.classes(Split::base);
  return check_gradients(
      [&](Tape& t, const ParamMap& p) { return build_loss(t, p, s, batch, classes, noise, loss_options(cfg)).total; },
      s.learnable());
}

}  // namespace

TEST_CASE("full-graph gradient check without the aux loss") {
  CHECK(full_graph_check(false).worst < 1e-4);
}

TEST_CASE("full-graph gradient check with the aux loss") {
  // Mapper weights feeding hidden units that only wake up at p + eta carry
  // gradients near 1e-9; there the check is limited by float64 roundoff.
  const GradCheckReport rep = full_graph_check(true);
  for (const char* name : {"P_cls", "P_att", "mapper.b1", "mapper.b2"}) CHECK(rep.max_rel_error.at(name) < 1e-4);
  CHECK(std::abs(rep.worst_analytic - rep.worst_numeric) < 1e-10);
  CHECK(std::abs(rep.worst_analytic) < 1e-6);
}

TEST_CASE("non-finite loss aborts and names the tensor") {
  const RunConfig cfg = small_config();
  const SynthTask task = generate_task(cfg.data);
  TrainState s = init_state(cfg, task);
  s.prompts.P_cls[0] = std::nan("");
  Rng a(1), b(2);
  try {
    training_step(s, cfg, first_batch(task, 2), task.classes(Split::base), 0, 0.1, StepStreams{a, b});
    FAIL("expected NonFiniteError");
  } catch (const NonFiniteError& e) {
    CHECK(std::string(e.what()).find("P_cls") != std::string::npos);
  }
}

TEST_CASE("overhead_report") {
  const std::vector<double> base{100.0, 100.0};
  const std::vector<double> p2c{110.0, 110.0};
  CHECK(overhead_report(base, base) == 0.0);
  CHECK(overhead_report(base, p2c) == doctest::Approx(10.0).epsilon(1e-12));
  const std::vector<double> zero{0.0, 0.0};
  CHECK_THROWS_AS(overhead_report(zero, p2c), DegenerateTimingError);
  const std::vector<double> shorter{100.0};
  CHECK_THROWS_AS(overhead_report(shorter, p2c), ValidationError);
  CHECK_THROWS_AS(overhead_report(std::vector<double>{}, std::vector<double>{}), ValidationError);
}

TEST_CASE("params round trip through JSON") {
  const RunConfig cfg = small_config(1);
  const SynthTask task = generate_task(cfg.data);
  TrainState s = init_state(cfg, task);
  run_training(cfg, task, s);
  const json j = json::parse(params_to_json(s).dump());
  TrainState fresh = init_state(cfg, task);
  params_from_json(j, fresh);
  CHECK(fresh.learnable() == s.learnable());

  RunConfig other = cfg;
  other.train.seed = 99;
  TrainState mismatched = init_state(other, task);
  CHECK_THROWS_AS(params_from_json(j, mismatched), ValidationError);
}

TEST_CASE("training with the reference config lowers the classification loss") {
  for (const bool p2c_on : {false, true}) {
    RunConfig cfg;
    cfg.train.dpd = p2c_on;
    cfg.train.aux = p2c_on;
    const SynthTask task = generate_task(cfg.data);
    TrainState s = init_state(cfg, task);
    const TrainLog log = run_training(cfg, task, s);
    double first = 0.0, last = 0.0;
    std::size_t n_first = 0, n_last = 0;
    for (const StepRecord& r : log.steps) {
      if (r.epoch == 0) first += r.loss_cls, ++n_first;
      if (r.epoch + 1 == cfg.train.epochs) last += r.loss_cls, ++n_last;
    }
    CHECK(last / static_cast<double>(n_last) < first / static_cast<double>(n_first));
  }
}
