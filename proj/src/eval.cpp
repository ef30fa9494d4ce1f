#include "p2c/eval.hpp"

#include <algorithm>
#include <map>

namespace p2c {

static double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

double ClassCounts::precision() const { return ratio(tp, tp + fp); }
double ClassCounts::recall() const { return ratio(tp, tp + fn); }
double ClassCounts::f1() const {
  const double p = precision();
  const double r = recall();
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

std::vector<std::size_t> predict(const TrainState& state, const Tensor& x, std::span<const std::size_t> class_set) {
  if (class_set.empty()) throw DimensionError("predict: empty class set");
  Tape tape;
  const EncoderVars enc = bind(tape, state.encoders);
  PromptVars pv{tape.constant(state.prompts.P_cls, "P_cls"), Var{}, &state.prompt_cfg, &state.prompts};
  if (state.prompts.has_attributes()) pv.P_att = tape.constant(state.prompts.P_att, "P_att");
  const Var P_v = map_forward(bind_constant(tape, state.mapper), flatten_learnable(pv));
  const Var text = text_embeddings(enc, pv, class_set);

  const std::size_t n = x.dim(0);
  const std::size_t d = x.dim(1);
  std::vector<std::size_t> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = x.values().begin() + static_cast<std::ptrdiff_t>(i * d);
    Tensor xi({d}, std::vector<double>(row, row + static_cast<std::ptrdiff_t>(d)));
    const Tensor& lg = class_logits(encode_image(enc, tape.constant(std::move(xi), "x"), P_v), text,
                                    state.prompt_cfg.logit_scale)
                           .value();
    const auto best = std::max_element(lg.values().begin(), lg.values().end());
    out.push_back(class_set[static_cast<std::size_t>(best - lg.values().begin())]);
  }
  return out;
}

std::vector<ClassCounts> count_predictions(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                                           std::span<const std::size_t> class_set) {
  if (truth.size() != predicted.size()) throw DimensionError("count_predictions: length mismatch");
  std::map<std::size_t, std::size_t> pos;
  std::vector<ClassCounts> counts(class_set.size());
  for (std::size_t i = 0; i < class_set.size(); ++i) {
    counts[i].cls = class_set[i];
    pos[class_set[i]] = i;
  }
  auto slot = [&](std::size_t c) -> ClassCounts& {
    const auto it = pos.find(c);
    if (it == pos.end()) throw IndexError("count_predictions: class " + std::to_string(c) + " not in class set");
    return counts[it->second];
  };
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ClassCounts& t = slot(truth[i]);
    ++t.support;
    if (truth[i] == predicted[i]) {
      ++t.tp;
    } else {
      ++t.fn;
      ++slot(predicted[i]).fp;
    }
  }
  return counts;
}

SplitResult evaluate_split(const TrainState& state, const SynthTask& task, Split split) {
  const SampleSet& set = task.test(split);
  if (set.size() == 0) throw ValidationError(std::string("evaluate_split: empty ") +
                                             (split == Split::base ? "base" : "novel") + " split");
  const std::vector<std::size_t> class_set = task.classes(split);
  SplitResult r;
  r.predictions = predict(state, set.x, class_set);
  r.total = set.size();
  for (std::size_t i = 0; i < r.total; ++i) r.correct += r.predictions[i] == set.y[i] ? 1 : 0;
  r.accuracy = 100.0 * ratio(r.correct, r.total);
  r.per_class = count_predictions(set.y, r.predictions, class_set);
  return r;
}

double harmonic_mean(double a, double b) { return a + b == 0.0 ? 0.0 : 2.0 * a * b / (a + b); }

double macro_f1(std::span<const ClassCounts> counts) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const ClassCounts& c : counts) {
    if (c.support == 0) continue;
    sum += c.f1();
    ++n;
  }
  if (n == 0) throw ValidationError("macro_f1: every class has zero support");
  return 100.0 * sum / static_cast<double>(n);
}

EvalReport evaluate(const TrainState& state, const SynthTask& task, const RunConfig& cfg) {
  const SplitResult base = evaluate_split(state, task, Split::base);
  const SplitResult novel = evaluate_split(state, task, Split::novel);
  EvalReport r;
  r.config_hash = cfg.hash();
  r.seed = cfg.train.seed;
  r.base_acc = base.accuracy;
  r.novel_acc = novel.accuracy;
  r.hm = harmonic_mean(base.accuracy, novel.accuracy);
  r.macro_f1_base = macro_f1(base.per_class);
  r.per_class = base.per_class;
  r.epochs = cfg.train.epochs;
  r.dpd = cfg.train.dpd;
  r.aux = cfg.train.aux;
  r.noise_kind = to_string(cfg.noise.kind);
  r.schedule = to_string(cfg.noise.schedule);
  return r;
}

json to_json(const EvalReport& r) {
  json per_class = json::array();
  for (const ClassCounts& c : r.per_class) {
    per_class.push_back(
        {{"class", c.cls}, {"precision", c.precision()}, {"recall", c.recall()}, {"f1", c.f1()}, {"support", c.support}});
  }
  return json{{"config_hash", r.config_hash},
              {"seed", r.seed},
              {"base_acc", r.base_acc},
              {"novel_acc", r.novel_acc},
              {"hm", r.hm},
              {"macro_f1_base", r.macro_f1_base},
              {"per_class", per_class},
              {"epochs", r.epochs},
              {"total_wall_ms", r.total_wall_ms},
              {"flags", {{"dpd", r.dpd}, {"aux", r.aux}, {"noise_kind", r.noise_kind}, {"schedule", r.schedule}}}};
}

EvalReport report_from_json(const json& j) {
  try {
    EvalReport r;
    r.config_hash = require(j, "config_hash", "report").get<std::string>();
    r.seed = require(j, "seed", "report").get<std::uint64_t>();
    r.base_acc = require(j, "base_acc", "report").get<double>();
    r.novel_acc = require(j, "novel_acc", "report").get<double>();
    r.hm = require(j, "hm", "report").get<double>();
    r.macro_f1_base = require(j, "macro_f1_base", "report").get<double>();
    r.epochs = require(j, "epochs", "report").get<std::size_t>();
    r.total_wall_ms = require(j, "total_wall_ms", "report").get<double>();
    const json& flags = require(j, "flags", "report");
    r.dpd = require(flags, "dpd", "report.flags").get<bool>();
    r.aux = require(flags, "aux", "report.flags").get<bool>();
    r.noise_kind = require(flags, "noise_kind", "report.flags").get<std::string>();
    r.schedule = require(flags, "schedule", "report.flags").get<std::string>();
    for (const json& c : require(j, "per_class", "report")) {
      ClassCounts cc;
      cc.cls = require(c, "class", "report.per_class").get<std::size_t>();
      cc.support = require(c, "support", "report.per_class").get<std::size_t>();
      r.per_class.push_back(cc);
    }
    return r;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("report: ") + e.what());
  }
}

}  // namespace p2c
