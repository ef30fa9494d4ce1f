#include "p2c/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace p2c {

ParamMap TrainState::learnable() const {
  ParamMap p{{"P_cls", prompts.P_cls},
             {"mapper.W1", mapper.W1},
             {"mapper.b1", mapper.b1},
             {"mapper.W2", mapper.W2},
             {"mapper.b2", mapper.b2}};
  if (prompts.has_attributes()) p.emplace("P_att", prompts.P_att);
  return p;
}

void TrainState::set_learnable(const ParamMap& params) {
  auto take = [&](const char* name, Tensor& dst) {
    const Tensor& src = params.at(name);
    if (src.shape() != dst.shape()) {
      throw DimensionError(std::string("parameter ") + name + ": expected " + shape_str(dst.shape()) + ", got " +
                           shape_str(src.shape()));
    }
    dst = src;
  };
  take("P_cls", prompts.P_cls);
  if (prompts.has_attributes()) take("P_att", prompts.P_att);
  take("mapper.W1", mapper.W1);
  take("mapper.b1", mapper.b1);
  take("mapper.W2", mapper.W2);
  take("mapper.b2", mapper.b2);
}

TrainState init_state(const RunConfig& cfg, const SynthTask& task) {
  if (cfg.prompts.d_tok != task.config.d_tok) {
    throw ValidationError("prompts.d_tok (" + std::to_string(cfg.prompts.d_tok) + ") must equal the task's d_tok (" +
                          std::to_string(task.config.d_tok) + ")");
  }
  const std::uint64_t seed = cfg.train.seed;
  Rng enc_rng = Rng::derive(seed, 0, "encoders");
  Rng prompt_rng = Rng::derive(seed, 0, "prompts");
  Rng mapper_rng = Rng::derive(seed, 0, "mapper");
  Rng noise_rng = Rng::derive(seed, 0, "noise-model");

  TrainState s;
  s.prompt_cfg = cfg.prompts;
  s.encoders = make_encoders(cfg.prompts, task.render, enc_rng);
  s.prompts = make_prompt_set(cfg.prompts, task.class_tokens, prompt_rng);
  const std::size_t d = cfg.prompts.learnable_tokens() * cfg.prompts.d_tok;
  s.mapper = make_mapper(d, d, cfg.mapper.s_H, mapper_rng);
  s.noise_model = cfg.noise.kind == NoiseKind::gm ? make_gaussian(d)
                                                  : make_mixture(cfg.noise.K, d, cfg.noise.gmm_mean_std, noise_rng);
  return s;
}

LossOptions loss_options(const RunConfig& cfg) {
  return LossOptions{cfg.train.dpd, cfg.train.aux, cfg.mapper.vis_from_noisy, cfg.mapper.aux_spec()};
}

LossTerms build_loss(Tape& tape, const ParamMap& params, const TrainState& state, const Batch& batch,
                     std::span<const std::size_t> class_set, const StepNoise& noise, const LossOptions& opt) {
  if (batch.x.empty() || batch.x.size() != batch.y.size()) throw DimensionError("build_loss: empty or ragged batch");

  const EncoderVars enc = bind(tape, state.encoders);
  PromptVars clean{tape.parameter("P_cls", params.at("P_cls")), Var{}, &state.prompt_cfg, &state.prompts};
  if (state.prompts.has_attributes()) clean.P_att = tape.parameter("P_att", params.at("P_att"));
  const MapperVars F = register_mapper(tape, params);

  PromptVars noisy = clean;
  if (opt.dpd) {
    noisy.P_cls = add(clean.P_cls, tape.constant(noise.eps_cls, "eps_cls"));
    if (clean.P_att.valid()) noisy.P_att = add(clean.P_att, tape.constant(noise.eps_att, "eps_att"));
  }
  const Var flat_clean = flatten_learnable(clean);
  const Var P_v = map_forward(F, opt.vis_from_noisy ? flatten_learnable(noisy) : flat_clean);
  const Var text = text_embeddings(enc, noisy, class_set);

  std::vector<Var> losses;
  losses.reserve(batch.x.size());
  for (std::size_t i = 0; i < batch.x.size(); ++i) {
    const auto it = std::find(class_set.begin(), class_set.end(), batch.y[i]);
    if (it == class_set.end()) throw IndexError("build_loss: label " + std::to_string(batch.y[i]) + " not in class set");
    const Var image = encode_image(enc, tape.constant(batch.x[i], "x"), P_v);
    const Var lg = class_logits(image, text, state.prompt_cfg.logit_scale);
    losses.push_back(softmax_cross_entropy(lg, static_cast<std::size_t>(it - class_set.begin())));
  }
  const Var cls = mean(concat(losses));
  const Var aux = opt.aux ? aux_denoising_loss(F, flat_clean, noise.eta, opt.aux_spec).loss
                          : tape.constant(Tensor({1}), "no_aux");
  return LossTerms{add(cls, scale(aux, opt.aux_spec.lambda)), cls, aux};
}

StepRecord training_step(TrainState& state, const RunConfig& cfg, const Batch& batch,
                         std::span<const std::size_t> class_set, std::size_t epoch, double lr, StepStreams rng) {
  const LossOptions opt = loss_options(cfg);
  StepRecord rec;
  rec.epoch = epoch;
  rec.sigma_t = sigma_at(cfg.schedule(), static_cast<double>(epoch));

  StepNoise noise;
  if (opt.dpd) {
    PerturbedPrompts pp = perturb_prompts(state.prompts, state.noise_model, rec.sigma_t, rng.dpd, cfg.noise.shared_draw);
    noise.eps_cls = std::move(pp.eps_cls);
    noise.eps_att = std::move(pp.eps_att);
  }
  // Drawn even when the auxiliary loss is off so both settings consume the
  // aux stream identically.
  noise.eta = draw_eta(state.mapper.d_in(), opt.aux_spec.sigma_aux, rng.aux);

  Tape tape;
  const ParamMap params = state.learnable();
  const LossTerms terms = build_loss(tape, params, state, batch, class_set, noise, opt);
  rec.loss_total = scalar(terms.total);
  rec.loss_cls = scalar(terms.cls);
  rec.loss_aux = scalar(terms.aux);
  if (!std::isfinite(rec.loss_total)) {
    throw NonFiniteError("non-finite loss at epoch " + std::to_string(epoch) + "; first non-finite tensor: " +
                         tape.first_non_finite().value_or("loss"));
  }
  tape.backward(terms.total);

  ParamMap updated = params;
  const ParamMap grads = tape.parameter_grads();
  for (auto& [name, value] : updated) {
    const Tensor& g = grads.at(name);
    for (std::size_t i = 0; i < value.size(); ++i) value[i] -= lr * g[i];
  }
  state.set_learnable(updated);
  return rec;
}

TrainLog run_training(const RunConfig& cfg, const SynthTask& task, TrainState& state) {
  if (task.config.C_base < 1 || task.train.size() == 0) throw ValidationError("training needs at least one shot");
  const std::string checksum = frozen_checksum(state.encoders, state.prompts);
  const std::vector<std::size_t> class_set = task.classes(Split::base);

  Rng shuffle_rng = Rng::derive(cfg.train.seed, 0, "shuffle");
  Rng dpd_rng = Rng::derive(cfg.train.seed, 0, "dpd");
  Rng aux_rng = Rng::derive(cfg.train.seed, 0, "aux");

  TrainLog log;
  const std::size_t T = cfg.train.epochs;
  const std::size_t B = cfg.train.batch_size;
  std::vector<std::size_t> order(task.train.size());
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < T; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    double lr = cfg.train.lr;
    if (cfg.train.lr_schedule == LrSchedule::cosine) {
      lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(T)));
    }
    const std::size_t first_row = log.steps.size();
    for (std::size_t b = 0; b < order.size(); b += B) {
      Batch batch;
      for (std::size_t i = b; i < std::min(order.size(), b + B); ++i) {
        batch.x.push_back(task.train.sample(order[i]));
        batch.y.push_back(task.train.y[order[i]]);
      }
      StepRecord rec = training_step(state, cfg, batch, class_set, epoch, lr, StepStreams{dpd_rng, aux_rng});
      rec.step = step++;
      log.steps.push_back(rec);
    }
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    log.epoch_wall_ms.push_back(ms);
    for (std::size_t r = first_row; r < log.steps.size(); ++r) log.steps[r].epoch_wall_ms = ms;
  }
  if (frozen_checksum(state.encoders, state.prompts) != checksum) {
    throw std::logic_error("frozen tensors changed during training");
  }
  return log;
}

double overhead_report(std::span<const double> baseline_epoch_ms, std::span<const double> p2c_epoch_ms) {
  if (baseline_epoch_ms.empty() || p2c_epoch_ms.empty()) throw ValidationError("overhead_report: empty timing log");
  if (baseline_epoch_ms.size() != p2c_epoch_ms.size()) {
    throw ValidationError("overhead_report: logs cover different epoch counts (" +
                          std::to_string(baseline_epoch_ms.size()) + " vs " + std::to_string(p2c_epoch_ms.size()) +
                          ")");
  }
  const auto avg = [](std::span<const double> v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  const double base = avg(baseline_epoch_ms);
  if (!(base > 0.0)) throw DegenerateTimingError("overhead_report: baseline epoch time is zero");
  return (avg(p2c_epoch_ms) / base - 1.0) * 100.0;
}

double overhead_report(const TrainLog& baseline, const TrainLog& p2c) {
  return overhead_report(baseline.epoch_wall_ms, p2c.epoch_wall_ms);
}

const char* const kCurvesHeader = "epoch,step,loss_total,loss_cls,loss_aux,sigma_t,epoch_wall_ms";

std::string curves_csv(const TrainLog& log) {
  std::string out = std::string(kCurvesHeader) + "\n";
  for (const StepRecord& r : log.steps) {
    out += std::to_string(r.epoch) + "," + std::to_string(r.step) + "," + fmt9(r.loss_total) + "," +
           fmt9(r.loss_cls) + "," + fmt9(r.loss_aux) + "," + fmt9(r.sigma_t) + "," + fmt9(r.epoch_wall_ms) + "\n";
  }
  return out;
}

std::vector<double> epoch_ms_from_curves(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != kCurvesHeader) throw ValidationError("curves.csv: unexpected header");
  std::vector<double> ms;
  long last_epoch = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream row(line);
    for (std::string cell; std::getline(row, cell, ',');) cells.push_back(cell);
    if (cells.size() != 7) throw ValidationError("curves.csv: malformed row '" + line + "'");
    const long epoch = std::stol(cells[0]);
    if (epoch != last_epoch) {
      ms.push_back(std::stod(cells[6]));
      last_epoch = epoch;
    }
  }
  return ms;
}

json params_to_json(const TrainState& state) {
  json params = json::object();
  for (const auto& [name, value] : state.learnable()) params[name] = tensor_to_json(value);
  return json{{"format", "p2c-params/1"},
              {"frozen_checksum", frozen_checksum(state.encoders, state.prompts)},
              {"params", params}};
}

void params_from_json(const json& j, TrainState& state) {
  if (require(j, "format", "params") != "p2c-params/1") throw ValidationError("params: unsupported format");
  if (require(j, "frozen_checksum", "params") != frozen_checksum(state.encoders, state.prompts)) {
    throw ValidationError("params: frozen checksum does not match the rebuilt encoders");
  }
  const json& p = require(j, "params", "params");
  ParamMap loaded;
  for (const auto& [name, _] : state.learnable()) {
    loaded[name] = tensor_from_json(require(p, name, "params.params"), "params.params." + name);
  }
  state.set_learnable(loaded);
}

}  // namespace p2c
