#include "p2c/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace p2c {

void GenConfig::validate() const {
  if (C_base < 1 || C_novel < 1) throw ValidationError("data: C_base and C_novel must be >= 1");
  if (n_att < 1) throw ValidationError("data.n_att must be >= 1");
  if (values_per_att < 2) throw ValidationError("data.values_per_att must be >= 2");
  if (d_x < 1 || d_tok < 1) throw ValidationError("data: d_x and d_tok must be >= 1");
  if (d_tok > d_x) throw ValidationError("data.d_tok must not exceed data.d_x (render needs orthonormal columns)");
  if (!(noise_std >= 0.0) || !(offset_std >= 0.0)) throw ValidationError("data: noise_std/offset_std must be >= 0");
  if (shots < 1) throw ValidationError("data.shots must be >= 1");
  if (test_per_class < 1) throw ValidationError("data.test_per_class must be >= 1");
  for (const auto& [c, n] : test_count_override) {
    if (c >= C_base + C_novel) throw ValidationError("data.test_count_override: class " + std::to_string(c));
    if (n < 1) throw ValidationError("data.test_count_override: counts must be >= 1");
  }
}

json to_json(const GenConfig& cfg) {
  json overrides = json::object();
  for (const auto& [c, n] : cfg.test_count_override) overrides[std::to_string(c)] = n;
  return json{{"seed", cfg.seed},
              {"C_base", cfg.C_base},
              {"C_novel", cfg.C_novel},
              {"n_att", cfg.n_att},
              {"values_per_att", cfg.values_per_att},
              {"d_x", cfg.d_x},
              {"d_tok", cfg.d_tok},
              {"noise_std", cfg.noise_std},
              {"offset_std", cfg.offset_std},
              {"shots", cfg.shots},
              {"test_per_class", cfg.test_per_class},
              {"test_count_override", overrides}};
}

GenConfig gen_config_from_json(const json& j) {
  GenConfig c;
  try {
    c.seed = require(j, "seed", "data").get<std::uint64_t>();
    c.C_base = require(j, "C_base", "data").get<std::size_t>();
    c.C_novel = require(j, "C_novel", "data").get<std::size_t>();
    c.n_att = require(j, "n_att", "data").get<std::size_t>();
    c.values_per_att = require(j, "values_per_att", "data").get<std::size_t>();
    c.d_x = require(j, "d_x", "data").get<std::size_t>();
    c.d_tok = require(j, "d_tok", "data").get<std::size_t>();
    c.noise_std = require(j, "noise_std", "data").get<double>();
    c.offset_std = require(j, "offset_std", "data").get<double>();
    c.shots = require(j, "shots", "data").get<std::size_t>();
    c.test_per_class = require(j, "test_per_class", "data").get<std::size_t>();
    for (const auto& [k, v] : require(j, "test_count_override", "data").items()) {
      c.test_count_override[std::stoul(k)] = v.get<std::size_t>();
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("data: ") + e.what());
  }
  return c;
}

Tensor SampleSet::sample(std::size_t i) const {
  const std::size_t d = x.dim(1);
  return Tensor({d}, std::vector<double>(x.values().begin() + static_cast<std::ptrdiff_t>(i * d),
                                         x.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * d)));
}

std::vector<std::size_t> SynthTask::classes(Split split) const {
  std::vector<std::size_t> out(split == Split::base ? config.C_base : config.C_novel);
  std::iota(out.begin(), out.end(), split == Split::base ? 0 : config.C_base);
  return out;
}

Tensor SynthTask::prototype(std::size_t c) const {
  const std::size_t d = config.d_x;
  return Tensor({d}, std::vector<double>(prototypes.values().begin() + static_cast<std::ptrdiff_t>(c * d),
                                         prototypes.values().begin() + static_cast<std::ptrdiff_t>((c + 1) * d)));
}

namespace {

// Gram-Schmidt on a Gaussian matrix; columns are orthonormal.
Tensor orthonormal_columns(std::size_t rows, std::size_t cols, Rng& rng) {
  for (;;) {
    Tensor m = rng.normal_tensor({rows, cols});
    bool ok = true;
    for (std::size_t j = 0; j < cols && ok; ++j) {
      for (std::size_t k = 0; k < j; ++k) {
        double dot = 0.0;
        for (std::size_t i = 0; i < rows; ++i) dot += m.at(i, j) * m.at(i, k);
        for (std::size_t i = 0; i < rows; ++i) m.at(i, j) -= dot * m.at(i, k);
      }
      double n = 0.0;
      for (std::size_t i = 0; i < rows; ++i) n += m.at(i, j) * m.at(i, j);
      n = std::sqrt(n);
      if (n < 1e-8) {
        ok = false;
        break;
      }
      for (std::size_t i = 0; i < rows; ++i) m.at(i, j) /= n;
    }
    if (ok) return m;
  }
}

SampleSet draw_samples(const Tensor& prototypes, const std::vector<std::size_t>& classes,
                       const std::vector<std::size_t>& counts, double noise_std, Rng& rng) {
  const std::size_t d = prototypes.dim(1);
  const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  SampleSet s{Tensor({total, d}), {}};
  std::size_t row = 0;
  for (std::size_t k = 0; k < classes.size(); ++k) {
    for (std::size_t n = 0; n < counts[k]; ++n, ++row) {
      for (std::size_t i = 0; i < d; ++i) s.x.at(row, i) = prototypes.at(classes[k], i) + noise_std * rng.normal();
      s.y.push_back(classes[k]);
    }
  }
  return s;
}

}  // namespace

SynthTask generate_task(const GenConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t C = cfg.C_base + cfg.C_novel;
  double combos = std::pow(static_cast<double>(cfg.values_per_att), static_cast<double>(cfg.n_att));
  if (combos < static_cast<double>(C)) {
    throw GenerationError("attribute grid " + std::to_string(cfg.n_att) + "x" + std::to_string(cfg.values_per_att) +
                          " has fewer combinations than " + std::to_string(C) + " classes");
  }

  SynthTask task;
  task.config = cfg;

  // Enumerate every combination (mixed radix), shuffle, and take the first C;
  // retry until every novel value is covered by some base class.
  const auto total_combos = static_cast<std::size_t>(combos);
  std::vector<std::size_t> order(total_combos);
  bool found = false;
  for (int attempt = 0; attempt < 1000 && !found; ++attempt) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng.engine());
    task.class_values.assign(C, std::vector<std::size_t>(cfg.n_att));
    for (std::size_t c = 0; c < C; ++c) {
      std::size_t code = order[c];
      for (std::size_t a = 0; a < cfg.n_att; ++a) {
        task.class_values[c][a] = code % cfg.values_per_att;
        code /= cfg.values_per_att;
      }
    }
    found = compositional(task);
  }
  if (!found) {
    throw GenerationError("could not assign novel classes to combinations of attribute values seen in base classes");
  }

  task.words = rng.normal_tensor({cfg.n_att, cfg.values_per_att, cfg.d_tok});
  task.render = orthonormal_columns(cfg.d_x, cfg.d_tok, rng);
  task.class_offsets = rng.normal_tensor({C, cfg.d_x}, cfg.offset_std);

  const double inv_sqrt_att = 1.0 / std::sqrt(static_cast<double>(cfg.n_att));
  task.class_tokens = Tensor({C, cfg.d_tok});
  task.prototypes = Tensor({C, cfg.d_x});
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t a = 0; a < cfg.n_att; ++a) {
      const std::size_t v = task.class_values[c][a];
      for (std::size_t i = 0; i < cfg.d_tok; ++i) {
        task.class_tokens.at(c, i) += inv_sqrt_att * task.words[(a * cfg.values_per_att + v) * cfg.d_tok + i];
      }
    }
    for (std::size_t r = 0; r < cfg.d_x; ++r) {
      double acc = task.class_offsets.at(c, r);
      for (std::size_t i = 0; i < cfg.d_tok; ++i) acc += task.render.at(r, i) * task.class_tokens.at(c, i);
      task.prototypes.at(c, r) = acc;
    }
  }

  auto counts_for = [&](const std::vector<std::size_t>& cls, bool train) {
    std::vector<std::size_t> counts;
    for (std::size_t c : cls) {
      if (train) {
        counts.push_back(cfg.shots);
      } else {
        auto it = cfg.test_count_override.find(c);
        counts.push_back(it != cfg.test_count_override.end() ? it->second : cfg.test_per_class);
      }
    }
    return counts;
  };
  const auto base = task.classes(Split::base);
  const auto novel = task.classes(Split::novel);
  task.train = draw_samples(task.prototypes, base, counts_for(base, true), cfg.noise_std, rng);
  task.test_base = draw_samples(task.prototypes, base, counts_for(base, false), cfg.noise_std, rng);
  task.test_novel = draw_samples(task.prototypes, novel, counts_for(novel, false), cfg.noise_std, rng);
  return task;
}

SynthTask generate_task(const GenConfig& cfg) {
  Rng rng = Rng::derive(cfg.seed, 0, "synthdata");
  return generate_task(cfg, rng);
}

bool compositional(const SynthTask& task) {
  const auto& cfg = task.config;
  std::vector<std::set<std::size_t>> seen(cfg.n_att);
  std::set<std::vector<std::size_t>> base_combos;
  for (std::size_t c = 0; c < cfg.C_base; ++c) {
    base_combos.insert(task.class_values[c]);
    for (std::size_t a = 0; a < cfg.n_att; ++a) seen[a].insert(task.class_values[c][a]);
  }
  for (std::size_t c = cfg.C_base; c < cfg.C_base + cfg.C_novel; ++c) {
    if (base_combos.contains(task.class_values[c])) return false;
    for (std::size_t a = 0; a < cfg.n_att; ++a) {
      if (!seen[a].contains(task.class_values[c][a])) return false;
    }
  }
  return true;
}

static json samples_to_json(const SampleSet& s) { return json{{"x", tensor_to_json(s.x)}, {"y", s.y}}; }

static SampleSet samples_from_json(const json& j, const std::string& where) {
  SampleSet s{tensor_from_json(require(j, "x", where), where + ".x"),
              require(j, "y", where).get<std::vector<std::size_t>>()};
  if (s.x.rank() != 2 || s.x.dim(0) != s.y.size()) throw ValidationError(where + ": x rows do not match y");
  return s;
}

json to_json(const SynthTask& task) {
  return json{{"format", "p2c-synth-task/1"},
              {"config", to_json(task.config)},
              {"class_values", task.class_values},
              {"words", tensor_to_json(task.words)},
              {"render", tensor_to_json(task.render)},
              {"class_offsets", tensor_to_json(task.class_offsets)},
              {"prototypes", tensor_to_json(task.prototypes)},
              {"class_tokens", tensor_to_json(task.class_tokens)},
              {"train", samples_to_json(task.train)},
              {"test_base", samples_to_json(task.test_base)},
              {"test_novel", samples_to_json(task.test_novel)}};
}

SynthTask task_from_json(const json& j) {
  if (require(j, "format", "task") != "p2c-synth-task/1") throw ValidationError("task: unsupported format");
  SynthTask t;
  t.config = gen_config_from_json(require(j, "config", "task"));
  t.config.validate();
  try {
    t.class_values = require(j, "class_values", "task").get<std::vector<std::vector<std::size_t>>>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("task.class_values: ") + e.what());
  }
  t.words = tensor_from_json(require(j, "words", "task"), "task.words");
  t.render = tensor_from_json(require(j, "render", "task"), "task.render");
  t.class_offsets = tensor_from_json(require(j, "class_offsets", "task"), "task.class_offsets");
  t.prototypes = tensor_from_json(require(j, "prototypes", "task"), "task.prototypes");
  t.class_tokens = tensor_from_json(require(j, "class_tokens", "task"), "task.class_tokens");
  t.train = samples_from_json(require(j, "train", "task"), "task.train");
  t.test_base = samples_from_json(require(j, "test_base", "task"), "task.test_base");
  t.test_novel = samples_from_json(require(j, "test_novel", "task"), "task.test_novel");

  const std::size_t C = t.num_classes();
  const auto& c = t.config;
  if (t.class_values.size() != C) throw ValidationError("task.class_values: expected " + std::to_string(C) + " rows");
  if (t.class_tokens.shape() != Shape{C, c.d_tok}) throw ValidationError("task.class_tokens: bad shape");
  if (t.prototypes.shape() != Shape{C, c.d_x}) throw ValidationError("task.prototypes: bad shape");
  if (t.render.shape() != Shape{c.d_x, c.d_tok}) throw ValidationError("task.render: bad shape");
  for (const SampleSet* s : {&t.train, &t.test_base, &t.test_novel}) {
    if (s->x.dim(1) != c.d_x) throw ValidationError("task: sample dimension does not match d_x");
    for (auto y : s->y) {
      if (y >= C) throw ValidationError("task: label out of range");
    }
  }
  return t;
}

ShiftKind shift_kind_from_string(const std::string& s) {
  if (s == "mean_shift") return ShiftKind::mean_shift;
  if (s == "linear_warp") return ShiftKind::linear_warp;
  throw ValidationError("unknown shift kind '" + s + "' (expected mean_shift or linear_warp)");
}

std::string to_string(ShiftKind k) { return k == ShiftKind::mean_shift ? "mean_shift" : "linear_warp"; }

SynthTask apply_shift(const SynthTask& task, const ShiftSpec& spec, Rng& rng) {
  if (!(spec.magnitude >= 0.0)) throw ValidationError("shift magnitude must be >= 0");
  const std::size_t d = task.config.d_x;
  SynthTask out = task;

  if (spec.kind == ShiftKind::mean_shift) {
    Tensor dir = rng.normal_tensor({d});
    const double n = dir.norm();
    for (double& v : dir.data()) v = v / n * spec.magnitude;
    if (spec.magnitude == 0.0) return out;
    for (SampleSet* s : {&out.test_base, &out.test_novel}) {
      for (std::size_t r = 0; r < s->size(); ++r) {
        for (std::size_t i = 0; i < d; ++i) s->x.at(r, i) += dir[i];
      }
    }
    return out;
  }

  Tensor A = rng.normal_tensor({d, d});
  const double fro = A.norm();
  for (double& v : A.data()) v /= fro;
  if (spec.magnitude == 0.0) return out;
  for (SampleSet* s : {&out.test_base, &out.test_novel}) {
    for (std::size_t r = 0; r < s->size(); ++r) {
      std::vector<double> row(d);
      for (std::size_t i = 0; i < d; ++i) {
        double acc = s->x.at(r, i);
        for (std::size_t j = 0; j < d; ++j) acc += spec.magnitude * A.at(i, j) * s->x.at(r, j);
        row[i] = acc;
      }
      for (std::size_t i = 0; i < d; ++i) s->x.at(r, i) = row[i];
    }
  }
  return out;
}

}  // namespace p2c
