#include "p2c/config.hpp"

#include <optional>
#include <set>

namespace p2c {

std::string to_string(LrSchedule s) { return s == LrSchedule::constant ? "constant" : "cosine"; }

namespace {

// Reads typed keys out of one config section and remembers which keys were
// consumed so leftovers can be reported as unknown.
class Section {
 public:
  Section(const json& root, std::string name) : name_(std::move(name)) {
    if (root.contains(name_)) {
      node_ = &root.at(name_);
      if (!node_->is_object()) throw ValidationError("config section '" + name_ + "' must be an object");
    }
  }

  bool has(const std::string& key) const { return node_ && node_->contains(key); }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!has(key)) return;
    try {
      out = node_->at(key).get<T>();
    } catch (const json::exception&) {
      throw ValidationError("config key '" + name_ + "." + key + "' has the wrong type: " + node_->at(key).dump());
    }
  }

  void finish() const {
    if (!node_) return;
    for (const auto& [key, _] : node_->items()) {
      if (!seen_.contains(key)) throw ValidationError("unknown config key '" + name_ + "." + key + "'");
    }
  }

 private:
  std::string name_;
  const json* node_ = nullptr;
  std::set<std::string> seen_;
};

template <typename Enum, typename Parse>
void get_enum(Section& s, const std::string& key, Enum& out, Parse parse) {
  std::string text;
  s.get(key, text);
  if (!text.empty()) out = parse(text);
}

}  // namespace

RunConfig parse_config(const json& j, bool require_data_seed) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  static const std::set<std::string> sections{"prompts", "noise", "mapper", "train", "data", "eval"};
  for (const auto& [key, _] : j.items()) {
    if (!sections.contains(key)) throw ValidationError("unknown config section '" + key + "'");
  }

  RunConfig cfg;
  {
    Section s(j, "prompts");
    auto& p = cfg.prompts;
    s.get("d_tok", p.d_tok);
    s.get("TL_cls", p.TL_cls);
    s.get("TL_att", p.TL_att);
    s.get("n_att", p.n_att);
    s.get("d_e", p.d_e);
    s.get("d_h", p.d_h);
    s.get("logit_scale", p.logit_scale);
    s.get("init_std", p.init_std);
    s.get("ctx_gain", p.ctx_gain);
    s.get("align_noise", p.align_noise);
    s.get("domain_gap", p.domain_gap);
    s.finish();
  }
  std::optional<double> noise_sigma_aux;
  {
    Section s(j, "noise");
    auto& n = cfg.noise;
    get_enum(s, "kind", n.kind, noise_kind_from_string);
    s.get("K", n.K);
    s.get("sigma_max", n.sigma_max);
    get_enum(s, "schedule", n.schedule, schedule_kind_from_string);
    s.get("sigmoid_k", n.sigmoid_k);
    s.get("shared_draw", n.shared_draw);
    s.get("gmm_mean_std", n.gmm_mean_std);
    // Alias of mapper.sigma_aux.
    if (s.has("sigma_aux")) {
      double v = 0.0;
      s.get("sigma_aux", v);
      noise_sigma_aux = v;
    }
    s.finish();
  }
  {
    Section s(j, "mapper");
    auto& m = cfg.mapper;
    const bool has_own = s.has("sigma_aux");
    s.get("s_H", m.s_H);
    s.get("sigma_aux", m.sigma_aux);
    s.get("lambda", m.lambda);
    s.get("detach_clean", m.detach_clean);
    s.get("vis_from_noisy", m.vis_from_noisy);
    s.get("aux_updates_prompts", m.aux_updates_prompts);
    s.finish();
    if (noise_sigma_aux) {
      if (has_own && m.sigma_aux != *noise_sigma_aux) {
        throw ValidationError("noise.sigma_aux and mapper.sigma_aux disagree");
      }
      m.sigma_aux = *noise_sigma_aux;
    }
  }
  {
    Section s(j, "train");
    auto& t = cfg.train;
    s.get("lr", t.lr);
    s.get("batch_size", t.batch_size);
    s.get("epochs", t.epochs);
    s.get("seed", t.seed);
    get_enum(s, "lr_schedule", t.lr_schedule, [](const std::string& v) {
      if (v == "constant") return LrSchedule::constant;
      if (v == "cosine") return LrSchedule::cosine;
      throw ValidationError("unknown train.lr_schedule '" + v + "'");
    });
    s.get("dpd", t.dpd);
    s.get("aux", t.aux);
    s.finish();
  }
  {
    Section s(j, "data");
    auto& d = cfg.data;
    if (require_data_seed && !s.has("seed")) throw ValidationError("missing required key 'data.seed'");
    s.get("seed", d.seed);
    s.get("C_base", d.C_base);
    s.get("C_novel", d.C_novel);
    s.get("n_att", d.n_att);
    s.get("values_per_att", d.values_per_att);
    s.get("d_x", d.d_x);
    s.get("d_tok", d.d_tok);
    s.get("noise_std", d.noise_std);
    s.get("offset_std", d.offset_std);
    s.get("shots", d.shots);
    s.get("test_per_class", d.test_per_class);
    std::map<std::string, std::size_t> overrides;
    s.get("test_count_override", overrides);
    for (const auto& [k, v] : overrides) {
      try {
        d.test_count_override[std::stoul(k)] = v;
      } catch (const std::exception&) {
        throw ValidationError("data.test_count_override: class key '" + k + "' is not an integer");
      }
    }
    s.finish();
  }
  {
    Section s(j, "eval");
    auto& e = cfg.eval;
    s.get("n_seeds", e.n_seeds);
    s.get("curve_downsample", e.curve_downsample);
    get_enum(s, "shift_kind", e.shift_kind, shift_kind_from_string);
    s.get("shift_magnitudes", e.shift_magnitudes);
    s.get("shift_seed", e.shift_seed);
    s.finish();
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path, bool require_data_seed) {
  return parse_config(read_json_file(path), require_data_seed);
}

void RunConfig::validate() const {
  prompts.validate();
  data.validate();
  schedule().validate();
  if (noise.K < 1) throw ValidationError("noise.K must be >= 1");
  if (!(noise.gmm_mean_std >= 0.0)) throw ValidationError("noise.gmm_mean_std must be >= 0");
  if (mapper.s_H < 1) throw ValidationError("mapper.s_H must be >= 1");
  if (!(mapper.sigma_aux >= 0.0)) throw ValidationError("mapper.sigma_aux must be >= 0");
  if (!(train.lr >= 0.0)) throw ValidationError("train.lr must be >= 0");
  if (train.batch_size < 1) throw ValidationError("train.batch_size must be >= 1");
  if (eval.n_seeds < 1) throw ValidationError("eval.n_seeds must be >= 1");
  if (eval.curve_downsample < 1) throw ValidationError("eval.curve_downsample must be >= 1");
  for (double m : eval.shift_magnitudes) {
    if (!(m >= 0.0)) throw ValidationError("eval.shift_magnitudes must be >= 0");
  }
}

json RunConfig::to_json() const {
  return json{
      {"prompts", p2c::to_json(prompts)},
      {"noise",
       {{"kind", p2c::to_string(noise.kind)},
        {"K", noise.K},
        {"sigma_max", noise.sigma_max},
        {"schedule", p2c::to_string(noise.schedule)},
        {"sigmoid_k", noise.sigmoid_k},
        {"shared_draw", noise.shared_draw},
        {"gmm_mean_std", noise.gmm_mean_std}}},
      {"mapper",
       {{"s_H", mapper.s_H},
        {"sigma_aux", mapper.sigma_aux},
        {"lambda", mapper.lambda},
        {"detach_clean", mapper.detach_clean},
        {"vis_from_noisy", mapper.vis_from_noisy},
        {"aux_updates_prompts", mapper.aux_updates_prompts}}},
      {"train",
       {{"lr", train.lr},
        {"batch_size", train.batch_size},
        {"epochs", train.epochs},
        {"seed", train.seed},
        {"lr_schedule", p2c::to_string(train.lr_schedule)},
        {"dpd", train.dpd},
        {"aux", train.aux}}},
      {"data", p2c::to_json(data)},
      {"eval",
       {{"n_seeds", eval.n_seeds},
        {"curve_downsample", eval.curve_downsample},
        {"shift_kind", p2c::to_string(eval.shift_kind)},
        {"shift_magnitudes", eval.shift_magnitudes},
        {"shift_seed", eval.shift_seed}}},
  };
}

std::string RunConfig::hash() const { return sha256_hex(to_json().dump()); }

}  // namespace p2c
