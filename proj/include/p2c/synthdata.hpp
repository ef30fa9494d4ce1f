#pragma once

// Compositional synthetic few-shot tasks.
//
// Each class is a combination of attribute values (one value per factor).
// A class name token is the normalized sum of the word vectors of its values;
// the class prototype renders that token into feature space through a fixed
// matrix with orthonormal columns and adds a class-specific visual offset.
// Novel classes are unseen combinations of attribute values that all occur
// among the base classes.

#include <cstdint>
#include <map>
#include <vector>

#include "p2c/json_io.hpp"
#include "p2c/rng.hpp"
#include "p2c/tensor.hpp"

namespace p2c {

struct GenConfig {
  std::uint64_t seed = 0;
  std::size_t C_base = 8;
  std::size_t C_novel = 8;
  std::size_t n_att = 2;
  std::size_t values_per_att = 4;
  std::size_t d_x = 16;
  std::size_t d_tok = 8;
  double noise_std = 0.35;
  double offset_std = 0.3;
  std::size_t shots = 16;
  std::size_t test_per_class = 64;
  // Global class index -> test sample count, for imbalanced test sets.
  std::map<std::size_t, std::size_t> test_count_override;

  void validate() const;
};

json to_json(const GenConfig& cfg);
GenConfig gen_config_from_json(const json& j);

struct SampleSet {
  Tensor x;                    // [N x d_x]
  std::vector<std::size_t> y;  // global class indices

  std::size_t size() const noexcept { return y.size(); }
  Tensor sample(std::size_t i) const;
};

enum class Split { base, novel };

struct SynthTask {
  GenConfig config;
  // class -> chosen value per attribute factor; base classes are
  // [0, C_base), novel classes are [C_base, C_base + C_novel).
  std::vector<std::vector<std::size_t>> class_values;
  Tensor words;          // [n_att x values_per_att x d_tok]
  Tensor render;         // [d_x x d_tok], orthonormal columns
  Tensor class_offsets;  // [C x d_x]
  Tensor prototypes;     // [C x d_x]
  Tensor class_tokens;   // [C x d_tok]
  SampleSet train;       // exactly `shots` per base class
  SampleSet test_base;
  SampleSet test_novel;

  std::size_t num_classes() const noexcept { return config.C_base + config.C_novel; }
  std::vector<std::size_t> classes(Split split) const;
  const SampleSet& test(Split split) const { return split == Split::base ? test_base : test_novel; }
  Tensor prototype(std::size_t c) const;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

SynthTask generate_task(const GenConfig& cfg, Rng& rng);
SynthTask generate_task(const GenConfig& cfg);  // rng seeded from cfg.seed

// True when every novel class uses only attribute values seen among base
// classes and no novel combination equals a base one.
bool compositional(const SynthTask& task);

json to_json(const SynthTask& task);
SynthTask task_from_json(const json& j);

enum class ShiftKind { mean_shift, linear_warp };

struct ShiftSpec {
  ShiftKind kind = ShiftKind::mean_shift;
  double magnitude = 0.0;
};

ShiftKind shift_kind_from_string(const std::string& s);
std::string to_string(ShiftKind k);

// Copy of the task with both test sets shifted; train split untouched.
SynthTask apply_shift(const SynthTask& task, const ShiftSpec& spec, Rng& rng);

}  // namespace p2c
