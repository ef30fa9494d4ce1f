#pragma once

// Base-to-novel evaluation with clean prompts, harmonic mean and macro-F1.

#include <span>
#include <string>
#include <vector>

#include "p2c/json_io.hpp"
#include "p2c/synthdata.hpp"
#include "p2c/train.hpp"

namespace p2c {

struct ClassCounts {
  std::size_t cls = 0;  // global class index
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t support = 0;

  double precision() const;
  double recall() const;
  double f1() const;
};

struct SplitResult {
  double accuracy = 0.0;  // percent
  std::size_t correct = 0;
  std::size_t total = 0;
  std::vector<std::size_t> predictions;  // global class indices, in sample order
  std::vector<ClassCounts> per_class;   // in class-set order
};

// Predicted class for each sample, argmax over `class_set` of the clean-prompt
// logits. First maximum wins on ties.
std::vector<std::size_t> predict(const TrainState& state, const Tensor& x, std::span<const std::size_t> class_set);

SplitResult evaluate_split(const TrainState& state, const SynthTask& task, Split split);

std::vector<ClassCounts> count_predictions(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                                           std::span<const std::size_t> class_set);

double harmonic_mean(double base_acc, double novel_acc);

// Percent; classes with zero support are left out.
double macro_f1(std::span<const ClassCounts> counts);

struct EvalReport {
  std::string config_hash;
  std::uint64_t seed = 0;
  double base_acc = 0.0;
  double novel_acc = 0.0;
  double hm = 0.0;
  double macro_f1_base = 0.0;
  std::vector<ClassCounts> per_class;
  std::size_t epochs = 0;
  double total_wall_ms = 0.0;
  bool dpd = false;
  bool aux = false;
  std::string noise_kind;
  std::string schedule;
};

EvalReport evaluate(const TrainState& state, const SynthTask& task, const RunConfig& cfg);

json to_json(const EvalReport& r);
EvalReport report_from_json(const json& j);

}  // namespace p2c
