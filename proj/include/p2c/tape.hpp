#pragma once

// Reverse-mode gradient tape over a fixed set of primitives.
//
// Nodes are appended in evaluation order, so the node index is already a
// topological order and backward() simply walks the tape from the end.
// Only nodes downstream of a parameter carry a backward rule.

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "p2c/tensor.hpp"

namespace p2c {

class Tape;

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Handle to a node on a tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

using ParamMap = std::map<std::string, Tensor>;

// What a backward rule sees: the node's output value and incoming gradient, the
// parent values, and the parent gradient accumulators. Accumulators are null
// for parents that do not require gradients.
struct BackwardCtx {
  const Tensor& out;
  const Tensor& grad;
  std::span<const Tensor* const> in;
  std::span<Tensor* const> in_grad;
};

using BackwardFn = std::function<void(const BackwardCtx&)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value, std::string op = "constant");
  // Leaf that receives a gradient. Each name may be registered once per tape.
  Var parameter(const std::string& name, Tensor value);

  Var record(std::string op, Tensor value, std::vector<Var> parents, BackwardFn backward);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;

  // Seeds d(loss)/d(loss) = 1 and propagates to every parameter.
  void backward(Var loss);

  // Zero tensor of the right shape if the node received no gradient.
  Tensor grad(Var v) const;
  ParamMap parameter_grads() const;

  std::size_t size() const noexcept { return nodes_.size(); }

  // "op#index" of the first node whose value has a NaN/Inf, if any.
  std::optional<std::string> first_non_finite() const;

 private:
  struct Node {
    std::string op;
    Tensor value;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
    std::string param_name;
  };

  std::vector<Node> nodes_;
  std::vector<std::optional<Tensor>> grads_;
  std::map<std::string, std::size_t> params_;
};

// ---- primitives ----------------------------------------------------------

// y = W x + b with x [n], W [m x n], b [m].
Var affine(Var x, Var W, Var b);
Var tanh_elem(Var x);
// Subgradient 0 at x == 0.
Var relu_elem(Var x);

inline constexpr double kEpsNorm = 1e-12;
// x / ||x||_2; throws DegenerateEmbeddingError when ||x|| <= kEpsNorm.
Var l2_normalize(Var x);

// Flattens every input and joins them into one vector.
Var concat(std::span<const Var> parts);
Var concat(std::initializer_list<Var> parts);
Var reshape(Var x, Shape shape);
// Contiguous run of `length` flat entries starting at `offset`, as a vector.
Var slice(Var x, std::size_t offset, std::size_t length);
// Concatenates equal-length vectors into a [rows x n] matrix.
Var stack_rows(std::span<const Var> rows);

Var add(Var a, Var b);
Var scale(Var a, double factor);
Var mean(Var x);
Var mse(Var a, Var b);
Var softmax_cross_entropy(Var logits, std::size_t label);
// Value copy with no gradient path.
Var detach(Var x);

// Scalar value of a one-element node.
double scalar(Var v);

// ---- finite-difference checking ------------------------------------------

struct GradCheckReport {
  std::map<std::string, double> max_rel_error;
  ParamMap analytic;
  double worst = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

using GraphBuilder = std::function<Var(Tape&, const ParamMap&)>;

inline constexpr double kGradCheckStep = 1e-5;

// Compares backward() against central differences for every parameter entry.
// Relative error is |a - n| / max(1e-8, |a| + |n|).
GradCheckReport check_gradients(const GraphBuilder& build, const ParamMap& params, double h = kGradCheckStep);

double relative_error(double analytic, double numeric);

}  // namespace p2c
