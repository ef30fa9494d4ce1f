#include "p2c/tape.hpp"

#include <algorithm>
#include <cmath>

namespace p2c {

const Tensor& Var::value() const { return tape_->value(*this); }

Var Tape::constant(Tensor value, std::string op) {
  nodes_.push_back(Node{std::move(op), std::move(value), {}, {}, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(const std::string& name, Tensor value) {
  if (params_.contains(name)) throw std::invalid_argument("parameter registered twice: " + name);
  nodes_.push_back(Node{"parameter", std::move(value), {}, {}, true, name});
  params_[name] = nodes_.size() - 1;
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string op, Tensor value, std::vector<Var> parents, BackwardFn backward) {
  Node node{std::move(op), std::move(value), {}, {}, false, {}};
  for (const Var& p : parents) {
    if (p.tape_ != this) throw std::invalid_argument("operand of " + node.op + " belongs to another tape");
    node.parents.push_back(p.id_);
    node.requires_grad = node.requires_grad || nodes_[p.id_].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(Var v) const { return nodes_.at(v.id_).value; }

bool Tape::requires_grad(Var v) const { return nodes_.at(v.id_).requires_grad; }

void Tape::backward(Var loss) {
  if (loss.tape_ != this) throw std::invalid_argument("backward: loss belongs to another tape");
  const Tensor& lv = value(loss);
  if (lv.size() != 1) throw DimensionError("backward: loss must be scalar, got " + shape_str(lv.shape()));

  grads_.assign(nodes_.size(), std::nullopt);
  grads_[loss.id_] = Tensor(lv.shape(), {1.0});

  std::vector<const Tensor*> inputs;
  std::vector<Tensor*> input_grads;
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || !node.backward || !grads_[i]) continue;
    inputs.clear();
    input_grads.clear();
    for (std::size_t p : node.parents) {
      inputs.push_back(&nodes_[p].value);
      if (!nodes_[p].requires_grad) {
        input_grads.push_back(nullptr);
        continue;
      }
      if (!grads_[p]) grads_[p] = Tensor(nodes_[p].value.shape());
      input_grads.push_back(&*grads_[p]);
    }
    node.backward(BackwardCtx{node.value, *grads_[i], inputs, input_grads});
  }
}

Tensor Tape::grad(Var v) const {
  if (v.id_ < grads_.size() && grads_[v.id_]) return *grads_[v.id_];
  return Tensor(value(v).shape());
}

ParamMap Tape::parameter_grads() const {
  ParamMap out;
  for (const auto& [name, id] : params_) {
    if (id < grads_.size() && grads_[id]) {
      out.emplace(name, *grads_[id]);
    } else {
      out.emplace(name, Tensor(nodes_[id].value.shape()));
    }
  }
  return out;
}

std::optional<std::string> Tape::first_non_finite() const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].value.all_finite()) {
      std::string label = nodes_[i].op + "#" + std::to_string(i);
      if (!nodes_[i].param_name.empty()) label += " (" + nodes_[i].param_name + ")";
      return label;
    }
  }
  return std::nullopt;
}

// ---- primitives ----------------------------------------------------------

Var affine(Var x, Var W, Var b) {
  const Tensor& xv = x.value();
  const Tensor& Wv = W.value();
  const Tensor& bv = b.value();
  if (xv.rank() != 1 || Wv.rank() != 2 || bv.rank() != 1 || Wv.dim(1) != xv.dim(0) || Wv.dim(0) != bv.dim(0)) {
    throw DimensionError("affine: W " + shape_str(Wv.shape()) + " incompatible with x " + shape_str(xv.shape()) +
                         " and b " + shape_str(bv.shape()));
  }
  const std::size_t m = Wv.dim(0), n = Wv.dim(1);
  Tensor y({m});
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += Wv[i * n + j] * xv[j];
    y[i] = acc + bv[i];
  }
  return x.tape().record("affine", std::move(y), {x, W, b}, [m, n](const BackwardCtx& c) {
    const Tensor& xin = *c.in[0];
    const Tensor& win = *c.in[1];
    if (Tensor* gx = c.in_grad[0]) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) (*gx)[j] += win[i * n + j] * c.grad[i];
      }
    }
    if (Tensor* gW = c.in_grad[1]) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) (*gW)[i * n + j] += c.grad[i] * xin[j];
      }
    }
    if (Tensor* gb = c.in_grad[2]) {
      for (std::size_t i = 0; i < m; ++i) (*gb)[i] += c.grad[i];
    }
  });
}

Var tanh_elem(Var x) {
  Tensor y = x.value();
  for (double& v : y.data()) v = std::tanh(v);
  return x.tape().record("tanh", std::move(y), {x}, [](const BackwardCtx& c) {
    for (std::size_t i = 0; i < c.out.size(); ++i) (*c.in_grad[0])[i] += c.grad[i] * (1.0 - c.out[i] * c.out[i]);
  });
}

Var relu_elem(Var x) {
  Tensor y = x.value();
  for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
  return x.tape().record("relu", std::move(y), {x}, [](const BackwardCtx& c) {
    const Tensor& xin = *c.in[0];
    for (std::size_t i = 0; i < xin.size(); ++i) {
      if (xin[i] > 0.0) (*c.in_grad[0])[i] += c.grad[i];
    }
  });
}

Var l2_normalize(Var x) {
  const Tensor& xv = x.value();
  const double n = xv.norm();
  if (n <= kEpsNorm) {
    throw DegenerateEmbeddingError("l2_normalize: norm " + std::to_string(n) + " at or below eps_norm");
  }
  Tensor y = xv;
  for (double& v : y.data()) v /= n;
  return x.tape().record("l2_normalize", std::move(y), {x}, [n](const BackwardCtx& c) {
    double dot = 0.0;
    for (std::size_t i = 0; i < c.out.size(); ++i) dot += c.out[i] * c.grad[i];
    for (std::size_t i = 0; i < c.out.size(); ++i) (*c.in_grad[0])[i] += (c.grad[i] - c.out[i] * dot) / n;
  });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  std::vector<double> data;
  for (const Var& p : parts) {
    const auto& v = p.value().values();
    data.insert(data.end(), v.begin(), v.end());
  }
  const std::size_t total = data.size();
  return parts.front().tape().record("concat", Tensor({total}, std::move(data)),
                                     std::vector<Var>(parts.begin(), parts.end()), [](const BackwardCtx& c) {
                                       std::size_t offset = 0;
                                       for (std::size_t k = 0; k < c.in.size(); ++k) {
                                         const std::size_t len = c.in[k]->size();
                                         if (Tensor* gk = c.in_grad[k]) {
                                           for (std::size_t i = 0; i < len; ++i) (*gk)[i] += c.grad[offset + i];
                                         }
                                         offset += len;
                                       }
                                     });
}

Var concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }

Var reshape(Var x, Shape shape) {
  Tensor y = x.value().reshaped(std::move(shape));
  return x.tape().record("reshape", std::move(y), {x}, [](const BackwardCtx& c) {
    for (std::size_t i = 0; i < c.grad.size(); ++i) (*c.in_grad[0])[i] += c.grad[i];
  });
}

Var slice(Var x, std::size_t offset, std::size_t length) {
  const Tensor& xv = x.value();
  if (length == 0 || offset + length > xv.size()) {
    throw DimensionError("slice: [" + std::to_string(offset) + ", " + std::to_string(offset + length) +
                         ") out of range for " + shape_str(xv.shape()));
  }
  const auto begin = xv.values().begin() + static_cast<std::ptrdiff_t>(offset);
  Tensor y({length}, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(length)));
  return x.tape().record("slice", std::move(y), {x}, [offset](const BackwardCtx& c) {
    for (std::size_t i = 0; i < c.grad.size(); ++i) (*c.in_grad[0])[offset + i] += c.grad[i];
  });
}

Var stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw DimensionError("stack_rows: no rows");
  const std::size_t n = rows.front().value().size();
  for (const Var& r : rows) {
    if (r.value().rank() != 1 || r.value().size() != n) {
      throw DimensionError("stack_rows: row " + shape_str(r.value().shape()) + " vs [" + std::to_string(n) + "]");
    }
  }
  return reshape(concat(rows), {rows.size(), n});
}

static void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

Var add(Var a, Var b) {
  require_same_shape("add", a.value(), b.value());
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return a.tape().record("add", std::move(y), {a, b}, [](const BackwardCtx& c) {
    for (Tensor* gi : c.in_grad) {
      if (!gi) continue;
      for (std::size_t i = 0; i < c.grad.size(); ++i) (*gi)[i] += c.grad[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tensor y = a.value();
  for (double& v : y.data()) v *= factor;
  return a.tape().record("scale", std::move(y), {a}, [factor](const BackwardCtx& c) {
    for (std::size_t i = 0; i < c.grad.size(); ++i) (*c.in_grad[0])[i] += factor * c.grad[i];
  });
}

Var mean(Var x) {
  const Tensor& xv = x.value();
  double s = 0.0;
  for (double v : xv.values()) s += v;
  const double count = static_cast<double>(xv.size());
  return x.tape().record("mean", Tensor({1}, {s / count}), {x}, [count](const BackwardCtx& c) {
    for (double& v : c.in_grad[0]->data()) v += c.grad[0] / count;
  });
}

Var mse(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape("mse", av, bv);
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = av[i] - bv[i];
    s += d * d;
  }
  const double count = static_cast<double>(av.size());
  return a.tape().record("mse", Tensor({1}, {s / count}), {a, b}, [count](const BackwardCtx& c) {
    const Tensor& ain = *c.in[0];
    const Tensor& bin = *c.in[1];
    for (std::size_t i = 0; i < ain.size(); ++i) {
      const double d = 2.0 * (ain[i] - bin[i]) / count * c.grad[0];
      if (c.in_grad[0]) (*c.in_grad[0])[i] += d;
      if (c.in_grad[1]) (*c.in_grad[1])[i] -= d;
    }
  });
}

Var softmax_cross_entropy(Var logits, std::size_t label) {
  const Tensor& lv = logits.value();
  if (lv.rank() != 1) throw DimensionError("softmax_cross_entropy: logits must be a vector");
  if (label >= lv.size()) {
    throw IndexError("softmax_cross_entropy: label " + std::to_string(label) + " out of range for " +
                     std::to_string(lv.size()) + " classes");
  }
  const double mx = *std::max_element(lv.values().begin(), lv.values().end());
  double z = 0.0;
  for (double v : lv.values()) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  return logits.tape().record("softmax_cross_entropy", Tensor({1}, {lse - lv[label]}), {logits},
                              [mx, z, label](const BackwardCtx& c) {
                                const Tensor& lin = *c.in[0];
                                for (std::size_t i = 0; i < lin.size(); ++i) {
                                  const double p = std::exp(lin[i] - mx) / z;
                                  (*c.in_grad[0])[i] += c.grad[0] * (p - (i == label ? 1.0 : 0.0));
                                }
                              });
}

Var detach(Var x) { return x.tape().constant(x.value(), "detach"); }

double scalar(Var v) {
  const Tensor& t = v.value();
  if (t.size() != 1) throw DimensionError("scalar: expected one element, got " + shape_str(t.shape()));
  return t[0];
}

// ---- finite-difference checking ------------------------------------------

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

static double finite_loss(Tape& tape, Var loss) {
  const double value = scalar(loss);
  if (!std::isfinite(value)) {
    auto where = tape.first_non_finite();
    throw NonFiniteError("check_gradients: non-finite loss" + (where ? " at " + *where : std::string()));
  }
  return value;
}

static double evaluate_loss(const GraphBuilder& build, const ParamMap& params) {
  Tape tape;
  Var loss = build(tape, params);
  return finite_loss(tape, loss);
}

GradCheckReport check_gradients(const GraphBuilder& build, const ParamMap& params, double h) {
  GradCheckReport report;
  {
    Tape tape;
    Var loss = build(tape, params);
    finite_loss(tape, loss);
    tape.backward(loss);
    report.analytic = tape.parameter_grads();
  }

  ParamMap work = params;
  for (const auto& [name, value] : params) {
    const auto found = report.analytic.find(name);
    const Tensor analytic = found != report.analytic.end() ? found->second : Tensor(value.shape());
    double worst = 0.0;
    std::size_t worst_i = 0;
    double worst_n = 0.0;
    for (std::size_t i = 0; i < value.size(); ++i) {
      Tensor& entry = work.at(name);
      const double orig = entry[i];
      entry[i] = orig + h;
      const double up = evaluate_loss(build, work);
      entry[i] = orig - h;
      const double down = evaluate_loss(build, work);
      entry[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double err = relative_error(analytic[i], numeric);
      if (err > worst || i == 0) {
        worst = err;
        worst_i = i;
        worst_n = numeric;
      }
    }
    report.max_rel_error[name] = worst;
    if (worst >= report.worst) {
      report.worst = worst;
      report.worst_param = name;
      report.worst_index = worst_i;
      report.worst_analytic = value.size() ? analytic[worst_i] : 0.0;
      report.worst_numeric = worst_n;
    }
  }
  return report;
}

}  // namespace p2c
