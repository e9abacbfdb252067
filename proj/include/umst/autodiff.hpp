#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "umst/rng.hpp"
#include "umst/tensor.hpp"

namespace umst {

// Trainable array plus optimizer state. Layers hold Parameter pointers into
// a registry owned by the model.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor m, v;  // Adam first/second moments
  long step = 0;
  bool trainable = true;

  Parameter(std::string n, Tensor val)
      : name(std::move(n)),
        value(std::move(val)),
        grad(value.shape()),
        m(value.shape()),
        v(value.shape()) {}

  void zero_grad() { grad = Tensor(value.shape()); }
  long numel() const { return value.numel(); }
};

namespace detail {
struct Node;
}

// Handle into a per-forward computation tape. Node values are immutable
// once produced; backward() accumulates gradients into Parameters and into
// free leaves.
class Var {
 public:
  Var() = default;
  bool defined() const { return static_cast<bool>(n_); }
  const Tensor& value() const;
  // persistent gradient of a free leaf (accumulates across backward calls)
  const Tensor& grad() const;
  bool requires_grad() const;

 private:
  explicit Var(std::shared_ptr<detail::Node> n) : n_(std::move(n)) {}
  std::shared_ptr<detail::Node> n_;

  friend Var constant(Tensor t);
  friend Var leaf(Tensor t);
  friend Var param_leaf(Parameter& p);
  friend Var make_op(Tensor value, std::vector<Var> parents,
                     std::function<void(const Tensor&)> backprop);
  friend void backward(const Var& loss);
  friend void accumulate_grad(const Var& v, const Tensor& g);
};

Var constant(Tensor t);   // no gradient tracking
Var leaf(Tensor t);       // tracked free tensor
Var param_leaf(Parameter& p);

// ---- differentiable operations ------------------------------------------

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // elementwise
Var scale(const Var& a, double s);
Var add_rows(const Var& x, const Var& bias);  // bias broadcast over rows
Var relu(const Var& x);
Var softmax_rows(const Var& x);
Var log_softmax_rows(const Var& x);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-6);
Var linear(const Var& x, const Var& w);
Var linear(const Var& x, const Var& w, const Var& b);
Var embed_rows(const Var& table, std::span<const int> ids);
Var slice_cols(const Var& x, long first, long count);
Var concat_cols(std::span<const Var> parts);
Var sum_all(const Var& x);  // -> shape [1]
Var dropout(const Var& x, double rate, bool training, Rng& rng);

// Reverse-mode sweep from a scalar loss. Grad contributions accumulate into
// Parameter::grad and free-leaf grads; repeated calls accumulate again.
void backward(const Var& loss);

// Per-forward binding of Parameters to tape leaves. The same Parameter maps
// to the same leaf within one tape, so shared weights accumulate gradient
// from every use site.
class Tape {
 public:
  Var use(Parameter& p);

 private:
  std::unordered_map<const Parameter*, Var> bound_;
};

// ---- finite-difference verification --------------------------------------

struct FdEntry {
  std::string name;
  double max_rel_err = 0.0;
  bool ok = true;
};

struct FdReport {
  std::vector<FdEntry> entries;
  double worst = 0.0;
  double tol = 0.0;
  bool passed = true;
};

// Central differences (f(t+h)-f(t-h))/2h against reverse-mode gradients for
// every element of every listed parameter. build_loss must rebuild the full
// forward graph from current parameter values and be deterministic.
// Relative error: |a-b| / max(1e-8, |a|+|b|).
FdReport finite_diff_check(const std::function<Var()>& build_loss,
                           std::span<Parameter* const> params, double h,
                           double tol);

double rel_err(double a, double b);

}  // namespace umst
