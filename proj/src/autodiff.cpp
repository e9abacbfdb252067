#include "umst/autodiff.hpp"

#include <cmath>
#include <cstdint>
#include <unordered_set>
#include <utility>

#include "umst/kernels.hpp"

namespace umst {

namespace detail {

struct Node {
  Tensor value;
  Tensor leaf_grad;  // free leaves only
  Parameter* param = nullptr;
  bool requires = false;
  bool is_leaf = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Tensor&)> backprop;
  // per-backward-pass scratch
  Tensor work;
  std::uint64_t stamp = 0;
};

}  // namespace detail

namespace {

std::uint64_t g_pass = 0;

using detail::Node;

void add_work(Node* n, const Tensor& g, double alpha = 1.0) {
  if (n->stamp != g_pass) {
    n->work = Tensor(n->value.shape());
    n->stamp = g_pass;
  }
  kern::active().axpy(alpha, g.data(), n->work.data(),
                      static_cast<std::size_t>(g.numel()));
}

std::size_t sz(long v) { return static_cast<std::size_t>(v); }

}  // namespace

const Tensor& Var::value() const { return n_->value; }

bool Var::requires_grad() const { return n_ && n_->requires; }

const Tensor& Var::grad() const {
  if (!n_ || !n_->is_leaf)
    throw ShapeError("grad() is only available on leaf variables");
  if (n_->param) return n_->param->grad;
  return n_->leaf_grad;
}

Var constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  return Var(std::move(n));
}

Var leaf(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->leaf_grad = Tensor(n->value.shape());
  n->requires = true;
  n->is_leaf = true;
  return Var(std::move(n));
}

Var param_leaf(Parameter& p) {
  auto n = std::make_shared<Node>();
  n->value = p.value;
  n->param = &p;
  n->requires = p.trainable;
  n->is_leaf = true;
  return Var(std::move(n));
}

Var Tape::use(Parameter& p) {
  auto it = bound_.find(&p);
  if (it != bound_.end()) return it->second;
  Var v = param_leaf(p);
  bound_.emplace(&p, v);
  return v;
}

Var make_op(Tensor value, std::vector<Var> parents,
            std::function<void(const Tensor&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const Var& p : parents)
    if (p.requires_grad()) {
      n->requires = true;
      break;
    }
  if (n->requires) {
    n->parents.reserve(parents.size());
    for (Var& p : parents)
      if (p.requires_grad()) n->parents.push_back(p.n_);
    n->backprop = std::move(backprop);
  }
  return Var(std::move(n));
}

void accumulate_grad(const Var& v, const Tensor& g) {
  if (v.requires_grad()) add_work(v.n_.get(), g);
}

namespace {

void accumulate_grad_scaled(const Var& v, const Tensor& g, double alpha) {
  if (v.requires_grad()) add_work(v.n_.get(), g, alpha);
}

}  // namespace

void backward(const Var& loss) {
  if (!loss.defined()) throw ShapeError("backward: undefined loss");
  Node* root = loss.n_.get();
  if (root->value.numel() != 1)
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     root->value.shape_str());
  if (!root->requires) return;

  ++g_pass;

  // post-order DFS: parents appear before children in `order`
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& top = stack.back();
    Node* n = top.first;
    if (top.second < n->parents.size()) {
      Node* p = n->parents[top.second++].get();
      if (p->requires && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  add_work(root, Tensor::scalar(1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->stamp != g_pass) continue;  // unreachable from the seeded root
    if (n->param) {
      kern::active().axpy(1.0, n->work.data(), n->param->grad.data(),
                          sz(n->work.numel()));
    } else if (n->is_leaf) {
      kern::active().axpy(1.0, n->work.data(), n->leaf_grad.data(),
                          sz(n->work.numel()));
    } else if (n->backprop) {
      n->backprop(n->work);
    }
    n->work = Tensor();  // release scratch
  }
}

// ---- operations -----------------------------------------------------------

namespace {

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw ShapeError(std::string(op) + ": expected a matrix, got shape " +
                     t.shape_str());
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() +
                     " vs " + b.shape_str());
}

// rank-1 inputs are treated as a single row by the row-wise ops
std::pair<long, long> row_view(const Tensor& t, const char* op) {
  if (t.rank() == 1) return {1, t.dim(0)};
  if (t.rank() == 2) return {t.rows(), t.cols()};
  throw ShapeError(std::string(op) + ": expected rank 1 or 2, got shape " +
                   t.shape_str());
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank2(A, "matmul");
  require_rank2(B, "matmul");
  if (A.cols() != B.rows())
    throw ShapeError("matmul: incompatible shapes " + A.shape_str() + " and " +
                     B.shape_str());
  const long m = A.rows(), k = A.cols(), n = B.cols();
  Tensor out({m, n});
  kern::active().matmul(A.data(), B.data(), out.data(), sz(m), sz(k), sz(n));
  return make_op(std::move(out), {a, b}, [a, b, m, k, n](const Tensor& g) {
    const auto& K = kern::active();
    if (a.requires_grad()) {
      Tensor bt({n, k});
      K.transpose(b.value().data(), bt.data(), sz(k), sz(n));
      Tensor da({m, k});
      K.matmul(g.data(), bt.data(), da.data(), sz(m), sz(n), sz(k));
      accumulate_grad(a, da);
    }
    if (b.requires_grad()) {
      Tensor at({k, m});
      K.transpose(a.value().data(), at.data(), sz(m), sz(k));
      Tensor db({k, n});
      K.matmul(at.data(), g.data(), db.data(), sz(k), sz(m), sz(n));
      accumulate_grad(b, db);
    }
  });
}

Var transpose(const Var& a) {
  const Tensor& A = a.value();
  require_rank2(A, "transpose");
  const long m = A.rows(), n = A.cols();
  Tensor out({n, m});
  kern::active().transpose(A.data(), out.data(), sz(m), sz(n));
  return make_op(std::move(out), {a}, [a, m, n](const Tensor& g) {
    Tensor gt({m, n});
    kern::active().transpose(g.data(), gt.data(), sz(n), sz(m));
    accumulate_grad(a, gt);
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out(a.value().shape());
  kern::active().add(a.value().data(), b.value().data(), out.data(),
                     sz(out.numel()));
  return make_op(std::move(out), {a, b}, [a, b](const Tensor& g) {
    accumulate_grad(a, g);
    accumulate_grad(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out(a.value().shape());
  kern::active().sub(a.value().data(), b.value().data(), out.data(),
                     sz(out.numel()));
  return make_op(std::move(out), {a, b}, [a, b](const Tensor& g) {
    accumulate_grad(a, g);
    accumulate_grad_scaled(b, g, -1.0);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out(a.value().shape());
  kern::active().mul(a.value().data(), b.value().data(), out.data(),
                     sz(out.numel()));
  return make_op(std::move(out), {a, b}, [a, b](const Tensor& g) {
    const auto& K = kern::active();
    if (a.requires_grad()) {
      Tensor da(g.shape());
      K.mul(g.data(), b.value().data(), da.data(), sz(g.numel()));
      accumulate_grad(a, da);
    }
    if (b.requires_grad()) {
      Tensor db(g.shape());
      K.mul(g.data(), a.value().data(), db.data(), sz(g.numel()));
      accumulate_grad(b, db);
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out(a.value().shape());
  kern::active().scale(a.value().data(), s, out.data(), sz(out.numel()));
  return make_op(std::move(out), {a}, [a, s](const Tensor& g) {
    accumulate_grad_scaled(a, g, s);
  });
}

Var add_rows(const Var& x, const Var& bias) {
  const Tensor& X = x.value();
  const Tensor& B = bias.value();
  require_rank2(X, "add_rows");
  if (B.rank() != 1 || B.dim(0) != X.cols())
    throw ShapeError("add_rows: bias shape " + B.shape_str() +
                     " does not match row width of " + X.shape_str());
  const long m = X.rows(), n = X.cols();
  Tensor out({m, n});
  for (long i = 0; i < m; ++i)
    kern::active().add(X.data() + i * n, B.data(), out.data() + i * n, sz(n));
  return make_op(std::move(out), {x, bias}, [x, bias, m, n](const Tensor& g) {
    accumulate_grad(x, g);
    if (bias.requires_grad()) {
      Tensor db({n});
      for (long i = 0; i < m; ++i)
        kern::active().axpy(1.0, g.data() + i * n, db.data(), sz(n));
      accumulate_grad(bias, db);
    }
  });
}

Var relu(const Var& x) {
  Tensor out(x.value().shape());
  kern::active().relu(x.value().data(), out.data(), sz(out.numel()));
  return make_op(std::move(out), {x}, [x](const Tensor& g) {
    Tensor dx(g.shape());
    kern::active().relu_grad(x.value().data(), g.data(), dx.data(),
                             sz(g.numel()));
    accumulate_grad(x, dx);
  });
}

Var softmax_rows(const Var& x) {
  const Tensor& X = x.value();
  auto [m, n] = row_view(X, "softmax_rows");
  if (!X.all_finite())
    throw std::invalid_argument("softmax_rows: non-finite input");
  Tensor out(X.shape());
  for (long i = 0; i < m; ++i) {
    const double* xr = X.data() + i * n;
    double* yr = out.data() + i * n;
    double mx = xr[0];
    for (long j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (long j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    for (long j = 0; j < n; ++j) yr[j] /= sum;
  }
  Var y = make_op(std::move(out), {x}, nullptr);
  // rebuild closure with access to the output value
  return y;
}

Var log_softmax_rows(const Var& x) {
  const Tensor& X = x.value();
  auto [m, n] = row_view(X, "log_softmax_rows");
  if (!X.all_finite())
    throw std::invalid_argument("log_softmax_rows: non-finite input");
  Tensor out(X.shape());
  for (long i = 0; i < m; ++i) {
    const double* xr = X.data() + i * n;
    double* yr = out.data() + i * n;
    double mx = xr[0];
    for (long j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (long j = 0; j < n; ++j) sum += std::exp(xr[j] - mx);
    const double lse = mx + std::log(sum);
    for (long j = 0; j < n; ++j) yr[j] = xr[j] - lse;
  }
  Tensor cached = out;
  return make_op(std::move(out), {x}, [x, cached, m, n](const Tensor& g) {
    Tensor dx(g.shape());
    for (long i = 0; i < m; ++i) {
      const double* gr = g.data() + i * n;
      const double* yr = cached.data() + i * n;
      double dot = 0.0;
      for (long j = 0; j < n; ++j) dot += gr[j];
      double* dr = dx.data() + i * n;
      for (long j = 0; j < n; ++j) dr[j] = gr[j] - std::exp(yr[j]) * dot;
    }
    accumulate_grad(x, dx);
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Tensor& X = x.value();
  auto [m, d] = row_view(X, "layer_norm");
  const Tensor& G = gamma.value();
  const Tensor& B = beta.value();
  if (G.rank() != 1 || G.dim(0) != d || B.rank() != 1 || B.dim(0) != d)
    throw ShapeError("layer_norm: gamma " + G.shape_str() + " / beta " +
                     B.shape_str() + " do not match feature width of " +
                     X.shape_str());
  Tensor out(X.shape());
  Tensor xhat(X.shape());
  std::vector<double> inv_sigma(sz(m));
  for (long i = 0; i < m; ++i) {
    const double* xr = X.data() + i * d;
    double mu = 0.0;
    for (long j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (long j = 0; j < d; ++j) {
      const double c = xr[j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_sigma[sz(i)] = inv;
    double* hr = xhat.data() + i * d;
    double* yr = out.data() + i * d;
    for (long j = 0; j < d; ++j) {
      hr[j] = (xr[j] - mu) * inv;
      yr[j] = hr[j] * G.at(j) + B.at(j);
    }
  }
  return make_op(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat, inv_sigma, m, d](const Tensor& g) {
        const Tensor& G = gamma.value();
        if (gamma.requires_grad()) {
          Tensor dg({d});
          for (long i = 0; i < m; ++i)
            for (long j = 0; j < d; ++j)
              dg.at(j) += g.at(i * d + j) * xhat.at(i * d + j);
          accumulate_grad(gamma, dg);
        }
        if (beta.requires_grad()) {
          Tensor db({d});
          for (long i = 0; i < m; ++i)
            for (long j = 0; j < d; ++j) db.at(j) += g.at(i * d + j);
          accumulate_grad(beta, db);
        }
        if (x.requires_grad()) {
          Tensor dx(g.shape());
          std::vector<double> gg(sz(d));
          for (long i = 0; i < m; ++i) {
            double mean_gg = 0.0, mean_ggx = 0.0;
            for (long j = 0; j < d; ++j) {
              gg[sz(j)] = g.at(i * d + j) * G.at(j);
              mean_gg += gg[sz(j)];
              mean_ggx += gg[sz(j)] * xhat.at(i * d + j);
            }
            mean_gg /= static_cast<double>(d);
            mean_ggx /= static_cast<double>(d);
            for (long j = 0; j < d; ++j)
              dx.at(i * d + j) = inv_sigma[sz(i)] *
                                 (gg[sz(j)] - mean_gg -
                                  xhat.at(i * d + j) * mean_ggx);
          }
          accumulate_grad(x, dx);
        }
      });
}

Var linear(const Var& x, const Var& w) { return matmul(x, w); }

Var linear(const Var& x, const Var& w, const Var& b) {
  return add_rows(matmul(x, w), b);
}

Var embed_rows(const Var& table, std::span<const int> ids) {
  const Tensor& T = table.value();
  require_rank2(T, "embed_rows");
  const long v = T.rows(), d = T.cols();
  const long L = static_cast<long>(ids.size());
  Tensor out({L, d});
  for (long i = 0; i < L; ++i) {
    const int id = ids[sz(i)];
    if (id < 0 || id >= v)
      throw std::out_of_range("embed_rows: id " + std::to_string(id) +
                              " outside table " + T.shape_str());
    for (long j = 0; j < d; ++j) out.at(i, j) = T.at(id, j);
  }
  std::vector<int> ids_copy(ids.begin(), ids.end());
  return make_op(std::move(out), {table},
                 [table, ids_copy, v, d, L](const Tensor& g) {
                   Tensor dt({v, d});
                   for (long i = 0; i < L; ++i) {
                     const long id = ids_copy[sz(i)];
                     for (long j = 0; j < d; ++j)
                       dt.at(id, j) += g.at(i * d + j);
                   }
                   accumulate_grad(table, dt);
                 });
}

Var slice_cols(const Var& x, long first, long count) {
  const Tensor& X = x.value();
  require_rank2(X, "slice_cols");
  const long m = X.rows(), n = X.cols();
  if (first < 0 || count <= 0 || first + count > n)
    throw ShapeError("slice_cols: range [" + std::to_string(first) + "," +
                     std::to_string(first + count) + ") outside " +
                     X.shape_str());
  Tensor out({m, count});
  for (long i = 0; i < m; ++i)
    for (long j = 0; j < count; ++j) out.at(i, j) = X.at(i, first + j);
  return make_op(std::move(out), {x}, [x, first, count, m, n](const Tensor& g) {
    Tensor dx({m, n});
    for (long i = 0; i < m; ++i)
      for (long j = 0; j < count; ++j) dx.at(i, first + j) = g.at(i * count + j);
    accumulate_grad(x, dx);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const long m = parts[0].value().rows();
  long total = 0;
  for (const Var& p : parts) {
    require_rank2(p.value(), "concat_cols");
    if (p.value().rows() != m)
      throw ShapeError("concat_cols: row mismatch " +
                       parts[0].value().shape_str() + " vs " +
                       p.value().shape_str());
    total += p.value().cols();
  }
  Tensor out({m, total});
  long off = 0;
  for (const Var& p : parts) {
    const long c = p.value().cols();
    for (long i = 0; i < m; ++i)
      for (long j = 0; j < c; ++j) out.at(i, off + j) = p.value().at(i, j);
    off += c;
  }
  std::vector<Var> parents(parts.begin(), parts.end());
  return make_op(std::move(out), parents, [parents, m, total](const Tensor& g) {
    long off = 0;
    for (const Var& p : parents) {
      const long c = p.value().cols();
      if (p.requires_grad()) {
        Tensor dp({m, c});
        for (long i = 0; i < m; ++i)
          for (long j = 0; j < c; ++j) dp.at(i, j) = g.at(i * total + off + j);
        accumulate_grad(p, dp);
      }
      off += c;
    }
  });
}

Var sum_all(const Var& x) {
  double s = 0.0;
  const Tensor& X = x.value();
  for (long i = 0; i < X.numel(); ++i) s += X.at(i);
  return make_op(Tensor::scalar(s), {x}, [x](const Tensor& g) {
    accumulate_grad(x, Tensor::full(x.value().shape(), g.at(0)));
  });
}

Var dropout(const Var& x, double rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("dropout: rate must be in [0,1)");
  if (!training || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor mask(x.value().shape());
  for (long i = 0; i < mask.numel(); ++i)
    mask.at(i) = rng.uniform() >= rate ? keep_scale : 0.0;
  Tensor out(x.value().shape());
  kern::active().mul(x.value().data(), mask.data(), out.data(),
                     sz(out.numel()));
  return make_op(std::move(out), {x}, [x, mask](const Tensor& g) {
    Tensor dx(g.shape());
    kern::active().mul(g.data(), mask.data(), dx.data(), sz(g.numel()));
    accumulate_grad(x, dx);
  });
}

// ---- finite differences ----------------------------------------------------

double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max(1e-8, std::fabs(a) + std::fabs(b));
}

FdReport finite_diff_check(const std::function<Var()>& build_loss,
                           std::span<Parameter* const> params, double h,
                           double tol) {
  for (Parameter* p : params) p->zero_grad();
  backward(build_loss());

  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  FdReport report;
  report.tol = tol;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter* p = params[pi];
    FdEntry entry{p->name, 0.0, true};
    for (long j = 0; j < p->numel(); ++j) {
      const double orig = p->value.at(j);
      p->value.at(j) = orig + h;
      const double f1 = build_loss().value().at(0);
      p->value.at(j) = orig - h;
      const double f2 = build_loss().value().at(0);
      p->value.at(j) = orig;
      const double fd = (f1 - f2) / (2.0 * h);
      entry.max_rel_err =
          std::max(entry.max_rel_err, rel_err(analytic[pi].at(j), fd));
    }
    entry.ok = entry.max_rel_err <= tol;
    report.worst = std::max(report.worst, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  report.passed = report.worst <= tol;
  return report;
}

}  // namespace umst
