#include "umst/kernels.hpp"

#include <cmath>
#include <cstring>

// Reference kernels. These fix the exact floating-point semantics every
// other backend has to reproduce bit for bit.

namespace umst::kern {
namespace {

void matmul_scalar(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n) {
  std::memset(c, 0, m * n * sizeof(double));
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = arow[kk];
      const double* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) {
        crow[j] += aik * brow[j];
      }
    }
  }
}

void transpose_scalar(const double* a, double* out, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
}

void add_scalar(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_scalar(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_scalar(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void scale_scalar(const double* a, double s, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void relu_scalar(const double* x, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_grad_scalar(const double* x, const double* g, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? g[i] : 0.0;
}

void adam_scalar(double* theta, double* m, double* v, const double* g,
                 std::size_t n, double lr, double beta1, double beta2,
                 double eps, double bc1, double bc2) {
  const double om1 = 1.0 - beta1;
  const double om2 = 1.0 - beta2;
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + om1 * g[i];
    v[i] = beta2 * v[i] + om2 * (g[i] * g[i]);
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    theta[i] = theta[i] - lr * (mhat / (std::sqrt(vhat) + eps));
  }
}

}  // namespace

const Kernels& scalar_kernels() {
  static const Kernels k = {
      "scalar",      matmul_scalar, transpose_scalar, add_scalar,
      sub_scalar,    mul_scalar,    scale_scalar,     axpy_scalar,
      relu_scalar,   relu_grad_scalar, adam_scalar,
  };
  return k;
}

}  // namespace umst::kern
