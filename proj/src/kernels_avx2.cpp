#if defined(__x86_64__) || defined(_M_X64)

#include "umst/kernels.hpp"

#include <immintrin.h>

#include <cmath>
#include <cstring>

// AVX2 variants. Vectorization always runs across independent output lanes
// and keeps the per-element operation order of the scalar reference, so the
// results are bitwise identical. No FMA: the scalar reference rounds after
// every multiply.

namespace umst::kern {
namespace {

void matmul_avx2(const double* a, const double* b, double* c,
                 std::size_t m, std::size_t k, std::size_t n) {
  std::memset(c, 0, m * n * sizeof(double));
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = arow[kk];
      const double* brow = b + kk * n;
      const __m256d av = _mm256_set1_pd(aik);
      std::size_t j = 0;
      for (; j + 4 <= n; j += 4) {
        __m256d bv = _mm256_loadu_pd(brow + j);
        __m256d cv = _mm256_loadu_pd(crow + j);
        cv = _mm256_add_pd(cv, _mm256_mul_pd(av, bv));
        _mm256_storeu_pd(crow + j, cv);
      }
      for (; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

void transpose_avx2(const double* a, double* out, std::size_t m, std::size_t n) {
  // pure permutation; nothing to vectorize profitably at these sizes
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
}

void add_avx2(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_avx2(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_avx2(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale_avx2(const double* a, double s, double* out, std::size_t n) {
  const __m256d sv = _mm256_set1_pd(s);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), sv));
  for (; i < n; ++i) out[i] = a[i] * s;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d yv = _mm256_loadu_pd(y + i);
    yv = _mm256_add_pd(yv, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
    _mm256_storeu_pd(y + i, yv);
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void relu_avx2(const double* x, double* out, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d xv = _mm256_loadu_pd(x + i);
    // maxpd(x, 0) picks 0 when x is not greater, matching (x > 0 ? x : 0)
    _mm256_storeu_pd(out + i, _mm256_max_pd(xv, zero));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_grad_avx2(const double* x, const double* g, double* out, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
    _mm256_storeu_pd(out + i, _mm256_and_pd(mask, _mm256_loadu_pd(g + i)));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? g[i] : 0.0;
}

void adam_avx2(double* theta, double* m, double* v, const double* g,
               std::size_t n, double lr, double beta1, double beta2,
               double eps, double bc1, double bc2) {
  const double om1 = 1.0 - beta1;
  const double om2 = 1.0 - beta2;
  const __m256d b1v = _mm256_set1_pd(beta1);
  const __m256d b2v = _mm256_set1_pd(beta2);
  const __m256d om1v = _mm256_set1_pd(om1);
  const __m256d om2v = _mm256_set1_pd(om2);
  const __m256d bc1v = _mm256_set1_pd(bc1);
  const __m256d bc2v = _mm256_set1_pd(bc2);
  const __m256d epsv = _mm256_set1_pd(eps);
  const __m256d lrv = _mm256_set1_pd(lr);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d gv = _mm256_loadu_pd(g + i);
    __m256d mv = _mm256_add_pd(_mm256_mul_pd(b1v, _mm256_loadu_pd(m + i)),
                               _mm256_mul_pd(om1v, gv));
    __m256d vv = _mm256_add_pd(_mm256_mul_pd(b2v, _mm256_loadu_pd(v + i)),
                               _mm256_mul_pd(om2v, _mm256_mul_pd(gv, gv)));
    _mm256_storeu_pd(m + i, mv);
    _mm256_storeu_pd(v + i, vv);
    __m256d mhat = _mm256_div_pd(mv, bc1v);
    __m256d vhat = _mm256_div_pd(vv, bc2v);
    __m256d den = _mm256_add_pd(_mm256_sqrt_pd(vhat), epsv);
    __m256d step = _mm256_mul_pd(lrv, _mm256_div_pd(mhat, den));
    _mm256_storeu_pd(theta + i, _mm256_sub_pd(_mm256_loadu_pd(theta + i), step));
  }
  for (; i < n; ++i) {
    m[i] = beta1 * m[i] + om1 * g[i];
    v[i] = beta2 * v[i] + om2 * (g[i] * g[i]);
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    theta[i] = theta[i] - lr * (mhat / (std::sqrt(vhat) + eps));
  }
}

}  // namespace

const Kernels& avx2_kernels() {
  static const Kernels k = {
      "avx2",      matmul_avx2, transpose_avx2, add_avx2,
      sub_avx2,    mul_avx2,    scale_avx2,     axpy_avx2,
      relu_avx2,   relu_grad_avx2, adam_avx2,
  };
  return k;
}

}  // namespace umst::kern

#endif  // x86_64
