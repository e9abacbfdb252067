#pragma once

#include <cstddef>
#include <string_view>

namespace umst::kern {

// Raw-pointer kernels over row-major double buffers. The scalar table
// defines the semantics; SIMD variants must produce bitwise-identical
// results for every input (enforced by the equivalence tests). This is why
// the AVX2 kernels use separate mul/add rather than FMA, and why the whole
// project builds with -ffp-contract=off.
struct Kernels {
  const char* name;

  // c = a(mxk) * b(kxn); c is overwritten. Per-element accumulation runs in
  // k order for every variant.
  void (*matmul)(const double* a, const double* b, double* c,
                 std::size_t m, std::size_t k, std::size_t n);
  // out(nxm) = a(mxn)^T
  void (*transpose)(const double* a, double* out, std::size_t m, std::size_t n);

  void (*add)(const double* a, const double* b, double* out, std::size_t n);
  void (*sub)(const double* a, const double* b, double* out, std::size_t n);
  void (*mul)(const double* a, const double* b, double* out, std::size_t n);
  void (*scale)(const double* a, double s, double* out, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  void (*relu)(const double* x, double* out, std::size_t n);
  // out = x > 0 ? g : 0
  void (*relu_grad)(const double* x, const double* g, double* out, std::size_t n);
  // bias-corrected Adam; bc1 = 1 - beta1^t, bc2 = 1 - beta2^t
  void (*adam)(double* theta, double* m, double* v, const double* g,
               std::size_t n, double lr, double beta1, double beta2,
               double eps, double bc1, double bc2);
};

const Kernels& scalar_kernels();

#if defined(__x86_64__) || defined(_M_X64)
const Kernels& avx2_kernels();
#endif

bool avx2_supported();

// Active dispatch target. Defaults to the best supported backend; the
// UMST_KERNELS environment variable ("scalar", "avx2", "auto") overrides it
// at startup.
const Kernels& active();
bool select_backend(std::string_view name);
std::string_view active_backend_name();

}  // namespace umst::kern
