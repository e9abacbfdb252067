#include "umst/kernels.hpp"

#include <cstdlib>

namespace umst::kern {

bool avx2_supported() {
#if (defined(__x86_64__) || defined(_M_X64)) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2") != 0;
#else
  return false;
#endif
}

namespace {

const Kernels* best_available() {
#if defined(__x86_64__) || defined(_M_X64)
  if (avx2_supported()) return &avx2_kernels();
#endif
  return &scalar_kernels();
}

const Kernels*& active_ptr() {
  static const Kernels* active = [] {
    if (const char* env = std::getenv("UMST_KERNELS")) {
      std::string_view name(env);
      if (name == "scalar") return &scalar_kernels();
#if defined(__x86_64__) || defined(_M_X64)
      if (name == "avx2" && avx2_supported()) return &avx2_kernels();
#endif
    }
    return best_available();
  }();
  return active;
}

}  // namespace

const Kernels& active() { return *active_ptr(); }

bool select_backend(std::string_view name) {
  if (name == "auto") {
    active_ptr() = best_available();
    return true;
  }
  if (name == "scalar") {
    active_ptr() = &scalar_kernels();
    return true;
  }
#if defined(__x86_64__) || defined(_M_X64)
  if (name == "avx2" && avx2_supported()) {
    active_ptr() = &avx2_kernels();
    return true;
  }
#endif
  return false;
}

std::string_view active_backend_name() { return active().name; }

}  // namespace umst::kern
