#include <cstdlib>
#include <string_view>

#include "ftllb/simd.hpp"

namespace ftllb::simd {

#if defined(FTLLB_HAVE_AVX2)
const KernelTable& avx2_kernel_table();
#endif

const KernelTable* avx2_kernels() {
#if defined(FTLLB_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma") &&
                                 __builtin_cpu_supports("popcnt");
  return supported ? &avx2_kernel_table() : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable& active_kernels() {
  static const KernelTable& table = [] () -> const KernelTable& {
    const char* env = std::getenv("FTLLB_SIMD");
    if (env != nullptr && std::string_view(env) == "scalar") return scalar_kernels();
    if (const KernelTable* fast = avx2_kernels()) return *fast;
    return scalar_kernels();
  }();
  return table;
}

}  // namespace ftllb::simd
