#pragma once

#include <cstddef>
#include <cstdint>

// Data-parallel inner loops used by the simulator and the eigensolver. Every
// kernel has a scalar reference implementation; vector variants are chosen at
// runtime and must agree with the reference (exactly for integer kernels,
// within reassociation error for floating-point reductions).

namespace ftllb::simd {

struct KernelTable {
  const char* name;

  /// Sum of values[i] over the set bits i of mask (bit i of word i / 64).
  /// Bits at positions >= n must be clear. The scalar variant adds in
  /// ascending index order.
  double (*masked_sum)(const std::uint64_t* mask, const double* values, std::size_t n);

  /// popcount(a & b) over `words` words.
  std::size_t (*popcount_and)(const std::uint64_t* a, const std::uint64_t* b, std::size_t words);

  /// Sum of values[index[k]] for k < count, ascending k in the scalar variant.
  double (*gather_sum)(const std::uint32_t* index, std::size_t count, const double* values);

  double (*dot)(const double* a, const double* b, std::size_t n);

  /// y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
};

const KernelTable& scalar_kernels();

/// nullptr when the AVX2 variants were not compiled in or the CPU lacks
/// AVX2/FMA.
const KernelTable* avx2_kernels();

/// The table used by the library: AVX2 when available unless the environment
/// variable FTLLB_SIMD is set to "scalar". Resolved once per process.
const KernelTable& active_kernels();

inline std::size_t words_for(std::size_t bits) { return (bits + 63) / 64; }

}  // namespace ftllb::simd
