// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.

#include <immintrin.h>

#include <array>
#include <bit>

#include "ftllb/simd.hpp"

namespace ftllb::simd {
namespace {

// Lane masks for the 16 nibble values: lane k is all-ones iff bit k is set.
struct NibbleMasks {
  alignas(32) std::array<std::array<std::int64_t, 4>, 16> lanes{};
  NibbleMasks() {
    for (int m = 0; m < 16; ++m)
      for (int k = 0; k < 4; ++k) lanes[m][k] = (m >> k) & 1 ? -1 : 0;
  }
};

const NibbleMasks& nibble_masks() {
  static const NibbleMasks masks;
  return masks;
}

inline double horizontal_sum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double masked_sum_avx2(const std::uint64_t* mask, const double* values, std::size_t n) {
  const auto& lut = nibble_masks().lanes;
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  const std::size_t words = words_for(n);
  for (std::size_t w = 0; w < words; ++w) {
    std::uint64_t bits = mask[w];
    const double* base = values + w * 64;
    // Masked loads never touch lanes whose bit is clear, so the tail past n
    // is not read.
    for (int nib = 0; bits != 0; nib += 2, bits >>= 8) {
      const auto m0 = _mm256_load_si256(reinterpret_cast<const __m256i*>(lut[bits & 0xF].data()));
      const auto m1 =
          _mm256_load_si256(reinterpret_cast<const __m256i*>(lut[(bits >> 4) & 0xF].data()));
      acc0 = _mm256_add_pd(acc0, _mm256_maskload_pd(base + nib * 4, m0));
      acc1 = _mm256_add_pd(acc1, _mm256_maskload_pd(base + nib * 4 + 4, m1));
    }
  }
  return horizontal_sum(_mm256_add_pd(acc0, acc1));
}

std::size_t popcount_and_avx2(const std::uint64_t* a, const std::uint64_t* b, std::size_t words) {
  // Nibble-table popcount (Mula); short rows go through popcnt directly.
  std::size_t w = 0;
  std::size_t count = 0;
  if (words >= 8) {
    const __m256i table = _mm256_setr_epi8(0, 1, 1, 2, 1, 2, 2, 3, 1, 2, 2, 3, 2, 3, 3, 4, 0, 1, 1,
                                           2, 1, 2, 2, 3, 1, 2, 2, 3, 2, 3, 3, 4);
    const __m256i low = _mm256_set1_epi8(0x0F);
    __m256i total = _mm256_setzero_si256();
    for (; w + 4 <= words; w += 4) {
      const __m256i x = _mm256_and_si256(_mm256_loadu_si256(reinterpret_cast<const __m256i*>(a + w)),
                                         _mm256_loadu_si256(reinterpret_cast<const __m256i*>(b + w)));
      const __m256i lo = _mm256_shuffle_epi8(table, _mm256_and_si256(x, low));
      const __m256i hi = _mm256_shuffle_epi8(table, _mm256_and_si256(_mm256_srli_epi16(x, 4), low));
      total = _mm256_add_epi64(total, _mm256_sad_epu8(_mm256_add_epi8(lo, hi), _mm256_setzero_si256()));
    }
    alignas(32) std::array<std::uint64_t, 4> lanes{};
    _mm256_store_si256(reinterpret_cast<__m256i*>(lanes.data()), total);
    count = static_cast<std::size_t>(lanes[0] + lanes[1] + lanes[2] + lanes[3]);
  }
  for (; w < words; ++w) count += static_cast<std::size_t>(std::popcount(a[w] & b[w]));
  return count;
}

double gather_sum_avx2(const std::uint32_t* index, std::size_t count, const double* values) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t k = 0;
  for (; k + 4 <= count; k += 4) {
    const __m128i idx = _mm_loadu_si128(reinterpret_cast<const __m128i*>(index + k));
    acc = _mm256_add_pd(acc, _mm256_i32gather_pd(values, idx, 8));
  }
  double sum = horizontal_sum(acc);
  for (; k < count; ++k) sum += values[index[k]];
  return sum;
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  double sum = horizontal_sum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) sum += a[i] * b[i];
  return sum;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d a = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(a, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

const KernelTable& avx2_kernel_table() {
  static const KernelTable table{"avx2",          masked_sum_avx2, popcount_and_avx2,
                                 gather_sum_avx2, dot_avx2,        axpy_avx2};
  return table;
}

}  // namespace ftllb::simd
