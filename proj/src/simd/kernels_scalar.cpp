#include <bit>

#include "ftllb/simd.hpp"

namespace ftllb::simd {
namespace {

double masked_sum_scalar(const std::uint64_t* mask, const double* values, std::size_t n) {
  double sum = 0.0;
  const std::size_t words = words_for(n);
  for (std::size_t w = 0; w < words; ++w) {
    std::uint64_t bits = mask[w];
    while (bits != 0) {
      const int b = std::countr_zero(bits);
      sum += values[w * 64 + static_cast<std::size_t>(b)];
      bits &= bits - 1;
    }
  }
  return sum;
}

std::size_t popcount_and_scalar(const std::uint64_t* a, const std::uint64_t* b,
                                std::size_t words) {
  std::size_t count = 0;
  for (std::size_t w = 0; w < words; ++w) count += static_cast<std::size_t>(std::popcount(a[w] & b[w]));
  return count;
}

double gather_sum_scalar(const std::uint32_t* index, std::size_t count, const double* values) {
  double sum = 0.0;
  for (std::size_t k = 0; k < count; ++k) sum += values[index[k]];
  return sum;
}

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += a[i] * b[i];
  return sum;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{"scalar",          masked_sum_scalar, popcount_and_scalar,
                                 gather_sum_scalar, dot_scalar,        axpy_scalar};
  return table;
}

}  // namespace ftllb::simd
