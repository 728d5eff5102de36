#include <doctest.h>

#include <bit>
#include <cmath>
#include <vector>

#include "ftllb/rng.hpp"
#include "ftllb/simd.hpp"

using namespace ftllb;

namespace {

struct Case {
  std::size_t n;
  std::vector<std::uint64_t> mask;
  std::vector<double> values;
};

Case random_case(std::size_t n, double density, Rng& rng) {
  Case c{n, std::vector<std::uint64_t>(simd::words_for(n), 0), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    c.values[i] = rng.uniform() * 2 - 1;
    if (rng.bernoulli(density)) c.mask[i / 64] |= std::uint64_t{1} << (i % 64);
  }
  return c;
}

double reference_sum(const Case& c) {
  double s = 0.0;
  for (std::size_t i = 0; i < c.n; ++i)
    if ((c.mask[i / 64] >> (i % 64)) & 1u) s += c.values[i];
  return s;
}

std::vector<const simd::KernelTable*> tables() {
  std::vector<const simd::KernelTable*> t{&simd::scalar_kernels()};
  if (const auto* v = simd::avx2_kernels()) t.push_back(v);
  return t;
}

}  // namespace

TEST_CASE("scalar masked sum adds in ascending order") {
  Rng rng(1);
  for (std::size_t n : {1u, 63u, 64u, 65u, 200u, 1000u}) {
    const auto c = random_case(n, 0.4, rng);
    CHECK(simd::scalar_kernels().masked_sum(c.mask.data(), c.values.data(), n) == reference_sum(c));
  }
}

TEST_CASE("every kernel table matches the scalar reference") {
  Rng rng(2);
  const auto& ref = simd::scalar_kernels();
  for (const auto* k : tables()) {
    CAPTURE(k->name);
    for (std::size_t n : {0u, 1u, 3u, 7u, 64u, 100u, 128u, 257u, 4096u}) {
      for (double density : {0.0, 0.1, 0.5, 1.0}) {
        const auto c = random_case(n, density, rng);
        const double a = ref.masked_sum(c.mask.data(), c.values.data(), n);
        const double b = k->masked_sum(c.mask.data(), c.values.data(), n);
        CHECK(std::abs(a - b) <= 1e-12 * (1.0 + static_cast<double>(n)));

        const auto other = random_case(n, 0.5, rng);
        const std::size_t w = simd::words_for(n);
        CHECK(ref.popcount_and(c.mask.data(), other.mask.data(), w) ==
              k->popcount_and(c.mask.data(), other.mask.data(), w));

        std::vector<std::uint32_t> idx;
        for (std::size_t i = 0; i < n; ++i)
          if (rng.coin()) idx.push_back(static_cast<std::uint32_t>(i));
        const double g1 = ref.gather_sum(idx.data(), idx.size(), c.values.data());
        const double g2 = k->gather_sum(idx.data(), idx.size(), c.values.data());
        CHECK(std::abs(g1 - g2) <= 1e-12 * (1.0 + static_cast<double>(n)));

        const double d1 = ref.dot(c.values.data(), other.values.data(), n);
        const double d2 = k->dot(c.values.data(), other.values.data(), n);
        CHECK(std::abs(d1 - d2) <= 1e-12 * (1.0 + static_cast<double>(n)));

        std::vector<double> y1 = other.values, y2 = other.values;
        ref.axpy(0.37, c.values.data(), y1.data(), n);
        k->axpy(0.37, c.values.data(), y2.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(y1[i] - y2[i]) <= 1e-15);
      }
    }
  }
}

TEST_CASE("popcount_and against std::popcount") {
  Rng rng(3);
  std::vector<std::uint64_t> a(37), b(37);
  std::size_t expect = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = rng.next();
    b[i] = rng.next();
    expect += static_cast<std::size_t>(std::popcount(a[i] & b[i]));
  }
  for (const auto* k : tables()) CHECK(k->popcount_and(a.data(), b.data(), a.size()) == expect);
}

TEST_CASE("active table is one of the compiled tables") {
  const auto& active = simd::active_kernels();
  const bool known = &active == &simd::scalar_kernels() || &active == simd::avx2_kernels();
  CHECK(known);
}

TEST_CASE("words_for") {
  CHECK(simd::words_for(0) == 0);
  CHECK(simd::words_for(1) == 1);
  CHECK(simd::words_for(64) == 1);
  CHECK(simd::words_for(65) == 2);
}
