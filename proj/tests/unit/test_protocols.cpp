#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "ftllb/adversary.hpp"
#include "ftllb/errors.hpp"
#include "ftllb/protocols.hpp"

using namespace ftllb;
using namespace ftllb::protocols;

namespace {

double lnln(double n) { return std::log(std::log(n)); }

std::vector<std::uint8_t> random_bits(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::uint8_t> b(n);
  for (auto& x : b) x = rng.coin();
  return b;
}

}  // namespace

TEST_CASE("link density and per-node sampling probability") {
  CHECK(link_density(100, 2.0) == doctest::Approx(2 * std::log(100.0) * std::pow(lnln(100), 2) / 99));
  const auto c = SetGraphConfig::make(500, 3.0);
  CHECK(2 * c.p - c.p * c.p == doctest::Approx(c.q));
  CHECK_THROWS_AS(SetGraphConfig::make(64, 8.0), InvalidDensity);
  CHECK_THROWS_AS(SetGraphConfig::make(64, 0.0), InvalidDensity);
}

TEST_CASE("handshake builds the union graph") {
  const std::size_t n = 300;
  const auto cfg = SetGraphConfig::make(n, 1.0);
  simnet::Engine e(n, 4);
  const auto r = set_graph(e, cfg);
  const auto& g = r.topology->graph();
  const double pairs = n * (n - 1) / 2.0;
  const double mean = cfg.q * pairs, sd = std::sqrt(pairs * cfg.q * (1 - cfg.q));
  CHECK(std::abs(double(g.edge_count()) - mean) < 5 * sd);
  CHECK(e.round() == 1);
  CHECK(r.topology->version() == e.round());
  CHECK(std::all_of(r.missed.begin(), r.missed.end(), [](auto w) { return w == 0; }));
  // Roughly p (n - 1) dummies per node.
  const double sent = double(e.metrics().messages_sent);
  CHECK(std::abs(sent - cfg.p * n * (n - 1)) < 5 * std::sqrt(cfg.p * n * (n - 1)));
}

TEST_CASE("non-participants stay isolated") {
  const std::size_t n = 80;
  simnet::Engine e(n, 2);
  std::vector<std::uint8_t> part(n, 1);
  for (NodeId v = 0; v < n; v += 3) part[v] = 0;
  const auto r = set_graph(e, SetGraphConfig::make(n, 1.0), part);
  for (NodeId v = 0; v < n; ++v)
    if (!part[v]) CHECK(r.topology->degree(v) == 0);
}

TEST_CASE("dropped dummies are recorded as missed links") {
  const std::size_t n = 100;
  simnet::AdversaryOptions ao;
  ao.onset_zero = true;
  simnet::Engine e(n, 3, simnet::make_adversary("silence_inbound", 1, 3, ao));
  const auto r = set_graph(e, SetGraphConfig::make(n, 1.0));
  const NodeId f = e.faulted_nodes().at(0);
  const std::size_t words = (n + 63) / 64;
  std::size_t missed = 0;
  for (std::size_t w = 0; w < words; ++w) missed += std::popcount(r.missed[f * words + w]);
  // Every partner of f that sampled it lost its dummy; f's own samples arrived.
  std::size_t partners_sampling_f = 0;
  for (NodeId u : r.topology->graph().neighbors(f))
    if ((r.missed[f * words + u / 64] >> (u % 64)) & 1u) ++partners_sampling_f;
  CHECK(missed == partners_sampling_f);
  CHECK(missed > 0);
  for (NodeId v = 0; v < n; ++v)
    if (v != f)
      for (std::size_t w = 0; w < words; ++w) CHECK(r.missed[v * words + w] == 0);
}

TEST_CASE("fault-free counting is exact") {
  const std::size_t n = 128;
  const auto cfg = CountingConfig::make(n, 2.0);
  CHECK(cfg.llb.d_max == doctest::Approx(1.25 * cfg.llb.d_min));
  CHECK(cfg.llb.d_min == doctest::Approx(0.75 * cfg.graph.q * (n - 1)));
  std::vector<std::uint8_t> flags(n, 0);
  for (NodeId v = 0; v < n; v += 5) flags[v] = 1;
  simnet::Engine e(n, 9);
  const auto r = ae_counting(e, flags, cfg);
  CHECK(r.rounds == cfg.total_rounds());
  for (const auto& c : r.counts) {
    REQUIRE(c);
    CHECK(*c == 26);
  }
}

TEST_CASE("threshold decision") {
  Rng coin(1);
  CHECK(decide_threshold(0.2, 0.1, coin) == 0);
  CHECK(decide_threshold(0.8, 0.1, coin) == 1);
  int ones = 0;
  for (int i = 0; i < 1000; ++i) ones += decide_threshold(0.5, 0.1, coin);
  CHECK(ones > 400);
  CHECK(ones < 600);
}

TEST_CASE("consensus parameters") {
  const auto c = ConsensusConfig::crash(256, 4.0, 2.0);
  const double ln = std::log(256.0);
  CHECK(c.iterations == std::size_t(std::ceil(4 * std::sqrt(256 * ln))));
  CHECK(c.dissemination_rounds == 40 * std::size_t(std::ceil(ln)) + 1);
  CHECK(c.threshold_margin == doctest::Approx(std::sqrt(ln / 256) / 40));
  CHECK(c.d_star == doctest::Approx(c.graph.q * 255));
  CHECK(c.d_star_min == doctest::Approx(c.d_star * (1 - 1 / (20 * lnln(256)))));
  CHECK(c.total_rounds() ==
        1 + c.iterations * (1 + c.llb.tau1 + c.llb.tau2 + c.dissemination_rounds) + 2);
  const auto o = ConsensusConfig::omission(256, 4, 4.0, 2.0);
  CHECK(o.iterations == std::size_t(std::ceil(8 * std::max(4 * ln / 16, ln))));
  CHECK(o.threshold_margin == doctest::Approx(std::sqrt(ln / 256) / 12));
  CHECK_THROWS_AS(ConsensusConfig::crash(8, 4.0, 2.0), ConfigError);
  CHECK_THROWS_AS(ConsensusConfig::crash(256, 0.0, 2.0), ConfigError);
}

TEST_CASE("fault-free crash consensus agrees") {
  const std::size_t n = 64;
  auto cfg = ConsensusConfig::crash(n, 1.0, 2.0);
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    simnet::Engine e(n, seed);
    const auto r = consensus_crash(e, random_bits(n, seed), cfg);
    CHECK(r.agreed);
    CHECK(r.valid);
    CHECK(r.terminated);
    CHECK(r.range_violations == 0);
    CHECK(r.persistence_violations == 0);
    CHECK(r.rounds == cfg.total_rounds());
    CHECK(r.iterations.size() == cfg.iterations);
  }
}

TEST_CASE("unanimous inputs are kept") {
  const std::size_t n = 64;
  const auto cfg = ConsensusConfig::crash(n, 1.0, 2.0);
  for (std::uint8_t b : {0, 1}) {
    simnet::AdversaryOptions ao;
    ao.horizon = cfg.total_rounds();
    simnet::Engine e(n, 5, simnet::make_adversary("targeted_extreme", 6, 5, ao));
    const auto r = consensus_crash(e, std::vector<std::uint8_t>(n, b), cfg);
    CHECK(r.agreed);
    REQUIRE(r.decided_value);
    CHECK(*r.decided_value == b);
    CHECK(r.unanimity_violations == 0);
  }
}

TEST_CASE("crash consensus with faults") {
  const std::size_t n = 64;
  const auto cfg = ConsensusConfig::crash(n, 1.0, 2.0);
  for (const char* adv : {"random", "eclipse"}) {
    CAPTURE(adv);
    simnet::AdversaryOptions ao;
    ao.horizon = cfg.total_rounds();
    simnet::Engine e(n, 7, simnet::make_adversary(adv, 8, 7, ao));
    const auto r = consensus_crash(e, random_bits(n, 7), cfg);
    CHECK(r.agreed);
    CHECK(std::count(r.correct.begin(), r.correct.end(), 1) == 56);
    CHECK(r.persistence_violations == 0);
  }
}

TEST_CASE("omission consensus with faults") {
  const std::size_t n = 64;
  const auto cfg = ConsensusConfig::omission(n, 2, 1.0, 2.0);
  for (const char* adv : {"random_drops", "partition_flicker", "silence_inbound"}) {
    CAPTURE(adv);
    simnet::AdversaryOptions ao;
    ao.horizon = cfg.total_rounds();
    simnet::Engine e(n, 3, simnet::make_adversary(adv, 2, 3, ao));
    const auto r = consensus_omission(e, random_bits(n, 3), cfg);
    CHECK(r.agreed);
    CHECK(r.terminated);
    CHECK(std::count(r.correct.begin(), r.correct.end(), 1) == 62);
    CHECK(r.persistence_violations == 0);
  }
}

TEST_CASE("persistence audit") {
  auto rec = [](std::vector<std::uint8_t> b, std::vector<std::uint8_t> a) {
    IterationRecord r;
    r.b = std::move(b);
    r.active = std::move(a);
    return r;
  };
  const std::vector<std::uint8_t> all = {1, 1, 1};
  CHECK(persistence_violations({rec({0, 1, 0}, all), rec({1, 1, 1}, all), rec({1, 1, 1}, all)}) == 0);
  CHECK(persistence_violations({rec({1, 1, 1}, all), rec({1, 0, 1}, all)}) == 1);
  // Inactive nodes do not count.
  CHECK(persistence_violations({rec({1, 1, 1}, all), rec({1, 0, 1}, {1, 0, 1})}) == 0);
  CHECK(persistence_violations({rec({0, 0, 0}, all), rec({1, 1, 1}, all)}) == 1);
}
