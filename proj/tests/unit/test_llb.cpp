#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "ftllb/adversary.hpp"
#include "ftllb/errors.hpp"
#include "ftllb/llb.hpp"
#include "ftllb/rng.hpp"

using namespace ftllb;
using namespace ftllb::llb;

namespace {

std::shared_ptr<simnet::Topology> topo(graph::Graph g) { return std::make_shared<simnet::Topology>(std::move(g)); }

double mean(std::span<const double> x) { return std::accumulate(x.begin(), x.end(), 0.0) / double(x.size()); }

}  // namespace

TEST_CASE("single balancing step") {
  const double r[] = {1.0, 1.0};
  CHECK(llb_update(0.5, r, 2.0) == doctest::Approx(0.75));
  CHECK(llb_update(0.5, {}, 2.0) == 0.5);
  // More senders than 2 d_max: plain average, no negative weight.
  const double many[] = {1.0, 1.0, 1.0, 1.0, 1.0};
  CHECK(llb_update(0.0, many, 2.0) == doctest::Approx(1.0));
}

TEST_CASE("coefficients sum to one") {
  for (std::size_t k = 0; k <= 30; ++k) {
    const auto c = coefficients(k, 7.0);
    CHECK(c.self + double(k) * c.neighbour == doctest::Approx(1.0));
    CHECK(c.self >= 0.0);
    CHECK(c.neighbour > 0.0);
  }
}

TEST_CASE("round counts") {
  // floor(e^32): ln n sits just below 32, so 32 ln n rounds up to 1024.
  CHECK(derive_config(10, 10, 78962960182680ULL).tau1 == 1024);
  CHECK(derive_config(10, 20, 100, Tau2Policy::kShrinkFallback).tau1 == std::size_t(std::ceil(128 * std::log(100.0))));
  CHECK(derive_config(5, 5, 2).tau2 == 11);
  CHECK(shrink_ratio(10, 10) == doctest::Approx(14.0 / 15.0));
  CHECK_THROWS_AS(derive_config(9, 10, 100), InvalidRatio);
  const auto fb = derive_config(9, 10, 100, Tau2Policy::kShrinkFallback);
  CHECK(fb.tau2 == std::size_t(std::ceil(std::log(100.0) / std::log(15.0 / 14.0))));
  CHECK(fb.n == 100);
}

TEST_CASE("fault-free run on a complete graph reaches the mean") {
  const std::size_t n = 8;
  simnet::Engine e(n, 1);
  e.set_topology(simnet::Topology::complete(n));
  const std::vector<double> in = {1, 0, 0, 1, 0, 0, 0, 1};
  const auto cfg = derive_config(7, 7, n);
  CHECK(cfg.tau1 == 67);
  const auto run = run_llb(e, cfg, in);
  CHECK(run.rounds == cfg.tau1 + cfg.tau2);
  CHECK(run.active_count() == n);
  for (const auto& o : run.outcomes) CHECK(std::abs(o.x - 3.0 / 8.0) < 1e-12);
}

TEST_CASE("outlier fixing takes the median of the others") {
  const std::size_t n = 16;
  simnet::Engine e(n, 1);
  e.set_topology(simnet::Topology::complete(n));
  std::vector<double> in(n);
  std::iota(in.begin(), in.end(), 0.0);
  LlbConfig cfg{15, 15, 0, 1, n};
  const auto run = run_llb(e, cfg, in);
  for (NodeId v = 0; v < n; ++v) CHECK(run.outcomes[v].x == (v <= 7 ? 8.0 : 7.0));
}

TEST_CASE("nodes hearing too few go silent") {
  // Path 0-1-2: the ends hear one sender, below 2/3 of d_min = 2.
  simnet::Engine e(3, 1);
  e.set_topology(topo(graph::Graph::path(3)));
  const std::vector<double> in = {0.0, 0.5, 1.0};
  LlbConfig cfg{2, 2, 0, 2, 3};
  LlbOptions o;
  o.record = true;
  const auto run = run_llb(e, cfg, in, o);
  CHECK(run.outcomes[0].type == NodeType::kSilent);
  CHECK(run.outcomes[2].type == NodeType::kSilent);
  // The middle node took the median of both ends in round one, then heard
  // nobody in round two.
  CHECK(run.outcomes[1].x == 0.5);
  CHECK(run.outcomes[1].type == NodeType::kSilent);
  REQUIRE(run.fixing);
  REQUIRE(run.fixing->silent.size() == 2);
  CHECK(run.fixing->silent[0] == std::vector<std::uint8_t>{1, 0, 1});
  CHECK(run.fixing->silent[1] == std::vector<std::uint8_t>{1, 1, 1});
}

TEST_CASE("loads stay within the input range under every adversary") {
  const char* names[] = {"none", "random", "targeted_extreme", "eclipse", "random_drops", "partition_flicker",
                         "silence_inbound"};
  for (const char* name : names) {
    CAPTURE(name);
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      Rng rng(seed);
      const std::size_t n = 96;
      auto g = graph::sample_random_regular(n, 12, rng);
      std::vector<double> in(n);
      for (auto& x : in) x = rng.uniform();
      const auto cfg = derive_config(12, 12, n);
      simnet::AdversaryOptions ao;
      ao.horizon = cfg.tau1 + cfg.tau2;
      simnet::Engine e(n, seed, simnet::make_adversary(name, 6, seed, ao));
      e.set_topology(topo(std::move(g)));
      const auto run = run_llb(e, cfg, in);
      CHECK(run.range_violations == 0);
      const auto [lo, hi] = std::minmax_element(in.begin(), in.end());
      for (const auto& o : run.outcomes) {
        CHECK(o.x >= *lo - 1e-9);
        CHECK(o.x <= *hi + 1e-9);
      }
    }
  }
}

TEST_CASE("crashed nodes are reported and not active") {
  const std::size_t n = 64;
  Rng rng(5);
  simnet::AdversaryOptions ao;
  ao.horizon = 20;
  simnet::Engine e(n, 5, simnet::make_adversary("random", 4, 5, ao));
  e.set_topology(topo(graph::sample_random_regular(n, 16, rng)));
  std::vector<double> in(n, 0.0);
  in[0] = 1.0;
  const auto run = run_llb(e, derive_config(16, 16, n), in);
  CHECK(std::count(run.crashed.begin(), run.crashed.end(), 1) == 4);
  CHECK(run.active_count() <= n - 4);
}

TEST_CASE("omitted links are counted per node") {
  const std::size_t n = 10;
  simnet::AdversaryOptions ao;
  ao.onset_zero = true;
  simnet::Engine e(n, 1, simnet::make_adversary("silence_inbound", 1, 3, ao));
  e.set_topology(simnet::Topology::complete(n));
  LlbOptions o;
  o.track_omitted = true;
  const auto run = run_llb(e, LlbConfig{9, 9, 3, 1, n}, std::vector<double>(n, 0.5), o);
  const auto faulty = e.faulted_nodes();
  REQUIRE(faulty.size() == 1);
  for (NodeId v = 0; v < n; ++v) CHECK(run.omitted[v] == (v == faulty[0] ? 9u : 0u));
}

TEST_CASE("add_missed requires omission tracking") {
  LlbProgram p(LlbConfig{2, 2, 1, 1, 4}, std::vector<double>(4, 0.0));
  const std::uint64_t bits = 1;
  CHECK_THROWS_AS(p.add_missed(1, &bits), std::logic_error);
  LlbOptions o;
  o.track_omitted = true;
  LlbProgram q(LlbConfig{2, 2, 1, 1, 4}, std::vector<double>(4, 0.0), o);
  q.add_missed(1, &bits);
  CHECK(q.omitted(1) == 1);
}

TEST_CASE("non-participants neither send nor change") {
  const std::size_t n = 6;
  simnet::Engine e(n, 1);
  e.set_topology(simnet::Topology::complete(n));
  std::vector<double> in = {1, 0, 0, 0, 0, 0};
  LlbProgram p(LlbConfig{5, 5, 10, 0, n}, in, {}, {1, 1, 1, 1, 1, 0});
  while (!p.done()) e.step(p);
  CHECK(p.loads()[5] == 0.0);
  CHECK_FALSE(p.participant(5));
  for (NodeId v = 0; v < 5; ++v) CHECK(std::abs(p.loads()[v] - 0.2) < 1e-3);
  CHECK(mean(p.loads().subspan(0, 5)) == doctest::Approx(0.2));
}
