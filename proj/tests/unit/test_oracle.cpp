#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "ftllb/adversary.hpp"
#include "ftllb/llb.hpp"
#include "ftllb/oracle.hpp"
#include "ftllb/rng.hpp"
#include "ftllb/trace.hpp"

using namespace ftllb;
using namespace ftllb::oracle;

namespace {

struct Recorded {
  graph::Graph g;
  std::vector<double> inputs;
  llb::LlbConfig cfg;
  llb::LlbRun run;
  std::string trace;
};

/// LLB on a random d-regular graph with a JSONL trace.
Recorded record(std::size_t n, std::size_t d, const char* adversary, std::size_t t, std::uint64_t seed) {
  Recorded r;
  Rng rng(seed);
  r.g = graph::sample_random_regular(n, d, rng);
  r.inputs.resize(n);
  for (auto& x : r.inputs) x = rng.uniform();
  r.cfg = llb::derive_config(double(d), double(d), n);
  simnet::AdversaryOptions ao;
  ao.horizon = r.cfg.tau1 + r.cfg.tau2;
  auto adv = simnet::make_adversary(adversary, t, seed, ao);
  simnet::Engine e(n, seed, adv);
  e.set_topology(std::make_shared<simnet::Topology>(r.g));
  std::ostringstream out;
  simnet::JsonlTraceWriter w(out);
  w.write_header(llb_trace_header(r.g, r.inputs, r.cfg, adv ? adv->kind() : simnet::FaultKind::kNone, t));
  e.set_trace(&w, true);
  llb::LlbOptions o;
  o.record = true;
  r.run = llb::run_llb(e, r.cfg, r.inputs, o);
  r.trace = out.str();
  return r;
}

simnet::TraceFile parse(const std::string& text) {
  std::istringstream in(text);
  return simnet::read_trace(in);
}

}  // namespace

TEST_CASE("ideal run by hand") {
  const std::vector<double> x0 = {1, 0, 0, 0};
  const auto r = ideal_run(graph::Graph::cycle(4), x0, 2.0, 2);
  REQUIRE(r.x.size() == 3);
  CHECK(r.x[1] == std::vector<double>{0.5, 0.25, 0.0, 0.25});
  CHECK(r.x[2] == std::vector<double>{0.375, 0.25, 0.125, 0.25});
  CHECK(r.mass_drift < 1e-15);

  const auto p = ideal_run(graph::Graph::path(3), std::vector<double>{1, 0, 0}, 2.0, 1);
  CHECK(p.x[1] == std::vector<double>{0.75, 0.25, 0.0});
  CHECK_THROWS_AS(ideal_run(graph::Graph::complete(4), x0, 2.0, 1), std::invalid_argument);
}

TEST_CASE("skewed recurrences by hand") {
  // Node 0 heard node 1 only, node 1 heard nobody.
  llb::BalancingTrace t{2, 1, {0.5, 1.0}, {{0.0, 0.0}}, {{0b10, 0b00}}};
  const auto s = skewed_runs(t, 2.0, 2.0, 1);
  CHECK(s.x_zero[1][0] == doctest::Approx(1.0 / 4 + 0.25));
  CHECK(s.x_zero[1][1] == doctest::Approx(0.5));
  CHECK(s.x_one[1][0] == doctest::Approx(1.0 / 4 + 0.25 + 1.0 / 4));
  CHECK(s.x_one[1][1] == doctest::Approx(0.5 + 2.0 / 4));
  CHECK_THROWS_AS(skewed_runs(t, 2.0, 2.0, 2), TraceMismatch);
}

TEST_CASE("zeros are a fixed point of the lower recurrence, ones of the upper on regular graphs") {
  Rng rng(3);
  const std::size_t n = 20;
  llb::BalancingTrace t{n, 1, std::vector<double>(n, 0.0), {}, {}};
  for (int r = 0; r < 5; ++r) {
    t.loads.push_back(std::vector<double>(n, 0.0));
    std::vector<std::uint64_t> heard(n);
    for (auto& h : heard) h = rng.next() & ((std::uint64_t{1} << n) - 1);
    t.heard.push_back(heard);
  }
  auto s = skewed_runs(t, 4.0, 4.0, 5);
  for (const auto& row : s.x_zero)
    for (double x : row) CHECK(x == 0.0);
  t.x0.assign(n, 1.0);
  s = skewed_runs(t, 4.0, 4.0, 5);
  for (const auto& row : s.x_one)
    for (double x : row) CHECK(x == doctest::Approx(1.0));
}

TEST_CASE("fault-free actual run equals the ideal run on a regular graph") {
  const auto r = record(64, 10, "none", 0, 11);
  const auto o = build_oracle(r.g, *r.run.balancing, 10, 10, r.cfg.tau1);
  const auto actual = actual_series(*r.run.balancing);
  REQUIRE(actual.size() == o.x_ideal.size());
  for (std::size_t i = 0; i < actual.size(); ++i)
    for (std::size_t v = 0; v < actual[i].size(); ++v) CHECK(std::abs(actual[i][v] - o.x_ideal[i][v]) < 1e-12);
  CHECK(sandwich_check(o, actual).passed);
}

TEST_CASE("sandwich holds under crashes on regular graphs") {
  for (const char* adv : {"random", "targeted_extreme", "eclipse"}) {
    CAPTURE(adv);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto r = record(64, 12, adv, 4, seed);
      const auto o = build_oracle(r.g, *r.run.balancing, 12, 12, r.cfg.tau1);
      const auto v = sandwich_check(o, actual_series(*r.run.balancing));
      CHECK(v.passed);
      CHECK(v.first_violation.is_null());
    }
  }
}

TEST_CASE("a perturbed load breaks the sandwich") {
  const auto r = record(32, 8, "random", 2, 4);
  const auto o = build_oracle(r.g, *r.run.balancing, 8, 8, r.cfg.tau1);
  auto actual = actual_series(*r.run.balancing);
  actual[3][5] = o.x_one[3][5] + 1e-3;
  const auto v = sandwich_check(o, actual);
  CHECK_FALSE(v.passed);
  CHECK(v.first_violation["round"] == 3);
  CHECK(v.first_violation["node"] == 5);
}

TEST_CASE("value range check") {
  const Series ok = {{0.0, 1.0}, {0.5, 0.5}};
  CHECK(value_range_check(ok, 0.0, 1.0).passed);
  const Series bad = {{0.0, 1.0}, {0.5, 1.01}};
  const auto v = value_range_check(bad, 0.0, 1.0);
  CHECK_FALSE(v.passed);
  CHECK(v.first_violation["round"] == 1);
  CHECK(v.first_violation["node"] == 1);
}

TEST_CASE("numeric guarantee forms") {
  // (1 - 11/20) * (40/27 - 2/9) = 0.45 * 34/27
  CHECK(accuracy_factor(10, 10) == doctest::Approx(0.45 * 34.0 / 27.0));
  CHECK(active_fault_bound(10, 10, 81, 40.0 / 81.0) == doctest::Approx(22.0));
  CHECK(active_fault_bound(10, 10, 81, 4.0 / 81.0) == doctest::Approx(-14.0));
  const llb::LlbConfig cfg{10, 10, 100, 5, 1000};
  CHECK(*accuracy_eps(cfg, 0) == doctest::Approx(0.002));
  CHECK(*accuracy_eps(cfg, 1) == doctest::Approx(300.0 / (1000 * 0.45 * 34.0 / 27.0)));
  CHECK(*accuracy_eps(cfg, 10) == 1.0);
  CHECK_FALSE(accuracy_eps(llb::LlbConfig{1, 1, 1, 1, 10}, 0));
  CHECK(accuracy_precondition(cfg, 1, 0.6));
  CHECK_FALSE(accuracy_precondition(cfg, 1, 0.5));
}

TEST_CASE("remainder audit on fault-free runs") {
  const auto r = record(128, 16, "none", 0, 2);
  std::vector<std::uint8_t> active(128);
  for (NodeId v = 0; v < 128; ++v) active[v] = r.run.outcomes[v].type == llb::NodeType::kActive;
  const double mu = std::accumulate(r.inputs.begin(), r.inputs.end(), 0.0) / 128;
  const auto rep = remainder_shrinkage_check(r.g, *r.run.fixing, active, mu, 2.0 / 128, 16, 16, 0);
  CHECK(rep.verdict.passed);
  CHECK(rep.verdict.precondition_met);
  CHECK(rep.core_size == 128);
  CHECK(rep.remainder.back() == 0);
}

TEST_CASE("replay reproduces the run and its verdicts") {
  for (const char* adv : {"none", "random", "random_drops"}) {
    CAPTURE(adv);
    const auto r = record(48, 8, adv, 2, 6);
    const auto rep = replay(parse(r.trace));
    REQUIRE(rep.verdicts.size() == 3);
    CHECK(rep.verdicts[0].lemma == "value_range");
    CHECK(rep.verdicts[0].passed);
    CHECK(rep.verdicts[1].lemma == "sandwich");
    CHECK(rep.verdicts[1].passed);
    CHECK(rep.verdicts[2].lemma == "remainder_shrinkage");

    ReplayOptions only;
    only.lemmas = {"sandwich"};
    CHECK(replay(parse(r.trace), only).verdicts.size() == 1);
  }
}

TEST_CASE("replay detects a corrupted load") {
  const auto r = record(24, 6, "random", 1, 8);
  auto tf = parse(r.trace);
  tf.rounds[7].loads[3] += 1e-4;
  try {
    replay(tf);
    FAIL("expected a mismatch");
  } catch (const TraceMismatch& e) {
    CHECK(std::string(e.what()).find("line 9") != std::string::npos);
  }
}

TEST_CASE("replay rejects truncated traces and other protocols") {
  const auto r = record(24, 6, "none", 0, 8);
  auto tf = parse(r.trace);
  tf.rounds.pop_back();
  tf.lines.pop_back();
  CHECK_THROWS_AS(replay(tf), TraceMismatch);
  tf.header["protocol"] = "consensus-crash";
  CHECK_THROWS_AS(replay(tf), ConfigError);
}
