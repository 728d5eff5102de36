#include "ftllb/oracle.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace ftllb::oracle {
namespace {

constexpr double kTol = 1e-9;

bool has_bit(const std::uint64_t* bits, std::size_t u) { return (bits[u >> 6] >> (u & 63)) & 1u; }

std::size_t popcount(const std::uint64_t* bits, std::size_t words) {
  std::size_t c = 0;
  for (std::size_t i = 0; i < words; ++i) c += static_cast<std::size_t>(std::popcount(bits[i]));
  return c;
}

}  // namespace

nlohmann::json Verdict::to_json() const {
  nlohmann::json j;
  j["lemma"] = lemma;
  j["passed"] = passed;
  j["precondition_met"] = precondition_met;
  j["first_violation"] = first_violation;
  j["margins"] = margins;
  return j;
}

IdealRun ideal_run(const graph::Graph& g, std::span<const double> x0, double d_max, std::size_t tau1) {
  const std::size_t n = g.size();
  if (x0.size() != n) throw std::invalid_argument("load vector size does not match graph");
  if (static_cast<double>(g.max_degree()) > d_max) throw std::invalid_argument("degree exceeds d_max");
  const double w = 1.0 / (2.0 * d_max);
  IdealRun run;
  run.x.reserve(tau1 + 1);
  run.x.emplace_back(x0.begin(), x0.end());
  double mass0 = 0.0;
  for (double x : x0) mass0 += x;
  for (std::size_t i = 1; i <= tau1; ++i) {
    const auto& prev = run.x.back();
    std::vector<double> next(n);
    double mass = 0.0;
    for (NodeId v = 0; v < n; ++v) {
      double s = 0.0;
      for (NodeId u : g.neighbors(v)) s += prev[u];
      next[v] = s * w + (2.0 * d_max - static_cast<double>(g.degree(v))) * w * prev[v];
      mass += next[v];
    }
    run.mass_drift = std::max(run.mass_drift, std::abs(mass - mass0));
    run.x.push_back(std::move(next));
  }
  return run;
}

SkewedRuns skewed_runs(const llb::BalancingTrace& trace, double d_min, double d_max, std::size_t tau1) {
  if (trace.heard.size() != tau1)
    throw TraceMismatch("trace has " + std::to_string(trace.heard.size()) + " balancing rounds, expected " +
                        std::to_string(tau1));
  const std::size_t n = trace.n;
  const double w = 1.0 / (2.0 * d_max);
  SkewedRuns r;
  r.x_zero.reserve(tau1 + 1);
  r.x_one.reserve(tau1 + 1);
  r.x_zero.push_back(trace.x0);
  r.x_one.push_back(trace.x0);
  for (std::size_t i = 0; i < tau1; ++i) {
    const auto& z = r.x_zero.back();
    const auto& o = r.x_one.back();
    std::vector<double> nz(n), no(n);
    for (NodeId v = 0; v < n; ++v) {
      const std::uint64_t* heard = trace.heard_row(i, v);
      double sz = 0.0, so = 0.0;
      std::size_t k = 0;
      for (std::size_t word = 0; word < trace.words; ++word) {
        std::uint64_t bits = heard[word];
        while (bits != 0) {
          const std::size_t u = word * 64 + static_cast<std::size_t>(std::countr_zero(bits));
          bits &= bits - 1;
          sz += z[u];
          so += o[u];
          ++k;
        }
      }
      nz[v] = sz * w + 0.5 * z[v];
      no[v] = so * w + 0.5 * o[v] + (d_min - static_cast<double>(k)) * w;
    }
    r.x_zero.push_back(std::move(nz));
    r.x_one.push_back(std::move(no));
  }
  return r;
}

OracleRun build_oracle(const graph::Graph& g, const llb::BalancingTrace& trace, double d_min, double d_max,
                       std::size_t tau1) {
  OracleRun o;
  auto skewed = skewed_runs(trace, d_min, d_max, tau1);
  o.x_zero = std::move(skewed.x_zero);
  o.x_one = std::move(skewed.x_one);
  o.x_ideal = ideal_run(g, trace.x0, d_max, tau1).x;
  double s = 0.0;
  for (double x : trace.x0) s += x;
  o.mu = s / static_cast<double>(trace.x0.size());
  return o;
}

Series actual_series(const llb::BalancingTrace& trace) {
  Series s;
  s.reserve(trace.loads.size() + 1);
  s.push_back(trace.x0);
  for (const auto& x : trace.loads) s.push_back(x);
  return s;
}

Verdict sandwich_check(const OracleRun& oracle, const Series& x_actual) {
  Verdict v;
  v.lemma = "sandwich";
  const std::size_t rounds = std::min({oracle.x_zero.size(), oracle.x_one.size(), oracle.x_ideal.size()});
  if (x_actual.size() != rounds) throw TraceMismatch("actual series length does not match the oracle");
  double low_actual = std::numeric_limits<double>::infinity();
  double high_actual = low_actual, low_ideal = low_actual, high_ideal = low_actual;
  std::size_t violations = 0;
  for (std::size_t i = 0; i < rounds; ++i) {
    const auto& z = oracle.x_zero[i];
    const auto& o = oracle.x_one[i];
    const auto& id = oracle.x_ideal[i];
    const auto& a = x_actual[i];
    for (std::size_t u = 0; u < a.size(); ++u) {
      low_actual = std::min(low_actual, a[u] - z[u]);
      high_actual = std::min(high_actual, o[u] - a[u]);
      low_ideal = std::min(low_ideal, id[u] - z[u]);
      high_ideal = std::min(high_ideal, o[u] - id[u]);
      const bool bad = a[u] < z[u] - kTol || a[u] > o[u] + kTol || id[u] < z[u] - kTol || id[u] > o[u] + kTol;
      if (!bad) continue;
      ++violations;
      if (v.passed) {
        v.passed = false;
        v.first_violation = {{"round", i}, {"node", u}, {"x_zero", z[u]}, {"x_actual", a[u]},
                             {"x_ideal", id[u]}, {"x_one", o[u]}};
      }
    }
  }
  v.margins = {{"actual_above_zero", low_actual}, {"one_above_actual", high_actual},
               {"ideal_above_zero", low_ideal}, {"one_above_ideal", high_ideal}, {"violations", violations}};
  return v;
}

Verdict value_range_check(const Series& loads, double lo, double hi) {
  Verdict v;
  v.lemma = "value_range";
  double below = std::numeric_limits<double>::infinity(), above = below;
  std::size_t violations = 0;
  for (std::size_t i = 0; i < loads.size(); ++i) {
    for (std::size_t u = 0; u < loads[i].size(); ++u) {
      const double x = loads[i][u];
      below = std::min(below, x - lo);
      above = std::min(above, hi - x);
      if (x >= lo - kTol && x <= hi + kTol && std::isfinite(x)) continue;
      ++violations;
      if (v.passed) {
        v.passed = false;
        v.first_violation = {{"round", i}, {"node", u}, {"x", x}, {"lo", lo}, {"hi", hi}};
      }
    }
  }
  v.margins = {{"above_min", below}, {"below_max", above}, {"violations", violations}};
  return v;
}

ShrinkageReport remainder_shrinkage_check(const graph::Graph& g, const llb::FixingTrace& fixing,
                                          std::span<const std::uint8_t> final_active, double mu, double eps,
                                          double d_min, double d_max, std::size_t t) {
  const std::size_t n = g.size();
  if (final_active.size() != n || fixing.x_start.size() != n)
    throw std::invalid_argument("fixing trace does not match graph");
  const std::size_t tau2 = fixing.heard.size();
  const std::size_t words = fixing.words;

  ShrinkageReport rep;
  Verdict& v = rep.verdict;
  v.lemma = "remainder_shrinkage";
  const double t_bound = 2.0 * d_min / d_max * eps * static_cast<double>(n) / 81.0;
  v.precondition_met = static_cast<double>(t) < t_bound;

  std::vector<NodeId> excluded;
  for (NodeId u = 0; u < n; ++u)
    if (!final_active[u] || std::abs(fixing.x_start[u] - mu) > eps) excluded.push_back(u);
  const auto core = graph::peel(g, excluded, (d_max + 1.0) / 2.0);
  rep.core_size = core.retained.size();

  std::vector<std::uint64_t> c(words, 0);
  for (NodeId u : core.retained) c[u >> 6] |= std::uint64_t{1} << (u & 63);
  auto remainder = [&]() {
    std::size_t r = 0;
    for (NodeId u = 0; u < n; ++u)
      if (final_active[u] && !has_bit(c.data(), u)) ++r;
    return r;
  };
  rep.remainder.push_back(remainder());

  const double need = (d_min + 1.0) / 2.0;
  std::vector<std::uint64_t> next(words);
  std::vector<std::uint64_t> scratch(words);
  for (std::size_t i = 0; i < tau2; ++i) {
    std::fill(next.begin(), next.end(), 0);
    for (NodeId u = 0; u < n; ++u) {
      if (fixing.silent[i][u]) continue;
      const std::uint64_t* heard = fixing.heard_row(i, u);
      for (std::size_t w = 0; w < words; ++w) scratch[w] = heard[w] & c[w];
      if (static_cast<double>(popcount(scratch.data(), words)) >= need) next[u >> 6] |= std::uint64_t{1} << (u & 63);
    }
    c.swap(next);
    rep.remainder.push_back(remainder());
  }

  double worst_ratio = 0.0;
  std::size_t violations = 0;
  constexpr double kRho = 14.0 / 15.0;
  for (std::size_t i = 1; i + 1 < rep.remainder.size(); ++i) {
    const auto r0 = static_cast<double>(rep.remainder[i]);
    const auto r1 = static_cast<double>(rep.remainder[i + 1]);
    if (r0 > 0) worst_ratio = std::max(worst_ratio, r1 / r0);
    if (r1 <= kRho * r0 + 1.0) continue;
    ++violations;
    if (v.first_violation.is_null())
      v.first_violation = {{"kind", "shrink"}, {"round", i + 1}, {"previous", rep.remainder[i]},
                           {"current", rep.remainder[i + 1]}};
  }
  if (rep.remainder.back() != 0) {
    ++violations;
    if (v.first_violation.is_null())
      v.first_violation = {{"kind", "nonempty_final_remainder"}, {"size", rep.remainder.back()}};
  }
  double worst_gap = 0.0;
  const auto& final_loads = tau2 == 0 ? fixing.x_start : fixing.loads.back();
  for (NodeId u = 0; u < n; ++u) {
    if (!has_bit(c.data(), u)) continue;
    const double gap = std::abs(final_loads[u] - mu);
    worst_gap = std::max(worst_gap, gap);
    if (gap > eps + kTol) {
      ++violations;
      if (v.first_violation.is_null())
        v.first_violation = {{"kind", "core_load"}, {"node", u}, {"x", final_loads[u]}, {"mu", mu}, {"eps", eps}};
    }
  }
  v.passed = violations == 0 || !v.precondition_met;
  v.margins = {{"t_bound", t_bound},       {"core_size", rep.core_size}, {"worst_ratio", worst_ratio},
               {"worst_core_gap", worst_gap}, {"violations", violations}, {"remainder", rep.remainder}};
  return rep;
}

double accuracy_factor(double d_min, double d_max) {
  const double r = d_min / d_max;
  return (1.0 - (d_max + 1.0) / (2.0 * d_min)) * (40.0 / 27.0 * r * r - 2.0 / 9.0 * r);
}

double active_fault_bound(double d_min, double d_max, std::size_t n, double c) {
  const double r = d_min / d_max;
  return (c * r * r - 2.0 / 9.0 * r) * static_cast<double>(n);
}

std::optional<double> accuracy_eps(const llb::LlbConfig& config, std::size_t t) {
  const double f = accuracy_factor(config.d_min, config.d_max);
  if (!(f > 0.0)) return std::nullopt;
  const auto n = static_cast<double>(config.n);
  const double eps = std::max(2.0 / n, 3.0 * static_cast<double>(config.tau1) * static_cast<double>(t) / (n * f));
  return std::min(eps, 1.0);
}

bool accuracy_precondition(const llb::LlbConfig& config, std::size_t t, double eps) {
  const double f = accuracy_factor(config.d_min, config.d_max);
  return static_cast<double>(t) < eps * static_cast<double>(config.n) * f / (3.0 * static_cast<double>(config.tau1));
}

}  // namespace ftllb::oracle
