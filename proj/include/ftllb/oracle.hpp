#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ftllb/errors.hpp"
#include "ftllb/graph.hpp"
#include "ftllb/llb.hpp"
#include "ftllb/trace.hpp"

// Centralized reference computations over recorded runs. Nothing here is
// available to nodes; every function sees the whole system.
namespace ftllb::oracle {

using Series = std::vector<std::vector<double>>;  // [round][node], round 0 = inputs

/// Result of one check: {lemma, passed, first_violation, margins}.
struct Verdict {
  std::string lemma;
  bool passed = true;
  bool precondition_met = true;
  nlohmann::json first_violation;  // null when passed
  nlohmann::json margins = nlohmann::json::object();

  nlohmann::json to_json() const;
};

struct IdealRun {
  Series x;
  double mass_drift = 0.0;  // max_i |sum x_i - sum x_0|
};

/// Balancing on g with self-loops padding every degree to d_max: weight
/// 1/(2 d_max) per edge, the rest on the node itself. Requires every degree
/// <= d_max (std::invalid_argument otherwise).
IdealRun ideal_run(const graph::Graph& g, std::span<const double> x0, double d_max, std::size_t tau1);

struct SkewedRuns {
  Series x_zero;
  Series x_one;
};

/// Replays the recorded sender sets through both skewed recurrences:
///   x0_i(v) = sum_{u in N_i(v)} x0_{i-1}(u) / (2 d_max) + x0_{i-1}(v) / 2
///   x1_i(v) = same over x1 + (d_min - |N_i(v)|) / (2 d_max)
/// Throws TraceMismatch unless the trace has exactly tau1 rounds.
SkewedRuns skewed_runs(const llb::BalancingTrace& trace, double d_min, double d_max, std::size_t tau1);

struct OracleRun {
  Series x_ideal;
  Series x_zero;
  Series x_one;
  double mu = 0.0;
};

OracleRun build_oracle(const graph::Graph& g, const llb::BalancingTrace& trace, double d_min, double d_max,
                       std::size_t tau1);

/// x_zero <= x_actual <= x_one and x_zero <= x_ideal <= x_one at every round
/// and node, within 1e-9. x_actual includes round 0.
Verdict sandwich_check(const OracleRun& oracle, const Series& x_actual);

/// Balancing-phase loads (round 0 = inputs) of a recorded run.
Series actual_series(const llb::BalancingTrace& trace);

/// Every load within [lo, hi] (1e-9 slack).
Verdict value_range_check(const Series& loads, double lo, double hi);

struct ShrinkageReport {
  Verdict verdict;
  std::vector<std::size_t> remainder;  // |R_0| .. |R_tau2|
  std::size_t core_size = 0;           // |C_0|
};

/// Outlier-fixing audit. C_0 is the largest set of finally-active nodes with
/// loads within eps of mu before fixing and at least (d_max + 1)/2 neighbours
/// inside the set; C_i holds the nodes still active after round i that heard
/// at least (d_min + 1)/2 members of C_{i-1}; R_i = A \ C_i. Checks
/// |R_{i+1}| <= (14/15)|R_i| + 1 for i >= 1, R_tau2 empty and C_tau2 within
/// eps. When t >= (2 d_min / d_max) eps n / 81 the verdict passes with
/// precondition_met = false.
ShrinkageReport remainder_shrinkage_check(const graph::Graph& g, const llb::FixingTrace& fixing,
                                          std::span<const std::uint8_t> final_active, double mu, double eps,
                                          double d_min, double d_max, std::size_t t);

// -- numeric forms of the load-balancing guarantees ---------------------------

/// (1 - (d_max + 1)/(2 d_min)) (40/27 r^2 - 2/9 r), r = d_min / d_max.
double accuracy_factor(double d_min, double d_max);

/// (c r^2 - 2/9 r) n: the active-set fault bound with leading coefficient c
/// (4/81 in the summary form, 40/81 in the active-set form).
double active_fault_bound(double d_min, double d_max, std::size_t n, double c);

/// Smallest admissible eps for t faults: max(2/n, 3 tau1 t / (n f)), capped at
/// 1. nullopt when f <= 0.
std::optional<double> accuracy_eps(const llb::LlbConfig& config, std::size_t t);

/// t < eps n f / (3 tau1).
bool accuracy_precondition(const llb::LlbConfig& config, std::size_t t, double eps);

// -- trace replay --------------------------------------------------------------

struct ReplayOptions {
  /// Subset of {"value_range", "sandwich", "remainder_shrinkage"}; empty means
  /// all of them.
  std::vector<std::string> lemmas;
  std::optional<double> eps;  // default: accuracy_eps for the header's t
};

struct ReplayReport {
  std::vector<Verdict> verdicts;
  /// True when every verdict whose precondition holds passed.
  bool passed() const;
  nlohmann::json to_json() const;
};

/// Rebuilds an LLB run from a trace (header: protocol "llb", n, edges,
/// inputs, d_min, d_max, tau1, tau2, fault_kind, t) and runs the checks.
/// Throws TraceMismatch when recorded loads disagree with the recomputation
/// or the round count is not tau1 + tau2, ConfigError for other protocols.
ReplayReport replay(const simnet::TraceFile& trace, const ReplayOptions& options = {});

/// Header that makes an LLB trace replayable.
nlohmann::json llb_trace_header(const graph::Graph& g, std::span<const double> inputs, const llb::LlbConfig& config,
                                simnet::FaultKind kind, std::size_t t);

}  // namespace ftllb::oracle
