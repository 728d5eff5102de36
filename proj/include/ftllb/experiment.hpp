#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ftllb/graph.hpp"
#include "ftllb/protocols.hpp"
#include "ftllb/spectral.hpp"

namespace ftllb::experiment {

enum class Protocol { kCheckGraph, kLlb, kCount, kConsensusCrash, kConsensusOmission };

std::string to_string(Protocol p);
Protocol parse_protocol(const std::string& name);

/// Graph used by check-graph and llb.
struct TopologySpec {
  std::string kind = "gnp";  // gnp | regular | complete | cycle | file
  double c = 20.0;           // gnp: p = c ln n (ln ln n)^2 / (n - 1), capped at 1
  std::optional<double> p;   // gnp: explicit edge probability
  std::size_t degree = 0;    // regular
  std::string path;          // file
};

struct ExperimentSpec {
  Protocol protocol = Protocol::kLlb;
  std::size_t n = 128;
  std::size_t t = 0;
  std::string adversary = "none";
  std::string preset = "desk";  // desk | theory
  std::optional<double> c1;
  std::optional<double> c2;
  std::optional<std::size_t> tau1;
  std::optional<std::size_t> tau2;
  std::uint64_t seed_first = 1;
  std::uint64_t seed_last = 1;
  bool oracle = true;
  std::string trace_dir;
  TopologySpec topology;
  /// llb: indicator | bits | uniform; consensus: random | zeros | ones.
  std::string inputs;
  std::size_t flags = 0;  // count: raised flags (0 = n/4)
  double drop_probability = 0.5;
  bool onset_zero = false;
  protocols::SkipMode skip_mode = protocols::SkipMode::kResumeNextIteration;

  /// Throws ConfigError when the spec is unusable.
  void validate() const;
  std::size_t seed_count() const { return static_cast<std::size_t>(seed_last - seed_first + 1); }
};

/// Keys: protocol, n, t, adversary, preset, C1, C2, tau1, tau2, seed or
/// seeds [first, last], oracle, trace_dir, topology {kind, c, p, degree,
/// path}, inputs, flags, skip_mode, adversary_options {drop_probability,
/// onset_zero}. Unknown keys are rejected.
ExperimentSpec spec_from_json(const nlohmann::json& j);
ExperimentSpec load_spec(const std::string& path);
nlohmann::json to_json(const ExperimentSpec& spec);

/// "a..b" or "a".
std::pair<std::uint64_t, std::uint64_t> parse_seed_range(const std::string& text);

struct Constants {
  double c1 = 4.0;
  double c2 = 8.0;
  bool clamped = false;  // c2 lowered so that the link density is 1
};

/// Preset constants with overrides applied. The desk preset clamps C2 when
/// the link density would exceed 1; the theory preset refuses (ConfigError).
Constants resolve_constants(const ExperimentSpec& spec);

struct SeedRow {
  std::uint64_t seed = 0;
  std::string outcome;  // ok | fail | uncertified | error
  std::size_t rounds = 0;
  std::uint64_t messages = 0;
  std::uint64_t bits = 0;
  std::size_t active_count = 0;
  std::optional<bool> agreed;
  std::optional<bool> valid;
  std::optional<int> decided_value;
  bool hard_violation = false;
  nlohmann::json verdicts = nlohmann::json::array();
  nlohmann::json details = nlohmann::json::object();
};

struct ExperimentReport {
  ExperimentSpec spec;
  Constants constants;
  std::vector<SeedRow> rows;

  /// False when any hard invariant (value range, sandwich on a regular graph,
  /// agreement persistence) failed in any seed.
  bool hard_ok() const;
  double success_rate() const;
  nlohmann::json summary() const;
  std::string csv(bool with_header = true) const;
};

inline constexpr const char* kCsvVersionLine = "# ftllb-results v1";
inline constexpr const char* kCsvColumns =
    "seed,protocol,n,t,adversary,agreed,valid,decided_value,rounds,messages,bits,active_count,outcome,oracle";

/// FTLLB_THREADS when set and positive, otherwise hardware concurrency.
std::size_t worker_count();

/// Runs every seed (in parallel across seeds) and assembles rows in seed
/// order.
ExperimentReport run(const ExperimentSpec& spec);

/// One seed, synchronously.
SeedRow run_seed(const ExperimentSpec& spec, const Constants& constants, std::uint64_t seed);

/// Graph for a topology spec; the stream is derived from `seed`.
graph::Graph build_topology(const TopologySpec& spec, std::size_t n, std::uint64_t seed);

/// Degree window and spectral floor from the random-graph concentration
/// statement: p (n - 1)(1 -/+ 1/(20 ln ln n)), floor 1 - 1/(10 ln ln n).
graph::WellConnectedParams concentration_window(std::size_t n, double p);

/// Well-connectedness parameters used for a topology (window for gnp, exact
/// degrees otherwise).
graph::WellConnectedParams topology_params(const TopologySpec& spec, const graph::Graph& g);

/// Appends report rows to `path`, writing the version line and header when
/// the file is new or empty.
void append_csv(const std::string& path, const ExperimentReport& report);

}  // namespace ftllb::experiment
