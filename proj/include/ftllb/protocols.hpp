#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "ftllb/llb.hpp"
#include "ftllb/simnet.hpp"

namespace ftllb::protocols {

/// q = C2 ln n (ln ln n)^2 / (n - 1).
double link_density(std::size_t n, double c2);

struct SetGraphConfig {
  double c2 = 0.0;
  std::size_t n = 0;
  double q = 0.0;  // union-graph edge probability
  double p = 0.0;  // per-node sampling probability, 2p - p^2 = q

  /// Throws InvalidDensity when q > 1.
  static SetGraphConfig make(std::size_t n, double c2);
};

struct SetGraphResult {
  std::shared_ptr<const simnet::Topology> topology;
  /// Per node (words_for(n) words each): sampled-by-the-other-side links whose
  /// dummy never arrived. The edge exists regardless.
  std::vector<std::uint64_t> missed;
};

/// One handshake round on the engine. Each participant samples every other
/// node with probability p and sends it a dummy; the resulting union graph
/// links participants that were alive when the round started. Empty
/// `participants` means every node.
SetGraphResult set_graph(simnet::Engine& engine, const SetGraphConfig& config,
                         std::span<const std::uint8_t> participants = {});

// -- counting ------------------------------------------------------------------

struct CountingConfig {
  SetGraphConfig graph;
  llb::LlbConfig llb;

  /// d_min = 3/4 q (n - 1), d_max = 5/4 d_min; tau2 falls back to the 14/15
  /// shrink factor since this ratio never satisfies the strict condition.
  static CountingConfig make(std::size_t n, double c2);
  std::size_t total_rounds() const { return 1 + llb.tau1 + llb.tau2; }
};

struct CountingResult {
  std::vector<std::optional<std::int64_t>> counts;
  llb::LlbRun llb;
  std::shared_ptr<const simnet::Topology> topology;
  std::size_t rounds = 0;
  simnet::Metrics metrics;
};

CountingResult ae_counting(simnet::Engine& engine, std::span<const std::uint8_t> flags, const CountingConfig& config,
                           const llb::LlbOptions& options = {});

// -- consensus -----------------------------------------------------------------

enum class ConsensusMode { kCrash, kOmission };

enum class SkipMode {
  kResumeNextIteration,  // a node that skips dissemination rejoins the next iteration
  kUntilEnd,             // it sits out every remaining iteration
};

struct ConsensusConfig {
  ConsensusMode mode = ConsensusMode::kCrash;
  std::size_t n = 0;
  std::size_t t = 0;
  double c1 = 4.0;
  double c2 = 8.0;
  std::size_t iterations = 0;
  std::size_t dissemination_rounds = 0;
  double threshold_margin = 0.0;
  std::size_t inquiry_count = 0;
  SkipMode skip_mode = SkipMode::kResumeNextIteration;

  SetGraphConfig graph;
  llb::LlbConfig llb;  // per-iteration d^i_min, d^i_max, with n for |A_i|
  double d_star = 0.0;
  double d_star_min = 0.0;
  double d_star_max = 0.0;

  static ConsensusConfig crash(std::size_t n, double c1, double c2);
  static ConsensusConfig omission(std::size_t n, std::size_t t, double c1, double c2);

  std::size_t total_rounds() const;
  /// Per-iteration bound on processes that may stop being active for the
  /// iteration to count as safe.
  double safe_loss_bound() const;
};

/// 0 below 1/2 - margin, 1 above 1/2 + margin, otherwise a fair coin from
/// `coin`.
std::uint8_t decide_threshold(double mu, double margin, Rng& coin);

struct IterationRecord {
  std::vector<std::uint8_t> b;       // after the decision lines
  std::vector<std::uint8_t> active;  // active at the end of the iteration
  std::size_t active_begin = 0;
  std::size_t active_end = 0;
  double mu_star = 0.0;     // mean of b over processes active at the start
  double max_mu_gap = 0.0;  // max |mu_v - mu_star| over processes active at the end
  bool safe = false;
  std::size_t coin_flips = 0;
  std::size_t llb_active = 0;
};

struct ConsensusResult {
  std::vector<std::uint8_t> decisions;
  std::vector<std::uint8_t> correct;
  bool agreed = false;
  bool valid = false;
  bool terminated = false;
  std::optional<std::uint8_t> decided_value;  // set when agreed
  std::size_t rounds = 0;
  simnet::Metrics metrics;
  std::vector<IterationRecord> iterations;
  std::size_t range_violations = 0;
  std::size_t persistence_violations = 0;
  std::size_t unanimity_violations = 0;  // b changed away from a unanimous input
  std::size_t unsafe_inaccuracies = 0;   // safe iterations whose mu missed the margin
  std::size_t suspected = 0;             // omission mode: suspected at the end
  std::size_t ever_skipped = 0;          // crash mode
  std::size_t active_count = 0;
  double expected_messages = 0.0;
};

ConsensusResult consensus_crash(simnet::Engine& engine, std::span<const std::uint8_t> inputs,
                                const ConsensusConfig& config);
ConsensusResult consensus_omission(simnet::Engine& engine, std::span<const std::uint8_t> inputs,
                                   const ConsensusConfig& config);

/// Agreement-persistence audit: once every active node holds the same b at a
/// boundary, every later boundary must show that same common value.
std::size_t persistence_violations(const std::vector<IterationRecord>& iterations);

}  // namespace ftllb::protocols
