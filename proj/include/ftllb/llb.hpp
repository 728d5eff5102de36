#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ftllb/simnet.hpp"

namespace ftllb::llb {

struct LlbConfig {
  double d_min = 0.0;
  double d_max = 0.0;
  std::size_t tau1 = 0;
  std::size_t tau2 = 0;
  std::size_t n = 0;
};

enum class Tau2Policy {
  kStrict,          // InvalidRatio when 34/15 - 4 d_min/(3 d_max) >= 1
  kShrinkFallback,  // use the 14/15 shrink factor in that case
};

/// 34/15 - 4 d_min / (3 d_max).
double shrink_ratio(double d_min, double d_max);

/// tau1 = ceil(32 (d_max/d_min)^2 ln n), tau2 = ceil(ln n / ln(1/rho)).
LlbConfig derive_config(double d_min, double d_max, std::size_t n, Tau2Policy policy = Tau2Policy::kStrict);

/// One balancing step:
///   sum(received) / (2 d_max) + (2 d_max - |received|) / (2 d_max) * x_self.
/// When more than 2 d_max values arrive the denominator becomes |received| so
/// that no weight is negative.
double llb_update(double x_self, std::span<const double> received, double d_max);

struct Coefficients {
  double self;
  double neighbour;
};
Coefficients coefficients(std::size_t heard, double d_max);

enum class NodeType : std::uint8_t { kActive = 0, kSilent = 1 };

struct NodeOutcome {
  double x = 0.0;
  NodeType type = NodeType::kActive;
};

/// Per-round record of the balancing loop: loads after each round and the set
/// of senders each node heard (node-indexed bitsets, `words` per node).
struct BalancingTrace {
  std::size_t n = 0;
  std::size_t words = 0;
  std::vector<double> x0;
  std::vector<std::vector<double>> loads;
  std::vector<std::vector<std::uint64_t>> heard;

  const std::uint64_t* heard_row(std::size_t round, NodeId v) const { return heard[round].data() + v * words; }
};

struct FixingTrace {
  std::size_t n = 0;
  std::size_t words = 0;
  std::vector<double> x_start;
  std::vector<std::vector<double>> loads;
  std::vector<std::vector<std::uint8_t>> silent;  // after each round
  std::vector<std::vector<std::uint64_t>> heard;

  const std::uint64_t* heard_row(std::size_t round, NodeId v) const { return heard[round].data() + v * words; }
};

struct LlbOptions {
  bool record = false;
  /// Count, per node, the ports that failed to deliver at least once.
  bool track_omitted = false;
};

/// Both loops of the algorithm as an engine program: tau1 balancing rounds,
/// then tau2 outlier-fixing rounds. Runs on the engine's current topology.
/// Nodes whose participation flag is zero neither send nor update.
class LlbProgram final : public simnet::Program {
 public:
  LlbProgram(const LlbConfig& config, std::span<const double> inputs, const LlbOptions& options = {},
             std::vector<std::uint8_t> participants = {});

  bool done() const { return round_ >= config_.tau1 + config_.tau2; }
  std::size_t rounds_done() const { return round_; }

  void produce(simnet::Outbox& out) override;
  void absorb(const simnet::Delivery& in) override;
  simnet::StateView state() const override { return {x_, type_}; }

  std::span<const double> loads() const { return x_; }
  NodeType type(NodeId v) const { return static_cast<NodeType>(type_[v]); }
  bool participant(NodeId v) const { return participants_[v] != 0; }
  std::vector<NodeOutcome> outcomes() const;

  /// Loads of participants outside [min input, max input] by more than 1e-9.
  std::size_t range_violations() const { return range_violations_; }
  double input_min() const { return lo_; }
  double input_max() const { return hi_; }

  std::size_t omitted(NodeId v) const;
  /// Marks links of v as already failed (bitset of words_for(n) words).
  /// Requires track_omitted.
  void add_missed(NodeId v, const std::uint64_t* bits);

  const BalancingTrace& balancing_trace() const { return balancing_; }
  const FixingTrace& fixing_trace() const { return fixing_; }

 private:
  void check_range(NodeId v);
  void track_missed(const simnet::Delivery& in, NodeId v, const std::uint64_t* heard);

  LlbConfig config_;
  LlbOptions options_;
  std::size_t n_;
  std::size_t words_;
  std::size_t round_ = 0;
  std::vector<double> x_;
  std::vector<std::uint8_t> type_;
  std::vector<std::uint8_t> participants_;
  double lo_ = 0.0;
  double hi_ = 0.0;
  std::size_t range_violations_ = 0;
  std::vector<std::uint64_t> missed_;
  std::vector<std::uint64_t> scratch_;
  BalancingTrace balancing_;
  FixingTrace fixing_;
};

struct LlbRun {
  std::vector<NodeOutcome> outcomes;
  std::vector<std::uint8_t> crashed;
  std::size_t rounds = 0;
  std::size_t range_violations = 0;
  std::vector<std::size_t> omitted;
  std::optional<BalancingTrace> balancing;
  std::optional<FixingTrace> fixing;

  std::size_t active_count() const;
};

/// Snapshot of a finished program.
LlbRun collect_run(const LlbProgram& program, const simnet::Engine& engine, const LlbOptions& options);

LlbRun run_llb(simnet::Engine& engine, const LlbConfig& config, std::span<const double> inputs,
               const LlbOptions& options = {});

}  // namespace ftllb::llb
