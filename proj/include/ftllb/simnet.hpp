#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ftllb/graph.hpp"
#include "ftllb/rng.hpp"

namespace ftllb::simnet {

/// Wildcard endpoint in a drop: (kAnyNode, v) drops everything addressed to
/// v this round, (v, kAnyNode) everything v sent.
inline constexpr NodeId kAnyNode = std::numeric_limits<NodeId>::max();

/// Graphs up to this size also carry one bitset row per node.
inline constexpr std::size_t kBitsetLimit = 4096;

/// Communication graph of one protocol phase. Nodes see only their port
/// numbers; port k of v leads to graph().neighbors(v)[k].
class Topology {
 public:
  explicit Topology(graph::Graph g, std::uint64_t version = 0);

  static std::shared_ptr<const Topology> complete(std::size_t n);

  const graph::Graph& graph() const noexcept { return graph_; }
  std::size_t size() const noexcept { return graph_.size(); }
  std::size_t degree(NodeId v) const { return graph_.degree(v); }
  std::uint64_t version() const noexcept { return version_; }

  NodeId node_at(NodeId v, std::size_t port) const { return graph_.neighbors(v)[port]; }
  /// Port of v that leads to u; throws std::out_of_range when not adjacent.
  std::size_t port_of(NodeId v, NodeId u) const;

  bool has_rows() const noexcept { return !rows_.empty(); }
  std::size_t words() const noexcept { return words_; }
  const std::uint64_t* row(NodeId v) const { return rows_.data() + static_cast<std::size_t>(v) * words_; }

 private:
  graph::Graph graph_;
  std::uint64_t version_;
  std::size_t words_ = 0;
  std::vector<std::uint64_t> rows_;
};

enum class Tag : std::uint8_t { kLoad, kStatus, kDummy, kInquiry, kResponse };

/// One machine word of content plus a tag; |M| = 64 bits for accounting.
struct Payload {
  double value = 0.0;
  Tag tag = Tag::kLoad;
  std::uint8_t flag = 0;
};

enum class FaultKind { kNone, kCrash, kOmission };

struct DeliveryDecision {
  std::vector<NodeId> newly_faulted;
  std::vector<std::pair<NodeId, NodeId>> drops;  // (sender, receiver)
};

struct Metrics {
  std::uint64_t rounds = 0;
  std::uint64_t messages_sent = 0;
  std::uint64_t messages_delivered = 0;
  std::uint64_t messages_dropped = 0;
  std::uint64_t bits() const { return messages_sent * 64; }
};

/// Protocol state exposed to the adversary and to trace digests.
struct StateView {
  std::span<const double> loads;
  std::span<const std::uint8_t> flags;
};

class Engine;
class Program;

/// Read-only picture of a round after every node produced its messages.
class RoundView {
 public:
  RoundView(const Engine& engine, const StateView& state) : engine_(engine), state_(state) {}

  std::size_t round() const;
  std::size_t size() const;
  const Topology& topology() const;
  const StateView& state() const { return state_; }

  bool crashed(NodeId v) const;
  bool faulted(NodeId v) const;
  std::size_t faulted_count() const;

  bool unicast_round() const;
  bool sending(NodeId v) const;
  /// Intended receivers of v's messages this round, ascending.
  void recipients(NodeId v, std::vector<NodeId>& out) const;
  /// Nodes that address a message to v this round, ascending.
  void senders_to(NodeId v, std::vector<NodeId>& out) const;

 private:
  const Engine& engine_;
  const StateView& state_;
};

class Adversary {
 public:
  virtual ~Adversary() = default;
  virtual FaultKind kind() const = 0;
  virtual std::size_t budget() const = 0;
  virtual std::string name() const = 0;
  virtual DeliveryDecision decide(const RoundView& view) = 0;
};

/// Messages produced in phase (1) of a round. A round is either multicast
/// (one payload per node to all ports) or unicast (engine-mediated global
/// addressing, used by graph setup and inquiry phases); mixing is an error.
class Outbox {
 public:
  explicit Outbox(Engine& engine) : engine_(engine) {}
  bool alive(NodeId v) const;
  void multicast(NodeId v, const Payload& p);
  void unicast(NodeId from, NodeId to, const Payload& p);

 private:
  Engine& engine_;
};

/// What node v received this round. Port-based accessors refer to the
/// current topology; in unicast rounds `for_each` reports sender ids.
class Delivery {
 public:
  explicit Delivery(const Engine& engine) : engine_(engine) {}

  const Topology& topology() const;
  bool unicast_round() const;
  /// False for crashed nodes (including those crashed this round).
  bool receiving(NodeId v) const;
  std::size_t count(NodeId v) const;
  /// Sum of received values.
  double sum(NodeId v) const;
  /// Median of received values; mean of the two middle ones for even counts.
  /// Requires count(v) > 0.
  double median(NodeId v) const;
  /// Lowest port whose payload has a nonzero flag, or -1.
  std::ptrdiff_t first_flagged_port(NodeId v) const;
  /// Payload behind first_flagged_port, if any.
  std::optional<Payload> first_flagged(NodeId v) const;
  void for_each(NodeId v, const std::function<void(std::size_t, const Payload&)>& fn) const;
  /// Senders heard by v as a node-indexed bitset of words_for(n) words.
  void heard(NodeId v, std::uint64_t* out) const;

 private:
  const Engine& engine_;
};

class Program {
 public:
  virtual ~Program() = default;
  virtual void produce(Outbox& out) = 0;
  virtual void absorb(const Delivery& in) = 0;
  virtual StateView state() const { return {}; }
};

struct RoundRecord {
  std::size_t round = 0;
  std::vector<NodeId> faulted;  // newly faulted this round
  std::uint64_t messages_sent = 0;
  std::uint64_t messages_dropped = 0;
  std::vector<std::uint64_t> digests;
  std::vector<std::pair<NodeId, NodeId>> drops;
  std::vector<double> loads;
};

class TraceSink {
 public:
  virtual ~TraceSink() = default;
  virtual void on_round(const RoundRecord& record) = 0;
};

/// 64-bit digest of one node's (load, flag) state.
std::uint64_t state_digest(double load, std::uint8_t flag);

/// Round-synchronous engine. One instance per run, single-threaded.
class Engine {
 public:
  Engine(std::size_t n, std::uint64_t seed, std::shared_ptr<Adversary> adversary = nullptr);
  ~Engine();
  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  std::size_t size() const noexcept { return n_; }
  std::size_t round() const noexcept { return round_; }
  FaultKind fault_kind() const noexcept { return kind_; }
  std::size_t budget() const noexcept { return budget_; }

  void set_topology(std::shared_ptr<const Topology> topology);
  const Topology& topology() const { return *topology_; }
  std::shared_ptr<const Topology> topology_ptr() const { return topology_; }

  /// Runs one round: produce, adversary decision, validation, delivery,
  /// absorb.
  void step(Program& program);

  bool crashed(NodeId v) const { return test(crashed_, v); }
  bool faulted(NodeId v) const { return test(faulted_, v); }
  std::size_t faulted_count() const noexcept { return faulted_count_; }
  std::vector<NodeId> faulted_nodes() const;
  const std::vector<std::uint64_t>& crashed_bits() const noexcept { return crashed_; }

  /// Per-node random stream, independent of every other node and of the
  /// adversary.
  Rng& rng(NodeId v) { return node_rng_[v]; }

  const Metrics& metrics() const noexcept { return metrics_; }

  void set_trace(TraceSink* sink, bool with_loads = false, bool with_drops = true);

 private:
  friend class RoundView;
  friend class Outbox;
  friend class Delivery;

  static bool test(const std::vector<std::uint64_t>& bits, NodeId v) {
    return (bits[v >> 6] >> (v & 63)) & 1u;
  }
  static bool test_raw(const std::uint64_t* bits, NodeId v) { return (bits[v >> 6] >> (v & 63)) & 1u; }
  static void set(std::vector<std::uint64_t>& bits, NodeId v) { bits[v >> 6] |= std::uint64_t{1} << (v & 63); }

  struct Unicast {
    NodeId from;
    NodeId to;
    Payload payload;
  };

  void begin_round();
  void validate(DeliveryDecision& decision);
  void apply(const DeliveryDecision& decision);
  void deliver_unicast(const DeliveryDecision& decision);
  void count_multicast(const DeliveryDecision& decision);
  const std::uint64_t* effective_row(NodeId v) const;
  void build_median_index() const;
  void emit_trace(const DeliveryDecision& decision, const StateView& state);

  std::size_t n_;
  std::size_t words_;
  std::size_t round_ = 0;
  std::shared_ptr<const Topology> topology_;
  std::shared_ptr<Adversary> adversary_;
  FaultKind kind_ = FaultKind::kNone;
  std::size_t budget_ = 0;

  std::vector<std::uint64_t> crashed_;
  std::vector<std::uint64_t> faulted_;
  std::size_t faulted_count_ = 0;
  std::vector<Rng> node_rng_;
  Metrics metrics_;
  std::uint64_t round_sent_ = 0;
  std::uint64_t round_dropped_ = 0;

  TraceSink* trace_ = nullptr;
  bool trace_loads_ = false;
  bool trace_drops_ = true;

  // Round scratch.
  bool unicast_ = false;
  bool any_message_ = false;
  std::vector<std::uint64_t> sending_;
  std::vector<double> values_;
  std::vector<std::uint8_t> flags_;
  std::vector<Tag> tags_;
  std::vector<std::uint64_t> flagged_;
  std::vector<Unicast> unicasts_;

  std::vector<std::uint64_t> eff_send_;        // sending minus sender-wide drops
  std::vector<std::uint64_t> receiving_;       // alive after this round
  std::vector<std::uint64_t> inbound_blocked_; // (kAnyNode, v)
  std::vector<std::int32_t> pair_slot_;        // receiver -> index into pair_blocked_ or -1
  std::vector<std::uint64_t> pair_blocked_;
  std::vector<NodeId> pair_receivers_;

  std::vector<Unicast> inbox_;                 // unicast deliveries sorted by (to, from)
  std::vector<std::size_t> inbox_offsets_;
  std::vector<Unicast> kept_;
  std::vector<std::size_t> fill_pos_;

  std::vector<std::uint64_t> all_rows_;        // effective rows, n <= kBitsetLimit
  std::vector<std::size_t> row_counts_;
  bool rows_ready_ = false;
  mutable NodeId cached_v_ = kAnyNode;
  mutable std::vector<std::uint64_t> cached_row_;
  mutable bool median_ready_ = false;
  mutable std::vector<NodeId> sorted_senders_;
  mutable std::vector<std::uint64_t> prefix_;
};

}  // namespace ftllb::simnet
