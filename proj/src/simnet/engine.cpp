#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

#include "ftllb/errors.hpp"
#include "ftllb/simd.hpp"
#include "ftllb/simnet.hpp"

namespace ftllb::simnet {
namespace {

constexpr std::uint64_t bit(NodeId v) { return std::uint64_t{1} << (v & 63); }

std::size_t popcount(const std::uint64_t* a, std::size_t words) {
  return simd::active_kernels().popcount_and(a, a, words);
}

}  // namespace

std::uint64_t state_digest(double load, std::uint8_t flag) {
  std::uint64_t bits = 0;
  static_assert(sizeof bits == sizeof load);
  std::memcpy(&bits, &load, sizeof bits);
  return derive_seed(bits, flag);
}

// -- RoundView ---------------------------------------------------------------

std::size_t RoundView::round() const { return engine_.round_; }
std::size_t RoundView::size() const { return engine_.n_; }
const Topology& RoundView::topology() const { return *engine_.topology_; }
bool RoundView::crashed(NodeId v) const { return engine_.crashed(v); }
bool RoundView::faulted(NodeId v) const { return engine_.faulted(v); }
std::size_t RoundView::faulted_count() const { return engine_.faulted_count_; }
bool RoundView::unicast_round() const { return engine_.unicast_; }

bool RoundView::sending(NodeId v) const { return Engine::test(engine_.sending_, v); }

void RoundView::recipients(NodeId v, std::vector<NodeId>& out) const {
  out.clear();
  if (engine_.unicast_) {
    for (const auto& m : engine_.unicasts_)
      if (m.from == v) out.push_back(m.to);
    std::sort(out.begin(), out.end());
    return;
  }
  if (!Engine::test(engine_.sending_, v)) return;
  const auto nb = engine_.topology_->graph().neighbors(v);
  out.assign(nb.begin(), nb.end());
}

void RoundView::senders_to(NodeId v, std::vector<NodeId>& out) const {
  out.clear();
  if (engine_.unicast_) {
    for (const auto& m : engine_.unicasts_)
      if (m.to == v) out.push_back(m.from);
    std::sort(out.begin(), out.end());
    return;
  }
  for (NodeId u : engine_.topology_->graph().neighbors(v))
    if (Engine::test(engine_.sending_, u)) out.push_back(u);
}

// -- Outbox ------------------------------------------------------------------

bool Outbox::alive(NodeId v) const { return !engine_.crashed(v); }

void Outbox::multicast(NodeId v, const Payload& p) {
  if (engine_.crashed(v)) return;
  if (engine_.unicast_) throw std::logic_error("multicast in a unicast round");
  Engine::set(engine_.sending_, v);
  engine_.values_[v] = p.value;
  engine_.flags_[v] = p.flag;
  engine_.tags_[v] = p.tag;
  if (p.flag != 0) Engine::set(engine_.flagged_, v);
  engine_.any_message_ = true;
}

void Outbox::unicast(NodeId from, NodeId to, const Payload& p) {
  if (engine_.crashed(from)) return;
  if (!engine_.unicast_ && engine_.any_message_) throw std::logic_error("unicast in a multicast round");
  if (to >= engine_.n_ || to == from) throw std::invalid_argument("bad unicast address");
  engine_.unicast_ = true;
  engine_.any_message_ = true;
  Engine::set(engine_.sending_, from);
  engine_.unicasts_.push_back({from, to, p});
}

// -- Delivery ----------------------------------------------------------------

const Topology& Delivery::topology() const { return *engine_.topology_; }
bool Delivery::unicast_round() const { return engine_.unicast_; }

bool Delivery::receiving(NodeId v) const { return Engine::test(engine_.receiving_, v); }

std::size_t Delivery::count(NodeId v) const {
  if (engine_.unicast_) return engine_.inbox_offsets_[v + 1] - engine_.inbox_offsets_[v];
  if (engine_.rows_ready_) return engine_.row_counts_[v];
  return popcount(engine_.effective_row(v), engine_.words_);
}

double Delivery::sum(NodeId v) const {
  if (engine_.unicast_) {
    double s = 0.0;
    for (std::size_t i = engine_.inbox_offsets_[v]; i < engine_.inbox_offsets_[v + 1]; ++i)
      s += engine_.inbox_[i].payload.value;
    return s;
  }
  return simd::active_kernels().masked_sum(engine_.effective_row(v), engine_.values_.data(), engine_.n_);
}

double Delivery::median(NodeId v) const {
  std::vector<double> gathered;
  if (engine_.unicast_) {
    for (std::size_t i = engine_.inbox_offsets_[v]; i < engine_.inbox_offsets_[v + 1]; ++i)
      gathered.push_back(engine_.inbox_[i].payload.value);
  } else if (engine_.n_ > kBitsetLimit) {
    const std::uint64_t* e = engine_.effective_row(v);
    for (NodeId u : engine_.topology_->graph().neighbors(v))
      if (Engine::test_raw(e, u)) gathered.push_back(engine_.values_[u]);
  } else {
    const std::uint64_t* e = engine_.effective_row(v);
    const std::size_t c = popcount(e, engine_.words_);
    if (c == 0) throw std::logic_error("median of an empty inbox");
    engine_.build_median_index();
    const auto& kernels = simd::active_kernels();
    const std::size_t m = engine_.sorted_senders_.size();
    const std::size_t w = engine_.words_;
    // Smallest prefix of the value-sorted senders holding k + 1 of v's senders.
    auto kth = [&](std::size_t k) {
      std::size_t lo = 1, hi = m;
      while (lo < hi) {
        const std::size_t mid = lo + (hi - lo) / 2;
        if (kernels.popcount_and(e, engine_.prefix_.data() + mid * w, w) >= k + 1)
          hi = mid;
        else
          lo = mid + 1;
      }
      return engine_.values_[engine_.sorted_senders_[lo - 1]];
    };
    if (c % 2 == 1) return kth(c / 2);
    return std::midpoint(kth(c / 2 - 1), kth(c / 2));
  }
  if (gathered.empty()) throw std::logic_error("median of an empty inbox");
  const std::size_t c = gathered.size();
  auto mid = gathered.begin() + static_cast<std::ptrdiff_t>(c / 2);
  std::nth_element(gathered.begin(), mid, gathered.end());
  const double upper = *mid;
  if (c % 2 == 1) return upper;
  const double lower = *std::max_element(gathered.begin(), mid);
  return std::midpoint(lower, upper);
}

std::ptrdiff_t Delivery::first_flagged_port(NodeId v) const {
  if (engine_.unicast_) {
    for (std::size_t i = engine_.inbox_offsets_[v]; i < engine_.inbox_offsets_[v + 1]; ++i)
      if (engine_.inbox_[i].payload.flag != 0) return engine_.inbox_[i].from;
    return -1;
  }
  const std::uint64_t* e = engine_.effective_row(v);
  for (std::size_t i = 0; i < engine_.words_; ++i) {
    const std::uint64_t hit = e[i] & engine_.flagged_[i];
    if (hit != 0) {
      const auto u = static_cast<NodeId>(i * 64 + static_cast<std::size_t>(std::countr_zero(hit)));
      return static_cast<std::ptrdiff_t>(engine_.topology_->port_of(v, u));
    }
  }
  return -1;
}

std::optional<Payload> Delivery::first_flagged(NodeId v) const {
  if (engine_.unicast_) {
    for (std::size_t i = engine_.inbox_offsets_[v]; i < engine_.inbox_offsets_[v + 1]; ++i)
      if (engine_.inbox_[i].payload.flag != 0) return engine_.inbox_[i].payload;
    return std::nullopt;
  }
  const std::uint64_t* e = engine_.effective_row(v);
  for (std::size_t i = 0; i < engine_.words_; ++i) {
    const std::uint64_t hit = e[i] & engine_.flagged_[i];
    if (hit != 0) {
      const auto u = static_cast<NodeId>(i * 64 + static_cast<std::size_t>(std::countr_zero(hit)));
      return Payload{engine_.values_[u], engine_.tags_[u], engine_.flags_[u]};
    }
  }
  return std::nullopt;
}

void Delivery::for_each(NodeId v, const std::function<void(std::size_t, const Payload&)>& fn) const {
  if (engine_.unicast_) {
    for (std::size_t i = engine_.inbox_offsets_[v]; i < engine_.inbox_offsets_[v + 1]; ++i)
      fn(engine_.inbox_[i].from, engine_.inbox_[i].payload);
    return;
  }
  const std::uint64_t* e = engine_.effective_row(v);
  const auto nb = engine_.topology_->graph().neighbors(v);
  for (std::size_t port = 0; port < nb.size(); ++port) {
    const NodeId u = nb[port];
    if (Engine::test_raw(e, u)) fn(port, Payload{engine_.values_[u], engine_.tags_[u], engine_.flags_[u]});
  }
}

void Delivery::heard(NodeId v, std::uint64_t* out) const {
  if (engine_.unicast_) {
    std::fill(out, out + engine_.words_, 0);
    for (std::size_t i = engine_.inbox_offsets_[v]; i < engine_.inbox_offsets_[v + 1]; ++i)
      out[engine_.inbox_[i].from >> 6] |= bit(engine_.inbox_[i].from);
    return;
  }
  const std::uint64_t* e = engine_.effective_row(v);
  std::copy(e, e + engine_.words_, out);
}

// -- Engine ------------------------------------------------------------------

Engine::Engine(std::size_t n, std::uint64_t seed, std::shared_ptr<Adversary> adversary)
    : n_(n), words_(simd::words_for(n)), adversary_(std::move(adversary)) {
  if (n < 2) throw std::invalid_argument("engine needs at least two nodes");
  if (adversary_) {
    kind_ = adversary_->kind();
    budget_ = adversary_->budget();
    if (budget_ > n) throw std::invalid_argument("adversary budget exceeds n");
  }
  crashed_.assign(words_, 0);
  faulted_.assign(words_, 0);
  node_rng_.reserve(n);
  for (std::size_t v = 0; v < n; ++v) node_rng_.emplace_back(derive_seed(seed, 0x6e6f6465ULL, v));
  sending_.assign(words_, 0);
  flagged_.assign(words_, 0);
  values_.assign(n, 0.0);
  flags_.assign(n, 0);
  tags_.assign(n, Tag::kLoad);
  eff_send_.assign(words_, 0);
  receiving_.assign(words_, 0);
  inbound_blocked_.assign(words_, 0);
  pair_slot_.assign(n, -1);
  cached_row_.assign(words_, 0);
  inbox_offsets_.assign(n + 1, 0);
  topology_ = Topology::complete(n);
}

Engine::~Engine() = default;

void Engine::set_topology(std::shared_ptr<const Topology> topology) {
  if (!topology || topology->size() != n_) throw std::invalid_argument("topology size mismatch");
  topology_ = std::move(topology);
}

std::vector<NodeId> Engine::faulted_nodes() const {
  std::vector<NodeId> out;
  for (NodeId v = 0; v < n_; ++v)
    if (faulted(v)) out.push_back(v);
  return out;
}

void Engine::set_trace(TraceSink* sink, bool with_loads, bool with_drops) {
  trace_ = sink;
  trace_loads_ = with_loads;
  trace_drops_ = with_drops;
}

void Engine::begin_round() {
  unicast_ = false;
  any_message_ = false;
  std::fill(sending_.begin(), sending_.end(), 0);
  std::fill(flagged_.begin(), flagged_.end(), 0);
  unicasts_.clear();
  for (NodeId r : pair_receivers_) pair_slot_[r] = -1;
  pair_receivers_.clear();
  pair_blocked_.clear();
  std::fill(inbound_blocked_.begin(), inbound_blocked_.end(), 0);
  cached_v_ = kAnyNode;
  rows_ready_ = false;
  median_ready_ = false;
}

void Engine::validate(DeliveryDecision& decision) {
  auto reject = [](const std::string& why) { throw BudgetExceeded("adversary decision rejected: " + why); };
  std::vector<std::uint64_t> fresh(words_, 0);
  std::size_t added = 0;
  for (NodeId v : decision.newly_faulted) {
    if (v >= n_) reject("node out of range");
    if (kind_ == FaultKind::kNone) reject("no faults allowed");
    if (kind_ == FaultKind::kCrash && (crashed(v) || test(fresh, v))) reject("node already crashed");
    if (!faulted(v) && !test(fresh, v)) {
      set(fresh, v);
      ++added;
    }
  }
  if (faulted_count_ + added > budget_) reject("budget exceeded");

  for (const auto& [s, r] : decision.drops) {
    if (kind_ == FaultKind::kNone) reject("no drops allowed");
    if ((s != kAnyNode && s >= n_) || (r != kAnyNode && r >= n_)) reject("node out of range");
    if (s == kAnyNode && r == kAnyNode) reject("drop without endpoint");
    if (kind_ == FaultKind::kCrash) {
      // Only a node crashing in this very round loses part of its output.
      if (s == kAnyNode || !test(fresh, s)) reject("crash-mode drop from a node not crashing this round");
    } else {
      const bool touches = (s != kAnyNode && (faulted(s) || test(fresh, s))) ||
                           (r != kAnyNode && (faulted(r) || test(fresh, r)));
      if (!touches) reject("drop does not touch a faulted node");
    }
  }
}

void Engine::apply(const DeliveryDecision& decision) {
  for (NodeId v : decision.newly_faulted) {
    if (!faulted(v)) {
      set(faulted_, v);
      ++faulted_count_;
    }
    if (kind_ == FaultKind::kCrash) set(crashed_, v);
  }
  for (std::size_t i = 0; i < words_; ++i) receiving_[i] = ~crashed_[i];
  if (n_ % 64 != 0) receiving_[words_ - 1] &= (std::uint64_t{1} << (n_ % 64)) - 1;

  std::copy(sending_.begin(), sending_.end(), eff_send_.begin());
  std::vector<std::uint64_t> outbound_blocked(words_, 0);
  for (const auto& [s, r] : decision.drops) {
    if (r == kAnyNode) {
      set(outbound_blocked, s);
    } else if (s == kAnyNode) {
      set(inbound_blocked_, r);
    } else {
      if (pair_slot_[r] < 0) {
        pair_slot_[r] = static_cast<std::int32_t>(pair_receivers_.size());
        pair_receivers_.push_back(r);
        pair_blocked_.resize(pair_blocked_.size() + words_, 0);
      }
      pair_blocked_[static_cast<std::size_t>(pair_slot_[r]) * words_ + (s >> 6)] |= bit(s);
    }
  }
  for (std::size_t i = 0; i < words_; ++i) eff_send_[i] &= ~outbound_blocked[i];
}

void Engine::deliver_unicast(const DeliveryDecision& decision) {
  kept_.clear();
  std::uint64_t dropped = 0;
  const bool any_drop = !decision.drops.empty();
  for (const auto& m : unicasts_) {
    if (!test(receiving_, m.to)) continue;
    bool blocked = false;
    if (any_drop) {
      blocked = !test(eff_send_, m.from) || test(inbound_blocked_, m.to);
      if (!blocked && pair_slot_[m.to] >= 0)
        blocked = test_raw(pair_blocked_.data() + static_cast<std::size_t>(pair_slot_[m.to]) * words_, m.from);
    }
    if (blocked) {
      ++dropped;
      continue;
    }
    kept_.push_back(m);
  }
  // Counting sort by receiver, then by sender within each (small) bucket.
  std::fill(inbox_offsets_.begin(), inbox_offsets_.end(), 0);
  for (const auto& m : kept_) ++inbox_offsets_[m.to + 1];
  std::partial_sum(inbox_offsets_.begin(), inbox_offsets_.end(), inbox_offsets_.begin());
  inbox_.resize(kept_.size());
  fill_pos_.assign(inbox_offsets_.begin(), inbox_offsets_.end() - 1);
  for (const auto& m : kept_) inbox_[fill_pos_[m.to]++] = m;
  kept_.clear();
  for (std::size_t v = 0; v < n_; ++v) {
    const auto first = inbox_.begin() + static_cast<std::ptrdiff_t>(inbox_offsets_[v]);
    const auto last = inbox_.begin() + static_cast<std::ptrdiff_t>(inbox_offsets_[v + 1]);
    auto by_sender = [](const Unicast& a, const Unicast& b) { return a.from < b.from; };
    if (!std::is_sorted(first, last, by_sender)) std::sort(first, last, by_sender);
  }
  metrics_.messages_sent += unicasts_.size();
  metrics_.messages_delivered += inbox_.size();
  metrics_.messages_dropped += dropped;
  round_dropped_ = dropped;
  round_sent_ = unicasts_.size();
}

const std::uint64_t* Engine::effective_row(NodeId v) const {
  if (rows_ready_) return all_rows_.data() + static_cast<std::size_t>(v) * words_;
  if (cached_v_ == v) return cached_row_.data();
  cached_v_ = v;
  std::uint64_t* out = cached_row_.data();
  if (!test(receiving_, v) || test(inbound_blocked_, v)) {
    std::fill(out, out + words_, 0);
    return out;
  }
  if (topology_->has_rows()) {
    const std::uint64_t* r = topology_->row(v);
    for (std::size_t i = 0; i < words_; ++i) out[i] = r[i] & eff_send_[i];
  } else {
    std::fill(out, out + words_, 0);
    for (NodeId u : topology_->graph().neighbors(v))
      if (test(eff_send_, u)) out[u >> 6] |= bit(u);
  }
  if (pair_slot_[v] >= 0) {
    const std::uint64_t* b = pair_blocked_.data() + static_cast<std::size_t>(pair_slot_[v]) * words_;
    for (std::size_t i = 0; i < words_; ++i) out[i] &= ~b[i];
  }
  return out;
}

void Engine::build_median_index() const {
  if (median_ready_) return;
  median_ready_ = true;
  sorted_senders_.clear();
  for (std::size_t i = 0; i < words_; ++i) {
    std::uint64_t w = eff_send_[i];
    while (w != 0) {
      sorted_senders_.push_back(static_cast<NodeId>(i * 64 + static_cast<std::size_t>(std::countr_zero(w))));
      w &= w - 1;
    }
  }
  std::sort(sorted_senders_.begin(), sorted_senders_.end(), [this](NodeId a, NodeId b) {
    return values_[a] != values_[b] ? values_[a] < values_[b] : a < b;
  });
  const std::size_t m = sorted_senders_.size();
  prefix_.assign((m + 1) * words_, 0);
  for (std::size_t j = 1; j <= m; ++j) {
    std::copy_n(prefix_.data() + (j - 1) * words_, words_, prefix_.data() + j * words_);
    const NodeId u = sorted_senders_[j - 1];
    prefix_[j * words_ + (u >> 6)] |= bit(u);
  }
}

void Engine::count_multicast(const DeliveryDecision& decision) {
  std::uint64_t sent = 0;
  for (std::size_t i = 0; i < words_; ++i) {
    std::uint64_t w = sending_[i];
    while (w != 0) {
      sent += topology_->degree(static_cast<NodeId>(i * 64 + static_cast<std::size_t>(std::countr_zero(w))));
      w &= w - 1;
    }
  }
  std::uint64_t dropped = 0;
  std::uint64_t delivered = 0;
  std::vector<std::uint64_t> offered(words_);
  // Small graphs: materialise every effective row once for the absorb phase.
  const bool materialise = n_ <= kBitsetLimit;
  if (materialise) {
    all_rows_.assign(n_ * words_, 0);
    row_counts_.assign(n_, 0);
  }
  for (NodeId v = 0; v < n_; ++v) {
    if (!test(receiving_, v)) continue;
    const std::uint64_t* e = effective_row(v);
    const std::size_t c = popcount(e, words_);
    if (materialise) {
      std::copy_n(e, words_, all_rows_.data() + static_cast<std::size_t>(v) * words_);
      e = all_rows_.data() + static_cast<std::size_t>(v) * words_;
      row_counts_[v] = c;
    }
    delivered += c;
    if (!decision.drops.empty()) {
      // Messages that reached a live receiver's port but were blocked.
      if (topology_->has_rows()) {
        const std::uint64_t* r = topology_->row(v);
        for (std::size_t i = 0; i < words_; ++i) offered[i] = r[i] & sending_[i];
      } else {
        std::fill(offered.begin(), offered.end(), 0);
        for (NodeId u : topology_->graph().neighbors(v))
          if (test(sending_, u)) offered[u >> 6] |= bit(u);
      }
      for (std::size_t i = 0; i < words_; ++i)
        dropped += static_cast<std::uint64_t>(std::popcount(offered[i] & ~e[i]));
    }
  }
  rows_ready_ = materialise;
  metrics_.messages_sent += sent;
  metrics_.messages_delivered += delivered;
  metrics_.messages_dropped += dropped;
  round_sent_ = sent;
  round_dropped_ = dropped;
}

void Engine::step(Program& program) {
  begin_round();
  Outbox out(*this);
  program.produce(out);

  const StateView state = program.state();
  DeliveryDecision decision;
  if (adversary_) {
    const RoundView view(*this, state);
    decision = adversary_->decide(view);
    validate(decision);
  }
  apply(decision);
  if (unicast_)
    deliver_unicast(decision);
  else
    count_multicast(decision);

  const Delivery in(*this);
  program.absorb(in);
  ++metrics_.rounds;
  if (trace_ != nullptr) emit_trace(decision, program.state());
  ++round_;
}

void Engine::emit_trace(const DeliveryDecision& decision, const StateView& state) {
  RoundRecord record;
  record.round = round_;
  record.faulted = decision.newly_faulted;
  record.messages_sent = round_sent_;
  record.messages_dropped = round_dropped_;
  record.digests.resize(n_);
  for (NodeId v = 0; v < n_; ++v) {
    const double load = v < state.loads.size() ? state.loads[v] : 0.0;
    const std::uint8_t flag = v < state.flags.size() ? state.flags[v] : 0;
    record.digests[v] = state_digest(load, flag);
  }
  if (trace_drops_) record.drops = decision.drops;
  if (trace_loads_) record.loads.assign(state.loads.begin(), state.loads.end());
  trace_->on_round(record);
}

}  // namespace ftllb::simnet
