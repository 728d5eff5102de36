#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ftllb/errors.hpp"
#include "ftllb/protocols.hpp"
#include "ftllb/simd.hpp"

namespace ftllb::protocols {
namespace {

using simnet::Delivery;
using simnet::Engine;
using simnet::Outbox;
using simnet::Tag;

double lnln(std::size_t n) { return std::log(std::log(static_cast<double>(n))); }

void fill_common(ConsensusConfig& c, std::size_t n, double c1, double c2) {
  if (!(c1 > 0.0) || !(c2 > 0.0)) throw ConfigError("C1 and C2 must be positive");
  if (n < 16) throw ConfigError("consensus needs n >= 16");
  c.n = n;
  c.c1 = c1;
  c.c2 = c2;
  c.graph = SetGraphConfig::make(n, c2);
  c.d_star = c.graph.q * static_cast<double>(n - 1);
  const double a = 1.0 / (20.0 * lnln(n));
  c.d_star_min = c.d_star * (1.0 - a);
  c.d_star_max = c.d_star * (1.0 + a);
  c.llb = llb::derive_config(c.d_star_min, c.d_star_max, n, llb::Tau2Policy::kShrinkFallback);
}

/// Dissemination sub-loop of the crash protocol, run on G*.
class Dissemination final : public simnet::Program {
 public:
  Dissemination(std::vector<double>& mu, std::vector<std::uint8_t>& lb_active,
                const std::vector<std::uint8_t>& participants, double skip_below)
      : mu_(mu), lb_(lb_active), participants_(participants), skip_below_(skip_below),
        skipping_(mu.size(), 0) {}

  void produce(Outbox& out) override {
    for (NodeId v = 0; v < mu_.size(); ++v)
      if (participants_[v] && !skipping_[v]) out.multicast(v, {mu_[v], Tag::kStatus, lb_[v]});
  }

  void absorb(const Delivery& in) override {
    for (NodeId v = 0; v < mu_.size(); ++v) {
      if (!participants_[v] || skipping_[v] || !in.receiving(v)) continue;
      if (static_cast<double>(in.count(v)) < skip_below_) {
        skipping_[v] = 1;
        continue;
      }
      if (auto p = in.first_flagged(v)) {
        mu_[v] = p->value;
        lb_[v] = 1;
      }
    }
  }

  simnet::StateView state() const override { return {mu_, lb_}; }
  const std::vector<std::uint8_t>& skipping() const { return skipping_; }

 private:
  std::vector<double>& mu_;
  std::vector<std::uint8_t>& lb_;
  const std::vector<std::uint8_t>& participants_;
  double skip_below_;
  std::vector<std::uint8_t> skipping_;
};

/// Two unicast rounds: requesters ask `fanout` random other nodes, eligible
/// responders answer with their bit, a requester adopts the answer of the
/// lowest-id responder.
class Inquiry final : public simnet::Program {
 public:
  Inquiry(Engine& engine, std::vector<std::uint8_t>& b, const std::vector<std::uint8_t>& requesters,
          const std::vector<std::uint8_t>& responders, std::size_t fanout)
      : engine_(engine), b_(b), requesters_(requesters), responders_(responders),
        fanout_(std::min(fanout, engine.size() - 1)), asked_by_(engine.size()) {
    loads_.assign(b.begin(), b.end());
  }

  bool done() const { return phase_ >= 2; }

  void produce(Outbox& out) override {
    const std::size_t n = b_.size();
    if (phase_ == 0) {
      std::vector<NodeId> pool;
      for (NodeId v = 0; v < n; ++v) {
        if (!requesters_[v] || !out.alive(v)) continue;
        pool.clear();
        for (NodeId u = 0; u < n; ++u)
          if (u != v) pool.push_back(u);
        Rng& rng = engine_.rng(v);
        for (std::size_t k = 0; k < fanout_; ++k) {
          const auto j = k + static_cast<std::size_t>(rng.below(pool.size() - k));
          std::swap(pool[k], pool[j]);
          out.unicast(v, pool[k], {0.0, Tag::kInquiry, 0});
        }
      }
    } else {
      for (NodeId v = 0; v < n; ++v) {
        if (!responders_[v] || !out.alive(v)) continue;
        for (NodeId u : asked_by_[v]) out.unicast(v, u, {static_cast<double>(b_[v]), Tag::kResponse, 1});
      }
    }
  }

  void absorb(const Delivery& in) override {
    const std::size_t n = b_.size();
    if (phase_ == 0) {
      for (NodeId v = 0; v < n; ++v) {
        if (!in.receiving(v)) continue;
        in.for_each(v, [&](std::size_t from, const simnet::Payload&) { asked_by_[v].push_back(static_cast<NodeId>(from)); });
      }
    } else {
      for (NodeId v = 0; v < n; ++v) {
        if (!requesters_[v] || !in.receiving(v)) continue;
        if (auto p = in.first_flagged(v)) {
          b_[v] = p->value != 0.0 ? 1 : 0;
          loads_[v] = p->value;
          ++answered_;
        }
      }
    }
    ++phase_;
  }

  simnet::StateView state() const override { return {loads_, b_}; }
  std::size_t answered() const { return answered_; }

 private:
  Engine& engine_;
  std::vector<std::uint8_t>& b_;
  const std::vector<std::uint8_t>& requesters_;
  const std::vector<std::uint8_t>& responders_;
  std::size_t fanout_;
  std::vector<std::vector<NodeId>> asked_by_;
  std::vector<double> loads_;
  int phase_ = 0;
  std::size_t answered_ = 0;
};

simnet::Metrics since(const simnet::Metrics& now, const simnet::Metrics& start) {
  simnet::Metrics m = now;
  m.rounds -= start.rounds;
  m.messages_sent -= start.messages_sent;
  m.messages_delivered -= start.messages_delivered;
  m.messages_dropped -= start.messages_dropped;
  return m;
}

std::optional<std::uint8_t> unanimous(std::span<const std::uint8_t> inputs) {
  for (auto x : inputs)
    if (x != inputs[0]) return std::nullopt;
  return inputs[0];
}

double mean_over(const std::vector<std::uint8_t>& b, const std::vector<std::uint8_t>& mask) {
  double s = 0.0;
  std::size_t k = 0;
  for (std::size_t v = 0; v < b.size(); ++v)
    if (mask[v]) {
      s += b[v];
      ++k;
    }
  return k == 0 ? 0.0 : s / static_cast<double>(k);
}

std::size_t count(const std::vector<std::uint8_t>& mask) {
  return static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](std::uint8_t x) { return x != 0; }));
}

void finalize(ConsensusResult& r, Engine& engine, std::span<const std::uint8_t> inputs, const std::vector<std::uint8_t>& b,
              const simnet::Metrics& start, bool crash_mode) {
  const std::size_t n = engine.size();
  r.decisions = b;
  r.correct.assign(n, 0);
  for (NodeId v = 0; v < n; ++v) r.correct[v] = crash_mode ? !engine.crashed(v) : !engine.faulted(v);

  std::optional<std::uint8_t> common;
  r.agreed = true;
  for (NodeId v = 0; v < n; ++v) {
    if (!r.correct[v]) continue;
    if (!common) common = b[v];
    else if (*common != b[v]) r.agreed = false;
  }
  if (r.agreed) r.decided_value = common;
  r.valid = true;
  if (auto c = unanimous(inputs))
    for (NodeId v = 0; v < n; ++v)
      if (r.correct[v] && b[v] != *c) r.valid = false;
  r.terminated = true;
  r.persistence_violations = persistence_violations(r.iterations);
  r.metrics = since(engine.metrics(), start);
  r.rounds = r.metrics.rounds;
}

void check_inputs(Engine& engine, std::span<const std::uint8_t> inputs, const ConsensusConfig& config,
                  ConsensusMode mode) {
  if (inputs.size() != engine.size()) throw std::invalid_argument("input count does not match engine");
  if (config.n != engine.size()) throw std::invalid_argument("consensus config is for a different n");
  if (config.mode != mode) throw std::invalid_argument("consensus config has the wrong mode");
  for (auto x : inputs)
    if (x > 1) throw std::invalid_argument("consensus inputs are bits");
}

/// Shared bookkeeping at an iteration boundary.
void close_iteration(ConsensusResult& r, IterationRecord rec, const std::vector<std::uint8_t>& b,
                     const std::vector<std::uint8_t>& active_end, const std::vector<double>& mu,
                     const ConsensusConfig& config, std::optional<std::uint8_t> input_value) {
  rec.b = b;
  rec.active = active_end;
  rec.active_end = count(active_end);
  rec.max_mu_gap = 0.0;
  for (std::size_t v = 0; v < b.size(); ++v)
    if (active_end[v]) rec.max_mu_gap = std::max(rec.max_mu_gap, std::abs(mu[v] - rec.mu_star));
  rec.safe = static_cast<double>(rec.active_begin - std::min(rec.active_begin, rec.active_end)) <=
             config.safe_loss_bound();
  if (rec.safe && rec.max_mu_gap > config.threshold_margin) ++r.unsafe_inaccuracies;
  if (input_value)
    for (std::size_t v = 0; v < b.size(); ++v)
      if (active_end[v] && b[v] != *input_value) {
        ++r.unanimity_violations;
        break;
      }
  r.iterations.push_back(std::move(rec));
}

double rounds_per_iteration(const ConsensusConfig& c) {
  double r = 1.0 + static_cast<double>(c.llb.tau1 + c.llb.tau2);
  if (c.mode == ConsensusMode::kCrash) r += static_cast<double>(c.dissemination_rounds);
  return r;
}

}  // namespace

ConsensusConfig ConsensusConfig::crash(std::size_t n, double c1, double c2) {
  ConsensusConfig c;
  c.mode = ConsensusMode::kCrash;
  fill_common(c, n, c1, c2);
  const double ln_n = std::log(static_cast<double>(n));
  c.iterations = static_cast<std::size_t>(std::ceil(c1 * std::sqrt(static_cast<double>(n) * ln_n)));
  c.dissemination_rounds = 40 * static_cast<std::size_t>(std::ceil(ln_n)) + 1;
  c.threshold_margin = std::sqrt(ln_n / static_cast<double>(n)) / 40.0;
  c.inquiry_count = static_cast<std::size_t>(std::ceil(10.0 * ln_n));
  return c;
}

ConsensusConfig ConsensusConfig::omission(std::size_t n, std::size_t t, double c1, double c2) {
  ConsensusConfig c;
  c.mode = ConsensusMode::kOmission;
  fill_common(c, n, c1, c2);
  c.t = t;
  const double ln_n = std::log(static_cast<double>(n));
  const double ll = lnln(n);
  const double td = static_cast<double>(t);
  c.iterations = static_cast<std::size_t>(std::ceil(2.0 * c1 * std::max(td * ln_n / std::sqrt(static_cast<double>(n)), ln_n)));
  c.threshold_margin = std::sqrt(ln_n / static_cast<double>(n)) / 12.0;
  c.inquiry_count = std::min<std::size_t>(n - 1, static_cast<std::size_t>(std::ceil(11.0 * c2 * ln_n * ll * ll * td)) + 1);
  return c;
}

std::size_t ConsensusConfig::total_rounds() const {
  const std::size_t per = static_cast<std::size_t>(rounds_per_iteration(*this));
  return (mode == ConsensusMode::kCrash ? 1 : 0) + iterations * per + 2;
}

double ConsensusConfig::safe_loss_bound() const {
  const double nd = static_cast<double>(n);
  const double ln_n = std::log(nd);
  if (mode == ConsensusMode::kCrash) return std::sqrt(nd / ln_n) / c1;
  return std::sqrt(nd) / ln_n / c1;
}

std::uint8_t decide_threshold(double mu, double margin, Rng& coin) {
  if (mu < 0.5 - margin) return 0;
  if (mu > 0.5 + margin) return 1;
  return coin.coin() ? 1 : 0;
}

std::size_t persistence_violations(const std::vector<IterationRecord>& iterations) {
  std::optional<std::uint8_t> settled;
  std::size_t violations = 0;
  for (const auto& rec : iterations) {
    std::optional<std::uint8_t> common;
    bool same = true;
    for (std::size_t v = 0; v < rec.b.size(); ++v) {
      if (!rec.active[v]) continue;
      if (!common) common = rec.b[v];
      else if (*common != rec.b[v]) same = false;
    }
    if (!common) continue;
    if (settled) {
      if (!same || *common != *settled) ++violations;
    } else if (same) {
      settled = common;
    }
  }
  return violations;
}

ConsensusResult consensus_crash(Engine& engine, std::span<const std::uint8_t> inputs, const ConsensusConfig& config) {
  check_inputs(engine, inputs, config, ConsensusMode::kCrash);
  const std::size_t n = engine.size();
  const auto start = engine.metrics();
  const auto input_value = unanimous(inputs);

  ConsensusResult r;
  std::vector<std::uint8_t> b(inputs.begin(), inputs.end());
  std::vector<std::uint8_t> ever_skipped(n, 0);
  std::vector<double> mu(n, 0.0);
  std::vector<std::uint8_t> lb(n, 0);
  std::vector<std::uint8_t> participants(n), active(n);

  const SetGraphResult g_star = set_graph(engine, config.graph);
  const double skip_below = config.d_star_min / 5.0;

  for (std::size_t it = 0; it < config.iterations; ++it) {
    IterationRecord rec;
    for (NodeId v = 0; v < n; ++v) {
      active[v] = !engine.crashed(v) && !ever_skipped[v];
      participants[v] = config.skip_mode == SkipMode::kUntilEnd ? active[v] : !engine.crashed(v);
    }
    rec.active_begin = count(active);
    rec.mu_star = mean_over(b, active);

    const SetGraphResult g = set_graph(engine, config.graph, participants);
    engine.set_topology(g.topology);
    std::vector<double> x(b.begin(), b.end());
    llb::LlbProgram program(config.llb, x, {}, participants);
    while (!program.done()) engine.step(program);
    r.range_violations += program.range_violations();
    for (NodeId v = 0; v < n; ++v) {
      mu[v] = program.loads()[v];
      lb[v] = program.type(v) == llb::NodeType::kActive ? 1 : 0;
      if (participants[v] && !engine.crashed(v) && lb[v]) ++rec.llb_active;
    }

    for (NodeId v = 0; v < n; ++v) participants[v] = participants[v] && !engine.crashed(v);
    engine.set_topology(g_star.topology);
    Dissemination dis(mu, lb, participants, skip_below);
    for (std::size_t k = 0; k < config.dissemination_rounds; ++k) engine.step(dis);

    for (NodeId v = 0; v < n; ++v) {
      if (!participants[v] || engine.crashed(v)) continue;
      if (dis.skipping()[v]) ever_skipped[v] = 1;
      const double m = mu[v];
      if (m >= 0.5 - config.threshold_margin && m <= 0.5 + config.threshold_margin) ++rec.coin_flips;
      b[v] = decide_threshold(m, config.threshold_margin, engine.rng(v));
    }
    for (NodeId v = 0; v < n; ++v) active[v] = !engine.crashed(v) && !ever_skipped[v];
    close_iteration(r, std::move(rec), b, active, mu, config, input_value);
  }

  std::vector<std::uint8_t> requesters(n), responders(n);
  for (NodeId v = 0; v < n; ++v) {
    requesters[v] = !engine.crashed(v) && ever_skipped[v];
    responders[v] = !engine.crashed(v) && !ever_skipped[v];
  }
  Inquiry inquiry(engine, b, requesters, responders, config.inquiry_count);
  while (!inquiry.done()) engine.step(inquiry);

  r.ever_skipped = count(ever_skipped);
  for (NodeId v = 0; v < n; ++v) r.active_count += (!engine.crashed(v) && !ever_skipped[v]) ? 1 : 0;
  r.expected_messages = static_cast<double>(config.iterations) * static_cast<double>(n) * config.d_star_max *
                        rounds_per_iteration(config);
  finalize(r, engine, inputs, b, start, true);
  return r;
}

ConsensusResult consensus_omission(Engine& engine, std::span<const std::uint8_t> inputs, const ConsensusConfig& config) {
  check_inputs(engine, inputs, config, ConsensusMode::kOmission);
  const std::size_t n = engine.size();
  const std::size_t words = simd::words_for(n);
  const auto start = engine.metrics();
  const auto input_value = unanimous(inputs);

  ConsensusResult r;
  std::vector<std::uint8_t> b(inputs.begin(), inputs.end());
  std::vector<std::uint8_t> suspected(n, 0);
  std::vector<double> mu(n, 0.0);
  std::vector<std::uint8_t> participants(n), active(n);
  llb::LlbOptions options;
  options.track_omitted = true;

  for (std::size_t it = 0; it < config.iterations; ++it) {
    IterationRecord rec;
    for (NodeId v = 0; v < n; ++v) participants[v] = !suspected[v];
    rec.active_begin = count(participants);
    rec.mu_star = mean_over(b, participants);

    const SetGraphResult g = set_graph(engine, config.graph, participants);
    engine.set_topology(g.topology);
    std::vector<double> x(b.begin(), b.end());
    llb::LlbProgram program(config.llb, x, options, participants);
    for (NodeId v = 0; v < n; ++v)
      if (participants[v]) program.add_missed(v, g.missed.data() + v * words);
    while (!program.done()) engine.step(program);
    r.range_violations += program.range_violations();

    for (NodeId v = 0; v < n; ++v) {
      if (!participants[v]) continue;
      mu[v] = program.loads()[v];
      if (program.type(v) == llb::NodeType::kActive) ++rec.llb_active;
      if (program.omitted(v) > 0) suspected[v] = 1;
      const double m = mu[v];
      if (m >= 0.5 - config.threshold_margin && m <= 0.5 + config.threshold_margin) ++rec.coin_flips;
      b[v] = decide_threshold(m, config.threshold_margin, engine.rng(v));
    }
    for (NodeId v = 0; v < n; ++v) active[v] = !suspected[v];
    close_iteration(r, std::move(rec), b, active, mu, config, input_value);
  }

  for (NodeId v = 0; v < n; ++v) active[v] = !suspected[v];
  Inquiry inquiry(engine, b, suspected, active, config.inquiry_count);
  while (!inquiry.done()) engine.step(inquiry);

  r.suspected = count(suspected);
  r.active_count = n - r.suspected;
  r.expected_messages = static_cast<double>(config.iterations) * static_cast<double>(n) * config.d_star_max *
                        rounds_per_iteration(config);
  finalize(r, engine, inputs, b, start, false);
  return r;
}

}  // namespace ftllb::protocols
