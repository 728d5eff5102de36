#include "ftllb/adversary.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "ftllb/errors.hpp"

namespace ftllb::simnet {
namespace {

constexpr std::uint64_t kAdversaryStream = 0x616476ULL;

std::vector<std::size_t> evenly_spaced(std::size_t count, std::size_t horizon) {
  std::vector<std::size_t> rounds(count);
  for (std::size_t k = 0; k < count; ++k) rounds[k] = (k + 1) * horizon / (count + 1);
  return rounds;
}

std::vector<NodeId> live_nodes(const RoundView& view, const std::vector<NodeId>& exclude) {
  std::vector<NodeId> out;
  for (NodeId v = 0; v < view.size(); ++v)
    if (!view.crashed(v) && std::find(exclude.begin(), exclude.end(), v) == exclude.end()) out.push_back(v);
  return out;
}

class CrashAdversary final : public Adversary {
 public:
  CrashAdversary(CrashStrategy strategy, std::size_t budget, std::uint64_t seed, const AdversaryOptions& options)
      : strategy_(strategy), budget_(budget), rng_(derive_seed(seed, kAdversaryStream)) {
    const std::size_t horizon = std::max<std::size_t>(options.horizon, 1);
    if (strategy == CrashStrategy::kRandom) {
      schedule_.resize(budget);
      for (auto& r : schedule_) r = rng_.below(horizon);
      std::sort(schedule_.begin(), schedule_.end());
    } else {
      schedule_ = evenly_spaced(budget, horizon);
    }
  }

  FaultKind kind() const override { return FaultKind::kCrash; }
  std::size_t budget() const override { return budget_; }
  std::string name() const override {
    switch (strategy_) {
      case CrashStrategy::kRandom: return "random";
      case CrashStrategy::kTargetedExtreme: return "targeted_extreme";
      case CrashStrategy::kEclipse: return "eclipse";
    }
    return "crash";
  }

  DeliveryDecision decide(const RoundView& view) override {
    DeliveryDecision decision;
    while (next_ < schedule_.size() && schedule_[next_] <= view.round()) {
      ++next_;
      const auto victim = pick(view, decision.newly_faulted);
      if (!victim) continue;
      decision.newly_faulted.push_back(*victim);
      if (strategy_ == CrashStrategy::kEclipse) {
        decision.drops.emplace_back(*victim, kAnyNode);
      } else {
        // A random half of the victim's last messages still go out.
        view.recipients(*victim, scratch_);
        for (NodeId u : scratch_)
          if (rng_.coin()) decision.drops.emplace_back(*victim, u);
      }
    }
    return decision;
  }

 private:
  std::optional<NodeId> pick(const RoundView& view, const std::vector<NodeId>& chosen) {
    switch (strategy_) {
      case CrashStrategy::kRandom: {
        const auto live = live_nodes(view, chosen);
        if (live.empty()) return std::nullopt;
        return live[rng_.below(live.size())];
      }
      case CrashStrategy::kTargetedExtreme: {
        const auto live = live_nodes(view, chosen);
        if (live.empty()) return std::nullopt;
        const auto loads = view.state().loads;
        if (loads.size() != view.size()) return live.front();
        double mean = 0.0;
        for (NodeId v : live) mean += loads[v];
        mean /= static_cast<double>(live.size());
        NodeId best = live.front();
        double best_gap = -1.0;
        for (NodeId v : live) {
          const double gap = std::abs(loads[v] - mean);
          if (gap > best_gap) {
            best_gap = gap;
            best = v;
          }
        }
        return best;
      }
      case CrashStrategy::kEclipse: {
        if (!centre_) centre_ = static_cast<NodeId>(rng_.below(view.size()));
        for (NodeId u : view.topology().graph().neighbors(*centre_)) {
          if (u == *centre_ || view.crashed(u)) continue;
          if (std::find(chosen.begin(), chosen.end(), u) != chosen.end()) continue;
          return u;
        }
        return std::nullopt;
      }
    }
    return std::nullopt;
  }

  CrashStrategy strategy_;
  std::size_t budget_;
  Rng rng_;
  std::vector<std::size_t> schedule_;
  std::size_t next_ = 0;
  std::optional<NodeId> centre_;
  std::vector<NodeId> scratch_;
};

class OmissionAdversary final : public Adversary {
 public:
  OmissionAdversary(OmissionStrategy strategy, std::size_t budget, std::uint64_t seed,
                    const AdversaryOptions& options)
      : strategy_(strategy),
        budget_(budget),
        options_(options),
        rng_(derive_seed(seed, kAdversaryStream, 1)) {
    options_.horizon = std::max<std::size_t>(options_.horizon, 1);
  }

  FaultKind kind() const override { return FaultKind::kOmission; }
  std::size_t budget() const override { return budget_; }
  std::string name() const override {
    switch (strategy_) {
      case OmissionStrategy::kRandomDrops: return "random_drops";
      case OmissionStrategy::kPartitionFlicker: return "partition_flicker";
      case OmissionStrategy::kSilenceInbound: return "silence_inbound";
    }
    return "omission";
  }

  DeliveryDecision decide(const RoundView& view) override {
    DeliveryDecision decision;
    if (budget_ == 0) return decision;
    if (targets_.empty()) plan(view.size());
    const std::size_t r = view.round();
    for (std::size_t k = 0; k < targets_.size(); ++k)
      if (!marked_[k] && onsets_[k] <= r) {
        marked_[k] = true;
        decision.newly_faulted.push_back(targets_[k]);
      }

    switch (strategy_) {
      case OmissionStrategy::kRandomDrops:
        for (std::size_t k = 0; k < targets_.size(); ++k) {
          if (!marked_[k]) continue;
          const NodeId f = targets_[k];
          view.recipients(f, scratch_);
          for (NodeId u : scratch_)
            if (rng_.bernoulli(options_.drop_probability)) decision.drops.emplace_back(f, u);
          view.senders_to(f, scratch_);
          for (NodeId u : scratch_)
            if (rng_.bernoulli(options_.drop_probability)) decision.drops.emplace_back(u, f);
        }
        break;
      case OmissionStrategy::kPartitionFlicker: {
        if (!marked_[0] || (r - onsets_[0]) % 2 != 0) break;
        auto inside = [&](NodeId u) { return std::binary_search(sorted_targets_.begin(), sorted_targets_.end(), u); };
        for (NodeId s : sorted_targets_) {
          view.recipients(s, scratch_);
          for (NodeId u : scratch_)
            if (!inside(u)) decision.drops.emplace_back(s, u);
          view.senders_to(s, scratch_);
          for (NodeId u : scratch_)
            if (!inside(u)) decision.drops.emplace_back(u, s);
        }
        break;
      }
      case OmissionStrategy::kSilenceInbound:
        for (std::size_t k = 0; k < targets_.size(); ++k)
          if (marked_[k]) decision.drops.emplace_back(kAnyNode, targets_[k]);
        break;
    }
    return decision;
  }

 private:
  void plan(std::size_t n) {
    std::vector<NodeId> all(n);
    std::iota(all.begin(), all.end(), NodeId{0});
    const std::size_t t = std::min(budget_, n);
    for (std::size_t k = 0; k < t; ++k) std::swap(all[k], all[k + rng_.below(n - k)]);
    targets_.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(t));
    onsets_.resize(t);
    marked_.assign(t, false);
    if (strategy_ == OmissionStrategy::kPartitionFlicker) {
      const std::size_t onset = options_.onset_zero ? 0 : rng_.below(options_.horizon);
      std::fill(onsets_.begin(), onsets_.end(), onset);
    } else {
      for (auto& o : onsets_) o = options_.onset_zero ? 0 : rng_.below(options_.horizon);
    }
    sorted_targets_ = targets_;
    std::sort(sorted_targets_.begin(), sorted_targets_.end());
  }

  OmissionStrategy strategy_;
  std::size_t budget_;
  AdversaryOptions options_;
  Rng rng_;
  std::vector<NodeId> targets_;
  std::vector<NodeId> sorted_targets_;
  std::vector<std::size_t> onsets_;
  std::vector<bool> marked_;
  std::vector<NodeId> scratch_;
};

}  // namespace

std::shared_ptr<Adversary> crash_adversary(CrashStrategy strategy, std::size_t budget, std::uint64_t seed,
                                           const AdversaryOptions& options) {
  return std::make_shared<CrashAdversary>(strategy, budget, seed, options);
}

std::shared_ptr<Adversary> omission_adversary(OmissionStrategy strategy, std::size_t budget, std::uint64_t seed,
                                              const AdversaryOptions& options) {
  return std::make_shared<OmissionAdversary>(strategy, budget, seed, options);
}

bool is_omission_strategy(std::string_view name) {
  return name == "random_drops" || name == "partition_flicker" || name == "silence_inbound";
}

std::shared_ptr<Adversary> make_adversary(std::string_view name, std::size_t budget, std::uint64_t seed,
                                          const AdversaryOptions& options) {
  if (name == "none") return nullptr;
  if (name == "random") return crash_adversary(CrashStrategy::kRandom, budget, seed, options);
  if (name == "targeted_extreme") return crash_adversary(CrashStrategy::kTargetedExtreme, budget, seed, options);
  if (name == "eclipse") return crash_adversary(CrashStrategy::kEclipse, budget, seed, options);
  if (name == "random_drops") return omission_adversary(OmissionStrategy::kRandomDrops, budget, seed, options);
  if (name == "partition_flicker")
    return omission_adversary(OmissionStrategy::kPartitionFlicker, budget, seed, options);
  if (name == "silence_inbound") return omission_adversary(OmissionStrategy::kSilenceInbound, budget, seed, options);
  throw ConfigError("unknown adversary '" + std::string(name) + "'");
}

}  // namespace ftllb::simnet
