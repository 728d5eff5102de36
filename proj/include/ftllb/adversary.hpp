#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>

#include "ftllb/simnet.hpp"

namespace ftllb::simnet {

enum class CrashStrategy {
  kRandom,           // uniform random live victims at uniform random rounds
  kTargetedExtreme,  // live node whose load is farthest from the live mean
  kEclipse,          // neighbours of one random node, all output lost
};

enum class OmissionStrategy {
  kRandomDrops,       // each incident message dropped with drop_probability
  kPartitionFlicker,  // cut between t nodes and the rest, alternating rounds
  kSilenceInbound,    // everything addressed to the faulty node is lost
};

struct AdversaryOptions {
  /// Rounds the protocol is expected to run; fault times are spread over it.
  std::size_t horizon = 1;
  /// Omission strategies start every fault in round 0 instead of at a random
  /// onset.
  bool onset_zero = false;
  double drop_probability = 0.5;
};

std::shared_ptr<Adversary> crash_adversary(CrashStrategy strategy, std::size_t budget, std::uint64_t seed,
                                           const AdversaryOptions& options = {});
std::shared_ptr<Adversary> omission_adversary(OmissionStrategy strategy, std::size_t budget, std::uint64_t seed,
                                              const AdversaryOptions& options = {});

/// By name: "none", "random", "targeted_extreme", "eclipse", "random_drops",
/// "partition_flicker", "silence_inbound". Returns nullptr for "none".
/// Throws ConfigError for unknown names.
std::shared_ptr<Adversary> make_adversary(std::string_view name, std::size_t budget, std::uint64_t seed,
                                          const AdversaryOptions& options = {});

/// True for the omission strategy names.
bool is_omission_strategy(std::string_view name);

}  // namespace ftllb::simnet
