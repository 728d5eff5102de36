#include "ftllb/llb.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>

#include "ftllb/errors.hpp"
#include "ftllb/simd.hpp"

namespace ftllb::llb {

double shrink_ratio(double d_min, double d_max) { return 34.0 / 15.0 - 4.0 * d_min / (3.0 * d_max); }

LlbConfig derive_config(double d_min, double d_max, std::size_t n, Tau2Policy policy) {
  if (!(d_min > 0.0) || d_min > d_max) throw std::invalid_argument("need 0 < d_min <= d_max");
  if (n < 2) throw std::invalid_argument("need n >= 2");
  const double ln_n = std::log(static_cast<double>(n));
  const double ratio = d_max / d_min;
  double rho = shrink_ratio(d_min, d_max);
  if (rho >= 1.0) {
    if (policy == Tau2Policy::kStrict)
      throw InvalidRatio("34/15 - 4 d_min/(3 d_max) = " + std::to_string(rho) + " is not below 1");
    rho = 14.0 / 15.0;
  }
  LlbConfig c;
  c.d_min = d_min;
  c.d_max = d_max;
  c.n = n;
  c.tau1 = static_cast<std::size_t>(std::ceil(32.0 * ratio * ratio * ln_n));
  c.tau2 = static_cast<std::size_t>(std::ceil(ln_n / std::log(1.0 / rho)));
  return c;
}

double llb_update(double x_self, std::span<const double> received, double d_max) {
  double s = 0.0;
  for (double x : received) s += x;
  const auto k = static_cast<double>(received.size());
  return x_self + (s - k * x_self) / std::max(2.0 * d_max, k);
}

Coefficients coefficients(std::size_t heard, double d_max) {
  const auto k = static_cast<double>(heard);
  const double denom = std::max(2.0 * d_max, k);
  return {(denom - k) / denom, 1.0 / denom};
}

// -- LlbProgram --------------------------------------------------------------

LlbProgram::LlbProgram(const LlbConfig& config, std::span<const double> inputs, const LlbOptions& options,
                       std::vector<std::uint8_t> participants)
    : config_(config),
      options_(options),
      n_(inputs.size()),
      words_(simd::words_for(inputs.size())),
      x_(inputs.begin(), inputs.end()),
      type_(inputs.size(), static_cast<std::uint8_t>(NodeType::kActive)),
      participants_(std::move(participants)) {
  if (participants_.empty()) participants_.assign(n_, 1);
  if (participants_.size() != n_) throw std::invalid_argument("participant mask size mismatch");
  bool first = true;
  for (NodeId v = 0; v < n_; ++v) {
    if (!participants_[v]) continue;
    if (!std::isfinite(x_[v])) throw std::invalid_argument("input load is not finite");
    lo_ = first ? x_[v] : std::min(lo_, x_[v]);
    hi_ = first ? x_[v] : std::max(hi_, x_[v]);
    first = false;
  }
  if (options_.track_omitted) missed_.assign(n_ * words_, 0);
  scratch_.assign(words_, 0);
  if (options_.record) {
    balancing_ = {n_, words_, x_, {}, {}};
    balancing_.loads.reserve(config_.tau1);
    balancing_.heard.reserve(config_.tau1);
    fixing_.n = n_;
    fixing_.words = words_;
  }
}

void LlbProgram::produce(simnet::Outbox& out) {
  if (round_ == config_.tau1 && options_.record) fixing_.x_start = x_;
  const bool fixing = round_ >= config_.tau1;
  for (NodeId v = 0; v < n_; ++v) {
    if (!participants_[v]) continue;
    if (fixing && type_[v] != static_cast<std::uint8_t>(NodeType::kActive)) continue;
    out.multicast(v, {x_[v], simnet::Tag::kLoad, 0});
  }
}

void LlbProgram::check_range(NodeId v) {
  constexpr double kTol = 1e-9;
  if (x_[v] < lo_ - kTol || x_[v] > hi_ + kTol || !std::isfinite(x_[v])) ++range_violations_;
}

void LlbProgram::track_missed(const simnet::Delivery& in, NodeId v, const std::uint64_t* heard) {
  std::uint64_t* m = missed_.data() + v * words_;
  const auto& topo = in.topology();
  if (topo.has_rows()) {
    const std::uint64_t* row = topo.row(v);
    for (std::size_t i = 0; i < words_; ++i) m[i] |= row[i] & ~heard[i];
  } else {
    for (NodeId u : topo.graph().neighbors(v))
      if (!((heard[u >> 6] >> (u & 63)) & 1u)) m[u >> 6] |= std::uint64_t{1} << (u & 63);
  }
}

void LlbProgram::absorb(const simnet::Delivery& in) {
  const bool fixing = round_ >= config_.tau1;
  std::vector<std::uint64_t>* heard_out = nullptr;
  if (options_.record) {
    auto& bucket = fixing ? fixing_.heard : balancing_.heard;
    bucket.emplace_back(n_ * words_, 0);
    heard_out = &bucket.back();
  }
  const bool need_heard = heard_out != nullptr || options_.track_omitted;
  const double silent_below = 2.0 / 3.0 * config_.d_min;

  for (NodeId v = 0; v < n_; ++v) {
    if (!participants_[v] || !in.receiving(v)) continue;
    if (fixing && type_[v] != static_cast<std::uint8_t>(NodeType::kActive)) continue;

    std::uint64_t* heard = nullptr;
    if (need_heard) {
      heard = heard_out != nullptr ? heard_out->data() + v * words_ : scratch_.data();
      in.heard(v, heard);
      if (options_.track_omitted) track_missed(in, v, heard);
    }

    const std::size_t k = in.count(v);
    if (!fixing) {
      if (k != 0) {
        const auto kd = static_cast<double>(k);
        x_[v] += (in.sum(v) - kd * x_[v]) / std::max(2.0 * config_.d_max, kd);
      }
    } else if (static_cast<double>(k) < silent_below) {
      type_[v] = static_cast<std::uint8_t>(NodeType::kSilent);
    } else {
      x_[v] = in.median(v);
    }
    check_range(v);
  }

  if (options_.record) {
    if (fixing) {
      fixing_.loads.push_back(x_);
      fixing_.silent.push_back(type_);
    } else {
      balancing_.loads.push_back(x_);
    }
  }
  ++round_;
}

std::vector<NodeOutcome> LlbProgram::outcomes() const {
  std::vector<NodeOutcome> out(n_);
  for (NodeId v = 0; v < n_; ++v) out[v] = {x_[v], static_cast<NodeType>(type_[v])};
  return out;
}

std::size_t LlbProgram::omitted(NodeId v) const {
  if (missed_.empty()) return 0;
  std::size_t c = 0;
  for (std::size_t i = 0; i < words_; ++i) c += static_cast<std::size_t>(std::popcount(missed_[v * words_ + i]));
  return c;
}

void LlbProgram::add_missed(NodeId v, const std::uint64_t* bits) {
  if (missed_.empty()) throw std::logic_error("add_missed needs track_omitted");
  std::uint64_t* m = missed_.data() + v * words_;
  for (std::size_t i = 0; i < words_; ++i) m[i] |= bits[i];
}

std::size_t LlbRun::active_count() const {
  std::size_t c = 0;
  for (std::size_t v = 0; v < outcomes.size(); ++v)
    if (!crashed[v] && outcomes[v].type == NodeType::kActive) ++c;
  return c;
}

LlbRun collect_run(const LlbProgram& program, const simnet::Engine& engine, const LlbOptions& options) {
  const std::size_t n = engine.size();
  LlbRun run;
  run.outcomes = program.outcomes();
  run.crashed.resize(n);
  for (NodeId v = 0; v < n; ++v) run.crashed[v] = engine.crashed(v) ? 1 : 0;
  run.rounds = program.rounds_done();
  run.range_violations = program.range_violations();
  if (options.track_omitted) {
    run.omitted.resize(n);
    for (NodeId v = 0; v < n; ++v) run.omitted[v] = program.omitted(v);
  }
  if (options.record) {
    run.balancing = program.balancing_trace();
    run.fixing = program.fixing_trace();
  }
  return run;
}

LlbRun run_llb(simnet::Engine& engine, const LlbConfig& config, std::span<const double> inputs,
               const LlbOptions& options) {
  if (inputs.size() != engine.size()) throw std::invalid_argument("input size does not match engine");
  LlbProgram program(config, inputs, options);
  while (!program.done()) engine.step(program);
  return collect_run(program, engine, options);
}

}  // namespace ftllb::llb
