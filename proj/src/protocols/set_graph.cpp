#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>

#include "ftllb/errors.hpp"
#include "ftllb/protocols.hpp"
#include "ftllb/simd.hpp"

namespace ftllb::protocols {
namespace {

class Handshake final : public simnet::Program {
 public:
  Handshake(simnet::Engine& engine, double p, std::span<const std::uint8_t> participants)
      : engine_(engine), p_(p), n_(engine.size()), words_(simd::words_for(engine.size())) {
    participant_.assign(n_, 1);
    if (!participants.empty()) {
      if (participants.size() != n_) throw std::invalid_argument("participant mask size mismatch");
      participant_.assign(participants.begin(), participants.end());
    }
    heard_.assign(n_ * words_, 0);
  }

  void produce(simnet::Outbox& out) override {
    alive_before_.assign(n_, 0);
    for (NodeId v = 0; v < n_; ++v) {
      if (!participant_[v] || !out.alive(v)) continue;
      alive_before_[v] = 1;
      Rng& rng = engine_.rng(v);
      for (NodeId u = 0; u < n_; ++u) {
        if (u == v || !rng.bernoulli(p_)) continue;
        sampled_.push_back({v, u});
        out.unicast(v, u, {0.0, simnet::Tag::kDummy, 0});
      }
    }
  }

  void absorb(const simnet::Delivery& in) override {
    for (NodeId v = 0; v < n_; ++v)
      if (in.receiving(v)) in.heard(v, heard_.data() + v * words_);
  }

  SetGraphResult finish() const {
    // Upper-triangle adjacency bitset: dedups both directions and yields the
    // edges already sorted.
    std::vector<std::uint64_t> upper(n_ * words_, 0);
    std::vector<std::uint64_t> missed(n_ * words_, 0);
    for (const auto& [from, to] : sampled_) {
      if (!alive_before_[from] || !alive_before_[to]) continue;
      const NodeId a = std::min(from, to), b = std::max(from, to);
      upper[a * words_ + (b >> 6)] |= std::uint64_t{1} << (b & 63);
      const std::uint64_t* h = heard_.data() + to * words_;
      if (!((h[from >> 6] >> (from & 63)) & 1u)) missed[to * words_ + (from >> 6)] |= std::uint64_t{1} << (from & 63);
    }
    std::vector<Edge> edges;
    for (NodeId a = 0; a < n_; ++a)
      for (std::size_t w = 0; w < words_; ++w)
        for (std::uint64_t bits = upper[a * words_ + w]; bits != 0; bits &= bits - 1)
          edges.push_back({a, static_cast<NodeId>(w * 64 + static_cast<std::size_t>(std::countr_zero(bits)))});
    SetGraphResult r;
    r.topology = std::make_shared<const simnet::Topology>(graph::Graph::from_edges(n_, edges), engine_.round());
    r.missed = std::move(missed);
    return r;
  }

 private:
  simnet::Engine& engine_;
  double p_;
  std::size_t n_;
  std::size_t words_;
  std::vector<std::uint8_t> participant_;
  std::vector<std::uint8_t> alive_before_;
  std::vector<Edge> sampled_;
  std::vector<std::uint64_t> heard_;
};

}  // namespace

double link_density(std::size_t n, double c2) {
  if (n < 3) throw std::invalid_argument("link density needs n >= 3");
  const double ln_n = std::log(static_cast<double>(n));
  const double lnln = std::log(ln_n);
  return c2 * ln_n * lnln * lnln / static_cast<double>(n - 1);
}

SetGraphConfig SetGraphConfig::make(std::size_t n, double c2) {
  SetGraphConfig c;
  c.c2 = c2;
  c.n = n;
  c.q = link_density(n, c2);
  if (c.q > 1.0) throw InvalidDensity("q = " + std::to_string(c.q) + " exceeds 1 for n = " + std::to_string(n));
  if (!(c.q > 0.0)) throw InvalidDensity("q = " + std::to_string(c.q) + " is not positive");
  c.p = 1.0 - std::sqrt(1.0 - c.q);
  return c;
}

SetGraphResult set_graph(simnet::Engine& engine, const SetGraphConfig& config,
                         std::span<const std::uint8_t> participants) {
  if (config.n != engine.size()) throw std::invalid_argument("set_graph config is for a different n");
  Handshake h(engine, config.p, participants);
  engine.step(h);
  return h.finish();
}

}  // namespace ftllb::protocols
