#include <cmath>
#include <stdexcept>

#include "ftllb/protocols.hpp"
#include "ftllb/simd.hpp"

namespace ftllb::protocols {

CountingConfig CountingConfig::make(std::size_t n, double c2) {
  CountingConfig c;
  c.graph = SetGraphConfig::make(n, c2);
  const double d_min = 0.75 * c.graph.q * static_cast<double>(n - 1);
  c.llb = llb::derive_config(d_min, 1.25 * d_min, n, llb::Tau2Policy::kShrinkFallback);
  return c;
}

CountingResult ae_counting(simnet::Engine& engine, std::span<const std::uint8_t> flags, const CountingConfig& config,
                           const llb::LlbOptions& options) {
  const std::size_t n = engine.size();
  if (flags.size() != n) throw std::invalid_argument("flag count does not match engine");
  const auto start = engine.metrics();

  CountingResult r;
  SetGraphResult g = set_graph(engine, config.graph);
  engine.set_topology(g.topology);
  r.topology = g.topology;

  std::vector<double> inputs(flags.begin(), flags.end());
  llb::LlbProgram program(config.llb, inputs, options);
  if (options.track_omitted)
    for (NodeId v = 0; v < n; ++v) program.add_missed(v, g.missed.data() + v * simd::words_for(n));
  while (!program.done()) engine.step(program);
  r.llb = llb::collect_run(program, engine, options);

  r.counts.resize(n);
  for (NodeId v = 0; v < n; ++v) {
    const auto& o = r.llb.outcomes[v];
    if (engine.crashed(v) || o.type != llb::NodeType::kActive) continue;
    r.counts[v] = static_cast<std::int64_t>(std::nearbyint(static_cast<double>(n) * o.x));
  }
  r.metrics = engine.metrics();
  r.metrics.rounds -= start.rounds;
  r.metrics.messages_sent -= start.messages_sent;
  r.metrics.messages_delivered -= start.messages_delivered;
  r.metrics.messages_dropped -= start.messages_dropped;
  r.rounds = r.metrics.rounds;
  return r;
}

}  // namespace ftllb::protocols
