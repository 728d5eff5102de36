#include <algorithm>
#include <set>
#include <stdexcept>

#include "ftllb/graph.hpp"

namespace ftllb::graph {
namespace {

std::vector<char> membership(const Graph& g, std::span<const NodeId> w) {
  std::vector<char> in(g.size(), 0);
  for (NodeId v : w) {
    if (v >= g.size()) throw std::out_of_range("node " + std::to_string(v) + " not in graph");
    in[v] = 1;
  }
  return in;
}

}  // namespace

std::size_t internal_edges(const Graph& g, std::span<const NodeId> w) {
  const auto in = membership(g, w);
  std::size_t twice = 0;
  for (NodeId v = 0; v < g.size(); ++v) {
    if (!in[v]) continue;
    for (NodeId u : g.neighbors(v)) twice += in[u] ? 1 : 0;
  }
  return twice / 2;
}

std::size_t boundary_edges(const Graph& g, std::span<const NodeId> w) {
  const auto in = membership(g, w);
  std::size_t count = 0;
  for (NodeId v = 0; v < g.size(); ++v) {
    if (!in[v]) continue;
    for (NodeId u : g.neighbors(v)) count += in[u] ? 0 : 1;
  }
  return count;
}

std::size_t volume(const Graph& g, std::span<const NodeId> w) {
  const auto in = membership(g, w);
  std::size_t vol = 0;
  for (NodeId v = 0; v < g.size(); ++v)
    if (in[v]) vol += g.degree(v);
  return vol;
}

double edge_density_bound(const Graph& g, std::span<const NodeId> w, double lambda2) {
  const double vol_w = static_cast<double>(volume(g, w));
  const double vol_g = 2.0 * static_cast<double>(g.edge_count());
  if (vol_g == 0.0) return 0.0;
  return 0.5 * vol_w * (1.0 - lambda2 * (1.0 - vol_w / vol_g));
}

CoreSubgraphResult peel(const Graph& g, std::span<const NodeId> removed_initially,
                        double min_neighbours) {
  const std::size_t n = g.size();
  std::vector<char> removed = membership(g, removed_initially);
  std::vector<std::size_t> outside(n, 0);
  for (NodeId v = 0; v < n; ++v)
    for (NodeId u : g.neighbors(v)) outside[v] += removed[u] ? 0 : 1;

  // Counts only decrease, so a vertex that qualifies stays qualified; an
  // ordered set yields the lowest-index qualifying vertex at every step.
  std::set<NodeId> pending;
  for (NodeId v = 0; v < n; ++v)
    if (!removed[v] && static_cast<double>(outside[v]) < min_neighbours) pending.insert(v);

  CoreSubgraphResult result;
  while (!pending.empty()) {
    const NodeId v = *pending.begin();
    pending.erase(pending.begin());
    removed[v] = 1;
    ++result.steps;
    for (NodeId u : g.neighbors(v)) {
      --outside[u];
      if (!removed[u] && static_cast<double>(outside[u]) < min_neighbours) pending.insert(u);
    }
  }
  for (NodeId v = 0; v < n; ++v) (removed[v] ? result.removed : result.retained).push_back(v);
  return result;
}

CoreSubgraphResult core_subgraph(const Graph& g, std::span<const NodeId> faults, double phi,
                                 double d_min) {
  if (!(phi > 0.0 && phi < 1.0)) throw std::invalid_argument("phi must lie in (0, 1)");
  CoreSubgraphResult result = peel(g, faults, phi * d_min);
  result.phi = phi;
  return result;
}

double core_alpha_bound(double d_min, double d_max, double phi) {
  const double r = d_min / d_max;
  return (1.0 - phi) * (40.0 / 27.0) * r * r - (2.0 / 9.0) * r;
}

}  // namespace ftllb::graph
