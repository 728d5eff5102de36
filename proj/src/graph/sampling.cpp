#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "ftllb/graph.hpp"
#include "ftllb/rng.hpp"

namespace ftllb::graph {

Graph sample_gnp(std::size_t n, double p, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("p must lie in [0, 1]");
  if (n < 2) throw std::invalid_argument("G(n, p) needs n >= 2");
  std::vector<Edge> edges;
  edges.reserve(static_cast<std::size_t>(p * static_cast<double>(n * (n - 1) / 2)) + 16);
  for (NodeId u = 0; u < n; ++u)
    for (NodeId v = u + 1; v < n; ++v)
      if (rng.uniform() < p) edges.push_back({u, v});
  return Graph::from_edges(n, edges);
}

double gnp_probability(std::size_t n, double c) {
  const double ln_n = std::log(static_cast<double>(n));
  const double lnln = std::log(ln_n);
  return c * ln_n * lnln * lnln / static_cast<double>(n - 1);
}

Graph sample_random_regular(std::size_t n, std::size_t d, Rng& rng, std::size_t swaps) {
  if (d >= n || (n * d) % 2 != 0) throw std::invalid_argument("need d < n and n * d even");
  // Circulant start: i ~ i +- 1..d/2, plus the antipodal matching for odd d.
  std::vector<std::vector<NodeId>> adj(n);
  auto link = [&](NodeId a, NodeId b) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  };
  for (NodeId i = 0; i < n; ++i)
    for (std::size_t k = 1; k <= d / 2; ++k) {
      const auto j = static_cast<NodeId>((i + k) % n);
      link(i, j);
    }
  if (d % 2 == 1)
    for (NodeId i = 0; i < n / 2; ++i) link(i, static_cast<NodeId>(i + n / 2));

  std::vector<Edge> edges;
  for (NodeId u = 0; u < n; ++u)
    for (NodeId v : adj[u])
      if (u < v) edges.push_back({u, v});
  for (auto& nb : adj) std::sort(nb.begin(), nb.end());

  auto has = [&](NodeId a, NodeId b) { return std::binary_search(adj[a].begin(), adj[a].end(), b); };
  auto erase = [&](NodeId a, NodeId b) {
    auto it = std::lower_bound(adj[a].begin(), adj[a].end(), b);
    adj[a].erase(it);
  };
  auto insert = [&](NodeId a, NodeId b) {
    adj[a].insert(std::lower_bound(adj[a].begin(), adj[a].end(), b), b);
  };

  if (swaps == 0) swaps = 10 * edges.size();
  for (std::size_t s = 0; s < swaps && edges.size() >= 2; ++s) {
    const std::size_t i = rng.below(edges.size());
    const std::size_t j = rng.below(edges.size());
    if (i == j) continue;
    Edge e1 = edges[i];
    Edge e2 = edges[j];
    if (rng.coin()) std::swap(e2.u, e2.v);
    // (a,b),(c,d) -> (a,d),(c,b)
    const NodeId a = e1.u, b = e1.v, c = e2.u, dd = e2.v;
    if (a == dd || c == b || a == c || b == dd) continue;
    if (has(a, dd) || has(c, b)) continue;
    erase(a, b), erase(b, a), erase(c, dd), erase(dd, c);
    insert(a, dd), insert(dd, a), insert(c, b), insert(b, c);
    edges[i] = {std::min(a, dd), std::max(a, dd)};
    edges[j] = {std::min(c, b), std::max(c, b)};
  }
  return Graph::from_edges(n, edges);
}

}  // namespace ftllb::graph
