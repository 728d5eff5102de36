#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace ftllb {

class Rng;

using NodeId = std::uint32_t;

struct Edge {
  NodeId u;
  NodeId v;
  friend bool operator==(const Edge&, const Edge&) = default;
};

namespace graph {

/// Undirected simple graph stored as sorted adjacency lists (CSR).
/// Immutable after construction.
class Graph {
 public:
  Graph() = default;
  explicit Graph(std::size_t n);

  /// Builds from an edge list. Self-loops, duplicate edges and out-of-range
  /// endpoints are rejected with std::invalid_argument.
  static Graph from_edges(std::size_t n, std::span<const Edge> edges);

  static Graph complete(std::size_t n);
  static Graph cycle(std::size_t n);
  static Graph path(std::size_t n);

  std::size_t size() const noexcept { return offsets_.empty() ? 0 : offsets_.size() - 1; }
  std::size_t edge_count() const noexcept { return adjacency_.size() / 2; }

  std::span<const NodeId> neighbors(NodeId v) const {
    return {adjacency_.data() + offsets_[v], adjacency_.data() + offsets_[v + 1]};
  }
  std::size_t degree(NodeId v) const { return offsets_[v + 1] - offsets_[v]; }
  bool has_edge(NodeId u, NodeId v) const;

  std::size_t min_degree() const;
  std::size_t max_degree() const;

  /// Canonical edge list: ascending (u, v) with u < v.
  std::vector<Edge> edges() const;

  friend bool operator==(const Graph&, const Graph&) = default;

 private:
  std::vector<std::size_t> offsets_;
  std::vector<NodeId> adjacency_;
};

// -- file format: "n m" then m lines "u v" (u < v), LF endings -------------

void write_edge_list(std::ostream& out, const Graph& g);
std::string to_edge_list(const Graph& g);
Graph read_edge_list(std::istream& in);
Graph load_edge_list(const std::string& path);
void save_edge_list(const std::string& path, const Graph& g);

// -- set functionals -------------------------------------------------------

/// Edges with both endpoints in w.
std::size_t internal_edges(const Graph& g, std::span<const NodeId> w);
/// Edges with exactly one endpoint in w.
std::size_t boundary_edges(const Graph& g, std::span<const NodeId> w);
/// Sum of degrees over w.
std::size_t volume(const Graph& g, std::span<const NodeId> w);

/// Upper bound on internal_edges(g, w) implied by the spectral gap:
/// vol(W)/2 * (1 - lambda2 * (1 - vol(W)/vol(G))).
double edge_density_bound(const Graph& g, std::span<const NodeId> w, double lambda2);

struct CoreSubgraphResult {
  std::vector<NodeId> removed;   // W_k, ascending
  std::vector<NodeId> retained;  // V \ W_k, ascending
  double phi = 0.0;
  std::size_t steps = 0;         // vertices added beyond the initial fault set
};

/// Peels vertices with fewer than phi * d_min neighbours outside the removed
/// set, starting from `faults`, one vertex per step (lowest index first),
/// until a fixed point.
CoreSubgraphResult core_subgraph(const Graph& g, std::span<const NodeId> faults, double phi,
                                 double d_min);

/// Same fixed point with an absolute neighbour threshold; used by the
/// analysis oracles whose thresholds are not of the form phi * d_min.
CoreSubgraphResult peel(const Graph& g, std::span<const NodeId> removed_initially,
                        double min_neighbours);

/// Right-hand side of the core-subgraph size precondition:
/// (1 - phi) * 40/27 * r^2 - 2/9 * r with r = d_min / d_max. The size bound
/// ceil(3/2 |F|) is guaranteed when |F| / n is strictly below this value.
double core_alpha_bound(double d_min, double d_max, double phi);

// -- random graphs -----------------------------------------------------------

/// Erdos-Renyi G(n, p): pairs (u, v), u < v, visited in lexicographic order,
/// each kept when a uniform draw falls below p.
Graph sample_gnp(std::size_t n, double p, Rng& rng);

/// Edge probability C * ln n * (ln ln n)^2 / (n - 1).
double gnp_probability(std::size_t n, double c);

/// Uniformly-ish random d-regular graph: a circulant start followed by
/// degree-preserving double-edge swaps. Requires n * d even and d < n.
Graph sample_random_regular(std::size_t n, std::size_t d, Rng& rng, std::size_t swaps = 0);

}  // namespace graph
}  // namespace ftllb
