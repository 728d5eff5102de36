#include <algorithm>
#include <map>
#include <mutex>
#include <stdexcept>

#include "ftllb/simd.hpp"
#include "ftllb/simnet.hpp"

namespace ftllb::simnet {

Topology::Topology(graph::Graph g, std::uint64_t version) : graph_(std::move(g)), version_(version) {
  const std::size_t n = graph_.size();
  if (n <= kBitsetLimit) {
    words_ = simd::words_for(n);
    rows_.assign(n * words_, 0);
    for (NodeId v = 0; v < n; ++v) {
      std::uint64_t* r = rows_.data() + static_cast<std::size_t>(v) * words_;
      for (NodeId u : graph_.neighbors(v)) r[u >> 6] |= std::uint64_t{1} << (u & 63);
    }
  }
}

std::shared_ptr<const Topology> Topology::complete(std::size_t n) {
  // Complete graphs are rebuilt for every handshake otherwise.
  static std::mutex mutex;
  static std::map<std::size_t, std::weak_ptr<const Topology>> cache;
  std::lock_guard lock(mutex);
  if (auto hit = cache[n].lock()) return hit;
  auto made = std::make_shared<const Topology>(graph::Graph::complete(n));
  cache[n] = made;
  return made;
}

std::size_t Topology::port_of(NodeId v, NodeId u) const {
  const auto nb = graph_.neighbors(v);
  const auto it = std::lower_bound(nb.begin(), nb.end(), u);
  if (it == nb.end() || *it != u) throw std::out_of_range("nodes are not adjacent");
  return static_cast<std::size_t>(it - nb.begin());
}

}  // namespace ftllb::simnet
