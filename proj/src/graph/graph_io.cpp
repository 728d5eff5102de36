#include <fstream>
#include <sstream>
#include <string>

#include "ftllb/errors.hpp"
#include "ftllb/graph.hpp"

namespace ftllb::graph {

void write_edge_list(std::ostream& out, const Graph& g) {
  out << g.size() << ' ' << g.edge_count() << '\n';
  for (const Edge& e : g.edges()) out << e.u << ' ' << e.v << '\n';
}

std::string to_edge_list(const Graph& g) {
  std::ostringstream out;
  write_edge_list(out, g);
  return out.str();
}

Graph read_edge_list(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&]() -> bool {
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) return true;
    }
    return false;
  };
  if (!next_line()) throw ParseError("missing header", line_no + 1);
  std::istringstream header(line);
  long long n = -1, m = -1;
  if (!(header >> n >> m) || n < 0 || m < 0) throw ParseError("bad header '" + line + "'", line_no);

  std::vector<Edge> edges;
  edges.reserve(static_cast<std::size_t>(m));
  for (long long i = 0; i < m; ++i) {
    if (!next_line()) throw ParseError("expected " + std::to_string(m) + " edges", line_no + 1);
    std::istringstream row(line);
    long long u = -1, v = -1;
    if (!(row >> u >> v) || u < 0 || v < 0 || u >= n || v >= n) {
      throw ParseError("bad edge '" + line + "'", line_no);
    }
    if (u >= v) throw ParseError("edge endpoints must satisfy u < v", line_no);
    edges.push_back({static_cast<NodeId>(u), static_cast<NodeId>(v)});
  }
  try {
    return Graph::from_edges(static_cast<std::size_t>(n), edges);
  } catch (const std::invalid_argument& e) {
    throw ParseError(e.what(), line_no);
  }
}

Graph load_edge_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open graph file " + path);
  return read_edge_list(in);
}

void save_edge_list(const std::string& path, const Graph& g) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write graph file " + path);
  write_edge_list(out, g);
}

}  // namespace ftllb::graph
