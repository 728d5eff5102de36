#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "ftllb/oracle.hpp"
#include "ftllb/simd.hpp"

namespace ftllb::oracle {
namespace {

std::string kind_name(simnet::FaultKind k) {
  switch (k) {
    case simnet::FaultKind::kCrash: return "crash";
    case simnet::FaultKind::kOmission: return "omission";
    default: return "none";
  }
}

simnet::FaultKind parse_kind(const std::string& s) {
  if (s == "crash") return simnet::FaultKind::kCrash;
  if (s == "omission") return simnet::FaultKind::kOmission;
  if (s == "none") return simnet::FaultKind::kNone;
  throw ConfigError("unknown fault_kind '" + s + "'");
}

bool wants(const ReplayOptions& options, const std::string& lemma) {
  return options.lemmas.empty() ||
         std::find(options.lemmas.begin(), options.lemmas.end(), lemma) != options.lemmas.end();
}

double median_of(std::vector<double>& values) {
  std::sort(values.begin(), values.end());
  const std::size_t c = values.size();
  if (c % 2 == 1) return values[c / 2];
  return std::midpoint(values[c / 2 - 1], values[c / 2]);
}

}  // namespace

nlohmann::json llb_trace_header(const graph::Graph& g, std::span<const double> inputs, const llb::LlbConfig& config,
                                simnet::FaultKind kind, std::size_t t) {
  nlohmann::json h;
  h["protocol"] = "llb";
  h["n"] = g.size();
  auto& edges = h["edges"] = nlohmann::json::array();
  for (const auto& e : g.edges()) edges.push_back({e.u, e.v});
  h["inputs"] = std::vector<double>(inputs.begin(), inputs.end());
  h["d_min"] = config.d_min;
  h["d_max"] = config.d_max;
  h["tau1"] = config.tau1;
  h["tau2"] = config.tau2;
  h["fault_kind"] = kind_name(kind);
  h["t"] = t;
  return h;
}

bool ReplayReport::passed() const {
  return std::all_of(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return v.passed || !v.precondition_met; });
}

nlohmann::json ReplayReport::to_json() const {
  nlohmann::json j;
  j["passed"] = passed();
  auto& arr = j["verdicts"] = nlohmann::json::array();
  for (const auto& v : verdicts) arr.push_back(v.to_json());
  return j;
}

ReplayReport replay(const simnet::TraceFile& trace, const ReplayOptions& options) {
  const auto& h = trace.header;
  if (h.value("protocol", std::string{}) != "llb")
    throw ConfigError("replay supports llb traces only (header protocol is '" + h.value("protocol", std::string{}) +
                      "')");
  llb::LlbConfig config;
  std::size_t n = 0, t = 0;
  std::vector<double> inputs;
  std::vector<Edge> edges;
  simnet::FaultKind kind;
  try {
    n = h.at("n").get<std::size_t>();
    for (const auto& e : h.at("edges")) edges.push_back({e.at(0).get<NodeId>(), e.at(1).get<NodeId>()});
    inputs = h.at("inputs").get<std::vector<double>>();
    config.d_min = h.at("d_min").get<double>();
    config.d_max = h.at("d_max").get<double>();
    config.tau1 = h.at("tau1").get<std::size_t>();
    config.tau2 = h.at("tau2").get<std::size_t>();
    config.n = n;
    kind = parse_kind(h.value("fault_kind", std::string("none")));
    t = h.value("t", std::size_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("incomplete llb trace header: ") + e.what());
  }
  if (inputs.size() != n) throw ConfigError("header inputs do not match n");
  const graph::Graph g = graph::Graph::from_edges(n, edges);
  if (trace.rounds.size() != config.tau1 + config.tau2)
    throw TraceMismatch("trace has " + std::to_string(trace.rounds.size()) + " rounds, expected tau1 + tau2 = " +
                        std::to_string(config.tau1 + config.tau2));

  const std::size_t words = simd::words_for(n);
  std::vector<double> x = inputs;
  std::vector<std::uint8_t> silent(n, 0), crashed(n, 0), crashing(n, 0);
  llb::BalancingTrace bal{n, words, inputs, {}, {}};
  llb::FixingTrace fix;
  fix.n = n;
  fix.words = words;

  std::vector<std::uint8_t> sending(n), sender_blocked(n), inbound_blocked(n);
  std::set<std::pair<NodeId, NodeId>> pairs;
  std::vector<double> received;
  for (std::size_t i = 0; i < trace.rounds.size(); ++i) {
    const auto& rec = trace.rounds[i];
    const bool fixing = i >= config.tau1;
    if (i == config.tau1) fix.x_start = x;

    std::fill(crashing.begin(), crashing.end(), 0);
    if (kind == simnet::FaultKind::kCrash)
      for (NodeId v : rec.faulted) crashing[v] = 1;
    std::fill(sender_blocked.begin(), sender_blocked.end(), 0);
    std::fill(inbound_blocked.begin(), inbound_blocked.end(), 0);
    pairs.clear();
    for (const auto& [s, r] : rec.drops) {
      if (r == simnet::kAnyNode) sender_blocked[s] = 1;
      else if (s == simnet::kAnyNode) inbound_blocked[r] = 1;
      else pairs.emplace(s, r);
    }
    for (NodeId u = 0; u < n; ++u) sending[u] = !crashed[u] && (!fixing || !silent[u]);

    std::vector<std::uint64_t> heard(n * words, 0);
    std::vector<double> next = x;
    for (NodeId v = 0; v < n; ++v) {
      if (crashed[v] || crashing[v]) continue;
      if (fixing && silent[v]) continue;
      std::uint64_t* row = heard.data() + v * words;
      received.clear();
      if (!inbound_blocked[v]) {
        for (NodeId u : g.neighbors(v)) {
          if (!sending[u] || sender_blocked[u] || pairs.count({u, v})) continue;
          row[u >> 6] |= std::uint64_t{1} << (u & 63);
          received.push_back(x[u]);
        }
      }
      const std::size_t k = received.size();
      if (!fixing) {
        if (k != 0) {
          const double s = std::accumulate(received.begin(), received.end(), 0.0);
          const auto kd = static_cast<double>(k);
          next[v] = x[v] + (s - kd * x[v]) / std::max(2.0 * config.d_max, kd);
        }
      } else if (static_cast<double>(k) < 2.0 / 3.0 * config.d_min) {
        silent[v] = 1;
      } else {
        next[v] = median_of(received);
      }
    }
    x.swap(next);
    for (NodeId v = 0; v < n; ++v) crashed[v] = crashed[v] || crashing[v];

    if (!rec.loads.empty()) {
      for (NodeId v = 0; v < n; ++v)
        if (std::abs(rec.loads[v] - x[v]) > 1e-9 * std::max(1.0, std::abs(x[v])))
          throw TraceMismatch("round " + std::to_string(rec.round) + " node " + std::to_string(v) +
                              ": recorded load " + std::to_string(rec.loads[v]) + " differs from replayed " +
                              std::to_string(x[v]) + " (line " + std::to_string(trace.lines[i]) + ")");
    }
    if (fixing) {
      fix.heard.push_back(std::move(heard));
      fix.loads.push_back(x);
      fix.silent.push_back(silent);
    } else {
      bal.heard.push_back(std::move(heard));
      bal.loads.push_back(x);
    }
  }
  if (config.tau2 == 0) fix.x_start = x;

  ReplayReport report;
  const auto [lo, hi] = std::minmax_element(inputs.begin(), inputs.end());
  if (wants(options, "value_range")) {
    Series all = actual_series(bal);
    for (const auto& l : fix.loads) all.push_back(l);
    report.verdicts.push_back(value_range_check(all, *lo, *hi));
  }
  if (wants(options, "sandwich")) {
    if (static_cast<double>(g.max_degree()) > config.d_max) {
      Verdict v;
      v.lemma = "sandwich";
      v.precondition_met = false;
      v.margins = {{"reason", "max degree exceeds d_max"}};
      report.verdicts.push_back(v);
    } else {
      Verdict v = sandwich_check(build_oracle(g, bal, config.d_min, config.d_max, config.tau1), actual_series(bal));
      // The skewed bounds are only guaranteed on regular graphs.
      v.precondition_met = g.min_degree() == g.max_degree() && config.d_min == config.d_max &&
                           static_cast<double>(g.max_degree()) == config.d_max;
      report.verdicts.push_back(v);
    }
  }
  if (wants(options, "remainder_shrinkage")) {
    const double mu = std::accumulate(inputs.begin(), inputs.end(), 0.0) / static_cast<double>(n);
    std::optional<double> eps = options.eps ? options.eps : accuracy_eps(config, t);
    if (!eps) {
      Verdict v;
      v.lemma = "remainder_shrinkage";
      v.precondition_met = false;
      v.margins = {{"reason", "accuracy factor is not positive for this d_min, d_max"}};
      report.verdicts.push_back(v);
    } else {
      std::vector<std::uint8_t> active(n);
      for (NodeId v = 0; v < n; ++v) active[v] = !crashed[v] && !silent[v];
      report.verdicts.push_back(
          remainder_shrinkage_check(g, fix, active, mu, *eps, config.d_min, config.d_max, t).verdict);
    }
  }
  return report;
}

}  // namespace ftllb::oracle
