#include "ftllb/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "ftllb/adversary.hpp"
#include "ftllb/errors.hpp"
#include "ftllb/llb.hpp"
#include "ftllb/oracle.hpp"
#include "ftllb/rng.hpp"
#include "ftllb/simnet.hpp"
#include "ftllb/trace.hpp"

namespace ftllb::experiment {
namespace {

constexpr double kTheoryConstant = 32768.0;

constexpr std::uint64_t kEngineStream = 0x656e67;
constexpr std::uint64_t kAdversaryStream = 0x616476;
constexpr std::uint64_t kTopologyStream = 0x746f706f;
constexpr std::uint64_t kInputStream = 0x696e70;

double lnln(std::size_t n) { return std::log(std::log(static_cast<double>(n))); }

std::string skip_name(protocols::SkipMode m) {
  return m == protocols::SkipMode::kUntilEnd ? "until_end" : "resume";
}

protocols::SkipMode parse_skip(const std::string& s) {
  if (s == "resume") return protocols::SkipMode::kResumeNextIteration;
  if (s == "until_end") return protocols::SkipMode::kUntilEnd;
  throw ConfigError("unknown skip_mode '" + s + "' (resume | until_end)");
}

std::vector<NodeId> sample_distinct(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<NodeId> pool(n);
  std::iota(pool.begin(), pool.end(), NodeId{0});
  for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + static_cast<std::size_t>(rng.below(n - i))]);
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

class TraceFileSink {
 public:
  TraceFileSink(const ExperimentSpec& spec, std::uint64_t seed) {
    if (spec.trace_dir.empty()) return;
    std::filesystem::create_directories(spec.trace_dir);
    const auto path = std::filesystem::path(spec.trace_dir) /
                      (to_string(spec.protocol) + "-seed" + std::to_string(seed) + ".jsonl");
    out_.open(path);
    if (!out_) throw Error("cannot write trace " + path.string());
    writer_.emplace(out_);
  }
  simnet::JsonlTraceWriter* writer() { return writer_ ? &*writer_ : nullptr; }

 private:
  std::ofstream out_;
  std::optional<simnet::JsonlTraceWriter> writer_;
};

simnet::AdversaryOptions adversary_options(const ExperimentSpec& spec, std::size_t horizon) {
  simnet::AdversaryOptions o;
  o.horizon = std::max<std::size_t>(horizon, 1);
  o.onset_zero = spec.onset_zero;
  o.drop_probability = spec.drop_probability;
  return o;
}

void fill_metrics(SeedRow& row, const simnet::Metrics& m) {
  row.rounds = m.rounds;
  row.messages = m.messages_sent;
  row.bits = m.bits();
}

nlohmann::json header_for(const ExperimentSpec& spec, std::uint64_t seed) {
  return {{"protocol", to_string(spec.protocol)}, {"n", spec.n}, {"t", spec.t}, {"seed", seed},
          {"adversary", spec.adversary}};
}

void apply_tau_overrides(const ExperimentSpec& spec, llb::LlbConfig& c) {
  if (spec.tau1) c.tau1 = *spec.tau1;
  if (spec.tau2) c.tau2 = *spec.tau2;
}

SeedRow run_check_graph(const ExperimentSpec& spec, std::uint64_t seed) {
  SeedRow row;
  const auto g = build_topology(spec.topology, spec.n, seed);
  const auto params = topology_params(spec.topology, g);
  const auto verdict = graph::check_well_connected(g, params);
  double l2 = verdict.lambda2;
  if (l2 < 0.0) {
    try {
      l2 = graph::lambda2(g).lambda2;
    } catch (const DegenerateGraph&) {
      l2 = 0.0;
    }
  }
  row.outcome = verdict.passed ? "ok" : "uncertified";
  row.details = {{"lambda2", l2},
                 {"min_degree", g.min_degree()},
                 {"max_degree", g.max_degree()},
                 {"edges", g.edge_count()},
                 {"d_min", params.d_min},
                 {"d_max", params.d_max},
                 {"lambda2_floor", params.lambda2_floor},
                 {"certified", verdict.passed}};
  if (!verdict.passed) row.details["reason"] = verdict.reason();
  return row;
}

SeedRow run_llb_seed(const ExperimentSpec& spec, std::uint64_t seed) {
  SeedRow row;
  const std::size_t n = spec.n;
  const auto g = build_topology(spec.topology, n, seed);
  const auto params = topology_params(spec.topology, g);
  const auto cert = graph::check_well_connected(g, params);
  auto config = llb::derive_config(params.d_min, params.d_max, n, llb::Tau2Policy::kShrinkFallback);
  apply_tau_overrides(spec, config);

  Rng in_rng(derive_seed(seed, kInputStream));
  std::vector<double> inputs(n, 0.0);
  const std::string mode = spec.inputs.empty() ? "bits" : spec.inputs;
  if (mode == "indicator") inputs[0] = 1.0;
  else if (mode == "bits") for (auto& x : inputs) x = in_rng.coin() ? 1.0 : 0.0;
  else if (mode == "uniform") for (auto& x : inputs) x = in_rng.uniform();
  else throw ConfigError("unknown llb inputs '" + mode + "' (indicator | bits | uniform)");

  auto adversary = simnet::make_adversary(spec.adversary, spec.t, derive_seed(seed, kAdversaryStream),
                                          adversary_options(spec, config.tau1 + config.tau2));
  simnet::Engine engine(n, derive_seed(seed, kEngineStream), adversary);
  engine.set_topology(std::make_shared<const simnet::Topology>(g));
  TraceFileSink sink(spec, seed);
  if (auto* w = sink.writer()) {
    w->write_header(oracle::llb_trace_header(g, inputs, config, engine.fault_kind(), spec.t));
    engine.set_trace(w, true);
  }
  llb::LlbOptions options;
  options.record = spec.oracle;
  const auto run = llb::run_llb(engine, config, inputs, options);
  fill_metrics(row, engine.metrics());

  const double mu = std::accumulate(inputs.begin(), inputs.end(), 0.0) / static_cast<double>(n);
  row.active_count = run.active_count();
  const auto eps = oracle::accuracy_eps(config, spec.t);
  double max_gap = 0.0;
  for (NodeId v = 0; v < n; ++v)
    if (!run.crashed[v] && run.outcomes[v].type == llb::NodeType::kActive)
      max_gap = std::max(max_gap, std::abs(run.outcomes[v].x - mu));

  const double bound_summary = oracle::active_fault_bound(config.d_min, config.d_max, n, 4.0 / 81.0);
  const double bound_lemma = oracle::active_fault_bound(config.d_min, config.d_max, n, 40.0 / 81.0);
  const auto t = static_cast<double>(spec.t);
  const bool active_ok = static_cast<double>(row.active_count) >= static_cast<double>(n) - 1.5 * t;
  const bool accuracy_pre = eps && oracle::accuracy_precondition(config, spec.t, *eps);
  const bool accurate = !eps || max_gap <= *eps + 1e-9;

  row.details = {{"certified", cert.passed},
                 {"d_min", config.d_min},
                 {"d_max", config.d_max},
                 {"tau1", config.tau1},
                 {"tau2", config.tau2},
                 {"mu", mu},
                 {"max_active_gap", max_gap},
                 {"eps", eps ? nlohmann::json(*eps) : nlohmann::json()},
                 {"accuracy_precondition", accuracy_pre},
                 {"active_bound_summary_form", bound_summary},
                 {"active_bound_lemma_form", bound_lemma},
                 {"active_bound_holds", t < bound_lemma},
                 {"range_violations", run.range_violations}};
  if (!cert.passed) row.details["certification"] = cert.reason();

  bool ok = run.range_violations == 0;
  if (t < bound_lemma && !active_ok) ok = false;
  if (accuracy_pre && !accurate) ok = false;
  row.hard_violation = run.range_violations != 0;

  if (spec.oracle && run.balancing) {
    const auto actual = oracle::actual_series(*run.balancing);
    auto vr = oracle::value_range_check(actual, *std::min_element(inputs.begin(), inputs.end()),
                                        *std::max_element(inputs.begin(), inputs.end()));
    if (!vr.passed) row.hard_violation = true;
    row.verdicts.push_back(vr.to_json());

    // The ideal run pads degrees up to d_max, so it only exists when no
    // degree exceeds d_max.
    if (static_cast<double>(g.max_degree()) <= config.d_max) {
      auto sw = oracle::sandwich_check(
          oracle::build_oracle(g, *run.balancing, config.d_min, config.d_max, config.tau1), actual);
      const bool regular = g.min_degree() == g.max_degree() && config.d_min == config.d_max &&
                           static_cast<double>(g.max_degree()) == config.d_max;
      sw.precondition_met = regular;
      if (regular && !sw.passed) row.hard_violation = true;
      row.verdicts.push_back(sw.to_json());
    } else {
      oracle::Verdict skipped;
      skipped.lemma = "sandwich";
      skipped.precondition_met = false;
      skipped.margins = {{"reason", "max degree exceeds d_max"}};
      row.verdicts.push_back(skipped.to_json());
      row.details["sandwich_skipped"] = true;
    }

    if (eps && run.fixing) {
      std::vector<std::uint8_t> active(n);
      for (NodeId v = 0; v < n; ++v)
        active[v] = !run.crashed[v] && run.outcomes[v].type == llb::NodeType::kActive;
      auto sh = oracle::remainder_shrinkage_check(g, *run.fixing, active, mu, *eps, config.d_min, config.d_max,
                                                  spec.t);
      row.verdicts.push_back(sh.verdict.to_json());
    } else if (!eps) {
      oracle::Verdict v;
      v.lemma = "remainder_shrinkage";
      v.precondition_met = false;
      v.margins = {{"reason", "accuracy factor is not positive for this d_min, d_max"}};
      row.verdicts.push_back(v.to_json());
    }
  }
  if (row.hard_violation) ok = false;
  row.outcome = !ok ? "fail" : (cert.passed ? "ok" : "uncertified");
  return row;
}

SeedRow run_count_seed(const ExperimentSpec& spec, const Constants& k, std::uint64_t seed) {
  SeedRow row;
  const std::size_t n = spec.n;
  auto config = protocols::CountingConfig::make(n, k.c2);
  apply_tau_overrides(spec, config.llb);

  Rng in_rng(derive_seed(seed, kInputStream));
  const std::size_t ones = spec.flags == 0 ? n / 4 : spec.flags;
  std::vector<std::uint8_t> flags(n, 0);
  for (NodeId v : sample_distinct(n, ones, in_rng)) flags[v] = 1;

  auto adversary = simnet::make_adversary(spec.adversary, spec.t, derive_seed(seed, kAdversaryStream),
                                          adversary_options(spec, config.total_rounds()));
  simnet::Engine engine(n, derive_seed(seed, kEngineStream), adversary);
  TraceFileSink sink(spec, seed);
  if (auto* w = sink.writer()) {
    w->write_header(header_for(spec, seed));
    engine.set_trace(w);
  }
  const auto r = protocols::ae_counting(engine, flags, config);
  fill_metrics(row, r.metrics);

  const double eps = oracle::accuracy_eps(config.llb, spec.t).value_or(1.0);
  const double tolerance = eps * static_cast<double>(n);
  std::size_t estimates = 0;
  double max_error = 0.0;
  for (const auto& c : r.counts) {
    if (!c) continue;
    ++estimates;
    max_error = std::max(max_error, std::abs(static_cast<double>(*c) - static_cast<double>(ones)));
  }
  row.active_count = estimates;
  const bool enough = static_cast<double>(estimates) >= static_cast<double>(n) - 3.0 * static_cast<double>(spec.t);
  const bool accurate = max_error <= tolerance;
  row.hard_violation = r.llb.range_violations != 0;
  row.outcome = enough && accurate && !row.hard_violation ? "ok" : "fail";
  row.details = {{"truth", ones},
                 {"estimates", estimates},
                 {"max_error", max_error},
                 {"eps", eps},
                 {"tolerance", tolerance},
                 {"q", config.graph.q},
                 {"d_min", config.llb.d_min},
                 {"d_max", config.llb.d_max},
                 {"tau1", config.llb.tau1},
                 {"tau2", config.llb.tau2},
                 {"range_violations", r.llb.range_violations}};
  return row;
}

SeedRow run_consensus_seed(const ExperimentSpec& spec, const Constants& k, std::uint64_t seed) {
  SeedRow row;
  const std::size_t n = spec.n;
  const bool crash = spec.protocol == Protocol::kConsensusCrash;
  auto config = crash ? protocols::ConsensusConfig::crash(n, k.c1, k.c2)
                      : protocols::ConsensusConfig::omission(n, spec.t, k.c1, k.c2);
  config.t = spec.t;
  config.skip_mode = spec.skip_mode;
  apply_tau_overrides(spec, config.llb);

  Rng in_rng(derive_seed(seed, kInputStream));
  std::vector<std::uint8_t> inputs(n, 0);
  const std::string mode = spec.inputs.empty() ? "random" : spec.inputs;
  if (mode == "random") for (auto& b : inputs) b = in_rng.coin() ? 1 : 0;
  else if (mode == "ones") std::fill(inputs.begin(), inputs.end(), 1);
  else if (mode != "zeros") throw ConfigError("unknown consensus inputs '" + mode + "' (random | zeros | ones)");

  auto adversary = simnet::make_adversary(spec.adversary, spec.t, derive_seed(seed, kAdversaryStream),
                                          adversary_options(spec, config.total_rounds()));
  simnet::Engine engine(n, derive_seed(seed, kEngineStream), adversary);
  TraceFileSink sink(spec, seed);
  if (auto* w = sink.writer()) {
    w->write_header(header_for(spec, seed));
    engine.set_trace(w);
  }
  const auto r = crash ? protocols::consensus_crash(engine, inputs, config)
                       : protocols::consensus_omission(engine, inputs, config);
  fill_metrics(row, r.metrics);
  row.active_count = r.active_count;
  row.agreed = r.agreed;
  row.valid = r.valid;
  if (r.decided_value) row.decided_value = *r.decided_value;

  std::size_t coin_flips = 0, safe = 0;
  for (const auto& it : r.iterations) {
    coin_flips += it.coin_flips;
    safe += it.safe ? 1 : 0;
  }
  const double ll = lnln(n);
  const double suspected_bound = 10.0 * k.c2 * std::log(static_cast<double>(n)) * ll * ll * static_cast<double>(spec.t);
  row.hard_violation = r.range_violations != 0 || r.persistence_violations != 0 || r.unanimity_violations != 0;
  bool ok = r.agreed && r.valid && r.terminated && !row.hard_violation;
  if (!crash && static_cast<double>(r.suspected) > suspected_bound) ok = false;
  row.outcome = ok ? "ok" : "fail";
  row.details = {{"iterations", config.iterations},
                 {"tau1", config.llb.tau1},
                 {"tau2", config.llb.tau2},
                 {"dissemination_rounds", config.dissemination_rounds},
                 {"threshold_margin", config.threshold_margin},
                 {"q", config.graph.q},
                 {"range_violations", r.range_violations},
                 {"persistence_violations", r.persistence_violations},
                 {"unanimity_violations", r.unanimity_violations},
                 {"unsafe_inaccuracies", r.unsafe_inaccuracies},
                 {"safe_iterations", safe},
                 {"coin_flips", coin_flips},
                 {"expected_messages", r.expected_messages},
                 {"message_ratio", r.expected_messages > 0 ? static_cast<double>(r.metrics.messages_sent) /
                                                                r.expected_messages
                                                          : 0.0}};
  if (crash) {
    row.details["ever_skipped"] = r.ever_skipped;
  } else {
    row.details["suspected"] = r.suspected;
    row.details["suspected_bound"] = suspected_bound;
  }
  return row;
}

std::size_t percentile(std::vector<std::size_t> v, double q) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
  return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

std::string opt_bool(const std::optional<bool>& b) { return b ? (*b ? "1" : "0") : ""; }

}  // namespace

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::kCheckGraph: return "check-graph";
    case Protocol::kLlb: return "llb";
    case Protocol::kCount: return "count";
    case Protocol::kConsensusCrash: return "consensus-crash";
    case Protocol::kConsensusOmission: return "consensus-omission";
  }
  return "unknown";
}

Protocol parse_protocol(const std::string& name) {
  for (auto p : {Protocol::kCheckGraph, Protocol::kLlb, Protocol::kCount, Protocol::kConsensusCrash,
                 Protocol::kConsensusOmission})
    if (to_string(p) == name) return p;
  throw ConfigError("unknown protocol '" + name + "'");
}

void ExperimentSpec::validate() const {
  if (n < 2) throw ConfigError("n must be at least 2");
  if (t >= n) throw ConfigError("t must be below n");
  if (seed_last < seed_first) throw ConfigError("seed range is empty");
  if (preset != "desk" && preset != "theory") throw ConfigError("unknown preset '" + preset + "' (desk | theory)");
  if (protocol == Protocol::kCheckGraph && adversary != "none") throw ConfigError("check-graph takes no adversary");
  if (adversary != "none") {
    const bool omission = simnet::is_omission_strategy(adversary);
    if (protocol == Protocol::kConsensusCrash && omission)
      throw ConfigError("consensus-crash needs a crash adversary, got '" + adversary + "'");
    if (protocol == Protocol::kConsensusOmission && !omission)
      throw ConfigError("consensus-omission needs an omission adversary, got '" + adversary + "'");
    (void)simnet::make_adversary(adversary, 0, 0);
  }
  if (drop_probability < 0.0 || drop_probability > 1.0) throw ConfigError("drop_probability must lie in [0, 1]");
  if (flags > n) throw ConfigError("more flags than nodes");
}

std::pair<std::uint64_t, std::uint64_t> parse_seed_range(const std::string& text) {
  auto parse = [&](const std::string& s) -> std::uint64_t {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
      throw ConfigError("bad seed range '" + text + "'");
    return std::stoull(s);
  };
  const auto dots = text.find("..");
  if (dots == std::string::npos) {
    const auto s = parse(text);
    return {s, s};
  }
  const auto a = parse(text.substr(0, dots));
  const auto b = parse(text.substr(dots + 2));
  if (b < a) throw ConfigError("seed range '" + text + "' is empty");
  return {a, b};
}

ExperimentSpec spec_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known = {
      "protocol", "n",     "t",        "adversary", "preset", "C1",     "C2",        "tau1",
      "tau2",     "seed",  "seeds",    "oracle",    "trace_dir", "topology", "inputs", "flags",
      "skip_mode", "adversary_options", "mode"};
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError("unknown config key '" + key + "'");
  ExperimentSpec s;
  try {
    if (j.contains("protocol")) s.protocol = parse_protocol(j["protocol"].get<std::string>());
    if (j.contains("mode")) {
      const auto mode = j["mode"].get<std::string>();
      if (mode == "crash") s.protocol = Protocol::kConsensusCrash;
      else if (mode == "omission") s.protocol = Protocol::kConsensusOmission;
      else throw ConfigError("unknown mode '" + mode + "' (crash | omission)");
    }
    s.n = j.value("n", s.n);
    s.t = j.value("t", s.t);
    if (j.contains("adversary")) {
      const auto& a = j["adversary"];
      if (a.is_string()) {
        s.adversary = a.get<std::string>();
      } else if (a.is_object()) {
        s.adversary = a.value("name", std::string("none"));
        s.drop_probability = a.value("drop_probability", s.drop_probability);
        s.onset_zero = a.value("onset_zero", s.onset_zero);
      } else {
        throw ConfigError("adversary must be a name or an object");
      }
    }
    if (j.contains("adversary_options")) {
      const auto& o = j["adversary_options"];
      s.drop_probability = o.value("drop_probability", s.drop_probability);
      s.onset_zero = o.value("onset_zero", s.onset_zero);
    }
    s.preset = j.value("preset", s.preset);
    if (j.contains("C1")) s.c1 = j["C1"].get<double>();
    if (j.contains("C2")) s.c2 = j["C2"].get<double>();
    if (j.contains("tau1")) s.tau1 = j["tau1"].get<std::size_t>();
    if (j.contains("tau2")) s.tau2 = j["tau2"].get<std::size_t>();
    if (j.contains("seed")) s.seed_first = s.seed_last = j["seed"].get<std::uint64_t>();
    if (j.contains("seeds")) {
      const auto& r = j["seeds"];
      if (r.is_string()) {
        std::tie(s.seed_first, s.seed_last) = parse_seed_range(r.get<std::string>());
      } else {
        s.seed_first = r.at(0).get<std::uint64_t>();
        s.seed_last = r.at(1).get<std::uint64_t>();
      }
    }
    s.oracle = j.value("oracle", s.oracle);
    s.trace_dir = j.value("trace_dir", s.trace_dir);
    if (j.contains("topology")) {
      const auto& tj = j["topology"];
      s.topology.kind = tj.value("kind", s.topology.kind);
      s.topology.c = tj.value("c", s.topology.c);
      if (tj.contains("p")) s.topology.p = tj["p"].get<double>();
      s.topology.degree = tj.value("degree", s.topology.degree);
      s.topology.path = tj.value("path", s.topology.path);
    }
    s.inputs = j.value("inputs", s.inputs);
    s.flags = j.value("flags", s.flags);
    if (j.contains("skip_mode")) s.skip_mode = parse_skip(j["skip_mode"].get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad experiment config: ") + e.what());
  }
  s.validate();
  return s;
}

ExperimentSpec load_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return spec_from_json(j);
}

nlohmann::json to_json(const ExperimentSpec& s) {
  nlohmann::json j = {{"protocol", to_string(s.protocol)},
                      {"n", s.n},
                      {"t", s.t},
                      {"adversary", s.adversary},
                      {"preset", s.preset},
                      {"seeds", {s.seed_first, s.seed_last}},
                      {"oracle", s.oracle},
                      {"skip_mode", skip_name(s.skip_mode)},
                      {"adversary_options", {{"drop_probability", s.drop_probability}, {"onset_zero", s.onset_zero}}}};
  if (s.c1) j["C1"] = *s.c1;
  if (s.c2) j["C2"] = *s.c2;
  if (s.tau1) j["tau1"] = *s.tau1;
  if (s.tau2) j["tau2"] = *s.tau2;
  if (!s.inputs.empty()) j["inputs"] = s.inputs;
  if (s.flags != 0) j["flags"] = s.flags;
  if (s.protocol == Protocol::kCheckGraph || s.protocol == Protocol::kLlb) {
    nlohmann::json tj = {{"kind", s.topology.kind}};
    if (s.topology.kind == "gnp") {
      if (s.topology.p) tj["p"] = *s.topology.p;
      else tj["c"] = s.topology.c;
    }
    if (s.topology.kind == "regular") tj["degree"] = s.topology.degree;
    if (s.topology.kind == "file") tj["path"] = s.topology.path;
    j["topology"] = tj;
  }
  return j;
}

Constants resolve_constants(const ExperimentSpec& spec) {
  Constants k;
  if (spec.preset == "theory") k.c1 = k.c2 = kTheoryConstant;
  if (spec.c1) k.c1 = *spec.c1;
  if (spec.c2) k.c2 = *spec.c2;
  const bool uses_links = spec.protocol == Protocol::kCount || spec.protocol == Protocol::kConsensusCrash ||
                          spec.protocol == Protocol::kConsensusOmission;
  if (!uses_links || spec.n < 3) return k;
  const double q = protocols::link_density(spec.n, k.c2);
  if (q <= 1.0) return k;
  if (spec.preset == "theory" || spec.c2) {
    std::ostringstream msg;
    msg << "C2 = " << k.c2 << " gives link density q = " << q << " > 1 at n = " << spec.n
        << "; the asymptotic constants are not runnable at this size (use --preset desk or a smaller --c2)";
    throw ConfigError(msg.str());
  }
  const double ll = lnln(spec.n);
  double c2 = static_cast<double>(spec.n - 1) / (std::log(static_cast<double>(spec.n)) * ll * ll);
  while (protocols::link_density(spec.n, c2) > 1.0) c2 = std::nextafter(c2, 0.0);
  k.c2 = c2;
  k.clamped = true;
  return k;
}

graph::WellConnectedParams concentration_window(std::size_t n, double p) {
  const double d = p * static_cast<double>(n - 1);
  const double ll = lnln(n);
  const double a = ll > 0.0 ? 1.0 / (20.0 * ll) : 0.0;
  return graph::WellConnectedParams::with_default_floor(d * (1.0 - a), d * (1.0 + a), n);
}

graph::Graph build_topology(const TopologySpec& spec, std::size_t n, std::uint64_t seed) {
  Rng rng(derive_seed(seed, kTopologyStream));
  if (spec.kind == "gnp") {
    const double p = spec.p ? *spec.p : std::min(1.0, graph::gnp_probability(n, spec.c));
    return graph::sample_gnp(n, p, rng);
  }
  if (spec.kind == "regular") {
    if (spec.degree == 0) throw ConfigError("regular topology needs a degree");
    return graph::sample_random_regular(n, spec.degree, rng);
  }
  if (spec.kind == "complete") return graph::Graph::complete(n);
  if (spec.kind == "cycle") return graph::Graph::cycle(n);
  if (spec.kind == "file") {
    auto g = graph::load_edge_list(spec.path);
    if (g.size() != n) throw ConfigError("graph file has " + std::to_string(g.size()) + " nodes, spec says " +
                                         std::to_string(n));
    return g;
  }
  throw ConfigError("unknown topology kind '" + spec.kind + "'");
}

graph::WellConnectedParams topology_params(const TopologySpec& spec, const graph::Graph& g) {
  const std::size_t n = g.size();
  if (spec.kind == "gnp") {
    const double p = spec.p ? *spec.p : std::min(1.0, graph::gnp_probability(n, spec.c));
    return concentration_window(n, p);
  }
  const auto lo = static_cast<double>(g.min_degree());
  const auto hi = static_cast<double>(g.max_degree());
  return graph::WellConnectedParams::with_default_floor(std::max(lo, 1.0), std::max(hi, 1.0), n);
}

SeedRow run_seed(const ExperimentSpec& spec, const Constants& constants, std::uint64_t seed) {
  SeedRow row;
  try {
    switch (spec.protocol) {
      case Protocol::kCheckGraph: row = run_check_graph(spec, seed); break;
      case Protocol::kLlb: row = run_llb_seed(spec, seed); break;
      case Protocol::kCount: row = run_count_seed(spec, constants, seed); break;
      default: row = run_consensus_seed(spec, constants, seed); break;
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    row = SeedRow{};
    row.outcome = "error";
    row.details = {{"error", e.what()}};
  }
  row.seed = seed;
  return row;
}

std::size_t worker_count() {
  if (const char* env = std::getenv("FTLLB_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

ExperimentReport run(const ExperimentSpec& spec) {
  spec.validate();
  ExperimentReport report;
  report.spec = spec;
  report.constants = resolve_constants(spec);
  const std::size_t count = spec.seed_count();
  report.rows.resize(count);

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        report.rows[i] = run_seed(spec, report.constants, spec.seed_first + i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = count;
      }
    }
  };
  const std::size_t workers = std::min(worker_count(), count);
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  return report;
}

bool ExperimentReport::hard_ok() const {
  return std::none_of(rows.begin(), rows.end(), [](const SeedRow& r) { return r.hard_violation; });
}

double ExperimentReport::success_rate() const {
  if (rows.empty()) return 0.0;
  const auto ok = std::count_if(rows.begin(), rows.end(), [](const SeedRow& r) { return r.outcome == "ok"; });
  return static_cast<double>(ok) / static_cast<double>(rows.size());
}

nlohmann::json ExperimentReport::summary() const {
  std::vector<std::size_t> rounds;
  double messages = 0.0;
  std::size_t uncertified = 0, errors = 0, failures = 0;
  for (const auto& r : rows) {
    rounds.push_back(r.rounds);
    messages += static_cast<double>(r.messages);
    uncertified += r.outcome == "uncertified";
    errors += r.outcome == "error";
    failures += r.outcome == "fail";
  }
  nlohmann::json j;
  j["spec"] = to_json(spec);
  j["constants"] = {{"C1", constants.c1}, {"C2", constants.c2}, {"C2_clamped", constants.clamped}};
  j["rows"] = rows.size();
  j["success_rate"] = success_rate();
  j["failures"] = failures;
  j["uncertified"] = uncertified;
  j["errors"] = errors;
  j["hard_invariants_ok"] = hard_ok();
  j["rounds"] = {{"p50", percentile(rounds, 0.5)}, {"p90", percentile(rounds, 0.9)}, {"max", percentile(rounds, 1.0)}};
  j["messages_mean"] = rows.empty() ? 0.0 : messages / static_cast<double>(rows.size());
  auto& per_seed = j["per_seed"] = nlohmann::json::array();
  for (const auto& r : rows)
    per_seed.push_back({{"seed", r.seed}, {"outcome", r.outcome}, {"verdicts", r.verdicts}, {"details", r.details}});
  return j;
}

std::string ExperimentReport::csv(bool with_header) const {
  std::ostringstream out;
  if (with_header) out << kCsvVersionLine << '\n' << kCsvColumns << '\n';
  for (const auto& r : rows) {
    std::string oracle = "off";
    if (spec.oracle && !r.verdicts.empty()) {
      oracle = "pass";
      for (const auto& v : r.verdicts)
        if (v.value("precondition_met", true) && !v.value("passed", true)) oracle = "fail";
    }
    out << r.seed << ',' << to_string(spec.protocol) << ',' << spec.n << ',' << spec.t << ',' << spec.adversary << ','
        << opt_bool(r.agreed) << ',' << opt_bool(r.valid) << ','
        << (r.decided_value ? std::to_string(*r.decided_value) : std::string()) << ',' << r.rounds << ','
        << r.messages << ',' << r.bits << ',' << r.active_count << ',' << r.outcome << ',' << oracle << '\n';
  }
  return out.str();
}

void append_csv(const std::string& path, const ExperimentReport& report) {
  bool fresh = true;
  {
    std::ifstream probe(path);
    fresh = !probe || probe.peek() == std::ifstream::traits_type::eof();
  }
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error("cannot write " + path);
  out << report.csv(fresh);
}

}  // namespace ftllb::experiment
