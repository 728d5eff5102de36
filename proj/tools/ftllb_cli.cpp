// ftllb: batch runner for the load-balancing simulator.
//
//   ftllb consensus-crash --n 128 --t 16 --adversary random --seed-range 1..100 --out results.csv
//   ftllb replay traces/llb-seed3.jsonl --lemma sandwich

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ftllb/errors.hpp"
#include "ftllb/experiment.hpp"
#include "ftllb/oracle.hpp"
#include "ftllb/trace.hpp"

namespace {

using ftllb::experiment::ExperimentSpec;
using ftllb::experiment::Protocol;

struct RunFlags {
  std::string config;
  std::size_t n = 0;
  std::size_t t = 0;
  std::string seed_range;
  std::string adversary;
  std::string preset;
  double c1 = 0.0;
  double c2 = 0.0;
  std::size_t tau1 = 0;
  std::size_t tau2 = 0;
  std::string out;
  std::string summary;
  std::string trace_dir;
  std::string oracle;
  std::string topology;
  double gnp_c = 0.0;
  double p = 0.0;
  std::size_t degree = 0;
  std::string graph_file;
  std::string inputs;
  std::size_t flags = 0;
  std::string skip_mode;
  double drop_probability = 0.5;
  bool onset_zero = false;
};

struct Subcommand {
  Protocol protocol;
  CLI::App* app;
  RunFlags flags;
};

void add_run_flags(CLI::App* app, RunFlags& f, Protocol protocol) {
  app->add_option("--config", f.config, "JSON experiment config; flags override it")->check(CLI::ExistingFile);
  app->add_option("--n", f.n, "number of nodes");
  app->add_option("--seed-range", f.seed_range, "seeds as a..b or a single seed");
  app->add_option("--preset", f.preset, "constants preset")->check(CLI::IsMember({"desk", "theory"}));
  app->add_option("--out", f.out, "append result rows to this CSV (stdout otherwise)");
  app->add_option("--summary", f.summary, "write the JSON summary here");
  app->add_option("--trace-dir", f.trace_dir, "write one JSONL trace per seed into this directory");
  app->add_option("--oracle", f.oracle, "attach oracle verdicts")->check(CLI::IsMember({"on", "off"}));
  if (protocol != Protocol::kCheckGraph) {
    app->add_option("--t", f.t, "fault budget");
    app->add_option("--adversary", f.adversary, "none, random, targeted_extreme, eclipse, random_drops, "
                                                 "partition_flicker, silence_inbound");
    app->add_option("--c1", f.c1, "override C1");
    app->add_option("--c2", f.c2, "override C2");
    app->add_option("--tau1", f.tau1, "override the balancing round count");
    app->add_option("--tau2", f.tau2, "override the outlier-fixing round count");
    app->add_option("--inputs", f.inputs, "llb: indicator|bits|uniform; consensus: random|zeros|ones");
    app->add_option("--drop-probability", f.drop_probability, "random_drops: per-message drop probability");
    app->add_flag("--onset-zero", f.onset_zero, "omission faults start in round 0");
  }
  if (protocol == Protocol::kCheckGraph || protocol == Protocol::kLlb) {
    app->add_option("--topology", f.topology, "gnp, regular, complete, cycle or file");
    app->add_option("--gnp-c", f.gnp_c, "gnp: p = C ln n (ln ln n)^2 / (n - 1)");
    app->add_option("--p", f.p, "gnp: explicit edge probability");
    app->add_option("--degree", f.degree, "regular: degree");
    app->add_option("--graph-file", f.graph_file, "file: edge list path");
  }
  if (protocol == Protocol::kCount) app->add_option("--flags", f.flags, "number of raised flags (default n/4)");
  if (protocol == Protocol::kConsensusCrash)
    app->add_option("--skip-mode", f.skip_mode, "resume or until_end")->check(CLI::IsMember({"resume", "until_end"}));
}

bool given(CLI::App* app, const char* name) {
  const CLI::Option* o = app->get_option_no_throw(name);
  return o != nullptr && o->count() > 0;
}

ExperimentSpec build_spec(const Subcommand& s) {
  const RunFlags& f = s.flags;
  CLI::App* a = s.app;
  nlohmann::json j = nlohmann::json::object();
  if (!f.config.empty()) {
    std::ifstream in(f.config);
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ftllb::ConfigError("config " + f.config + " is not valid JSON: " + e.what());
    }
    if (j.contains("protocol") && j["protocol"] != ftllb::experiment::to_string(s.protocol))
      throw ftllb::ConfigError("config is for protocol " + j["protocol"].dump() + ", not " +
                               ftllb::experiment::to_string(s.protocol));
    j.erase("mode");
  }
  j["protocol"] = ftllb::experiment::to_string(s.protocol);
  if (given(a, "--n")) j["n"] = f.n;
  if (given(a, "--t")) j["t"] = f.t;
  if (given(a, "--seed-range")) j["seeds"] = f.seed_range;
  if (given(a, "--adversary")) j["adversary"] = f.adversary;
  if (given(a, "--preset")) j["preset"] = f.preset;
  if (given(a, "--c1")) j["C1"] = f.c1;
  if (given(a, "--c2")) j["C2"] = f.c2;
  if (given(a, "--tau1")) j["tau1"] = f.tau1;
  if (given(a, "--tau2")) j["tau2"] = f.tau2;
  if (given(a, "--trace-dir")) j["trace_dir"] = f.trace_dir;
  if (given(a, "--oracle")) j["oracle"] = f.oracle == "on";
  if (given(a, "--inputs")) j["inputs"] = f.inputs;
  if (given(a, "--flags")) j["flags"] = f.flags;
  if (given(a, "--skip-mode")) j["skip_mode"] = f.skip_mode;
  if (given(a, "--drop-probability")) j["adversary_options"]["drop_probability"] = f.drop_probability;
  if (given(a, "--onset-zero")) j["adversary_options"]["onset_zero"] = f.onset_zero;
  if (given(a, "--topology")) j["topology"]["kind"] = f.topology;
  if (given(a, "--gnp-c")) j["topology"]["c"] = f.gnp_c;
  if (given(a, "--p")) j["topology"]["p"] = f.p;
  if (given(a, "--degree")) j["topology"]["degree"] = f.degree;
  if (given(a, "--graph-file")) {
    j["topology"]["path"] = f.graph_file;
    if (!given(a, "--topology")) j["topology"]["kind"] = "file";
  }
  return ftllb::experiment::spec_from_json(j);
}

int run_protocol(const Subcommand& s) {
  const ExperimentSpec spec = build_spec(s);
  const auto report = ftllb::experiment::run(spec);
  if (s.flags.out.empty()) {
    std::cout << report.csv();
  } else {
    ftllb::experiment::append_csv(s.flags.out, report);
  }
  const auto summary = report.summary();
  if (!s.flags.summary.empty()) {
    std::ofstream out(s.flags.summary);
    if (!out) throw ftllb::Error("cannot write " + s.flags.summary);
    out << summary.dump(2) << '\n';
  }
  std::cerr << ftllb::experiment::to_string(spec.protocol) << ": " << report.rows.size() << " seeds, success rate "
            << report.success_rate() << ", hard invariants " << (report.hard_ok() ? "ok" : "VIOLATED") << '\n';
  if (report.constants.clamped) std::cerr << "note: C2 clamped to " << report.constants.c2 << " so that q <= 1\n";
  return report.hard_ok() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fault-tolerant local load balancing: simulator, oracles and experiment runner"};
  app.require_subcommand(1);

  std::vector<Subcommand> runs;
  runs.reserve(5);
  const std::pair<Protocol, const char*> entries[] = {
      {Protocol::kCheckGraph, "certify a graph: degree window and spectral gap"},
      {Protocol::kLlb, "fault-tolerant load balancing on one graph"},
      {Protocol::kCount, "almost-everywhere counting of raised flags"},
      {Protocol::kConsensusCrash, "consensus under crash failures"},
      {Protocol::kConsensusOmission, "consensus under omission failures"},
  };
  for (const auto& [protocol, help] : entries) {
    runs.push_back({protocol, app.add_subcommand(ftllb::experiment::to_string(protocol), help), {}});
    add_run_flags(runs.back().app, runs.back().flags, protocol);
  }

  std::string trace_path;
  std::vector<std::string> lemmas;
  double eps = 0.0;
  auto* replay = app.add_subcommand("replay", "re-run oracle checks against a stored llb trace");
  replay->add_option("trace", trace_path, "JSONL trace file")->required()->check(CLI::ExistingFile);
  replay->add_option("--lemma", lemmas, "only these checks: value_range, sandwich, remainder_shrinkage")
      ->check(CLI::IsMember({"value_range", "sandwich", "remainder_shrinkage"}));
  replay->add_option("--eps", eps, "accuracy for the remainder audit (default: smallest admissible)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (replay->parsed()) {
      ftllb::oracle::ReplayOptions options;
      options.lemmas = lemmas;
      if (replay->count("--eps") > 0) options.eps = eps;
      const auto report = ftllb::oracle::replay(ftllb::simnet::load_trace(trace_path), options);
      std::cout << report.to_json().dump(2) << '\n';
      return report.passed() ? 0 : 1;
    }
    for (const auto& s : runs)
      if (s.app->parsed()) return run_protocol(s);
  } catch (const ftllb::Error& e) {
    std::cerr << "ftllb: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "ftllb: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
