#include "ftllb/trace.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>

#include "ftllb/errors.hpp"

namespace ftllb::simnet {
namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

long long endpoint(NodeId v) { return v == kAnyNode ? -1 : static_cast<long long>(v); }

NodeId read_node(const nlohmann::json& j, std::size_t n, bool wildcard_ok, std::size_t line) {
  if (!j.is_number_integer()) throw ParseError("node id is not an integer", line);
  const auto v = j.get<long long>();
  if (v == -1 && wildcard_ok) return kAnyNode;
  if (v < 0 || static_cast<std::size_t>(v) >= n) throw ParseError("node id out of range", line);
  return static_cast<NodeId>(v);
}

}  // namespace

nlohmann::json to_json(const RoundRecord& record) {
  nlohmann::json j;
  j["round"] = record.round;
  j["faulted"] = record.faulted;
  j["messages_sent"] = record.messages_sent;
  j["messages_dropped"] = record.messages_dropped;
  auto& digests = j["per_node_digest"] = nlohmann::json::array();
  for (auto d : record.digests) digests.push_back(hex64(d));
  if (!record.drops.empty()) {
    auto& drops = j["drops"] = nlohmann::json::array();
    for (const auto& [s, r] : record.drops) drops.push_back({endpoint(s), endpoint(r)});
  }
  if (!record.loads.empty()) j["loads"] = record.loads;
  return j;
}

void JsonlTraceWriter::write_header(const nlohmann::json& header) { out_ << header.dump() << '\n'; }

void JsonlTraceWriter::on_round(const RoundRecord& record) { out_ << to_json(record).dump() << '\n'; }

TraceFile read_trace(std::istream& in) {
  TraceFile file;
  std::string text;
  std::size_t line = 0;
  bool have_header = false;
  std::size_t n = 0;
  while (std::getline(in, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), line);
    }
    if (!j.is_object()) throw ParseError("record is not an object", line);
    if (!have_header) {
      if (!j.contains("n") || !j["n"].is_number_unsigned()) throw ParseError("header lacks n", line);
      n = j["n"].get<std::size_t>();
      file.header = std::move(j);
      have_header = true;
      continue;
    }
    try {
      RoundRecord r;
      r.round = j.at("round").get<std::size_t>();
      if (!file.rounds.empty() && r.round != file.rounds.back().round + 1)
        throw ParseError("round " + std::to_string(r.round) + " does not follow round " +
                             std::to_string(file.rounds.back().round),
                         line);
      for (const auto& v : j.at("faulted")) r.faulted.push_back(read_node(v, n, false, line));
      r.messages_sent = j.at("messages_sent").get<std::uint64_t>();
      r.messages_dropped = j.at("messages_dropped").get<std::uint64_t>();
      for (const auto& d : j.at("per_node_digest")) r.digests.push_back(std::stoull(d.get<std::string>(), nullptr, 16));
      if (r.digests.size() != n) throw ParseError("per_node_digest has wrong length", line);
      if (j.contains("drops")) {
        for (const auto& d : j["drops"]) {
          if (!d.is_array() || d.size() != 2) throw ParseError("drop is not a pair", line);
          r.drops.emplace_back(read_node(d[0], n, true, line), read_node(d[1], n, true, line));
        }
      }
      if (j.contains("loads")) {
        r.loads = j["loads"].get<std::vector<double>>();
        if (r.loads.size() != n) throw ParseError("loads has wrong length", line);
      }
      file.rounds.push_back(std::move(r));
      file.lines.push_back(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed round record: ") + e.what(), line);
    } catch (const std::invalid_argument&) {
      throw ParseError("malformed digest", line);
    }
  }
  if (!have_header) throw ParseError("empty trace", line);
  return file;
}

TraceFile load_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open trace " + path);
  return read_trace(in);
}

}  // namespace ftllb::simnet
