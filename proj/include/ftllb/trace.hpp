#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "ftllb/simnet.hpp"

namespace ftllb::simnet {

/// JSON-lines trace: one header object, then one object per round
/// {round, faulted, messages_sent, messages_dropped, per_node_digest[, drops,
/// loads]}. Wildcard drop endpoints are written as -1.
class JsonlTraceWriter final : public TraceSink {
 public:
  explicit JsonlTraceWriter(std::ostream& out) : out_(out) {}
  void write_header(const nlohmann::json& header);
  void on_round(const RoundRecord& record) override;

 private:
  std::ostream& out_;
};

/// Keeps records in memory (tests, replay round trips).
class MemoryTrace final : public TraceSink {
 public:
  void on_round(const RoundRecord& record) override { rounds.push_back(record); }
  std::vector<RoundRecord> rounds;
};

struct TraceFile {
  nlohmann::json header;
  std::vector<RoundRecord> rounds;
  std::vector<std::size_t> lines;  // source line of each round record
};

/// Parses and validates a trace. Round numbers must increase by exactly one;
/// node ids must be below the header's n. Throws ParseError with the line.
TraceFile read_trace(std::istream& in);
TraceFile load_trace(const std::string& path);

nlohmann::json to_json(const RoundRecord& record);

}  // namespace ftllb::simnet
