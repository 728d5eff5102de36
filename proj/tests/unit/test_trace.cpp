#include <doctest.h>

#include <sstream>

#include "ftllb/errors.hpp"
#include "ftllb/trace.hpp"

using namespace ftllb;
using namespace ftllb::simnet;

namespace {

RoundRecord record(std::size_t r) {
  RoundRecord rec;
  rec.round = r;
  rec.faulted = {static_cast<NodeId>(r % 3)};
  rec.messages_sent = 10 + r;
  rec.messages_dropped = r;
  rec.digests = {state_digest(0.5, 0), state_digest(0.25, 1), 0xdeadbeefULL};
  rec.drops = {{1, kAnyNode}, {kAnyNode, 2}, {0, 2}};
  rec.loads = {0.5, 0.25, 1.0 / 3.0};
  return rec;
}

}  // namespace

TEST_CASE("trace round trip") {
  std::stringstream s;
  JsonlTraceWriter w(s);
  w.write_header({{"protocol", "llb"}, {"n", 3}});
  for (std::size_t r = 0; r < 4; ++r) w.on_round(record(r));
  const auto t = read_trace(s);
  CHECK(t.header["n"] == 3);
  REQUIRE(t.rounds.size() == 4);
  for (std::size_t r = 0; r < 4; ++r) {
    const auto want = record(r);
    const auto& got = t.rounds[r];
    CHECK(got.round == r);
    CHECK(got.faulted == want.faulted);
    CHECK(got.messages_sent == want.messages_sent);
    CHECK(got.messages_dropped == want.messages_dropped);
    CHECK(got.digests == want.digests);
    CHECK(got.drops == want.drops);
    CHECK(got.loads == want.loads);
    CHECK(t.lines[r] == r + 2);
  }
}

TEST_CASE("wildcards are written as -1") {
  const auto j = to_json(record(0));
  CHECK(j["drops"][0][1] == -1);
  CHECK(j["drops"][1][0] == -1);
}

TEST_CASE("a gap in round numbers is reported with its line") {
  std::stringstream s;
  JsonlTraceWriter w(s);
  w.write_header({{"n", 3}});
  w.on_round(record(0));
  w.on_round(record(1));
  w.on_round(record(3));
  try {
    read_trace(s);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 4);
  }
}

TEST_CASE("malformed trace lines") {
  SUBCASE("not json") {
    std::stringstream s("{\"n\": 2}\n{oops\n");
    CHECK_THROWS_AS(read_trace(s), ParseError);
  }
  SUBCASE("node out of range") {
    std::stringstream s("{\"n\": 2}\n{\"round\":0,\"faulted\":[5],\"messages_sent\":0,\"messages_dropped\":0,"
                        "\"per_node_digest\":[\"0\",\"0\"]}\n");
    CHECK_THROWS_AS(read_trace(s), ParseError);
  }
  SUBCASE("empty") {
    std::stringstream s;
    CHECK_THROWS_AS(read_trace(s), ParseError);
  }
}

TEST_CASE("state digests separate load and flag") {
  CHECK(state_digest(0.5, 0) != state_digest(0.5, 1));
  CHECK(state_digest(0.5, 0) != state_digest(0.25, 0));
  CHECK(state_digest(0.5, 0) == state_digest(0.5, 0));
}
