#include <doctest.h>

#include <algorithm>
#include <functional>
#include <memory>
#include <vector>

#include "ftllb/errors.hpp"
#include "ftllb/simnet.hpp"

using namespace ftllb;
using namespace ftllb::simnet;

namespace {

/// Replays a fixed decision per round.
class Scripted : public Adversary {
 public:
  Scripted(FaultKind kind, std::size_t budget, std::vector<DeliveryDecision> script)
      : kind_(kind), budget_(budget), script_(std::move(script)) {}
  FaultKind kind() const override { return kind_; }
  std::size_t budget() const override { return budget_; }
  std::string name() const override { return "scripted"; }
  DeliveryDecision decide(const RoundView& view) override {
    return view.round() < script_.size() ? script_[view.round()] : DeliveryDecision{};
  }

 private:
  FaultKind kind_;
  std::size_t budget_;
  std::vector<DeliveryDecision> script_;
};

/// Every alive node multicasts its id; records counts and sums.
struct Echo : Program {
  std::size_t n;
  std::vector<std::size_t> counts;
  std::vector<double> sums;
  std::vector<std::uint8_t> receiving;
  explicit Echo(std::size_t n) : n(n), counts(n), sums(n), receiving(n) {}
  void produce(Outbox& out) override {
    for (NodeId v = 0; v < n; ++v) out.multicast(v, {static_cast<double>(v), Tag::kLoad, 0});
  }
  void absorb(const Delivery& in) override {
    for (NodeId v = 0; v < n; ++v) {
      receiving[v] = in.receiving(v);
      counts[v] = in.count(v);
      sums[v] = in.count(v) ? in.sum(v) : 0.0;
    }
  }
};

/// Generic program from two lambdas.
struct Lambda : Program {
  std::function<void(Outbox&)> p;
  std::function<void(const Delivery&)> a;
  void produce(Outbox& out) override { p(out); }
  void absorb(const Delivery& in) override { a(in); }
};

}  // namespace

TEST_CASE("fault-free multicast reaches every neighbour") {
  Engine e(6, 1);
  e.set_topology(std::make_shared<Topology>(graph::Graph::cycle(6)));
  Echo p(6);
  e.step(p);
  for (NodeId v = 0; v < 6; ++v) {
    CHECK(p.counts[v] == 2);
    CHECK(p.sums[v] == double((v + 1) % 6 + (v + 5) % 6));
  }
  CHECK(e.metrics().messages_sent == 12);
  CHECK(e.metrics().messages_delivered == 12);
  CHECK(e.metrics().bits() == 12 * 64);
  CHECK(e.round() == 1);
}

TEST_CASE("crashes are permanent and a crashing node does not receive") {
  DeliveryDecision d0;
  d0.newly_faulted = {2};
  d0.drops = {{2, 1}};  // 2 still reaches 3 this round
  auto adv = std::make_shared<Scripted>(FaultKind::kCrash, 1, std::vector{d0});
  Engine e(5, 1, adv);
  e.set_topology(Topology::complete(5));
  Echo p(5);
  e.step(p);
  CHECK(e.crashed(2));
  CHECK_FALSE(p.receiving[2]);
  CHECK(p.counts[1] == 3);
  CHECK(p.counts[3] == 4);
  e.step(p);
  CHECK(e.crashed(2));
  for (NodeId v : {0u, 1u, 3u, 4u}) CHECK(p.counts[v] == 3);
  CHECK(e.faulted_count() == 1);
  CHECK(e.faulted_nodes() == std::vector<NodeId>{2});
}

TEST_CASE("adversary decisions outside the contract are rejected") {
  SUBCASE("budget") {
    DeliveryDecision d;
    d.newly_faulted = {0, 1};
    Engine e(4, 1, std::make_shared<Scripted>(FaultKind::kCrash, 1, std::vector{d}));
    e.set_topology(Topology::complete(4));
    Echo p(4);
    CHECK_THROWS_AS(e.step(p), BudgetExceeded);
  }
  SUBCASE("double crash") {
    DeliveryDecision d;
    d.newly_faulted = {0};
    Engine e(4, 1, std::make_shared<Scripted>(FaultKind::kCrash, 2, std::vector{d, d}));
    e.set_topology(Topology::complete(4));
    Echo p(4);
    e.step(p);
    CHECK_THROWS_AS(e.step(p), BudgetExceeded);
  }
  SUBCASE("crash-mode drop from a live node") {
    DeliveryDecision d;
    d.drops = {{0, 1}};
    Engine e(4, 1, std::make_shared<Scripted>(FaultKind::kCrash, 2, std::vector{d}));
    e.set_topology(Topology::complete(4));
    Echo p(4);
    CHECK_THROWS_AS(e.step(p), BudgetExceeded);
  }
  SUBCASE("omission drop between two correct nodes") {
    DeliveryDecision d;
    d.newly_faulted = {3};
    d.drops = {{0, 1}};
    Engine e(4, 1, std::make_shared<Scripted>(FaultKind::kOmission, 1, std::vector{d}));
    e.set_topology(Topology::complete(4));
    Echo p(4);
    CHECK_THROWS_AS(e.step(p), BudgetExceeded);
  }
}

TEST_CASE("omission faults keep the node alive and drop only its links") {
  DeliveryDecision d;
  d.newly_faulted = {1};
  d.drops = {{1, kAnyNode}, {kAnyNode, 1}, {0, 1}};
  Engine e(4, 1, std::make_shared<Scripted>(FaultKind::kOmission, 1, std::vector{d}));
  e.set_topology(Topology::complete(4));
  Echo p(4);
  e.step(p);
  CHECK(e.faulted(1));
  CHECK_FALSE(e.crashed(1));
  CHECK(p.receiving[1]);
  CHECK(p.counts[1] == 0);
  CHECK(p.counts[0] == 2);
  CHECK(p.sums[0] == 5.0);
  CHECK(e.metrics().messages_dropped == 6);
  e.step(p);
  CHECK(p.counts[1] == 3);
}

TEST_CASE("median of received values") {
  Engine e(5, 1);
  e.set_topology(Topology::complete(5));
  std::vector<double> med(5);
  const double loads[] = {4.0, 1.0, 9.0, 2.0, 7.0};
  Lambda p;
  p.p = [&](Outbox& out) {
    for (NodeId v = 0; v < 5; ++v) out.multicast(v, {loads[v], Tag::kLoad, 0});
  };
  p.a = [&](const Delivery& in) {
    for (NodeId v = 0; v < 5; ++v) med[v] = in.median(v);
  };
  e.step(p);
  CHECK(med[0] == doctest::Approx(4.5));  // {1, 9, 2, 7}
  CHECK(med[2] == doctest::Approx(3.0));  // {4, 1, 2, 7}
  CHECK(med[4] == doctest::Approx(3.0));  // {4, 1, 9, 2}
}

TEST_CASE("unicast rounds deliver by sender id") {
  Engine e(4, 1);
  e.set_topology(Topology::complete(4));
  std::vector<std::vector<std::size_t>> from(4);
  Lambda p;
  p.p = [](Outbox& out) {
    out.unicast(3, 0, {3.0, Tag::kInquiry, 1});
    out.unicast(1, 0, {1.0, Tag::kInquiry, 1});
    out.unicast(2, 1, {2.0, Tag::kInquiry, 0});
  };
  std::optional<Payload> first;
  p.a = [&](const Delivery& in) {
    CHECK(in.unicast_round());
    for (NodeId v = 0; v < 4; ++v) in.for_each(v, [&](std::size_t s, const Payload&) { from[v].push_back(s); });
    first = in.first_flagged(0);
  };
  e.step(p);
  CHECK(from[0] == std::vector<std::size_t>{1, 3});
  CHECK(from[1] == std::vector<std::size_t>{2});
  CHECK(from[2].empty());
  REQUIRE(first);
  CHECK(first->value == 1.0);
  CHECK(e.metrics().messages_sent == 3);
}

TEST_CASE("mixing unicast and multicast in a round is an error") {
  Engine e(3, 1);
  e.set_topology(Topology::complete(3));
  Lambda p;
  p.p = [](Outbox& out) {
    out.multicast(0, {});
    out.unicast(1, 2, {});
  };
  p.a = [](const Delivery&) {};
  CHECK_THROWS_AS(e.step(p), std::logic_error);
}

TEST_CASE("per-node streams are reproducible and independent") {
  Engine a(4, 9), b(4, 9), c(4, 10);
  CHECK(a.rng(0).next() == b.rng(0).next());
  CHECK(a.rng(1).next() != a.rng(2).next());
  CHECK(a.rng(3).next() != c.rng(3).next());
}

TEST_CASE("topology ports") {
  Topology t(graph::Graph::cycle(5));
  CHECK(t.node_at(0, 0) == 1);
  CHECK(t.node_at(0, 1) == 4);
  CHECK(t.port_of(0, 4) == 1);
  CHECK_THROWS_AS(t.port_of(0, 2), std::out_of_range);
  CHECK(t.has_rows());
}

TEST_CASE("first flagged port in multicast rounds") {
  Engine e(4, 1);
  e.set_topology(Topology::complete(4));
  std::ptrdiff_t port = -2;
  std::optional<Payload> pl;
  Lambda p;
  p.p = [](Outbox& out) {
    out.multicast(0, {0.0, Tag::kStatus, 0});
    out.multicast(2, {0.25, Tag::kStatus, 1});
    out.multicast(3, {0.75, Tag::kStatus, 1});
  };
  p.a = [&](const Delivery& in) {
    port = in.first_flagged_port(1);
    pl = in.first_flagged(1);
  };
  e.step(p);
  CHECK(port == 1);  // neighbours of 1 are 0, 2, 3
  REQUIRE(pl);
  CHECK(pl->value == 0.25);
}
