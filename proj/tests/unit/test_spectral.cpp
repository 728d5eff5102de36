#include <doctest.h>

#include <cmath>
#include <numbers>

#include "ftllb/errors.hpp"
#include "ftllb/graph.hpp"
#include "ftllb/rng.hpp"
#include "ftllb/spectral.hpp"

using namespace ftllb;
using graph::Graph;

namespace {

Graph petersen() {
  const Edge e[] = {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {0, 4}, {0, 5}, {1, 6}, {2, 7},
                    {3, 8}, {4, 9}, {5, 7}, {7, 9}, {6, 9}, {6, 8}, {5, 8}};
  return Graph::from_edges(10, e);
}

Graph hypercube(int dim) {
  const std::size_t n = std::size_t{1} << dim;
  std::vector<Edge> e;
  for (NodeId v = 0; v < n; ++v)
    for (int b = 0; b < dim; ++b) {
      const NodeId u = v ^ (NodeId{1} << b);
      if (v < u) e.push_back({v, u});
    }
  return Graph::from_edges(n, e);
}

Graph star(std::size_t leaves) {
  std::vector<Edge> e;
  for (NodeId v = 1; v <= leaves; ++v) e.push_back({0, v});
  return Graph::from_edges(leaves + 1, e);
}

double l2(const Graph& g, graph::SpectralMethod m = graph::SpectralMethod::kAuto) {
  graph::SpectralOptions o;
  o.method = m;
  return graph::lambda2(g, o).lambda2;
}

}  // namespace

TEST_CASE("closed-form normalized Laplacian gaps") {
  for (std::size_t n : {2u, 4u, 8u, 64u}) CHECK(std::abs(l2(Graph::complete(n)) - double(n) / double(n - 1)) < 1e-8);
  CHECK(std::abs(l2(Graph::cycle(4)) - 1.0) < 1e-8);
  CHECK(std::abs(l2(Graph::cycle(9)) - (1 - std::cos(2 * std::numbers::pi / 9))) < 1e-8);
  CHECK(std::abs(l2(Graph::path(6)) - (1 - std::cos(std::numbers::pi / 5))) < 1e-8);
  CHECK(std::abs(l2(petersen()) - 2.0 / 3.0) < 1e-8);
  CHECK(std::abs(l2(star(5)) - 1.0) < 1e-8);
  CHECK(std::abs(l2(hypercube(4)) - 0.5) < 1e-8);
}

TEST_CASE("disconnected graphs have a zero gap") {
  const Edge e[] = {{0, 1}, {1, 2}, {0, 2}, {3, 4}, {4, 5}, {3, 5}};
  CHECK(l2(Graph::from_edges(6, e)) <= 1e-8);
}

TEST_CASE("isolated vertices are rejected") {
  const Edge e[] = {{0, 1}};
  CHECK_THROWS_AS(graph::lambda2(Graph::from_edges(3, e)), DegenerateGraph);
  CHECK_THROWS_AS(graph::lambda2(Graph(1)), DegenerateGraph);
}

TEST_CASE("residual is reported and small") {
  const auto r = graph::lambda2(petersen());
  CHECK(r.residual <= 1e-8);
}

TEST_CASE("Lanczos agrees with the dense solver") {
  Rng rng(17);
  for (std::size_t n : {64u, 300u}) {
    const auto g = graph::sample_gnp(n, 0.1, rng);
    if (g.min_degree() == 0) continue;
    const double dense = l2(g, graph::SpectralMethod::kDense);
    const double krylov = l2(g, graph::SpectralMethod::kLanczos);
    CHECK(krylov == doctest::Approx(dense).epsilon(1e-7));
  }
}

TEST_CASE("Lanczos on a hypercube") {
  CHECK(std::abs(l2(hypercube(9), graph::SpectralMethod::kLanczos) - 2.0 / 9.0) < 1e-8);
}

TEST_CASE("well-connected verdict checks degrees before the spectrum") {
  const auto k = Graph::complete(16);
  auto v = graph::check_well_connected(k, {15, 15, 0.9});
  CHECK(v.passed);
  CHECK(v.lambda2 == doctest::Approx(16.0 / 15.0));

  v = graph::check_well_connected(k, {16, 20, 0.9});
  CHECK_FALSE(v.passed);
  CHECK(v.failed == graph::WellConnectedVerdict::Clause::kDegree);
  CHECK(v.lambda2 < 0.0);
  CHECK(v.reason().find("degree") != std::string::npos);

  v = graph::check_well_connected(Graph::cycle(16), {2, 2, 0.5});
  CHECK_FALSE(v.passed);
  CHECK(v.failed == graph::WellConnectedVerdict::Clause::kLambda2);
}

TEST_CASE("default spectral floor") {
  const double lnln = std::log(std::log(256.0));
  CHECK(graph::WellConnectedParams::default_floor(256) == doctest::Approx(1 - 1 / (10 * lnln)));
  CHECK(graph::WellConnectedParams::default_floor(2) == 0.0);
}
