#include "ftllb/spectral.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "ftllb/errors.hpp"
#include "ftllb/rng.hpp"
#include "ftllb/simd.hpp"

namespace ftllb::graph {
namespace {

void require_nondegenerate(const Graph& g) {
  if (g.size() < 2) throw DegenerateGraph("lambda2 needs at least two nodes");
  for (NodeId v = 0; v < g.size(); ++v)
    if (g.degree(v) == 0) throw DegenerateGraph("node " + std::to_string(v) + " is isolated");
}

double clamp_spectrum(double x) { return std::clamp(x, 0.0, 2.0); }

SpectralReport dense_lambda2(const Graph& g, double tol) {
  const auto n = static_cast<Eigen::Index>(g.size());
  Eigen::VectorXd inv_sqrt(n);
  for (NodeId v = 0; v < g.size(); ++v) inv_sqrt[v] = 1.0 / std::sqrt(static_cast<double>(g.degree(v)));
  Eigen::MatrixXd lap = Eigen::MatrixXd::Identity(n, n);
  for (NodeId v = 0; v < g.size(); ++v)
    for (NodeId u : g.neighbors(v)) lap(v, u) = -inv_sqrt[v] * inv_sqrt[u];

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(lap);
  if (solver.info() != Eigen::Success) throw NoConvergence("dense eigensolver failed");
  const double value = solver.eigenvalues()[1];
  const Eigen::VectorXd vec = solver.eigenvectors().col(1);
  SpectralReport report;
  report.lambda2 = clamp_spectrum(value);
  report.residual = (lap * vec - value * vec).norm();
  report.iterations = 1;
  if (report.residual > tol) {
    throw NoConvergence("dense eigensolve residual " + std::to_string(report.residual) +
                        " above tolerance");
  }
  return report;
}

// y = D^-1/2 A D^-1/2 x
class NormalizedAdjacency {
 public:
  explicit NormalizedAdjacency(const Graph& g) : g_(g), inv_sqrt_(g.size()), scratch_(g.size()) {
    for (NodeId v = 0; v < g.size(); ++v) inv_sqrt_[v] = 1.0 / std::sqrt(static_cast<double>(g.degree(v)));
  }

  void apply(const double* x, double* y) {
    const auto& k = simd::active_kernels();
    for (std::size_t v = 0; v < g_.size(); ++v) scratch_[v] = x[v] * inv_sqrt_[v];
    for (NodeId v = 0; v < g_.size(); ++v) {
      const auto nb = g_.neighbors(v);
      y[v] = inv_sqrt_[v] * k.gather_sum(nb.data(), nb.size(), scratch_.data());
    }
  }

 private:
  const Graph& g_;
  std::vector<double> inv_sqrt_;
  std::vector<double> scratch_;
};

// Largest eigenvalue of the normalized adjacency on the complement of its
// known top eigenvector D^1/2 1; lambda2 = 1 - that value.
SpectralReport lanczos_lambda2(const Graph& g, const SpectralOptions& options) {
  const std::size_t n = g.size();
  const auto& k = simd::active_kernels();
  NormalizedAdjacency op(g);

  std::vector<double> top(n);
  double vol = 0.0;
  for (NodeId v = 0; v < n; ++v) vol += static_cast<double>(g.degree(v));
  for (NodeId v = 0; v < n; ++v) top[v] = std::sqrt(static_cast<double>(g.degree(v)) / vol);

  const std::size_t cap = options.max_iterations != 0 ? options.max_iterations : std::min<std::size_t>(n - 1, 400);
  std::vector<std::vector<double>> basis;
  basis.reserve(cap + 1);
  std::vector<double> alpha, beta;

  auto orthogonalize = [&](std::vector<double>& w) {
    // Two passes of classical Gram-Schmidt against the deflated vector and
    // the whole basis.
    for (int pass = 0; pass < 2; ++pass) {
      k.axpy(-k.dot(top.data(), w.data(), n), top.data(), w.data(), n);
      for (const auto& q : basis) k.axpy(-k.dot(q.data(), w.data(), n), q.data(), w.data(), n);
    }
  };

  Rng rng(derive_seed(0x6c616e637a6f73ULL, n, g.edge_count()));
  std::vector<double> q(n);
  for (auto& x : q) x = rng.uniform() - 0.5;
  orthogonalize(q);
  double norm = std::sqrt(k.dot(q.data(), q.data(), n));
  if (norm == 0.0) throw NoConvergence("Lanczos start vector vanished");
  for (auto& x : q) x /= norm;
  basis.push_back(q);

  std::vector<double> w(n);
  SpectralReport report;
  for (std::size_t j = 0; j < cap; ++j) {
    op.apply(basis[j].data(), w.data());
    const double a = k.dot(basis[j].data(), w.data(), n);
    alpha.push_back(a);
    orthogonalize(w);
    const double b = std::sqrt(k.dot(w.data(), w.data(), n));

    const auto m = static_cast<Eigen::Index>(alpha.size());
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
      t(i, i) = alpha[static_cast<std::size_t>(i)];
      if (i + 1 < m) t(i, i + 1) = t(i + 1, i) = beta[static_cast<std::size_t>(i)];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> small(t);
    const double theta = small.eigenvalues()[m - 1];
    const double residual = std::abs(b * small.eigenvectors()(m - 1, m - 1));
    report.iterations = j + 1;
    report.residual = residual;
    report.lambda2 = clamp_spectrum(1.0 - theta);

    const bool exhausted = b < 1e-13 || basis.size() + 1 >= n;
    if (residual <= options.tol || exhausted) {
      if (residual > options.tol) break;
      return report;
    }
    beta.push_back(b);
    for (std::size_t i = 0; i < n; ++i) w[i] /= b;
    basis.push_back(w);
  }
  throw NoConvergence("Lanczos residual " + std::to_string(report.residual) + " after " +
                      std::to_string(report.iterations) + " iterations");
}

}  // namespace

SpectralReport lambda2(const Graph& g, const SpectralOptions& options) {
  require_nondegenerate(g);
  const bool dense = options.method == SpectralMethod::kDense ||
                     (options.method == SpectralMethod::kAuto && g.size() <= options.dense_limit);
  // Tiny graphs leave no room for a Krylov space on the deflated complement.
  if (dense || g.size() <= 3) return dense_lambda2(g, options.tol);
  return lanczos_lambda2(g, options);
}

double WellConnectedParams::default_floor(std::size_t n) {
  const double lnln = std::log(std::log(static_cast<double>(n)));
  if (!(lnln > 0.0)) return 0.0;
  return std::clamp(1.0 - 1.0 / (10.0 * lnln), 0.0, 2.0);
}

WellConnectedParams WellConnectedParams::with_default_floor(double d_min, double d_max, std::size_t n) {
  return {d_min, d_max, default_floor(n)};
}

std::string WellConnectedVerdict::reason() const {
  std::ostringstream out;
  switch (failed) {
    case Clause::kNone: out << "pass"; break;
    case Clause::kDegree: out << "degree " << offending_value << " of node " << offending_node << " outside [d_min, d_max]"; break;
    case Clause::kLambda2: out << "lambda2 " << offending_value << " below floor"; break;
  }
  return out.str();
}

WellConnectedVerdict check_well_connected(const Graph& g, const WellConnectedParams& params,
                                          const SpectralOptions& options) {
  WellConnectedVerdict verdict;
  for (NodeId v = 0; v < g.size(); ++v) {
    const auto d = static_cast<double>(g.degree(v));
    if (d < params.d_min || d > params.d_max) {
      verdict.failed = WellConnectedVerdict::Clause::kDegree;
      verdict.offending_value = d;
      verdict.offending_node = v;
      return verdict;
    }
  }
  const SpectralReport report = lambda2(g, options);
  verdict.lambda2 = report.lambda2;
  if (report.lambda2 < params.lambda2_floor) {
    verdict.failed = WellConnectedVerdict::Clause::kLambda2;
    verdict.offending_value = report.lambda2;
    return verdict;
  }
  verdict.passed = true;
  return verdict;
}

}  // namespace ftllb::graph
