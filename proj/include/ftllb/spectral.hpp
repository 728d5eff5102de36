#pragma once

#include <cstddef>
#include <string>

#include "ftllb/graph.hpp"

namespace ftllb::graph {

struct SpectralReport {
  double lambda2 = 0.0;   // second-smallest eigenvalue of I - D^-1/2 A D^-1/2
  double residual = 0.0;  // ||L v - lambda2 v|| for the returned eigenvector
  std::size_t iterations = 0;
};

enum class SpectralMethod {
  kAuto,     // dense below dense_limit, Lanczos above
  kDense,    // full symmetric eigensolve
  kLanczos,  // Lanczos with full reorthogonalisation, deflated against D^1/2 1
};

struct SpectralOptions {
  double tol = 1e-8;
  SpectralMethod method = SpectralMethod::kAuto;
  std::size_t dense_limit = 2048;
  std::size_t max_iterations = 0;  // 0 = min(n, 400)
};

/// Throws DegenerateGraph on an isolated vertex (or fewer than two nodes) and
/// NoConvergence when the residual stays above tol.
SpectralReport lambda2(const Graph& g, const SpectralOptions& options = {});

struct WellConnectedParams {
  double d_min = 0.0;
  double d_max = 0.0;
  double lambda2_floor = 0.0;

  /// 1 - 1/(10 ln ln n), clamped into [0, 2]; 0 when ln ln n <= 0.
  static double default_floor(std::size_t n);
  static WellConnectedParams with_default_floor(double d_min, double d_max, std::size_t n);
};

struct WellConnectedVerdict {
  enum class Clause { kNone, kDegree, kLambda2 };

  bool passed = false;
  Clause failed = Clause::kNone;
  double offending_value = 0.0;  // the degree or lambda2 that failed
  NodeId offending_node = 0;     // for degree failures
  double lambda2 = -1.0;         // -1 when not computed
  std::string reason() const;
};

/// Degree clause first, then the spectral clause.
WellConnectedVerdict check_well_connected(const Graph& g, const WellConnectedParams& params,
                                          const SpectralOptions& options = {});

}  // namespace ftllb::graph
