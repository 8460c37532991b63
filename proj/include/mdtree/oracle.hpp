#pragma once

// Independent brute-force references for desk-scale verification.
//
// scalar_grid_max exhaustively maximizes the determinant-form objective over
// a uniform grid restricted to the feasible chain, for scalar sources with
// depth 2 or 3. Depth 3 exploits the separable structure: for a fixed root
// value the two level-2 variables decouple, so precomputed suffix maxima make
// the three-variable search a single linear scan. This is still an exact
// exhaustive search of the product grid.
//
// known_closedforms recognizes degenerate instances whose optimum is known in
// closed form (only the root constrained; or no effective constraint at all).

#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "mdtree/objective.hpp"
#include "mdtree/psd.hpp"
#include "mdtree/tree.hpp"

namespace mdtree {

struct GridSpec {
  double resolution = 1e-4;
};

struct GridSearchResult {
  ThetaAssignment theta;
  double value = 0.0;
};

namespace detail {

// Grid points j*r clipped to [0, hi], with hi itself always included so the
// right endpoint (often the optimizer for boundary-style instances) is hit
// exactly. Halving r keeps every old point, which makes refinement monotone.
inline std::vector<double> uniform_grid(double hi, double r) {
  std::vector<double> g;
  const auto steps = static_cast<long long>(std::floor(hi / r + 1e-9));
  g.reserve(static_cast<std::size_t>(steps) + 2);
  for (long long j = 0; j <= steps; ++j) {
    const double x = static_cast<double>(j) * r;
    if (x > hi) break;
    g.push_back(x);
  }
  if (g.empty() || g.back() < hi) g.push_back(hi);
  return g;
}

}  // namespace detail

// Exhaustive maximization over the feasible chain for m=1, L in {2,3}.
inline GridSearchResult scalar_grid_max(const ProblemInstance& inst,
                                        const GridSpec& grid = {}) {
  detail::require_valid_instance(inst);
  if (inst.m != 1 || (inst.L != 2 && inst.L != 3)) {
    throw error(errc::unsupported_dimension,
                "grid oracle covers scalar sources with depth 2 or 3 only");
  }
  if (!(grid.resolution > 0.0) || !std::isfinite(grid.resolution)) {
    throw error(errc::invalid_argument, "grid resolution must be positive");
  }

  const double sig2 = inst.sigma_x(0, 0);
  auto d = [&](int k, int i) { return inst.distortion({k, i})(0, 0); };
  // One internal-node summand of the determinant form, scalar case.
  auto term = [&](double dn, double dl, double dr, double th) {
    const double c = (sig2 - th) / sig2;
    return 0.5 * std::log(sig2 * (dn * c + th) /
                          ((dl * c + th) * (dr * c + th)));
  };
  const double root_const = 0.5 * std::log(sig2 / d(1, 1));
  const std::vector<double> g = detail::uniform_grid(sig2, grid.resolution);
  const std::size_t n = g.size();

  GridSearchResult best;
  best.theta.L = inst.L;

  if (inst.L == 2) {
    double best_v = -std::numeric_limits<double>::infinity();
    double best_t = 0.0;
    for (double th : g) {
      const double v = root_const + term(d(1, 1), d(2, 1), d(2, 2), th);
      if (v > best_v) {
        best_v = v;
        best_t = th;
      }
    }
    best.value = best_v;
    best.theta.thetas = {SymMatrix(Eigen::MatrixXd::Constant(1, 1, best_t))};
    return best;
  }

  // L == 3: suffix maxima of each level-2 term over the grid, then a linear
  // scan over the root value.
  std::vector<double> t21(n), t22(n);
  for (std::size_t j = 0; j < n; ++j) {
    t21[j] = term(d(2, 1), d(3, 1), d(3, 2), g[j]);
    t22[j] = term(d(2, 2), d(3, 3), d(3, 4), g[j]);
  }
  std::vector<std::size_t> arg21(n), arg22(n);
  std::vector<double> suf21(n), suf22(n);
  suf21[n - 1] = t21[n - 1];
  suf22[n - 1] = t22[n - 1];
  arg21[n - 1] = arg22[n - 1] = n - 1;
  for (std::size_t j = n - 1; j-- > 0;) {
    suf21[j] = t21[j] >= suf21[j + 1] ? t21[j] : suf21[j + 1];
    arg21[j] = t21[j] >= suf21[j + 1] ? j : arg21[j + 1];
    suf22[j] = t22[j] >= suf22[j + 1] ? t22[j] : suf22[j + 1];
    arg22[j] = t22[j] >= suf22[j + 1] ? j : arg22[j + 1];
  }
  double best_v = -std::numeric_limits<double>::infinity();
  std::size_t best_j = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const double v =
        root_const + term(d(1, 1), d(2, 1), d(2, 2), g[j]) + suf21[j] +
        suf22[j];
    if (v > best_v) {
      best_v = v;
      best_j = j;
    }
  }
  best.value = best_v;
  auto as_mat = [](double x) {
    return SymMatrix(Eigen::MatrixXd::Constant(1, 1, x));
  };
  best.theta.thetas = {as_mat(g[best_j]), as_mat(g[arg21[best_j]]),
                       as_mat(g[arg22[best_j]])};
  return best;
}

// Closed-form optimum for recognized degenerate patterns, empty otherwise.
inline std::optional<double> known_closedforms(const ProblemInstance& inst) {
  if (!validate(inst).empty()) return std::nullopt;
  const double scale = 1e-12 * (1.0 + max_abs(inst.sigma_x));
  for (int off = 1; off < node_count(inst.L); ++off) {
    if (max_abs(inst.distortions[static_cast<std::size_t>(off)] -
                inst.sigma_x) > scale) {
      return std::nullopt;
    }
  }
  // Only the root constraint is effective: the optimum is the joint
  // rate-distortion value, attained with every theta at the source
  // covariance (all side terms vanish there). Covers the fully trivial
  // pattern as well, where the value is zero.
  return 0.5 * (logdet(inst.sigma_x) - logdet(inst.distortion({1, 1})));
}

}  // namespace mdtree
