#pragma once

// Sum-rate objective for tree-structured covariance distortion constraints.
//
// The same quantity is exposed in three coordinate systems:
//   * objective_theta    — determinant form in the Θ chain variables; valid on
//                          the closed feasible set, including its boundary.
//   * objective_sigma    — slack form using Σ_S = (D^{-1} − Σ_X^{-1})^{-1};
//                          requires a strictly interior instance, but every
//                          determinant argument is symmetric positive
//                          definite, which is what the optimizer wants.
//   * lower_bound_value  — additive-noise form over a tree of noise
//                          covariances; related to the Θ form by
//                          Θ = (Σ_X^{-1} + Σ_N^{-1})^{-1}.
// All three agree wherever they are jointly defined; the unit tests enforce
// this on random instances.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "mdtree/psd.hpp"
#include "mdtree/tree.hpp"

namespace mdtree {

// Θ matrices attached to the internal nodes (k,i), k = 1..L-1, stored at the
// usual flat offsets. Feasibility is the closed chain
//   0 ⪯ Θ_{1,1} ⪯ Θ_{2,i} ⪯ ... ⪯ Θ_{L-1,i} ⪯ Σ_X
// along every root-to-leaf path.
struct ThetaAssignment {
  int L = 0;
  std::vector<SymMatrix> thetas;

  static ThetaAssignment constant(int levels, const SymMatrix& value) {
    ThetaAssignment th;
    th.L = levels;
    th.thetas.assign(static_cast<std::size_t>(node_count(levels - 1)), value);
    return th;
  }

  const SymMatrix& at(TreeIndex n) const {
    return thetas[static_cast<std::size_t>(node_offset(n))];
  }
  SymMatrix& at(TreeIndex n) {
    return thetas[static_cast<std::size_t>(node_offset(n))];
  }
};

// Noise covariances attached to the internal nodes; must increase strictly
// down the tree: 0 ≺ Σ_N at the root and Σ_N(child) ≻ Σ_N(parent).
struct NoiseTree {
  int L = 0;
  std::vector<SymMatrix> sigma_n;

  const SymMatrix& at(TreeIndex n) const {
    return sigma_n[static_cast<std::size_t>(node_offset(n))];
  }
  SymMatrix& at(TreeIndex n) {
    return sigma_n[static_cast<std::size_t>(node_offset(n))];
  }
};

// Slack matrices Σ_S = (D^{-1} − Σ_X^{-1})^{-1} for every node k = 1..L.
struct SigmaSlack {
  int L = 0;
  std::vector<SymMatrix> sigmas;

  const SymMatrix& at(TreeIndex n) const {
    return sigmas[static_cast<std::size_t>(node_offset(n))];
  }
  SymMatrix& at(TreeIndex n) {
    return sigmas[static_cast<std::size_t>(node_offset(n))];
  }
};

namespace detail {

inline void require_valid_instance(const ProblemInstance& inst) {
  auto violations = validate(inst);
  if (!violations.empty()) {
    throw error(errc::invalid_argument,
                "instance does not validate: " + violations.front().where +
                    ": " + violations.front().what);
  }
}

inline void require_theta_shape(const ProblemInstance& inst,
                                const ThetaAssignment& th) {
  if (th.L != inst.L ||
      th.thetas.size() != static_cast<std::size_t>(node_count(inst.L - 1))) {
    throw error(errc::infeasible_theta,
                "theta assignment does not match the tree shape");
  }
  for (const auto& t : th.thetas) {
    if (t.dim() != inst.m) {
      throw error(errc::dimension_mismatch,
                  "theta block dimension does not match the source");
    }
  }
}

}  // namespace detail

// True when th satisfies the closed feasibility chain for inst within tol.
inline bool is_feasible_theta(const ProblemInstance& inst,
                              const ThetaAssignment& th,
                              const Tolerance& tol = {}) {
  if (th.L != inst.L ||
      th.thetas.size() != static_cast<std::size_t>(node_count(inst.L - 1))) {
    return false;
  }
  for (const auto& t : th.thetas) {
    if (t.dim() != inst.m) return false;
  }
  if (!is_psd(th.at({1, 1}), tol)) return false;
  for (int k = 1; k <= inst.L - 2; ++k) {
    for (int i = 1; i <= level_width(k); ++i) {
      const TreeIndex n{k, i};
      if (!is_loewner_leq(th.at(n), th.at(left_child(n)), tol)) return false;
      if (!is_loewner_leq(th.at(n), th.at(right_child(n)), tol)) return false;
    }
  }
  for (int i = 1; i <= level_width(inst.L - 1); ++i) {
    if (!is_loewner_leq(th.at({inst.L - 1, i}), inst.sigma_x, tol)) {
      return false;
    }
  }
  return true;
}

// Σ_S = (D^{-1} − Σ_X^{-1})^{-1} per node; requires 0 ≺ D ≺ Σ_X strictly.
inline SigmaSlack sigma_from_distortion(const ProblemInstance& inst,
                                        const Tolerance& tol = {}) {
  detail::require_valid_instance(inst);
  if (!is_strictly_interior(inst, tol)) {
    throw error(errc::not_strictly_interior,
                "slack coordinates need 0 < D < Sigma_X strictly");
  }
  const SymMatrix sigma_inv = inverse(inst.sigma_x);
  SigmaSlack out;
  out.L = inst.L;
  out.sigmas.reserve(inst.distortions.size());
  for (const auto& d : inst.distortions) {
    out.sigmas.push_back(inverse(inverse(d) - sigma_inv));
  }
  return out;
}

// Determinant form of the sum-rate objective; defined on the closed chain.
inline double objective_theta(const ProblemInstance& inst,
                              const ThetaAssignment& th,
                              const Tolerance& tol = {}) {
  detail::require_valid_instance(inst);
  detail::require_theta_shape(inst, th);
  if (!is_feasible_theta(inst, th, tol)) {
    throw error(errc::infeasible_theta,
                "theta assignment violates the ordering chain");
  }
  const Eigen::MatrixXd sigma_inv = inverse(inst.sigma_x).mat();
  const double ld_sigma = logdet(inst.sigma_x);

  auto term = [&](const SymMatrix& d, const Eigen::MatrixXd& core,
                  const Eigen::MatrixXd& t, TreeIndex where) -> double {
    auto v = logdet_general(d.mat() * core + t);
    if (!v) {
      throw error(errc::singular_term,
                  "determinant argument at node " + to_string(where) +
                      " is not positive");
    }
    return *v;
  };

  double total = 0.5 * (ld_sigma - logdet(inst.distortion({1, 1})));
  for (int k = 1; k <= inst.L - 1; ++k) {
    for (int i = 1; i <= level_width(k); ++i) {
      const TreeIndex n{k, i};
      const Eigen::MatrixXd& t = th.at(n).mat();
      const Eigen::MatrixXd core = sigma_inv * (inst.sigma_x.mat() - t);
      total += 0.5 * (ld_sigma + term(inst.distortion(n), core, t, n) -
                      term(inst.distortion(left_child(n)), core, t,
                           left_child(n)) -
                      term(inst.distortion(right_child(n)), core, t,
                           right_child(n)));
    }
  }
  return total;
}

// Slack form of the objective; every determinant argument is symmetric PD.
inline double objective_sigma(const ProblemInstance& inst,
                              const ThetaAssignment& th,
                              const Tolerance& tol = {}) {
  detail::require_theta_shape(inst, th);
  if (!is_feasible_theta(inst, th, tol)) {
    throw error(errc::infeasible_theta,
                "theta assignment violates the ordering chain");
  }
  const SigmaSlack slack = sigma_from_distortion(inst, tol);

  auto term = [&](const SymMatrix& a, TreeIndex where) -> double {
    try {
      return logdet(a);
    } catch (const error&) {
      throw error(errc::singular_term, "determinant argument at node " +
                                           to_string(where) +
                                           " is not positive definite");
    }
  };

  const TreeIndex root{1, 1};
  double total =
      0.5 * (term(inst.sigma_x + slack.at(root), root) -
             term(slack.at(root), root));
  for (int k = 1; k <= inst.L - 1; ++k) {
    for (int i = 1; i <= level_width(k); ++i) {
      const TreeIndex n{k, i};
      const TreeIndex lo = left_child(n);
      const TreeIndex hi = right_child(n);
      const SymMatrix& t = th.at(n);
      total += 0.5 * (term(t + slack.at(n), n) +
                      term(inst.sigma_x + slack.at(lo), lo) +
                      term(inst.sigma_x + slack.at(hi), hi) -
                      term(inst.sigma_x + slack.at(n), n) -
                      term(t + slack.at(lo), lo) - term(t + slack.at(hi), hi));
    }
  }
  return total;
}

// Returns a description of the first defect of nt against sigma_x, or nullopt
// when nt is a valid strictly increasing noise tree.
inline std::optional<std::string> check_noise_tree(const SymMatrix& sigma_x,
                                                   const NoiseTree& nt,
                                                   const Tolerance& tol = {}) {
  if (nt.L < 2 ||
      nt.sigma_n.size() != static_cast<std::size_t>(node_count(nt.L - 1))) {
    return "noise tree shape does not match its declared depth";
  }
  for (const auto& n : nt.sigma_n) {
    if (n.dim() != sigma_x.dim()) {
      return "noise block dimension does not match the source";
    }
  }
  const SymMatrix& root = nt.at({1, 1});
  if (min_eigenvalue(root) <= psd_threshold(root, tol)) {
    return "root noise covariance is not positive definite";
  }
  for (int k = 1; k <= nt.L - 2; ++k) {
    for (int i = 1; i <= level_width(k); ++i) {
      const TreeIndex n{k, i};
      for (const TreeIndex c : {left_child(n), right_child(n)}) {
        const SymMatrix inc = nt.at(c) - nt.at(n);
        if (min_eigenvalue(inc) <= psd_threshold(inc, tol)) {
          return "noise increment at node " + to_string(c) +
                 " is not strictly positive definite";
        }
      }
    }
  }
  return std::nullopt;
}

// Θ = (Σ_X^{-1} + Σ_N^{-1})^{-1} node by node.
inline ThetaAssignment theta_from_noise(const SymMatrix& sigma_x,
                                        const NoiseTree& nt,
                                        const Tolerance& tol = {}) {
  if (auto defect = check_noise_tree(sigma_x, nt, tol)) {
    throw error(errc::invalid_noise_tree, *defect);
  }
  const SymMatrix sigma_inv = inverse(sigma_x);
  ThetaAssignment th;
  th.L = nt.L;
  th.thetas.reserve(nt.sigma_n.size());
  for (const auto& n : nt.sigma_n) {
    th.thetas.push_back(inverse(sigma_inv + inverse(n)));
  }
  return th;
}

// Σ_N = (Θ^{-1} − Σ_X^{-1})^{-1}; only exists for strictly feasible chains
// (0 ≺ Θ_{1,1}, strict increase along every edge, Θ_{L-1,i} ≺ Σ_X).
inline NoiseTree noise_from_theta(const SymMatrix& sigma_x,
                                  const ThetaAssignment& th,
                                  const Tolerance& tol = {}) {
  if (th.L < 2 ||
      th.thetas.size() != static_cast<std::size_t>(node_count(th.L - 1))) {
    throw error(errc::infeasible_theta,
                "theta assignment does not match the tree shape");
  }
  auto require_strict_pd = [&](const SymMatrix& a, const std::string& what) {
    if (min_eigenvalue(a) <= psd_threshold(a, tol)) {
      throw error(errc::boundary_theta, what);
    }
  };
  require_strict_pd(th.at({1, 1}), "theta at the root is not strictly PD");
  for (int k = 1; k <= th.L - 2; ++k) {
    for (int i = 1; i <= level_width(k); ++i) {
      const TreeIndex n{k, i};
      for (const TreeIndex c : {left_child(n), right_child(n)}) {
        require_strict_pd(th.at(c) - th.at(n),
                          "theta chain is not strictly increasing at node " +
                              to_string(c));
      }
    }
  }
  for (int i = 1; i <= level_width(th.L - 1); ++i) {
    require_strict_pd(sigma_x - th.at({th.L - 1, i}),
                      "theta reaches the source covariance at node " +
                          to_string(TreeIndex{th.L - 1, i}));
  }
  const SymMatrix sigma_inv = inverse(sigma_x);
  NoiseTree nt;
  nt.L = th.L;
  nt.sigma_n.reserve(th.thetas.size());
  for (const auto& t : th.thetas) {
    nt.sigma_n.push_back(inverse(inverse(t) - sigma_inv));
  }
  return nt;
}

// Additive-noise form: the bracketed sum evaluated at a given noise tree.
// Monotone limits of these values over all valid noise trees converge to the
// optimum; any single evaluation is a certified lower bound on it.
inline double lower_bound_value(const ProblemInstance& inst,
                                const NoiseTree& nt,
                                const Tolerance& tol = {}) {
  detail::require_valid_instance(inst);
  if (nt.L != inst.L) {
    throw error(errc::invalid_noise_tree,
                "noise tree depth does not match the instance");
  }
  if (auto defect = check_noise_tree(inst.sigma_x, nt, tol)) {
    throw error(errc::invalid_noise_tree, *defect);
  }
  const TreeIndex root{1, 1};
  double total = 0.5 * (logdet(inst.sigma_x) +
                        logdet(inst.distortion(root) + nt.at(root)) -
                        logdet(inst.distortion(root)) -
                        logdet(inst.sigma_x + nt.at(root)));
  for (int k = 1; k <= inst.L - 2; ++k) {
    for (int i = 1; i <= level_width(k); ++i) {
      const TreeIndex n{k, i};
      for (const TreeIndex c : {left_child(n), right_child(n)}) {
        total += 0.5 * (logdet(inst.sigma_x + nt.at(n)) +
                        logdet(inst.distortion(c) + nt.at(c)) -
                        logdet(inst.sigma_x + nt.at(c)) -
                        logdet(inst.distortion(c) + nt.at(n)));
      }
    }
  }
  for (int i = 1; i <= level_width(inst.L - 1); ++i) {
    const TreeIndex n{inst.L - 1, i};
    for (int c : {2 * i - 1, 2 * i}) {
      total += 0.5 * (logdet(inst.sigma_x + nt.at(n)) -
                      logdet(inst.distortion({inst.L, c}) + nt.at(n)));
    }
  }
  return total;
}

}  // namespace mdtree
