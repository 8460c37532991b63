#pragma once
// Constructive side of the rate characterization: enhanced covariances built
// from an optimizer/multiplier pair, the identity certificate they satisfy,
// the auxiliary Gaussian noise tree assembled from them, the achievable sum
// rate evaluated two independent ways, achieved distortions, and a Monte
// Carlo validation of the whole construction.
//
// Enhancement: for internal nodes Σ̃ = ((Θ+Σ_S)^{-1} + M)^{-1} − Θ and for
// leaves Σ̃ = ((Σ_X+Σ_S)^{-1} + M)^{-1} − Σ_X. At a certified optimum the
// enhanced covariances satisfy a list of exchange identities (verified here
// residual-by-residual) which make the noise tree below both feasible and
// rate-optimal.
//
// Noise tree: V_{1,1} ~ N(0, Σ̃_{1,1}); per internal node an independent pair
// (V_odd, V_even) ~ N(0, Λ) with
//   Λ = [ Σ̃_odd − Σ̃_self   −(Θ+Σ̃_self) ;  −(Θ+Σ̃_self)   Σ̃_even − Σ̃_self ],
//   Γ = [ Σ̃_odd   −Θ ;  −Θ   Σ̃_even ],
// accumulated along root-to-leaf paths: Q_child = Q_parent + V_child. The
// leaf noises define one description channel U_j = X + Q_{L,j} each.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mdtree/objective.hpp"
#include "mdtree/psd.hpp"
#include "mdtree/solver.hpp"
#include "mdtree/tree.hpp"

namespace mdtree {

// Enhanced covariance per node, level-major like ProblemInstance storage.
struct EnhancedSigmas {
  int L = 0;
  std::vector<SymMatrix> sig_tilde;

  const SymMatrix& at(TreeIndex n) const {
    return sig_tilde[static_cast<std::size_t>(node_offset(n))];
  }
  SymMatrix& at(TreeIndex n) {
    return sig_tilde[static_cast<std::size_t>(node_offset(n))];
  }
};

struct ResidualEntry {
  std::string name;
  double value = 0.0;
};

struct EnhancementReport {
  std::vector<ResidualEntry> entries;
  double max_residual = 0.0;
};

// Λ/Γ/H per internal node plus the accumulated noise-tree covariances.
struct SchemeConstruction {
  int L = 0;
  int m = 0;
  // indexed by node_offset over internal nodes k = 1..L-1
  std::vector<SymMatrix> lambdas;
  std::vector<SymMatrix> gammas;
  std::vector<std::pair<Eigen::MatrixXd, Eigen::MatrixXd>> h_blocks;
  // indexed by node_offset over all nodes k = 1..L; cov(Q_{k,i}) accumulated
  // from the root and the Λ diagonal blocks
  std::vector<SymMatrix> node_q_cov;
  // joint covariance of (Q_{L,1}, ..., Q_{L,M}), M·m x M·m
  SymMatrix q_joint = SymMatrix::Zero(1);

  double lambda_min_eig = 0.0;        // min over nodes of λ_min(Λ)
  double h_sum_residual = 0.0;        // max ‖H_odd + H_even − I‖
  double h_lambda_residual = 0.0;     // max ‖(H_o,H_e) Λ (H_o,H_e)ᵀ‖
  double block_inverse_residual = 0.0;  // max ‖(I,I)Γ⁻¹(I,I)ᵀ − Σ̃_self⁻¹‖
  double q_cov_residual = 0.0;        // max ‖accumulated cov(Q) − Σ̃‖

  const SymMatrix& lambda_at(TreeIndex n) const {
    return lambdas[static_cast<std::size_t>(node_offset(n))];
  }
  const SymMatrix& gamma_at(TreeIndex n) const {
    return gammas[static_cast<std::size_t>(node_offset(n))];
  }
  const std::pair<Eigen::MatrixXd, Eigen::MatrixXd>& h_at(TreeIndex n) const {
    return h_blocks[static_cast<std::size_t>(node_offset(n))];
  }
  const SymMatrix& q_cov_at(TreeIndex n) const {
    return node_q_cov[static_cast<std::size_t>(node_offset(n))];
  }
  // the test-channel parameter Θ at an internal node, read back from Γ
  Eigen::MatrixXd theta_at(TreeIndex n) const {
    return -gamma_at(n).mat().block(0, m, m, m);
  }
};

struct DistortionEntry {
  TreeIndex node;
  SymMatrix achieved = SymMatrix::Zero(1);  // closed form (Σ_X⁻¹ + Σ̃⁻¹)⁻¹
  double mmse_agreement = 0;  // ‖closed form − direct MMSE from q_joint‖
  double violation = 0;       // max(0, −λ_min(D − achieved))
  bool satisfied = false;
};

struct DistortionReport {
  std::vector<DistortionEntry> entries;
  double max_agreement_residual = 0.0;
  double max_violation = 0.0;
  bool all_satisfied = false;
};

struct McNodeDeviation {
  TreeIndex node;
  double value = 0.0;
};

struct McReport {
  std::int64_t n_samples = 0;
  std::uint64_t seed = 0;
  double u_cov_dev = 0.0;  // ‖empirical cov(U) − (Σ_X tiles + q_joint)‖
  std::vector<McNodeDeviation> cross_dev;       // internal nodes, eq. of
                                                // orthogonality E[(X̂+Q_o)(X̂+Q_e)ᵀ]=0
  std::vector<McNodeDeviation> distortion_dev;  // all nodes, empirical MMSE
                                                // error vs closed form
  double max_cross_dev = 0.0;
  double max_distortion_dev = 0.0;
  double max_deviation = 0.0;
};

namespace detail {

inline void require_multiplier_shape(const ProblemInstance& inst,
                                     const MultiplierSet& ms) {
  if (ms.L != inst.L ||
      ms.ms.size() != static_cast<std::size_t>(node_count(inst.L))) {
    throw error(errc::dimension_mismatch,
                "multiplier set does not match the instance tree");
  }
  for (const auto& m : ms.ms) {
    if (m.dim() != inst.m) {
      throw error(errc::dimension_mismatch,
                  "multiplier dimension does not match the source");
    }
  }
}

inline double max_abs_mat(const Eigen::MatrixXd& a) {
  return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff();
}

}  // namespace detail

// Σ̃ per node from an optimizer/multiplier pair.
inline EnhancedSigmas enhance(const ProblemInstance& inst,
                              const ThetaAssignment& th,
                              const MultiplierSet& ms,
                              const Tolerance& tol = {}) {
  detail::require_valid_instance(inst);
  detail::require_theta_shape(inst, th);
  detail::require_multiplier_shape(inst, ms);
  const SigmaSlack slack = sigma_from_distortion(inst, tol);

  EnhancedSigmas out;
  out.L = inst.L;
  out.sig_tilde.reserve(static_cast<std::size_t>(node_count(inst.L)));
  for (int k = 1; k <= inst.L; ++k) {
    for (int i = 1; i <= level_width(k); ++i) {
      const TreeIndex n{k, i};
      const SymMatrix& base = (k < inst.L) ? th.at(n) : inst.sigma_x;
      try {
        const SymMatrix inner = inverse(base + slack.at(n)) + ms.at(n);
        out.sig_tilde.push_back(SymMatrix(inverse(inner).mat() - base.mat()));
      } catch (const error&) {
        throw error(errc::singular_enhancement,
                    "enhancement inverse failed at node " + to_string(n));
      }
    }
  }
  return out;
}

// Residuals of every identity the enhanced covariances satisfy at a
// certified optimum. Residuals are data: nothing throws on a violation.
inline EnhancementReport verify_enhancement(const ProblemInstance& inst,
                                            const ThetaAssignment& th,
                                            const MultiplierSet& ms,
                                            const EnhancedSigmas& es,
                                            const Tolerance& tol = {}) {
  detail::require_valid_instance(inst);
  detail::require_theta_shape(inst, th);
  detail::require_multiplier_shape(inst, ms);
  if (es.L != inst.L ||
      es.sig_tilde.size() != static_cast<std::size_t>(node_count(inst.L))) {
    throw error(errc::dimension_mismatch,
                "enhanced covariances do not match the instance tree");
  }
  const SigmaSlack slack = sigma_from_distortion(inst, tol);
  constexpr double kInf = std::numeric_limits<double>::infinity();

  EnhancementReport rep;
  auto push = [&rep](std::string name, double value) {
    rep.entries.push_back({std::move(name), value});
    rep.max_residual = std::max(rep.max_residual, value);
  };
  auto inv_or_fail = [](const SymMatrix& a) -> std::optional<SymMatrix> {
    try {
      return inverse(a);
    } catch (const error&) {
      return std::nullopt;
    }
  };

  const TreeIndex root{1, 1};
  // Σ̃_{1,1} ≻ 0 and the root exchange identity
  // Σ̃⁻¹(Θ+Σ̃) = Σ⁻¹(Θ+Σ).
  push("root_positive(1,1)", std::max(0.0, -min_eigenvalue(es.at(root))));
  {
    const auto st_inv = inv_or_fail(es.at(root));
    const auto s_inv = inv_or_fail(slack.at(root));
    if (st_inv && s_inv) {
      const Eigen::MatrixXd lhs =
          st_inv->mat() * (th.at(root) + es.at(root)).mat();
      const Eigen::MatrixXd rhs =
          s_inv->mat() * (th.at(root) + slack.at(root)).mat();
      push("root_ratio(1,1)", detail::max_abs_mat(lhs - rhs));
    } else {
      push("root_ratio(1,1)", kInf);
    }
  }

  for (int k = 1; k <= inst.L - 1; ++k) {
    for (int i = 1; i <= level_width(k); ++i) {
      const TreeIndex n{k, i};
      const TreeIndex cs[2] = {left_child(n), right_child(n)};
      const char* side[2] = {"odd", "even"};
      const SymMatrix& theta = th.at(n);

      // (Θ+Σ̃_child)⁻¹ = (Θ+Σ_child)⁻¹ + M_child, and the parent split
      // (Θ+Σ̃_odd)⁻¹ + (Θ+Σ̃_even)⁻¹ = (Θ+Σ̃_self)⁻¹.
      std::optional<SymMatrix> child_inv[2];
      for (int c = 0; c < 2; ++c) {
        child_inv[c] = inv_or_fail(theta + es.at(cs[c]));
        const auto plain_inv = inv_or_fail(theta + slack.at(cs[c]));
        if (child_inv[c] && plain_inv) {
          push("enh_" + std::string(side[c]) + "_inverse" + to_string(n),
               detail::max_abs_mat(child_inv[c]->mat() - plain_inv->mat() -
                                   ms.at(cs[c]).mat()));
        } else {
          push("enh_" + std::string(side[c]) + "_inverse" + to_string(n),
               kInf);
        }
      }
      const auto self_inv = inv_or_fail(theta + es.at(n));
      if (child_inv[0] && child_inv[1] && self_inv) {
        push("parent_split" + to_string(n),
             detail::max_abs_mat(child_inv[0]->mat() + child_inv[1]->mat() -
                                 self_inv->mat()));
      } else {
        push("parent_split" + to_string(n), kInf);
      }

      // strict ordering Σ̃_child ≻ Σ̃_self (reported as PSD violation)
      double order = 0.0;
      for (const auto& c : cs) {
        order = std::max(order, -min_eigenvalue(es.at(c) - es.at(n)));
      }
      push("ordering_chain" + to_string(n), std::max(0.0, order));

      // exchange identities along edges and at the top of the chain:
      // (Θ_parent+Σ̃_c)⁻¹(B+Σ̃_c) = (Θ_parent+Σ_c)⁻¹(B+Σ_c) with B the
      // child's own test-channel parameter (Θ_c internally, Σ_X at leaves)
      const bool leaf_level = (k == inst.L - 1);
      for (int c = 0; c < 2; ++c) {
        const SymMatrix& upper = leaf_level ? inst.sigma_x : th.at(cs[c]);
        const auto plain_inv = inv_or_fail(theta + slack.at(cs[c]));
        const std::string name = (leaf_level ? "leaf_ratio_" : "edge_ratio_") +
                                 std::string(side[c]) + to_string(n);
        if (child_inv[c] && plain_inv) {
          const Eigen::MatrixXd lhs =
              child_inv[c]->mat() * (upper + es.at(cs[c])).mat();
          const Eigen::MatrixXd rhs =
              plain_inv->mat() * (upper + slack.at(cs[c])).mat();
          push(name, detail::max_abs_mat(lhs - rhs));
        } else {
          push(name, kInf);
        }
      }
    }
  }
  return rep;
}

// Sum rate evaluated on the enhanced covariances (same chain shape as the
// slack form of the objective, with Σ̃ in place of Σ). At a certified
// optimum this equals the objective value — that equality is the content of
// the construction and is tested, not assumed.
inline double sum_rate_enhanced(const ProblemInstance& inst,
                                const ThetaAssignment& th,
                                const EnhancedSigmas& es,
                                const Tolerance& tol = {}) {
  detail::require_valid_instance(inst);
  detail::require_theta_shape(inst, th);
  if (es.L != inst.L ||
      es.sig_tilde.size() != static_cast<std::size_t>(node_count(inst.L))) {
    throw error(errc::dimension_mismatch,
                "enhanced covariances do not match the instance tree");
  }
  (void)tol;
  auto term = [](const SymMatrix& a, TreeIndex where) -> double {
    try {
      return logdet(a);
    } catch (const error&) {
      throw error(errc::singular_term, "determinant argument at node " +
                                           to_string(where) +
                                           " is not positive definite");
    }
  };

  const TreeIndex root{1, 1};
  double total = 0.5 * (term(inst.sigma_x + es.at(root), root) -
                        term(es.at(root), root));
  for (int k = 1; k <= inst.L - 1; ++k) {
    for (int i = 1; i <= level_width(k); ++i) {
      const TreeIndex n{k, i};
      const SymMatrix& theta = th.at(n);
      total += 0.5 * (term(theta + es.at(n), n) -
                      term(inst.sigma_x + es.at(n), n));
      for (const TreeIndex c : {left_child(n), right_child(n)}) {
        total += 0.5 * (term(inst.sigma_x + es.at(c), c) -
                        term(theta + es.at(c), c));
      }
    }
  }
  return total;
}

// Λ, Γ and the combining matrices H per internal node. With strict=true a
// Λ that fails PSD beyond tolerance throws (it signals an uncertified
// optimizer); with strict=false it is only recorded in lambda_min_eig so a
// caller can diagnose near-optimal iterates.
inline SchemeConstruction build_lambda_gamma(const ThetaAssignment& th,
                                             const EnhancedSigmas& es,
                                             const Tolerance& tol = {},
                                             bool strict = true) {
  if (th.L != es.L || th.thetas.empty() || es.sig_tilde.empty()) {
    throw error(errc::dimension_mismatch,
                "optimizer and enhanced covariances disagree on tree shape");
  }
  const int L = es.L;
  const int m = es.sig_tilde.front().dim();

  SchemeConstruction sc;
  sc.L = L;
  sc.m = m;
  const int n_internal = node_count(L - 1);
  sc.lambdas.reserve(static_cast<std::size_t>(n_internal));
  sc.gammas.reserve(static_cast<std::size_t>(n_internal));
  sc.h_blocks.reserve(static_cast<std::size_t>(n_internal));
  sc.lambda_min_eig = std::numeric_limits<double>::infinity();

  for (int k = 1; k <= L - 1; ++k) {
    for (int i = 1; i <= level_width(k); ++i) {
      const TreeIndex n{k, i};
      const Eigen::MatrixXd& self = es.at(n).mat();
      const Eigen::MatrixXd& odd = es.at(left_child(n)).mat();
      const Eigen::MatrixXd& even = es.at(right_child(n)).mat();
      const Eigen::MatrixXd& theta = th.at(n).mat();

      Eigen::MatrixXd lam(2 * m, 2 * m);
      lam.topLeftCorner(m, m) = odd - self;
      lam.topRightCorner(m, m) = -(theta + self);
      lam.bottomLeftCorner(m, m) = -(theta + self);
      lam.bottomRightCorner(m, m) = even - self;
      const SymMatrix lam_s(std::move(lam));
      const double lmin = min_eigenvalue(lam_s);
      sc.lambda_min_eig = std::min(sc.lambda_min_eig, lmin);
      if (strict && lmin < -psd_threshold(lam_s, tol)) {
        throw error(errc::lambda_not_psd,
                    "noise-pair covariance at node " + to_string(n) +
                        " has eigenvalue " + std::to_string(lmin));
      }

      Eigen::MatrixXd gam(2 * m, 2 * m);
      gam.topLeftCorner(m, m) = odd;
      gam.topRightCorner(m, m) = -theta;
      gam.bottomLeftCorner(m, m) = -theta;
      gam.bottomRightCorner(m, m) = even;
      const SymMatrix gam_s(std::move(gam));
      Eigen::MatrixXd gam_inv;
      try {
        gam_inv = inverse(gam_s).mat();
      } catch (const error&) {
        throw error(errc::gamma_singular,
                    "sibling noise covariance at node " + to_string(n) +
                        " is not positive definite");
      }

      // H = (Σ̃_self, Σ̃_self) Γ⁻¹, split into the two m×m combiners
      Eigen::MatrixXd pair(m, 2 * m);
      pair.leftCols(m) = self;
      pair.rightCols(m) = self;
      const Eigen::MatrixXd h = pair * gam_inv;
      const Eigen::MatrixXd h_odd = h.leftCols(m);
      const Eigen::MatrixXd h_even = h.rightCols(m);

      sc.h_sum_residual =
          std::max(sc.h_sum_residual,
                   detail::max_abs_mat(h_odd + h_even -
                                       Eigen::MatrixXd::Identity(m, m)));
      sc.h_lambda_residual = std::max(
          sc.h_lambda_residual,
          detail::max_abs_mat(h * lam_s.mat() * h.transpose()));
      // (I,I) Γ⁻¹ (I,I)ᵀ = Σ̃_self⁻¹ (the block-inverse identity behind the
      // parent split)
      const Eigen::MatrixXd folded = gam_inv.topLeftCorner(m, m) +
                                     gam_inv.topRightCorner(m, m) +
                                     gam_inv.bottomLeftCorner(m, m) +
                                     gam_inv.bottomRightCorner(m, m);
      try {
        sc.block_inverse_residual =
            std::max(sc.block_inverse_residual,
                     detail::max_abs_mat(folded - inverse(es.at(n)).mat()));
      } catch (const error&) {
        sc.block_inverse_residual = std::numeric_limits<double>::infinity();
      }

      sc.lambdas.push_back(lam_s);
      sc.gammas.push_back(gam_s);
      sc.h_blocks.emplace_back(h_odd, h_even);
    }
  }
  return sc;
}

// Accumulate the noise-tree covariances and assemble the joint leaf-noise
// covariance: diagonal blocks Σ̃_{L,j}, off-diagonal blocks −Θ at the least
// common ancestor.
inline SchemeConstruction build_q_tree(const EnhancedSigmas& es,
                                       SchemeConstruction sc) {
  const int L = sc.L;
  const int m = sc.m;
  if (es.L != L ||
      sc.lambdas.size() != static_cast<std::size_t>(node_count(L - 1))) {
    throw error(errc::dimension_mismatch,
                "construction does not match the enhanced covariances");
  }

  sc.node_q_cov.assign(static_cast<std::size_t>(node_count(L)),
                       SymMatrix::Zero(m));
  const TreeIndex root{1, 1};
  sc.node_q_cov[static_cast<std::size_t>(node_offset(root))] = es.at(root);
  sc.q_cov_residual = 0.0;
  // node_q_cov holds the construction's target cov(Q_{k,i}) = Σ̃; the
  // accumulated path sums must reproduce it, and their drift is the check.
  std::vector<Eigen::MatrixXd> accum(
      static_cast<std::size_t>(node_count(L)));
  accum[static_cast<std::size_t>(node_offset(root))] = es.at(root).mat();
  for (int k = 1; k <= L - 1; ++k) {
    for (int i = 1; i <= level_width(k); ++i) {
      const TreeIndex n{k, i};
      const Eigen::MatrixXd& lam = sc.lambda_at(n).mat();
      const Eigen::MatrixXd& parent_cov =
          accum[static_cast<std::size_t>(node_offset(n))];
      const TreeIndex cs[2] = {left_child(n), right_child(n)};
      for (int c = 0; c < 2; ++c) {
        const std::size_t off =
            static_cast<std::size_t>(node_offset(cs[c]));
        accum[off] = parent_cov + lam.block(c * m, c * m, m, m);
        sc.node_q_cov[off] = es.at(cs[c]);
        sc.q_cov_residual = std::max(
            sc.q_cov_residual,
            detail::max_abs_mat(accum[off] - es.at(cs[c]).mat()));
      }
    }
  }

  const int leaves = level_width(L);
  Eigen::MatrixXd joint(leaves * m, leaves * m);
  for (int a = 1; a <= leaves; ++a) {
    for (int b = 1; b <= leaves; ++b) {
      Eigen::MatrixXd block;
      if (a == b) {
        block = es.at({L, a}).mat();
      } else {
        block = -sc.theta_at(leaf_lca(a, b, L));
      }
      joint.block((a - 1) * m, (b - 1) * m, m, m) = block;
    }
  }
  sc.q_joint = SymMatrix(std::move(joint));
  return sc;
}

// Sum rate of the constructed scheme, computed two independent ways:
// (a) entropies, Σ_j h(U_j) − h(U_1..U_M | X) with the (2πe) constants
//     written out and the conditional entropy taken from the joint noise
//     covariance;
// (b) the telescoping mutual-information decomposition along the tree,
//     ½log|Σ_X+Q_root|/|Q_root| + Σ_nodes Σ_children ½log|Σ_X+Q_c|/|Θ+Q_c|
//     − ½log|Σ_X+Q_self|/|Θ+Q_self|.
// The two must agree to rounding; their difference is a structural check on
// q_joint, so disagreement throws. Returns (a).
inline double achievable_sum_rate(const ProblemInstance& inst,
                                  const SchemeConstruction& sc,
                                  const Tolerance& tol = {}) {
  detail::require_valid_instance(inst);
  if (sc.L != inst.L || sc.m != inst.m ||
      sc.node_q_cov.size() != static_cast<std::size_t>(node_count(inst.L)) ||
      sc.q_joint.dim() != level_width(inst.L) * inst.m) {
    throw error(errc::dimension_mismatch,
                "construction does not match the instance");
  }
  const int L = inst.L;
  const int m = inst.m;
  const int leaves = level_width(L);
  const double two_pi_e = 2.0 * M_PI * std::exp(1.0);

  double joint_logdet;
  try {
    joint_logdet = logdet(sc.q_joint);
  } catch (const error&) {
    throw error(errc::joint_cov_singular,
                "joint noise covariance is not positive definite");
  }
  double path_a = -0.5 * (leaves * m * std::log(two_pi_e) + joint_logdet);
  for (int j = 1; j <= leaves; ++j) {
    const SymMatrix u_cov = inst.sigma_x + sc.q_cov_at({L, j});
    path_a += 0.5 * (m * std::log(two_pi_e) + logdet(u_cov));
  }

  const TreeIndex root{1, 1};
  double path_b = 0.5 * (logdet(inst.sigma_x + sc.q_cov_at(root)) -
                         logdet(sc.q_cov_at(root)));
  for (int k = 1; k <= L - 1; ++k) {
    for (int i = 1; i <= level_width(k); ++i) {
      const TreeIndex n{k, i};
      const SymMatrix theta(sc.theta_at(n));
      path_b -= 0.5 * (logdet(inst.sigma_x + sc.q_cov_at(n)) -
                       logdet(theta + sc.q_cov_at(n)));
      for (const TreeIndex c : {left_child(n), right_child(n)}) {
        path_b += 0.5 * (logdet(inst.sigma_x + sc.q_cov_at(c)) -
                         logdet(theta + sc.q_cov_at(c)));
      }
    }
  }

  if (std::abs(path_a - path_b) > tol.eq_eps * (1.0 + std::abs(path_a))) {
    throw error(errc::invalid_argument,
                "entropy and telescoping rate paths disagree: " +
                    std::to_string(path_a) + " vs " + std::to_string(path_b));
  }
  return path_a;
}

// Achieved distortion per node, computed as the closed form
// (Σ_X⁻¹ + Σ̃⁻¹)⁻¹ and cross-checked against the direct MMSE error
// covariance from the joint law of (X, (U_j)_{j in the node's subset}).
inline DistortionReport distortion_check(const ProblemInstance& inst,
                                         const EnhancedSigmas& es,
                                         const SchemeConstruction& sc,
                                         const Tolerance& tol = {}) {
  detail::require_valid_instance(inst);
  if (es.L != inst.L || sc.L != inst.L || sc.m != inst.m ||
      sc.q_joint.dim() != level_width(inst.L) * inst.m) {
    throw error(errc::dimension_mismatch,
                "construction does not match the instance");
  }
  const int L = inst.L;
  const int m = inst.m;
  const Eigen::MatrixXd sigma_inv = inverse(inst.sigma_x).mat();
  constexpr double kInf = std::numeric_limits<double>::infinity();

  DistortionReport rep;
  rep.all_satisfied = true;
  for (int k = 1; k <= L; ++k) {
    for (int i = 1; i <= level_width(k); ++i) {
      const TreeIndex n{k, i};
      DistortionEntry entry;
      entry.node = n;
      try {
        entry.achieved =
            inverse(SymMatrix(sigma_inv + inverse(es.at(n)).mat()));
      } catch (const error&) {
        entry.achieved = inst.sigma_x;
        entry.mmse_agreement = kInf;
      }

      if (entry.mmse_agreement == 0.0) {
        // direct MMSE: the node's descriptions are a contiguous leaf block
        const std::vector<int> members = subset(n, L);
        const int s = static_cast<int>(members.size());
        const int lo = (members.front() - 1) * m;
        Eigen::MatrixXd u_cov =
            sc.q_joint.mat().block(lo, lo, s * m, s * m);
        Eigen::MatrixXd c(m, s * m);
        for (int j = 0; j < s; ++j) {
          u_cov.block(j * m, j * m, m, m) += inst.sigma_x.mat();
          for (int l = j + 1; l < s; ++l) {
            u_cov.block(j * m, l * m, m, m) += inst.sigma_x.mat();
            u_cov.block(l * m, j * m, m, m) += inst.sigma_x.mat();
          }
          c.block(0, j * m, m, m) = inst.sigma_x.mat();
        }
        Eigen::LLT<Eigen::MatrixXd> llt(u_cov);
        if (llt.info() != Eigen::Success) {
          entry.mmse_agreement = kInf;
        } else {
          const Eigen::MatrixXd mmse =
              inst.sigma_x.mat() - c * llt.solve(c.transpose());
          entry.mmse_agreement = detail::max_abs_mat(entry.achieved.mat() - mmse);
        }
      }

      const SymMatrix gap = inst.distortion(n) - entry.achieved;
      entry.violation = std::max(0.0, -min_eigenvalue(gap));
      entry.satisfied =
          entry.violation <= psd_threshold(inst.distortion(n), tol);
      rep.max_agreement_residual =
          std::max(rep.max_agreement_residual, entry.mmse_agreement);
      rep.max_violation = std::max(rep.max_violation, entry.violation);
      rep.all_satisfied = rep.all_satisfied && entry.satisfied;
      rep.entries.push_back(std::move(entry));
    }
  }
  return rep;
}

namespace detail {

// Deterministic standard normals: explicit 53-bit uniforms through
// Box-Muller, so results are identical across standard libraries.
class NormalSource {
 public:
  explicit NormalSource(std::uint64_t seed) : rng_(seed) {}

  double operator()() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // in (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  void fill(Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = (*this)();
  }

 private:
  double uniform() {
    return static_cast<double>(rng_() >> 11) * 0x1.0p-53;
  }

  std::mt19937_64 rng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace detail

// Simulates the constructed test channel and reports how far empirical
// moments sit from their exact targets. Deviations scale like 1/sqrt(n).
inline McReport monte_carlo_check(const ProblemInstance& inst,
                                  const SchemeConstruction& sc,
                                  std::int64_t n_samples, std::uint64_t seed,
                                  const Tolerance& tol = {}) {
  detail::require_valid_instance(inst);
  if (n_samples < 1) {
    throw error(errc::invalid_sample_count,
                "sample count must be at least 1");
  }
  if (sc.L != inst.L || sc.m != inst.m ||
      sc.node_q_cov.size() != static_cast<std::size_t>(node_count(inst.L)) ||
      sc.q_joint.dim() != level_width(inst.L) * inst.m) {
    throw error(errc::dimension_mismatch,
                "construction does not match the instance");
  }
  const int L = inst.L;
  const int m = inst.m;
  const int leaves = level_width(L);
  const int n_nodes = node_count(L);
  const int n_internal = node_count(L - 1);

  // factors of every covariance the sampler draws from
  const Eigen::MatrixXd f_x = psd_factor(inst.sigma_x, tol);
  const Eigen::MatrixXd f_root = psd_factor(sc.q_cov_at({1, 1}), tol);
  std::vector<Eigen::MatrixXd> f_pair;   // per internal node, 2m x 2m
  std::vector<Eigen::MatrixXd> f_theta;  // per internal node, m x m
  f_pair.reserve(static_cast<std::size_t>(n_internal));
  f_theta.reserve(static_cast<std::size_t>(n_internal));
  for (int k = 1; k <= L - 1; ++k) {
    for (int i = 1; i <= level_width(k); ++i) {
      const TreeIndex n{k, i};
      f_pair.push_back(psd_factor(sc.lambda_at(n), tol));
      f_theta.push_back(psd_factor(SymMatrix(sc.theta_at(n)), tol));
    }
  }

  // per-node MMSE combiners W = C Σ_U⁻¹ and exact error covariances
  std::vector<Eigen::MatrixXd> w_node(static_cast<std::size_t>(n_nodes));
  std::vector<Eigen::MatrixXd> err_exact(static_cast<std::size_t>(n_nodes));
  std::vector<int> node_lo(static_cast<std::size_t>(n_nodes));
  std::vector<int> node_span(static_cast<std::size_t>(n_nodes));
  for (int k = 1; k <= L; ++k) {
    for (int i = 1; i <= level_width(k); ++i) {
      const TreeIndex n{k, i};
      const std::size_t off = static_cast<std::size_t>(node_offset(n));
      const std::vector<int> members = subset(n, L);
      const int s = static_cast<int>(members.size());
      const int lo = (members.front() - 1) * m;
      node_lo[off] = lo;
      node_span[off] = s * m;
      Eigen::MatrixXd u_cov = sc.q_joint.mat().block(lo, lo, s * m, s * m);
      Eigen::MatrixXd c(m, s * m);
      for (int j = 0; j < s; ++j) {
        for (int l = 0; l < s; ++l) {
          u_cov.block(j * m, l * m, m, m) += inst.sigma_x.mat();
        }
        c.block(0, j * m, m, m) = inst.sigma_x.mat();
      }
      Eigen::LLT<Eigen::MatrixXd> llt(u_cov);
      if (llt.info() != Eigen::Success) {
        throw error(errc::joint_cov_singular,
                    "description covariance at node " + to_string(n) +
                        " is not positive definite");
      }
      w_node[off] = llt.solve(c.transpose()).transpose();
      err_exact[off] =
          inst.sigma_x.mat() - w_node[off] * c.transpose();
    }
  }

  detail::NormalSource normals(seed);
  Eigen::MatrixXd u_acc = Eigen::MatrixXd::Zero(leaves * m, leaves * m);
  std::vector<Eigen::MatrixXd> cross_acc(
      static_cast<std::size_t>(n_internal), Eigen::MatrixXd::Zero(m, m));
  std::vector<Eigen::MatrixXd> err_acc(static_cast<std::size_t>(n_nodes),
                                       Eigen::MatrixXd::Zero(m, m));

  Eigen::VectorXd zx(m), zr(m), zp(2 * m), zh(m);
  std::vector<Eigen::VectorXd> q(static_cast<std::size_t>(n_nodes));
  Eigen::VectorXd u(leaves * m);
  for (std::int64_t it = 0; it < n_samples; ++it) {
    normals.fill(zx);
    const Eigen::VectorXd x = f_x * zx;
    normals.fill(zr);
    q[0] = f_root * zr;
    for (int off = 0; off < n_internal; ++off) {
      normals.fill(zp);
      const Eigen::VectorXd pair = f_pair[static_cast<std::size_t>(off)] * zp;
      // children of the node at flat offset `off` sit at 2*off+1, 2*off+2
      q[static_cast<std::size_t>(2 * off + 1)] =
          q[static_cast<std::size_t>(off)] + pair.head(m);
      q[static_cast<std::size_t>(2 * off + 2)] =
          q[static_cast<std::size_t>(off)] + pair.tail(m);
      // orthogonality of the recombined halves, with a fresh surrogate for
      // the X component that lives inside the node
      normals.fill(zh);
      const Eigen::VectorXd xh = f_theta[static_cast<std::size_t>(off)] * zh;
      cross_acc[static_cast<std::size_t>(off)] +=
          (xh + q[static_cast<std::size_t>(2 * off + 1)]) *
          (xh + q[static_cast<std::size_t>(2 * off + 2)]).transpose();
    }
    const int leaf_base = node_count(L - 1);
    for (int j = 0; j < leaves; ++j) {
      u.segment(j * m, m) =
          x + q[static_cast<std::size_t>(leaf_base + j)];
    }
    u_acc += u * u.transpose();
    for (int off = 0; off < n_nodes; ++off) {
      const std::size_t o = static_cast<std::size_t>(off);
      const Eigen::VectorXd e =
          x - w_node[o] * u.segment(node_lo[o], node_span[o]);
      err_acc[o] += e * e.transpose();
    }
  }

  const double inv_n = 1.0 / static_cast<double>(n_samples);
  McReport rep;
  rep.n_samples = n_samples;
  rep.seed = seed;

  Eigen::MatrixXd u_target = sc.q_joint.mat();
  for (int a = 0; a < leaves; ++a) {
    for (int b = 0; b < leaves; ++b) {
      u_target.block(a * m, b * m, m, m) += inst.sigma_x.mat();
    }
  }
  rep.u_cov_dev = detail::max_abs_mat(u_acc * inv_n - u_target);

  for (int k = 1; k <= L - 1; ++k) {
    for (int i = 1; i <= level_width(k); ++i) {
      const TreeIndex n{k, i};
      const std::size_t off = static_cast<std::size_t>(node_offset(n));
      const double dev = detail::max_abs_mat(cross_acc[off] * inv_n);
      rep.cross_dev.push_back({n, dev});
      rep.max_cross_dev = std::max(rep.max_cross_dev, dev);
    }
  }
  for (int k = 1; k <= L; ++k) {
    for (int i = 1; i <= level_width(k); ++i) {
      const TreeIndex n{k, i};
      const std::size_t off = static_cast<std::size_t>(node_offset(n));
      const double dev =
          detail::max_abs_mat(err_acc[off] * inv_n - err_exact[off]);
      rep.distortion_dev.push_back({n, dev});
      rep.max_distortion_dev = std::max(rep.max_distortion_dev, dev);
    }
  }
  rep.max_deviation = std::max({rep.u_cov_dev, rep.max_cross_dev,
                                rep.max_distortion_dev});
  return rep;
}

}  // namespace mdtree
