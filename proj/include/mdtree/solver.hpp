#pragma once

// Interior-point maximization of the sum-rate objective.
//
// The feasible set is the closed Loewner chain
//   0 ⪯ Θ_{1,1} ⪯ Θ_{2,i} ⪯ ... ⪯ Θ_{L-1,i} ⪯ Σ_X.
// We maximize F_μ(Θ) = objective_sigma(Θ) + μ·Σ logdet(slack) over the strict
// interior, shrinking μ geometrically. Within each μ stage the iterate is
// advanced by a modified Newton step in an orthonormal symmetric-matrix
// basis (the Hessian's eigenvalues are flipped to make a definite surrogate,
// so the step is always an ascent direction), with Armijo backtracking that
// also enforces strict feasibility. Plain first-order ascent cannot reach the
// required stationarity at the final μ — the barrier Hessian's condition
// number grows like 1/μ near active constraints — which is why the curvature
// information is needed.
//
// The barrier multiplier estimates M = 2μ·slack^{-1} converge to Lagrange
// multipliers normalized for log (not ½·log) objective terms, which is the
// convention the downstream enhancement step consumes. Stationarity in that
// normalization reads, per internal node with children slots odd/even,
//   (Θ+Σ_self)^{-1} + M_self = (Θ+Σ_odd)^{-1} + M_odd + (Θ+Σ_even)^{-1} + M_even
// where the slot of an even leaf holds the zero matrix and the slot of an odd
// leaf holds the multiplier of the top constraint Σ_X − Θ_{L-1,i} ⪰ 0.
//
// Terms of the form (Θ + Σ_S)^{-1} are evaluated without forming Σ_S, via
//   (Θ + P^{-1})^{-1} = Fᵀ-push-through with P = D^{-1} − Σ_X^{-1} = F·Fᵀ:
//   G = F (FᵀΘF + I)^{-1} Fᵀ,
// which stays well defined when D = Σ_X (P singular, Σ_S nonexistent). This
// makes gradient and KKT evaluation usable on boundary instances.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mdtree/objective.hpp"
#include "mdtree/psd.hpp"
#include "mdtree/tree.hpp"

namespace mdtree {

// Multipliers for every node slot k = 1..L. Even-leaf slots are identically
// zero; odd-leaf slots hold the top-constraint multipliers.
struct MultiplierSet {
  int L = 0;
  std::vector<SymMatrix> ms;

  const SymMatrix& at(TreeIndex n) const {
    return ms[static_cast<std::size_t>(node_offset(n))];
  }
  SymMatrix& at(TreeIndex n) {
    return ms[static_cast<std::size_t>(node_offset(n))];
  }
};

struct SolverConfig {
  double barrier_mu0 = 1.0;
  double barrier_decay = 0.2;
  int max_outer = 60;
  int max_inner = 80;
  double grad_tol = 1e-8;
  double slack_tol = 1e-7;
  std::vector<std::uint64_t> multistart_seeds = {0, 1, 2, 3, 4};
  // optional diagnostic sink; receives one line per barrier stage
  std::function<void(const std::string&)> trace = {};
};

struct KktEntry {
  std::string name;
  double value = 0.0;
};

struct KktReport {
  std::vector<KktEntry> entries;
  double stationarity_max = 0.0;
  double complementary_max = 0.0;
  double psd_violation_max = 0.0;
  double max_residual = 0.0;
};

struct SolveReport {
  ThetaAssignment theta_star;
  MultiplierSet multipliers;
  double value = 0.0;  // objective_theta at theta_star
  double mu_final = 0.0;
  KktReport kkt_residuals;
  std::vector<double> outer_values;  // objective after each barrier stage
  int iterations = 0;                // inner steps of the winning start
  int restarts = 0;                  // starts launched beyond the first
  bool converged = false;
};

namespace detail {

inline int svec_dim(int m) { return m * (m + 1) / 2; }

inline Eigen::VectorXd svec(const Eigen::MatrixXd& a) {
  const int m = static_cast<int>(a.rows());
  Eigen::VectorXd v(svec_dim(m));
  static const double rt2 = std::sqrt(2.0);
  int s = 0;
  for (int c = 0; c < m; ++c) {
    for (int r = 0; r <= c; ++r) {
      v(s++) = (r == c) ? a(r, c) : rt2 * a(r, c);
    }
  }
  return v;
}

inline Eigen::MatrixXd unsvec(const Eigen::VectorXd& v, int m) {
  Eigen::MatrixXd a(m, m);
  static const double inv_rt2 = 1.0 / std::sqrt(2.0);
  int s = 0;
  for (int c = 0; c < m; ++c) {
    for (int r = 0; r <= c; ++r) {
      const double x = (r == c) ? v(s) : inv_rt2 * v(s);
      a(r, c) = x;
      a(c, r) = x;
      ++s;
    }
  }
  return a;
}

// T(B)_{st} = tr(B E_s B E_t) over the orthonormal symmetric basis; PSD for
// PSD B. Columns are svec(B E_s B).
inline Eigen::MatrixXd trace_kernel(const Eigen::MatrixXd& b) {
  const int m = static_cast<int>(b.rows());
  const int p = svec_dim(m);
  static const double inv_rt2 = 1.0 / std::sqrt(2.0);
  Eigen::MatrixXd t(p, p);
  int s = 0;
  for (int c = 0; c < m; ++c) {
    for (int r = 0; r <= c; ++r) {
      Eigen::MatrixXd cs;
      if (r == c) {
        cs = b.col(r) * b.row(r);
      } else {
        cs = inv_rt2 * (b.col(r) * b.row(c) + b.col(c) * b.row(r));
      }
      t.col(s++) = svec(cs);
    }
  }
  return 0.5 * (t + t.transpose());
}

// Factor F with F·Fᵀ = D^{-1} − Σ_X^{-1}; then (Θ+Σ_S)^{-1} = F(FᵀΘF+I)^{-1}Fᵀ.
struct GradKernel {
  Eigen::MatrixXd f;
};

inline GradKernel make_kernel(const SymMatrix& sigma_x_inv,
                              const SymMatrix& d, const Tolerance& tol) {
  const SymMatrix p = inverse(d) - sigma_x_inv;
  return GradKernel{psd_factor(p, tol)};
}

inline Eigen::MatrixXd g_of(const GradKernel& k, const Eigen::MatrixXd& th) {
  const Eigen::Index m = k.f.rows();
  const Eigen::MatrixXd inner = k.f.transpose() * th * k.f +
                                Eigen::MatrixXd::Identity(m, m);
  Eigen::MatrixXd g = k.f * inner.llt().solve(k.f.transpose());
  return 0.5 * (g + g.transpose());
}

// One slack of the chain: the root PSD term, a parent-child edge, or a top
// (source minus deepest theta) term. `slot` is the multiplier slot it feeds.
struct SlackRef {
  enum Kind { root, edge, top } kind;
  TreeIndex slot;   // multiplier position (k = 1..L)
  TreeIndex lower;  // theta node appearing with +1 (root/edge) or the top node
  TreeIndex upper;  // parent theta node (edge only)
};

struct SolverContext {
  const ProblemInstance* inst = nullptr;
  Tolerance tol;
  int n_internal = 0;
  std::vector<GradKernel> kernels;  // per node offset, all k = 1..L
  std::vector<SlackRef> slacks;
  double theta_free_const = 0.0;  // theta-independent part of the objective
  bool interior = false;          // slack-form value pieces available
  std::vector<SymMatrix> sigma_s;  // only when interior
};

inline std::vector<SlackRef> enumerate_slacks(int L) {
  std::vector<SlackRef> out;
  out.push_back({SlackRef::root, {1, 1}, {1, 1}, {1, 1}});
  for (int k = 1; k <= L - 2; ++k) {
    for (int i = 1; i <= level_width(k); ++i) {
      const TreeIndex n{k, i};
      out.push_back({SlackRef::edge, left_child(n), left_child(n), n});
      out.push_back({SlackRef::edge, right_child(n), right_child(n), n});
    }
  }
  for (int i = 1; i <= level_width(L - 1); ++i) {
    out.push_back({SlackRef::top, {L, 2 * i - 1}, {L - 1, i}, {L - 1, i}});
  }
  return out;
}

inline SymMatrix slack_matrix(const SolverContext& ctx, const SlackRef& s,
                              const ThetaAssignment& th) {
  switch (s.kind) {
    case SlackRef::root:
      return th.at({1, 1});
    case SlackRef::edge:
      return th.at(s.lower) - th.at(s.upper);
    case SlackRef::top:
    default:
      return ctx.inst->sigma_x - th.at(s.lower);
  }
}

inline SolverContext make_context(const ProblemInstance& inst,
                                  const Tolerance& tol,
                                  bool need_interior) {
  SolverContext ctx;
  ctx.inst = &inst;
  ctx.tol = tol;
  ctx.n_internal = node_count(inst.L - 1);
  const SymMatrix sigma_inv = inverse(inst.sigma_x);
  ctx.kernels.reserve(inst.distortions.size());
  for (const auto& d : inst.distortions) {
    ctx.kernels.push_back(make_kernel(sigma_inv, d, tol));
  }
  ctx.slacks = enumerate_slacks(inst.L);
  ctx.interior = is_strictly_interior(inst, tol);
  if (need_interior && !ctx.interior) {
    throw error(errc::not_strictly_interior,
                "solver requires a strictly interior instance; shrink the "
                "boundary constraints first");
  }
  if (ctx.interior) {
    ctx.sigma_s = sigma_from_distortion(inst, tol).sigmas;
    const TreeIndex root{1, 1};
    double c = 0.5 * (logdet(inst.sigma_x + ctx.sigma_s[0]) -
                      logdet(ctx.sigma_s[0]));
    for (int k = 1; k <= inst.L - 1; ++k) {
      for (int i = 1; i <= level_width(k); ++i) {
        const TreeIndex n{k, i};
        auto s_at = [&](TreeIndex q) -> const SymMatrix& {
          return ctx.sigma_s[static_cast<std::size_t>(node_offset(q))];
        };
        c += 0.5 * (logdet(inst.sigma_x + s_at(left_child(n))) +
                    logdet(inst.sigma_x + s_at(right_child(n))) -
                    logdet(inst.sigma_x + s_at(n)));
      }
    }
    ctx.theta_free_const = c;
  }
  return ctx;
}

// Theta-dependent objective part plus barrier; nullopt when the trial point
// is not strictly inside (any Cholesky fails).
inline std::optional<double> barrier_merit(const SolverContext& ctx,
                                           const ThetaAssignment& th,
                                           double mu) {
  const ProblemInstance& inst = *ctx.inst;
  double total = 0.0;
  for (int k = 1; k <= inst.L - 1; ++k) {
    for (int i = 1; i <= level_width(k); ++i) {
      const TreeIndex n{k, i};
      auto s_at = [&](TreeIndex q) -> const SymMatrix& {
        return ctx.sigma_s[static_cast<std::size_t>(node_offset(q))];
      };
      auto self = logdet_cholesky(th.at(n) + s_at(n));
      auto odd = logdet_cholesky(th.at(n) + s_at(left_child(n)));
      auto even = logdet_cholesky(th.at(n) + s_at(right_child(n)));
      if (!self || !odd || !even) return std::nullopt;
      total += 0.5 * (*self - *odd - *even);
    }
  }
  for (const auto& s : ctx.slacks) {
    auto ld = logdet_cholesky(slack_matrix(ctx, s, th));
    if (!ld) return std::nullopt;
    total += mu * *ld;
  }
  return total;
}

// Gradient of [objective + mu * sum logdet(slack)] per internal node.
inline std::vector<Eigen::MatrixXd> gradient_matrices(
    const SolverContext& ctx, const ThetaAssignment& th, double mu) {
  const ProblemInstance& inst = *ctx.inst;
  std::vector<Eigen::MatrixXd> grad(
      static_cast<std::size_t>(ctx.n_internal),
      Eigen::MatrixXd::Zero(inst.m, inst.m));
  auto kern = [&](TreeIndex q) -> const GradKernel& {
    return ctx.kernels[static_cast<std::size_t>(node_offset(q))];
  };
  for (int k = 1; k <= inst.L - 1; ++k) {
    for (int i = 1; i <= level_width(k); ++i) {
      const TreeIndex n{k, i};
      const Eigen::MatrixXd& t = th.at(n).mat();
      grad[static_cast<std::size_t>(node_offset(n))] =
          0.5 * (g_of(kern(n), t) - g_of(kern(left_child(n)), t) -
                 g_of(kern(right_child(n)), t));
    }
  }
  if (mu != 0.0) {
    for (const auto& s : ctx.slacks) {
      const Eigen::MatrixXd inv = inverse(slack_matrix(ctx, s, th)).mat();
      switch (s.kind) {
        case SlackRef::root:
          grad[0] += mu * inv;
          break;
        case SlackRef::edge:
          grad[static_cast<std::size_t>(node_offset(s.lower))] += mu * inv;
          grad[static_cast<std::size_t>(node_offset(s.upper))] -= mu * inv;
          break;
        case SlackRef::top:
          grad[static_cast<std::size_t>(node_offset(s.lower))] -= mu * inv;
          break;
      }
    }
  }
  return grad;
}

inline double max_abs_entry(const std::vector<Eigen::MatrixXd>& mats) {
  double v = 0.0;
  for (const auto& m : mats) v = std::max(v, m.cwiseAbs().maxCoeff());
  return v;
}

// Hessian of the barrier merit in the orthonormal symmetric basis, assembled
// blockwise from tr(B E_s B E_t) kernels.
inline Eigen::MatrixXd hessian_matrix(const SolverContext& ctx,
                                      const ThetaAssignment& th, double mu) {
  const ProblemInstance& inst = *ctx.inst;
  const int p = svec_dim(inst.m);
  const int n = ctx.n_internal * p;
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
  auto kern = [&](TreeIndex q) -> const GradKernel& {
    return ctx.kernels[static_cast<std::size_t>(node_offset(q))];
  };
  auto block = [&](TreeIndex a) { return node_offset(a) * p; };
  for (int k = 1; k <= inst.L - 1; ++k) {
    for (int i = 1; i <= level_width(k); ++i) {
      const TreeIndex nidx{k, i};
      const Eigen::MatrixXd& t = th.at(nidx).mat();
      const int o = block(nidx);
      h.block(o, o, p, p) -= 0.5 * trace_kernel(g_of(kern(nidx), t));
      h.block(o, o, p, p) +=
          0.5 * trace_kernel(g_of(kern(left_child(nidx)), t));
      h.block(o, o, p, p) +=
          0.5 * trace_kernel(g_of(kern(right_child(nidx)), t));
    }
  }
  for (const auto& s : ctx.slacks) {
    const Eigen::MatrixXd inv = inverse(slack_matrix(ctx, s, th)).mat();
    const Eigen::MatrixXd t = trace_kernel(inv);
    switch (s.kind) {
      case SlackRef::root: {
        h.block(0, 0, p, p) -= mu * t;
        break;
      }
      case SlackRef::edge: {
        const int c = block(s.lower);
        const int q = block(s.upper);
        h.block(c, c, p, p) -= mu * t;
        h.block(q, q, p, p) -= mu * t;
        h.block(c, q, p, p) += mu * t;
        h.block(q, c, p, p) += mu * t;
        break;
      }
      case SlackRef::top: {
        const int c = block(s.lower);
        h.block(c, c, p, p) -= mu * t;
        break;
      }
    }
  }
  return h;
}

struct StartResult {
  ThetaAssignment theta;
  double objective = -std::numeric_limits<double>::infinity();
  std::vector<double> outer_values;
  int iterations = 0;
  bool reached_final_mu = false;
  bool converged = false;  // inner gradient tolerance met at the final μ
};

inline ThetaAssignment default_chain(const ProblemInstance& inst) {
  ThetaAssignment th;
  th.L = inst.L;
  th.thetas.reserve(static_cast<std::size_t>(node_count(inst.L - 1)));
  constexpr double delta = 1e-3;
  for (int k = 1; k <= inst.L - 1; ++k) {
    const double alpha = (1.0 - delta) * static_cast<double>(k) /
                         static_cast<double>(inst.L);
    for (int i = 1; i <= level_width(k); ++i) {
      th.thetas.emplace_back(alpha * inst.sigma_x.mat());
    }
  }
  return th;
}

inline bool strictly_feasible(const SolverContext& ctx,
                              const ThetaAssignment& th) {
  const double floor_eig = 1e-12 * (1.0 + max_abs(ctx.inst->sigma_x));
  for (const auto& s : ctx.slacks) {
    if (min_eigenvalue(slack_matrix(ctx, s, th)) <= floor_eig) return false;
  }
  return true;
}

inline ThetaAssignment start_point(const SolverContext& ctx,
                                   std::uint64_t seed) {
  const ProblemInstance& inst = *ctx.inst;
  ThetaAssignment base = default_chain(inst);
  if (seed == 0) return base;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inst.sigma_x.mat());
  const Eigen::MatrixXd half = es.eigenvectors() *
                               es.eigenvalues().cwiseSqrt().asDiagonal() *
                               es.eigenvectors().transpose();
  std::vector<Eigen::MatrixXd> bumps;
  bumps.reserve(base.thetas.size());
  for (std::size_t t = 0; t < base.thetas.size(); ++t) {
    Eigen::MatrixXd w(inst.m, inst.m);
    for (int r = 0; r < inst.m; ++r)
      for (int c = 0; c < inst.m; ++c) w(r, c) = g(rng);
    w = 0.5 * (w + w.transpose());
    const double norm = std::max(1.0, w.cwiseAbs().maxCoeff());
    bumps.push_back((0.25 / (inst.L * norm)) * (half * w * half));
  }
  // shrink the perturbation toward the default chain until strictly feasible
  for (double beta = 1.0; beta > 1e-12; beta *= 0.5) {
    ThetaAssignment trial = base;
    for (std::size_t t = 0; t < trial.thetas.size(); ++t) {
      trial.thetas[t] = SymMatrix(base.thetas[t].mat() + beta * bumps[t]);
    }
    if (strictly_feasible(ctx, trial)) return trial;
  }
  return base;
}

// Modified-Newton ascent for one multistart seed across the whole μ schedule.
inline StartResult run_single_start(const SolverContext& ctx,
                                    const SolverConfig& cfg,
                                    std::uint64_t seed) {
  const ProblemInstance& inst = *ctx.inst;
  const int p = svec_dim(inst.m);
  const int dim = ctx.n_internal * p;

  StartResult res;
  ThetaAssignment th = start_point(ctx, seed);
  auto merit0 = barrier_merit(ctx, th, cfg.barrier_mu0);
  if (!merit0) return res;  // start infeasible: give up on this seed

  const double mu_stop = cfg.slack_tol / 200.0;
  double mu = cfg.barrier_mu0;
  bool last_stage_converged = false;
  bool reached_final_mu = false;

  for (int outer = 0; outer < cfg.max_outer; ++outer) {
    const bool final_stage = mu <= mu_stop;
    const double stage_tol =
        std::max(cfg.grad_tol / 4.0, final_stage ? 0.0 : 1e-2 * mu);
    double merit = *barrier_merit(ctx, th, mu);
    last_stage_converged = false;
    int stage_iters = 0;
    double grad_norm = 0.0;

    for (int inner = 0; inner < cfg.max_inner; ++inner) {
      const auto grads = gradient_matrices(ctx, th, mu);
      grad_norm = max_abs_entry(grads);
      if (grad_norm <= stage_tol) {
        last_stage_converged = true;
        break;
      }
      Eigen::VectorXd g(dim);
      for (int t = 0; t < ctx.n_internal; ++t) {
        g.segment(t * p, p) = svec(grads[static_cast<std::size_t>(t)]);
      }
      const Eigen::MatrixXd h = hessian_matrix(ctx, th, mu);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
      const Eigen::VectorXd lam = es.eigenvalues();
      const double lam_scale = lam.cwiseAbs().maxCoeff();
      const double floor_ev = std::max(1e-14 * lam_scale, 1e-300);
      Eigen::VectorXd scale(dim);
      for (int t = 0; t < dim; ++t) {
        scale(t) = 1.0 / std::max(std::abs(lam(t)), floor_ev);
      }
      const Eigen::VectorXd d =
          es.eigenvectors() *
          (scale.asDiagonal() * (es.eigenvectors().transpose() * g));
      const double slope = g.dot(d);

      // Near an active slack the Hessian is O(1/mu) and the predicted
      // improvement g^2/(2|H|) drops below the floating-point resolution of
      // the merit itself, so plain Armijo rejects every step. Allow an
      // absolute machine-noise slack: real regressions are still rejected
      // and the bounded per-step loss (~1e-14) is far below all tolerances.
      const double noise = 32.0 * std::numeric_limits<double>::epsilon() *
                           (1.0 + std::abs(merit));
      bool stepped = false;
      double alpha = 1.0;
      for (int half = 0; half < 60; ++half, alpha *= 0.5) {
        ThetaAssignment trial = th;
        for (int t = 0; t < ctx.n_internal; ++t) {
          trial.thetas[static_cast<std::size_t>(t)] = SymMatrix(
              th.thetas[static_cast<std::size_t>(t)].mat() +
              alpha * unsvec(d.segment(t * p, p), inst.m));
        }
        const auto trial_merit = barrier_merit(ctx, trial, mu);
        if (trial_merit &&
            *trial_merit >= merit + 1e-4 * alpha * slope - noise) {
          th = std::move(trial);
          merit = *trial_merit;
          stepped = true;
          break;
        }
      }
      ++res.iterations;
      ++stage_iters;
      if (!stepped) break;  // line search exhausted; let μ shrink
    }

    res.outer_values.push_back(*barrier_merit(ctx, th, 0.0) +
                               ctx.theta_free_const);
    if (cfg.trace) {
      char line[160];
      std::snprintf(line, sizeof(line),
                    "seed=%llu stage=%d mu=%.3e inner=%d grad=%.3e tol=%.3e "
                    "ok=%d obj=%.12f",
                    static_cast<unsigned long long>(seed), outer, mu,
                    stage_iters, grad_norm, stage_tol,
                    last_stage_converged ? 1 : 0, res.outer_values.back());
      cfg.trace(line);
    }
    if (final_stage) {
      reached_final_mu = true;
      break;
    }
    mu *= cfg.barrier_decay;
    if (mu < mu_stop) mu = mu_stop;  // run the last stage exactly at the target
  }

  res.theta = th;
  res.objective = res.outer_values.empty()
                      ? -std::numeric_limits<double>::infinity()
                      : res.outer_values.back();
  res.reached_final_mu = reached_final_mu;
  res.converged = reached_final_mu && last_stage_converged;
  return res;
}

}  // namespace detail

// Final barrier weight of a run with this config (the μ at which multiplier
// estimates are taken).
inline double final_barrier_mu(const SolverConfig& cfg) {
  const double mu_stop = cfg.slack_tol / 200.0;
  double mu = cfg.barrier_mu0;
  for (int outer = 0; outer < cfg.max_outer && mu > mu_stop; ++outer) {
    mu *= cfg.barrier_decay;
    if (mu < mu_stop) mu = mu_stop;
  }
  return mu;
}

// Gradient of [objective_sigma + mu * sum logdet(slacks)] per internal node,
// as symmetric matrices at the flat internal-node offsets.
inline std::vector<SymMatrix> barrier_gradient(const ProblemInstance& inst,
                                               const ThetaAssignment& th,
                                               double mu,
                                               const Tolerance& tol = {}) {
  detail::require_valid_instance(inst);
  detail::require_theta_shape(inst, th);
  auto ctx = detail::make_context(inst, tol, /*need_interior=*/false);
  for (const auto& s : ctx.slacks) {
    if (min_eigenvalue(detail::slack_matrix(ctx, s, th)) <= 0.0) {
      throw error(errc::boundary_theta,
                  "gradient needs a strictly feasible theta chain");
    }
  }
  auto mats = detail::gradient_matrices(ctx, th, mu);
  std::vector<SymMatrix> out;
  out.reserve(mats.size());
  for (auto& m : mats) out.emplace_back(std::move(m));
  return out;
}

// Value of the barrier merit [objective_sigma + mu * sum logdet(slacks)].
inline double barrier_value(const ProblemInstance& inst,
                            const ThetaAssignment& th, double mu,
                            const Tolerance& tol = {}) {
  detail::require_theta_shape(inst, th);
  auto ctx = detail::make_context(inst, tol, /*need_interior=*/true);
  auto v = detail::barrier_merit(ctx, th, mu);
  if (!v) {
    throw error(errc::boundary_theta,
                "barrier value needs a strictly feasible theta chain");
  }
  return *v + ctx.theta_free_const;
}

// Barrier estimates M = 2μ·slack^{-1} mapped to their multiplier slots.
// Slacks with min eigenvalue above `slack_threshold` (default: scaled so that
// truncation cannot disturb stationarity beyond grad_tol/8 per slot) are
// reported as exact zeros. Slacks that are numerically singular cannot be
// inverted; those multipliers are recovered from the stationarity equations
// instead, deepest slots first.
inline MultiplierSet recover_multipliers(const ProblemInstance& inst,
                                         const ThetaAssignment& th,
                                         double mu_final,
                                         const Tolerance& tol = {},
                                         double grad_tol = 1e-8,
                                         double slack_threshold = -1.0) {
  detail::require_valid_instance(inst);
  detail::require_theta_shape(inst, th);
  if (!(mu_final >= 0.0) || !std::isfinite(mu_final)) {
    throw error(errc::invalid_argument, "mu_final must be non-negative");
  }
  if (slack_threshold < 0.0) {
    slack_threshold = 16.0 * mu_final / grad_tol;
  }
  auto ctx = detail::make_context(inst, tol, /*need_interior=*/false);

  MultiplierSet out;
  out.L = inst.L;
  out.ms.assign(static_cast<std::size_t>(node_count(inst.L)),
                SymMatrix::Zero(inst.m));

  std::vector<const detail::SlackRef*> deferred;
  for (const auto& s : ctx.slacks) {
    const SymMatrix slack = detail::slack_matrix(ctx, s, th);
    const double lo = min_eigenvalue(slack);
    const double singular_floor = 1e-12 * (1.0 + max_abs(slack));
    if (lo > slack_threshold) {
      continue;  // inactive: multiplier stays exactly zero
    }
    if (lo <= singular_floor) {
      deferred.push_back(&s);  // fully active: barrier estimate unusable
      continue;
    }
    out.at(s.slot) = SymMatrix(2.0 * mu_final * inverse(slack).mat());
  }

  // Stationarity fallback for numerically singular slacks. Deeper slots are
  // resolved first so each equation only references already-known values.
  std::sort(deferred.begin(), deferred.end(),
            [](const detail::SlackRef* a, const detail::SlackRef* b) {
              return a->slot.k > b->slot.k;
            });
  auto kern = [&](TreeIndex q) -> const detail::GradKernel& {
    return ctx.kernels[static_cast<std::size_t>(node_offset(q))];
  };
  auto slot_of = [&](TreeIndex node) -> TreeIndex {
    // multiplier slot paired with theta node `node` in its own equation
    return node;  // root and edge slots live at the node itself
  };
  for (const auto* s : deferred) {
    if (s->kind == detail::SlackRef::top) {
      // appears as the odd-child slot of the equation at (L-1, i)
      const TreeIndex pnode = s->upper;
      const Eigen::MatrixXd& t = th.at(pnode).mat();
      Eigen::MatrixXd m = detail::g_of(kern(pnode), t) +
                          out.at(slot_of(pnode)).mat() -
                          detail::g_of(kern(left_child(pnode)), t) -
                          detail::g_of(kern(right_child(pnode)), t);
      out.at(s->slot) = SymMatrix(m);
    } else {
      // root or edge slot: solve its own node's equation for M_self
      const TreeIndex n = s->slot;
      const Eigen::MatrixXd& t = th.at(n).mat();
      const TreeIndex odd = left_child(n);
      const TreeIndex even = right_child(n);
      Eigen::MatrixXd m = detail::g_of(kern(odd), t) + out.at(odd).mat() +
                          detail::g_of(kern(even), t) + out.at(even).mat() -
                          detail::g_of(kern(n), t);
      out.at(s->slot) = SymMatrix(m);
    }
  }
  return out;
}

// Residuals of the first-order optimality system at (th, ms): stationarity
// per internal node, complementary slackness per multiplier slot, and PSD
// violations of each multiplier.
inline KktReport kkt_residual(const ProblemInstance& inst,
                              const ThetaAssignment& th,
                              const MultiplierSet& ms,
                              const Tolerance& tol = {}) {
  detail::require_valid_instance(inst);
  detail::require_theta_shape(inst, th);
  if (ms.L != inst.L ||
      ms.ms.size() != static_cast<std::size_t>(node_count(inst.L))) {
    throw error(errc::dimension_mismatch,
                "multiplier set does not match the tree shape");
  }
  auto ctx = detail::make_context(inst, tol, /*need_interior=*/false);
  auto kern = [&](TreeIndex q) -> const detail::GradKernel& {
    return ctx.kernels[static_cast<std::size_t>(node_offset(q))];
  };
  KktReport rep;
  auto push = [&](std::string name, double v, double& group) {
    group = std::max(group, v);
    rep.max_residual = std::max(rep.max_residual, v);
    rep.entries.push_back({std::move(name), v});
  };

  for (int k = 1; k <= inst.L - 1; ++k) {
    for (int i = 1; i <= level_width(k); ++i) {
      const TreeIndex n{k, i};
      const TreeIndex odd = left_child(n);
      const TreeIndex even = right_child(n);
      const Eigen::MatrixXd& t = th.at(n).mat();
      const Eigen::MatrixXd r =
          detail::g_of(kern(n), t) + ms.at(n).mat() -
          detail::g_of(kern(odd), t) - ms.at(odd).mat() -
          detail::g_of(kern(even), t) - ms.at(even).mat();
      push("stationarity" + to_string(n), r.cwiseAbs().maxCoeff(),
           rep.stationarity_max);
    }
  }
  for (const auto& s : ctx.slacks) {
    const SymMatrix slack = detail::slack_matrix(ctx, s, th);
    const double v =
        (ms.at(s.slot).mat() * slack.mat()).cwiseAbs().maxCoeff();
    push("complementary" + to_string(s.slot), v, rep.complementary_max);
  }
  for (int k = 1; k <= inst.L; ++k) {
    for (int i = 1; i <= level_width(k); ++i) {
      const TreeIndex n{k, i};
      const double v = std::max(0.0, -min_eigenvalue(ms.at(n)));
      push("psd" + to_string(n), v, rep.psd_violation_max);
      if (k == inst.L && i % 2 == 0) {
        push("even_leaf_zero" + to_string(n), max_abs(ms.at(n)),
             rep.stationarity_max);
      }
    }
  }
  return rep;
}

// Barrier interior-point maximization with deterministic multistart.
inline SolveReport solve(const ProblemInstance& inst,
                         const SolverConfig& cfg = {},
                         const Tolerance& tol = {}) {
  detail::require_valid_instance(inst);
  if (!(cfg.barrier_mu0 > 0.0) || !(cfg.barrier_decay > 0.0) ||
      !(cfg.barrier_decay < 1.0) || cfg.max_outer < 1 || cfg.max_inner < 1 ||
      !(cfg.grad_tol > 0.0) || !(cfg.slack_tol > 0.0) ||
      cfg.multistart_seeds.empty()) {
    throw error(errc::invalid_argument, "solver configuration out of range");
  }
  auto ctx = detail::make_context(inst, tol, /*need_interior=*/true);

  std::optional<detail::StartResult> best;
  for (std::uint64_t seed : cfg.multistart_seeds) {
    detail::StartResult r = detail::run_single_start(ctx, cfg, seed);
    const bool better =
        !best.has_value() ||
        (r.converged && !best->converged) ||
        (r.converged == best->converged && r.objective > best->objective);
    if (better) best = std::move(r);
  }

  SolveReport rep;
  rep.restarts = static_cast<int>(cfg.multistart_seeds.size()) - 1;
  rep.mu_final = final_barrier_mu(cfg);
  bool reached_final = false;
  if (!best || best->outer_values.empty()) {
    // every start failed before producing an iterate; report the default
    // chain as a best effort
    rep.theta_star = detail::default_chain(inst);
  } else {
    rep.theta_star = best->theta;
    rep.outer_values = best->outer_values;
    rep.iterations = best->iterations;
    reached_final = best->reached_final_mu;
  }
  rep.multipliers = recover_multipliers(inst, rep.theta_star, rep.mu_final,
                                        tol, cfg.grad_tol);
  rep.kkt_residuals = kkt_residual(inst, rep.theta_star, rep.multipliers, tol);
  rep.value = objective_theta(inst, rep.theta_star, tol);
  // Convergence is certified on the recovered KKT system, not on the raw
  // inner-loop gradient: near an active top slack the barrier gradient is
  // quantized at machine precision (slack = Σ_X − Θ loses bits), while the
  // certificate below is what downstream construction actually consumes.
  rep.converged = reached_final &&
                  rep.kkt_residuals.stationarity_max <= cfg.grad_tol &&
                  rep.kkt_residuals.complementary_max <= cfg.slack_tol &&
                  rep.kkt_residuals.psd_violation_max <=
                      psd_threshold(inst.sigma_x, tol);
  return rep;
}

}  // namespace mdtree
