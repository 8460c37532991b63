#pragma once

// Deterministic random generators shared by the unit and acceptance suites.
// Everything is keyed by an explicit seed so failures reproduce exactly.

#include "mdtree/objective.hpp"
#include "mdtree/psd.hpp"
#include "mdtree/tree.hpp"

#include <algorithm>
#include <random>
#include <vector>

namespace testsupport {

inline Eigen::MatrixXd random_square(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd a(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) a(r, c) = g(rng);
  return a;
}

inline Eigen::MatrixXd random_orthogonal(std::mt19937_64& rng, int n) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(random_square(rng, n));
  Eigen::MatrixXd q = qr.householderQ();
  return q;
}

// Q diag(u) Q^T with u uniform in [lo, hi].
inline mdtree::SymMatrix random_pd(std::mt19937_64& rng, int n, double lo,
                                   double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::MatrixXd q = random_orthogonal(rng, n);
  Eigen::VectorXd ev(n);
  for (int t = 0; t < n; ++t) ev(t) = u(rng);
  return mdtree::SymMatrix(q * ev.asDiagonal() * q.transpose());
}

inline Eigen::MatrixXd matrix_sqrt(const mdtree::SymMatrix& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a.mat());
  return es.eigenvectors() *
         es.eigenvalues().cwiseSqrt().asDiagonal() *
         es.eigenvectors().transpose();
}

// sqrt(sigma) R sqrt(sigma) with R eigenvalues in [lo, hi] (0 < lo <= hi < 1
// keeps the result strictly between 0 and sigma).
inline mdtree::SymMatrix random_cov_between(std::mt19937_64& rng,
                                            const mdtree::SymMatrix& sigma,
                                            double lo, double hi) {
  const int n = static_cast<int>(sigma.dim());
  Eigen::MatrixXd s = matrix_sqrt(sigma);
  return mdtree::SymMatrix(s * random_pd(rng, n, lo, hi).mat() * s);
}

// Strictly interior instance: every node distortion strictly between 0 and
// sigma_x with comfortable margins.
inline mdtree::ProblemInstance random_interior_instance(std::uint64_t seed,
                                                        int m, int L) {
  std::mt19937_64 rng(seed);
  mdtree::ProblemInstance inst;
  inst.m = m;
  inst.L = L;
  inst.sigma_x = random_pd(rng, m, 0.5, 2.0);
  inst.distortions.clear();
  for (int t = 0; t < mdtree::node_count(L); ++t) {
    inst.distortions.push_back(random_cov_between(rng, inst.sigma_x, 0.15, 0.85));
  }
  return inst;
}

// Strictly feasible theta chain: in whitened coordinates B is a strictly
// increasing chain with 0 < B < I, so sqrt(sigma) B sqrt(sigma) satisfies the
// ordering against sigma with strict margins everywhere.
inline mdtree::ThetaAssignment random_strict_theta(std::uint64_t seed,
                                                   const mdtree::SymMatrix&
                                                       sigma_x,
                                                   int L) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.05, 0.4);
  const int n = static_cast<int>(sigma_x.dim());
  const Eigen::MatrixXd s = matrix_sqrt(sigma_x);
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);

  std::vector<Eigen::MatrixXd> b(
      static_cast<std::size_t>(mdtree::node_count(L - 1)));
  b[0] = random_pd(rng, n, 0.05, 0.3).mat();
  for (int k = 1; k <= L - 2; ++k) {
    for (int i = 1; i <= mdtree::level_width(k); ++i) {
      const mdtree::TreeIndex node{k, i};
      const Eigen::MatrixXd& parent = b[static_cast<std::size_t>(
          mdtree::node_offset(node))];
      for (const mdtree::TreeIndex c :
           {mdtree::left_child(node), mdtree::right_child(node)}) {
        b[static_cast<std::size_t>(mdtree::node_offset(c))] =
            parent + u(rng) * (eye - parent);
      }
    }
  }
  mdtree::ThetaAssignment th;
  th.L = L;
  th.thetas.reserve(b.size());
  for (const auto& blk : b) {
    th.thetas.emplace_back(s * blk * s);
  }
  return th;
}

// Random laminar constraint family over 1..M: recursive random partition,
// each block kept as a constraint with some probability.
inline mdtree::GeneralTreeSpec random_laminar_spec(std::uint64_t seed, int m,
                                                   int M) {
  std::mt19937_64 rng(seed);
  mdtree::GeneralTreeSpec spec;
  spec.m = m;
  spec.M = M;
  spec.sigma_x = random_pd(rng, m, 0.5, 2.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  auto recurse = [&](auto&& self, std::vector<int> block) -> void {
    if (u(rng) < 0.8 || static_cast<int>(block.size()) == M) {
      mdtree::GeneralConstraint c;
      c.subset = block;
      c.d = random_cov_between(rng, spec.sigma_x, 0.2, 0.8);
      spec.constraints.push_back(std::move(c));
    }
    if (block.size() <= 1) return;
    // split into 2 or 3 contiguous-in-order pieces of random sizes
    std::shuffle(block.begin(), block.end(), rng);
    const int parts = 2 + static_cast<int>(rng() % 2);
    std::vector<std::vector<int>> pieces(parts);
    for (std::size_t t = 0; t < block.size(); ++t) {
      pieces[t % parts].push_back(block[t]);
    }
    for (auto& p : pieces) {
      if (!p.empty() && u(rng) < 0.85) self(self, std::move(p));
    }
  };
  std::vector<int> all(M);
  for (int j = 0; j < M; ++j) all[j] = j + 1;
  recurse(recurse, all);
  return spec;
}

}  // namespace testsupport
