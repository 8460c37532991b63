#pragma once

// Dense symmetric matrices and positive-semidefinite cone utilities.
//
// Everything downstream manipulates covariance-like matrices, so the value
// type enforces symmetry on construction and all predicates are tolerance
// aware. Eigendecomposition is the canonical code path; Cholesky is used as
// a fast path where it cannot change the outcome.

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

namespace mdtree {

// Error codes carried by mdtree::error. These mirror the documented failure
// modes of the public operations.
enum class errc {
  dimension_mismatch,
  not_positive_definite,
  not_psd,
  not_a_tree,
  eps_too_large,
  infeasible_theta,
  singular_term,
  boundary_theta,
  singular_slack,
  singular_enhancement,
  lambda_not_psd,
  gamma_singular,
  joint_cov_singular,
  invalid_sample_count,
  unsupported_dimension,
  not_strictly_interior,
  invalid_noise_tree,
  invalid_argument,
};

inline const char* errc_name(errc c) {
  switch (c) {
    case errc::dimension_mismatch: return "dimension_mismatch";
    case errc::not_positive_definite: return "not_positive_definite";
    case errc::not_psd: return "not_psd";
    case errc::not_a_tree: return "not_a_tree";
    case errc::eps_too_large: return "eps_too_large";
    case errc::infeasible_theta: return "infeasible_theta";
    case errc::singular_term: return "singular_term";
    case errc::boundary_theta: return "boundary_theta";
    case errc::singular_slack: return "singular_slack";
    case errc::singular_enhancement: return "singular_enhancement";
    case errc::lambda_not_psd: return "lambda_not_psd";
    case errc::gamma_singular: return "gamma_singular";
    case errc::joint_cov_singular: return "joint_cov_singular";
    case errc::invalid_sample_count: return "invalid_sample_count";
    case errc::unsupported_dimension: return "unsupported_dimension";
    case errc::not_strictly_interior: return "not_strictly_interior";
    case errc::invalid_noise_tree: return "invalid_noise_tree";
    case errc::invalid_argument: return "invalid_argument";
  }
  return "unknown";
}

class error : public std::runtime_error {
 public:
  error(errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what),
        code_(code) {}

  errc code() const noexcept { return code_; }

 private:
  errc code_;
};

// Tolerance knobs shared by the numeric predicates.
//
// psd_eps is a relative eigenvalue tolerance: a matrix counts as PSD when its
// minimum eigenvalue is >= -psd_eps * (1 + max_abs_entry). eq_eps bounds
// acceptable discrepancies between quantities that agree exactly in exact
// arithmetic.
struct Tolerance {
  double psd_eps = 1e-9;
  double eq_eps = 1e-8;
};

// Symmetric matrix value type. The constructor symmetrizes its argument as
// (A + A^T)/2, so downstream code never has to worry about drift from
// accumulated round-off breaking symmetry.
class SymMatrix {
 public:
  explicit SymMatrix(Eigen::MatrixXd a) : m_(std::move(a)) {
    if (m_.rows() < 1 || m_.rows() != m_.cols()) {
      throw error(errc::dimension_mismatch,
                  "SymMatrix requires a square matrix of dimension >= 1, got " +
                      std::to_string(m_.rows()) + "x" +
                      std::to_string(m_.cols()));
    }
    m_ = ((m_ + m_.transpose()) / 2.0).eval();
  }

  static SymMatrix Identity(Eigen::Index dim) {
    return SymMatrix(Eigen::MatrixXd::Identity(dim, dim));
  }

  static SymMatrix Zero(Eigen::Index dim) {
    return SymMatrix(Eigen::MatrixXd::Zero(dim, dim));
  }

  Eigen::Index dim() const { return m_.rows(); }
  double operator()(Eigen::Index r, Eigen::Index c) const { return m_(r, c); }
  const Eigen::MatrixXd& mat() const { return m_; }

 private:
  Eigen::MatrixXd m_;
};

inline SymMatrix operator+(const SymMatrix& a, const SymMatrix& b) {
  return SymMatrix(a.mat() + b.mat());
}

inline SymMatrix operator-(const SymMatrix& a, const SymMatrix& b) {
  return SymMatrix(a.mat() - b.mat());
}

inline SymMatrix operator*(double s, const SymMatrix& a) {
  return SymMatrix(s * a.mat());
}

// Largest absolute entry; used to scale tolerances with the data.
inline double max_abs(const SymMatrix& a) {
  return a.mat().cwiseAbs().maxCoeff();
}

inline double min_eigenvalue(const SymMatrix& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a.mat(),
                                                    Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline double max_eigenvalue(const SymMatrix& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a.mat(),
                                                    Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

// Effective PSD eigenvalue threshold for a given matrix.
inline double psd_threshold(const SymMatrix& a, const Tolerance& tol = {}) {
  return tol.psd_eps * (1.0 + max_abs(a));
}

namespace detail {

// Canonical log-determinant: sum of logs of eigenvalues. Returns nullopt when
// any eigenvalue is <= 0.
inline std::optional<double> logdet_eigendecomposition(const SymMatrix& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a.mat(),
                                                    Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  if (ev.minCoeff() <= 0.0) return std::nullopt;
  double s = 0.0;
  for (Eigen::Index i = 0; i < ev.size(); ++i) s += std::log(ev(i));
  return s;
}

// Fast path: Cholesky factorization. Returns nullopt when the factorization
// does not complete, which forces the canonical path to decide.
inline std::optional<double> logdet_cholesky(const SymMatrix& a) {
  Eigen::LLT<Eigen::MatrixXd> llt(a.mat());
  if (llt.info() != Eigen::Success) return std::nullopt;
  const auto& L = llt.matrixLLT();
  double s = 0.0;
  for (Eigen::Index i = 0; i < L.rows(); ++i) {
    if (L(i, i) <= 0.0) return std::nullopt;
    s += std::log(L(i, i));
  }
  return 2.0 * s;
}

}  // namespace detail

// Natural log of the determinant of a positive definite matrix.
// Throws not_positive_definite when the minimum eigenvalue is <= 0.
inline double logdet(const SymMatrix& a) {
  if (auto v = detail::logdet_cholesky(a)) return *v;
  if (auto v = detail::logdet_eigendecomposition(a)) return *v;
  throw error(errc::not_positive_definite,
              "logdet requires a positive definite matrix (min eigenvalue " +
                  std::to_string(min_eigenvalue(a)) + ")");
}

// Log of the determinant of a general square matrix. Returns nullopt when the
// determinant is not strictly positive (or not finite).
inline std::optional<double> logdet_general(const Eigen::MatrixXd& a) {
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
  const Eigen::MatrixXd& u = lu.matrixLU();
  double s = 0.0;
  int sign = lu.permutationP().determinant() > 0 ? 1 : -1;
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    const double d = u(i, i);
    if (d == 0.0 || !std::isfinite(d)) return std::nullopt;
    if (d < 0.0) sign = -sign;
    s += std::log(std::abs(d));
  }
  if (sign <= 0) return std::nullopt;
  return s;
}

// Inverse of a positive definite matrix, symmetrized.
// Throws not_positive_definite for non-PD input.
inline SymMatrix inverse(const SymMatrix& a) {
  Eigen::LLT<Eigen::MatrixXd> llt(a.mat());
  if (llt.info() == Eigen::Success) {
    Eigen::MatrixXd inv =
        llt.solve(Eigen::MatrixXd::Identity(a.dim(), a.dim()));
    return SymMatrix(std::move(inv));
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a.mat());
  const auto& ev = es.eigenvalues();
  if (ev.minCoeff() <= 0.0) {
    throw error(errc::not_positive_definite,
                "inverse requires a positive definite matrix (min eigenvalue " +
                    std::to_string(ev.minCoeff()) + ")");
  }
  Eigen::MatrixXd inv = es.eigenvectors() *
                        ev.cwiseInverse().asDiagonal() *
                        es.eigenvectors().transpose();
  return SymMatrix(std::move(inv));
}

// PSD test with a relative eigenvalue tolerance.
inline bool is_psd(const SymMatrix& a, const Tolerance& tol = {}) {
  return min_eigenvalue(a) >= -psd_threshold(a, tol);
}

// Loewner order test: a <= b iff b - a is PSD (within tolerance).
// Throws dimension_mismatch when the operands have different sizes.
inline bool is_loewner_leq(const SymMatrix& a, const SymMatrix& b,
                           const Tolerance& tol = {}) {
  if (a.dim() != b.dim()) {
    throw error(errc::dimension_mismatch,
                "is_loewner_leq: operands have dimensions " +
                    std::to_string(a.dim()) + " and " + std::to_string(b.dim()));
  }
  return is_psd(b - a, tol);
}

// Factor F with F * F^T ~= a for PSD input. Eigenvalues in
// [-psd_threshold, 0) are clipped to zero; anything more negative throws
// not_psd. The factor is square (columns for null directions are zero).
inline Eigen::MatrixXd psd_factor(const SymMatrix& a,
                                  const Tolerance& tol = {}) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a.mat());
  Eigen::VectorXd ev = es.eigenvalues();
  const double thr = psd_threshold(a, tol);
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < -thr) {
      throw error(errc::not_psd,
                  "psd_factor: eigenvalue " + std::to_string(ev(i)) +
                      " below tolerance -" + std::to_string(thr));
    }
    ev(i) = ev(i) > 0.0 ? std::sqrt(ev(i)) : 0.0;
  }
  return es.eigenvectors() * ev.asDiagonal();
}

}  // namespace mdtree
