#ifndef GRFOPT_NUMERICS_EIGEN_HPP
#define GRFOPT_NUMERICS_EIGEN_HPP

#include <cmath>
#include <cstddef>
#include <string>

#include <Eigen/Dense>

#include "grfopt/errors.hpp"

namespace grfopt {

/// Eigenpairs of a real symmetric matrix; values descending, vectors as orthonormal columns.
struct SymmetricEigensystem {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;

  Eigen::Index size() const { return values.size(); }
};

/// Largest |m_ij - m_ji| relative to the largest |m_ij|.
inline double asymmetry(const Eigen::MatrixXd& m) {
  const double scale = m.cwiseAbs().maxCoeff();
  if (scale == 0.0) return 0.0;
  return (m - m.transpose()).cwiseAbs().maxCoeff() / scale;
}

inline SymmetricEigensystem sym_eigendecompose(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) throw InvalidArgument("eigendecomposition needs a square matrix");
  if (!m.allFinite()) throw InvalidArgument("eigendecomposition input has non-finite entries");
  if (m.size() > 0 && asymmetry(m) > 1e-12) {
    throw InvalidArgument("eigendecomposition input is not symmetric (relative asymmetry " +
                          std::to_string(asymmetry(m)) + ")");
  }
  // Solve on the exactly symmetrized matrix so both triangles agree bit for bit.
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
  if (solver.info() != Eigen::Success) throw NumericalDomainError("symmetric eigensolver did not converge");
  const Eigen::Index n = m.rows();
  SymmetricEigensystem out{Eigen::VectorXd(n), Eigen::MatrixXd(n, n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    out.values(i) = solver.eigenvalues()(n - 1 - i);
    out.vectors.col(i) = solver.eigenvectors().col(n - 1 - i);
  }
  return out;
}

/// Default separation below which two eigenvalues count as colliding.
inline double default_gap_floor(const Eigen::VectorXd& values) {
  return values.size() == 0 ? 0.0 : 1e-10 * values.cwiseAbs().maxCoeff();
}

/**
 * Action of the Moore-Penrose pseudoinverse of (M - lambda_i I) on v, where
 * M = V diag(values) V^T:
 *
 *   sum_{j != i} (lambda_j - lambda_i)^{-1} phi_j (phi_j^T v)
 *
 * The component of v along phi_i is annihilated. Throws
 * DegenerateEigenvalueError if some lambda_j lies within gap_floor of lambda_i.
 */
inline Eigen::VectorXd spectral_pseudoinverse_apply(const Eigen::VectorXd& values, const Eigen::MatrixXd& vectors,
                                                    Eigen::Index i, const Eigen::VectorXd& v, double gap_floor) {
  if (i < 0 || i >= values.size()) throw InvalidArgument("mode index " + std::to_string(i) + " out of range");
  if (vectors.rows() != v.size() || vectors.cols() != values.size()) {
    throw InvalidArgument("pseudoinverse: dimension mismatch");
  }
  const Eigen::VectorXd projections = vectors.transpose() * v;
  Eigen::VectorXd coeffs = Eigen::VectorXd::Zero(values.size());
  for (Eigen::Index j = 0; j < values.size(); ++j) {
    if (j == i) continue;
    const double gap = values(j) - values(i);
    if (std::abs(gap) <= gap_floor) {
      throw DegenerateEigenvalueError(static_cast<std::size_t>(std::min(i, j)),
                                      static_cast<std::size_t>(std::max(i, j)), std::abs(gap));
    }
    coeffs(j) = projections(j) / gap;
  }
  return vectors * coeffs;
}

inline Eigen::VectorXd spectral_pseudoinverse_apply(const SymmetricEigensystem& eig, Eigen::Index i,
                                                    const Eigen::VectorXd& v) {
  return spectral_pseudoinverse_apply(eig.values, eig.vectors, i, v, default_gap_floor(eig.values));
}

} // namespace grfopt

#endif // GRFOPT_NUMERICS_EIGEN_HPP
