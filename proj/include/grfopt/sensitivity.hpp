#ifndef GRFOPT_SENSITIVITY_HPP
#define GRFOPT_SENSITIVITY_HPP

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "grfopt/errors.hpp"
#include "grfopt/kl.hpp"
#include "grfopt/numerics/bspline.hpp"
#include "grfopt/numerics/eigen.hpp"
#include "grfopt/numerics/summation.hpp"
#include "grfopt/randomfield.hpp"

namespace grfopt {

/// First-order change of retained eigenpairs along one parameter direction.
struct EigenDerivatives {
  Eigen::VectorXd dlambda; ///< one entry per retained mode
  Eigen::MatrixXd dmodes;  ///< one column per retained mode, same space as the modes
};

enum class SensitivityMethod { scaled, eigen };

inline std::string_view to_string(SensitivityMethod m) { return m == SensitivityMethod::scaled ? "scaled" : "eigen"; }

inline SensitivityMethod sensitivity_method_from_string(std::string_view name) {
  if (name == "scaled") return SensitivityMethod::scaled;
  if (name == "eigen") return SensitivityMethod::eigen;
  throw InvalidArgument("unknown sensitivity method '" + std::string(name) + "' (expected eigen or scaled)");
}

enum class PathSensitivityKind { eigen_perturbation, scaled_field, mean_shift };

/// d e_n / d p for every sample n (rows) on the grid (columns).
struct PathSensitivities {
  Eigen::MatrixXd dpaths;
  std::size_t parameter_id = 0;
  PathSensitivityKind method = PathSensitivityKind::eigen_perturbation;
};

/**
 * Derivatives of the leading `count` eigenpairs of a symmetric matrix A
 * along dA:
 *
 *   dlambda_i = v_i^T dA v_i
 *   dv_i      = -(A - lambda_i I)^+ dA v_i
 *
 * dv_i is the derivative of the unit-norm branch and is orthogonal to v_i.
 * Throws DegenerateEigenvalueError when a retained eigenvalue is not simple.
 */
inline EigenDerivatives eigen_derivatives(const SymmetricEigensystem& eig, Eigen::Index count, const Eigen::MatrixXd& dA,
                                          double gap_floor) {
  if (dA.rows() != eig.size() || dA.cols() != eig.size()) throw InvalidArgument("eigen_derivatives: dimension mismatch");
  if (count < 0 || count > eig.size()) throw InvalidArgument("eigen_derivatives: mode count out of range");
  EigenDerivatives out{Eigen::VectorXd(count), Eigen::MatrixXd(eig.size(), count)};
  for (Eigen::Index i = 0; i < count; ++i) {
    const Eigen::VectorXd dav = dA * eig.vectors.col(i);
    out.dlambda(i) = eig.vectors.col(i).dot(dav);
    out.dmodes.col(i) = -spectral_pseudoinverse_apply(eig.values, eig.vectors, i, dav, gap_floor);
  }
  return out;
}

inline EigenDerivatives eigen_derivatives(const SymmetricEigensystem& eig, const Eigen::MatrixXd& dA) {
  return eigen_derivatives(eig, eig.size(), dA, default_gap_floor(eig.values));
}

/**
 * Derivatives of the retained K-L eigenpairs for a covariance change dC.
 *
 * Works in the weight-symmetrized form: dA = W^{1/2} dC W^{1/2}, and the
 * mode derivatives are mapped back with W^{-1/2}. On an equal-weight grid
 * this is the unweighted perturbation formula up to a constant factor.
 */
inline EigenDerivatives eigen_derivatives(const CovarianceMatrix& cov, const KLBasis& basis, const Eigen::MatrixXd& dC) {
  const auto n = static_cast<Eigen::Index>(basis.grid().size());
  if (cov.entries.rows() != n || dC.rows() != n || dC.cols() != n) {
    throw InvalidArgument("eigen_derivatives: covariance, basis and dC disagree in size");
  }
  const Eigen::VectorXd& sw = basis.sqrt_weights();
  const Eigen::MatrixXd dA = sw.asDiagonal() * dC * sw.asDiagonal();
  const auto& spectrum = basis.symmetric_spectrum();
  EigenDerivatives out =
      eigen_derivatives(spectrum, basis.truncation_level(), dA, default_gap_floor(spectrum.values));
  out.dmodes = sw.cwiseInverse().asDiagonal() * out.dmodes;
  return out;
}

/// Multiplier (+1 or -1) per column that brings `modes` closest to `reference`; ties keep +1.
inline Eigen::VectorXd alignment_signs(const Eigen::MatrixXd& reference, const Eigen::MatrixXd& modes) {
  if (reference.rows() != modes.rows() || reference.cols() != modes.cols()) {
    throw InvalidArgument("align_signs: dimension mismatch");
  }
  Eigen::VectorXd signs(modes.cols());
  for (Eigen::Index i = 0; i < modes.cols(); ++i) {
    const double minus = (modes.col(i) - reference.col(i)).norm();
    const double plus = (modes.col(i) + reference.col(i)).norm();
    signs(i) = plus < minus ? -1.0 : 1.0;
  }
  return signs;
}

inline Eigen::MatrixXd align_signs(const Eigen::MatrixXd& reference, const Eigen::MatrixXd& modes) {
  return modes * alignment_signs(reference, modes).asDiagonal();
}

/// Mean-parameter path derivative: B_k on the grid, the same for every sample.
inline Eigen::VectorXd mean_path_derivative(const SplineBasis& mean_basis, std::size_t k, const Grid1D& grid) {
  if (k >= mean_basis.size()) throw InvalidArgument("mean parameter index " + std::to_string(k) + " out of range");
  Eigen::VectorXd row(static_cast<Eigen::Index>(grid.size()));
  for (std::size_t j = 0; j < grid.size(); ++j) row(static_cast<Eigen::Index>(j)) = mean_basis.evaluate(k, grid.points()[j]);
  return row;
}

inline PathSensitivities mean_path_sensitivity(const SplineBasis& mean_basis, std::size_t k, const Grid1D& grid,
                                               Eigen::Index n_samples) {
  const Eigen::VectorXd row = mean_path_derivative(mean_basis, k, grid);
  return {row.transpose().replicate(n_samples, 1), k, PathSensitivityKind::mean_shift};
}

/**
 * Columns D_i = phi_i dlambda_i / (2 sqrt(lambda_i)) + sqrt(lambda_i) dphi_i,
 * so that d e_n / d p = D xi_n with the draws xi_n held fixed.
 *
 * Modes with lambda_i below 1e-12 lambda_1 get a zero column. A retained mode
 * with lambda_i == 0 throws SingularModeError.
 */
inline Eigen::MatrixXd path_direction_matrix(const KLBasis& basis, const EigenDerivatives& ed) {
  const Eigen::VectorXd lambda = basis.eigenvalues();
  const Eigen::MatrixXd phi = basis.modes();
  if (ed.dlambda.size() != lambda.size() || ed.dmodes.cols() != lambda.size() || ed.dmodes.rows() != phi.rows()) {
    throw InvalidArgument("eigen derivatives do not match the basis");
  }
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(phi.rows(), phi.cols());
  const double floor = 1e-12 * lambda(0);
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (lambda(i) == 0.0) throw SingularModeError("retained mode " + std::to_string(i) + " has zero eigenvalue");
    if (lambda(i) < floor) continue;
    const double root = std::sqrt(lambda(i));
    d.col(i) = phi.col(i) * (ed.dlambda(i) / (2.0 * root)) + root * ed.dmodes.col(i);
  }
  return d;
}

inline PathSensitivities covariance_path_sensitivity(const KLBasis& basis, const EigenDerivatives& ed,
                                                     const RealizationSet& draws, std::size_t parameter_id = 0) {
  if (draws.modes() != basis.truncation_level()) throw InvalidArgument("draws do not match the basis truncation");
  const Eigen::MatrixXd d = path_direction_matrix(basis, ed);
  PathSensitivities out{Eigen::MatrixXd(draws.samples(), d.rows()), parameter_id,
                        PathSensitivityKind::eigen_perturbation};
  for (Eigen::Index n = 0; n < draws.samples(); ++n) out.dpaths.row(n) = (d * draws.draws.row(n).transpose()).transpose();
  return out;
}

/// d e_n / d sigma_k = e~_n(x) B_k(x) for e_n = sigma e~_n.
inline PathSensitivities scaled_path_sensitivity(const Eigen::MatrixXd& unit_paths, const Eigen::MatrixXd& basis_matrix,
                                                 std::size_t param_index) {
  if (unit_paths.cols() != basis_matrix.rows()) throw InvalidArgument("unit paths and basis matrix disagree in grid size");
  if (static_cast<Eigen::Index>(param_index) >= basis_matrix.cols()) {
    throw InvalidArgument("sigma parameter index " + std::to_string(param_index) + " out of range");
  }
  return {unit_paths * basis_matrix.col(static_cast<Eigen::Index>(param_index)).asDiagonal(), param_index,
          PathSensitivityKind::scaled_field};
}

/// Monte Carlo gradient (1/N) sum_n dF_n/dp; independent of sample order.
inline double pathwise_gradient(std::span<const double> per_sample_dF) { return ordered_mean(per_sample_dF); }

} // namespace grfopt

#endif // GRFOPT_SENSITIVITY_HPP
