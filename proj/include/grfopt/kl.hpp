#ifndef GRFOPT_KL_HPP
#define GRFOPT_KL_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include "grfopt/errors.hpp"
#include "grfopt/numerics/bspline.hpp"
#include "grfopt/numerics/eigen.hpp"
#include "grfopt/randomfield.hpp"

namespace grfopt {

/// Fraction of total eigenvalue mass held by the first k values.
inline double partial_scatter(const Eigen::VectorXd& eigenvalues, Eigen::Index k) {
  if (k < 0 || k > eigenvalues.size()) throw InvalidArgument("partial scatter index out of range");
  const double total = eigenvalues.sum();
  if (!(total > 0.0)) throw DegenerateCovarianceError("covariance has zero total variance");
  return eigenvalues.head(k).sum() / total;
}

/// How many modes a K-L expansion keeps.
struct Truncation {
  double threshold = 0.99;           ///< smallest k with S_k >= threshold
  std::optional<Eigen::Index> modes; ///< overrides the threshold when set
};

/**
 * Truncated Karhunen-Loeve expansion of a discretized covariance.
 *
 * The Nystrom eigenproblem C W phi = lambda phi is solved through its
 * symmetric form W^{1/2} C W^{1/2} psi = lambda psi with phi = W^{-1/2} psi,
 * so the modes are orthonormal under the grid's quadrature inner product.
 * The full spectrum is kept because eigenvector derivatives need it.
 */
class KLBasis {
public:
  KLBasis(const CovarianceMatrix& cov, Eigen::VectorXd mean, const Truncation& truncation)
      : grid_(cov.grid), mean_(std::move(mean)) {
    const auto n = static_cast<Eigen::Index>(grid_.size());
    if (cov.entries.rows() != n || cov.entries.cols() != n) throw InvalidArgument("covariance does not match its grid");
    if (mean_.size() != n) throw InvalidArgument("mean field does not match the grid");
    if (!truncation.modes && !(truncation.threshold > 0.0 && truncation.threshold <= 1.0)) {
      throw InvalidArgument("scatter threshold must lie in (0,1]");
    }
    sqrt_weights_ = grid_.weight_vector().cwiseSqrt();
    symmetric_ = sqrt_weights_.asDiagonal() * cov.entries * sqrt_weights_.asDiagonal();
    spectrum_ = sym_eigendecompose(symmetric_);

    const double top = spectrum_.values.size() > 0 ? spectrum_.values(0) : 0.0;
    if (!(top > 0.0)) throw DegenerateCovarianceError("covariance has no positive eigenvalue");
    for (Eigen::Index i = 0; i < n; ++i) {
      double& v = spectrum_.values(i);
      if (v < 0.0) {
        if (v < -1e-10 * top) {
          throw DegenerateCovarianceError("covariance is not positive semidefinite on this grid (eigenvalue " +
                                          std::to_string(v) + ")");
        }
        v = 0.0;
      }
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      auto psi = spectrum_.vectors.col(i);
      const Eigen::VectorXd phi = psi.cwiseQuotient(sqrt_weights_);
      Eigen::Index at = 0;
      phi.cwiseAbs().maxCoeff(&at);
      if (phi(at) < 0.0) psi = -psi;
    }

    if (truncation.modes) {
      if (*truncation.modes < 1 || *truncation.modes > n) {
        throw InvalidArgument("requested " + std::to_string(*truncation.modes) + " modes on a grid of " +
                              std::to_string(n) + " points");
      }
      level_ = *truncation.modes;
    } else {
      const double total = spectrum_.values.sum();
      double running = 0.0;
      level_ = n;
      for (Eigen::Index k = 0; k < n; ++k) {
        running += spectrum_.values(k);
        if (running / total >= truncation.threshold * (1.0 - 1e-12)) {
          level_ = k + 1;
          break;
        }
      }
    }
    scatter_ = partial_scatter(spectrum_.values, level_);
  }

  const Grid1D& grid() const { return grid_; }
  Eigen::Index truncation_level() const { return level_; }
  double partial_scatter_value() const { return scatter_; }
  const Eigen::VectorXd& mean_field() const { return mean_; }

  /// Retained eigenvalues, descending.
  Eigen::VectorXd eigenvalues() const { return spectrum_.values.head(level_); }

  /// Retained modes phi_i on the grid, one per column.
  Eigen::MatrixXd modes() const {
    return sqrt_weights_.cwiseInverse().asDiagonal() * spectrum_.vectors.leftCols(level_);
  }

  /// Every eigenpair of the weight-symmetrized covariance.
  const SymmetricEigensystem& symmetric_spectrum() const { return spectrum_; }
  const Eigen::MatrixXd& symmetric_matrix() const { return symmetric_; }
  const Eigen::VectorXd& sqrt_weights() const { return sqrt_weights_; }

  /// Multiplies every symmetric-form eigenvector by the matching entry of `signs`.
  void apply_signs(const Eigen::VectorXd& signs) {
    for (Eigen::Index i = 0; i < signs.size(); ++i) spectrum_.vectors.col(i) *= signs(i);
  }

private:
  Grid1D grid_;
  Eigen::VectorXd mean_;
  Eigen::VectorXd sqrt_weights_;
  Eigen::MatrixXd symmetric_;
  SymmetricEigensystem spectrum_;
  Eigen::Index level_ = 0;
  double scatter_ = 0.0;
};

inline KLBasis build_kl(const CovarianceMatrix& cov, double threshold) {
  return {cov, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cov.grid.size())), Truncation{threshold, {}}};
}

inline KLBasis build_kl(const CovarianceMatrix& cov, const SplineField& mean, double threshold) {
  Eigen::VectorXd m(static_cast<Eigen::Index>(cov.grid.size()));
  for (std::size_t i = 0; i < cov.grid.size(); ++i) m(static_cast<Eigen::Index>(i)) = spline_eval(mean, cov.grid.points()[i]);
  return {cov, std::move(m), Truncation{threshold, {}}};
}

namespace detail {

inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

} // namespace detail

/// Uniform variate in (0,1) determined only by (seed, sample, mode).
inline double counter_uniform(std::uint64_t seed, std::uint64_t sample, std::uint64_t mode) {
  std::uint64_t h = detail::mix64(seed + 0x9e3779b97f4a7c15ULL);
  h = detail::mix64(h ^ (sample + 0x632be59bd9b4e019ULL));
  h = detail::mix64(h ^ (mode + 0x85157af5c2a0b3e1ULL));
  return (static_cast<double>(h >> 11) + 0.5) * 0x1.0p-53;
}

/// Standard normal variate for draw (sample, mode) by inverse CDF.
inline double counter_normal(std::uint64_t seed, std::uint64_t sample, std::uint64_t mode) {
  static const boost::math::normal_distribution<double> standard;
  return boost::math::quantile(standard, counter_uniform(seed, sample, mode));
}

/// Fixed N x N_KL matrix of standard normal draws; row n drives sample n.
struct RealizationSet {
  Eigen::MatrixXd draws;
  std::uint64_t seed = 0;

  Eigen::Index samples() const { return draws.rows(); }
  Eigen::Index modes() const { return draws.cols(); }
};

inline RealizationSet draw_realizations(std::uint64_t seed, Eigen::Index n_samples, Eigen::Index n_modes) {
  if (n_samples < 1 || n_modes < 1) throw InvalidArgument("need at least one sample and one mode");
  RealizationSet out{Eigen::MatrixXd(n_samples, n_modes), seed};
  for (Eigen::Index n = 0; n < n_samples; ++n) {
    for (Eigen::Index i = 0; i < n_modes; ++i) {
      out.draws(n, i) = counter_normal(seed, static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(i));
    }
  }
  return out;
}

/// Writes realization n on the grid into `out`: mean + sum_i sqrt(lambda_i) phi_i xi_{n,i}.
inline void sample_path(const Eigen::VectorXd& mean, const Eigen::MatrixXd& scaled_modes,
                        const Eigen::Ref<const Eigen::RowVectorXd>& xi, Eigen::Ref<Eigen::VectorXd> out) {
  out = mean;
  for (Eigen::Index i = 0; i < scaled_modes.cols(); ++i) out += xi(i) * scaled_modes.col(i);
}

/// Columns sqrt(lambda_i) phi_i.
inline Eigen::MatrixXd scaled_modes(const KLBasis& basis) {
  return basis.modes() * basis.eigenvalues().cwiseSqrt().asDiagonal();
}

/// All realizations as rows (N x grid size).
inline Eigen::MatrixXd sample_paths(const KLBasis& basis, const RealizationSet& draws) {
  if (draws.modes() != basis.truncation_level()) {
    throw InvalidArgument("draws have " + std::to_string(draws.modes()) + " columns but the basis keeps " +
                          std::to_string(basis.truncation_level()) + " modes");
  }
  const Eigen::MatrixXd sm = scaled_modes(basis);
  Eigen::MatrixXd paths(draws.samples(), static_cast<Eigen::Index>(basis.grid().size()));
  Eigen::VectorXd row(paths.cols());
  for (Eigen::Index n = 0; n < draws.samples(); ++n) {
    sample_path(basis.mean_field(), sm, draws.draws.row(n), row);
    paths.row(n) = row.transpose();
  }
  return paths;
}

} // namespace grfopt

#endif // GRFOPT_KL_HPP
