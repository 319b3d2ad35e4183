#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "grfopt/numerics/bspline.hpp"
#include "grfopt/numerics/eigen.hpp"
#include "grfopt/numerics/quadrature.hpp"
#include "grfopt/numerics/summation.hpp"

using namespace grfopt;

namespace {

Eigen::MatrixXd random_symmetric(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Eigen::MatrixXd a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = nd(rng);
  return 0.5 * (a + a.transpose());
}

} // namespace

TEST(BSpline, RejectsTooFewFunctions) { EXPECT_THROW(SplineBasis(3), InvalidArgument); }

TEST(BSpline, RejectsCoordinatesOutsideUnitInterval) {
  SplineBasis b(6);
  EXPECT_THROW(b.evaluate(-1e-3), InvalidArgument);
  EXPECT_THROW(b.evaluate(1.5), InvalidArgument);
}

TEST(BSpline, PartitionOfUnity) {
  for (std::size_t n : {4u, 5u, 7u, 20u, 33u}) {
    SplineBasis b(n);
    for (int i = 0; i <= 1000; ++i) {
      const Eigen::VectorXd v = b.evaluate(i / 1000.0);
      EXPECT_NEAR(v.sum(), 1.0, 1e-12);
      EXPECT_GE(v.minCoeff(), 0.0);
    }
  }
}

TEST(BSpline, GrevilleCoefficientsReproduceLinears) {
  SplineBasis b(12);
  const auto g = b.greville();
  Eigen::VectorXd c(12);
  for (int i = 0; i < 12; ++i) c(i) = 0.3 - 1.7 * g[static_cast<std::size_t>(i)];
  const SplineField f(b, c);
  for (int i = 0; i <= 200; ++i) {
    const double x = i / 200.0;
    EXPECT_NEAR(f(x), 0.3 - 1.7 * x, 1e-12);
  }
}

TEST(BSpline, BasisMatrixMatchesPointEvaluation) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u;
  SplineBasis b(9);
  Eigen::VectorXd c(9);
  for (int i = 0; i < 9; ++i) c(i) = u(rng) * 4.0 - 2.0;
  const SplineField f(b, c);
  std::vector<double> pts;
  for (int i = 0; i < 57; ++i) pts.push_back(u(rng));
  pts.push_back(0.0);
  pts.push_back(1.0);
  const Eigen::VectorXd via_matrix = spline_basis_matrix(f, pts) * c;
  for (std::size_t j = 0; j < pts.size(); ++j) EXPECT_NEAR(via_matrix(static_cast<Eigen::Index>(j)), spline_eval(f, pts[j]), 1e-13);
}

TEST(BSpline, EndpointRowsAreUnitVectors) {
  SplineBasis b(7);
  const Eigen::VectorXd left = b.evaluate(0.0);
  const Eigen::VectorXd right = b.evaluate(1.0);
  EXPECT_DOUBLE_EQ(left(0), 1.0);
  EXPECT_DOUBLE_EQ(left.tail(6).cwiseAbs().sum(), 0.0);
  EXPECT_DOUBLE_EQ(right(6), 1.0);
  EXPECT_DOUBLE_EQ(right.head(6).cwiseAbs().sum(), 0.0);
}

TEST(BSpline, SingleFunctionEvaluationAgreesWithVector) {
  SplineBasis b(8);
  for (double x : {0.0, 0.13, 0.5, 0.77, 1.0}) {
    const Eigen::VectorXd v = b.evaluate(x);
    for (std::size_t k = 0; k < 8; ++k) EXPECT_DOUBLE_EQ(b.evaluate(k, x), v(static_cast<Eigen::Index>(k)));
  }
  EXPECT_THROW(b.evaluate(8, 0.5), InvalidArgument);
}

TEST(BSpline, ValuesStayInsideLocalCoefficientRange) {
  const SplineField f = SplineField::constant(31, 1.0);
  for (int i = 0; i <= 1000; ++i) EXPECT_LE(f(i / 1000.0), 1.0);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  Eigen::VectorXd c(15);
  for (auto& v : c) v = u(rng);
  const SplineField g(SplineBasis(15), c);
  for (int i = 0; i <= 1000; ++i) {
    const double x = i / 1000.0;
    EXPECT_LE(g(x), c.maxCoeff());
    EXPECT_GE(g(x), c.minCoeff());
  }
}

TEST(BSpline, CoefficientCountMustMatch) {
  EXPECT_THROW(SplineField(SplineBasis(5), Eigen::VectorXd::Ones(4)), InvalidArgument);
}

TEST(Quadrature, GaussLegendreNodesAndWeights) {
  const auto [x, w] = gauss_legendre(2);
  ASSERT_EQ(x.size(), 2u);
  EXPECT_NEAR(std::abs(x[0]), 1.0 / std::sqrt(3.0), 1e-15);
  EXPECT_NEAR(w[0] + w[1], 2.0, 1e-15);
}

TEST(Quadrature, CubicIsExact) {
  QuadratureRule rule(20, 2);
  EXPECT_NEAR(integrate(rule, [](double x) { return x * x * x; }), 0.25, 1e-12);
}

TEST(Quadrature, PeriodicSineVanishes) {
  QuadratureRule rule(20, 2);
  EXPECT_NEAR(integrate(rule, [](double x) { return std::sin(2.0 * std::numbers::pi * x); }), 0.0, 1e-10);
}

// Composite 2-point Gauss error is -(h^4 / 4320) * integral of f'''' + O(h^6); for e^x with h = 0.05
// that is about 2.49e-9, so the check is against the error formula rather than a fixed bound.
TEST(Quadrature, ExponentialErrorFollowsErrorFormula) {
  for (int m : {20, 40}) {
    QuadratureRule rule(m, 2);
    const double h = 1.0 / m;
    const double predicted = -std::pow(h, 4) / 4320.0 * (std::numbers::e - 1.0);
    const double error = integrate(rule, [](double x) { return std::exp(x); }) - (std::numbers::e - 1.0);
    EXPECT_NEAR(error / predicted, 1.0, 0.01) << m << " intervals";
  }
}

TEST(Quadrature, ConstantIsExact) {
  QuadratureRule rule(20, 2);
  EXPECT_NEAR(integrate(rule, [](double) { return 1.0; }), 1.0, 1e-14);
}

TEST(Quadrature, WeightsSumToOneAndNodesIncrease) {
  QuadratureRule rule(20, 2);
  ASSERT_EQ(rule.size(), 40u);
  double total = 0.0;
  for (std::size_t i = 0; i < rule.size(); ++i) {
    total += rule.weights()[i];
    if (i > 0) {
      EXPECT_GT(rule.nodes()[i], rule.nodes()[i - 1]);
    }
  }
  EXPECT_NEAR(total, 1.0, 1e-14);
}

TEST(Quadrature, NonFiniteIntegrandNamesNode) {
  QuadratureRule rule(4, 2);
  try {
    integrate(rule, [&](double x) { return x == rule.nodes()[3] ? std::nan("") : x; });
    FAIL() << "expected a numerical domain error";
  } catch (const NumericalDomainError& e) {
    EXPECT_NE(std::string(e.what()).find("node 3"), std::string::npos);
  }
}

TEST(Quadrature, RejectsEmptyRule) {
  EXPECT_THROW(QuadratureRule(0, 2), InvalidArgument);
  EXPECT_THROW(QuadratureRule(3, 0), InvalidArgument);
}

TEST(Eigen, DiagonalExample) {
  Eigen::MatrixXd m = Eigen::Vector2d(2.0, 4.0).asDiagonal();
  const auto eig = sym_eigendecompose(m);
  EXPECT_DOUBLE_EQ(eig.values(0), 4.0);
  EXPECT_DOUBLE_EQ(eig.values(1), 2.0);
  EXPECT_NEAR(std::abs(eig.vectors(1, 0)), 1.0, 1e-15);
  EXPECT_NEAR(std::abs(eig.vectors(0, 1)), 1.0, 1e-15);
}

TEST(Eigen, RejectsNonSymmetric) {
  Eigen::MatrixXd m(2, 2);
  m << 1.0, 2.0, 0.0, 1.0;
  EXPECT_THROW(sym_eigendecompose(m), InvalidArgument);
}

TEST(Eigen, RandomMatricesDecomposeAccurately) {
  std::mt19937_64 rng(11);
  for (int n : {1, 2, 5, 16, 40}) {
    const Eigen::MatrixXd m = random_symmetric(n, rng);
    const auto eig = sym_eigendecompose(m);
    for (int i = 1; i < n; ++i) EXPECT_GE(eig.values(i - 1), eig.values(i));
    EXPECT_LE((eig.vectors.transpose() * eig.vectors - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff(), 1e-10);
    const Eigen::MatrixXd rebuilt = eig.vectors * eig.values.asDiagonal() * eig.vectors.transpose();
    EXPECT_LE((rebuilt - m).norm(), 1e-10 * m.norm());
  }
}

TEST(Eigen, PseudoinverseDiagonalExample) {
  const Eigen::Vector2d values(4.0, 2.0);
  const Eigen::Matrix2d vectors = Eigen::Matrix2d::Identity();
  const Eigen::VectorXd r = spectral_pseudoinverse_apply(values, vectors, 0, Eigen::Vector2d(0.0, 1.0), 1e-10 * 4.0);
  EXPECT_NEAR(r(0), 0.0, 1e-15);
  EXPECT_NEAR(r(1), -0.5, 1e-15);
}

TEST(Eigen, PseudoinverseSolvesProjectedSystem) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::MatrixXd m = random_symmetric(8, rng);
    const auto eig = sym_eigendecompose(m);
    Eigen::VectorXd v(8);
    for (int i = 0; i < 8; ++i) v(i) = nd(rng);
    for (Eigen::Index i = 0; i < 8; ++i) {
      const Eigen::VectorXd r = spectral_pseudoinverse_apply(eig, i, v);
      const Eigen::VectorXd phi = eig.vectors.col(i);
      EXPECT_NEAR(phi.dot(r), 0.0, 1e-10);
      const Eigen::VectorXd lhs = (m - eig.values(i) * Eigen::MatrixXd::Identity(8, 8)) * r;
      const Eigen::VectorXd rhs = v - phi * phi.dot(v);
      EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-8);
    }
  }
}

TEST(Eigen, PseudoinverseDetectsDegeneracy) {
  const Eigen::Vector3d values(3.0, 1.0, 1.0);
  try {
    spectral_pseudoinverse_apply(values, Eigen::Matrix3d::Identity(), 1, Eigen::Vector3d(1, 1, 1), 3e-10);
    FAIL() << "expected degenerate eigenvalue error";
  } catch (const DegenerateEigenvalueError& e) {
    EXPECT_EQ(e.first(), 1u);
    EXPECT_EQ(e.second(), 2u);
  }
}

TEST(Summation, PairwiseMatchesExactSmallIntegers) {
  std::vector<double> v;
  for (int i = 1; i <= 1000; ++i) v.push_back(i);
  EXPECT_DOUBLE_EQ(pairwise_sum(v), 500500.0);
  EXPECT_DOUBLE_EQ(ordered_mean(v), 500.5);
}

TEST(Summation, OrderedMeanIsPermutationInvariant) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd;
  std::vector<double> v(5001);
  for (double& x : v) x = nd(rng) * std::exp(3.0 * nd(rng));
  const double ref = ordered_mean(v);
  for (int k = 0; k < 5; ++k) {
    std::shuffle(v.begin(), v.end(), rng);
    EXPECT_EQ(ordered_mean(v), ref);
  }
}

TEST(Summation, OrderedMeanRejectsEmptyAndNonFinite) {
  EXPECT_THROW(ordered_mean(std::vector<double>{}), InvalidArgument);
  EXPECT_THROW(ordered_mean(std::vector<double>{1.0, std::nan("")}), NumericalDomainError);
}
