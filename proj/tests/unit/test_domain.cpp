#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "spm/domain.hpp"

using namespace spm;

namespace {

Field random_field(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> d;
  Field f(static_cast<Eigen::Index>(n));
  for (auto& v : f) v = d(rng);
  return f;
}

// Eigenvalues of the tridiagonal (-1, 2, -1)/h^2 on n interior nodes.
std::vector<double> tridiagonal_eigenvalues(int n, double length) {
  const double h = length / (n + 1);
  std::vector<double> mu;
  for (int j = 1; j <= n; ++j) mu.push_back(2.0 / (h * h) * (1.0 - std::cos(j * std::numbers::pi / (n + 1))));
  std::sort(mu.begin(), mu.end());
  return mu;
}

}  // namespace

TEST(SpatialGrid, MeshWidthAndCounts) {
  const auto g = SpatialGrid::interval(3);
  EXPECT_EQ(g.dim(), 1);
  EXPECT_EQ(g.size(), 3u);
  EXPECT_DOUBLE_EQ(g.h(0), 0.25);
  EXPECT_DOUBLE_EQ(g.cell_volume(), 0.25);
  const auto b = SpatialGrid::box(3, 4, 2.0, 1.0);
  EXPECT_EQ(b.size(), 12u);
  EXPECT_DOUBLE_EQ(b.h(0), 0.5);
  EXPECT_DOUBLE_EQ(b.h(1), 0.2);
  EXPECT_DOUBLE_EQ(b.cell_volume(), 0.1);
  EXPECT_DOUBLE_EQ(b.coordinate(5, 0), 1.5);  // node 5 = (i=2, j=1), x = 3 h_x
  EXPECT_DOUBLE_EQ(b.coordinate(5, 1), 0.4);
}

TEST(SpatialGrid, RejectsInvalid) {
  EXPECT_THROW(SpatialGrid(3, {2, 2}, {1.0, 1.0}), std::invalid_argument);
  EXPECT_THROW(SpatialGrid::interval(0), std::invalid_argument);
  EXPECT_THROW(SpatialGrid::interval(4, -1.0), std::invalid_argument);
  EXPECT_THROW(SpatialGrid::box(2, 0), std::invalid_argument);
}

TEST(DirichletLaplacian, SingleNode) {
  DirichletLaplacian L(SpatialGrid::interval(1));
  EXPECT_DOUBLE_EQ(L.stiffness().coeff(0, 0), 8.0);
  EXPECT_NEAR(L.eigenvalues()[0], 8.0, 1e-12);
}

TEST(DirichletLaplacian, TridiagonalEigenvalues) {
  for (int n : {3, 7, 20}) {
    DirichletLaplacian L(SpatialGrid::interval(n, 1.5));
    const auto ref = tridiagonal_eigenvalues(n, 1.5);
    for (int j = 0; j < n; ++j) EXPECT_NEAR(L.eigenvalues()[j], ref[static_cast<std::size_t>(j)], 1e-9 * ref.back());
  }
}

TEST(DirichletLaplacian, TensorSumEigenvalues2D) {
  for (auto [nx, ny] : {std::pair{2, 2}, std::pair{3, 5}}) {
    DirichletLaplacian L(SpatialGrid::box(nx, ny, 1.0, 2.0));
    const auto ex = tridiagonal_eigenvalues(nx, 1.0);
    const auto ey = tridiagonal_eigenvalues(ny, 2.0);
    std::vector<double> ref;
    for (double a : ex)
      for (double b : ey) ref.push_back(a + b);
    std::sort(ref.begin(), ref.end());
    ASSERT_EQ(L.eigenvalues().size(), static_cast<Eigen::Index>(ref.size()));
    for (std::size_t j = 0; j < ref.size(); ++j)
      EXPECT_NEAR(L.eigenvalues()[static_cast<Eigen::Index>(j)], ref[j], 1e-9 * ref.back());
  }
}

TEST(DirichletLaplacian, SymmetricPositiveDefinite) {
  DirichletLaplacian L(SpatialGrid::box(4, 3));
  const Eigen::MatrixXd A(L.stiffness());
  EXPECT_LT((A - A.transpose()).norm(), 1e-14);
  EXPECT_GT(L.eigenvalues().minCoeff(), 0.0);
}

TEST(DirichletLaplacian, EigenvectorsOrthonormalInWeightedProduct) {
  for (const auto& g : {SpatialGrid::interval(9, 2.0), SpatialGrid::box(4, 5, 1.0, 0.5)}) {
    DirichletLaplacian L(g);
    for (std::size_t i = 0; i < L.size(); ++i)
      for (std::size_t j = 0; j < L.size(); ++j)
        EXPECT_NEAR(inner_l2(L.eigenvector(i), L.eigenvector(j), g), i == j ? 1.0 : 0.0, 1e-10);
  }
}

TEST(DirichletLaplacian, EigenpairEquation) {
  DirichletLaplacian L(SpatialGrid::box(3, 4));
  for (std::size_t j = 0; j < L.size(); ++j) {
    const Field phi = L.eigenvector(j);
    EXPECT_LT((L.stiffness() * phi - L.eigenvalues()[static_cast<Eigen::Index>(j)] * phi).norm(), 1e-9 * L.eigenvalues().maxCoeff());
  }
}

TEST(DirichletLaplacian, SizeCap) {
  EXPECT_THROW(DirichletLaplacian(SpatialGrid::box(10, 10), 99), std::invalid_argument);
  EXPECT_NO_THROW(DirichletLaplacian(SpatialGrid::box(10, 10), 100));
}

TEST(InnerL2, HandValues) {
  const auto g = SpatialGrid::interval(1);
  const Field one = Field::Ones(1);
  EXPECT_DOUBLE_EQ(inner_l2(Field::Zero(1), Field::Zero(1), g), 0.0);
  EXPECT_DOUBLE_EQ(inner_l2(one, one, g), 0.5);
  EXPECT_THROW(inner_l2(Field::Ones(2), one, g), std::invalid_argument);
}

TEST(InnerL2, Symmetry) {
  std::mt19937_64 rng(1);
  const auto g = SpatialGrid::box(3, 3);
  const Field u = random_field(9, rng), v = random_field(9, rng);
  EXPECT_DOUBLE_EQ(inner_l2(u, v, g), inner_l2(v, u, g));
}

TEST(HMinusOne, SingleNodeValues) {
  DirichletLaplacian L(SpatialGrid::interval(1));
  const Field one = Field::Ones(1);
  EXPECT_DOUBLE_EQ(inner_hminus1(Field::Zero(1), Field::Zero(1), L), 0.0);
  EXPECT_NEAR(inner_hminus1(one, one, L), 0.0625, 1e-15);
  EXPECT_NEAR(solve_laplacian(L, one)[0], 0.125, 1e-15);
}

TEST(HMinusOne, EigenvectorNorm) {
  DirichletLaplacian L(SpatialGrid::interval(12));
  for (std::size_t j = 0; j < L.size(); ++j)
    EXPECT_NEAR(norm_hminus1_sq(L.eigenvector(j), L), 1.0 / L.eigenvalues()[static_cast<Eigen::Index>(j)], 1e-12);
}

TEST(HMinusOne, InnerProductAxioms) {
  std::mt19937_64 rng(2);
  DirichletLaplacian L(SpatialGrid::box(4, 4));
  for (int s = 0; s < 50; ++s) {
    const Field f = random_field(16, rng), g = random_field(16, rng), h = random_field(16, rng);
    const double a = 1.7, b = -0.3;
    const double fg = inner_hminus1(f, g, L);
    EXPECT_NEAR(fg, inner_hminus1(g, f, L), 1e-10 * std::abs(fg) + 1e-14);
    const double lin = inner_hminus1(a * f + b * h, g, L);
    EXPECT_NEAR(lin, a * fg + b * inner_hminus1(h, g, L), 1e-10 * (std::abs(lin) + 1.0));
    EXPECT_GT(inner_hminus1(f, f, L), 0.0);
  }
}

TEST(HMinusOne, SpectralIdentity) {
  std::mt19937_64 rng(3);
  DirichletLaplacian L(SpatialGrid::box(5, 3, 1.0, 2.0));
  for (int s = 0; s < 100; ++s) {
    const Field f = random_field(L.size(), rng);
    const Eigen::VectorXd c = L.coefficients(f);
    const double spectral = (c.array().square() / L.eigenvalues().array()).sum();
    EXPECT_NEAR(spectral, norm_hminus1_sq(f, L), 1e-8 * spectral);
  }
}

TEST(SolveLaplacian, RoundTripAndZero) {
  std::mt19937_64 rng(4);
  DirichletLaplacian L(SpatialGrid::box(6, 5));
  EXPECT_EQ(solve_laplacian(L, Field::Zero(30)), Field::Zero(30));
  for (int s = 0; s < 10; ++s) {
    const Field f = random_field(30, rng);
    const Field u = solve_laplacian(L, f);
    EXPECT_LT((apply_laplacian(L, u) + f).norm(), 1e-10 * f.norm());
  }
}

TEST(SolveLaplacian, PreservesSign) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  DirichletLaplacian L(SpatialGrid::box(5, 6));
  for (int s = 0; s < 20; ++s) {
    Field f(30);
    for (auto& v : f) v = unif(rng) < 0.3 ? unif(rng) : 0.0;
    EXPECT_GE(solve_laplacian(L, f).minCoeff(), -1e-15);
  }
}

TEST(SmoothGamma, IdentityEigenvectorAndBound) {
  std::mt19937_64 rng(6);
  DirichletLaplacian L(SpatialGrid::interval(10));
  const Field f = random_field(10, rng);
  EXPECT_EQ(smooth_gamma(f, 0.0, L), f);
  EXPECT_THROW(smooth_gamma(f, -0.5, L), std::invalid_argument);
  const Field phi = L.eigenvector(0);
  const double mu1 = L.eigenvalues()[0];
  EXPECT_LT((smooth_gamma(phi, 1.0, L) - phi / mu1).norm(), 1e-12);
  for (double gamma : {0.5, 1.0, 2.0}) {
    for (int s = 0; s < 20; ++s) {
      const Field g = random_field(10, rng);
      EXPECT_LE(norm_hminus1(smooth_gamma(g, gamma, L), L), std::pow(mu1, -gamma) * norm_hminus1(g, L) * (1 + 1e-12));
    }
  }
}

TEST(Mollify, SpectralOracle) {
  DirichletLaplacian L(SpatialGrid::interval(1));
  const Field phi = L.eigenvector(0);
  EXPECT_NEAR(mollify(phi, 1, L)[0], std::exp(-8.0) * phi[0], 1e-15);
  EXPECT_EQ(mollify(Field::Zero(1), 3, L), Field::Zero(1));
  EXPECT_THROW(mollify(phi, 0, L), std::invalid_argument);
  EXPECT_DOUBLE_EQ(mollifier_multiplier(16.0, 2), std::exp(-4.0));
}

TEST(Mollify, ContractionAndMonotoneConvergence) {
  std::mt19937_64 rng(7);
  DirichletLaplacian L(SpatialGrid::box(6, 6));
  for (int s = 0; s < 30; ++s) {
    const Field f = random_field(L.size(), rng);
    const double nf = norm_hminus1(f, L);
    double prev = INFINITY;
    for (int n = 1; n <= 64; n *= 2) {
      const Field m = mollify(f, n, L);
      EXPECT_LE(norm_hminus1(m, L), nf * (1.0 + 1e-12));
      const double gap = norm_hminus1(m - f, L);
      EXPECT_LT(gap, prev);
      prev = gap;
    }
    EXPECT_LT(prev, 0.05 * nf);
  }
}

TEST(DirichletLaplacian, CopiesShareFactorization) {
  DirichletLaplacian a(SpatialGrid::interval(5));
  DirichletLaplacian b = a;
  EXPECT_EQ(&a.eigenvalues(), &b.eigenvalues());
}
