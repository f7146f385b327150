#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "spm/solver.hpp"

using namespace spm;

namespace {

NoiseSpec jump_spec() {
  return NoiseSpec({NoiseMode{0.0, 4.0, TwoPointJumps{0.5}}, NoiseMode{0.0, 2.0, NormalJumps{0.0, 0.3}}});
}

NoiseSpec mixed_spec() {
  return NoiseSpec({NoiseMode{0.5, 2.0, TwoPointJumps{0.5}}, NoiseMode{0.2, 3.0, NormalJumps{0.0, 0.4}}});
}

Eigen::MatrixXd constant_gm(const DirichletLaplacian& L, const MartingalePath& p, const Eigen::MatrixXd& G) {
  return stochastic_integral(PiecewiseIntegrand(G).on(p), p, L);
}

Eigen::MatrixXd two_mode_G(const DirichletLaplacian& L) {
  Eigen::MatrixXd G(static_cast<Eigen::Index>(L.size()), 2);
  G.col(0) = 0.5 * L.eigenvector(0);
  G.col(1) = 0.3 * L.eigenvector(1);
  return G;
}

SolverConfig config(double lambda, double dt) {
  SolverConfig c;
  c.lambda = lambda;
  c.dt = dt;
  return c;
}

}  // namespace

TEST(SolverConfig, Validation) {
  const auto cubic = MonotoneGraph::power_law(3.0);
  SolverConfig c;
  EXPECT_NO_THROW(c.validate(cubic));
  c.lambda = 0.0;
  EXPECT_THROW(c.validate(cubic), std::invalid_argument);
  EXPECT_NO_THROW(c.validate(MonotoneGraph::linear(1.0)));
  c = SolverConfig{};
  c.epsilon = 0.2;
  EXPECT_THROW(c.validate(cubic), std::invalid_argument);
  c = SolverConfig{};
  c.dt = 0.0;
  EXPECT_THROW(c.validate(cubic), std::invalid_argument);
  c = SolverConfig{};
  EXPECT_THROW(c.validate(MonotoneGraph::signum(1.0)), std::invalid_argument);
  c.allow_bounded_range = true;
  EXPECT_NO_THROW(c.validate(MonotoneGraph::signum(1.0)));
}

TEST(ContractionThreshold, Arithmetic) {
  EXPECT_NEAR(contraction_threshold(1.0, 1.0 / 12.0), 0.5 / 73.0, 1e-15);
  EXPECT_NEAR(contraction_threshold(1.0, 1.0 / 12.0), 6.85e-3, 1e-5);
  EXPECT_NEAR(contraction_threshold(2.0, 1.0 / 12.0), 0.25 / 73.0, 1e-15);
  EXPECT_TRUE(std::isinf(contraction_threshold(0.0, 0.1)));
}

TEST(ImplicitStep, ZeroIsFixedPoint) {
  DirichletLaplacian L(SpatialGrid::interval(5));
  for (const auto& g : {MonotoneGraph::power_law(3.0), MonotoneGraph::stefan(1.0, 2.0, 0.5)}) {
    const auto s = implicit_step(g, 1e-3, L, 0.1, Field::Zero(5), Field::Zero(5));
    EXPECT_EQ(s.y.norm(), 0.0);
    EXPECT_EQ(s.eta.norm(), 0.0);
  }
}

TEST(ImplicitStep, LinearSingleNodeHandSolve) {
  DirichletLaplacian L(SpatialGrid::interval(1));
  const auto s = implicit_step(MonotoneGraph::linear(1.0), 0.0, L, 0.125, Field::Ones(1), Field::Zero(1));
  EXPECT_NEAR(s.y[0], 0.5, 1e-12);
}

TEST(ImplicitStep, CubicSingleNodeMatchesBisection) {
  DirichletLaplacian L(SpatialGrid::interval(1));
  const double tau = 0.05, lambda = 1e-3, rhs = 0.9, g = 0.4;
  const RegularizedDrift d(MonotoneGraph::power_law(3.0), lambda);
  double lo = -5.0, hi = 5.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (mid + tau * 8.0 * d.value(mid + g) - rhs > 0 ? hi : lo) = mid;
  }
  const auto s = implicit_step(MonotoneGraph::power_law(3.0), lambda, L, tau, Field::Constant(1, rhs), Field::Constant(1, g));
  EXPECT_NEAR(s.y[0], 0.5 * (lo + hi), 1e-10);
  EXPECT_NEAR(s.eta[0], yosida(MonotoneGraph::power_law(3.0), lambda, s.y[0] + g), 1e-12);
}

TEST(ImplicitStep, NewtonResidualSmallInManyNodes) {
  DirichletLaplacian L(SpatialGrid::box(5, 4));
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  for (const auto& g : {MonotoneGraph::power_law(3.0), MonotoneGraph::power_law(1.5), MonotoneGraph::stefan(1.0, 2.0, 1.0)}) {
    Field rhs(20), gn(20);
    for (auto& v : rhs) v = 2.0 * nd(rng);
    for (auto& v : gn) v = 0.5 * nd(rng);
    const auto s = implicit_step(g, 1e-3, L, 0.05, rhs, gn);
    const Field F = s.y - rhs - 0.05 * L.apply(s.drift);
    EXPECT_LE(norm_hminus1(F, L), 1e-9 * (1.0 + norm_hminus1(rhs, L))) << g.name();
  }
}

TEST(AdditiveSolve, ZeroDataGivesZero) {
  DirichletLaplacian L(SpatialGrid::interval(6));
  const auto times = uniform_times(0.5, 0.05);
  const auto tr = additive_path_solve(MonotoneGraph::power_law(3.0), config(1e-3, 0.05), L, Field::Zero(6), times,
                                      Eigen::MatrixXd::Zero(6, static_cast<Eigen::Index>(times.size())));
  EXPECT_EQ(tr.X.norm(), 0.0);
  EXPECT_EQ(tr.size(), times.size());
}

TEST(AdditiveSolve, LinearReproducesGeometricDecay) {
  DirichletLaplacian L(SpatialGrid::interval(9));
  const Field phi = L.eigenvector(0);
  const double mu = L.eigenvalues()[0];
  const double T = 0.1;
  for (double tau : {1e-2, 5e-3}) {
    const auto tr = deterministic_solve(MonotoneGraph::linear(1.0), config(0.0, tau), L, phi, uniform_times(T, tau));
    const std::size_t N = tr.size() - 1;
    const Field exact = std::pow(1.0 + tau * mu, -static_cast<double>(N)) * phi;
    EXPECT_LT((tr.state(N) - exact).lpNorm<Eigen::Infinity>(), 1e-10);
  }
}

TEST(AdditiveSolve, LinearFirstOrderInTime) {
  DirichletLaplacian L(SpatialGrid::interval(9));
  const Field phi = L.eigenvector(0);
  const double mu = L.eigenvalues()[0], T = 0.1;
  std::vector<double> err;
  for (double tau : {4e-3, 2e-3, 1e-3}) {
    const auto tr = deterministic_solve(MonotoneGraph::linear(1.0), config(0.0, tau), L, phi, uniform_times(T, tau));
    err.push_back((tr.state(tr.size() - 1) - std::exp(-mu * T) * phi).lpNorm<Eigen::Infinity>());
  }
  for (std::size_t i = 0; i + 1 < err.size(); ++i) EXPECT_NEAR(std::log2(err[i] / err[i + 1]), 1.0, 0.1);
}

TEST(AdditiveSolve, DeterministicNormNonincreasing) {
  DirichletLaplacian L(SpatialGrid::interval(12));
  Field x0 = L.eigenvector(0) + 0.5 * L.eigenvector(3);
  for (const auto& g : {MonotoneGraph::power_law(3.0), MonotoneGraph::stefan(1.0, 3.0, 0.7)}) {
    const auto tr = deterministic_solve(g, config(1e-3, 0.01), L, x0, uniform_times(0.3, 0.01));
    const auto d = diagnose(tr, g, L);
    for (std::size_t i = 1; i < tr.size(); ++i) EXPECT_LE(d.norm_hminus1[i], d.norm_hminus1[i - 1] * (1 + 1e-12));
  }
}

TEST(AdditiveSolve, IdentityResidualAndDissipation) {
  DirichletLaplacian L(SpatialGrid::box(4, 4));
  const auto spec = mixed_spec();
  const auto g = MonotoneGraph::power_law(3.0);
  const auto cfg = config(1e-3, 0.01);
  const Field x0 = L.eigenvector(0) - 0.4 * L.eigenvector(2);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto p = sample_path(spec, 0.5, cfg.dt, seed);
    const auto gm = constant_gm(L, p, two_mode_G(L));
    const auto tr = additive_path_solve(g, cfg, L, x0, p.times, gm);
    const auto res = identity_residuals(tr, x0, gm, L);
    for (double r : res) EXPECT_LE(r, 10.0 * cfg.newton_tol);
    const auto d = diagnose(tr, g, L);
    for (double v : d.dissipation) EXPECT_GE(v, -1e-10);
    for (std::size_t i = 0; i < tr.size(); ++i)
      for (Eigen::Index n = 0; n < 16; ++n)
        EXPECT_DOUBLE_EQ(tr.eta(n, static_cast<Eigen::Index>(i)), yosida(g, cfg.lambda, tr.X(n, static_cast<Eigen::Index>(i))));
  }
}

TEST(Apriori, LinearClosedForm) {
  DirichletLaplacian L(SpatialGrid::interval(7));
  const auto g = MonotoneGraph::linear(1.0);
  const Field x0 = L.eigenvector(0);
  for (double lambda : {0.25, 0.0625}) {
    const auto tr = deterministic_solve(g, config(lambda, 0.01), L, x0, uniform_times(0.2, 0.01));
    const auto q = apriori_quantities(tr, g, L);
    // z = X / (1 + lambda), so |X - z|^2 = lambda^2 / (1 + lambda)^2 |X|^2
    double oracle = 0.0;
    for (std::size_t i = 1; i < tr.size(); ++i)
      oracle += 0.01 * inner_l2(tr.state(i), tr.state(i), L.grid());
    oracle *= lambda * lambda / ((1 + lambda) * (1 + lambda));
    EXPECT_NEAR(q.gap_integral, oracle, 1e-12);
  }
  const auto zero = deterministic_solve(g, config(0.1, 0.01), L, Field::Zero(7), uniform_times(0.2, 0.01));
  const auto qz = apriori_quantities(zero, g, L);
  EXPECT_EQ(qz.gap_integral, 0.0);
  EXPECT_EQ(qz.potential_integral, 0.0);
}

// For beta(r) = c r the regularized drift is (c / (1 + lambda c) + lambda) r, whose
// first-order term (1 - c^2) lambda vanishes at c = 1; c = 2 keeps it.
TEST(LambdaSweep, LinearDistanceIsOrderLambda) {
  DirichletLaplacian L(SpatialGrid::interval(7));
  const auto g = MonotoneGraph::linear(2.0);
  const auto times = uniform_times(0.2, 0.01);
  const Field x0 = L.eigenvector(0);
  const Eigen::MatrixXd gm = Eigen::MatrixXd::Zero(7, static_cast<Eigen::Index>(times.size()));
  const std::vector<double> lambdas{0.04, 0.02, 0.01, 0.005};
  const auto rep = lambda_sweep(g, config(1e-3, 0.01), L, x0, times, gm, lambdas);
  ASSERT_EQ(rep.rows.size(), 4u);
  EXPECT_TRUE(rep.distances_decreasing);
  for (std::size_t i = 0; i + 1 < rep.rows.size(); ++i)
    EXPECT_NEAR(rep.rows[i].distance_to_half / rep.rows[i + 1].distance_to_half, 2.0, 0.2);
}

TEST(LambdaSweep, CubicOnNoisyPath) {
  DirichletLaplacian L(SpatialGrid::interval(10));
  const auto spec = mixed_spec();
  const auto cfg = config(1e-3, 0.01);
  const auto p = sample_path(spec, 0.3, cfg.dt, 5);
  const auto gm = constant_gm(L, p, two_mode_G(L));
  std::vector<double> lambdas;
  for (int k = 2; k <= 8; ++k) lambdas.push_back(std::ldexp(1.0, -k));
  const auto rep = lambda_sweep(MonotoneGraph::power_law(3.0), cfg, L, L.eigenvector(0), p.times, gm, lambdas);
  EXPECT_TRUE(rep.distances_decreasing);
  EXPECT_TRUE(rep.ratio_bounded);
}

TEST(ItoResidual, ZeroCase) {
  DirichletLaplacian L(SpatialGrid::interval(4));
  const auto times = uniform_times(0.2, 0.02);
  const auto Nt = static_cast<Eigen::Index>(times.size());
  const auto tr = additive_path_solve(MonotoneGraph::power_law(3.0), config(1e-3, 0.02), L, Field::Zero(4), times,
                                      Eigen::MatrixXd::Zero(4, Nt));
  const std::vector<double> qv(times.size(), 0.0);
  for (double r : ito_residual(tr, Eigen::MatrixXd::Zero(4, Nt), qv, L)) EXPECT_EQ(r, 0.0);
}

TEST(ItoResidual, HalvesWithStepOnJumpPath) {
  DirichletLaplacian L(SpatialGrid::interval(8));
  const auto spec = jump_spec();
  const Eigen::MatrixXd G = two_mode_G(L);
  const PiecewiseIntegrand pg(G);
  for (const auto& g : {MonotoneGraph::linear(1.0), MonotoneGraph::power_law(3.0)}) {
    MartingalePath p = sample_path(spec, 0.4, 0.02, 31);
    std::vector<double> R;
    for (int level = 0; level < 3; ++level) {
      if (level > 0) p = refine_path(p, spec, 100 + static_cast<std::uint64_t>(level));
      const auto gm = stochastic_integral(pg.on(p), p, L);
      const auto tr = additive_path_solve(g, config(1e-3, p.base_dt), L, L.eigenvector(0), p.times, gm);
      const auto qv = realized_qv(pg.on(p), p, spec, L);
      R.push_back(ito_residual(tr, gm, qv, L).back());
    }
    for (std::size_t i = 0; i + 1 < R.size(); ++i) EXPECT_NEAR(R[i + 1] / R[i], 0.5, 0.15) << g.name();
  }
}

TEST(Distances, SeriesAndReduction) {
  DirichletLaplacian L(SpatialGrid::interval(3));
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(3, 2), B = Eigen::MatrixXd::Zero(3, 2);
  A.col(1) = L.eigenvector(0);
  const auto s = sq_distance_series(A, B, L);
  EXPECT_EQ(s[0], 0.0);
  EXPECT_NEAR(s[1], 1.0 / L.eigenvalues()[0], 1e-12);
  const auto d = reduce_distances({{0.0, 1.0, 2.0}, {0.0, 3.0, 1.0}}, {{0, 1, 2}, {0, 1, 2}});
  EXPECT_DOUBLE_EQ(d.sup_mean.mean, 2.0);
  EXPECT_DOUBLE_EQ(d.mean_sup.mean, 2.5);
}

TEST(Picard, ZeroDiffusionOneIteration) {
  DirichletLaplacian L(SpatialGrid::interval(6));
  const auto spec = mixed_spec();
  std::vector<MartingalePath> paths;
  for (std::uint64_t s = 0; s < 4; ++s) paths.push_back(sample_path(spec, 0.2, 0.02, s));
  const auto g = MonotoneGraph::power_law(3.0);
  const auto cfg = config(1e-3, 0.02);
  const Field x0 = L.eigenvector(0);
  const auto res = picard_solve(g, DiffusionCoefficient::zero(2, 6), spec, cfg, L, x0, paths);
  EXPECT_EQ(res.iterations, 1);
  const auto det = deterministic_solve(g, cfg, L, x0, paths[0].times);
  EXPECT_LT((res.trajectories[0].X - det.X).norm(), 1e-14);
}

TEST(Picard, ConstantDiffusionTwoIterations) {
  DirichletLaplacian L(SpatialGrid::interval(6));
  const auto spec = mixed_spec();
  std::vector<MartingalePath> paths;
  for (std::uint64_t s = 0; s < 4; ++s) paths.push_back(sample_path(spec, 0.2, 0.02, s));
  const auto g = MonotoneGraph::power_law(3.0);
  const auto cfg = config(1e-3, 0.02);
  const Eigen::MatrixXd G = two_mode_G(L);
  const DiffusionCoefficient B(ConstantAdditive{{G.col(0), G.col(1)}});
  const auto res = picard_solve(g, B, spec, cfg, L, L.eigenvector(0), paths);
  EXPECT_EQ(res.iterations, 2);
  const auto direct = additive_path_solve(g, cfg, L, L.eigenvector(0), paths[1].times, constant_gm(L, paths[1], G));
  EXPECT_LT((res.trajectories[1].X - direct.X).norm(), 1e-12);
}

TEST(Picard, LinearSpectralContractsGeometrically) {
  DirichletLaplacian L(SpatialGrid::interval(8));
  const auto spec = mixed_spec();
  std::vector<MartingalePath> paths;
  for (std::uint64_t s = 0; s < 20; ++s) paths.push_back(sample_path(spec, 0.1, 0.005, stream_seed(1, s)));
  auto cfg = config(1e-3, 0.005);
  cfg.window_T0 = 0.05;
  const DiffusionCoefficient B(LinearSpectral{{1.0, 0.5}}, 0.0);
  const auto res = picard_solve(MonotoneGraph::power_law(3.0), B, spec, cfg, L, L.eigenvector(0), paths);
  EXPECT_EQ(res.window_starts.size(), 2u);
  for (const auto& h : res.history)
    if (h.iteration > 1) EXPECT_LT(h.factor, 1.0);
  EXPECT_NEAR(res.trajectories[0].times.back(), 0.1, 1e-12);
  // the windowed fixed point solves the additive equation with its own noise integral
  const auto& tr = res.trajectories[3];
  const auto check = additive_path_solve(MonotoneGraph::power_law(3.0), cfg, L, L.eigenvector(0), tr.times, res.noise_integrals[3]);
  EXPECT_LT((check.X - tr.X).norm(), 1e-8);
}

TEST(Picard, NonContractionRaises) {
  DirichletLaplacian L(SpatialGrid::interval(4));
  const NoiseSpec spec({NoiseMode{3.0, 0.0, NoJumps{}}});
  std::vector<MartingalePath> paths;
  for (std::uint64_t s = 0; s < 10; ++s) paths.push_back(sample_path(spec, 2.0, 0.1, s));
  auto cfg = config(1e-3, 0.1);
  cfg.picard_max_iter = 200;
  const DiffusionCoefficient B(LinearSpectral{{40.0}}, 0.0);
  EXPECT_THROW(picard_solve(MonotoneGraph::linear(0.01), B, spec, cfg, L, L.eigenvector(0), paths), SolverError);
}

TEST(Generalized, SingleLevelIsOneMollifiedSolve) {
  DirichletLaplacian L(SpatialGrid::interval(6));
  const auto spec = mixed_spec();
  std::vector<MartingalePath> paths;
  for (std::uint64_t s = 0; s < 3; ++s) paths.push_back(sample_path(spec, 0.1, 0.01, s));
  const auto cfg = config(1e-3, 0.01);
  const DiffusionCoefficient B(LinearSpectral{{1.0, 0.5}}, 0.0);
  const std::vector<int> levels{4};
  const auto g = generalized_solve(MonotoneGraph::power_law(3.0), B, spec, cfg, L, L.eigenvector(0), paths, levels);
  EXPECT_TRUE(g.cauchy.empty());
  const auto direct = picard_solve(MonotoneGraph::power_law(3.0), B.mollified(4), spec, cfg, L, L.eigenvector(0), paths);
  EXPECT_LT((g.finest.trajectories[2].X - direct.trajectories[2].X).norm(), 1e-14);
}

TEST(Generalized, CauchyDistancesDecrease) {
  DirichletLaplacian L(SpatialGrid::interval(10));
  const auto spec = mixed_spec();
  std::vector<MartingalePath> paths;
  for (std::uint64_t s = 0; s < 10; ++s) paths.push_back(sample_path(spec, 0.1, 0.01, stream_seed(2, s)));
  auto cfg = config(1e-3, 0.01);
  cfg.auto_window = true;
  const DiffusionCoefficient B(LinearSpectral{{1.0, 0.5}}, 0.0);
  const std::vector<int> levels{2, 4, 8, 16};
  const auto g = generalized_solve(MonotoneGraph::power_law(3.0), B, spec, cfg, L, L.eigenvector(0), paths, levels);
  ASSERT_EQ(g.cauchy.size(), 3u);
  EXPECT_TRUE(g.cauchy_decreasing);
}
