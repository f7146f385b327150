#pragma once

// Monte Carlo checks of the estimates and identities satisfied by the
// discrete model. Each check returns a VerificationReport whose verdict is
//   inequality: estimate <= bound + margin * std_error
//   identity:   |estimate - bound| <= margin * std_error
// Deterministic checks report std_error = 0 and a pinned numerical tolerance
// folded into the bound.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "spm/domain.hpp"
#include "spm/monotone.hpp"
#include "spm/noise.hpp"
#include "spm/parallel.hpp"
#include "spm/solver.hpp"
#include "spm/stats.hpp"

namespace spm {

enum class CheckKind { Inequality, Identity };

struct VerificationReport {
  std::string name;
  double estimate = 0.0;
  double std_error = 0.0;
  double bound = 0.0;  // bound for inequalities, target for identities
  double margin = 3.0;
  double tolerance = 0.0;  // absolute numerical slack added to the margin
  CheckKind kind = CheckKind::Inequality;
  bool pass = false;
  std::size_t n_paths = 0;
  double runtime_seconds = 0.0;
  std::vector<std::pair<std::string, double>> values;  // auxiliary measurements, in insertion order
  std::string detail;

  /// Applies the verdict rule; non-finite estimates always fail.
  void decide() {
    if (!std::isfinite(estimate) || !std::isfinite(std_error) || std::isnan(bound)) {
      pass = false;
      return;
    }
    const double slack = margin * std_error + tolerance;
    pass = kind == CheckKind::Inequality ? estimate <= bound + slack : std::abs(estimate - bound) <= slack;
  }

  double value(const std::string& key) const {
    for (const auto& [k, v] : values)
      if (k == key) return v;
    throw std::out_of_range("VerificationReport: no value named " + key);
  }
};

namespace detail {

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

inline VerificationReport finish(VerificationReport r, const Stopwatch& sw) {
  r.decide();
  r.runtime_seconds = sw.seconds();
  return r;
}

inline double sup_of(const std::vector<double>& v) { return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end()); }

}  // namespace detail

/// n independent paths; path w uses seed stream_seed(seed, w).
inline std::vector<MartingalePath> sample_ensemble(const NoiseSpec& spec, double T, double dt, std::size_t n,
                                                   std::uint64_t seed) {
  std::vector<MartingalePath> paths(n);
  parallel_for(n, [&](std::size_t w) { paths[w] = sample_path(spec, T, dt, stream_seed(seed, w + 1)); });
  return paths;
}

/// Random field with standard normal nodal values.
inline Field random_field(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Field f(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < f.size(); ++i) f[i] = normal(rng);
  return f;
}

// ---------------------------------------------------------------------------
// Martingale checks

/// E sup_t |G.M(t)|_{-1}^2 <= 4 E |G.M(T)|_{-1}^2. The standard error is that
/// of the paired difference sup - 4 final.
inline VerificationReport check_doob(const NoiseSpec& spec, const PiecewiseIntegrand& G, const DirichletLaplacian& L,
                                     double T, double dt, std::size_t n_paths, std::uint64_t seed) {
  detail::Stopwatch sw;
  const auto paths = sample_ensemble(spec, T, dt, n_paths, seed);
  std::vector<double> sups(n_paths), finals(n_paths), diff(n_paths);
  parallel_for(n_paths, [&](std::size_t w) {
    const Eigen::MatrixXd gm = stochastic_integral(G.on(paths[w]), paths[w], L);
    const std::vector<double> s = sq_distance_series(gm, Eigen::MatrixXd::Zero(gm.rows(), gm.cols()), L);
    sups[w] = detail::sup_of(s);
    finals[w] = s.back();
    diff[w] = sups[w] - 4.0 * finals[w];
  });
  VerificationReport r;
  r.name = "doob";
  r.kind = CheckKind::Inequality;
  r.n_paths = n_paths;
  const Estimate es = estimate_mean(sups), ef = estimate_mean(finals), ed = estimate_mean(diff);
  r.estimate = es.mean;
  r.bound = 4.0 * ef.mean;
  r.std_error = ed.std_error;
  r.values = {{"mean_sup", es.mean}, {"mean_final", ef.mean}, {"ratio", ef.mean > 0.0 ? es.mean / ef.mean : 0.0}};
  return detail::finish(r, sw);
}

/// E |G.M(T)|_{-1}^2 = int_0^T |G|_{Q_M}^2 d<M> = sum_k v_k int |G e_k|_{-1}^2 dt.
inline VerificationReport check_isometry(const NoiseSpec& spec, const PiecewiseIntegrand& G,
                                         const DirichletLaplacian& L, double T, double dt, std::size_t n_paths,
                                         std::uint64_t seed) {
  detail::Stopwatch sw;
  const auto paths = sample_ensemble(spec, T, dt, n_paths, seed);
  std::vector<double> finals(n_paths);
  parallel_for(n_paths, [&](std::size_t w) {
    const Eigen::MatrixXd gm = stochastic_integral(G.on(paths[w]), paths[w], L);
    finals[w] = norm_hminus1_sq(gm.col(gm.cols() - 1), L);
  });
  VerificationReport r;
  r.name = "isometry";
  r.kind = CheckKind::Identity;
  r.n_paths = n_paths;
  const Estimate e = estimate_mean(finals);
  r.estimate = e.mean;
  r.std_error = e.std_error;
  r.bound = G.qm_integral(spec, L, T);
  return detail::finish(r, sw);
}

// ---------------------------------------------------------------------------
// Additive-noise stability

struct Dataset {
  Field x;
  PiecewiseIntegrand G;
};

/// sup_t mean |X_1 - X_2|_{-1}^2 <= mean |x_1 - x_2|_{-1}^2 + int |G_1 - G_2|_{Q_M}^2 d<M>.
inline VerificationReport check_stability(const MonotoneGraph& graph, const SolverConfig& cfg, const DirichletLaplacian& L,
                                      const NoiseSpec& spec, const Dataset& d1, const Dataset& d2, double T,
                                      std::size_t n_paths, std::uint64_t seed) {
  detail::Stopwatch sw;
  const auto paths = sample_ensemble(spec, T, cfg.dt, n_paths, seed);
  std::vector<std::vector<double>> series(n_paths);
  std::vector<std::vector<std::size_t>> base(n_paths);
  parallel_for(n_paths, [&](std::size_t w) {
    const auto& p = paths[w];
    const Eigen::MatrixXd g1 = stochastic_integral(d1.G.on(p), p, L);
    const Eigen::MatrixXd g2 = stochastic_integral(d2.G.on(p), p, L);
    const Trajectory a = additive_path_solve(graph, cfg, L, d1.x, p.times, g1);
    const Trajectory b = additive_path_solve(graph, cfg, L, d2.x, p.times, g2);
    series[w] = sq_distance_series(a.X, b.X, L);
    base[w] = p.base_indices;
  });
  const EnsembleDistance dist = reduce_distances(series, base);
  VerificationReport r;
  r.name = "stability";
  r.kind = CheckKind::Inequality;
  r.n_paths = n_paths;
  r.estimate = dist.sup_mean.mean;
  r.std_error = dist.sup_mean.std_error;
  const double initial = norm_hminus1_sq(d1.x - d2.x, L);
  const double noise = (d1.G - d2.G).qm_integral(spec, L, T);
  r.bound = initial + noise;
  r.tolerance = 1e-10 * r.bound;
  r.values = {{"initial_term", initial}, {"noise_term", noise}, {"mean_sup", dist.mean_sup.mean}};
  return detail::finish(r, sw);
}

// ---------------------------------------------------------------------------
// A priori bounds along the Yosida sweep

/// For each lambda: P = int (j(z) + j*(eta)) and Q = int |X - z|^2 / lambda.
/// Both are bounded by C (1 + |x|_{-1}^2) with C fitted at the largest
/// lambda; the estimate is the largest of P/P_0 and Q/Q_0, the bound 2.
inline VerificationReport check_apriori(const MonotoneGraph& graph, const SolverConfig& cfg,
                                        const DirichletLaplacian& L, const Field& x0, std::span<const double> times,
                                        const Eigen::MatrixXd& gm, std::span<const double> lambdas) {
  detail::Stopwatch sw;
  if (lambdas.empty()) throw std::invalid_argument("check_apriori: empty lambda list");
  std::vector<double> P, Q;
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    if (!(lambdas[i] > 0.0) || (i > 0 && !(lambdas[i] < lambdas[i - 1])))
      throw std::invalid_argument("check_apriori: lambdas must be positive and decreasing");
    SolverConfig c = cfg;
    c.lambda = lambdas[i];
    const AprioriQuantities q = apriori_quantities(additive_path_solve(graph, c, L, x0, times, gm), graph, L);
    P.push_back(q.potential_integral);
    Q.push_back(q.gap_integral / lambdas[i]);
  }
  auto rel = [](double v, double ref) {
    if (ref > 0.0) return v / ref;
    return v == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  };
  VerificationReport r;
  r.name = "apriori";
  r.kind = CheckKind::Inequality;
  r.n_paths = 1;
  r.bound = 2.0;
  const double scale = 1.0 + norm_hminus1_sq(x0, L);
  r.values = {{"C_potential", P[0] / scale}, {"C_gap", Q[0] / scale}};
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    r.estimate = std::max({r.estimate, rel(P[i], P[0]), rel(Q[i], Q[0])});
    r.values.emplace_back("potential@" + std::to_string(i), P[i]);
    r.values.emplace_back("gap_ratio@" + std::to_string(i), Q[i]);
  }
  return detail::finish(r, sw);
}

// ---------------------------------------------------------------------------
// Picard map checks

namespace detail {

/// Phi(X) on one path: the additive solve driven by B(X(t-)).M.
inline Trajectory apply_phi(const MonotoneGraph& graph, const DiffusionCoefficient& B, const SolverConfig& cfg,
                            const DirichletLaplacian& L, const Field& x0, const MartingalePath& p,
                            const Eigen::MatrixXd& X) {
  std::vector<Eigen::MatrixXd> G(p.size() - 1);
  for (std::size_t i = 0; i + 1 < p.size(); ++i) G[i] = B.apply(X.col(static_cast<Eigen::Index>(i)), L);
  const Eigen::MatrixXd gm =
      stochastic_integral([&G](std::size_t i) -> const Eigen::MatrixXd& { return G[i]; }, p, L);
  return additive_path_solve(graph, cfg, L, x0, p.times, gm);
}

/// Ratio of two sup_t mean distances; each sup is taken over the base grid
/// and the samples at the two argmax times enter the delta method paired.
inline Estimate sup_mean_ratio(const std::vector<std::vector<double>>& num, const std::vector<std::vector<double>>& den,
                               const std::vector<std::vector<std::size_t>>& base) {
  const std::size_t n = num.size();
  auto argmax = [&](const std::vector<std::vector<double>>& s) {
    std::size_t best = 0;
    double best_v = -1.0;
    for (std::size_t b = 0; b < base.front().size(); ++b) {
      double m = 0.0;
      for (std::size_t w = 0; w < n; ++w) m += s[w][base[w][b]];
      if (m > best_v) {
        best_v = m;
        best = b;
      }
    }
    return best;
  };
  const std::size_t bn = argmax(num), bd = argmax(den);
  std::vector<double> a(n), b(n);
  for (std::size_t w = 0; w < n; ++w) {
    a[w] = num[w][base[w][bn]];
    b[w] = den[w][base[w][bd]];
  }
  return estimate_ratio(a, b);
}

}  // namespace detail

/// Empirical contraction factor of Phi on [0, T0] for every T0 in the list:
/// X_1 is the noise-free solution, X_2 = X_1 + sum_{j<3} Z_j phi_j with
/// Z_j ~ N(0, 1) per path. The verdict covers the T0 values that satisfy the
/// small-time threshold for the exact Lipschitz constant and epsilon.
inline VerificationReport check_contraction(const MonotoneGraph& graph, const DiffusionCoefficient& B,
                                            const NoiseSpec& spec, const SolverConfig& cfg,
                                            const DirichletLaplacian& L, const Field& x0,
                                            std::span<const double> T0_list, std::size_t n_paths, std::uint64_t seed) {
  detail::Stopwatch sw;
  cfg.validate(graph);
  const double k = lipschitz_constant(B, spec, L);
  const double threshold = contraction_threshold(k, cfg.epsilon);
  VerificationReport r;
  r.name = "contraction";
  r.kind = CheckKind::Inequality;
  r.n_paths = n_paths;
  r.bound = 1.0;
  r.values = {{"lipschitz_k", k}, {"threshold_T0", threshold}};
  bool any_admissible = false;
  for (std::size_t t = 0; t < T0_list.size(); ++t) {
    const double T0 = T0_list[t];
    const double dt = std::min(cfg.dt, T0);
    const auto paths = sample_ensemble(spec, T0, dt, n_paths, stream_seed(seed, 1000 + t));
    std::vector<std::vector<double>> in(n_paths), out(n_paths);
    std::vector<std::vector<std::size_t>> base(n_paths);
    parallel_for(n_paths, [&](std::size_t w) {
      const auto& p = paths[w];
      const Trajectory x1 = deterministic_solve(graph, cfg, L, x0, p.times);
      std::mt19937_64 rng(stream_seed(seed, 2000000 + w));
      std::normal_distribution<double> normal(0.0, 1.0);
      Field bump = Field::Zero(static_cast<Eigen::Index>(L.size()));
      for (std::size_t j = 0; j < std::min<std::size_t>(3, L.size()); ++j) bump += normal(rng) * L.eigenvector(j);
      const Eigen::MatrixXd x2 = x1.X.colwise() + bump;
      const Trajectory y1 = detail::apply_phi(graph, B, cfg, L, x0, p, x1.X);
      const Trajectory y2 = detail::apply_phi(graph, B, cfg, L, x0, p, x2);
      in[w] = sq_distance_series(x1.X, x2, L);
      out[w] = sq_distance_series(y1.X, y2.X, L);
      base[w] = p.base_indices;
    });
    const Estimate f = detail::sup_mean_ratio(out, in, base);
    r.values.emplace_back("factor@" + std::to_string(t), f.mean);
    r.values.emplace_back("factor_se@" + std::to_string(t), f.std_error);
    if (T0 < threshold && (!any_admissible || f.mean + 3.0 * f.std_error > r.estimate + 3.0 * r.std_error)) {
      r.estimate = f.mean;
      r.std_error = f.std_error;
      any_admissible = true;
    }
  }
  if (!any_admissible) {
    r.estimate = std::numeric_limits<double>::quiet_NaN();
    r.detail = "no T0 below the small-time threshold";
  }
  return detail::finish(r, sw);
}

/// Lipschitz ratio mean sup_t |X(y1) - X(y2)|_{-1}^2 / |y1 - y2|_{-1}^2 of the
/// multiplicative solution map, measured on two independent ensembles. The
/// estimate is the relative spread of the two ratios, the bound 0.2.
inline VerificationReport check_lipschitz_map(const MonotoneGraph& graph, const DiffusionCoefficient& B,
                                              const NoiseSpec& spec, const SolverConfig& cfg,
                                              const DirichletLaplacian& L, const Field& y1, const Field& y2, double T,
                                              std::size_t n_paths, std::uint64_t seed) {
  detail::Stopwatch sw;
  const double den = norm_hminus1_sq(y1 - y2, L);
  auto ratio = [&](std::uint64_t s) {
    if (den == 0.0) return 0.0;
    const auto paths = sample_ensemble(spec, T, cfg.dt, n_paths, s);
    const PicardResult a = picard_solve(graph, B, spec, cfg, L, y1, paths);
    const PicardResult b = picard_solve(graph, B, spec, cfg, L, y2, paths);
    return ensemble_distance(a.trajectories, b.trajectories, paths, L).mean_sup.mean / den;
  };
  const double r1 = ratio(seed);
  const double r2 = ratio(stream_seed(seed, 99));
  VerificationReport r;
  r.name = "lipschitz_map";
  r.kind = CheckKind::Inequality;
  r.n_paths = n_paths;
  r.bound = 0.2;
  const double scale = std::max(std::abs(r1), std::abs(r2));
  r.estimate = scale == 0.0 ? 0.0 : std::abs(r1 - r2) / scale;
  r.values = {{"ratio_seed_a", r1}, {"ratio_seed_b", r2}};
  return detail::finish(r, sw);
}

// ---------------------------------------------------------------------------
// Toolkit and geometry

/// Resolvent nonexpansivity, 1/lambda-Lipschitz Yosida, beta_lambda(r) in
/// beta(J_lambda r) and Fenchel-Young on random samples. The estimate is the
/// worst violation, the bound the tolerance.
inline VerificationReport check_monotone_toolkit(const MonotoneGraph& graph, std::size_t n_samples, std::uint64_t seed,
                                                 double tol = 1e-9) {
  detail::Stopwatch sw;
  std::mt19937_64 rng(stream_seed(seed, 11));
  std::uniform_real_distribution<double> point(-4.0, 4.0);
  std::uniform_real_distribution<double> loglam(std::log(1e-3), std::log(1.0));
  double worst_nonexp = 0.0, worst_lip = 0.0, worst_graph = 0.0, worst_fy = 0.0;
  for (std::size_t s = 0; s < n_samples; ++s) {
    const double lam = std::exp(loglam(rng));
    const double r1 = point(rng), r2 = point(rng);
    const double x1 = resolvent(graph, lam, r1), x2 = resolvent(graph, lam, r2);
    const double scale = 1.0 + std::abs(r1 - r2);
    worst_nonexp = std::max(worst_nonexp, (std::abs(x1 - x2) - std::abs(r1 - r2)) / scale);
    const double y1 = yosida(graph, lam, r1), y2 = yosida(graph, lam, r2);
    worst_lip = std::max(worst_lip, (lam * std::abs(y1 - y2) - std::abs(r1 - r2)) / scale);
    const Interval sec = graph.section(x1);
    worst_graph = std::max(worst_graph, (std::max(sec.lo - y1, y1 - sec.hi)) / (1.0 + std::abs(y1)));
    // Fenchel-Young: j(x) + j*(s) >= x s, with equality for s in beta(x).
    const double x = point(rng);
    const double sv = point(rng);
    const auto js = conjugate_jstar(graph, sv);
    if (js) worst_fy = std::max(worst_fy, (x * sv - potential_j(graph, x) - *js) / (1.0 + std::abs(x * sv)));
    const auto je = conjugate_jstar(graph, y1);
    if (je) {
      const double gap = potential_j(graph, x1) + *je - x1 * y1;
      worst_fy = std::max(worst_fy, std::abs(gap) / (1.0 + std::abs(x1 * y1)));
    } else {
      worst_fy = std::numeric_limits<double>::infinity();
    }
  }
  VerificationReport r;
  r.name = "monotone_toolkit:" + graph.name();
  r.kind = CheckKind::Inequality;
  r.n_paths = n_samples;
  r.bound = tol;
  r.estimate = std::max({worst_nonexp, worst_lip, worst_graph, worst_fy});
  r.values = {{"nonexpansive", worst_nonexp}, {"yosida_lipschitz", worst_lip}, {"graph", worst_graph},
              {"fenchel_young", worst_fy}};
  return detail::finish(r, sw);
}

/// Spectral identity |f|_{-1}^2 = sum mu_j^{-1} <f, phi_j>^2, mollifier
/// contraction and strict decrease of |Lambda_n f - f|_{-1} along the levels.
/// The estimate is the count of failed sub-checks, the bound 0.
inline VerificationReport check_hminus1_geometry(const DirichletLaplacian& L, std::size_t n_fields, std::uint64_t seed,
                                                 std::span<const int> levels, double spectral_tol = 1e-8,
                                                 double contraction_tol = 1e-12) {
  detail::Stopwatch sw;
  std::mt19937_64 rng(stream_seed(seed, 12));
  double worst_spectral = 0.0, worst_contraction = 0.0;
  std::size_t failures = 0;
  const Eigen::VectorXd& mu = L.eigenvalues();
  for (std::size_t s = 0; s < n_fields; ++s) {
    const Field f = random_field(L.size(), rng);
    const Eigen::VectorXd c = L.coefficients(f);
    const double spectral = (c.array().square() / mu.array()).sum();
    const double direct = norm_hminus1_sq(f, L);
    const double rel = std::abs(spectral - direct) / std::max(direct, 1e-300);
    worst_spectral = std::max(worst_spectral, rel);
    if (rel > spectral_tol) ++failures;
    const double nf = norm_hminus1(f, L);
    double prev = std::numeric_limits<double>::infinity();
    for (int n : levels) {
      const Field m = mollify(f, n, L);
      const double excess = norm_hminus1(m, L) - nf;
      worst_contraction = std::max(worst_contraction, excess / std::max(nf, 1e-300));
      if (excess > contraction_tol * nf) ++failures;
      const double gap = norm_hminus1(m - f, L);
      if (!(gap < prev)) ++failures;
      prev = gap;
    }
  }
  VerificationReport r;
  r.name = "hminus1_geometry";
  r.kind = CheckKind::Inequality;
  r.n_paths = n_fields;
  r.bound = 0.0;
  r.estimate = static_cast<double>(failures);
  r.values = {{"spectral_rel_error", worst_spectral}, {"contraction_excess", worst_contraction}};
  return detail::finish(r, sw);
}

// ---------------------------------------------------------------------------
// Solver accuracy

/// Linear beta, zero noise, x = phi_1: max over grid points of
/// |X(t_n) - (1 + tau mu_1)^{-n} phi_1|_2 against 1e-10, and the observed
/// order log2(e(tau)/e(tau/2)) of the error against exp(-mu_1 T) phi_1.
inline VerificationReport check_linear_exactness(const DirichletLaplacian& L, double T, double dt,
                                                 double tol = 1e-10) {
  detail::Stopwatch sw;
  const MonotoneGraph graph = MonotoneGraph::linear(1.0);
  SolverConfig cfg;
  cfg.lambda = 0.0;
  const Field phi = L.eigenvector(0);
  const double mu = L.eigenvalues()[0];
  auto run = [&](double tau, double& exact_err) {
    cfg.dt = tau;
    const auto times = uniform_times(T, tau);
    const Trajectory tr = deterministic_solve(graph, cfg, L, phi, times);
    exact_err = 0.0;
    for (std::size_t n = 0; n < tr.size(); ++n) {
      const Field ref = std::pow(1.0 + tau * mu, -static_cast<double>(n)) * phi;
      exact_err = std::max(exact_err, std::sqrt(inner_l2(tr.state(n) - ref, tr.state(n) - ref, L.grid())));
    }
    const Field last = tr.state(tr.size() - 1) - std::exp(-mu * T) * phi;
    return std::sqrt(inner_l2(last, last, L.grid()));
  };
  double ex1 = 0.0, ex2 = 0.0;
  const double e1 = run(dt, ex1);
  const double e2 = run(0.5 * dt, ex2);
  const double order = std::log2(e1 / e2);
  VerificationReport r;
  r.name = "linear_exactness";
  r.kind = CheckKind::Inequality;
  r.n_paths = 1;
  r.estimate = std::max(ex1, ex2);
  r.bound = tol;
  r.values = {{"error_tau", e1}, {"error_half_tau", e2}, {"order", order}};
  r.detail = "order " + std::to_string(order);
  r.decide();
  if (!(std::abs(order - 1.0) <= 0.1)) r.pass = false;
  r.runtime_seconds = sw.seconds();
  return r;
}

/// R(T) of the discrete Ito formula on each path at steps tau and tau/2
/// (Brownian-bridge refinement of the same path). The estimate is the worst
/// |R(tau/2)/R(tau) - 1/2| / (1/2) over paths, the bound the relative band.
inline VerificationReport check_ito_order(const MonotoneGraph& graph, const SolverConfig& cfg,
                                          const DirichletLaplacian& L, const NoiseSpec& spec,
                                          const PiecewiseIntegrand& G, const Field& x0, double T, std::size_t n_paths,
                                          std::uint64_t seed, double band = 0.3) {
  detail::Stopwatch sw;
  const auto coarse = sample_ensemble(spec, T, cfg.dt, n_paths, seed);
  std::vector<double> worst(n_paths, 0.0), r_coarse(n_paths), r_fine(n_paths);
  parallel_for(n_paths, [&](std::size_t w) {
    const MartingalePath fine = refine_path(coarse[w], spec, stream_seed(seed, 5000 + w), Refinement::BisectCells);
    auto residual = [&](const MartingalePath& p, double tau) {
      SolverConfig c = cfg;
      c.dt = tau;
      const Eigen::MatrixXd gm = stochastic_integral(G.on(p), p, L);
      const std::vector<double> qv = realized_qv(G.on(p), p, spec, L);
      const Trajectory tr = additive_path_solve(graph, c, L, x0, p.times, gm);
      return ito_residual(tr, gm, qv, L).back();
    };
    r_coarse[w] = residual(coarse[w], cfg.dt);
    r_fine[w] = residual(fine, 0.5 * cfg.dt);
    const double q = r_coarse[w] != 0.0 ? r_fine[w] / r_coarse[w] : std::numeric_limits<double>::infinity();
    worst[w] = std::abs(q - 0.5) / 0.5;
  });
  VerificationReport r;
  r.name = "ito_order:" + graph.name();
  r.kind = CheckKind::Inequality;
  r.n_paths = n_paths;
  r.bound = band;
  r.estimate = detail::sup_of(worst);
  for (std::size_t w = 0; w < n_paths; ++w) {
    r.values.emplace_back("R_tau@" + std::to_string(w), r_coarse[w]);
    r.values.emplace_back("R_half@" + std::to_string(w), r_fine[w]);
  }
  return detail::finish(r, sw);
}

/// Yosida sweep on one path: the gap ratio stays within 2x of its value at
/// the largest lambda and d(lambda) decreases. Estimate is the number of
/// violated properties, the bound 0.
inline VerificationReport check_yosida_sweep(const MonotoneGraph& graph, const SolverConfig& cfg,
                                             const DirichletLaplacian& L, const Field& x0,
                                             std::span<const double> times, const Eigen::MatrixXd& gm,
                                             std::span<const double> lambdas) {
  detail::Stopwatch sw;
  const LambdaSweepReport rep = lambda_sweep(graph, cfg, L, x0, times, gm, lambdas);
  VerificationReport r;
  r.name = "yosida_sweep";
  r.kind = CheckKind::Inequality;
  r.n_paths = 1;
  r.bound = 0.0;
  r.estimate = (rep.ratio_bounded ? 0.0 : 1.0) + (rep.distances_decreasing ? 0.0 : 1.0);
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    r.values.emplace_back("distance@" + std::to_string(i), rep.rows[i].distance_to_half);
    r.values.emplace_back("gap_ratio@" + std::to_string(i), rep.rows[i].gap_ratio);
  }
  return detail::finish(r, sw);
}

// ---------------------------------------------------------------------------
// Multiplicative solver checks

/// picard_solve on T0-windows: every factor after the first iteration of a
/// window below 1 and the full horizon reached. Estimate is the largest
/// factor, bound 1.
inline VerificationReport check_picard_convergence(const MonotoneGraph& graph, const DiffusionCoefficient& B,
                                                   const NoiseSpec& spec, const SolverConfig& cfg,
                                                   const DirichletLaplacian& L, const Field& x0, double T,
                                                   std::size_t n_paths, std::uint64_t seed) {
  detail::Stopwatch sw;
  const auto paths = sample_ensemble(spec, T, cfg.dt, n_paths, seed);
  VerificationReport r;
  r.name = "picard_convergence";
  r.kind = CheckKind::Inequality;
  r.n_paths = n_paths;
  r.bound = 1.0;
  try {
    const PicardResult res = picard_solve(graph, B, spec, cfg, L, x0, paths);
    double worst = 0.0;
    for (const auto& h : res.history)
      if (h.iteration > 1 && h.distance > 0.0) worst = std::max(worst, h.factor);
    r.estimate = worst;
    const double reached = res.trajectories.front().times.back();
    r.values = {{"windows", static_cast<double>(res.window_starts.size())},
                {"iterations", static_cast<double>(res.iterations)},
                {"window_T0", res.window_T0},
                {"lipschitz_k", res.lipschitz_k},
                {"final_time", reached}};
    r.decide();
    if (std::abs(reached - T) > 1e-9 * T) r.pass = false;
  } catch (const SolverError& e) {
    r.estimate = std::numeric_limits<double>::infinity();
    r.detail = e.what();
    r.pass = false;
  }
  r.runtime_seconds = sw.seconds();
  return r;
}

/// Mollified sequence for a rough coefficient: the number of consecutive
/// Cauchy distances that fail to decrease (bound 0).
inline VerificationReport check_generalized_cauchy(const MonotoneGraph& graph, const DiffusionCoefficient& B_rough,
                                                   const NoiseSpec& spec, const SolverConfig& cfg,
                                                   const DirichletLaplacian& L, const Field& x0, double T,
                                                   std::span<const int> levels, std::size_t n_paths,
                                                   std::uint64_t seed) {
  detail::Stopwatch sw;
  const auto paths = sample_ensemble(spec, T, cfg.dt, n_paths, seed);
  const GeneralizedResult g = generalized_solve(graph, B_rough, spec, cfg, L, x0, paths, levels);
  VerificationReport r;
  r.name = "generalized_cauchy";
  r.kind = CheckKind::Inequality;
  r.n_paths = n_paths;
  r.bound = 0.0;
  double violations = 0.0;
  for (std::size_t i = 0; i < g.cauchy.size(); ++i) {
    const auto& c = g.cauchy[i];
    r.values.emplace_back("H2@" + std::to_string(c.level_from) + "-" + std::to_string(c.level_to),
                          c.distance.sup_mean.mean);
    r.values.emplace_back("sup@" + std::to_string(c.level_from) + "-" + std::to_string(c.level_to),
                          c.distance.mean_sup.mean);
    if (i > 0 && !(c.distance.sup_mean.mean < g.cauchy[i - 1].distance.sup_mean.mean)) violations += 1.0;
  }
  r.estimate = violations;
  return detail::finish(r, sw);
}

/// For a smooth B: E |X(T)|_{-1}^2 of the finest mollified solve against
/// the unmollified solve on an independent ensemble (identity, unpaired SE).
inline VerificationReport check_generalized_consistency(const MonotoneGraph& graph, const DiffusionCoefficient& B,
                                                        const NoiseSpec& spec, const SolverConfig& cfg,
                                                        const DirichletLaplacian& L, const Field& x0, double T,
                                                        std::span<const int> levels, std::size_t n_paths,
                                                        std::uint64_t seed) {
  detail::Stopwatch sw;
  auto final_norms = [&](const PicardResult& res) {
    std::vector<double> v(res.trajectories.size());
    for (std::size_t w = 0; w < v.size(); ++w) {
      const auto& X = res.trajectories[w].X;
      v[w] = norm_hminus1_sq(X.col(X.cols() - 1), L);
    }
    return estimate_mean(v);
  };
  const auto p1 = sample_ensemble(spec, T, cfg.dt, n_paths, seed);
  const auto p2 = sample_ensemble(spec, T, cfg.dt, n_paths, stream_seed(seed, 77));
  const GeneralizedResult g = generalized_solve(graph, B, spec, cfg, L, x0, p1, levels);
  const PicardResult direct = picard_solve(graph, B, spec, cfg, L, x0, p2);
  const Estimate a = final_norms(g.finest), b = final_norms(direct);
  VerificationReport r;
  r.name = "generalized_consistency";
  r.kind = CheckKind::Identity;
  r.n_paths = n_paths;
  r.estimate = a.mean;
  r.bound = b.mean;
  r.std_error = std::hypot(a.std_error, b.std_error);
  r.values = {{"mollified_se", a.std_error}, {"direct_se", b.std_error}};
  return detail::finish(r, sw);
}

}  // namespace spm
