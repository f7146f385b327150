#pragma once

// Pathwise solvers for dX - Delta beta(X) dt = B(X(t-)) dM.
//
// Additive noise: with y = X - G.M the Yosida-regularized equation becomes
// the random-coefficient PDE y' = Delta betatilde_lambda(y + G.M),
// betatilde_lambda(r) = beta_lambda(r) + lambda r, integrated by backward
// Euler on the path's grid (jump times included). Multiplicative noise is
// handled by Picard iteration X -> Phi(X) with the frozen predictable
// integrand B(X(t-)), on time windows short enough for Phi to contract.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "spm/domain.hpp"
#include "spm/error.hpp"
#include "spm/monotone.hpp"
#include "spm/noise.hpp"
#include "spm/parallel.hpp"
#include "spm/stats.hpp"

namespace spm {

struct SolverConfig {
  double lambda = 1e-3;  // Yosida parameter; 0 only for globally Lipschitz beta
  double dt = 0.01;      // base time step
  double newton_tol = 1e-10;
  int newton_max_iter = 50;
  int max_step_halvings = 8;
  double picard_tol = 1e-14;  // on sup_t mean |X^{k+1} - X^k|_{-1}^2
  int picard_max_iter = 60;
  double epsilon = 1.0 / 12.0;
  std::optional<double> window_T0;  // fixed window length
  bool auto_window = false;         // window from the small-time threshold
  bool allow_bounded_range = false;

  void validate(const MonotoneGraph& graph) const {
    if (!(dt > 0.0)) throw std::invalid_argument("SolverConfig: dt must be > 0");
    if (!(epsilon > 0.0 && epsilon < 1.0 / 6.0))
      throw std::invalid_argument("SolverConfig: epsilon must lie in (0, 1/6)");
    if (!(lambda >= 0.0)) throw std::invalid_argument("SolverConfig: lambda must be >= 0");
    if (lambda == 0.0 && !graph.globally_lipschitz())
      throw std::invalid_argument("SolverConfig: lambda = 0 requires a globally Lipschitz single-valued beta");
    if (!graph.full_range() && !allow_bounded_range)
      throw std::invalid_argument("SolverConfig: " + graph.name() +
                                  " has bounded range; set allow_bounded_range to use it in a solver");
    if (!(newton_tol > 0.0) || newton_max_iter < 1) throw std::invalid_argument("SolverConfig: bad Newton settings");
    if (!(picard_tol > 0.0) || picard_max_iter < 1) throw std::invalid_argument("SolverConfig: bad Picard settings");
    if (window_T0 && !(*window_T0 > 0.0)) throw std::invalid_argument("SolverConfig: window_T0 must be > 0");
  }
};

/// T0 below which Phi contracts: (1 - 6 eps) / (1 + 6 / eps) / k.
inline double contraction_threshold(double k, double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 1.0 / 6.0)) throw std::invalid_argument("contraction_threshold: epsilon in (0, 1/6)");
  if (k <= 0.0) return std::numeric_limits<double>::infinity();
  return (1.0 - 6.0 * epsilon) / (1.0 + 6.0 / epsilon) / k;
}

/// betatilde_lambda and its primitive; lambda = 0 evaluates beta itself.
class RegularizedDrift {
 public:
  RegularizedDrift(MonotoneGraph graph, double lambda) : graph_(std::move(graph)), lambda_(lambda) {
    if (lambda_ < 0.0) throw std::invalid_argument("RegularizedDrift: lambda must be >= 0");
    if (lambda_ == 0.0 && !graph_.globally_lipschitz())
      throw std::invalid_argument("RegularizedDrift: lambda = 0 requires a Lipschitz single-valued beta");
  }

  double lambda() const noexcept { return lambda_; }
  const MonotoneGraph& graph() const noexcept { return graph_; }

  /// eta = beta_lambda(r).
  double selection(double r) const {
    if (lambda_ == 0.0) return graph_.section(r).lo;
    return yosida(graph_, lambda_, r);
  }

  double value(double r) const { return selection(r) + lambda_ * r; }

  /// value and slope from a single resolvent evaluation.
  std::pair<double, double> value_and_slope(double r) const {
    if (lambda_ == 0.0) return {graph_.section(r).lo, graph_.slope(r)};
    const double x = resolvent(graph_, lambda_, r);
    return {detail::yosida_at(graph_, lambda_, r, x) + lambda_ * r,
            detail::yosida_slope_at(graph_, lambda_, r, x) + lambda_};
  }

  /// Primitive of value(): Moreau envelope plus lambda r^2 / 2.
  double potential(double r) const {
    if (lambda_ == 0.0) return potential_j(graph_, r);
    return moreau_envelope(graph_, lambda_, r) + 0.5 * lambda_ * r * r;
  }

 private:
  MonotoneGraph graph_;
  double lambda_;
};

struct NewtonOptions {
  double tol = 1e-10;
  int max_iter = 50;
  int max_halvings = 8;
};

struct StepResult {
  Field y;
  Field eta;    // beta_lambda(y + g_next)
  Field drift;  // effective betatilde over the step: y - rhs = tau Delta drift + residual
  int newton_iterations = 0;
  int halvings = 0;
  double residual = 0.0;  // |F(y)|_{-1} of the last Newton solve
};

/// Backward Euler step y - tau Delta betatilde(y + g) = rhs by damped Newton.
///
/// With z = y + g the residual F = z - (rhs + g) + tau A betatilde(z),
/// A = -Delta_h, is the H^{-1} gradient of the strictly convex functional
/// 1/2 |z - rhs - g|_{-1}^2 + tau int Jtilde(z); Newton steps are
/// backtracked on that functional. The Jacobian system I + tau A D is solved
/// in the SPD form (D^{-1} + tau A) u = -F, delta = D^{-1} u, where D is the
/// diagonal of slopes (>= lambda > 0, or beta' > 0 when lambda = 0).
/// A stepper owns factorization workspace and is not shareable across threads.
class ImplicitStepper {
 public:
  ImplicitStepper(const MonotoneGraph& graph, double lambda, const DirichletLaplacian& L, NewtonOptions options = {})
      : drift_(graph, lambda), L_(L), opt_(options) {
    solver_.analyzePattern(L_.stiffness());
  }

  const RegularizedDrift& drift() const noexcept { return drift_; }

  StepResult step(double tau, const Field& rhs, const Field& g_next) {
    if (!(tau > 0.0)) throw std::invalid_argument("implicit_step: tau must be > 0");
    detail::require_size(rhs, L_.size(), "implicit_step rhs");
    detail::require_size(g_next, L_.size(), "implicit_step g_next");
    double last_residual = 0.0;
    for (int level = 0; level <= opt_.max_halvings; ++level) {
      const int pieces = 1 << level;
      const double sub = tau / pieces;
      Field y = rhs;
      Field drift_sum = Field::Zero(rhs.size());
      StepResult out;
      bool ok = true;
      for (int p = 0; p < pieces && ok; ++p) {
        Field next;
        int iters = 0;
        double res = 0.0;
        ok = newton(sub, y, g_next, next, iters, res);
        if (!ok && L_.size() == 1) ok = scalar_bisection(sub, y, g_next, next, res);
        out.newton_iterations += iters;
        last_residual = res;
        if (!ok) break;
        y = std::move(next);
        drift_sum += values(y + g_next);
        out.residual = std::max(out.residual, res);
      }
      if (!ok) continue;
      const Field z = y + g_next;
      out.eta = z.unaryExpr([this](double r) { return drift_.selection(r); });
      out.drift = drift_sum / static_cast<double>(pieces);
      out.y = std::move(y);
      out.halvings = level;
      require_finite(out.y, "implicit_step");
      return out;
    }
    std::ostringstream msg;
    msg << "implicit_step: Newton failed to reach tolerance " << opt_.tol << " (residual " << last_residual
        << ") after " << opt_.max_halvings << " step halvings, tau = " << tau;
    throw SolverError(msg.str());
  }

 private:
  Field values(const Field& z) const {
    return z.unaryExpr([this](double r) { return drift_.value(r); });
  }

  Field residual(double tau, const Field& z, const Field& b) const { return z - b + tau * (L_.stiffness() * values(z)); }

  double merit(double tau, const Field& z, const Field& b) const {
    double pot = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) pot += drift_.potential(z[i]);
    return 0.5 * norm_hminus1_sq(z - b, L_) + tau * L_.grid().cell_volume() * pot;
  }

  bool newton(double tau, const Field& rhs, const Field& g, Field& y_out, int& iters, double& res) {
    const Field b = rhs + g;
    const double scale = 1.0 + norm_hminus1(rhs, L_);
    const double target = opt_.tol * scale;
    const auto N = static_cast<Eigen::Index>(L_.size());
    Field z = b;
    Field F = residual(tau, z, b);
    res = norm_hminus1(F, L_);
    Field slopes(N);
    for (iters = 0; iters < opt_.max_iter; ++iters) {
      if (!std::isfinite(res)) return false;
      if (res <= target) {
        y_out = z - g;
        return true;
      }
      for (Eigen::Index i = 0; i < N; ++i) slopes[i] = drift_.value_and_slope(z[i]).second;
      Eigen::SparseMatrix<double> M = tau * L_.stiffness();
      for (Eigen::Index i = 0; i < N; ++i) M.coeffRef(i, i) += 1.0 / slopes[i];
      solver_.factorize(M);
      if (solver_.info() != Eigen::Success) return false;
      const Field u = solver_.solve(-F);
      const Field delta = u.cwiseQuotient(slopes);
      const double descent = inner_l2(L_.solve(F), delta, L_.grid());
      double alpha = 1.0;
      bool accepted = false;
      // The merit is convex with gradient A^{-1} F, so Armijo on it rules out
      // cycling; residual decrease only decides ties within roundoff.
      const double merit0 = merit(tau, z, b);
      const double noise_floor = 1e-13 * (std::abs(merit0) + 1e-300);
      Field z_try, F_try;
      double res_try = 0.0;
      for (int ls = 0; ls < 50; ++ls) {
        z_try = z + alpha * delta;
        F_try = residual(tau, z_try, b);
        res_try = norm_hminus1(F_try, L_);
        if (std::isfinite(res_try)) {
          const double m = merit(tau, z_try, b);
          if (m <= merit0 + 1e-4 * alpha * descent ||
              (m <= merit0 + noise_floor && res_try <= (1.0 - 1e-4 * alpha) * res)) {
            accepted = true;
            break;
          }
        }
        alpha *= 0.5;
      }
      if (!accepted) return false;
      z = std::move(z_try);
      F = std::move(F_try);
      res = res_try;
    }
    if (res <= target) {
      y_out = z - g;
      return true;
    }
    return false;
  }

  // Single node: y + tau mu betatilde(y + g) = rhs is scalar and increasing.
  bool scalar_bisection(double tau, const Field& rhs, const Field& g, Field& y_out, double& res) const {
    const double mu = L_.stiffness().coeff(0, 0);
    auto h = [&](double y) { return y + tau * mu * drift_.value(y + g[0]) - rhs[0]; };
    double lo = rhs[0] - 1.0, hi = rhs[0] + 1.0;
    for (int i = 0; i < 200 && h(lo) > 0.0; ++i) lo -= 2.0 * (hi - lo);
    for (int i = 0; i < 200 && h(hi) < 0.0; ++i) hi += 2.0 * (hi - lo);
    for (int i = 0; i < 200 && hi - lo > 1e-15 * std::max(1.0, std::abs(hi)); ++i) {
      const double mid = 0.5 * (lo + hi);
      (h(mid) > 0.0 ? hi : lo) = mid;
    }
    y_out = Field::Constant(1, 0.5 * (lo + hi));
    res = norm_hminus1(residual(tau, y_out + g, rhs + g), L_);
    return res <= opt_.tol * (1.0 + norm_hminus1(rhs, L_));
  }

  RegularizedDrift drift_;
  DirichletLaplacian L_;
  NewtonOptions opt_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver_;
};

inline NewtonOptions newton_options(const SolverConfig& cfg) {
  return {cfg.newton_tol, cfg.newton_max_iter, cfg.max_step_halvings};
}

inline StepResult implicit_step(const MonotoneGraph& graph, double lambda, const DirichletLaplacian& L, double tau,
                                const Field& rhs, const Field& g_next, NewtonOptions options = {}) {
  ImplicitStepper stepper(graph, lambda, L, options);
  return stepper.step(tau, rhs, g_next);
}

/// Solution on a path grid: X(t_i), eta(t_i) = beta_lambda(X(t_i)) and the
/// effective drift (betatilde_lambda(X(t_i)) unless a step was subdivided).
struct Trajectory {
  std::vector<double> times;
  double lambda = 0.0;
  Eigen::MatrixXd X;      // N x Nt
  Eigen::MatrixXd eta;    // N x Nt
  Eigen::MatrixXd drift;  // N x Nt; column 0 unused by the integral identity
  int newton_iterations = 0;
  int halvings = 0;
  double max_step_residual = 0.0;

  std::size_t size() const noexcept { return times.size(); }
  Field state(std::size_t i) const { return X.col(static_cast<Eigen::Index>(i)); }
};

/// Marches y^{n+1} = implicit_step(rhs = y^n, g_next = gm(t_{n+1})) and
/// returns X = y + gm. gm must have one column per time with gm(t_0) = 0.
inline Trajectory additive_path_solve(const MonotoneGraph& graph, const SolverConfig& cfg, const DirichletLaplacian& L,
                                      const Field& x0, std::span<const double> times, const Eigen::MatrixXd& gm) {
  cfg.validate(graph);
  detail::require_size(x0, L.size(), "additive_path_solve x0");
  require_finite(x0, "additive_path_solve x0");
  const auto Nt = static_cast<Eigen::Index>(times.size());
  if (Nt < 1 || gm.cols() != Nt || gm.rows() != static_cast<Eigen::Index>(L.size()))
    throw std::invalid_argument("additive_path_solve: gm must be N x (number of times)");
  ImplicitStepper stepper(graph, cfg.lambda, L, newton_options(cfg));
  Trajectory tr;
  tr.times.assign(times.begin(), times.end());
  tr.lambda = cfg.lambda;
  const auto N = static_cast<Eigen::Index>(L.size());
  tr.X.resize(N, Nt);
  tr.eta.resize(N, Nt);
  tr.drift.resize(N, Nt);
  const Field start = x0 + gm.col(0);
  tr.X.col(0) = start;
  tr.eta.col(0) = start.unaryExpr([&](double r) { return stepper.drift().selection(r); });
  tr.drift.col(0) = start.unaryExpr([&](double r) { return stepper.drift().value(r); });
  Field y = x0;
  for (Eigen::Index i = 1; i < Nt; ++i) {
    const double tau = times[static_cast<std::size_t>(i)] - times[static_cast<std::size_t>(i - 1)];
    StepResult s = stepper.step(tau, y, gm.col(i));
    y = std::move(s.y);
    tr.X.col(i) = y + gm.col(i);
    tr.eta.col(i) = s.eta;
    tr.drift.col(i) = s.drift;
    tr.newton_iterations += s.newton_iterations;
    tr.halvings += s.halvings;
    tr.max_step_residual = std::max(tr.max_step_residual, s.residual);
  }
  return tr;
}

/// Noise-free solve on a time grid.
inline Trajectory deterministic_solve(const MonotoneGraph& graph, const SolverConfig& cfg, const DirichletLaplacian& L,
                                      const Field& x0, std::span<const double> times) {
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(L.size()),
                                                     static_cast<Eigen::Index>(times.size()));
  return additive_path_solve(graph, cfg, L, x0, times, zero);
}

/// Uniform grid 0, dt, ..., T.
inline std::vector<double> uniform_times(double T, double dt) { return detail::base_times(T, dt); }

/// |X(t_i) - x - Delta sum_{j<=i} drift(t_j) tau_j - gm(t_i)|_{-1}, per grid point.
inline std::vector<double> identity_residuals(const Trajectory& tr, const Field& x0, const Eigen::MatrixXd& gm,
                                              const DirichletLaplacian& L) {
  const std::size_t Nt = tr.size();
  std::vector<double> out(Nt, 0.0);
  Field acc = Field::Zero(static_cast<Eigen::Index>(L.size()));
  for (std::size_t i = 0; i < Nt; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    if (i > 0) acc += (tr.times[i] - tr.times[i - 1]) * tr.drift.col(ii);
    const Field r = tr.X.col(ii) + L.stiffness() * acc - x0 - gm.col(ii);
    out[i] = norm_hminus1(r, L);
  }
  return out;
}

struct AprioriQuantities {
  double potential_integral = 0.0;  // int_{Q_T} j(z_lambda) + j*(eta_lambda)
  double gap_integral = 0.0;        // int_{Q_T} |X_lambda - z_lambda|^2
};

struct TrajectoryDiagnostics {
  std::vector<double> norm_hminus1;    // |X(t_i)|_{-1}
  std::vector<double> integral_j;      // int j(X(t_i))
  std::vector<double> integral_jstar;  // int j*(eta(t_i)); +inf when outside the domain
  std::vector<double> dissipation;     // <X(t_i), eta(t_i)>_2
  AprioriQuantities apriori;
};

/// z_lambda = resolvent(X) nodewise (X itself when lambda = 0).
inline Eigen::MatrixXd resolvent_field(const Trajectory& tr, const MonotoneGraph& graph) {
  if (tr.lambda == 0.0) return tr.X;
  return tr.X.unaryExpr([&](double r) { return resolvent(graph, tr.lambda, r); });
}

/// Time integrals use the right-point rule of the backward Euler grid.
inline AprioriQuantities apriori_quantities(const Trajectory& tr, const MonotoneGraph& graph, const DirichletLaplacian& L) {
  const double w = L.grid().cell_volume();
  const Eigen::MatrixXd z = resolvent_field(tr, graph);
  AprioriQuantities q;
  for (std::size_t i = 1; i < tr.size(); ++i) {
    const double tau = tr.times[i] - tr.times[i - 1];
    const auto ii = static_cast<Eigen::Index>(i);
    double pot = 0.0, gap = 0.0;
    for (Eigen::Index n = 0; n < z.rows(); ++n) {
      const double zn = z(n, ii);
      const double eta = tr.eta(n, ii);
      const auto js = conjugate_jstar(graph, eta);
      pot += potential_j(graph, zn) + (js ? *js : std::numeric_limits<double>::infinity());
      gap += (tr.X(n, ii) - zn) * (tr.X(n, ii) - zn);
    }
    q.potential_integral += tau * w * pot;
    q.gap_integral += tau * w * gap;
  }
  return q;
}

inline TrajectoryDiagnostics diagnose(const Trajectory& tr, const MonotoneGraph& graph, const DirichletLaplacian& L) {
  TrajectoryDiagnostics d;
  const double w = L.grid().cell_volume();
  for (std::size_t i = 0; i < tr.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    d.norm_hminus1.push_back(norm_hminus1(tr.X.col(ii), L));
    double j = 0.0, js = 0.0;
    for (Eigen::Index n = 0; n < tr.X.rows(); ++n) {
      j += potential_j(graph, tr.X(n, ii));
      const auto c = conjugate_jstar(graph, tr.eta(n, ii));
      js += c ? *c : std::numeric_limits<double>::infinity();
    }
    d.integral_j.push_back(w * j);
    d.integral_jstar.push_back(w * js);
    d.dissipation.push_back(inner_l2(tr.X.col(ii), tr.eta.col(ii), L.grid()));
  }
  d.apriori = apriori_quantities(tr, graph, L);
  return d;
}

/// Discrete Ito residual for the squared H^{-1} norm:
/// R(t_i) = |Y(t_i)|^2 - |Y(0)|^2 + 2 sum <Y, drift>_2 tau
///          - 2 sum <Y(t-), Delta(G.M)>_{-1} - [G.M](t_i).
/// The drift is betatilde_lambda, the one the regularized equation integrates.
inline std::vector<double> ito_residual(const Trajectory& tr, const Eigen::MatrixXd& gm, std::span<const double> qv,
                                        const DirichletLaplacian& L) {
  const std::size_t Nt = tr.size();
  if (static_cast<std::size_t>(gm.cols()) != Nt || qv.size() != Nt)
    throw std::invalid_argument("ito_residual: gm / qv must match the trajectory grid");
  std::vector<double> R(Nt, 0.0);
  const double y0 = norm_hminus1_sq(tr.X.col(0), L);
  double drift_sum = 0.0, mart_sum = 0.0;
  for (std::size_t i = 1; i < Nt; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const double tau = tr.times[i] - tr.times[i - 1];
    drift_sum += tau * inner_l2(tr.X.col(ii), tr.drift.col(ii), L.grid());
    mart_sum += inner_hminus1(tr.X.col(ii - 1), gm.col(ii) - gm.col(ii - 1), L);
    R[i] = norm_hminus1_sq(tr.X.col(ii), L) - y0 + 2.0 * drift_sum - 2.0 * mart_sum - qv[i];
  }
  return R;
}

// ---------------------------------------------------------------------------
// Yosida sweep

struct LambdaSweepRow {
  double lambda = 0.0;
  double distance_to_half = 0.0;  // sup_i |X_lambda - X_{lambda/2}|_{-1}
  double gap_integral = 0.0;      // int |X_lambda - z_lambda|^2
  double gap_ratio = 0.0;         // gap_integral / lambda
  double potential_integral = 0.0;
};

struct LambdaSweepReport {
  std::vector<LambdaSweepRow> rows;
  bool ratio_bounded = false;         // every gap_ratio <= 2 x the one at the largest lambda
  bool distances_decreasing = false;  // distance_to_half strictly decreasing along the sweep
};

inline LambdaSweepReport lambda_sweep(const MonotoneGraph& graph, const SolverConfig& cfg, const DirichletLaplacian& L,
                                      const Field& x0, std::span<const double> times, const Eigen::MatrixXd& gm,
                                      std::span<const double> lambdas) {
  if (lambdas.empty()) throw std::invalid_argument("lambda_sweep: empty lambda list");
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    if (!(lambdas[i] > 0.0)) throw std::invalid_argument("lambda_sweep: lambdas must be positive");
    if (i > 0 && !(lambdas[i] < lambdas[i - 1])) throw std::invalid_argument("lambda_sweep: lambdas must decrease");
  }
  std::map<double, Trajectory> cache;
  auto solve = [&](double lam) -> const Trajectory& {
    auto it = cache.find(lam);
    if (it != cache.end()) return it->second;
    SolverConfig c = cfg;
    c.lambda = lam;
    return cache.emplace(lam, additive_path_solve(graph, c, L, x0, times, gm)).first->second;
  };
  LambdaSweepReport rep;
  for (double lam : lambdas) {
    const Trajectory& a = solve(lam);
    const Trajectory& b = solve(0.5 * lam);
    LambdaSweepRow row;
    row.lambda = lam;
    for (std::size_t i = 0; i < a.size(); ++i)
      row.distance_to_half = std::max(row.distance_to_half,
                                      norm_hminus1(a.X.col(static_cast<Eigen::Index>(i)) - b.X.col(static_cast<Eigen::Index>(i)), L));
    const AprioriQuantities q = apriori_quantities(a, graph, L);
    row.gap_integral = q.gap_integral;
    row.gap_ratio = q.gap_integral / lam;
    row.potential_integral = q.potential_integral;
    rep.rows.push_back(row);
  }
  rep.ratio_bounded = true;
  rep.distances_decreasing = true;
  for (std::size_t i = 1; i < rep.rows.size(); ++i) {
    if (rep.rows[i].gap_ratio > 2.0 * rep.rows[0].gap_ratio) rep.ratio_bounded = false;
    if (!(rep.rows[i].distance_to_half < rep.rows[i - 1].distance_to_half)) rep.distances_decreasing = false;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Ensemble distances

/// |A(t_i) - B(t_i)|_{-1}^2 for every column.
inline std::vector<double> sq_distance_series(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                              const DirichletLaplacian& L) {
  if (A.rows() != B.rows() || A.cols() != B.cols()) throw std::invalid_argument("sq_distance_series: shape mismatch");
  const Eigen::MatrixXd D = A - B;
  Eigen::MatrixXd S(D.rows(), D.cols());
  for (Eigen::Index i = 0; i < D.cols(); ++i) S.col(i) = L.solve(D.col(i));
  std::vector<double> out(static_cast<std::size_t>(D.cols()));
  const double w = L.grid().cell_volume();
  for (Eigen::Index i = 0; i < D.cols(); ++i) out[static_cast<std::size_t>(i)] = std::max(0.0, w * S.col(i).dot(D.col(i)));
  return out;
}

/// Per-path squared-distance series reduced two ways: sup over the shared
/// base grid of the ensemble mean (the sup_t E|.|^2 norm), and the ensemble
/// mean of the sup over each path's full grid (the E sup_t |.|^2 norm).
struct EnsembleDistance {
  Estimate sup_mean;
  Estimate mean_sup;
};

inline EnsembleDistance reduce_distances(const std::vector<std::vector<double>>& series,
                                         const std::vector<std::vector<std::size_t>>& base_indices) {
  EnsembleDistance out;
  const std::size_t n = series.size();
  if (n == 0) return out;
  std::vector<double> sups(n);
  for (std::size_t w = 0; w < n; ++w) sups[w] = *std::max_element(series[w].begin(), series[w].end());
  out.mean_sup = estimate_mean(sups);
  const std::size_t nb = base_indices.front().size();
  std::vector<double> col(n);
  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t w = 0; w < n; ++w) col[w] = series[w][base_indices[w].at(b)];
    const Estimate e = estimate_mean(col);
    if (b == 0 || e.mean > out.sup_mean.mean) out.sup_mean = e;
  }
  return out;
}

inline EnsembleDistance ensemble_distance(std::span<const Trajectory> a, std::span<const Trajectory> b,
                                          std::span<const MartingalePath> paths, const DirichletLaplacian& L) {
  if (a.size() != b.size() || a.size() != paths.size()) throw std::invalid_argument("ensemble_distance: size mismatch");
  std::vector<std::vector<double>> series(a.size());
  std::vector<std::vector<std::size_t>> base(a.size());
  parallel_for(a.size(), [&](std::size_t w) { series[w] = sq_distance_series(a[w].X, b[w].X, L); });
  for (std::size_t w = 0; w < a.size(); ++w) base[w] = paths[w].base_indices;
  return reduce_distances(series, base);
}

// ---------------------------------------------------------------------------
// Picard iteration for multiplicative noise

struct PicardIteration {
  std::size_t window = 0;
  int iteration = 0;       // 1-based application count of Phi within the window
  double distance = 0.0;   // sup_t mean |X^{k} - X^{k-1}|_{-1}^2
  double factor = 0.0;     // distance / previous distance (0 on the first)
};

struct PicardResult {
  std::vector<Trajectory> trajectories;
  std::vector<Eigen::MatrixXd> noise_integrals;  // B(X(t-)).M on each path's grid
  std::vector<PicardIteration> history;
  std::vector<double> window_starts;
  double lipschitz_k = 0.0;
  double window_T0 = 0.0;  // length of the first window; final time when unwindowed
  int iterations = 0;      // Phi applications summed over windows
  std::vector<int> window_iterations;
};

namespace detail {

inline std::size_t base_steps_per_window(double T0, double base_dt) {
  return static_cast<std::size_t>(std::max(1.0, std::floor(T0 / base_dt + 1e-9)));
}

}  // namespace detail

/// Fixed point of Phi: X -> solution of the additive equation driven by
/// B(X(t-)).M, computed on consecutive windows of the base grid. The first
/// iterate is the noise-free solution from the window's initial datum.
/// Convergence is declared when sup_t mean |X^{k+1} - X^k|_{-1}^2 <
/// picard_tol; three consecutive non-contracting iterations raise.
inline PicardResult picard_solve(const MonotoneGraph& graph, const DiffusionCoefficient& B, const NoiseSpec& spec,
                                 const SolverConfig& cfg, const DirichletLaplacian& L, const Field& x0,
                                 std::span<const MartingalePath> paths) {
  cfg.validate(graph);
  if (paths.empty()) throw std::invalid_argument("picard_solve: empty ensemble");
  if (B.n_modes() != spec.n_modes()) throw std::invalid_argument("picard_solve: B and noise mode counts differ");
  const std::size_t n = paths.size();
  const std::size_t n_base = paths.front().base_indices.size();
  for (const auto& p : paths)
    if (p.base_indices.size() != n_base || p.n_modes() != spec.n_modes())
      throw std::invalid_argument("picard_solve: paths must share base grid and mode count");
  const double base_dt = paths.front().base_dt;
  const double T = paths.front().final_time();

  PicardResult res;
  res.lipschitz_k = lipschitz_constant(B, spec, L);
  double T0 = T;
  if (cfg.window_T0) T0 = std::min(T, *cfg.window_T0);
  else if (cfg.auto_window) T0 = std::min(T, contraction_threshold(res.lipschitz_k, cfg.epsilon));
  res.window_T0 = T0;

  const auto N = static_cast<Eigen::Index>(L.size());
  res.trajectories.resize(n);
  res.noise_integrals.resize(n);
  for (std::size_t w = 0; w < n; ++w) {
    auto& tr = res.trajectories[w];
    const auto Nt = static_cast<Eigen::Index>(paths[w].size());
    tr.times = paths[w].times;
    tr.lambda = cfg.lambda;
    tr.X.resize(N, Nt);
    tr.eta.resize(N, Nt);
    tr.drift.resize(N, Nt);
    res.noise_integrals[w] = Eigen::MatrixXd::Zero(N, Nt);
  }

  std::size_t base_start = 0;
  std::size_t window = 0;
  std::vector<Field> start(n, x0);
  while (base_start + 1 < n_base) {
    const std::size_t steps = detail::base_steps_per_window(T0, base_dt);
    const std::size_t base_end = std::min(n_base - 1, base_start + steps);
    res.window_starts.push_back(paths.front().times[paths.front().base_indices[base_start]]);

    std::vector<MartingalePath> local(n);
    std::vector<Trajectory> current(n), next(n);
    std::vector<Eigen::MatrixXd> gm(n);
    std::vector<std::vector<std::size_t>> local_base(n);
    parallel_for(n, [&](std::size_t w) {
      local[w] = slice_path(paths[w], paths[w].base_indices[base_start], paths[w].base_indices[base_end]);
      local_base[w] = local[w].base_indices;
      current[w] = deterministic_solve(graph, cfg, L, start[w], local[w].times);
    });

    double previous = 0.0;
    int bad_streak = 0;
    int k = 0;
    double max_factor = 0.0;
    bool converged = false;
    while (!converged) {
      if (k >= cfg.picard_max_iter) {
        std::ostringstream msg;
        msg << "picard_solve: no convergence after " << cfg.picard_max_iter << " iterations on window " << window
            << " (last distance " << previous << ")";
        throw SolverError(msg.str());
      }
      std::vector<std::vector<double>> series(n);
      parallel_for(n, [&](std::size_t w) {
        const auto& p = local[w];
        std::vector<Eigen::MatrixXd> G(p.size() > 0 ? p.size() - 1 : 0);
        for (std::size_t i = 0; i + 1 < p.size(); ++i) G[i] = B.apply(current[w].state(i), L);
        gm[w] = stochastic_integral([&G](std::size_t i) -> const Eigen::MatrixXd& { return G[i]; }, p, L);
        next[w] = additive_path_solve(graph, cfg, L, start[w], p.times, gm[w]);
        series[w] = sq_distance_series(next[w].X, current[w].X, L);
      });
      ++k;
      const double distance = reduce_distances(series, local_base).sup_mean.mean;
      const double factor = k == 1 || previous == 0.0 ? 0.0 : distance / previous;
      res.history.push_back({window, k, distance, factor});
      if (k > 1) max_factor = std::max(max_factor, factor);
      bad_streak = (k > 1 && factor >= 1.0) ? bad_streak + 1 : 0;
      if (bad_streak >= 3) {
        std::ostringstream msg;
        msg << "picard_solve: Phi is not contracting on window " << window << " (factor " << factor
            << " for 3 iterations); reduce window_T0 below " << contraction_threshold(res.lipschitz_k, cfg.epsilon);
        throw SolverError(msg.str());
      }
      std::swap(current, next);
      previous = distance;
      converged = distance < cfg.picard_tol;
    }
    res.iterations += k;
    res.window_iterations.push_back(k);

    for (std::size_t w = 0; w < n; ++w) {
      const auto first = static_cast<Eigen::Index>(paths[w].base_indices[base_start]);
      const auto cols = static_cast<Eigen::Index>(local[w].size());
      auto& tr = res.trajectories[w];
      tr.X.middleCols(first, cols) = current[w].X;
      tr.eta.middleCols(first, cols) = current[w].eta;
      if (base_start == 0) tr.drift.col(0) = current[w].drift.col(0);
      if (cols > 1) tr.drift.middleCols(first + 1, cols - 1) = current[w].drift.rightCols(cols - 1);
      tr.newton_iterations += current[w].newton_iterations;
      tr.halvings += current[w].halvings;
      tr.max_step_residual = std::max(tr.max_step_residual, current[w].max_step_residual);
      const Eigen::VectorXd offset = res.noise_integrals[w].col(first);
      res.noise_integrals[w].middleCols(first, cols) = gm[w].colwise() + offset;
      start[w] = current[w].state(local[w].size() - 1);
    }
    // The threshold is sufficient, not necessary: widen once contraction is comfortable.
    if (cfg.auto_window && !cfg.window_T0 && max_factor < 0.5) T0 = std::min(T, 10.0 * T0);
    base_start = base_end;
    ++window;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Generalized solutions

struct CauchyRow {
  int level_from = 0;
  int level_to = 0;
  EnsembleDistance distance;
};

struct GeneralizedResult {
  std::vector<int> levels;
  std::vector<CauchyRow> cauchy;
  bool cauchy_decreasing = true;  // consecutive sup_t mean distances strictly decrease
  PicardResult finest;
};

/// Solves with B_n = Lambda_n o B_rough for each level n and measures the
/// Cauchy distances between consecutive levels on the same ensemble.
inline GeneralizedResult generalized_solve(const MonotoneGraph& graph, const DiffusionCoefficient& B_rough,
                                           const NoiseSpec& spec, const SolverConfig& cfg, const DirichletLaplacian& L,
                                           const Field& x0, std::span<const MartingalePath> paths,
                                           std::span<const int> levels) {
  if (levels.empty()) throw std::invalid_argument("generalized_solve: empty level list");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (levels[i] < 1) throw std::invalid_argument("generalized_solve: levels must be >= 1");
    if (i > 0 && levels[i] <= levels[i - 1]) throw std::invalid_argument("generalized_solve: levels must increase");
  }
  GeneralizedResult out;
  out.levels.assign(levels.begin(), levels.end());
  PicardResult previous;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    PicardResult cur = picard_solve(graph, B_rough.mollified(levels[i]), spec, cfg, L, x0, paths);
    if (i > 0) {
      CauchyRow row{levels[i - 1], levels[i], ensemble_distance(previous.trajectories, cur.trajectories, paths, L)};
      if (!out.cauchy.empty() && !(row.distance.sup_mean.mean < out.cauchy.back().distance.sup_mean.mean))
        out.cauchy_decreasing = false;
      out.cauchy.push_back(row);
    }
    previous = std::move(cur);
  }
  out.finest = std::move(previous);
  return out;
}

}  // namespace spm
