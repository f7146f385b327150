#pragma once

// Subcommand pipelines behind the spmlab binary. Every pipeline reads an
// ExperimentConfig, writes CSV tables plus summary.txt into the output
// directory and returns a process exit code.

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "spm/config.hpp"
#include "spm/domain.hpp"
#include "spm/noise.hpp"
#include "spm/solver.hpp"
#include "spm/verify.hpp"

namespace spm {

enum ExitCode : int { exit_ok = 0, exit_check_failure = 1, exit_config_error = 2, exit_solver_error = 3 };

/// %.17g rendering used for every number in output files.
inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// CSV file with a provenance comment and a header row. Rows are buffered
/// and written on close.
class CsvWriter {
 public:
  CsvWriter(std::filesystem::path path, std::uint64_t hash, std::uint64_t seed, std::vector<std::string> columns)
      : path_(std::move(path)), columns_(columns.size()) {
    char buf[80];
    std::snprintf(buf, sizeof buf, "# config_hash=%016" PRIx64 " seed=%" PRIu64 "\n", hash, seed);
    out_ << buf;
    for (std::size_t i = 0; i < columns.size(); ++i) out_ << (i ? "," : "") << columns[i];
    out_ << '\n';
  }

  CsvWriter& row(const std::vector<std::string>& cells) {
    if (cells.size() != columns_) throw std::logic_error("CsvWriter: row width does not match header");
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
    return *this;
  }

  void close() {
    std::ofstream f(path_, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + path_.string());
    f << out_.str();
  }

 private:
  std::filesystem::path path_;
  std::size_t columns_;
  std::ostringstream out_;
};

/// key: value summary file.
class Summary {
 public:
  Summary(std::uint64_t hash, std::uint64_t seed, const std::string& command) {
    char buf[80];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, hash);
    add("command", command);
    add("config_hash", buf);
    add("seed", std::to_string(seed));
  }
  void add(const std::string& key, const std::string& value) { lines_ << key << ": " << value << '\n'; }
  void add(const std::string& key, double value) { add(key, fmt(value)); }
  std::string str() const { return lines_.str(); }
  void write(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + path.string());
    f << lines_.str();
  }

 private:
  std::ostringstream lines_;
};

/// Everything a pipeline needs, built once from the configuration.
struct Experiment {
  ExperimentConfig cfg;
  DirichletLaplacian L;
  DiffusionCoefficient B;
  Field x0;
  std::uint64_t hash;
  std::filesystem::path out;

  explicit Experiment(ExperimentConfig c)
      : cfg(std::move(c)),
        L(cfg.grid),
        B(cfg.diffusion_coefficient(L)),
        x0(cfg.initial.build(L)),
        hash(config_hash(cfg.document)),
        out(cfg.run.output_dir) {
    std::filesystem::create_directories(out);
  }

  std::uint64_t seed() const { return cfg.run.seed; }
  std::size_t n_paths() const { return cfg.run.n_paths; }

  CsvWriter csv(const std::string& file, std::vector<std::string> cols) const {
    return CsvWriter(out / file, hash, seed(), std::move(cols));
  }

  /// Deterministic integrand used by the additive pipelines: B at the initial datum.
  PiecewiseIntegrand additive_integrand() const { return PiecewiseIntegrand(B.apply(x0, L)); }

  /// Two-piece integrand: B(x0) on [0, T/2], B(x0) plus half-amplitude
  /// eigenvectors phi_{k+1} in column k afterwards.
  PiecewiseIntegrand piecewise_integrand() const {
    Eigen::MatrixXd g0 = B.apply(x0, L);
    Eigen::MatrixXd g1 = g0;
    for (Eigen::Index k = 0; k < g1.cols(); ++k)
      g1.col(k) += 0.5 * L.eigenvector(std::min<std::size_t>(static_cast<std::size_t>(k) + 1, L.size() - 1));
    return PiecewiseIntegrand({0.0, 0.5 * cfg.T}, {g0, g1});
  }

  /// The configured noise with every Wiener volatility set to zero.
  NoiseSpec jump_only_noise() const {
    std::vector<NoiseMode> m = cfg.noise.modes();
    for (auto& mode : m) mode.wiener_vol = 0.0;
    return NoiseSpec(std::move(m));
  }
};

namespace detail {

inline void write_trajectories(const Experiment& ex, const std::string& file, std::span<const Trajectory> trs) {
  auto csv = ex.csv(file, {"path", "time", "node", "x", "eta"});
  for (std::size_t w = 0; w < trs.size(); ++w) {
    const auto& tr = trs[w];
    for (std::size_t i = 0; i < tr.size(); ++i)
      for (Eigen::Index n = 0; n < tr.X.rows(); ++n)
        csv.row({std::to_string(w), fmt(tr.times[i]), std::to_string(n), fmt(tr.X(n, static_cast<Eigen::Index>(i))),
                 fmt(tr.eta(n, static_cast<Eigen::Index>(i)))});
  }
  csv.close();
}

struct PathDiagnostics {
  TrajectoryDiagnostics diag;
  std::vector<double> identity;
  std::vector<double> ito;
};

inline void write_diagnostics(const Experiment& ex, std::span<const PathDiagnostics> d, std::span<const Trajectory> trs) {
  auto csv = ex.csv("diagnostics.csv",
                    {"path", "time", "norm_hminus1", "integral_j", "integral_jstar", "dissipation", "identity_residual",
                     "ito_residual"});
  for (std::size_t w = 0; w < d.size(); ++w)
    for (std::size_t i = 0; i < trs[w].size(); ++i)
      csv.row({std::to_string(w), fmt(trs[w].times[i]), fmt(d[w].diag.norm_hminus1[i]), fmt(d[w].diag.integral_j[i]),
               fmt(d[w].diag.integral_jstar[i]), fmt(d[w].diag.dissipation[i]), fmt(d[w].identity[i]),
               fmt(d[w].ito[i])});
  csv.close();
}

template <class Integrand>
PathDiagnostics diagnostics_for(const Experiment& ex, const Trajectory& tr, const MartingalePath& p,
                                const Eigen::MatrixXd& gm, Integrand&& G) {
  PathDiagnostics d;
  d.diag = diagnose(tr, ex.cfg.graph, ex.L);
  d.identity = identity_residuals(tr, ex.x0, gm, ex.L);
  const std::vector<double> qv = realized_qv(G, p, ex.cfg.noise, ex.L);
  d.ito = ito_residual(tr, gm, qv, ex.L);
  return d;
}

inline void summarize(Summary& s, std::span<const PathDiagnostics> d, std::span<const Trajectory> trs) {
  double worst_identity = 0.0, worst_ito = 0.0, min_dissipation = 0.0, final_norm = 0.0;
  int newton = 0, halvings = 0;
  for (std::size_t w = 0; w < d.size(); ++w) {
    worst_identity = std::max(worst_identity, sup_of(d[w].identity));
    for (double r : d[w].ito) worst_ito = std::max(worst_ito, std::abs(r));
    for (double v : d[w].diag.dissipation) min_dissipation = std::min(min_dissipation, v);
    final_norm += d[w].diag.norm_hminus1.back() * d[w].diag.norm_hminus1.back();
    newton += trs[w].newton_iterations;
    halvings += trs[w].halvings;
  }
  s.add("paths", std::to_string(d.size()));
  s.add("mean_final_norm_hminus1_sq", final_norm / static_cast<double>(std::max<std::size_t>(1, d.size())));
  s.add("max_identity_residual", worst_identity);
  s.add("max_abs_ito_residual", worst_ito);
  s.add("min_dissipation", min_dissipation);
  s.add("newton_iterations", std::to_string(newton));
  s.add("step_halvings", std::to_string(halvings));
}

}  // namespace detail

inline int run_simulate_additive(const Experiment& ex, std::ostream& log) {
  const auto paths = sample_ensemble(ex.cfg.noise, ex.cfg.T, ex.cfg.solver.dt, ex.n_paths(), ex.seed());
  const PiecewiseIntegrand G = ex.additive_integrand();
  std::vector<Trajectory> trs(paths.size());
  std::vector<detail::PathDiagnostics> diag(paths.size());
  parallel_for(paths.size(), [&](std::size_t w) {
    const Eigen::MatrixXd gm = stochastic_integral(G.on(paths[w]), paths[w], ex.L);
    trs[w] = additive_path_solve(ex.cfg.graph, ex.cfg.solver, ex.L, ex.x0, paths[w].times, gm);
    diag[w] = detail::diagnostics_for(ex, trs[w], paths[w], gm, G.on(paths[w]));
  });
  detail::write_trajectories(ex, "trajectory.csv", trs);
  detail::write_diagnostics(ex, diag, trs);
  Summary s(ex.hash, ex.seed(), "simulate-additive");
  detail::summarize(s, diag, trs);
  s.write(ex.out / "summary.txt");
  log << s.str();
  return exit_ok;
}

inline int run_simulate_multiplicative(const Experiment& ex, std::ostream& log) {
  const auto paths = sample_ensemble(ex.cfg.noise, ex.cfg.T, ex.cfg.solver.dt, ex.n_paths(), ex.seed());
  const PicardResult res = picard_solve(ex.cfg.graph, ex.B, ex.cfg.noise, ex.cfg.solver, ex.L, ex.x0, paths);
  std::vector<detail::PathDiagnostics> diag(paths.size());
  parallel_for(paths.size(), [&](std::size_t w) {
    const auto& tr = res.trajectories[w];
    std::vector<Eigen::MatrixXd> G(tr.size());
    for (std::size_t i = 0; i < tr.size(); ++i) G[i] = ex.B.apply(tr.state(i), ex.L);
    diag[w] = detail::diagnostics_for(ex, tr, paths[w], res.noise_integrals[w],
                                      [&G](std::size_t i) -> const Eigen::MatrixXd& { return G[i]; });
  });
  detail::write_trajectories(ex, "trajectory.csv", res.trajectories);
  detail::write_diagnostics(ex, diag, res.trajectories);
  auto csv = ex.csv("picard.csv", {"window", "iteration", "distance", "factor"});
  for (const auto& h : res.history)
    csv.row({std::to_string(h.window), std::to_string(h.iteration), fmt(h.distance), fmt(h.factor)});
  csv.close();
  Summary s(ex.hash, ex.seed(), "simulate-multiplicative");
  detail::summarize(s, diag, res.trajectories);
  s.add("lipschitz_k", res.lipschitz_k);
  s.add("window_T0", res.window_T0);
  s.add("windows", std::to_string(res.window_starts.size()));
  s.add("picard_iterations", std::to_string(res.iterations));
  s.write(ex.out / "summary.txt");
  log << s.str();
  return exit_ok;
}

inline int run_generalized(const Experiment& ex, std::ostream& log) {
  const auto paths = sample_ensemble(ex.cfg.noise, ex.cfg.T, ex.cfg.solver.dt, ex.n_paths(), ex.seed());
  const auto& levels = ex.cfg.experiments.levels;
  const GeneralizedResult g = generalized_solve(ex.cfg.graph, ex.B, ex.cfg.noise, ex.cfg.solver, ex.L, ex.x0, paths, levels);
  auto csv = ex.csv("cauchy.csv", {"level_from", "level_to", "h2_distance", "h2_std_error", "sup_distance", "sup_std_error"});
  for (const auto& c : g.cauchy)
    csv.row({std::to_string(c.level_from), std::to_string(c.level_to), fmt(c.distance.sup_mean.mean),
             fmt(c.distance.sup_mean.std_error), fmt(c.distance.mean_sup.mean), fmt(c.distance.mean_sup.std_error)});
  csv.close();
  detail::write_trajectories(ex, "trajectory.csv", g.finest.trajectories);
  Summary s(ex.hash, ex.seed(), "generalized");
  s.add("levels", std::to_string(levels.size()));
  s.add("finest_level", std::to_string(levels.back()));
  s.add("cauchy_decreasing", g.cauchy.size() < 2 ? "n/a" : (g.cauchy_decreasing ? "yes" : "no"));
  s.write(ex.out / "summary.txt");
  log << s.str();
  return exit_ok;
}

inline int run_lambda_sweep(const Experiment& ex, std::ostream& log) {
  const MartingalePath p = sample_path(ex.cfg.noise, ex.cfg.T, ex.cfg.solver.dt, stream_seed(ex.seed(), 1));
  const PiecewiseIntegrand G = ex.additive_integrand();
  const Eigen::MatrixXd gm = stochastic_integral(G.on(p), p, ex.L);
  const LambdaSweepReport rep =
      lambda_sweep(ex.cfg.graph, ex.cfg.solver, ex.L, ex.x0, p.times, gm, ex.cfg.experiments.lambdas);
  auto csv = ex.csv("sweep.csv", {"lambda", "distance_to_half", "gap_integral", "gap_ratio", "potential_integral"});
  for (const auto& r : rep.rows)
    csv.row({fmt(r.lambda), fmt(r.distance_to_half), fmt(r.gap_integral), fmt(r.gap_ratio), fmt(r.potential_integral)});
  csv.close();
  Summary s(ex.hash, ex.seed(), "lambda-sweep");
  s.add("ratio_bounded", rep.ratio_bounded ? "yes" : "no");
  s.add("distances_decreasing", rep.distances_decreasing ? "yes" : "no");
  s.write(ex.out / "summary.txt");
  log << s.str();
  return exit_ok;
}

inline int run_mollify_demo(const Experiment& ex, std::ostream& log) {
  auto csv = ex.csv("mollify.csv", {"field", "level", "norm_hminus1", "norm_mollified", "distance_to_field"});
  std::vector<std::pair<std::string, Field>> fields{{"initial", ex.x0}};
  const Eigen::MatrixXd b = ex.B.apply(ex.x0, ex.L);
  for (Eigen::Index k = 0; k < b.cols(); ++k) fields.emplace_back("diffusion_mode_" + std::to_string(k), b.col(k));
  bool contracts = true, decreasing = true;
  for (const auto& [name, f] : fields) {
    const double nf = norm_hminus1(f, ex.L);
    double prev = std::numeric_limits<double>::infinity();
    for (int n : ex.cfg.experiments.mollify_levels) {
      const Field m = mollify(f, n, ex.L);
      const double nm = norm_hminus1(m, ex.L), dist = norm_hminus1(m - f, ex.L);
      if (nm > nf * (1.0 + 1e-12)) contracts = false;
      if (nf > 0.0 && !(dist < prev)) decreasing = false;
      prev = dist;
      csv.row({name, std::to_string(n), fmt(nf), fmt(nm), fmt(dist)});
    }
  }
  csv.close();
  Summary s(ex.hash, ex.seed(), "mollify-demo");
  s.add("contracts", contracts ? "yes" : "no");
  s.add("distance_decreasing", decreasing ? "yes" : "no");
  s.write(ex.out / "summary.txt");
  log << s.str();
  return exit_ok;
}

/// The full check suite on the configured model. Seeds of the individual
/// checks derive from the master seed.
inline std::vector<VerificationReport> verify_all(const Experiment& ex) {
  const auto& c = ex.cfg;
  const std::uint64_t seed = ex.seed();
  const std::size_t n = ex.n_paths();
  const std::size_t nn = c.experiments.noise_paths;
  auto sub = [&](std::uint64_t i) { return stream_seed(seed, 100 + i); };
  std::vector<VerificationReport> out;

  for (const MonotoneGraph& g : {MonotoneGraph::power_law(3.0), MonotoneGraph::linear(2.0), MonotoneGraph::signum(1.0),
                                 MonotoneGraph::stefan(1.0, 2.0, 0.5)})
    out.push_back(check_monotone_toolkit(g, 10000, sub(0)));
  out.push_back(check_hminus1_geometry(ex.L, 100, sub(1), c.experiments.mollify_levels));

  const PiecewiseIntegrand G = ex.additive_integrand();
  const PiecewiseIntegrand Gp = ex.piecewise_integrand();
  const NoiseSpec jumps = ex.jump_only_noise();
  auto named = [](VerificationReport r, const std::string& suffix) {
    r.name += ":" + suffix;
    return r;
  };
  out.push_back(named(check_isometry(c.noise, G, ex.L, c.T, c.solver.dt, nn, sub(2)), "constant"));
  out.push_back(named(check_isometry(c.noise, Gp, ex.L, c.T, c.solver.dt, nn, sub(3)), "piecewise"));
  out.push_back(named(check_doob(c.noise, G, ex.L, c.T, c.solver.dt, nn, sub(4)), "constant"));
  out.push_back(named(check_doob(jumps, Gp, ex.L, c.T, c.solver.dt, nn, sub(5)), "jump_only"));

  const Dataset d0{ex.x0, G};
  out.push_back(named(check_stability(c.graph, c.solver, ex.L, c.noise, d0, Dataset{0.5 * ex.x0, G}, c.T, n, sub(6)),
                      "same_noise"));
  out.push_back(named(check_stability(c.graph, c.solver, ex.L, c.noise, d0, Dataset{ex.x0, Gp}, c.T, n, sub(7)),
                      "different_noise"));
  out.push_back(named(check_stability(c.graph, c.solver, ex.L, jumps, Dataset{0.5 * ex.x0, G}, Dataset{ex.x0, Gp}, c.T, n,
                                  sub(8)),
                      "jump_only"));

  const MartingalePath p = sample_path(c.noise, c.T, c.solver.dt, sub(9));
  const Eigen::MatrixXd gm = stochastic_integral(G.on(p), p, ex.L);
  out.push_back(check_apriori(c.graph, c.solver, ex.L, ex.x0, p.times, gm, c.experiments.apriori_lambdas));
  out.push_back(check_yosida_sweep(c.graph, c.solver, ex.L, ex.x0, p.times, gm, c.experiments.lambdas));
  out.push_back(check_linear_exactness(ex.L, c.T, c.solver.dt));

  // Below ~400 steps the per-path ratio still feels the cell that straddles
  // a jump which nearly cancels the state.
  SolverConfig ito = c.solver;
  ito.dt = std::min(ito.dt, c.T / 400.0);
  out.push_back(check_ito_order(c.graph, ito, ex.L, jumps, G, ex.x0, c.T, 4, sub(10)));
  if (c.graph.name() != MonotoneGraph::linear(1.0).name())
    out.push_back(check_ito_order(MonotoneGraph::linear(1.0), ito, ex.L, jumps, G, ex.x0, c.T, 4, sub(10)));

  const double k = lipschitz_constant(ex.B, c.noise, ex.L);
  const double threshold = contraction_threshold(k, c.solver.epsilon);
  std::vector<double> T0s;
  for (double f : c.experiments.contraction_fractions) T0s.push_back(std::min(c.T, f * threshold));
  SolverConfig fine = c.solver;
  if (std::isfinite(threshold)) fine.dt = std::min(fine.dt, 0.25 * threshold);
  out.push_back(check_contraction(c.graph, ex.B, c.noise, fine, ex.L, ex.x0, T0s, n, sub(11)));

  SolverConfig windowed = c.solver;
  if (!windowed.window_T0) windowed.auto_window = true;
  out.push_back(check_picard_convergence(c.graph, ex.B, c.noise, windowed, ex.L, ex.x0, c.T, n, sub(12)));
  const Field y2 = ex.x0 + 0.5 * ex.L.eigenvector(std::min<std::size_t>(1, ex.L.size() - 1));
  out.push_back(check_lipschitz_map(c.graph, ex.B, c.noise, windowed, ex.L, ex.x0, y2, c.T, n, sub(13)));

  const DiffusionCoefficient rough(ex.B.variant(), 0.0);
  out.push_back(check_generalized_cauchy(c.graph, rough, c.noise, windowed, ex.L, ex.x0, c.T, c.experiments.levels, n,
                                         sub(14)));
  const DiffusionCoefficient smooth(ex.B.variant(), std::max(1.0, ex.B.gamma()));
  out.push_back(check_generalized_consistency(c.graph, smooth, c.noise, windowed, ex.L, ex.x0, c.T,
                                              c.experiments.levels, n, sub(15)));
  return out;
}

inline int run_verify_all(const Experiment& ex, std::ostream& log) {
  const auto reports = verify_all(ex);
  auto csv = ex.csv("checks.csv", {"check", "kind", "estimate", "std_error", "bound", "margin", "verdict", "n_paths"});
  auto vals = ex.csv("check_values.csv", {"check", "key", "value"});
  Summary s(ex.hash, ex.seed(), "verify-all");
  std::size_t failed = 0;
  for (const auto& r : reports) {
    csv.row({r.name, r.kind == CheckKind::Inequality ? "inequality" : "identity", fmt(r.estimate), fmt(r.std_error),
             fmt(r.bound), fmt(r.margin), r.pass ? "pass" : "fail", std::to_string(r.n_paths)});
    for (const auto& [k, v] : r.values) vals.row({r.name, k, fmt(v)});
    s.add(r.name, std::string(r.pass ? "pass" : "FAIL") + " estimate=" + fmt(r.estimate) + " bound=" + fmt(r.bound) +
                      " se=" + fmt(r.std_error));
    log << (r.pass ? "pass " : "FAIL ") << r.name << "  (" << r.runtime_seconds << " s)\n";
    if (!r.pass) ++failed;
  }
  csv.close();
  vals.close();
  s.add("checks", std::to_string(reports.size()));
  s.add("failed", std::to_string(failed));
  s.write(ex.out / "summary.txt");
  return failed == 0 ? exit_ok : exit_check_failure;
}

inline const std::vector<std::string>& subcommand_names() {
  static const std::vector<std::string> names{"simulate-additive", "simulate-multiplicative", "generalized",
                                              "lambda-sweep",      "verify-all",              "mollify-demo"};
  return names;
}

/// Loads the configuration, runs the named pipeline and maps failures to
/// exit codes; messages go to err.
inline int run_subcommand(const std::string& name, const std::string& config_path,
                          const std::vector<std::string>& overrides, std::ostream& log, std::ostream& err) {
  const auto& names = subcommand_names();
  if (std::find(names.begin(), names.end(), name) == names.end()) {
    err << "unknown subcommand '" << name << "'\n";
    return exit_config_error;
  }
  try {
    Experiment ex(load_config(config_path, overrides));
    for (const auto& note : ex.cfg.noise.notes()) log << "note: " << note << '\n';
    if (name == "simulate-additive") return run_simulate_additive(ex, log);
    if (name == "simulate-multiplicative") return run_simulate_multiplicative(ex, log);
    if (name == "generalized") return run_generalized(ex, log);
    if (name == "lambda-sweep") return run_lambda_sweep(ex, log);
    if (name == "verify-all") return run_verify_all(ex, log);
    return run_mollify_demo(ex, log);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return exit_config_error;
  } catch (const SolverError& e) {
    err << "solver error: " << e.what() << '\n';
    return exit_solver_error;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << '\n';
    return exit_config_error;
  }
}

}  // namespace spm
