// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
//   acceptance <spmlab binary> <config.json> <scratch dir>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "spm/cli.hpp"

using namespace spm;
namespace fs = std::filesystem;

namespace {

// Sample sizes, tolerances and wall-clock budgets (seconds).
constexpr std::size_t kToolkitSamples = 10000;
constexpr double kToolkitTol = 1e-9;
constexpr double kToolkitBudget = 5;

constexpr std::size_t kGeometryFields = 100;
constexpr double kSpectralTol = 1e-8;
constexpr double kContractionTol = 1e-12;
constexpr double kGeometryBudget = 5;

constexpr std::size_t kNoisePaths = 10000;
constexpr double kNoiseBudget = 60;

constexpr double kExactT = 0.1;
constexpr double kExactDt = 1e-3;
constexpr double kExactTol = 1e-10;
constexpr double kExactBudget = 5;

constexpr double kSweepBudget = 60;

constexpr std::size_t kStabilityPaths = 2000;
constexpr double kStabilityBudget = 120;

constexpr std::size_t kPicardPaths = 500;
constexpr double kPicardBudget = 300;

constexpr std::size_t kGeneralizedPaths = 200;
constexpr double kGeneralizedLength = 2.0;
constexpr double kGeneralizedBudget = 300;

constexpr std::size_t kItoPaths = 8;
constexpr double kItoSteps = 400;
constexpr double kItoBand = 0.3;
constexpr double kItoBudget = 60;

constexpr std::uint64_t kSeed = 4242;

struct Criterion {
  std::string id;
  std::string title;
  double budget;
  std::vector<VerificationReport> reports;
  std::vector<std::string> extra_failures;
  double seconds = 0.0;

  bool pass() const {
    if (seconds > budget || !extra_failures.empty()) return false;
    for (const auto& r : reports)
      if (!r.pass) return false;
    return true;
  }
};

template <class F>
Criterion run(const std::string& id, const std::string& title, double budget, F&& body) {
  Criterion c{id, title, budget, {}, {}};
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(c);
  } catch (const std::exception& e) {
    c.extra_failures.push_back(std::string("exception: ") + e.what());
  }
  c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return c;
}

void print(const Criterion& c) {
  if (std::isfinite(c.budget))
    std::printf("%s %s: %s (%.1f s, budget %.0f s)\n", c.id.c_str(), c.pass() ? "PASS" : "FAIL", c.title.c_str(),
                c.seconds, c.budget);
  else
    std::printf("%s %s: %s (%.1f s, no budget)\n", c.id.c_str(), c.pass() ? "PASS" : "FAIL", c.title.c_str(), c.seconds);
  for (const auto& r : c.reports)
    std::printf("    %-4s %-32s estimate=%.6g bound=%.6g se=%.3g\n", r.pass ? "ok" : "FAIL", r.name.c_str(), r.estimate,
                r.bound, r.std_error);
  for (const auto& f : c.extra_failures) std::printf("    FAIL %s\n", f.c_str());
  if (c.seconds > c.budget) std::printf("    FAIL runtime over budget\n");
  std::fflush(stdout);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

VerificationReport tagged(VerificationReport r, const std::string& tag) {
  r.name += ":" + tag;
  return r;
}

int run_binary(const std::string& bin, const std::string& config, const fs::path& out, std::uint64_t seed) {
  const std::string cmd = "\"" + bin + "\" verify-all --config \"" + config + "\" --seed " + std::to_string(seed) +
                          " --out \"" + out.string() + "\" > \"" + (out.string() + ".log") + "\" 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 4) {
    std::cerr << "usage: acceptance <spmlab> <config.json> <scratch dir>\n";
    return 2;
  }
  const std::string spmlab = argv[1];
  const std::string config = argv[2];
  const fs::path scratch = argv[3];
  fs::remove_all(scratch);
  fs::create_directories(scratch);

  const ExperimentConfig cfg = load_config(config, {"run.output_dir=" + (scratch / "lib").string()});
  const Experiment ex(cfg);
  const auto& c = ex.cfg;
  auto seed = [](std::uint64_t i) { return stream_seed(kSeed, i); };
  const MonotoneGraph cubic = MonotoneGraph::power_law(3.0);
  const MonotoneGraph linear = MonotoneGraph::linear(1.0);
  const PiecewiseIntegrand G = ex.additive_integrand();
  const PiecewiseIntegrand Gp = ex.piecewise_integrand();
  const NoiseSpec jumps = ex.jump_only_noise();

  std::vector<Criterion> results;

  results.push_back(run("AC1", "monotone toolkit", kToolkitBudget, [&](Criterion& k) {
    for (const auto& g : {MonotoneGraph::power_law(3.0), MonotoneGraph::linear(2.0), MonotoneGraph::signum(1.0),
                          MonotoneGraph::stefan(1.0, 2.0, 0.5)})
      k.reports.push_back(check_monotone_toolkit(g, kToolkitSamples, seed(1), kToolkitTol));
  }));
  print(results.back());

  results.push_back(run("AC2", "discrete H^-1 geometry", kGeometryBudget, [&](Criterion& k) {
    const std::vector<int> levels{1, 2, 4, 8, 16};
    k.reports.push_back(check_hminus1_geometry(ex.L, kGeometryFields, seed(2), levels, kSpectralTol, kContractionTol));
  }));
  print(results.back());

  results.push_back(run("AC3", "noise brackets", kNoiseBudget, [&](Criterion& k) {
    std::size_t wiener = 0, jumpy = 0;
    for (const auto& m : c.noise.modes()) {
      wiener += m.wiener_vol > 0.0;
      jumpy += m.jump_intensity > 0.0;
    }
    if (c.noise.n_modes() < 2 || wiener == 0 || jumpy == 0)
      k.extra_failures.push_back("noise must have >= 2 modes mixing Wiener and jump parts");
    k.reports.push_back(tagged(check_isometry(c.noise, G, ex.L, c.T, c.solver.dt, kNoisePaths, seed(3)), "constant"));
    k.reports.push_back(tagged(check_isometry(c.noise, Gp, ex.L, c.T, c.solver.dt, kNoisePaths, seed(4)), "piecewise"));
    k.reports.push_back(tagged(check_doob(c.noise, G, ex.L, c.T, c.solver.dt, kNoisePaths, seed(5)), "constant"));
    k.reports.push_back(tagged(check_doob(jumps, Gp, ex.L, c.T, c.solver.dt, kNoisePaths, seed(6)), "jump_only"));
  }));
  print(results.back());

  results.push_back(run("AC4", "linear exactness and first order", kExactBudget, [&](Criterion& k) {
    k.reports.push_back(check_linear_exactness(ex.L, kExactT, kExactDt, kExactTol));
  }));
  print(results.back());

  results.push_back(run("AC5", "Yosida convergence", kSweepBudget, [&](Criterion& k) {
    std::vector<double> lambdas;
    for (int e = 2; e <= 8; ++e) lambdas.push_back(std::ldexp(1.0, -e));
    const MartingalePath p = sample_path(c.noise, c.T, c.solver.dt, seed(7));
    const Eigen::MatrixXd gm = stochastic_integral(G.on(p), p, ex.L);
    k.reports.push_back(check_yosida_sweep(cubic, c.solver, ex.L, ex.x0, p.times, gm, lambdas));
  }));
  print(results.back());

  results.push_back(run("AC6", "additive stability estimate", kStabilityBudget, [&](Criterion& k) {
    const Dataset d0{ex.x0, G};
    k.reports.push_back(tagged(check_stability(c.graph, c.solver, ex.L, c.noise, d0, Dataset{0.5 * ex.x0, G}, c.T,
                                               kStabilityPaths, seed(8)),
                               "same_noise"));
    k.reports.push_back(tagged(
        check_stability(c.graph, c.solver, ex.L, c.noise, d0, Dataset{ex.x0, Gp}, c.T, kStabilityPaths, seed(9)),
        "different_noise"));
    k.reports.push_back(tagged(check_stability(c.graph, c.solver, ex.L, jumps, Dataset{0.5 * ex.x0, G}, Dataset{ex.x0, Gp},
                                               c.T, kStabilityPaths, seed(10)),
                               "jump_only"));
  }));
  print(results.back());

  results.push_back(run("AC7", "Picard contraction and windowed solve", kPicardBudget, [&](Criterion& k) {
    if (!std::holds_alternative<LinearSpectral>(ex.B.variant()))
      k.extra_failures.push_back("configured diffusion must be linear_spectral");
    const double kb = lipschitz_constant(ex.B, c.noise, ex.L);
    const double threshold = contraction_threshold(kb, c.solver.epsilon);
    SolverConfig fine = c.solver;
    if (std::isfinite(threshold)) fine.dt = std::min(fine.dt, 0.25 * threshold);
    std::vector<double> T0s;
    for (double f : c.experiments.contraction_fractions) T0s.push_back(std::min(c.T, f * threshold));
    k.reports.push_back(check_contraction(c.graph, ex.B, c.noise, fine, ex.L, ex.x0, T0s, kPicardPaths, seed(11)));
    SolverConfig windowed = c.solver;
    windowed.window_T0.reset();
    windowed.auto_window = true;
    k.reports.push_back(
        check_picard_convergence(c.graph, ex.B, c.noise, windowed, ex.L, ex.x0, c.T, kPicardPaths, seed(12)));
  }));
  print(results.back());

  results.push_back(run("AC8", "generalized solutions", kGeneralizedBudget, [&](Criterion& k) {
    const std::vector<int> levels{2, 4, 8, 16};
    SolverConfig windowed = c.solver;
    windowed.window_T0.reset();
    windowed.auto_window = true;
    const DiffusionCoefficient rough(ex.B.variant(), 0.0);
    k.reports.push_back(check_generalized_cauchy(c.graph, rough, c.noise, windowed, ex.L, ex.x0, c.T, levels,
                                                 kGeneralizedPaths, seed(13)));
    const DirichletLaplacian L2(SpatialGrid::interval(c.grid.nodes(0), kGeneralizedLength));
    const DiffusionCoefficient smooth(ex.B.variant(), 1.0);
    k.reports.push_back(check_generalized_consistency(c.graph, smooth, c.noise, windowed, L2, c.initial.build(L2), c.T,
                                                      levels, kGeneralizedPaths, seed(14)));
  }));
  print(results.back());

  results.push_back(run("AC9", "Ito residual order", kItoBudget, [&](Criterion& k) {
    SolverConfig ito = c.solver;
    ito.dt = std::min(ito.dt, c.T / kItoSteps);
    for (const auto& g : {linear, cubic})
      k.reports.push_back(check_ito_order(g, ito, ex.L, jumps, G, ex.x0, c.T, kItoPaths, seed(15), kItoBand));
  }));
  print(results.back());

  results.push_back(run("AC10", "reproducibility", std::numeric_limits<double>::infinity(), [&](Criterion& k) {
    const fs::path a = scratch / "seed_a1", b = scratch / "seed_a2", d = scratch / "seed_b";
    const int ra = run_binary(spmlab, config, a, c.run.seed);
    const int rb = run_binary(spmlab, config, b, c.run.seed);
    if (ra != 0 || rb != 0) k.extra_failures.push_back("verify-all exit codes " + std::to_string(ra) + ", " + std::to_string(rb));
    std::size_t compared = 0;
    for (const auto& entry : fs::directory_iterator(a)) {
      const fs::path other = b / entry.path().filename();
      ++compared;
      if (!fs::exists(other) || slurp(entry.path()) != slurp(other))
        k.extra_failures.push_back("differs: " + entry.path().filename().string());
    }
    if (compared == 0) k.extra_failures.push_back("no output files");
    const int rd = run_binary(spmlab, config, d, c.run.seed + 1);
    if (rd != 0) k.extra_failures.push_back("verify-all with another seed exit code " + std::to_string(rd));
    std::printf("    compared %zu files byte for byte\n", compared);
  }));
  print(results.back());

  std::size_t failed = 0;
  for (const auto& r : results) failed += !r.pass();
  std::printf("%zu/%zu criteria passed\n", results.size() - failed, results.size());
  return failed == 0 ? 0 : 1;
}
