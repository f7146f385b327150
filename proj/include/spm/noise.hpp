#pragma once

// Square-integrable Levy martingale in a finite mode basis: each mode k is an
// independent scalar process sigma_k W_k + (compound Poisson with intensity
// lambda_k and mean-zero jump law). Q = diag(v_k) with
// v_k = sigma_k^2 + lambda_k E[J_k^2], <M>(t) = t Tr Q, Q_M = Q / Tr Q.
//
// Integrands G are N x K matrices whose column k is G e_k, evaluated at the
// left endpoint of each grid interval (predictable).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "spm/domain.hpp"

namespace spm {

struct NoJumps {};

/// Jumps of size +size or -size with probability 1/2 each.
struct TwoPointJumps {
  double size = 1.0;
};

/// Normally distributed jump sizes N(mean, std^2); re-centered to mean 0.
struct NormalJumps {
  double mean = 0.0;
  double std = 1.0;
};

using JumpLaw = std::variant<NoJumps, TwoPointJumps, NormalJumps>;

struct NoiseMode {
  double wiener_vol = 0.0;
  double jump_intensity = 0.0;
  JumpLaw jumps = NoJumps{};
};

inline double jump_second_moment(const JumpLaw& law) {
  return std::visit(
      [](const auto& l) -> double {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, NoJumps>) return 0.0;
        else if constexpr (std::is_same_v<T, TwoPointJumps>) return l.size * l.size;
        else return l.mean * l.mean + l.std * l.std;
      },
      law);
}

class NoiseSpec {
 public:
  explicit NoiseSpec(std::vector<NoiseMode> modes) : modes_(std::move(modes)) {
    if (modes_.empty()) throw std::invalid_argument("NoiseSpec: need at least one mode");
    for (std::size_t k = 0; k < modes_.size(); ++k) {
      auto& m = modes_[k];
      if (!(m.wiener_vol >= 0.0) || !(m.jump_intensity >= 0.0))
        throw std::invalid_argument("NoiseSpec: mode " + std::to_string(k) + " has negative volatility or intensity");
      if (auto* n = std::get_if<NormalJumps>(&m.jumps)) {
        if (!(n->std >= 0.0)) throw std::invalid_argument("NoiseSpec: normal jump std must be >= 0");
        if (n->mean != 0.0) {
          notes_.push_back("mode " + std::to_string(k) + ": jump law mean " + std::to_string(n->mean) +
                           " re-centered to 0 (compensated martingale)");
          n->mean = 0.0;
        }
      }
      if (auto* t = std::get_if<TwoPointJumps>(&m.jumps)) {
        if (!(t->size >= 0.0)) throw std::invalid_argument("NoiseSpec: two-point jump size must be >= 0");
      }
    }
  }

  std::size_t n_modes() const noexcept { return modes_.size(); }
  const NoiseMode& mode(std::size_t k) const { return modes_.at(k); }
  const std::vector<NoiseMode>& modes() const noexcept { return modes_; }

  /// Re-centering and similar adjustments applied at construction.
  const std::vector<std::string>& notes() const noexcept { return notes_; }

  double variance_rate(std::size_t k) const {
    const auto& m = modes_.at(k);
    return m.wiener_vol * m.wiener_vol + m.jump_intensity * jump_second_moment(m.jumps);
  }

  Eigen::VectorXd variance_rates() const {
    Eigen::VectorXd v(static_cast<Eigen::Index>(modes_.size()));
    for (std::size_t k = 0; k < modes_.size(); ++k) v[static_cast<Eigen::Index>(k)] = variance_rate(k);
    return v;
  }

  Eigen::VectorXd wiener_variances() const {
    Eigen::VectorXd v(static_cast<Eigen::Index>(modes_.size()));
    for (std::size_t k = 0; k < modes_.size(); ++k)
      v[static_cast<Eigen::Index>(k)] = modes_[k].wiener_vol * modes_[k].wiener_vol;
    return v;
  }

  double trace_q() const { return variance_rates().sum(); }

  /// Q_M = Q / Tr Q; undefined for the zero-noise spec.
  Eigen::VectorXd q_m() const {
    const double tr = trace_q();
    if (!(tr > 0.0)) throw std::domain_error("Q_M undefined: Tr Q = 0");
    return variance_rates() / tr;
  }

 private:
  std::vector<NoiseMode> modes_;
  std::vector<std::string> notes_;
};

inline double angle_bracket(const NoiseSpec& spec, double t) {
  if (t < 0.0) throw std::invalid_argument("angle_bracket: t must be >= 0");
  return t * spec.trace_q();
}

struct JumpRecord {
  double time = 0.0;
  std::size_t index = 0;  // grid index at which the jump is realized
  std::size_t mode = 0;
  double size = 0.0;
};

/// One sampled cadlag path on a grid that contains every jump time. Values at
/// grid points are right limits; the left limit at a jump index i equals the
/// value at i minus the recorded jump.
struct MartingalePath {
  double base_dt = 0.0;
  std::vector<double> times;
  std::vector<std::size_t> base_indices;  // grid points of the uniform base grid
  Eigen::MatrixXd continuous;             // K x Nt, Wiener part
  Eigen::MatrixXd jump_part;              // K x Nt, cumulative jumps
  std::vector<JumpRecord> jumps;          // ordered by time

  std::size_t size() const noexcept { return times.size(); }
  std::size_t n_modes() const noexcept { return static_cast<std::size_t>(continuous.rows()); }
  double final_time() const { return times.back(); }

  double value(std::size_t k, std::size_t i) const {
    const auto kk = static_cast<Eigen::Index>(k);
    const auto ii = static_cast<Eigen::Index>(i);
    return continuous(kk, ii) + jump_part(kk, ii);
  }

  Eigen::VectorXd values(std::size_t i) const {
    const auto ii = static_cast<Eigen::Index>(i);
    return continuous.col(ii) + jump_part.col(ii);
  }

  /// M(t_i) - M(t_{i-1}), i >= 1.
  Eigen::VectorXd increment(std::size_t i) const {
    const auto ii = static_cast<Eigen::Index>(i);
    return continuous.col(ii) - continuous.col(ii - 1) + jump_part.col(ii) - jump_part.col(ii - 1);
  }
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Independent stream seed for (master_seed, index).
inline std::uint64_t stream_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64(splitmix64(master) ^ splitmix64(index + 0x632BE59BD9B4E019ULL));
}

namespace detail {

/// Uniform grid 0, dt, 2dt, ..., T (last step possibly shorter).
inline std::vector<double> base_times(double T, double dt) {
  const auto steps = static_cast<std::size_t>(std::max(1.0, std::ceil(T / dt - 1e-9)));
  std::vector<double> t(steps + 1);
  for (std::size_t i = 0; i < steps; ++i) t[i] = static_cast<double>(i) * dt;
  t[steps] = T;
  return t;
}

inline double draw_jump(const JumpLaw& law, std::mt19937_64& rng) {
  return std::visit(
      [&rng](const auto& l) -> double {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, NoJumps>) {
          return 0.0;
        } else if constexpr (std::is_same_v<T, TwoPointJumps>) {
          std::bernoulli_distribution coin(0.5);
          return coin(rng) ? l.size : -l.size;
        } else {
          std::normal_distribution<double> normal(l.mean, l.std);
          return normal(rng);
        }
      },
      law);
}

inline void fill_jump_part(MartingalePath& p) {
  p.jump_part = Eigen::MatrixXd::Zero(p.continuous.rows(), static_cast<Eigen::Index>(p.size()));
  std::size_t next = 0;
  for (std::size_t i = 1; i < p.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    p.jump_part.col(ii) = p.jump_part.col(ii - 1);
    while (next < p.jumps.size() && p.jumps[next].index == i) {
      p.jump_part(static_cast<Eigen::Index>(p.jumps[next].mode), ii) += p.jumps[next].size;
      ++next;
    }
  }
}

}  // namespace detail

/// Samples one path on [0, T]: the uniform grid of step base_dt with every
/// Poisson jump time inserted. Jump times and sizes come from their own
/// random stream, so at a fixed seed they do not depend on base_dt.
inline MartingalePath sample_path(const NoiseSpec& spec, double T, double base_dt, std::uint64_t seed) {
  if (!(T > 0.0) || !(base_dt > 0.0)) throw std::invalid_argument("sample_path: T and base_dt must be > 0");
  const std::size_t K = spec.n_modes();
  MartingalePath path;
  path.base_dt = base_dt;

  std::mt19937_64 jump_rng(stream_seed(seed, 0));
  std::vector<JumpRecord> jumps;
  for (std::size_t k = 0; k < K; ++k) {
    const auto& mode = spec.mode(k);
    if (!(mode.jump_intensity > 0.0) || std::holds_alternative<NoJumps>(mode.jumps)) continue;
    std::exponential_distribution<double> wait(mode.jump_intensity);
    double t = 0.0;
    while (true) {
      t += wait(jump_rng);
      if (t > T) break;
      jumps.push_back({t, 0, k, detail::draw_jump(mode.jumps, jump_rng)});
    }
  }
  std::stable_sort(jumps.begin(), jumps.end(), [](const auto& a, const auto& b) { return a.time < b.time; });

  const std::vector<double> base = detail::base_times(T, base_dt);
  const double eps = 1e-12 * T;
  std::size_t j = 0;
  for (std::size_t b = 0; b < base.size(); ++b) {
    while (j < jumps.size() && jumps[j].time < base[b] - eps) {
      if (path.times.empty() || jumps[j].time > path.times.back() + eps) path.times.push_back(jumps[j].time);
      jumps[j].index = path.times.size() - 1;
      ++j;
    }
    path.base_indices.push_back(path.times.size());
    path.times.push_back(base[b]);
    while (j < jumps.size() && std::abs(jumps[j].time - base[b]) <= eps) {
      jumps[j].index = path.times.size() - 1;
      ++j;
    }
  }
  path.jumps = std::move(jumps);

  const auto Nt = static_cast<Eigen::Index>(path.size());
  path.continuous = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(K), Nt);
  std::mt19937_64 wiener_rng(stream_seed(seed, 1));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 1; i < Nt; ++i) {
    const double tau = path.times[static_cast<std::size_t>(i)] - path.times[static_cast<std::size_t>(i - 1)];
    for (std::size_t k = 0; k < K; ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      const double sigma = spec.mode(k).wiener_vol;
      const double dw = sigma > 0.0 ? sigma * std::sqrt(tau) * normal(wiener_rng) : 0.0;
      path.continuous(kk, i) = path.continuous(kk, i - 1) + dw;
    }
  }
  detail::fill_jump_part(path);
  return path;
}

enum class Refinement {
  BaseMidpoints,  // odd multiples of base_dt/2
  BisectCells,    // midpoint of every cell, including the ones cut by a jump
};

/// Halves the base step of a path and fills the Wiener part by Brownian-bridge
/// interpolation. Existing grid points, values and jumps are kept unchanged.
/// With BisectCells every step halves exactly; base_indices then lists only
/// the multiples of base_dt/2, so base points inside jump-cut cells are absent.
inline MartingalePath refine_path(const MartingalePath& coarse, const NoiseSpec& spec, std::uint64_t seed,
                                  Refinement rule = Refinement::BaseMidpoints) {
  if (coarse.n_modes() != spec.n_modes()) throw std::invalid_argument("refine_path: mode count mismatch");
  const double T = coarse.final_time();
  const double half = 0.5 * coarse.base_dt;
  const double eps = 1e-12 * T;
  MartingalePath fine;
  fine.base_dt = half;
  std::mt19937_64 rng(stream_seed(seed, 2));
  std::normal_distribution<double> normal(0.0, 1.0);

  const std::size_t K = coarse.n_modes();
  std::vector<Eigen::VectorXd> cont;
  std::vector<std::size_t> old_to_new(coarse.size());
  std::vector<std::size_t> coarse_base_pos;  // position in base order
  cont.reserve(2 * coarse.size());

  std::size_t next_base = 0;  // coarse base index counter
  auto is_base = [&](std::size_t i) {
    return next_base < coarse.base_indices.size() && coarse.base_indices[next_base] == i;
  };
  for (std::size_t i = 0; i < coarse.size(); ++i) {
    if (i > 0) {
      const double a = coarse.times[i - 1];
      const double b = coarse.times[i];
      double m = 0.5 * (a + b);
      bool on_base = std::abs(m / half - std::round(m / half)) < 1e-9;
      if (rule == Refinement::BaseMidpoints) {
        // odd multiple of half inside (a, b)
        const double k = std::floor(a / half + 1e-9) + 1.0;
        m = k * half;
        if (std::fmod(k, 2.0) == 0.0) m += half;
        on_base = true;
      }
      if (m > a + eps && m < b - eps && (rule == Refinement::BisectCells || m < T - eps)) {
        const auto ia = static_cast<Eigen::Index>(i - 1);
        const auto ib = static_cast<Eigen::Index>(i);
        Eigen::VectorXd wm(static_cast<Eigen::Index>(K));
        const double w = (m - a) / (b - a);
        const double sd = std::sqrt((m - a) * (b - m) / (b - a));
        for (std::size_t q = 0; q < K; ++q) {
          const auto qq = static_cast<Eigen::Index>(q);
          const double mean = coarse.continuous(qq, ia) + w * (coarse.continuous(qq, ib) - coarse.continuous(qq, ia));
          const double sigma = spec.mode(q).wiener_vol;
          wm[qq] = sigma > 0.0 ? mean + sigma * sd * normal(rng) : mean;
        }
        if (on_base) fine.base_indices.push_back(fine.times.size());
        fine.times.push_back(m);
        cont.push_back(wm);
      }
    }
    if (is_base(i)) {
      fine.base_indices.push_back(fine.times.size());
      ++next_base;
    }
    old_to_new[i] = fine.times.size();
    fine.times.push_back(coarse.times[i]);
    cont.push_back(coarse.continuous.col(static_cast<Eigen::Index>(i)));
  }
  std::sort(fine.base_indices.begin(), fine.base_indices.end());
  fine.continuous.resize(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(fine.size()));
  for (std::size_t i = 0; i < cont.size(); ++i) fine.continuous.col(static_cast<Eigen::Index>(i)) = cont[i];
  fine.jumps = coarse.jumps;
  for (auto& jr : fine.jumps) jr.index = old_to_new[jr.index];
  detail::fill_jump_part(fine);
  return fine;
}

/// Restriction of a path to grid indices [first, last], re-based to start at 0.
inline MartingalePath slice_path(const MartingalePath& path, std::size_t first, std::size_t last) {
  if (first > last || last >= path.size()) throw std::out_of_range("slice_path: bad index range");
  MartingalePath s;
  s.base_dt = path.base_dt;
  s.times.assign(path.times.begin() + static_cast<std::ptrdiff_t>(first),
                 path.times.begin() + static_cast<std::ptrdiff_t>(last) + 1);
  const double t0 = s.times.front();
  for (double& t : s.times) t -= t0;
  for (std::size_t b : path.base_indices)
    if (b >= first && b <= last) s.base_indices.push_back(b - first);
  const auto cols = static_cast<Eigen::Index>(last - first + 1);
  const auto f = static_cast<Eigen::Index>(first);
  s.continuous = path.continuous.middleCols(f, cols).colwise() - path.continuous.col(f);
  s.jump_part = path.jump_part.middleCols(f, cols).colwise() - path.jump_part.col(f);
  for (const auto& j : path.jumps) {
    if (j.index > first && j.index <= last) {
      auto r = j;
      r.index -= first;
      r.time -= t0;
      s.jumps.push_back(r);
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Diffusion coefficients

/// Scalar Lipschitz map used inside the Nemytskii coefficient:
/// a * f(r) + b with f = sin, tanh or identity.
struct ScalarMap {
  enum class Kind { Sine, Tanh, Affine };
  Kind kind = Kind::Sine;
  double scale = 1.0;
  double offset = 0.0;

  double operator()(double r) const {
    switch (kind) {
      case Kind::Sine: return scale * std::sin(r) + offset;
      case Kind::Tanh: return scale * std::tanh(r) + offset;
      case Kind::Affine: return scale * r + offset;
    }
    return 0.0;
  }
  double lipschitz() const noexcept { return std::abs(scale); }
};

/// B(x) e_k = g_k, independent of the state.
struct ConstantAdditive {
  std::vector<Field> fields;
};

/// B(x) e_k = c_k (-Delta)^{-gamma} x.
struct LinearSpectral {
  std::vector<double> coefficients;
};

/// B(x) e_k = c_k (-Delta)^{-gamma} sigma(x), sigma applied nodewise.
struct SmoothedNemytskii {
  ScalarMap sigma;
  std::vector<double> coefficients;
};

class DiffusionCoefficient {
 public:
  using Variant = std::variant<ConstantAdditive, LinearSpectral, SmoothedNemytskii>;

  /// gamma: smoothing exponent applied to every column; mollifier_level n > 0
  /// additionally applies Lambda_n (0 disables it).
  explicit DiffusionCoefficient(Variant v, double gamma = 0.0, int mollifier_level = 0)
      : v_(std::move(v)), gamma_(gamma), level_(mollifier_level) {
    if (gamma_ < 0.0) throw std::invalid_argument("DiffusionCoefficient: gamma must be >= 0");
    if (level_ < 0) throw std::invalid_argument("DiffusionCoefficient: mollifier level must be >= 0");
    if (n_modes() == 0) throw std::invalid_argument("DiffusionCoefficient: need at least one mode");
  }

  static DiffusionCoefficient zero(std::size_t modes, std::size_t nodes) {
    return DiffusionCoefficient(ConstantAdditive{std::vector<Field>(modes, Field::Zero(static_cast<Eigen::Index>(nodes)))});
  }

  const Variant& variant() const noexcept { return v_; }
  double gamma() const noexcept { return gamma_; }
  int mollifier_level() const noexcept { return level_; }

  std::size_t n_modes() const {
    return std::visit(
        [](const auto& b) -> std::size_t {
          using T = std::decay_t<decltype(b)>;
          if constexpr (std::is_same_v<T, ConstantAdditive>) return b.fields.size();
          else return b.coefficients.size();
        },
        v_);
  }

  bool state_independent() const noexcept { return std::holds_alternative<ConstantAdditive>(v_); }

  bool identically_zero() const {
    return std::visit(
        [](const auto& b) -> bool {
          using T = std::decay_t<decltype(b)>;
          if constexpr (std::is_same_v<T, ConstantAdditive>) {
            return std::all_of(b.fields.begin(), b.fields.end(), [](const Field& f) { return f.isZero(0.0); });
          } else {
            return std::all_of(b.coefficients.begin(), b.coefficients.end(), [](double c) { return c == 0.0; });
          }
        },
        v_);
  }

  /// True when gamma is at or below the d/2 embedding threshold.
  bool rough_mode(int dim) const noexcept { return gamma_ <= 0.5 * dim; }

  DiffusionCoefficient mollified(int n) const {
    if (n < 1) throw std::invalid_argument("mollified: level must be >= 1");
    return DiffusionCoefficient(v_, gamma_, n);
  }

  DiffusionCoefficient scaled(double s) const {
    Variant v = v_;
    std::visit(
        [s](auto& b) {
          using T = std::decay_t<decltype(b)>;
          if constexpr (std::is_same_v<T, ConstantAdditive>) {
            for (auto& f : b.fields) f *= s;
          } else {
            for (auto& c : b.coefficients) c *= s;
          }
        },
        v);
    return DiffusionCoefficient(std::move(v), gamma_, level_);
  }

  /// Eigen-multiplier m(mu) = mu^{-gamma} exp(-mu/n^2) of the column smoothing.
  double multiplier(double mu) const {
    double m = gamma_ > 0.0 ? std::pow(mu, -gamma_) : 1.0;
    if (level_ > 0) m *= mollifier_multiplier(mu, level_);
    return m;
  }

  bool smoothing_is_identity() const noexcept { return gamma_ == 0.0 && level_ == 0; }

  /// B(x) as an N x K matrix, column k = B(x) e_k.
  Eigen::MatrixXd apply(const Field& x, const DirichletLaplacian& L) const {
    detail::require_size(x, L.size(), "DiffusionCoefficient::apply");
    const auto N = static_cast<Eigen::Index>(L.size());
    const auto K = static_cast<Eigen::Index>(n_modes());
    Eigen::MatrixXd out(N, K);
    auto smooth = [&](const Field& f) -> Field {
      if (smoothing_is_identity()) return f;
      return L.spectral(f, [this](double mu) { return multiplier(mu); });
    };
    std::visit(
        [&](const auto& b) {
          using T = std::decay_t<decltype(b)>;
          if constexpr (std::is_same_v<T, ConstantAdditive>) {
            for (Eigen::Index k = 0; k < K; ++k) {
              const Field& g = b.fields[static_cast<std::size_t>(k)];
              detail::require_size(g, L.size(), "ConstantAdditive field");
              out.col(k) = smooth(g);
            }
          } else {
            Field base;
            if constexpr (std::is_same_v<T, LinearSpectral>) {
              base = smooth(x);
            } else {
              base = smooth(x.unaryExpr([&b](double r) { return b.sigma(r); }));
            }
            for (Eigen::Index k = 0; k < K; ++k) out.col(k) = b.coefficients[static_cast<std::size_t>(k)] * base;
          }
        },
        v_);
    return out;
  }

 private:
  Variant v_;
  double gamma_;
  int level_;
};

/// sum_k w_k |G e_k|_{-1}^2 for an N x K integrand.
inline double integrand_norm_sq(const Eigen::MatrixXd& G, const Eigen::VectorXd& weights, const DirichletLaplacian& L) {
  if (G.cols() != weights.size()) throw std::invalid_argument("integrand_norm_sq: mode count mismatch");
  double s = 0.0;
  for (Eigen::Index k = 0; k < G.cols(); ++k) {
    if (weights[k] == 0.0) continue;
    s += weights[k] * norm_hminus1_sq(G.col(k), L);
  }
  return s;
}

/// |B(x)|_Q = (sum_k v_k |B(x) e_k|_{-1}^2)^{1/2}.
inline double hs_norm_Q(const DiffusionCoefficient& B, const Field& x, const NoiseSpec& spec, const DirichletLaplacian& L) {
  if (B.n_modes() != spec.n_modes()) throw std::invalid_argument("hs_norm_Q: mode count mismatch");
  return std::sqrt(integrand_norm_sq(B.apply(x, L), spec.variance_rates(), L));
}

/// Constant k with |B(x) - B(y)|_Q^2 <= k |x - y|_{-1}^2: exact for the
/// constant and linear variants, an upper bound for the Nemytskii variant.
inline double lipschitz_constant(const DiffusionCoefficient& B, const NoiseSpec& spec, const DirichletLaplacian& L) {
  if (B.n_modes() != spec.n_modes()) throw std::invalid_argument("lipschitz_constant: mode count mismatch");
  const Eigen::VectorXd v = spec.variance_rates();
  const Eigen::VectorXd& mu = L.eigenvalues();
  return std::visit(
      [&](const auto& b) -> double {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, ConstantAdditive>) {
          return 0.0;
        } else {
          double weight = 0.0;
          for (std::size_t k = 0; k < b.coefficients.size(); ++k)
            weight += v[static_cast<Eigen::Index>(k)] * b.coefficients[k] * b.coefficients[k];
          double peak = 0.0;
          if constexpr (std::is_same_v<T, LinearSpectral>) {
            for (Eigen::Index j = 0; j < mu.size(); ++j) peak = std::max(peak, std::pow(B.multiplier(mu[j]), 2));
            return weight * peak;
          } else {
            for (Eigen::Index j = 0; j < mu.size(); ++j) peak = std::max(peak, std::pow(B.multiplier(mu[j]), 2) / mu[j]);
            const double ell = b.sigma.lipschitz();
            return weight * peak * ell * ell * mu[mu.size() - 1];
          }
        }
      },
      B.variant());
}

/// Sampled lower estimate of the Lipschitz constant: max ratio
/// |B(x) - B(y)|_Q^2 / |x - y|_{-1}^2 over random pairs and eigenvector pairs.
inline double estimate_lipschitz(const DiffusionCoefficient& B, const NoiseSpec& spec, const DirichletLaplacian& L,
                                 std::size_t samples, std::uint64_t seed) {
  const Eigen::VectorXd v = spec.variance_rates();
  const auto N = static_cast<Eigen::Index>(L.size());
  std::mt19937_64 rng(stream_seed(seed, 7));
  std::normal_distribution<double> normal(0.0, 1.0);
  double best = 0.0;
  auto consider = [&](const Field& x, const Field& y) {
    const double den = norm_hminus1_sq(x - y, L);
    if (den <= 0.0) return;
    const double num = integrand_norm_sq(B.apply(x, L) - B.apply(y, L), v, L);
    best = std::max(best, num / den);
  };
  const Field zero = Field::Zero(N);
  for (std::size_t j = 0; j < std::min<std::size_t>(L.size(), 4); ++j) consider(L.eigenvector(j), zero);
  for (std::size_t s = 0; s < samples; ++s) {
    Field x(N), y(N);
    for (Eigen::Index i = 0; i < N; ++i) {
      x[i] = normal(rng);
      y[i] = normal(rng);
    }
    consider(x, y);
  }
  return best;
}

/// Deterministic integrand piecewise constant in time: pieces[p] acts on
/// (breaks[p], breaks[p+1]], the last piece extends to +inf.
class PiecewiseIntegrand {
 public:
  explicit PiecewiseIntegrand(Eigen::MatrixXd constant) : breaks_{0.0}, pieces_{std::move(constant)} {}

  PiecewiseIntegrand(std::vector<double> breaks, std::vector<Eigen::MatrixXd> pieces)
      : breaks_(std::move(breaks)), pieces_(std::move(pieces)) {
    if (breaks_.empty() || breaks_.size() != pieces_.size() || breaks_.front() != 0.0)
      throw std::invalid_argument("PiecewiseIntegrand: breaks must start at 0, one per piece");
    if (!std::is_sorted(breaks_.begin(), breaks_.end()))
      throw std::invalid_argument("PiecewiseIntegrand: breaks must be increasing");
    for (const auto& p : pieces_)
      if (p.rows() != pieces_.front().rows() || p.cols() != pieces_.front().cols())
        throw std::invalid_argument("PiecewiseIntegrand: pieces must share their shape");
  }

  /// Value on the interval whose left endpoint is t.
  const Eigen::MatrixXd& at(double t_left) const {
    auto it = std::upper_bound(breaks_.begin(), breaks_.end(), t_left + 1e-12);
    const auto p = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, (it - breaks_.begin()) - 1));
    return pieces_[p];
  }

  /// Integrand callable over the interval index of a path.
  auto on(const MartingalePath& path) const {
    return [this, &path](std::size_t i) -> const Eigen::MatrixXd& { return at(path.times[i]); };
  }

  PiecewiseIntegrand operator-(const PiecewiseIntegrand& other) const {
    std::vector<double> merged = breaks_;
    merged.insert(merged.end(), other.breaks_.begin(), other.breaks_.end());
    std::sort(merged.begin(), merged.end());
    merged.erase(std::unique(merged.begin(), merged.end()), merged.end());
    std::vector<Eigen::MatrixXd> pieces;
    for (double b : merged) pieces.push_back(at(b) - other.at(b));
    return {std::move(merged), std::move(pieces)};
  }

  /// int_0^T |G(s)|_{Q_M}^2 d<M>(s) = int_0^T sum_k v_k |G(s) e_k|_{-1}^2 ds.
  double qm_integral(const NoiseSpec& spec, const DirichletLaplacian& L, double T) const {
    const Eigen::VectorXd v = spec.variance_rates();
    double total = 0.0;
    for (std::size_t p = 0; p < breaks_.size(); ++p) {
      const double a = breaks_[p];
      if (a >= T) break;
      const double b = p + 1 < breaks_.size() ? std::min(breaks_[p + 1], T) : T;
      total += (b - a) * integrand_norm_sq(pieces_[p], v, L);
    }
    return total;
  }

  const std::vector<double>& breaks() const noexcept { return breaks_; }
  const std::vector<Eigen::MatrixXd>& pieces() const noexcept { return pieces_; }

 private:
  std::vector<double> breaks_;
  std::vector<Eigen::MatrixXd> pieces_;
};

/// (G.M)(t_i) = sum_{j <= i} G(t_{j-1}) (M(t_j) - M(t_{j-1})) as an N x Nt
/// matrix; G(j) returns the N x K integrand on (t_j, t_{j+1}].
template <class Integrand>
Eigen::MatrixXd stochastic_integral(Integrand&& G, const MartingalePath& path, const DirichletLaplacian& L) {
  const auto N = static_cast<Eigen::Index>(L.size());
  const auto Nt = static_cast<Eigen::Index>(path.size());
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(N, Nt);
  for (Eigen::Index i = 1; i < Nt; ++i) {
    const Eigen::MatrixXd& g = G(static_cast<std::size_t>(i - 1));
    if (g.rows() != N || g.cols() != static_cast<Eigen::Index>(path.n_modes()))
      throw std::invalid_argument("stochastic_integral: integrand shape does not match grid/modes");
    out.col(i) = out.col(i - 1) + g * path.increment(static_cast<std::size_t>(i));
  }
  return out;
}

/// Quadratic variation [G.M](t_i): continuous part by left-point quadrature of
/// sum_k sigma_k^2 |G e_k|_{-1}^2, plus sum over jumps of |G e_k dM|_{-1}^2.
template <class Integrand>
std::vector<double> realized_qv(Integrand&& G, const MartingalePath& path, const NoiseSpec& spec,
                                const DirichletLaplacian& L) {
  if (path.n_modes() != spec.n_modes()) throw std::invalid_argument("realized_qv: mode count mismatch");
  const std::size_t Nt = path.size();
  const std::size_t K = spec.n_modes();
  const Eigen::VectorXd s2 = spec.wiener_variances();
  std::vector<double> qv(Nt, 0.0);
  std::size_t next = 0;
  for (std::size_t i = 1; i < Nt; ++i) {
    const Eigen::MatrixXd& g = G(i - 1);
    if (g.rows() != static_cast<Eigen::Index>(L.size()) || g.cols() != static_cast<Eigen::Index>(K))
      throw std::invalid_argument("realized_qv: integrand shape does not match grid/modes");
    const double tau = path.times[i] - path.times[i - 1];
    std::vector<double> col_norm(K, -1.0);
    auto norm_of = [&](std::size_t k) {
      if (col_norm[k] < 0.0) col_norm[k] = norm_hminus1_sq(g.col(static_cast<Eigen::Index>(k)), L);
      return col_norm[k];
    };
    double inc = 0.0;
    for (std::size_t k = 0; k < K; ++k)
      if (s2[static_cast<Eigen::Index>(k)] > 0.0) inc += tau * s2[static_cast<Eigen::Index>(k)] * norm_of(k);
    while (next < path.jumps.size() && path.jumps[next].index == i) {
      const auto& jr = path.jumps[next];
      inc += jr.size * jr.size * norm_of(jr.mode);
      ++next;
    }
    qv[i] = qv[i - 1] + inc;
  }
  return qv;
}

}  // namespace spm
