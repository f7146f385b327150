#pragma once

// Maximal monotone graphs beta = dj on the real line, their resolvents
// (I + lambda beta)^{-1}, Yosida approximants, potentials and conjugates.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <variant>

namespace spm {

/// beta(r) = |r|^{m-1} r, m >= 1.
struct PowerLaw {
  double exponent = 3.0;
};

/// beta(r) = c r, c > 0.
struct Linear {
  double slope = 1.0;
};

/// beta(r) = a sign(r), beta(0) = [-a, a]. Bounded range.
struct ScaledSignum {
  double height = 1.0;
};

/// Two-phase Stefan graph: slope_negative * r for r < 0, a vertical segment
/// [0, latent] at r = 0, and latent + slope_positive * r for r > 0.
struct StefanPiecewise {
  double slope_negative = 1.0;
  double slope_positive = 1.0;
  double latent = 1.0;
};

/// Closed interval [lo, hi]; lo == hi for single-valued points.
struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double s, double tol) const noexcept { return s >= lo - tol && s <= hi + tol; }
};

class MonotoneGraph {
 public:
  using Variant = std::variant<PowerLaw, Linear, ScaledSignum, StefanPiecewise>;

  MonotoneGraph(Variant v) : v_(v) { validate(); }  // NOLINT(google-explicit-constructor)

  static MonotoneGraph power_law(double m) { return Variant{PowerLaw{m}}; }
  static MonotoneGraph linear(double c) { return Variant{Linear{c}}; }
  static MonotoneGraph signum(double a) { return Variant{ScaledSignum{a}}; }
  static MonotoneGraph stefan(double rho_neg, double rho_pos, double latent) {
    return Variant{StefanPiecewise{rho_neg, rho_pos, latent}};
  }

  const Variant& variant() const noexcept { return v_; }

  template <class Visitor>
  decltype(auto) visit(Visitor&& vis) const {
    return std::visit(std::forward<Visitor>(vis), v_);
  }

  std::string name() const {
    return visit([](const auto& g) -> std::string {
      using T = std::decay_t<decltype(g)>;
      if constexpr (std::is_same_v<T, PowerLaw>) return "power_law(" + std::to_string(g.exponent) + ")";
      else if constexpr (std::is_same_v<T, Linear>) return "linear(" + std::to_string(g.slope) + ")";
      else if constexpr (std::is_same_v<T, ScaledSignum>) return "signum(" + std::to_string(g.height) + ")";
      else return "stefan";
    });
  }

  /// R(beta) = R. False only for the bounded-range signum graph, which the
  /// solvers refuse unless explicitly allowed.
  bool full_range() const noexcept { return !std::holds_alternative<ScaledSignum>(v_); }

  /// Single-valued and globally Lipschitz, so lambda = 0 is admissible.
  bool globally_lipschitz() const noexcept {
    if (std::holds_alternative<Linear>(v_)) return true;
    if (const auto* p = std::get_if<PowerLaw>(&v_)) return p->exponent == 1.0;
    return false;
  }

  /// The set beta(r).
  Interval section(double r) const {
    return visit([r](const auto& g) -> Interval {
      using T = std::decay_t<decltype(g)>;
      if constexpr (std::is_same_v<T, PowerLaw>) {
        const double s = std::copysign(std::pow(std::abs(r), g.exponent), r);
        return {s, s};
      } else if constexpr (std::is_same_v<T, Linear>) {
        return {g.slope * r, g.slope * r};
      } else if constexpr (std::is_same_v<T, ScaledSignum>) {
        if (r > 0) return {g.height, g.height};
        if (r < 0) return {-g.height, -g.height};
        return {-g.height, g.height};
      } else {
        if (r < 0) return {g.slope_negative * r, g.slope_negative * r};
        if (r > 0) return {g.latent + g.slope_positive * r, g.latent + g.slope_positive * r};
        return {0.0, g.latent};
      }
    });
  }

  /// Element of minimal modulus in beta(r).
  double minimal_section(double r) const {
    const Interval s = section(r);
    if (s.lo <= 0.0 && s.hi >= 0.0) return 0.0;
    return std::abs(s.lo) < std::abs(s.hi) ? s.lo : s.hi;
  }

  /// Derivative of the single-valued branch at r (used when lambda = 0).
  double slope(double r) const {
    return visit([r](const auto& g) -> double {
      using T = std::decay_t<decltype(g)>;
      if constexpr (std::is_same_v<T, PowerLaw>) {
        if (g.exponent == 1.0) return 1.0;
        return g.exponent * std::pow(std::abs(r), g.exponent - 1.0);
      } else if constexpr (std::is_same_v<T, Linear>) {
        return g.slope;
      } else if constexpr (std::is_same_v<T, ScaledSignum>) {
        return 0.0;
      } else {
        return r < 0 ? g.slope_negative : g.slope_positive;
      }
    });
  }

 private:
  void validate() const {
    auto bad = [](const char* msg) { throw std::invalid_argument(msg); };
    visit([&](const auto& g) {
      using T = std::decay_t<decltype(g)>;
      if constexpr (std::is_same_v<T, PowerLaw>) {
        if (!(g.exponent >= 1.0) || !std::isfinite(g.exponent)) bad("power_law: exponent must be >= 1");
      } else if constexpr (std::is_same_v<T, Linear>) {
        if (!(g.slope > 0.0)) bad("linear: slope must be > 0");
      } else if constexpr (std::is_same_v<T, ScaledSignum>) {
        if (!(g.height > 0.0)) bad("signum: height must be > 0");
      } else {
        if (!(g.slope_negative > 0.0) || !(g.slope_positive > 0.0)) bad("stefan: slopes must be > 0");
        if (!(g.latent >= 0.0)) bad("stefan: latent height must be >= 0");
      }
    });
  }

  Variant v_;
};

namespace detail {

inline void require_positive_lambda(double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("Yosida parameter lambda must be > 0");
}

/// Root of x + lambda |x|^{m-1} x = r. Newton from the upper bound
/// min(|r|, (|r|/lambda)^{1/m}) decreases monotonically onto the root
/// (the map is convex on x > 0); bisection on [0, |r|] guards every step.
inline double power_resolvent(double m, double lambda, double r) {
  if (r == 0.0) return 0.0;
  const double target = std::abs(r);
  if (m == 1.0) return r / (1.0 + lambda);
  auto phi = [&](double x) { return x + lambda * std::pow(x, m) - target; };
  double lo = 0.0;
  double hi = target;
  double x = std::min(target, std::pow(target / lambda, 1.0 / m));
  for (int it = 0; it < 200; ++it) {
    const double f = phi(x);
    if (f == 0.0) break;
    if (f > 0.0) hi = std::min(hi, x);
    else lo = std::max(lo, x);
    const double df = 1.0 + lambda * m * std::pow(x, m - 1.0);
    double next = x - f / df;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    const double step = std::abs(next - x);
    x = next;
    if (step <= 1e-15 * std::max(1.0, x) || hi - lo <= 1e-15 * std::max(1.0, hi)) break;
  }
  return std::copysign(x, r);
}

}  // namespace detail

/// (I + lambda beta)^{-1} r: the unique x with x + lambda beta(x) containing r.
inline double resolvent(const MonotoneGraph& graph, double lambda, double r) {
  detail::require_positive_lambda(lambda);
  return graph.visit([&](const auto& g) -> double {
    using T = std::decay_t<decltype(g)>;
    if constexpr (std::is_same_v<T, PowerLaw>) {
      return detail::power_resolvent(g.exponent, lambda, r);
    } else if constexpr (std::is_same_v<T, Linear>) {
      return r / (1.0 + lambda * g.slope);
    } else if constexpr (std::is_same_v<T, ScaledSignum>) {
      const double shrink = std::abs(r) - lambda * g.height;
      return shrink <= 0.0 ? 0.0 : std::copysign(shrink, r);
    } else {
      if (r < 0.0) return r / (1.0 + lambda * g.slope_negative);
      if (r <= lambda * g.latent) return 0.0;
      return (r - lambda * g.latent) / (1.0 + lambda * g.slope_positive);
    }
  });
}

namespace detail {

/// beta_lambda(r) given x = resolvent(lambda, r).
inline double yosida_at(const MonotoneGraph& graph, double lambda, double r, double x) {
  return graph.visit([&](const auto& g) -> double {
    using T = std::decay_t<decltype(g)>;
    if constexpr (std::is_same_v<T, PowerLaw>) {
      return std::copysign(std::pow(std::abs(x), g.exponent), x);
    } else if constexpr (std::is_same_v<T, Linear>) {
      return g.slope * x;
    } else if constexpr (std::is_same_v<T, ScaledSignum>) {
      if (x != 0.0) return std::copysign(g.height, x);
      return r / lambda;
    } else {
      if (x < 0.0) return g.slope_negative * x;
      if (x > 0.0) return g.latent + g.slope_positive * x;
      return r / lambda;
    }
  });
}

/// d/dr beta_lambda(r) given x = resolvent(lambda, r).
inline double yosida_slope_at(const MonotoneGraph& graph, double lambda, double r, double x) {
  return graph.visit([&](const auto& g) -> double {
    using T = std::decay_t<decltype(g)>;
    if constexpr (std::is_same_v<T, ScaledSignum>) {
      return x == 0.0 ? 1.0 / lambda : 0.0;
    } else if constexpr (std::is_same_v<T, StefanPiecewise>) {
      if (x == 0.0 && r >= 0.0 && g.latent > 0.0) return 1.0 / lambda;
      const double s = graph.slope(x);
      return s / (1.0 + lambda * s);
    } else {
      const double s = graph.slope(x);
      return s / (1.0 + lambda * s);
    }
  });
}

}  // namespace detail

/// beta_lambda(r) = (r - (I + lambda beta)^{-1} r) / lambda. On single-valued
/// branches the equal value beta(resolvent) is returned, which avoids the
/// cancellation in r - x for small lambda.
inline double yosida(const MonotoneGraph& graph, double lambda, double r) {
  return detail::yosida_at(graph, lambda, r, resolvent(graph, lambda, r));
}

/// d/dr beta_lambda(r), in [0, 1/lambda]. On vertical segments the slope is 1/lambda.
inline double yosida_slope(const MonotoneGraph& graph, double lambda, double r) {
  return detail::yosida_slope_at(graph, lambda, r, resolvent(graph, lambda, r));
}

/// Convex potential j with beta = dj and j(0) = 0.
inline double potential_j(const MonotoneGraph& graph, double r) {
  return graph.visit([r](const auto& g) -> double {
    using T = std::decay_t<decltype(g)>;
    if constexpr (std::is_same_v<T, PowerLaw>) {
      return std::pow(std::abs(r), g.exponent + 1.0) / (g.exponent + 1.0);
    } else if constexpr (std::is_same_v<T, Linear>) {
      return 0.5 * g.slope * r * r;
    } else if constexpr (std::is_same_v<T, ScaledSignum>) {
      return g.height * std::abs(r);
    } else {
      if (r < 0.0) return 0.5 * g.slope_negative * r * r;
      return g.latent * r + 0.5 * g.slope_positive * r * r;
    }
  });
}

/// Convex conjugate j*(s) = sup_r (r s - j(r)). std::nullopt stands for +inf
/// (s outside the closure of R(beta)).
inline std::optional<double> conjugate_jstar(const MonotoneGraph& graph, double s) {
  return graph.visit([s](const auto& g) -> std::optional<double> {
    using T = std::decay_t<decltype(g)>;
    if constexpr (std::is_same_v<T, PowerLaw>) {
      const double m = g.exponent;
      return m / (m + 1.0) * std::pow(std::abs(s), (m + 1.0) / m);
    } else if constexpr (std::is_same_v<T, Linear>) {
      return s * s / (2.0 * g.slope);
    } else if constexpr (std::is_same_v<T, ScaledSignum>) {
      if (std::abs(s) <= g.height) return 0.0;
      return std::nullopt;
    } else {
      if (s < 0.0) return s * s / (2.0 * g.slope_negative);
      if (s <= g.latent) return 0.0;
      return (s - g.latent) * (s - g.latent) / (2.0 * g.slope_positive);
    }
  });
}

/// Moreau envelope j_lambda(r) = j(x) + (r - x)^2 / (2 lambda), x the
/// resolvent; the primitive of beta_lambda.
inline double moreau_envelope(const MonotoneGraph& graph, double lambda, double r) {
  const double x = resolvent(graph, lambda, r);
  return potential_j(graph, x) + (r - x) * (r - x) / (2.0 * lambda);
}

/// Upper bound on j(-x)/j(x) for x >= 1 (growth symmetry condition).
inline double growth_ratio_bound(const MonotoneGraph& graph) {
  return graph.visit([](const auto& g) -> double {
    using T = std::decay_t<decltype(g)>;
    if constexpr (std::is_same_v<T, StefanPiecewise>) {
      return std::max(1.0, g.slope_negative / g.slope_positive);
    } else {
      return 1.0;
    }
  });
}

}  // namespace spm
