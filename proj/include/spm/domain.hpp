#pragma once

// Discrete domain: uniform box grid, the homogeneous Dirichlet Laplacian and
// the L2 / H^{-1} geometry it induces.
//
// Fields are nodal vectors on interior nodes with the x index running fastest.
// The L2 product is the cell-volume weighted Euclidean product, so the
// eigenvectors returned here are orthonormal for that weight. All spectral
// operators (fractional smoothing, mollifier) are multipliers in the
// eigenbasis of -Delta_h.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <array>
#include <cmath>
#include <cstddef>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "spm/error.hpp"

namespace spm {

using Field = Eigen::VectorXd;

class SpatialGrid {
 public:
  SpatialGrid(int dim, std::array<int, 2> nodes, std::array<double, 2> length)
      : dim_(dim), nodes_(nodes), length_(length) {
    if (dim != 1 && dim != 2) throw std::invalid_argument("SpatialGrid: dim must be 1 or 2");
    if (dim == 1) {
      nodes_[1] = 1;
      length_[1] = 1.0;
    }
    for (int a = 0; a < dim; ++a) {
      if (nodes_[a] < 1) throw std::invalid_argument("SpatialGrid: need at least one interior node per axis");
      if (!(length_[a] > 0.0) || !std::isfinite(length_[a]))
        throw std::invalid_argument("SpatialGrid: axis length must be positive");
      h_[a] = length_[a] / static_cast<double>(nodes_[a] + 1);
    }
    if (dim == 1) h_[1] = 1.0;
  }

  static SpatialGrid interval(int n, double length = 1.0) { return {1, {n, 1}, {length, 1.0}}; }
  static SpatialGrid box(int nx, int ny, double lx = 1.0, double ly = 1.0) { return {2, {nx, ny}, {lx, ly}}; }

  int dim() const noexcept { return dim_; }
  int nodes(int axis) const { return nodes_.at(static_cast<std::size_t>(axis)); }
  double length(int axis) const { return length_.at(static_cast<std::size_t>(axis)); }
  double h(int axis) const { return h_.at(static_cast<std::size_t>(axis)); }

  std::size_t size() const noexcept {
    return static_cast<std::size_t>(nodes_[0]) * static_cast<std::size_t>(nodes_[1]);
  }

  /// Quadrature weight of one node: product of mesh widths over the axes.
  double cell_volume() const noexcept { return dim_ == 1 ? h_[0] : h_[0] * h_[1]; }

  /// Cartesian coordinate of an interior node along an axis.
  double coordinate(std::size_t node, int axis) const {
    const std::size_t nx = static_cast<std::size_t>(nodes_[0]);
    const std::size_t idx = axis == 0 ? node % nx : node / nx;
    return static_cast<double>(idx + 1) * h(axis);
  }

  bool operator==(const SpatialGrid&) const = default;

 private:
  int dim_;
  std::array<int, 2> nodes_;
  std::array<double, 2> length_;
  std::array<double, 2> h_{};
};

namespace detail {

inline void require_size(const Field& f, std::size_t n, const char* what) {
  if (static_cast<std::size_t>(f.size()) != n)
    throw std::invalid_argument(std::string(what) + ": field has " + std::to_string(f.size()) +
                                " entries, grid has " + std::to_string(n));
}

}  // namespace detail

/// Throws if a field carries NaN or Inf.
inline void require_finite(const Field& f, const char* what) {
  if (!f.allFinite()) throw SolverError(std::string(what) + ": non-finite field entries");
}

/// Five-point (three-point in 1D) Dirichlet Laplacian with a cached dense
/// eigendecomposition and sparse Cholesky factor. Immutable; copies share
/// the cached factorizations.
class DirichletLaplacian {
 public:
  static constexpr std::size_t default_max_nodes = 4096;

  explicit DirichletLaplacian(SpatialGrid grid, std::size_t max_nodes = default_max_nodes)
      : grid_(grid), data_(build(grid, max_nodes)) {}

  const SpatialGrid& grid() const noexcept { return grid_; }
  std::size_t size() const noexcept { return grid_.size(); }

  /// The SPD matrix -Delta_h on interior nodes.
  const Eigen::SparseMatrix<double>& stiffness() const noexcept { return data_->stiffness; }

  /// Eigenvalues 0 < mu_1 <= mu_2 <= ... of -Delta_h.
  const Eigen::VectorXd& eigenvalues() const noexcept { return data_->mu; }

  /// Eigenvector phi_j (0-based), orthonormal in the weighted L2 product.
  Field eigenvector(std::size_t j) const {
    if (j >= size()) throw std::out_of_range("eigenvector index");
    return data_->basis.col(static_cast<Eigen::Index>(j)) / std::sqrt(grid_.cell_volume());
  }

  /// Delta_h u (negative definite).
  Field apply(const Field& u) const {
    detail::require_size(u, size(), "apply_laplacian");
    return -(data_->stiffness * u);
  }

  /// (-Delta_h)^{-1} f by sparse Cholesky.
  Field solve(const Field& f) const {
    detail::require_size(f, size(), "solve_laplacian");
    Field u = data_->cholesky.solve(f);
    if (data_->cholesky.info() != Eigen::Success) throw SolverError("solve_laplacian: Cholesky solve failed");
    return u;
  }

  /// Coefficients <f, phi_j>_2 in the eigenbasis.
  Eigen::VectorXd coefficients(const Field& f) const {
    detail::require_size(f, size(), "coefficients");
    return std::sqrt(grid_.cell_volume()) * (data_->basis.transpose() * f);
  }

  /// sum_j m(mu_j) <f, phi_j>_2 phi_j for a scalar multiplier m.
  template <class Multiplier>
  Field spectral(const Field& f, Multiplier&& m) const {
    detail::require_size(f, size(), "spectral");
    Eigen::VectorXd c = data_->basis.transpose() * f;
    for (Eigen::Index j = 0; j < c.size(); ++j) c[j] *= m(data_->mu[j]);
    return data_->basis * c;
  }

  /// Multiplier values m(mu_j) for every eigenvalue.
  template <class Multiplier>
  Eigen::VectorXd multiplier_values(Multiplier&& m) const {
    Eigen::VectorXd out(data_->mu.size());
    for (Eigen::Index j = 0; j < out.size(); ++j) out[j] = m(data_->mu[j]);
    return out;
  }

  /// Applies a precomputed vector of multiplier values.
  Field spectral_values(const Field& f, const Eigen::VectorXd& values) const {
    detail::require_size(f, size(), "spectral");
    Eigen::VectorXd c = data_->basis.transpose() * f;
    return data_->basis * c.cwiseProduct(values);
  }

 private:
  struct Data {
    Eigen::SparseMatrix<double> stiffness;
    Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> cholesky;
    Eigen::VectorXd mu;
    Eigen::MatrixXd basis;  // Euclidean-orthonormal eigenvectors
  };

  static std::shared_ptr<const Data> build(const SpatialGrid& grid, std::size_t max_nodes) {
    const std::size_t n = grid.size();
    if (n > max_nodes)
      throw std::invalid_argument("build_laplacian: " + std::to_string(n) +
                                  " interior nodes exceeds the dense eigendecomposition cap of " +
                                  std::to_string(max_nodes));
    auto data = std::make_shared<Data>();
    const int nx = grid.nodes(0);
    const int ny = grid.nodes(1);
    const double ix2 = 1.0 / (grid.h(0) * grid.h(0));
    const double iy2 = grid.dim() == 2 ? 1.0 / (grid.h(1) * grid.h(1)) : 0.0;
    std::vector<Eigen::Triplet<double>> entries;
    entries.reserve(5 * n);
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        const int row = i + nx * j;
        entries.emplace_back(row, row, 2.0 * ix2 + 2.0 * iy2);
        if (i > 0) entries.emplace_back(row, row - 1, -ix2);
        if (i + 1 < nx) entries.emplace_back(row, row + 1, -ix2);
        if (grid.dim() == 2) {
          if (j > 0) entries.emplace_back(row, row - nx, -iy2);
          if (j + 1 < ny) entries.emplace_back(row, row + nx, -iy2);
        }
      }
    }
    const auto en = static_cast<Eigen::Index>(n);
    data->stiffness.resize(en, en);
    data->stiffness.setFromTriplets(entries.begin(), entries.end());
    data->stiffness.makeCompressed();
    data->cholesky.compute(data->stiffness);
    if (data->cholesky.info() != Eigen::Success) throw SolverError("build_laplacian: Cholesky factorization failed");

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Eigen::MatrixXd(data->stiffness));
    if (eig.info() != Eigen::Success) throw SolverError("build_laplacian: eigendecomposition failed");
    data->mu = eig.eigenvalues();
    data->basis = eig.eigenvectors();
    return data;
  }

  SpatialGrid grid_;
  std::shared_ptr<const Data> data_;
};

inline DirichletLaplacian build_laplacian(const SpatialGrid& grid,
                                          std::size_t max_nodes = DirichletLaplacian::default_max_nodes) {
  return DirichletLaplacian(grid, max_nodes);
}

inline double inner_l2(const Field& u, const Field& v, const SpatialGrid& grid) {
  detail::require_size(u, grid.size(), "inner_l2");
  detail::require_size(v, grid.size(), "inner_l2");
  return grid.cell_volume() * u.dot(v);
}

inline Field solve_laplacian(const DirichletLaplacian& L, const Field& f) { return L.solve(f); }

inline Field apply_laplacian(const DirichletLaplacian& L, const Field& u) { return L.apply(u); }

/// <f, g>_{-1} = <(-Delta_h)^{-1} f, g>_2.
inline double inner_hminus1(const Field& f, const Field& g, const DirichletLaplacian& L) {
  detail::require_size(g, L.size(), "inner_hminus1");
  return inner_l2(L.solve(f), g, L.grid());
}

inline double norm_hminus1_sq(const Field& f, const DirichletLaplacian& L) {
  return std::max(0.0, inner_hminus1(f, f, L));
}

inline double norm_hminus1(const Field& f, const DirichletLaplacian& L) { return std::sqrt(norm_hminus1_sq(f, L)); }

/// (-Delta_h)^{-gamma} f.
inline Field smooth_gamma(const Field& f, double gamma, const DirichletLaplacian& L) {
  if (gamma < 0.0) throw std::invalid_argument("smooth_gamma: gamma must be nonnegative");
  if (gamma == 0.0) {
    detail::require_size(f, L.size(), "smooth_gamma");
    return f;
  }
  return L.spectral(f, [gamma](double mu) { return std::pow(mu, -gamma); });
}

/// Heat-semigroup multiplier exp(-mu/n^2) of the spectral mollifier.
inline double mollifier_multiplier(double mu, int n) {
  const double nn = static_cast<double>(n);
  return std::exp(-mu / (nn * nn));
}

/// Spectral mollifier Lambda_n: contracts |.|_{-1} and converges to the
/// identity as n grows.
inline Field mollify(const Field& f, int n, const DirichletLaplacian& L) {
  if (n < 1) throw std::invalid_argument("mollify: level n must be >= 1");
  return L.spectral(f, [n](double mu) { return mollifier_multiplier(mu, n); });
}

}  // namespace spm
