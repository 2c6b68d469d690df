#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "grmcat/errors.hpp"

namespace grmcat {

/// Floor applied to densities inside logarithms (KL, log-density). Keeps grid
/// tails finite; perturbs integrals far below any tolerance used here.
inline constexpr double kDensityFloor = 1e-300;

/// Uniform quadrature grid over ability with inclusive endpoints.
class AbilityGrid {
 public:
  AbilityGrid(double lo, double hi, std::size_t n_points) : lo_(lo), hi_(hi) {
    if (!(std::isfinite(lo) && std::isfinite(hi)) || !(lo < hi)) {
      throw std::invalid_argument("ability grid needs finite lo < hi");
    }
    if (n_points < 3) {
      throw std::invalid_argument("ability grid needs at least 3 points, got " +
                                  std::to_string(n_points));
    }
    step_ = (hi - lo) / static_cast<double>(n_points - 1);
    points_.resize(n_points);
    for (std::size_t j = 0; j < n_points; ++j) {
      points_[j] = lo + static_cast<double>(j) * step_;
    }
    points_.back() = hi;
  }

  double lo() const noexcept { return lo_; }
  double hi() const noexcept { return hi_; }
  double step() const noexcept { return step_; }
  std::size_t size() const noexcept { return points_.size(); }
  const std::vector<double>& points() const noexcept { return points_; }
  double operator[](std::size_t j) const noexcept { return points_[j]; }

  /// step * (v0/2 + v1 + ... + v_{n-2} + v_{n-1}/2)
  double trapezoid(std::span<const double> values) const {
    if (values.size() != points_.size()) {
      throw std::invalid_argument("trapezoid: expected " + std::to_string(points_.size()) +
                                  " values, got " + std::to_string(values.size()));
    }
    double interior = 0.0;
    for (std::size_t j = 1; j + 1 < values.size(); ++j) interior += values[j];
    return step_ * (0.5 * values.front() + interior + 0.5 * values.back());
  }

  /// Index of the grid point closest to theta (clamped to the grid).
  std::size_t nearest(double theta) const noexcept {
    const double pos = (theta - lo_) / step_;
    if (!(pos > 0.0)) return 0;
    const auto j = static_cast<std::size_t>(std::lround(pos));
    return std::min(j, points_.size() - 1);
  }

  friend bool operator==(const AbilityGrid& a, const AbilityGrid& b) noexcept {
    return a.lo_ == b.lo_ && a.hi_ == b.hi_ && a.points_.size() == b.points_.size();
  }

 private:
  double lo_;
  double hi_;
  double step_ = 0.0;
  std::vector<double> points_;
};

using GridPtr = std::shared_ptr<const AbilityGrid>;

inline GridPtr build_grid(double lo = -6.0, double hi = 6.0, std::size_t n_points = 200) {
  return std::make_shared<const AbilityGrid>(lo, hi, n_points);
}

/// Nonnegative density over an AbilityGrid. Densities produced by this library
/// are trapezoid-normalized; the raw constructor only checks sign and length.
class Density {
 public:
  Density(GridPtr grid, std::vector<double> values)
      : grid_(std::move(grid)), values_(std::move(values)) {
    if (!grid_) throw std::invalid_argument("density requires a grid");
    if (values_.size() != grid_->size()) {
      throw std::invalid_argument("density length does not match grid");
    }
    for (double v : values_) {
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw std::invalid_argument("density values must be finite and nonnegative");
      }
    }
  }

  /// Rescales so the trapezoid integral is 1.
  static Density normalized(GridPtr grid, std::vector<double> values) {
    Density d(std::move(grid), std::move(values));
    const double z = d.integral();
    if (!(z > 0.0) || !std::isfinite(z)) {
      throw NumericalDegeneracy("density has no mass on the grid");
    }
    for (double& v : d.values_) v /= z;
    return d;
  }

  const AbilityGrid& grid() const noexcept { return *grid_; }
  const GridPtr& grid_ptr() const noexcept { return grid_; }
  const std::vector<double>& values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t j) const noexcept { return values_[j]; }

  double integral() const { return grid_->trapezoid(values_); }

 private:
  GridPtr grid_;
  std::vector<double> values_;
};

inline Density gaussian_prior(const GridPtr& grid, double mean, double sd) {
  if (!(sd > 0.0) || !std::isfinite(sd) || !std::isfinite(mean)) {
    throw std::invalid_argument("gaussian prior needs finite mean and sd > 0");
  }
  std::vector<double> v(grid->size());
  for (std::size_t j = 0; j < v.size(); ++j) {
    const double z = ((*grid)[j] - mean) / sd;
    v[j] = std::exp(-0.5 * z * z);
  }
  return Density::normalized(grid, std::move(v));
}

inline Density uniform_density(const GridPtr& grid) {
  return Density::normalized(grid, std::vector<double>(grid->size(), 1.0));
}

/// Mass concentrated on the grid cell nearest theta.
inline Density point_mass(const GridPtr& grid, double theta) {
  std::vector<double> v(grid->size(), 0.0);
  v[grid->nearest(theta)] = 1.0;
  return Density::normalized(grid, std::move(v));
}

inline double mean(const Density& d) {
  const auto& pts = d.grid().points();
  std::vector<double> f(d.size());
  for (std::size_t j = 0; j < f.size(); ++j) f[j] = pts[j] * d[j];
  return d.grid().trapezoid(f);
}

inline double variance(const Density& d) {
  const double m = mean(d);
  const auto& pts = d.grid().points();
  std::vector<double> f(d.size());
  for (std::size_t j = 0; j < f.size(); ++j) {
    const double c = pts[j] - m;
    f[j] = c * c * d[j];
  }
  return std::max(0.0, d.grid().trapezoid(f));
}

/// Differential entropy -∫ q log q, with 0 log 0 = 0.
inline double entropy(const Density& d) {
  std::vector<double> f(d.size());
  for (std::size_t j = 0; j < f.size(); ++j) {
    const double q = d[j];
    f[j] = q > 0.0 ? -q * std::log(std::max(q, kDensityFloor)) : 0.0;
  }
  return d.grid().trapezoid(f);
}

/// D(p || q). q is floored at kDensityFloor wherever p has mass.
inline double kl_divergence(const Density& p, const Density& q) {
  if (!(p.grid() == q.grid())) {
    throw std::invalid_argument("kl_divergence: densities live on different grids");
  }
  std::vector<double> f(p.size());
  for (std::size_t j = 0; j < f.size(); ++j) {
    const double pj = p[j];
    f[j] = pj > 0.0 ? pj * (std::log(pj) - std::log(std::max(q[j], kDensityFloor))) : 0.0;
  }
  return p.grid().trapezoid(f);
}

}  // namespace grmcat
