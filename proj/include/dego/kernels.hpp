#pragma once

#include <vector>

#include "dego/numerics.hpp"

namespace dego {

/// k(x, x') = variance * exp(-sum_i rate_i * |x_i - x'_i|^{exponent_i}),
/// exponents in [1, 2].
struct ArdPExpKernel {
  double variance = 1.0;
  Vector rates;
  Vector exponents;

  static ArdPExpKernel isotropic(int dim, double variance, double rate, double exponent);

  int dim() const { return static_cast<int>(rates.size()); }
  double operator()(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& xp) const;
};

/// k(x, x') = variance * exp(-sum_i rate_i * (x_i - x'_i)^2)
struct ArdSqExpKernel {
  double variance = 1.0;
  Vector rates;

  static ArdSqExpKernel isotropic(int dim, double variance, double rate);

  int dim() const { return static_cast<int>(rates.size()); }
  double operator()(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& xp) const;
};

/// Monotone warping of the unit box, one map per input dimension. Each map
/// is the normalized integral of a piecewise-linear density whose values
/// sit on equispaced knots over [0, 1].
class KnotMapping {
 public:
  KnotMapping() = default;
  /// densities[i] holds the knot values for dimension i (at least 2 knots).
  explicit KnotMapping(std::vector<Vector> densities);

  static KnotMapping uniform(int dim, int knots);

  int dim() const { return static_cast<int>(densities_.size()); }
  int knots(int i) const { return static_cast<int>(densities_[i].size()); }
  const Vector& densities(int i) const { return densities_[i]; }

  /// g_i(t), t in [0, 1].
  double warp(int i, double t) const;
  Vector map_point(const Eigen::Ref<const Vector>& x) const;
  Matrix map_rows(const Matrix& x) const;

 private:
  std::vector<Vector> densities_;
  std::vector<bool> is_uniform_;
  std::vector<double> totals_;
};

/// p-exponential kernel evaluated on warped coordinates.
struct MappedKernel {
  ArdPExpKernel kernel;
  KnotMapping mapping;

  int dim() const { return kernel.dim(); }
  double operator()(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& xp) const;
};

template <typename Kernel>
Matrix gram(const Kernel& kernel, const Matrix& x, const Matrix& xp) {
  Matrix out(x.rows(), xp.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < xp.rows(); ++j) {
      out(i, j) = kernel(x.row(i).transpose(), xp.row(j).transpose());
    }
  }
  return out;
}

template <typename Kernel>
Matrix gram(const Kernel& kernel, const Matrix& x) {
  const Eigen::Index n = x.rows();
  Matrix out(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out(i, i) = kernel(x.row(i).transpose(), x.row(i).transpose());
    for (Eigen::Index j = i + 1; j < n; ++j) {
      out(i, j) = out(j, i) = kernel(x.row(i).transpose(), x.row(j).transpose());
    }
  }
  return out;
}

}  // namespace dego
