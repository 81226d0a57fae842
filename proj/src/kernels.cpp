#include "dego/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dego {

ArdPExpKernel ArdPExpKernel::isotropic(int dim, double variance, double rate, double exponent) {
  return {variance, Vector::Constant(dim, rate), Vector::Constant(dim, exponent)};
}

double ArdPExpKernel::operator()(const Eigen::Ref<const Vector>& x,
                                 const Eigen::Ref<const Vector>& xp) const {
  double s = 0.0;
  for (Eigen::Index i = 0; i < rates.size(); ++i) {
    const double d = std::abs(x[i] - xp[i]);
    s += rates[i] * (exponents[i] == 2.0 ? d * d : std::pow(d, exponents[i]));
  }
  return variance * std::exp(-s);
}

ArdSqExpKernel ArdSqExpKernel::isotropic(int dim, double variance, double rate) {
  return {variance, Vector::Constant(dim, rate)};
}

double ArdSqExpKernel::operator()(const Eigen::Ref<const Vector>& x,
                                  const Eigen::Ref<const Vector>& xp) const {
  return variance * std::exp(-(rates.array() * (x - xp).array().square()).sum());
}

KnotMapping::KnotMapping(std::vector<Vector> densities) : densities_(std::move(densities)) {
  for (auto& rho : densities_) {
    if (rho.size() < 2) {
      throw std::invalid_argument("KnotMapping: need at least two knots per dimension");
    }
    if ((rho.array() < 0.0).any() || !rho.allFinite()) {
      throw std::invalid_argument("KnotMapping: densities must be finite and nonnegative");
    }
    // Degenerate all-zero density behaves as uniform.
    if ((rho.array() == 0.0).all()) rho.setOnes();
    const double h = 1.0 / static_cast<double>(rho.size() - 1);
    double total = 0.0;
    for (Eigen::Index k = 0; k + 1 < rho.size(); ++k) total += 0.5 * h * (rho[k] + rho[k + 1]);
    totals_.push_back(total);
    is_uniform_.push_back((rho.array() == rho[0]).all());
  }
}

KnotMapping KnotMapping::uniform(int dim, int knots) {
  return KnotMapping(std::vector<Vector>(dim, Vector::Ones(knots)));
}

double KnotMapping::warp(int i, double t) const {
  if (is_uniform_[i]) return t;
  const Vector& rho = densities_[i];
  const Eigen::Index segments = rho.size() - 1;
  const double h = 1.0 / static_cast<double>(segments);
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return 1.0;
  double acc = 0.0;
  for (Eigen::Index k = 0; k < segments; ++k) {
    const double left = k * h;
    if (t >= left + h && k + 1 < segments) {
      acc += 0.5 * h * (rho[k] + rho[k + 1]);
      continue;
    }
    const double u = std::min(t - left, h);
    acc += rho[k] * u + (rho[k + 1] - rho[k]) * u * u / (2.0 * h);
    break;
  }
  return acc / totals_[i];
}

Vector KnotMapping::map_point(const Eigen::Ref<const Vector>& x) const {
  if (x.size() != dim()) throw DimensionMismatch("KnotMapping: point dimension");
  Vector out(x.size());
  for (int i = 0; i < dim(); ++i) out[i] = warp(i, x[i]);
  return out;
}

Matrix KnotMapping::map_rows(const Matrix& x) const {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) out.row(r) = map_point(x.row(r).transpose());
  return out;
}

double MappedKernel::operator()(const Eigen::Ref<const Vector>& x,
                                const Eigen::Ref<const Vector>& xp) const {
  return kernel(mapping.map_point(x), mapping.map_point(xp));
}

}  // namespace dego
