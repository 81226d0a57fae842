#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace dego {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class NotPositiveDefinite : public std::runtime_error {
 public:
  explicit NotPositiveDefinite(const std::string& what) : std::runtime_error(what) {}
};

class DimensionMismatch : public std::invalid_argument {
 public:
  explicit DimensionMismatch(const std::string& what) : std::invalid_argument(what) {}
};

/// Cholesky factor of a symmetric positive definite matrix, possibly after
/// adding a diagonal jitter. L * L^T == A + jitter_used * I.
struct SpdFactor {
  Matrix lower;
  double jitter_used = 0.0;

  Eigen::Index size() const { return lower.rows(); }

  Vector solve(const Vector& rhs) const;
  Matrix solve(const Matrix& rhs) const;
  /// L^{-1} * rhs
  Matrix solve_lower(const Matrix& rhs) const;
  double log_det() const;
  Matrix inverse() const;
};

/// Factorizes `matrix`, escalating a diagonal jitter from 0 through
/// 1e-10 ... 1e-4 times the mean diagonal until the factorization succeeds.
/// Throws NotPositiveDefinite when the jitter cap is reached.
SpdFactor cholesky(const Matrix& matrix);

double norm_pdf(double z);
double norm_cdf(double z);

/// log N(y | mean, L L^T)
double mvn_logpdf(const Vector& y, const Vector& mean, const SpdFactor& cov_factor);

/// Seeded random stream. Every stochastic routine takes one explicitly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  /// Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);
  /// A new independent stream derived from this one's next draw.
  Rng split();

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> gauss_{0.0, 1.0};
};

}  // namespace dego
