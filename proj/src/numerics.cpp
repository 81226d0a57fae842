#include "dego/numerics.hpp"

#include <cmath>
#include <numbers>

namespace dego {

Vector SpdFactor::solve(const Vector& rhs) const {
  const auto tri = lower.triangularView<Eigen::Lower>();
  Vector tmp = tri.solve(rhs);
  return tri.transpose().solve(tmp);
}

Matrix SpdFactor::solve(const Matrix& rhs) const {
  const auto tri = lower.triangularView<Eigen::Lower>();
  Matrix tmp = tri.solve(rhs);
  return tri.transpose().solve(tmp);
}

Matrix SpdFactor::solve_lower(const Matrix& rhs) const {
  return lower.triangularView<Eigen::Lower>().solve(rhs);
}

double SpdFactor::log_det() const {
  return 2.0 * lower.diagonal().array().log().sum();
}

Matrix SpdFactor::inverse() const {
  return solve(Matrix(Matrix::Identity(size(), size())));
}

SpdFactor cholesky(const Matrix& matrix) {
  if (matrix.rows() != matrix.cols()) {
    throw DimensionMismatch("cholesky: matrix is not square");
  }
  const Eigen::Index n = matrix.rows();
  const double scale = std::max(1.0, matrix.cwiseAbs().maxCoeff());
  if ((matrix - matrix.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw std::invalid_argument("cholesky: matrix is not symmetric");
  }

  Eigen::LLT<Matrix> llt(matrix);
  if (llt.info() == Eigen::Success) {
    return SpdFactor{llt.matrixL(), 0.0};
  }

  const double mean_diag = n > 0 ? matrix.diagonal().mean() : 0.0;
  if (!(mean_diag > 0.0)) {
    throw NotPositiveDefinite("cholesky: non-positive mean diagonal");
  }
  for (double rel = 1e-10; rel <= 1e-4 * (1.0 + 1e-9); rel *= 10.0) {
    const double jitter = rel * mean_diag;
    Matrix shifted = matrix;
    shifted.diagonal().array() += jitter;
    llt.compute(shifted);
    if (llt.info() == Eigen::Success) {
      return SpdFactor{llt.matrixL(), jitter};
    }
  }
  throw NotPositiveDefinite("cholesky: jitter cap reached");
}

double norm_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

double norm_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double mvn_logpdf(const Vector& y, const Vector& mean, const SpdFactor& cov_factor) {
  if (y.size() != mean.size() || y.size() != cov_factor.size()) {
    throw DimensionMismatch("mvn_logpdf: dimensions disagree");
  }
  const Vector white = cov_factor.solve_lower(y - mean);
  const double n = static_cast<double>(y.size());
  return -0.5 * (n * std::log(2.0 * std::numbers::pi) + cov_factor.log_det() +
                 white.squaredNorm());
}

double Rng::uniform() {
  const double u = std::generate_canonical<double, 53>(engine_);
  return u < 1.0 ? u : std::nextafter(1.0, 0.0);
}

double Rng::normal() { return gauss_(engine_); }

std::size_t Rng::index(std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
}

Rng Rng::split() { return Rng(engine_()); }

}  // namespace dego
