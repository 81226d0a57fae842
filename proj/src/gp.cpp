#include "dego/gp.hpp"

#include <cmath>
#include <limits>

#include "dego/optimizers.hpp"

namespace dego {

namespace {

Matrix warp_rows(const GpHyperparameters& hyper, const Matrix& x) {
  return hyper.mapping ? hyper.mapping->map_rows(x) : x;
}

// Natural-unit parameter vector: [l, theta(d), p(d), noise, densities...].
struct HyperCodec {
  int dim = 0;
  bool mapped = false;
  int knots = 0;

  int size() const { return 2 + 2 * dim + (mapped ? dim * knots : 0); }

  SearchSpace space() const {
    const int n = size();
    SearchSpace s{Vector(n), Vector(n), std::vector<Scale>(n, Scale::log)};
    int k = 0;
    s.lower[k] = std::exp(-6.0);
    s.upper[k++] = std::exp(6.0);
    for (int i = 0; i < dim; ++i, ++k) {
      s.lower[k] = 1e-2;
      s.upper[k] = 1e3;
    }
    for (int i = 0; i < dim; ++i, ++k) {
      s.lower[k] = 1.0;
      s.upper[k] = 2.0;
      s.scale[k] = Scale::linear;
    }
    s.lower[k] = 1e-10;
    s.upper[k++] = 1.0;
    for (; k < n; ++k) {
      s.lower[k] = 1e-3;
      s.upper[k] = 1e3;
    }
    return s;
  }

  Vector default_point() const {
    Vector v(size());
    int k = 0;
    v[k++] = 1.0;
    for (int i = 0; i < dim; ++i) v[k++] = 10.0;
    for (int i = 0; i < dim; ++i) v[k++] = 1.9;
    v[k++] = 1e-6;
    for (; k < size(); ++k) v[k] = 1.0;
    return v;
  }

  GpHyperparameters decode(const Vector& v) const {
    GpHyperparameters h;
    h.kernel.variance = v[0];
    h.kernel.rates = v.segment(1, dim);
    h.kernel.exponents = v.segment(1 + dim, dim);
    h.noise = v[1 + 2 * dim];
    if (mapped) {
      std::vector<Vector> dens;
      for (int i = 0; i < dim; ++i) dens.push_back(v.segment(2 + 2 * dim + i * knots, knots));
      h.mapping = KnotMapping(std::move(dens));
    }
    return h;
  }
};

}  // namespace

void Dataset::append(const Vector& point, double value) {
  x.conservativeResize(x.rows() + 1, point.size());
  x.row(x.rows() - 1) = point.transpose();
  y.conservativeResize(y.size() + 1);
  y[y.size() - 1] = value;
}

double Prediction::std_dev() const { return std::sqrt(std::max(variance, 0.0)); }

Matrix gp_covariance(const GpHyperparameters& hyper, const Matrix& x) {
  Matrix c = gram(hyper.kernel, warp_rows(hyper, x));
  c.diagonal().array() += hyper.noise;
  return c;
}

double profiled_trend(const SpdFactor& cov_factor, const Vector& y) {
  const Vector ones = Vector::Ones(y.size());
  const Vector c_inv_ones = cov_factor.solve(ones);
  return c_inv_ones.dot(y) / c_inv_ones.sum();
}

double neg_log_marginal(const GpHyperparameters& hyper, double trend, const Dataset& data) {
  try {
    const SpdFactor f = cholesky(gp_covariance(hyper, data.x));
    return -mvn_logpdf(data.y, Vector::Constant(data.size(), trend), f);
  } catch (const NotPositiveDefinite&) {
    return std::numeric_limits<double>::infinity();
  }
}

GpModel GpModel::condition(Dataset data, GpHyperparameters hyper, std::optional<double> trend) {
  return build(std::move(data), std::move(hyper), 0.0, 1.0, trend);
}

GpModel GpModel::build(Dataset data, GpHyperparameters hyper, double shift, double scale,
                       std::optional<double> trend) {
  if (data.x.rows() != data.y.size()) throw DimensionMismatch("GpModel: x/y size mismatch");
  if (hyper.kernel.dim() != data.dim()) throw DimensionMismatch("GpModel: kernel dimension");
  GpModel m;
  m.shift_ = shift;
  m.scale_ = scale;
  m.warped_x_ = warp_rows(hyper, data.x);
  Matrix c = gram(hyper.kernel, m.warped_x_);
  c.diagonal().array() += hyper.noise;
  m.factor_ = cholesky(c);
  const Vector y = (data.y.array() - shift) / scale;
  m.trend_ = trend ? (*trend - shift) / scale : profiled_trend(m.factor_, y);
  const Vector resid = y.array() - m.trend_;
  m.alpha_ = m.factor_.solve(resid);
  m.log_marginal_ = mvn_logpdf(y, Vector::Constant(y.size(), m.trend_), m.factor_);
  m.data_ = std::move(data);
  m.hyper_ = std::move(hyper);
  return m;
}

Prediction GpModel::predict(const Vector& x) const {
  const Vector wx = hyper_.mapping ? hyper_.mapping->map_point(x) : x;
  const Eigen::Index n = warped_x_.rows();
  Vector k(n);
  for (Eigen::Index i = 0; i < n; ++i) k[i] = hyper_.kernel(warped_x_.row(i).transpose(), wx);
  const double mean = trend_ + k.dot(alpha_);
  const Vector v = factor_.solve_lower(k);
  const double var = hyper_.kernel.variance - v.squaredNorm() + hyper_.noise;
  return {shift_ + scale_ * mean, scale_ * scale_ * std::max(var, 0.0)};
}

GpModel fit_gp(const Dataset& data, const GpFamily& family, const GpTrainerConfig& config,
               Rng& rng) {
  if (data.size() < 2) throw std::invalid_argument("fit_gp: need at least two points");
  const HyperCodec codec{data.dim(), family.kind == GpKernelFamily::mapped_p_exponential,
                         family.knots};
  if (codec.mapped && family.knots < 2) throw std::invalid_argument("fit_gp: knots must be >= 2");

  const double shift = data.y.mean();
  const double sd = std::sqrt((data.y.array() - shift).square().mean());
  if (!(sd > 0.0)) {
    GpHyperparameters h = codec.decode(codec.default_point());
    h.kernel.exponents.setConstant(2.0);
    h.noise = 0.0;
    GpModel m = GpModel::build(data, std::move(h), shift, 1.0, shift);
    m.degenerate_ = true;
    return m;
  }

  Dataset standardized = data;
  standardized.y = (data.y.array() - shift) / sd;

  const SearchSpace space = codec.space();
  auto objective = [&](const Vector& v) {
    const GpHyperparameters h = codec.decode(v);
    try {
      const SpdFactor f = cholesky(gp_covariance(h, standardized.x));
      const double mu = profiled_trend(f, standardized.y);
      return -mvn_logpdf(standardized.y, Vector::Constant(standardized.size(), mu), f);
    } catch (const NotPositiveDefinite&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  CmaesOptions opts;
  opts.budget = config.budget;
  opts.restarts = config.restarts;
  const Vector start = codec.default_point();
  const OptimumResult best = cmaes(objective, space, opts, rng, &start);
  return GpModel::build(data, codec.decode(best.point), shift, sd, std::nullopt);
}

}  // namespace dego
