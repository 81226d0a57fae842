#pragma once

#include <optional>
#include <stdexcept>
#include <string>

#include "dego/kernels.hpp"
#include "dego/numerics.hpp"

namespace dego {

struct Dataset {
  Matrix x;  // N x d, unit-box coordinates
  Vector y;  // N

  int size() const { return static_cast<int>(x.rows()); }
  int dim() const { return static_cast<int>(x.cols()); }
  void append(const Vector& point, double value);
};

struct Prediction {
  double mean = 0.0;
  double variance = 0.0;

  double std_dev() const;
};

enum class GpKernelFamily { p_exponential, mapped_p_exponential };

struct GpFamily {
  GpKernelFamily kind = GpKernelFamily::p_exponential;
  int knots = 4;  // per dimension, mapped family only
};

struct GpHyperparameters {
  ArdPExpKernel kernel;
  std::optional<KnotMapping> mapping;
  double noise = 0.0;
};

struct GpTrainerConfig {
  int budget = 3000;
  int restarts = 2;
};

/// Ordinary Kriging conditioned on a dataset. Immutable once built.
class GpModel {
 public:
  /// Conditions on `data` with fixed hyperparameters, in the units of `data`.
  /// The constant trend is profiled analytically unless given.
  static GpModel condition(Dataset data, GpHyperparameters hyper,
                           std::optional<double> trend = std::nullopt);

  Prediction predict(const Vector& x) const;

  /// Hyperparameters and trend live in standardized response units when the
  /// model came from fit_gp; response_shift/scale map them back.
  const GpHyperparameters& hyperparameters() const { return hyper_; }
  double trend() const { return shift_ + scale_ * trend_; }
  double response_shift() const { return shift_; }
  double response_scale() const { return scale_; }
  double log_marginal() const { return log_marginal_; }
  bool degenerate() const { return degenerate_; }
  const Dataset& data() const { return data_; }
  const SpdFactor& factor() const { return factor_; }

 private:
  friend GpModel fit_gp(const Dataset&, const GpFamily&, const GpTrainerConfig&, Rng&);
  static GpModel build(Dataset data, GpHyperparameters hyper, double shift, double scale,
                       std::optional<double> trend);

  Dataset data_;
  GpHyperparameters hyper_;
  double shift_ = 0.0;
  double scale_ = 1.0;
  double trend_ = 0.0;
  Matrix warped_x_;
  SpdFactor factor_;
  Vector alpha_;
  double log_marginal_ = 0.0;
  bool degenerate_ = false;
};

/// mu_hat = (1^T C^-1 y) / (1^T C^-1 1)
double profiled_trend(const SpdFactor& cov_factor, const Vector& y);

/// -log N(y | 1 trend, K + noise I); +inf when the covariance cannot be factorized.
double neg_log_marginal(const GpHyperparameters& hyper, double trend, const Dataset& data);

/// Covariance K_NN + noise I for the given hyperparameters.
Matrix gp_covariance(const GpHyperparameters& hyper, const Matrix& x);

/// Maximizes the marginal likelihood over kernel hyperparameters and noise by
/// CMA-ES (trend profiled) on standardized responses. All-identical responses
/// yield a flagged constant model with zero noise.
GpModel fit_gp(const Dataset& data, const GpFamily& family, const GpTrainerConfig& config,
               Rng& rng);

}  // namespace dego
