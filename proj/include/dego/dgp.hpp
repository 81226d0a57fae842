#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "dego/gp.hpp"
#include "dego/kernels.hpp"
#include "dego/numerics.hpp"

namespace dego {

class TrainingFailed : public std::runtime_error {
 public:
  explicit TrainingFailed(const std::string& what) : std::runtime_error(what) {}
};

/// Expectations of squared-exponential kernel terms under a factorized
/// Gaussian input distribution q(h_n) = N(mean_n, diag(var_n)).
struct PsiStats {
  double psi0 = 0.0;  // sum_n E[k(h_n, h_n)]
  Matrix psi1;        // N x M, E[k(h_n, z_m)]
  Matrix psi2;        // M x M, sum_n E[k(h_n, z_m) k(h_n, z_m')]
};

/// Zero variances give the deterministic-input values (psi1 = K_NM, psi2 = K_MN K_NM).
PsiStats psi_statistics(const ArdSqExpKernel& kernel, const Matrix& inducing,
                        const Matrix& q_mean, const Matrix& q_var);

/// Partial derivatives of sparse_layer_bound.
struct LayerBoundGradient {
  double variance = 0.0;
  Vector rates;
  double noise = 0.0;
  Matrix inducing;
  Matrix in_mean;
  Matrix in_var;
  Matrix out_mean;
  Matrix out_var;
};

/// Relative jitter (times the kernel variance) added to K_MM throughout the
/// deep model: bound, gradients and posterior.
inline constexpr double kInducingJitter = 1e-8;

/// Collapsed variational bound of one GP layer mapping inputs distributed as
/// N(in_mean, in_var) to outputs distributed as N(out_mean, out_var)
/// (out_var empty for observed outputs). q(u) is optimized analytically.
/// With zero input variances and observed outputs this is the sparse-GP
/// variational free energy (exactly so with `inducing_jitter` = 0).
/// Throws NotPositiveDefinite on a singular K_MM.
double sparse_layer_bound(const ArdSqExpKernel& kernel, const Matrix& inducing,
                          const Matrix& in_mean, const Matrix& in_var, const Matrix& out_mean,
                          const Matrix& out_var, double noise,
                          LayerBoundGradient* gradient = nullptr,
                          double inducing_jitter = kInducingJitter);

enum class InducingMode { dynamic, fixed };

struct InducingSchedule {
  InducingMode mode = InducingMode::dynamic;
  int count = 0;  // fixed mode only
};

/// Inducing inputs per layer: the dataset size in dynamic mode, else the fixed count.
int inducing_schedule(const InducingSchedule& schedule, int dataset_size);

struct DgpConfig {
  /// One entry per hidden layer, its width. {2} is a 1-hidden-layer, 2-wide DGP.
  std::vector<int> hidden_widths{2};
  InducingSchedule inducing;
};

struct DgpLayer {
  ArdSqExpKernel kernel;
  double noise = 1e-3;
  Matrix inducing;  // M x input_dim
  /// q(h_{l+1}) for hidden layers, N x output_dim; empty on the output layer.
  Matrix out_mean;
  Matrix out_var;

  int input_dim() const { return kernel.dim(); }
  int inducing_count() const { return static_cast<int>(inducing.rows()); }
  bool hidden() const { return out_mean.size() > 0; }
};

/// Cached optimal-q(u) quantities used for prediction.
struct LayerPosterior {
  Matrix projection;      // M x D: beta W^-1 Psi1^T Y, W = K_MM + beta Psi2
  Matrix var_correction;  // M x M: K_MM^-1 - W^-1
};

struct DgpModel {
  DgpConfig config;
  Dataset data;  // raw responses
  double y_shift = 0.0;
  double y_scale = 1.0;
  std::vector<DgpLayer> layers;  // f_0 ... f_L
  double last_elbo = 0.0;
  std::vector<LayerPosterior> posterior;

  int hidden_layers() const { return static_cast<int>(layers.size()) - 1; }
  /// Standardized responses as an N x 1 matrix.
  Matrix targets() const;
  /// Free scalar parameter count (kernels, noises, inducing inputs, q(h)).
  int parameter_count() const;
};

/// Sum of layer bounds plus the entropy of every hidden q(h).
double elbo(const DgpModel& model);

/// Hidden means start as X tiled across the layer width plus 1e-3 jitter,
/// variances at 0.1; inducing inputs are a random subset of the layer's
/// initial input means (repeats, when M > N, are jittered).
DgpModel init_dgp(const DgpConfig& config, const Dataset& data, Rng& rng);

enum class DgpOptimizer { lbfgs, cmaes };

struct DgpTrainerConfig {
  DgpOptimizer optimizer = DgpOptimizer::lbfgs;
  int frozen_iterations = 100;  // first L-BFGS stage, kernels and noises held fixed
  int max_iterations = 400;     // per later L-BFGS stage
  int stages = 3;               // later stages, each restarted with a rescaled objective
  int restarts = 2;          // extra runs from fresh initializations on a cold start
  int warm_restarts = 0;     // same, when warm-started
  int cmaes_budget = 20000;
  /// Output noise (standardized units) above which a fit counts as collapsed
  /// onto pure noise; such fits are retried with noises held and only kept
  /// when nothing else is available.
  double noise_ceiling = 0.5;
};

/// Maximizes the ELBO over all kernel hyperparameters, noises, inducing
/// inputs and variational parameters. With `warm_start` the previous
/// solution seeds the search (new data points copy the variational entries
/// of their nearest previous neighbour). The returned ELBO is never below
/// the initial one. Throws TrainingFailed when no finite ELBO is found.
DgpModel train_dgp(DgpModel model, const DgpTrainerConfig& config, Rng& rng,
                   const DgpModel* warm_start = nullptr);

/// Recomputes the cached prediction quantities from the current parameters.
void refresh_posterior(DgpModel& model);

/// Layer-by-layer moment propagation, each layer's output treated as Gaussian.
Prediction predict_dgp_gaussian(const DgpModel& model, const Vector& x);

struct McPrediction {
  double mean = 0.0;
  double variance = 0.0;  // unbiased sample variance
  Vector samples;
};

/// k independent forward samples through the layers.
McPrediction predict_dgp_mc(const DgpModel& model, const Vector& x, int k, Rng& rng);

/// Per-layer output moments for a Gaussian input N(mean, diag(var)).
void layer_predict(const DgpLayer& layer, const LayerPosterior& post, const Vector& in_mean,
                   const Vector& in_var, Vector& out_mean, Vector& out_var);

/// Flattened unconstrained view of a model's free parameters. Positive
/// quantities go through a bounded log-sigmoid transform.
class DgpParameterMap {
 public:
  enum class Slot { kernel, noise, inducing, q_mean, q_var };

  explicit DgpParameterMap(const DgpModel& shape);

  int size() const { return size_; }
  const std::vector<Slot>& slots() const { return slots_; }
  Vector pack(const DgpModel& model) const;
  void unpack(const Vector& u, DgpModel& model) const;
  /// ELBO and its gradient with respect to the packed vector.
  double elbo_and_gradient(const Vector& u, DgpModel& scratch, Vector& grad) const;
  /// Box used by the gradient-free trainer.
  void box(const Vector& u, Vector& lower, Vector& upper) const;

 private:
  int size_ = 0;
  std::vector<Slot> slots_;
};

}  // namespace dego
