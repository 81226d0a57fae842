#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dego/dgp.hpp"
#include "dego/gp.hpp"
#include "dego/infill.hpp"
#include "dego/optimizers.hpp"

namespace dego {

using ScalarFunction = std::function<double(const Vector&)>;

/// A benchmark on the unit box. Constraints are feasible at value <= 0.
struct Problem {
  std::string name;
  int dim = 1;
  ScalarFunction objective;
  std::vector<ScalarFunction> constraints;
  double optimum = 0.0;  // known best feasible objective value

  bool feasible(const Vector& constraint_values) const;
};

class SurrogateTrainingFailed : public std::runtime_error {
 public:
  explicit SurrogateTrainingFailed(const std::string& what) : std::runtime_error(what) {}
};

enum class Backend { gp, nlgp, dgp };

struct SurrogateSpec {
  Backend backend = Backend::gp;
  int knots = 4;  // nlgp, per dimension
  DgpConfig dgp;
  GpTrainerConfig gp_trainer;
  DgpTrainerConfig dgp_trainer;
};

/// A model refitted on every EGO iteration.
class Surrogate {
 public:
  virtual ~Surrogate() = default;
  virtual void fit(const Dataset& data, Rng& rng) = 0;
  virtual Prediction predict(const Vector& x) const = 0;
  /// k predictive samples at x. The default draws from the Gaussian predictive.
  virtual Vector sample(const Vector& x, int k, Rng& rng) const;
  /// Log marginal likelihood, or the ELBO for deep models.
  virtual double diagnostic() const = 0;
  /// Replaces the hidden layer widths for the next fit (deep models only).
  virtual void set_hidden_widths(const std::vector<int>&) {}
};

std::unique_ptr<Surrogate> make_surrogate(const SurrogateSpec& spec, bool warm_start);

struct EgoConfig {
  SurrogateSpec surrogate;
  /// Used for the objective instead of `surrogate` when set; constraints keep `surrogate`.
  std::optional<SurrogateSpec> objective_surrogate;
  AcquisitionSpec acquisition;
  int doe_size = 5;
  int infill = 20;
  bool warm_start = true;
  double success_tol = 1e-3;
  DeOptions de;
  /// Iteration index -> hidden widths from that iteration on. Never populated automatically.
  std::map<int, std::vector<int>> layer_schedule;

  void validate() const;
};

struct IterationLog {
  int iteration = 0;
  Vector point;
  double objective = 0.0;
  Vector constraints;
  double acquisition = 0.0;
  std::vector<double> diagnostics;  // objective surrogate first, then constraints
  std::vector<int> inducing;        // layer-0 inducing count of each deep surrogate
  double best_feasible = 0.0;       // +inf while nothing feasible was seen
  bool jittered = false;
};

struct RunRecord {
  std::uint64_t seed = 0;
  Dataset data;  // objective values
  Matrix constraint_values;  // N x n_constraints
  std::vector<IterationLog> iterations;
  /// Best feasible value after each evaluation, from the DoE size to the last one.
  std::vector<double> best_trace;
  std::optional<Vector> best_point;
  double best_value = 0.0;  // +inf if nothing feasible
  bool failed = false;
  std::string failure;

  bool has_feasible() const { return best_point.has_value(); }
};

RunRecord run_ego(const Problem& problem, const EgoConfig& config, Rng& rng);

struct StudySummary {
  double mean_best = 0.0;  // over runs that found a feasible point
  double variance = 0.0;   // population variance over the same runs
  double success_pct = 0.0;
  int repetitions = 0;
  int feasible_runs = 0;
  int failed_runs = 0;
  std::uint64_t base_seed = 0;
  std::vector<RunRecord> runs;
};

/// Repetition r runs with seed base_seed + r; the DoE only depends on that
/// seed, so algorithms share DoEs. `jobs` > 1 runs repetitions concurrently.
StudySummary repeat_study(const Problem& problem, const EgoConfig& config, int repetitions,
                          std::uint64_t base_seed, int jobs = 1);

/// Mean of the best traces at each evaluation count.
std::vector<double> mean_trace(const std::vector<RunRecord>& runs);

}  // namespace dego
