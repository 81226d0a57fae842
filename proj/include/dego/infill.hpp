#pragma once

#include <optional>
#include <vector>

#include "dego/numerics.hpp"

namespace dego {

enum class Criterion { ei, pi };
enum class ConstraintPolicy { none, expected_violation, probability_of_feasibility };

struct AcquisitionSpec {
  Criterion criterion = Criterion::ei;
  ConstraintPolicy policy = ConstraintPolicy::none;
  double threshold = 1e-3;        // expected-violation gate
  double min_probability = 0.0;   // probability-of-feasibility gate, 0 disables it
  int mc_samples = 0;             // 0: Gaussian predictions, else k >= 2 forward samples

  void validate() const;
  bool monte_carlo() const { return mc_samples > 0; }
};

/// One surrogate's predictive at a candidate. `samples` is empty in Gaussian mode.
struct Predictive {
  double mean = 0.0;
  double std = 0.0;
  Vector samples;
};

double expected_improvement(double mean, double std, double y_min);
double probability_of_improvement(double mean, double std, double y_min);
/// E[max(0, g - level)] for g ~ N(mean, std^2).
double expected_violation(double mean, double std, double level = 0.0);
double probability_of_feasibility(double mean, double std, double tol = 0.0);

double ei_mc(const Vector& samples, double y_min);
double pi_mc(const Vector& samples, double y_min);
double ev_mc(const Vector& samples, double level = 0.0);
double pof_mc(const Vector& samples, double tol = 0.0);

/// Infill value to maximize. Constraints are feasible at g <= 0.
/// Expected-violation policy: the criterion when every EV <= threshold, else
/// minus the summed excess over the threshold. Probability-of-feasibility
/// policy: criterion times the product of PoF. Without a feasible observation
/// (`y_min` empty) only feasibility counts: -sum EV, or prod PoF.
double acquisition_value(const AcquisitionSpec& spec, const Predictive& objective,
                         const std::vector<Predictive>& constraints, std::optional<double> y_min);

}  // namespace dego
