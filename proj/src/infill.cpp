#include "dego/infill.hpp"

#include <algorithm>
#include <stdexcept>

namespace dego {

namespace {

void check_samples(const Vector& samples) {
  if (samples.size() < 2) throw std::invalid_argument("infill: need at least two samples");
}

double criterion(const AcquisitionSpec& spec, const Predictive& p, double y_min) {
  if (p.samples.size() > 0) {
    return spec.criterion == Criterion::ei ? ei_mc(p.samples, y_min) : pi_mc(p.samples, y_min);
  }
  return spec.criterion == Criterion::ei ? expected_improvement(p.mean, p.std, y_min)
                                         : probability_of_improvement(p.mean, p.std, y_min);
}

double violation(const Predictive& p) {
  return p.samples.size() > 0 ? ev_mc(p.samples) : expected_violation(p.mean, p.std);
}

double feasibility(const Predictive& p) {
  return p.samples.size() > 0 ? pof_mc(p.samples) : probability_of_feasibility(p.mean, p.std);
}

}  // namespace

void AcquisitionSpec::validate() const {
  if (policy == ConstraintPolicy::expected_violation && !(threshold > 0.0)) {
    throw std::invalid_argument("AcquisitionSpec: threshold must be > 0");
  }
  if (min_probability < 0.0 || min_probability > 1.0) {
    throw std::invalid_argument("AcquisitionSpec: min_probability must be in [0, 1]");
  }
  if (mc_samples == 1 || mc_samples < 0) {
    throw std::invalid_argument("AcquisitionSpec: Monte Carlo mode needs k >= 2");
  }
}

double expected_improvement(double mean, double std, double y_min) {
  const double diff = y_min - mean;
  if (!(std > 0.0)) return std::max(0.0, diff);
  const double z = diff / std;
  return std::max(0.0, diff * norm_cdf(z) + std * norm_pdf(z));
}

double probability_of_improvement(double mean, double std, double y_min) {
  if (!(std > 0.0)) return mean < y_min ? 1.0 : 0.0;
  return norm_cdf((y_min - mean) / std);
}

double expected_violation(double mean, double std, double level) {
  // Mirror image of EI around the level.
  return expected_improvement(-mean, std, -level);
}

double probability_of_feasibility(double mean, double std, double tol) {
  if (!(std > 0.0)) return mean <= tol ? 1.0 : 0.0;
  return norm_cdf((tol - mean) / std);
}

double ei_mc(const Vector& samples, double y_min) {
  check_samples(samples);
  return (y_min - samples.array()).max(0.0).mean();
}

double pi_mc(const Vector& samples, double y_min) {
  check_samples(samples);
  return (samples.array() < y_min).cast<double>().mean();
}

double ev_mc(const Vector& samples, double level) {
  check_samples(samples);
  return (samples.array() - level).max(0.0).mean();
}

double pof_mc(const Vector& samples, double tol) {
  check_samples(samples);
  return (samples.array() <= tol).cast<double>().mean();
}

double acquisition_value(const AcquisitionSpec& spec, const Predictive& objective,
                         const std::vector<Predictive>& constraints, std::optional<double> y_min) {
  if (constraints.empty() || spec.policy == ConstraintPolicy::none) {
    if (!y_min) throw std::invalid_argument("acquisition_value: no incumbent for an unconstrained problem");
    return criterion(spec, objective, *y_min);
  }

  if (spec.policy == ConstraintPolicy::expected_violation) {
    double total = 0.0;
    double excess = 0.0;
    for (const Predictive& c : constraints) {
      const double ev = violation(c);
      total += ev;
      excess += std::max(0.0, ev - spec.threshold);
    }
    if (!y_min) return -total;
    if (excess > 0.0) return -excess;
    return criterion(spec, objective, *y_min);
  }

  double pof = 1.0;
  for (const Predictive& c : constraints) pof *= feasibility(c);
  if (!y_min) return pof;
  if (pof < spec.min_probability) return -(spec.min_probability - pof);
  return criterion(spec, objective, *y_min) * pof;
}

}  // namespace dego
