#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dego/numerics.hpp"

namespace dego {

class AllEvaluationsInvalid : public std::runtime_error {
 public:
  explicit AllEvaluationsInvalid(const std::string& what) : std::runtime_error(what) {}
};

enum class Scale { linear, log };

/// Box of parameters. Log-scaled parameters are searched in log space;
/// objectives always see values in natural units.
struct SearchSpace {
  Vector lower;
  Vector upper;
  std::vector<Scale> scale;

  static SearchSpace unit_box(int dim);

  int dim() const { return static_cast<int>(lower.size()); }
  void validate() const;
  bool contains(const Vector& x) const;

  Vector to_internal(const Vector& x) const;
  Vector to_external(const Vector& u) const;
  Vector internal_lower() const;
  Vector internal_upper() const;
};

struct OptimumResult {
  Vector point;
  double value = 0.0;
  int evaluations = 0;
};

using Objective = std::function<double(const Vector&)>;

struct CmaesOptions {
  int budget = 3000;
  int restarts = 2;
  /// 0 selects the default 4 + floor(3 ln n).
  int population = 0;
  /// Initial step size relative to the (internal) box width.
  double sigma0 = 0.3;
};

/// Minimizes `objective` with (mu/mu_w, lambda)-CMA-ES and rank-mu update.
/// Samples leaving the box are reflected at its edges. The budget is shared
/// across the first run and `restarts` further runs from uniform draws.
/// `start` (natural units) seeds the first run; otherwise it is uniform too.
/// Returns the best-ever candidate; throws AllEvaluationsInvalid when no
/// evaluation was finite.
OptimumResult cmaes(const Objective& objective, const SearchSpace& space,
                    const CmaesOptions& options, Rng& rng, const Vector* start = nullptr);

struct DeOptions {
  int population = 40;
  int generations = 150;
  double weight = 0.8;     // F
  double crossover = 0.9;  // CR
};

/// Maximizes `objective` with DE/rand/1/bin; trial vectors are clipped to
/// the box. `seeds` (natural units) replace the first random members.
OptimumResult differential_evolution(const Objective& objective, const SearchSpace& space,
                                     const DeOptions& options, Rng& rng,
                                     const std::vector<Vector>& seeds = {});

}  // namespace dego
