#include "dego/optimizers.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>

namespace dego {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double reflect_unit(double v) {
  // Fold onto [0, 1] with period 2 so arbitrarily far samples still land inside.
  v = std::fmod(std::abs(v), 2.0);
  return v > 1.0 ? 2.0 - v : v;
}

struct CmaesParams {
  int n = 0;
  int lambda = 0;
  int mu = 0;
  Vector weights;
  double mueff = 0.0;
  double cs = 0.0;
  double ds = 0.0;
  double cc = 0.0;
  double c1 = 0.0;
  double cmu = 0.0;
  double chi_n = 0.0;

  CmaesParams(int dim, int population) : n(dim) {
    lambda = population > 0 ? population : 4 + static_cast<int>(std::floor(3.0 * std::log(n)));
    lambda = std::max(lambda, 2);
    mu = lambda / 2;
    weights.resize(mu);
    for (int i = 0; i < mu; ++i) weights[i] = std::log(mu + 0.5) - std::log(i + 1.0);
    weights /= weights.sum();
    mueff = 1.0 / weights.squaredNorm();
    const double nd = n;
    cs = (mueff + 2.0) / (nd + mueff + 5.0);
    ds = 1.0 + 2.0 * std::max(0.0, std::sqrt((mueff - 1.0) / (nd + 1.0)) - 1.0) + cs;
    cc = (4.0 + mueff / nd) / (nd + 4.0 + 2.0 * mueff / nd);
    c1 = 2.0 / ((nd + 1.3) * (nd + 1.3) + mueff);
    cmu = std::min(1.0 - c1, 2.0 * (mueff - 2.0 + 1.0 / mueff) / ((nd + 2.0) * (nd + 2.0) + mueff));
    chi_n = std::sqrt(nd) * (1.0 - 1.0 / (4.0 * nd) + 1.0 / (21.0 * nd * nd));
  }
};

struct Incumbent {
  Vector point;  // normalized internal coordinates
  double value = kInf;
};

/// One CMA-ES run on the unit cube. Returns the number of evaluations used.
int cmaes_run(const std::function<double(const Vector&)>& f, const CmaesParams& p,
              Vector mean, double sigma, int budget, Rng& rng, Incumbent& best) {
  const int n = p.n;
  Matrix cov = Matrix::Identity(n, n);
  Matrix basis = Matrix::Identity(n, n);
  Vector scales = Vector::Ones(n);
  Vector path_c = Vector::Zero(n);
  Vector path_s = Vector::Zero(n);
  const int eigen_every =
      std::max(1, static_cast<int>(1.0 / (10.0 * n * (p.c1 + p.cmu))));
  const int history_len = 10 + static_cast<int>(std::ceil(30.0 * n / p.lambda));
  std::deque<double> history;

  std::vector<Vector> xs(p.lambda, Vector(n));
  std::vector<Vector> ys(p.lambda, Vector(n));
  std::vector<double> fs(p.lambda);
  std::vector<int> order(p.lambda);

  int evals = 0;
  for (int gen = 0; evals + p.lambda <= budget; ++gen) {
    for (int k = 0; k < p.lambda; ++k) {
      Vector z(n);
      for (int i = 0; i < n; ++i) z[i] = rng.normal();
      Vector x = mean + sigma * (basis * scales.cwiseProduct(z));
      for (int i = 0; i < n; ++i) x[i] = reflect_unit(x[i]);
      ys[k] = (x - mean) / sigma;
      xs[k] = std::move(x);
      const double v = f(xs[k]);
      fs[k] = std::isfinite(v) ? v : kInf;
      if (fs[k] < best.value) {
        best.value = fs[k];
        best.point = xs[k];
      }
    }
    evals += p.lambda;

    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return fs[a] < fs[b]; });

    Vector y_w = Vector::Zero(n);
    for (int i = 0; i < p.mu; ++i) y_w += p.weights[i] * ys[order[i]];
    mean += sigma * y_w;
    for (int i = 0; i < n; ++i) mean[i] = std::clamp(mean[i], 0.0, 1.0);

    const Vector inv_sqrt_y = basis * (basis.transpose() * y_w).cwiseQuotient(scales);
    path_s = (1.0 - p.cs) * path_s + std::sqrt(p.cs * (2.0 - p.cs) * p.mueff) * inv_sqrt_y;
    const double ps_norm = path_s.norm();
    const bool hsig = ps_norm / std::sqrt(1.0 - std::pow(1.0 - p.cs, 2.0 * (gen + 1))) / p.chi_n <
                      1.4 + 2.0 / (n + 1.0);
    path_c = (1.0 - p.cc) * path_c +
             (hsig ? std::sqrt(p.cc * (2.0 - p.cc) * p.mueff) : 0.0) * y_w;

    Matrix rank_mu = Matrix::Zero(n, n);
    for (int i = 0; i < p.mu; ++i) {
      const Vector& y = ys[order[i]];
      rank_mu.noalias() += p.weights[i] * y * y.transpose();
    }
    cov = (1.0 - p.c1 - p.cmu) * cov +
          p.c1 * (path_c * path_c.transpose() + (hsig ? 0.0 : p.cc * (2.0 - p.cc)) * cov) +
          p.cmu * rank_mu;
    sigma *= std::exp((p.cs / p.ds) * (ps_norm / p.chi_n - 1.0));
    sigma = std::min(sigma, 1.0);

    if (gen % eigen_every == 0) {
      cov = (0.5 * (cov + cov.transpose())).eval();
      Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
      if (eig.info() != Eigen::Success) break;
      basis = eig.eigenvectors();
      scales = eig.eigenvalues().cwiseMax(1e-20).cwiseSqrt();
    }

    history.push_back(fs[order[0]]);
    if (static_cast<int>(history.size()) > history_len) history.pop_front();
    if (sigma * scales.maxCoeff() < 1e-12) break;
    if (static_cast<int>(history.size()) == history_len) {
      const auto [lo, hi] = std::minmax_element(history.begin(), history.end());
      if (std::isfinite(*hi) && *hi - *lo < 1e-12 * std::max(1.0, std::abs(*lo))) break;
    }
  }
  return evals;
}

}  // namespace

SearchSpace SearchSpace::unit_box(int dim) {
  return {Vector::Zero(dim), Vector::Ones(dim), std::vector<Scale>(dim, Scale::linear)};
}

void SearchSpace::validate() const {
  if (upper.size() != lower.size() || static_cast<Eigen::Index>(scale.size()) != lower.size()) {
    throw DimensionMismatch("SearchSpace: inconsistent sizes");
  }
  for (int i = 0; i < dim(); ++i) {
    if (!(lower[i] < upper[i])) throw std::invalid_argument("SearchSpace: lower >= upper");
    if (scale[i] == Scale::log && !(lower[i] > 0.0)) {
      throw std::invalid_argument("SearchSpace: log-scaled bound must be positive");
    }
  }
}

bool SearchSpace::contains(const Vector& x) const {
  return x.size() == lower.size() && (x.array() >= lower.array()).all() &&
         (x.array() <= upper.array()).all();
}

Vector SearchSpace::to_internal(const Vector& x) const {
  Vector u = x;
  for (int i = 0; i < dim(); ++i) {
    if (scale[i] == Scale::log) u[i] = std::log(x[i]);
  }
  return u;
}

Vector SearchSpace::to_external(const Vector& u) const {
  Vector x = u;
  for (int i = 0; i < dim(); ++i) {
    if (scale[i] == Scale::log) x[i] = std::exp(u[i]);
    x[i] = std::clamp(x[i], lower[i], upper[i]);
  }
  return x;
}

Vector SearchSpace::internal_lower() const { return to_internal(lower); }
Vector SearchSpace::internal_upper() const { return to_internal(upper); }

OptimumResult cmaes(const Objective& objective, const SearchSpace& space,
                    const CmaesOptions& options, Rng& rng, const Vector* start) {
  space.validate();
  const int n = space.dim();
  const CmaesParams params(n, options.population);
  if (options.budget < params.lambda) {
    throw std::invalid_argument("cmaes: budget smaller than population");
  }
  const Vector lo = space.internal_lower();
  const Vector width = space.internal_upper() - lo;
  auto to_natural = [&](const Vector& unit) {
    return space.to_external(lo + unit.cwiseProduct(width));
  };

  int evaluations = 0;
  auto f = [&](const Vector& unit) {
    ++evaluations;
    return objective(to_natural(unit));
  };

  Incumbent best;
  const int runs = std::max(0, options.restarts) + 1;
  int remaining = options.budget;
  for (int r = 0; r < runs && remaining >= params.lambda; ++r) {
    Vector mean(n);
    if (r == 0 && start != nullptr) {
      mean = (space.to_internal(start->cwiseMax(space.lower).cwiseMin(space.upper)) - lo)
                 .cwiseQuotient(width);
    } else {
      for (int i = 0; i < n; ++i) mean[i] = rng.uniform();
    }
    const int share = r + 1 == runs ? remaining : options.budget / runs;
    remaining -= cmaes_run(f, params, mean, options.sigma0, share, rng, best);
  }

  if (!std::isfinite(best.value)) {
    throw AllEvaluationsInvalid("cmaes: no finite objective value");
  }
  return {to_natural(best.point), best.value, evaluations};
}

OptimumResult differential_evolution(const Objective& objective, const SearchSpace& space,
                                     const DeOptions& options, Rng& rng,
                                     const std::vector<Vector>& seeds) {
  space.validate();
  if (options.population < 4) {
    throw std::invalid_argument("differential_evolution: population must be >= 4");
  }
  const int n = space.dim();
  const int np = options.population;
  const Vector lo = space.internal_lower();
  const Vector hi = space.internal_upper();
  int evaluations = 0;
  auto f = [&](const Vector& u) {
    ++evaluations;
    const double v = objective(space.to_external(u));
    return std::isfinite(v) ? v : -kInf;
  };

  std::vector<Vector> pop(np, Vector(n));
  std::vector<double> fit(np);
  int best = 0;
  for (int i = 0; i < np; ++i) {
    if (i < static_cast<int>(seeds.size())) {
      pop[i] = space.to_internal(seeds[i].cwiseMax(space.lower).cwiseMin(space.upper));
    } else {
      for (int j = 0; j < n; ++j) pop[i][j] = rng.uniform(lo[j], hi[j]);
    }
    fit[i] = f(pop[i]);
    if (fit[i] > fit[best]) best = i;
  }

  Vector trial(n);
  for (int g = 0; g < options.generations; ++g) {
    for (int i = 0; i < np; ++i) {
      int r1, r2, r3;
      do r1 = static_cast<int>(rng.index(np)); while (r1 == i);
      do r2 = static_cast<int>(rng.index(np)); while (r2 == i || r2 == r1);
      do r3 = static_cast<int>(rng.index(np)); while (r3 == i || r3 == r1 || r3 == r2);
      const int forced = static_cast<int>(rng.index(n));
      for (int j = 0; j < n; ++j) {
        if (j == forced || rng.uniform() < options.crossover) {
          trial[j] = std::clamp(pop[r1][j] + options.weight * (pop[r2][j] - pop[r3][j]), lo[j],
                                hi[j]);
        } else {
          trial[j] = pop[i][j];
        }
      }
      const double v = f(trial);
      if (v >= fit[i]) {
        pop[i] = trial;
        fit[i] = v;
        if (v > fit[best]) best = i;
      }
    }
  }

  if (!std::isfinite(fit[best])) {
    throw AllEvaluationsInvalid("differential_evolution: no finite objective value");
  }
  return {space.to_external(pop[best]), fit[best], evaluations};
}

}  // namespace dego
