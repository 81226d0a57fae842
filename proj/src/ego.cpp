#include "dego/ego.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "dego/doe.hpp"

namespace dego {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

class GpSurrogate final : public Surrogate {
 public:
  GpSurrogate(GpFamily family, GpTrainerConfig trainer) : family_(family), trainer_(trainer) {}

  void fit(const Dataset& data, Rng& rng) override {
    try {
      model_ = fit_gp(data, family_, trainer_, rng);
    } catch (const AllEvaluationsInvalid& e) {
      throw SurrogateTrainingFailed(e.what());
    }
  }

  Prediction predict(const Vector& x) const override { return model_->predict(x); }
  double diagnostic() const override { return model_->log_marginal(); }

 private:
  GpFamily family_;
  GpTrainerConfig trainer_;
  std::optional<GpModel> model_;
};

class DgpSurrogate final : public Surrogate {
 public:
  DgpSurrogate(DgpConfig config, DgpTrainerConfig trainer, bool warm)
      : config_(std::move(config)), trainer_(trainer), warm_(warm) {}

  void fit(const Dataset& data, Rng& rng) override {
    try {
      DgpModel init = init_dgp(config_, data, rng);
      const DgpModel* previous = warm_ && model_ ? &*model_ : nullptr;
      model_ = train_dgp(std::move(init), trainer_, rng, previous);
    } catch (const TrainingFailed& e) {
      throw SurrogateTrainingFailed(e.what());
    } catch (const std::invalid_argument& e) {
      throw SurrogateTrainingFailed(e.what());
    }
  }

  Prediction predict(const Vector& x) const override { return predict_dgp_gaussian(*model_, x); }

  Vector sample(const Vector& x, int k, Rng& rng) const override {
    return predict_dgp_mc(*model_, x, k, rng).samples;
  }

  double diagnostic() const override { return model_->last_elbo; }

  void set_hidden_widths(const std::vector<int>& widths) override { config_.hidden_widths = widths; }

  int inducing_count() const { return model_ ? model_->layers.front().inducing_count() : 0; }

 private:
  DgpConfig config_;
  DgpTrainerConfig trainer_;
  bool warm_;
  std::optional<DgpModel> model_;
};

Predictive predictive(const Surrogate& s, const Vector& x, int samples, std::uint64_t crn_seed) {
  Predictive p;
  if (samples > 0) {
    Rng rng(crn_seed);
    p.samples = s.sample(x, samples, rng);
    p.mean = p.samples.mean();
    p.std = std::sqrt((p.samples.array() - p.mean).square().sum() / (samples - 1.0));
  } else {
    const Prediction g = s.predict(x);
    p.mean = g.mean;
    p.std = g.std_dev();
  }
  return p;
}

double distance_to_data(const Matrix& x, const Vector& point) {
  double best = kInf;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    best = std::min(best, (x.row(i).transpose() - point).norm());
  }
  return best;
}

}  // namespace

bool Problem::feasible(const Vector& constraint_values) const {
  return (constraint_values.array() <= 0.0).all();
}

Vector Surrogate::sample(const Vector& x, int k, Rng& rng) const {
  const Prediction p = predict(x);
  const double sd = p.std_dev();
  Vector out(k);
  for (int i = 0; i < k; ++i) out[i] = p.mean + sd * rng.normal();
  return out;
}

std::unique_ptr<Surrogate> make_surrogate(const SurrogateSpec& spec, bool warm_start) {
  switch (spec.backend) {
    case Backend::gp:
      return std::make_unique<GpSurrogate>(GpFamily{GpKernelFamily::p_exponential, spec.knots},
                                           spec.gp_trainer);
    case Backend::nlgp:
      return std::make_unique<GpSurrogate>(
          GpFamily{GpKernelFamily::mapped_p_exponential, spec.knots}, spec.gp_trainer);
    case Backend::dgp:
      return std::make_unique<DgpSurrogate>(spec.dgp, spec.dgp_trainer, warm_start);
  }
  throw std::invalid_argument("make_surrogate: unknown backend");
}

void EgoConfig::validate() const {
  if (infill < 0) throw std::invalid_argument("EgoConfig: infill count must be >= 0");
  if (doe_size < 2) throw std::invalid_argument("EgoConfig: DoE size must be >= 2");
  const bool deep = surrogate.backend == Backend::dgp ||
                    (objective_surrogate && objective_surrogate->backend == Backend::dgp);
  if (deep && doe_size < 3) throw std::invalid_argument("EgoConfig: deep surrogates need a DoE of >= 3");
  if (!(success_tol >= 0.0)) throw std::invalid_argument("EgoConfig: success tolerance must be >= 0");
  acquisition.validate();
}

RunRecord run_ego(const Problem& problem, const EgoConfig& config, Rng& rng) {
  config.validate();
  const int dim = problem.dim;
  const auto n_con = static_cast<Eigen::Index>(problem.constraints.size());

  RunRecord rec;
  rec.seed = rng.seed();
  rec.best_value = kInf;
  rec.data.x.resize(0, dim);
  rec.constraint_values.resize(0, n_con);

  auto evaluate = [&](const Vector& x) {
    const double f = problem.objective(x);
    Vector c(n_con);
    for (Eigen::Index j = 0; j < n_con; ++j) c[j] = problem.constraints[static_cast<std::size_t>(j)](x);
    rec.data.append(x, f);
    rec.constraint_values.conservativeResize(rec.constraint_values.rows() + 1, n_con);
    rec.constraint_values.row(rec.constraint_values.rows() - 1) = c.transpose();
    if (problem.feasible(c) && f < rec.best_value) {
      rec.best_value = f;
      rec.best_point = x;
    }
    return std::make_pair(f, c);
  };

  Rng doe_rng = rng.split();
  const Matrix doe = lhs(config.doe_size, dim, doe_rng);
  for (Eigen::Index i = 0; i < doe.rows(); ++i) evaluate(doe.row(i).transpose());
  rec.best_trace.push_back(rec.best_value);

  std::unique_ptr<Surrogate> objective_model =
      make_surrogate(config.objective_surrogate.value_or(config.surrogate), config.warm_start);
  std::vector<std::unique_ptr<Surrogate>> constraint_models;
  for (Eigen::Index j = 0; j < n_con; ++j) {
    constraint_models.push_back(make_surrogate(config.surrogate, config.warm_start));
  }

  const SearchSpace box = SearchSpace::unit_box(dim);
  const int k = config.acquisition.mc_samples;

  for (int it = 0; it < config.infill; ++it) {
    if (const auto hook = config.layer_schedule.find(it); hook != config.layer_schedule.end()) {
      objective_model->set_hidden_widths(hook->second);
      for (auto& m : constraint_models) m->set_hidden_widths(hook->second);
    }

    IterationLog log;
    log.iteration = it;
    try {
      objective_model->fit(rec.data, rng);
      log.diagnostics.push_back(objective_model->diagnostic());
      for (Eigen::Index j = 0; j < n_con; ++j) {
        Dataset cd{rec.data.x, rec.constraint_values.col(j)};
        constraint_models[static_cast<std::size_t>(j)]->fit(cd, rng);
        log.diagnostics.push_back(constraint_models[static_cast<std::size_t>(j)]->diagnostic());
      }
    } catch (const SurrogateTrainingFailed& e) {
      rec.failed = true;
      rec.failure = e.what();
      break;
    }
    if (const auto* deep = dynamic_cast<const DgpSurrogate*>(objective_model.get())) {
      log.inducing.push_back(deep->inducing_count());
    }
    for (const auto& m : constraint_models) {
      if (const auto* deep = dynamic_cast<const DgpSurrogate*>(m.get())) log.inducing.push_back(deep->inducing_count());
    }

    const std::optional<double> y_min =
        rec.has_feasible() ? std::optional<double>(rec.best_value) : std::nullopt;
    const std::uint64_t crn_seed = rng.split().seed();
    auto acquisition = [&](const Vector& x) {
      const Predictive obj = predictive(*objective_model, x, k, crn_seed);
      std::vector<Predictive> cons;
      cons.reserve(constraint_models.size());
      for (const auto& m : constraint_models) cons.push_back(predictive(*m, x, k, crn_seed));
      return acquisition_value(config.acquisition, obj, cons, y_min);
    };

    std::vector<Vector> seeds;
    if (rec.best_point) seeds.push_back(*rec.best_point);
    OptimumResult best;
    try {
      best = differential_evolution(acquisition, box, config.de, rng, seeds);
    } catch (const AllEvaluationsInvalid& e) {
      rec.failed = true;
      rec.failure = e.what();
      break;
    }

    Vector x = best.point.cwiseMax(0.0).cwiseMin(1.0);
    for (int attempt = 0; attempt < 100 && distance_to_data(rec.data.x, x) <= 1e-9; ++attempt) {
      for (int d = 0; d < dim; ++d) x[d] = std::clamp(x[d] + rng.uniform(-1e-6, 1e-6), 0.0, 1.0);
      log.jittered = true;
    }

    const auto [f, c] = evaluate(x);
    log.point = x;
    log.objective = f;
    log.constraints = c;
    log.acquisition = best.value;
    log.best_feasible = rec.best_value;
    rec.iterations.push_back(std::move(log));
    rec.best_trace.push_back(rec.best_value);
  }
  return rec;
}

StudySummary repeat_study(const Problem& problem, const EgoConfig& config, int repetitions,
                          std::uint64_t base_seed, int jobs) {
  if (repetitions < 1) throw std::invalid_argument("repeat_study: need at least one repetition");
  config.validate();
  StudySummary s;
  s.repetitions = repetitions;
  s.base_seed = base_seed;
  s.runs.resize(static_cast<std::size_t>(repetitions));

  std::atomic<int> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  auto worker = [&] {
    for (int r = next++; r < repetitions; r = next++) {
      try {
        Rng rng(base_seed + static_cast<std::uint64_t>(r));
        s.runs[static_cast<std::size_t>(r)] = run_ego(problem, config, rng);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const int threads = std::clamp(jobs, 1, repetitions);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);

  double sum = 0.0;
  int successes = 0;
  for (const RunRecord& run : s.runs) {
    if (run.failed) ++s.failed_runs;
    if (!run.has_feasible()) continue;
    ++s.feasible_runs;
    sum += run.best_value;
    if (std::abs(run.best_value - problem.optimum) <= config.success_tol) ++successes;
  }
  if (s.feasible_runs > 0) {
    s.mean_best = sum / s.feasible_runs;
    double sq = 0.0;
    for (const RunRecord& run : s.runs) {
      if (run.has_feasible()) sq += (run.best_value - s.mean_best) * (run.best_value - s.mean_best);
    }
    s.variance = sq / s.feasible_runs;
  } else {
    s.mean_best = std::numeric_limits<double>::quiet_NaN();
    s.variance = std::numeric_limits<double>::quiet_NaN();
  }
  s.success_pct = 100.0 * successes / repetitions;
  return s;
}

std::vector<double> mean_trace(const std::vector<RunRecord>& runs) {
  std::size_t longest = 0;
  for (const RunRecord& r : runs) longest = std::max(longest, r.best_trace.size());
  std::vector<double> out(longest, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < longest; ++i) {
    double sum = 0.0;
    int count = 0;
    for (const RunRecord& r : runs) {
      if (i < r.best_trace.size() && std::isfinite(r.best_trace[i])) {
        sum += r.best_trace[i];
        ++count;
      }
    }
    if (count > 0) out[i] = sum / count;
  }
  return out;
}

}  // namespace dego
