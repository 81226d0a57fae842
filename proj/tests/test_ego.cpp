#include <cmath>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "dego/bench.hpp"
#include "dego/ego.hpp"

using namespace dego;

namespace {

EgoConfig quick(Backend backend = Backend::gp) {
  EgoConfig c;
  c.surrogate.backend = backend;
  c.surrogate.gp_trainer = {400, 0};
  c.surrogate.dgp_trainer.frozen_iterations = 10;
  c.surrogate.dgp_trainer.max_iterations = 30;
  c.surrogate.dgp_trainer.stages = 1;
  c.surrogate.dgp_trainer.restarts = 0;
  c.doe_size = 4;
  c.infill = 3;
  c.de.population = 10;
  c.de.generations = 10;
  return c;
}

}  // namespace

TEST_SUITE("ego") {
  TEST_CASE("zero infill keeps the design only") {
    EgoConfig c = quick();
    c.infill = 0;
    Rng rng(1);
    const RunRecord r = run_ego(make_problem("xiong1d"), c, rng);
    CHECK(r.data.size() == 4);
    CHECK(r.iterations.empty());
    CHECK(r.best_trace.size() == 1);
    CHECK(r.best_trace[0] == r.data.y.minCoeff());
  }

  TEST_CASE("runs are reproducible and the trace is monotone") {
    const Problem p = make_problem("xiong1d");
    Rng a(3);
    Rng b(3);
    const RunRecord ra = run_ego(p, quick(), a);
    const RunRecord rb = run_ego(p, quick(), b);
    CHECK(ra.data.x == rb.data.x);
    CHECK(ra.data.y == rb.data.y);
    CHECK(ra.best_trace.size() == 4);
    for (std::size_t i = 1; i < ra.best_trace.size(); ++i) CHECK(ra.best_trace[i] <= ra.best_trace[i - 1]);
    CHECK(ra.best_value == ra.best_trace.back());
  }

  TEST_CASE("algorithms share the design for a seed") {
    const Problem p = make_problem("xiong1d");
    Rng a(5);
    Rng b(5);
    const RunRecord ra = run_ego(p, quick(Backend::gp), a);
    const RunRecord rb = run_ego(p, quick(Backend::nlgp), b);
    CHECK(ra.data.x.topRows(4) == rb.data.x.topRows(4));
  }

  TEST_CASE("evaluated points stay distinct") {
    const Problem p = make_problem("xiong1d");
    EgoConfig c = quick();
    c.infill = 6;
    Rng rng(7);
    const RunRecord r = run_ego(p, c, rng);
    for (int i = 0; i < r.data.size(); ++i) {
      for (int j = 0; j < i; ++j) CHECK((r.data.x.row(i) - r.data.x.row(j)).norm() > 1e-9);
    }
  }

  TEST_CASE("deep surrogate inducing schedules") {
    const Problem p = make_problem("xiong1d");
    EgoConfig c = quick(Backend::dgp);
    c.infill = 2;
    Rng a(2);
    const RunRecord dynamic = run_ego(p, c, a);
    REQUIRE(dynamic.iterations.size() == 2);
    CHECK(dynamic.iterations[0].inducing == std::vector<int>{4});
    CHECK(dynamic.iterations[1].inducing == std::vector<int>{5});
    c.surrogate.dgp.inducing = {InducingMode::fixed, 25};
    Rng b(2);
    const RunRecord fixed = run_ego(p, c, b);
    REQUIRE(fixed.iterations.size() == 2);
    CHECK(fixed.iterations[1].inducing == std::vector<int>{25});
  }

  TEST_CASE("layer schedule and monte carlo infill run") {
    const Problem p = make_problem("xiong1d");
    EgoConfig c = quick(Backend::dgp);
    c.infill = 2;
    c.acquisition.mc_samples = 8;
    c.layer_schedule[1] = {2, 2};
    Rng rng(4);
    const RunRecord r = run_ego(p, c, rng);
    CHECK(!r.failed);
    CHECK(r.data.size() == 6);
  }

  TEST_CASE("constrained run tracks feasibility") {
    const Problem p = make_problem("constrained2d");
    EgoConfig c = quick();
    c.acquisition.policy = ConstraintPolicy::expected_violation;
    c.doe_size = 8;
    Rng rng(6);
    const RunRecord r = run_ego(p, c, rng);
    CHECK(r.constraint_values.rows() == r.data.size());
    if (r.has_feasible()) {
      CHECK(standin_constraint((*r.best_point)[0], (*r.best_point)[1]) == 0.0);
      CHECK(r.best_value >= p.optimum - 1e-9);
    } else {
      CHECK(r.best_value == std::numeric_limits<double>::infinity());
    }
  }

  TEST_CASE("repeat study summary") {
    const Problem p = make_problem("xiong1d");
    EgoConfig c = quick();
    c.infill = 1;
    const StudySummary s = repeat_study(p, c, 3, 10);
    CHECK(s.runs.size() == 3);
    CHECK(s.runs[1].seed == 11);
    double mean = 0.0;
    for (const RunRecord& r : s.runs) mean += r.best_value / 3.0;
    CHECK(s.mean_best == doctest::Approx(mean));
    double var = 0.0;
    for (const RunRecord& r : s.runs) var += std::pow(r.best_value - mean, 2) / 3.0;
    CHECK(s.variance == doctest::Approx(var));
    const StudySummary threaded = repeat_study(p, c, 3, 10, 2);
    for (int i = 0; i < 3; ++i) CHECK(threaded.runs[i].data.y == s.runs[i].data.y);
    CHECK_THROWS_AS(repeat_study(p, c, 0, 1), std::invalid_argument);
  }

  TEST_CASE("mean trace skips runs without a feasible value") {
    std::vector<RunRecord> runs(2);
    runs[0].best_trace = {std::numeric_limits<double>::infinity(), 2.0};
    runs[1].best_trace = {4.0, 1.0, 0.5};
    const std::vector<double> t = mean_trace(runs);
    REQUIRE(t.size() == 3);
    CHECK(t[0] == 4.0);
    CHECK(t[1] == 1.5);
    CHECK(t[2] == 0.5);
  }

  TEST_CASE("invalid configurations") {
    EgoConfig c = quick();
    c.doe_size = 1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = quick(Backend::dgp);
    c.doe_size = 2;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = quick();
    c.infill = -1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  }
}

TEST_SUITE("bench") {
  TEST_CASE("problem functions") {
    CHECK(std::isfinite(xiong_variant(0.5)));
    CHECK(quad_2d(0.5, 0.5) == 0.0);
    CHECK(standin_constraint(0.5, 1.0) == 0.0);
    CHECK(standin_constraint(0.5, 0.0) > 1.0);
    const double b = standin_boundary(0.3);
    CHECK(standin_constraint(0.3, b) == 0.0);
    CHECK(standin_constraint(0.3, b - 1e-9) > 1.0);
  }

  TEST_CASE("grid oracles") {
    const GridOptimum x = problem_optimum("xiong1d");
    CHECK(x.value == doctest::Approx(-0.622435086).epsilon(1e-8));
    const GridOptimum c = grid_optimum_constrained_2d(400);
    CHECK(standin_constraint(c.point[0], c.point[1]) == 0.0);
    CHECK(c.value >= problem_optimum("constrained2d").value - 1e-12);
    CHECK(make_problem("constrained2d").constraints.size() == 1);
    CHECK_THROWS_AS(make_problem("nope"), std::invalid_argument);
  }

  TEST_CASE("config parsing") {
    std::istringstream in(
        "problem = constrained2d\nrepetitions = 3\nseed = 9\ninfill = 5 # comment\n"
        "algorithm = ego\n"
        "algorithm = dego\nlayers = 3\nwidth = 10\ninducing = dynamic\nprediction = mc:20\n"
        "algorithm = nlego\nknots = 5\nlabel = warped\n");
    const BenchmarkConfig cfg = parse_config(in);
    CHECK(cfg.problem == "constrained2d");
    CHECK(cfg.repetitions == 3);
    CHECK(cfg.seed == 9);
    REQUIRE(cfg.algorithms.size() == 3);
    CHECK(cfg.algorithms[0].label == "EGO");
    CHECK(cfg.algorithms[0].ego.doe_size == 15);
    CHECK(cfg.algorithms[0].ego.infill == 5);
    CHECK(cfg.algorithms[0].ego.acquisition.policy == ConstraintPolicy::expected_violation);
    CHECK(cfg.algorithms[1].label == "DEGO 3HL 10D dynamic");
    CHECK(cfg.algorithms[1].ego.acquisition.mc_samples == 20);
    CHECK(cfg.algorithms[2].label == "warped");
    CHECK(cfg.algorithms[2].ego.surrogate.knots == 5);
  }

  TEST_CASE("default width is the input dimension plus one") {
    std::istringstream in("problem = xiong1d\nalgorithm = dego\ninducing = 25\n");
    const BenchmarkConfig cfg = parse_config(in);
    CHECK(cfg.algorithms[0].ego.surrogate.dgp.hidden_widths == std::vector<int>{2});
    CHECK(cfg.algorithms[0].label == "DEGO 1HL 2D 25");
  }

  TEST_CASE("config errors carry the line") {
    auto line_of = [](const std::string& text) {
      std::istringstream in(text);
      try {
        parse_config(in);
      } catch (const ConfigError& e) {
        return e.line();
      }
      return -1;
    };
    CHECK(line_of("problem = xiong1d\nalgorithm = ego\nknots = 4\n") == 3);
    CHECK(line_of("problem = xiong1d\nalgorithm = ego\ninfill = 2\ninfill = 3\n") == 4);
    CHECK(line_of("problem = xiong1d\nalgorithm = ego\nbogus = 1\n") == 3);
    CHECK(line_of("problem = mars\nalgorithm = ego\n") == 1);
    CHECK(line_of("problem = xiong1d\nalgorithm = sgd\n") == 2);
    CHECK(line_of("problem = xiong1d\nalgorithm = dego\nlayers = zero\n") == 3);
    CHECK(line_of("problem = xiong1d\nalgorithm = ego\nseed = 3\n") == 3);
    CHECK(line_of("problem = xiong1d\n") > 0);
    CHECK_THROWS_AS(load_config("/nonexistent.cfg"), ConfigError);
  }

  TEST_CASE("csv outputs") {
    std::istringstream in("problem = xiong1d\nrepetitions = 2\ninfill = 1\ndoe_size = 3\nalgorithm = ego\n");
    BenchmarkConfig cfg = parse_config(in);
    cfg.algorithms[0].ego.surrogate.gp_trainer = {300, 0};
    cfg.algorithms[0].ego.de = {10, 5};
    const auto results = run_benchmark(cfg);
    std::ostringstream summary, trace, runs;
    write_summary_csv(summary, results);
    write_trace_csv(trace, results);
    write_runs_csv(runs, results);
    CHECK(summary.str().find("EGO") != std::string::npos);
    const std::string t = trace.str();
    const std::string r = runs.str();
    CHECK(std::count(t.begin(), t.end(), '\n') >= 3);
    CHECK(std::count(r.begin(), r.end(), '\n') == 3);
  }
}
