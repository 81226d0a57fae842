#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "dego/bench.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kTrainingFailure = 3;

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EGO / NLEGO / DEGO benchmark harness"};
  app.require_subcommand(1);

  int jobs = 1;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;

  auto* run = app.add_subcommand("run", "Run every algorithm of a study config");
  std::string config_path;
  run->add_option("config", config_path, "Study config file")->required();
  run->add_option("--jobs", jobs, "Repetitions run in parallel")->check(CLI::PositiveNumber);
  run->add_option("--out-dir", out_dir, "Directory for summary.csv, trace.csv, runs.csv");
  run->add_option("--seed", seed, "Override the config's base seed");

  auto* eval = app.add_subcommand("eval", "Evaluate a problem at a unit-box point");
  std::string eval_problem;
  std::vector<double> point;
  eval->add_option("problem", eval_problem, "Problem name")->required();
  eval->add_option("x", point, "Coordinates in [0, 1]")->required();

  auto* optimum = app.add_subcommand("optimum", "Grid-oracle optimum of a problem");
  std::string opt_problem;
  optimum->add_option("problem", opt_problem, "Problem name")->required();

  CLI11_PARSE(app, argc, argv);
  std::cout << std::setprecision(10);

  try {
    if (*eval) {
      const dego::Problem p = dego::make_problem(eval_problem);
      if (static_cast<int>(point.size()) != p.dim) {
        std::cerr << "error: " << eval_problem << " takes " << p.dim << " coordinate(s)\n";
        return kConfigError;
      }
      const dego::Vector x = Eigen::Map<const dego::Vector>(point.data(), p.dim);
      if ((x.array() < 0.0).any() || (x.array() > 1.0).any()) {
        std::cerr << "error: coordinates must lie in [0, 1]\n";
        return kConfigError;
      }
      std::cout << "objective " << p.objective(x) << '\n';
      for (std::size_t j = 0; j < p.constraints.size(); ++j) {
        std::cout << "constraint" << j << ' ' << p.constraints[j](x) << '\n';
      }
      return kOk;
    }

    if (*optimum) {
      const dego::GridOptimum o = dego::problem_optimum(opt_problem);
      std::cout << "value " << o.value << "\npoint";
      for (Eigen::Index i = 0; i < o.point.size(); ++i) std::cout << ' ' << o.point[i];
      std::cout << '\n';
      return kOk;
    }

    dego::BenchmarkConfig cfg = dego::load_config(config_path);
    if (seed) cfg.seed = *seed;
    const std::vector<dego::BenchmarkResult> results = dego::run_benchmark(cfg, jobs, &std::cout);

    const std::filesystem::path dir(out_dir);
    std::filesystem::create_directories(dir);
    auto summary = open_output(dir / "summary.csv");
    dego::write_summary_csv(summary, results);
    auto trace = open_output(dir / "trace.csv");
    dego::write_trace_csv(trace, results);
    auto runs = open_output(dir / "runs.csv");
    dego::write_runs_csv(runs, results);

    for (const auto& r : results) {
      if (r.summary.failed_runs > 0) {
        std::cerr << r.label << ": " << r.summary.failed_runs << " run(s) stopped on a training failure\n";
        return kTrainingFailure;
      }
    }
    return kOk;
  } catch (const dego::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const dego::SurrogateTrainingFailed& e) {
    std::cerr << "training failure: " << e.what() << '\n';
    return kTrainingFailure;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigError;
  }
}
