#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "dego/ego.hpp"

namespace dego {

double xiong_variant(double x);
double quad_2d(double x, double y);
/// Feasible-region boundary of the 2D constraint: y >= b(x).
double standin_boundary(double x);
/// 0 on the feasible set, 1 + (b(x) - y) below the boundary.
double standin_constraint(double x, double y);

struct GridOptimum {
  Vector point;
  double value = 0.0;
};

/// Minimum over an n-point uniform grid of [0, 1] (endpoints included).
GridOptimum grid_optimum_1d(const std::function<double(double)>& f, int n = 1000000);
/// Best feasible point of quad_2d on an n x n grid of the unit square.
GridOptimum grid_optimum_constrained_2d(int n = 2000);

/// Registered problems: "xiong1d" and "constrained2d". Known optima come from the grid oracles.
std::vector<std::string> problem_names();
Problem make_problem(const std::string& name);
GridOptimum problem_optimum(const std::string& name);

class ConfigError : public std::runtime_error {
 public:
  ConfigError(int line, const std::string& what);
  int line() const { return line_; }

 private:
  int line_;
};

struct AlgorithmConfig {
  std::string label;
  EgoConfig ego;
};

struct BenchmarkConfig {
  std::string problem;
  int repetitions = 10;
  std::uint64_t seed = 0;
  std::vector<AlgorithmConfig> algorithms;
};

/// Flat `key = value` text, `#` starts a comment. Keys before the first
/// `algorithm` line are defaults for every algorithm; each `algorithm` line
/// (ego | nlego | dego) opens a block whose keys override them.
BenchmarkConfig parse_config(std::istream& in);
BenchmarkConfig load_config(const std::string& path);

/// "EGO", "NLEGO 4 knots", "DEGO 1HL 2D dynamic", "DEGO 3HL 10D 35".
std::string default_label(const EgoConfig& config);

struct BenchmarkResult {
  std::string label;
  int doe_size = 0;
  StudySummary summary;
};

std::vector<BenchmarkResult> run_benchmark(const BenchmarkConfig& config, int jobs = 1,
                                           std::ostream* progress = nullptr);

void write_summary_csv(std::ostream& out, const std::vector<BenchmarkResult>& results);
void write_trace_csv(std::ostream& out, const std::vector<BenchmarkResult>& results);
/// One row per repetition: seed and best value, for replay.
void write_runs_csv(std::ostream& out, const std::vector<BenchmarkResult>& results);

}  // namespace dego
