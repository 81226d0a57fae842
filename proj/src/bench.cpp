#include "dego/bench.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>

namespace dego {

double xiong_variant(double x) {
  return -0.5 * (std::sin(40.0 * std::pow(x - 0.85, 4)) * std::cos(2.0 * (x - 0.95)) +
                 0.5 * (x - 0.9) + 1.0);
}

double quad_2d(double x, double y) { return (x - 0.5) * (x - 0.5) + (y - 0.5) * (y - 0.5); }

double standin_boundary(double x) { return 0.75 - 0.15 * std::sin(3.0 * std::numbers::pi * x); }

double standin_constraint(double x, double y) {
  const double b = standin_boundary(x);
  return y >= b ? 0.0 : 1.0 + (b - y);
}

GridOptimum grid_optimum_1d(const std::function<double(double)>& f, int n) {
  if (n < 2) throw std::invalid_argument("grid_optimum_1d: need at least two points");
  GridOptimum best{Vector::Zero(1), std::numeric_limits<double>::infinity()};
  for (int i = 0; i < n; ++i) {
    const double x = static_cast<double>(i) / (n - 1);
    const double v = f(x);
    if (v < best.value) {
      best.value = v;
      best.point[0] = x;
    }
  }
  return best;
}

GridOptimum grid_optimum_constrained_2d(int n) {
  if (n < 2) throw std::invalid_argument("grid_optimum_constrained_2d: need at least two points");
  GridOptimum best{Vector::Zero(2), std::numeric_limits<double>::infinity()};
  for (int i = 0; i < n; ++i) {
    const double x = static_cast<double>(i) / (n - 1);
    for (int j = 0; j < n; ++j) {
      const double y = static_cast<double>(j) / (n - 1);
      if (standin_constraint(x, y) > 0.0) continue;
      const double v = quad_2d(x, y);
      if (v < best.value) {
        best.value = v;
        best.point << x, y;
      }
    }
  }
  return best;
}

std::vector<std::string> problem_names() { return {"xiong1d", "constrained2d"}; }

GridOptimum problem_optimum(const std::string& name) {
  if (name == "xiong1d") {
    static const GridOptimum xiong = grid_optimum_1d(xiong_variant);
    return xiong;
  }
  if (name == "constrained2d") {
    static const GridOptimum c2d = grid_optimum_constrained_2d();
    return c2d;
  }
  throw std::invalid_argument("unknown problem '" + name + "'");
}

Problem make_problem(const std::string& name) {
  Problem p;
  p.name = name;
  if (name == "xiong1d") {
    p.dim = 1;
    p.objective = [](const Vector& x) { return xiong_variant(x[0]); };
  } else if (name == "constrained2d") {
    p.dim = 2;
    p.objective = [](const Vector& x) { return quad_2d(x[0], x[1]); };
    p.constraints.push_back([](const Vector& x) { return standin_constraint(x[0], x[1]); });
  } else {
    throw std::invalid_argument("unknown problem '" + name + "'");
  }
  p.optimum = problem_optimum(name).value;
  return p;
}

// ---------------------------------------------------------------------------
// Config

ConfigError::ConfigError(int line, const std::string& what)
    : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
      line_(line) {}

namespace {

struct Entry {
  std::string key;
  std::string value;
  int line = 0;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

long long parse_int(const Entry& e, long long min) {
  long long v = 0;
  const char* end = e.value.data() + e.value.size();
  const auto [ptr, ec] = std::from_chars(e.value.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError(e.line, e.key + ": expected an integer, got '" + e.value + "'");
  if (v < min) throw ConfigError(e.line, e.key + ": must be >= " + std::to_string(min));
  return v;
}

double parse_double(const Entry& e) {
  std::istringstream in(e.value);
  double v = 0.0;
  in >> v;
  if (!in || !(in >> std::ws).eof() || !std::isfinite(v)) {
    throw ConfigError(e.line, e.key + ": expected a number, got '" + e.value + "'");
  }
  return v;
}

bool parse_bool(const Entry& e) {
  if (e.value == "true" || e.value == "1" || e.value == "yes") return true;
  if (e.value == "false" || e.value == "0" || e.value == "no") return false;
  throw ConfigError(e.line, e.key + ": expected true or false");
}

struct Block {
  Entry algorithm;
  std::vector<Entry> entries;
};

struct DraftAlgorithm {
  EgoConfig ego;
  int layers = 1;
  int width = 0;  // 0: input dimension + 1
  std::string label;
};

EgoConfig problem_defaults(const std::string& problem) {
  EgoConfig c;
  if (problem == "constrained2d") {
    c.doe_size = 15;
    c.acquisition.policy = ConstraintPolicy::expected_violation;
    c.acquisition.threshold = 1e-3;
    c.objective_surrogate = SurrogateSpec{};  // plain GP for the quadratic objective
  }
  return c;
}

void apply(const Entry& e, DraftAlgorithm& d, const std::string& algorithm, bool in_block) {
  const bool deep = algorithm == "dego";
  auto require = [&](bool ok, const char* what) {
    if (!ok && in_block) throw ConfigError(e.line, e.key + " applies to " + what + " only");
    return ok;
  };
  if (e.key == "layers") {
    if (require(deep, "dego")) d.layers = static_cast<int>(parse_int(e, 1));
  } else if (e.key == "width") {
    if (require(deep, "dego")) d.width = static_cast<int>(parse_int(e, 1));
  } else if (e.key == "inducing") {
    if (!require(deep, "dego")) return;
    if (e.value == "dynamic") {
      d.ego.surrogate.dgp.inducing = {InducingMode::dynamic, 0};
    } else {
      d.ego.surrogate.dgp.inducing = {InducingMode::fixed, static_cast<int>(parse_int(e, 1))};
    }
  } else if (e.key == "knots") {
    if (require(algorithm == "nlego", "nlego")) d.ego.surrogate.knots = static_cast<int>(parse_int(e, 2));
  } else if (e.key == "optimizer") {
    if (!require(deep, "dego")) return;
    if (e.value == "lbfgs") {
      d.ego.surrogate.dgp_trainer.optimizer = DgpOptimizer::lbfgs;
    } else if (e.value == "cmaes") {
      d.ego.surrogate.dgp_trainer.optimizer = DgpOptimizer::cmaes;
    } else {
      throw ConfigError(e.line, "optimizer: expected lbfgs or cmaes");
    }
  } else if (e.key == "doe_size") {
    d.ego.doe_size = static_cast<int>(parse_int(e, 2));
  } else if (e.key == "infill") {
    d.ego.infill = static_cast<int>(parse_int(e, 0));
  } else if (e.key == "success_tol") {
    d.ego.success_tol = parse_double(e);
    if (d.ego.success_tol < 0.0) throw ConfigError(e.line, "success_tol must be >= 0");
  } else if (e.key == "threshold") {
    d.ego.acquisition.threshold = parse_double(e);
    if (!(d.ego.acquisition.threshold > 0.0)) throw ConfigError(e.line, "threshold must be > 0");
  } else if (e.key == "warm_start") {
    d.ego.warm_start = parse_bool(e);
  } else if (e.key == "prediction") {
    if (e.value == "gaussian") {
      d.ego.acquisition.mc_samples = 0;
    } else if (e.value.rfind("mc:", 0) == 0) {
      const Entry k{e.key, e.value.substr(3), e.line};
      d.ego.acquisition.mc_samples = static_cast<int>(parse_int(k, 2));
    } else {
      throw ConfigError(e.line, "prediction: expected gaussian or mc:<k>");
    }
  } else if (e.key == "label") {
    if (!in_block) throw ConfigError(e.line, "label belongs inside an algorithm block");
    d.label = e.value;
  } else {
    throw ConfigError(e.line, "unknown key '" + e.key + "'");
  }
}

}  // namespace

std::string default_label(const EgoConfig& config) {
  switch (config.surrogate.backend) {
    case Backend::gp:
      return "EGO";
    case Backend::nlgp:
      return "NLEGO " + std::to_string(config.surrogate.knots) + " knots";
    case Backend::dgp: {
      const DgpConfig& d = config.surrogate.dgp;
      std::string s = "DEGO " + std::to_string(d.hidden_widths.size()) + "HL " +
                      std::to_string(d.hidden_widths.empty() ? 0 : d.hidden_widths.front()) + "D ";
      s += d.inducing.mode == InducingMode::dynamic ? "dynamic" : std::to_string(d.inducing.count);
      return s;
    }
  }
  return "?";
}

BenchmarkConfig parse_config(std::istream& in) {
  std::vector<Entry> global;
  std::vector<Block> blocks;
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string text = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ConfigError(line, "expected 'key = value'");
    Entry e{trim(text.substr(0, eq)), trim(text.substr(eq + 1)), line};
    if (e.key.empty()) throw ConfigError(line, "missing key");
    if (e.value.empty()) throw ConfigError(line, e.key + ": missing value");
    if (e.key == "algorithm") {
      if (e.value != "ego" && e.value != "nlego" && e.value != "dego") {
        throw ConfigError(line, "algorithm: expected ego, nlego or dego, got '" + e.value + "'");
      }
      blocks.push_back({e, {}});
      continue;
    }
    std::vector<Entry>& target = blocks.empty() ? global : blocks.back().entries;
    for (const Entry& prev : target) {
      if (prev.key == e.key) {
        throw ConfigError(line, "duplicate key '" + e.key + "' (first set on line " + std::to_string(prev.line) + ")");
      }
    }
    if (!blocks.empty() && (e.key == "problem" || e.key == "repetitions" || e.key == "seed")) {
      throw ConfigError(line, e.key + " must appear before the first algorithm");
    }
    target.push_back(std::move(e));
  }

  BenchmarkConfig cfg;
  std::vector<Entry> defaults;
  for (const Entry& e : global) {
    if (e.key == "problem") {
      const auto names = problem_names();
      if (std::find(names.begin(), names.end(), e.value) == names.end()) {
        throw ConfigError(e.line, "unknown problem '" + e.value + "'");
      }
      cfg.problem = e.value;
    } else if (e.key == "repetitions") {
      cfg.repetitions = static_cast<int>(parse_int(e, 1));
    } else if (e.key == "seed") {
      cfg.seed = static_cast<std::uint64_t>(parse_int(e, 0));
    } else {
      defaults.push_back(e);
    }
  }
  if (cfg.problem.empty()) throw ConfigError(0, "missing 'problem'");
  if (blocks.empty()) throw ConfigError(line, "no algorithm configured");

  const int dim = cfg.problem == "constrained2d" ? 2 : 1;
  for (const Block& b : blocks) {
    DraftAlgorithm d;
    d.ego = problem_defaults(cfg.problem);
    const std::string& kind = b.algorithm.value;
    d.ego.surrogate.backend = kind == "ego" ? Backend::gp : kind == "nlego" ? Backend::nlgp : Backend::dgp;
    for (const Entry& e : defaults) apply(e, d, kind, false);
    for (const Entry& e : b.entries) apply(e, d, kind, true);
    d.ego.surrogate.dgp.hidden_widths.assign(static_cast<std::size_t>(d.layers), d.width > 0 ? d.width : dim + 1);
    try {
      d.ego.validate();
    } catch (const std::invalid_argument& ex) {
      throw ConfigError(b.algorithm.line, ex.what());
    }
    cfg.algorithms.push_back({d.label.empty() ? default_label(d.ego) : d.label, d.ego});
  }
  return cfg;
}

BenchmarkConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(0, "cannot open config '" + path + "'");
  return parse_config(in);
}

std::vector<BenchmarkResult> run_benchmark(const BenchmarkConfig& config, int jobs,
                                           std::ostream* progress) {
  const Problem problem = make_problem(config.problem);
  std::vector<BenchmarkResult> results;
  for (const AlgorithmConfig& a : config.algorithms) {
    BenchmarkResult r;
    r.label = a.label;
    r.doe_size = a.ego.doe_size;
    r.summary = repeat_study(problem, a.ego, config.repetitions, config.seed, jobs);
    if (progress != nullptr) {
      *progress << a.label << ": mean best " << r.summary.mean_best << ", variance "
                << r.summary.variance << ", success " << r.summary.success_pct << "%\n";
    }
    results.push_back(std::move(r));
  }
  return results;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

void write_summary_csv(std::ostream& out, const std::vector<BenchmarkResult>& results) {
  out << "algorithm,mean_best,variance,success_pct,repetitions,seed\n" << std::setprecision(10);
  for (const BenchmarkResult& r : results) {
    out << csv_field(r.label) << ',' << r.summary.mean_best << ',' << r.summary.variance << ','
        << r.summary.success_pct << ',' << r.summary.repetitions << ',' << r.summary.base_seed << '\n';
  }
}

void write_trace_csv(std::ostream& out, const std::vector<BenchmarkResult>& results) {
  out << "algorithm,evaluations,mean_best\n" << std::setprecision(10);
  for (const BenchmarkResult& r : results) {
    const std::vector<double> trace = mean_trace(r.summary.runs);
    for (std::size_t i = 0; i < trace.size(); ++i) {
      out << csv_field(r.label) << ',' << r.doe_size + static_cast<int>(i) << ',' << trace[i] << '\n';
    }
  }
}

void write_runs_csv(std::ostream& out, const std::vector<BenchmarkResult>& results) {
  out << "algorithm,repetition,seed,best_value,feasible,failed\n" << std::setprecision(12);
  for (const BenchmarkResult& r : results) {
    for (std::size_t i = 0; i < r.summary.runs.size(); ++i) {
      const RunRecord& run = r.summary.runs[i];
      out << csv_field(r.label) << ',' << i << ',' << run.seed << ',' << run.best_value << ','
          << (run.has_feasible() ? 1 : 0) << ',' << (run.failed ? 1 : 0) << '\n';
    }
  }
}

}  // namespace dego
