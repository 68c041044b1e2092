#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mscore/malliavin.hpp"
#include "mscore/model.hpp"
#include "mscore/path_sim.hpp"
#include "mscore/score.hpp"

namespace mscore::app {

/// A malformed or inconsistent configuration; `line` is 0 when no single line is at fault.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string source, int line, std::string field, const std::string& message);
  int line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  int line_;
  std::string field_;
};

enum class ScoreSource { kAnalytic, kEstimated, kZero };

struct RunConfig {
  std::string source = "<config>";

  // [model]
  std::string model = "ou";
  ParamMap params;

  // [simulation]
  std::vector<double> x0;  // empty: origin of the model's state space
  double horizon = 1.0;
  int steps = 256;
  int n_paths = 10000;
  std::uint64_t seed = 1;
  InverseScheme inverse_scheme = InverseScheme::kItoRealized;
  int reinvert_every = 0;

  // [score]
  std::vector<double> t_eval;  // empty: horizon only
  std::vector<double> y_min{-2.0};
  std::vector<double> y_max{2.0};
  std::vector<int> y_count{41};
  std::optional<std::vector<double>> bandwidth;  // nullopt: Silverman
  EstimatorMode estimator = EstimatorMode::kAuto;
  Regression regression = Regression::kNadarayaWatson;
  int knn_neighbors = 0;
  double min_effective = 5.0;

  // [reverse]
  ScoreSource score_source = ScoreSource::kAnalytic;
  int n_samples = 10000;
  int score_paths = 2000;

  // [validate]
  std::vector<std::string> validate_models;  // empty: every builtin
  int validate_paths = 10000;
  int probes = 20;

  // [output]
  std::string out_dir = "out";
  int dump_paths = 0;  // number of leading paths written to trajectories.csv
  bool dump_breakdown = false;
  bool ridge = false;

  // [debug]
  bool flip_b_term = false;

  // Source lines of keys validated after parsing (0 when absent).
  int t_eval_line = 0;
  int y_min_line = 0;

  ModelPtr make_model() const;
  Vec initial_state(const SdeModel& model) const;
  TimeGrid grid() const { return TimeGrid(horizon, steps); }
  YGrid y_grid(int m) const;
  /// Resolves t_eval to grid nodes; a non-node time is a ConfigError naming the nearest node.
  std::vector<int> evaluation_nodes() const;
  ScoreOptions score_options(int workers) const;
  SimulationOptions simulation_options() const;
};

RunConfig parse_config(std::istream& in, const std::string& source);
RunConfig load_config(const std::string& path);

/// Every effective setting, defaults included, in the same section layout the parser reads.
void echo_config(std::ostream& os, const RunConfig& config);

}  // namespace mscore::app
