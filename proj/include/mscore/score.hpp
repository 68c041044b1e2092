#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mscore/linalg.hpp"
#include "mscore/malliavin.hpp"
#include "mscore/model.hpp"
#include "mscore/path_sim.hpp"

namespace mscore {

/// Regular tensor grid of evaluation points (row-major, last dimension fastest).
struct YGrid {
  std::vector<double> lo;
  std::vector<double> hi;
  std::vector<int> count;

  int dim() const { return static_cast<int>(count.size()); }
  std::vector<Vec> points() const;
  double coordinate(int axis, int index) const;
};

/// One path's contribution to the conditional-expectation regression.
struct PathScoreSample {
  Vec x;       // X_t
  Vec delta;   // delta(u_k), k = 0..m-1
  std::vector<SkorokhodBreakdown> breakdown;
  double gamma_condition = 0.0;
  bool excluded = false;
  bool blow_up = false;
};

struct ScoreSamples {
  double t = 0.0;
  int node = 0;
  int state_dim = 0;
  std::vector<PathScoreSample> paths;
  int excluded_singular = 0;
  int excluded_blowup = 0;
  int excluded() const { return excluded_singular + excluded_blowup; }
};

enum class Regression { kNadarayaWatson, kNearestNeighbors };

struct ScoreOptions {
  EstimatorMode mode = EstimatorMode::kAuto;
  Regression regression = Regression::kNadarayaWatson;
  std::optional<std::vector<double>> bandwidth;  // per dimension; nullopt = Silverman
  int knn_neighbors = 0;                         // 0 = round(sqrt(n))
  double min_effective_samples = 5.0;
  int workers = 1;
  CovarianceOptions covariance;
  SimulationOptions simulation;
  SkorokhodOptions skorokhod;
};

struct ScorePoint {
  Vec y;
  Vec score;
  Vec stderr;
  double n_eff = 0.0;
  bool reliable = false;
};

struct ScoreTable {
  double t = 0.0;
  int node = 0;
  int state_dim = 0;
  int n_paths = 0;
  int excluded = 0;
  std::vector<double> bandwidth;
  YGrid grid;
  std::vector<ScorePoint> points;
};

/// Simulates n_paths trajectories on `grid` cut at node `node` and returns (X_t, delta(u)) pairs.
ScoreSamples simulate_score_samples(const SdeModel& model, const Vec& x0, const TimeGrid& grid, int node,
                                    int n_paths, std::uint64_t seed, const ScoreOptions& options = {});

/// Silverman's rule per dimension over the non-excluded samples.
std::vector<double> silverman_bandwidth(const std::vector<Vec>& xs);

/// Regression of -delta on X_t at each grid point.
ScoreTable regress_score(const ScoreSamples& samples, const YGrid& grid, const ScoreOptions& options = {});

/// Full pipeline: t must be a grid node with t > 0 and n_paths >= 100.
ScoreTable estimate_score(const SdeModel& model, const Vec& x0, const TimeGrid& grid, int n_paths, double t,
                          const YGrid& y_grid, std::uint64_t seed, const ScoreOptions& options = {});

/// Gaussian transition law of a linear SDE started at x0.
struct GaussianLaw {
  Vec mean;
  Mat covariance;
};
GaussianLaw linear_transition_law(const SdeModel& model, double t, const Vec& x0);

/// -Gamma_t^{-1} (y - m_t); throws std::invalid_argument for non-linear models or t <= 0.
Vec analytic_score_linear(const SdeModel& model, double t, const Vec& x0, const Vec& y);

void write_score_table_header(std::ostream& os, int m);
void write_score_table_rows(std::ostream& os, const ScoreTable& table);

/// Per-path dump `path,k,ito,A,B,C,total,gamma_cond`; excluded paths are skipped.
void write_breakdown_header(std::ostream& os);
void write_breakdown_rows(std::ostream& os, const ScoreSamples& samples);

// ---------------------------------------------------------------------------
// Reverse-time sampling.

/// Raised when a provider has nothing usable at a required reverse node.
class ScoreGapError : public std::runtime_error {
 public:
  ScoreGapError(int node, double t, const std::string& what)
      : std::runtime_error(what), node_(node), t_(t) {}
  int node() const { return node_; }
  double time() const { return t_; }

 private:
  int node_;
  double t_;
};

class ScoreProvider {
 public:
  virtual ~ScoreProvider() = default;
  /// grad_y log p_{t_node}(y); throws ScoreGapError when unavailable.
  virtual Vec score(int node, double t, const Vec& y) const = 0;
};

class AnalyticScoreProvider final : public ScoreProvider {
 public:
  AnalyticScoreProvider(const SdeModel& model, Vec x0);
  Vec score(int node, double t, const Vec& y) const override;

 private:
  const SdeModel& model_;
  Vec x0_;
};

class ZeroScoreProvider final : public ScoreProvider {
 public:
  explicit ZeroScoreProvider(int m) : m_(m) {}
  Vec score(int, double, const Vec&) const override { return Vec::Zero(m_); }

 private:
  int m_;
};

/// Multilinear interpolation in one ScoreTable per reverse node; queries
/// outside the table range use the nearest boundary value.
class TableScoreProvider final : public ScoreProvider {
 public:
  void add(int node, ScoreTable table);
  Vec score(int node, double t, const Vec& y) const override;
  bool has(int node) const { return tables_.count(node) != 0; }

 private:
  std::map<int, ScoreTable> tables_;
};

struct ReverseOptions {
  int workers = 1;
};

struct ReverseResult {
  std::vector<Vec> start;    // forward terminal samples at T
  std::vector<Vec> samples;  // reverse samples at t = 0
  Vec mean;
  Vec std_dev;
  Vec mean_stderr;
};

/// Euler-Maruyama for the reverse-time SDE from T down to 0.
ReverseResult reverse_time_sample(const SdeModel& model, const ScoreProvider& provider, const Vec& x0,
                                  const TimeGrid& grid, int n_samples, std::uint64_t seed,
                                  const ReverseOptions& options = {});

}  // namespace mscore
