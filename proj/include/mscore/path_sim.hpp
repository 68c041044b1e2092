#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "mscore/linalg.hpp"
#include "mscore/model.hpp"
#include "mscore/rng.hpp"

namespace mscore {

/// Uniform grid t_i = i T / N on [0, T].
class TimeGrid {
 public:
  TimeGrid(double horizon, int steps);

  double horizon() const { return horizon_; }
  int steps() const { return steps_; }
  double dt() const { return horizon_ / steps_; }
  double time(int i) const { return i == steps_ ? horizon_ : i * dt(); }

  /// Node index for t if t is a node (to within 1e-9 dt), otherwise std::nullopt.
  std::optional<int> node_of(double t) const;
  int nearest_node(double t) const;

  /// The same spacing cut at node n (horizon t_n, n steps); n = 1 is allowed here.
  TimeGrid truncated(int n) const;

 private:
  struct Unchecked {};
  TimeGrid(double horizon, int steps, Unchecked) : horizon_(horizon), steps_(steps) {}

  double horizon_;
  int steps_;
};

struct BrownianPath {
  TimeGrid grid{1.0, 2};
  int noise_dim = 1;
  std::uint64_t seed = 0;
  std::uint64_t path_index = 0;
  std::vector<double> increments;  // step-major: increments[i * noise_dim + l]

  double dB(int i, int l) const { return increments[static_cast<std::size_t>(i) * noise_dim + l]; }
  double& dB(int i, int l) { return increments[static_cast<std::size_t>(i) * noise_dim + l]; }
  Vec step(int i) const;
};

/// Increment i, channel l is a pure function of (seed, path_index, i, l).
BrownianPath sample_brownian(const TimeGrid& grid, int noise_dim, std::uint64_t seed, std::uint64_t path_index,
                            Stream stream = Stream::kBrownian);

/// Copy of w with dB(i, l) += eps; throws std::out_of_range on bad indices.
BrownianPath perturb_increment(const BrownianPath& w, int i, int l, double eps);

/// First n increments of w (for the horizon-t_n problem on the same path).
BrownianPath truncate_path(const BrownianPath& w, int n);

enum class InverseScheme {
  kItoRealized,      // Euler step of the inverse SDE, Ito correction from realized increments (default)
  kItoExpected,      // Euler step of the inverse SDE, Ito correction with dt
  kDirectInversion,  // Yinv_i = Y_i^{-1} at every node
};

struct SimulationOptions {
  InverseScheme inverse_scheme = InverseScheme::kItoRealized;
  int reinvert_every = 0;  // > 0: replace Yinv by Y^{-1} every K steps (ignored for kDirectInversion)
};

struct VariationNode {
  Vec x;
  Mat y;
  Mat y_inv;
  Tensor3 z;
};

struct VariationTrajectory {
  TimeGrid grid{1.0, 2};
  BrownianPath path;
  std::vector<VariationNode> nodes;  // N + 1 entries
  bool valid = true;                 // false once any process left the finite range

  int steps() const { return grid.steps(); }
  int state_dim() const { return static_cast<int>(nodes.front().x.size()); }
  const VariationNode& operator[](int i) const { return nodes[static_cast<std::size_t>(i)]; }
  const VariationNode& terminal() const { return nodes.back(); }
};

/// Euler-Maruyama for X, Y, Yinv and Z driven by the same increments.
VariationTrajectory simulate_variations(const SdeModel& model, const Vec& x0, const TimeGrid& grid,
                                        const BrownianPath& w, const SimulationOptions& options = {});

/// State only (no variation processes); returns false on blow-up.
bool simulate_state(const SdeModel& model, const Vec& x0, const TimeGrid& grid, const BrownianPath& w, Vec& x_out);

/// max_i max-abs entry of Y_i Yinv_i - I.
double inverse_drift(const VariationTrajectory& traj);

/// CSV header `path,i,t,X_1..,Y_11..,Yinv_11..,Z_111..` (row-major flattening).
void write_trajectory_header(std::ostream& os, int m);
void write_trajectory_rows(std::ostream& os, const VariationTrajectory& traj);

}  // namespace mscore
