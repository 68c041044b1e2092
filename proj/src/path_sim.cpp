#include "mscore/path_sim.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>

#include "mscore/rng.hpp"

namespace mscore {

TimeGrid::TimeGrid(double horizon, int steps) : horizon_(horizon), steps_(steps) {
  if (steps < 2) throw std::invalid_argument("TimeGrid: need at least 2 steps");
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw std::invalid_argument("TimeGrid: horizon must be positive");
}

std::optional<int> TimeGrid::node_of(double t) const {
  const int n = nearest_node(t);
  if (std::abs(time(n) - t) <= 1e-9 * dt()) return n;
  return std::nullopt;
}

int TimeGrid::nearest_node(double t) const {
  const long n = std::lround(t / dt());
  return static_cast<int>(std::clamp<long>(n, 0, steps_));
}

TimeGrid TimeGrid::truncated(int n) const {
  if (n < 1 || n > steps_) throw std::out_of_range("TimeGrid::truncated: node out of range");
  return TimeGrid(time(n), n, Unchecked{});
}

Vec BrownianPath::step(int i) const {
  Vec v(noise_dim);
  for (int l = 0; l < noise_dim; ++l) v(l) = dB(i, l);
  return v;
}

BrownianPath sample_brownian(const TimeGrid& grid, int noise_dim, std::uint64_t seed, std::uint64_t path_index,
                            Stream stream) {
  BrownianPath w{grid, noise_dim, seed, path_index, {}};
  w.increments.resize(static_cast<std::size_t>(grid.steps()) * noise_dim);
  const Philox4x32 gen(seed);
  const double scale = std::sqrt(grid.dt());
  for (int i = 0; i < grid.steps(); ++i)
    fill_normals(gen, stream, path_index, static_cast<std::uint32_t>(i), noise_dim,
                 [&](int l, double z) { w.dB(i, l) = scale * z; });
  return w;
}

BrownianPath perturb_increment(const BrownianPath& w, int i, int l, double eps) {
  if (i < 0 || i >= w.grid.steps() || l < 0 || l >= w.noise_dim)
    throw std::out_of_range("perturb_increment: index (" + std::to_string(i) + ", " + std::to_string(l) +
                            ") out of range");
  BrownianPath out = w;
  out.dB(i, l) += eps;
  return out;
}

BrownianPath truncate_path(const BrownianPath& w, int n) {
  BrownianPath out{w.grid.truncated(n), w.noise_dim, w.seed, w.path_index, {}};
  out.increments.assign(w.increments.begin(), w.increments.begin() + static_cast<std::ptrdiff_t>(n) * w.noise_dim);
  return out;
}

namespace {

bool finite(const VariationNode& n) {
  if (!n.x.allFinite() || !n.y.allFinite() || !n.y_inv.allFinite()) return false;
  for (int i = 0; i < n.z.dim; ++i)
    if (!n.z.slice[i].allFinite()) return false;
  return true;
}

}  // namespace

VariationTrajectory simulate_variations(const SdeModel& model, const Vec& x0, const TimeGrid& grid,
                                        const BrownianPath& w, const SimulationOptions& options) {
  const int m = model.state_dim();
  const int d = model.noise_dim();
  if (w.noise_dim != d) throw std::invalid_argument("simulate_variations: noise dimension mismatch");
  if (w.grid.steps() != grid.steps()) throw std::invalid_argument("simulate_variations: path/grid step mismatch");
  if (x0.size() != m) throw std::invalid_argument("simulate_variations: x0 dimension mismatch");

  VariationTrajectory traj{grid, w, {}, true};
  traj.nodes.resize(static_cast<std::size_t>(grid.steps()) + 1);
  traj.nodes[0] = {x0, Mat::Identity(m, m), Mat::Identity(m, m), Tensor3::Zero(m)};

  const double dt = grid.dt();
  const bool noisy_jacobian = !model.state_independent_diffusion();
  Coefficients c;
  for (int i = 0; i < grid.steps(); ++i) {
    const VariationNode& cur = traj.nodes[i];
    VariationNode& nxt = traj.nodes[i + 1];
    model.evaluate_into(grid.time(i), cur.x, c);

    nxt.x = cur.x + c.drift * dt;
    for (int l = 0; l < d; ++l) nxt.x += c.diffusion.col(l) * w.dB(i, l);

    // S = sum_l d_x sigma^l dB^l; the Ito correction is S^2 (realized) or sum_l (d_x sigma^l)^2 dt.
    Mat noise_jac = Mat::Zero(m, m);
    Mat ito_correction = Mat::Zero(m, m);
    if (noisy_jacobian) {
      for (int l = 0; l < d; ++l) noise_jac += c.diffusion_jacobian[l] * w.dB(i, l);
      if (options.inverse_scheme == InverseScheme::kItoExpected) {
        for (int l = 0; l < d; ++l) ito_correction += c.diffusion_jacobian[l] * c.diffusion_jacobian[l] * dt;
      } else {
        ito_correction = noise_jac * noise_jac;
      }
    }
    const Mat step_jac = c.drift_jacobian * dt + noise_jac;

    nxt.y = cur.y + step_jac * cur.y;

    if (options.inverse_scheme == InverseScheme::kDirectInversion) {
      nxt.y_inv = nxt.y.inverse();
    } else {
      nxt.y_inv = cur.y_inv - cur.y_inv * step_jac + cur.y_inv * ito_correction;
      if (options.reinvert_every > 0 && (i + 1) % options.reinvert_every == 0) nxt.y_inv = nxt.y.inverse();
    }

    const Tensor3 yy_b = sandwich(c.drift_hessian, cur.y);
    nxt.z = cur.z;
    for (int a = 0; a < m; ++a) nxt.z.slice[a] += yy_b.slice[a] * dt;
    nxt.z += left_multiply(step_jac, cur.z);
    if (noisy_jacobian) {
      for (int l = 0; l < d; ++l) {
        const Tensor3 yy_s = sandwich(c.diffusion_hessian[l], cur.y);
        for (int a = 0; a < m; ++a) nxt.z.slice[a] += yy_s.slice[a] * w.dB(i, l);
      }
    }

    if (!finite(nxt)) {
      traj.valid = false;
      for (int k = i + 1; k <= grid.steps(); ++k) traj.nodes[k] = traj.nodes[i + 1];
      break;
    }
  }
  return traj;
}

bool simulate_state(const SdeModel& model, const Vec& x0, const TimeGrid& grid, const BrownianPath& w, Vec& x_out) {
  Coefficients c;
  Vec x = x0;
  const double dt = grid.dt();
  for (int i = 0; i < grid.steps(); ++i) {
    model.evaluate_into(grid.time(i), x, c);
    Vec nx = x + c.drift * dt;
    for (int l = 0; l < model.noise_dim(); ++l) nx += c.diffusion.col(l) * w.dB(i, l);
    if (!nx.allFinite()) return false;
    x = nx;
  }
  x_out = x;
  return true;
}

double inverse_drift(const VariationTrajectory& traj) {
  const int m = traj.state_dim();
  double worst = 0.0;
  for (const auto& n : traj.nodes) worst = std::max(worst, max_abs(n.y * n.y_inv - Mat::Identity(m, m)));
  return worst;
}

void write_trajectory_header(std::ostream& os, int m) {
  os << "path,i,t";
  for (int a = 1; a <= m; ++a) os << ",X_" << a;
  for (int a = 1; a <= m; ++a)
    for (int b = 1; b <= m; ++b) os << ",Y_" << a << b;
  for (int a = 1; a <= m; ++a)
    for (int b = 1; b <= m; ++b) os << ",Yinv_" << a << b;
  for (int a = 1; a <= m; ++a)
    for (int b = 1; b <= m; ++b)
      for (int c = 1; c <= m; ++c) os << ",Z_" << a << b << c;
  os << '\n';
}

void write_trajectory_rows(std::ostream& os, const VariationTrajectory& traj) {
  const int m = traj.state_dim();
  for (int i = 0; i <= traj.steps(); ++i) {
    const auto& n = traj[i];
    os << traj.path.path_index << ',' << i << ',' << traj.grid.time(i);
    for (int a = 0; a < m; ++a) os << ',' << n.x(a);
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) os << ',' << n.y(a, b);
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) os << ',' << n.y_inv(a, b);
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b)
        for (int c = 0; c < m; ++c) os << ',' << n.z(a, b, c);
    os << '\n';
  }
}

}  // namespace mscore
