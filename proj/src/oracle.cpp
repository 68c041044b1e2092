#include "mscore/oracle.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <string>

#include "mscore/parallel.hpp"

namespace mscore {

namespace {

Mat observe(BumpTarget target, const SdeModel& model, const Vec& x0, const TimeGrid& grid, const BrownianPath& w,
            int s, const SimulationOptions& sim) {
  const VariationTrajectory traj = simulate_variations(model, x0, grid, w, sim);
  if (!traj.valid) throw OracleRefusal("bump oracle: perturbed path blew up");
  switch (target) {
    case BumpTarget::kState:
      return traj.terminal().x;
    case BumpTarget::kFirstVariation:
      return traj.terminal().y;
    case BumpTarget::kInverseVariation:
      return traj[s].y_inv;
    case BumpTarget::kInverseDiffusion: {
      Coefficients c;
      model.evaluate_into(grid.time(s), traj[s].x, c);
      return traj[s].y_inv * c.diffusion;
    }
    case BumpTarget::kCovariance:
      return malliavin_covariance(model, traj).gamma;
  }
  throw std::logic_error("bump oracle: unknown target");
}

}  // namespace

Mat fd_malliavin(BumpTarget target, const SdeModel& model, const Vec& x0, const TimeGrid& grid,
                 const BrownianPath& w, const BumpProbe& probe, const SimulationOptions& sim) {
  if (!(probe.eps > 0.0)) throw std::invalid_argument("fd_malliavin: eps must be positive");
  if (probe.observe < 0 || probe.observe > grid.steps()) throw std::out_of_range("fd_malliavin: observe node");
  const BrownianPath up = perturb_increment(w, probe.node, probe.channel, probe.eps);
  const BrownianPath down = perturb_increment(w, probe.node, probe.channel, -probe.eps);
  const Mat hi = observe(target, model, x0, grid, up, probe.observe, sim);
  const Mat lo = observe(target, model, x0, grid, down, probe.observe, sim);
  return (hi - lo) / (2.0 * probe.eps);
}

double default_bump(const TimeGrid& grid) { return 1e-4 * std::sqrt(grid.dt()); }

// ---------------------------------------------------------------------------

KdeScore kde_score(const std::vector<Vec>& samples, const Vec& y, const std::vector<double>& h) {
  if (samples.size() < 100) throw std::invalid_argument("kde_score: need at least 100 samples");
  const int m = static_cast<int>(y.size());
  if (static_cast<int>(h.size()) != m) throw std::invalid_argument("kde_score: one bandwidth per dimension");

  double norm = 1.0;
  for (double hv : h) norm *= hv * std::sqrt(2.0 * std::numbers::pi);

  double sw = 0.0, sw2 = 0.0;
  Vec swg = Vec::Zero(m);
  std::vector<double> weights(samples.size());
  std::vector<Vec> grads(samples.size());
  for (std::size_t p = 0; p < samples.size(); ++p) {
    Vec g(m);
    double e = 0.0;
    for (int a = 0; a < m; ++a) {
      const double u = (samples[p](a) - y(a)) / h[a];
      e += u * u;
      g(a) = u / h[a];  // d/dy log K_h(x - y)
    }
    const double w = std::exp(-0.5 * e);
    weights[p] = w;
    grads[p] = g;
    sw += w;
    sw2 += w * w;
    swg += w * g;
  }
  KdeScore out;
  out.density = sw / (static_cast<double>(samples.size()) * norm);
  out.score = Vec::Constant(m, std::numeric_limits<double>::quiet_NaN());
  out.stderr = out.score;
  if (!(out.density >= 1e-12) || !(sw > 0.0)) return out;
  out.score = swg / sw;
  Vec resid2 = Vec::Zero(m);
  for (std::size_t p = 0; p < samples.size(); ++p) {
    const Vec r = grads[p] - out.score;
    resid2 += weights[p] * weights[p] * r.cwiseProduct(r);
  }
  out.stderr = (resid2 / (sw * sw)).cwiseSqrt();
  out.reliable = out.score.allFinite();
  return out;
}

// ---------------------------------------------------------------------------

double FokkerPlanckSolution::score(std::size_t snapshot, std::size_t j) const {
  const auto& p = density[snapshot];
  if (j == 0 || j + 1 >= p.size() || !(p[j] > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  return (p[j + 1] - p[j - 1]) / (2.0 * dx() * p[j]);
}

namespace {

double interpolate(const FokkerPlanckSolution& sol, double y, bool score) {
  const double pos = (y - sol.x.front()) / sol.dx();
  if (pos < 1.0 || pos > static_cast<double>(sol.x.size()) - 2.0) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t j = static_cast<std::size_t>(std::floor(pos));
  const double f = pos - static_cast<double>(j);
  const std::size_t last = sol.density.size() - 1;
  const double a = score ? sol.score(last, j) : sol.terminal()[j];
  const double b = score ? sol.score(last, j + 1) : sol.terminal()[j + 1];
  return (1.0 - f) * a + f * b;
}

// Solves a tridiagonal system in place (Thomas algorithm); lower[0] and upper[n-1] unused.
void solve_tridiagonal(const std::vector<double>& lower, const std::vector<double>& diag,
                       const std::vector<double>& upper, std::vector<double>& rhs) {
  const std::size_t n = diag.size();
  std::vector<double> c(n);
  double denom = diag[0];
  c[0] = upper[0] / denom;
  rhs[0] /= denom;
  for (std::size_t j = 1; j < n; ++j) {
    denom = diag[j] - lower[j] * c[j - 1];
    c[j] = j + 1 < n ? upper[j] / denom : 0.0;
    rhs[j] = (rhs[j] - lower[j] * rhs[j - 1]) / denom;
  }
  for (std::size_t j = n - 1; j-- > 0;) rhs[j] -= c[j] * rhs[j + 1];
}

}  // namespace

double FokkerPlanckSolution::terminal_score(double y) const { return interpolate(*this, y, true); }
double FokkerPlanckSolution::terminal_density(double y) const { return interpolate(*this, y, false); }

FokkerPlanckSolution fokker_planck_1d(const SdeModel& model, double x0, double horizon, const FokkerPlanckMesh& mesh,
                                      int n_time, const FokkerPlanckOptions& options) {
  if (model.state_dim() != 1) throw std::invalid_argument("fokker_planck_1d: scalar models only");
  if (mesh.cells < 3 || !(mesh.hi > mesh.lo)) throw std::invalid_argument("fokker_planck_1d: bad mesh");
  if (n_time < 1 || !(horizon > 0.0)) throw std::invalid_argument("fokker_planck_1d: bad time discretisation");

  const std::size_t n = static_cast<std::size_t>(mesh.cells);
  const double dx = (mesh.hi - mesh.lo) / mesh.cells;
  const double dt = horizon / n_time;

  FokkerPlanckSolution sol;
  sol.x.resize(n);
  for (std::size_t j = 0; j < n; ++j) sol.x[j] = mesh.lo + (static_cast<double>(j) + 0.5) * dx;

  std::vector<double> p(n);
  double mass = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double u = (sol.x[j] - x0) / dx;
    p[j] = std::exp(-0.5 * u * u);
    mass += p[j] * dx;
  }
  for (auto& v : p) v /= mass;
  sol.times.push_back(0.0);
  sol.density.push_back(p);

  // Operator L p at cell j: -(F_{j+1/2} - F_{j-1/2}) / dx with
  // F_{j+1/2} = b_{j+1/2} (p_j + p_{j+1}) / 2 - (D_{j+1} p_{j+1} - D_j p_j) / dx, D = sigma^2 / 2.
  std::vector<double> lo(n), di(n), up(n);
  auto assemble = [&](double t) {
    Coefficients c;
    Vec xv(1);
    std::vector<double> diff(n), face_drift(n + 1, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      xv(0) = sol.x[j];
      model.evaluate_into(t, xv, c);
      double s2 = 0.0;
      for (int l = 0; l < model.noise_dim(); ++l) s2 += c.diffusion(0, l) * c.diffusion(0, l);
      diff[j] = 0.5 * s2;
    }
    for (std::size_t f = 1; f < n; ++f) {
      xv(0) = mesh.lo + static_cast<double>(f) * dx;
      model.evaluate_into(t, xv, c);
      face_drift[f] = c.drift(0);
    }
    std::fill(lo.begin(), lo.end(), 0.0);
    std::fill(di.begin(), di.end(), 0.0);
    std::fill(up.begin(), up.end(), 0.0);
    for (std::size_t f = 1; f < n; ++f) {
      // Flux through face f between cells f-1 (left) and f (right).
      const double bl = 0.5 * face_drift[f] + diff[f - 1] / dx;  // coefficient of p_{f-1}
      const double br = 0.5 * face_drift[f] - diff[f] / dx;      // coefficient of p_f
      // Cell f-1 loses the flux, cell f gains it.
      di[f - 1] -= bl / dx;
      up[f - 1] -= br / dx;
      lo[f] += bl / dx;
      di[f] += br / dx;
    }
  };

  auto apply = [&](const std::vector<double>& v, double scale) {
    std::vector<double> r(n);
    for (std::size_t j = 0; j < n; ++j) {
      double acc = di[j] * v[j];
      if (j > 0) acc += lo[j] * v[j - 1];
      if (j + 1 < n) acc += up[j] * v[j + 1];
      r[j] = v[j] + scale * acc;
    }
    return r;
  };

  auto implicit_step = [&](double h) {
    std::vector<double> l2(n), d2(n), u2(n);
    for (std::size_t j = 0; j < n; ++j) {
      l2[j] = -h * lo[j];
      d2[j] = 1.0 - h * di[j];
      u2[j] = -h * up[j];
    }
    solve_tridiagonal(l2, d2, u2, p);
  };

  const int snap = options.snapshot_every > 0 ? options.snapshot_every : n_time;
  double t = 0.0;
  int startup = std::max(0, options.implicit_startup);
  startup -= startup % 2;
  int step = 0;
  auto check_mass = [&] {
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      sol.min_raw_density = std::min(sol.min_raw_density, p[j]);
      total += p[j] * dx;
    }
    const double err = std::abs(total - 1.0);
    sol.max_mass_error = std::max(sol.max_mass_error, err);
    if (err > options.mass_tolerance)
      throw std::runtime_error("fokker_planck_1d: mass drifted by " + std::to_string(err) + " at t = " +
                               std::to_string(t));
  };

  while (step < n_time) {
    if (step * 2 < startup && step + 1 <= n_time) {
      assemble(t + 0.25 * dt);
      implicit_step(0.5 * dt);
      assemble(t + 0.75 * dt);
      implicit_step(0.5 * dt);
    } else {
      assemble(t + 0.5 * dt);
      p = apply(p, 0.5 * dt);
      implicit_step(0.5 * dt);
    }
    ++step;
    t = horizon * step / n_time;
    check_mass();
    if (step % snap == 0 || step == n_time) {
      std::vector<double> clipped = p;
      for (auto& v : clipped)
        if (v < 0.0 && v >= -1e-12) v = 0.0;
      sol.times.push_back(t);
      sol.density.push_back(std::move(clipped));
    }
  }
  return sol;
}

void write_fokker_planck_csv(std::ostream& os, const FokkerPlanckSolution& sol) {
  os << "t,x,p,score\n";
  for (std::size_t s = 0; s < sol.density.size(); ++s)
    for (std::size_t j = 0; j < sol.x.size(); ++j)
      os << sol.times[s] << ',' << sol.x[j] << ',' << sol.density[s][j] << ',' << sol.score(s, j) << '\n';
}

// ---------------------------------------------------------------------------

double DualityReport::max_z_score() const {
  double worst = 0.0;
  for (int i = 0; i < mean.rows(); ++i)
    for (int k = 0; k < mean.cols(); ++k) {
      const double target = i == k ? 1.0 : 0.0;
      worst = std::max(worst, std::abs(mean(i, k) - target) / stderr(i, k));
    }
  return worst;
}

DualityReport duality_report(const SdeModel& model, const Vec& x0, const TimeGrid& grid, int n_paths,
                             std::uint64_t seed, const DualityOptions& options) {
  const int m = model.state_dim();
  if (options.mode == EstimatorMode::kStateIndependent && !model.state_independent_diffusion())
    throw std::invalid_argument("duality_report: state-independent form refused for a state-dependent model");

  struct Row {
    bool ok = false;
    Mat product;
  };
  const auto rows = parallel_map(static_cast<std::size_t>(n_paths), options.workers, [&](std::size_t p) {
    Row row;
    const BrownianPath w = sample_brownian(grid, model.noise_dim(), seed, p);
    const VariationTrajectory traj = simulate_variations(model, x0, grid, w, options.simulation);
    if (!traj.valid) return row;
    const MalliavinBundle bundle = malliavin_covariance(model, traj, options.covariance);
    if (bundle.singular) return row;
    const auto parts = skorokhod_integrals(traj, bundle, options.mode, options.skorokhod);
    row.product = Mat(m, m);
    for (int i = 0; i < m; ++i)
      for (int k = 0; k < m; ++k) row.product(i, k) = traj.terminal().x(i) * parts[k].total;
    row.ok = row.product.allFinite();
    return row;
  });

  DualityReport rep;
  rep.mean = Mat::Zero(m, m);
  Mat sq = Mat::Zero(m, m);
  for (const auto& r : rows) {
    if (!r.ok) {
      ++rep.excluded;
      continue;
    }
    ++rep.used;
    rep.mean += r.product;
  }
  if (rep.used < 2) throw std::domain_error("duality_report: every path was excluded (singular covariance?)");
  rep.mean /= rep.used;
  for (const auto& r : rows)
    if (r.ok) sq += (r.product - rep.mean).cwiseProduct(r.product - rep.mean);
  rep.stderr = (sq / ((rep.used - 1.0) * rep.used)).cwiseSqrt();
  return rep;
}

}  // namespace mscore
