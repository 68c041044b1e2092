#include "mscore/validation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>

#include "mscore/oracle.hpp"
#include "mscore/parallel.hpp"

namespace mscore {

const char* bump_quantity_name(BumpQuantity q) {
  switch (q) {
    case BumpQuantity::kState: return "D_t X_T";
    case BumpQuantity::kFirstVariation: return "D_t Y_T";
    case BumpQuantity::kInverseVariation: return "D_t Yinv_s";
    case BumpQuantity::kCovariance: return "D_t gamma";
    case BumpQuantity::kInverseDiffusion: return "D_t (Yinv_s sigma_s)";
  }
  return "?";
}

namespace {

BrownianPath aggregate(const BrownianPath& fine, int steps) {
  BrownianPath w = fine;
  w.grid = TimeGrid(fine.grid.horizon(), steps);
  const int d = fine.noise_dim;
  const int ratio = fine.grid.steps() / steps;
  w.increments.assign(static_cast<std::size_t>(steps) * d, 0.0);
  for (int j = 0; j < fine.grid.steps(); ++j)
    for (int l = 0; l < d; ++l) w.dB(j / ratio, l) += fine.dB(j, l);
  return w;
}

double unit_uniform(std::mt19937_64& gen) { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }

struct ProbeSpec {
  double first;
  double second;
  int channel;
};

Mat formula_value(BumpQuantity q, const VariationTrajectory& traj, const MalliavinBundle& b, int i, int s, int l) {
  switch (q) {
    case BumpQuantity::kState: return malliavin_derivative_state(b, i).col(l);
    case BumpQuantity::kFirstVariation: return dt_first_variation(traj, b, i)[l];
    case BumpQuantity::kInverseVariation: return dt_inverse_variation(traj, b, i, s)[l];
    case BumpQuantity::kCovariance: return dt_gamma(traj, b, i)[l];
    case BumpQuantity::kInverseDiffusion: return theta(traj, b, i, s)[l];
  }
  throw std::logic_error("unknown bump quantity");
}

BumpTarget bump_target(BumpQuantity q) {
  switch (q) {
    case BumpQuantity::kState: return BumpTarget::kState;
    case BumpQuantity::kFirstVariation: return BumpTarget::kFirstVariation;
    case BumpQuantity::kInverseVariation: return BumpTarget::kInverseVariation;
    case BumpQuantity::kCovariance: return BumpTarget::kCovariance;
    case BumpQuantity::kInverseDiffusion: return BumpTarget::kInverseDiffusion;
  }
  throw std::logic_error("unknown bump quantity");
}

}  // namespace

double BumpStudy::slope(BumpQuantity q) const {
  const auto qi = static_cast<std::size_t>(q);
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (const auto& lv : levels) {
    if (!(lv.scale[qi] > 0.0) || !(lv.error[qi] > 0.0)) continue;
    const double x = std::log(static_cast<double>(lv.steps));
    const double y = std::log(lv.error[qi]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++n;
  }
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  return -(n * sxy - sx * sy) / (n * sxx - sx * sx);
}

BumpStudy bump_study(const SdeModel& model, const Vec& x0, const std::vector<int>& steps,
                     const BumpStudyOptions& options) {
  if (steps.empty()) throw std::invalid_argument("bump_study: no grid sizes");
  if (options.probes < 1) throw std::invalid_argument("bump_study: need at least one probe");
  const int finest = *std::max_element(steps.begin(), steps.end());
  for (int n : steps)
    if (n < 2 || finest % n != 0) throw std::invalid_argument("bump_study: grid sizes must divide the finest one");
  const TimeGrid fine(options.horizon, finest);
  const int d = model.noise_dim();

  std::mt19937_64 gen(options.seed);
  std::vector<ProbeSpec> specs;
  for (int p = 0; p < options.probes; ++p) {
    const double a = unit_uniform(gen), b = unit_uniform(gen);
    const int l = static_cast<int>(gen() % static_cast<std::uint64_t>(d));
    specs.push_back({std::min(a, b), std::max(a, b), l});
  }

  BumpStudy study;
  for (int n : steps) {
    const TimeGrid grid(options.horizon, n);
    std::array<double, kBumpQuantityCount> num{}, den{};
    BumpLevel level;
    level.steps = n;
    for (int p = 0; p < options.probes; ++p) {
      const BrownianPath w = aggregate(sample_brownian(fine, d, options.seed, static_cast<std::uint64_t>(p)), n);
      const VariationTrajectory traj = simulate_variations(model, x0, grid, w, options.simulation);
      if (!traj.valid) continue;
      const MalliavinBundle bundle = malliavin_covariance(model, traj);
      const int i = std::min(n - 1, static_cast<int>(specs[p].first * n));
      const int s = std::clamp(static_cast<int>(specs[p].second * n), i + 1, n);
      const BumpProbe probe{i, specs[p].channel, s, default_bump(grid)};
      for (int q = 0; q < kBumpQuantityCount; ++q) {
        const auto quantity = static_cast<BumpQuantity>(q);
        Mat bumped;
        try {
          bumped = fd_malliavin(bump_target(quantity), model, x0, grid, w, probe, options.simulation);
        } catch (const OracleRefusal&) {
          continue;
        }
        const Mat exact = formula_value(quantity, traj, bundle, i, s, specs[p].channel);
        const double e2 = (exact - bumped).squaredNorm();
        const double b2 = bumped.squaredNorm();
        num[q] += e2;
        den[q] += b2;
        level.scale[q] = std::max(level.scale[q], bumped.cwiseAbs().maxCoeff());
        level.worst_probe[q] = std::max(level.worst_probe[q], std::sqrt(e2) / std::max(std::sqrt(b2), 1e-6));
      }
    }
    for (int q = 0; q < kBumpQuantityCount; ++q) level.error[q] = std::sqrt(num[q]) / std::max(std::sqrt(den[q]), 1e-6);
    study.levels.push_back(level);
  }
  return study;
}

// ---------------------------------------------------------------------------

bool ValidationReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

namespace {

struct PathCheck {
  bool usable = false;
  bool blow_up = false;
  double covering_error = 0.0;
  double corollary_error = 0.0;
  double inverse_drift = 0.0;
};

CheckResult make_check(const SdeModel& model, std::string name, double value, double tol, std::string detail) {
  return {model.name(), std::move(name), value, tol, value <= tol, std::move(detail)};
}

}  // namespace

ValidationReport validate_model(const SdeModel& model, const Vec& x0, const ValidationConfig& config) {
  if (config.mode == EstimatorMode::kStateIndependent && !model.state_independent_diffusion())
    throw std::invalid_argument("state-independent estimator refused for model '" + model.name() +
                                "': its diffusion depends on the state");
  const TimeGrid grid(config.horizon, config.steps);
  const int m = model.state_dim();
  ValidationReport report;

  {
    const DerivativeReport dr = check_derivatives(model, 100, config.seed);
    auto c = make_check(model, "derivatives", dr.max_rel_error, tolerance::kDerivative,
                        std::to_string(dr.samples) + " points, " + std::to_string(dr.failures.size()) + " failures");
    c.passed = c.passed && dr.ok();
    report.checks.push_back(std::move(c));
  }

  const bool corollary = model.state_independent_diffusion();
  const auto rows = parallel_map(static_cast<std::size_t>(config.n_paths), config.workers, [&](std::size_t p) {
    PathCheck row;
    const BrownianPath w = sample_brownian(grid, model.noise_dim(), config.seed, p);
    const VariationTrajectory traj = simulate_variations(model, x0, grid, w, config.simulation);
    if (!traj.valid) {
      row.blow_up = true;
      return row;
    }
    row.inverse_drift = inverse_drift(traj);
    const MalliavinBundle bundle = malliavin_covariance(model, traj, config.covariance);
    if (bundle.singular) return row;
    row.usable = true;
    for (int i = 0; i < m; ++i)
      for (int k = 0; k < m; ++k)
        row.covering_error =
            std::max(row.covering_error, std::abs(covering_inner_product(bundle, i, k) - (i == k ? 1.0 : 0.0)));
    if (corollary) {
      const auto general = skorokhod_integrals_general(traj, bundle);
      const auto reduced = skorokhod_integrals_state_independent(traj, bundle);
      for (int k = 0; k < m; ++k)
        row.corollary_error = std::max(row.corollary_error, std::abs(general[k].total - reduced[k].total) /
                                                                std::max(1.0, std::abs(general[k].total)));
    }
    return row;
  });

  int usable = 0, blow_ups = 0;
  double cover = 0.0, coro = 0.0, drift = 0.0;
  for (const auto& r : rows) {
    if (r.blow_up) {
      ++blow_ups;
      continue;
    }
    drift = std::max(drift, r.inverse_drift);
    if (!r.usable) continue;
    ++usable;
    cover = std::max(cover, r.covering_error);
    coro = std::max(coro, r.corollary_error);
  }
  const std::string counted = std::to_string(usable) + " paths used, " +
                              std::to_string(config.n_paths - usable) + " excluded (" + std::to_string(blow_ups) +
                              " blow-ups)";
  report.checks.push_back(make_check(model, "covering", cover, tolerance::kCovering, counted));

  {
    DualityOptions dopt;
    dopt.mode = config.mode;
    dopt.workers = config.workers;
    dopt.simulation = config.simulation;
    dopt.covariance = config.covariance;
    dopt.skorokhod = config.skorokhod;
    const DualityReport dual = duality_report(model, x0, grid, config.n_paths, config.seed, dopt);
    std::ostringstream detail;
    detail << std::setprecision(6);
    for (int i = 0; i < m; ++i)
      for (int k = 0; k < m; ++k)
        detail << (i || k ? "; " : "") << "E[X" << i + 1 << " delta" << k + 1 << "] = " << dual.mean(i, k) << " +- "
               << dual.stderr(i, k);
    report.checks.push_back(make_check(model, "duality", dual.max_z_score(), tolerance::kDualityZ, detail.str()));
  }

  {
    BumpStudyOptions bopt;
    bopt.horizon = config.horizon;
    bopt.probes = config.probes;
    bopt.seed = config.seed;
    bopt.simulation = config.simulation;
    const BumpStudy study = bump_study(model, x0, {config.steps}, bopt);
    const auto& level = study.levels.front();
    double worst = 0.0;
    std::ostringstream detail;
    detail << std::setprecision(4);
    for (int q = 0; q < 4; ++q) {
      worst = std::max(worst, level.error[q]);
      detail << (q ? "; " : "") << bump_quantity_name(static_cast<BumpQuantity>(q)) << ' ' << level.error[q];
    }
    report.checks.push_back(make_check(model, "bump", worst, tolerance::kBump, detail.str()));
  }

  if (corollary) report.checks.push_back(make_check(model, "corollary", coro, tolerance::kCorollary, counted));
  report.checks.push_back(make_check(model, "inverse_drift", drift, tolerance::kInverseDrift, counted));
  return report;
}

void write_validation_report(std::ostream& os, const ValidationReport& report) {
  for (const auto& c : report.checks) {
    os << (c.passed ? "PASS " : "FAIL ") << c.model << ' ' << c.check << ": " << std::setprecision(6) << c.value
       << " (tolerance " << c.tolerance << ")";
    if (!c.detail.empty()) os << "  [" << c.detail << ']';
    os << '\n';
  }
}

}  // namespace mscore
