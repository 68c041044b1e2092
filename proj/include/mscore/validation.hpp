#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mscore/malliavin.hpp"
#include "mscore/model.hpp"
#include "mscore/path_sim.hpp"

namespace mscore {

// ---------------------------------------------------------------------------
// Bump-oracle study: formula-based Malliavin derivatives against central
// differences in one Brownian increment, on a ladder of grid sizes.

enum class BumpQuantity { kState, kFirstVariation, kInverseVariation, kCovariance, kInverseDiffusion };
inline constexpr int kBumpQuantityCount = 5;

const char* bump_quantity_name(BumpQuantity q);

struct BumpLevel {
  int steps = 0;
  // ||formula - bump|| / max(||bump||, 1e-6), norms stacked over all probes.
  std::array<double, kBumpQuantityCount> error{};
  // Same ratio for the single worst probe (ill-conditioned when a quantity nearly vanishes).
  std::array<double, kBumpQuantityCount> worst_probe{};
  // Largest |bump| seen; zero means both routes vanish identically.
  std::array<double, kBumpQuantityCount> scale{};
};

struct BumpStudy {
  std::vector<BumpLevel> levels;
  /// -d log(error) / d log(N) by least squares; NaN when the quantity vanishes on every level.
  double slope(BumpQuantity q) const;
};

struct BumpStudyOptions {
  double horizon = 1.0;
  int probes = 20;
  std::uint64_t seed = 0;
  SimulationOptions simulation;
};

/// Each probe draws one Brownian path on the finest grid and fixed fractional times (t_i, s);
/// coarser grids see the aggregated increments of the same path, so every level probes the
/// same realisation. Every entry of `steps` must divide the largest one.
BumpStudy bump_study(const SdeModel& model, const Vec& x0, const std::vector<int>& steps,
                     const BumpStudyOptions& options = {});

// ---------------------------------------------------------------------------
// Full oracle suite for one model.

struct CheckResult {
  std::string model;
  std::string check;
  double value = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string detail;
};

struct ValidationReport {
  std::vector<CheckResult> checks;
  bool passed() const;
};

struct ValidationConfig {
  double horizon = 1.0;
  int steps = 256;
  int n_paths = 10000;
  int probes = 20;
  std::uint64_t seed = 1;
  int workers = 1;
  EstimatorMode mode = EstimatorMode::kAuto;
  SimulationOptions simulation;
  CovarianceOptions covariance;
  SkorokhodOptions skorokhod;
};

namespace tolerance {
inline constexpr double kDerivative = 1e-5;
inline constexpr double kCovering = 1e-10;
inline constexpr double kDualityZ = 3.0;
inline constexpr double kBump = 5e-2;
inline constexpr double kCorollary = 1e-12;
inline constexpr double kInverseDrift = 0.05;
}  // namespace tolerance

/// Runs derivative, covering, duality, bump, corollary (state-independent models only) and Y Yinv
/// drift checks. Requesting the state-independent estimator on a state-dependent model throws
/// std::invalid_argument.
ValidationReport validate_model(const SdeModel& model, const Vec& x0, const ValidationConfig& config);

void write_validation_report(std::ostream& os, const ValidationReport& report);

}  // namespace mscore
