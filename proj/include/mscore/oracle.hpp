#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <vector>

#include "mscore/linalg.hpp"
#include "mscore/malliavin.hpp"
#include "mscore/model.hpp"
#include "mscore/path_sim.hpp"

namespace mscore {

/// Raised when an oracle cannot produce a trustworthy value for a sample.
class OracleRefusal : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class BumpTarget {
  kState,             // X_T (m x 1)
  kFirstVariation,    // Y_T (m x m)
  kInverseVariation,  // Yinv_s (m x m)
  kInverseDiffusion,  // Yinv_s sigma(s, X_s) (m x d)
  kCovariance,        // gamma (m x m)
};

struct BumpProbe {
  int node = 0;      // perturbed increment i
  int channel = 0;   // noise channel l
  int observe = 0;   // s, for the Yinv targets
  double eps = 1e-6;
};

/// Central difference in dB(i, l) of the target, re-simulating everything else on identical increments.
Mat fd_malliavin(BumpTarget target, const SdeModel& model, const Vec& x0, const TimeGrid& grid,
                 const BrownianPath& w, const BumpProbe& probe, const SimulationOptions& sim = {});

/// Default bump size 1e-4 sqrt(dt).
double default_bump(const TimeGrid& grid);

struct KdeScore {
  Vec score;
  Vec stderr;
  double density = 0.0;
  bool reliable = false;
};

/// grad_y log of a Gaussian product-kernel density estimate with bandwidth h per dimension.
KdeScore kde_score(const std::vector<Vec>& samples, const Vec& y, const std::vector<double>& h);

struct FokkerPlanckMesh {
  double lo = -5.0;
  double hi = 5.0;
  int cells = 2000;
};

struct FokkerPlanckSolution {
  std::vector<double> x;                      // cell centres
  std::vector<double> times;                  // snapshot times
  std::vector<std::vector<double>> density;   // density[snapshot][cell]
  double min_raw_density = 0.0;               // most negative value before clipping
  double max_mass_error = 0.0;

  double dx() const { return x.size() > 1 ? x[1] - x[0] : 0.0; }
  const std::vector<double>& terminal() const { return density.back(); }
  /// d/dx log p at cell j of a snapshot (central differences); NaN where p underflows.
  double score(std::size_t snapshot, std::size_t j) const;
  /// Linear interpolation of the terminal score at y.
  double terminal_score(double y) const;
  double terminal_density(double y) const;
};

struct FokkerPlanckOptions {
  int snapshot_every = 0;       // 0: initial and terminal only
  int implicit_startup = 4;     // half-size implicit Euler steps replacing the first two CN steps
  double mass_tolerance = 1e-3;
};

/// Crank-Nicolson for dp/dt = -d/dx(b p) + 1/2 d2/dx2(sigma^2 p), zero-flux boundaries,
/// started from a one-cell-wide Gaussian at x0. Scalar models only.
FokkerPlanckSolution fokker_planck_1d(const SdeModel& model, double x0, double horizon, const FokkerPlanckMesh& mesh,
                                      int n_time, const FokkerPlanckOptions& options = {});

void write_fokker_planck_csv(std::ostream& os, const FokkerPlanckSolution& sol);

struct DualityOptions {
  EstimatorMode mode = EstimatorMode::kAuto;
  int workers = 1;
  SimulationOptions simulation;
  CovarianceOptions covariance;
  SkorokhodOptions skorokhod;
};

/// Monte Carlo estimate of E[X_T^i delta(u_k)] (expected: Kronecker delta).
struct DualityReport {
  Mat mean;    // (i, k)
  Mat stderr;
  int used = 0;
  int excluded = 0;

  /// max over (i, k) of |mean - delta_ik| / stderr.
  double max_z_score() const;
};

DualityReport duality_report(const SdeModel& model, const Vec& x0, const TimeGrid& grid, int n_paths,
                             std::uint64_t seed, const DualityOptions& options = {});

}  // namespace mscore
