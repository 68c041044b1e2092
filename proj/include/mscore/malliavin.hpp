#pragma once

#include <vector>

#include "mscore/linalg.hpp"
#include "mscore/model.hpp"
#include "mscore/path_sim.hpp"

namespace mscore {

inline constexpr double kSingularConditionNumber = 1e8;

struct CovarianceOptions {
  // Adds lambda I with lambda = 1e-10 trace(gamma) / m before inversion.
  bool ridge = false;
};

/// Per-trajectory Malliavin quantities at the trajectory horizon T = t_N.
struct MalliavinBundle {
  int state_dim = 0;
  int noise_dim = 0;
  int steps = 0;
  double dt = 0.0;
  bool state_independent_diffusion = false;

  Mat gamma;       // sum_i D_i X_T (D_i X_T)^T dt, left-point
  Mat gamma_inv;
  Mat y_terminal;  // Y_N
  Mat covering;    // column k is F_k = Y_N^T gamma^{-1} e_k
  double condition_number = 0.0;
  bool singular = false;

  // Per node i = 0..N.
  std::vector<Mat> dx_table;     // D_{t_i} X_T = Y_N Yinv_i sigma_i (m x d)
  std::vector<Mat> yinv_sigma;   // Yinv_i sigma_i (m x d)
  std::vector<Mat> sigma;        // sigma(t_i, X_i)
  std::vector<std::array<Mat, kMaxDim>> sigma_jacobian;  // d_x sigma^l(t_i, X_i)

  Vec covering_vector(int k) const { return covering.col(k); }
};

/// Fills every field of the bundle; never throws on singular gamma (it is flagged instead).
MalliavinBundle malliavin_covariance(const SdeModel& model, const VariationTrajectory& traj,
                                     const CovarianceOptions& options = {});

/// D_{t_i} X_T = Y_N Yinv_i sigma(t_i, X_i), m x d.
Mat malliavin_derivative_state(const MalliavinBundle& bundle, int i);

/// u_{t_i}(x) = x^T Yinv_i sigma(t_i, X_i), a 1 x d row.
RowVec covering_field_frozen(const MalliavinBundle& bundle, const Vec& x, int i);

/// D_{t_i} Y_s for i <= s (per noise channel, m x m); the first-variation lemma at s = N.
ChannelFamily dt_variation_at(const VariationTrajectory& traj, const MalliavinBundle& bundle, int i, int s);

/// D_{t_i} Y_T.
ChannelFamily dt_first_variation(const VariationTrajectory& traj, const MalliavinBundle& bundle, int i);

/// D_{t_i} Y_s^{-1}; exactly zero when i > s.
ChannelFamily dt_inverse_variation(const VariationTrajectory& traj, const MalliavinBundle& bundle, int i, int s);

/// Omega(t_i), assembled term by term as in the score representation.
ChannelFamily omega(const VariationTrajectory& traj, const MalliavinBundle& bundle, int i);

/// Theta(t_i, s): entry [l] is m x d, column l' = D^l_{t_i} (Y_s^{-1} sigma^{l'}(s, X_s)).
/// Requires i <= s (std::invalid_argument otherwise).
ChannelFamily theta(const VariationTrajectory& traj, const MalliavinBundle& bundle, int i, int s);

/// D_{t_i} gamma split into the s < i and s >= i halves of the quadrature.
struct GammaDerivative {
  ChannelFamily before;  // integrands I1 + I2
  ChannelFamily after;   // integrands I3 + I4
  ChannelFamily total() const;
};

/// Direct O(N) evaluation per node from omega() and theta().
GammaDerivative dt_gamma_split(const VariationTrajectory& traj, const MalliavinBundle& bundle, int i);
ChannelFamily dt_gamma(const VariationTrajectory& traj, const MalliavinBundle& bundle, int i);

struct SkorokhodBreakdown {
  int k = 0;
  double ito_term = 0.0;
  double a_term = 0.0;
  double b_term = 0.0;
  double c_term = 0.0;
  double total = 0.0;  // ito - A + B + C
};

struct SkorokhodOptions {
  // Negative-control hook: negates the B term. Never set outside validation fixtures.
  bool flip_b_term = false;
};

/// delta(u_k) for every k via the general representation (state-dependent diffusion allowed).
/// Throws std::domain_error if the bundle is flagged singular.
std::vector<SkorokhodBreakdown> skorokhod_integrals_general(const VariationTrajectory& traj,
                                                            const MalliavinBundle& bundle,
                                                            const SkorokhodOptions& options = {});

/// delta(u_k) via the simplified representation for sigma = sigma(t).
/// Throws std::invalid_argument for state-dependent models.
std::vector<SkorokhodBreakdown> skorokhod_integrals_state_independent(const VariationTrajectory& traj,
                                                                      const MalliavinBundle& bundle,
                                                                      const SkorokhodOptions& options = {});

SkorokhodBreakdown skorokhod_integral_general(const VariationTrajectory& traj, const MalliavinBundle& bundle, int k,
                                              const SkorokhodOptions& options = {});
SkorokhodBreakdown skorokhod_integral_state_independent(const VariationTrajectory& traj,
                                                        const MalliavinBundle& bundle, int k,
                                                        const SkorokhodOptions& options = {});

enum class EstimatorMode { kAuto, kGeneral, kStateIndependent };

/// Dispatches on mode; kAuto picks the state-independent form iff the model allows it.
std::vector<SkorokhodBreakdown> skorokhod_integrals(const VariationTrajectory& traj, const MalliavinBundle& bundle,
                                                    EstimatorMode mode, const SkorokhodOptions& options = {});

/// Left-point quadrature of <D X_T^{i_comp}, u_k>_H.
double covering_inner_product(const MalliavinBundle& bundle, int i_comp, int k);

}  // namespace mscore
