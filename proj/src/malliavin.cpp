#include "mscore/malliavin.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace mscore {

MalliavinBundle malliavin_covariance(const SdeModel& model, const VariationTrajectory& traj,
                                     const CovarianceOptions& options) {
  const int m = model.state_dim();
  const int d = model.noise_dim();
  const int n = traj.steps();
  const double dt = traj.grid.dt();

  MalliavinBundle b;
  b.state_dim = m;
  b.noise_dim = d;
  b.steps = n;
  b.dt = dt;
  b.state_independent_diffusion = model.state_independent_diffusion();
  b.y_terminal = traj.terminal().y;
  b.dx_table.resize(n + 1);
  b.yinv_sigma.resize(n + 1);
  b.sigma.resize(n + 1);
  b.sigma_jacobian.resize(n + 1);

  Coefficients c;
  b.gamma = Mat::Zero(m, m);
  for (int i = 0; i <= n; ++i) {
    model.evaluate_into(traj.grid.time(i), traj[i].x, c);
    b.sigma[i] = c.diffusion;
    for (int l = 0; l < d; ++l) b.sigma_jacobian[i][l] = c.diffusion_jacobian[l];
    b.yinv_sigma[i] = traj[i].y_inv * c.diffusion;
    b.dx_table[i] = b.y_terminal * b.yinv_sigma[i];
    if (i < n) b.gamma.noalias() += b.dx_table[i] * b.dx_table[i].transpose() * dt;
  }
  b.gamma = 0.5 * (b.gamma + b.gamma.transpose()).eval();

  Mat to_invert = b.gamma;
  if (options.ridge) to_invert += Mat::Identity(m, m) * (1e-10 * b.gamma.trace() / m);

  const Eigen::SelfAdjointEigenSolver<Mat> eig(to_invert, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  b.condition_number = (lo > 0.0 && std::isfinite(hi)) ? hi / lo : std::numeric_limits<double>::infinity();
  b.singular = !traj.valid || !(b.condition_number < kSingularConditionNumber);

  if (b.singular) {
    b.gamma_inv = Mat::Constant(m, m, std::numeric_limits<double>::quiet_NaN());
  } else {
    b.gamma_inv = to_invert.ldlt().solve(Mat::Identity(m, m));
  }
  b.covering = b.y_terminal.transpose() * b.gamma_inv;
  return b;
}

Mat malliavin_derivative_state(const MalliavinBundle& bundle, int i) {
  if (i < 0 || i > bundle.steps) throw std::out_of_range("malliavin_derivative_state: node out of range");
  return bundle.dx_table[i];
}

RowVec covering_field_frozen(const MalliavinBundle& bundle, const Vec& x, int i) {
  if (i < 0 || i > bundle.steps) throw std::out_of_range("covering_field_frozen: node out of range");
  return x.transpose() * bundle.yinv_sigma[i];
}

namespace {

void check_node(const MalliavinBundle& b, int i, const char* who) {
  if (i < 0 || i > b.steps) throw std::out_of_range(std::string(who) + ": node out of range");
}

ChannelFamily zero_family(int channels, int rows, int cols) {
  ChannelFamily f;
  f.channels = channels;
  for (int l = 0; l < channels; ++l) f[l] = Mat::Zero(rows, cols);
  return f;
}

}  // namespace

ChannelFamily dt_variation_at(const VariationTrajectory& traj, const MalliavinBundle& bundle, int i, int s) {
  check_node(bundle, i, "dt_variation_at");
  check_node(bundle, s, "dt_variation_at");
  const int m = bundle.state_dim;
  if (i > s) return zero_family(bundle.noise_dim, m, m);
  const auto& at_i = traj[i];
  const auto& at_s = traj[s];
  ChannelFamily out;
  out.channels = bundle.noise_dim;
  for (int l = 0; l < bundle.noise_dim; ++l) {
    const Vec v = bundle.yinv_sigma[i].col(l);
    const Mat flow = at_s.y * at_i.y_inv;  // Y_s Y_{t_i}^{-1}
    out[l] = contract_last(at_s.z, v) - flow * contract_last(at_i.z, v) +
             flow * bundle.sigma_jacobian[i][l] * at_i.y;
  }
  return out;
}

ChannelFamily dt_first_variation(const VariationTrajectory& traj, const MalliavinBundle& bundle, int i) {
  return dt_variation_at(traj, bundle, i, bundle.steps);
}

ChannelFamily dt_inverse_variation(const VariationTrajectory& traj, const MalliavinBundle& bundle, int i, int s) {
  check_node(bundle, i, "dt_inverse_variation");
  check_node(bundle, s, "dt_inverse_variation");
  const int m = bundle.state_dim;
  if (i > s) return zero_family(bundle.noise_dim, m, m);
  ChannelFamily out = dt_variation_at(traj, bundle, i, s);
  const Mat& yinv_s = traj[s].y_inv;
  for (int l = 0; l < out.channels; ++l) out[l] = -yinv_s * out[l] * yinv_s;
  return out;
}

ChannelFamily omega(const VariationTrajectory& traj, const MalliavinBundle& bundle, int i) {
  check_node(bundle, i, "omega");
  const auto& at_i = traj[i];
  const auto& at_t = traj.terminal();
  const Mat& y_t = bundle.y_terminal;
  ChannelFamily out;
  out.channels = bundle.noise_dim;
  for (int l = 0; l < bundle.noise_dim; ++l) {
    const Vec dir = at_i.y_inv * bundle.sigma[i].col(l);  // Y_t^{-1} sigma^l(t, X_t)
    out[l] = contract_last(at_t.z, dir) - y_t * at_i.y_inv * contract_last(at_i.z, dir) +
             y_t * at_i.y_inv * bundle.sigma_jacobian[i][l] * at_i.y;
  }
  return out;
}

ChannelFamily theta(const VariationTrajectory& traj, const MalliavinBundle& bundle, int i, int s) {
  check_node(bundle, i, "theta");
  check_node(bundle, s, "theta");
  if (i > s) throw std::invalid_argument("theta: requires t_i <= s");
  const auto& at_i = traj[i];
  const auto& at_s = traj[s];
  const int d = bundle.noise_dim;
  ChannelFamily out;
  out.channels = d;
  for (int l = 0; l < d; ++l) {
    const Vec dir = at_i.y_inv * bundle.sigma[i].col(l);
    const Mat bracket = contract_last(at_s.z, dir) - at_s.y * at_i.y_inv * contract_last(at_i.z, dir) +
                        at_s.y * at_i.y_inv * bundle.sigma_jacobian[i][l] * at_i.y;
    const Vec moved = at_s.y * dir;  // Y_s Y_t^{-1} sigma^l(t, X_t) = D^l_t X_s
    out[l] = -at_s.y_inv * bracket * at_s.y_inv * bundle.sigma[s];
    for (int lp = 0; lp < d; ++lp) out[l].col(lp) += at_s.y_inv * bundle.sigma_jacobian[s][lp] * moved;
  }
  return out;
}

ChannelFamily GammaDerivative::total() const {
  ChannelFamily t = before;
  for (int l = 0; l < t.channels; ++l) t[l] += after[l];
  return t;
}

GammaDerivative dt_gamma_split(const VariationTrajectory& traj, const MalliavinBundle& bundle, int i) {
  check_node(bundle, i, "dt_gamma");
  const int m = bundle.state_dim;
  const int d = bundle.noise_dim;
  const Mat& y_t = bundle.y_terminal;
  const ChannelFamily om = omega(traj, bundle, i);
  GammaDerivative g{zero_family(d, m, m), zero_family(d, m, m)};
  for (int s = 0; s < bundle.steps; ++s) {
    const Mat& w_s = bundle.dx_table[s];
    const ChannelFamily th = s >= i ? theta(traj, bundle, i, s) : ChannelFamily{};
    for (int l = 0; l < d; ++l) {
      Mat pert = om[l] * bundle.yinv_sigma[s];  // D^l_t W_s, m x d
      if (s >= i) pert += y_t * th[l];
      const Mat half = pert * w_s.transpose() * bundle.dt;
      (s < i ? g.before[l] : g.after[l]) += half + half.transpose();
    }
  }
  return g;
}

ChannelFamily dt_gamma(const VariationTrajectory& traj, const MalliavinBundle& bundle, int i) {
  return dt_gamma_split(traj, bundle, i).total();
}

// ---------------------------------------------------------------------------
// Skorokhod integral. The double-time integrals in B and C are evaluated in
// O(N) per path: with the outer node i fixed, every s-dependence of the Theta
// terms factors into suffix sums over s >= i, and the Omega terms into prefix /
// suffix sums of N_s = Yinv_s sigma_s W_s^T.

namespace {

struct SuffixSums {
  std::array<Mat, kMaxDim> zeta;                          // sum Yinv_s Z_s^{(q)} N_s dt
  std::array<std::array<Mat, kMaxDim>, kMaxDim> flow;     // sum (Yinv_s Y_s) e_a e_b^T N_s dt
  std::array<Mat, kMaxDim> noise;                         // sum_l' Yinv_s dsigma^{l'}_s Y_s e_c (W^{l'}_s)^T dt
  Mat outer;                                              // sum N_s dt over s >= i
};

std::vector<SkorokhodBreakdown> skorokhod_impl(const VariationTrajectory& traj, const MalliavinBundle& bundle,
                                               bool with_noise_jacobian, const SkorokhodOptions& options) {
  if (bundle.singular)
    throw std::domain_error("skorokhod integral: Malliavin covariance flagged singular (condition number " +
                            std::to_string(bundle.condition_number) + ")");
  const int m = bundle.state_dim;
  const int d = bundle.noise_dim;
  const int n = bundle.steps;
  const double dt = bundle.dt;
  const Mat& y_t = bundle.y_terminal;
  const Mat& g = bundle.gamma_inv;
  const Tensor3& z_t = traj.terminal().z;

  // Ito term of the frozen field: xi = sum_i Yinv_i sigma_i dB_i, then contract with F_k.
  Vec xi = Vec::Zero(m);
  std::vector<Mat> outer(n);  // N_s
  Mat outer_total = Mat::Zero(m, m);
  for (int s = 0; s < n; ++s) {
    xi.noalias() += bundle.yinv_sigma[s] * traj.path.step(s);
    outer[s] = bundle.yinv_sigma[s] * bundle.dx_table[s].transpose();
    outer_total.noalias() += outer[s] * dt;
  }

  SuffixSums suf;
  suf.outer = Mat::Zero(m, m);
  for (int q = 0; q < m; ++q) {
    suf.zeta[q] = Mat::Zero(m, m);
    suf.noise[q] = Mat::Zero(m, m);
    for (int b = 0; b < m; ++b) suf.flow[q][b] = Mat::Zero(m, m);
  }

  RowVec a_acc = RowVec::Zero(m), b_acc = RowVec::Zero(m), c_acc = RowVec::Zero(m);

  for (int i = n - 1; i >= 0; --i) {
    const auto& at_i = traj[i];
    // Fold node s = i into the suffix sums (boundary node belongs to the s >= t branch).
    {
      const Mat& ns = outer[i];
      for (int q = 0; q < m; ++q) suf.zeta[q].noalias() += at_i.y_inv * last_index_slice(at_i.z, q) * ns * dt;
      const Mat flow = at_i.y_inv * at_i.y;
      for (int a = 0; a < m; ++a)
        for (int b = 0; b < m; ++b) suf.flow[a][b].noalias() += flow.col(a) * ns.row(b) * dt;
      if (with_noise_jacobian) {
        for (int lp = 0; lp < d; ++lp) {
          const Mat rot = at_i.y_inv * bundle.sigma_jacobian[i][lp] * at_i.y;
          for (int c = 0; c < m; ++c)
            suf.noise[c].noalias() += rot.col(c) * bundle.dx_table[i].col(lp).transpose() * dt;
        }
      }
      suf.outer += ns * dt;
    }
    const Mat before = outer_total - suf.outer;  // sum over s < i

    const Mat flow_t = y_t * at_i.y_inv;  // Y_T Y_t^{-1}
    for (int l = 0; l < d; ++l) {
      const Vec v = bundle.yinv_sigma[i].col(l);
      const Mat zv_i = contract_last(at_i.z, v);
      Mat om = contract_last(z_t, v) - flow_t * zv_i;
      Mat p = -at_i.y_inv * zv_i;  // D^l_t Y_s = Z_s o v + Y_s P
      if (with_noise_jacobian) {
        const Mat local = bundle.sigma_jacobian[i][l] * at_i.y;
        om += flow_t * local;
        p += at_i.y_inv * local;
      }

      // sum_s Theta(t_i, s) W_s^T dt over s >= i
      Mat theta_sum = Mat::Zero(m, m);
      for (int q = 0; q < m; ++q) theta_sum -= v(q) * suf.zeta[q];
      for (int a = 0; a < m; ++a)
        for (int b = 0; b < m; ++b)
          if (p(a, b) != 0.0) theta_sum -= p(a, b) * suf.flow[a][b];
      if (with_noise_jacobian)
        for (int c = 0; c < m; ++c) theta_sum += v(c) * suf.noise[c];

      Mat db = om * before;
      db += db.transpose().eval();
      Mat dc = om * suf.outer + y_t * theta_sum;
      dc += dc.transpose().eval();

      const Vec w = bundle.dx_table[i].col(l);  // Y_T Yinv_i sigma^l_i
      const RowVec wg = w.transpose() * g;
      a_acc.noalias() += (om * v).transpose() * g * dt;
      b_acc.noalias() += wg * db * g * dt;
      c_acc.noalias() += wg * dc * g * dt;
    }
  }

  std::vector<SkorokhodBreakdown> out(m);
  for (int k = 0; k < m; ++k) {
    SkorokhodBreakdown& r = out[k];
    r.k = k;
    r.ito_term = bundle.covering.col(k).dot(xi);
    r.a_term = a_acc(k);
    r.b_term = options.flip_b_term ? -b_acc(k) : b_acc(k);
    r.c_term = c_acc(k);
    r.total = r.ito_term - r.a_term + r.b_term + r.c_term;
  }
  return out;
}

}  // namespace

std::vector<SkorokhodBreakdown> skorokhod_integrals_general(const VariationTrajectory& traj,
                                                            const MalliavinBundle& bundle,
                                                            const SkorokhodOptions& options) {
  return skorokhod_impl(traj, bundle, true, options);
}

std::vector<SkorokhodBreakdown> skorokhod_integrals_state_independent(const VariationTrajectory& traj,
                                                                      const MalliavinBundle& bundle,
                                                                      const SkorokhodOptions& options) {
  if (!bundle.state_independent_diffusion)
    throw std::invalid_argument("state-independent Skorokhod form requested for a state-dependent diffusion");
  return skorokhod_impl(traj, bundle, false, options);
}

SkorokhodBreakdown skorokhod_integral_general(const VariationTrajectory& traj, const MalliavinBundle& bundle, int k,
                                              const SkorokhodOptions& options) {
  if (k < 0 || k >= bundle.state_dim) throw std::out_of_range("skorokhod_integral_general: component out of range");
  return skorokhod_integrals_general(traj, bundle, options)[k];
}

SkorokhodBreakdown skorokhod_integral_state_independent(const VariationTrajectory& traj,
                                                        const MalliavinBundle& bundle, int k,
                                                        const SkorokhodOptions& options) {
  if (k < 0 || k >= bundle.state_dim)
    throw std::out_of_range("skorokhod_integral_state_independent: component out of range");
  return skorokhod_integrals_state_independent(traj, bundle, options)[k];
}

std::vector<SkorokhodBreakdown> skorokhod_integrals(const VariationTrajectory& traj, const MalliavinBundle& bundle,
                                                    EstimatorMode mode, const SkorokhodOptions& options) {
  switch (mode) {
    case EstimatorMode::kGeneral:
      return skorokhod_integrals_general(traj, bundle, options);
    case EstimatorMode::kStateIndependent:
      return skorokhod_integrals_state_independent(traj, bundle, options);
    case EstimatorMode::kAuto:
      break;
  }
  return bundle.state_independent_diffusion ? skorokhod_integrals_state_independent(traj, bundle, options)
                                            : skorokhod_integrals_general(traj, bundle, options);
}

double covering_inner_product(const MalliavinBundle& bundle, int i_comp, int k) {
  if (bundle.singular) throw std::domain_error("covering_inner_product: singular Malliavin covariance");
  if (i_comp < 0 || i_comp >= bundle.state_dim || k < 0 || k >= bundle.state_dim)
    throw std::out_of_range("covering_inner_product: component out of range");
  const Vec f = bundle.covering.col(k);
  double acc = 0.0;
  for (int i = 0; i < bundle.steps; ++i) {
    const RowVec u = f.transpose() * bundle.yinv_sigma[i];
    acc += bundle.dx_table[i].row(i_comp).dot(u) * bundle.dt;
  }
  return acc;
}

}  // namespace mscore
