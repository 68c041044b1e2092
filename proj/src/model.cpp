#include "mscore/model.hpp"

#include <cmath>
#include <random>
#include <set>
#include <stdexcept>

namespace mscore {

SdeModel::SdeModel(std::string name, int state_dim, int noise_dim, bool state_independent_diffusion,
                   ParamMap params)
    : name_(std::move(name)),
      m_(state_dim),
      d_(noise_dim),
      state_independent_(state_independent_diffusion),
      params_(std::move(params)) {
  if (m_ < 1 || m_ > kMaxDim || d_ < 1 || d_ > kMaxDim)
    throw std::invalid_argument("model dimensions must lie in [1, " + std::to_string(kMaxDim) + "]");
}

void SdeModel::shape(Coefficients& out) const {
  out.drift = Vec::Zero(m_);
  out.diffusion = Mat::Zero(m_, d_);
  out.drift_jacobian = Mat::Zero(m_, m_);
  out.drift_hessian = Tensor3::Zero(m_);
  for (int l = 0; l < d_; ++l) {
    out.diffusion_jacobian[l] = Mat::Zero(m_, m_);
    out.diffusion_hessian[l] = Tensor3::Zero(m_);
  }
}

// ---------------------------------------------------------------------------

OrnsteinUhlenbeck::OrnsteinUhlenbeck(double theta, double sigma0)
    : SdeModel("ou", 1, 1, true, {{"theta", theta}, {"sigma0", sigma0}}), theta_(theta), sigma0_(sigma0) {}

void OrnsteinUhlenbeck::evaluate_into(double, const Vec& x, Coefficients& out) const {
  shape(out);
  out.drift(0) = -theta_ * x(0);
  out.diffusion(0, 0) = sigma0_;
  out.drift_jacobian(0, 0) = -theta_;
}

std::optional<LinearCoefficients> OrnsteinUhlenbeck::linear_coefficients() const {
  LinearCoefficients lc;
  lc.drift_matrix = Mat::Constant(1, 1, -theta_);
  lc.diffusion_matrix = Mat::Constant(1, 1, sigma0_);
  return lc;
}

BoundedNonlinearDrift::BoundedNonlinearDrift(double k, double a, double sigma0)
    : SdeModel("bounded_drift", 1, 1, true, {{"k", k}, {"a", a}, {"sigma0", sigma0}}),
      k_(k),
      a_(a),
      sigma0_(sigma0) {}

void BoundedNonlinearDrift::evaluate_into(double, const Vec& x, Coefficients& out) const {
  shape(out);
  const double u = x(0) - a_;
  const double q = 1.0 + u * u;
  out.drift(0) = -k_ * u / q;
  out.diffusion(0, 0) = sigma0_;
  out.drift_jacobian(0, 0) = -k_ * (1.0 - u * u) / (q * q);
  out.drift_hessian(0, 0, 0) = k_ * (6.0 * u - 2.0 * u * u * u) / (q * q * q);
}

StateDependentTanh::StateDependentTanh(double theta, double sigma0, double alpha)
    : SdeModel("tanh", 1, 1, false, {{"theta", theta}, {"sigma0", sigma0}, {"alpha", alpha}}),
      theta_(theta),
      sigma0_(sigma0),
      alpha_(alpha) {
  if (!(std::abs(alpha) < 1.0)) throw std::invalid_argument("tanh model requires |alpha| < 1");
}

void StateDependentTanh::evaluate_into(double, const Vec& x, Coefficients& out) const {
  shape(out);
  const double th = std::tanh(x(0));
  const double sech2 = 1.0 - th * th;
  out.drift(0) = -theta_ * x(0);
  out.drift_jacobian(0, 0) = -theta_;
  out.diffusion(0, 0) = sigma0_ * (1.0 + alpha_ * th);
  out.diffusion_jacobian[0](0, 0) = sigma0_ * alpha_ * sech2;
  out.diffusion_hessian[0](0, 0, 0) = -2.0 * sigma0_ * alpha_ * sech2 * th;
}

LinearMultiDim::LinearMultiDim(const Mat& a, const Mat& sigma)
    : SdeModel("linear2d", 2, 2, true,
               {{"a11", a(0, 0)}, {"a12", a(0, 1)}, {"a21", a(1, 0)}, {"a22", a(1, 1)},
                {"s11", sigma(0, 0)}, {"s12", sigma(0, 1)}, {"s21", sigma(1, 0)}, {"s22", sigma(1, 1)}}),
      a_(a),
      sigma_(sigma) {
  if (a.rows() != 2 || a.cols() != 2 || sigma.rows() != 2 || sigma.cols() != 2)
    throw std::invalid_argument("linear2d expects 2x2 drift and diffusion matrices");
}

void LinearMultiDim::evaluate_into(double, const Vec& x, Coefficients& out) const {
  shape(out);
  out.drift = a_ * x;
  out.diffusion = sigma_;
  out.drift_jacobian = a_;
}

std::optional<LinearCoefficients> LinearMultiDim::linear_coefficients() const {
  return LinearCoefficients{a_, sigma_};
}

CallbackModel::CallbackModel(std::string name, int state_dim, int noise_dim, bool state_independent_diffusion,
                             Evaluator evaluator, ParamMap params)
    : SdeModel(std::move(name), state_dim, noise_dim, state_independent_diffusion, std::move(params)),
      evaluator_(std::move(evaluator)) {}

void CallbackModel::evaluate_into(double t, const Vec& x, Coefficients& out) const {
  shape(out);
  evaluator_(t, x, out);
}

// ---------------------------------------------------------------------------

Coefficients evaluate_model(const SdeModel& model, double t, const Vec& x) {
  if (!std::isfinite(t)) throw std::domain_error("evaluate_model: non-finite time");
  if (x.size() != model.state_dim()) throw std::invalid_argument("evaluate_model: state dimension mismatch");
  if (!x.allFinite()) throw std::domain_error("evaluate_model: non-finite state");
  Coefficients c;
  model.evaluate_into(t, x, c);
  return c;
}

Vec divergence_sigma_sigma_T(const SdeModel& model, double t, const Vec& x) {
  const int m = model.state_dim();
  Vec div = Vec::Zero(m);
  if (model.state_independent_diffusion()) return div;
  const Coefficients c = evaluate_model(model, t, x);
  // d_j [sigma sigma^T]_{ij} = sum_l (d_j sigma_{il}) sigma_{jl} + sigma_{il} d_j sigma_{jl}
  for (int l = 0; l < model.noise_dim(); ++l) {
    const Mat& ds = c.diffusion_jacobian[l];  // ds(i, j) = d sigma_{il} / dx_j
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) div(i) += ds(i, j) * c.diffusion(j, l) + c.diffusion(i, l) * ds(j, j);
  }
  return div;
}

namespace {

double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

}  // namespace

DerivativeReport check_derivatives(const SdeModel& model, int sample_count, std::uint64_t seed,
                                   const DerivativeCheckOptions& options) {
  if (sample_count < 1) throw std::invalid_argument("check_derivatives: sample_count must be >= 1");
  const int m = model.state_dim();
  const int d = model.noise_dim();
  const double h = options.step;

  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> tdist(0.0, options.horizon);
  std::uniform_real_distribution<double> xdist(-options.x_scale, options.x_scale);

  DerivativeReport report;
  report.samples = sample_count;

  auto record = [&](const std::string& what, double t, const Vec& x, double err) {
    report.max_rel_error = std::max(report.max_rel_error, err);
    if (err > options.failure_threshold) report.failures.push_back({what, t, x, err});
  };

  Coefficients c, cp, cm;
  for (int s = 0; s < sample_count; ++s) {
    const double t = tdist(gen);
    Vec x(m);
    for (int i = 0; i < m; ++i) x(i) = xdist(gen);
    model.evaluate_into(t, x, c);

    for (int p = 0; p < m; ++p) {
      Vec xp = x, xm = x;
      xp(p) += h;
      xm(p) -= h;
      model.evaluate_into(t, xp, cp);
      model.evaluate_into(t, xm, cm);

      double e_db = 0.0, e_hb = 0.0;
      for (int i = 0; i < m; ++i) {
        e_db = std::max(e_db, rel_err(c.drift_jacobian(i, p), (cp.drift(i) - cm.drift(i)) / (2 * h)));
        for (int q = 0; q < m; ++q)
          e_hb = std::max(e_hb, rel_err(c.drift_hessian(i, q, p),
                                        (cp.drift_jacobian(i, q) - cm.drift_jacobian(i, q)) / (2 * h)));
      }
      record("drift_jacobian", t, x, e_db);
      record("drift_hessian", t, x, e_hb);

      for (int l = 0; l < d; ++l) {
        double e_ds = 0.0, e_hs = 0.0;
        for (int i = 0; i < m; ++i) {
          e_ds = std::max(e_ds, rel_err(c.diffusion_jacobian[l](i, p),
                                        (cp.diffusion(i, l) - cm.diffusion(i, l)) / (2 * h)));
          for (int q = 0; q < m; ++q)
            e_hs = std::max(e_hs, rel_err(c.diffusion_hessian[l](i, q, p),
                                          (cp.diffusion_jacobian[l](i, q) - cm.diffusion_jacobian[l](i, q)) /
                                              (2 * h)));
        }
        const std::string suffix = "[" + std::to_string(l) + "]";
        record("diffusion_jacobian" + suffix, t, x, e_ds);
        record("diffusion_hessian" + suffix, t, x, e_hs);
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------------------

namespace {

double take(const ParamMap& params, std::set<std::string>& used, const std::string& key, double fallback) {
  used.insert(key);
  auto it = params.find(key);
  return it == params.end() ? fallback : it->second;
}

}  // namespace

std::vector<std::string> builtin_model_names() { return {"ou", "bounded_drift", "tanh", "linear2d"}; }

ModelPtr make_builtin_model(const std::string& name, const ParamMap& params) {
  std::set<std::string> used;
  ModelPtr model;
  if (name == "ou") {
    model = std::make_shared<OrnsteinUhlenbeck>(take(params, used, "theta", 1.0), take(params, used, "sigma0", 1.0));
  } else if (name == "bounded_drift") {
    model = std::make_shared<BoundedNonlinearDrift>(take(params, used, "k", 1.0), take(params, used, "a", 0.0),
                                                    take(params, used, "sigma0", 1.0));
  } else if (name == "tanh") {
    model = std::make_shared<StateDependentTanh>(take(params, used, "theta", 1.0), take(params, used, "sigma0", 1.0),
                                                 take(params, used, "alpha", 0.5));
  } else if (name == "linear2d") {
    Mat a(2, 2), s(2, 2);
    a << take(params, used, "a11", -1.0), take(params, used, "a12", 0.3), take(params, used, "a21", -0.2),
        take(params, used, "a22", -0.8);
    s << take(params, used, "s11", 1.0), take(params, used, "s12", 0.0), take(params, used, "s21", 0.4),
        take(params, used, "s22", 0.8);
    model = std::make_shared<LinearMultiDim>(a, s);
  } else {
    throw std::invalid_argument("unknown model '" + name + "'");
  }
  for (const auto& [key, value] : params)
    if (!used.count(key)) throw std::invalid_argument("model '" + name + "' has no parameter '" + key + "'");
  return model;
}

}  // namespace mscore
