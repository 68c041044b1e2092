#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mscore/linalg.hpp"

namespace mscore {

/// Everything the variation processes need from the coefficients at one (t, x).
/// Hessian layout is [i][p][q] = d^2 f^i / dx_p dx_q.
struct Coefficients {
  Vec drift;                                    // b, m
  Mat diffusion;                                // sigma, m x d
  Mat drift_jacobian;                           // d_x b, m x m
  std::array<Mat, kMaxDim> diffusion_jacobian;  // d_x sigma^l (column l), m x m each
  Tensor3 drift_hessian;
  std::array<Tensor3, kMaxDim> diffusion_hessian;
};

using ParamMap = std::map<std::string, double>;

/// Drift/diffusion pair of a linear SDE dX = A X dt + S dB.
struct LinearCoefficients {
  Mat drift_matrix;
  Mat diffusion_matrix;
};

class SdeModel {
 public:
  SdeModel(std::string name, int state_dim, int noise_dim, bool state_independent_diffusion, ParamMap params);
  virtual ~SdeModel() = default;

  const std::string& name() const { return name_; }
  int state_dim() const { return m_; }
  int noise_dim() const { return d_; }
  bool state_independent_diffusion() const { return state_independent_; }
  const ParamMap& params() const { return params_; }

  /// Unchecked evaluation into a caller-owned record (hot path).
  virtual void evaluate_into(double t, const Vec& x, Coefficients& out) const = 0;

  /// Present only for models whose coefficients are affine with constant diffusion.
  virtual std::optional<LinearCoefficients> linear_coefficients() const { return std::nullopt; }

 protected:
  void shape(Coefficients& out) const;

 private:
  std::string name_;
  int m_;
  int d_;
  bool state_independent_;
  ParamMap params_;
};

using ModelPtr = std::shared_ptr<const SdeModel>;

/// dX = -theta X dt + sigma0 dB.
class OrnsteinUhlenbeck final : public SdeModel {
 public:
  OrnsteinUhlenbeck(double theta, double sigma0);
  void evaluate_into(double t, const Vec& x, Coefficients& out) const override;
  std::optional<LinearCoefficients> linear_coefficients() const override;

 private:
  double theta_, sigma0_;
};

/// b(x) = -k (x - a) / (1 + (x - a)^2), constant sigma0.
class BoundedNonlinearDrift final : public SdeModel {
 public:
  BoundedNonlinearDrift(double k, double a, double sigma0);
  void evaluate_into(double t, const Vec& x, Coefficients& out) const override;

 private:
  double k_, a_, sigma0_;
};

/// b(x) = -theta x, sigma(x) = sigma0 (1 + alpha tanh x), |alpha| < 1.
class StateDependentTanh final : public SdeModel {
 public:
  StateDependentTanh(double theta, double sigma0, double alpha);
  void evaluate_into(double t, const Vec& x, Coefficients& out) const override;

 private:
  double theta_, sigma0_, alpha_;
};

/// dX = A X dt + Sigma dB in two dimensions with two noise channels.
class LinearMultiDim final : public SdeModel {
 public:
  LinearMultiDim(const Mat& a, const Mat& sigma);
  void evaluate_into(double t, const Vec& x, Coefficients& out) const override;
  std::optional<LinearCoefficients> linear_coefficients() const override;

 private:
  Mat a_, sigma_;
};

/// User-supplied coefficients; derivatives are the caller's responsibility
/// (check_derivatives validates them).
class CallbackModel final : public SdeModel {
 public:
  using Evaluator = std::function<void(double, const Vec&, Coefficients&)>;
  CallbackModel(std::string name, int state_dim, int noise_dim, bool state_independent_diffusion,
                Evaluator evaluator, ParamMap params = {});
  void evaluate_into(double t, const Vec& x, Coefficients& out) const override;

 private:
  Evaluator evaluator_;
};

/// Validated evaluation; throws std::domain_error on non-finite t or x.
Coefficients evaluate_model(const SdeModel& model, double t, const Vec& x);

/// Component i is sum_j d/dx_j [sigma sigma^T]_{ij}.
Vec divergence_sigma_sigma_T(const SdeModel& model, double t, const Vec& x);

struct DerivativeCheckEntry {
  std::string quantity;  // "drift_jacobian", "diffusion_jacobian[l]", "drift_hessian", ...
  double t;
  Vec x;
  double rel_error;
};

struct DerivativeReport {
  int samples = 0;
  double max_rel_error = 0.0;
  std::vector<DerivativeCheckEntry> failures;  // entries above the failure threshold
  bool ok() const { return failures.empty(); }
};

struct DerivativeCheckOptions {
  double step = 1e-5;
  double failure_threshold = 1e-4;
  double horizon = 1.0;
  double x_scale = 2.0;  // x sampled uniformly in [-x_scale, x_scale]^m
};

/// Compares analytic Jacobians/Hessians with central differences of the lower-order evaluators.
DerivativeReport check_derivatives(const SdeModel& model, int sample_count, std::uint64_t seed,
                                   const DerivativeCheckOptions& options = {});

/// Builtin selection by name: "ou", "bounded_drift", "tanh", "linear2d".
/// Missing parameters take documented defaults; unknown names or keys throw std::invalid_argument.
ModelPtr make_builtin_model(const std::string& name, const ParamMap& params);
std::vector<std::string> builtin_model_names();

}  // namespace mscore
