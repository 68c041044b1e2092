#pragma once

#include <cmath>
#include <memory>

#include "mscore/model.hpp"
#include "mscore/path_sim.hpp"

namespace mscore::testing {

/// Two-dimensional model with nonlinear drift and state-dependent, two-channel noise.
/// Hits every term of the general representation with m = d = 2.
inline ModelPtr coupled_model() {
  return std::make_shared<CallbackModel>(
      "coupled2d", 2, 2, false, [](double, const Vec& x, Coefficients& c) {
        const double t1 = std::tanh(x(0)), t2 = std::tanh(x(1));
        const double s1 = 1.0 - t1 * t1, s2 = 1.0 - t2 * t2;
        c.drift << -x(0) + 0.5 * t2, -x(1) + 0.3 * std::sin(x(0));
        c.drift_jacobian << -1.0, 0.5 * s2, 0.3 * std::cos(x(0)), -1.0;
        c.drift_hessian(0, 1, 1) = -s2 * t2;
        c.drift_hessian(1, 0, 0) = -0.3 * std::sin(x(0));
        c.diffusion << 1.0 + 0.3 * t1, 0.1 * std::sin(x(1)), 0.2, 0.8 + 0.2 * t2;
        c.diffusion_jacobian[0](0, 0) = 0.3 * s1;
        c.diffusion_jacobian[1](0, 1) = 0.1 * std::cos(x(1));
        c.diffusion_jacobian[1](1, 1) = 0.2 * s2;
        c.diffusion_hessian[0](0, 0, 0) = -0.6 * s1 * t1;
        c.diffusion_hessian[1](0, 1, 1) = -0.1 * std::sin(x(1));
        c.diffusion_hessian[1](1, 1, 1) = -0.4 * s2 * t2;
      });
}

/// dX = -X dt with no noise.
inline ModelPtr zero_noise_model() {
  return std::make_shared<CallbackModel>("decay", 1, 1, true, [](double, const Vec& x, Coefficients& c) {
    c.drift(0) = -x(0);
    c.drift_jacobian(0, 0) = -1.0;
  });
}

/// The same path seen on a grid `steps` long, increments summed over blocks.
inline BrownianPath coarsen(const BrownianPath& fine, int steps) {
  BrownianPath w = fine;
  w.grid = TimeGrid(fine.grid.horizon(), steps);
  const int ratio = fine.grid.steps() / steps;
  w.increments.assign(static_cast<std::size_t>(steps) * fine.noise_dim, 0.0);
  for (int j = 0; j < fine.grid.steps(); ++j)
    for (int l = 0; l < fine.noise_dim; ++l) w.dB(j / ratio, l) += fine.dB(j, l);
  return w;
}

/// Least-squares slope of log(err) against log(n), negated (1 means first order).
template <class Ns, class Errs>
double convergence_order(const Ns& ns, const Errs& errs) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double k = static_cast<double>(ns.size());
  for (std::size_t j = 0; j < ns.size(); ++j) {
    const double x = std::log(static_cast<double>(ns[j])), y = std::log(errs[j]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return -(k * sxy - sx * sy) / (k * sxx - sx * sx);
}

}  // namespace mscore::testing
