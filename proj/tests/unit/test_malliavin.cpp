#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "mscore/malliavin.hpp"
#include "mscore/oracle.hpp"
#include "mscore/validation.hpp"

using namespace mscore;

namespace {

struct Run {
  ModelPtr model;
  VariationTrajectory traj;
  MalliavinBundle bundle;
};

Run run(const ModelPtr& model, int steps, std::uint64_t path, std::uint64_t seed = 3, double horizon = 1.0) {
  const TimeGrid g(horizon, steps);
  Run r{model, simulate_variations(*model, Vec::Zero(model->state_dim()), g,
                                   sample_brownian(g, model->noise_dim(), seed, path)),
        {}};
  r.bundle = malliavin_covariance(*model, r.traj);
  return r;
}

// (Z o v)(a, p) = sum_q Z(a, p, q) v_q, written out independently of the library helpers.
Mat contract(const Tensor3& z, const Vec& v) {
  const int m = z.dim;
  Mat out = Mat::Zero(m, m);
  for (int a = 0; a < m; ++a)
    for (int p = 0; p < m; ++p)
      for (int q = 0; q < m; ++q) out(a, p) += z(a, p, q) * v(q);
  return out;
}

// delta(u_k) assembled term by term: Ito sum of the frozen field, A from Omega,
// B/C from the two halves of the naive D_t gamma quadrature.
std::vector<SkorokhodBreakdown> naive_skorokhod(const VariationTrajectory& traj, const MalliavinBundle& b) {
  const int m = b.state_dim, d = b.noise_dim;
  std::vector<SkorokhodBreakdown> out(m);
  for (int k = 0; k < m; ++k) {
    const Vec f = b.covering.col(k);
    const Vec ek = Vec::Unit(m, k);
    auto& r = out[k];
    r.k = k;
    for (int i = 0; i < b.steps; ++i) {
      const RowVec u = covering_field_frozen(b, f, i);
      for (int l = 0; l < d; ++l) r.ito_term += u(l) * traj.path.dB(i, l);
      const ChannelFamily om = omega(traj, b, i);
      const GammaDerivative dg = dt_gamma_split(traj, b, i);
      for (int l = 0; l < d; ++l) {
        const Vec v = b.yinv_sigma[i].col(l);
        const Vec w = b.dx_table[i].col(l);
        r.a_term += (om[l] * v).dot(b.gamma_inv * ek) * b.dt;
        r.b_term += w.dot(b.gamma_inv * dg.before[l] * b.gamma_inv * ek) * b.dt;
        r.c_term += w.dot(b.gamma_inv * dg.after[l] * b.gamma_inv * ek) * b.dt;
      }
    }
    r.total = r.ito_term - r.a_term + r.b_term + r.c_term;
  }
  return out;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace

TEST_CASE("D_t X_T for OU") {
  const double theta = 1.0;
  const auto r = run(make_builtin_model("ou", {{"theta", theta}, {"sigma0", 1.0}}), 256, 0);
  const double dt = r.bundle.dt;
  const Mat d = malliavin_derivative_state(r.bundle, 128);
  REQUIRE(d.rows() == 1);
  REQUIRE(d.cols() == 1);
  // Euler products: Y_N = (1 - theta dt)^N, Yinv_i = (1 + theta dt)^i.
  CHECK(d(0, 0) == doctest::Approx(std::pow(1.0 - theta * dt, 256) * std::pow(1.0 + theta * dt, 128)).epsilon(1e-13));
  CHECK(std::abs(d(0, 0) - std::exp(-0.5)) < 5e-3);

  // i = N: sigma(T, X_T) up to the Y Yinv drift
  const Mat last = malliavin_derivative_state(r.bundle, 256);
  CHECK(std::abs(last(0, 0) - 1.0) <= inverse_drift(r.traj) + 1e-15);

  // Bump: (1 - theta dt)^(N - i - 1) sigma0 exactly on the discrete scheme.
  const TimeGrid g(1.0, 256);
  const Mat bump = fd_malliavin(BumpTarget::kState, *r.model, Vec::Zero(1), g, r.traj.path,
                                BumpProbe{100, 0, 256, default_bump(g)});
  CHECK(bump(0, 0) == doctest::Approx(std::pow(1.0 - theta * dt, 155)).epsilon(1e-7));
  CHECK(std::abs(bump(0, 0) - d.col(0).sum()) > 0.0);
  CHECK(std::abs(bump(0, 0) - malliavin_derivative_state(r.bundle, 100)(0, 0)) < 3.0 * dt);
}

TEST_CASE("Malliavin covariance for OU") {
  const auto ou = make_builtin_model("ou", {{"theta", 1.0}, {"sigma0", 1.0}});
  const double exact = (1.0 - std::exp(-2.0)) / 2.0;
  const auto coarse = run(ou, 256, 0);
  const auto fine = run(ou, 4096, 0);
  CHECK(std::abs(fine.bundle.gamma(0, 0) - exact) < std::abs(coarse.bundle.gamma(0, 0) - exact));
  CHECK(std::abs(fine.bundle.gamma(0, 0) - exact) < 5e-4);
  CHECK(fine.bundle.gamma(0, 0) == doctest::Approx(0.432332).epsilon(1e-3));
  CHECK(std::abs(fine.bundle.covering(0, 0) - std::exp(-1.0) / exact) < 2e-3);
  CHECK(fine.bundle.covering(0, 0) == doctest::Approx(0.850917).epsilon(2e-3));
  CHECK_FALSE(fine.bundle.singular);
  CHECK(fine.bundle.condition_number == 1.0);
}

TEST_CASE("zero diffusion gives a singular covariance that is refused downstream") {
  const auto r = run(testing::zero_noise_model(), 32, 0);
  CHECK(r.bundle.gamma(0, 0) == 0.0);
  CHECK(r.bundle.singular);
  CHECK_THROWS_AS(skorokhod_integrals_general(r.traj, r.bundle), std::domain_error);
  CHECK_THROWS_AS(covering_inner_product(r.bundle, 0, 0), std::domain_error);
}

TEST_CASE("bundle invariants on multidimensional models") {
  for (const auto& model : {make_builtin_model("linear2d", {}), testing::coupled_model()}) {
    CAPTURE(model->name());
    for (std::uint64_t p = 0; p < 10; ++p) {
      const auto r = run(model, 128, p);
      const Mat& g = r.bundle.gamma;
      CHECK((g - g.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * g.cwiseAbs().maxCoeff());
      CHECK((g * r.bundle.gamma_inv - Mat::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-10);
      CHECK(Eigen::SelfAdjointEigenSolver<Mat>(g).eigenvalues().minCoeff() > 0.0);
      CHECK(r.bundle.covering == r.traj.terminal().y.transpose() * r.bundle.gamma_inv);
    }
  }
}

TEST_CASE("frozen covering field") {
  const auto r = run(testing::coupled_model(), 128, 2);
  const Vec zero = Vec::Zero(2);
  CHECK(covering_field_frozen(r.bundle, zero, 40).cwiseAbs().maxCoeff() == 0.0);

  Vec a(2), b(2);
  a << 0.3, -1.2;
  b << 2.0, 0.7;
  const RowVec lhs = covering_field_frozen(r.bundle, 1.5 * a - 0.5 * b, 40);
  const RowVec rhs = 1.5 * covering_field_frozen(r.bundle, a, 40) - 0.5 * covering_field_frozen(r.bundle, b, 40);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-14);

  for (int k = 0; k < 2; ++k) {
    for (int i : {0, 17, 127}) {
      const RowVec u = covering_field_frozen(r.bundle, r.bundle.covering.col(k), i);
      RowVec composed = RowVec::Zero(2);
      for (int j = 0; j < 2; ++j) composed += r.bundle.gamma_inv(k, j) * r.bundle.dx_table[i].row(j);
      CHECK((u - composed).cwiseAbs().maxCoeff() < 1e-10);
    }
  }
}

TEST_CASE("covering condition holds to roundoff") {
  for (const auto& model : {make_builtin_model("ou", {}), make_builtin_model("tanh", {}),
                            make_builtin_model("linear2d", {}), testing::coupled_model()}) {
    CAPTURE(model->name());
    for (std::uint64_t p = 0; p < 5; ++p) {
      const auto r = run(model, 64, p);
      for (int i = 0; i < model->state_dim(); ++i)
        for (int k = 0; k < model->state_dim(); ++k)
          CHECK(std::abs(covering_inner_product(r.bundle, i, k) - (i == k ? 1.0 : 0.0)) < 1e-10);
    }
  }
}

TEST_CASE("derivatives of the variation processes vanish for linear models") {
  for (const auto& name : {"ou", "linear2d"}) {
    CAPTURE(name);
    const auto r = run(make_builtin_model(name, {}), 64, 1);
    for (int i : {0, 10, 63}) {
      CHECK(dt_first_variation(r.traj, r.bundle, i).max_abs() == 0.0);
      CHECK(omega(r.traj, r.bundle, i).max_abs() == 0.0);
      CHECK(dt_inverse_variation(r.traj, r.bundle, i, 50).max_abs() == 0.0);
      CHECK(theta(r.traj, r.bundle, i, 63).max_abs() == 0.0);
      CHECK(dt_gamma(r.traj, r.bundle, i).max_abs() == 0.0);
    }
  }
  const auto ou = run(make_builtin_model("ou", {}), 64, 1);
  CHECK(dt_inverse_variation(ou.traj, ou.bundle, 0, 0).max_abs() == 0.0);
}

TEST_CASE("inverse-variation derivative is zero for t > s") {
  const auto r = run(testing::coupled_model(), 64, 1);
  const ChannelFamily f = dt_inverse_variation(r.traj, r.bundle, 30, 29);
  CHECK(f.channels == 2);
  CHECK(f.max_abs() == 0.0);
  CHECK(dt_inverse_variation(r.traj, r.bundle, 29, 30).max_abs() > 0.0);
}

TEST_CASE("omega equals the first-variation derivative") {
  const auto r = run(testing::coupled_model(), 64, 4);
  for (int i = 0; i < 64; i += 7) {
    const ChannelFamily a = omega(r.traj, r.bundle, i);
    const ChannelFamily b = dt_first_variation(r.traj, r.bundle, i);
    for (int l = 0; l < 2; ++l) CHECK((a[l] - b[l]).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, a[l].norm()));
  }
}

TEST_CASE("theta contract and boundary form") {
  const auto r = run(testing::coupled_model(), 64, 5);
  CHECK_THROWS_AS(theta(r.traj, r.bundle, 10, 9), std::invalid_argument);

  // At s = i the derivative of Y_s collapses to Z_i o v - Z_i o v + sigma' Y_i up to Y_i Yinv_i.
  for (int i : {0, 13, 40}) {
    const auto& n = r.traj[i];
    const ChannelFamily th = theta(r.traj, r.bundle, i, i);
    for (int l = 0; l < 2; ++l) {
      const Vec v = r.bundle.yinv_sigma[i].col(l);
      const Mat dy = contract(n.z, v) - n.y * n.y_inv * contract(n.z, v) +
                     n.y * n.y_inv * r.bundle.sigma_jacobian[i][l] * n.y;
      Mat expected(2, 2);
      for (int lp = 0; lp < 2; ++lp)
        expected.col(lp) = -n.y_inv * dy * n.y_inv * r.bundle.sigma[i].col(lp) +
                           n.y_inv * r.bundle.sigma_jacobian[i][lp] * n.y * v;
      CHECK((th[l] - expected).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("D_t gamma is symmetric") {
  const auto r = run(testing::coupled_model(), 64, 6);
  for (int i = 0; i < 64; i += 9) {
    const ChannelFamily g = dt_gamma(r.traj, r.bundle, i);
    for (int l = 0; l < 2; ++l)
      CHECK((g[l] - g[l].transpose()).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, g[l].cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("formula derivatives against the bump oracle at N = 256") {
  BumpStudyOptions opts;
  opts.seed = 7;

  const BumpStudy bounded = bump_study(*make_builtin_model("bounded_drift", {}), Vec::Zero(1), {256}, opts);
  const auto& lb = bounded.levels.front();
  CHECK(lb.error[static_cast<int>(BumpQuantity::kFirstVariation)] <= 5e-2);
  CHECK(lb.error[static_cast<int>(BumpQuantity::kCovariance)] <= 5e-2);
  CHECK(lb.scale[static_cast<int>(BumpQuantity::kFirstVariation)] > 0.0);

  const BumpStudy tanh_study = bump_study(*make_builtin_model("tanh", {}), Vec::Zero(1), {128, 512}, opts);
  const auto& coarse = tanh_study.levels.front();
  const auto& fine = tanh_study.levels.back();
  const int theta_q = static_cast<int>(BumpQuantity::kInverseDiffusion);
  CHECK(fine.error[static_cast<int>(BumpQuantity::kInverseVariation)] <= 5e-2);
  // Yinv_i against the scheme's Y_{i+1}^{-1} differs by O(sqrt(dt)) per path for state-dependent sigma.
  CHECK(coarse.error[theta_q] / fine.error[theta_q] > 1.4);
  CHECK(fine.error[theta_q] < coarse.error[theta_q]);

  // Omega sign sanity: per-probe agreement in sign wherever the bump is clearly nonzero.
  const auto model = make_builtin_model("bounded_drift", {});
  const TimeGrid g(1.0, 256);
  for (std::uint64_t p = 0; p < 10; ++p) {
    const auto r = run(model, 256, p, 19);
    const int i = static_cast<int>(23 * p + 5);
    const Mat bump = fd_malliavin(BumpTarget::kFirstVariation, *model, Vec::Zero(1), g, r.traj.path,
                                  BumpProbe{i, 0, 256, default_bump(g)});
    const double formula = omega(r.traj, r.bundle, i)[0](0, 0);
    if (std::abs(bump(0, 0)) > 1e-3) CHECK(std::signbit(bump(0, 0)) == std::signbit(formula));
  }
}

TEST_CASE("fast Skorokhod kernel equals the naive double-time quadrature") {
  for (const auto& model : {make_builtin_model("bounded_drift", {}), make_builtin_model("tanh", {}),
                            make_builtin_model("ou", {}), testing::coupled_model()}) {
    CAPTURE(model->name());
    for (std::uint64_t p = 0; p < 3; ++p) {
      const auto r = run(model, 48, p);
      const auto fast = skorokhod_integrals_general(r.traj, r.bundle);
      const auto slow = naive_skorokhod(r.traj, r.bundle);
      for (int k = 0; k < model->state_dim(); ++k) {
        CHECK(rel(fast[k].ito_term, slow[k].ito_term) < 1e-12);
        CHECK(rel(fast[k].a_term, slow[k].a_term) < 1e-12);
        CHECK(rel(fast[k].b_term, slow[k].b_term) < 1e-12);
        CHECK(rel(fast[k].c_term, slow[k].c_term) < 1e-12);
        CHECK(rel(fast[k].total, slow[k].total) < 1e-12);
        CHECK(fast[k].total == fast[k].ito_term - fast[k].a_term + fast[k].b_term + fast[k].c_term);
      }
    }
  }
}

TEST_CASE("OU Skorokhod integral") {
  const auto ou = make_builtin_model("ou", {{"theta", 1.0}, {"sigma0", 1.0}});
  std::vector<double> rms;
  for (int n : {128, 512}) {
    double acc = 0.0;
    for (std::uint64_t p = 0; p < 200; ++p) {
      const auto r = run(ou, n, p);
      const auto parts = skorokhod_integrals_general(r.traj, r.bundle);
      CHECK(parts[0].a_term == 0.0);
      CHECK(parts[0].b_term == 0.0);
      CHECK(parts[0].c_term == 0.0);
      const auto reduced = skorokhod_integrals_state_independent(r.traj, r.bundle);
      CHECK(reduced[0].total == parts[0].total);
      // (X_T - m) / gamma with the discrete mean m = (1 - theta dt)^N x0 = 0.
      const double closed = r.traj.terminal().x(0) / r.bundle.gamma(0, 0);
      acc += (parts[0].total - closed) * (parts[0].total - closed);
    }
    rms.push_back(std::sqrt(acc / 200));
  }
  // Left-point Yinv_i against the scheme's Y_{i+1}^{-1}: first-order agreement.
  CHECK(rms[1] < 0.01);
  CHECK(rms[0] / rms[1] > 3.0);
  CHECK(rms[0] / rms[1] < 5.5);
}

TEST_CASE("state-independent form matches the general one") {
  const auto model = make_builtin_model("bounded_drift", {});
  for (std::uint64_t p = 0; p < 10; ++p) {
    const auto r = run(model, 128, p);
    const auto g = skorokhod_integrals_general(r.traj, r.bundle);
    const auto s = skorokhod_integrals_state_independent(r.traj, r.bundle);
    CHECK(g[0].b_term != 0.0);
    CHECK(g[0].c_term != 0.0);
    CHECK(std::abs(g[0].total - s[0].total) <= 1e-12 * std::max(1.0, std::abs(g[0].total)));
  }
  const auto tanh_run = run(make_builtin_model("tanh", {}), 32, 0);
  CHECK_THROWS_AS(skorokhod_integrals_state_independent(tanh_run.traj, tanh_run.bundle), std::invalid_argument);
  CHECK_THROWS_AS(skorokhod_integrals(tanh_run.traj, tanh_run.bundle, EstimatorMode::kStateIndependent),
                  std::invalid_argument);
  CHECK(skorokhod_integrals(tanh_run.traj, tanh_run.bundle, EstimatorMode::kAuto)[0].total ==
        skorokhod_integral_general(tanh_run.traj, tanh_run.bundle, 0).total);
  CHECK_THROWS_AS(skorokhod_integral_general(tanh_run.traj, tanh_run.bundle, 1), std::out_of_range);
}

TEST_CASE("duality E[X_T delta(u)] = 1 at 1e4 paths") {
  const TimeGrid g(1.0, 256);
  for (const char* name : {"tanh", "bounded_drift"}) {
    CAPTURE(name);
    const DualityReport rep = duality_report(*make_builtin_model(name, {}), Vec::Zero(1), g, 10000, 77);
    CAPTURE(rep.mean(0, 0));
    CAPTURE(rep.stderr(0, 0));
    CHECK(rep.used + rep.excluded == 10000);
    CHECK(rep.max_z_score() <= 3.0);
  }
}
