#include "mscore/score.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include <unsupported/Eigen/MatrixFunctions>

#include "mscore/parallel.hpp"
#include "mscore/rng.hpp"

namespace mscore {

std::vector<Vec> YGrid::points() const {
  const int m = dim();
  std::vector<Vec> out;
  std::size_t total = 1;
  for (int c : count) total *= static_cast<std::size_t>(c);
  out.reserve(total);
  std::vector<int> idx(m, 0);
  for (std::size_t n = 0; n < total; ++n) {
    Vec y(m);
    for (int a = 0; a < m; ++a) y(a) = coordinate(a, idx[a]);
    out.push_back(y);
    for (int a = m - 1; a >= 0; --a) {
      if (++idx[a] < count[a]) break;
      idx[a] = 0;
    }
  }
  return out;
}

double YGrid::coordinate(int axis, int index) const {
  if (count[axis] == 1) return lo[axis];
  return lo[axis] + (hi[axis] - lo[axis]) * index / (count[axis] - 1);
}

// ---------------------------------------------------------------------------

ScoreSamples simulate_score_samples(const SdeModel& model, const Vec& x0, const TimeGrid& grid, int node,
                                    int n_paths, std::uint64_t seed, const ScoreOptions& options) {
  if (node < 1 || node > grid.steps()) throw std::out_of_range("simulate_score_samples: node out of range");
  if (options.mode == EstimatorMode::kStateIndependent && !model.state_independent_diffusion())
    throw std::invalid_argument("state-independent estimator requested for model '" + model.name() +
                                "' whose diffusion depends on the state");
  // Intermediate times re-run the whole representation with horizon t_node.
  const TimeGrid horizon = grid.truncated(node);
  const int m = model.state_dim();

  ScoreSamples out;
  out.t = grid.time(node);
  out.node = node;
  out.state_dim = m;
  out.paths = parallel_map(static_cast<std::size_t>(n_paths), options.workers, [&](std::size_t p) {
    PathScoreSample sample;
    const BrownianPath w = sample_brownian(horizon, model.noise_dim(), seed, p);
    const VariationTrajectory traj = simulate_variations(model, x0, horizon, w, options.simulation);
    sample.x = traj.terminal().x;
    if (!traj.valid) {
      sample.blow_up = sample.excluded = true;
      return sample;
    }
    const MalliavinBundle bundle = malliavin_covariance(model, traj, options.covariance);
    sample.gamma_condition = bundle.condition_number;
    if (bundle.singular) {
      sample.excluded = true;
      return sample;
    }
    sample.breakdown = skorokhod_integrals(traj, bundle, options.mode, options.skorokhod);
    sample.delta.resize(m);
    for (int k = 0; k < m; ++k) sample.delta(k) = sample.breakdown[k].total;
    if (!sample.delta.allFinite()) sample.excluded = true;
    return sample;
  });
  for (const auto& s : out.paths) {
    if (s.blow_up) ++out.excluded_blowup;
    else if (s.excluded) ++out.excluded_singular;
  }
  return out;
}

std::vector<double> silverman_bandwidth(const std::vector<Vec>& xs) {
  if (xs.size() < 2) throw std::invalid_argument("silverman_bandwidth: need at least two samples");
  const int m = static_cast<int>(xs.front().size());
  const double n = static_cast<double>(xs.size());
  const double factor = std::pow(4.0 / ((m + 2.0) * n), 1.0 / (m + 4.0));
  std::vector<double> h(m);
  for (int a = 0; a < m; ++a) {
    double mean = 0.0;
    for (const auto& x : xs) mean += x(a);
    mean /= n;
    double var = 0.0;
    for (const auto& x : xs) var += (x(a) - mean) * (x(a) - mean);
    var /= (n - 1.0);
    h[a] = std::sqrt(var) * factor;
    if (!(h[a] > 0.0)) throw std::domain_error("silverman_bandwidth: degenerate sample spread");
  }
  return h;
}

namespace {

struct Pair {
  const Vec* x;
  const Vec* delta;
};

std::vector<Pair> usable(const ScoreSamples& samples) {
  std::vector<Pair> out;
  out.reserve(samples.paths.size());
  for (const auto& s : samples.paths)
    if (!s.excluded) out.push_back({&s.x, &s.delta});
  return out;
}

ScorePoint nadaraya_watson(const std::vector<Pair>& data, const Vec& y, const std::vector<double>& h, int m,
                           double min_eff) {
  ScorePoint pt;
  pt.y = y;
  double sw = 0.0, sw2 = 0.0;
  Vec swd = Vec::Zero(m);
  std::vector<double> weights(data.size());
  for (std::size_t p = 0; p < data.size(); ++p) {
    double e = 0.0;
    for (int a = 0; a < m; ++a) {
      const double u = ((*data[p].x)(a) - y(a)) / h[a];
      e += u * u;
    }
    const double w = std::exp(-0.5 * e);
    weights[p] = w;
    sw += w;
    sw2 += w * w;
    swd += w * (*data[p].delta);
  }
  pt.n_eff = sw2 > 0.0 ? sw * sw / sw2 : 0.0;
  pt.score = Vec::Constant(m, std::numeric_limits<double>::quiet_NaN());
  pt.stderr = pt.score;
  if (!(sw > 0.0) || pt.n_eff < min_eff) return pt;

  const Vec ratio = swd / sw;
  Vec resid2 = Vec::Zero(m);
  for (std::size_t p = 0; p < data.size(); ++p) {
    const Vec r = *data[p].delta - ratio;
    resid2 += weights[p] * weights[p] * r.cwiseProduct(r);
  }
  pt.score = -ratio;
  pt.stderr = (resid2 / (sw * sw)).cwiseSqrt();
  pt.reliable = pt.score.allFinite();
  return pt;
}

ScorePoint nearest_neighbors(const std::vector<Pair>& data, const Vec& y, const std::vector<double>& h, int m, int k,
                             double min_eff) {
  ScorePoint pt;
  pt.y = y;
  pt.score = Vec::Constant(m, std::numeric_limits<double>::quiet_NaN());
  pt.stderr = pt.score;
  k = std::min<int>(k, static_cast<int>(data.size()));
  pt.n_eff = k;
  if (k < min_eff || k < 2) return pt;
  std::vector<std::pair<double, std::size_t>> dist(data.size());
  for (std::size_t p = 0; p < data.size(); ++p) {
    double e = 0.0;
    for (int a = 0; a < m; ++a) {
      const double u = ((*data[p].x)(a) - y(a)) / h[a];
      e += u * u;
    }
    dist[p] = {e, p};
  }
  std::nth_element(dist.begin(), dist.begin() + (k - 1), dist.end());
  std::sort(dist.begin(), dist.begin() + k);
  Vec mean = Vec::Zero(m);
  for (int j = 0; j < k; ++j) mean += *data[dist[j].second].delta;
  mean /= k;
  Vec var = Vec::Zero(m);
  for (int j = 0; j < k; ++j) {
    const Vec r = *data[dist[j].second].delta - mean;
    var += r.cwiseProduct(r);
  }
  var /= (k - 1);
  pt.score = -mean;
  pt.stderr = (var / k).cwiseSqrt();
  pt.reliable = pt.score.allFinite();
  return pt;
}

}  // namespace

ScoreTable regress_score(const ScoreSamples& samples, const YGrid& grid, const ScoreOptions& options) {
  const int m = samples.state_dim;
  if (grid.dim() != m) throw std::invalid_argument("regress_score: evaluation grid dimension mismatch");
  const auto data = usable(samples);
  if (data.size() < 2) throw std::domain_error("regress_score: fewer than two usable paths");

  ScoreTable table;
  table.t = samples.t;
  table.node = samples.node;
  table.state_dim = m;
  table.n_paths = static_cast<int>(samples.paths.size());
  table.excluded = samples.excluded();
  table.grid = grid;
  if (options.bandwidth) {
    table.bandwidth = *options.bandwidth;
    if (static_cast<int>(table.bandwidth.size()) == 1 && m > 1) table.bandwidth.assign(m, table.bandwidth[0]);
    if (static_cast<int>(table.bandwidth.size()) != m)
      throw std::invalid_argument("regress_score: bandwidth needs one value per dimension");
    for (double h : table.bandwidth)
      if (!(h > 0.0)) throw std::invalid_argument("regress_score: bandwidth must be positive");
  } else {
    std::vector<Vec> xs;
    xs.reserve(data.size());
    for (const auto& d : data) xs.push_back(*d.x);
    table.bandwidth = silverman_bandwidth(xs);
  }

  const int k = options.knn_neighbors > 0 ? options.knn_neighbors
                                          : static_cast<int>(std::lround(std::sqrt(static_cast<double>(data.size()))));
  for (const Vec& y : grid.points()) {
    table.points.push_back(options.regression == Regression::kNadarayaWatson
                               ? nadaraya_watson(data, y, table.bandwidth, m, options.min_effective_samples)
                               : nearest_neighbors(data, y, table.bandwidth, m, k, options.min_effective_samples));
  }
  return table;
}

ScoreTable estimate_score(const SdeModel& model, const Vec& x0, const TimeGrid& grid, int n_paths, double t,
                          const YGrid& y_grid, std::uint64_t seed, const ScoreOptions& options) {
  if (n_paths < 100) throw std::invalid_argument("estimate_score: n_paths must be at least 100");
  const auto node = grid.node_of(t);
  if (!node) {
    std::ostringstream msg;
    msg << "estimate_score: t = " << t << " is not a grid node (nearest node t = "
        << grid.time(grid.nearest_node(t)) << ")";
    throw std::invalid_argument(msg.str());
  }
  if (*node == 0) throw std::invalid_argument("estimate_score: t must be after the first grid node");
  const ScoreSamples samples = simulate_score_samples(model, x0, grid, *node, n_paths, seed, options);
  return regress_score(samples, y_grid, options);
}

// ---------------------------------------------------------------------------

GaussianLaw linear_transition_law(const SdeModel& model, double t, const Vec& x0) {
  const auto lin = model.linear_coefficients();
  if (!lin) throw std::invalid_argument("model '" + model.name() + "' is not linear; no closed-form transition law");
  if (!(t > 0.0)) throw std::invalid_argument("linear_transition_law: t must be positive");
  const int m = model.state_dim();
  const Eigen::MatrixXd a = lin->drift_matrix;
  const Eigen::MatrixXd q = lin->diffusion_matrix * lin->diffusion_matrix.transpose();

  // Van Loan: exp([[-A, Q], [0, A^T]] t) = [[., F12], [0, F22]], Gamma_t = F22^T F12.
  Eigen::MatrixXd block = Eigen::MatrixXd::Zero(2 * m, 2 * m);
  block.topLeftCorner(m, m) = -a;
  block.topRightCorner(m, m) = q;
  block.bottomRightCorner(m, m) = a.transpose();
  const Eigen::MatrixXd e = (block * t).exp();
  const Eigen::MatrixXd f22 = e.bottomRightCorner(m, m);
  const Eigen::MatrixXd cov = f22.transpose() * e.topRightCorner(m, m);

  GaussianLaw law;
  law.mean = (a * t).exp() * Eigen::VectorXd(x0);
  law.covariance = 0.5 * (cov + cov.transpose());
  return law;
}

Vec analytic_score_linear(const SdeModel& model, double t, const Vec& x0, const Vec& y) {
  const GaussianLaw law = linear_transition_law(model, t, x0);
  return -law.covariance.ldlt().solve(y - law.mean);
}

void write_score_table_header(std::ostream& os, int m) {
  os << "t";
  for (int a = 1; a <= m; ++a) os << ",y_" << a;
  os << ",k,score,stderr,n_eff,excluded\n";
}

void write_score_table_rows(std::ostream& os, const ScoreTable& table) {
  for (const auto& pt : table.points) {
    for (int k = 0; k < table.state_dim; ++k) {
      os << table.t;
      for (int a = 0; a < table.state_dim; ++a) os << ',' << pt.y(a);
      os << ',' << (k + 1) << ',' << pt.score(k) << ',' << pt.stderr(k) << ',' << pt.n_eff << ',' << table.excluded
         << '\n';
    }
  }
}

void write_breakdown_header(std::ostream& os) { os << "path,k,ito,A,B,C,total,gamma_cond\n"; }

void write_breakdown_rows(std::ostream& os, const ScoreSamples& samples) {
  for (std::size_t p = 0; p < samples.paths.size(); ++p) {
    const auto& s = samples.paths[p];
    if (s.excluded) continue;
    for (const auto& b : s.breakdown)
      os << p << ',' << (b.k + 1) << ',' << b.ito_term << ',' << b.a_term << ',' << b.b_term << ',' << b.c_term << ','
         << b.total << ',' << s.gamma_condition << '\n';
  }
}

// ---------------------------------------------------------------------------

AnalyticScoreProvider::AnalyticScoreProvider(const SdeModel& model, Vec x0) : model_(model), x0_(std::move(x0)) {
  if (!model.linear_coefficients())
    throw std::invalid_argument("analytic score provider needs a linear model, got '" + model.name() + "'");
}

Vec AnalyticScoreProvider::score(int node, double t, const Vec& y) const {
  if (!(t > 0.0)) throw ScoreGapError(node, t, "analytic score undefined at t = 0");
  return analytic_score_linear(model_, t, x0_, y);
}

void TableScoreProvider::add(int node, ScoreTable table) { tables_[node] = std::move(table); }

Vec TableScoreProvider::score(int node, double t, const Vec& y) const {
  const auto it = tables_.find(node);
  if (it == tables_.end()) {
    std::ostringstream msg;
    msg << "no score table for reverse node " << node << " (t = " << t << ")";
    throw ScoreGapError(node, t, msg.str());
  }
  const ScoreTable& table = it->second;
  const YGrid& g = table.grid;
  const int m = g.dim();

  // Per axis: lower index and weight of the upper neighbour.
  std::vector<int> base(m);
  std::vector<double> frac(m);
  for (int a = 0; a < m; ++a) {
    const int n = g.count[a];
    if (n == 1) {
      base[a] = 0;
      frac[a] = 0.0;
      continue;
    }
    const double step = (g.hi[a] - g.lo[a]) / (n - 1);
    const double pos = std::clamp((y(a) - g.lo[a]) / step, 0.0, static_cast<double>(n - 1));
    base[a] = std::min(static_cast<int>(std::floor(pos)), n - 2);
    frac[a] = pos - base[a];
  }

  Vec out = Vec::Zero(m);
  for (int corner = 0; corner < (1 << m); ++corner) {
    double weight = 1.0;
    std::size_t flat = 0;
    for (int a = 0; a < m; ++a) {
      const int up = (corner >> (m - 1 - a)) & 1;
      const int idx = std::min(base[a] + up, g.count[a] - 1);
      weight *= up ? frac[a] : 1.0 - frac[a];
      flat = flat * static_cast<std::size_t>(g.count[a]) + static_cast<std::size_t>(idx);
    }
    if (weight == 0.0) continue;
    const ScorePoint& pt = table.points[flat];
    if (!pt.reliable) {
      std::ostringstream msg;
      msg << "score table for reverse node " << node << " (t = " << t << ") is unreliable near y = "
          << pt.y.transpose();
      throw ScoreGapError(node, t, msg.str());
    }
    out += weight * pt.score;
  }
  return out;
}

ReverseResult reverse_time_sample(const SdeModel& model, const ScoreProvider& provider, const Vec& x0,
                                  const TimeGrid& grid, int n_samples, std::uint64_t seed,
                                  const ReverseOptions& options) {
  if (n_samples < 2) throw std::invalid_argument("reverse_time_sample: need at least two samples");
  const int m = model.state_dim();
  const int d = model.noise_dim();
  const double dt = grid.dt();
  const double sqrt_dt = std::sqrt(dt);
  const Philox4x32 gen(seed);

  struct Draw {
    Vec start;
    Vec end;
  };
  const auto draws = parallel_map(static_cast<std::size_t>(n_samples), options.workers, [&](std::size_t p) {
    // Terminal condition from a fresh forward path, independent of any score-estimation paths.
    const BrownianPath w = sample_brownian(grid, d, seed, p, Stream::kReverseTerminal);
    Draw draw;
    if (!simulate_state(model, x0, grid, w, draw.start))
      throw std::runtime_error("reverse_time_sample: forward terminal draw blew up");
    Vec x = draw.start;
    Coefficients c;
    Vec xi(d);
    for (int i = grid.steps(); i >= 1; --i) {
      const double t = grid.time(i);
      model.evaluate_into(t, x, c);
      const Vec s = provider.score(i, t, x);
      const Vec div = divergence_sigma_sigma_T(model, t, x);
      const Vec drift = c.drift - div - c.diffusion * (c.diffusion.transpose() * s);
      fill_normals(gen, Stream::kReverseNoise, p, static_cast<std::uint32_t>(i), d,
                   [&](int l, double z) { xi(l) = z; });
      x = x - drift * dt + c.diffusion * xi * sqrt_dt;
    }
    draw.end = x;
    return draw;
  });

  ReverseResult r;
  r.start.reserve(draws.size());
  r.samples.reserve(draws.size());
  for (const auto& dr : draws) {
    r.start.push_back(dr.start);
    r.samples.push_back(dr.end);
  }
  const double n = static_cast<double>(n_samples);
  r.mean = Vec::Zero(m);
  for (const auto& x : r.samples) r.mean += x;
  r.mean /= n;
  Vec var = Vec::Zero(m);
  for (const auto& x : r.samples) var += (x - r.mean).cwiseProduct(x - r.mean);
  var /= (n - 1.0);
  r.std_dev = var.cwiseSqrt();
  r.mean_stderr = (var / n).cwiseSqrt();
  return r;
}

}  // namespace mscore
