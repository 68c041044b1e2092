#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <Eigen/Core>
#include <boost/version.hpp>

#include "mscore/oracle.hpp"
#include "mscore/parallel.hpp"
#include "mscore/validation.hpp"

#ifndef MSCORE_VERSION
#define MSCORE_VERSION "unknown"
#endif

namespace mscore::app {

namespace fs = std::filesystem;

namespace {

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::ostream& log_of(const CommandContext& ctx) {
  static std::ostream null(nullptr);
  return ctx.log ? *ctx.log : null;
}

std::ofstream open_output(const CommandContext& ctx, const std::string& name) {
  fs::create_directories(ctx.out_dir);
  const fs::path path = fs::path(ctx.out_dir) / name;
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << std::setprecision(17);
  return os;
}

void summary_header(std::ostream& os, const std::string& command, const RunConfig& config) {
  os << "mscore " << MSCORE_VERSION << '\n'
     << "command: " << command << '\n'
     << "eigen " << EIGEN_WORLD_VERSION << '.' << EIGEN_MAJOR_VERSION << '.' << EIGEN_MINOR_VERSION << ", boost "
     << BOOST_LIB_VERSION << ", compiler " << __VERSION__ << "\n\n"
     << "== configuration ==\n";
  echo_config(os, config);
  os << "\n== results ==\n";
}

std::string node_file(const std::string& stem, int node) { return stem + "_node" + std::to_string(node) + ".csv"; }

void write_vec(std::ostream& os, const Vec& v) {
  for (int a = 0; a < v.size(); ++a) os << (a ? "," : "") << v(a);
}

// Trajectories are simulated in batches and written in path order.
void dump_trajectories(const SdeModel& model, const Vec& x0, const TimeGrid& grid, const RunConfig& config,
                       int count, const CommandContext& ctx, std::ostream& os) {
  write_trajectory_header(os, model.state_dim());
  constexpr int kBatch = 256;
  for (int first = 0; first < count; first += kBatch) {
    const int n = std::min(kBatch, count - first);
    const auto batch = parallel_map(static_cast<std::size_t>(n), ctx.workers, [&](std::size_t j) {
      const BrownianPath w = sample_brownian(grid, model.noise_dim(), config.seed, first + j);
      return simulate_variations(model, x0, grid, w, config.simulation_options());
    });
    for (const auto& traj : batch) write_trajectory_rows(os, traj);
  }
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"score", "validate", "reverse", "simulate", "duality"};
  return names;
}

int cmd_score(const RunConfig& config, const CommandContext& ctx) {
  const ModelPtr model = config.make_model();
  const Vec x0 = config.initial_state(*model);
  const TimeGrid grid = config.grid();
  const int m = model->state_dim();
  const YGrid ygrid = config.y_grid(m);
  const std::vector<int> nodes = config.evaluation_nodes();
  if (config.n_paths < 100) throw ConfigError(config.source, 0, "simulation.n_paths", "score needs at least 100 paths");
  const ScoreOptions options = config.score_options(ctx.workers);
  const auto linear = model->linear_coefficients();

  std::ofstream summary = open_output(ctx, "summary.txt");
  summary_header(summary, "score", config);

  for (int node : nodes) {
    Stopwatch clock;
    const ScoreSamples samples = simulate_score_samples(*model, x0, grid, node, config.n_paths, config.seed, options);
    const ScoreTable table = regress_score(samples, ygrid, options);
    {
      std::ofstream csv = open_output(ctx, node_file("score", node));
      write_score_table_header(csv, m);
      write_score_table_rows(csv, table);
    }
    if (config.dump_breakdown) {
      std::ofstream csv = open_output(ctx, node_file("breakdown", node));
      write_breakdown_header(csv);
      write_breakdown_rows(csv, samples);
    }

    int unreliable = 0;
    for (const auto& pt : table.points) unreliable += pt.reliable ? 0 : 1;
    summary << "t = " << table.t << " (node " << node << ")\n"
            << "  paths: " << table.n_paths << ", excluded singular gamma: " << samples.excluded_singular
            << ", excluded blow-up: " << samples.excluded_blowup << '\n'
            << "  bandwidth:";
    for (double h : table.bandwidth) summary << ' ' << h;
    summary << "\n  unreliable points: " << unreliable << " of " << table.points.size() << '\n';
    if (linear) {
      summary << "  analytic comparison (y, k, estimate, stderr, analytic, z):\n";
      for (const auto& pt : table.points) {
        if (!pt.reliable) continue;
        const Vec exact = analytic_score_linear(*model, table.t, x0, pt.y);
        for (int k = 0; k < m; ++k) {
          summary << "   ";
          for (int a = 0; a < m; ++a) summary << ' ' << pt.y(a);
          summary << "  " << k + 1 << "  " << pt.score(k) << "  " << pt.stderr(k) << "  " << exact(k) << "  "
                  << (pt.score(k) - exact(k)) / pt.stderr(k) << '\n';
        }
      }
    }
    log_of(ctx) << "score: node " << node << " done in " << std::fixed << std::setprecision(2) << clock.seconds()
                << " s\n" << std::defaultfloat;
  }

  if (config.dump_paths > 0) {
    std::ofstream csv = open_output(ctx, "trajectories.csv");
    dump_trajectories(*model, x0, grid, config, std::min(config.dump_paths, config.n_paths), ctx, csv);
  }
  return kExitOk;
}

int cmd_validate(const RunConfig& config, const CommandContext& ctx) {
  std::vector<std::string> names = config.validate_models;
  if (names.empty()) names = builtin_model_names();

  ValidationConfig vc;
  vc.horizon = config.horizon;
  vc.steps = config.steps;
  vc.n_paths = config.validate_paths;
  vc.probes = config.probes;
  vc.seed = config.seed;
  vc.workers = ctx.workers;
  vc.mode = config.estimator;
  vc.simulation = config.simulation_options();
  vc.covariance.ridge = config.ridge;
  vc.skorokhod.flip_b_term = config.flip_b_term;

  ValidationReport all;
  for (const auto& name : names) {
    Stopwatch clock;
    const ModelPtr model = make_builtin_model(name, name == config.model ? config.params : ParamMap{});
    const Vec x0 = name == config.model ? config.initial_state(*model) : Vec::Zero(model->state_dim());
    const ValidationReport rep = validate_model(*model, x0, vc);
    all.checks.insert(all.checks.end(), rep.checks.begin(), rep.checks.end());
    log_of(ctx) << "validate: " << name << (rep.passed() ? " PASS" : " FAIL") << " in " << std::fixed
                << std::setprecision(2) << clock.seconds() << " s\n" << std::defaultfloat;
  }

  {
    std::ofstream report = open_output(ctx, "validation.txt");
    write_validation_report(report, all);
  }
  std::ofstream summary = open_output(ctx, "summary.txt");
  summary_header(summary, "validate", config);
  write_validation_report(summary, all);
  summary << (all.passed() ? "overall: PASS\n" : "overall: FAIL\n");
  if (ctx.log) write_validation_report(*ctx.log, all);
  return all.passed() ? kExitOk : kExitFailure;
}

int cmd_reverse(const RunConfig& config, const CommandContext& ctx) {
  const ModelPtr model = config.make_model();
  const Vec x0 = config.initial_state(*model);
  const TimeGrid grid = config.grid();
  const int m = model->state_dim();
  Stopwatch clock;

  std::unique_ptr<ScoreProvider> provider;
  std::ostringstream notes;
  notes << std::setprecision(17);
  switch (config.score_source) {
    case ScoreSource::kAnalytic:
      provider = std::make_unique<AnalyticScoreProvider>(*model, x0);
      break;
    case ScoreSource::kZero:
      provider = std::make_unique<ZeroScoreProvider>(m);
      break;
    case ScoreSource::kEstimated: {
      if (config.score_paths < 100)
        throw ConfigError(config.source, 0, "reverse.score_paths", "estimated scores need at least 100 paths per node");
      auto tables = std::make_unique<TableScoreProvider>();
      const YGrid ygrid = config.y_grid(m);
      const ScoreOptions options = config.score_options(ctx.workers);
      int unreliable = 0;
      for (int node = 1; node <= grid.steps(); ++node) {
        ScoreTable table = estimate_score(*model, x0, grid, config.score_paths, grid.time(node), ygrid, config.seed,
                                          options);
        for (const auto& pt : table.points) unreliable += pt.reliable ? 0 : 1;
        tables->add(node, std::move(table));
      }
      notes << "estimated score tables: " << grid.steps() << " nodes, " << config.score_paths
            << " paths each, unreliable points: " << unreliable << '\n';
      provider = std::move(tables);
      break;
    }
  }

  const ReverseResult result =
      reverse_time_sample(*model, *provider, x0, grid, config.n_samples, config.seed, ReverseOptions{ctx.workers});

  {
    std::ofstream csv = open_output(ctx, "reverse_samples.csv");
    csv << "sample";
    for (int a = 0; a < m; ++a) csv << ",x_" << a + 1;
    csv << '\n';
    for (std::size_t p = 0; p < result.samples.size(); ++p) {
      csv << p << ',';
      write_vec(csv, result.samples[p]);
      csv << '\n';
    }
  }
  std::ofstream summary = open_output(ctx, "summary.txt");
  summary_header(summary, "reverse", config);
  summary << notes.str() << "samples: " << result.samples.size() << "\nmean: ";
  write_vec(summary, result.mean);
  summary << "\nstd: ";
  write_vec(summary, result.std_dev);
  summary << "\nstderr of mean: ";
  write_vec(summary, result.mean_stderr);
  summary << "\nx0: ";
  write_vec(summary, x0);
  summary << "\n(mean - x0) / stderr: ";
  write_vec(summary, ((result.mean - x0).array() / result.mean_stderr.array()).matrix());
  Vec spread = Vec::Zero(m), shift = Vec::Zero(m);
  const double n = static_cast<double>(result.samples.size());
  for (std::size_t p = 0; p < result.samples.size(); ++p) shift += result.samples[p] - result.start[p];
  shift /= n;
  for (std::size_t p = 0; p < result.samples.size(); ++p) {
    const Vec e = result.samples[p] - result.start[p] - shift;
    spread += e.cwiseProduct(e);
  }
  summary << "\nvariance of (sample - terminal start): ";
  write_vec(summary, spread / (n - 1.0));
  summary << '\n';
  log_of(ctx) << "reverse: " << result.samples.size() << " samples in " << std::fixed << std::setprecision(2)
              << clock.seconds() << " s\n" << std::defaultfloat;
  return kExitOk;
}

int cmd_simulate(const RunConfig& config, const CommandContext& ctx) {
  const ModelPtr model = config.make_model();
  const Vec x0 = config.initial_state(*model);
  const TimeGrid grid = config.grid();
  const int m = model->state_dim();
  Stopwatch clock;

  struct Terminal {
    Vec x;
    bool valid = false;
    double drift = 0.0;
  };
  const auto rows = parallel_map(static_cast<std::size_t>(config.n_paths), ctx.workers, [&](std::size_t p) {
    const BrownianPath w = sample_brownian(grid, model->noise_dim(), config.seed, p);
    const VariationTrajectory traj = simulate_variations(*model, x0, grid, w, config.simulation_options());
    return Terminal{traj.terminal().x, traj.valid, traj.valid ? inverse_drift(traj) : 0.0};
  });

  Vec mean = Vec::Zero(m), var = Vec::Zero(m);
  int valid = 0;
  double drift = 0.0;
  {
    std::ofstream csv = open_output(ctx, "terminal.csv");
    csv << "path";
    for (int a = 0; a < m; ++a) csv << ",X_" << a + 1;
    csv << ",valid\n";
    for (std::size_t p = 0; p < rows.size(); ++p) {
      csv << p << ',';
      write_vec(csv, rows[p].x);
      csv << ',' << (rows[p].valid ? 1 : 0) << '\n';
      if (!rows[p].valid) continue;
      ++valid;
      mean += rows[p].x;
      drift = std::max(drift, rows[p].drift);
    }
  }
  if (valid > 0) mean /= valid;
  for (const auto& r : rows)
    if (r.valid) var += (r.x - mean).cwiseProduct(r.x - mean);
  if (valid > 1) var /= (valid - 1.0);

  const int dumped = config.dump_paths > 0 ? std::min(config.dump_paths, config.n_paths) : config.n_paths;
  {
    std::ofstream csv = open_output(ctx, "trajectories.csv");
    dump_trajectories(*model, x0, grid, config, dumped, ctx, csv);
  }

  std::ofstream summary = open_output(ctx, "summary.txt");
  summary_header(summary, "simulate", config);
  summary << "paths: " << config.n_paths << ", blow-ups excluded: " << config.n_paths - valid
          << "\ntrajectories written: " << dumped << "\nmean X_T: ";
  write_vec(summary, mean);
  summary << "\nvariance X_T: ";
  write_vec(summary, var);
  summary << "\nmax |Y Yinv - I|: " << drift << '\n';
  if (model->linear_coefficients()) {
    const GaussianLaw law = linear_transition_law(*model, grid.horizon(), x0);
    summary << "exact mean X_T: ";
    write_vec(summary, law.mean);
    summary << "\nexact variance X_T: ";
    write_vec(summary, law.covariance.diagonal());
    summary << '\n';
  }
  log_of(ctx) << "simulate: " << config.n_paths << " paths in " << std::fixed << std::setprecision(2)
              << clock.seconds() << " s\n" << std::defaultfloat;
  return kExitOk;
}

int cmd_duality(const RunConfig& config, const CommandContext& ctx) {
  const ModelPtr model = config.make_model();
  const Vec x0 = config.initial_state(*model);
  const int m = model->state_dim();
  Stopwatch clock;

  DualityOptions options;
  options.mode = config.estimator;
  options.workers = ctx.workers;
  options.simulation = config.simulation_options();
  options.covariance.ridge = config.ridge;
  options.skorokhod.flip_b_term = config.flip_b_term;
  const DualityReport rep = duality_report(*model, x0, config.grid(), config.n_paths, config.seed, options);
  const bool ok = rep.max_z_score() <= tolerance::kDualityZ;

  {
    std::ofstream csv = open_output(ctx, "duality.csv");
    csv << "i,k,mean,stderr,z\n";
    for (int i = 0; i < m; ++i)
      for (int k = 0; k < m; ++k)
        csv << i + 1 << ',' << k + 1 << ',' << rep.mean(i, k) << ',' << rep.stderr(i, k) << ','
            << (rep.mean(i, k) - (i == k ? 1.0 : 0.0)) / rep.stderr(i, k) << '\n';
  }
  std::ofstream summary = open_output(ctx, "summary.txt");
  summary_header(summary, "duality", config);
  summary << "paths used: " << rep.used << ", excluded: " << rep.excluded << "\nmax |z|: " << rep.max_z_score()
          << " (tolerance " << tolerance::kDualityZ << ")\n"
          << (ok ? "PASS" : "FAIL") << '\n';
  log_of(ctx) << "duality: max |z| = " << rep.max_z_score() << (ok ? " PASS" : " FAIL") << " in " << std::fixed
              << std::setprecision(2) << clock.seconds() << " s\n" << std::defaultfloat;
  return ok ? kExitOk : kExitFailure;
}

int run_command(const std::string& name, const std::string& config_path, const std::string& out_override,
                int workers, std::ostream& log, std::ostream& err) {
  try {
    const RunConfig config = load_config(config_path);
    CommandContext ctx{out_override.empty() ? config.out_dir : out_override, std::max(1, workers), &log};
    if (name == "score") return cmd_score(config, ctx);
    if (name == "validate") return cmd_validate(config, ctx);
    if (name == "reverse") return cmd_reverse(config, ctx);
    if (name == "simulate") return cmd_simulate(config, ctx);
    if (name == "duality") return cmd_duality(config, ctx);
    err << "unknown command '" << name << "'\n";
    return kExitConfig;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    err << "refused: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ScoreGapError& e) {
    err << "aborted at reverse node " << e.node() << " (t = " << e.time() << "): " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace mscore::app
