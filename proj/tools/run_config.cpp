#include "run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <boost/algorithm/string/split.hpp>
#include <boost/algorithm/string/trim.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace mscore::app {

namespace pt = boost::property_tree;

ConfigError::ConfigError(std::string source, int line, std::string field, const std::string& message)
    : std::runtime_error(source + (line > 0 ? ":" + std::to_string(line) : std::string()) +
                         (field.empty() ? std::string() : ": " + field) + ": " + message),
      line_(line),
      field_(std::move(field)) {}

namespace {

// Recovers "section.key" -> line number, since ptree drops positions.
std::map<std::string, int> index_lines(const std::string& text) {
  std::map<std::string, int> lines;
  std::istringstream in(text);
  std::string raw, section;
  int n = 0;
  while (std::getline(in, raw)) {
    ++n;
    std::string s = boost::algorithm::trim_copy(raw);
    if (s.empty() || s[0] == ';' || s[0] == '#') continue;
    if (s.front() == '[' && s.back() == ']') {
      section = boost::algorithm::trim_copy(s.substr(1, s.size() - 2));
      lines.emplace(section, n);
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) continue;
    lines.emplace(section + "." + boost::algorithm::trim_copy(s.substr(0, eq)), n);
  }
  return lines;
}

class Reader {
 public:
  Reader(const pt::ptree& tree, std::map<std::string, int> lines, std::string source)
      : tree_(tree), lines_(std::move(lines)), source_(std::move(source)) {}

  [[noreturn]] void fail(const std::string& field, const std::string& message) const {
    const auto it = lines_.find(field);
    throw ConfigError(source_, it == lines_.end() ? 0 : it->second, field, message);
  }

  int line_of(const std::string& field) const {
    const auto it = lines_.find(field);
    return it == lines_.end() ? 0 : it->second;
  }

  std::optional<std::string> raw(const std::string& section, const std::string& key) {
    const std::string field = section + "." + key;
    seen_.insert(field);
    const auto sec = tree_.get_child_optional(pt::ptree::path_type(section, '\0'));
    if (!sec) return std::nullopt;
    const auto value = sec->get_optional<std::string>(pt::ptree::path_type(key, '\0'));
    if (!value) return std::nullopt;
    return boost::algorithm::trim_copy(*value);
  }

  double number(const std::string& field, const std::string& text) const {
    double v = 0.0;
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) fail(field, "expected a number, got '" + text + "'");
    return v;
  }

  long long integer(const std::string& field, const std::string& text) const {
    long long v = 0;
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) fail(field, "expected an integer, got '" + text + "'");
    return v;
  }

  std::vector<std::string> list(const std::string& text) const {
    std::vector<std::string> parts;
    boost::algorithm::split(parts, text, [](char c) { return c == ','; });
    for (auto& p : parts) boost::algorithm::trim(p);
    if (parts.size() == 1 && parts[0].empty()) parts.clear();
    return parts;
  }

  void get(const std::string& sec, const std::string& key, double& out) {
    if (auto v = raw(sec, key)) out = number(sec + "." + key, *v);
  }
  void get(const std::string& sec, const std::string& key, int& out) {
    if (auto v = raw(sec, key)) out = static_cast<int>(integer(sec + "." + key, *v));
  }
  void get(const std::string& sec, const std::string& key, std::uint64_t& out) {
    if (auto v = raw(sec, key)) {
      const long long n = integer(sec + "." + key, *v);
      if (n < 0) fail(sec + "." + key, "must be non-negative");
      out = static_cast<std::uint64_t>(n);
    }
  }
  void get(const std::string& sec, const std::string& key, bool& out) {
    if (auto v = raw(sec, key)) {
      if (*v == "true" || *v == "1" || *v == "yes") out = true;
      else if (*v == "false" || *v == "0" || *v == "no") out = false;
      else fail(sec + "." + key, "expected true or false, got '" + *v + "'");
    }
  }
  void get(const std::string& sec, const std::string& key, std::string& out) {
    if (auto v = raw(sec, key)) out = *v;
  }
  void get(const std::string& sec, const std::string& key, std::vector<double>& out) {
    if (auto v = raw(sec, key)) {
      out.clear();
      for (const auto& p : list(*v)) out.push_back(number(sec + "." + key, p));
    }
  }
  void get(const std::string& sec, const std::string& key, std::vector<int>& out) {
    if (auto v = raw(sec, key)) {
      out.clear();
      for (const auto& p : list(*v)) out.push_back(static_cast<int>(integer(sec + "." + key, p)));
    }
  }
  template <class Enum>
  void get(const std::string& sec, const std::string& key, Enum& out, const std::map<std::string, Enum>& names) {
    if (auto v = raw(sec, key)) {
      const auto it = names.find(*v);
      if (it == names.end()) {
        std::string options;
        for (const auto& [name, value] : names) options += (options.empty() ? "" : ", ") + name;
        fail(sec + "." + key, "unknown value '" + *v + "' (expected one of: " + options + ")");
      }
      out = it->second;
    }
  }

  void reject_unknown(const std::set<std::string>& open_sections) const {
    for (const auto& [section, child] : tree_) {
      if (!child.data().empty() && child.empty()) fail(section, "key outside of any section");
      if (!known_sections().count(section)) fail(section, "unknown section [" + section + "]");
      if (open_sections.count(section)) continue;
      for (const auto& [key, value] : child)
        if (!seen_.count(section + "." + key)) fail(section + "." + key, "unknown key");
    }
  }

  static const std::set<std::string>& known_sections() {
    static const std::set<std::string> names{"model", "simulation", "score", "reverse", "validate", "output", "debug"};
    return names;
  }

 private:
  const pt::ptree& tree_;
  std::map<std::string, int> lines_;
  std::string source_;
  std::set<std::string> seen_;
};

const std::map<std::string, InverseScheme> kSchemes{
    {"realized", InverseScheme::kItoRealized},
    {"expected", InverseScheme::kItoExpected},
    {"direct", InverseScheme::kDirectInversion}};
const std::map<std::string, EstimatorMode> kModes{
    {"auto", EstimatorMode::kAuto}, {"general", EstimatorMode::kGeneral},
    {"state_independent", EstimatorMode::kStateIndependent}};
const std::map<std::string, Regression> kRegressions{
    {"nadaraya_watson", Regression::kNadarayaWatson}, {"knn", Regression::kNearestNeighbors}};
const std::map<std::string, ScoreSource> kSources{
    {"analytic", ScoreSource::kAnalytic}, {"estimated", ScoreSource::kEstimated}, {"zero", ScoreSource::kZero}};

template <class Enum>
std::string name_of(const std::map<std::string, Enum>& names, Enum value) {
  for (const auto& [name, v] : names)
    if (v == value) return name;
  return "?";
}

template <class T>
std::string joined(const std::vector<T>& values) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < values.size(); ++i) os << (i ? "," : "") << values[i];
  return os.str();
}

}  // namespace

RunConfig parse_config(std::istream& in, const std::string& source) {
  const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  pt::ptree tree;
  try {
    std::istringstream ss(text);
    pt::ini_parser::read_ini(ss, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(source, static_cast<int>(e.line()), "", e.message());
  }

  Reader r(tree, index_lines(text), source);
  RunConfig c;
  c.source = source;

  r.get("model", "name", c.model);
  if (const auto sec = tree.get_child_optional(pt::ptree::path_type("model", '\0'))) {
    for (const auto& [key, value] : *sec) {
      if (key == "name") continue;
      c.params[key] = r.number("model." + key, boost::algorithm::trim_copy(value.data()));
    }
  }

  r.get("simulation", "x0", c.x0);
  r.get("simulation", "T", c.horizon);
  r.get("simulation", "N", c.steps);
  r.get("simulation", "n_paths", c.n_paths);
  r.get("simulation", "seed", c.seed);
  r.get("simulation", "inverse_scheme", c.inverse_scheme, kSchemes);
  r.get("simulation", "reinvert_every", c.reinvert_every);
  if (!(c.horizon > 0.0)) r.fail("simulation.T", "horizon must be positive");
  if (c.steps < 2) r.fail("simulation.N", "need at least 2 steps");
  if (c.n_paths < 1) r.fail("simulation.n_paths", "need at least one path");
  if (c.reinvert_every < 0) r.fail("simulation.reinvert_every", "must be non-negative");

  r.get("score", "t_eval", c.t_eval);
  c.t_eval_line = r.line_of("score.t_eval");
  c.y_min_line = r.line_of("score.y_min");
  r.get("score", "y_min", c.y_min);
  r.get("score", "y_max", c.y_max);
  r.get("score", "y_count", c.y_count);
  if (auto bw = r.raw("score", "bandwidth"); bw && *bw != "auto") {
    std::vector<double> h;
    r.get("score", "bandwidth", h);
    for (double v : h)
      if (!(v > 0.0)) r.fail("score.bandwidth", "bandwidths must be positive or 'auto'");
    if (h.empty()) r.fail("score.bandwidth", "empty bandwidth list");
    c.bandwidth = h;
  }
  r.get("score", "estimator", c.estimator, kModes);
  r.get("score", "regression", c.regression, kRegressions);
  r.get("score", "knn_neighbors", c.knn_neighbors);
  r.get("score", "min_effective", c.min_effective);
  if (c.y_min.empty() || c.y_max.size() != c.y_min.size() || c.y_count.size() != c.y_min.size())
    r.fail("score.y_count", "y_min, y_max and y_count need the same number of entries");
  for (std::size_t a = 0; a < c.y_min.size(); ++a) {
    if (c.y_count[a] < 1) r.fail("score.y_count", "counts must be positive");
    if (!(c.y_max[a] >= c.y_min[a])) r.fail("score.y_max", "y_max must not be below y_min");
  }
  if (c.knn_neighbors < 0) r.fail("score.knn_neighbors", "must be non-negative");

  r.get("reverse", "score_source", c.score_source, kSources);
  r.get("reverse", "n_samples", c.n_samples);
  r.get("reverse", "score_paths", c.score_paths);
  if (c.n_samples < 2) r.fail("reverse.n_samples", "need at least two samples");

  if (auto v = r.raw("validate", "models")) c.validate_models = r.list(*v);
  r.get("validate", "n_paths", c.validate_paths);
  r.get("validate", "probes", c.probes);
  if (c.probes < 1) r.fail("validate.probes", "need at least one probe");
  for (const auto& name : c.validate_models) {
    const auto names = builtin_model_names();
    if (std::find(names.begin(), names.end(), name) == names.end())
      r.fail("validate.models", "unknown builtin '" + name + "'");
  }

  r.get("output", "dir", c.out_dir);
  r.get("output", "dump_paths", c.dump_paths);
  r.get("output", "dump_breakdown", c.dump_breakdown);
  r.get("output", "ridge", c.ridge);
  r.get("debug", "flip_b_term", c.flip_b_term);
  if (c.dump_paths < 0) r.fail("output.dump_paths", "must be non-negative");

  r.reject_unknown({"model"});

  try {
    const ModelPtr model = c.make_model();
    if (!c.x0.empty() && static_cast<int>(c.x0.size()) != model->state_dim())
      r.fail("simulation.x0", "expected " + std::to_string(model->state_dim()) + " entries");
  } catch (const std::invalid_argument& e) {
    r.fail("model.name", e.what());
  }
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, 0, "", "cannot open configuration file");
  return parse_config(in, path);
}

ModelPtr RunConfig::make_model() const { return make_builtin_model(model, params); }

Vec RunConfig::initial_state(const SdeModel& m) const {
  if (x0.empty()) return Vec::Zero(m.state_dim());
  Vec v(static_cast<int>(x0.size()));
  for (std::size_t a = 0; a < x0.size(); ++a) v(static_cast<int>(a)) = x0[a];
  return v;
}

YGrid RunConfig::y_grid(int m) const {
  const auto pick = [&](const auto& values, int a) { return values.size() == 1 ? values[0] : values.at(a); };
  if (y_min.size() != 1 && static_cast<int>(y_min.size()) != m)
    throw ConfigError(source, y_min_line, "score.y_min", "need 1 or " + std::to_string(m) + " entries for this model");
  YGrid g;
  for (int a = 0; a < m; ++a) {
    g.lo.push_back(pick(y_min, a));
    g.hi.push_back(pick(y_max, a));
    g.count.push_back(pick(y_count, a));
  }
  return g;
}

std::vector<int> RunConfig::evaluation_nodes() const {
  const TimeGrid g = grid();
  if (t_eval.empty()) return {g.steps()};
  std::vector<int> nodes;
  for (double t : t_eval) {
    const auto node = g.node_of(t);
    if (!node) {
      const int near = g.nearest_node(t);
      std::ostringstream msg;
      msg << "t = " << t << " is not a grid node (dt = " << g.dt() << "); nearest node is " << near << " at t = "
          << g.time(near);
      throw ConfigError(source, t_eval_line, "score.t_eval", msg.str());
    }
    if (*node == 0) throw ConfigError(source, t_eval_line, "score.t_eval", "t = 0 has no density to differentiate");
    nodes.push_back(*node);
  }
  return nodes;
}

SimulationOptions RunConfig::simulation_options() const { return {inverse_scheme, reinvert_every}; }

ScoreOptions RunConfig::score_options(int workers) const {
  ScoreOptions o;
  o.mode = estimator;
  o.regression = regression;
  o.bandwidth = bandwidth;
  o.knn_neighbors = knn_neighbors;
  o.min_effective_samples = min_effective;
  o.workers = workers;
  o.covariance.ridge = ridge;
  o.simulation = simulation_options();
  o.skorokhod.flip_b_term = flip_b_term;
  return o;
}

void echo_config(std::ostream& os, const RunConfig& c) {
  const auto old = os.precision(17);
  os << "[model]\nname = " << c.model << '\n';
  const ModelPtr model = c.make_model();
  for (const auto& [k, v] : model->params()) os << k << " = " << v << '\n';
  os << "\n[simulation]\n"
     << "x0 = " << (c.x0.empty() ? std::string("0") : joined(c.x0)) << '\n'
     << "T = " << c.horizon << '\n'
     << "N = " << c.steps << '\n'
     << "n_paths = " << c.n_paths << '\n'
     << "seed = " << c.seed << '\n'
     << "inverse_scheme = " << name_of(kSchemes, c.inverse_scheme) << '\n'
     << "reinvert_every = " << c.reinvert_every << '\n';
  os << "\n[score]\n"
     << "t_eval = " << (c.t_eval.empty() ? std::to_string(c.horizon) : joined(c.t_eval)) << '\n'
     << "y_min = " << joined(c.y_min) << '\n'
     << "y_max = " << joined(c.y_max) << '\n'
     << "y_count = " << joined(c.y_count) << '\n'
     << "bandwidth = " << (c.bandwidth ? joined(*c.bandwidth) : std::string("auto")) << '\n'
     << "estimator = " << name_of(kModes, c.estimator) << '\n'
     << "regression = " << name_of(kRegressions, c.regression) << '\n'
     << "knn_neighbors = " << c.knn_neighbors << '\n'
     << "min_effective = " << c.min_effective << '\n';
  os << "\n[reverse]\n"
     << "score_source = " << name_of(kSources, c.score_source) << '\n'
     << "n_samples = " << c.n_samples << '\n'
     << "score_paths = " << c.score_paths << '\n';
  os << "\n[validate]\n"
     << "models = " << (c.validate_models.empty() ? joined(builtin_model_names()) : joined(c.validate_models)) << '\n'
     << "n_paths = " << c.validate_paths << '\n'
     << "probes = " << c.probes << '\n';
  os << "\n[output]\n"
     << "dir = " << c.out_dir << '\n'
     << "dump_paths = " << c.dump_paths << '\n'
     << "dump_breakdown = " << (c.dump_breakdown ? "true" : "false") << '\n'
     << "ridge = " << (c.ridge ? "true" : "false") << '\n';
  os << "\n[debug]\nflip_b_term = " << (c.flip_b_term ? "true" : "false") << '\n';
  os.precision(old);
}

}  // namespace mscore::app
