#pragma once

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "inrank/data.hpp"
#include "inrank/errors.hpp"
#include "inrank/glrl.hpp"
#include "inrank/inrank.hpp"
#include "inrank/linalg.hpp"
#include "inrank/net.hpp"
#include "inrank/optim.hpp"
#include "inrank/spectrum.hpp"
#include "inrank/theory.hpp"

namespace inrank {

struct TaskSection {
  std::string type = "teacher-student";  // planted | teacher-student | blobs | csv
  std::size_t nx = 16;
  std::size_t ny = 16;
  std::vector<double> spectrum;  // planted; empty = linear_spectrum(a, modes)
  double a = 1.0;
  std::size_t modes = 3;
  std::size_t rank = 4;  // teacher rank
  std::size_t samples = 256;
  double noise = 0.0;
  std::string teacher = "gaussian-product";
  std::size_t classes = 3;
  std::size_t dim = 8;
  std::size_t per_class = 50;
  double separation = 4.0;
  double sigma = 1.0;
  std::string path;  // csv
};

struct ModelSection {
  std::vector<std::size_t> widths;  // hidden widths
  std::string activation = "linear";
  std::string layer_mode = "dense";  // dense | factorized
  std::string init = "kaiming-uniform";
  bool bias = false;
  std::string loss;  // empty = squared for regression, cross-entropy for classification
};

struct TheorySection {
  std::vector<double> a{0.1, 0.5, 1.0};
  std::size_t modes = 10;
  std::size_t nx = 12;
  std::size_t ny = 12;
  std::size_t nh = 10;
  double u0_scale = 0.05;
  double dt = 1e-3;
  std::string integrator = "rk4";
  double lr = 1e-3;  // discrete SGD step; 0 skips the SGD run
  double horizon = 0.0;  // 0 = long enough for every transition
  std::size_t records = 400;
  bool random_mixing = false;
  double tolerance = 0.05;
};

struct LoggingSection {
  std::size_t metrics_every = 1;
  std::size_t spectrum_every = 0;
};

/// Resolved experiment description.
struct ExperimentConfig {
  TaskSection task;
  ModelSection model;
  OptimizerConfig optim;
  std::size_t epochs = 10;
  std::size_t batch = 0;
  InRankConfig inrank;
  LoggingSection logging;
  TheorySection theory;
  GlrlConfig glrl;
  std::uint64_t seed = 0;
  nlohmann::json resolved;  // the JSON document after overrides and seed resolution
};

namespace detail {

/// Reads the keys of one section and rejects anything it did not consume.
class SectionReader {
 public:
  SectionReader(const nlohmann::json& root, std::string name) : name_(std::move(name)) {
    if (!root.contains(name_)) return;
    node_ = &root.at(name_);
    if (!node_->is_object()) throw ConfigError(name_ + ": section must be an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!node_ || !node_->contains(key)) return;
    const nlohmann::json& v = node_->at(key);
    try {
      assign(v, out);
    } catch (const ConfigError& e) {
      throw ConfigError(name_ + "." + key + ": " + e.what());
    }
  }

  void finish() const {
    if (!node_) return;
    for (auto it = node_->begin(); it != node_->end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key '" + name_ + "." + it.key() + "'");
    }
  }

  std::string key(const std::string& k) const { return name_ + "." + k; }

 private:
  static void assign(const nlohmann::json& v, double& out) {
    if (!v.is_number()) throw ConfigError("expected a number");
    out = v.get<double>();
  }
  static void assign(const nlohmann::json& v, std::size_t& out) {
    if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError("expected a nonnegative integer");
    out = v.get<std::size_t>();
  }
  static void assign(const nlohmann::json& v, bool& out) {
    if (!v.is_boolean()) throw ConfigError("expected true or false");
    out = v.get<bool>();
  }
  static void assign(const nlohmann::json& v, std::string& out) {
    if (!v.is_string()) throw ConfigError("expected a string");
    out = v.get<std::string>();
  }
  template <class T>
  static void assign(const nlohmann::json& v, std::vector<T>& out) {
    if (!v.is_array()) throw ConfigError("expected an array");
    std::vector<T> tmp(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) assign(v[i], tmp[i]);
    out = std::move(tmp);
  }

  std::string name_;
  const nlohmann::json* node_ = nullptr;
  std::set<std::string> seen_;
};

inline void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError(key + ": " + what);
}

// Runs a validator and reports its ParameterError as a ConfigError.
template <class F>
void validated(F&& f) {
  try {
    f();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace detail

/// Applies one `section.key=value` override. The value is parsed as JSON when
/// possible and kept as a string otherwise.
inline void apply_override(nlohmann::json& root, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  const std::string path(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  const auto dot = path.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == path.size() || path.find('.', dot + 1) != std::string::npos) {
    if (path == "seed") {
      root["seed"] = nlohmann::json::parse(text, nullptr, false);
      if (root["seed"].is_discarded()) throw ConfigError("seed: expected a nonnegative integer");
      return;
    }
    throw ConfigError("override key '" + path + "' must be section.key");
  }
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  const std::string section = path.substr(0, dot);
  if (root.contains(section) && !root[section].is_object()) throw ConfigError(section + ": section must be an object");
  root[section][path.substr(dot + 1)] = std::move(value);
}

inline nlohmann::json parse_config_text(const std::string& text) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config must be a JSON object");
  return root;
}

/// Builds and validates a config from a JSON document. `seed_override`
/// replaces the document's seed.
inline ExperimentConfig load_config(nlohmann::json root, std::optional<std::uint64_t> seed_override = std::nullopt) {
  static const std::set<std::string> sections{"task", "model", "optim", "inrank", "logging", "theory", "glrl", "seed"};
  for (auto it = root.begin(); it != root.end(); ++it) {
    if (!sections.count(it.key())) throw ConfigError("unknown key '" + it.key() + "'");
  }
  ExperimentConfig c;
  if (root.contains("seed")) {
    const auto& s = root["seed"];
    if (!s.is_number_unsigned()) throw ConfigError("seed: expected a nonnegative integer");
    c.seed = s.get<std::uint64_t>();
  }
  if (seed_override) c.seed = *seed_override;
  root["seed"] = c.seed;

  {
    detail::SectionReader r(root, "task");
    auto& t = c.task;
    r.get("type", t.type);
    r.get("nx", t.nx);
    r.get("ny", t.ny);
    r.get("spectrum", t.spectrum);
    r.get("a", t.a);
    r.get("modes", t.modes);
    r.get("rank", t.rank);
    r.get("samples", t.samples);
    r.get("noise", t.noise);
    r.get("teacher", t.teacher);
    r.get("classes", t.classes);
    r.get("dim", t.dim);
    r.get("per_class", t.per_class);
    r.get("separation", t.separation);
    r.get("sigma", t.sigma);
    r.get("path", t.path);
    r.finish();
    detail::require(t.type == "planted" || t.type == "teacher-student" || t.type == "blobs" || t.type == "csv",
                    r.key("type"), "must be planted, teacher-student, blobs or csv");
    detail::require(t.nx >= 1 && t.ny >= 1, r.key("nx"), "dimensions must be >= 1");
    detail::require(t.noise >= 0.0, r.key("noise"), "must be >= 0");
    detail::require(t.sigma >= 0.0, r.key("sigma"), "must be >= 0");
    detail::require(t.separation >= 0.0, r.key("separation"), "must be >= 0");
    detail::require(t.a > 0.0, r.key("a"), "must be positive");
    detail::require(t.type != "csv" || !t.path.empty(), r.key("path"), "required for csv tasks");
    detail::validated([&] { (void)parse_teacher(t.teacher); });
  }
  {
    detail::SectionReader r(root, "model");
    auto& m = c.model;
    r.get("widths", m.widths);
    r.get("activation", m.activation);
    r.get("layer_mode", m.layer_mode);
    r.get("init", m.init);
    r.get("bias", m.bias);
    r.get("loss", m.loss);
    r.finish();
    for (std::size_t w : m.widths) detail::require(w >= 1, r.key("widths"), "widths must be >= 1");
    detail::require(m.layer_mode == "dense" || m.layer_mode == "factorized", r.key("layer_mode"),
                    "must be dense or factorized");
    try {
      (void)parse_activation(m.activation);
    } catch (const ParameterError& e) {
      throw ConfigError(r.key("activation") + ": " + e.what());
    }
    try {
      (void)InitScheme::parse(m.init);
    } catch (const ParameterError& e) {
      throw ConfigError(r.key("init") + ": " + e.what());
    }
    if (!m.loss.empty()) {
      try {
        (void)parse_loss(m.loss);
      } catch (const ParameterError& e) {
        throw ConfigError(r.key("loss") + ": " + e.what());
      }
    }
  }
  {
    detail::SectionReader r(root, "optim");
    auto& o = c.optim;
    std::string algo = "adam";
    r.get("algo", algo);
    r.get("lr", o.lr);
    r.get("beta1", o.beta1);
    r.get("beta2", o.beta2);
    r.get("eps", o.eps);
    r.get("weight_decay", o.weight_decay);
    r.get("momentum", o.momentum);
    r.get("warmup_steps", o.warmup_steps);
    r.get("epochs", c.epochs);
    r.get("batch", c.batch);
    r.finish();
    try {
      o.kind = parse_optimizer(algo);
    } catch (const ParameterError& e) {
      throw ConfigError(r.key("algo") + ": " + e.what());
    }
    detail::require(o.lr > 0.0, r.key("lr"), "must be positive");
    detail::require(c.epochs >= 1, r.key("epochs"), "must be >= 1");
    detail::validated([&] { o.validate(); });
  }
  {
    detail::SectionReader r(root, "inrank");
    auto& i = c.inrank;
    std::string measure = "sum-of-squares";
    r.get("r0", i.r0);
    r.get("b", i.b);
    r.get("alpha", i.alpha);
    r.get("eps", i.eps);
    r.get("check_interval", i.check_interval);
    r.get("efficient", i.efficient);
    r.get("fuse_after", i.fuse_after);
    r.get("measure", measure);
    r.finish();
    try {
      i.measure = parse_measure(measure);
    } catch (const ParameterError& e) {
      throw ConfigError(r.key("measure") + ": " + e.what());
    }
    detail::validated([&] { i.validate(); });
  }
  {
    detail::SectionReader r(root, "logging");
    r.get("metrics_every", c.logging.metrics_every);
    r.get("spectrum_every", c.logging.spectrum_every);
    r.finish();
    detail::require(c.logging.metrics_every >= 1, r.key("metrics_every"), "must be >= 1");
  }
  {
    detail::SectionReader r(root, "theory");
    auto& t = c.theory;
    r.get("a", t.a);
    r.get("modes", t.modes);
    r.get("nx", t.nx);
    r.get("ny", t.ny);
    r.get("nh", t.nh);
    r.get("u0_scale", t.u0_scale);
    r.get("dt", t.dt);
    r.get("integrator", t.integrator);
    r.get("lr", t.lr);
    r.get("horizon", t.horizon);
    r.get("records", t.records);
    r.get("random_mixing", t.random_mixing);
    r.get("tolerance", t.tolerance);
    r.finish();
    detail::require(!t.a.empty(), r.key("a"), "needs at least one value");
    for (double a : t.a) detail::require(a > 0.0, r.key("a"), "values must be positive");
    detail::require(t.modes >= 1 && t.modes <= t.nh, r.key("modes"), "must be in [1, nh]");
    detail::require(t.nh <= std::min(t.nx, t.ny), r.key("nh"), "must not exceed min(nx, ny)");
    detail::require(t.u0_scale > 0.0, r.key("u0_scale"), "must be positive");
    detail::require(t.dt > 0.0, r.key("dt"), "must be positive");
    detail::require(t.lr >= 0.0, r.key("lr"), "must be >= 0");
    detail::require(t.horizon >= 0.0, r.key("horizon"), "must be >= 0");
    detail::require(t.records >= 1, r.key("records"), "must be >= 1");
    detail::require(t.tolerance > 0.0, r.key("tolerance"), "must be positive");
    try {
      (void)parse_integrator(t.integrator);
    } catch (const ParameterError& e) {
      throw ConfigError(r.key("integrator") + ": " + e.what());
    }
  }
  {
    detail::SectionReader r(root, "glrl");
    auto& g = c.glrl;
    r.get("depth", g.depth);
    r.get("eps", g.eps);
    r.get("lr", g.lr);
    r.get("steps_per_width", g.steps_per_width);
    r.get("tol", g.tol);
    r.get("plateau_mode", g.plateau_mode);
    r.get("plateau_window", g.plateau_window);
    r.get("plateau_tol", g.plateau_tol);
    r.get("max_width", g.max_width);
    r.get("record_every", g.record_every);
    r.finish();
    detail::validated([&] { g.validate(); });
  }
  c.resolved = std::move(root);
  return c;
}

/// Seed precedence: config < INRANK_LAB_SEED < explicit flag.
inline std::optional<std::uint64_t> resolve_seed_override(std::optional<std::uint64_t> flag) {
  if (flag) return flag;
  if (const char* env = std::getenv("INRANK_LAB_SEED"); env && *env) {
    const std::string s(env);
    std::uint64_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
      throw ConfigError("INRANK_LAB_SEED: expected a nonnegative integer, got '" + s + "'");
    }
    return v;
  }
  return std::nullopt;
}

}  // namespace inrank
