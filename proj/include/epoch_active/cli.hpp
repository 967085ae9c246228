#pragma once

// Experiment harness: JSON configuration, the run / verify / theta / report
// commands, CSV output and binary run artifacts.

#include "epoch_active/assumption.hpp"
#include "epoch_active/evaluation.hpp"
#include "epoch_active/learner.hpp"

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace epoch_active::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

enum ExitCode : int { exit_ok = 0, exit_runtime = 1, exit_config = 2, exit_violations = 3 };

// ---------------------------------------------------------------------------
// Logging (EPOCH_ACTIVE_LOG = error | info | debug)
// ---------------------------------------------------------------------------

enum class LogLevel { error = 0, info = 1, debug = 2 };

inline LogLevel log_level() {
  const char* v = std::getenv("EPOCH_ACTIVE_LOG");
  if (v == nullptr) return LogLevel::error;
  const std::string s(v);
  if (s == "debug") return LogLevel::debug;
  if (s == "info") return LogLevel::info;
  return LogLevel::error;
}

inline void log(LogLevel level, const std::string& msg) {
  static std::mutex mu;
  if (static_cast<int>(level) > static_cast<int>(log_level())) return;
  static constexpr const char* names[] = {"error", "info", "debug"};
  std::lock_guard<std::mutex> lock(mu);
  std::cerr << "[" << names[static_cast<int>(level)] << "] " << msg << '\n';
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& msg, std::size_t line = 0)
      : std::runtime_error(msg), field(std::move(field)), line(line) {}
  std::string field;
  std::size_t line;  ///< 1-based, 0 when unknown
};

/// psi for the verification suite. "auto" picks the family's known calibration function.
struct PsiSpec {
  std::string kind = "auto";  ///< auto | identity | linear | shifted
  double slope = 1.0;         ///< linear: psi(t) = slope * t
  double shift = 0.0;         ///< shifted: psi(t) = (t - shift)_+ / (1 - shift)

  PsiSpec resolved(const InstanceSpec& inst) const {
    if (kind != "auto") return *this;
    PsiSpec r;
    switch (inst.kind) {
      case InstanceKind::example1:
        r.kind = "linear";
        r.slope = 1.0 / std::sqrt(static_cast<double>(inst.d));
        break;
      case InstanceKind::linf_approx_realizable:
        r.kind = "linear";
        r.slope = 1.0 - inst.epsilon / inst.gamma;
        break;
      default:
        r.kind = "identity";
    }
    return r;
  }

  Psi make() const {
    if (kind == "identity") return [](double t) { return t; };
    if (kind == "linear") return [s = slope](double t) { return s * t; };
    if (kind == "shifted") return [a = shift](double t) { return std::max(0.0, t - a) / (1.0 - a); };
    throw std::invalid_argument("psi kind must be resolved before use");
  }
};

struct VerifySettings {
  PsiSpec psi;
  std::size_t samples = 100'000;
  std::size_t fit_samples = 50'000;
  std::size_t bound_trials = 5;
  double gamma_min = 1e-3;
  std::size_t gamma_points = 200;
};

struct ThetaSettings {
  std::vector<double> gamma_grid{0.1};
  std::vector<double> epsilon_grid{0.1};
  std::size_t mc = 2000;
  std::size_t restarts = 4;
  ThetaNorm norm = ThetaNorm::as_written;
};

struct ExperimentConfig {
  InstanceSpec instance;
  ClassSpec cls;
  SurrogateSpec surrogate;
  double score_bound = 0.0;  ///< logistic only
  LearnerConfig learner;
  std::vector<std::size_t> sweep{1023};
  std::size_t trials = 1;
  std::string output_dir = "results";
  std::size_t mc_eval = 10'000;
  std::size_t fstar_samples = 50'000;
  std::uint64_t seed = 0;
  bool record_wall_time = true;
  bool write_artifacts = true;
  VerifySettings verify;
  ThetaSettings theta;
};

namespace detail {

inline std::size_t line_of(const std::string& text, const std::string& path) {
  if (text.empty()) return 0;
  std::size_t pos = 0;
  std::stringstream ss(path);
  std::string part;
  while (std::getline(ss, part, '.')) {
    const auto br = part.find('[');
    if (br != std::string::npos) part = part.substr(0, br);
    const auto at = text.find("\"" + part + "\"", pos);
    if (at == std::string::npos) break;
    pos = at;
  }
  if (pos == 0) return 0;
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<long>(pos), '\n'));
}

/// Strict reader over one JSON object: typed getters, unknown-key detection.
class Section {
 public:
  Section(const json& j, std::string path, const std::string& text) : j_(j), path_(std::move(path)), text_(text) {
    if (!j_.is_object()) fail("", "must be an object");
  }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    const std::string field = key.empty() ? path_ : (path_.empty() ? key : path_ + "." + key);
    throw ConfigError(field, msg, line_of(text_, field));
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    const std::string p = path_.empty() ? key : path_ + "." + key;
    return j_.contains(key) ? Section(j_.at(key), p, text_) : Section(empty, p, text_);
  }

  double number(const std::string& key, double def) {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_number()) fail(key, "expected a number");
    return v.get<double>();
  }

  std::size_t count(const std::string& key, std::size_t def) {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) fail(key, "expected a non-negative integer");
    return v.get<std::size_t>();
  }

  std::uint64_t u64(const std::string& key, std::uint64_t def) {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      fail(key, "expected an unsigned integer");
    }
    return v.get<std::uint64_t>();
  }

  bool boolean(const std::string& key, bool def) {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_boolean()) fail(key, "expected true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& key, const std::string& def) {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_string()) fail(key, "expected a string");
    return v.get<std::string>();
  }

  std::vector<double> numbers(const std::string& key, const std::vector<double>& def) {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_array()) fail(key, "expected an array of numbers");
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number()) fail(key, "expected an array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  /// Rejects keys nobody asked for (typos).
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) fail(it.key(), "unknown field");
    }
  }

  const std::string& path() const { return path_; }

 private:
  const json& j_;
  std::string path_;
  const std::string& text_;
  std::set<std::string> seen_;
};

template <typename F>
auto wrap_invalid(Section& s, const std::string& key, F&& f) {
  try {
    return f();
  } catch (const std::invalid_argument& e) {
    s.fail(key, e.what());
  }
}

}  // namespace detail

inline ExperimentConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1 + static_cast<std::size_t>(
                               std::count(text.begin(), text.begin() + static_cast<long>(std::min(e.byte, text.size())), '\n'));
    throw ConfigError("", std::string("malformed JSON: ") + e.what(), line);
  }
  detail::Section top(root, "", text);
  ExperimentConfig cfg;

  {
    auto s = top.child("instance");
    InstanceSpec& in = cfg.instance;
    in.kind = detail::wrap_invalid(s, "kind", [&] { return instance_kind_from_string(s.string("kind", "example1")); });
    in.d = s.count("d", in.kind == InstanceKind::example2 ? 1 : 2);
    in.K = s.count("K", 2);
    in.gamma = s.number("gamma", in.gamma);
    in.beta = s.number("beta", in.beta);
    in.epsilon = s.number("epsilon", in.epsilon);
    in.c = s.number("c", in.c);
    in.delta_prime = s.number("delta_prime", in.delta_prime);
    in.seed = s.u64("seed", 0);
    s.finish();
    detail::wrap_invalid(s, "", [&] { in.validate(); return 0; });
  }

  SurrogateKind sk = SurrogateKind::squared;
  {
    auto s = top.child("surrogate");
    sk = detail::wrap_invalid(s, "kind", [&] { return surrogate_kind_from_string(s.string("kind", "squared")); });
    cfg.score_bound = s.number("score_bound", 0.0);
    s.finish();
  }
  {
    auto s = top.child("class");
    const std::string def = (cfg.instance.K == 2 && sk == SurrogateKind::squared) ? "binary_ball_linear" : "multiclass_linear";
    cfg.cls.kind = detail::wrap_invalid(s, "kind", [&] { return class_kind_from_string(s.string("kind", def)); });
    cfg.cls.d = s.count("d", cfg.instance.d);
    cfg.cls.K = s.count("K", cfg.instance.K);
    cfg.cls.radius = s.number("radius", 1.0);
    s.finish();
    if (cfg.cls.d != cfg.instance.d) s.fail("d", "must match instance.d");
    if (cfg.cls.K != cfg.instance.K) s.fail("K", "must match instance.K");
    detail::wrap_invalid(s, "", [&] { cfg.cls.validate(); return 0; });
  }
  {
    detail::Section s = top.child("surrogate");
    if (sk == SurrogateKind::squared) {
      cfg.surrogate = squared_surrogate();
    } else {
      if (cfg.score_bound <= 0.0) cfg.score_bound = cfg.cls.radius * cfg.cls.x_bound;
      cfg.surrogate = logistic_surrogate(cfg.score_bound, cfg.cls.K);
    }
    detail::wrap_invalid(s, "kind", [&] { require_compatible(cfg.cls, cfg.surrogate); return 0; });
  }
  {
    auto s = top.child("learner");
    LearnerConfig& l = cfg.learner;
    l.delta = s.number("delta", l.delta);
    if (!(l.delta > 0.0 && l.delta < 1.0)) s.fail("delta", "must lie in (0, 1)");
    l.b_constant = s.number("b_constant", l.b_constant);
    if (!(l.b_constant > 0.0) || !std::isfinite(l.b_constant)) s.fail("b_constant", "must be positive and finite");
    {
      auto c = s.child("comp");
      CompFormula f = default_comp(cfg.cls);
      const std::string kind = c.string("kind", "pdim_log");
      if (kind == "pdim_log") f.kind = CompKind::pdim_log;
      else if (kind == "custom_constant") f.kind = CompKind::custom_constant;
      else c.fail("kind", "expected pdim_log or custom_constant");
      f.c0 = c.number("c0", f.c0);
      f.pdim = c.number("pdim", f.pdim);
      if (!(f.c0 > 0.0)) c.fail("c0", "must be positive");
      if (!(f.pdim > 0.0)) c.fail("pdim", "must be positive");
      c.finish();
      l.comp = f;
    }
    {
      auto o = s.child("oracle");
      OracleConfig& oc = l.oracle_cfg;
      oc.max_iters = o.count("max_iters", oc.max_iters);
      const std::string rule = o.string("step_rule", "backtracking");
      if (rule == "backtracking") oc.step_rule = StepRule::backtracking;
      else if (rule == "fixed") oc.step_rule = StepRule::fixed;
      else o.fail("step_rule", "expected backtracking or fixed");
      oc.step_size = o.number("step_size", oc.step_size);
      oc.grad_tol = o.number("grad_tol", oc.grad_tol);
      o.finish();
      detail::wrap_invalid(o, "", [&] { oc.validate(); return 0; });
    }
    {
      auto g = s.child("disagree");
      DisagreeConfig& dc = l.disagree_cfg;
      dc.restarts = g.count("restarts", dc.restarts);
      dc.max_iters = g.count("max_iters", dc.max_iters);
      dc.tol = g.number("tol", dc.tol);
      dc.conservative_on_uncertain = g.boolean("conservative_on_uncertain", dc.conservative_on_uncertain);
      g.finish();
      detail::wrap_invalid(g, "", [&] { dc.validate(); return 0; });
    }
    s.finish();
  }

  {
    std::vector<double> sweep;
    const auto raw = top.numbers("sweep", {1023.0});
    if (raw.empty()) top.fail("sweep", "must not be empty");
    cfg.sweep.clear();
    for (double v : raw) {
      if (v < 3.0 || v != std::floor(v)) top.fail("sweep", "entries must be integers >= 3");
      if (!cfg.sweep.empty() && static_cast<std::size_t>(v) <= cfg.sweep.back()) {
        top.fail("sweep", "must be strictly increasing");
      }
      cfg.sweep.push_back(static_cast<std::size_t>(v));
    }
  }
  cfg.trials = top.count("trials", 1);
  if (cfg.trials < 1) top.fail("trials", "must be >= 1");
  cfg.output_dir = top.string("output_dir", cfg.output_dir);
  cfg.mc_eval = top.count("mc_eval", cfg.mc_eval);
  if (cfg.mc_eval < 1) top.fail("mc_eval", "must be >= 1");
  cfg.fstar_samples = top.count("fstar_samples", cfg.fstar_samples);
  if (cfg.fstar_samples < 1) top.fail("fstar_samples", "must be >= 1");
  cfg.seed = top.u64("seed", 0);
  cfg.learner.seed = cfg.seed;
  cfg.record_wall_time = top.boolean("record_wall_time", true);
  cfg.write_artifacts = top.boolean("write_artifacts", true);

  {
    auto s = top.child("verify");
    auto p = s.child("psi");
    cfg.verify.psi.kind = p.string("kind", "auto");
    cfg.verify.psi.slope = p.number("slope", 1.0);
    cfg.verify.psi.shift = p.number("shift", 0.0);
    p.finish();
    const auto& k = cfg.verify.psi.kind;
    if (k != "auto" && k != "identity" && k != "linear" && k != "shifted") {
      p.fail("kind", "expected auto, identity, linear or shifted");
    }
    if (!(cfg.verify.psi.slope > 0.0)) p.fail("slope", "must be positive");
    if (!(cfg.verify.psi.shift >= 0.0 && cfg.verify.psi.shift < 1.0)) p.fail("shift", "must lie in [0, 1)");
    cfg.verify.samples = s.count("samples", cfg.verify.samples);
    cfg.verify.fit_samples = s.count("fit_samples", cfg.verify.fit_samples);
    cfg.verify.bound_trials = s.count("bound_trials", cfg.verify.bound_trials);
    cfg.verify.gamma_min = s.number("gamma_min", cfg.verify.gamma_min);
    cfg.verify.gamma_points = s.count("gamma_points", cfg.verify.gamma_points);
    s.finish();
    if (cfg.verify.samples < 1) s.fail("samples", "must be >= 1");
    if (cfg.verify.fit_samples < 1) s.fail("fit_samples", "must be >= 1");
    if (!(cfg.verify.gamma_min > 0.0 && cfg.verify.gamma_min <= 1.0)) s.fail("gamma_min", "must lie in (0, 1]");
    if (cfg.verify.gamma_points < 1) s.fail("gamma_points", "must be >= 1");
  }
  {
    auto s = top.child("theta");
    ThetaSettings& t = cfg.theta;
    t.gamma_grid = s.numbers("gamma_grid", t.gamma_grid);
    t.epsilon_grid = s.numbers("epsilon_grid", t.epsilon_grid);
    t.mc = s.count("mc", t.mc);
    t.restarts = s.count("restarts", t.restarts);
    t.norm = detail::wrap_invalid(s, "theta_norm", [&] { return theta_norm_from_string(s.string("theta_norm", "as_written")); });
    s.finish();
    for (double g : t.gamma_grid) {
      if (!(g > 0.0)) s.fail("gamma_grid", "entries must be positive");
    }
    for (double e : t.epsilon_grid) {
      if (!(e > 0.0)) s.fail("epsilon_grid", "entries must be positive");
    }
    if (t.gamma_grid.empty() || t.epsilon_grid.empty()) s.fail("gamma_grid", "grids must not be empty");
    if (t.mc < 1) s.fail("mc", "must be >= 1");
    if (t.restarts < 1) s.fail("restarts", "must be >= 1");
  }
  top.finish();
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

/// Fully materialized configuration (every default written out).
inline json to_json(const ExperimentConfig& c) {
  const CompFormula comp = c.learner.comp.value_or(default_comp(c.cls));
  json j;
  j["instance"] = {{"kind", to_string(c.instance.kind)}, {"d", c.instance.d}, {"K", c.instance.K},
                   {"gamma", c.instance.gamma}, {"beta", c.instance.beta}, {"epsilon", c.instance.epsilon},
                   {"c", c.instance.c}, {"delta_prime", c.instance.delta_prime}, {"seed", c.instance.seed}};
  j["class"] = {{"kind", to_string(c.cls.kind)}, {"d", c.cls.d}, {"K", c.cls.K}, {"radius", c.cls.radius}};
  j["surrogate"] = {{"kind", to_string(c.surrogate.kind)}};
  if (c.surrogate.kind == SurrogateKind::logistic) j["surrogate"]["score_bound"] = c.score_bound;
  j["learner"] = {
      {"delta", c.learner.delta},
      {"b_constant", c.learner.b_constant},
      {"comp",
       {{"kind", comp.kind == CompKind::pdim_log ? "pdim_log" : "custom_constant"}, {"c0", comp.c0}, {"pdim", comp.pdim}}},
      {"oracle",
       {{"max_iters", c.learner.oracle_cfg.max_iters},
        {"step_rule", c.learner.oracle_cfg.step_rule == StepRule::backtracking ? "backtracking" : "fixed"},
        {"step_size", c.learner.oracle_cfg.step_size},
        {"grad_tol", c.learner.oracle_cfg.grad_tol}}},
      {"disagree",
       {{"restarts", c.learner.disagree_cfg.restarts},
        {"max_iters", c.learner.disagree_cfg.max_iters},
        {"tol", c.learner.disagree_cfg.tol},
        {"conservative_on_uncertain", c.learner.disagree_cfg.conservative_on_uncertain}}}};
  j["sweep"] = c.sweep;
  j["trials"] = c.trials;
  j["output_dir"] = c.output_dir;
  j["mc_eval"] = c.mc_eval;
  j["fstar_samples"] = c.fstar_samples;
  j["seed"] = c.seed;
  j["record_wall_time"] = c.record_wall_time;
  j["write_artifacts"] = c.write_artifacts;
  j["verify"] = {{"psi", {{"kind", c.verify.psi.kind}, {"slope", c.verify.psi.slope}, {"shift", c.verify.psi.shift}}},
                 {"samples", c.verify.samples},
                 {"fit_samples", c.verify.fit_samples},
                 {"bound_trials", c.verify.bound_trials},
                 {"gamma_min", c.verify.gamma_min},
                 {"gamma_points", c.verify.gamma_points}};
  j["theta"] = {{"gamma_grid", c.theta.gamma_grid},
                {"epsilon_grid", c.theta.epsilon_grid},
                {"mc", c.theta.mc},
                {"restarts", c.theta.restarts},
                {"theta_norm", to_string(c.theta.norm)}};
  return j;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline constexpr const char* kResultsHeader =
    "trial,n,N,excess_class_risk,stderr,excess_surrogate_risk,query_mass_final,wall_ms,seed";

inline std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline std::string timestamp_comment(const std::string& command) {
  const std::time_t now = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return "# epoch_active " + command + " " + buf;
}

struct ResultRow {
  std::size_t trial = 0;
  std::size_t n = 0;
  std::size_t N = 0;
  double excess_class_risk = 0.0;
  double stderr_class = 0.0;
  double excess_surrogate_risk = 0.0;
  double query_mass_final = 0.0;
  double wall_ms = 0.0;
  std::uint64_t seed = 0;
};

inline std::string format_row(const ResultRow& r) {
  return std::to_string(r.trial) + "," + std::to_string(r.n) + "," + std::to_string(r.N) + "," +
         num(r.excess_class_risk) + "," + num(r.stderr_class) + "," + num(r.excess_surrogate_risk) + "," +
         num(r.query_mass_final) + "," + num(r.wall_ms) + "," + std::to_string(r.seed);
}

/// Parses results.csv, skipping `#` comment lines and the header.
inline std::vector<ResultRow> read_results(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::vector<ResultRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("trial,", 0) == 0) continue;
    std::stringstream ss(line);
    std::vector<std::string> f;
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 9) throw std::runtime_error("malformed results row: " + line);
    rows.push_back({std::stoul(f[0]), std::stoul(f[1]), std::stoul(f[2]), std::stod(f[3]), std::stod(f[4]),
                    std::stod(f[5]), std::stod(f[6]), std::stod(f[7]), std::stoull(f[8])});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Run artifacts: "EPAR", u32 version, u64 config length, config JSON,
// u32 epochs, u32 params per epoch, then per epoch u32 index, u8 carried,
// u64 queried, P doubles.
// ---------------------------------------------------------------------------

struct ArtifactEpoch {
  std::uint32_t index = 0;
  bool carried = false;
  std::uint64_t queried = 0;
  Vector params;
};

namespace detail {

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T take(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw std::runtime_error("truncated artifact");
  return v;
}

}  // namespace detail

inline void write_artifact(const fs::path& path, const json& config, const StitchedClassifier& sc) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write artifact '" + path.string() + "'");
  out.write("EPAR", 4);
  detail::put<std::uint32_t>(out, 1);
  const std::string text = config.dump();
  detail::put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(sc.epochs.size()));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(sc.cls.num_params()));
  for (const auto& e : sc.epochs) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(e.index));
    detail::put<std::uint8_t>(out, e.carried ? 1 : 0);
    detail::put<std::uint64_t>(out, e.queried_count);
    out.write(reinterpret_cast<const char*>(e.fitted.theta.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(e.fitted.theta.size())));
  }
}

inline std::pair<json, std::vector<ArtifactEpoch>> read_artifact(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open artifact '" + path.string() + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "EPAR") throw std::runtime_error("not an epoch_active artifact");
  if (detail::take<std::uint32_t>(in) != 1) throw std::runtime_error("unsupported artifact version");
  const auto len = detail::take<std::uint64_t>(in);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  const auto count = detail::take<std::uint32_t>(in);
  const auto P = detail::take<std::uint32_t>(in);
  std::vector<ArtifactEpoch> epochs;
  for (std::uint32_t i = 0; i < count; ++i) {
    ArtifactEpoch e;
    e.index = detail::take<std::uint32_t>(in);
    e.carried = detail::take<std::uint8_t>(in) != 0;
    e.queried = detail::take<std::uint64_t>(in);
    e.params.resize(P);
    in.read(reinterpret_cast<char*>(e.params.data()), static_cast<std::streamsize>(sizeof(double) * P));
    if (!in) throw std::runtime_error("truncated artifact");
    epochs.push_back(std::move(e));
  }
  return {json::parse(text), std::move(epochs)};
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct Overrides {
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  std::optional<std::vector<double>> gamma_grid;
  std::optional<std::vector<double>> epsilon_grid;
};

inline void apply(ExperimentConfig& cfg, const Overrides& o) {
  if (o.out) cfg.output_dir = *o.out;
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.learner.seed = *o.seed;
  }
  if (o.gamma_grid) cfg.theta.gamma_grid = *o.gamma_grid;
  if (o.epsilon_grid) cfg.theta.epsilon_grid = *o.epsilon_grid;
  for (double g : cfg.theta.gamma_grid) {
    if (!(g > 0.0)) throw ConfigError("theta.gamma_grid", "entries must be positive");
  }
  for (double e : cfg.theta.epsilon_grid) {
    if (!(e > 0.0)) throw ConfigError("theta.epsilon_grid", "entries must be positive");
  }
}

inline int report_config_error(const ConfigError& e, const std::string& path) {
  std::cerr << "config error: " << path;
  if (e.line > 0) std::cerr << ":" << e.line;
  if (!e.field.empty()) std::cerr << ": field '" << e.field << "'";
  std::cerr << ": " << e.what() << '\n';
  return exit_config;
}

/// Loads and validates the config; on failure prints a diagnostic and returns exit_config.
inline std::optional<ExperimentConfig> prepare(const std::string& path, const Overrides& o, int& code) {
  try {
    ExperimentConfig cfg = load_config(path);
    apply(cfg, o);
    fs::create_directories(cfg.output_dir);
    std::ofstream(fs::path(cfg.output_dir) / "config.resolved.json") << to_json(cfg).dump(2) << '\n';
    return cfg;
  } catch (const ConfigError& e) {
    code = report_config_error(e, path);
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    code = exit_runtime;
  }
  return std::nullopt;
}

/// Best-in-class comparator on the whole marginal.
inline Params comparator(const ExperimentConfig& cfg) {
  return best_in_class(cfg.cls, cfg.surrogate, cfg.instance, QueryRegion::whole(), cfg.fstar_samples,
                       mix_seed(cfg.seed, 0xF5), {20'000, StepRule::backtracking, 1.0, 1e-11, 0})
      .params;
}

/// One (trial, n) cell: the active row, then the passive row at the matched label count.
inline std::pair<ResultRow, ResultRow> run_cell(const ExperimentConfig& cfg, const Params& f_star, std::size_t trial,
                                                std::size_t n, const json& resolved) {
  const std::uint64_t seed = mix_seed(cfg.seed, trial);
  LearnerConfig lc = cfg.learner;
  lc.n = n;
  lc.seed = seed;
  const LearnerResult res = run(cfg.instance, cfg.cls, cfg.surrogate, lc, simulation_oracle(cfg.instance, seed));
  const StitchedClassifier& sc = res.classifier;
  const DisagreeConfig& dc = lc.disagree_cfg;

  ResultRow a;
  a.trial = trial;
  a.n = n;
  a.N = res.trace.total_queries;
  const Estimate risk = excess_class_risk([&](const Input& x) { return predict(sc, x, dc); }, cfg.instance,
                                          cfg.mc_eval, seed);
  a.excess_class_risk = risk.value;
  a.stderr_class = risk.std_error;
  a.excess_surrogate_risk = excess_surrogate_risk_vs(cfg.cls, cfg.surrogate, sc.epochs.back().fitted, f_star,
                                                     cfg.instance, QueryRegion::whole(), cfg.mc_eval, seed)
                                .value;
  a.query_mass_final = query_mass(sc, sc.epochs.size(), cfg.mc_eval, cfg.instance, dc, seed).value;
  a.wall_ms = cfg.record_wall_time ? res.trace.wall_ms : 0.0;
  a.seed = seed;

  if (cfg.write_artifacts) {
    const fs::path dir = fs::path(cfg.output_dir) / "runs";
    fs::create_directories(dir);
    json meta = resolved;
    meta.erase("output_dir");  // keeps artifacts identical across output locations
    meta["run"] = {{"trial", trial}, {"n", n}, {"seed", seed}, {"queries", a.N}};
    write_artifact(dir / ("t" + std::to_string(trial) + "_n" + std::to_string(n) + ".artifact"), meta, sc);
  }

  const auto start = std::chrono::steady_clock::now();
  const std::size_t labels = std::max<std::size_t>(a.N, 1);
  const PassiveResult pr =
      passive_baseline(cfg.instance, cfg.cls, cfg.surrogate, labels, lc.oracle_cfg, f_star, cfg.mc_eval, seed);
  ResultRow p;
  p.trial = trial;
  p.n = n;
  p.N = labels;
  p.excess_class_risk = pr.report.excess_class_risk.value;
  p.stderr_class = pr.report.excess_class_risk.std_error;
  p.excess_surrogate_risk = pr.report.excess_surrogate_risk.value;
  p.query_mass_final = 1.0;
  p.wall_ms = cfg.record_wall_time
                  ? std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count()
                  : 0.0;
  p.seed = seed;
  log(LogLevel::info, "trial " + std::to_string(trial) + " n=" + std::to_string(n) + " N=" + std::to_string(a.N) +
                          " risk=" + num(a.excess_class_risk) + " passive=" + num(p.excess_class_risk));
  return {a, p};
}

inline int cmd_run(const std::string& config_path, const Overrides& o = {}) {
  int code = exit_ok;
  auto cfg_opt = prepare(config_path, o, code);
  if (!cfg_opt) return code;
  const ExperimentConfig& cfg = *cfg_opt;
  const json resolved = to_json(cfg);

  Params f_star;
  try {
    f_star = comparator(cfg);
  } catch (const std::exception& e) {
    log(LogLevel::error, std::string("comparator fit failed: ") + e.what());
    return exit_runtime;
  }

  const std::size_t cells = cfg.trials * cfg.sweep.size();
  std::vector<std::optional<std::pair<ResultRow, ResultRow>>> slots(cells);
  std::vector<std::string> errors(cells);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells; i = next++) {
      const std::size_t trial = i / cfg.sweep.size();
      const std::size_t n = cfg.sweep[i % cfg.sweep.size()];
      try {
        slots[i] = run_cell(cfg, f_star, trial, n, resolved);
      } catch (const std::exception& e) {
        errors[i] = e.what();
        log(LogLevel::error, "trial " + std::to_string(trial) + " n=" + std::to_string(n) + ": " + e.what());
      }
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(o.jobs, cells));
  std::vector<std::thread> pool;
  for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  // Rows in (trial, n, mode) order; failed cells are left out.
  std::ofstream out(fs::path(cfg.output_dir) / "results.csv");
  out << timestamp_comment("run") << '\n' << kResultsHeader << '\n';
  bool failed = false;
  for (std::size_t i = 0; i < cells; ++i) {
    if (!slots[i]) {
      failed = true;
      continue;
    }
    out << format_row(slots[i]->first) << '\n' << format_row(slots[i]->second) << '\n';
  }
  out.flush();
  return failed ? exit_runtime : exit_ok;
}

inline int cmd_verify(const std::string& config_path, const Overrides& o = {}) {
  int code = exit_ok;
  auto cfg_opt = prepare(config_path, o, code);
  if (!cfg_opt) return code;
  const ExperimentConfig& cfg = *cfg_opt;
  const InstanceSpec& inst = cfg.instance;
  const PsiSpec psi_spec = cfg.verify.psi.resolved(inst);
  const Psi psi = psi_spec.make();
  const auto grid = geometric_grid(cfg.verify.gamma_min, 1.0, cfg.verify.gamma_points);

  std::ofstream out(fs::path(cfg.output_dir) / "verify.csv");
  out << timestamp_comment("verify") << '\n' << "check,subject,points,violations,worst_deficit,lhs,rhs,tolerance,pass\n";
  bool ok = true;
  try {
    AssumptionReport report;
    std::vector<BoundCheck> bounds;
    if (inst.kind == InstanceKind::example2) {
      const auto c = example2_candidates(inst);
      report = verify_assumption_finite_class(inst, cfg.surrogate, c, psi, {QueryRegion::whole()});
      bounds.push_back(check_passive_bound_scores(c[1], c[0], inst, cfg.surrogate, psi, grid, 1, cfg.seed));
    } else {
      const auto regions = inst.kind == InstanceKind::example1 ? symmetric_axis_regions(inst.d)
                                                               : std::vector<QueryRegion>{QueryRegion::whole()};
      AssumptionOptions ao;
      ao.samples = cfg.verify.samples;
      ao.fit_samples = cfg.verify.fit_samples;
      ao.seed = cfg.seed;
      report = verify_assumption(inst, cfg.cls, cfg.surrogate, psi, regions, ao);
      const Params f_star = comparator(cfg);
      Rng rng = make_stream(cfg.seed, Stream::search, 0xB0);
      for (std::size_t i = 0; i <= cfg.verify.bound_trials; ++i) {
        const Params f = i == 0 ? zero_params(cfg.cls) : Params(epoch_active::detail::random_start(cfg.cls, rng));
        bounds.push_back(check_passive_bound(f, f_star, inst, cfg.cls, cfg.surrogate, psi, grid, cfg.mc_eval,
                                             mix_seed(cfg.seed, i)));
      }
    }
    for (const auto& r : report.regions) {
      out << "assumption," << r.name << "," << r.points << "," << r.violations << ","
          << (r.skipped ? std::string("") : num(r.worst_deficit)) << ",,,,"
          << (r.skipped ? "skipped" : (r.violations == 0 ? "true" : "false")) << '\n';
      ok = ok && r.violations == 0;
    }
    for (std::size_t i = 0; i < bounds.size(); ++i) {
      const auto& b = bounds[i];
      out << "bound,f" << i << ",,,," << num(b.lhs.value) << "," << num(b.min_rhs) << "," << num(b.tolerance) << ","
          << (b.pass ? "true" : "false") << '\n';
      ok = ok && b.pass;
    }
  } catch (const std::exception& e) {
    log(LogLevel::error, std::string("verify failed: ") + e.what());
    return exit_runtime;
  }
  log(LogLevel::info, std::string("verify: ") + (ok ? "no violations" : "violations found"));
  return ok ? exit_ok : exit_violations;
}

inline int cmd_theta(const std::string& config_path, const Overrides& o = {}) {
  int code = exit_ok;
  auto cfg_opt = prepare(config_path, o, code);
  if (!cfg_opt) return code;
  const ExperimentConfig& cfg = *cfg_opt;
  try {
    const Params f_star = comparator(cfg);
    std::ofstream out(fs::path(cfg.output_dir) / "theta.csv");
    out << timestamp_comment("theta") << '\n' << "gamma,epsilon,value,best_gamma,best_epsilon,regularized,theta_norm\n";
    ThetaOptions opt;
    opt.norm = cfg.theta.norm;
    opt.seed = cfg.seed;
    for (double g : cfg.theta.gamma_grid) {
      for (double e : cfg.theta.epsilon_grid) {
        const auto t = estimate_theta(cfg.cls, cfg.surrogate, f_star, cfg.instance, g, e, cfg.theta.mc,
                                      cfg.theta.restarts, opt);
        out << num(g) << "," << num(e) << "," << num(t.value) << "," << num(t.best_gamma) << ","
            << num(t.best_epsilon) << "," << (t.regularized ? "true" : "false") << "," << to_string(opt.norm) << '\n';
      }
    }
  } catch (const std::exception& e) {
    log(LogLevel::error, std::string("theta failed: ") + e.what());
    return exit_runtime;
  }
  return exit_ok;
}

/// Aggregates results.csv in `dir` into report.dat (per n and mode) and report.txt (rate fits).
inline int cmd_report(const std::string& dir) {
  std::vector<ResultRow> rows;
  try {
    rows = read_results((fs::path(dir) / "results.csv").string());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_runtime;
  }
  struct Agg {
    MeanAccumulator N, risk, surrogate;
  };
  // Rows alternate active, passive within each (trial, n) cell.
  std::map<std::pair<std::size_t, int>, Agg> agg;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto& a = agg[{rows[i].n, static_cast<int>(i % 2)}];
    a.N.add(static_cast<double>(rows[i].N));
    a.risk.add(rows[i].excess_class_risk);
    a.surrogate.add(rows[i].excess_surrogate_risk);
  }
  std::ofstream dat(fs::path(dir) / "report.dat");
  dat << "# n mode mean_N mean_excess_class_risk stderr mean_excess_surrogate_risk trials\n";
  std::vector<SweepPoint> active;
  for (const auto& [key, a] : agg) {
    dat << key.first << ' ' << (key.second == 0 ? "active" : "passive") << ' ' << num(a.N.mean()) << ' '
        << num(a.risk.mean()) << ' ' << num(a.risk.stderr_of_mean()) << ' ' << num(a.surrogate.mean()) << ' '
        << a.N.count() << '\n';
    if (key.second == 0) active.push_back({static_cast<double>(key.first), a.N.mean(), a.risk.mean()});
  }
  std::ofstream txt(fs::path(dir) / "report.txt");
  try {
    const RateFit f = rate_fit(active);
    txt << "points " << f.points << "\nslope_n " << num(f.slope_n) << "\nslope_N " << num(f.slope_N) << "\nr2_n "
        << num(f.r2_n) << "\nr2_N " << num(f.r2_N) << '\n';
  } catch (const InsufficientData& e) {
    txt << "rate_fit: " << e.what() << '\n';
  }
  std::cout << "wrote " << (fs::path(dir) / "report.dat").string() << " and report.txt\n";
  return exit_ok;
}

}  // namespace epoch_active::cli
