#pragma once

// Active learning in epochs. Epoch m covers stream positions (tau_{m-1}, tau_m],
// tau_m = 2^m - 1, and queries x_t only where every earlier version space still
// disagrees. The returned classifier is improper: at x it answers with the first
// epoch whose version space reaches consensus there, else with the last fit.

#include "epoch_active/common.hpp"
#include "epoch_active/funcclass.hpp"
#include "epoch_active/instance.hpp"
#include "epoch_active/oracle.hpp"
#include "epoch_active/surrogate.hpp"
#include "epoch_active/version_space.hpp"

#include <chrono>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace epoch_active {

struct LearnerConfig {
  std::size_t n = 1023;
  double delta = 0.1;
  double b_constant = 1.0;
  std::optional<CompFormula> comp;  ///< defaults to default_comp(cls)
  OracleConfig oracle_cfg;
  DisagreeConfig disagree_cfg;
  std::uint64_t seed = 0;

  void validate() const {
    if (n < 3) throw std::invalid_argument("learner needs n >= 3 (at least two epochs)");
    if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must lie in (0, 1)");
    if (!(b_constant > 0.0) || !std::isfinite(b_constant)) {
      throw std::invalid_argument("b_constant must be positive and finite");
    }
    oracle_cfg.validate();
    disagree_cfg.validate();
  }
};

/// M = floor(log2(n + 1)), so tau_M <= n.
inline std::size_t num_epochs(std::size_t n) {
  std::size_t m = 0;
  while (m < 63 && ((std::uint64_t{1} << (m + 1)) - 1) <= n) ++m;
  return m;
}

/// (tau_{m-1} + 1, tau_m), 1-based stream positions.
inline std::pair<std::size_t, std::size_t> epoch_range(std::size_t m) {
  if (m == 0) throw std::invalid_argument("epochs are numbered from 1");
  return {std::size_t{1} << (m - 1), (std::size_t{1} << m) - 1};
}

/// B = C log^3(n) comp(F, delta, n, K).
inline double version_space_radius(const LearnerConfig& cfg, const ClassSpec& cls) {
  const CompFormula comp = cfg.comp.value_or(default_comp(cls));
  const double n = static_cast<double>(cfg.n);
  const double l = std::log(n);
  return cfg.b_constant * l * l * l * comp_value(comp, n, cfg.delta, cls.K);
}

struct EpochRecord {
  std::size_t index = 0;
  Params fitted;
  VersionSpace vspace;
  std::size_t queried_count = 0;  ///< k_m; 0 for a carried-forward epoch
  std::pair<std::size_t, std::size_t> range;
  bool converged = true;
  bool carried = false;  ///< S_m was empty: fit and version space copied from epoch m-1
};

struct StitchedClassifier {
  std::vector<EpochRecord> epochs;
  SurrogateSpec spec;
  ClassSpec cls;
};

struct EpochTrace {
  std::size_t index = 0;
  std::size_t queries = 0;
  double radius_b = 0.0;
  bool converged = true;
  bool carried = false;
};

struct RunTrace {
  std::vector<EpochTrace> epochs;
  std::size_t total_queries = 0;  ///< N
  double wall_ms = 0.0;
  std::uint64_t seed = 0;
};

struct LearnerResult {
  StitchedClassifier classifier;
  RunTrace trace;
};

using LabelOracle = std::function<ClassIndex(const Input&)>;

/// Test seams. `q0` replaces the initial query condition q_0 = 1.
struct LearnerHooks {
  std::function<bool(const Input&)> q0;
};

/// Raised when the label oracle fails; carries the trace up to the failure.
class LearnerAborted : public std::runtime_error {
 public:
  LearnerAborted(const std::string& what, RunTrace partial) : std::runtime_error(what), trace(std::move(partial)) {}
  RunTrace trace;
};

/// y ~ eta(x) on the labels stream of (instance seed, run seed).
inline LabelOracle simulation_oracle(const InstanceSpec& inst, std::uint64_t seed) {
  auto rng = std::make_shared<Rng>(make_stream(mix_seed(inst.seed, seed), Stream::labels));
  return [inst, rng](const Input& x) { return sample_label(inst, x, *rng); };
}

/// q_m(x) = 1 iff every version space in `epochs` disagrees at x.
inline bool all_disagree(std::span<const EpochRecord> epochs, const Input& x, const SurrogateSpec& spec,
                         const DisagreeConfig& cfg) {
  // Later spaces are tighter and settle most points, so test them first.
  for (auto it = epochs.rbegin(); it != epochs.rend(); ++it) {
    if (!disagrees_at(it->vspace, x, spec, cfg)) return false;
  }
  return true;
}

inline LearnerResult run(const InstanceSpec& inst, const ClassSpec& cls, const SurrogateSpec& spec,
                         const LearnerConfig& cfg, const LabelOracle& label_oracle, const LearnerHooks& hooks = {}) {
  inst.validate();
  require_compatible(cls, spec);
  cfg.validate();
  if (inst.d != cls.d || inst.K != cls.K) throw std::invalid_argument("instance and class dimensions differ");

  const auto start = std::chrono::steady_clock::now();
  const std::size_t M = num_epochs(cfg.n);
  const double B = version_space_radius(cfg, cls);
  Rng marginal = make_stream(mix_seed(inst.seed, cfg.seed), Stream::marginal);

  StitchedClassifier sc{{}, spec, cls};
  RunTrace trace;
  trace.seed = cfg.seed;
  auto elapsed_ms = [&] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  };

  Params center = zero_params(cls);
  for (std::size_t m = 1; m <= M; ++m) {
    const auto range = epoch_range(m);
    std::vector<LabeledDraw> sample;
    for (std::size_t t = range.first; t <= range.second; ++t) {
      Input x = sample_one(inst, marginal);
      const bool query = (!hooks.q0 || hooks.q0(x)) && all_disagree(sc.epochs, x, spec, cfg.disagree_cfg);
      if (!query) continue;
      ClassIndex y = 0;
      try {
        y = label_oracle(x);
      } catch (const std::exception& e) {
        trace.wall_ms = elapsed_ms();
        throw LearnerAborted(std::string("label oracle failed: ") + e.what(), std::move(trace));
      }
      if (y >= cls.K) {
        trace.wall_ms = elapsed_ms();
        throw LearnerAborted("label oracle returned an out-of-range class", std::move(trace));
      }
      ++trace.total_queries;
      sample.push_back({std::move(x), y});
    }

    if (sample.empty()) {
      // Nothing queried: carry the previous fit and version space forward.
      std::optional<VersionSpace> prev;
      if (sc.epochs.empty()) {
        prev.emplace(cls, center, std::vector<Input>{}, B);
      } else {
        prev.emplace(sc.epochs.back().vspace);
      }
      sc.epochs.push_back({m, center, *prev, 0, range, true, true});
      trace.epochs.push_back({m, 0, B, true, true});
      continue;
    }

    const FitResult fitted = fit(cls, spec, sample, cfg.oracle_cfg, center);
    center = fitted.params;
    std::vector<Input> anchors;
    anchors.reserve(sample.size());
    for (auto& s : sample) anchors.push_back(std::move(s.x));
    const std::size_t k = anchors.size();
    sc.epochs.push_back({m, center, VersionSpace(cls, center, std::move(anchors), B), k, range, fitted.converged, false});
    trace.epochs.push_back({m, k, B, fitted.converged, false});
  }
  trace.wall_ms = elapsed_ms();
  return {std::move(sc), std::move(trace)};
}

/// Index (0-based) of the first epoch whose version space agrees at x, if any.
inline std::optional<std::size_t> consensus_epoch(const StitchedClassifier& sc, const Input& x,
                                                  const DisagreeConfig& cfg) {
  for (std::size_t i = 0; i < sc.epochs.size(); ++i) {
    if (!disagrees_at(sc.epochs[i].vspace, x, sc.spec, cfg)) return i;
  }
  return std::nullopt;
}

inline ClassIndex predict(const StitchedClassifier& sc, const Input& x, const DisagreeConfig& cfg) {
  if (sc.epochs.empty()) throw std::invalid_argument("stitched classifier has no epochs");
  const auto i = consensus_epoch(sc, x, cfg);
  const EpochRecord& e = i ? sc.epochs[*i] : sc.epochs.back();
  return classify(sc.spec, evaluate(sc.cls, e.fitted, x));
}

/// P[q_m(x) = 1]: Monte-Carlo over D_X (exact on finite supports).
inline Estimate query_mass(const StitchedClassifier& sc, std::size_t m, std::size_t mc, const InstanceSpec& inst,
                           const DisagreeConfig& cfg, std::uint64_t seed = 0) {
  if (m > sc.epochs.size()) throw std::invalid_argument("query_mass epoch exceeds the number of epochs");
  if (m == 0) return {1.0, 0.0};
  const std::span<const EpochRecord> prefix(sc.epochs.data(), m);
  if (inst.finite_support()) {
    double mass = 0.0;
    for (const auto& a : support(inst)) {
      if (all_disagree(prefix, a.x, sc.spec, cfg)) mass += a.weight;
    }
    return {mass, 0.0};
  }
  if (mc < 1) throw std::invalid_argument("query_mass needs mc >= 1");
  Rng rng = make_stream(mix_seed(inst.seed, seed), Stream::evaluation, 2);
  MeanAccumulator acc;
  for (std::size_t i = 0; i < mc; ++i) acc.add(all_disagree(prefix, sample_one(inst, rng), sc.spec, cfg) ? 1.0 : 0.0);
  return acc.estimate();
}

}  // namespace epoch_active
