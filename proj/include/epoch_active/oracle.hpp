#pragma once

// Offline regression oracle: constrained empirical risk minimization of the
// surrogate loss over the norm-ball class, by projected gradient descent.

#include "epoch_active/common.hpp"
#include "epoch_active/funcclass.hpp"
#include "epoch_active/instance.hpp"
#include "epoch_active/surrogate.hpp"

#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace epoch_active {

enum class StepRule { fixed, backtracking };

struct OracleConfig {
  std::size_t max_iters = 5000;
  StepRule step_rule = StepRule::backtracking;
  double step_size = 1.0;
  double grad_tol = 1e-9;
  std::uint64_t seed = 0;
  bool record_trace = false;  ///< keep the objective of every iterate in FitResult::trace

  void validate() const {
    if (max_iters < 1) throw std::invalid_argument("oracle max_iters must be >= 1");
    if (!(grad_tol > 0.0)) throw std::invalid_argument("oracle grad_tol must be positive");
    if (!(step_size > 0.0)) throw std::invalid_argument("oracle step_size must be positive");
  }
};

/// A regression target: minimize weight * (Phi(f(x)) - <f(x), target>). A labeled
/// draw is the one-hot target; an exact expectation uses target = eta(x).
struct RegressionPoint {
  Input x;
  ProbVector target;
  double weight = 1.0;
};

struct FitResult {
  Params params;
  bool converged = false;
  std::size_t iterations = 0;
  double objective = 0.0;  ///< weighted mean surrogate risk at `params`
  std::vector<double> trace;
};

inline std::vector<RegressionPoint> to_regression(std::span<const LabeledDraw> sample,
                                                  std::size_t num_classes) {
  std::vector<RegressionPoint> pts;
  pts.reserve(sample.size());
  for (const auto& s : sample) {
    if (s.y >= num_classes) throw std::invalid_argument("label out of range");
    ProbVector e = Vector::Zero(static_cast<Eigen::Index>(num_classes));
    e[static_cast<Eigen::Index>(s.y)] = 1.0;
    pts.push_back({s.x, std::move(e), 1.0});
  }
  return pts;
}

/// Weighted empirical surrogate risk.
class EmpiricalRisk {
 public:
  EmpiricalRisk(const ClassSpec& cls, const SurrogateSpec& spec, std::span<const RegressionPoint> pts)
      : cls_(cls), spec_(spec), pts_(pts) {
    if (pts.empty()) throw std::invalid_argument("empirical risk needs a non-empty sample");
    for (const auto& p : pts) total_weight_ += p.weight;
    if (!(total_weight_ > 0.0)) throw std::invalid_argument("sample weights must sum to > 0");
    if (spec.kind == SurrogateKind::squared) build_quadratic();
  }

  double value(const Params& p) const {
    if (quadratic_) return 0.5 * p.theta.dot(hessian_ * p.theta) + linear_.dot(p.theta) + constant_;
    double total = 0.0;
    for (const auto& pt : pts_) {
      total += pt.weight * expected_surrogate_loss(spec_, evaluate(cls_, p, pt.x), pt.target);
    }
    return total / total_weight_;
  }

  Vector gradient(const Params& p) const {
    if (quadratic_) return hessian_ * p.theta + linear_;
    Vector g = Vector::Zero(p.theta.size());
    for (const auto& pt : pts_) {
      const ScoreVector v = evaluate(cls_, p, pt.x);
      g += pt.weight * pullback(cls_, pt.x, potential_gradient(spec_, v) - pt.target);
    }
    return g / total_weight_;
  }

 private:
  // Squared loss over an affine class is a quadratic in theta; cache its coefficients.
  void build_quadratic() {
    const auto P = static_cast<Eigen::Index>(cls_.num_params());
    hessian_ = Matrix::Zero(P, P);
    linear_ = Vector::Zero(P);
    constant_ = 0.0;
    const Params zero = zero_params(cls_);
    for (const auto& pt : pts_) {
      const Matrix J = score_jacobian(cls_, pt.x);
      const ScoreVector offset = evaluate(cls_, zero, pt.x);
      hessian_.noalias() += pt.weight * J.transpose() * J;
      linear_.noalias() += pt.weight * J.transpose() * (offset - pt.target);
      constant_ += pt.weight * (0.5 * offset.squaredNorm() - offset.dot(pt.target));
    }
    hessian_ /= total_weight_;
    linear_ /= total_weight_;
    constant_ /= total_weight_;
    quadratic_ = true;
  }

  ClassSpec cls_;
  SurrogateSpec spec_;
  std::span<const RegressionPoint> pts_;
  double total_weight_ = 0.0;
  bool quadratic_ = false;
  Matrix hessian_;
  Vector linear_;
  double constant_ = 0.0;
};

/// Projected gradient descent on the weighted empirical risk. Returns the best
/// iterate; `converged` is false when max_iters ran out before the projected
/// gradient norm fell below grad_tol.
inline FitResult fit_targets(const ClassSpec& cls, const SurrogateSpec& spec,
                             std::span<const RegressionPoint> pts, const OracleConfig& cfg,
                             std::optional<Params> init = std::nullopt) {
  require_compatible(cls, spec);
  cfg.validate();
  if (pts.empty()) throw std::invalid_argument("oracle fit needs a non-empty sample");
  const EmpiricalRisk risk(cls, spec, pts);

  Params current = project(cls, init.value_or(zero_params(cls)));
  double current_value = risk.value(current);
  double step = cfg.step_size;
  FitResult result{current, false, 0, current_value, {}};
  if (cfg.record_trace) result.trace.push_back(current_value);

  for (std::size_t it = 1; it <= cfg.max_iters; ++it) {
    result.iterations = it;
    const Vector g = risk.gradient(current);
    Params next;
    double next_value = 0.0;
    if (cfg.step_rule == StepRule::fixed) {
      next = project(cls, Params(current.theta - step * g));
      next_value = risk.value(next);
    } else {
      // Backtracking on the projected-gradient sufficient-decrease condition.
      for (int tries = 0; tries < 60; ++tries) {
        next = project(cls, Params(current.theta - step * g));
        next_value = risk.value(next);
        const Vector delta = next.theta - current.theta;
        if (next_value <= current_value + g.dot(delta) + delta.squaredNorm() / (2.0 * step) + 1e-15) {
          break;
        }
        step *= 0.5;
      }
    }
    const double mapping_norm = (next.theta - current.theta).norm() / step;
    current = std::move(next);
    current_value = next_value;
    if (cfg.record_trace) result.trace.push_back(current_value);
    if (current_value <= result.objective) {
      result.params = current;
      result.objective = current_value;
    }
    if (mapping_norm <= cfg.grad_tol) {
      result.converged = true;
      break;
    }
    if (cfg.step_rule == StepRule::backtracking) step = std::min(step * 2.0, 1e6);
  }
  return result;
}

/// Oracle on a labeled sample.
inline FitResult fit(const ClassSpec& cls, const SurrogateSpec& spec,
                     std::span<const LabeledDraw> sample, const OracleConfig& cfg,
                     std::optional<Params> init = std::nullopt) {
  if (sample.empty()) throw std::invalid_argument("oracle fit needs a non-empty sample");
  const auto pts = to_regression(sample, cls.K);
  return fit_targets(cls, spec, pts, cfg, std::move(init));
}

// ---------------------------------------------------------------------------
// comp(F, delta, n, K)
// ---------------------------------------------------------------------------

enum class CompKind { pdim_log, custom_constant };

struct CompFormula {
  CompKind kind = CompKind::pdim_log;
  double pdim = 1.0;
  double c0 = 1.0;
};

/// pdim = number of free parameters of the class.
inline CompFormula default_comp(const ClassSpec& cls) {
  return {CompKind::pdim_log, static_cast<double>(cls.num_params()), 1.0};
}

/// c0 * pdim * log(max(n, 2)) * log(1/delta), or the constant c0.
inline double comp_value(const CompFormula& f, double n, double delta, std::size_t /*K*/) {
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must lie in (0, 1)");
  if (!(n >= 1.0)) throw std::invalid_argument("comp_value needs n >= 1");
  if (!(f.c0 > 0.0)) throw std::invalid_argument("comp multiplier c0 must be positive");
  if (f.kind == CompKind::custom_constant) return f.c0;
  if (!(f.pdim > 0.0)) throw std::invalid_argument("comp pdim must be positive");
  return f.c0 * f.pdim * std::log(std::max(n, 2.0)) * std::log(1.0 / delta);
}

// ---------------------------------------------------------------------------
// Excess surrogate risk E_l(f, F) on D or D_Q.
// ---------------------------------------------------------------------------

/// Exact-expectation targets eta(x) for the atoms of D_Q.
inline std::vector<RegressionPoint> exact_targets(const InstanceSpec& inst, const QueryRegion& region) {
  std::vector<RegressionPoint> pts;
  for (auto& a : region_support(inst, region)) {
    ProbVector p = eta(inst, a.x);
    pts.push_back({std::move(a.x), std::move(p), a.weight});
  }
  return pts;
}

/// eta-targets at fresh draws from D_Q.
inline std::vector<RegressionPoint> sampled_targets(const InstanceSpec& inst, const QueryRegion& region,
                                                    std::size_t count, Rng& rng) {
  std::vector<RegressionPoint> pts;
  pts.reserve(count);
  for (auto& x : sample_region(inst, region, count, rng)) {
    ProbVector p = eta(inst, x);
    pts.push_back({std::move(x), std::move(p), 1.0});
  }
  return pts;
}

/// Best-in-class f*_Q: exact for finite support, otherwise fit on `mc_samples` fresh draws.
inline FitResult best_in_class(const ClassSpec& cls, const SurrogateSpec& spec, const InstanceSpec& inst,
                               const QueryRegion& region, std::size_t mc_samples, std::uint64_t seed,
                               OracleConfig cfg = {}) {
  if (inst.finite_support()) {
    const auto pts = exact_targets(inst, region);
    return fit_targets(cls, spec, pts, cfg);
  }
  Rng rng = make_stream(seed, Stream::oracle, 0);
  const auto pts = sampled_targets(inst, region, mc_samples, rng);
  return fit_targets(cls, spec, pts, cfg);
}

/// E_{D_Q}[l(f(x), y)] - E_{D_Q}[l(g(x), y)] for two score functions, exact over y.
/// Finite-support instances are summed exactly (std_error = 0); otherwise `mc_samples` draws.
template <typename ScoreFnA, typename ScoreFnB>
Estimate surrogate_risk_difference(const SurrogateSpec& spec, const ScoreFnA& f, const ScoreFnB& g,
                                   const InstanceSpec& inst, const QueryRegion& region,
                                   std::size_t mc_samples, std::uint64_t seed) {
  if (inst.finite_support()) {
    double total = 0.0;
    for (const auto& a : region_support(inst, region)) {
      const ProbVector p = eta(inst, a.x);
      total += a.weight * (expected_surrogate_loss(spec, f(a.x), p) - expected_surrogate_loss(spec, g(a.x), p));
    }
    return {total, 0.0};
  }
  if (mc_samples < 1) throw std::invalid_argument("mc_samples must be >= 1");
  Rng rng = make_stream(seed, Stream::evaluation, 0);
  MeanAccumulator acc;
  for (const auto& x : sample_region(inst, region, mc_samples, rng)) {
    const ProbVector p = eta(inst, x);
    acc.add(expected_surrogate_loss(spec, f(x), p) - expected_surrogate_loss(spec, g(x), p));
  }
  return acc.estimate();
}

/// E_l(p, F) on D_Q against a known comparator.
inline Estimate excess_surrogate_risk_vs(const ClassSpec& cls, const SurrogateSpec& spec, const Params& p,
                                         const Params& comparator, const InstanceSpec& inst,
                                         const QueryRegion& region, std::size_t mc_samples,
                                         std::uint64_t seed) {
  return surrogate_risk_difference(
      spec, [&](const Input& x) { return evaluate(cls, p, x); },
      [&](const Input& x) { return evaluate(cls, comparator, x); }, inst, region, mc_samples, seed);
}

/// E_l(p, F) on D_Q; the comparator f*_Q is refit for the region.
inline Estimate excess_surrogate_risk(const ClassSpec& cls, const SurrogateSpec& spec, const Params& p,
                                      const InstanceSpec& inst, const QueryRegion& region,
                                      std::size_t mc_samples, std::uint64_t seed) {
  if (mc_samples < 1) throw std::invalid_argument("mc_samples must be >= 1");
  const FitResult star = best_in_class(cls, spec, inst, region, mc_samples, seed);
  return excess_surrogate_risk_vs(cls, spec, p, star.params, inst, region, mc_samples, seed);
}

/// Excess surrogate risk of candidate `index` within a finite class of score functions.
template <typename ScoreFn>
double excess_surrogate_risk_finite_class(const SurrogateSpec& spec, const std::vector<ScoreFn>& candidates,
                                          std::size_t index, const InstanceSpec& inst,
                                          const QueryRegion& region = QueryRegion::whole()) {
  if (!inst.finite_support()) throw std::invalid_argument("finite-class risk needs finite support");
  if (index >= candidates.size()) throw std::invalid_argument("candidate index out of range");
  const auto atoms = region_support(inst, region);
  auto risk = [&](const ScoreFn& f) {
    double total = 0.0;
    for (const auto& a : atoms) total += a.weight * expected_surrogate_loss(spec, f(a.x), eta(inst, a.x));
    return total;
  };
  double best = std::numeric_limits<double>::infinity();
  for (const auto& f : candidates) best = std::min(best, risk(f));
  return risk(candidates[index]) - best;
}

}  // namespace epoch_active
