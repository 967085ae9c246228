#pragma once

// Risk estimators, passive baselines, the excess-risk transfer bound check, the
// value-function disagreement coefficient, and log-log rate fits.

#include "epoch_active/assumption.hpp"
#include "epoch_active/common.hpp"
#include "epoch_active/funcclass.hpp"
#include "epoch_active/instance.hpp"
#include "epoch_active/oracle.hpp"
#include "epoch_active/surrogate.hpp"
#include "epoch_active/version_space.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace epoch_active {

using Classifier = std::function<ClassIndex(const Input&)>;

namespace detail {

/// Weighted evaluation points: the atoms of a finite marginal, or `mc` draws of weight 1/mc.
inline std::vector<Atom> evaluation_points(const InstanceSpec& inst, std::size_t mc, std::uint64_t seed,
                                           std::uint64_t index) {
  if (inst.finite_support()) return support(inst);
  if (mc < 1) throw std::invalid_argument("Monte-Carlo size must be >= 1");
  Rng rng = make_stream(mix_seed(inst.seed, seed), Stream::evaluation, index);
  std::vector<Atom> pts;
  pts.reserve(mc);
  const double w = 1.0 / static_cast<double>(mc);
  for (std::size_t i = 0; i < mc; ++i) pts.push_back({sample_one(inst, rng), w});
  return pts;
}

/// Weighted mean with a standard error (zero for exact sums).
inline Estimate weighted_mean(const InstanceSpec& inst, const std::vector<Atom>& pts,
                              const std::function<double(const Input&)>& f) {
  if (inst.finite_support()) {
    double total = 0.0;
    for (const auto& a : pts) total += a.weight * f(a.x);
    return {total, 0.0};
  }
  MeanAccumulator acc;
  for (const auto& a : pts) acc.add(f(a.x));
  return acc.estimate();
}

}  // namespace detail

/// E_x[1{h(x) != bayes(x)} gap(eta(x), h(x))]: exact on finite supports, else `mc` draws.
inline Estimate excess_class_risk(const Classifier& h, const InstanceSpec& inst, std::size_t mc,
                                  std::uint64_t seed = 0) {
  const auto pts = detail::evaluation_points(inst, mc, seed, 0);
  return detail::weighted_mean(inst, pts, [&](const Input& x) {
    const ClassIndex c = h(x);
    return c == bayes_classify(inst, x) ? 0.0 : gap(eta(inst, x), c);
  });
}

/// E[1{h(x) != y}] - E[1{bayes(x) != y}] from labeled draws (the direct definition).
inline Estimate excess_class_risk_direct(const Classifier& h, const InstanceSpec& inst, std::size_t mc,
                                         std::uint64_t seed = 0) {
  if (mc < 1) throw std::invalid_argument("Monte-Carlo size must be >= 1");
  Rng xr = make_stream(mix_seed(inst.seed, seed), Stream::evaluation, 5);
  Rng yr = make_stream(mix_seed(inst.seed, seed), Stream::evaluation, 6);
  MeanAccumulator acc;
  for (std::size_t i = 0; i < mc; ++i) {
    const Input x = sample_one(inst, xr);
    const ClassIndex y = sample_label(inst, x, yr);
    acc.add((h(x) != y ? 1.0 : 0.0) - (bayes_classify(inst, x) != y ? 1.0 : 0.0));
  }
  return acc.estimate();
}

inline Classifier classifier_of(const ClassSpec& cls, const SurrogateSpec& spec, const Params& p) {
  return [cls, spec, p](const Input& x) { return classify(spec, evaluate(cls, p, x)); };
}

struct RiskReport {
  Estimate excess_class_risk;
  Estimate excess_surrogate_risk;
  std::size_t n_used = 0;
  std::size_t n_queries = 0;
};

struct PassiveResult {
  Params params;
  RiskReport report;
};

/// ERM on `n_labels` i.i.d. labeled draws, scored against the comparator f_star.
inline PassiveResult passive_baseline(const InstanceSpec& inst, const ClassSpec& cls, const SurrogateSpec& spec,
                                      std::size_t n_labels, const OracleConfig& oracle_cfg, const Params& f_star,
                                      std::size_t mc_eval, std::uint64_t seed) {
  if (n_labels < 1) throw std::invalid_argument("passive baseline needs n_labels >= 1");
  Rng xr = make_stream(mix_seed(inst.seed, seed), Stream::passive, 0);
  Rng yr = make_stream(mix_seed(inst.seed, seed), Stream::passive, 1);
  const auto sample = sample_labeled(inst, n_labels, xr, yr);
  const FitResult fitted = fit(cls, spec, sample, oracle_cfg);
  PassiveResult out;
  out.params = fitted.params;
  out.report.excess_class_risk = excess_class_risk(classifier_of(cls, spec, fitted.params), inst, mc_eval, seed);
  out.report.excess_surrogate_risk = excess_surrogate_risk_vs(cls, spec, fitted.params, f_star, inst,
                                                              QueryRegion::whole(), mc_eval, seed);
  out.report.n_used = n_labels;
  out.report.n_queries = n_labels;
  return out;
}

/// Same, with the comparator f* fitted on the whole marginal.
inline PassiveResult passive_baseline(const InstanceSpec& inst, const ClassSpec& cls, const SurrogateSpec& spec,
                                      std::size_t n_labels, const OracleConfig& oracle_cfg, std::size_t mc_eval,
                                      std::uint64_t seed) {
  const FitResult star = best_in_class(cls, spec, inst, QueryRegion::whole(), mc_eval, seed);
  return passive_baseline(inst, cls, spec, n_labels, oracle_cfg, star.params, mc_eval, seed);
}

/// ERM over a finite candidate class (finite-support instances); returns the chosen index.
template <typename ScoreFn>
std::size_t passive_select_finite_class(const InstanceSpec& inst, const SurrogateSpec& spec,
                                        const std::vector<ScoreFn>& candidates, std::size_t n_labels,
                                        std::uint64_t seed) {
  if (n_labels < 1) throw std::invalid_argument("passive baseline needs n_labels >= 1");
  Rng xr = make_stream(mix_seed(inst.seed, seed), Stream::passive, 0);
  Rng yr = make_stream(mix_seed(inst.seed, seed), Stream::passive, 1);
  const auto sample = sample_labeled(inst, n_labels, xr, yr);
  std::size_t best = 0;
  double best_risk = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    double r = 0.0;
    for (const auto& s : sample) r += surrogate_loss(spec, candidates[j](s.x), s.y);
    if (r < best_risk) {
      best_risk = r;
      best = j;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Excess-risk transfer bound:
//   E_class(f) <= inf_gamma { 4 (L/beta) E_l(f, F) sup_{a in (gamma, 1]} a / psi(a)^2
//                             + gamma P[margin(eta(x)) <= gamma] }
// ---------------------------------------------------------------------------

/// sup_{a in (gamma, 1]} a / psi(a)^2 on a 10^3-point geometric grid plus the endpoints.
/// +inf when psi vanishes anywhere on the grid.
inline double sup_ratio(const Psi& psi, double gamma, std::size_t points = 1000) {
  if (gamma >= 1.0) return 0.0;
  const double lo = std::max(gamma, 0.0);
  const double start = lo > 0.0 ? std::nextafter(lo, 2.0) : 1e-12;
  double best = 0.0;
  auto consider = [&](double a) {
    const double p = psi(a);
    if (!(p > 0.0)) {
      best = std::numeric_limits<double>::infinity();
      return;
    }
    best = std::max(best, a / (p * p));
  };
  consider(start);
  consider(1.0);
  const double ratio = std::log(1.0 / start);
  for (std::size_t i = 1; i < points; ++i) {
    consider(start * std::exp(ratio * static_cast<double>(i) / static_cast<double>(points)));
  }
  return best;
}

struct BoundCheck {
  Estimate lhs;                ///< excess classification risk
  Estimate surrogate_excess;   ///< E_l(f, F)
  std::vector<double> gammas;
  std::vector<double> rhs;     ///< +inf where the bound is vacuous
  double min_rhs = std::numeric_limits<double>::infinity();
  double best_gamma = 0.0;
  double tolerance = 0.0;      ///< 3 standard errors of LHS - RHS at the minimizing gamma
  bool pass = false;
};

/// Bound check for arbitrary score functions f and comparator f_star.
template <typename ScoreFnA, typename ScoreFnB>
BoundCheck check_passive_bound_scores(const ScoreFnA& f, const ScoreFnB& f_star, const InstanceSpec& inst,
                                      const SurrogateSpec& spec, const Psi& psi,
                                      const std::vector<double>& gamma_grid, std::size_t mc, std::uint64_t seed) {
  if (gamma_grid.empty()) throw std::invalid_argument("gamma grid is empty");
  const auto pts = detail::evaluation_points(inst, mc, seed, 3);
  BoundCheck out;
  out.lhs = detail::weighted_mean(inst, pts, [&](const Input& x) {
    const ClassIndex c = classify(spec, f(x));
    return c == bayes_classify(inst, x) ? 0.0 : gap(eta(inst, x), c);
  });
  out.surrogate_excess = detail::weighted_mean(inst, pts, [&](const Input& x) {
    const ProbVector p = eta(inst, x);
    return expected_surrogate_loss(spec, f(x), p) - expected_surrogate_loss(spec, f_star(x), p);
  });
  const double coef = 4.0 * spec.l_phi / spec.beta_phi;
  std::vector<double> margins;
  std::vector<double> weights;
  for (const auto& a : pts) {
    margins.push_back(margin(eta(inst, a.x)));
    weights.push_back(a.weight);
  }
  double best_se = 0.0;
  const double e = std::max(0.0, out.surrogate_excess.value);
  for (double g : gamma_grid) {
    double mass = 0.0;
    for (std::size_t i = 0; i < margins.size(); ++i) mass += margins[i] <= g ? weights[i] : 0.0;
    const double s = sup_ratio(psi, g);
    const double r = std::isinf(s) ? std::numeric_limits<double>::infinity() : coef * e * s + g * mass;
    out.gammas.push_back(g);
    out.rhs.push_back(r);
    if (r < out.min_rhs) {
      out.min_rhs = r;
      out.best_gamma = g;
      const double se_mass =
          inst.finite_support() ? 0.0 : std::sqrt(mass * (1.0 - mass) / static_cast<double>(pts.size()));
      best_se = coef * s * out.surrogate_excess.std_error + g * se_mass;
    }
  }
  out.tolerance = 3.0 * std::sqrt(out.lhs.std_error * out.lhs.std_error + best_se * best_se);
  out.pass = out.lhs.value <= out.min_rhs + out.tolerance;
  return out;
}

inline BoundCheck check_passive_bound(const Params& f, const Params& f_star, const InstanceSpec& inst,
                                      const ClassSpec& cls, const SurrogateSpec& spec, const Psi& psi,
                                      const std::vector<double>& gamma_grid, std::size_t mc, std::uint64_t seed) {
  return check_passive_bound_scores([&](const Input& x) { return evaluate(cls, f, x); },
                                    [&](const Input& x) { return evaluate(cls, f_star, x); }, inst, spec, psi,
                                    gamma_grid, mc, seed);
}

/// Geometric gamma grid on [lo, 1] with `points` entries.
inline std::vector<double> geometric_grid(double lo, double hi, std::size_t points) {
  if (!(lo > 0.0) || !(hi >= lo) || points < 1) throw std::invalid_argument("bad geometric grid");
  std::vector<double> g;
  for (std::size_t i = 0; i < points; ++i) {
    const double t = points == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(points - 1);
    g.push_back(lo * std::pow(hi / lo, t));
  }
  return g;
}

/// Strong-convexity transfer: E|f(x) - f*(x)|^2 <= (2 / beta) E_l(f, F).
struct LemmaCheck {
  Estimate distance;
  Estimate surrogate_excess;
  Estimate slack;  ///< distance - (2 / beta) * surrogate_excess, per point
  bool pass = false;
};

inline LemmaCheck check_distance_lemma(const Params& f, const Params& f_star, const InstanceSpec& inst,
                                       const ClassSpec& cls, const SurrogateSpec& spec, std::size_t mc,
                                       std::uint64_t seed) {
  const auto pts = detail::evaluation_points(inst, mc, seed, 4);
  auto dist = [&](const Input& x) { return (evaluate(cls, f, x) - evaluate(cls, f_star, x)).squaredNorm(); };
  auto excess = [&](const Input& x) {
    const ProbVector p = eta(inst, x);
    return expected_surrogate_loss(spec, evaluate(cls, f, x), p) -
           expected_surrogate_loss(spec, evaluate(cls, f_star, x), p);
  };
  LemmaCheck out;
  out.distance = detail::weighted_mean(inst, pts, dist);
  out.surrogate_excess = detail::weighted_mean(inst, pts, excess);
  out.slack = detail::weighted_mean(inst, pts,
                                    [&](const Input& x) { return dist(x) - 2.0 / spec.beta_phi * excess(x); });
  out.pass = out.slack.value <= 3.0 * out.slack.std_error + 1e-12;
  return out;
}

// ---------------------------------------------------------------------------
// Value-function disagreement coefficient
//   sup_{gamma' > gamma, eps' > eps} (gamma'^2 / eps'^2) P(exists f: |f(x) - f*(x)| > gamma',
//                                                             |f - f*|_D <= eps') v 1
// ---------------------------------------------------------------------------

enum class ThetaNorm { as_written, rooted };

inline ThetaNorm theta_norm_from_string(const std::string& s) {
  if (s == "as_written") return ThetaNorm::as_written;
  if (s == "rooted") return ThetaNorm::rooted;
  throw std::invalid_argument("unknown theta_norm '" + s + "'");
}

inline std::string to_string(ThetaNorm n) { return n == ThetaNorm::as_written ? "as_written" : "rooted"; }

struct ThetaOptions {
  ThetaNorm norm = ThetaNorm::as_written;
  std::size_t eps_steps = 40;   ///< eps' = eps * 2^{j/4}, j = 0 .. eps_steps
  std::size_t max_iters = 300;  ///< ascent iterations per start (multiclass)
  std::uint64_t seed = 0;
};

struct ThetaEstimate {
  double gamma = 0.0;
  double epsilon = 0.0;
  double value = 1.0;
  double best_gamma = 0.0;     ///< gamma' attaining the sup (0 if the max with 1 is active)
  double best_epsilon = 0.0;
  bool regularized = false;    ///< moment matrix needed a ridge
};

namespace detail {

/// max |f(x) - f*(x)|_2 over f in ball ∩ {Delta' M Delta <= bound}.
inline double max_score_deviation(const ClassSpec& cls, const BallEllipsoid& set, const Params& f_star,
                                  const Input& x, std::size_t restarts, std::size_t max_iters, Rng& rng) {
  if (cls.kind == ClassKind::binary_ball_linear) {
    // |f(x) - f*(x)|_2 = |x.(theta - theta*)| / sqrt(2): two linear maximizations.
    const double c = x.dot(f_star.theta);
    const double up = maximize_linear(set, x).upper - c;
    const double down = maximize_linear(set, Vector(-x)).upper + c;
    return std::max({0.0, up, down}) / std::sqrt(2.0);
  }
  const Matrix J = score_jacobian(cls, x);
  const Matrix JtJ = J.transpose() * J;
  auto objective = [&](const Vector& theta) {
    const Vector d = theta - f_star.theta;
    const Vector jd = JtJ * d;
    return std::pair<double, Vector>{d.dot(jd), 2.0 * jd};
  };
  double best = 0.0;
  for (std::size_t r = 0; r < restarts; ++r) {
    // The objective is convex, so the center is a stationary point: start from perturbations.
    const Vector start = f_star.theta + random_start(cls, rng);
    best = std::max(best, projected_ascent(set, start, objective, max_iters).value);
  }
  return std::sqrt(std::max(0.0, best));
}

}  // namespace detail

inline ThetaEstimate estimate_theta(const ClassSpec& cls, const SurrogateSpec& spec, const Params& f_star,
                                    const InstanceSpec& inst, double gamma, double epsilon, std::size_t mc,
                                    std::size_t restarts, const ThetaOptions& opt = {}) {
  (void)spec;
  if (!(gamma > 0.0) || !(epsilon > 0.0)) throw std::invalid_argument("theta needs gamma > 0 and epsilon > 0");
  if (restarts < 1) throw std::invalid_argument("theta needs restarts >= 1");
  if (!is_feasible(cls, f_star)) throw std::invalid_argument("f_star is infeasible");

  ThetaEstimate out;
  out.gamma = gamma;
  out.epsilon = epsilon;

  // |f - f*|_D as a quadratic form in Delta: E[J_x' J_x].
  MetricBuilder builder(cls);
  for (const auto& a : detail::evaluation_points(inst, mc, opt.seed, 7)) builder.add(a.x, a.weight);
  Matrix M = builder.build();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(M);
  if (eig.eigenvalues().minCoeff() < 0.0) {
    M += 1e-9 * Matrix::Identity(M.rows(), M.cols());
    out.regularized = true;
  }

  const auto pts = detail::evaluation_points(inst, mc, opt.seed, 8);
  const double total_weight =
      std::accumulate(pts.begin(), pts.end(), 0.0, [](double s, const Atom& a) { return s + a.weight; });
  double best = 1.0;
  for (std::size_t j = 0; j <= opt.eps_steps; ++j) {
    // eps' -> eps from above: the first grid point sits a hair above eps.
    const double eps_j = epsilon * std::pow(2.0, static_cast<double>(j) / 4.0) * (1.0 + 1e-12);
    const double bound = opt.norm == ThetaNorm::as_written ? eps_j : eps_j * eps_j;
    const BallEllipsoid set(cls.radius, Ellipsoid(f_star.theta, M, bound));
    std::vector<std::pair<double, double>> s;  // (deviation, weight)
    s.reserve(pts.size());
    Rng rng = make_stream(opt.seed, Stream::search, j);
    for (const auto& a : pts) {
      s.emplace_back(detail::max_score_deviation(cls, set, f_star, a.x, restarts, opt.max_iters, rng), a.weight);
    }
    // sup over gamma' > gamma of gamma'^2 P[s >= gamma'] is attained at a sampled deviation.
    std::sort(s.begin(), s.end(), [](const auto& l, const auto& r) { return l.first > r.first; });
    double tail = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      tail += s[i].second;
      if (i + 1 < s.size() && s[i + 1].first == s[i].first) continue;
      if (s[i].first <= gamma) break;
      const double v = s[i].first * s[i].first * (tail / total_weight) / (eps_j * eps_j);
      if (v > best) {
        best = v;
        out.best_gamma = s[i].first;
        out.best_epsilon = eps_j;
      }
    }
    // Larger eps' cannot beat the best when even P = 1 at the largest deviation falls short.
    if (!s.empty() && s.front().first * s.front().first / (eps_j * eps_j) < best) break;
  }
  out.value = best;
  return out;
}

// ---------------------------------------------------------------------------
// Rate fits in log-log space.
// ---------------------------------------------------------------------------

struct SweepPoint {
  double n = 0.0;
  double queries = 0.0;
  double excess_risk = 0.0;
};

struct RateFit {
  double slope_n = 0.0;   ///< d log n / d log(1/eps)
  double slope_N = 0.0;   ///< d log N / d log(1/eps)
  double r2_n = 0.0;
  double r2_N = 0.0;
  std::size_t points = 0;
};

class InsufficientData : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline RateFit rate_fit(const std::vector<SweepPoint>& sweep) {
  std::vector<double> u, ln, lq;
  for (const auto& p : sweep) {
    if (!(p.excess_risk > 0.0) || !(p.n > 0.0) || !(p.queries > 0.0)) continue;
    u.push_back(std::log(1.0 / p.excess_risk));
    ln.push_back(std::log(p.n));
    lq.push_back(std::log(p.queries));
  }
  if (u.size() < 4) {
    throw InsufficientData("rate_fit needs at least 4 sweep points with positive risk and counts, got " +
                           std::to_string(u.size()));
  }
  const double k = static_cast<double>(u.size());
  const double mu = std::accumulate(u.begin(), u.end(), 0.0) / k;
  double suu = 0.0;
  for (double v : u) suu += (v - mu) * (v - mu);
  if (suu <= 0.0) throw InsufficientData("rate_fit needs distinct excess-risk values");
  auto line = [&](const std::vector<double>& y, double& slope, double& r2) {
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / k;
    double suy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      suy += (u[i] - mu) * (y[i] - my);
      syy += (y[i] - my) * (y[i] - my);
    }
    slope = suy / suu;
    double sse = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double fit = my + slope * (u[i] - mu);
      sse += (y[i] - fit) * (y[i] - fit);
    }
    r2 = syy > 0.0 ? 1.0 - sse / syy : 1.0;
  };
  RateFit out;
  out.points = u.size();
  line(ln, out.slope_n, out.r2_n);
  line(lq, out.slope_N, out.r2_N);
  return out;
}

}  // namespace epoch_active
