#pragma once

// Surrogate losses of the form l(v, y) = Phi(v) - v[y] with link phi = grad Phi,
// and the margin / gap functionals on probability vectors.

#include "epoch_active/common.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>

namespace epoch_active {

using ScoreVector = Vector;
using ProbVector = Vector;

enum class SurrogateKind { squared, logistic };

inline std::string to_string(SurrogateKind k) {
  return k == SurrogateKind::squared ? "squared" : "logistic";
}

inline SurrogateKind surrogate_kind_from_string(const std::string& s) {
  if (s == "squared") return SurrogateKind::squared;
  if (s == "logistic") return SurrogateKind::logistic;
  throw std::invalid_argument("unknown surrogate kind '" + s + "'");
}

struct SurrogateSpec {
  SurrogateKind kind = SurrogateKind::squared;
  double beta_phi = 1.0;  ///< strong convexity of Phi over realizable scores
  double l_phi = 1.0;     ///< smoothness of Phi (Lipschitz constant of the link)

  void validate() const {
    if (!(beta_phi > 0.0) || !(l_phi > 0.0)) {
      throw std::invalid_argument("surrogate constants must be positive");
    }
    if (beta_phi > l_phi) throw std::invalid_argument("beta_phi must not exceed l_phi");
    if (kind == SurrogateKind::squared && (beta_phi != 1.0 || l_phi != 1.0)) {
      throw std::invalid_argument("squared surrogate has beta_phi = l_phi = 1");
    }
  }
};

inline SurrogateSpec squared_surrogate() { return {SurrogateKind::squared, 1.0, 1.0}; }

/// Logistic surrogate with constants for scores bounded by `score_bound` in each
/// coordinate magnitude: the softmax Hessian is bounded below by exp(-2R)/K there.
inline SurrogateSpec logistic_surrogate(double score_bound, std::size_t num_classes) {
  return {SurrogateKind::logistic, std::exp(-2.0 * score_bound) / static_cast<double>(num_classes),
          1.0};
}

namespace detail {

inline void require_scores(const ScoreVector& v) {
  if (v.size() < 2) throw std::invalid_argument("score vector needs at least two classes");
  if (!all_finite(v)) throw std::invalid_argument("score vector has non-finite entries");
}

inline void require_class(ClassIndex c, Eigen::Index k) {
  if (c >= static_cast<ClassIndex>(k)) {
    throw std::invalid_argument("class index " + std::to_string(c) + " out of range for K=" +
                                std::to_string(k));
  }
}

inline double log_sum_exp(const Vector& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

inline Vector softmax(const Vector& v) {
  Vector e = (v.array() - v.maxCoeff()).exp();
  return e / e.sum();
}

}  // namespace detail

/// Phi(v): 1/2 |v|^2 (squared) or log-sum-exp (logistic).
inline double potential(const SurrogateSpec& spec, const ScoreVector& v) {
  detail::require_scores(v);
  if (spec.kind == SurrogateKind::squared) return 0.5 * v.squaredNorm();
  return detail::log_sum_exp(v);
}

/// grad Phi(v) without the simplex-domain check applied by `link`.
inline Vector potential_gradient(const SurrogateSpec& spec, const ScoreVector& v) {
  if (spec.kind == SurrogateKind::squared) return v;
  return detail::softmax(v);
}

inline double surrogate_loss(const SurrogateSpec& spec, const ScoreVector& v, ClassIndex y) {
  detail::require_scores(v);
  detail::require_class(y, v.size());
  return potential(spec, v) - v[static_cast<Eigen::Index>(y)];
}

/// E_{y~p}[l(v, y)] = Phi(v) - <v, p>.
inline double expected_surrogate_loss(const SurrogateSpec& spec, const ScoreVector& v,
                                      const ProbVector& p) {
  return potential(spec, v) - v.dot(p);
}

/// Checks the probability-vector invariants: entries in [0,1], sum within 1e-9.
inline bool is_prob_vector(const Vector& p, double tol = 1e-9) {
  if (p.size() < 2 || !all_finite(p)) return false;
  if ((p.array() < -tol).any() || (p.array() > 1.0 + tol).any()) return false;
  return std::abs(p.sum() - 1.0) <= tol;
}

/// phi(v). Identity for squared (input must already be on the simplex), softmax for logistic.
inline ProbVector link(const SurrogateSpec& spec, const ScoreVector& v) {
  detail::require_scores(v);
  if (spec.kind == SurrogateKind::logistic) return detail::softmax(v);
  constexpr double kSimplexTol = 1e-6;
  if (!is_prob_vector(v, kSimplexTol)) {
    throw std::domain_error("squared link expects simplex-valued scores");
  }
  return v;
}

/// Top entry minus the second largest; 0 on ties.
inline double margin(const ProbVector& p) {
  if (p.size() < 2) throw std::invalid_argument("margin needs at least two classes");
  double first = -std::numeric_limits<double>::infinity();
  double second = first;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] > first) {
      second = first;
      first = p[i];
    } else if (p[i] > second) {
      second = p[i];
    }
  }
  return first - second;
}

/// max_c' p[c'] - p[c].
inline double gap(const ProbVector& p, ClassIndex c) {
  detail::require_class(c, p.size());
  return p.maxCoeff() - p[static_cast<Eigen::Index>(c)];
}

/// argmax of the link output, lowest index on ties.
inline ClassIndex classify(const SurrogateSpec& spec, const ScoreVector& v) {
  return argmax_lowest(link(spec, v));
}

}  // namespace epoch_active
