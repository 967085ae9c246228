#pragma once

// The implicit version space
//
//   F_m = { f in F : sum_t |f(x_t) - fhat_m(x_t)|^2 <= B },
//
// which for the affine classes is a norm ball intersected with an ellipsoid in
// parameter space, and the disagreement test "exists f, f' in F_m with
// h_f(x) != h_f'(x)". Since fhat_m is itself in F_m, the test reduces to: does
// some member put another class c at least level with c* = h_fhat(x)?

#include "epoch_active/common.hpp"
#include "epoch_active/funcclass.hpp"
#include "epoch_active/surrogate.hpp"

#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <vector>

namespace epoch_active {

/// { theta : (theta - center)^T A (theta - center) <= bound }, A symmetric PSD.
class Ellipsoid {
 public:
  Ellipsoid() = default;

  Ellipsoid(Vector center, const Matrix& metric, double bound) : center_(std::move(center)), bound_(bound) {
    const auto P = center_.size();
    if (metric.rows() != P || metric.cols() != P) throw std::invalid_argument("metric has wrong shape");
    if (!(bound >= 0.0)) throw std::invalid_argument("ellipsoid bound must be non-negative");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(metric);
    basis_ = eig.eigenvectors();
    eigenvalues_ = eig.eigenvalues();
    const double top = eigenvalues_.size() > 0 ? std::max(0.0, eigenvalues_.maxCoeff()) : 0.0;
    const double floor = std::max(1e-300, 1e-12 * top);
    for (Eigen::Index i = 0; i < eigenvalues_.size(); ++i) {
      if (eigenvalues_[i] < floor) eigenvalues_[i] = 0.0;
    }
    metric_ = metric;
  }

  const Vector& center() const { return center_; }
  double bound() const { return bound_; }
  const Matrix& metric() const { return metric_; }

  double quadratic(const Vector& theta) const {
    const Vector u = theta - center_;
    return u.dot(metric_ * u);
  }

  bool contains(const Vector& theta, double tol = 1e-9) const { return quadratic(theta) <= bound_ + tol; }

  /// Exact Euclidean projection: theta = c + (I + lambda A)^{-1} (z - c) with lambda
  /// solving the boundary equation (bisection on a monotone scalar function).
  Vector project(const Vector& z) const {
    const Vector u = basis_.transpose() * (z - center_);
    auto excess = [&](double lambda) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < u.size(); ++i) {
        const double l = eigenvalues_[i];
        if (l == 0.0) continue;
        const double r = u[i] / (1.0 + lambda * l);
        s += l * r * r;
      }
      return s - bound_;
    };
    if (excess(0.0) <= 0.0) return z;
    Vector scaled = u;
    if (bound_ <= 0.0) {
      for (Eigen::Index i = 0; i < u.size(); ++i) {
        if (eigenvalues_[i] > 0.0) scaled[i] = 0.0;
      }
      return center_ + basis_ * scaled;
    }
    double lo = 0.0;
    double hi = 1.0;
    while (excess(hi) > 0.0 && hi < 1e300) hi *= 4.0;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (mid <= lo || mid >= hi) break;
      if (excess(mid) > 0.0) lo = mid; else hi = mid;
    }
    for (Eigen::Index i = 0; i < u.size(); ++i) scaled[i] = u[i] / (1.0 + hi * eigenvalues_[i]);
    return center_ + basis_ * scaled;
  }

  /// max g.theta over the ellipsoid alone; +inf when g leaves the metric's range.
  double support_value(const Vector& g) const {
    const Vector gr = basis_.transpose() * g;
    const double scale = std::max(1.0, g.norm());
    double q = 0.0;
    for (Eigen::Index i = 0; i < gr.size(); ++i) {
      if (eigenvalues_[i] == 0.0) {
        if (std::abs(gr[i]) > 1e-12 * scale) return std::numeric_limits<double>::infinity();
        continue;
      }
      q += gr[i] * gr[i] / eigenvalues_[i];
    }
    return g.dot(center_) + std::sqrt(std::max(0.0, bound_ * q));
  }

  /// argmax g.theta over the ellipsoid alone (only meaningful when support_value is finite).
  Vector support_point(const Vector& g) const {
    const Vector gr = basis_.transpose() * g;
    Vector step = Vector::Zero(gr.size());
    double q = 0.0;
    for (Eigen::Index i = 0; i < gr.size(); ++i) {
      if (eigenvalues_[i] == 0.0) continue;
      step[i] = gr[i] / eigenvalues_[i];
      q += gr[i] * step[i];
    }
    if (q <= 0.0) return center_;
    return center_ + basis_ * (step * std::sqrt(bound_ / q));
  }

  const Matrix& basis() const { return basis_; }
  const Vector& eigenvalues() const { return eigenvalues_; }

 private:
  Vector center_;
  Matrix metric_;
  Matrix basis_;
  Vector eigenvalues_;
  double bound_ = 0.0;
};

/// Norm ball of the class intersected with an ellipsoid; projection by Dykstra's method.
class BallEllipsoid {
 public:
  BallEllipsoid(double radius, Ellipsoid ellipsoid) : radius_(radius), ellipsoid_(std::move(ellipsoid)) {}

  double radius() const { return radius_; }
  const Ellipsoid& ellipsoid() const { return ellipsoid_; }

  Vector project_ball(const Vector& z) const {
    const double n = z.norm();
    return n <= radius_ ? z : Vector(z * (radius_ / n));
  }

  bool contains(const Vector& theta, double tol = 1e-9) const {
    return theta.norm() <= radius_ + tol && ellipsoid_.contains(theta, tol);
  }

  /// Dykstra alternating projection: 100 sweeps, stops once iterates move < 1e-10.
  Vector project(const Vector& z, int sweeps = 100, double move_tol = 1e-10) const {
    Vector x = z;
    Vector p = Vector::Zero(z.size());
    Vector q = Vector::Zero(z.size());
    for (int k = 0; k < sweeps; ++k) {
      const Vector y = project_ball(x + p);
      p = x + p - y;
      const Vector next = ellipsoid_.project(y + q);
      q = y + q - next;
      const double moved = (next - x).norm();
      x = next;
      if (moved < move_tol && (x - y).norm() < move_tol) break;
    }
    return x;
  }

 private:
  double radius_;
  Ellipsoid ellipsoid_;
};

/// Bracket on max g.theta over a BallEllipsoid: `upper` is a dual bound, `lower`
/// the value at the feasible `witness`.
struct LinearMax {
  double upper = std::numeric_limits<double>::infinity();
  double lower = -std::numeric_limits<double>::infinity();
  Vector witness;
};

/// Maximizes g.theta over ball ∩ ellipsoid through the two-multiplier Lagrangian
///   D(mu, nu) = sum_i h_i^2 / (4 (mu + nu L_i)) + mu R^2 + nu (B - c'Ac),  h = g + 2 nu A c,
/// in the eigenbasis of A. Nested bisection: mu for fixed nu, then nu.
inline LinearMax maximize_linear(const BallEllipsoid& set, const Vector& g) {
  const Ellipsoid& ell = set.ellipsoid();
  const Matrix& Q = ell.basis();
  const Vector& L = ell.eigenvalues();
  const Vector gq = Q.transpose() * g;
  const Vector cq = Q.transpose() * ell.center();
  const double R = set.radius();
  const double B = ell.bound();
  const Eigen::Index P = g.size();
  LinearMax out;
  out.witness = ell.center();
  if (P == 0 || g.norm() == 0.0) {
    out.upper = out.lower = 0.0;
    return out;
  }
  double cAc = 0.0;
  for (Eigen::Index i = 0; i < P; ++i) cAc += L[i] * cq[i] * cq[i];

  auto theta_at = [&](double mu, double nu, Vector& th) {
    for (Eigen::Index i = 0; i < P; ++i) {
      const double h = gq[i] + 2.0 * nu * L[i] * cq[i];
      const double den = mu + nu * L[i];
      if (den <= 0.0) {
        if (h != 0.0) return false;
        th[i] = 0.0;
      } else {
        th[i] = 0.5 * h / den;
      }
    }
    return true;
  };
  auto dual = [&](double mu, double nu) {
    double s = mu * R * R + nu * (B - cAc);
    for (Eigen::Index i = 0; i < P; ++i) {
      const double h = gq[i] + 2.0 * nu * L[i] * cq[i];
      const double den = mu + nu * L[i];
      if (den <= 0.0) {
        if (h != 0.0) return std::numeric_limits<double>::infinity();
        continue;
      }
      s += h * h / (4.0 * den);
    }
    return s;
  };
  Vector th(P);
  // Optimal mu for fixed nu: smallest mu >= 0 with |theta| <= R.
  auto best_mu = [&](double nu) {
    if (theta_at(0.0, nu, th) && th.norm() <= R) return 0.0;
    double lo = 0.0;
    double hi = 1.0;
    while (!(theta_at(hi, nu, th) && th.norm() <= R) && hi < 1e300) hi *= 4.0;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (mid <= lo || mid >= hi) break;
      if (theta_at(mid, nu, th) && th.norm() <= R) hi = mid; else lo = mid;
    }
    return hi;
  };
  auto ell_excess = [&](double nu, double& mu) {
    mu = best_mu(nu);
    theta_at(mu, nu, th);
    double q = 0.0;
    for (Eigen::Index i = 0; i < P; ++i) q += L[i] * (th[i] - cq[i]) * (th[i] - cq[i]);
    return q - B;
  };

  double mu = 0.0;
  double nu = 0.0;
  if (ell_excess(0.0, mu) > 0.0) {
    double lo = 0.0;
    double hi = 1.0;
    double mu_hi = 0.0;
    while (ell_excess(hi, mu_hi) > 0.0 && hi < 1e300) hi *= 4.0;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (mid <= lo || mid >= hi) break;
      double m = 0.0;
      if (ell_excess(mid, m) > 0.0) lo = mid; else hi = mid;
    }
    nu = hi;
    mu = best_mu(nu);
  }
  out.upper = dual(mu, nu);
  theta_at(mu, nu, th);

  // Pull the primal candidate back along the segment to the center until feasible.
  const Vector c = ell.center();
  const Vector d = Q * th - c;
  double t = 1.0;
  const double qd = d.dot(ell.metric() * d);
  if (qd > B) t = std::min(t, B > 0.0 ? std::sqrt(B / qd) : 0.0);
  const double dd = d.squaredNorm();
  if (dd > 0.0 && (c + t * d).norm() > R) {
    // |c + s d|^2 = R^2, largest root; |c| <= R so the root is >= 0.
    const double b = c.dot(d);
    const double disc = b * b - dd * (c.squaredNorm() - R * R);
    t = std::min(t, std::max(0.0, (-b + std::sqrt(std::max(0.0, disc))) / dd));
  }
  out.witness = c + t * d;
  out.lower = g.dot(out.witness);
  out.upper = std::max(out.upper, out.lower);
  return out;
}

struct DisagreeConfig {
  std::size_t restarts = 2;
  std::size_t max_iters = 500;
  double tol = 1e-7;
  bool conservative_on_uncertain = true;

  void validate() const {
    if (restarts < 1) throw std::invalid_argument("disagreement restarts must be >= 1");
    if (max_iters < 1) throw std::invalid_argument("disagreement max_iters must be >= 1");
    if (!(tol > 0.0)) throw std::invalid_argument("disagreement tol must be positive");
  }
};

/// Outcome of maximizing max_{c != c*} phi(f(x))[c] - phi(f(x))[c*] over the version space.
struct MarginSearch {
  double value = -std::numeric_limits<double>::infinity();
  ClassIndex center_class = 0;   ///< c*
  ClassIndex best_class = 0;     ///< argmax over c != c*
  bool certified = true;         ///< false when some ascent hit max_iters without a witness
  Params witness;                ///< member attaining `value`
};

class VersionSpace {
 public:
  VersionSpace(ClassSpec cls, Params center, std::vector<Input> anchors, double radius_b)
      : cls_(std::move(cls)), center_(std::move(center)), anchors_(std::move(anchors)), radius_b_(radius_b) {
    cls_.validate();
    if (!is_feasible(cls_, center_)) throw std::invalid_argument("version-space center is infeasible");
    if (!(radius_b_ >= 0.0) || !std::isfinite(radius_b_)) {
      throw std::invalid_argument("version-space radius must be finite and non-negative");
    }
    geometry_ = std::make_shared<BallEllipsoid>(
        cls_.radius, Ellipsoid(center_.theta, anchor_metric(cls_, anchors_), radius_b_));
  }

  const ClassSpec& cls() const { return cls_; }
  const Params& center() const { return center_; }
  const std::vector<Input>& anchors() const { return anchors_; }
  double radius_b() const { return radius_b_; }
  const BallEllipsoid& geometry() const { return *geometry_; }

 private:
  ClassSpec cls_;
  Params center_;
  std::vector<Input> anchors_;
  double radius_b_;
  std::shared_ptr<const BallEllipsoid> geometry_;
};

/// param_distance_sq(p, center, anchors) <= B + 1e-9.
inline bool contains(const VersionSpace& vs, const Params& p) {
  return param_distance_sq(vs.cls(), p, vs.center(), vs.anchors()) <= vs.radius_b() + 1e-9;
}

namespace detail {

inline std::uint64_t hash_input(const Input& x) {
  std::uint64_t h = 0x84222325cbf29ce4ULL;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    std::uint64_t bits = 0;
    const double v = x[i];
    std::memcpy(&bits, &v, sizeof bits);
    h = splitmix64(h ^ bits);
  }
  return h;
}

/// phi(v)[c] - phi(v)[c*] and its gradient with respect to v.
inline std::pair<double, Vector> link_difference(const SurrogateSpec& spec, const ScoreVector& v, ClassIndex c,
                                                 ClassIndex cstar) {
  const auto ic = static_cast<Eigen::Index>(c);
  const auto is = static_cast<Eigen::Index>(cstar);
  if (spec.kind == SurrogateKind::squared) {
    Vector g = Vector::Zero(v.size());
    g[ic] = 1.0;
    g[is] = -1.0;
    return {v[ic] - v[is], g};
  }
  const Vector p = potential_gradient(spec, v);
  Vector g = p[ic] * (-p);
  g[ic] += p[ic];
  g += p[is] * p;
  g[is] -= p[is];
  return {p[ic] - p[is], g};
}

struct AscentResult {
  Vector theta;
  double value = -std::numeric_limits<double>::infinity();
  bool converged = false;
};

/// Projected gradient ascent with backtracking and step growth.
template <typename Objective>
AscentResult projected_ascent(const BallEllipsoid& set, Vector start, const Objective& objective,
                              std::size_t max_iters) {
  AscentResult r;
  r.theta = set.project(start);
  auto [value, grad] = objective(r.theta);
  r.value = value;
  double step = 1.0;
  for (std::size_t it = 0; it < max_iters; ++it) {
    if (grad.norm() == 0.0) {
      r.converged = true;
      return r;
    }
    bool accepted = false;
    Vector next;
    double next_value = 0.0;
    Vector next_grad;
    for (int tries = 0; tries < 60; ++tries) {
      next = set.project(r.theta + step * grad);
      std::tie(next_value, next_grad) = objective(next);
      if (next_value >= r.value + 1e-4 * grad.dot(next - r.theta) - 1e-15) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      r.converged = true;  // no ascent direction left at machine precision
      return r;
    }
    const double moved = (next - r.theta).norm();
    r.theta = std::move(next);
    r.value = next_value;
    grad = std::move(next_grad);
    if (moved < 1e-12 || moved / step < 1e-10) {
      r.converged = true;
      return r;
    }
    step = std::min(step * 4.0, 1e8);
  }
  return r;
}

inline Vector random_start(const ClassSpec& cls, Rng& rng) {
  const auto P = static_cast<Eigen::Index>(cls.num_params());
  Vector z(P);
  for (Eigen::Index i = 0; i < P; ++i) z[i] = standard_normal(rng);
  const double n = z.norm();
  if (n == 0.0) return z;
  const double r = cls.radius * std::pow(uniform01(rng), 1.0 / static_cast<double>(P));
  return z * (r / n);
}

}  // namespace detail

/// Best value found of max_{c != c*} phi(f(x))[c] - phi(f(x))[c*] over the version space.
inline MarginSearch search_margin(const VersionSpace& vs, const Input& x, const SurrogateSpec& spec,
                                  const DisagreeConfig& cfg, bool stop_at_witness = false) {
  cfg.validate();
  const ClassSpec& cls = vs.cls();
  const Matrix J = score_jacobian(cls, x);
  const ScoreVector center_scores = evaluate(cls, vs.center(), x);
  MarginSearch out;
  out.center_class = classify(spec, center_scores);
  out.witness = vs.center();
  const std::uint64_t xhash = detail::hash_input(x);

  for (ClassIndex c = 0; c < cls.K; ++c) {
    if (c == out.center_class) continue;
    const ClassIndex cstar = out.center_class;
    const Params zero = zero_params(cls);
    const ScoreVector offset = evaluate(cls, zero, x);
    auto objective = [&](const Vector& theta) {
      const ScoreVector v = offset + J * theta;
      auto [val, gv] = detail::link_difference(spec, v, c, cstar);
      return std::pair<double, Vector>{val, J.transpose() * gv};
    };

    auto consider = [&](const Vector& theta, double value) {
      if (value > out.value) {
        out.value = value;
        out.best_class = c;
        out.witness = Params(theta);
      }
    };

    if (spec.kind == SurrogateKind::squared) {
      // Affine objective: solve exactly through the dual unless the bracket is loose.
      Vector e = Vector::Zero(offset.size());
      e[static_cast<Eigen::Index>(c)] = 1.0;
      e[static_cast<Eigen::Index>(cstar)] = -1.0;
      const double base = e.dot(offset);
      const LinearMax lm = maximize_linear(vs.geometry(), J.transpose() * e);
      if (lm.upper - lm.lower <= 1e-10 * std::max(1.0, std::abs(lm.upper))) {
        consider(lm.witness, base + lm.lower);
        if (stop_at_witness && out.value > cfg.tol) break;
        continue;
      }
    }

    // Start from the center, then from random feasible points.
    Rng rng = make_stream(xhash, Stream::search, c);
    for (std::size_t r = 0; r <= cfg.restarts; ++r) {
      const Vector start = r == 0 ? vs.center().theta : detail::random_start(cls, rng);
      const auto res = detail::projected_ascent(vs.geometry(), start, objective, cfg.max_iters);
      if (!res.converged) out.certified = false;
      consider(res.theta, res.value);
      // A concave objective (squared link) has a single optimum: one converged ascent suffices.
      if (spec.kind == SurrogateKind::squared && res.converged) break;
      if (stop_at_witness && out.value > cfg.tol) break;
    }
    if (stop_at_witness && out.value > cfg.tol) break;
  }
  if (out.value > cfg.tol) out.certified = true;
  return out;
}

/// Disagreement verdict from a search outcome.
inline bool disagreement_verdict(const MarginSearch& s, const DisagreeConfig& cfg) {
  if (s.value > cfg.tol) return true;
  // Level within tol: the tie-break flips the label only toward a lower index.
  if (std::abs(s.value) <= cfg.tol && s.best_class < s.center_class) return true;
  if (!s.certified && cfg.conservative_on_uncertain) return true;
  return false;
}

/// Value of the margin search (diagnostics; -margin(phi(center(x))) when F_m = {center}).
inline double certify_margin_bound(const VersionSpace& vs, const Input& x, const SurrogateSpec& spec,
                                   const DisagreeConfig& cfg) {
  return search_margin(vs, x, spec, cfg).value;
}

/// exists f, f' in F_m with h_f(x) != h_f'(x).
inline bool disagrees_at(const VersionSpace& vs, const Input& x, const SurrogateSpec& spec,
                         const DisagreeConfig& cfg) {
  return disagreement_verdict(search_margin(vs, x, spec, cfg, true), cfg);
}

}  // namespace epoch_active
