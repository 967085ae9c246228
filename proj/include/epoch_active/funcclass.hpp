#pragma once

// Convex, affine-in-parameters function classes f: X -> R^K.
//
//   binary_ball_linear:  f_w(x) = ((1 + w.x)/2, (1 - w.x)/2),  |w|_2 <= 1
//   multiclass_linear:   f_W(x) = W x,                          |W|_F <= R
//
// Both are affine in the parameters, f(x) = offset + J_x theta, which is what the
// oracle, the version space and the disagreement-coefficient estimator rely on.

#include "epoch_active/common.hpp"
#include "epoch_active/surrogate.hpp"

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace epoch_active {

enum class ClassKind { binary_ball_linear, multiclass_linear };

inline std::string to_string(ClassKind k) {
  return k == ClassKind::binary_ball_linear ? "binary_ball_linear" : "multiclass_linear";
}

inline ClassKind class_kind_from_string(const std::string& s) {
  if (s == "binary_ball_linear") return ClassKind::binary_ball_linear;
  if (s == "multiclass_linear") return ClassKind::multiclass_linear;
  throw std::invalid_argument("unknown class kind '" + s + "'");
}

struct ClassSpec {
  ClassKind kind = ClassKind::binary_ball_linear;
  std::size_t d = 1;
  std::size_t K = 2;
  double radius = 1.0;
  double x_bound = 1.0;

  void validate() const {
    if (d == 0) throw std::invalid_argument("class dimension d must be positive");
    if (K < 2) throw std::invalid_argument("class count K must be at least 2");
    if (!(radius > 0.0) || !std::isfinite(radius)) {
      throw std::invalid_argument("class radius must be positive and finite");
    }
    if (kind == ClassKind::binary_ball_linear && (K != 2 || radius != 1.0)) {
      throw std::invalid_argument("binary_ball_linear requires K = 2 and radius = 1");
    }
  }

  std::size_t num_params() const { return kind == ClassKind::binary_ball_linear ? d : K * d; }
};

inline ClassSpec binary_ball_class(std::size_t d) {
  return {ClassKind::binary_ball_linear, d, 2, 1.0, 1.0};
}

inline ClassSpec multiclass_linear_class(std::size_t d, std::size_t K, double radius) {
  return {ClassKind::multiclass_linear, d, K, radius, 1.0};
}

/// Flat parameter vector: w (binary) or row-major W (multiclass).
struct Params {
  Vector theta;

  Params() = default;
  explicit Params(Vector t) : theta(std::move(t)) {}

  friend bool operator==(const Params& a, const Params& b) {
    return a.theta.size() == b.theta.size() && a.theta == b.theta;
  }
};

inline Params zero_params(const ClassSpec& cls) {
  return Params(Vector::Zero(static_cast<Eigen::Index>(cls.num_params())));
}

/// Squared surrogate needs simplex-valued scores, which only the binary class emits.
inline void require_compatible(const ClassSpec& cls, const SurrogateSpec& spec) {
  cls.validate();
  spec.validate();
  if (spec.kind == SurrogateKind::squared && cls.kind != ClassKind::binary_ball_linear) {
    throw std::invalid_argument("squared surrogate requires the binary_ball_linear class");
  }
}

namespace detail {

inline void require_input(const ClassSpec& cls, const Input& x) {
  if (static_cast<std::size_t>(x.size()) != cls.d) {
    throw std::invalid_argument("input has dimension " + std::to_string(x.size()) +
                                ", class expects " + std::to_string(cls.d));
  }
}

inline void require_params(const ClassSpec& cls, const Params& p) {
  if (static_cast<std::size_t>(p.theta.size()) != cls.num_params()) {
    throw std::invalid_argument("parameter vector has length " + std::to_string(p.theta.size()) +
                                ", class expects " + std::to_string(cls.num_params()));
  }
}

inline Eigen::Index idx(std::size_t i) { return static_cast<Eigen::Index>(i); }

}  // namespace detail

inline bool input_in_domain(const ClassSpec& cls, const Input& x, double tol = 1e-9) {
  return static_cast<std::size_t>(x.size()) == cls.d && all_finite(x) &&
         x.norm() <= cls.x_bound + tol;
}

/// f_theta(x).
inline ScoreVector evaluate(const ClassSpec& cls, const Params& p, const Input& x) {
  detail::require_input(cls, x);
  detail::require_params(cls, p);
  if (cls.kind == ClassKind::binary_ball_linear) {
    const double s = p.theta.dot(x);
    ScoreVector v(2);
    v << 0.5 * (1.0 + s), 0.5 * (1.0 - s);
    return v;
  }
  const auto d = detail::idx(cls.d);
  const auto K = detail::idx(cls.K);
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
             p.theta.data(), K, d) *
         x;
}

/// Jacobian J_x of theta -> f_theta(x) (K x P). Constant in theta.
inline Matrix score_jacobian(const ClassSpec& cls, const Input& x) {
  detail::require_input(cls, x);
  const auto d = detail::idx(cls.d);
  if (cls.kind == ClassKind::binary_ball_linear) {
    Matrix J(2, d);
    J.row(0) = 0.5 * x.transpose();
    J.row(1) = -0.5 * x.transpose();
    return J;
  }
  const auto K = detail::idx(cls.K);
  Matrix J = Matrix::Zero(K, K * d);
  for (Eigen::Index k = 0; k < K; ++k) J.block(k, k * d, 1, d) = x.transpose();
  return J;
}

/// J_x^T g: pulls a score-space gradient back to parameter space.
inline Vector pullback(const ClassSpec& cls, const Input& x, const Vector& score_grad) {
  const auto d = detail::idx(cls.d);
  if (cls.kind == ClassKind::binary_ball_linear) return 0.5 * (score_grad[0] - score_grad[1]) * x;
  const auto K = detail::idx(cls.K);
  Vector out(K * d);
  for (Eigen::Index k = 0; k < K; ++k) out.segment(k * d, d) = score_grad[k] * x;
  return out;
}

/// Euclidean projection onto the norm ball (|w|_2 <= 1 or |W|_F <= R).
inline Params project(const ClassSpec& cls, const Params& p) {
  const double r = cls.radius;
  const double n = p.theta.norm();
  if (n <= r) return p;
  return Params(p.theta * (r / n));
}

inline bool is_feasible(const ClassSpec& cls, const Params& p, double tol = 1e-9) {
  return static_cast<std::size_t>(p.theta.size()) == cls.num_params() && all_finite(p.theta) &&
         p.theta.norm() <= cls.radius + tol;
}

/// sum_t |f_p(x_t) - f_q(x_t)|^2.
inline double param_distance_sq(const ClassSpec& cls, const Params& p, const Params& q,
                                std::span<const Input> points) {
  double total = 0.0;
  for (const auto& x : points) total += (evaluate(cls, p, x) - evaluate(cls, q, x)).squaredNorm();
  return total;
}

/// Accumulates sum_t w_t J_{x_t}^T J_{x_t}, the Gram matrix with
/// param_distance_sq(p, q) = (p - q)^T A (p - q).
class MetricBuilder {
 public:
  explicit MetricBuilder(const ClassSpec& cls)
      : cls_(cls), moment_(Matrix::Zero(detail::idx(cls.d), detail::idx(cls.d))) {}

  void add(const Input& x, double weight = 1.0) {
    detail::require_input(cls_, x);
    moment_.noalias() += weight * x * x.transpose();
  }

  /// Raw second moment sum_t w_t x_t x_t^T (d x d).
  const Matrix& moment() const { return moment_; }

  Matrix build() const {
    if (cls_.kind == ClassKind::binary_ball_linear) return 0.5 * moment_;
    const auto d = detail::idx(cls_.d);
    const auto K = detail::idx(cls_.K);
    Matrix A = Matrix::Zero(K * d, K * d);
    for (Eigen::Index k = 0; k < K; ++k) A.block(k * d, k * d, d, d) = moment_;
    return A;
  }

 private:
  ClassSpec cls_;
  Matrix moment_;
};

inline Matrix anchor_metric(const ClassSpec& cls, std::span<const Input> points) {
  MetricBuilder builder(cls);
  for (const auto& x : points) builder.add(x);
  return builder.build();
}

}  // namespace epoch_active
