#pragma once

// Synthetic problem instances with an exact conditional eta(x).
//
// Binary continuous families share an "axial" marginal on the unit sphere:
// x_1 is drawn on [-1, 1] (or a symmetric subset of it) and the remaining
// coordinates point in a uniform direction with radius sqrt(1 - x_1^2). The
// Bayes boundary is x_1 = 0, and the margin of eta(x) is a function of |x_1|
// only, which makes the margin CDF available in closed form.

#include "epoch_active/common.hpp"
#include "epoch_active/surrogate.hpp"

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace epoch_active {

enum class InstanceKind { example1, example2, massart_linear, tsybakov_linear, linf_approx_realizable };

inline std::string to_string(InstanceKind k) {
  switch (k) {
    case InstanceKind::example1: return "example1";
    case InstanceKind::example2: return "example2";
    case InstanceKind::massart_linear: return "massart_linear";
    case InstanceKind::tsybakov_linear: return "tsybakov_linear";
    case InstanceKind::linf_approx_realizable: return "linf_approx_realizable";
  }
  return "unknown";
}

inline InstanceKind instance_kind_from_string(const std::string& s) {
  if (s == "example1") return InstanceKind::example1;
  if (s == "example2") return InstanceKind::example2;
  if (s == "massart_linear") return InstanceKind::massart_linear;
  if (s == "tsybakov_linear") return InstanceKind::tsybakov_linear;
  if (s == "linf_approx_realizable") return InstanceKind::linf_approx_realizable;
  throw std::invalid_argument("unknown instance kind '" + s + "'");
}

/// Problem description. Which parameters matter depends on `kind`:
///   example1                d
///   example2                gamma (eta(0) = 1/2 + gamma), delta_prime (f(0) = 1/2 - delta')
///   massart_linear          d, K, gamma (margin lower bound)
///   tsybakov_linear         d, beta, c  (P[margin < t] = min(1, c t^beta))
///   linf_approx_realizable  d, gamma, epsilon (scalar units: |eta-1/2| >= gamma, |f*-eta| <= eps)
struct InstanceSpec {
  InstanceKind kind = InstanceKind::example1;
  std::size_t d = 2;
  std::size_t K = 2;
  double gamma = 0.1;
  double beta = 1.0;
  double epsilon = 0.1;
  double c = 1.0;
  double delta_prime = 0.01;
  std::uint64_t seed = 0;

  void validate() const {
    if (d == 0) throw std::invalid_argument("instance dimension d must be positive");
    switch (kind) {
      case InstanceKind::example1:
        if (K != 2) throw std::invalid_argument("example1 is binary (K = 2)");
        break;
      case InstanceKind::example2:
        if (K != 2 || d != 1) throw std::invalid_argument("example2 has d = 1, K = 2");
        if (!(gamma > 0.0 && gamma <= 0.25)) {
          throw std::invalid_argument("example2 needs gamma in (0, 1/4] so f*(0) <= 1");
        }
        if (!(delta_prime > 0.0 && delta_prime <= 0.5)) {
          throw std::invalid_argument("example2 needs delta_prime in (0, 1/2]");
        }
        break;
      case InstanceKind::massart_linear:
        if (K < 2) throw std::invalid_argument("massart_linear needs K >= 2");
        if (K > 2 && d < K) throw std::invalid_argument("massart_linear with K > 2 needs d >= K");
        if (!(gamma >= 0.0 && gamma < 1.0)) {
          throw std::invalid_argument("massart_linear needs gamma in [0, 1)");
        }
        break;
      case InstanceKind::tsybakov_linear:
        if (K != 2) throw std::invalid_argument("tsybakov_linear is binary (K = 2)");
        if (!(beta > 0.0) || !(c > 0.0)) {
          throw std::invalid_argument("tsybakov_linear needs beta > 0 and c > 0");
        }
        break;
      case InstanceKind::linf_approx_realizable:
        if (K != 2) throw std::invalid_argument("linf_approx_realizable is binary (K = 2)");
        if (!(epsilon > 0.0 && gamma >= epsilon)) {
          throw std::invalid_argument("linf_approx_realizable needs gamma >= epsilon > 0");
        }
        if (gamma + epsilon > 0.5) {
          throw std::invalid_argument("linf_approx_realizable needs gamma + epsilon <= 1/2");
        }
        break;
    }
  }

  bool finite_support() const {
    return kind == InstanceKind::example1 || kind == InstanceKind::example2;
  }
};

struct LabeledDraw {
  Input x;
  ClassIndex y = 0;
};

/// One support point of a finite marginal.
struct Atom {
  Input x;
  double weight = 0.0;
};

/// A subset Q of X, given as a membership predicate. D_Q is sampled by rejection.
struct QueryRegion {
  std::function<bool(const Input&)> contains;
  std::string name = "X";

  static QueryRegion whole() {
    return {[](const Input&) { return true; }, "X"};
  }
};

namespace detail {

inline Input unit(std::size_t d, std::size_t i, double sign = 1.0) {
  Input x = Input::Zero(static_cast<Eigen::Index>(d));
  x[static_cast<Eigen::Index>(i)] = sign;
  return x;
}

/// Completes x_1 = t to a unit vector with a uniform direction in the other coordinates.
inline Input axial_point(std::size_t d, double t, Rng& rng) {
  Input x = Input::Zero(static_cast<Eigen::Index>(d));
  x[0] = t;
  if (d == 1) return x;
  Vector z(static_cast<Eigen::Index>(d - 1));
  double n2 = 0.0;
  do {
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = standard_normal(rng);
    n2 = z.squaredNorm();
  } while (n2 <= 0.0);
  x.tail(static_cast<Eigen::Index>(d - 1)) = z * (std::sqrt(std::max(0.0, 1.0 - t * t)) / std::sqrt(n2));
  return x;
}

inline Input sphere_point(std::size_t d, Rng& rng) {
  Vector z(static_cast<Eigen::Index>(d));
  double n2 = 0.0;
  do {
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = standard_normal(rng);
    n2 = z.squaredNorm();
  } while (n2 <= 0.0);
  return z / std::sqrt(n2);
}

inline double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// Lower edge of the linf_approx_realizable support in |x_1|.
inline double linf_support_floor(const InstanceSpec& inst) { return 2.0 * (inst.gamma + inst.epsilon); }

inline ProbVector binary_eta(double p_first) {
  ProbVector p(2);
  p << p_first, 1.0 - p_first;
  return p;
}

inline void require_on_support(const InstanceSpec& inst, const Input& x);

}  // namespace detail

/// Finite marginal as weighted atoms; empty for continuous kinds.
inline std::vector<Atom> support(const InstanceSpec& inst) {
  std::vector<Atom> atoms;
  if (inst.kind == InstanceKind::example1) {
    const double w = 1.0 / (2.0 * static_cast<double>(inst.d));
    for (std::size_t i = 0; i < inst.d; ++i) {
      atoms.push_back({detail::unit(inst.d, i, 1.0), w});
      atoms.push_back({detail::unit(inst.d, i, -1.0), w});
    }
  } else if (inst.kind == InstanceKind::example2) {
    atoms.push_back({Input::Zero(1), 1.0});
  }
  return atoms;
}

namespace detail {

inline void require_on_support(const InstanceSpec& inst, const Input& x) {
  if (static_cast<std::size_t>(x.size()) != inst.d) {
    throw std::invalid_argument("input dimension does not match the instance");
  }
  if (!inst.finite_support()) return;
  for (const auto& a : support(inst)) {
    if ((a.x - x).norm() <= 1e-12) return;
  }
  throw std::invalid_argument("input is not a support point of " + to_string(inst.kind));
}

}  // namespace detail

/// Exact conditional probability vector eta(x).
inline ProbVector eta(const InstanceSpec& inst, const Input& x) {
  detail::require_on_support(inst, x);
  switch (inst.kind) {
    case InstanceKind::example1:
      return detail::binary_eta(0.5 * (1.0 + x.sum()));
    case InstanceKind::example2:
      return detail::binary_eta(0.5 + inst.gamma);
    case InstanceKind::massart_linear: {
      // Realizable: eta_1 = (1 + x_1) / 2 with |x_1| >= gamma on the support.
      if (inst.K == 2) return detail::binary_eta(0.5 * (1.0 + x[0]));
      const auto K = static_cast<Eigen::Index>(inst.K);
      const Vector head = x.head(K);
      const ClassIndex top = argmax_lowest(head);
      double second = -std::numeric_limits<double>::infinity();
      for (Eigen::Index k = 0; k < K; ++k) {
        if (static_cast<ClassIndex>(k) != top) second = std::max(second, head[k]);
      }
      const double m =
          std::min(1.0, inst.gamma + (1.0 - inst.gamma) * (head[static_cast<Eigen::Index>(top)] - second));
      ProbVector p = Vector::Constant(K, (1.0 - m) / static_cast<double>(inst.K));
      p[static_cast<Eigen::Index>(top)] += m;
      return p;
    }
    case InstanceKind::tsybakov_linear: {
      const double t = x[0];
      const double m = std::min(1.0, std::pow(std::abs(t) / inst.c, 1.0 / inst.beta));
      return detail::binary_eta(0.5 + 0.5 * (t >= 0.0 ? 1.0 : -1.0) * m);
    }
    case InstanceKind::linf_approx_realizable: {
      const double t = x[0];
      const double s = detail::linf_support_floor(inst);
      const double magnitude = std::min(inst.epsilon, 0.5 * (1.0 - std::abs(t)));
      const double sign = std::abs(t) >= 0.5 * (1.0 + s) ? 1.0 : -1.0;
      return detail::binary_eta(0.5 * (1.0 + t) + sign * magnitude);
    }
  }
  throw std::logic_error("unhandled instance kind");
}

inline ClassIndex bayes_classify(const InstanceSpec& inst, const Input& x) {
  return argmax_lowest(eta(inst, x));
}

/// Exact P[margin(eta(x)) < t] for the families where it is available in closed form.
inline std::optional<double> margin_cdf(const InstanceSpec& inst, double t) {
  if (t <= 0.0) return 0.0;
  switch (inst.kind) {
    case InstanceKind::tsybakov_linear:
      return t >= 1.0 ? 1.0 : std::min(1.0, inst.c * std::pow(t, inst.beta));
    case InstanceKind::massart_linear:
      if (inst.K != 2) return std::nullopt;
      if (t <= inst.gamma) return 0.0;
      return std::min(1.0, (t - inst.gamma) / (1.0 - inst.gamma));
    default:
      return std::nullopt;
  }
}

/// One draw from the marginal D_X.
inline Input sample_one(const InstanceSpec& inst, Rng& rng) {
  switch (inst.kind) {
    case InstanceKind::example1: {
      const auto i = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(2 * inst.d));
      const std::size_t j = std::min(i, 2 * inst.d - 1);
      return detail::unit(inst.d, j / 2, (j % 2 == 0) ? 1.0 : -1.0);
    }
    case InstanceKind::example2:
      return Input::Zero(1);
    case InstanceKind::massart_linear:
      if (inst.K > 2) return detail::sphere_point(inst.d, rng);
      {
        const double magnitude = uniform(rng, inst.gamma, 1.0);
        return detail::axial_point(inst.d, uniform01(rng) < 0.5 ? -magnitude : magnitude, rng);
      }
    case InstanceKind::tsybakov_linear:
      return detail::axial_point(inst.d, uniform(rng, -1.0, 1.0), rng);
    case InstanceKind::linf_approx_realizable: {
      const double s = detail::linf_support_floor(inst);
      const double magnitude = uniform(rng, s, 1.0);
      const double sign = uniform01(rng) < 0.5 ? -1.0 : 1.0;
      return detail::axial_point(inst.d, sign * magnitude, rng);
    }
  }
  throw std::logic_error("unhandled instance kind");
}

/// i.i.d. draws from D_X.
inline std::vector<Input> sample_x(const InstanceSpec& inst, std::size_t count, Rng& rng) {
  if (count == 0) throw std::invalid_argument("sample_x needs count >= 1");
  std::vector<Input> xs;
  xs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) xs.push_back(sample_one(inst, rng));
  return xs;
}

/// y ~ eta(x).
inline ClassIndex sample_label(const InstanceSpec& inst, const Input& x, Rng& rng) {
  return sample_categorical(rng, eta(inst, x));
}

inline std::vector<LabeledDraw> sample_labeled(const InstanceSpec& inst, std::size_t count,
                                               Rng& marginal_rng, Rng& label_rng) {
  std::vector<LabeledDraw> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Input x = sample_one(inst, marginal_rng);
    const ClassIndex y = sample_label(inst, x, label_rng);
    out.push_back({std::move(x), y});
  }
  return out;
}

/// Atoms of D_Q for finite-support instances, renormalized. Throws DegenerateRegion on zero mass.
inline std::vector<Atom> region_support(const InstanceSpec& inst, const QueryRegion& region) {
  std::vector<Atom> atoms;
  double mass = 0.0;
  for (auto& a : support(inst)) {
    if (region.contains(a.x)) {
      mass += a.weight;
      atoms.push_back(std::move(a));
    }
  }
  if (atoms.empty() || mass <= 0.0) {
    throw DegenerateRegion("region '" + region.name + "' has zero mass");
  }
  for (auto& a : atoms) a.weight /= mass;
  return atoms;
}

/// i.i.d. draws from D_Q by rejection from D_X.
inline std::vector<Input> sample_region(const InstanceSpec& inst, const QueryRegion& region,
                                        std::size_t count, Rng& rng) {
  constexpr std::size_t kProposalBudget = 1'000'000;
  std::vector<Input> xs;
  xs.reserve(count);
  std::size_t proposals = 0;
  while (xs.size() < count) {
    Input x = sample_one(inst, rng);
    ++proposals;
    if (region.contains(x)) {
      xs.push_back(std::move(x));
    } else if (xs.empty() && proposals >= kProposalBudget) {
      throw DegenerateRegion("region '" + region.name + "' accepted no draw in " +
                             std::to_string(kProposalBudget) + " proposals");
    }
  }
  return xs;
}

/// The two-function class of the convexity counterexample: f*(0) = 1/2 + 2 gamma,
/// f(0) = 1/2 - delta'. Index 0 is f*, index 1 is f.
inline std::vector<std::function<ScoreVector(const Input&)>> example2_candidates(
    const InstanceSpec& inst) {
  const double good = 0.5 + 2.0 * inst.gamma;
  const double bad = 0.5 - inst.delta_prime;
  return {[good](const Input&) { return detail::binary_eta(good); },
          [bad](const Input&) { return detail::binary_eta(bad); }};
}

}  // namespace epoch_active
