#pragma once

// Empirical check of the region-wise calibration assumption: for every region Q
// and class k,  gap(phi(f*_Q(x)), k) >= psi(gap(eta(x), k))  for x ~ D_Q.

#include "epoch_active/common.hpp"
#include "epoch_active/funcclass.hpp"
#include "epoch_active/instance.hpp"
#include "epoch_active/oracle.hpp"
#include "epoch_active/surrogate.hpp"

#include <functional>
#include <string>
#include <vector>

namespace epoch_active {

using Psi = std::function<double(double)>;

struct AssumptionOptions {
  std::size_t samples = 10'000;      ///< checked draws per region (continuous marginals)
  std::size_t fit_samples = 50'000;  ///< eta-target draws used to fit f*_Q (continuous marginals)
  double slack = 1e-6;
  std::uint64_t seed = 0;
  OracleConfig oracle{20'000, StepRule::backtracking, 1.0, 1e-11, 0};
};

struct RegionCheck {
  std::string name;
  bool skipped = false;
  std::string note;
  std::size_t points = 0;
  std::size_t violations = 0;
  double worst_deficit = -std::numeric_limits<double>::infinity();  ///< max psi(gap eta) - gap f*
  Params f_star;
};

struct AssumptionReport {
  std::vector<RegionCheck> regions;

  std::size_t violations() const {
    std::size_t v = 0;
    for (const auto& r : regions) v += r.violations;
    return v;
  }

  double worst_deficit() const {
    double w = -std::numeric_limits<double>::infinity();
    for (const auto& r : regions) {
      if (!r.skipped) w = std::max(w, r.worst_deficit);
    }
    return w;
  }
};

namespace detail {

template <typename ScoreFn>
void check_points(RegionCheck& rc, const InstanceSpec& inst, const SurrogateSpec& spec, const ScoreFn& f_star,
                  const Psi& psi, const std::vector<Input>& xs, double slack) {
  for (const auto& x : xs) {
    const ProbVector pf = link(spec, f_star(x));
    const ProbVector pe = eta(inst, x);
    for (ClassIndex k = 0; k < static_cast<ClassIndex>(pe.size()); ++k) {
      const double deficit = psi(gap(pe, k)) - gap(pf, k);
      rc.worst_deficit = std::max(rc.worst_deficit, deficit);
      if (deficit > slack) ++rc.violations;
    }
    ++rc.points;
  }
}

inline std::vector<Input> region_points(const InstanceSpec& inst, const QueryRegion& region,
                                        std::size_t samples, std::uint64_t seed, std::size_t region_index) {
  if (inst.finite_support()) {
    std::vector<Input> xs;
    for (auto& a : region_support(inst, region)) xs.push_back(std::move(a.x));
    return xs;
  }
  Rng rng = make_stream(mix_seed(seed, region_index), Stream::evaluation, 1);
  return sample_region(inst, region, samples, rng);
}

}  // namespace detail

/// Fits f*_Q per region (exact eta-targets on finite supports, fit_samples draws
/// otherwise) and checks every support point / `samples` draws of D_Q.
inline AssumptionReport verify_assumption(const InstanceSpec& inst, const ClassSpec& cls, const SurrogateSpec& spec,
                                          const Psi& psi, const std::vector<QueryRegion>& regions,
                                          const AssumptionOptions& opt = {}) {
  inst.validate();
  require_compatible(cls, spec);
  AssumptionReport report;
  for (std::size_t i = 0; i < regions.size(); ++i) {
    RegionCheck rc;
    rc.name = regions[i].name;
    try {
      const FitResult star =
          best_in_class(cls, spec, inst, regions[i], opt.fit_samples, mix_seed(opt.seed, i), opt.oracle);
      rc.f_star = star.params;
      const auto xs = detail::region_points(inst, regions[i], opt.samples, opt.seed, i);
      detail::check_points(
          rc, inst, spec, [&](const Input& x) { return evaluate(cls, star.params, x); }, psi, xs, opt.slack);
    } catch (const DegenerateRegion& e) {
      rc.skipped = true;
      rc.note = e.what();
    }
    report.regions.push_back(std::move(rc));
  }
  return report;
}

/// Same check with a finite candidate class: f*_Q is the candidate of least
/// exact surrogate risk on D_Q (finite-support instances only).
template <typename ScoreFn>
AssumptionReport verify_assumption_finite_class(const InstanceSpec& inst, const SurrogateSpec& spec,
                                                const std::vector<ScoreFn>& candidates, const Psi& psi,
                                                const std::vector<QueryRegion>& regions, double slack = 1e-6) {
  inst.validate();
  if (candidates.empty()) throw std::invalid_argument("candidate class is empty");
  AssumptionReport report;
  for (const auto& region : regions) {
    RegionCheck rc;
    rc.name = region.name;
    try {
      std::size_t best = 0;
      while (excess_surrogate_risk_finite_class(spec, candidates, best, inst, region) > 0.0) ++best;
      std::vector<Input> xs;
      for (auto& a : region_support(inst, region)) xs.push_back(std::move(a.x));
      detail::check_points(rc, inst, spec, candidates[best], psi, xs, slack);
    } catch (const DegenerateRegion& e) {
      rc.skipped = true;
      rc.note = e.what();
    }
    report.regions.push_back(std::move(rc));
  }
  return report;
}

/// Example 1 regions {±e_i : i in S} for every non-empty S ⊆ [d].
inline std::vector<QueryRegion> symmetric_axis_regions(std::size_t d) {
  if (d == 0 || d > 20) throw std::invalid_argument("symmetric_axis_regions needs 1 <= d <= 20");
  std::vector<QueryRegion> regions;
  for (std::uint32_t mask = 1; mask < (1u << d); ++mask) {
    std::string name = "S=";
    for (std::size_t i = 0; i < d; ++i) {
      if (mask & (1u << i)) name += std::to_string(i);
    }
    regions.push_back({[mask, d](const Input& x) {
                         for (std::size_t i = 0; i < d; ++i) {
                           if (x[static_cast<Eigen::Index>(i)] != 0.0) return (mask & (1u << i)) != 0;
                         }
                         return false;
                       },
                       name});
  }
  return regions;
}

}  // namespace epoch_active
