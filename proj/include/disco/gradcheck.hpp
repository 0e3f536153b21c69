#pragma once

// Central finite-difference checks of every analytic gradient in the library.
//
// Error is measured on whole vectors: |g - g_fd| / max(|g|, |g_fd|, floor).
// Instances whose token ratios sit within kKinkMargin of a clip boundary are
// redrawn, since the clipped surrogate has no derivative there.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "disco/constraint.hpp"
#include "disco/objectives.hpp"
#include "disco/policy.hpp"
#include "disco/random.hpp"
#include "disco/random_instances.hpp"

namespace disco {

inline constexpr double kFiniteDifferenceStep = 1e-5;
inline constexpr double kGradcheckTolerance = 1e-5;
inline constexpr double kGradientNormFloor = 1e-6;  // well above eps * |f| / h
inline constexpr double kKinkMargin = 1e-3;

// Applied to every analytic gradient before comparison. Identity by default;
// tests swap in a broken transform to confirm the checker notices.
using GradientHook = std::function<void(GradientVector&)>;

inline double relative_error(const GradientVector& analytic, const GradientVector& numeric) {
  GradientVector diff = analytic;
  diff -= numeric;
  const double scale = std::max({analytic.norm(), numeric.norm(), kGradientNormFloor});
  return diff.norm() / scale;
}

// Central differences of f over every coordinate of theta.
template <typename F>
GradientVector numeric_gradient(const PolicyParams& theta, F&& f, double h = kFiniteDifferenceStep) {
  PolicyParams probe = theta;
  GradientVector g(theta.size());
  auto z = probe.logits();
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double saved = z[i];
    z[i] = saved + h;
    const double up = f(probe);
    z[i] = saved - h;
    const double down = f(probe);
    z[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

struct GradcheckCase {
  std::string name;
  ObjectiveSpec spec;
  bool kl = false;  // check kl_gradient instead of an objective
};

// GRPO-ER gets its own case so the entropy gradient is covered.
inline std::vector<GradcheckCase> default_gradcheck_cases() {
  std::vector<GradcheckCase> out;
  for (auto k : kAllObjectiveKinds) {
    if (k == ObjectiveKind::disco || k == ObjectiveKind::disco_b) {
      out.push_back({std::string(objective_name(k)) + "/log-l", ObjectiveSpec::defaults(k, ScoringVariant::log_l)});
      out.push_back({std::string(objective_name(k)) + "/l-ratio", ObjectiveSpec::defaults(k, ScoringVariant::l_ratio)});
    } else {
      out.push_back({std::string(objective_name(k)), ObjectiveSpec::defaults(k)});
    }
  }
  auto er = ObjectiveSpec::defaults(ObjectiveKind::grpo);
  er.entropy_coeff = 0.001;
  out.push_back({"grpo-er", er});
  out.push_back({"kl", ObjectiveSpec{}, true});
  return out;
}

struct GradcheckResult {
  std::string name;
  std::size_t instances = 0;
  double worst_error = 0.0;
  std::uint64_t worst_instance = 0;
  std::size_t failures = 0;
  std::vector<std::uint64_t> failing_instances;
  std::size_t redraws = 0;  // instances rejected for sitting near a clip boundary
  bool passed() const { return failures == 0; }
};

inline bool has_clip(const ObjectiveSpec& spec) {
  return spec.scoring.variant == ScoringVariant::clipped_l_ratio;
}

// Instance i of a case is drawn from RandomStream(seed, {i, attempt}); the
// first attempt clear of every clip boundary is used.
inline RandomInstance gradcheck_instance(const GradcheckCase& c, std::uint64_t seed, std::uint64_t index,
                                         std::size_t* redraws = nullptr) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    RandomStream rng(seed, {index, attempt});
    auto inst = random_instance(rng);
    if (c.kl || !has_clip(c.spec)) return inst;
    if (clip_margin(inst, c.spec.scoring.epsilon_low, c.spec.scoring.epsilon_high) > kKinkMargin) return inst;
    if (redraws) ++*redraws;
  }
}

inline GradcheckResult run_gradcheck(const GradcheckCase& c, std::size_t num_instances, std::uint64_t seed,
                                     const GradientHook& hook = {}) {
  GradcheckResult res;
  res.name = c.name;
  for (std::uint64_t i = 0; i < num_instances; ++i) {
    const auto inst = gradcheck_instance(c, seed, i, &res.redraws);
    GradientVector analytic, numeric;
    if (c.kl) {
      std::vector<Rollout> rollouts;
      for (const auto& g : inst.groups) rollouts.insert(rollouts.end(), g.rollouts.begin(), g.rollouts.end());
      analytic = kl_gradient(inst.theta, inst.theta_old, rollouts);
      numeric = numeric_gradient(inst.theta, [&](const PolicyParams& p) { return kl_estimate(p, inst.theta_old, rollouts); });
    } else {
      const std::span<const RolloutGroup> groups(inst.groups);
      analytic = objective_gradient(c.spec, inst.theta, inst.theta_old, &inst.theta_ref, groups);
      numeric = numeric_gradient(inst.theta, [&](const PolicyParams& p) {
        return objective_value(c.spec, p, inst.theta_old, &inst.theta_ref, groups);
      });
    }
    if (hook) hook(analytic);
    const double err = relative_error(analytic, numeric);
    ++res.instances;
    if (!(err <= res.worst_error)) {
      res.worst_error = std::isnan(err) ? std::numeric_limits<double>::infinity() : err;
      res.worst_instance = i;
    }
    if (!(err < kGradcheckTolerance)) {
      ++res.failures;
      res.failing_instances.push_back(i);
    }
  }
  return res;
}

}  // namespace disco
