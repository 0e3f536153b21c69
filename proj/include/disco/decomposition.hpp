#pragma once

// Question-weighted discriminative form of the GRPO family.
//
// On a group with empirical accuracy p, each of GRPO, Dr. GRPO, DAPO and GPG
// equals omega(p) * (mean_{S+} s+ - mean_{S-} s-) for a method-specific
// weight and score pair. The identity is exact on finite groups because the
// advantage uses the group's own mean and population deviation. The scores
// here are computed from log_prob() directly and never call into the
// objective code they are checked against.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "disco/errors.hpp"
#include "disco/objectives.hpp"
#include "disco/policy.hpp"
#include "disco/random.hpp"
#include "disco/random_instances.hpp"
#include "disco/tasks.hpp"

namespace disco {

enum class WeightedMethod { grpo, dr_grpo, dapo, gpg, trpa };

inline constexpr WeightedMethod kWeightedMethods[] = {WeightedMethod::grpo, WeightedMethod::dr_grpo,
                                                      WeightedMethod::dapo, WeightedMethod::gpg,
                                                      WeightedMethod::trpa};

inline std::string_view method_name(WeightedMethod m) {
  switch (m) {
    case WeightedMethod::grpo: return "grpo";
    case WeightedMethod::dr_grpo: return "dr-grpo";
    case WeightedMethod::dapo: return "dapo";
    case WeightedMethod::gpg: return "gpg";
    case WeightedMethod::trpa: return "trpa";
  }
  return "?";
}

inline std::optional<WeightedMethod> parse_method(std::string_view name) {
  for (auto m : kWeightedMethods)
    if (method_name(m) == name) return m;
  return std::nullopt;
}

inline double weight_omega(WeightedMethod method, double p, double alpha = 1.0) {
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("weight_omega: p must lie in [0,1]");
  switch (method) {
    case WeightedMethod::grpo:
    case WeightedMethod::dapo: return std::sqrt(p * (1.0 - p));
    case WeightedMethod::dr_grpo: return p * (1.0 - p);
    case WeightedMethod::gpg: return alpha * p * (1.0 - p);
    case WeightedMethod::trpa: return 1.0;
  }
  return 0.0;
}

struct DecompositionParams {
  double epsilon_low = 0.2;
  double epsilon_high = 0.2;
  double alpha = 1.0;
  double beta_trpa = 1.0;
};

// Canonical parameters: symmetric 0.2 clip except DAPO's 0.2 / 0.28.
inline DecompositionParams default_params(WeightedMethod m) {
  DecompositionParams p;
  if (m == WeightedMethod::dapo) p.epsilon_high = 0.28;
  return p;
}

// The objective spec whose direct evaluation the decomposition reproduces.
inline ObjectiveSpec direct_spec(WeightedMethod m, const DecompositionParams& p) {
  ObjectiveSpec s;
  switch (m) {
    case WeightedMethod::grpo: s = ObjectiveSpec::defaults(ObjectiveKind::grpo); s.beta_ref = 0.0; break;
    case WeightedMethod::dr_grpo: s = ObjectiveSpec::defaults(ObjectiveKind::dr_grpo); break;
    case WeightedMethod::dapo: s = ObjectiveSpec::defaults(ObjectiveKind::dapo); break;
    case WeightedMethod::gpg: s = ObjectiveSpec::defaults(ObjectiveKind::gpg); break;
    case WeightedMethod::trpa: s = ObjectiveSpec::defaults(ObjectiveKind::trpa); s.old_kl_coeff = 0.0; break;
  }
  if (s.scoring.variant == ScoringVariant::clipped_l_ratio) {
    s.scoring.epsilon_low = p.epsilon_low;
    s.scoring.epsilon_high = p.epsilon_high;
  }
  s.alpha = p.alpha;
  s.beta_trpa = p.beta_trpa;
  return s;
}

// omega(p_hat) * (mean s+ - mean s-) with the method's score pair. For TRPA
// (omega = 1, l = log sigmoid) this is the mean over pairs of l(s+ - s-).
inline double decomposed_objective(WeightedMethod method, const RolloutGroup& group, const PolicyParams& theta,
                                   const PolicyParams& theta_old, const DecompositionParams& params = {},
                                   const PolicyParams* theta_ref = nullptr) {
  if (group.degenerate()) throw DegenerateGroupError("decomposed_objective: group needs positives and negatives");
  if (method == WeightedMethod::trpa && theta_ref == nullptr)
    throw ConfigError("decomposed_objective: trpa needs a reference policy");

  double mean_len = 0.0;
  for (const auto& r : group.rollouts) mean_len += static_cast<double>(r.sequence.tokens.size());
  mean_len /= static_cast<double>(group.size());

  auto score_of = [&](const Rollout& r, bool positive) {
    const auto lp = log_prob(theta, r.sequence);
    const auto lo = log_prob(theta_old, r.sequence);
    double s = 0.0;
    for (std::size_t t = 0; t < lp.size(); ++t) {
      const double ratio = std::exp(lp[t] - lo[t]);
      switch (method) {
        case WeightedMethod::grpo:
        case WeightedMethod::dr_grpo:
        case WeightedMethod::dapo:
          s += positive ? std::min(ratio, 1.0 + params.epsilon_high) : std::max(ratio, 1.0 - params.epsilon_low);
          break;
        case WeightedMethod::gpg: s += lp[t]; break;
        case WeightedMethod::trpa: break;
      }
    }
    switch (method) {
      case WeightedMethod::grpo: return s / static_cast<double>(lp.size());
      case WeightedMethod::dr_grpo: return s;
      case WeightedMethod::dapo:
      case WeightedMethod::gpg: return s / mean_len;
      case WeightedMethod::trpa: return sequence_log_prob(theta, r.sequence) - sequence_log_prob(*theta_ref, r.sequence);
    }
    return s;
  };

  std::vector<double> pos, neg;
  for (std::size_t i : group.positives) pos.push_back(score_of(group.rollouts[i], true));
  for (std::size_t i : group.negatives) neg.push_back(score_of(group.rollouts[i], false));

  if (method == WeightedMethod::trpa) {
    double acc = 0.0;
    for (double a : pos)
      for (double b : neg) {
        const double x = params.beta_trpa * (a - b);
        acc += x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
      }
    return acc / static_cast<double>(pos.size() * neg.size());
  }
  double mp = 0.0, mn = 0.0;
  for (double a : pos) mp += a;
  for (double b : neg) mn += b;
  mp /= static_cast<double>(pos.size());
  mn /= static_cast<double>(neg.size());
  return weight_omega(method, group.p_hat, params.alpha) * (mp - mn);
}

struct Prop1Trial {
  std::size_t trial = 0;
  double direct = 0.0;
  double decomposed = 0.0;
  double deviation = 0.0;
};

struct Prop1Report {
  WeightedMethod method = WeightedMethod::grpo;
  bool applicable = true;
  std::string note;
  std::vector<Prop1Trial> trials;
  double max_deviation = 0.0;
  std::size_t violations = 0;
  bool passed() const { return !applicable || violations == 0; }
};

inline constexpr double kIdentityTolerance = 1e-9;

// Compares the direct empirical objective with its decomposed form on random
// single-question groups of size 2..16 with 0 < p_hat < 1.
inline Prop1Report verify_prop1(WeightedMethod method, std::size_t num_trials, std::uint64_t seed,
                                std::optional<DecompositionParams> params = std::nullopt) {
  Prop1Report rep;
  rep.method = method;
  if (method == WeightedMethod::trpa) {
    rep.applicable = false;
    rep.note = "not an f-form objective; identity check not applicable";
    return rep;
  }
  const DecompositionParams p = params.value_or(default_params(method));
  const ObjectiveSpec spec = direct_spec(method, p);
  InstanceOptions opt;
  opt.min_questions = opt.max_questions = 1;
  for (std::size_t i = 0; i < num_trials; ++i) {
    RandomStream rng(seed, {static_cast<std::uint64_t>(method), i});
    const auto inst = random_instance(rng, opt);
    const double direct =
        objective_value(spec, inst.theta, inst.theta_old, nullptr, std::span<const RolloutGroup>(inst.groups));
    const double dec = decomposed_objective(method, inst.groups[0], inst.theta, inst.theta_old, p);
    const double dev = std::abs(direct - dec);
    rep.trials.push_back({i, direct, dec, dev});
    rep.max_deviation = std::max(rep.max_deviation, dev);
    if (dev > kIdentityTolerance * (1.0 + std::abs(direct))) ++rep.violations;
  }
  return rep;
}

struct WeightRow {
  std::string method;
  double p = 0.0;
  double omega = 0.0;
};

// Dense omega(p) samples for every method plus the constant DisCO line.
inline std::vector<WeightRow> emit_weight_curves(int resolution, double alpha = 1.0) {
  if (resolution < 2) throw DomainError("emit_weight_curves: resolution must be >= 2");
  std::vector<WeightRow> rows;
  auto grid = [&](int i) { return i == resolution - 1 ? 1.0 : static_cast<double>(i) / (resolution - 1); };
  for (auto m : kWeightedMethods)
    for (int i = 0; i < resolution; ++i) rows.push_back({std::string(method_name(m)), grid(i), weight_omega(m, grid(i), alpha)});
  for (int i = 0; i < resolution; ++i) rows.push_back({"disco", grid(i), 1.0});
  return rows;
}

}  // namespace disco
