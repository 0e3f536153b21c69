#pragma once

// Random (theta, theta_old, theta_ref, groups) instances for identity and
// gradient checks. Rewards are assigned directly rather than through a
// verifier, so any positive/negative split can be produced.

#include <algorithm>
#include <vector>

#include "disco/policy.hpp"
#include "disco/random.hpp"
#include "disco/tasks.hpp"

namespace disco {

struct InstanceOptions {
  int min_vocab = 2, max_vocab = 4;
  int min_length = 1, max_length = 4;
  int min_questions = 1, max_questions = 3;
  int min_group = 2, max_group = 16;
  double logit_scale = 1.0;
  double perturbation = 0.3;      // theta - theta_old and theta_ref - theta_old
  bool allow_degenerate = false;  // otherwise every group has 0 < p_hat < 1
};

struct RandomInstance {
  PolicyParams theta;
  PolicyParams theta_old;
  PolicyParams theta_ref;
  std::vector<RolloutGroup> groups;
};

namespace detail {

inline int uniform_int(RandomStream& rng, int lo, int hi) {
  return lo + static_cast<int>(rng.index(static_cast<std::uint64_t>(hi - lo + 1)));
}

inline PolicyParams perturbed(const PolicyParams& base, RandomStream& rng, double sigma) {
  std::vector<double> z(base.logits().begin(), base.logits().end());
  for (double& v : z) v += sigma * rng.normal();
  return PolicyParams(base.shape(), std::move(z));
}

}  // namespace detail

inline RandomInstance random_instance(RandomStream& rng, const InstanceOptions& opt = {}) {
  PolicyShape shape;
  shape.vocab = detail::uniform_int(rng, opt.min_vocab, opt.max_vocab);
  shape.length = detail::uniform_int(rng, opt.min_length, opt.max_length);
  shape.num_questions = detail::uniform_int(rng, opt.min_questions, opt.max_questions);
  shape.history_order = static_cast<int>(rng.index(2));

  RandomInstance inst;
  inst.theta_old = PolicyParams::random(shape, rng, opt.logit_scale);
  inst.theta = detail::perturbed(inst.theta_old, rng, opt.perturbation);
  inst.theta_ref = detail::perturbed(inst.theta_old, rng, opt.perturbation);

  for (int q = 0; q < shape.num_questions; ++q) {
    const int n = detail::uniform_int(rng, opt.min_group, opt.max_group);
    const int k = opt.allow_degenerate ? detail::uniform_int(rng, 0, n) : detail::uniform_int(rng, 1, n - 1);
    std::vector<int> rewards(static_cast<std::size_t>(n), 0);
    std::fill_n(rewards.begin(), k, 1);
    for (int i = n - 1; i > 0; --i)
      std::swap(rewards[static_cast<std::size_t>(i)],
                rewards[rng.index(static_cast<std::uint64_t>(i + 1))]);
    std::vector<Rollout> rollouts;
    for (int i = 0; i < n; ++i) {
      Rollout r = sample(inst.theta_old, q, 1.0, rng);
      r.reward = rewards[static_cast<std::size_t>(i)];
      rollouts.push_back(std::move(r));
    }
    inst.groups.push_back(make_group(q, std::move(rollouts)));
  }
  return inst;
}

// Smallest distance from any token ratio pi_theta/pi_old to the clip
// boundaries 1 - eps_low and 1 + eps_high.
inline double clip_margin(const RandomInstance& inst, double epsilon_low, double epsilon_high) {
  double margin = std::numeric_limits<double>::infinity();
  for (const auto& g : inst.groups)
    for (const auto& r : g.rollouts) {
      const auto lp = log_prob(inst.theta, r.sequence);
      const auto lo = log_prob(inst.theta_old, r.sequence);
      for (std::size_t t = 0; t < lp.size(); ++t) {
        const double x = std::exp(lp[t] - lo[t]);
        margin = std::min({margin, std::abs(x - (1.0 + epsilon_high)), std::abs(x - (1.0 - epsilon_low))});
      }
    }
  return margin;
}

}  // namespace disco
