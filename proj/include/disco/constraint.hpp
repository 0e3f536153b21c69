#pragma once

// KL trust region around the sampling policy: the token-averaged estimator
//   D = (1 / sum |o|) * sum_o sum_t log(pi_old(o_t) / pi_theta(o_t)),
// its squared-hinge penalty beta * [D - delta]_+^2, and the plain
// coeff * D regularizer used as an ablation.

#include <algorithm>
#include <span>
#include <string>

#include "disco/errors.hpp"
#include "disco/policy.hpp"

namespace disco {

enum class TrustRegionMode { hinge, regularizer, none };

inline const char* trust_region_mode_name(TrustRegionMode m) {
  switch (m) {
    case TrustRegionMode::hinge: return "hinge";
    case TrustRegionMode::regularizer: return "regularizer";
    case TrustRegionMode::none: return "none";
  }
  return "?";
}

struct TrustRegionSpec {
  double delta = 1e-4;
  double beta = 1e3;
  TrustRegionMode mode = TrustRegionMode::hinge;
  double coeff = 0.001;  // regularizer mode only

  void validate() const {
    if (!(delta > 0.0)) throw ConfigError("kl.delta must be > 0");
    if (!(beta > 0.0)) throw ConfigError("kl.beta must be > 0");
    if (!(coeff >= 0.0)) throw ConfigError("kl.coeff must be >= 0");
  }
  friend bool operator==(const TrustRegionSpec&, const TrustRegionSpec&) = default;
};

namespace detail {

inline std::size_t total_tokens(std::span<const Rollout> rollouts) {
  std::size_t n = 0;
  for (const auto& r : rollouts) n += r.sequence.tokens.size();
  if (n == 0) throw DomainError("kl: empty minibatch");
  return n;
}

}  // namespace detail

inline double kl_estimate(const PolicyParams& theta, const PolicyParams& theta_old,
                          std::span<const Rollout> rollouts) {
  const std::size_t tokens = detail::total_tokens(rollouts);
  double sum = 0.0;
  for (const auto& r : rollouts) {
    const auto lp = log_prob(theta, r.sequence);
    const auto lp_old = log_prob(theta_old, r.sequence);
    for (std::size_t t = 0; t < lp.size(); ++t) sum += lp_old[t] - lp[t];
  }
  return sum / static_cast<double>(tokens);
}

inline GradientVector kl_gradient(const PolicyParams& theta, const PolicyParams& /*theta_old*/,
                                  std::span<const Rollout> rollouts) {
  const std::size_t tokens = detail::total_tokens(rollouts);
  const double w = -1.0 / static_cast<double>(tokens);
  GradientVector g(theta.size());
  for (const auto& r : rollouts) {
    theta.require_valid(r.sequence);
    for (int t = 0; t < theta.length(); ++t) add_token_score_gradient(theta, r.sequence, t, w, g);
  }
  return g;
}

struct HingePenalty {
  double value = 0.0;
  double gradient_factor = 0.0;  // multiplies grad(D)
};

inline HingePenalty hinge_penalty(double kl_hat, const TrustRegionSpec& spec) {
  if (spec.mode != TrustRegionMode::hinge) throw ConfigError("hinge_penalty: trust region mode is not hinge");
  const double excess = std::max(kl_hat - spec.delta, 0.0);
  return {spec.beta * excess * excess, 2.0 * spec.beta * excess};
}

struct Penalty {
  double value = 0.0;
  GradientVector gradient;
};

inline Penalty plain_kl_regularizer(const PolicyParams& theta, const PolicyParams& theta_old,
                                    std::span<const Rollout> rollouts, double coeff) {
  if (!(coeff >= 0.0)) throw DomainError("plain_kl_regularizer: coeff must be >= 0");
  Penalty p{coeff * kl_estimate(theta, theta_old, rollouts), kl_gradient(theta, theta_old, rollouts)};
  p.gradient *= coeff;
  return p;
}

struct ConstraintTerm {
  double kl_hat = 0.0;
  double penalty = 0.0;
  GradientVector gradient;  // gradient of the penalty (subtract it to ascend)
};

// Penalty for the configured mode. In hinge mode the gradient is exactly the
// zero vector whenever kl_hat <= delta; grad(D) is then never formed.
inline ConstraintTerm constraint_term(const TrustRegionSpec& spec, const PolicyParams& theta,
                                      const PolicyParams& theta_old, std::span<const Rollout> rollouts) {
  ConstraintTerm out;
  out.kl_hat = kl_estimate(theta, theta_old, rollouts);
  out.gradient = GradientVector(theta.size());
  switch (spec.mode) {
    case TrustRegionMode::hinge: {
      const auto h = hinge_penalty(out.kl_hat, spec);
      out.penalty = h.value;
      if (h.gradient_factor > 0.0) out.gradient.axpy(h.gradient_factor, kl_gradient(theta, theta_old, rollouts));
      break;
    }
    case TrustRegionMode::regularizer: {
      auto p = plain_kl_regularizer(theta, theta_old, rollouts, spec.coeff);
      out.penalty = p.value;
      out.gradient = std::move(p.gradient);
      break;
    }
    case TrustRegionMode::none: break;
  }
  return out;
}

}  // namespace disco
