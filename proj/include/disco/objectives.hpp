#pragma once

// Training objectives over rollout groups, all written for maximization.
//
// Every objective is a mean over the groups it uses. Within a group the value
// is a function of per-token log-probabilities under theta, so the exact
// gradient is a sum of coefficient * grad log pi_theta(o_t) terms (plus an
// entropy term for GRPO-ER). evaluate_objective() computes the value and those
// coefficients together; the named *_objective() functions return the value.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "disco/constraint.hpp"
#include "disco/errors.hpp"
#include "disco/policy.hpp"
#include "disco/tasks.hpp"

namespace disco {

// ---------------------------------------------------------------------------
// Specs

enum class ScoringVariant { log_l, l_ratio, clipped_l_ratio, log_ratio_ref };
enum class LengthNorm { per_token, batch_token, none };

struct ScoringKind {
  ScoringVariant variant = ScoringVariant::log_l;
  LengthNorm length_norm = LengthNorm::per_token;
  double epsilon_low = 0.2;   // clipped_l_ratio only
  double epsilon_high = 0.2;  // clipped_l_ratio only

  void validate() const {
    if (variant == ScoringVariant::clipped_l_ratio) {
      if (!(epsilon_low > 0.0 && epsilon_low < 1.0)) throw ConfigError("epsilon_low must lie in (0,1)");
      if (!(epsilon_high > 0.0)) throw ConfigError("epsilon_high must be > 0");
    }
  }
  friend bool operator==(const ScoringKind&, const ScoringKind&) = default;
};

enum class ObjectiveKind { grpo, grpo_rw, dr_grpo, dapo, gpg, trpa, disco_b, disco };

inline constexpr ObjectiveKind kAllObjectiveKinds[] = {
    ObjectiveKind::grpo, ObjectiveKind::grpo_rw, ObjectiveKind::dr_grpo, ObjectiveKind::dapo,
    ObjectiveKind::gpg,  ObjectiveKind::trpa,    ObjectiveKind::disco_b, ObjectiveKind::disco};

inline std::string_view objective_name(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::grpo: return "grpo";
    case ObjectiveKind::grpo_rw: return "grpo-rw";
    case ObjectiveKind::dr_grpo: return "dr-grpo";
    case ObjectiveKind::dapo: return "dapo";
    case ObjectiveKind::gpg: return "gpg";
    case ObjectiveKind::trpa: return "trpa";
    case ObjectiveKind::disco_b: return "disco-b";
    case ObjectiveKind::disco: return "disco";
  }
  return "?";
}

inline std::optional<ObjectiveKind> parse_objective_kind(std::string_view name) {
  for (ObjectiveKind k : kAllObjectiveKinds)
    if (objective_name(k) == name) return k;
  return std::nullopt;
}

inline std::string_view scoring_name(ScoringVariant v) {
  switch (v) {
    case ScoringVariant::log_l: return "log-l";
    case ScoringVariant::l_ratio: return "l-ratio";
    case ScoringVariant::clipped_l_ratio: return "clipped-l-ratio";
    case ScoringVariant::log_ratio_ref: return "log-ratio-ref";
  }
  return "?";
}

inline std::optional<ScoringVariant> parse_scoring(std::string_view name) {
  for (auto v : {ScoringVariant::log_l, ScoringVariant::l_ratio, ScoringVariant::clipped_l_ratio,
                 ScoringVariant::log_ratio_ref})
    if (scoring_name(v) == name) return v;
  return std::nullopt;
}

inline std::string_view length_norm_name(LengthNorm n) {
  switch (n) {
    case LengthNorm::per_token: return "per-token";
    case LengthNorm::batch_token: return "batch-token";
    case LengthNorm::none: return "none";
  }
  return "?";
}

struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::disco;
  ScoringKind scoring;
  double tau = 10.0;             // disco
  double beta_ref = 0.001;       // grpo, grpo-rw: KL(pi_theta || pi_ref) weight
  double alpha = 1.0;            // gpg
  double beta_trpa = 1.0;        // trpa: sigmoid scale
  double old_kl_coeff = 0.001;   // trpa: KL(pi_old || pi_theta) weight
  double entropy_coeff = 0.0;    // grpo (GRPO-ER when > 0)
  bool skip_degenerate = true;

  // Canonical scoring and hyperparameters for each kind.
  static ObjectiveSpec defaults(ObjectiveKind kind, ScoringVariant disco_scoring = ScoringVariant::log_l) {
    ObjectiveSpec s;
    s.kind = kind;
    switch (kind) {
      case ObjectiveKind::grpo:
      case ObjectiveKind::grpo_rw:
        s.scoring = {ScoringVariant::clipped_l_ratio, LengthNorm::per_token, 0.2, 0.2};
        break;
      case ObjectiveKind::dr_grpo:
        s.scoring = {ScoringVariant::clipped_l_ratio, LengthNorm::none, 0.2, 0.2};
        break;
      case ObjectiveKind::dapo:
        s.scoring = {ScoringVariant::clipped_l_ratio, LengthNorm::batch_token, 0.2, 0.28};
        break;
      case ObjectiveKind::gpg:
        s.scoring = {ScoringVariant::log_l, LengthNorm::batch_token};
        break;
      case ObjectiveKind::trpa:
        s.scoring = {ScoringVariant::log_ratio_ref, LengthNorm::none};
        break;
      case ObjectiveKind::disco_b:
      case ObjectiveKind::disco:
        s.scoring = {disco_scoring, LengthNorm::per_token};
        s.tau = disco_scoring == ScoringVariant::l_ratio ? 1.0 : 10.0;
        break;
    }
    return s;
  }

  bool uses_reference() const {
    return kind == ObjectiveKind::trpa ||
           ((kind == ObjectiveKind::grpo || kind == ObjectiveKind::grpo_rw) && beta_ref > 0.0);
  }

  void validate() const {
    scoring.validate();
    const auto v = scoring.variant;
    switch (kind) {
      case ObjectiveKind::grpo:
      case ObjectiveKind::grpo_rw:
      case ObjectiveKind::dr_grpo:
      case ObjectiveKind::dapo:
        if (v != ScoringVariant::clipped_l_ratio)
          throw ConfigError(std::string(objective_name(kind)) + " requires clipped-l-ratio scoring");
        break;
      case ObjectiveKind::gpg:
        if (v != ScoringVariant::log_l) throw ConfigError("gpg requires log-l scoring");
        break;
      case ObjectiveKind::trpa:
        if (v != ScoringVariant::log_ratio_ref) throw ConfigError("trpa requires log-ratio-ref scoring");
        break;
      case ObjectiveKind::disco_b:
      case ObjectiveKind::disco:
        if (v != ScoringVariant::log_l && v != ScoringVariant::l_ratio)
          throw ConfigError(std::string(objective_name(kind)) + " requires log-l or l-ratio scoring");
        break;
    }
    if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
    if (!(beta_ref >= 0.0)) throw ConfigError("beta_ref must be >= 0");
    if (!(alpha > 0.0)) throw ConfigError("alpha must be > 0");
    if (!(beta_trpa > 0.0)) throw ConfigError("beta_trpa must be > 0");
    if (!(old_kl_coeff >= 0.0)) throw ConfigError("old_kl_coeff must be >= 0");
    if (!(entropy_coeff >= 0.0)) throw ConfigError("entropy_coeff must be >= 0");
    if (entropy_coeff > 0.0 && kind != ObjectiveKind::grpo)
      throw ConfigError("entropy_coeff is only used by grpo");
  }

  friend bool operator==(const ObjectiveSpec&, const ObjectiveSpec&) = default;
};

// ---------------------------------------------------------------------------
// Advantages and the clipped surrogate

inline std::vector<double> advantage_normalized(const RolloutGroup& group) {
  if (group.degenerate())
    throw DegenerateGroupError("advantage_normalized: p_hat in {0,1} has zero reward variance");
  const double p = group.p_hat;
  const double pos = std::sqrt((1.0 - p) / p);
  const double neg = -std::sqrt(p / (1.0 - p));
  std::vector<double> a(group.size());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = group.rollouts[i].reward == 1 ? pos : neg;
  return a;
}

inline std::vector<double> advantage_unnormalized(const RolloutGroup& group) {
  const double p = group.p_hat;
  std::vector<double> a(group.size());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = group.rollouts[i].reward == 1 ? 1.0 - p : -p;
  return a;
}

// min(x A, clip(x, 1 - eps_low, 1 + eps_high) A), written by sign of A.
inline double clip_surrogate(double x, double advantage, double epsilon_low, double epsilon_high) {
  if (advantage > 0.0) return advantage * std::min(x, 1.0 + epsilon_high);
  if (advantage < 0.0) return advantage * std::max(x, 1.0 - epsilon_low);
  return 0.0;
}

// True when the surrogate is on its constant (clipped) branch at x.
inline bool clip_active(double x, double advantage, double epsilon_low, double epsilon_high) {
  if (advantage > 0.0) return x >= 1.0 + epsilon_high;
  if (advantage < 0.0) return x <= 1.0 - epsilon_low;
  return true;
}

// ---------------------------------------------------------------------------
// Scores

enum class Side { positive, negative };

namespace detail {

// Per-token log-probabilities of one rollout under the three policies.
struct TokenTrace {
  std::vector<double> logp;
  std::vector<double> logp_old;
  std::vector<double> logp_ref;  // empty unless a reference is supplied

  double ratio(std::size_t t) const { return std::exp(logp[t] - logp_old[t]); }
};

inline TokenTrace trace(const PolicyParams& theta, const PolicyParams& theta_old, const PolicyParams* theta_ref,
                        const Rollout& r) {
  TokenTrace tr{log_prob(theta, r.sequence), log_prob(theta_old, r.sequence), {}};
  if (theta_ref) tr.logp_ref = log_prob(*theta_ref, r.sequence);
  return tr;
}

// A score and its derivative with respect to each log pi_theta(o_t).
struct ScoreTerm {
  double value = 0.0;
  std::vector<double> dlogp;
};

inline ScoreTerm score_term(const ScoringKind& kind, Side side, const TokenTrace& tr, double norm) {
  const std::size_t len = tr.logp.size();
  ScoreTerm s{0.0, std::vector<double>(len, 0.0)};
  for (std::size_t t = 0; t < len; ++t) {
    switch (kind.variant) {
      case ScoringVariant::log_l:
        s.value += tr.logp[t];
        s.dlogp[t] = norm;
        break;
      case ScoringVariant::l_ratio: {
        const double r = tr.ratio(t);
        s.value += r;
        s.dlogp[t] = norm * r;
        break;
      }
      case ScoringVariant::clipped_l_ratio: {
        const double r = tr.ratio(t);
        if (side == Side::positive) {
          const double cap = 1.0 + kind.epsilon_high;
          s.value += std::min(r, cap);
          s.dlogp[t] = r < cap ? norm * r : 0.0;
        } else {
          const double floor = 1.0 - kind.epsilon_low;
          s.value += std::max(r, floor);
          s.dlogp[t] = r > floor ? norm * r : 0.0;
        }
        break;
      }
      case ScoringVariant::log_ratio_ref:
        if (tr.logp_ref.empty()) throw ConfigError("score: log-ratio-ref scoring needs a reference policy");
        s.value += tr.logp[t] - tr.logp_ref[t];
        s.dlogp[t] = norm;
        break;
    }
  }
  s.value *= norm;
  return s;
}

inline double length_factor(LengthNorm norm, std::size_t length, double mean_group_length) {
  switch (norm) {
    case LengthNorm::per_token: return 1.0 / static_cast<double>(length);
    case LengthNorm::batch_token: return 1.0 / mean_group_length;
    case LengthNorm::none: return 1.0;
  }
  return 1.0;
}

inline double mean_length(const RolloutGroup& g) {
  std::size_t total = 0;
  for (const auto& r : g.rollouts) total += r.sequence.tokens.size();
  return static_cast<double>(total) / static_cast<double>(g.size());
}

}  // namespace detail

// Score of one rollout. Batch-token normalization uses the rollout's own
// length here (exact for fixed-length sequences).
inline double score(const ScoringKind& scoring, Side side, const PolicyParams& theta, const PolicyParams& theta_old,
                    const PolicyParams* theta_ref, const Rollout& rollout) {
  if (scoring.variant == ScoringVariant::log_ratio_ref && theta_ref == nullptr)
    throw ConfigError("score: log-ratio-ref scoring needs a reference policy");
  const auto tr = detail::trace(theta, theta_old, theta_ref, rollout);
  const std::size_t len = rollout.sequence.tokens.size();
  return detail::score_term(scoring, side, tr,
                            detail::length_factor(scoring.length_norm, len, static_cast<double>(len)))
      .value;
}

struct ScorePair {
  double positive = 0.0;
  double negative = 0.0;
};

// (s+, s-); the two coincide unless the scoring is clipped.
inline ScorePair score_pair(const ScoringKind& scoring, const PolicyParams& theta, const PolicyParams& theta_old,
                            const PolicyParams* theta_ref, const Rollout& rollout) {
  return {score(scoring, Side::positive, theta, theta_old, theta_ref, rollout),
          score(scoring, Side::negative, theta, theta_old, theta_ref, rollout)};
}

// ---------------------------------------------------------------------------
// Score-level discriminative objectives

struct ScoredGroup {
  std::vector<double> positive;
  std::vector<double> negative;
};

enum class Surrogate { identity, log_sigmoid };

namespace detail {

// log(sigmoid(x)) without overflow.
inline double log_sigmoid(double x) { return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double apply_surrogate(Surrogate s, double scale, double x) {
  return s == Surrogate::identity ? x : log_sigmoid(scale * x);
}

inline double surrogate_slope(Surrogate s, double scale, double x) {
  return s == Surrogate::identity ? 1.0 : scale * sigmoid(-scale * x);
}

// log((1/n) sum exp(x_i)), max-shifted.
inline double log_mean_exp(std::span<const double> xs) {
  const double m = *std::max_element(xs.begin(), xs.end());
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s / static_cast<double>(xs.size()));
}

}  // namespace detail

// Mean over groups of the mean over (positive, negative) pairs of l(s - s').
inline double pairwise_objective(std::span<const ScoredGroup> groups, Surrogate surrogate = Surrogate::identity,
                                 double scale = 1.0) {
  double total = 0.0;
  std::size_t used = 0;
  for (const auto& g : groups) {
    if (g.positive.empty() || g.negative.empty()) continue;
    double acc = 0.0;
    for (double sp : g.positive)
      for (double sn : g.negative) acc += detail::apply_surrogate(surrogate, scale, sp - sn);
    total += acc / static_cast<double>(g.positive.size() * g.negative.size());
    ++used;
  }
  if (used == 0) throw EmptyBatchError("pairwise_objective: every group is degenerate");
  return total / static_cast<double>(used);
}

// Mean over groups and positives of -tau log mean_{negatives} exp((s' - s) / tau).
inline double dro_objective(std::span<const ScoredGroup> groups, double tau) {
  if (!(tau > 0.0)) throw DomainError("dro_objective: tau must be > 0");
  double total = 0.0;
  std::size_t used = 0;
  std::vector<double> z;
  for (const auto& g : groups) {
    if (g.positive.empty() || g.negative.empty()) continue;
    double acc = 0.0;
    for (double sp : g.positive) {
      z.clear();
      for (double sn : g.negative) z.push_back((sn - sp) / tau);
      acc += -tau * detail::log_mean_exp(z);
    }
    total += acc / static_cast<double>(g.positive.size());
    ++used;
  }
  if (used == 0) throw EmptyBatchError("dro_objective: every group is degenerate");
  return total / static_cast<double>(used);
}

inline std::vector<ScoredGroup> score_groups(std::span<const RolloutGroup> groups, const ScoringKind& scoring,
                                             const PolicyParams& theta, const PolicyParams& theta_old,
                                             const PolicyParams* theta_ref = nullptr) {
  std::vector<ScoredGroup> out;
  out.reserve(groups.size());
  for (const auto& g : groups) {
    ScoredGroup sg;
    for (std::size_t i : g.positives)
      sg.positive.push_back(score(scoring, Side::positive, theta, theta_old, theta_ref, g.rollouts[i]));
    for (std::size_t i : g.negatives)
      sg.negative.push_back(score(scoring, Side::negative, theta, theta_old, theta_ref, g.rollouts[i]));
    out.push_back(std::move(sg));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Policy-level evaluation

struct Evaluation {
  double value = 0.0;
  GradientVector gradient;  // empty unless requested
  std::size_t groups_used = 0;
};

namespace detail {

class GradientSink {
 public:
  GradientSink(const PolicyParams& theta, bool enabled) : theta_(theta), enabled_(enabled) {
    if (enabled_) grad_ = GradientVector(theta.size());
  }

  // grad += weight * sum_t coeff[t] grad log pi(o_t)
  void add_scores(const Rollout& r, std::span<const double> coeff, double weight) {
    if (!enabled_ || weight == 0.0) return;
    for (std::size_t t = 0; t < coeff.size(); ++t)
      add_token_score_gradient(theta_, r.sequence, static_cast<int>(t), weight * coeff[t], grad_);
  }
  void add_token(const Rollout& r, std::size_t t, double weight) {
    if (enabled_) add_token_score_gradient(theta_, r.sequence, static_cast<int>(t), weight, grad_);
  }
  void add_entropy(const Rollout& r, double weight) {
    if (!enabled_ || weight == 0.0) return;
    for (int t = 0; t < theta_.length(); ++t) add_entropy_gradient(theta_, r.sequence, t, weight, grad_);
  }
  void add(const GradientVector& g, double weight) {
    if (enabled_) grad_.axpy(weight, g);
  }
  bool enabled() const { return enabled_; }
  GradientVector take() { return std::move(grad_); }

 private:
  const PolicyParams& theta_;
  bool enabled_;
  GradientVector grad_;
};

// Per-token KL(pi_theta || pi_ref) estimate rho - log rho - 1, rho = pi_ref / pi_theta.
inline double reference_kl_token(double logp, double logp_ref) {
  const double log_rho = logp_ref - logp;
  return std::exp(log_rho) - log_rho - 1.0;
}

inline double reference_kl_slope(double logp, double logp_ref) { return 1.0 - std::exp(logp_ref - logp); }

// Token-level clipped surrogate summed over a group with per-rollout
// advantages; shared by GRPO, Dr. GRPO and DAPO. Returns the group value and
// writes gradient contributions scaled by `weight`.
inline double clipped_group(const ObjectiveSpec& spec, const RolloutGroup& g, std::span<const double> adv,
                            std::span<const TokenTrace> traces, GradientSink& sink, double weight) {
  const double n = static_cast<double>(g.size());
  const double mean_len = mean_length(g);
  double value = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& tr = traces[i];
    const std::size_t len = tr.logp.size();
    const double norm = length_factor(spec.scoring.length_norm, len, mean_len);
    double acc = 0.0;
    for (std::size_t t = 0; t < len; ++t) {
      const double r = tr.ratio(t);
      acc += clip_surrogate(r, adv[i], spec.scoring.epsilon_low, spec.scoring.epsilon_high);
      if (sink.enabled() && !clip_active(r, adv[i], spec.scoring.epsilon_low, spec.scoring.epsilon_high))
        sink.add_token(g.rollouts[i], t, weight * norm * adv[i] * r / n);
    }
    value += norm * acc / n;
  }
  return value;
}

// beta_ref * (1/n) sum_o (1/|o|) sum_t KL_t; returns the penalty value.
inline double reference_kl_group(const ObjectiveSpec& spec, const RolloutGroup& g,
                                 std::span<const TokenTrace> traces, GradientSink& sink, double weight) {
  if (spec.beta_ref == 0.0) return 0.0;
  const double n = static_cast<double>(g.size());
  double value = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& tr = traces[i];
    const double len = static_cast<double>(tr.logp.size());
    for (std::size_t t = 0; t < tr.logp.size(); ++t) {
      value += reference_kl_token(tr.logp[t], tr.logp_ref[t]) / (len * n);
      sink.add_token(g.rollouts[i], t, -weight * spec.beta_ref * reference_kl_slope(tr.logp[t], tr.logp_ref[t]) / (len * n));
    }
  }
  return spec.beta_ref * value;
}

}  // namespace detail

// Value (and optionally gradient with respect to theta) of the objective.
// Degenerate groups: GRPO, GRPO_RW, DAPO, TRPA and both DisCO forms skip them
// (or throw when skip_degenerate is false); Dr. GRPO and GPG count them with
// zero contribution. Throws EmptyBatchError if no group is usable.
inline Evaluation evaluate_objective(const ObjectiveSpec& spec, const PolicyParams& theta,
                                     const PolicyParams& theta_old, const PolicyParams* theta_ref,
                                     std::span<const RolloutGroup> groups, bool with_gradient) {
  spec.validate();
  if (spec.uses_reference() && theta_ref == nullptr)
    throw ConfigError(std::string(objective_name(spec.kind)) + ": reference policy required");
  const PolicyParams* ref = spec.uses_reference() ? theta_ref : nullptr;

  const bool zero_on_degenerate = spec.kind == ObjectiveKind::dr_grpo || spec.kind == ObjectiveKind::gpg;
  std::vector<const RolloutGroup*> used;
  for (const auto& g : groups) {
    if (g.degenerate() && !zero_on_degenerate) {
      if (!spec.skip_degenerate)
        throw DegenerateGroupError(std::string(objective_name(spec.kind)) + ": degenerate group for question " +
                                   std::to_string(g.question_id));
      continue;
    }
    used.push_back(&g);
  }
  if (used.empty()) throw EmptyBatchError(std::string(objective_name(spec.kind)) + ": every group is degenerate");

  detail::GradientSink sink(theta, with_gradient);
  const double w = 1.0 / static_cast<double>(used.size());
  double total = 0.0;
  std::vector<detail::TokenTrace> traces;

  for (const RolloutGroup* gp : used) {
    const RolloutGroup& g = *gp;
    traces.clear();
    for (const auto& r : g.rollouts) traces.push_back(detail::trace(theta, theta_old, ref, r));
    const double n = static_cast<double>(g.size());
    const double mean_len = detail::mean_length(g);
    double value = 0.0;

    switch (spec.kind) {
      case ObjectiveKind::grpo: {
        const auto adv = advantage_normalized(g);
        value = detail::clipped_group(spec, g, adv, traces, sink, w);
        value -= detail::reference_kl_group(spec, g, traces, sink, w);
        if (spec.entropy_coeff > 0.0) {
          for (const auto& r : g.rollouts) {
            value += spec.entropy_coeff * token_entropy(theta, r.sequence) / n;
            sink.add_entropy(r, w * spec.entropy_coeff / (n * theta.length()));
          }
        }
        break;
      }
      case ObjectiveKind::dapo: {
        const auto adv = advantage_normalized(g);
        value = detail::clipped_group(spec, g, adv, traces, sink, w);
        break;
      }
      case ObjectiveKind::dr_grpo: {
        const auto adv = advantage_unnormalized(g);
        value = detail::clipped_group(spec, g, adv, traces, sink, w);
        break;
      }
      case ObjectiveKind::gpg: {
        const auto adv = advantage_unnormalized(g);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double norm = detail::length_factor(spec.scoring.length_norm, traces[i].logp.size(), mean_len);
          double s = 0.0;
          for (double lp : traces[i].logp) s += lp;
          value += spec.alpha * norm * s * adv[i] / n;
          for (std::size_t t = 0; t < traces[i].logp.size(); ++t)
            sink.add_token(g.rollouts[i], t, w * spec.alpha * norm * adv[i] / n);
        }
        break;
      }
      case ObjectiveKind::grpo_rw:
      case ObjectiveKind::disco_b:
      case ObjectiveKind::disco:
      case ObjectiveKind::trpa: {
        std::vector<detail::ScoreTerm> pos, neg;
        for (std::size_t i : g.positives)
          pos.push_back(detail::score_term(
              spec.scoring, Side::positive, traces[i],
              detail::length_factor(spec.scoring.length_norm, traces[i].logp.size(), mean_len)));
        for (std::size_t i : g.negatives)
          neg.push_back(detail::score_term(
              spec.scoring, Side::negative, traces[i],
              detail::length_factor(spec.scoring.length_norm, traces[i].logp.size(), mean_len)));
        const double np = static_cast<double>(pos.size());
        const double nn = static_cast<double>(neg.size());

        if (spec.kind == ObjectiveKind::disco) {
          // s(o) - tau log mean exp(s(o') / tau), evaluated per positive as written.
          std::vector<double> z(neg.size());
          for (const auto& sp : pos) {
            for (std::size_t j = 0; j < neg.size(); ++j) z[j] = (neg[j].value - sp.value) / spec.tau;
            value += -spec.tau * detail::log_mean_exp(z) / np;
          }
          if (sink.enabled()) {
            for (std::size_t k = 0; k < pos.size(); ++k) sink.add_scores(g.rollouts[g.positives[k]], pos[k].dlogp, w / np);
            // Negatives weighted by softmax(s(o') / tau).
            double m = -std::numeric_limits<double>::infinity();
            for (const auto& sn : neg) m = std::max(m, sn.value / spec.tau);
            std::vector<double> q(neg.size());
            double qs = 0.0;
            for (std::size_t j = 0; j < neg.size(); ++j) qs += (q[j] = std::exp(neg[j].value / spec.tau - m));
            for (std::size_t j = 0; j < neg.size(); ++j)
              sink.add_scores(g.rollouts[g.negatives[j]], neg[j].dlogp, -w * q[j] / qs);
          }
        } else {
          const Surrogate sur = spec.kind == ObjectiveKind::trpa ? Surrogate::log_sigmoid : Surrogate::identity;
          const double scale = spec.kind == ObjectiveKind::trpa ? spec.beta_trpa : 1.0;
          std::vector<double> pos_w(pos.size(), 0.0), neg_w(neg.size(), 0.0);
          for (std::size_t a = 0; a < pos.size(); ++a)
            for (std::size_t b = 0; b < neg.size(); ++b) {
              const double d = pos[a].value - neg[b].value;
              value += detail::apply_surrogate(sur, scale, d) / (np * nn);
              const double slope = detail::surrogate_slope(sur, scale, d) / (np * nn);
              pos_w[a] += slope;
              neg_w[b] -= slope;
            }
          for (std::size_t a = 0; a < pos.size(); ++a) sink.add_scores(g.rollouts[g.positives[a]], pos[a].dlogp, w * pos_w[a]);
          for (std::size_t b = 0; b < neg.size(); ++b) sink.add_scores(g.rollouts[g.negatives[b]], neg[b].dlogp, w * neg_w[b]);
          if (spec.kind == ObjectiveKind::grpo_rw) value -= detail::reference_kl_group(spec, g, traces, sink, w);
        }
        break;
      }
    }
    total += value;
  }

  Evaluation out;
  out.value = total * w;
  out.groups_used = used.size();

  if (spec.kind == ObjectiveKind::trpa && spec.old_kl_coeff > 0.0) {
    // KL(pi_old || pi_theta) over every sampled rollout of the batch.
    std::vector<Rollout> all;
    for (const auto& g : groups) all.insert(all.end(), g.rollouts.begin(), g.rollouts.end());
    out.value -= spec.old_kl_coeff * kl_estimate(theta, theta_old, all);
    if (sink.enabled()) sink.add(kl_gradient(theta, theta_old, all), -spec.old_kl_coeff);
  }
  if (sink.enabled()) out.gradient = sink.take();
  return out;
}

inline double objective_value(const ObjectiveSpec& spec, const PolicyParams& theta, const PolicyParams& theta_old,
                              const PolicyParams* theta_ref, std::span<const RolloutGroup> groups) {
  return evaluate_objective(spec, theta, theta_old, theta_ref, groups, false).value;
}

inline GradientVector objective_gradient(const ObjectiveSpec& spec, const PolicyParams& theta,
                                         const PolicyParams& theta_old, const PolicyParams* theta_ref,
                                         std::span<const RolloutGroup> groups) {
  return evaluate_objective(spec, theta, theta_old, theta_ref, groups, true).gradient;
}

// Named forms of each objective.

inline double grpo_objective(std::span<const RolloutGroup> groups, const PolicyParams& theta,
                             const PolicyParams& theta_old, const PolicyParams* theta_ref, double epsilon,
                             double beta_ref) {
  auto spec = ObjectiveSpec::defaults(ObjectiveKind::grpo);
  spec.scoring.epsilon_low = spec.scoring.epsilon_high = epsilon;
  spec.beta_ref = beta_ref;
  return objective_value(spec, theta, theta_old, theta_ref, groups);
}

inline double drgrpo_objective(std::span<const RolloutGroup> groups, const PolicyParams& theta,
                               const PolicyParams& theta_old, double epsilon) {
  auto spec = ObjectiveSpec::defaults(ObjectiveKind::dr_grpo);
  spec.scoring.epsilon_low = spec.scoring.epsilon_high = epsilon;
  return objective_value(spec, theta, theta_old, nullptr, groups);
}

inline double dapo_objective(std::span<const RolloutGroup> groups, const PolicyParams& theta,
                             const PolicyParams& theta_old, double epsilon_low, double epsilon_high) {
  auto spec = ObjectiveSpec::defaults(ObjectiveKind::dapo);
  spec.scoring.epsilon_low = epsilon_low;
  spec.scoring.epsilon_high = epsilon_high;
  return objective_value(spec, theta, theta_old, nullptr, groups);
}

// GPG scores with log pi_theta only; no pi_old is involved.
inline double gpg_objective(std::span<const RolloutGroup> groups, const PolicyParams& theta, double alpha) {
  auto spec = ObjectiveSpec::defaults(ObjectiveKind::gpg);
  spec.alpha = alpha;
  return objective_value(spec, theta, theta, nullptr, groups);
}

inline double trpa_objective(std::span<const RolloutGroup> groups, const PolicyParams& theta,
                             const PolicyParams& theta_old, const PolicyParams* theta_ref, double beta_trpa,
                             double old_kl_coeff = 0.001) {
  auto spec = ObjectiveSpec::defaults(ObjectiveKind::trpa);
  spec.beta_trpa = beta_trpa;
  spec.old_kl_coeff = old_kl_coeff;
  return objective_value(spec, theta, theta_old, theta_ref, groups);
}

inline double pairwise_objective(std::span<const RolloutGroup> groups, const ScoringKind& scoring,
                                 const PolicyParams& theta, const PolicyParams& theta_old,
                                 const PolicyParams* theta_ref = nullptr) {
  const auto scored = score_groups(groups, scoring, theta, theta_old, theta_ref);
  return pairwise_objective(std::span<const ScoredGroup>(scored));
}

inline double dro_objective(std::span<const RolloutGroup> groups, const ScoringKind& scoring, double tau,
                            const PolicyParams& theta, const PolicyParams& theta_old,
                            const PolicyParams* theta_ref = nullptr) {
  const auto scored = score_groups(groups, scoring, theta, theta_old, theta_ref);
  return dro_objective(std::span<const ScoredGroup>(scored), tau);
}

}  // namespace disco
