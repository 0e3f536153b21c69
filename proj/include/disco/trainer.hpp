#pragma once

// Training loop: per step, snapshot pi_old, sample one group per question in
// the batch, then one AdamW ascent step per minibatch on
//   G = grad J(theta) - grad penalty(D_hat(theta)).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "disco/constraint.hpp"
#include "disco/errors.hpp"
#include "disco/objectives.hpp"
#include "disco/policy.hpp"
#include "disco/random.hpp"
#include "disco/tasks.hpp"

namespace disco {

struct AdamWConfig {
  double learning_rate = 0.01;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  friend bool operator==(const AdamWConfig&, const AdamWConfig&) = default;
};

struct OptimizerState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::int64_t step = 0;

  OptimizerState() = default;
  explicit OptimizerState(std::size_t n) : first_moment(n, 0.0), second_moment(n, 0.0) {}

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

// One AdamW step that ascends along `ascent` (the gradient of the objective
// being maximized) by descending its negation. Decay is decoupled and applied
// to the parameters before the moment update.
inline void adamw_step(std::span<double> params, const GradientVector& ascent, OptimizerState& state,
                       const AdamWConfig& cfg) {
  if (ascent.size() != params.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size())
    throw DomainError("adamw_step: dimension mismatch");
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const double decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i] *= decay;
    const double g = -ascent[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    params[i] -= cfg.learning_rate * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
  }
}

inline constexpr int kHistogramBins = 10;

struct MetricsRecord {
  int step = 0;
  double reward_mean = 0.0;
  double entropy = 0.0;
  double kl_hat = 0.0;
  double frac_solved = 0.0;
  double frac_unsolved = 0.0;
  std::array<int, kHistogramBins> p_hat_histogram{};
  int skipped_minibatches = 0;  // minibatches whose objective had no usable group

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

inline int histogram_bin(double p_hat) {
  return std::clamp(static_cast<int>(std::floor(p_hat * kHistogramBins)), 0, kHistogramBins - 1);
}

// Entropy is measured under the policy that generated the groups.
inline MetricsRecord collect_metrics(int step, std::span<const RolloutGroup> groups, const PolicyParams& sampler,
                                     double last_kl) {
  MetricsRecord m;
  m.step = step;
  m.kl_hat = last_kl;
  if (groups.empty()) return m;
  std::size_t rollouts = 0;
  for (const auto& g : groups) {
    m.reward_mean += g.p_hat;
    if (g.p_hat == 1.0) m.frac_solved += 1.0;
    if (g.p_hat == 0.0) m.frac_unsolved += 1.0;
    ++m.p_hat_histogram[static_cast<std::size_t>(histogram_bin(g.p_hat))];
    for (const auto& r : g.rollouts) {
      m.entropy += token_entropy(sampler, r.sequence);
      ++rollouts;
    }
  }
  const double n = static_cast<double>(groups.size());
  m.reward_mean /= n;
  m.frac_solved /= n;
  m.frac_unsolved /= n;
  if (rollouts) m.entropy /= static_cast<double>(rollouts);
  return m;
}

struct TrainConfig {
  int steps = 300;
  int batch_questions = 16;
  int minibatch = 4;  // questions per minibatch
  int n_responses = 8;
  double temperature = 0.6;
  AdamWConfig adamw;
  ObjectiveSpec objective = ObjectiveSpec::defaults(ObjectiveKind::disco);
  TrustRegionSpec trust_region;
  std::uint64_t seed = 1;

  void validate() const {
    if (steps < 0) throw ConfigError("steps must be >= 0");
    if (batch_questions < 1) throw ConfigError("batch_questions must be >= 1");
    if (minibatch < 1 || batch_questions % minibatch != 0)
      throw ConfigError("minibatch must divide batch_questions");
    if (n_responses < 2) throw ConfigError("n_responses must be >= 2");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
    if (!(adamw.learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
    if (!(adamw.weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (!(adamw.beta1 >= 0.0 && adamw.beta1 < 1.0) || !(adamw.beta2 >= 0.0 && adamw.beta2 < 1.0))
      throw ConfigError("adam betas must lie in [0,1)");
    if (!(adamw.eps > 0.0)) throw ConfigError("adam eps must be > 0");
    objective.validate();
    trust_region.validate();
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct TrainOptions {
  int threads = 1;  // group generation fan-out; results do not depend on it
  // Called after every completed step with (step, theta, optimizer state).
  std::function<void(int, const PolicyParams&, const OptimizerState&)> on_step;
};

struct TrainResult {
  PolicyParams params;
  std::vector<MetricsRecord> metrics;
  OptimizerState optimizer;
};

namespace detail {

enum StreamTag : std::uint64_t { kBatchStream = 1, kGroupStream = 2 };

inline std::vector<std::size_t> sample_batch(std::size_t bank_size, int batch, std::uint64_t seed, int step) {
  RandomStream rng(seed, {kBatchStream, static_cast<std::uint64_t>(step)});
  std::vector<std::size_t> out(static_cast<std::size_t>(batch));
  if (static_cast<std::size_t>(batch) <= bank_size) {
    std::vector<std::size_t> idx(bank_size);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t k = 0; k < out.size(); ++k) {
      std::swap(idx[k], idx[k + rng.index(bank_size - k)]);
      out[k] = idx[k];
    }
  } else {
    for (auto& i : out) i = rng.index(bank_size);
  }
  return out;
}

template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  for (auto& t : pool) t.join();
}

}  // namespace detail

inline TrainResult train(const TrainConfig& config, std::span<const Question> bank, const PolicyParams& initial,
                         const TrainOptions& options = {}) {
  config.validate();
  if (bank.empty()) throw DomainError("train: empty question bank");
  for (const auto& q : bank) initial.require_question(q.id);

  TrainResult res;
  res.params = initial;
  res.optimizer = OptimizerState(initial.size());
  const PolicyParams& reference = initial;
  PolicyParams& theta = res.params;

  for (int step = 1; step <= config.steps; ++step) {
    const auto batch = detail::sample_batch(bank.size(), config.batch_questions, config.seed, step);
    const PolicyParams theta_old = theta;

    std::vector<RolloutGroup> groups(batch.size());
    detail::parallel_for(batch.size(), options.threads, [&](std::size_t slot) {
      RandomStream rng(config.seed, {detail::kGroupStream, static_cast<std::uint64_t>(step), slot});
      groups[slot] = generate_group(theta_old, bank[batch[slot]], config.n_responses, config.temperature, rng);
    });

    double last_kl = 0.0;
    int skipped = 0;
    const auto mb = static_cast<std::size_t>(config.minibatch);
    for (std::size_t start = 0; start < groups.size(); start += mb) {
      const std::span<const RolloutGroup> part(groups.data() + start, mb);
      std::vector<Rollout> rollouts;
      for (const auto& g : part) rollouts.insert(rollouts.end(), g.rollouts.begin(), g.rollouts.end());

      const auto constraint = constraint_term(config.trust_region, theta, theta_old, rollouts);
      last_kl = constraint.kl_hat;

      GradientVector ascent(theta.size());
      bool have_objective = true;
      try {
        ascent = objective_gradient(config.objective, theta, theta_old, &reference, part);
      } catch (const EmptyBatchError&) {
        have_objective = false;
        ++skipped;
      }
      if (!have_objective && constraint.gradient.is_zero()) continue;
      ascent -= constraint.gradient;
      adamw_step(theta.logits(), ascent, res.optimizer, config.adamw);
    }

    auto rec = collect_metrics(step, groups, theta_old, last_kl);
    rec.skipped_minibatches = skipped;
    res.metrics.push_back(rec);
    if (options.on_step) options.on_step(step, theta, res.optimizer);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Training checkpoint: a policy checkpoint followed by
//
//   adamw-state 1
//   step N
//   encoding binary|text
//   <first moments><second moments>

inline void save_training_checkpoint(std::ostream& os, const PolicyParams& params, const OptimizerState& opt,
                                     Encoding enc = Encoding::binary) {
  save_policy(os, params, enc);
  os << "adamw-state 1\nstep " << opt.step << "\nencoding " << encoding_name(enc) << '\n';
  const auto per_line = static_cast<std::size_t>(params.vocab());
  detail::write_doubles(os, opt.first_moment, enc, per_line);
  detail::write_doubles(os, opt.second_moment, enc, per_line);
}

struct TrainingCheckpoint {
  PolicyParams params;
  OptimizerState optimizer;
};

inline TrainingCheckpoint load_training_checkpoint(std::istream& is) {
  TrainingCheckpoint ck;
  ck.params = load_policy(is);
  std::string line;
  if (!std::getline(is, line) || line != "adamw-state 1") throw DomainError("checkpoint: missing optimizer appendix");
  ck.optimizer = OptimizerState(ck.params.size());
  ck.optimizer.step = detail::expect_field(is, "step");
  const Encoding enc = detail::read_encoding_line(is);
  detail::read_doubles(is, ck.optimizer.first_moment, enc);
  detail::read_doubles(is, ck.optimizer.second_moment, enc);
  return ck;
}

}  // namespace disco
