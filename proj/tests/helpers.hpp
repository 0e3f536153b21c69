#pragma once

#include <cmath>
#include <vector>

#include "disco/policy.hpp"
#include "disco/tasks.hpp"

namespace disco::test {

inline PolicyShape shape(int q, int v, int l, int order = 1) { return PolicyShape{q, v, l, order}; }

inline Rollout rollout(const PolicyParams& sampler, int qid, std::vector<int> tokens, int reward) {
  Rollout r;
  r.sequence = {qid, std::move(tokens)};
  r.gen_logprobs = log_prob(sampler, r.sequence);
  r.reward = reward;
  return r;
}

// Group for question `qid` whose i-th rollout is tokens[i] with reward rewards[i].
inline RolloutGroup group(const PolicyParams& sampler, int qid, const std::vector<std::vector<int>>& tokens,
                          const std::vector<int>& rewards) {
  std::vector<Rollout> rs;
  for (std::size_t i = 0; i < tokens.size(); ++i) rs.push_back(rollout(sampler, qid, tokens[i], rewards[i]));
  return make_group(qid, std::move(rs));
}

}  // namespace disco::test
