#pragma once

// Synthetic verifiable questions. A question accepts a fixed subset of the
// V^L sequence space; its reward is membership in that subset.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "disco/errors.hpp"
#include "disco/policy.hpp"
#include "disco/random.hpp"

namespace disco {

struct Question {
  int id = 0;
  std::set<std::vector<int>> accepting_set;
  double nominal_difficulty = 0.5;
};

inline int verify(const Question& question, const TokenSequence& seq) {
  return question.accepting_set.contains(seq.tokens) ? 1 : 0;
}

struct RolloutGroup {
  int question_id = 0;
  std::vector<Rollout> rollouts;
  std::vector<std::size_t> positives;
  std::vector<std::size_t> negatives;
  double p_hat = 0.0;

  std::size_t size() const { return rollouts.size(); }
  bool degenerate() const { return positives.empty() || negatives.empty(); }
};

// Partitions rollouts by their reward bits.
inline RolloutGroup make_group(int question_id, std::vector<Rollout> rollouts) {
  if (rollouts.size() < 2) throw DomainError("group: need at least 2 rollouts");
  RolloutGroup g;
  g.question_id = question_id;
  g.rollouts = std::move(rollouts);
  for (std::size_t i = 0; i < g.rollouts.size(); ++i) {
    const int r = g.rollouts[i].reward;
    if (r != 0 && r != 1) throw DomainError("group: reward must be 0 or 1");
    (r == 1 ? g.positives : g.negatives).push_back(i);
  }
  g.p_hat = static_cast<double>(g.positives.size()) / static_cast<double>(g.rollouts.size());
  return g;
}

inline RolloutGroup generate_group(const PolicyParams& params, const Question& question, int n,
                                   double temperature, RandomStream& rng) {
  if (n < 2) throw DomainError("generate_group: n must be >= 2");
  std::vector<Rollout> rollouts;
  rollouts.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rollout r = sample(params, question.id, temperature, rng);
    r.reward = verify(question, r.sequence);
    rollouts.push_back(std::move(r));
  }
  return make_group(question.id, std::move(rollouts));
}

inline constexpr std::uint64_t kDefaultEnumerationBudget = 1'000'000;

inline std::uint64_t sequence_space_size(int vocab, int length, std::uint64_t budget) {
  std::uint64_t count = 1;
  for (int t = 0; t < length; ++t) {
    count *= static_cast<std::uint64_t>(vocab);
    if (count > budget)
      throw CapacityError("enumeration: V^L exceeds budget of " + std::to_string(budget));
  }
  return count;
}

// Base-V digits of `index`, most significant first.
inline std::vector<int> decode_sequence(std::uint64_t index, int vocab, int length) {
  std::vector<int> tokens(static_cast<std::size_t>(length));
  for (int t = length - 1; t >= 0; --t) {
    tokens[static_cast<std::size_t>(t)] = static_cast<int>(index % static_cast<std::uint64_t>(vocab));
    index /= static_cast<std::uint64_t>(vocab);
  }
  return tokens;
}

// Calls fn(tokens) for all V^L sequences in lexicographic order.
template <typename Fn>
void for_each_sequence(int vocab, int length, Fn&& fn, std::uint64_t budget = kDefaultEnumerationBudget) {
  const std::uint64_t count = sequence_space_size(vocab, length, budget);
  std::vector<int> tokens(static_cast<std::size_t>(length), 0);
  for (std::uint64_t i = 0; i < count; ++i) {
    fn(std::as_const(tokens));
    for (int t = length - 1; t >= 0; --t) {
      auto& d = tokens[static_cast<std::size_t>(t)];
      if (++d < vocab) break;
      d = 0;
    }
  }
}

struct SuccessProbability {
  double success = 0.0;
  double failure = 0.0;
};

inline SuccessProbability exact_outcome_probabilities(const PolicyParams& params, const Question& question,
                                                      std::uint64_t budget = kDefaultEnumerationBudget) {
  params.require_question(question.id);
  SuccessProbability out;
  TokenSequence seq{question.id, {}};
  for_each_sequence(
      params.vocab(), params.length(),
      [&](const std::vector<int>& tokens) {
        seq.tokens = tokens;
        const double p = std::exp(sequence_log_prob(params, seq));
        (question.accepting_set.contains(tokens) ? out.success : out.failure) += p;
      },
      budget);
  return out;
}

inline double exact_success_prob(const PolicyParams& params, const Question& question,
                                 std::uint64_t budget = kDefaultEnumerationBudget) {
  return std::clamp(exact_outcome_probabilities(params, question, budget).success, 0.0, 1.0);
}

inline std::vector<Question> make_bank(int num_questions, const std::vector<double>& difficulty_profile, int vocab,
                                       int length, RandomStream& rng) {
  if (num_questions < 1) throw DomainError("make_bank: num_questions must be >= 1");
  if (static_cast<int>(difficulty_profile.size()) != num_questions)
    throw DomainError("make_bank: difficulty profile has " + std::to_string(difficulty_profile.size()) +
                      " entries for " + std::to_string(num_questions) + " questions");
  const std::uint64_t space = sequence_space_size(vocab, length, kDefaultEnumerationBudget);
  std::vector<std::uint64_t> all(space);
  std::iota(all.begin(), all.end(), std::uint64_t{0});

  std::vector<Question> bank;
  bank.reserve(static_cast<std::size_t>(num_questions));
  for (int i = 0; i < num_questions; ++i) {
    const double d = difficulty_profile[static_cast<std::size_t>(i)];
    if (!(d > 0.0 && d < 1.0)) throw DomainError("make_bank: difficulty must lie in (0,1)");
    const auto size = static_cast<std::uint64_t>(std::llround(d * static_cast<double>(space)));
    if (size < 1 || size >= space)
      throw DomainError("make_bank: difficulty " + std::to_string(d) + " gives accepting set of size " +
                        std::to_string(size) + " out of " + std::to_string(space));
    // Partial Fisher-Yates picks `size` distinct sequences.
    for (std::uint64_t k = 0; k < size; ++k) std::swap(all[k], all[k + rng.index(space - k)]);
    Question q;
    q.id = i;
    q.nominal_difficulty = d;
    for (std::uint64_t k = 0; k < size; ++k) q.accepting_set.insert(decode_sequence(all[k], vocab, length));
    bank.push_back(std::move(q));
  }
  return bank;
}

// `count` difficulties evenly spaced in log scale over [lo, hi].
inline std::vector<double> log_spaced_profile(int count, double lo, double hi) {
  if (count < 1 || !(lo > 0.0) || !(hi >= lo)) throw DomainError("log_spaced_profile: bad range");
  std::vector<double> out(static_cast<std::size_t>(count));
  if (count == 1) {
    out[0] = lo;
    return out;
  }
  const double a = std::log(lo);
  const double b = std::log(hi);
  for (int i = 0; i < count; ++i) out[static_cast<std::size_t>(i)] = std::exp(a + (b - a) * i / (count - 1));
  return out;
}

// ---------------------------------------------------------------------------
// Bank file
//
//   disco-bank 1
//   V L count
//   id difficulty tok tok ...,tok tok ...,...
//
// One line per question. Accepting sequences are comma-separated; tokens inside
// a sequence are separated by single spaces.

struct QuestionBank {
  int vocab = 4;
  int length = 4;
  std::vector<Question> questions;
};

inline void save_bank(std::ostream& os, const QuestionBank& bank) {
  os << "disco-bank 1\n" << bank.vocab << ' ' << bank.length << ' ' << bank.questions.size() << '\n';
  char buf[32];
  for (const auto& q : bank.questions) {
    std::snprintf(buf, sizeof buf, "%.17g", q.nominal_difficulty);
    os << q.id << ' ' << buf << ' ';
    bool first = true;
    for (const auto& seq : q.accepting_set) {
      if (!first) os << ',';
      first = false;
      for (std::size_t t = 0; t < seq.size(); ++t) os << (t ? " " : "") << seq[t];
    }
    os << '\n';
  }
}

inline QuestionBank load_bank(std::istream& is) {
  auto fail = [](int line_no, const std::string& what) {
    throw DomainError("bank line " + std::to_string(line_no) + ": " + what);
  };
  std::string line;
  if (!std::getline(is, line) || line != "disco-bank 1") fail(1, "expected header 'disco-bank 1'");
  QuestionBank bank;
  std::size_t count = 0;
  if (!std::getline(is, line)) fail(2, "missing 'V L count'");
  {
    std::istringstream ls(line);
    if (!(ls >> bank.vocab >> bank.length >> count) || bank.vocab < 1 || bank.length < 1)
      fail(2, "expected 'V L count'");
  }
  int line_no = 2;
  while (bank.questions.size() < count) {
    ++line_no;
    if (!std::getline(is, line)) fail(line_no, "expected " + std::to_string(count) + " questions");
    std::istringstream ls(line);
    Question q;
    if (!(ls >> q.id >> q.nominal_difficulty)) fail(line_no, "expected 'id difficulty sequences'");
    if (q.id != static_cast<int>(bank.questions.size())) fail(line_no, "question ids must be 0..count-1 in order");
    std::string rest;
    std::getline(ls >> std::ws, rest);
    std::istringstream seqs(rest);
    std::string item;
    while (std::getline(seqs, item, ',')) {
      std::istringstream ts(item);
      std::vector<int> tokens;
      int tok = 0;
      while (ts >> tok) {
        if (tok < 0 || tok >= bank.vocab) fail(line_no, "token out of range");
        tokens.push_back(tok);
      }
      if (static_cast<int>(tokens.size()) != bank.length) fail(line_no, "sequence length != L");
      q.accepting_set.insert(std::move(tokens));
    }
    if (q.accepting_set.empty()) fail(line_no, "empty accepting set");
    if (q.accepting_set.size() >= sequence_space_size(bank.vocab, bank.length, kDefaultEnumerationBudget))
      fail(line_no, "accepting set must be a strict subset of the sequence space");
    bank.questions.push_back(std::move(q));
  }
  return bank;
}

}  // namespace disco
