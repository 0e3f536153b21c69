#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "disco/tasks.hpp"
#include "helpers.hpp"

using namespace disco;
using disco::test::shape;

namespace {

Question question(std::initializer_list<std::vector<int>> accepted) {
  Question q;
  q.accepting_set = accepted;
  return q;
}

PolicyParams saturated_on(const std::vector<int>& tokens) {
  auto p = PolicyParams::uniform(shape(1, 4, static_cast<int>(tokens.size())));
  for (int t = 0; t < p.length(); ++t)
    for (int prev = 0; prev <= 4; ++prev) p.row(0, t, prev)[static_cast<std::size_t>(tokens[static_cast<std::size_t>(t)])] = 1000.0;
  return p;
}

}  // namespace

TEST(Verify, Membership) {
  const auto q = question({{0, 0}});
  EXPECT_EQ(verify(q, {0, {0, 0}}), 1);
  EXPECT_EQ(verify(q, {0, {0, 1}}), 0);
}

TEST(Verify, CountsAcceptingSet) {
  const auto q = question({{0, 0}, {1, 2}, {3, 3}, {2, 1}});
  int hits = 0;
  for_each_sequence(4, 2, [&](const std::vector<int>& t) { hits += verify(q, {0, t}); });
  EXPECT_EQ(hits, 4);
}

TEST(GenerateGroup, SaturatedSuccessAndFailure) {
  const auto p = saturated_on({1, 2});
  RandomStream rng(1);
  const auto win = generate_group(p, question({{1, 2}}), 8, 0.6, rng);
  EXPECT_EQ(win.p_hat, 1.0);
  EXPECT_TRUE(win.negatives.empty());
  EXPECT_TRUE(win.degenerate());
  const auto lose = generate_group(p, question({{2, 1}}), 8, 0.6, rng);
  EXPECT_EQ(lose.p_hat, 0.0);
  EXPECT_TRUE(lose.positives.empty());
}

TEST(GenerateGroup, UniformPolicyConverges) {
  const auto p = PolicyParams::uniform(shape(1, 4, 2));
  RandomStream rng(2);
  const auto g = generate_group(p, question({{3, 1}}), 10000, 1.0, rng);
  EXPECT_NEAR(g.p_hat, 0.0625, 0.01);
  EXPECT_EQ(g.positives.size() + g.negatives.size(), 10000u);
}

TEST(GenerateGroup, ConvergesToExactSuccessProbability) {
  RandomStream init(3);
  const auto p = PolicyParams::random(shape(1, 3, 3), init);
  const auto q = question({{0, 0, 0}, {1, 2, 0}, {2, 2, 2}, {0, 1, 2}, {1, 1, 1}});
  const double exact = exact_success_prob(p, q);
  RandomStream rng(4);
  const int n = 200000;
  const auto g = generate_group(p, q, n, 1.0, rng);
  EXPECT_NEAR(g.p_hat, exact, 3.0 * std::sqrt(exact * (1 - exact) / n));
}

TEST(Group, PartitionInvariants) {
  const auto p = PolicyParams::uniform(shape(1, 2, 1));
  const auto g = test::group(p, 0, {{0}, {1}, {0}, {1}, {1}}, {1, 0, 1, 0, 0});
  EXPECT_EQ(g.positives, (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(g.negatives, (std::vector<std::size_t>{1, 3, 4}));
  EXPECT_DOUBLE_EQ(g.p_hat, 0.4);
  EXPECT_THROW(make_group(0, {test::rollout(p, 0, {0}, 1)}), DomainError);
  EXPECT_THROW(make_group(0, {test::rollout(p, 0, {0}, 1), test::rollout(p, 0, {1}, 2)}), DomainError);
  RandomStream rng(1);
  EXPECT_THROW(generate_group(p, question({{0}}), 1, 1.0, rng), DomainError);
}

TEST(ExactSuccessProb, UniformMass) {
  const auto p = PolicyParams::uniform(shape(1, 4, 2));
  EXPECT_DOUBLE_EQ(exact_success_prob(p, question({{2, 3}})), 0.0625);
  Question half;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 4; ++b) half.accepting_set.insert({a, b});
  EXPECT_NEAR(exact_success_prob(p, half), 0.5, 1e-15);
}

TEST(ExactSuccessProb, SuccessPlusFailureIsOne) {
  RandomStream init(5);
  const auto p = PolicyParams::random(shape(1, 4, 3), init, 2.0);
  const auto out = exact_outcome_probabilities(p, question({{0, 1, 2}, {3, 3, 3}}));
  EXPECT_NEAR(out.success + out.failure, 1.0, 1e-12);
  EXPECT_GE(out.success, 0.0);
}

TEST(ExactSuccessProb, MatchesMonteCarlo) {
  RandomStream init(6);
  const auto p = PolicyParams::random(shape(1, 4, 2), init);
  const auto q = question({{0, 1}, {2, 2}, {3, 0}});
  const double exact = exact_success_prob(p, q);
  RandomStream rng(7);
  const int n = 1000000;
  int hits = 0;
  for (int i = 0; i < n; ++i) hits += verify(q, sample(p, 0, 1.0, rng).sequence);
  EXPECT_NEAR(hits / static_cast<double>(n), exact, 3.0 * std::sqrt(exact * (1 - exact) / n));
}

TEST(ExactSuccessProb, BudgetExceeded) {
  const auto p = PolicyParams::uniform(shape(1, 4, 4));
  EXPECT_THROW(exact_success_prob(p, question({{0, 0, 0, 0}}), 100), CapacityError);
}

TEST(MakeBank, SizesFollowDifficulty) {
  RandomStream rng(8);
  const auto one = make_bank(1, {0.0625}, 4, 2, rng);
  EXPECT_EQ(one[0].accepting_set.size(), 1u);
  const auto half = make_bank(1, {0.5}, 4, 2, rng);
  EXPECT_EQ(half[0].accepting_set.size(), 8u);
  EXPECT_DOUBLE_EQ(exact_success_prob(PolicyParams::uniform(shape(1, 4, 2)), half[0]), 0.5);
}

TEST(MakeBank, ProfileRoundsToGrid) {
  RandomStream rng(9);
  const auto bank = make_bank(3, {0.1, 0.5, 0.9}, 4, 2, rng);
  const auto p = PolicyParams::uniform(shape(3, 4, 2));
  const double expected[] = {0.125, 0.5, 0.875};
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(bank[static_cast<std::size_t>(i)].id, i);
    EXPECT_NEAR(exact_success_prob(p, bank[static_cast<std::size_t>(i)]), expected[i], 1e-15);
  }
}

TEST(MakeBank, InfeasibleDifficulty) {
  RandomStream rng(10);
  EXPECT_THROW(make_bank(1, {0.01}, 4, 2, rng), DomainError);
  EXPECT_THROW(make_bank(1, {0.99}, 4, 2, rng), DomainError);
  EXPECT_THROW(make_bank(1, {1.0}, 4, 2, rng), DomainError);
  EXPECT_THROW(make_bank(2, {0.5}, 4, 2, rng), DomainError);
}

TEST(MakeBank, UniformPolicyHistogramNearDifficulties) {
  RandomStream rng(11);
  const auto profile = log_spaced_profile(32, 0.03, 0.9);
  const auto bank = make_bank(32, profile, 4, 4, rng);
  const auto p = PolicyParams::uniform(shape(32, 4, 4));
  for (const auto& q : bank) {
    const double exact = exact_success_prob(p, q);
    EXPECT_NEAR(exact, q.nominal_difficulty, 0.5 / 256 + 1e-12);
  }
}

TEST(LogSpacedProfile, Endpoints) {
  const auto p = log_spaced_profile(16, 0.03, 0.9);
  ASSERT_EQ(p.size(), 16u);
  EXPECT_NEAR(p.front(), 0.03, 1e-15);
  EXPECT_NEAR(p.back(), 0.9, 1e-15);
  for (std::size_t i = 1; i < p.size(); ++i) EXPECT_NEAR(p[i] / p[i - 1], std::pow(30.0, 1.0 / 15), 1e-12);
}

TEST(BankFile, RoundTrip) {
  RandomStream rng(12);
  QuestionBank bank{4, 2, make_bank(3, {0.1, 0.5, 0.9}, 4, 2, rng)};
  std::stringstream ss;
  save_bank(ss, bank);
  const auto back = load_bank(ss);
  ASSERT_EQ(back.questions.size(), 3u);
  EXPECT_EQ(back.vocab, 4);
  EXPECT_EQ(back.length, 2);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back.questions[i].accepting_set, bank.questions[i].accepting_set);
    EXPECT_EQ(back.questions[i].nominal_difficulty, bank.questions[i].nominal_difficulty);
  }
}

TEST(BankFile, Format) {
  QuestionBank bank{2, 2, {question({{0, 1}, {1, 1}})}};
  bank.questions[0].nominal_difficulty = 0.5;
  std::stringstream ss;
  save_bank(ss, bank);
  EXPECT_EQ(ss.str(), "disco-bank 1\n2 2 1\n0 0.5 0 1,1 1\n");
}

TEST(BankFile, Rejects) {
  auto load = [](const std::string& s) {
    std::stringstream ss(s);
    return load_bank(ss);
  };
  EXPECT_THROW(load("bank\n"), DomainError);
  EXPECT_THROW(load("disco-bank 1\n2 2 2\n0 0.5 0 1\n"), DomainError);
  EXPECT_THROW(load("disco-bank 1\n2 2 1\n0 0.5 0 2\n"), DomainError);
  EXPECT_THROW(load("disco-bank 1\n2 2 1\n0 0.5 0 1 1\n"), DomainError);
  EXPECT_THROW(load("disco-bank 1\n2 2 1\n1 0.5 0 1\n"), DomainError);
  EXPECT_THROW(load("disco-bank 1\n2 1 1\n0 0.5 0,1\n"), DomainError);
  EXPECT_THROW(load("disco-bank 1\n2 1 1\n0 0.5\n"), DomainError);
}
