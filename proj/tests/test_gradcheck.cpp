#include <gtest/gtest.h>

#include <set>

#include "disco/gradcheck.hpp"

using namespace disco;

TEST(RelativeError, UsesLargerNormAndFloor) {
  GradientVector a(2), b(2);
  a[0] = 1.0;
  b[0] = 1.0 + 1e-7;
  EXPECT_NEAR(relative_error(a, b), 1e-7 / (1.0 + 1e-7), 1e-15);
  GradientVector z1(2), z2(2);
  z2[1] = 1e-12;
  EXPECT_NEAR(relative_error(z1, z2), 1e-12 / kGradientNormFloor, 1e-20);
  EXPECT_EQ(relative_error(z1, z1), 0.0);
}

TEST(NumericGradient, Quadratic) {
  const auto p = PolicyParams::uniform({1, 2, 1, 0});
  const auto g = numeric_gradient(p, [](const PolicyParams& q) {
    double s = 0.0;
    for (double z : q.logits()) s += (z - 1.0) * (z - 1.0);
    return s;
  });
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], -2.0, 1e-9);
}

TEST(Gradcheck, CoversEveryObjective) {
  std::set<std::string> names;
  for (const auto& c : default_gradcheck_cases()) names.insert(c.name);
  for (const char* n : {"grpo", "grpo-rw", "dr-grpo", "dapo", "gpg", "trpa", "disco-b/log-l", "disco-b/l-ratio",
                        "disco/log-l", "disco/l-ratio", "grpo-er", "kl"})
    EXPECT_TRUE(names.count(n)) << n;
}

TEST(Gradcheck, AllCasesPass) {
  for (const auto& c : default_gradcheck_cases()) {
    const auto r = run_gradcheck(c, 50, 1);
    EXPECT_TRUE(r.passed()) << c.name << " worst " << r.worst_error << " at " << r.worst_instance;
    EXPECT_EQ(r.instances, 50u);
    EXPECT_LT(r.worst_error, kGradcheckTolerance);
  }
}

TEST(Gradcheck, DiscoAcrossTemperatures) {
  for (double tau : {0.5, 1.0, 5.0, 10.0})
    for (auto& c : default_gradcheck_cases()) {
      if (c.name.rfind("disco/", 0) != 0) continue;
      c.spec.tau = tau;
      EXPECT_TRUE(run_gradcheck(c, 20, 3).passed()) << c.name << " tau " << tau;
    }
}

TEST(Gradcheck, SignFlipIsCaught) {
  const GradientHook flip = [](GradientVector& g) { g *= -1.0; };
  for (const auto& c : default_gradcheck_cases()) {
    const auto r = run_gradcheck(c, 5, 1, flip);
    EXPECT_FALSE(r.passed()) << c.name;
    EXPECT_EQ(r.failures, 5u) << c.name;
  }
}

TEST(Gradcheck, ClippedCasesAvoidKinks) {
  for (const auto& c : default_gradcheck_cases()) {
    if (!has_clip(c.spec)) continue;
    for (std::uint64_t i = 0; i < 20; ++i) {
      const auto inst = gradcheck_instance(c, 1, i);
      EXPECT_GT(clip_margin(inst, c.spec.scoring.epsilon_low, c.spec.scoring.epsilon_high), kKinkMargin);
    }
  }
}
