#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "disco/experiment.hpp"

using namespace disco;
namespace fs = std::filesystem;

namespace {

RunConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_run_config(in, "test.cfg");
}

// Runs `text` through the parser and returns the error.
ConfigParseError parse_error(const std::string& text) {
  try {
    parse(text);
  } catch (const ConfigParseError& e) {
    return e;
  }
  ADD_FAILURE() << "no error for:\n" << text;
  return ConfigParseError("", 0, "", "");
}

fs::path temp_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("disco_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST(Config, Defaults) {
  const auto c = parse("");
  EXPECT_EQ(c, default_run_config(ObjectiveKind::disco));
  EXPECT_EQ(c.train.trust_region.mode, TrustRegionMode::hinge);
  EXPECT_EQ(parse("objective.kind = grpo\n").train.trust_region.mode, TrustRegionMode::none);
  EXPECT_EQ(c.train.adamw.learning_rate, 0.01);
}

TEST(Config, EchoRoundTrip) {
  auto c = parse(
      "objective.kind = dapo\nobjective.epsilon_high = 0.3\nseed = 9\nkl.mode = regularizer\n"
      "bank.path = b.txt\nckpt.format = text\nckpt.every = 10\ntemperature = 0.7  # comment\n");
  EXPECT_EQ(c.train.objective.scoring.epsilon_high, 0.3);
  EXPECT_EQ(c.train.seed, 9u);
  EXPECT_EQ(c.checkpoint_encoding, Encoding::text);
  std::ostringstream os;
  write_run_config(os, c);
  EXPECT_EQ(parse(os.str()), c);
  c.train.temperature = 0.1 + 0.2;
  std::ostringstream os2;
  write_run_config(os2, c);
  EXPECT_EQ(parse(os2.str()).train.temperature, 0.1 + 0.2);
}

TEST(Config, EntropyAlias) {
  const auto c = parse("objective.kind = grpo-er\n");
  EXPECT_EQ(c.train.objective.kind, ObjectiveKind::grpo);
  EXPECT_EQ(c.train.objective.entropy_coeff, 0.001);
  EXPECT_EQ(parse("objective.kind = grpo-er\nobjective.entropy_coeff = 0.01\n").train.objective.entropy_coeff, 0.01);
}

TEST(Config, ScoringOverride) {
  const auto c = parse("objective.scoring = l-ratio\n");
  EXPECT_EQ(c.train.objective.scoring.variant, ScoringVariant::l_ratio);
  const auto e = parse_error("objective.kind = trpa\nobjective.scoring = log-l\n");
  EXPECT_EQ(e.field(), "objective.kind");
}

TEST(Config, ErrorsNameLineAndField) {
  auto e = parse_error("steps = 10\n\nlearning_rate = fast\n");
  EXPECT_EQ(e.line(), 3);
  EXPECT_EQ(e.field(), "learning_rate");
  EXPECT_EQ(e.source(), "test.cfg");
  EXPECT_NE(std::string(e.what()).find("test.cfg:3: learning_rate"), std::string::npos);

  e = parse_error("objective.kind = ppo\n");
  EXPECT_EQ(e.line(), 1);
  EXPECT_EQ(e.field(), "objective.kind");

  e = parse_error("seed = 1\nseed = 2\n");
  EXPECT_EQ(e.line(), 2);
  EXPECT_EQ(e.field(), "seed");

  e = parse_error("stepz = 3\n");
  EXPECT_EQ(e.field(), "stepz");

  e = parse_error("just words\n");
  EXPECT_EQ(e.line(), 1);

  e = parse_error("batch_questions = 6\nminibatch = 4\n");
  EXPECT_EQ(e.field(), "minibatch");
  EXPECT_EQ(e.line(), 2);

  EXPECT_EQ(parse_error("n_responses = 1\n").field(), "n_responses");
  EXPECT_EQ(parse_error("steps = 2.5\n").field(), "steps");
  EXPECT_EQ(parse_error("seed = -1\n").field(), "seed");
  EXPECT_EQ(parse_error("objective.skip_degenerate = maybe\n").field(), "objective.skip_degenerate");
  EXPECT_EQ(parse_error("kl.mode = soft\n").field(), "kl.mode");
  EXPECT_EQ(parse_error("bank.difficulty_min = 0\n").field(), "bank.difficulty_min");
}

TEST(Config, MissingFile) {
  try {
    load_run_config("/nonexistent/x.cfg");
    FAIL();
  } catch (const ConfigParseError& e) {
    EXPECT_EQ(e.line(), 0);
  }
}

TEST(Csv, Header) {
  EXPECT_EQ("step" + csv_header(),
            "step,reward_mean,entropy,kl_hat,frac_solved,frac_unsolved,hist_0,hist_1,hist_2,hist_3,hist_4,hist_5,"
            "hist_6,hist_7,hist_8,hist_9");
  std::ostringstream os;
  MetricsRecord m;
  m.step = 1;
  m.reward_mean = 0.5;
  m.p_hat_histogram[5] = 4;
  write_metrics_csv(os, std::vector<MetricsRecord>{m});
  EXPECT_EQ(os.str(), "step" + csv_header() + "\n1,0.5,0,0,0,0,0,0,0,0,0,4,0,0,0,0\n");
}

TEST(Csv, WideLayout) {
  MetricsRecord m;
  m.step = 1;
  std::ostringstream os;
  write_wide_csv(os, {"a", "b"}, {{m}, {m}});
  std::string first;
  std::istringstream in(os.str());
  std::getline(in, first);
  EXPECT_EQ(first, "step" + csv_header("a.") + csv_header("b."));
  EXPECT_THROW(write_wide_csv(os, {"a"}, {{m}, {m}}), DomainError);
  EXPECT_THROW(write_wide_csv(os, {"a", "b"}, {{m}, {}}), DomainError);
}

TEST(Compare, RequiresSameSeedStepsAndBank) {
  auto a = default_run_config(ObjectiveKind::disco);
  auto b = default_run_config(ObjectiveKind::grpo);
  EXPECT_NO_THROW(check_comparable({a, b}));
  b.train.seed = 2;
  EXPECT_THROW(check_comparable({a, b}), DomainError);
  b = a;
  b.train.steps = 1;
  EXPECT_THROW(check_comparable({a, b}), DomainError);
  b = a;
  b.bank.questions = 8;
  EXPECT_THROW(check_comparable({a, b}), DomainError);
  EXPECT_THROW(check_comparable({}), DomainError);
}

TEST(Files, AtomicWrite) {
  const auto dir = temp_dir("atomic");
  const auto p = dir / "x.txt";
  write_file_atomic(p, [](std::ostream& os) { os << "one"; });
  EXPECT_THROW(write_file_atomic(p, [](std::ostream&) { throw std::runtime_error("boom"); }), std::runtime_error);
  std::ifstream in(p);
  std::string s;
  std::getline(in, s);
  EXPECT_EQ(s, "one");
  fs::remove_all(dir);
}

TEST(Run, WritesOutputs) {
  const auto dir = temp_dir("run");
  auto c = parse("steps = 4\nbatch_questions = 4\nminibatch = 2\nn_responses = 4\nbank.questions = 4\n"
                 "bank.difficulty_min = 0.1\nbank.difficulty_max = 0.5\npolicy.vocab = 3\npolicy.length = 3\n"
                 "ckpt.every = 2\n");
  c.output_dir = dir.string();
  const auto out = run_experiment(c);
  EXPECT_EQ(out.result.metrics.size(), 4u);
  for (const char* f : {"resolved.cfg", "metrics.csv", "final.ckpt", "step_2.ckpt", "step_4.ckpt"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  EXPECT_FALSE(fs::exists(dir / "step_3.ckpt"));
  EXPECT_EQ(load_run_config((dir / "resolved.cfg").string()), c);

  std::ifstream ck(dir / "final.ckpt", std::ios::binary);
  const auto back = load_training_checkpoint(ck);
  EXPECT_TRUE(std::equal(back.params.logits().begin(), back.params.logits().end(),
                         out.result.params.logits().begin()));

  // Bank file round trip and initial policy from checkpoint.
  {
    std::ofstream bf(dir / "bank.txt");
    save_bank(bf, out.bank);
  }
  auto c2 = c;
  c2.bank.path = (dir / "bank.txt").string();
  c2.initial_policy = (dir / "final.ckpt").string();
  c2.output_dir = (dir / "second").string();
  const auto bank = resolve_bank(c2);
  ASSERT_EQ(bank.questions.size(), out.bank.questions.size());
  for (std::size_t i = 0; i < bank.questions.size(); ++i)
    EXPECT_EQ(bank.questions[i].accepting_set, out.bank.questions[i].accepting_set);
  EXPECT_NO_THROW(run_experiment(c2));

  c2.vocab = 4;
  c2.initial_policy.clear();
  EXPECT_THROW(resolve_bank(c2), ConfigParseError);
  c2 = c;
  c2.initial_policy = (dir / "nope.ckpt").string();
  EXPECT_THROW(resolve_initial_policy(c2, 4), ConfigParseError);
  fs::remove_all(dir);
}
