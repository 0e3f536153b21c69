#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

namespace {

int run(const std::string& bin, const std::string& args) {
  const std::string cmd = bin + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

int lab(const std::string& args) { return run(DISCO_LAB_BIN, args); }

fs::path temp_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("disco_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

const std::string kMinimal = std::string(DISCO_CONFIGS_DIR) + "/minimal.cfg";

}  // namespace

TEST(Cli, TrainMinimal) {
  const auto d = temp_dir("train");
  ASSERT_EQ(lab("--quiet --out " + d.string() + " train " + kMinimal), 0);
  EXPECT_EQ(count_lines(d / "metrics.csv"), 6u);
  EXPECT_TRUE(fs::exists(d / "final.ckpt"));
  fs::remove_all(d);
}

TEST(Cli, UsageErrors) {
  const auto d = temp_dir("usage");
  EXPECT_EQ(lab(""), 2);
  EXPECT_EQ(lab("frobnicate"), 2);
  EXPECT_EQ(lab("train"), 2);
  EXPECT_EQ(lab("train " + (d / "missing.cfg").string()), 2);
  write(d / "bad.cfg", "objective.kind = ppo\n");
  EXPECT_EQ(lab("train " + (d / "bad.cfg").string()), 2);
  write(d / "nobank.cfg", "bank.path = " + (d / "no_such_bank.txt").string() + "\n");
  EXPECT_EQ(lab("--out " + d.string() + " train " + (d / "nobank.cfg").string()), 2);
  EXPECT_EQ(lab("gradcheck --objective nope"), 2);
  EXPECT_EQ(lab("decompose --method nope"), 2);
  EXPECT_EQ(lab("gradcheck --tau -1 --objective disco"), 2);
  fs::remove_all(d);
}

TEST(Cli, CompareRejectsDifferentSeeds) {
  const auto d = temp_dir("compare_bad");
  std::ifstream in(kMinimal);
  const std::string base((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  write(d / "a.cfg", base + "seed = 1\n");
  write(d / "b.cfg", base + "seed = 2\n");
  EXPECT_EQ(lab("--out " + d.string() + " compare " + (d / "a.cfg").string() + " " + (d / "b.cfg").string()), 2);
  EXPECT_FALSE(fs::exists(d / "compare.csv"));
  fs::remove_all(d);
}

TEST(Cli, CompareWritesWideCsv) {
  const auto d = temp_dir("compare");
  std::ifstream in(kMinimal);
  const std::string base((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  write(d / "a.cfg", base);
  std::string grpo = base;
  grpo.replace(grpo.find("objective.kind = disco"), 22, "objective.kind = grpo");
  write(d / "g.cfg", grpo);
  ASSERT_EQ(lab("--quiet --out " + d.string() + " compare " + (d / "a.cfg").string() + " " + (d / "g.cfg").string()), 0);
  std::ifstream csv(d / "compare.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header.rfind("step,a.reward_mean", 0), 0u);
  EXPECT_NE(header.find(",g.reward_mean"), std::string::npos);
  EXPECT_EQ(count_lines(d / "compare.csv"), 6u);
  fs::remove_all(d);
}

TEST(Cli, Decompose) {
  const auto d = temp_dir("decompose");
  ASSERT_EQ(lab("--quiet --out " + d.string() + " decompose --trials 200"), 0);
  EXPECT_EQ(count_lines(d / "weights.csv"), 1u + 6u * 101u);
  EXPECT_TRUE(fs::exists(d / "identity_report.txt"));
  EXPECT_EQ(count_lines(d / "identity.csv"), 1u + 4u * 200u);
  ASSERT_EQ(lab("--quiet --out " + d.string() + " decompose --method gpg --alpha 2 --resolution 11"), 0);
  EXPECT_EQ(count_lines(d / "weights.csv"), 12u);
  fs::remove_all(d);
}

TEST(Cli, Gradcheck) {
  EXPECT_EQ(lab("--quiet gradcheck --objective disco --tau 0.5 --instances 10"), 0);
  EXPECT_EQ(lab("--quiet gradcheck --objective kl --instances 10"), 0);
  EXPECT_EQ(run(DISCO_SIGNFLIP_BIN, "--quiet gradcheck --objective grpo --instances 3"), 1);
  EXPECT_EQ(run(DISCO_SIGNFLIP_BIN, "--quiet gradcheck --instances 3"), 1);
}
