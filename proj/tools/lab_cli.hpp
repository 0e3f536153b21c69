#pragma once

// disco_lab subcommands. Exit codes: 0 success, 1 runtime or check failure,
// 2 bad arguments or config.

#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "disco/decomposition.hpp"
#include "disco/experiment.hpp"
#include "disco/gradcheck.hpp"

namespace disco::cli {

struct Hooks {
  GradientHook gradient;  // applied to analytic gradients in gradcheck
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

struct GlobalOptions {
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

inline int threads_from_env() {
  const char* v = std::getenv("DISCO_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1 || n > 1024) throw ConfigParseError("DISCO_THREADS", 0, "", "expected an integer in 1..1024");
  return static_cast<int>(n);
}

inline RunConfig load_with_overrides(const std::string& path, const GlobalOptions& g) {
  RunConfig c = load_run_config(path);
  if (g.out) c.output_dir = *g.out;
  if (g.seed) c.train.seed = *g.seed;
  return c;
}

inline int cmd_train(const std::string& path, const GlobalOptions& g) {
  const RunConfig c = load_with_overrides(path, g);
  const int threads = threads_from_env();
  if (!g.quiet)
    std::printf("train: %s seed=%llu steps=%d objective=%s out=%s\n", path.c_str(),
                static_cast<unsigned long long>(c.train.seed), c.train.steps,
                std::string(objective_name(c.train.objective.kind)).c_str(), c.output_dir.c_str());
  const auto out = run_experiment(c, threads);
  if (!g.quiet && !out.result.metrics.empty()) {
    const auto& first = out.result.metrics.front();
    const auto& last = out.result.metrics.back();
    std::printf("reward %.4f -> %.4f  solved %.3f  unsolved %.3f  entropy %.4f\n", first.reward_mean,
                last.reward_mean, last.frac_solved, last.frac_unsolved, last.entropy);
  }
  return kExitOk;
}

inline int cmd_compare(const std::vector<std::string>& paths, const std::string& output, const GlobalOptions& g) {
  std::vector<RunConfig> configs;
  std::vector<std::string> labels;
  std::map<std::string, int> seen;
  for (const auto& p : paths) {
    configs.push_back(load_with_overrides(p, g));
    std::string label = std::filesystem::path(p).stem().string();
    if (const int k = seen[label]++; k > 0) label += "_" + std::to_string(k + 1);
    labels.push_back(label);
  }
  try {
    check_comparable(configs);
  } catch (const DomainError& e) {
    throw ConfigParseError("compare", 0, "", e.what());
  }
  const std::string dir = g.out.value_or(configs.front().output_dir);
  if (!g.quiet)
    std::printf("compare: %zu runs seed=%llu steps=%d\n", configs.size(),
                static_cast<unsigned long long>(configs.front().train.seed), configs.front().train.steps);
  const auto runs = compare_runs(configs, threads_from_env());
  std::filesystem::create_directories(dir);
  const auto path = std::filesystem::path(dir) / output;
  write_file_atomic(path, [&](std::ostream& os) { write_wide_csv(os, labels, runs); });
  if (!g.quiet) std::printf("wrote %s\n", path.string().c_str());
  return kExitOk;
}

struct DecomposeOptions {
  std::string method = "all";
  double alpha = 1.0;
  std::size_t trials = 1000;
  int resolution = 101;
};

inline int cmd_decompose(const DecomposeOptions& o, const GlobalOptions& g) {
  std::vector<WeightedMethod> methods;
  if (o.method == "all") {
    methods.assign(std::begin(kWeightedMethods), std::end(kWeightedMethods));
  } else if (auto m = parse_method(o.method)) {
    methods.push_back(*m);
  } else {
    std::fprintf(stderr, "decompose: unknown method '%s'\n", o.method.c_str());
    return kExitUsage;
  }
  const std::uint64_t seed = g.seed.value_or(1);
  const std::string dir = g.out.value_or("out");
  std::filesystem::create_directories(dir);

  auto rows = emit_weight_curves(o.resolution, o.alpha);
  if (o.method != "all")
    std::erase_if(rows, [&](const WeightRow& r) { return r.method != o.method; });
  write_file_atomic(std::filesystem::path(dir) / "weights.csv", [&](std::ostream& os) {
    os << "method,p,omega\n";
    for (const auto& r : rows) os << r.method << ',' << detail::format_double(r.p) << ',' << detail::format_double(r.omega) << '\n';
  });

  bool ok = true;
  std::ostringstream report, trials;
  report << "seed " << seed << "\n";
  trials << "method,trial,direct,decomposed,deviation\n";
  for (auto m : methods) {
    auto params = default_params(m);
    params.alpha = o.alpha;
    const auto rep = verify_prop1(m, o.trials, seed, params);
    if (!rep.applicable) {
      report << method_name(m) << ": " << rep.note << '\n';
      continue;
    }
    for (const auto& t : rep.trials)
      trials << method_name(m) << ',' << t.trial << ',' << detail::format_double(t.direct) << ','
             << detail::format_double(t.decomposed) << ',' << detail::format_double(t.deviation) << '\n';
    report << method_name(m) << ": trials " << rep.trials.size() << " max_deviation "
           << detail::format_double(rep.max_deviation) << " violations " << rep.violations
           << (rep.passed() ? " PASS" : " FAIL") << '\n';
    ok = ok && rep.passed();
  }
  write_file_atomic(std::filesystem::path(dir) / "identity.csv", [&](std::ostream& os) { os << trials.str(); });
  write_file_atomic(std::filesystem::path(dir) / "identity_report.txt", [&](std::ostream& os) { os << report.str(); });
  if (!g.quiet) std::cout << report.str();
  return ok ? kExitOk : kExitFailure;
}

struct GradcheckOptions {
  std::string objective = "all";
  std::optional<double> tau;
  std::size_t instances = 50;
};

inline int cmd_gradcheck(const GradcheckOptions& o, const GlobalOptions& g, const Hooks& hooks) {
  std::vector<GradcheckCase> cases;
  for (auto& c : default_gradcheck_cases()) {
    const bool match = o.objective == "all" || c.name == o.objective || c.name.rfind(o.objective + "/", 0) == 0;
    if (!match) continue;
    if (o.tau) c.spec.tau = *o.tau;
    cases.push_back(std::move(c));
  }
  if (cases.empty()) {
    std::fprintf(stderr, "gradcheck: unknown objective '%s'\n", o.objective.c_str());
    return kExitUsage;
  }
  if (o.tau && !(*o.tau > 0.0)) {
    std::fprintf(stderr, "gradcheck: --tau must be > 0\n");
    return kExitUsage;
  }
  const std::uint64_t seed = g.seed.value_or(1);
  if (!g.quiet) std::printf("gradcheck: seed=%llu instances=%zu\n", static_cast<unsigned long long>(seed), o.instances);
  bool ok = true;
  for (const auto& c : cases) {
    const auto r = run_gradcheck(c, o.instances, seed, hooks.gradient);
    if (!g.quiet || !r.passed())
      std::printf("%-16s worst_rel_err %.3e (instance %llu)%s\n", c.name.c_str(), r.worst_error,
                  static_cast<unsigned long long>(r.worst_instance), r.passed() ? "" : "  FAIL");
    if (!r.passed()) {
      ok = false;
      std::fprintf(stderr, "gradcheck FAIL %s seed %llu instances", c.name.c_str(), static_cast<unsigned long long>(seed));
      for (auto i : r.failing_instances) std::fprintf(stderr, " %llu", static_cast<unsigned long long>(i));
      std::fprintf(stderr, "\n");
    }
  }
  return ok ? kExitOk : kExitFailure;
}

inline int run(int argc, char** argv, const Hooks& hooks = {}) {
  CLI::App app{"Desk-scale DisCO lab: training, comparisons, identity audits and gradient checks"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--seed", g.seed, "Seed override");
  app.add_flag("--quiet", g.quiet, "Only print failures");

  auto* train_cmd = app.add_subcommand("train", "Train from a config file");
  std::string train_path;
  train_cmd->add_option("config", train_path, "Config file")->required();
  train_cmd->fallthrough();

  auto* compare_cmd = app.add_subcommand("compare", "Train several configs and write one wide CSV");
  std::vector<std::string> compare_paths;
  std::string compare_output = "compare.csv";
  compare_cmd->add_option("configs", compare_paths, "Config files")->required()->expected(1, -1);
  compare_cmd->add_option("--output", compare_output, "CSV file name inside the output directory");
  compare_cmd->fallthrough();

  auto* decompose_cmd = app.add_subcommand("decompose", "Weight curves and the decomposition identity check");
  DecomposeOptions dec;
  decompose_cmd->add_option("--method", dec.method, "grpo, dr-grpo, dapo, gpg, trpa or all");
  decompose_cmd->add_option("--alpha", dec.alpha, "GPG scale")->check(CLI::PositiveNumber);
  decompose_cmd->add_option("--trials", dec.trials, "Random groups per method")->check(CLI::PositiveNumber);
  decompose_cmd->add_option("--resolution", dec.resolution, "Grid points per curve")->check(CLI::Range(2, 1000000));
  decompose_cmd->fallthrough();

  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference checks of every analytic gradient");
  GradcheckOptions gc;
  grad_cmd->add_option("--objective", gc.objective, "Objective name, or all");
  grad_cmd->add_option("--tau", gc.tau, "DisCO temperature override");
  grad_cmd->add_option("--instances", gc.instances, "Random instances per objective")->check(CLI::PositiveNumber);
  grad_cmd->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*train_cmd) return cmd_train(train_path, g);
    if (*compare_cmd) return cmd_compare(compare_paths, compare_output, g);
    if (*decompose_cmd) return cmd_decompose(dec, g);
    if (*grad_cmd) return cmd_gradcheck(gc, g, hooks);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace disco::cli
