#pragma once

// Run configuration files, metrics CSVs and the train / compare drivers used
// by the command-line tool.
//
// Config files are flat `key = value` lines with dotted keys. `#` starts a
// comment. Keys may appear in any order; objective.kind is applied first so
// that the kind's canonical hyperparameters can then be overridden.

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "disco/constraint.hpp"
#include "disco/errors.hpp"
#include "disco/objectives.hpp"
#include "disco/policy.hpp"
#include "disco/random.hpp"
#include "disco/tasks.hpp"
#include "disco/trainer.hpp"

namespace disco {

// Parse or validation failure in a config file. `line` is 0 when the problem
// is not tied to one line (a missing file, a cross-field check).
class ConfigParseError : public ConfigError {
 public:
  ConfigParseError(std::string source, int line, std::string field, const std::string& what)
      : ConfigError(format(source, line, field, what)), source_(std::move(source)), line_(line), field_(std::move(field)) {}

  const std::string& source() const { return source_; }
  int line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  static std::string format(const std::string& source, int line, const std::string& field, const std::string& what) {
    std::string out = source;
    if (line > 0) out += ":" + std::to_string(line);
    if (!field.empty()) out += ": " + field;
    return out + ": " + what;
  }
  std::string source_;
  int line_;
  std::string field_;
};

struct BankSpec {
  std::string path;  // empty: generate from the fields below and the run seed
  int questions = 32;
  double difficulty_min = 0.03;
  double difficulty_max = 0.9;

  friend bool operator==(const BankSpec&, const BankSpec&) = default;
};

struct RunConfig {
  TrainConfig train;
  BankSpec bank;
  int vocab = 4;
  int length = 4;
  int history_order = 1;
  std::string initial_policy;  // checkpoint path; empty means uniform logits
  std::string output_dir = "out";
  std::string metrics_file = "metrics.csv";
  int checkpoint_every = 0;  // 0: final checkpoint only
  Encoding checkpoint_encoding = Encoding::binary;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// The trust region binds DisCO runs; the baselines bring their own clipping
// or regularizers.
inline TrustRegionMode default_trust_region_mode(ObjectiveKind kind) {
  return kind == ObjectiveKind::disco || kind == ObjectiveKind::disco_b ? TrustRegionMode::hinge
                                                                        : TrustRegionMode::none;
}

inline RunConfig default_run_config(ObjectiveKind kind = ObjectiveKind::disco) {
  RunConfig c;
  c.train.objective = ObjectiveSpec::defaults(kind);
  c.train.trust_region.mode = default_trust_region_mode(kind);
  return c;
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct ConfigEntry {
  std::string value;
  int line = 0;
};

class ConfigReader {
 public:
  ConfigReader(std::string source, std::map<std::string, ConfigEntry> entries)
      : source_(std::move(source)), entries_(std::move(entries)) {}

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    auto it = entries_.find(key);
    throw ConfigParseError(source_, it == entries_.end() ? 0 : it->second.line, key, what);
  }

  const std::string* raw(const std::string& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return nullptr;
    used_.push_back(key);
    return &it->second.value;
  }

  void get(const std::string& key, std::string& out) {
    if (auto v = raw(key)) out = *v;
  }

  void get(const std::string& key, double& out) {
    const std::string* v = raw(key);
    if (!v) return;
    errno = 0;
    char* end = nullptr;
    const double x = std::strtod(v->c_str(), &end);
    if (v->empty() || *end != '\0' || errno == ERANGE || !std::isfinite(x))
      fail(key, "expected a finite number, got '" + *v + "'");
    out = x;
  }

  void get(const std::string& key, int& out) {
    const std::string* v = raw(key);
    if (!v) return;
    errno = 0;
    char* end = nullptr;
    const long x = std::strtol(v->c_str(), &end, 10);
    if (v->empty() || *end != '\0' || errno == ERANGE || x < INT32_MIN || x > INT32_MAX)
      fail(key, "expected an integer, got '" + *v + "'");
    out = static_cast<int>(x);
  }

  void get(const std::string& key, std::uint64_t& out) {
    const std::string* v = raw(key);
    if (!v) return;
    errno = 0;
    char* end = nullptr;
    if (v->empty() || (*v)[0] == '-') fail(key, "expected a non-negative integer, got '" + *v + "'");
    const unsigned long long x = std::strtoull(v->c_str(), &end, 10);
    if (*end != '\0' || errno == ERANGE) fail(key, "expected a non-negative integer, got '" + *v + "'");
    out = x;
  }

  void get(const std::string& key, bool& out) {
    const std::string* v = raw(key);
    if (!v) return;
    if (*v == "true") out = true;
    else if (*v == "false") out = false;
    else fail(key, "expected true or false, got '" + *v + "'");
  }

  void reject_unused() const {
    for (const auto& [key, entry] : entries_)
      if (std::find(used_.begin(), used_.end(), key) == used_.end())
        throw ConfigParseError(source_, entry.line, key, "unknown key");
  }

 private:
  std::string source_;
  std::map<std::string, ConfigEntry> entries_;
  std::vector<std::string> used_;
};

}  // namespace detail

inline RunConfig parse_run_config(std::istream& is, const std::string& source = "<config>") {
  std::map<std::string, detail::ConfigEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigParseError(source, line_no, "", "expected 'key = value'");
    const std::string key = detail::trim(std::string_view(body).substr(0, eq));
    const std::string value = detail::trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ConfigParseError(source, line_no, "", "missing key before '='");
    if (entries.count(key)) throw ConfigParseError(source, line_no, key, "duplicate key");
    entries[key] = {value, line_no};
  }

  detail::ConfigReader rd(source, std::move(entries));

  // Kind first: it fixes the defaults every other objective key overrides.
  ObjectiveKind kind = ObjectiveKind::disco;
  bool entropy_alias = false;
  if (const std::string* v = rd.raw("objective.kind")) {
    if (*v == "grpo-er") {
      kind = ObjectiveKind::grpo;
      entropy_alias = true;
    } else if (auto k = parse_objective_kind(*v)) {
      kind = *k;
    } else {
      rd.fail("objective.kind", "unknown objective '" + *v + "'");
    }
  }
  std::optional<ScoringVariant> scoring;
  if (const std::string* v = rd.raw("objective.scoring")) {
    scoring = parse_scoring(*v);
    if (!scoring) rd.fail("objective.scoring", "unknown scoring '" + *v + "'");
  }

  RunConfig c = default_run_config(kind);
  ObjectiveSpec& o = c.train.objective;
  o = ObjectiveSpec::defaults(kind, scoring.value_or(ScoringVariant::log_l));
  if (scoring) o.scoring.variant = *scoring;
  if (entropy_alias) o.entropy_coeff = 0.001;

  if (const std::string* v = rd.raw("objective.length_norm")) {
    bool found = false;
    for (auto n : {LengthNorm::per_token, LengthNorm::batch_token, LengthNorm::none})
      if (length_norm_name(n) == *v) {
        o.scoring.length_norm = n;
        found = true;
      }
    if (!found) rd.fail("objective.length_norm", "unknown length norm '" + *v + "'");
  }
  rd.get("objective.epsilon_low", o.scoring.epsilon_low);
  rd.get("objective.epsilon_high", o.scoring.epsilon_high);
  rd.get("objective.tau", o.tau);
  rd.get("objective.beta_ref", o.beta_ref);
  rd.get("objective.alpha", o.alpha);
  rd.get("objective.beta_trpa", o.beta_trpa);
  rd.get("objective.old_kl_coeff", o.old_kl_coeff);
  rd.get("objective.entropy_coeff", o.entropy_coeff);
  rd.get("objective.skip_degenerate", o.skip_degenerate);

  TrainConfig& t = c.train;
  rd.get("steps", t.steps);
  rd.get("seed", t.seed);
  rd.get("batch_questions", t.batch_questions);
  rd.get("minibatch", t.minibatch);
  rd.get("n_responses", t.n_responses);
  rd.get("temperature", t.temperature);
  rd.get("learning_rate", t.adamw.learning_rate);
  rd.get("weight_decay", t.adamw.weight_decay);
  rd.get("adam.beta1", t.adamw.beta1);
  rd.get("adam.beta2", t.adamw.beta2);
  rd.get("adam.eps", t.adamw.eps);

  rd.get("kl.delta", t.trust_region.delta);
  rd.get("kl.beta", t.trust_region.beta);
  rd.get("kl.coeff", t.trust_region.coeff);
  if (const std::string* v = rd.raw("kl.mode")) {
    bool found = false;
    for (auto m : {TrustRegionMode::hinge, TrustRegionMode::regularizer, TrustRegionMode::none})
      if (trust_region_mode_name(m) == *v) {
        t.trust_region.mode = m;
        found = true;
      }
    if (!found) rd.fail("kl.mode", "unknown mode '" + *v + "' (hinge, regularizer, none)");
  }

  rd.get("bank.path", c.bank.path);
  rd.get("bank.questions", c.bank.questions);
  rd.get("bank.difficulty_min", c.bank.difficulty_min);
  rd.get("bank.difficulty_max", c.bank.difficulty_max);
  rd.get("policy.vocab", c.vocab);
  rd.get("policy.length", c.length);
  rd.get("policy.history_order", c.history_order);
  rd.get("policy.initial", c.initial_policy);
  rd.get("output.dir", c.output_dir);
  rd.get("output.metrics", c.metrics_file);
  rd.get("ckpt.every", c.checkpoint_every);
  if (const std::string* v = rd.raw("ckpt.format")) {
    if (*v == "binary") c.checkpoint_encoding = Encoding::binary;
    else if (*v == "text") c.checkpoint_encoding = Encoding::text;
    else rd.fail("ckpt.format", "expected binary or text, got '" + *v + "'");
  }
  rd.reject_unused();

  // Range checks, reported against the offending key.
  auto check = [&](bool ok, const std::string& key, const std::string& what) {
    if (!ok) rd.fail(key, what);
  };
  check(t.steps >= 0, "steps", "must be >= 0");
  check(t.batch_questions >= 1, "batch_questions", "must be >= 1");
  check(t.minibatch >= 1 && t.batch_questions % t.minibatch == 0, "minibatch", "must divide batch_questions");
  check(t.n_responses >= 2, "n_responses", "must be >= 2");
  check(t.temperature > 0.0, "temperature", "must be > 0");
  check(t.adamw.learning_rate >= 0.0, "learning_rate", "must be >= 0");
  check(t.adamw.weight_decay >= 0.0, "weight_decay", "must be >= 0");
  check(t.adamw.beta1 >= 0.0 && t.adamw.beta1 < 1.0, "adam.beta1", "must lie in [0,1)");
  check(t.adamw.beta2 >= 0.0 && t.adamw.beta2 < 1.0, "adam.beta2", "must lie in [0,1)");
  check(t.adamw.eps > 0.0, "adam.eps", "must be > 0");
  check(t.trust_region.delta > 0.0, "kl.delta", "must be > 0");
  check(t.trust_region.beta > 0.0, "kl.beta", "must be > 0");
  check(t.trust_region.coeff >= 0.0, "kl.coeff", "must be >= 0");
  check(c.vocab >= 1, "policy.vocab", "must be >= 1");
  check(c.length >= 1, "policy.length", "must be >= 1");
  check(c.history_order == 0 || c.history_order == 1, "policy.history_order", "must be 0 or 1");
  check(c.bank.questions >= 1, "bank.questions", "must be >= 1");
  check(c.bank.difficulty_min > 0.0 && c.bank.difficulty_min < 1.0, "bank.difficulty_min", "must lie in (0,1)");
  check(c.bank.difficulty_max >= c.bank.difficulty_min && c.bank.difficulty_max < 1.0, "bank.difficulty_max",
        "must lie in [difficulty_min, 1)");
  check(c.checkpoint_every >= 0, "ckpt.every", "must be >= 0");
  check(!c.output_dir.empty(), "output.dir", "must not be empty");
  check(!c.metrics_file.empty(), "output.metrics", "must not be empty");
  try {
    o.validate();
  } catch (const ConfigError& e) {
    rd.fail("objective.kind", e.what());
  }
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigParseError(path, 0, "", "cannot open config file");
  return parse_run_config(in, path);
}

// Every key, fully resolved; parse_run_config() of the output reproduces `c`.
inline void write_run_config(std::ostream& os, const RunConfig& c) {
  const auto& t = c.train;
  const auto& o = t.objective;
  auto d = detail::format_double;
  os << "steps = " << t.steps << '\n'
     << "seed = " << t.seed << '\n'
     << "batch_questions = " << t.batch_questions << '\n'
     << "minibatch = " << t.minibatch << '\n'
     << "n_responses = " << t.n_responses << '\n'
     << "temperature = " << d(t.temperature) << '\n'
     << "learning_rate = " << d(t.adamw.learning_rate) << '\n'
     << "weight_decay = " << d(t.adamw.weight_decay) << '\n'
     << "adam.beta1 = " << d(t.adamw.beta1) << '\n'
     << "adam.beta2 = " << d(t.adamw.beta2) << '\n'
     << "adam.eps = " << d(t.adamw.eps) << '\n'
     << '\n'
     << "objective.kind = " << objective_name(o.kind) << '\n'
     << "objective.scoring = " << scoring_name(o.scoring.variant) << '\n'
     << "objective.length_norm = " << length_norm_name(o.scoring.length_norm) << '\n'
     << "objective.epsilon_low = " << d(o.scoring.epsilon_low) << '\n'
     << "objective.epsilon_high = " << d(o.scoring.epsilon_high) << '\n'
     << "objective.tau = " << d(o.tau) << '\n'
     << "objective.beta_ref = " << d(o.beta_ref) << '\n'
     << "objective.alpha = " << d(o.alpha) << '\n'
     << "objective.beta_trpa = " << d(o.beta_trpa) << '\n'
     << "objective.old_kl_coeff = " << d(o.old_kl_coeff) << '\n'
     << "objective.entropy_coeff = " << d(o.entropy_coeff) << '\n'
     << "objective.skip_degenerate = " << (o.skip_degenerate ? "true" : "false") << '\n'
     << '\n'
     << "kl.mode = " << trust_region_mode_name(t.trust_region.mode) << '\n'
     << "kl.delta = " << d(t.trust_region.delta) << '\n'
     << "kl.beta = " << d(t.trust_region.beta) << '\n'
     << "kl.coeff = " << d(t.trust_region.coeff) << '\n'
     << '\n'
     << "bank.path = " << c.bank.path << '\n'
     << "bank.questions = " << c.bank.questions << '\n'
     << "bank.difficulty_min = " << d(c.bank.difficulty_min) << '\n'
     << "bank.difficulty_max = " << d(c.bank.difficulty_max) << '\n'
     << "policy.vocab = " << c.vocab << '\n'
     << "policy.length = " << c.length << '\n'
     << "policy.history_order = " << c.history_order << '\n'
     << "policy.initial = " << c.initial_policy << '\n'
     << '\n'
     << "output.dir = " << c.output_dir << '\n'
     << "output.metrics = " << c.metrics_file << '\n'
     << "ckpt.every = " << c.checkpoint_every << '\n'
     << "ckpt.format = " << encoding_name(c.checkpoint_encoding) << '\n';
}

// ---------------------------------------------------------------------------
// Files

// Writes through a sibling temp file and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, const std::function<void(std::ostream&)>& body,
                              std::ios::openmode mode = std::ios::out) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, mode | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    body(out);
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string csv_header(const std::string& prefix = "") {
  std::string h;
  for (const char* name : {"reward_mean", "entropy", "kl_hat", "frac_solved", "frac_unsolved"}) h += "," + prefix + name;
  for (int b = 0; b < kHistogramBins; ++b) h += "," + prefix + "hist_" + std::to_string(b);
  return h;
}

inline std::string csv_fields(const MetricsRecord& m) {
  auto d = detail::format_double;
  std::string s = "," + d(m.reward_mean) + "," + d(m.entropy) + "," + d(m.kl_hat) + "," + d(m.frac_solved) + "," +
                  d(m.frac_unsolved);
  for (int v : m.p_hat_histogram) s += "," + std::to_string(v);
  return s;
}

inline void write_metrics_csv(std::ostream& os, std::span<const MetricsRecord> metrics) {
  os << "step" << csv_header() << '\n';
  for (const auto& m : metrics) os << m.step << csv_fields(m) << '\n';
}

// One row per step; each run's columns are prefixed with "<label>.".
inline void write_wide_csv(std::ostream& os, const std::vector<std::string>& labels,
                           const std::vector<std::vector<MetricsRecord>>& runs) {
  if (labels.size() != runs.size()) throw DomainError("write_wide_csv: one label per run");
  os << "step";
  for (const auto& l : labels) os << csv_header(l + ".");
  os << '\n';
  const std::size_t rows = runs.empty() ? 0 : runs.front().size();
  for (const auto& r : runs)
    if (r.size() != rows) throw DomainError("write_wide_csv: runs have different lengths");
  for (std::size_t i = 0; i < rows; ++i) {
    os << runs.front()[i].step;
    for (const auto& r : runs) os << csv_fields(r[i]);
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Drivers

enum StreamKey : std::uint64_t { kBankStream = 3 };

inline QuestionBank resolve_bank(const RunConfig& c) {
  if (!c.bank.path.empty()) {
    std::ifstream in(c.bank.path);
    if (!in) throw ConfigParseError(c.bank.path, 0, "bank.path", "cannot open bank file");
    QuestionBank bank;
    try {
      bank = load_bank(in);
    } catch (const DomainError& e) {
      throw ConfigParseError(c.bank.path, 0, "bank.path", e.what());
    }
    if (bank.vocab != c.vocab || bank.length != c.length)
      throw ConfigParseError(c.bank.path, 0, "bank.path", "bank V/L do not match policy.vocab/policy.length");
    return bank;
  }
  RandomStream rng(c.train.seed, {kBankStream});
  QuestionBank bank;
  bank.vocab = c.vocab;
  bank.length = c.length;
  try {
    bank.questions = make_bank(c.bank.questions,
                               log_spaced_profile(c.bank.questions, c.bank.difficulty_min, c.bank.difficulty_max),
                               c.vocab, c.length, rng);
  } catch (const std::exception& e) {
    throw ConfigParseError("<config>", 0, "bank", e.what());
  }
  return bank;
}

inline PolicyParams resolve_initial_policy(const RunConfig& c, int num_questions) {
  PolicyShape shape{num_questions, c.vocab, c.length, c.history_order};
  if (c.initial_policy.empty()) return PolicyParams::uniform(shape);
  std::ifstream in(c.initial_policy, std::ios::binary);
  if (!in) throw ConfigParseError(c.initial_policy, 0, "policy.initial", "cannot open checkpoint");
  PolicyParams p;
  try {
    p = load_policy(in);
  } catch (const DomainError& e) {
    throw ConfigParseError(c.initial_policy, 0, "policy.initial", e.what());
  }
  if (!(p.shape() == shape)) throw ConfigParseError(c.initial_policy, 0, "policy.initial", "checkpoint shape mismatch");
  return p;
}

struct RunOutputs {
  TrainResult result;
  QuestionBank bank;
};

// Trains and writes metrics, checkpoints and the resolved config under
// c.output_dir.
inline RunOutputs run_experiment(const RunConfig& c, int threads = 1) {
  RunOutputs out;
  out.bank = resolve_bank(c);
  const PolicyParams initial = resolve_initial_policy(c, static_cast<int>(out.bank.questions.size()));
  const std::filesystem::path dir(c.output_dir);
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "resolved.cfg", [&](std::ostream& os) { write_run_config(os, c); });

  TrainOptions opt;
  opt.threads = threads;
  if (c.checkpoint_every > 0)
    opt.on_step = [&](int step, const PolicyParams& theta, const OptimizerState& state) {
      if (step % c.checkpoint_every != 0) return;
      write_file_atomic(dir / ("step_" + std::to_string(step) + ".ckpt"),
                        [&](std::ostream& os) { save_training_checkpoint(os, theta, state, c.checkpoint_encoding); },
                        std::ios::out | std::ios::binary);
    };
  out.result = train(c.train, out.bank.questions, initial, opt);
  write_file_atomic(dir / c.metrics_file, [&](std::ostream& os) { write_metrics_csv(os, out.result.metrics); });
  write_file_atomic(dir / "final.ckpt",
                    [&](std::ostream& os) {
                      save_training_checkpoint(os, out.result.params, out.result.optimizer, c.checkpoint_encoding);
                    },
                    std::ios::out | std::ios::binary);
  return out;
}

// Runs that are compared must see the same questions for the same number of
// steps under the same seed.
inline void check_comparable(const std::vector<RunConfig>& configs) {
  if (configs.empty()) throw DomainError("compare: no configs");
  const RunConfig& a = configs.front();
  for (std::size_t i = 1; i < configs.size(); ++i) {
    const RunConfig& b = configs[i];
    const std::string tag = "config " + std::to_string(i + 1);
    if (b.train.steps != a.train.steps) throw DomainError(tag + ": steps differ");
    if (b.train.seed != a.train.seed) throw DomainError(tag + ": seed differs");
    if (!(b.bank == a.bank) || b.vocab != a.vocab || b.length != a.length)
      throw DomainError(tag + ": bank differs");
  }
}

inline std::vector<std::vector<MetricsRecord>> compare_runs(const std::vector<RunConfig>& configs, int threads = 1) {
  check_comparable(configs);
  std::vector<std::vector<MetricsRecord>> runs;
  for (const auto& c : configs) {
    const auto bank = resolve_bank(c);
    const auto initial = resolve_initial_policy(c, static_cast<int>(bank.questions.size()));
    TrainOptions opt;
    opt.threads = threads;
    runs.push_back(train(c.train, bank.questions, initial, opt).metrics);
  }
  return runs;
}

}  // namespace disco
