#pragma once

// Tabular autoregressive softmax policy over fixed-length token sequences.
//
// Logits live in one flat table indexed by
//   (question, position, previous token, token)
// where "previous token" ranges over [0, V] and V is the BOS slot used at
// position 0. With history_order 0 every position reads the BOS row, so the
// policy factorizes over positions.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "disco/errors.hpp"
#include "disco/random.hpp"

namespace disco {

struct PolicyShape {
  int num_questions = 1;
  int vocab = 4;
  int length = 4;
  int history_order = 1;

  friend bool operator==(const PolicyShape&, const PolicyShape&) = default;

  std::size_t contexts_per_question() const {
    return static_cast<std::size_t>(length) * static_cast<std::size_t>(vocab + 1);
  }
  std::size_t parameter_count() const {
    return static_cast<std::size_t>(num_questions) * contexts_per_question() *
           static_cast<std::size_t>(vocab);
  }
  void validate() const {
    if (num_questions < 1) throw DomainError("policy: num_questions must be >= 1");
    if (vocab < 1) throw DomainError("policy: vocab_size must be >= 1");
    if (length < 1) throw DomainError("policy: max_len must be >= 1");
    if (history_order != 0 && history_order != 1)
      throw DomainError("policy: history_order must be 0 or 1");
  }
};

// Flat gradient aligned with PolicyParams::logits().
class GradientVector {
 public:
  GradientVector() = default;
  explicit GradientVector(std::size_t n) : values_(n, 0.0) {}

  std::size_t size() const { return values_.size(); }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  GradientVector& operator+=(const GradientVector& other) {
    require_same_size(other);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
    return *this;
  }
  GradientVector& operator-=(const GradientVector& other) {
    require_same_size(other);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= other.values_[i];
    return *this;
  }
  GradientVector& operator*=(double s) {
    for (double& v : values_) v *= s;
    return *this;
  }
  // this += s * other
  void axpy(double s, const GradientVector& other) {
    require_same_size(other);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += s * other.values_[i];
  }

  bool is_zero() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return v == 0.0; });
  }
  double norm() const {
    double s = 0.0;
    for (double v : values_) s += v * v;
    return std::sqrt(s);
  }
  double max_abs() const {
    double m = 0.0;
    for (double v : values_) m = std::max(m, std::abs(v));
    return m;
  }

  friend bool operator==(const GradientVector&, const GradientVector&) = default;

 private:
  void require_same_size(const GradientVector& other) const {
    if (other.values_.size() != values_.size())
      throw DomainError("gradient: dimension mismatch");
  }

  std::vector<double> values_;
};

struct TokenSequence {
  int question_id = 0;
  std::vector<int> tokens;

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

struct Rollout {
  TokenSequence sequence;
  std::vector<double> gen_logprobs;  // untempered log pi_old per token, nats
  int reward = 0;
};

class PolicyParams {
 public:
  PolicyParams() = default;
  explicit PolicyParams(PolicyShape shape) : shape_(shape) {
    shape_.validate();
    logits_.assign(shape_.parameter_count(), 0.0);
  }
  PolicyParams(PolicyShape shape, std::vector<double> logits) : shape_(shape), logits_(std::move(logits)) {
    shape_.validate();
    if (logits_.size() != shape_.parameter_count())
      throw DomainError("policy: logit table has wrong size");
    for (double v : logits_)
      if (!std::isfinite(v)) throw DomainError("policy: non-finite logit");
  }

  static PolicyParams uniform(PolicyShape shape) { return PolicyParams(shape); }

  static PolicyParams random(PolicyShape shape, RandomStream& rng, double scale = 1.0) {
    PolicyParams p(shape);
    for (double& v : p.logits_) v = scale * rng.normal();
    return p;
  }

  const PolicyShape& shape() const { return shape_; }
  int vocab() const { return shape_.vocab; }
  int length() const { return shape_.length; }
  int bos() const { return shape_.vocab; }
  std::size_t size() const { return logits_.size(); }

  std::span<const double> logits() const { return logits_; }
  std::span<double> logits() { return logits_; }

  // Offset of the first logit of the context row (question, position, prev).
  std::size_t row_offset(int question_id, int position, int prev_token) const {
    const auto v = static_cast<std::size_t>(shape_.vocab);
    return ((static_cast<std::size_t>(question_id) * static_cast<std::size_t>(shape_.length) +
             static_cast<std::size_t>(position)) *
                (v + 1) +
            static_cast<std::size_t>(prev_token)) *
           v;
  }

  std::span<const double> row(int question_id, int position, int prev_token) const {
    return {logits_.data() + row_offset(question_id, position, prev_token),
            static_cast<std::size_t>(shape_.vocab)};
  }
  std::span<double> row(int question_id, int position, int prev_token) {
    return {logits_.data() + row_offset(question_id, position, prev_token),
            static_cast<std::size_t>(shape_.vocab)};
  }

  // Previous-token slot read at `position` given the tokens already emitted.
  int context_prev(std::span<const int> tokens, int position) const {
    if (shape_.history_order == 0 || position == 0) return bos();
    return tokens[static_cast<std::size_t>(position - 1)];
  }

  std::size_t context_offset(const TokenSequence& seq, int position) const {
    return row_offset(seq.question_id, position, context_prev(seq.tokens, position));
  }

  void require_question(int question_id) const {
    if (question_id < 0 || question_id >= shape_.num_questions)
      throw DomainError("policy: unknown question_id " + std::to_string(question_id));
  }

  void require_valid(const TokenSequence& seq) const {
    require_question(seq.question_id);
    if (static_cast<int>(seq.tokens.size()) != shape_.length)
      throw DomainError("policy: sequence length " + std::to_string(seq.tokens.size()) +
                        " != max_len " + std::to_string(shape_.length));
    for (int tok : seq.tokens)
      if (tok < 0 || tok >= shape_.vocab)
        throw DomainError("policy: token " + std::to_string(tok) + " out of range");
  }

  friend bool operator==(const PolicyParams&, const PolicyParams&) = default;

 private:
  PolicyShape shape_;
  std::vector<double> logits_;
};

namespace detail {

inline double log_sum_exp(std::span<const double> xs) {
  const double m = *std::max_element(xs.begin(), xs.end());
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

inline void softmax(std::span<const double> logits, std::span<double> out, double inv_temperature = 1.0) {
  double m = -std::numeric_limits<double>::infinity();
  for (double z : logits) m = std::max(m, z * inv_temperature);
  double s = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    out[j] = std::exp(logits[j] * inv_temperature - m);
    s += out[j];
  }
  for (double& p : out) p /= s;
}

inline double entropy_of_row(std::span<const double> logits) {
  const double lse = log_sum_exp(logits);
  double h = 0.0;
  for (double z : logits) {
    const double logp = z - lse;
    h -= std::exp(logp) * logp;
  }
  return h;
}

}  // namespace detail

// Log-probability of `token` under the context row.
inline double row_log_prob(std::span<const double> row, int token) {
  return row[static_cast<std::size_t>(token)] - detail::log_sum_exp(row);
}

inline std::vector<double> log_prob(const PolicyParams& params, const TokenSequence& seq) {
  params.require_valid(seq);
  std::vector<double> out(seq.tokens.size());
  for (int t = 0; t < params.length(); ++t) {
    const auto r = params.row(seq.question_id, t, params.context_prev(seq.tokens, t));
    out[static_cast<std::size_t>(t)] = row_log_prob(r, seq.tokens[static_cast<std::size_t>(t)]);
  }
  return out;
}

inline double sequence_log_prob(const PolicyParams& params, const TokenSequence& seq) {
  double s = 0.0;
  for (double lp : log_prob(params, seq)) s += lp;
  return s;
}

// grad += weight * d log pi(o_t | context) / d logits. Touches one context row.
inline void add_token_score_gradient(const PolicyParams& params, const TokenSequence& seq, int position,
                                     double weight, GradientVector& grad) {
  if (weight == 0.0) return;
  const std::size_t off = params.context_offset(seq, position);
  const auto row = params.logits().subspan(off, static_cast<std::size_t>(params.vocab()));
  std::vector<double> p(row.size());
  detail::softmax(row, p);
  const int token = seq.tokens[static_cast<std::size_t>(position)];
  for (std::size_t j = 0; j < row.size(); ++j) {
    const double indicator = static_cast<int>(j) == token ? 1.0 : 0.0;
    grad[off + j] += weight * (indicator - p[j]);
  }
}

inline GradientVector grad_log_prob(const PolicyParams& params, const TokenSequence& seq) {
  params.require_valid(seq);
  GradientVector g(params.size());
  for (int t = 0; t < params.length(); ++t) add_token_score_gradient(params, seq, t, 1.0, g);
  return g;
}

// Mean Shannon entropy (nats) of the visited context distributions.
inline double token_entropy(const PolicyParams& params, const TokenSequence& seq) {
  params.require_valid(seq);
  double h = 0.0;
  for (int t = 0; t < params.length(); ++t)
    h += detail::entropy_of_row(params.row(seq.question_id, t, params.context_prev(seq.tokens, t)));
  return h / params.length();
}

// grad += weight * dH(context at position)/d logits, with dH/dz_j = -p_j (log p_j + H).
inline void add_entropy_gradient(const PolicyParams& params, const TokenSequence& seq, int position,
                                 double weight, GradientVector& grad) {
  if (weight == 0.0) return;
  const std::size_t off = params.context_offset(seq, position);
  const auto row = params.logits().subspan(off, static_cast<std::size_t>(params.vocab()));
  const double lse = detail::log_sum_exp(row);
  double h = 0.0;
  for (double z : row) h -= std::exp(z - lse) * (z - lse);
  for (std::size_t j = 0; j < row.size(); ++j) {
    const double logp = row[j] - lse;
    grad[off + j] += weight * (-std::exp(logp) * (logp + h));
  }
}

// Draws from softmax(logits / temperature); records untempered log-probs.
inline Rollout sample(const PolicyParams& params, int question_id, double temperature, RandomStream& rng) {
  params.require_question(question_id);
  if (!(temperature > 0.0)) throw DomainError("sample: temperature must be > 0");
  Rollout out;
  out.sequence.question_id = question_id;
  out.sequence.tokens.reserve(static_cast<std::size_t>(params.length()));
  out.gen_logprobs.reserve(static_cast<std::size_t>(params.length()));
  std::vector<double> p(static_cast<std::size_t>(params.vocab()));
  for (int t = 0; t < params.length(); ++t) {
    const auto r = params.row(question_id, t, params.context_prev(out.sequence.tokens, t));
    detail::softmax(r, p, 1.0 / temperature);
    const double u = rng.uniform();
    double acc = 0.0;
    int tok = params.vocab() - 1;
    for (int j = 0; j < params.vocab(); ++j) {
      acc += p[static_cast<std::size_t>(j)];
      if (u < acc) {
        tok = j;
        break;
      }
    }
    out.sequence.tokens.push_back(tok);
    out.gen_logprobs.push_back(row_log_prob(r, tok));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
//   disco-policy 1
//   vocab V
//   length L
//   history_order H
//   num_questions Q
//   encoding binary|text
//   <payload>
//
// The binary payload is the row-major table as little-endian IEEE doubles.
// The text payload has one context row per line, values printed with %.17g.

enum class Encoding { binary, text };

inline const char* encoding_name(Encoding e) { return e == Encoding::binary ? "binary" : "text"; }

namespace detail {

inline void write_doubles(std::ostream& os, std::span<const double> values, Encoding enc, std::size_t per_line) {
  if (enc == Encoding::binary) {
    for (double v : values) {
      std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
      char bytes[8];
      for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
      os.write(bytes, 8);
    }
    return;
  }
  char buf[32];
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", values[i]);
    os << buf << ((i + 1) % per_line == 0 || i + 1 == values.size() ? '\n' : ' ');
  }
}

inline void read_doubles(std::istream& is, std::span<double> out, Encoding enc) {
  if (enc == Encoding::binary) {
    for (double& v : out) {
      unsigned char bytes[8];
      if (!is.read(reinterpret_cast<char*>(bytes), 8)) throw DomainError("checkpoint: truncated payload");
      std::uint64_t bits = 0;
      for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
      v = std::bit_cast<double>(bits);
    }
    return;
  }
  for (double& v : out) {
    std::string tok;
    if (!(is >> tok)) throw DomainError("checkpoint: truncated payload");
    try {
      v = std::stod(tok);
    } catch (const std::exception&) {
      throw DomainError("checkpoint: bad number '" + tok + "'");
    }
  }
  // Consume the trailing newline so an appendix can follow.
  if (is.peek() == '\n') is.get();
}

inline long expect_field(std::istream& is, const std::string& key) {
  std::string line;
  if (!std::getline(is, line)) throw DomainError("checkpoint: missing field " + key);
  std::istringstream ls(line);
  std::string k;
  long v = 0;
  if (!(ls >> k >> v) || k != key) throw DomainError("checkpoint: expected '" + key + "', got '" + line + "'");
  return v;
}

inline Encoding read_encoding_line(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw DomainError("checkpoint: missing encoding");
  if (line == "encoding binary") return Encoding::binary;
  if (line == "encoding text") return Encoding::text;
  throw DomainError("checkpoint: bad encoding line '" + line + "'");
}

}  // namespace detail

inline constexpr int kCheckpointVersion = 1;

inline void save_policy(std::ostream& os, const PolicyParams& params, Encoding enc = Encoding::binary) {
  const auto& s = params.shape();
  os << "disco-policy " << kCheckpointVersion << '\n'
     << "vocab " << s.vocab << '\n'
     << "length " << s.length << '\n'
     << "history_order " << s.history_order << '\n'
     << "num_questions " << s.num_questions << '\n'
     << "encoding " << encoding_name(enc) << '\n';
  detail::write_doubles(os, params.logits(), enc, static_cast<std::size_t>(s.vocab));
}

inline PolicyParams load_policy(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw DomainError("checkpoint: empty input");
  if (line != "disco-policy " + std::to_string(kCheckpointVersion))
    throw DomainError("checkpoint: unsupported header '" + line + "'");
  PolicyShape s;
  s.vocab = static_cast<int>(detail::expect_field(is, "vocab"));
  s.length = static_cast<int>(detail::expect_field(is, "length"));
  s.history_order = static_cast<int>(detail::expect_field(is, "history_order"));
  s.num_questions = static_cast<int>(detail::expect_field(is, "num_questions"));
  s.validate();
  const Encoding enc = detail::read_encoding_line(is);
  std::vector<double> logits(s.parameter_count());
  detail::read_doubles(is, logits, enc);
  return PolicyParams(s, std::move(logits));
}

}  // namespace disco
