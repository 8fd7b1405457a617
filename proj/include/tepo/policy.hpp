#pragma once

// Tabular softmax policies over a finite token vocabulary.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tepo/error.hpp"

namespace tepo {

using Token = int;

struct Vocab {
  int size = 2;

  explicit Vocab(int n) : size(n) {
    if (n < 2) throw DomainError("vocabulary size must be >= 2, got " + std::to_string(n));
  }
};

// A generation state: the prompt plus every answer token emitted so far.
// The position is the prefix length.
struct Context {
  int prompt_id = 0;
  std::vector<Token> prefix;

  int position() const noexcept { return static_cast<int>(prefix.size()); }

  Context child(Token next) const {
    Context c{prompt_id, prefix};
    c.prefix.push_back(next);
    return c;
  }

  // "prompt_id/position/t0-t1-..." (empty token list for the root context).
  std::string key() const {
    std::string out = std::to_string(prompt_id) + "/" + std::to_string(position()) + "/";
    for (std::size_t i = 0; i < prefix.size(); ++i) {
      if (i) out += '-';
      out += std::to_string(prefix[i]);
    }
    return out;
  }

  static Context parse(const std::string& key) {
    const auto first = key.find('/');
    const auto second = first == std::string::npos ? first : key.find('/', first + 1);
    if (second == std::string::npos) throw DomainError("malformed context key '" + key + "'");
    Context c;
    std::size_t position = 0;
    try {
      c.prompt_id = std::stoi(key.substr(0, first));
      position = std::stoul(key.substr(first + 1, second - first - 1));
      std::stringstream tokens(key.substr(second + 1));
      std::string item;
      while (std::getline(tokens, item, '-')) c.prefix.push_back(std::stoi(item));
    } catch (const std::logic_error&) {
      throw DomainError("malformed context key '" + key + "'");
    }
    if (c.prefix.size() != position)
      throw DomainError("context key '" + key + "': position does not match prefix length");
    return c;
  }

  auto operator<=>(const Context&) const = default;
  bool operator==(const Context&) const = default;
};

// Normalized action probabilities for one context.
struct PolicyDistribution {
  std::vector<double> probs;

  std::size_t size() const noexcept { return probs.size(); }
  double operator[](std::size_t a) const { return probs[a]; }
};

// Max-shifted softmax of a logit vector.
inline PolicyDistribution softmax(std::span<const double> logits) {
  PolicyDistribution dist;
  dist.probs.resize(logits.size());
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t a = 0; a < logits.size(); ++a) {
    dist.probs[a] = std::exp(logits[a] - m);
    z += dist.probs[a];
  }
  for (auto& p : dist.probs) p /= z;
  return dist;
}

// log softmax, computed without forming the probabilities first.
inline std::vector<double> log_softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - m);
  const double log_z = m + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t a = 0; a < logits.size(); ++a) out[a] = logits[a] - log_z;
  return out;
}

inline double entropy(const PolicyDistribution& dist) {
  double h = 0.0;
  for (double p : dist.probs)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

// The policy parameters: one logit vector per context. Contexts that were
// never written read as all zeros, i.e. the uniform policy.
class LogitTable {
 public:
  using Storage = std::map<Context, std::vector<double>>;

  explicit LogitTable(Vocab vocab) : vocab_(vocab) {}

  int vocab_size() const noexcept { return vocab_.size; }

  void validate(const Context& ctx) const {
    if (ctx.prompt_id < 0) throw DomainError("negative prompt id in context " + ctx.key());
    for (Token t : ctx.prefix)
      if (t < 0 || t >= vocab_.size)
        throw DomainError("context " + ctx.key() + " has a token outside the vocabulary");
  }

  std::vector<double> logits(const Context& ctx) const {
    const auto it = scores_.find(ctx);
    if (it == scores_.end()) return std::vector<double>(vocab_.size, 0.0);
    return it->second;
  }

  // Mutable access; materializes the zero vector on first use.
  std::vector<double>& at(const Context& ctx) {
    validate(ctx);
    auto [it, inserted] = scores_.try_emplace(ctx);
    if (inserted) it->second.assign(vocab_.size, 0.0);
    return it->second;
  }

  void set(const Context& ctx, std::vector<double> values) {
    if (static_cast<int>(values.size()) != vocab_.size)
      throw DomainError("logit vector for " + ctx.key() + " has wrong length");
    for (double v : values)
      if (!std::isfinite(v)) throw DomainError("non-finite logit for context " + ctx.key());
    at(ctx) = std::move(values);
  }

  const Storage& entries() const noexcept { return scores_; }

  bool operator==(const LogitTable& other) const {
    return vocab_.size == other.vocab_.size && scores_ == other.scores_;
  }

 private:
  Vocab vocab_;
  Storage scores_;
};

inline PolicyDistribution softmax_distribution(const LogitTable& table, const Context& ctx) {
  table.validate(ctx);
  const auto logits = table.logits(ctx);
  for (double v : logits)
    if (!std::isfinite(v)) throw DomainError("non-finite logit for context " + ctx.key());
  return softmax(logits);
}

struct SampledSequence {
  std::vector<Token> tokens;
  std::vector<double> logprobs;
};

// Inverse-CDF draw from a distribution using one uniform variate.
inline Token draw_token(const PolicyDistribution& dist, std::mt19937_64& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double cumulative = 0.0;
  for (std::size_t a = 0; a < dist.size(); ++a) {
    cumulative += dist[a];
    if (u < cumulative) return static_cast<Token>(a);
  }
  // Rounding left u above the final partial sum: take the last action with
  // nonzero mass.
  for (std::size_t a = dist.size(); a-- > 0;)
    if (dist[a] > 0.0) return static_cast<Token>(a);
  return 0;
}

// Autoregressive sampling at temperature 1.
inline SampledSequence sample_sequence(const LogitTable& table, int prompt_id, int length,
                                       std::mt19937_64& rng) {
  if (length < 1) throw DomainError("sample length must be >= 1");
  SampledSequence out;
  Context ctx{prompt_id, {}};
  for (int t = 0; t < length; ++t) {
    const auto logits = table.logits(ctx);
    const auto dist = softmax(logits);
    const Token tok = draw_token(dist, rng);
    out.tokens.push_back(tok);
    out.logprobs.push_back(log_softmax(logits)[tok]);
    ctx.prefix.push_back(tok);
  }
  return out;
}

// Checkpoint format:
//   {"vocab_size": V, "contexts": {"<key>": [logits...], ...}}
// Logits are written with 17 significant digits so load(save(t)) == t.
inline std::string checkpoint_text(const LogitTable& table) {
  std::ostringstream os;
  os << "{\n  \"vocab_size\": " << table.vocab_size() << ",\n  \"contexts\": {";
  bool first = true;
  for (const auto& [ctx, values] : table.entries()) {
    os << (first ? "\n" : ",\n") << "    \"" << ctx.key() << "\": [";
    for (std::size_t a = 0; a < values.size(); ++a) {
      // "-0" would parse back as the integer 0.
      const double v = values[a];
      os << (a ? ", " : "") << (v == 0.0 && std::signbit(v) ? "-0.0" : format_real(v));
    }
    os << "]";
    first = false;
  }
  os << (first ? "}\n}\n" : "\n  }\n}\n");
  return os.str();
}

inline LogitTable parse_checkpoint(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DomainError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("vocab_size") || !doc.contains("contexts"))
    throw DomainError("checkpoint must contain vocab_size and contexts");
  LogitTable table(Vocab(doc.at("vocab_size").get<int>()));
  for (const auto& [key, values] : doc.at("contexts").items())
    table.set(Context::parse(key), values.get<std::vector<double>>());
  return table;
}

inline void save_checkpoint(const LogitTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out << checkpoint_text(table);
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

inline LogitTable load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str());
}

}  // namespace tepo
