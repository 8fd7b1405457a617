#pragma once

// Clipped surrogate objectives with sequence-, token- and prefix-level
// importance ratios, their analytic gradients with respect to the logit
// table, and the entropy / KL regularizers.
//
// Every loss here is an objective to maximize. LossReport::neg_loss carries
// the negation for callers that minimize.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tepo/calculus.hpp"
#include "tepo/error.hpp"
#include "tepo/policy.hpp"

namespace tepo {

using ParamGradient = std::map<Context, std::vector<double>>;

inline void accumulate(ParamGradient& into, const ParamGradient& from, double scale = 1.0) {
  for (const auto& [ctx, g] : from) {
    auto [it, inserted] = into.try_emplace(ctx, g.size(), 0.0);
    for (std::size_t a = 0; a < g.size(); ++a) it->second[a] += scale * g[a];
  }
}

inline double l2_norm(const ParamGradient& grad) {
  double s = 0.0;
  for (const auto& [ctx, g] : grad)
    for (double v : g) s += v * v;
  return std::sqrt(s);
}

// phi += step * grad for every touched context.
inline void apply_ascent(LogitTable& table, const ParamGradient& grad, double step) {
  for (const auto& [ctx, g] : grad) {
    auto& row = table.at(ctx);
    for (std::size_t a = 0; a < g.size(); ++a) row[a] += step * g[a];
  }
}

struct SequenceRollout {
  std::vector<Context> contexts;
  std::vector<Token> tokens;
  std::vector<double> old_logprobs;
  std::vector<double> new_logprobs;
  std::vector<int> mask;
  std::vector<double> advantage;

  std::size_t length() const noexcept { return tokens.size(); }

  int valid_tokens() const {
    int n = 0;
    for (int m : mask) n += m ? 1 : 0;
    return n;
  }
};

struct RolloutBatch {
  std::vector<SequenceRollout> sequences;

  int total_mask() const {
    int n = 0;
    for (const auto& s : sequences) n += s.valid_tokens();
    return n;
  }

  void validate() const {
    if (sequences.empty()) throw DomainError("empty rollout batch");
    for (std::size_t i = 0; i < sequences.size(); ++i) {
      const auto& s = sequences[i];
      const auto n = s.length();
      if (s.contexts.size() != n || s.old_logprobs.size() != n || s.new_logprobs.size() != n ||
          s.mask.size() != n || s.advantage.size() != n)
        throw DomainError("sequence " + std::to_string(i) + " has misaligned per-token fields");
      for (std::size_t t = 0; t < n; ++t) {
        if (!s.mask[t]) continue;
        if (!std::isfinite(s.old_logprobs[t]) || !std::isfinite(s.new_logprobs[t]))
          throw DomainError("non-finite log-probability in sequence " + std::to_string(i));
        if (!std::isfinite(s.advantage[t]))
          throw DomainError("non-finite advantage in sequence " + std::to_string(i));
      }
    }
    if (total_mask() < 1) throw DomainError("rollout batch has no masked-in tokens");
  }
};

// Re-evaluates every new log-probability under the given policy.
inline void refresh_new_logprobs(RolloutBatch& batch, const LogitTable& table) {
  for (auto& s : batch.sequences)
    for (std::size_t t = 0; t < s.length(); ++t)
      s.new_logprobs[t] = log_softmax(table.logits(s.contexts[t]))[s.tokens[t]];
}

struct ClipConfig {
  double eps_low = 0.2;
  double eps_high = 0.2;

  void validate() const {
    if (!(eps_low > 0.0)) throw DomainError("eps_low must be positive");
    if (!(eps_high >= eps_low)) throw DomainError("eps_high must be >= eps_low");
  }

  double lower() const noexcept { return 1.0 - eps_low; }
  double upper() const noexcept { return 1.0 + eps_high; }
};

enum class ISVariant { sequence_geomean, token_level, prefix_geomean, reinforce_stopgrad };

inline std::string to_string(ISVariant v) {
  switch (v) {
    case ISVariant::sequence_geomean: return "sequence_geomean";
    case ISVariant::token_level: return "token_level";
    case ISVariant::prefix_geomean: return "prefix_geomean";
    case ISVariant::reinforce_stopgrad: return "reinforce_stopgrad";
  }
  return "unknown";
}

struct LossReport {
  double loss = 0.0;
  double neg_loss = 0.0;
  ParamGradient param_gradient;
  double clip_ratio = 0.0;
  double mean_is = 0.0;
  std::map<std::string, double> diagnostics;
};

// exp(mean over masked tokens of (new - old)).
inline double sequence_is(std::span<const double> new_lp, std::span<const double> old_lp,
                          std::span<const int> mask) {
  if (new_lp.size() != old_lp.size() || new_lp.size() != mask.size())
    throw DomainError("sequence_is: misaligned inputs");
  double sum = 0.0;
  int n = 0;
  for (std::size_t t = 0; t < mask.size(); ++t) {
    if (!mask[t]) continue;
    sum += new_lp[t] - old_lp[t];
    ++n;
  }
  if (n == 0) throw DomainError("sequence_is: sequence has no masked-in tokens");
  return std::exp(sum / n);
}

// Running geometric mean of token ratios over the masked-in prefix. Masked
// positions carry the value of the last valid prefix (1 before any).
inline std::vector<double> prefix_is(std::span<const double> new_lp, std::span<const double> old_lp,
                                     std::span<const int> mask) {
  if (new_lp.size() != old_lp.size() || new_lp.size() != mask.size())
    throw DomainError("prefix_is: misaligned inputs");
  std::vector<double> out(mask.size(), 1.0);
  double sum = 0.0;
  int n = 0;
  for (std::size_t t = 0; t < mask.size(); ++t) {
    if (mask[t]) {
      sum += new_lp[t] - old_lp[t];
      ++n;
    }
    out[t] = n ? std::exp(sum / n) : 1.0;
  }
  if (n == 0) throw DomainError("prefix_is: sequence has no masked-in tokens");
  return out;
}

namespace detail {

// Chains dL/d(log pi(token | ctx)) into logit coordinates:
// d log pi(a_t) / d phi(ctx, a) = 1[a == a_t] - pi(a).
inline ParamGradient chain_through_softmax(const LogitTable& table, const RolloutBatch& batch,
                                           const std::vector<std::vector<double>>& dlogp) {
  ParamGradient grad;
  for (std::size_t i = 0; i < batch.sequences.size(); ++i) {
    const auto& s = batch.sequences[i];
    for (std::size_t t = 0; t < s.length(); ++t) {
      const double g = dlogp[i][t];
      if (g == 0.0) continue;
      const auto dist = softmax_distribution(table, s.contexts[t]);
      auto [it, inserted] = grad.try_emplace(s.contexts[t], dist.size(), 0.0);
      auto& row = it->second;
      for (std::size_t a = 0; a < dist.size(); ++a) row[a] -= g * dist[a];
      row[s.tokens[t]] += g;
    }
  }
  return grad;
}

// Importance ratio per token for the clipped variants.
inline std::vector<std::vector<double>> token_ratios(const RolloutBatch& batch, ISVariant variant) {
  std::vector<std::vector<double>> rho;
  rho.reserve(batch.sequences.size());
  for (const auto& s : batch.sequences) {
    switch (variant) {
      case ISVariant::sequence_geomean:
        rho.emplace_back(s.length(), sequence_is(s.new_logprobs, s.old_logprobs, s.mask));
        break;
      case ISVariant::prefix_geomean:
        rho.push_back(prefix_is(s.new_logprobs, s.old_logprobs, s.mask));
        break;
      case ISVariant::token_level:
      case ISVariant::reinforce_stopgrad: {
        std::vector<double> r(s.length());
        for (std::size_t t = 0; t < s.length(); ++t) r[t] = std::exp(s.new_logprobs[t] - s.old_logprobs[t]);
        rho.push_back(std::move(r));
        break;
      }
    }
  }
  return rho;
}

inline void finish(LossReport& report) {
  report.neg_loss = -report.loss;
  report.diagnostics["clip_ratio"] = report.clip_ratio;
  report.diagnostics["mean_is"] = report.mean_is;
}

}  // namespace detail

// (1/total_mask) sum_i sum_t mask * c_i * A_it * new_lp_it with c_i the
// sequence ratio frozen as a constant: it scales the value and the gradient
// but is never differentiated.
inline LossReport reinforce_stopgrad_loss(const LogitTable& table, const RolloutBatch& batch) {
  batch.validate();
  const double total = batch.total_mask();
  LossReport report;
  std::vector<std::vector<double>> dlogp(batch.sequences.size());
  double is_sum = 0.0;
  for (std::size_t i = 0; i < batch.sequences.size(); ++i) {
    const auto& s = batch.sequences[i];
    const double c = sequence_is(s.new_logprobs, s.old_logprobs, s.mask);
    dlogp[i].assign(s.length(), 0.0);
    for (std::size_t t = 0; t < s.length(); ++t) {
      if (!s.mask[t]) continue;
      report.loss += c * s.advantage[t] * s.new_logprobs[t] / total;
      dlogp[i][t] = c * s.advantage[t] / total;
      is_sum += c;
    }
  }
  report.mean_is = is_sum / total;
  report.param_gradient = detail::chain_through_softmax(table, batch, dlogp);
  detail::finish(report);
  return report;
}

// Token-mean clipped surrogate
//   (1/total_mask) sum mask * min(rho * A, clip(rho, 1 - eps_low, 1 + eps_high) * A)
// with rho chosen by the variant. A token is on the clipped branch when
// A > 0 and rho > 1 + eps_high, or A < 0 and rho < 1 - eps_low; those tokens
// contribute a constant and no gradient.
inline LossReport clipped_token_mean_loss(const LogitTable& table, const RolloutBatch& batch,
                                          ISVariant variant, const ClipConfig& clip) {
  if (variant == ISVariant::reinforce_stopgrad) return reinforce_stopgrad_loss(table, batch);
  batch.validate();
  clip.validate();
  const double total = batch.total_mask();
  const auto rho = detail::token_ratios(batch, variant);

  LossReport report;
  std::vector<std::vector<double>> dlogp(batch.sequences.size());
  int clipped = 0;
  double is_sum = 0.0;

  for (std::size_t i = 0; i < batch.sequences.size(); ++i) {
    const auto& s = batch.sequences[i];
    const auto n = s.length();
    dlogp[i].assign(n, 0.0);
    // dL/drho_t for unclipped masked tokens; zero otherwise.
    std::vector<double> drho(n, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
      if (!s.mask[t]) continue;
      const double r = rho[i][t];
      const double adv = s.advantage[t];
      is_sum += r;
      const bool on_clipped_branch =
          (adv > 0.0 && r > clip.upper()) || (adv < 0.0 && r < clip.lower());
      if (on_clipped_branch) {
        ++clipped;
        report.loss += std::clamp(r, clip.lower(), clip.upper()) * adv / total;
      } else {
        report.loss += r * adv / total;
        drho[t] = adv / total;
      }
    }

    switch (variant) {
      case ISVariant::token_level:
        for (std::size_t t = 0; t < n; ++t) dlogp[i][t] = drho[t] * rho[i][t];
        break;
      case ISVariant::sequence_geomean: {
        // Every token shares IS_i; dIS_i / dnew_t = IS_i * mask_t / |y_i|.
        double d_is = 0.0;
        for (double d : drho) d_is += d;
        const double len = s.valid_tokens();
        for (std::size_t t = 0; t < n; ++t)
          if (s.mask[t]) dlogp[i][t] = d_is * rho[i][t] / len;
        break;
      }
      case ISVariant::prefix_geomean: {
        // rho_t depends on every masked token j <= t with weight rho_t / n_t.
        std::vector<double> coeff(n, 0.0);
        int count = 0;
        for (std::size_t t = 0; t < n; ++t) {
          if (!s.mask[t]) continue;
          ++count;
          coeff[t] = drho[t] * rho[i][t] / count;
        }
        double suffix = 0.0;
        for (std::size_t t = n; t-- > 0;) {
          suffix += coeff[t];
          if (s.mask[t]) dlogp[i][t] = suffix;
        }
        break;
      }
      case ISVariant::reinforce_stopgrad:
        break;
    }
  }

  report.clip_ratio = clipped / total;
  report.mean_is = is_sum / total;
  report.param_gradient = detail::chain_through_softmax(table, batch, dlogp);
  detail::finish(report);
  return report;
}

// Backward pass of the unclipped sequence-ratio loss
//   L = (1/total_mask) sum_{i,t} IS_i * A_it * mask_it
// written step by step: dL/dIS_i, then dL/d log pi for each token, returned
// per sequence and per token.
inline std::vector<std::vector<double>> tepo_logprob_gradient(const RolloutBatch& batch) {
  batch.validate();
  const double total_mask = batch.total_mask();
  std::vector<std::vector<double>> out;
  for (const auto& s : batch.sequences) {
    const double is = sequence_is(s.new_logprobs, s.old_logprobs, s.mask);
    double d_is = 0.0;
    for (std::size_t t = 0; t < s.length(); ++t) d_is += s.advantage[t] * s.mask[t] / total_mask;
    const double seq_len = s.valid_tokens();
    std::vector<double> g(s.length());
    for (std::size_t t = 0; t < s.length(); ++t) g[t] = d_is * is * s.mask[t] / seq_len;
    out.push_back(std::move(g));
  }
  return out;
}

// The same gradient carried into logit-table coordinates.
inline ParamGradient tepo_backward(const LogitTable& table, const RolloutBatch& batch) {
  return detail::chain_through_softmax(table, batch, tepo_logprob_gradient(batch));
}

struct RegularizerTerm {
  double value = 0.0;
  ParamGradient gradient;
};

struct RegularizerConfig {
  double entropy_coef = 0.0;
  double kl_coef = 0.0;
  std::optional<LogitTable> reference;

  void validate() const {
    if (!(entropy_coef >= 0.0)) throw DomainError("entropy_coef must be >= 0");
    if (!(kl_coef >= 0.0)) throw DomainError("kl_coef must be >= 0");
    if (kl_coef > 0.0 && !reference) throw DomainError("kl_coef > 0 requires a reference policy");
  }
};

// coef * mean over contexts of H(pi(.|ctx)) and its gradient.
inline RegularizerTerm entropy_bonus_term(const LogitTable& table, std::span<const Context> contexts,
                                          double coef) {
  if (!(coef >= 0.0)) throw DomainError("entropy coefficient must be >= 0");
  RegularizerTerm term;
  if (coef == 0.0 || contexts.empty()) return term;
  const double w = coef / static_cast<double>(contexts.size());
  for (const auto& ctx : contexts) {
    const auto dist = softmax_distribution(table, ctx);
    term.value += w * entropy(dist);
    const auto g = entropy_gradient(dist);
    auto [it, inserted] = term.gradient.try_emplace(ctx, g.size(), 0.0);
    for (std::size_t a = 0; a < g.size(); ++a) it->second[a] += w * g[a];
  }
  return term;
}

inline double kl_divergence(const PolicyDistribution& p, const PolicyDistribution& q) {
  detail::require_same_size(p.size(), q.size(), "kl_divergence");
  double kl = 0.0;
  for (std::size_t a = 0; a < p.size(); ++a) {
    if (p[a] <= 0.0) continue;
    if (q[a] <= 0.0) throw DomainError("reference assigns zero probability where the policy does not");
    kl += p[a] * (std::log(p[a]) - std::log(q[a]));
  }
  return std::max(kl, 0.0);
}

// coef * mean over contexts of KL(pi || pi_ref). The gradient with respect to
// phi(ctx, a) is pi_a (log pi_a - log ref_a - KL).
inline RegularizerTerm kl_penalty_term(const LogitTable& table, const LogitTable& reference,
                                       std::span<const Context> contexts, double coef) {
  if (!(coef >= 0.0)) throw DomainError("KL coefficient must be >= 0");
  if (table.vocab_size() != reference.vocab_size())
    throw DomainError("reference policy has a different vocabulary");
  RegularizerTerm term;
  if (coef == 0.0 || contexts.empty()) return term;
  const double w = coef / static_cast<double>(contexts.size());
  for (const auto& ctx : contexts) {
    const auto lp = log_softmax(table.logits(ctx));
    const auto lq = log_softmax(reference.logits(ctx));
    const auto p = softmax(table.logits(ctx));
    double kl = 0.0;
    for (std::size_t a = 0; a < lp.size(); ++a) kl += p[a] * (lp[a] - lq[a]);
    term.value += w * kl;
    auto [it, inserted] = term.gradient.try_emplace(ctx, lp.size(), 0.0);
    for (std::size_t a = 0; a < lp.size(); ++a) it->second[a] += w * p[a] * (lp[a] - lq[a] - kl);
  }
  return term;
}

// Exponential tilting pi'(a) ∝ pi(a) exp(A(a) / eta).
inline PolicyDistribution kl_regularized_update(const PolicyDistribution& dist,
                                                const AdvantageVector& adv, double eta) {
  if (!(eta > 0.0)) throw DomainError("eta must be positive");
  detail::require_same_size(dist.size(), adv.size(), "kl_regularized_update");
  std::vector<double> logits(dist.size());
  for (std::size_t a = 0; a < dist.size(); ++a) {
    if (!(dist[a] > 0.0)) throw DomainError("kl_regularized_update needs a strictly positive policy");
    logits[a] = std::log(dist[a]) + adv[a] / eta;
  }
  return softmax(logits);
}

}  // namespace tepo
