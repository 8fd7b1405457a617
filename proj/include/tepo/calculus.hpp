#pragma once

// Exact per-state gradients of a softmax policy and the central-difference
// oracle used to check them.

#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "tepo/error.hpp"
#include "tepo/policy.hpp"

namespace tepo {

using GradientVector = std::vector<double>;
using AdvantageVector = std::vector<double>;

namespace detail {

inline void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw DomainError(std::string(what) + ": length mismatch");
}

inline double expectation(const PolicyDistribution& dist, std::span<const double> values) {
  double e = 0.0;
  for (std::size_t a = 0; a < dist.size(); ++a) e += dist[a] * values[a];
  return e;
}

// p * log p with 0 log 0 = 0.
inline double plogp(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }

}  // namespace detail

// dH/dphi_i = -pi_i (log pi_i + H).
inline GradientVector entropy_gradient(const PolicyDistribution& dist) {
  const double h = entropy(dist);
  GradientVector g(dist.size());
  for (std::size_t a = 0; a < dist.size(); ++a)
    g[a] = dist[a] > 0.0 ? -dist[a] * (std::log(dist[a]) + h) : 0.0;
  return g;
}

inline GradientVector entropy_gradient(const LogitTable& table, const Context& ctx) {
  return entropy_gradient(softmax_distribution(table, ctx));
}

// The same expression without the leading minus. Kept only so the gradient
// check can show it disagrees with finite differences.
inline GradientVector entropy_gradient_unnegated(const PolicyDistribution& dist) {
  auto g = entropy_gradient(dist);
  for (auto& v : g) v = -v;
  return g;
}

// dJ/dphi_i = pi_i (A_i - E_pi[A]) for J = E_pi[A].
inline GradientVector policy_gradient(const PolicyDistribution& dist, const AdvantageVector& adv) {
  detail::require_same_size(dist.size(), adv.size(), "policy_gradient");
  const double mean = detail::expectation(dist, adv);
  GradientVector g(dist.size());
  for (std::size_t a = 0; a < dist.size(); ++a) g[a] = dist[a] * (adv[a] - mean);
  return g;
}

inline GradientVector policy_gradient(const LogitTable& table, const Context& ctx,
                                      const AdvantageVector& adv) {
  return policy_gradient(softmax_distribution(table, ctx), adv);
}

// <grad H, grad J> as the literal dot product of the two gradient vectors.
inline double grad_inner_product(const PolicyDistribution& dist, const AdvantageVector& adv) {
  const auto gh = entropy_gradient(dist);
  const auto gj = policy_gradient(dist, adv);
  return std::inner_product(gh.begin(), gh.end(), gj.begin(), 0.0);
}

inline double grad_inner_product(const LogitTable& table, const Context& ctx,
                                 const AdvantageVector& adv) {
  return grad_inner_product(softmax_distribution(table, ctx), adv);
}

// Closed form -sum_i pi_i^2 (log pi_i + H)(A_i - E_pi[A]). Must equal the
// dot product above to rounding.
inline double grad_inner_product_closed_form(const PolicyDistribution& dist,
                                             const AdvantageVector& adv) {
  detail::require_same_size(dist.size(), adv.size(), "grad_inner_product");
  const double h = entropy(dist);
  const double mean = detail::expectation(dist, adv);
  double sum = 0.0;
  for (std::size_t a = 0; a < dist.size(); ++a) {
    if (dist[a] <= 0.0) continue;
    sum += dist[a] * dist[a] * (std::log(dist[a]) + h) * (adv[a] - mean);
  }
  return -sum;
}

// First-order prediction of the entropy change after phi += step * grad J.
inline double predicted_entropy_delta(const PolicyDistribution& dist, const AdvantageVector& adv,
                                      double step) {
  if (!(step > 0.0)) throw DomainError("step must be positive");
  return step * grad_inner_product(dist, adv);
}

inline double predicted_entropy_delta(const LogitTable& table, const Context& ctx,
                                      const AdvantageVector& adv, double step) {
  return predicted_entropy_delta(softmax_distribution(table, ctx), adv, step);
}

// Entropy after one exact ascent step phi += step * grad J, minus the
// entropy before it.
inline double measured_entropy_delta(std::span<const double> logits, const AdvantageVector& adv,
                                     double step) {
  const auto before = softmax(logits);
  const auto g = policy_gradient(before, adv);
  std::vector<double> moved(logits.begin(), logits.end());
  for (std::size_t a = 0; a < moved.size(); ++a) moved[a] += step * g[a];
  return entropy(softmax(moved)) - entropy(before);
}

inline constexpr double kDefaultFiniteDifferenceStep = 1e-5;

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h.
template <class F>
GradientVector finite_difference_gradient(F&& f, std::span<const double> x,
                                          double h = kDefaultFiniteDifferenceStep) {
  if (!(h > 0.0)) throw DomainError("finite-difference step must be positive");
  std::vector<double> probe(x.begin(), x.end());
  GradientVector g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double up = f(std::span<const double>(probe));
    probe[i] = saved - h;
    const double down = f(std::span<const double>(probe));
    probe[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw DomainError("finite-difference probe produced a non-finite value at coordinate " +
                        std::to_string(i));
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// max_i |a_i - b_i| / max(max_i |b_i|, floor): the scale-aware error used by
// every gradient check.
inline double relative_error(std::span<const double> a, std::span<const double> b,
                             double floor = 1e-9) {
  detail::require_same_size(a.size(), b.size(), "relative_error");
  double diff = 0.0;
  double scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max(scale, std::abs(b[i]));
  }
  return diff / std::max(scale, floor);
}

// Passes when ||a - b||_inf <= rtol * ||b||_inf + atol.
inline bool gradients_agree(std::span<const double> a, std::span<const double> b,
                            double rtol = 1e-5, double atol = 1e-9) {
  detail::require_same_size(a.size(), b.size(), "gradients_agree");
  double diff = 0.0;
  double scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max(scale, std::abs(b[i]));
  }
  return diff <= rtol * scale + atol;
}

// Pearson correlation, used to report how the two entropy-gradient signs
// line up with the oracle.
inline double correlation(std::span<const double> a, std::span<const double> b) {
  detail::require_same_size(a.size(), b.size(), "correlation");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace tepo
