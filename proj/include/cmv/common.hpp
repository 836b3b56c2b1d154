#pragma once

// Shared plumbing for the conditional mean/variance test library: error
// taxonomy, seed derivation, and a few scalar statistics helpers used across
// modules.

#include <cmath>
#include <cstdint>
#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

namespace cmv {

// Caller mistakes: bad flags, invalid option combinations, out-of-range knobs.
// CLI maps these to exit code 2.
class config_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Properties of the data or model discovered while running: non-finite input,
// failed fits, singular matrices, exploding simulations. Exit code 3.
class model_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------- seed derivation ----------
// splitmix64: cheap, well-mixed 64-bit hash used to derive independent
// stream seeds from (master seed, tag...) tuples. Derived seeds depend only
// on the inputs, never on execution order, which is what makes the Monte
// Carlo harness reproducible across worker counts.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t h) { return splitmix64(h); }

template <class... Rest>
std::uint64_t derive_seed(std::uint64_t h, std::uint64_t next, Rest... rest) {
  return derive_seed(splitmix64(h ^ splitmix64(next)), rest...);
}

// FNV-1a for folding string tags (experiment names) into seed derivations.
inline std::uint64_t hash_tag(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// ---------- scalar statistics ----------

inline double sample_mean(const std::vector<double>& x) {
  if (x.empty()) throw model_error("sample_mean: empty input");
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

// Unbiased (n-1 denominator) sample variance; falls back to 1.0 for a single
// point so recursion initializers stay usable on degenerate prefixes.
inline double sample_variance(const std::vector<double>& x) {
  if (x.size() < 2) return 1.0;
  const double m = sample_mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

inline double sample_sd(const std::vector<double>& x) {
  return std::sqrt(sample_variance(x));
}

// Order-statistic quantile: the ceil(q*n)-th smallest value (1-based),
// clamped to [1, n]. Matches the node placement used by the numeric engine.
inline double order_statistic_quantile(std::vector<double> sorted_x, double q) {
  if (sorted_x.empty()) throw model_error("quantile of empty sample");
  const auto n = static_cast<long>(sorted_x.size());
  long k = static_cast<long>(std::ceil(q * static_cast<double>(n)));
  k = std::max<long>(1, std::min<long>(n, k));
  return sorted_x[static_cast<std::size_t>(k - 1)];
}

// ---------- chi-square upper tails ----------
// Closed forms for small integer degrees of freedom; df=4 serves the Fisher
// combination, df 1..3 serve as oracles for the quadratic-form integrator.

inline double chi_square_tail(int df, double q) {
  if (df < 1) throw config_error("chi_square_tail: df must be >= 1");
  if (q <= 0.0) return 1.0;
  // Recursion P(chi2_{k+2} > q) = P(chi2_k > q) + (q/2)^{k/2} e^{-q/2} / Gamma(k/2+1),
  // seeded at df 1 (erfc) or df 2 (exponential).
  double p, term;
  int k;
  if (df % 2 == 1) {
    p = std::erfc(std::sqrt(q / 2.0));
    term = std::sqrt(2.0 * q / M_PI) * std::exp(-q / 2.0);
    k = 1;
  } else {
    p = std::exp(-q / 2.0);
    term = (q / 2.0) * std::exp(-q / 2.0);
    k = 2;
  }
  while (k < df) {
    p += term;
    term *= (q / 2.0) / (static_cast<double>(k) / 2.0 + 1.0);
    k += 2;
  }
  return std::min(1.0, std::max(0.0, p));
}

}  // namespace cmv
