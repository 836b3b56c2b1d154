#pragma once

// Martingale transform of the cumulative residual processes: estimates the
// score-ratio function g_k nonparametrically, builds the per-jump inverses of
// the trailing information matrices A_k, applies the transform, and maps the
// transformed statistics to asymptotic p-values through the Brownian-motion
// Cramer-von Mises law.
//
// Discrete conventions that make the algebra exact (not just asymptotic):
//  - A_k used at a jump point is the atom-INCLUSIVE trailing sum
//    (1/n) sum_{lag_i >= lag_j} g g' W^2; with that choice the transform
//    annihilates score-direction step functions identically.
//  - Points beyond the x0 quantile never enter; below x0, exclusion by the
//    condition cap is a suffix (first failing jump truncates the rest).

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "cmv/common.hpp"
#include "cmv/quadform.hpp"
#include "cmv/residual.hpp"

namespace cmv {

// ---------- nonparametric score-ratio estimate ----------
// ghat_k(t) = [sum_i dGamma_i Kh(lag_i - t)] / [sum_i dK_i Kh(lag_i - t)]
// with dGamma_i = -dW_i/n (the Gamma increment) and dK_i = W_i^2/n, using a
// Gaussian kernel with bandwidth c * sd(lag) * n^{-1/5}.

struct ScoreEstimate {
  int n = 0;
  int d = 0;
  double bandwidth = 0.0;
  std::vector<double> g1, g2;  // n x d row-major, evaluated at each lag_i

  double g_at(int k, int i, int j) const {
    const std::vector<double>& g = k == 1 ? g1 : g2;
    return g[static_cast<std::size_t>(i) * d + j];
  }
};

inline ScoreEstimate estimate_g(const MarkSeries& ms, double bandwidth_c = 1.0,
                                double denom_floor = 1e-12) {
  if (!(bandwidth_c > 0.0))
    throw config_error("estimate_g: bandwidth factor must be positive");
  const double sd = sample_sd(ms.lag);
  if (!(sd > 0.0))
    throw model_error("estimate_g: lag values are constant");
  ScoreEstimate se;
  se.n = ms.n;
  se.d = ms.d;
  se.bandwidth =
      bandwidth_c * sd * std::pow(static_cast<double>(ms.n), -0.2);
  se.g1.assign(static_cast<std::size_t>(ms.n) * ms.d, 0.0);
  se.g2.assign(static_cast<std::size_t>(ms.n) * ms.d, 0.0);

  const double h = se.bandwidth;
  const double norm = 1.0 / (h * std::sqrt(2.0 * M_PI));
  const double nn = static_cast<double>(ms.n);
  std::vector<double> num(static_cast<std::size_t>(ms.d));
  for (int t = 0; t < ms.n; ++t) {
    const double target = ms.lag[static_cast<std::size_t>(t)];
    for (int k = 1; k <= 2; ++k) {
      std::fill(num.begin(), num.end(), 0.0);
      double den = 0.0;
      for (int i = 0; i < ms.n; ++i) {
        const double u = (ms.lag[static_cast<std::size_t>(i)] - target) / h;
        const double kh = norm * std::exp(-0.5 * u * u);
        const double w = k == 1 ? ms.w1[static_cast<std::size_t>(i)]
                                : ms.w2[static_cast<std::size_t>(i)];
        den += (w * w / nn) * kh;
        for (int j = 0; j < ms.d; ++j) {
          const double dw = k == 1 ? ms.dw1_at(i, j) : ms.dw2_at(i, j);
          num[static_cast<std::size_t>(j)] += (-dw / nn) * kh;
        }
      }
      den = std::max(den, denom_floor);
      std::vector<double>& g = k == 1 ? se.g1 : se.g2;
      for (int j = 0; j < ms.d; ++j)
        g[static_cast<std::size_t>(t) * ms.d + j] =
            num[static_cast<std::size_t>(j)] / den;
    }
  }
  return se;
}

// ---------- transform state ----------

struct TransformState {
  int n = 0;
  int d = 0;
  double x0 = 0.0;         // truncation point (lag quantile)
  double cond_cap = 1e8;
  std::vector<int> order;  // indices sorted by lag ascending
  int m_x0 = 0;            // sorted positions with lag <= x0
  // Per k: how many leading sorted positions are included, and the
  // b_j = A_k(lag_j^-)^{-1} ghat_k(lag_j) rows for those positions.
  int included[2] = {0, 0};
  std::vector<double> b[2];  // included x d row-major

  int n_excluded(int k) const { return m_x0 - included[k - 1]; }
};

inline TransformState build_transform(const MarkSeries& ms,
                                      const ScoreEstimate& se,
                                      double x0_quantile = 0.95,
                                      double cond_cap = 1e8) {
  if (!(x0_quantile > 0.0) || x0_quantile > 1.0)
    throw config_error("build_transform: x0_quantile must lie in (0, 1]");
  if (se.n != ms.n || se.d != ms.d)
    throw config_error("build_transform: marks and score estimate disagree");
  TransformState ts;
  ts.n = ms.n;
  ts.d = ms.d;
  ts.cond_cap = cond_cap;
  ts.order.resize(static_cast<std::size_t>(ms.n));
  std::iota(ts.order.begin(), ts.order.end(), 0);
  std::sort(ts.order.begin(), ts.order.end(),
            [&](int a, int b) { return ms.lag[static_cast<std::size_t>(a)] <
                                       ms.lag[static_cast<std::size_t>(b)]; });
  std::vector<double> sorted_lag(static_cast<std::size_t>(ms.n));
  for (int p = 0; p < ms.n; ++p)
    sorted_lag[static_cast<std::size_t>(p)] =
        ms.lag[static_cast<std::size_t>(ts.order[static_cast<std::size_t>(p)])];
  ts.x0 = order_statistic_quantile(sorted_lag, x0_quantile);
  ts.m_x0 = static_cast<int>(
      std::upper_bound(sorted_lag.begin(), sorted_lag.end(), ts.x0) -
      sorted_lag.begin());

  const double nn = static_cast<double>(ms.n);
  for (int k = 1; k <= 2; ++k) {
    const std::vector<double>& w = k == 1 ? ms.w1 : ms.w2;
    // Parameters that act on one moment only have an identically zero score
    // column in the other component (the kernel numerator sums exact zeros).
    // Those columns carry no correction, so the trailing matrices are built
    // and inverted on the active coordinates alone; otherwise a mean-only or
    // variance-only direction would make every trailing matrix singular.
    std::vector<int> act;
    for (int j = 0; j < ms.d; ++j) {
      bool nz = false;
      for (int i = 0; i < ms.n && !nz; ++i) nz = se.g_at(k, i, j) != 0.0;
      if (nz) act.push_back(j);
    }
    const int da = static_cast<int>(act.size());

    // Trailing atom-inclusive information matrices per tie group, ascending
    // positions. trailing[p] = (1/n) sum over sorted positions p' with
    // lag_{p'} >= lag_p of g g' W^2, on the active coordinates.
    std::vector<Eigen::MatrixXd> trailing(static_cast<std::size_t>(ms.n));
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(da, da);
    int p = ms.n - 1;
    while (p >= 0) {
      int q = p;
      while (q >= 0 &&
             sorted_lag[static_cast<std::size_t>(q)] ==
                 sorted_lag[static_cast<std::size_t>(p)])
        --q;
      for (int r = p; r > q; --r) {
        const int i = ts.order[static_cast<std::size_t>(r)];
        Eigen::VectorXd g(da);
        for (int j = 0; j < da; ++j)
          g[j] = se.g_at(k, i, act[static_cast<std::size_t>(j)]);
        const double wi = w[static_cast<std::size_t>(i)];
        acc += (wi * wi / nn) * (g * g.transpose());
      }
      for (int r = p; r > q; --r) trailing[static_cast<std::size_t>(r)] = acc;
      p = q;
    }

    std::vector<double>& b = ts.b[k - 1];
    b.clear();
    int included = 0;
    for (int pos = 0; pos < ts.m_x0; ++pos) {
      const int i = ts.order[static_cast<std::size_t>(pos)];
      Eigen::VectorXd g(da);
      double gnorm = 0.0;
      for (int j = 0; j < da; ++j) {
        g[j] = se.g_at(k, i, act[static_cast<std::size_t>(j)]);
        gnorm = std::max(gnorm, std::abs(g[j]));
      }
      if (gnorm == 0.0) {
        // Zero score direction: the correction atom vanishes; no inverse
        // needed and the point stays included.
        for (int j = 0; j < ms.d; ++j) b.push_back(0.0);
        ++included;
        continue;
      }
      const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
          trailing[static_cast<std::size_t>(pos)]);
      const double lmin = es.eigenvalues().minCoeff();
      const double lmax = es.eigenvalues().maxCoeff();
      if (!(lmin > 0.0) || lmax / lmin > cond_cap) break;
      const Eigen::VectorXd bi = es.eigenvectors() *
                                 es.eigenvalues().cwiseInverse().asDiagonal() *
                                 es.eigenvectors().transpose() * g;
      // Rows stay full width with zeros on the inactive coordinates, so the
      // transform pass works in the original parameter space throughout.
      std::vector<double> row(static_cast<std::size_t>(ms.d), 0.0);
      for (int j = 0; j < da; ++j)
        row[static_cast<std::size_t>(act[static_cast<std::size_t>(j)])] = bi[j];
      b.insert(b.end(), row.begin(), row.end());
      ++included;
    }
    ts.included[k - 1] = included;
    if (included < (ts.m_x0 + 1) / 2)
      throw model_error(
          "martingale transform: trailing information matrix fails the "
          "condition cap over most of the range; reduce x0_quantile");
  }
  return ts;
}

// Transform of a marked step process with arbitrary atom values a_i:
//   (T a)(x) = sum_i a_i [ 1{lag_i <= x}
//              - sum_{j included, lag_j <= min(x, lag_i)} (W_j^2/n) b_j' g_i ].
// Returns values at every sorted jump position. One ascending pass with a
// prefix of correction atoms and a suffix of score-weighted atoms.
inline std::vector<double> transform_atoms(const MarkSeries& ms,
                                           const ScoreEstimate& se,
                                           const TransformState& ts, int k,
                                           const std::vector<double>& atoms) {
  if (k != 1 && k != 2) throw config_error("transform: k must be 1 or 2");
  if (atoms.size() != static_cast<std::size_t>(ms.n))
    throw config_error("transform: atom vector has wrong length");
  const std::vector<double>& w = k == 1 ? ms.w1 : ms.w2;
  const std::vector<double>& b = ts.b[k - 1];
  const int included = ts.included[k - 1];
  const double nn = static_cast<double>(ms.n);
  const int n = ms.n, d = ms.d;

  // Suffix Q_p = sum over sorted positions > p of a_i g_i.
  Eigen::VectorXd q = Eigen::VectorXd::Zero(d);
  std::vector<Eigen::VectorXd> suffix(static_cast<std::size_t>(n) + 1);
  suffix[static_cast<std::size_t>(n)] = q;
  for (int p = n - 1; p >= 0; --p) {
    const int i = ts.order[static_cast<std::size_t>(p)];
    for (int j = 0; j < d; ++j)
      q[j] += atoms[static_cast<std::size_t>(i)] * se.g_at(k, i, j);
    suffix[static_cast<std::size_t>(p)] = q;
  }

  std::vector<double> out(static_cast<std::size_t>(n), 0.0);
  Eigen::VectorXd prefix_corr = Eigen::VectorXd::Zero(d);  // sum W_j^2 b_j / n
  double run = 0.0;  // sum a_i (1 - prefix_corr(at i)' g_i) over positions <= p
  int p = 0;
  while (p < n) {
    // Tie group [p, gend): indicators and corrections treat equal lags jointly.
    int gend = p;
    const double x = ms.lag[static_cast<std::size_t>(
        ts.order[static_cast<std::size_t>(p)])];
    while (gend < n &&
           ms.lag[static_cast<std::size_t>(
               ts.order[static_cast<std::size_t>(gend)])] == x)
      ++gend;
    // First absorb the group's included correction atoms into the prefix.
    for (int r = p; r < gend; ++r) {
      if (r >= included) continue;
      const int i = ts.order[static_cast<std::size_t>(r)];
      const double wi = w[static_cast<std::size_t>(i)];
      for (int j = 0; j < d; ++j)
        prefix_corr[j] +=
            (wi * wi / nn) * b[static_cast<std::size_t>(r) * d + j];
    }
    // Then account the group's own atoms with the tie-inclusive prefix.
    for (int r = p; r < gend; ++r) {
      const int i = ts.order[static_cast<std::size_t>(r)];
      double corr = 0.0;
      for (int j = 0; j < d; ++j) corr += prefix_corr[j] * se.g_at(k, i, j);
      run += atoms[static_cast<std::size_t>(i)] * (1.0 - corr);
    }
    const double tail = prefix_corr.dot(suffix[static_cast<std::size_t>(gend)]);
    for (int r = p; r < gend; ++r)
      out[static_cast<std::size_t>(r)] = run - tail;
    p = gend;
  }
  return out;
}

// The transformed cumulative residual process at the jump points (sorted
// order), T_n^k(lag_(p)).
inline std::vector<double> transform(const MarkSeries& ms,
                                     const ScoreEstimate& se,
                                     const TransformState& ts, int k) {
  const std::vector<double>& w = k == 1 ? ms.w1 : ms.w2;
  const double root_n = std::sqrt(static_cast<double>(ms.n));
  std::vector<double> atoms(static_cast<std::size_t>(ms.n));
  for (int i = 0; i < ms.n; ++i)
    atoms[static_cast<std::size_t>(i)] = w[static_cast<std::size_t>(i)] / root_n;
  return transform_atoms(ms, se, ts, k, atoms);
}

struct TransformedCvm {
  double s = 0.0;        // S~_k
  double u0 = 0.0;       // included K-mass fraction, the time-change horizon
  int n_excluded = 0;
};

// S~_k = (1/(n gamma_k^2)) sum over included jumps of T(lag_j)^2 W_j^2.
inline TransformedCvm transformed_cvm(const std::vector<double>& t_vals,
                                      const MarkSeries& ms,
                                      const TransformState& ts, int k) {
  const std::vector<double>& w = k == 1 ? ms.w1 : ms.w2;
  const double nn = static_cast<double>(ms.n);
  double gamma = 0.0;
  for (int i = 0; i < ms.n; ++i)
    gamma += w[static_cast<std::size_t>(i)] * w[static_cast<std::size_t>(i)] / nn;
  if (!(gamma > 0.0))
    throw model_error("transformed_cvm: marks are identically zero");
  TransformedCvm out;
  out.n_excluded = ts.n_excluded(k);
  double acc = 0.0, mass = 0.0;
  for (int p = 0; p < ts.included[k - 1]; ++p) {
    const int i = ts.order[static_cast<std::size_t>(p)];
    const double wi = w[static_cast<std::size_t>(i)];
    acc += t_vals[static_cast<std::size_t>(p)] *
           t_vals[static_cast<std::size_t>(p)] * wi * wi;
    mass += wi * wi / nn;
  }
  out.s = acc / (nn * gamma * gamma);
  out.u0 = mass / gamma;
  return out;
}

// ---------- Brownian-motion Cramer-von Mises law ----------
// P(int_0^1 W(u)^2 du > s) via the Karhunen-Loeve eigenvalues
// lambda_j = ((j - 1/2) pi)^{-2}, j = 1..200, through the quadratic-form
// tail integrator. Critical values at 90/95/99%: 1.2, 1.657, 2.8.

inline const std::vector<double>& bm_cvm_eigenvalues() {
  static const std::vector<double> eigs = [] {
    std::vector<double> v(200);
    for (int j = 1; j <= 200; ++j) {
      const double base = (static_cast<double>(j) - 0.5) * M_PI;
      v[static_cast<std::size_t>(j - 1)] = 1.0 / (base * base);
    }
    return v;
  }();
  return eigs;
}

inline double bm_cvm_pvalue(double s, const ImhofOptions& opt = {}) {
  if (s <= 0.0) return 1.0;
  return imhof_tail(bm_cvm_eigenvalues(), s, opt);
}

}  // namespace cmv
