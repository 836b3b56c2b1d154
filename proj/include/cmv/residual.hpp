#pragma once

// Residual marks and their cumulative processes. The mean mark is the raw
// residual, the variance mark the squared residual minus the conditional
// variance; both are indexed by the lagged observation. This module also
// hosts the empirical covariance ingredients shared by the p-value engines
// and the raw Cramer-von Mises statistics.
//
// Integral convention: every "integrate the squared process against the
// empirical law of the lag" functional in this codebase evaluates the step
// process at LEFT limits (strict indicators). That is the convention under
// which the pairwise double-sum form of the statistic, the direct integral
// form, and the multiplier kernel's closed form agree exactly.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "cmv/common.hpp"
#include "cmv/estimation.hpp"
#include "cmv/model.hpp"

namespace cmv {

struct MarkSeries {
  int n = 0;
  int d = 0;
  std::vector<double> lag;  // X_{i-1}
  std::vector<double> w1;   // X_i - m_i
  std::vector<double> w2;   // (X_i - m_i)^2 - s2_i
  // Total theta-gradients of the marks, n x d row-major.
  std::vector<double> dw1;
  std::vector<double> dw2;

  double dw1_at(int i, int j) const { return dw1[static_cast<std::size_t>(i) * d + j]; }
  double dw2_at(int i, int j) const { return dw2[static_cast<std::size_t>(i) * d + j]; }
};

inline MarkSeries compute_marks(const ModelSpec& model, const ParamVector& theta,
                                const std::vector<double>& series) {
  const auto rows = run_filter(model, theta, series, true);
  MarkSeries ms;
  ms.n = static_cast<int>(rows.size());
  ms.d = model.dim;
  ms.lag.resize(rows.size());
  ms.w1.resize(rows.size());
  ms.w2.resize(rows.size());
  ms.dw1.resize(rows.size() * static_cast<std::size_t>(model.dim));
  ms.dw2.resize(rows.size() * static_cast<std::size_t>(model.dim));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const FilterRow& r = rows[i];
    const double e = r.x - r.m;
    ms.lag[i] = r.lag;
    ms.w1[i] = e;
    ms.w2[i] = e * e - r.s2;
    for (int j = 0; j < model.dim; ++j) {
      ms.dw1[i * static_cast<std::size_t>(model.dim) + j] = -r.dm[j];
      ms.dw2[i * static_cast<std::size_t>(model.dim) + j] =
          -2.0 * e * r.dm[j] - r.ds2[j];
    }
  }
  return ms;
}

// ---------- cumulative residual process ----------
// D_n(x) = n^{-1/2} sum_i w_i 1{lag_i <= x}, stored as a right-continuous
// step function over the sorted unique lag values.

struct StepProcess {
  std::vector<double> xs;   // sorted unique jump locations
  std::vector<double> val;  // process value at xs[j] (right-continuous)

  double at(double t) const {
    const auto it = std::upper_bound(xs.begin(), xs.end(), t);
    if (it == xs.begin()) return 0.0;
    return val[static_cast<std::size_t>(it - xs.begin()) - 1];
  }
  // Left limit: value just below t.
  double at_left(double t) const {
    const auto it = std::lower_bound(xs.begin(), xs.end(), t);
    if (it == xs.begin()) return 0.0;
    return val[static_cast<std::size_t>(it - xs.begin()) - 1];
  }
};

inline StepProcess cumulative_process(const MarkSeries& ms, int k) {
  if (k != 1 && k != 2) throw config_error("cumulative_process: k must be 1 or 2");
  const std::vector<double>& w = k == 1 ? ms.w1 : ms.w2;
  std::vector<int> order(static_cast<std::size_t>(ms.n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return ms.lag[a] < ms.lag[b]; });
  StepProcess sp;
  const double root_n = std::sqrt(static_cast<double>(ms.n));
  double acc = 0.0;
  for (std::size_t p = 0; p < order.size();) {
    const double x = ms.lag[static_cast<std::size_t>(order[p])];
    while (p < order.size() && ms.lag[static_cast<std::size_t>(order[p])] == x) {
      acc += w[static_cast<std::size_t>(order[p])] / root_n;
      ++p;
    }
    sp.xs.push_back(x);
    sp.val.push_back(acc);
  }
  return sp;
}

// ---------- empirical covariance ingredients ----------
// All components share one sorted jump grid. Evaluation is right-continuous;
// *_left gives the left limit used by the strict-convention integrals.

struct CovEstimates {
  int n = 0;
  int d = 0;
  std::vector<double> xs;                 // sorted unique lag values
  std::vector<double> k1, k2, k12;        // cumulative second-moment sums
  std::vector<Eigen::Matrix2Xd> gamma;    // cumulative 2 x d: -(1/n) sum dW 1{lag<=x}
  std::vector<Eigen::Matrix2Xd> gcap;     // cumulative 2 x d: (1/n) sum W phi' 1{lag<=x}
  Eigen::MatrixXd sigma0;                 // d x d
  double gamma1 = 0.0, gamma2 = 0.0;      // K_k(+inf)
  double l1 = 0.0, l2 = 0.0;              // (1/n) sum_j K_k(lag_j)

  std::size_t index_right(double t) const {
    return static_cast<std::size_t>(
        std::upper_bound(xs.begin(), xs.end(), t) - xs.begin());
  }
  double k1_at(double t) const {
    const auto idx = index_right(t);
    return idx == 0 ? 0.0 : k1[idx - 1];
  }
  double k2_at(double t) const {
    const auto idx = index_right(t);
    return idx == 0 ? 0.0 : k2[idx - 1];
  }
  double k12_at(double t) const {
    const auto idx = index_right(t);
    return idx == 0 ? 0.0 : k12[idx - 1];
  }
  Eigen::Matrix2Xd gamma_at(double t) const {
    const auto idx = index_right(t);
    return idx == 0 ? Eigen::Matrix2Xd::Zero(2, d).eval() : gamma[idx - 1];
  }
  Eigen::Matrix2Xd gcap_at(double t) const {
    const auto idx = index_right(t);
    return idx == 0 ? Eigen::Matrix2Xd::Zero(2, d).eval() : gcap[idx - 1];
  }
};

inline CovEstimates empirical_covariance(const MarkSeries& ms,
                                         const InfluenceSeries& inf) {
  if (inf.n != ms.n)
    throw config_error("empirical_covariance: marks and influence disagree on n");
  CovEstimates cov;
  cov.n = ms.n;
  cov.d = ms.d;
  cov.sigma0 = inf.sigma0;
  const double nn = static_cast<double>(ms.n);

  std::vector<int> order(static_cast<std::size_t>(ms.n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return ms.lag[a] < ms.lag[b]; });

  double a1 = 0.0, a2 = 0.0, a12 = 0.0;
  Eigen::Matrix2Xd ag = Eigen::Matrix2Xd::Zero(2, ms.d);
  Eigen::Matrix2Xd ac = Eigen::Matrix2Xd::Zero(2, ms.d);
  for (std::size_t p = 0; p < order.size();) {
    const double x = ms.lag[static_cast<std::size_t>(order[p])];
    while (p < order.size() && ms.lag[static_cast<std::size_t>(order[p])] == x) {
      const int i = order[p];
      const std::size_t ui = static_cast<std::size_t>(i);
      a1 += ms.w1[ui] * ms.w1[ui] / nn;
      a2 += ms.w2[ui] * ms.w2[ui] / nn;
      a12 += ms.w1[ui] * ms.w2[ui] / nn;
      for (int j = 0; j < ms.d; ++j) {
        ag(0, j) -= ms.dw1_at(i, j) / nn;
        ag(1, j) -= ms.dw2_at(i, j) / nn;
        ac(0, j) += ms.w1[ui] * inf.phi(i, j) / nn;
        ac(1, j) += ms.w2[ui] * inf.phi(i, j) / nn;
      }
      ++p;
    }
    cov.xs.push_back(x);
    cov.k1.push_back(a1);
    cov.k2.push_back(a2);
    cov.k12.push_back(a12);
    cov.gamma.push_back(ag);
    cov.gcap.push_back(ac);
  }
  cov.gamma1 = a1;
  cov.gamma2 = a2;
  for (int i = 0; i < ms.n; ++i) {
    cov.l1 += cov.k1_at(ms.lag[static_cast<std::size_t>(i)]) / nn;
    cov.l2 += cov.k2_at(ms.lag[static_cast<std::size_t>(i)]) / nn;
  }
  return cov;
}

// ---------- raw Cramer-von Mises statistics ----------
// S_k = (1/n) sum_{i,j} (1 - F_n(lag_i v lag_j)) w_i w_j, equivalently the
// strict-convention integral of the squared cumulative process.

struct RawCvm {
  double s1 = 0.0;
  double s2 = 0.0;
};

// 1 - F_n(lag_i) for each i, where F_n uses the weak inequality; since
// 1 - F_n is nonincreasing, 1 - F_n(max(lag_i, lag_j)) = min(c_i, c_j).
inline std::vector<double> upper_tail_fractions(const std::vector<double>& lag) {
  const std::size_t n = lag.size();
  std::vector<double> sorted = lag;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> c(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto gt = sorted.end() -
                    std::upper_bound(sorted.begin(), sorted.end(), lag[i]);
    c[i] = static_cast<double>(gt) / static_cast<double>(n);
  }
  return c;
}

inline RawCvm raw_cvm(const MarkSeries& ms) {
  const std::vector<double> c = upper_tail_fractions(ms.lag);
  const std::size_t n = static_cast<std::size_t>(ms.n);
  // Accumulate over sorted order so each pair's min(c_i, c_j) becomes the
  // weight of the later index: sum_{i,j} w_i w_j min(c_i,c_j)
  //   = sum_p c_(p) * (2 w_(p) prefix_{p-1} + w_(p)^2) over ties handled
  // jointly. Direct O(n^2) is clearer and n stays small; keep it simple.
  RawCvm out;
  double s1 = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double w = std::min(c[i], c[j]);
      s1 += w * ms.w1[i] * ms.w1[j];
      s2 += w * ms.w2[i] * ms.w2[j];
    }
  }
  out.s1 = s1 / static_cast<double>(n);
  out.s2 = s2 / static_cast<double>(n);
  return out;
}

// ---------- combinations ----------

struct CombinedStats {
  double s_star = 0.0;   // S1/L1 + S2/L2
  double s_circ = 0.0;   // max(S1/L1, S2/L2)
  double s_bullet = 0.0; // -2 (ln p1 + ln p2)
  double p_bullet = 1.0; // chi-square(4) upper tail of s_bullet
  bool clamped = false;  // a marginal p-value hit the floor
};

inline CombinedStats combine(double s1, double s2, double l1, double l2,
                             double p1, double p2, double p_floor = 1e-12) {
  if (!(l1 > 0.0) || !(l2 > 0.0))
    throw model_error("combine: normalizers must be positive");
  CombinedStats c;
  c.s_star = s1 / l1 + s2 / l2;
  c.s_circ = std::max(s1 / l1, s2 / l2);
  c.clamped = p1 < p_floor || p2 < p_floor;
  const double q1 = std::max(p1, p_floor);
  const double q2 = std::max(p2, p_floor);
  c.s_bullet = -2.0 * (std::log(q1) + std::log(q2));
  c.p_bullet = chi_square_tail(4, c.s_bullet);
  return c;
}

// Normalized cross-dependence of the two mark processes; values far from 0
// flag the independence assumption behind the max / Fisher combinations.
inline double dependence_ratio(const CovEstimates& cov) {
  const double denom = std::sqrt(cov.gamma1 * cov.gamma2);
  return denom > 0.0 ? cov.k12.back() / denom : 0.0;
}

}  // namespace cmv
