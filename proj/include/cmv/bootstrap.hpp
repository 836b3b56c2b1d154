#pragma once

// Multiplier bootstrap for the raw Cramer-von Mises statistics. The
// estimation-corrected perturbed process is
//   D_u^k(x) = n^{-1/2} sum_i Z_i (W_i^k 1{lag_i <= x} - Gamma_k(x)' phi_i)
// and the bootstrap statistic integrates its square against the empirical
// lag law at left limits, which collapses to the closed-form kernel
//   M_ij = W_i W_j min(c_i, c_j) - W_i phi_j' L(lag_i) - W_j phi_i' L(lag_j)
//          + phi_i' N phi_j
// with L(t) = (1/n) sum_l Gamma(lag_l^-) 1{lag_l > t} and
// N = (1/n) sum_l Gamma(lag_l^-) Gamma(lag_l^-)'. Each draw is then a
// quadratic form (1/n) Z' M Z in iid standard normal multipliers; the same
// multipliers drive both mark processes so the combined statistics stay
// coherent across k.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "cmv/common.hpp"
#include "cmv/residual.hpp"

namespace cmv {

// Closed-form bootstrap kernel for mark process k. Symmetric n x n.
inline Eigen::MatrixXd bootstrap_kernel(const MarkSeries& ms,
                                        const CovEstimates& cov,
                                        const InfluenceSeries& inf, int k) {
  if (k != 1 && k != 2) throw config_error("bootstrap_kernel: k must be 1 or 2");
  if (cov.n != ms.n || inf.n != ms.n)
    throw config_error("bootstrap_kernel: component sizes disagree");
  const int n = ms.n, d = ms.d;
  const double nn = static_cast<double>(n);
  const std::vector<double>& w = k == 1 ? ms.w1 : ms.w2;
  const std::vector<double> c = upper_tail_fractions(ms.lag);

  // Multiplicity of each grid value, for weighting the left-limit Gamma rows.
  const std::size_t g_count = cov.xs.size();
  std::vector<double> mult(g_count, 0.0);
  for (int i = 0; i < n; ++i) {
    const std::size_t gi = cov.index_right(ms.lag[static_cast<std::size_t>(i)]);
    mult[gi - 1] += 1.0;
  }

  // Left-limit Gamma_k rows per grid point, their weighted outer-product sum
  // N, and the suffix sums defining L(t).
  std::vector<Eigen::VectorXd> gam_left(g_count);
  for (std::size_t g = 0; g < g_count; ++g) {
    Eigen::VectorXd row = Eigen::VectorXd::Zero(d);
    if (g > 0)
      for (int j = 0; j < d; ++j) row[j] = cov.gamma[g - 1](k - 1, j);
    gam_left[g] = row;
  }
  Eigen::MatrixXd nmat = Eigen::MatrixXd::Zero(d, d);
  std::vector<Eigen::VectorXd> suffix(g_count + 1,
                                      Eigen::VectorXd::Zero(d));
  for (std::size_t g = g_count; g-- > 0;) {
    suffix[g] = suffix[g + 1] + (mult[g] / nn) * gam_left[g];
    nmat += (mult[g] / nn) * gam_left[g] * gam_left[g].transpose();
  }

  // Per-observation L(lag_i): suffix over grid points strictly above lag_i.
  Eigen::MatrixXd lmat(n, d);
  for (int i = 0; i < n; ++i) {
    const std::size_t gi = cov.index_right(ms.lag[static_cast<std::size_t>(i)]);
    lmat.row(i) = suffix[gi].transpose();
  }

  Eigen::MatrixXd phi(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) phi(i, j) = inf.phi(i, j);

  Eigen::MatrixXd m(n, n);
  const Eigen::MatrixXd phil = phi * lmat.transpose();   // phi_j' L(lag_i) at (j,i)
  const Eigen::MatrixXd phin = phi * nmat * phi.transpose();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      const double cij = std::min(c[static_cast<std::size_t>(i)],
                                  c[static_cast<std::size_t>(j)]);
      const double v = w[static_cast<std::size_t>(i)] *
                           w[static_cast<std::size_t>(j)] * cij -
                       w[static_cast<std::size_t>(i)] * phil(j, i) -
                       w[static_cast<std::size_t>(j)] * phil(i, j) +
                       phin(i, j);
      m(i, j) = v;
      m(j, i) = v;
    }
  }
  return m;
}

struct BootstrapOptions {
  int b_draws = 500;
  std::uint64_t seed = 0;
  bool add_one = false;     // (count+1)/(B+1) instead of count/B
  bool rademacher = false;  // +-1 multipliers instead of standard normal
  double p_floor = 1e-12;
};

struct BootstrapResult {
  double s1 = 0.0, s2 = 0.0;                      // observed statistics
  double s_star = 0.0, s_circ = 0.0, s_bullet = 0.0;
  double p1 = 1.0, p2 = 1.0;
  double p_star = 1.0, p_circ = 1.0, p_bullet = 1.0;
};

// Multipliers for draw b, independent of thread layout.
inline Eigen::VectorXd multiplier_draws(int n, std::uint64_t seed,
                                        std::uint64_t b,
                                        bool rademacher = false) {
  std::mt19937_64 eng(derive_seed(seed, b));
  Eigen::VectorXd z(n);
  if (rademacher) {
    std::bernoulli_distribution coin(0.5);
    for (int i = 0; i < n; ++i) z[i] = coin(eng) ? 1.0 : -1.0;
  } else {
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int i = 0; i < n; ++i) z[i] = gauss(eng);
  }
  return z;
}

inline BootstrapResult multiplier_bootstrap(const MarkSeries& ms,
                                            const CovEstimates& cov,
                                            const InfluenceSeries& inf,
                                            const BootstrapOptions& opt) {
  if (opt.b_draws < 100)
    throw config_error("multiplier_bootstrap: need at least 100 draws");
  if (!(cov.l1 > 0.0) || !(cov.l2 > 0.0))
    throw model_error("multiplier_bootstrap: normalizers must be positive");
  const int n = ms.n;
  const int b_count = opt.b_draws;
  const double nn = static_cast<double>(n);

  const Eigen::MatrixXd m1 = bootstrap_kernel(ms, cov, inf, 1);
  const Eigen::MatrixXd m2 = bootstrap_kernel(ms, cov, inf, 2);

  const RawCvm obs = raw_cvm(ms);
  BootstrapResult out;
  out.s1 = obs.s1;
  out.s2 = obs.s2;
  out.s_star = obs.s1 / cov.l1 + obs.s2 / cov.l2;
  out.s_circ = std::max(obs.s1 / cov.l1, obs.s2 / cov.l2);

  Eigen::MatrixXd zmat(n, b_count);
  for (int b = 0; b < b_count; ++b)
    zmat.col(b) = multiplier_draws(n, opt.seed, static_cast<std::uint64_t>(b),
                                   opt.rademacher);
  const Eigen::MatrixXd q1 = m1 * zmat;
  const Eigen::MatrixXd q2 = m2 * zmat;

  int c1 = 0, c2 = 0, cs = 0, cc = 0;
  for (int b = 0; b < b_count; ++b) {
    const double s1b = zmat.col(b).dot(q1.col(b)) / nn;
    const double s2b = zmat.col(b).dot(q2.col(b)) / nn;
    const double star = s1b / cov.l1 + s2b / cov.l2;
    const double circ = std::max(s1b / cov.l1, s2b / cov.l2);
    if (s1b > obs.s1) ++c1;
    if (s2b > obs.s2) ++c2;
    if (star > out.s_star) ++cs;
    if (circ > out.s_circ) ++cc;
  }
  const double denom = opt.add_one ? b_count + 1.0 : static_cast<double>(b_count);
  const double shift = opt.add_one ? 1.0 : 0.0;
  const double floor = std::max(opt.p_floor, 1.0 / (b_count + 1.0));
  out.p1 = std::max((c1 + shift) / denom, floor);
  out.p2 = std::max((c2 + shift) / denom, floor);
  out.p_star = std::max((cs + shift) / denom, floor);
  out.p_circ = std::max((cc + shift) / denom, floor);

  const CombinedStats cmb =
      combine(obs.s1, obs.s2, cov.l1, cov.l2, out.p1, out.p2, floor);
  out.s_bullet = cmb.s_bullet;
  out.p_bullet = cmb.p_bullet;
  return out;
}

}  // namespace cmv
