#pragma once

// Distribution of quadratic forms in Gaussians: the oscillatory-integral
// tail evaluator (Imhof's inversion formula) and the node-grid covariance
// used by the numeric p-value engine.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "cmv/common.hpp"
#include "cmv/residual.hpp"

namespace cmv {

struct ImhofOptions {
  double panel_tol = 1e-10;  // per-panel quadrature tolerance (absolute)
  double tail_eps = 1e-7;    // alternating-series tail target
  int max_panels = 400000;
  int max_depth = 28;
};

namespace detail {

// Gauss-Kronrod 15(7) nodes and weights on [-1, 1] (symmetric half listed).
constexpr double kGk15Nodes[8] = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144838258730, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.0};
constexpr double kGk15WeightsK[8] = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
constexpr double kGk15WeightsG[4] = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct ImhofIntegrand {
  const std::vector<double>& lambda;
  double q;

  double operator()(double u) const {
    double theta = -0.5 * q * u;
    double log_rho = 0.0;
    for (double l : lambda) {
      const double lu = l * u;
      theta += 0.5 * std::atan(lu);
      log_rho += 0.25 * std::log1p(lu * lu);
    }
    return std::sin(theta) * std::exp(-log_rho) / u;
  }
};

template <class F>
void gk15(const F& f, double a, double b, double* kronrod, double* err) {
  const double c = 0.5 * (a + b), h = 0.5 * (b - a);
  double sk = kGk15WeightsK[7] * f(c);
  double sg = kGk15WeightsG[3] * f(c);
  for (int i = 0; i < 7; ++i) {
    const double fx = f(c - h * kGk15Nodes[i]) + f(c + h * kGk15Nodes[i]);
    sk += kGk15WeightsK[i] * fx;
    if (i % 2 == 1) sg += kGk15WeightsG[i / 2] * fx;
  }
  *kronrod = sk * h;
  *err = std::abs((sk - sg) * h);
}

template <class F>
double adaptive_panel(const F& f, double a, double b, double tol, int depth,
                      int max_depth) {
  double v, err;
  gk15(f, a, b, &v, &err);
  if (err <= tol || depth >= max_depth) return v;
  const double c = 0.5 * (a + b);
  return adaptive_panel(f, a, c, 0.5 * tol, depth + 1, max_depth) +
         adaptive_panel(f, c, b, 0.5 * tol, depth + 1, max_depth);
}

// Envelope bound on the absolute tail integral beyond U, optimized over the
// number of leading (largest-magnitude) eigenvalues used:
//   int_U^inf du / (u rho(u)) <= (2/k) U^{-k/2} / prod_{r<=k} sqrt(|l_r|).
inline double tail_envelope_bound(const std::vector<double>& lambda_desc,
                                  double u) {
  double best = std::numeric_limits<double>::infinity();
  double log_prod = 0.0;
  const double log_u = std::log(u);
  for (std::size_t k = 1; k <= lambda_desc.size(); ++k) {
    const double l = std::abs(lambda_desc[k - 1]);
    if (l <= 0.0) break;
    log_prod += 0.5 * std::log(l);
    const double log_bound = std::log(2.0 / static_cast<double>(k)) -
                             0.5 * static_cast<double>(k) * log_u - log_prod;
    best = std::min(best, log_bound > 700.0 ? best : std::exp(log_bound));
  }
  return best / M_PI;
}

}  // namespace detail

// Upper tail P(sum_r lambda_r Z_r^2 > q) for independent standard normals.
// Integrates Imhof's inversion formula panel by panel (one oscillation
// period each, adaptively refined) until the alternating tail or the
// analytic envelope certifies the remainder is below tail_eps.
inline double imhof_tail(const std::vector<double>& lambda_in, double q,
                         const ImhofOptions& opt = {}) {
  std::vector<double> lambda;
  lambda.reserve(lambda_in.size());
  double max_abs = 0.0;
  for (double l : lambda_in) {
    if (!std::isfinite(l)) throw model_error("imhof_tail: non-finite eigenvalue");
    max_abs = std::max(max_abs, std::abs(l));
  }
  for (double l : lambda_in)
    if (std::abs(l) > 1e-14 * max_abs) lambda.push_back(l);
  if (lambda.empty()) return q > 0.0 ? 0.0 : 1.0;
  if (!std::isfinite(q)) return q > 0.0 ? 0.0 : 1.0;
  // A nonnegative-definite form exceeds any nonpositive threshold surely.
  if (q <= 0.0 && *std::min_element(lambda.begin(), lambda.end()) >= 0.0)
    return 1.0;

  double sum_abs = 0.0;
  for (double l : lambda) sum_abs += std::abs(l);
  const double freq = 0.5 * std::abs(q) + 0.5 * sum_abs;
  const double period = 2.0 * M_PI / std::max(freq, 1e-3);

  std::vector<double> desc = lambda;
  std::sort(desc.begin(), desc.end(),
            [](double a, double b) { return std::abs(a) > std::abs(b); });

  const detail::ImhofIntegrand f{lambda, q};
  // |remaining tail| is controlled two ways: integration by parts against
  // the asymptotic phase speed |q|/2 gives envelope(b) * 2/|q| / pi, and the
  // k-leading-eigenvalue envelope bound covers the small-|q| regime.
  auto envelope = [&lambda](double u) {
    double log_rho = 0.0;
    for (double l : lambda) log_rho += 0.25 * std::log1p(l * u * l * u);
    return std::exp(-log_rho) / u;
  };
  double total = 0.0;
  for (int p = 0; p < opt.max_panels; ++p) {
    const double a = static_cast<double>(p) * period;
    const double b = a + period;
    total += detail::adaptive_panel(f, std::max(a, 1e-300), b, opt.panel_tol,
                                    0, opt.max_depth);
    const double parts_tail =
        envelope(b) * 2.0 / (M_PI * std::max(std::abs(q), 0.02));
    if (parts_tail < opt.tail_eps) break;
    if ((p & 15) == 15 &&
        detail::tail_envelope_bound(desc, b) < opt.tail_eps)
      break;
  }
  const double pval = 0.5 + total / M_PI;
  return std::min(1.0, std::max(0.0, pval));
}

// ---------- node covariance for the numeric engine ----------
// The limit covariance of the joint mark process, evaluated on a grid of m
// empirical quantile nodes of the lag distribution:
//   C(x,y) = K(x^y) - Gamma'(x) G(y) - G'(x) Gamma(y) + Gamma'(x) S0 Gamma(y),
// assembled as a 2m x 2m matrix (mean block first) and symmetrized.

struct NodeCovariance {
  int m = 0;
  std::vector<double> nodes;
  Eigen::MatrixXd sigma;  // 2m x 2m
  double l1 = 0.0, l2 = 0.0;
};

inline NodeCovariance build_node_covariance(const CovEstimates& cov,
                                            const std::vector<double>& lag,
                                            int m) {
  if (m < 2) throw config_error("build_node_covariance: m must be >= 2");
  const int n = static_cast<int>(lag.size());
  NodeCovariance nc;
  nc.m = m;
  nc.l1 = cov.l1;
  nc.l2 = cov.l2;
  std::vector<double> sorted = lag;
  std::sort(sorted.begin(), sorted.end());
  nc.nodes.resize(static_cast<std::size_t>(m));
  for (int k = 1; k <= m; ++k) {
    long idx = static_cast<long>(
        std::ceil(static_cast<double>(k) * n / static_cast<double>(m)));
    idx = std::max<long>(1, std::min<long>(n, idx));
    nc.nodes[static_cast<std::size_t>(k - 1)] =
        sorted[static_cast<std::size_t>(idx - 1)];
  }

  std::vector<Eigen::Matrix2Xd> a(nc.nodes.size()), b(nc.nodes.size());
  std::vector<Eigen::Matrix2d> kmin(nc.nodes.size());
  for (std::size_t j = 0; j < nc.nodes.size(); ++j) {
    const double x = nc.nodes[j];
    a[j] = cov.gamma_at(x);
    b[j] = cov.gcap_at(x);
    Eigen::Matrix2d km;
    km << cov.k1_at(x), cov.k12_at(x), cov.k12_at(x), cov.k2_at(x);
    kmin[j] = km;
  }

  Eigen::MatrixXd sig(2 * m, 2 * m);
  for (int j = 0; j < m; ++j) {
    for (int l = 0; l < m; ++l) {
      const std::size_t uj = static_cast<std::size_t>(j);
      const std::size_t ul = static_cast<std::size_t>(l);
      const std::size_t mn = static_cast<std::size_t>(std::min(j, l));
      const Eigen::Matrix2d block =
          kmin[mn] - a[uj] * b[ul].transpose() - b[uj] * a[ul].transpose() +
          a[uj] * cov.sigma0 * a[ul].transpose();
      sig(j, l) = block(0, 0);
      sig(j, m + l) = block(0, 1);
      sig(m + j, l) = block(1, 0);
      sig(m + j, m + l) = block(1, 1);
    }
  }
  nc.sigma = 0.5 * (sig + sig.transpose());
  return nc;
}

// Eigenvalues of a symmetric matrix with tiny negative values (numerical
// noise) clipped to zero. Errors out if the clipped mass is material.
inline std::vector<double> clipped_eigenvalues(const Eigen::MatrixXd& mat,
                                               double clip_frac = 1e-6) {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(mat);
  if (es.info() != Eigen::Success)
    throw model_error("eigenvalue decomposition failed");
  const Eigen::VectorXd& ev = es.eigenvalues();
  const double trace = ev.sum();
  if (!(trace > 0.0))
    throw model_error("node covariance has non-positive trace");
  double clipped = 0.0;
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(ev.size()));
  for (long i = 0; i < ev.size(); ++i) {
    if (ev[i] < 0.0) {
      clipped -= ev[i];
      out.push_back(0.0);
    } else {
      out.push_back(ev[i]);
    }
  }
  if (clipped > clip_frac * trace)
    throw model_error("node covariance is far from positive semidefinite "
                      "(clipped mass " + std::to_string(clipped) + ")");
  return out;
}

struct NumericPvalues {
  double p1 = 1.0, p2 = 1.0, p_star = 1.0, p_circ = 1.0, p_bullet = 1.0;
  double s_bullet = 0.0;
};

// Asymptotic p-values for the raw statistics via quadrature-weighted
// eigenvalues of the node covariance. Weights are uniform (1/m); the
// combined statistic scales each block by its normalizer.
inline NumericPvalues numeric_pvalues(const NodeCovariance& nc, double s1,
                                      double s2, double p_floor = 1e-12,
                                      const ImhofOptions& iopt = {}) {
  const int m = nc.m;
  if (!(nc.l1 > 0.0) || !(nc.l2 > 0.0))
    throw model_error("numeric_pvalues: normalizers must be positive");
  const double am = 1.0 / static_cast<double>(m);

  const Eigen::MatrixXd s11 = nc.sigma.topLeftCorner(m, m) * am;
  const Eigen::MatrixXd s22 = nc.sigma.bottomRightCorner(m, m) * am;
  const std::vector<double> eig1 = clipped_eigenvalues(s11);
  const std::vector<double> eig2 = clipped_eigenvalues(s22);

  NumericPvalues out;
  out.p1 = imhof_tail(eig1, s1, iopt);
  out.p2 = imhof_tail(eig2, s2, iopt);

  // Joint weighted matrix for S* = S1/L1 + S2/L2.
  Eigen::VectorXd wsqrt(2 * m);
  for (int j = 0; j < m; ++j) {
    wsqrt[j] = std::sqrt(am / nc.l1);
    wsqrt[m + j] = std::sqrt(am / nc.l2);
  }
  const Eigen::MatrixXd weighted =
      wsqrt.asDiagonal() * nc.sigma * wsqrt.asDiagonal();
  const std::vector<double> eig_star = clipped_eigenvalues(weighted);
  const double q_star = s1 / nc.l1 + s2 / nc.l2;
  out.p_star = imhof_tail(eig_star, q_star, iopt);

  // Max combination under independence of the two blocks.
  const double q_circ = std::max(s1 / nc.l1, s2 / nc.l2);
  std::vector<double> eig1s = eig1, eig2s = eig2;
  for (double& v : eig1s) v /= nc.l1;
  for (double& v : eig2s) v /= nc.l2;
  const double pa = imhof_tail(eig1s, q_circ, iopt);
  const double pb = imhof_tail(eig2s, q_circ, iopt);
  out.p_circ = 1.0 - (1.0 - pa) * (1.0 - pb);

  const double q1 = std::max(out.p1, p_floor);
  const double q2 = std::max(out.p2, p_floor);
  out.s_bullet = -2.0 * (std::log(q1) + std::log(q2));
  out.p_bullet = chi_square_tail(4, out.s_bullet);
  return out;
}

}  // namespace cmv
