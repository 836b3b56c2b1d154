#pragma once

// Gaussian QMLE for ModelSpec nulls, plus the estimator's influence series
// phi*_i = H^{-1} s_i(theta_hat) used by the p-value engines to account for
// parameter estimation.
//
// The optimizer works on an unconstrained reparameterization (log /
// stick-breaking logistic, see ParamDomain); gradients are analytic via the
// models' total-derivative contract; the reported Hessian is a
// central-difference Hessian of the average log-likelihood in natural
// coordinates.

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "cmv/common.hpp"
#include "cmv/model.hpp"
#include "cmv/optimize.hpp"

namespace cmv {

struct FitOptions {
  int restarts = 3;            // jittered restarts on non-convergence
  double jitter_sd = 0.25;     // in the unconstrained space
  std::uint64_t seed = 0x5eed; // jitter stream
  double hessian_step = 1e-4;  // relative central-difference step
  double hessian_cond_cap = 1e12;
  OptimOptions optim;
};

struct FitResult {
  ParamVector theta;
  double loglik = 0.0;  // average per-observation log-likelihood
  bool converged = false;
  int iterations = 0;
  int restarts_used = 0;
};

struct InfluenceSeries {
  int n = 0;
  int d = 0;
  Eigen::MatrixXd phi;      // n x d, rows phi*_i
  Eigen::MatrixXd sigma0;   // d x d, (1/n) sum phi phi'
  Eigen::MatrixXd hessian;  // d x d, average negative Hessian
  double hessian_cond = 0.0;
};

// Average Gaussian log-likelihood of the filtered path. Returns -inf when the
// path is infeasible at theta so the optimizer backtracks instead of dying.
inline double average_loglik(const ModelSpec& model, const ParamVector& theta,
                             const std::vector<double>& series) {
  if (!model.domain.contains(theta))
    return -std::numeric_limits<double>::infinity();
  std::vector<FilterRow> rows;
  try {
    rows = run_filter(model, theta, series, false);
  } catch (const model_error&) {
    return -std::numeric_limits<double>::infinity();
  }
  double ll = 0.0;
  for (const FilterRow& r : rows) {
    const double e = r.x - r.m;
    ll += -0.5 * (std::log(2.0 * M_PI * r.s2) + e * e / r.s2);
  }
  return ll / static_cast<double>(rows.size());
}

// Per-observation score rows s_i(theta) = d l_i / d theta, from the filtered
// gradients: s_i = eps_i dm_i / s2_i + ds2_i (eps_i^2 - s2_i) / (2 s2_i^2).
inline Eigen::MatrixXd score_rows(const ModelSpec& model,
                                  const ParamVector& theta,
                                  const std::vector<double>& series) {
  const auto rows = run_filter(model, theta, series, true);
  Eigen::MatrixXd s(static_cast<long>(rows.size()), model.dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const FilterRow& r = rows[i];
    const double e = r.x - r.m;
    const double w = (e * e - r.s2) / (2.0 * r.s2 * r.s2);
    for (int j = 0; j < model.dim; ++j)
      s(static_cast<long>(i), j) = e * r.dm[j] / r.s2 + r.ds2[j] * w;
  }
  return s;
}

namespace detail {

// Chain rule d theta / d eta for the domain transform, evaluated numerically
// (the transform is cheap and low-dimensional; avoids hand-deriving the
// stick-breaking Jacobian).
inline Eigen::MatrixXd transform_jacobian(const ParamDomain& dom,
                                          const std::vector<double>& eta) {
  const int d = dom.dim();
  Eigen::MatrixXd jac(d, d);
  const double h = 1e-6;
  for (int j = 0; j < d; ++j) {
    std::vector<double> ep = eta, em = eta;
    ep[j] += h;
    em[j] -= h;
    const ParamVector tp = dom.to_natural(ep), tm = dom.to_natural(em);
    for (int i = 0; i < d; ++i) jac(i, j) = (tp[i] - tm[i]) / (2.0 * h);
  }
  return jac;
}

}  // namespace detail

inline FitResult qmle_fit(const ModelSpec& model,
                          const std::vector<double>& series,
                          const FitOptions& opt = {}) {
  if (series.size() < static_cast<std::size_t>(model.dim) + 2)
    throw model_error(model.name + ": series too short to fit");

  ParamVector start = model.initial_guess
                          ? model.initial_guess(series)
                          : ParamVector(static_cast<std::size_t>(model.dim), 0.5);
  if (!model.domain.contains(start)) {
    // Clamp a wayward moment-based start into the interior.
    for (int i = 0; i < model.dim; ++i) {
      if (model.domain.bounds[i].kind == BoundKind::positive &&
          start[i] <= model.domain.bounds[i].lower)
        start[i] = model.domain.bounds[i].lower + 0.01;
    }
    double gsum = 0.0;
    for (int g : model.domain.group) {
      start[g] = std::max(start[g], 1e-4);
      gsum += start[g];
    }
    if (gsum >= model.domain.group_cap)
      for (int g : model.domain.group)
        start[g] *= 0.9 * model.domain.group_cap / gsum;
  }

  // Objective in the unconstrained space: negative average log-likelihood,
  // analytic gradient chained through the domain transform.
  auto objective = [&](const Eigen::VectorXd& eta_vec,
                       Eigen::VectorXd* grad) -> double {
    std::vector<double> eta(eta_vec.data(), eta_vec.data() + eta_vec.size());
    const ParamVector theta = model.domain.to_natural(eta);
    const double ll = average_loglik(model, theta, series);
    if (!std::isfinite(ll)) return std::numeric_limits<double>::infinity();
    if (grad != nullptr) {
      const Eigen::MatrixXd s = score_rows(model, theta, series);
      const Eigen::VectorXd avg_score =
          s.colwise().mean().transpose();  // d average loglik / d theta
      const Eigen::MatrixXd jac = detail::transform_jacobian(model.domain, eta);
      *grad = -(jac.transpose() * avg_score);
    }
    return -ll;
  };

  std::mt19937_64 jitter_eng(derive_seed(opt.seed, hash_tag(model.name)));
  std::normal_distribution<double> jitter(0.0, opt.jitter_sd);

  // Near a positive bound (or a group cap) the chain rule scales the
  // unconstrained gradient by the vanishing coordinate, so the line search
  // can flatline there and report convergence spuriously. Such solutions
  // only stand if the jittered restarts cannot beat them.
  auto boundary_suspect = [&](const ParamVector& t) {
    for (int j = 0; j < model.dim; ++j) {
      const ComponentBound& b = model.domain.bounds[static_cast<std::size_t>(j)];
      if (b.kind == BoundKind::positive &&
          t[static_cast<std::size_t>(j)] <= b.lower + 1e-5)
        return true;
    }
    if (!model.domain.group.empty()) {
      double gsum = 0.0;
      for (int g : model.domain.group) gsum += t[static_cast<std::size_t>(g)];
      if (gsum >= model.domain.group_cap - 1e-5) return true;
    }
    return false;
  };

  const std::vector<double> eta0 = model.domain.to_unconstrained(start);
  FitResult best;
  best.loglik = -std::numeric_limits<double>::infinity();
  bool any_finite = false;
  for (int attempt = 0; attempt <= opt.restarts; ++attempt) {
    Eigen::VectorXd eta(model.dim);
    for (int i = 0; i < model.dim; ++i)
      eta[i] = attempt == 0 ? eta0[static_cast<std::size_t>(i)]
                            : eta0[static_cast<std::size_t>(i)] + jitter(jitter_eng);
    const OptimResult r = bfgs_minimize(objective, eta, opt.optim);
    const double ll = -r.f;
    if (std::isfinite(ll)) any_finite = true;
    if (r.converged && std::isfinite(ll) && ll > best.loglik) {
      std::vector<double> eta_hat(r.x.data(), r.x.data() + r.x.size());
      best.theta = model.domain.to_natural(eta_hat);
      best.loglik = ll;
      best.converged = true;
      best.iterations = r.iterations;
      best.restarts_used = attempt;
    }
    if (best.converged && !boundary_suspect(best.theta)) break;
  }
  if (!best.converged) {
    if (!any_finite)
      throw model_error(model.name + ": likelihood not finite at any start");
    throw model_error(model.name + ": optimizer failed to converge");
  }
  return best;
}

// Central-difference Hessian of the average log-likelihood in natural
// coordinates, with steps shrunk where a full step would leave the domain.
inline Eigen::MatrixXd numeric_hessian(const ModelSpec& model,
                                       const ParamVector& theta,
                                       const std::vector<double>& series,
                                       double rel_step) {
  const int d = model.dim;
  std::vector<double> h(static_cast<std::size_t>(d));
  for (int j = 0; j < d; ++j) {
    double hj = rel_step * (1.0 + std::abs(theta[static_cast<std::size_t>(j)]));
    for (int shrink = 0; shrink < 40; ++shrink) {
      ParamVector tp = theta, tm = theta;
      tp[static_cast<std::size_t>(j)] += hj;
      tm[static_cast<std::size_t>(j)] -= hj;
      if (model.domain.contains(tp) && model.domain.contains(tm)) break;
      hj *= 0.5;
    }
    h[static_cast<std::size_t>(j)] = hj;
  }
  auto ll = [&](const ParamVector& t) { return average_loglik(model, t, series); };
  Eigen::MatrixXd hess(d, d);
  for (int j = 0; j < d; ++j) {
    for (int k = j; k < d; ++k) {
      ParamVector tpp = theta, tpm = theta, tmp = theta, tmm = theta;
      tpp[j] += h[j]; tpp[k] += h[k];
      tpm[j] += h[j]; tpm[k] -= h[k];
      tmp[j] -= h[j]; tmp[k] += h[k];
      tmm[j] -= h[j]; tmm[k] -= h[k];
      const double v =
          (ll(tpp) - ll(tpm) - ll(tmp) + ll(tmm)) / (4.0 * h[j] * h[k]);
      hess(j, k) = v;
      hess(k, j) = v;
    }
  }
  return hess;
}

inline InfluenceSeries influence(const ModelSpec& model, const ParamVector& theta,
                                 const std::vector<double>& series,
                                 const FitOptions& opt = {}) {
  InfluenceSeries inf;
  inf.d = model.dim;
  const Eigen::MatrixXd scores = score_rows(model, theta, series);
  inf.n = static_cast<int>(scores.rows());
  // H = average NEGATIVE Hessian of the log-likelihood.
  inf.hessian = -numeric_hessian(model, theta, series, opt.hessian_step);

  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inf.hessian);
  const double lmax = es.eigenvalues().maxCoeff();
  const double lmin = es.eigenvalues().minCoeff();
  inf.hessian_cond = lmin > 0.0 ? lmax / lmin
                                : std::numeric_limits<double>::infinity();
  if (!(lmin > 0.0) || inf.hessian_cond > opt.hessian_cond_cap)
    throw model_error(model.name +
                      ": information matrix is singular or ill-conditioned "
                      "(condition " +
                      std::to_string(inf.hessian_cond) + ")");

  const Eigen::MatrixXd hinv = es.eigenvectors() *
                               es.eigenvalues().cwiseInverse().asDiagonal() *
                               es.eigenvectors().transpose();
  inf.phi = scores * hinv;  // row i: H^{-1} s_i (H symmetric)
  inf.sigma0 = inf.phi.transpose() * inf.phi / static_cast<double>(inf.n);
  return inf;
}

}  // namespace cmv
