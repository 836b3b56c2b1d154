#pragma once

// Dense BFGS with Armijo backtracking, written against a plain
// function+gradient callback. Non-finite trial values are treated as
// rejected steps (the line search shrinks), so callers can surface
// infeasible parameter regions by returning +inf.

#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace cmv {

struct OptimResult {
  Eigen::VectorXd x;
  double f = 0.0;
  bool converged = false;
  int iterations = 0;
  double grad_norm = 0.0;
};

struct OptimOptions {
  int max_iterations = 500;
  double grad_tol = 1e-8;   // on the max-norm of the gradient
  double step_tol = 1e-12;  // on the max-norm of the accepted step
  double armijo_c = 1e-4;
  double backtrack = 0.5;
  int max_backtracks = 48;
};

// Minimizes f; `fn(x, grad_out)` returns the value and fills the gradient
// when grad_out is non-null.
inline OptimResult bfgs_minimize(
    const std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)>& fn,
    Eigen::VectorXd x0, const OptimOptions& opt = {}) {
  const int d = static_cast<int>(x0.size());
  OptimResult res;
  Eigen::MatrixXd hinv = Eigen::MatrixXd::Identity(d, d);
  Eigen::VectorXd x = std::move(x0), grad(d), grad_new(d);
  double f = fn(x, &grad);
  if (!std::isfinite(f)) {
    res.x = x;
    res.f = f;
    return res;
  }

  for (int it = 0; it < opt.max_iterations; ++it) {
    res.iterations = it + 1;
    if (grad.cwiseAbs().maxCoeff() < opt.grad_tol * (1.0 + std::abs(f))) {
      res.converged = true;
      break;
    }
    Eigen::VectorXd dir = -(hinv * grad);
    double slope = grad.dot(dir);
    if (!(slope < 0.0)) {  // curvature update went bad; reset to steepest descent
      hinv.setIdentity();
      dir = -grad;
      slope = grad.dot(dir);
    }

    double step = 1.0;
    double f_new = f;
    Eigen::VectorXd x_new = x;
    bool accepted = false;
    for (int bt = 0; bt < opt.max_backtracks; ++bt) {
      x_new = x + step * dir;
      f_new = fn(x_new, nullptr);
      if (std::isfinite(f_new) && f_new <= f + opt.armijo_c * step * slope) {
        accepted = true;
        break;
      }
      step *= opt.backtrack;
    }
    if (!accepted) break;

    fn(x_new, &grad_new);
    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd y = grad_new - grad;
    const double sy = s.dot(y);
    if (sy > 1e-10 * s.norm() * y.norm()) {
      const Eigen::VectorXd hy = hinv * y;
      const double yhy = y.dot(hy);
      // BFGS inverse update.
      hinv += ((sy + yhy) / (sy * sy)) * (s * s.transpose()) -
              (hy * s.transpose() + s * hy.transpose()) / sy;
    }
    x = x_new;
    f = f_new;
    grad = grad_new;
    if (s.cwiseAbs().maxCoeff() < opt.step_tol) {
      res.converged = true;
      break;
    }
  }
  res.x = x;
  res.f = f;
  res.grad_norm = grad.cwiseAbs().maxCoeff();
  if (!res.converged)
    res.converged = res.grad_norm < 1e-5 * (1.0 + std::abs(f));
  return res;
}

}  // namespace cmv
