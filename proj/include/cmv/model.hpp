#pragma once

// Null-model registry: conditional mean/variance specifications with
// analytic parameter gradients, threaded through a one-step information
// state so the same machinery serves likelihood evaluation, residual marks,
// and simulation.
//
// Gradient contract: mean_grad / var_grad return TOTAL derivatives in theta
// along the filtered path. For Markov models that is the pointwise partial;
// for GARCH-type recursions the state carries the variance-sensitivity
// recursion in InfoState::extra and state_update propagates it.

#include <array>
#include <cmath>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "cmv/common.hpp"

namespace cmv {

using ParamVector = std::vector<double>;

constexpr int kMaxDim = 8;

// Information available for predicting X_t: the previous observation, the
// previous conditional variance and innovation (GARCH-type recursions), and
// model-specific carry (sensitivity recursions).
struct InfoState {
  double lag_x = 0.0;
  double cond_var = 1.0;
  double lag_innov = 0.0;
  std::vector<double> extra;
};

// ---------- parameter domain ----------

enum class BoundKind { free_real, positive };

struct ComponentBound {
  BoundKind kind = BoundKind::free_real;
  double lower = 0.0;  // for positive components: theta > lower
};

// Domain = per-component bounds plus at most one "persistence group" of
// components that are individually nonnegative and jointly sum to < cap
// (the ARCH/GARCH stationarity region). The group is mapped to an
// unconstrained space by stick-breaking logistic transforms.
struct ParamDomain {
  std::vector<ComponentBound> bounds;
  std::vector<int> group;   // indices participating in the sum cap
  double group_cap = 0.999;

  int dim() const { return static_cast<int>(bounds.size()); }

  bool in_group(int i) const {
    for (int g : group)
      if (g == i) return true;
    return false;
  }

  bool contains(const ParamVector& theta) const {
    if (static_cast<int>(theta.size()) != dim()) return false;
    for (int i = 0; i < dim(); ++i) {
      if (!std::isfinite(theta[i])) return false;
      if (bounds[i].kind == BoundKind::positive && theta[i] <= bounds[i].lower)
        return false;
    }
    double s = 0.0;
    for (int g : group) {
      if (theta[g] < 0.0) return false;
      s += theta[g];
    }
    return s <= group_cap;
  }

  // Natural -> unconstrained. Group components use stick-breaking: each one
  // takes a logistic fraction of the cap remaining after its predecessors.
  std::vector<double> to_unconstrained(const ParamVector& theta) const {
    std::vector<double> eta(theta.size());
    for (int i = 0; i < dim(); ++i) {
      if (in_group(i)) continue;
      eta[i] = bounds[i].kind == BoundKind::positive
                   ? std::log(theta[i] - bounds[i].lower)
                   : theta[i];
    }
    double remaining = group_cap;
    for (int g : group) {
      double frac = theta[g] / remaining;
      frac = std::min(1.0 - 1e-12, std::max(1e-12, frac));
      eta[g] = std::log(frac / (1.0 - frac));
      remaining -= theta[g];
      remaining = std::max(remaining, 1e-12);
    }
    return eta;
  }

  ParamVector to_natural(const std::vector<double>& eta) const {
    ParamVector theta(eta.size());
    for (int i = 0; i < dim(); ++i) {
      if (in_group(i)) continue;
      theta[i] = bounds[i].kind == BoundKind::positive
                     ? bounds[i].lower + std::exp(eta[i])
                     : eta[i];
    }
    double remaining = group_cap;
    for (int g : group) {
      const double frac = 1.0 / (1.0 + std::exp(-eta[g]));
      theta[g] = remaining * frac;
      remaining -= theta[g];
    }
    return theta;
  }
};

// ---------- model specification ----------

struct ModelSpec {
  std::string name;
  int dim = 0;
  std::vector<std::string> param_names;
  ParamDomain domain;

  // Conditional moments of X_t given the state (information through t-1).
  std::function<double(const ParamVector&, const InfoState&)> mean_fn;
  std::function<double(const ParamVector&, const InfoState&)> var_fn;
  // Total theta-gradients written into out[0..dim).
  std::function<void(const ParamVector&, const InfoState&, double*)> mean_grad;
  std::function<void(const ParamVector&, const InfoState&, double*)> var_grad;
  // Advance the state after observing x_t (propagates sensitivities).
  std::function<InfoState(const ParamVector&, const InfoState&, double)>
      state_update;
  // Build the time-0 state from the observed series prefix.
  std::function<InfoState(const ParamVector&, const std::vector<double>&)>
      init_state;
  // Method-of-moments style starting point for the optimizer.
  std::function<ParamVector(const std::vector<double>&)> initial_guess;
};

// Evaluate (conditional mean, conditional variance) at one state, enforcing
// variance positivity.
inline std::pair<double, double> eval_conditional(const ModelSpec& model,
                                                  const ParamVector& theta,
                                                  const InfoState& state) {
  if (static_cast<int>(theta.size()) != model.dim)
    throw config_error(model.name + ": parameter vector has wrong length");
  const double m = model.mean_fn(theta, state);
  const double s2 = model.var_fn(theta, state);
  if (!(s2 > 0.0) || !std::isfinite(s2) || !std::isfinite(m))
    throw model_error(model.name + ": conditional variance not positive at state");
  return {m, s2};
}

// ---------- filtered path ----------
// One row per usable pair (i = 1..n for a series of length n+1): conditional
// moments, their total gradients, the lagged observation, and the outcome.

struct FilterRow {
  double x = 0.0;    // X_i
  double lag = 0.0;  // X_{i-1}
  double m = 0.0;
  double s2 = 0.0;
  std::array<double, kMaxDim> dm{};
  std::array<double, kMaxDim> ds2{};
};

inline std::vector<FilterRow> run_filter(const ModelSpec& model,
                                         const ParamVector& theta,
                                         const std::vector<double>& series,
                                         bool want_grad) {
  if (series.size() < 2)
    throw model_error(model.name + ": series must have at least 2 observations");
  for (std::size_t i = 0; i < series.size(); ++i)
    if (!std::isfinite(series[i]))
      throw model_error(model.name + ": non-finite observation at index " +
                        std::to_string(i));
  if (static_cast<int>(theta.size()) != model.dim)
    throw config_error(model.name + ": parameter vector has wrong length");
  if (model.dim > kMaxDim)
    throw config_error(model.name + ": parameter dimension exceeds kMaxDim");

  const std::size_t n = series.size() - 1;
  std::vector<FilterRow> rows(n);
  InfoState state = model.init_state(theta, series);
  for (std::size_t i = 1; i <= n; ++i) {
    FilterRow& r = rows[i - 1];
    r.x = series[i];
    r.lag = state.lag_x;
    r.m = model.mean_fn(theta, state);
    r.s2 = model.var_fn(theta, state);
    if (!(r.s2 > 0.0) || !std::isfinite(r.s2) || !std::isfinite(r.m))
      throw model_error(model.name +
                        ": conditional variance not positive at observation " +
                        std::to_string(i));
    if (want_grad) {
      model.mean_grad(theta, state, r.dm.data());
      model.var_grad(theta, state, r.ds2.data());
    }
    state = model.state_update(theta, state, series[i]);
  }
  return rows;
}

// ---------- built-in models ----------

namespace detail {

inline void zero_grad(double* out, int d) {
  std::memset(out, 0, sizeof(double) * static_cast<std::size_t>(d));
}

}  // namespace detail

// ARCH(1): mean 0, variance omega + alpha * X_{t-1}^2. Markov, so gradients
// need no sensitivity carry.
inline ModelSpec make_arch1() {
  ModelSpec m;
  m.name = "arch1";
  m.dim = 2;
  m.param_names = {"omega", "alpha"};
  m.domain.bounds = {{BoundKind::positive, 0.0}, {BoundKind::free_real, 0.0}};
  m.domain.group = {1};
  m.mean_fn = [](const ParamVector&, const InfoState&) { return 0.0; };
  m.var_fn = [](const ParamVector& t, const InfoState& s) {
    return t[0] + t[1] * s.lag_x * s.lag_x;
  };
  m.mean_grad = [](const ParamVector&, const InfoState&, double* out) {
    detail::zero_grad(out, 2);
  };
  m.var_grad = [](const ParamVector&, const InfoState& s, double* out) {
    out[0] = 1.0;
    out[1] = s.lag_x * s.lag_x;
  };
  m.state_update = [](const ParamVector&, const InfoState& s, double x) {
    InfoState ns = s;
    ns.lag_x = x;
    ns.lag_innov = x;
    return ns;
  };
  m.init_state = [](const ParamVector&, const std::vector<double>& prefix) {
    InfoState s;
    s.lag_x = prefix.empty() ? 0.0 : prefix.front();
    s.lag_innov = 0.0;
    s.cond_var = sample_variance(prefix);
    return s;
  };
  m.initial_guess = [](const std::vector<double>& x) {
    const double v = std::max(sample_variance(x), 1e-6);
    return ParamVector{0.7 * v, 0.3};
  };
  return m;
}

// GARCH(1,1): mean 0, h_t = omega + alpha eps_{t-1}^2 + beta h_{t-1}.
// extra[0..2] carries dh_{t-1}/dtheta so var_grad is the total derivative.
// GARCH(1,1) around a constant mean: X_t = mu + eps_t. Fitting the mean
// jointly is what gives the mean-side test something to project on; a
// hard-coded zero mean would leave that component untransformed.
// extra = dh/dtheta (4); d(eps_{t-1})/dtheta is the constant (-1, 0, 0, 0).
inline ModelSpec make_garch11() {
  ModelSpec m;
  m.name = "garch11";
  m.dim = 4;
  m.param_names = {"mu", "omega", "alpha", "beta"};
  m.domain.bounds = {{BoundKind::free_real, 0.0},
                     {BoundKind::positive, 0.0},
                     {BoundKind::free_real, 0.0},
                     {BoundKind::free_real, 0.0}};
  m.domain.group = {2, 3};
  m.mean_fn = [](const ParamVector& t, const InfoState&) { return t[0]; };
  m.var_fn = [](const ParamVector& t, const InfoState& s) {
    return t[1] + t[2] * s.lag_innov * s.lag_innov + t[3] * s.cond_var;
  };
  m.mean_grad = [](const ParamVector&, const InfoState&, double* out) {
    detail::zero_grad(out, 4);
    out[0] = 1.0;
  };
  m.var_grad = [](const ParamVector& t, const InfoState& s, double* out) {
    const double e = s.lag_innov;
    out[0] = -2.0 * t[2] * e + t[3] * s.extra[0];
    out[1] = 1.0 + t[3] * s.extra[1];
    out[2] = e * e + t[3] * s.extra[2];
    out[3] = s.cond_var + t[3] * s.extra[3];
  };
  m.state_update = [](const ParamVector& t, const InfoState& s, double x) {
    InfoState ns;
    ns.extra.resize(4);
    const double e = s.lag_innov;
    const double h = t[1] + t[2] * e * e + t[3] * s.cond_var;
    ns.extra[0] = -2.0 * t[2] * e + t[3] * s.extra[0];
    ns.extra[1] = 1.0 + t[3] * s.extra[1];
    ns.extra[2] = e * e + t[3] * s.extra[2];
    ns.extra[3] = s.cond_var + t[3] * s.extra[3];
    ns.cond_var = h;
    ns.lag_innov = x - t[0];
    ns.lag_x = x;
    return ns;
  };
  m.init_state = [](const ParamVector&, const std::vector<double>& prefix) {
    InfoState s;
    s.lag_x = prefix.empty() ? 0.0 : prefix.front();
    s.lag_innov = 0.0;
    s.cond_var = sample_variance(prefix);
    s.extra.assign(4, 0.0);
    return s;
  };
  m.initial_guess = [](const std::vector<double>& x) {
    double mu = 0.0;
    for (double v : x) mu += v;
    mu /= static_cast<double>(x.size());
    const double v = std::max(sample_variance(x), 1e-6);
    return ParamVector{mu, 0.1 * v, 0.1, 0.8};
  };
  return m;
}

// AR(1) mean with GARCH(1,1) errors: X_t = c + a X_{t-1} + eps_t.
// extra = [dh/dtheta (5) | d(eps_{t-1})/dtheta (5)].
inline ModelSpec make_ar1_garch11() {
  ModelSpec m;
  m.name = "ar1_garch11";
  m.dim = 5;
  m.param_names = {"c", "a", "omega", "alpha", "beta"};
  m.domain.bounds = {{BoundKind::free_real, 0.0},
                     {BoundKind::free_real, 0.0},
                     {BoundKind::positive, 0.0},
                     {BoundKind::free_real, 0.0},
                     {BoundKind::free_real, 0.0}};
  m.domain.group = {3, 4};
  m.mean_fn = [](const ParamVector& t, const InfoState& s) {
    return t[0] + t[1] * s.lag_x;
  };
  m.var_fn = [](const ParamVector& t, const InfoState& s) {
    return t[2] + t[3] * s.lag_innov * s.lag_innov + t[4] * s.cond_var;
  };
  m.mean_grad = [](const ParamVector&, const InfoState& s, double* out) {
    detail::zero_grad(out, 5);
    out[0] = 1.0;
    out[1] = s.lag_x;
  };
  m.var_grad = [](const ParamVector& t, const InfoState& s, double* out) {
    const double e = s.lag_innov;
    for (int j = 0; j < 5; ++j)
      out[j] = 2.0 * t[3] * e * s.extra[5 + j] + t[4] * s.extra[j];
    out[2] += 1.0;
    out[3] += e * e;
    out[4] += s.cond_var;
  };
  m.state_update = [](const ParamVector& t, const InfoState& s, double x) {
    InfoState ns;
    ns.extra.resize(10);
    const double e = s.lag_innov;
    const double h = t[2] + t[3] * e * e + t[4] * s.cond_var;
    // dh_t/dtheta
    for (int j = 0; j < 5; ++j)
      ns.extra[j] = 2.0 * t[3] * e * s.extra[5 + j] + t[4] * s.extra[j];
    ns.extra[2] += 1.0;
    ns.extra[3] += e * e;
    ns.extra[4] += s.cond_var;
    // d(eps_t)/dtheta = -dm_t/dtheta
    ns.extra[5] = -1.0;
    ns.extra[6] = -s.lag_x;
    ns.extra[7] = ns.extra[8] = ns.extra[9] = 0.0;
    ns.cond_var = h;
    ns.lag_innov = x - (t[0] + t[1] * s.lag_x);
    ns.lag_x = x;
    return ns;
  };
  m.init_state = [](const ParamVector&, const std::vector<double>& prefix) {
    InfoState s;
    s.lag_x = prefix.empty() ? 0.0 : prefix.front();
    s.lag_innov = 0.0;
    s.cond_var = sample_variance(prefix);
    s.extra.assign(10, 0.0);
    return s;
  };
  m.initial_guess = [](const std::vector<double>& x) {
    // OLS for the AR part, GARCH variance targeting on the residual variance.
    double sxx = 0.0, sxy = 0.0, sx = 0.0, sy = 0.0;
    const std::size_t n = x.size() - 1;
    for (std::size_t i = 1; i <= n; ++i) {
      sx += x[i - 1];
      sy += x[i];
      sxx += x[i - 1] * x[i - 1];
      sxy += x[i - 1] * x[i];
    }
    const double nn = static_cast<double>(n);
    const double denom = sxx - sx * sx / nn;
    const double a = std::abs(denom) > 1e-12 ? (sxy - sx * sy / nn) / denom : 0.0;
    const double c = (sy - a * sx) / nn;
    double rss = 0.0;
    for (std::size_t i = 1; i <= n; ++i) {
      const double r = x[i] - c - a * x[i - 1];
      rss += r * r;
    }
    const double v = std::max(rss / nn, 1e-6);
    return ParamVector{c, a, 0.1 * v, 0.1, 0.8};
  };
  return m;
}

// Zero-mean constant-variance model; the influence function has a closed
// form, which makes it the estimation module's reference model.
inline ModelSpec make_constant_variance() {
  ModelSpec m;
  m.name = "const_var";
  m.dim = 1;
  m.param_names = {"c"};
  m.domain.bounds = {{BoundKind::positive, 0.0}};
  m.mean_fn = [](const ParamVector&, const InfoState&) { return 0.0; };
  m.var_fn = [](const ParamVector& t, const InfoState&) { return t[0]; };
  m.mean_grad = [](const ParamVector&, const InfoState&, double* out) {
    detail::zero_grad(out, 1);
  };
  m.var_grad = [](const ParamVector&, const InfoState&, double* out) {
    out[0] = 1.0;
  };
  m.state_update = [](const ParamVector&, const InfoState& s, double x) {
    InfoState ns = s;
    ns.lag_x = x;
    ns.lag_innov = x;
    return ns;
  };
  m.init_state = [](const ParamVector&, const std::vector<double>& prefix) {
    InfoState s;
    s.lag_x = prefix.empty() ? 0.0 : prefix.front();
    return s;
  };
  m.initial_guess = [](const std::vector<double>& x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return ParamVector{std::max(s / static_cast<double>(x.size()), 1e-8)};
  };
  return m;
}

// AR(1) slope with constant variance: mean a*X_{t-1}, variance c.
inline ModelSpec make_ar1_constvar() {
  ModelSpec m;
  m.name = "ar1_constvar";
  m.dim = 2;
  m.param_names = {"a", "c"};
  m.domain.bounds = {{BoundKind::free_real, 0.0}, {BoundKind::positive, 0.0}};
  m.mean_fn = [](const ParamVector& t, const InfoState& s) {
    return t[0] * s.lag_x;
  };
  m.var_fn = [](const ParamVector& t, const InfoState&) { return t[1]; };
  m.mean_grad = [](const ParamVector&, const InfoState& s, double* out) {
    out[0] = s.lag_x;
    out[1] = 0.0;
  };
  m.var_grad = [](const ParamVector&, const InfoState&, double* out) {
    out[0] = 0.0;
    out[1] = 1.0;
  };
  m.state_update = [](const ParamVector&, const InfoState& s, double x) {
    InfoState ns = s;
    ns.lag_x = x;
    return ns;
  };
  m.init_state = [](const ParamVector&, const std::vector<double>& prefix) {
    InfoState s;
    s.lag_x = prefix.empty() ? 0.0 : prefix.front();
    return s;
  };
  m.initial_guess = [](const std::vector<double>& x) {
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i) {
      sxx += x[i - 1] * x[i - 1];
      sxy += x[i - 1] * x[i];
    }
    const double a = sxx > 1e-12 ? sxy / sxx : 0.0;
    double rss = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i) {
      const double r = x[i] - a * x[i - 1];
      rss += r * r;
    }
    return ParamVector{a, std::max(rss / static_cast<double>(x.size() - 1), 1e-8)};
  };
  return m;
}

// ---------- Euler-discretized diffusions ----------

// Floor applied inside sqrt(x) / pow(x, g) diffusion factors so trial
// parameter values cannot take the variance through zero on near-boundary
// states.
constexpr double kLevelFloor = 1e-8;

inline double positive_part(double x) { return std::max(x, kLevelFloor); }

struct SdeFunctions {
  int dim = 0;
  std::vector<std::string> param_names;
  ParamDomain domain;
  std::function<double(const ParamVector&, double)> drift;
  std::function<double(const ParamVector&, double)> diffusion;
  std::function<void(const ParamVector&, double, double*)> drift_grad;
  std::function<void(const ParamVector&, double, double*)> diffusion_grad;
  std::function<ParamVector(const std::vector<double>&, double)> initial_guess;
};

// Euler scheme: X_t | X_{t-1}=x ~ N(x + drift(x) delta, diffusion(x)^2 delta).
inline ModelSpec discretize_sde(const SdeFunctions& f, double delta) {
  if (!(delta > 0.0)) throw config_error("discretize_sde: delta must be > 0");
  ModelSpec m;
  m.dim = f.dim;
  m.param_names = f.param_names;
  m.domain = f.domain;
  const auto fn = f;  // capture by value; ModelSpec owns its behavior
  m.mean_fn = [fn, delta](const ParamVector& t, const InfoState& s) {
    return s.lag_x + fn.drift(t, s.lag_x) * delta;
  };
  m.var_fn = [fn, delta](const ParamVector& t, const InfoState& s) {
    const double sig = fn.diffusion(t, s.lag_x);
    if (!(sig > 0.0))
      throw model_error("discretized diffusion is not positive at level " +
                        std::to_string(s.lag_x));
    return sig * sig * delta;
  };
  m.mean_grad = [fn, delta](const ParamVector& t, const InfoState& s,
                            double* out) {
    fn.drift_grad(t, s.lag_x, out);
    for (int j = 0; j < fn.dim; ++j) out[j] *= delta;
  };
  m.var_grad = [fn, delta](const ParamVector& t, const InfoState& s,
                           double* out) {
    const double sig = fn.diffusion(t, s.lag_x);
    fn.diffusion_grad(t, s.lag_x, out);
    for (int j = 0; j < fn.dim; ++j) out[j] *= 2.0 * sig * delta;
  };
  m.state_update = [](const ParamVector&, const InfoState& s, double x) {
    InfoState ns = s;
    ns.lag_x = x;
    return ns;
  };
  m.init_state = [](const ParamVector&, const std::vector<double>& prefix) {
    InfoState s;
    s.lag_x = prefix.empty() ? 0.0 : prefix.front();
    return s;
  };
  if (f.initial_guess) {
    const auto guess = f.initial_guess;
    m.initial_guess = [guess, delta](const std::vector<double>& x) {
      return guess(x, delta);
    };
  }
  return m;
}

namespace detail {

// OLS of the Euler increments on the given drift regressors, plus a residual
// based diffusion scale; shared by the diffusion-model starting points.
inline ParamVector sde_regression_guess(
    const std::vector<double>& x, double delta,
    const std::function<void(double, double*)>& regressors, int k,
    const std::function<double(double)>& diffusion_shape) {
  const std::size_t n = x.size() - 1;
  // Normal equations for k regressors (k <= 4): X'X b = X'y.
  double xtx[16] = {0};
  double xty[4] = {0};
  double r[4];
  for (std::size_t i = 1; i <= n; ++i) {
    regressors(x[i - 1], r);
    const double y = (x[i] - x[i - 1]) / delta;
    for (int a = 0; a < k; ++a) {
      xty[a] += r[a] * y;
      for (int b = 0; b < k; ++b) xtx[a * 4 + b] += r[a] * r[b];
    }
  }
  // Gaussian elimination with partial pivoting on the tiny system.
  double A[4][5];
  for (int a = 0; a < k; ++a) {
    for (int b = 0; b < k; ++b) A[a][b] = xtx[a * 4 + b];
    A[a][k] = xty[a];
  }
  for (int c = 0; c < k; ++c) {
    int piv = c;
    for (int rw = c + 1; rw < k; ++rw)
      if (std::abs(A[rw][c]) > std::abs(A[piv][c])) piv = rw;
    for (int cc = 0; cc <= k; ++cc) std::swap(A[c][cc], A[piv][cc]);
    if (std::abs(A[c][c]) < 1e-12) {
      A[c][c] = 1.0;  // degenerate regressor; fall back to zero coefficient
      A[c][k] = 0.0;
    }
    for (int rw = 0; rw < k; ++rw) {
      if (rw == c) continue;
      const double f = A[rw][c] / A[c][c];
      for (int cc = c; cc <= k; ++cc) A[rw][cc] -= f * A[c][cc];
    }
  }
  ParamVector beta(static_cast<std::size_t>(k));
  for (int a = 0; a < k; ++a) beta[static_cast<std::size_t>(a)] = A[a][k] / A[a][a];
  // Residual variance scaled by the diffusion shape gives sigma^2.
  double num = 0.0;
  for (std::size_t i = 1; i <= n; ++i) {
    regressors(x[i - 1], r);
    double drift = 0.0;
    for (int a = 0; a < k; ++a) drift += beta[static_cast<std::size_t>(a)] * r[a];
    const double resid = x[i] - x[i - 1] - drift * delta;
    const double shape = diffusion_shape(x[i - 1]);
    num += resid * resid / (shape * shape);
  }
  const double sigma2 = std::max(num / (static_cast<double>(n) * delta), 1e-10);
  beta.push_back(std::sqrt(sigma2));
  return beta;
}

}  // namespace detail

// Linear drift a + b x with diffusion sigma * x^gamma (gamma fixed).
// gamma = 0 is the Ornstein-Uhlenbeck/Vasicek family, 0.5 the square-root
// (CIR) family, 0.8 and 1.5 the CKLS-type families.
inline ModelSpec make_sde_linear_drift(double gamma, double delta) {
  SdeFunctions f;
  f.dim = 3;
  f.param_names = {"drift_const", "drift_slope", "sigma"};
  f.domain.bounds = {{BoundKind::free_real, 0.0},
                     {BoundKind::free_real, 0.0},
                     {BoundKind::positive, 0.0}};
  f.drift = [](const ParamVector& t, double x) { return t[0] + t[1] * x; };
  f.drift_grad = [](const ParamVector&, double x, double* out) {
    out[0] = 1.0;
    out[1] = x;
    out[2] = 0.0;
  };
  f.diffusion = [gamma](const ParamVector& t, double x) {
    return gamma == 0.0 ? t[2] : t[2] * std::pow(positive_part(x), gamma);
  };
  f.diffusion_grad = [gamma](const ParamVector&, double x, double* out) {
    out[0] = out[1] = 0.0;
    out[2] = gamma == 0.0 ? 1.0 : std::pow(positive_part(x), gamma);
  };
  f.initial_guess = [gamma](const std::vector<double>& x, double delta_) {
    return detail::sde_regression_guess(
        x, delta_,
        [](double xv, double* r) {
          r[0] = 1.0;
          r[1] = xv;
        },
        2,
        [gamma](double xv) {
          return gamma == 0.0 ? 1.0 : std::pow(positive_part(xv), gamma);
        });
  };
  ModelSpec m = discretize_sde(f, delta);
  if (gamma == 0.0)
    m.name = "vasicek";
  else if (gamma == 0.5)
    m.name = "cir";
  else if (gamma == 0.8)
    m.name = "ckls08";
  else if (gamma == 1.5)
    m.name = "ckls15";
  else
    m.name = "linear_drift_power_diff";
  return m;
}

// Hyperbolic drift alpha * x / sqrt(1 + x^2) with constant diffusion sigma.
inline ModelSpec make_sde_hyperbolic(double delta) {
  SdeFunctions f;
  f.dim = 2;
  f.param_names = {"alpha", "sigma"};
  f.domain.bounds = {{BoundKind::free_real, 0.0}, {BoundKind::positive, 0.0}};
  f.drift = [](const ParamVector& t, double x) {
    return t[0] * x / std::sqrt(1.0 + x * x);
  };
  f.drift_grad = [](const ParamVector&, double x, double* out) {
    out[0] = x / std::sqrt(1.0 + x * x);
    out[1] = 0.0;
  };
  f.diffusion = [](const ParamVector& t, double) { return t[1]; };
  f.diffusion_grad = [](const ParamVector&, double, double* out) {
    out[0] = 0.0;
    out[1] = 1.0;
  };
  f.initial_guess = [](const std::vector<double>& x, double delta_) {
    return detail::sde_regression_guess(
        x, delta_,
        [](double xv, double* r) { r[0] = xv / std::sqrt(1.0 + xv * xv); }, 1,
        [](double) { return 1.0; });
  };
  ModelSpec m = discretize_sde(f, delta);
  m.name = "hyperbolic_drift";
  return m;
}

// Polynomial-plus-reciprocal drift a0 + a1 x + a2 / x + a3 x^2 with diffusion
// sigma * x^gamma. Requires a strictly positive series.
inline ModelSpec make_sde_poly_drift(double gamma, double delta) {
  SdeFunctions f;
  f.dim = 5;
  f.param_names = {"a0", "a1", "a2", "a3", "sigma"};
  f.domain.bounds = {{BoundKind::free_real, 0.0},
                     {BoundKind::free_real, 0.0},
                     {BoundKind::free_real, 0.0},
                     {BoundKind::free_real, 0.0},
                     {BoundKind::positive, 0.0}};
  auto check_level = [](double x) {
    if (x <= 0.0)
      throw model_error(
          "reciprocal-drift model requires strictly positive levels");
  };
  f.drift = [check_level](const ParamVector& t, double x) {
    check_level(x);
    return t[0] + t[1] * x + t[2] / x + t[3] * x * x;
  };
  f.drift_grad = [check_level](const ParamVector&, double x, double* out) {
    check_level(x);
    out[0] = 1.0;
    out[1] = x;
    out[2] = 1.0 / x;
    out[3] = x * x;
    out[4] = 0.0;
  };
  f.diffusion = [gamma](const ParamVector& t, double x) {
    return gamma == 0.0 ? t[4] : t[4] * std::pow(positive_part(x), gamma);
  };
  f.diffusion_grad = [gamma](const ParamVector&, double x, double* out) {
    out[0] = out[1] = out[2] = out[3] = 0.0;
    out[4] = gamma == 0.0 ? 1.0 : std::pow(positive_part(x), gamma);
  };
  f.initial_guess = [gamma](const std::vector<double>& x, double delta_) {
    return detail::sde_regression_guess(
        x, delta_,
        [](double xv, double* r) {
          r[0] = 1.0;
          r[1] = xv;
          r[2] = 1.0 / std::max(xv, kLevelFloor);
          r[3] = xv * xv;
        },
        4,
        [gamma](double xv) {
          return gamma == 0.0 ? 1.0 : std::pow(positive_part(xv), gamma);
        });
  };
  ModelSpec m = discretize_sde(f, delta);
  m.name = gamma == 0.0 ? "poly_drift_const_diff" : "poly_drift_gamma15";
  return m;
}

// Candidate diffusion families for the application workflow, keyed by the
// short labels the CLI exposes.
inline ModelSpec make_model_by_name(const std::string& name, double delta) {
  ModelSpec m = [&]() -> ModelSpec {
    if (name == "arch1") return make_arch1();
    if (name == "garch11") return make_garch11();
    if (name == "ar1_garch11") return make_ar1_garch11();
    if (name == "const_var") return make_constant_variance();
    if (name == "ar1_constvar") return make_ar1_constvar();
    if (name == "vasicek") return make_sde_linear_drift(0.0, delta);
    if (name == "cir") return make_sde_linear_drift(0.5, delta);
    if (name == "ckls08") return make_sde_linear_drift(0.8, delta);
    if (name == "ckls15") return make_sde_linear_drift(1.5, delta);
    if (name == "hyperbolic") return make_sde_hyperbolic(delta);
    if (name == "poly_const") return make_sde_poly_drift(0.0, delta);
    if (name == "poly15") return make_sde_poly_drift(1.5, delta);
    throw config_error("unknown model '" + name + "'");
  }();
  // Reports and the model scan key on the lookup name, so the returned spec
  // carries it even where the factory's own label is more descriptive.
  m.name = name;
  return m;
}

inline std::vector<std::string> candidate_model_names() {
  return {"vasicek", "hyperbolic", "poly_const", "cir",
          "ckls08",  "ckls15",     "poly15"};
}

}  // namespace cmv
