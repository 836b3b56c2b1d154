// Model registry: conditional-moment evaluation oracles, Euler discretization
// arithmetic, recursive-gradient consistency with finite differences, domain
// guards, and simulator determinism.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "cmv/dgp.hpp"
#include "cmv/model.hpp"

using namespace cmv;

namespace {

std::vector<double> series_for(const ModelSpec& model, int n,
                               std::uint64_t seed) {
  // A simulated path whose scale suits the model family: positive levels for
  // the diffusion models, centered noise otherwise.
  const bool sde = model.name == "vasicek" || model.name == "cir" ||
                   model.name == "ckls08" || model.name == "ckls15" ||
                   model.name == "hyperbolic" || model.name == "poly_const" ||
                   model.name == "poly15";
  if (sde) {
    DgpSpec d = dgp_by_name("n3", 0.01);
    return simulate_dgp(d, n, seed);
  }
  DgpSpec d = dgp_by_name("ar1garch:0.3");
  return simulate_dgp(d, n, seed);
}

ParamVector interior_theta(const ModelSpec& model,
                           const std::vector<double>& series) {
  ParamVector guess = model.initial_guess(series);
  // Nudge strictly inside the domain so central differences stay legal.
  for (int j = 0; j < model.dim; ++j) {
    if (model.domain.bounds[j].kind == BoundKind::positive &&
        guess[j] <= model.domain.bounds[j].lower + 1e-3)
      guess[j] = model.domain.bounds[j].lower + 0.05;
  }
  return guess;
}

// Central finite difference of the filtered conditional moments in theta_j,
// re-running the whole recursion at the shifted parameter.
void filter_fd(const ModelSpec& model, const ParamVector& theta,
               const std::vector<double>& series, int j, double h,
               std::vector<double>& dm, std::vector<double>& ds2) {
  ParamVector up = theta, dn = theta;
  up[j] += h;
  dn[j] -= h;
  const auto rows_up = run_filter(model, up, series, false);
  const auto rows_dn = run_filter(model, dn, series, false);
  dm.resize(rows_up.size());
  ds2.resize(rows_up.size());
  for (std::size_t i = 0; i < rows_up.size(); ++i) {
    dm[i] = (rows_up[i].m - rows_dn[i].m) / (2.0 * h);
    ds2[i] = (rows_up[i].s2 - rows_dn[i].s2) / (2.0 * h);
  }
}

void check_gradients(const ModelSpec& model, std::uint64_t seed) {
  const std::vector<double> series = series_for(model, 120, seed);
  const ParamVector theta = interior_theta(model, series);
  const auto rows = run_filter(model, theta, series, true);
  std::vector<double> fd_m, fd_s2;
  for (int j = 0; j < model.dim; ++j) {
    const double h = 1e-6 * (1.0 + std::abs(theta[j]));
    filter_fd(model, theta, series, j, h, fd_m, fd_s2);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double tol_m = 1e-5 * (1.0 + std::abs(rows[i].dm[j]));
      const double tol_s = 1e-5 * (1.0 + std::abs(rows[i].ds2[j]));
      INFO(model.name << " param " << j << " row " << i);
      REQUIRE(std::abs(rows[i].dm[j] - fd_m[i]) < tol_m);
      REQUIRE(std::abs(rows[i].ds2[j] - fd_s2[i]) < tol_s);
    }
  }
}

}  // namespace

TEST_CASE("arch1 conditional moments at stated constants") {
  const ModelSpec m = make_arch1();
  InfoState s;
  s.lag_x = 2.0;
  const auto [mean, var] = eval_conditional(m, {1.1, 0.5}, s);
  REQUIRE(mean == 0.0);
  REQUIRE(var == Catch::Approx(3.1).epsilon(1e-14));
}

TEST_CASE("garch11 collapses to constant variance when alpha=beta=0") {
  const ModelSpec m = make_garch11();
  for (const double lag : {-3.0, 0.0, 2.5}) {
    for (const double h : {0.1, 1.0, 9.0}) {
      InfoState s;
      s.lag_x = lag;
      s.cond_var = h;
      s.lag_innov = lag;
      const auto [mean, var] = eval_conditional(m, {0.4, 2.0, 0.0, 0.0}, s);
      REQUIRE(mean == Catch::Approx(0.4).epsilon(1e-14));
      REQUIRE(var == Catch::Approx(2.0).epsilon(1e-14));
    }
  }
}

TEST_CASE("euler-discretized linear mean-reversion evaluates the hand formula") {
  const ModelSpec m = make_sde_linear_drift(0.0, 0.01);
  REQUIRE(m.name == "vasicek");
  InfoState s;
  s.lag_x = 0.03;
  const auto [mean, var] = eval_conditional(m, {30.0, -3.0, 5.0}, s);
  REQUIRE(mean == Catch::Approx(0.3291).epsilon(1e-12));
  REQUIRE(var == Catch::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("euler-discretized square-root model evaluates the hand formula") {
  const ModelSpec m = make_sde_linear_drift(0.5, 0.005);
  REQUIRE(m.name == "cir");
  InfoState s;
  s.lag_x = 3.0;
  const auto [mean, var] = eval_conditional(m, {1.0, 4.5, 0.75}, s);
  REQUIRE(mean == Catch::Approx(3.0725).epsilon(1e-12));
  REQUIRE(var == Catch::Approx(0.0084375).epsilon(1e-12));
}

TEST_CASE("zero drift and unit diffusion give identity mean and constant variance") {
  const double delta = 0.037;
  const ModelSpec m = make_sde_linear_drift(0.0, delta);
  for (const double x : {-2.0, 0.4, 11.0}) {
    InfoState s;
    s.lag_x = x;
    const auto [mean, var] = eval_conditional(m, {0.0, 0.0, 1.0}, s);
    REQUIRE(mean == x);
    REQUIRE(var == delta);
  }
}

TEST_CASE("reciprocal-drift model rejects non-positive levels") {
  const ModelSpec m = make_sde_poly_drift(0.0, 0.01);
  InfoState s;
  s.lag_x = 0.0;
  REQUIRE_THROWS_AS(eval_conditional(m, {0.1, 0.1, 0.1, 0.1, 0.5}, s),
                    model_error);
}

TEST_CASE("threshold autoregression recursion at zero innovations") {
  REQUIRE(detail::tar_mean(2.0) == Catch::Approx(-1.0));
  REQUIRE(detail::tar_mean(detail::tar_mean(2.0)) == Catch::Approx(-0.6));
}

TEST_CASE("euler mean chain is the deterministic ode recursion") {
  const ModelSpec m = make_sde_linear_drift(0.0, 0.01);
  const ParamVector theta = {30.0, -3.0, 5.0};
  InfoState s = m.init_state(theta, {0.03});
  double x = 0.03;
  for (int step = 0; step < 3; ++step) {
    const double expect = x + (30.0 - 3.0 * x) * 0.01;
    const double got = m.mean_fn(theta, s);
    REQUIRE(got == Catch::Approx(expect).epsilon(1e-14));
    s = m.state_update(theta, s, got);
    x = expect;
  }
  REQUIRE(x == Catch::Approx(0.900650190).epsilon(1e-9));
}

TEST_CASE("diffusion generators match their fitted-model counterparts") {
  // Generator 1 (linear mean reversion, constant diffusion) is the exact null
  // of the vasicek model at (30, -3, 5); generator 3 of cir at (1, 4.5, 0.75).
  const double delta = 0.013;
  const ModelSpec vas = make_sde_linear_drift(0.0, delta);
  const ModelSpec cir = make_sde_linear_drift(0.5, delta);
  const auto f1 = detail::diffusion_fns(1);
  const auto f3 = detail::diffusion_fns(3);
  for (const double x : {0.05, 1.0, 4.2, 9.5}) {
    InfoState s;
    s.lag_x = x;
    REQUIRE(vas.mean_fn({30.0, -3.0, 5.0}, s) ==
            Catch::Approx(x + f1.mu(x) * delta).epsilon(1e-13));
    REQUIRE(vas.var_fn({30.0, -3.0, 5.0}, s) ==
            Catch::Approx(f1.sig(x) * f1.sig(x) * delta).epsilon(1e-13));
    REQUIRE(cir.mean_fn({1.0, 4.5, 0.75}, s) ==
            Catch::Approx(x + f3.mu(x) * delta).epsilon(1e-13));
    REQUIRE(cir.var_fn({1.0, 4.5, 0.75}, s) ==
            Catch::Approx(f3.sig(x) * f3.sig(x) * delta).epsilon(1e-13));
  }
}

TEST_CASE("simulators are pure functions of (dgp, n, seed)") {
  for (const char* name : {"m0", "m3", "a2", "a4", "n1", "n5", "ar1garch:0.5"}) {
    const DgpSpec d = dgp_by_name(name);
    const auto a = simulate_dgp(d, 150, 99);
    const auto b = simulate_dgp(d, 150, 99);
    const auto c = simulate_dgp(d, 150, 100);
    INFO(name);
    REQUIRE(a.size() == 151);
    REQUIRE(a == b);
    REQUIRE(a != c);
  }
}

TEST_CASE("explosive euler path at coarse mesh raises a structured error") {
  DgpSpec d = dgp_by_name("n3", 1.0);
  REQUIRE_THROWS_AS(simulate_dgp(d, 60, 5), model_error);
}

TEST_CASE("unknown generator and malformed grid labels are rejected") {
  REQUIRE_THROWS_AS(dgp_by_name("m7"), config_error);
  REQUIRE_THROWS_AS(dgp_by_name("zzz"), config_error);
  REQUIRE_THROWS_AS(dgp_by_name("ar1garch:abc"), config_error);
  REQUIRE(dgp_by_name("ar1garch:-0.9").a1 == Catch::Approx(-0.9));
}

TEST_CASE("analytic gradients match the finite-difference filter") {
  for (const char* name :
       {"arch1", "garch11", "ar1_garch11", "const_var", "ar1_constvar",
        "vasicek", "cir", "ckls08", "ckls15", "hyperbolic", "poly_const",
        "poly15"}) {
    INFO(name);
    check_gradients(make_model_by_name(name, 0.01), 1234);
  }
}

TEST_CASE("variance stays positive across the parameter domain") {
  std::mt19937_64 eng(777);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (const char* name :
       {"arch1", "garch11", "ar1_garch11", "const_var", "ar1_constvar",
        "vasicek", "cir", "ckls08", "ckls15", "hyperbolic", "poly_const",
        "poly15"}) {
    const ModelSpec m = make_model_by_name(name, 0.01);
    const bool sde = m.name != "arch1" && m.name != "garch11" &&
                     m.name != "ar1_garch11" && m.name != "const_var" &&
                     m.name != "ar1_constvar";
    for (int trial = 0; trial < 800; ++trial) {
      std::vector<double> eta(static_cast<std::size_t>(m.dim));
      for (double& e : eta) e = 1.5 * gauss(eng);
      const ParamVector theta = m.domain.to_natural(eta);
      REQUIRE(m.domain.contains(theta));
      InfoState s;
      s.lag_x = sde ? std::abs(gauss(eng)) * 3.0 + 0.05 : 3.0 * gauss(eng);
      s.cond_var = std::abs(gauss(eng)) + 0.1;
      s.lag_innov = gauss(eng);
      if (m.name == "garch11") s.extra.assign(4, 0.0);
      if (m.name == "ar1_garch11") s.extra.assign(10, 0.0);
      const double var = m.var_fn(theta, s);
      INFO(name << " trial " << trial);
      REQUIRE(var > 0.0);
    }
  }
}

TEST_CASE("filter rejects short series and reports usable pair count") {
  const ModelSpec m = make_arch1();
  REQUIRE_THROWS_AS(run_filter(m, {1.0, 0.5}, {0.3}, false), model_error);
  const auto rows = run_filter(m, {1.0, 0.5}, {0.3, -0.2, 0.7}, false);
  REQUIRE(rows.size() == 2);
  REQUIRE(rows[0].lag == 0.3);
  REQUIRE(rows[1].lag == -0.2);
}
