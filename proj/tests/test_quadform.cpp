// Tail probabilities of weighted chi-square sums and the node-covariance
// assembly behind the numeric p-value engine.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "cmv/quadform.hpp"
#include "cmv/residual.hpp"

namespace {

cmv::CovEstimates two_point_cov() {
  cmv::MarkSeries ms;
  ms.n = 2;
  ms.d = 1;
  ms.lag = {1.0, 2.0};
  ms.w1 = {1.0, 2.0};
  ms.w2 = {1.0, 1.0};
  ms.dw1 = {0.0, 0.0};
  ms.dw2 = {0.0, 0.0};
  cmv::InfluenceSeries inf;
  inf.n = 2;
  inf.d = 1;
  inf.phi = Eigen::MatrixXd::Zero(2, 1);
  inf.sigma0 = Eigen::MatrixXd::Zero(1, 1);
  return cmv::empirical_covariance(ms, inf);
}

}  // namespace

TEST_CASE("tail of a single squared normal matches the chi-square table") {
  REQUIRE(cmv::imhof_tail({1.0}, 2.705543454) == Catch::Approx(0.10).margin(1e-6));
  REQUIRE(cmv::imhof_tail({1.0}, 3.841458821) == Catch::Approx(0.05).margin(1e-6));
  REQUIRE(cmv::imhof_tail({1.0}, 6.634896601) == Catch::Approx(0.01).margin(1e-6));
}

TEST_CASE("tail of two and three unit weights matches the chi-square table") {
  const std::vector<double> two = {1.0, 1.0};
  REQUIRE(cmv::imhof_tail(two, 4.605170186) == Catch::Approx(0.10).margin(1e-6));
  REQUIRE(cmv::imhof_tail(two, 5.991464547) == Catch::Approx(0.05).margin(1e-6));
  REQUIRE(cmv::imhof_tail(two, 9.210340372) == Catch::Approx(0.01).margin(1e-6));
  REQUIRE(cmv::imhof_tail(two, 5.0) == Catch::Approx(std::exp(-2.5)).margin(1e-7));

  const std::vector<double> three = {1.0, 1.0, 1.0};
  REQUIRE(cmv::imhof_tail(three, 6.251388631) == Catch::Approx(0.10).margin(1e-6));
  REQUIRE(cmv::imhof_tail(three, 7.814727903) == Catch::Approx(0.05).margin(1e-6));
  REQUIRE(cmv::imhof_tail(three, 11.34486673) == Catch::Approx(0.01).margin(1e-6));
}

TEST_CASE("tail agrees with the closed-form recursion at higher degrees") {
  for (int df : {4, 6, 9}) {
    const std::vector<double> lam(static_cast<std::size_t>(df), 1.0);
    for (double q : {1.0, 4.0, 9.0, 16.0}) {
      REQUIRE(cmv::imhof_tail(lam, q) ==
              Catch::Approx(cmv::chi_square_tail(df, q)).margin(1e-7));
    }
  }
}

TEST_CASE("tail is invariant to a joint rescale of weights and threshold") {
  const std::vector<double> lam = {0.8, 0.3, 0.05};
  std::vector<double> lam5 = lam;
  for (double& v : lam5) v *= 5.0;
  for (double q : {0.3, 1.1, 2.9}) {
    REQUIRE(cmv::imhof_tail(lam5, 5.0 * q) ==
            Catch::Approx(cmv::imhof_tail(lam, q)).margin(1e-8));
  }
}

TEST_CASE("tail is monotone in the threshold and clamped to the unit interval") {
  const std::vector<double> lam = {0.9, 0.4, 0.1, 0.02};
  double prev = 1.0;
  REQUIRE(cmv::imhof_tail(lam, 0.0) == 1.0);
  REQUIRE(cmv::imhof_tail(lam, -3.0) == 1.0);
  for (double q = 0.1; q < 12.0; q += 0.4) {
    const double p = cmv::imhof_tail(lam, q);
    REQUIRE(p <= prev + 5e-7);
    REQUIRE(p >= 0.0);
    REQUIRE(p <= 1.0);
    prev = p;
  }
  const double sum = 0.9 + 0.4 + 0.1 + 0.02;
  REQUIRE(cmv::imhof_tail(lam, 100.0 * sum) < 1e-6);
}

TEST_CASE("negligible weights do not move the tail") {
  const double base = cmv::imhof_tail({1.0}, 3.0);
  REQUIRE(cmv::imhof_tail({1.0, 1e-13}, 3.0) == Catch::Approx(base).margin(1e-9));
  REQUIRE(cmv::imhof_tail({1.0, 0.0}, 3.0) == Catch::Approx(base).margin(1e-12));
}

TEST_CASE("degenerate weight lists collapse to point masses") {
  REQUIRE(cmv::imhof_tail({}, 1.0) == 0.0);
  REQUIRE(cmv::imhof_tail({}, -1.0) == 1.0);
  REQUIRE_THROWS_AS(cmv::imhof_tail({1.0, std::nan("")}, 1.0), cmv::model_error);
}

TEST_CASE("eigenvalue clipping tolerates noise and rejects real negatives") {
  Eigen::MatrixXd psd(2, 2);
  psd << 2.0, 0.0, 0.0, 1e-12;
  auto ev = cmv::clipped_eigenvalues(psd);
  REQUIRE(ev.size() == 2);

  Eigen::MatrixXd noisy(2, 2);
  noisy << 2.0, 0.0, 0.0, -1e-9;
  ev = cmv::clipped_eigenvalues(noisy);
  REQUIRE((ev[0] == 0.0 || ev[1] == 0.0));

  Eigen::MatrixXd bad(2, 2);
  bad << 2.0, 0.0, 0.0, -1.0;
  REQUIRE_THROWS_AS(cmv::clipped_eigenvalues(bad), cmv::model_error);
}

TEST_CASE("node covariance reduces to the cumulative moments when the fit has no effect") {
  const auto cov = two_point_cov();
  const auto nc = cmv::build_node_covariance(cov, {1.0, 2.0}, 2);
  REQUIRE(nc.nodes == std::vector<double>{1.0, 2.0});
  // With zero mark gradients and zero influence the blocks are K at the
  // smaller node.
  REQUIRE(nc.sigma(0, 0) == Catch::Approx(0.5));
  REQUIRE(nc.sigma(0, 1) == Catch::Approx(0.5));
  REQUIRE(nc.sigma(1, 1) == Catch::Approx(2.5));
  REQUIRE(nc.sigma(0, 2) == Catch::Approx(0.5));   // cross moment at node 1
  REQUIRE(nc.sigma(1, 3) == Catch::Approx(1.5));   // cross moment at node 2
  REQUIRE(nc.sigma(2, 2) == Catch::Approx(0.5));
  REQUIRE(nc.sigma(3, 3) == Catch::Approx(1.0));
  REQUIRE(nc.sigma.isApprox(nc.sigma.transpose()));
  REQUIRE_THROWS_AS(cmv::build_node_covariance(cov, {1.0, 2.0}, 1),
                    cmv::config_error);
}

TEST_CASE("nodes are empirical quantiles of the lag sample") {
  std::vector<double> lag = {7.0, 2.0, 9.0, 4.0, 1.0, 8.0, 3.0, 10.0, 5.0, 6.0};
  const auto cov = two_point_cov();  // only nodes depend on lag here
  const auto nc = cmv::build_node_covariance(cov, lag, 5);
  REQUIRE(nc.nodes == std::vector<double>{2.0, 4.0, 6.0, 8.0, 10.0});
}

TEST_CASE("identical mark blocks give identical marginal tails") {
  // Build marks with w2 == w1 so both blocks of the node covariance match.
  cmv::MarkSeries ms;
  ms.n = 40;
  ms.d = 1;
  std::mt19937_64 eng(5u);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i = 0; i < ms.n; ++i) {
    ms.lag.push_back(0.5 * (i % 7));
    ms.w1.push_back(normal(eng));
  }
  ms.w2 = ms.w1;
  ms.dw1.assign(static_cast<std::size_t>(ms.n), 0.0);
  ms.dw2.assign(static_cast<std::size_t>(ms.n), 0.0);
  cmv::InfluenceSeries inf;
  inf.n = ms.n;
  inf.d = 1;
  inf.phi = Eigen::MatrixXd::Zero(ms.n, 1);
  inf.sigma0 = Eigen::MatrixXd::Zero(1, 1);
  const auto cov = cmv::empirical_covariance(ms, inf);
  const auto nc = cmv::build_node_covariance(cov, ms.lag, 10);
  const auto raw = cmv::raw_cvm(ms);
  REQUIRE(raw.s1 == Catch::Approx(raw.s2));
  REQUIRE(cov.l1 == Catch::Approx(cov.l2));

  const auto pv = cmv::numeric_pvalues(nc, raw.s1, raw.s2);
  REQUIRE(pv.p1 == Catch::Approx(pv.p2).margin(1e-10));
  // The max combination reduces to 1 - (1 - p)^2 with equal blocks.
  const Eigen::MatrixXd s11 =
      nc.sigma.topLeftCorner(nc.m, nc.m) / static_cast<double>(nc.m);
  auto eig = cmv::clipped_eigenvalues(s11);
  for (double& v : eig) v /= nc.l1;
  const double pa = cmv::imhof_tail(eig, raw.s1 / nc.l1);
  REQUIRE(pv.p_circ == Catch::Approx(1.0 - (1.0 - pa) * (1.0 - pa)).margin(1e-9));
  REQUIRE(pv.p_bullet ==
          Catch::Approx(cmv::chi_square_tail(4, pv.s_bullet)).margin(1e-12));
}

TEST_CASE("numeric engine rejects useless normalizers") {
  auto cov = two_point_cov();
  auto nc = cmv::build_node_covariance(cov, {1.0, 2.0}, 2);
  nc.l1 = 0.0;
  REQUIRE_THROWS_AS(cmv::numeric_pvalues(nc, 1.0, 1.0), cmv::model_error);
}
