// Martingale transform of the cumulative residual process: the kernel score
// estimate, the recursive orthogonalization, the transformed statistic, and
// the Brownian-motion Cramer-von Mises reference law.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "cmv/dgp.hpp"
#include "cmv/khmaladze.hpp"
#include "cmv/residual.hpp"

namespace {

cmv::MarkSeries manual_marks(std::vector<double> lag, std::vector<double> w1,
                             std::vector<double> dw1) {
  cmv::MarkSeries ms;
  ms.n = static_cast<int>(lag.size());
  ms.d = 1;
  ms.lag = std::move(lag);
  ms.w1 = std::move(w1);
  ms.w2 = ms.w1;
  ms.dw1 = std::move(dw1);
  ms.dw2 = ms.dw1;
  return ms;
}

// Random marks with lag ties plus a hand-filled score estimate, for
// exercising the transform with full control over every ingredient.
struct Rig {
  cmv::MarkSeries ms;
  cmv::ScoreEstimate se;
};

Rig random_rig(int n, int d, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> grid(0, n / 3);
  Rig rig;
  rig.ms.n = n;
  rig.ms.d = d;
  for (int i = 0; i < n; ++i) {
    rig.ms.lag.push_back(0.5 * grid(eng));
    rig.ms.w1.push_back(normal(eng));
    rig.ms.w2.push_back(normal(eng) - 0.2);
  }
  rig.ms.dw1.assign(static_cast<std::size_t>(n) * d, 0.0);
  rig.ms.dw2.assign(static_cast<std::size_t>(n) * d, 0.0);
  rig.se.n = n;
  rig.se.d = d;
  rig.se.bandwidth = 0.1;
  for (int i = 0; i < n * d; ++i) {
    rig.se.g1.push_back(normal(eng));
    rig.se.g2.push_back(normal(eng));
  }
  return rig;
}

// Direct O(n^2 d) evaluation of the transform definition at every sorted
// position, used as the reference for the single-pass implementation.
std::vector<double> brute_transform(const cmv::MarkSeries& ms,
                                    const cmv::ScoreEstimate& se,
                                    const cmv::TransformState& ts, int k,
                                    const std::vector<double>& atoms) {
  const std::vector<double>& w = k == 1 ? ms.w1 : ms.w2;
  const double nn = static_cast<double>(ms.n);
  std::vector<double> out(static_cast<std::size_t>(ms.n), 0.0);
  for (int p = 0; p < ms.n; ++p) {
    const double x =
        ms.lag[static_cast<std::size_t>(ts.order[static_cast<std::size_t>(p)])];
    double acc = 0.0;
    for (int i = 0; i < ms.n; ++i) {
      double corr = 0.0;
      for (int r = 0; r < ts.included[k - 1]; ++r) {
        const int j = ts.order[static_cast<std::size_t>(r)];
        const double lj = ms.lag[static_cast<std::size_t>(j)];
        if (lj > x || lj > ms.lag[static_cast<std::size_t>(i)]) continue;
        const double wj = w[static_cast<std::size_t>(j)];
        double bg = 0.0;
        for (int c = 0; c < ms.d; ++c)
          bg += ts.b[k - 1][static_cast<std::size_t>(r) * ms.d + c] *
                se.g_at(k, i, c);
        corr += (wj * wj / nn) * bg;
      }
      const double ind =
          ms.lag[static_cast<std::size_t>(i)] <= x ? 1.0 : 0.0;
      acc += atoms[static_cast<std::size_t>(i)] * (ind - corr);
    }
    out[static_cast<std::size_t>(p)] = acc;
  }
  return out;
}

}  // namespace

TEST_CASE("score estimate is exact when increments are proportional") {
  // dGamma_i = 0.7 * dK_i pointwise makes the kernel ratio 0.7 everywhere,
  // independent of the bandwidth.
  const auto ms = manual_marks({0.0, 1.0}, {1.0, 2.0}, {-0.7, -2.8});
  const auto se = cmv::estimate_g(ms, 1.0);
  REQUIRE(se.g_at(1, 0, 0) == Catch::Approx(0.7).epsilon(1e-12));
  REQUIRE(se.g_at(1, 1, 0) == Catch::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("score estimate matches the two-point kernel ratio") {
  const auto ms = manual_marks({0.0, 1.0}, {1.0, 1.0}, {-3.0, -5.0});
  const auto se = cmv::estimate_g(ms, 1.0);
  const double sd = std::sqrt(0.5);  // sample sd of {0, 1}
  const double h = sd * std::pow(2.0, -0.2);
  REQUIRE(se.bandwidth == Catch::Approx(h).epsilon(1e-12));
  const double k0 = 1.0;  // common normalizing factor cancels in the ratio
  const double k1 = std::exp(-0.5 / (h * h));
  // At lag 0: weights k0 on the own point and k1 on the far one.
  REQUIRE(se.g_at(1, 0, 0) ==
          Catch::Approx((3.0 * k0 + 5.0 * k1) / (k0 + k1)).epsilon(1e-10));
  REQUIRE(se.g_at(1, 1, 0) ==
          Catch::Approx((3.0 * k1 + 5.0 * k0) / (k0 + k1)).epsilon(1e-10));
}

TEST_CASE("score estimate rejects degenerate inputs") {
  const auto ms = manual_marks({2.0, 2.0}, {1.0, 1.0}, {-1.0, -1.0});
  REQUIRE_THROWS_AS(cmv::estimate_g(ms), cmv::model_error);
  const auto ok = manual_marks({0.0, 1.0}, {1.0, 1.0}, {-1.0, -1.0});
  REQUIRE_THROWS_AS(cmv::estimate_g(ok, 0.0), cmv::config_error);
}

TEST_CASE("zero scores leave the cumulative process untouched") {
  std::mt19937_64 eng(17u);
  std::normal_distribution<double> normal(0.0, 1.0);
  cmv::MarkSeries ms;
  ms.n = 50;
  ms.d = 2;
  for (int i = 0; i < ms.n; ++i) {
    ms.lag.push_back(normal(eng));  // continuous, no ties
    ms.w1.push_back(normal(eng));
    ms.w2.push_back(normal(eng));
  }
  ms.dw1.assign(100, 0.0);
  ms.dw2.assign(100, 0.0);
  const auto se = cmv::estimate_g(ms);
  for (double v : se.g1) REQUIRE(v == 0.0);

  const auto ts = cmv::build_transform(ms, se, 1.0);
  REQUIRE(ts.included[0] == ms.n);
  REQUIRE(ts.n_excluded(1) == 0);
  for (int k = 1; k <= 2; ++k) {
    const auto tv = cmv::transform(ms, se, ts, k);
    const auto sp = cmv::cumulative_process(ms, k);
    for (int p = 0; p < ms.n; ++p) {
      REQUIRE(tv[static_cast<std::size_t>(p)] ==
              Catch::Approx(sp.val[static_cast<std::size_t>(p)]).margin(1e-12));
    }
  }
}

TEST_CASE("single pass transform matches the quadratic-time definition") {
  for (std::uint64_t seed : {3u, 4u}) {
    for (int d : {1, 2}) {
      const auto rig = random_rig(60, d, seed);
      const auto ts = cmv::build_transform(rig.ms, rig.se, 0.95, 1e10);
      std::mt19937_64 eng(seed + 100);
      std::normal_distribution<double> normal(0.0, 1.0);
      std::vector<double> atoms(static_cast<std::size_t>(rig.ms.n));
      for (double& a : atoms) a = normal(eng);
      for (int k = 1; k <= 2; ++k) {
        const auto fast = cmv::transform_atoms(rig.ms, rig.se, ts, k, atoms);
        const auto slow = brute_transform(rig.ms, rig.se, ts, k, atoms);
        for (int p = 0; p < rig.ms.n; ++p) {
          REQUIRE(fast[static_cast<std::size_t>(p)] ==
                  Catch::Approx(slow[static_cast<std::size_t>(p)]).margin(1e-11));
        }
      }
    }
  }
}

TEST_CASE("identically zero score coordinates drop out of the inversion") {
  // A parameter that moves only one moment has an exactly zero score column
  // in the other component. Padding a one-dimensional system with such a
  // column must not change the transform; a full-space inversion would see a
  // singular trailing matrix instead.
  const auto base = random_rig(60, 1, 21u);
  Rig padded;
  padded.ms = base.ms;
  padded.ms.d = 2;
  padded.ms.dw1.assign(120, 0.0);
  padded.ms.dw2.assign(120, 0.0);
  padded.se.n = 60;
  padded.se.d = 2;
  padded.se.bandwidth = base.se.bandwidth;
  for (int i = 0; i < 60; ++i) {
    padded.se.g1.push_back(base.se.g_at(1, i, 0));
    padded.se.g1.push_back(0.0);
    padded.se.g2.push_back(0.0);
    padded.se.g2.push_back(base.se.g_at(2, i, 0));
  }
  const auto ts1 = cmv::build_transform(base.ms, base.se, 0.95, 1e10);
  const auto ts2 = cmv::build_transform(padded.ms, padded.se, 0.95, 1e10);
  for (int k = 1; k <= 2; ++k) {
    REQUIRE(ts2.included[k - 1] == ts1.included[k - 1]);
    const auto tv1 = cmv::transform(base.ms, base.se, ts1, k);
    const auto tv2 = cmv::transform(padded.ms, padded.se, ts2, k);
    for (int p = 0; p < 60; ++p) {
      REQUIRE(tv2[static_cast<std::size_t>(p)] ==
              Catch::Approx(tv1[static_cast<std::size_t>(p)]).margin(1e-12));
    }
  }
}

TEST_CASE("included correction rows invert the trailing information matrix") {
  const auto rig = random_rig(40, 1, 9u);
  const auto ts = cmv::build_transform(rig.ms, rig.se, 1.0, 1e12);
  const double nn = 40.0;
  for (int r = 0; r < ts.included[0]; ++r) {
    const int i = ts.order[static_cast<std::size_t>(r)];
    const double li = rig.ms.lag[static_cast<std::size_t>(i)];
    double a = 0.0;  // trailing tie-inclusive scalar information
    for (int q = 0; q < rig.ms.n; ++q) {
      if (rig.ms.lag[static_cast<std::size_t>(q)] < li) continue;
      const double g = rig.se.g_at(1, q, 0);
      const double wq = rig.ms.w1[static_cast<std::size_t>(q)];
      a += wq * wq * g * g / nn;
    }
    const double expect = rig.se.g_at(1, i, 0) / a;
    REQUIRE(ts.b[0][static_cast<std::size_t>(r)] ==
            Catch::Approx(expect).epsilon(1e-9));
  }
}

TEST_CASE("transform annihilates estimated score directions") {
  const auto x = cmv::simulate_dgp(cmv::dgp_by_name("m0"), 150, 77u);
  const auto ms = cmv::compute_marks(cmv::make_model_by_name("arch1", 0.01), {1.1, 0.5}, x);
  const auto se = cmv::estimate_g(ms);
  const auto ts = cmv::build_transform(ms, se, 0.9);
  std::mt19937_64 eng(78u);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double nn = static_cast<double>(ms.n);
  for (int k = 1; k <= 2; ++k) {
    const std::vector<double>& w = k == 1 ? ms.w1 : ms.w2;
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> c(static_cast<std::size_t>(ms.d));
      for (double& v : c) v = normal(eng);
      std::vector<double> atoms(static_cast<std::size_t>(ms.n));
      for (int i = 0; i < ms.n; ++i) {
        double cg = 0.0;
        for (int j = 0; j < ms.d; ++j)
          cg += c[static_cast<std::size_t>(j)] * se.g_at(k, i, j);
        const double wi = w[static_cast<std::size_t>(i)];
        atoms[static_cast<std::size_t>(i)] = wi * wi * cg / nn;
      }
      const auto tv = cmv::transform_atoms(ms, se, ts, k, atoms);
      for (int p = 0; p < ts.included[k - 1]; ++p) {
        REQUIRE(std::abs(tv[static_cast<std::size_t>(p)]) < 1e-8);
      }
    }
  }
}

TEST_CASE("transformed statistic matches a direct accumulation") {
  const auto rig = random_rig(50, 1, 21u);
  const auto ts = cmv::build_transform(rig.ms, rig.se, 0.95, 1e10);
  const auto tv = cmv::transform(rig.ms, rig.se, ts, 1);
  const auto out = cmv::transformed_cvm(tv, rig.ms, ts, 1);

  double gamma = 0.0;
  for (double v : rig.ms.w1) gamma += v * v / 50.0;
  double acc = 0.0, mass = 0.0;
  for (int p = 0; p < ts.included[0]; ++p) {
    const int i = ts.order[static_cast<std::size_t>(p)];
    const double wi = rig.ms.w1[static_cast<std::size_t>(i)];
    acc += tv[static_cast<std::size_t>(p)] * tv[static_cast<std::size_t>(p)] *
           wi * wi;
    mass += wi * wi / 50.0;
  }
  REQUIRE(out.s == Catch::Approx(acc / (50.0 * gamma * gamma)).epsilon(1e-12));
  REQUIRE(out.u0 == Catch::Approx(mass / gamma).epsilon(1e-12));
  REQUIRE(out.u0 > 0.0);
  REQUIRE(out.u0 <= 1.0 + 1e-12);
  REQUIRE(out.n_excluded == ts.m_x0 - ts.included[0]);
}

TEST_CASE("transformed statistic ignores the scale of the data") {
  const auto x = cmv::simulate_dgp(cmv::dgp_by_name("m0"), 200, 31u);
  const auto model = cmv::make_model_by_name("arch1", 0.01);

  auto stat_for = [&](const std::vector<double>& series,
                      const cmv::ParamVector& theta) {
    const auto ms = cmv::compute_marks(model, theta, series);
    const auto se = cmv::estimate_g(ms);
    // Generous condition cap so both scalings include the same jump set.
    const auto ts = cmv::build_transform(ms, se, 0.9, 1e14);
    const auto t1 = cmv::transform(ms, se, ts, 1);
    const auto t2 = cmv::transform(ms, se, ts, 2);
    return std::pair{cmv::transformed_cvm(t1, ms, ts, 1),
                     cmv::transformed_cvm(t2, ms, ts, 2)};
  };

  const double c = 3.0;
  std::vector<double> scaled = x;
  for (double& v : scaled) v *= c;
  // Scaling the data by c maps an arch model (omega, alpha) to
  // (c^2 omega, alpha); the residual field scales accordingly.
  const auto base = stat_for(x, {1.1, 0.5});
  const auto big = stat_for(scaled, {c * c * 1.1, 0.5});
  REQUIRE(big.first.s == Catch::Approx(base.first.s).epsilon(1e-8));
  REQUIRE(big.second.s == Catch::Approx(base.second.s).epsilon(1e-8));
  REQUIRE(big.first.u0 == Catch::Approx(base.first.u0).epsilon(1e-8));
}

TEST_CASE("transform guards its configuration") {
  const auto rig = random_rig(30, 1, 41u);
  REQUIRE_THROWS_AS(cmv::build_transform(rig.ms, rig.se, 0.0), cmv::config_error);
  REQUIRE_THROWS_AS(cmv::build_transform(rig.ms, rig.se, 1.4), cmv::config_error);
  const auto ts = cmv::build_transform(rig.ms, rig.se, 0.95, 1e10);
  REQUIRE_THROWS_AS(
      cmv::transform_atoms(rig.ms, rig.se, ts, 3, std::vector<double>(30, 0.0)),
      cmv::config_error);
  REQUIRE_THROWS_AS(
      cmv::transform_atoms(rig.ms, rig.se, ts, 1, std::vector<double>(29, 0.0)),
      cmv::config_error);

  auto zeros = rig.ms;
  std::fill(zeros.w1.begin(), zeros.w1.end(), 0.0);
  const auto tv = cmv::transform(zeros, rig.se, ts, 1);
  REQUIRE_THROWS_AS(cmv::transformed_cvm(tv, zeros, ts, 1), cmv::model_error);
}

TEST_CASE("squared Brownian motion tail matches tabulated critical values") {
  REQUIRE(cmv::bm_cvm_pvalue(1.2) == Catch::Approx(0.10).margin(1.5e-3));
  REQUIRE(cmv::bm_cvm_pvalue(1.657) == Catch::Approx(0.05).margin(1.5e-3));
  REQUIRE(cmv::bm_cvm_pvalue(2.8) == Catch::Approx(0.01).margin(1.5e-3));
  REQUIRE(cmv::bm_cvm_pvalue(0.0) == 1.0);
  REQUIRE(cmv::bm_cvm_pvalue(-2.0) == 1.0);
  double prev = 1.0;
  for (double s = 0.2; s < 6.0; s += 0.2) {
    const double p = cmv::bm_cvm_pvalue(s);
    REQUIRE(p < prev);
    prev = p;
  }
  REQUIRE(cmv::bm_cvm_pvalue(8.0) < 1e-4);
  REQUIRE(cmv::bm_cvm_eigenvalues().size() == 200);
}
