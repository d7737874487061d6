#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "doctest.h"
#include "oracles.hpp"
#include "stospec/pitchfork.hpp"

using namespace stospec;

TEST_CASE("deterministic runs match the Bernoulli closed form") {
  const auto w = sample_path(1, {1e-3, 0.0, 1.0});
  const double x1 = flow({0.0, 0.0}, w, 1.0, 0.0, 1.0);
  CHECK(std::abs(x1 - oracle::bernoulli_cubic(0.0, 1.0, 1.0)) < 1e-4);
  for (double alpha : {-2.0, 0.5, 1.0}) {
    CHECK(flow({alpha, 0.0}, w, 0.0, 0.0, 1.0) == 0.0);
  }
}

TEST_CASE("splitting error against the closed form is first order") {
  for (double alpha : {-1.0, 1.0}) {
    double err[2];
    int i = 0;
    for (double dt : {2e-3, 1e-3}) {
      const auto w = sample_path(1, {dt, 0.0, 2.0});
      const auto tr = integrate({alpha, 0.0}, w, 1.5, 0.0, 2.0);
      double e = 0.0;
      for (std::size_t k = 0; k < tr.times.size(); ++k) {
        e = std::max(e, std::abs(tr.states[k] - oracle::bernoulli_cubic(alpha, 1.5, tr.times[k])));
      }
      err[i++] = e;
    }
    CHECK(err[0] / err[1] > 1.8);
    CHECK(err[1] < 5e-3);
  }
}

TEST_CASE("global exponential attraction for alpha < 0") {
  const PitchforkParams p{-1.0, 1.0};
  const auto w = sample_path(3, {1e-3, 0.0, 10.0});
  const auto a = integrate(p, w, -2.0, 0.0, 10.0);
  const auto b = integrate(p, w, 2.0, 0.0, 10.0);
  for (std::size_t k = 0; k < a.times.size(); ++k) {
    REQUIRE(std::abs(a.states[k] - b.states[k]) <= 4.0 * std::exp(-a.times[k]) * (1 + 1e-12));
  }
}

TEST_CASE("contraction margin shrinks when dt is halved") {
  const PitchforkParams p{-0.5, 1.0};
  auto margin = [&](double dt) {
    const auto w = sample_path(4, {dt, 0.0, 5.0});
    const auto a = integrate(p, w, -3.0, 0.0, 5.0);
    const auto b = integrate(p, w, 1.0, 0.0, 5.0);
    double m = 0.0;
    for (std::size_t k = 0; k < a.times.size(); ++k) {
      m = std::max(m, std::abs(a.states[k] - b.states[k]) - 4.0 * std::exp(p.alpha * a.times[k]));
    }
    return m;
  };
  const double m1 = margin(1e-3);
  const double m2 = margin(5e-4);
  CHECK(m1 <= 1e-12);
  CHECK(m2 <= m1 / 1.8 + 1e-12);
}

TEST_CASE("cocycle property of the numerical flow is exact") {
  const PitchforkParams p{0.7, 0.8};
  const auto w = sample_path(9, {1e-3, -2.0, 6.0});
  std::mt19937_64 gen(1);
  std::uniform_int_distribution<int> pick(1, 2000);
  for (int trial = 0; trial < 50; ++trial) {
    const double s = pick(gen) * 1e-3;
    const double t = pick(gen) * 1e-3;
    const double x = 0.01 * pick(gen) - 10.0;
    const double lhs = flow(p, w, x, 0.0, t + s);
    const double mid = flow(p, w, x, 0.0, s);
    const double rhs = flow(p, shift(w, s), mid, 0.0, t);
    REQUIRE(lhs == rhs);
  }
}

TEST_CASE("order preservation under shared noise") {
  const PitchforkParams p{1.0, 1.0};
  const auto w = sample_path(12, {1e-3, 0.0, 3.0});
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int i = 0; i < 1000; ++i) {
    double x = u(gen), y = u(gen);
    if (x > y) std::swap(x, y);
    if (y - x < 1e-6) continue;
    const auto a = integrate(p, w, x, 0.0, 3.0);
    const auto b = integrate(p, w, y, 0.0, 3.0);
    for (std::size_t k = 0; k < a.states.size(); k += 100) REQUIRE(a.states[k] < b.states[k]);
    REQUIRE(a.states.back() < b.states.back());
  }
}

TEST_CASE("integrate validates its window") {
  const auto w = sample_path(1, {1e-3, 0.0, 1.0});
  CHECK_THROWS_AS(integrate({0.0, 1.0}, w, 0.0, 0.5, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(integrate({0.0, 1.0}, w, 0.0, -0.5, 0.5), std::out_of_range);
  CHECK_THROWS_AS(integrate({0.0, 1.0}, w, 0.0, 0.0, 1.5), std::out_of_range);
  CHECK_THROWS_AS(integrate({0.0, -1.0}, w, 0.0, 0.0, 1.0), std::invalid_argument);
}

TEST_CASE("pullback fixed point") {
  SUBCASE("alpha = -1 converges at modest depth") {
    const auto w = sample_path(5, {1e-3, 0.0, 10.0});
    const auto fp = pullback_fixed_point({-1.0, 1.0}, w, 10.0, 1e-8);
    CHECK(fp.gap <= 1e-8);
    CHECK(fp.depth <= 64.0);
    CHECK(fp.values.size() == 10001);
  }
  SUBCASE("alpha = 1 converges as well") {
    const auto w = sample_path(6, {1e-3, 0.0, 10.0});
    const auto fp = pullback_fixed_point({1.0, 1.0}, w, 10.0, 1e-8);
    CHECK(fp.gap <= 1e-8);
    CHECK(fp.depth >= 1.0);
    CHECK(fp.path.t_min() <= -fp.depth);
  }
  SUBCASE("fixed-point identity a(t) = phi(t, w) a(0)") {
    const double tol = 1e-9;
    const PitchforkParams p{0.5, 1.0};
    const auto w = sample_path(7, {1e-3, 0.0, 8.0});
    const auto fp = pullback_fixed_point(p, w, 8.0, tol);
    const auto tr = integrate(p, fp.path, fp.values.front(), 0.0, 8.0);
    double m = 0.0;
    for (std::size_t k = 0; k < tr.states.size(); ++k) m = std::max(m, std::abs(tr.states[k] - fp.values[k]));
    CHECK(m <= 10 * tol);
  }
  SUBCASE("window starting before 0") {
    const auto w = sample_path(8, {1e-3, 0.0, 2.0});
    PullbackOptions opt;
    opt.t_start = -3.0;
    const auto fp = pullback_fixed_point({-0.25, 1.0}, w, 2.0, 1e-10, opt);
    CHECK(fp.t_start() == doctest::Approx(-3.0));
    CHECK(fp.t_end() == doctest::Approx(2.0));
    const auto direct = pullback_fixed_point({-0.25, 1.0}, fp.path, 2.0, 1e-10);
    CHECK(std::abs(fp.at_index(1000) - direct.at_index(1000)) < 2e-10);
  }
  SUBCASE("sigma = 0 is rejected") {
    const auto w = sample_path(8, {1e-3, 0.0, 2.0});
    CHECK_THROWS_AS(pullback_fixed_point({1.0, 0.0}, w, 2.0, 1e-8), std::invalid_argument);
  }
}

TEST_CASE("pullback gap is monotone in depth") {
  const PitchforkParams p{1.0, 1.0};
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto w = sample_path(seed, {1e-3, -64.0, 5.0});
    double prev = std::numeric_limits<double>::infinity();
    for (double depth = 1.0; depth <= 64.0; depth *= 2.0) {
      const double g = pullback_gap(p, w, depth, 0.0, 5.0, default_bracket(p));
      CHECK(g <= prev);
      prev = g;
    }
  }
}

TEST_CASE("Ornstein-Uhlenbeck fixed point") {
  SUBCASE("zero noise") {
    const auto w = sample_path(1, {0.01, -30.0, 0.0});
    CHECK(ou_fixed_point(1.0, 0.0, w).value == 0.0);
  }
  SUBCASE("ensemble variance matches sigma^2 / (2 alpha)") {
    const double alpha = 1.0, sigma = 1.0;
    std::vector<double> z(2000);
    for (std::size_t i = 0; i < z.size(); ++i) {
      z[i] = ou_fixed_point(alpha, sigma, sample_path(500 + i, {0.01, -20.0, 0.0})).value;
    }
    const double target = sigma * sigma / (2 * alpha);
    const double se = target * std::sqrt(2.0 / (z.size() - 1));
    CHECK(std::abs(oracle::sample_variance(z) - target) < 3 * se + 0.01 * target);
  }
  SUBCASE("flow identity z(theta_1 w) = e^{-alpha} z(w) + sigma int_0^1 e^{-alpha(1-s)} dW") {
    const double alpha = 0.8, sigma = 1.3, dt = 1e-3;
    const auto w = sample_path(77, {dt, -40.0, 1.0});
    const auto z0 = ou_fixed_point(alpha, sigma, w);
    const auto z1 = ou_fixed_point(alpha, sigma, shift(w, 1.0));
    double stoch = 0.0;
    for (int k = 0; k < 1000; ++k) stoch += std::exp(-alpha * (1.0 - k * dt)) * w.increment(k);
    CHECK(z1.value == doctest::Approx(std::exp(-alpha) * z0.value + sigma * stoch).epsilon(1e-12));
    CHECK(z0.tail_bound <= 1e-8);
  }
  SUBCASE("short left window is rejected") {
    const auto w = sample_path(1, {0.01, -1.0, 0.0});
    CHECK_THROWS_AS(ou_fixed_point(1.0, 1.0, w), std::out_of_range);
  }
}

TEST_CASE("uniform attractivity probe") {
  SUBCASE("alpha = -1 decays at least like e^{-t} delta") {
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8};
    const std::vector<double> times{0.0, 0.5, 1.0, 2.0, 4.0, 8.0};
    const auto probe = uniform_attractivity_probe({-1.0, 1.0}, seeds, 1.0, times);
    CHECK(probe.sup[0] == doctest::Approx(1.0));
    for (std::size_t j = 0; j < times.size(); ++j) {
      CHECK(probe.sup[j] <= std::exp(-times[j]) * (1 + 1e-12));
    }
  }
  SUBCASE("zero radius") {
    const auto probe = uniform_attractivity_probe({1.0, 1.0}, {1, 2}, 0.0, {0.0, 1.0});
    CHECK(probe.sup == std::vector<double>{0.0, 0.0});
  }
  SUBCASE("worker count does not change results") {
    const std::vector<std::uint64_t> seeds{11, 12, 13, 14, 15};
    ProbeOptions one, four;
    four.workers = 4;
    const auto a = uniform_attractivity_probe({1.0, 1.0}, seeds, 0.5, {1.0, 3.0}, one);
    const auto b = uniform_attractivity_probe({1.0, 1.0}, seeds, 0.5, {1.0, 3.0}, four);
    CHECK(a.per_path == b.per_path);
  }
}

TEST_CASE("csv emitters") {
  const auto w = sample_path(1, {0.5, 0.0, 1.0});
  std::ostringstream os;
  write_trajectory_csv(os, integrate({0.0, 1.0}, w, 1.0, 0.0, 1.0));
  CHECK(os.str().rfind("t,x\n", 0) == 0);
}
