#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "doctest.h"
#include "oracles.hpp"
#include "stospec/noise_path.hpp"
#include "stospec/parallel.hpp"

using namespace stospec;

TEST_CASE("sample_path pins the origin and has the expected sample count") {
  const auto w = sample_path(7, {0.01, -1.0, 1.0});
  CHECK(w.size() == 201);
  CHECK(w.at_index(0) == 0.0);
  CHECK(w.at(0.0) == 0.0);
  CHECK(w.t_min() == doctest::Approx(-1.0));
  CHECK(w.t_max() == doctest::Approx(1.0));
}

TEST_CASE("sample_path is a deterministic function of seed and grid") {
  const auto a = sample_path(7, {0.01, -1.0, 1.0});
  const auto b = sample_path(7, {0.01, -1.0, 1.0});
  CHECK(a.values() == b.values());
  const auto c = sample_path(8, {0.01, -1.0, 1.0});
  CHECK(a.values() != c.values());
}

TEST_CASE("sample_path rejects invalid grids") {
  CHECK_THROWS_AS(sample_path(1, {0.0, -1.0, 1.0}), std::invalid_argument);
  CHECK_THROWS_AS(sample_path(1, {-0.1, -1.0, 1.0}), std::invalid_argument);
  CHECK_THROWS_AS(sample_path(1, {0.1, 0.5, 1.0}), std::invalid_argument);
  CHECK_THROWS_AS(sample_path(1, {0.1, -1.0, -0.5}), std::invalid_argument);
}

TEST_CASE("variance of W(1) over an ensemble") {
  // Var(W(1)) = 1; the sample variance of 1e4 normals has sd sqrt(2/(n-1)) ~ sqrt(2)/100.
  std::vector<double> w1(10000);
  for (std::size_t i = 0; i < w1.size(); ++i) {
    w1[i] = sample_path(1000 + i, {0.01, 0.0, 1.0}).at(1.0);
  }
  CHECK(std::abs(oracle::sample_variance(w1) - 1.0) <= 3.0 * std::sqrt(2.0) / 100.0);
}

TEST_CASE("shift algebra") {
  const auto w = sample_path(11, {0.01, -3.0, 3.0});

  SUBCASE("theta_0 is the identity") { CHECK(shift(w, 0.0).values() == w.values()); }

  SUBCASE("reading the shifted path before its origin") {
    const auto s = shift(w, 0.5);
    CHECK(s.at(-0.5) == -w.at(0.5));
    CHECK(s.at_index(0) == 0.0);
  }

  SUBCASE("flow property holds exactly for random grid-aligned shifts") {
    std::mt19937_64 gen(3);
    std::uniform_int_distribution<int> pick(-100, 100);
    for (int trial = 0; trial < 200; ++trial) {
      const double s = pick(gen) * 0.01;
      const double t = pick(gen) * 0.01;
      const auto lhs = shift(shift(w, s), t);
      const auto rhs = shift(w, s + t);
      REQUIRE(lhs.first_index() == rhs.first_index());
      for (std::int64_t k = lhs.first_index(); k <= lhs.last_index(); ++k) {
        REQUIRE(lhs.at_index(k) == rhs.at_index(k));
      }
    }
  }

  SUBCASE("errors") {
    CHECK_THROWS_AS(shift(w, 0.005), std::invalid_argument);
    CHECK_THROWS_AS(shift(w, 3.5), std::out_of_range);
  }
}

TEST_CASE("extend_left keeps materialized values and is history independent") {
  const auto w = sample_path(5, {0.001, -1.0, 2.0});
  const auto once = extend_left(w, 2.0);
  const auto twice = extend_left(extend_left(w, 1.0), 1.0);
  for (std::int64_t k = w.first_index(); k <= w.last_index(); ++k) {
    REQUIRE(once.at_index(k) == w.at_index(k));
  }
  REQUIRE(once.first_index() == twice.first_index());
  CHECK(once.values() == twice.values());
  CHECK(twice.lineage().left_extensions == 2);

  // A path sampled directly on the wide window is identical as well.
  const auto direct = sample_path(5, {0.001, -3.0, 2.0});
  CHECK(direct.values() == once.values());

  const auto back = shift(once, -1.0);
  CHECK(back.at(0.0) == 0.0);
  CHECK_THROWS_AS(extend_left(w, 0.0005), std::invalid_argument);
}

TEST_CASE("increments of shifted paths are stationary (KS at level 0.01)") {
  const double dt = 1e-3;
  const auto w = sample_path(21, {dt, -100.0, 200.0});
  const auto shifted = shift(w, 100.0);
  const std::int64_t n = 100000;
  auto inc_shifted = shifted.increments(0, n);
  auto inc_before = w.increments(-n, 0);
  const double crit1 = oracle::kKsCoefficient01 / std::sqrt(static_cast<double>(n));
  const double d1 = oracle::ks_statistic(inc_shifted, [&](double x) { return oracle::normal_cdf(x, dt); });
  CHECK(d1 < crit1);
  const double crit2 = oracle::kKsCoefficient01 * std::sqrt(2.0 / static_cast<double>(n));
  CHECK(oracle::ks_two_sample(inc_shifted, inc_before) < crit2);
  // Shifting does not alter the stored increments themselves.
  CHECK(shifted.increment(0) == w.increment(100000));
}

TEST_CASE("generation is independent of the worker count") {
  std::vector<std::vector<double>> a(16), b(16);
  parallel_for(16, 1, [&](std::size_t i) { a[i] = sample_path(i, {0.01, -5.0, 5.0}).values(); });
  parallel_for(16, 4, [&](std::size_t i) { b[i] = sample_path(i, {0.01, -5.0, 5.0}).values(); });
  CHECK(a == b);
}

TEST_CASE("sub-grid reads interpolate linearly") {
  const auto w = sample_path(2, {0.1, 0.0, 1.0});
  CHECK(w.at(0.25) == doctest::Approx(0.5 * (w.at(0.2) + w.at(0.3))));
}

TEST_CASE("path CSV has a header and full precision") {
  const auto w = sample_path(3, {0.5, -0.5, 0.5});
  std::ostringstream os;
  write_path_csv(os, w);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "t,w");
  int rows = 0;
  while (std::getline(is, line)) {
    const auto comma = line.find(',');
    REQUIRE(comma != std::string::npos);
    const double t = std::stod(line.substr(0, comma));
    const double v = std::stod(line.substr(comma + 1));
    CHECK(v == w.at(t));
    ++rows;
  }
  CHECK(rows == 3);
}
