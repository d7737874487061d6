#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "doctest.h"
#include "oracles.hpp"
#include "stospec/cocycle.hpp"

using namespace stospec;

namespace {

CocycleSpec iid(std::vector<Eigen::MatrixXd> gens, std::vector<double> probs) {
  return CocycleSpec{MatrixIid{std::move(gens), std::move(probs)}};
}

Eigen::MatrixXd mat2(double a, double b, double c, double d) {
  Eigen::MatrixXd m(2, 2);
  m << a, b, c, d;
  return m;
}

Eigen::MatrixXd rotation(double angle) {
  return mat2(std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle));
}

std::vector<std::uint64_t> seed_range(std::uint64_t first, std::size_t n) {
  std::vector<std::uint64_t> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = first + i;
  return s;
}

// Independent membership test: which copy j of which U_n contains p (0 = none).
std::pair<int, int> locate(const RotationTower& tower, std::uint64_t p) {
  for (const auto& a : tower.arcs()) {
    for (int j = 0; j < 3; ++j) {
      const std::uint64_t lo = a.start + static_cast<std::uint64_t>(j) * tower.rotation();
      if (p - lo < a.length) return {a.n, j};
    }
  }
  return {0, 0};
}

}  // namespace

TEST_CASE("single generator diag(2, 1/2) gives diag(2^n, 2^-n)") {
  const auto spec = iid({mat2(2, 0, 0, 0.5)}, {1.0});
  std::vector<double> schedule;
  for (int n = 1; n <= 40; ++n) schedule.push_back(n);
  const auto s = evaluate(spec, {1, 0.0}, schedule);
  for (int n = 1; n <= 40; ++n) {
    const auto m = s.factors[n - 1].matrix();
    CHECK(m(0, 0) == doctest::Approx(std::ldexp(1.0, n)).epsilon(1e-13));
    CHECK(m(1, 1) == doctest::Approx(std::ldexp(1.0, -n)).epsilon(1e-13));
    CHECK(m(0, 1) == 0.0);
    CHECK(s.lambda_max(n - 1) == doctest::Approx(std::log(2.0)).epsilon(1e-13));
    CHECK(s.lambda_min(n - 1) == doctest::Approx(-std::log(2.0)).epsilon(1e-13));
  }
}

TEST_CASE("log-QR survives products far beyond double range") {
  Eigen::MatrixXd a = mat2(-1, 0, 0, 1);
  const auto s = evaluate(CocycleSpec{MatrixFlow{a}}, {0, 0.0}, {1000.0});
  CHECK(s.log_singular_values[0](0) == doctest::Approx(1000.0).epsilon(1e-12));
  CHECK(s.log_singular_values[0](1) == doctest::Approx(-1000.0).epsilon(1e-12));

  // Rotated constant cocycle: singular directions are the rotated axes.
  const Eigen::MatrixXd q = rotation(0.4);
  const auto r = evaluate(CocycleSpec{MatrixFlow{q * a * q.transpose()}}, {0, 0.0}, {50.0});
  CHECK(r.log_singular_values[0](0) == doctest::Approx(50.0).epsilon(1e-10));
  CHECK(r.log_singular_values[0](1) == doctest::Approx(-50.0).epsilon(1e-10));
  const Eigen::MatrixXd v = r.factors[0].right_singular_vectors();
  CHECK(std::abs(std::abs(v.col(0).dot(q.col(1))) - 1.0) < 1e-12);
  CHECK(std::abs(std::abs(v.col(1).dot(q.col(0))) - 1.0) < 1e-12);
}

TEST_CASE("pitchfork cocycle never exceeds exp(alpha t)") {
  for (double alpha : {-1.0, 0.0, 1.0}) {
    const CocycleSpec spec{PitchforkLinearization{{alpha, 1.0}}};
    for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
      const auto s = evaluate(spec, {seed, 0.0}, {0.5, 1.0, 2.0, 5.0, 10.0});
      for (std::size_t k = 0; k < s.times.size(); ++k) {
        REQUIRE(s.log_singular_values[k](0) <= alpha * s.times[k]);
      }
    }
  }
}

TEST_CASE("rotation tower") {
  const RotationTower tower(50);
  REQUIRE(tower.arcs().size() == 49);
  CHECK(tower.verify_disjoint());
  CHECK(tower.rotation() % 2 == 1);

  SUBCASE("multipliers after entering U_n are 1/n, n, 1/n by orbit tracing") {
    const CocycleSpec spec{tower};
    const std::uint64_t seed = 17;
    const std::uint64_t base = RotationTower::base_point(seed);
    for (const auto& arc : tower.arcs()) {
      // Walk the orbit of the base point until it lands in U_n.
      std::uint64_t p = base;
      std::int64_t k = 0;
      while (p - arc.start >= arc.length) {
        p += tower.rotation();
        ++k;
        REQUIRE(k < 50'000'000);
      }
      CHECK(locate(tower, p) == std::make_pair(arc.n, 0));
      CHECK(locate(tower, p + tower.rotation()) == std::make_pair(arc.n, 1));
      CHECK(locate(tower, p + 2 * tower.rotation()) == std::make_pair(arc.n, 2));
      const auto s = evaluate(spec, {seed, static_cast<double>(k)}, {1.0, 2.0, 3.0});
      const double l1 = s.factors[0].log_diag()(0);
      const double l2 = s.factors[1].log_diag()(0);
      const double l3 = s.factors[2].log_diag()(0);
      CHECK(l1 == doctest::Approx(-std::log(arc.n)));
      CHECK(l2 - l1 == doctest::Approx(std::log(arc.n)));
      CHECK(l3 - l2 == doctest::Approx(-std::log(arc.n)));
    }
  }

  SUBCASE("arc lengths follow min(1/n^3, gap/4)") {
    for (const auto& a : tower.arcs()) {
      const double frac = static_cast<double>(a.length) * 0x1.0p-64;
      CHECK(frac <= 1.0 / (static_cast<double>(a.n) * a.n * a.n) * (1 + 1e-12));
      CHECK(frac > 0.0);
    }
  }

  SUBCASE("max one-step log-norm grows with the ensemble") {
    const auto norms = onestep_log_norms(CocycleSpec{tower}, seed_range(0, 200000));
    for (std::size_t i = 1; i < norms.ladder_upper.size(); ++i) {
      CHECK(norms.ladder_upper[i] >= norms.ladder_upper[i - 1]);
    }
    CHECK(norms.ladder_upper.back() > norms.ladder_upper.front());
    CHECK(norms.max_log_norm <= std::log(50.0) + 1e-12);
    CHECK_FALSE(norms.bounded_above);
  }

  SUBCASE("FTLE stays near zero for T >= 2") {
    const auto e = ftle_ensemble(CocycleSpec{tower}, seed_range(0, 20000), 10.0);
    CHECK(e.max_lmax() <= 1e-12);
  }
}

TEST_CASE("cocycle identity Phi(t+s, w) = Phi(t, theta_s w) Phi(s, w)") {
  SUBCASE("pitchfork, scalar, relative error 1e-8") {
    const CocycleSpec spec{PitchforkLinearization{{0.5, 1.0}, 1e-3, 1e-10}};
    for (double s : {0.5, 1.0, 3.0}) {
      for (double t : {1.0, 4.0}) {
        const auto whole = evaluate(spec, {9, 0.0}, {s, s + t});
        const auto tail = evaluate(spec, {9, s}, {t});
        const double lhs = whole.factors[1].log_diag()(0);
        const double rhs = tail.factors[0].log_diag()(0) + whole.factors[0].log_diag()(0);
        CHECK(std::abs(std::expm1(lhs - rhs)) <= 1e-8);
      }
    }
  }
  SUBCASE("i.i.d. matrices, relative error 1e-6") {
    const auto spec = iid({mat2(1.5, 0.7, 0.0, 0.6), rotation(1.1) * 0.9, mat2(0.3, 0, 2.0, 1.2)},
                          {0.3, 0.3, 0.4});
    for (int s : {1, 5, 17}) {
      for (int t : {3, 20}) {
        const auto whole = evaluate(spec, {4, 0.0}, {double(s), double(s + t)});
        const auto tail = evaluate(spec, {4, double(s)}, {double(t)});
        const Eigen::MatrixXd lhs = whole.factors[1].matrix();
        const Eigen::MatrixXd rhs = tail.factors[0].matrix() * whole.factors[0].matrix();
        CHECK((lhs - rhs).norm() <= 1e-6 * lhs.norm());
      }
    }
  }
  SUBCASE("non-normal flow") {
    const CocycleSpec spec{MatrixFlow{mat2(-0.5, 2.0, 0.0, 0.3)}};
    const auto whole = evaluate(spec, {0, 0.0}, {2.5, 6.0});
    const auto tail = evaluate(spec, {0, 2.5}, {3.5});
    const Eigen::MatrixXd lhs = whole.factors[1].matrix();
    const Eigen::MatrixXd rhs = tail.factors[0].matrix() * whole.factors[0].matrix();
    CHECK((lhs - rhs).norm() <= 1e-6 * lhs.norm());
    // Closed form for an upper triangular generator [[a, b], [0, c]].
    const double ea = std::exp(-0.5 * 6.0), ec = std::exp(0.3 * 6.0);
    const Eigen::MatrixXd exact = mat2(ea, 2.0 * (ea - ec) / (-0.5 - 0.3), 0.0, ec);
    CHECK((lhs - exact).norm() <= 1e-10 * exact.norm());
  }
}

TEST_CASE("directional rates lie between lambda_min and lambda_max") {
  const auto spec = iid({mat2(1.5, 0.7, 0.0, 0.6), rotation(1.1) * 0.9, mat2(0.3, 0, 2.0, 1.2)},
                        {0.3, 0.3, 0.4});
  std::mt19937_64 gen(5);
  std::normal_distribution<double> n01;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = evaluate(spec, {seed, 0.0}, {30.0});
    for (int i = 0; i < 100; ++i) {
      Eigen::VectorXd x(2);
      x << n01(gen), n01(gen);
      const double rate = s.factors[0].log_growth(x) / 30.0;
      REQUIRE(rate <= s.lambda_max(0) + 1e-12);
      REQUIRE(rate >= s.lambda_min(0) - 1e-12);
    }
    // Plain-matrix cross-check of the singular values.
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(s.factors[0].matrix());
    CHECK(std::log(svd.singularValues()(0)) == doctest::Approx(s.log_singular_values[0](0)).epsilon(1e-10));
  }
}

TEST_CASE("pitchfork FTLE identity against the stored fixed point") {
  const PitchforkLinearization pl{{0.3, 1.0}, 1e-3, 1e-10};
  const double T = 20.0;
  for (std::uint64_t seed : {3u, 8u}) {
    const auto s = evaluate(CocycleSpec{pl}, {seed, 0.0}, {T});
    const auto fp = pitchfork_fixed_point(pl, {seed, 0.0}, T);
    // Independent quadrature of a^2 (Simpson on the stored samples).
    const auto n = static_cast<int>(std::llround(T / pl.dt));
    double simpson = fp.at_index(0) * fp.at_index(0) + fp.at_index(n) * fp.at_index(n);
    for (int k = 1; k < n; ++k) simpson += (k % 2 ? 4.0 : 2.0) * fp.at_index(k) * fp.at_index(k);
    simpson *= pl.dt / 3.0;
    // The integrand is only Hoelder continuous, so Simpson and trapezoid agree to O(dt) only.
    CHECK(s.lambda_max(0) == doctest::Approx(0.3 - 3.0 * simpson / T).epsilon(1e-3));
    double sum = 0.0;
    for (int k = 0; k <= n; ++k) sum += fp.at_index(k) * fp.at_index(k);
    const double trapezoid = pl.dt * (sum - 0.5 * (fp.at_index(0) * fp.at_index(0) + fp.at_index(n) * fp.at_index(n)));
    CHECK(s.lambda_max(0) == doctest::Approx(0.3 - 3.0 * trapezoid / T).epsilon(1e-10));
    // Product of the scheme's own step derivatives: agrees to O(dt).
    const SplittingStep step(pl.params, pl.dt);
    double log_prod = 0.0;
    for (int k = 0; k < n; ++k) log_prod += std::log(step.derivative(fp.at_index(k)));
    CHECK(std::abs(log_prod / T - s.lambda_max(0)) < 1e-2);
  }
}

TEST_CASE("FTLE ensembles") {
  SUBCASE("constant scalar cocycle") {
    Eigen::MatrixXd a(1, 1);
    a << -0.7;
    const CocycleSpec spec{MatrixFlow{a}};
    for (const auto& e : ftle_ensembles(spec, {1, 2, 3}, {0.5, 3.0, 40.0})) {
      for (std::size_t i = 0; i < e.size(); ++i) {
        CHECK(e.lmax[i] == doctest::Approx(-0.7).epsilon(1e-12));
        CHECK(e.lmin[i] == doctest::Approx(-0.7).epsilon(1e-12));
      }
    }
    const auto norms = onestep_log_norms(spec, seed_range(0, 64));
    CHECK(norms.max_log_norm == 0.0);
    CHECK(norms.max_log_inverse_norm == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(norms.bounded_above);
    CHECK(norms.bounded_below);
  }
  SUBCASE("pitchfork alpha = -1: lambda_max <= -1 everywhere") {
    const CocycleSpec spec{PitchforkLinearization{{-1.0, 1.0}}};
    for (const auto& e : ftle_ensembles(spec, seed_range(100, 40), {1.0, 5.0, 20.0})) {
      CHECK(e.max_lmax() <= -1.0);
      for (std::size_t i = 0; i < e.size(); ++i) CHECK(e.lmin[i] <= e.lmax[i]);
    }
  }
  SUBCASE("pitchfork alpha = 1, T = 5: some members have a positive exponent") {
    const CocycleSpec spec{PitchforkLinearization{{1.0, 1.0}}};
    const auto e = ftle_ensemble(spec, seed_range(0, 600), 5.0);
    CHECK(e.fraction_lmax_above(0.0) > 0.0);
    CHECK(e.max_lmax() <= 1.0);
  }
  SUBCASE("results do not depend on the worker count") {
    const auto spec = iid({mat2(1.5, 0.7, 0.0, 0.6), rotation(1.1) * 0.9}, {0.5, 0.5});
    const auto a = ftle_ensemble(spec, seed_range(0, 64), 25.0, 1);
    const auto b = ftle_ensemble(spec, seed_range(0, 64), 25.0, 4);
    CHECK(a.lmax == b.lmax);
    CHECK(a.lmin == b.lmin);
  }
}

TEST_CASE("one-step norms of the pitchfork cocycle stay below |alpha| + 3 max a^2") {
  const PitchforkLinearization pl{{0.5, 1.0}};
  const auto seeds = seed_range(0, 32);
  const auto norms = onestep_log_norms(CocycleSpec{pl}, seeds);
  double max_a2 = 0.0;
  for (auto seed : seeds) {
    const auto fp = pitchfork_fixed_point(pl, {seed, 0.0}, 1.0);
    for (double a : fp.values) max_a2 = std::max(max_a2, a * a);
  }
  const double bound = std::abs(pl.params.alpha) + 3.0 * max_a2;
  CHECK(norms.max_log_norm <= bound);
  CHECK(norms.max_log_inverse_norm <= bound);
  CHECK(norms.max_log_norm <= pl.params.alpha);
  CHECK(norms.bounded_above);
}

TEST_CASE("block i.i.d. extremes agree with word enumeration") {
  const auto spec = iid({mat2(2, 0, 0, 8), mat2(2, 0, 0, 4), mat2(0.5, 0, 0, 8), mat2(0.5, 0, 0, 4)},
                        {0.25, 0.25, 0.25, 0.25});
  const int T = 6;
  const auto e = ftle_ensemble(spec, seed_range(0, 20000), T);
  const auto top = oracle::enumerate_words({8.0, 4.0}, T);
  const auto low = oracle::enumerate_words({2.0, 0.5}, T);
  CHECK(e.max_lmax() == doctest::Approx(top.max_rate).epsilon(1e-12));
  CHECK(e.min_lmin() == doctest::Approx(low.min_rate).epsilon(1e-12));
}

TEST_CASE("validation") {
  CHECK_THROWS_AS(iid({mat2(1, 0, 0, 0)}, {1.0}).validate(), std::invalid_argument);
  CHECK_THROWS_AS(iid({mat2(1, 0, 0, 1)}, {0.5}).validate(), std::invalid_argument);
  CHECK_THROWS_AS(evaluate(iid({mat2(1, 0, 0, 1)}, {1.0}), {0, 0.0}, {1.5}), std::invalid_argument);
  CHECK_THROWS_AS(evaluate(iid({mat2(1, 0, 0, 1)}, {1.0}), {0, 0.0}, {}), std::invalid_argument);
  CHECK_THROWS_AS(RotationTower(1), std::invalid_argument);
  CHECK_THROWS_AS((CocycleSpec{PitchforkLinearization{{1.0, 0.0}}}).validate(), std::invalid_argument);
}

TEST_CASE("csv") {
  std::ostringstream os;
  write_ftle_csv(os, {ftle_ensemble(iid({mat2(2, 0, 0, 1)}, {1.0}), {7}, 3.0)});
  CHECK(os.str().rfind("seed,T,lmax,lmin\n7,3,", 0) == 0);
}
