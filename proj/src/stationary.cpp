#include "stospec/stationary.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <ostream>
#include <stdexcept>

namespace stospec {

namespace {

constexpr double kDropNats = 60.0;
constexpr double kRelTol = 1e-14;

void require_noise(const PitchforkParams& params) {
  params.validate();
  if (!(params.sigma > 0.0)) {
    throw std::invalid_argument("stationary density requires sigma > 0");
  }
}

double peak_exponent(const PitchforkParams& p) {
  return p.alpha > 0.0 ? p.alpha * p.alpha / (2.0 * p.sigma * p.sigma) : 0.0;
}

// Exponent shifted so that its maximum is 0; even in x.
double shifted_exponent(const PitchforkParams& p, double x) {
  const double x2 = x * x;
  return (p.alpha * x2 - 0.5 * x2 * x2) / (p.sigma * p.sigma) - peak_exponent(p);
}

struct HalfLineIntegral {
  double value;
  double error;
};

// 2 * int_0^R g(x) exp(shifted_exponent(x)) dx for even g.
template <class G>
HalfLineIntegral symmetric_integral(const PitchforkParams& p, G g) {
  const double radius = truncation_radius(p);
  auto f = [&](double x) { return g(x) * std::exp(shifted_exponent(p, x)); };
  double err = 0.0;
  const double v = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
      f, 0.0, radius, 20, kRelTol, &err);
  return {2.0 * v, 2.0 * err};
}

}  // namespace

double truncation_radius(const PitchforkParams& params) {
  require_noise(params);
  // alpha x^2 - x^4/2 = sigma^2 (peak - 60), positive root in x^2.
  const double c = params.sigma * params.sigma * (peak_exponent(params) - kDropNats);
  const double x2 = params.alpha + std::sqrt(params.alpha * params.alpha - 2.0 * c);
  return std::sqrt(x2);
}

DensityProfile stationary_density(const PitchforkParams& params,
                                  const std::vector<double>& x_grid) {
  require_noise(params);
  const auto z = symmetric_integral(params, [](double) { return 1.0; });
  DensityProfile d;
  d.params = params;
  d.log_normalization = -std::log(z.value) - peak_exponent(params);
  d.normalization = std::exp(d.log_normalization);
  d.quadrature_error = z.error;
  d.x = x_grid;
  d.p.resize(x_grid.size());
  for (std::size_t i = 0; i < x_grid.size(); ++i) {
    d.p[i] = std::exp(shifted_exponent(params, std::abs(x_grid[i]))) / z.value;
  }
  return d;
}

double moment(const PitchforkParams& params, int k) {
  require_noise(params);
  if (k < 0) throw std::invalid_argument("moment: k must be >= 0");
  if (k == 0) return 1.0;
  if (k % 2 != 0) return 0.0;
  const auto z = symmetric_integral(params, [](double) { return 1.0; });
  const auto m = symmetric_integral(params, [k](double x) { return std::pow(x, k); });
  return m.value / z.value;
}

std::vector<double> density_modes(const PitchforkParams& params) {
  require_noise(params);
  // Critical points of alpha x^2 - x^4/2: x = 0 and x^2 = alpha.
  if (params.alpha > 0.0) {
    const double r = std::sqrt(params.alpha);
    return {-r, r};
  }
  return {0.0};
}

LyapunovQuadrature lyapunov_quadrature(const PitchforkParams& params) {
  require_noise(params);
  const auto z = symmetric_integral(params, [](double) { return 1.0; });
  const auto m2 = symmetric_integral(params, [](double x) { return x * x; });
  const double a = params.alpha;
  const auto drift2 = symmetric_integral(params, [a](double x) {
    const double f = a * x - x * x * x;
    return f * f;
  });
  LyapunovQuadrature out;
  out.second_moment = m2.value / z.value;
  out.lambda = a - 3.0 * out.second_moment;
  out.lambda_integral = -2.0 / (params.sigma * params.sigma) * drift2.value / z.value;
  out.identity_gap = std::abs(out.lambda - out.lambda_integral);
  if (out.identity_gap > 1e-8 * std::max(1.0, std::abs(out.lambda))) {
    throw std::runtime_error("lyapunov_quadrature: integral and moment forms disagree");
  }
  return out;
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  const auto old = os.precision(17);
  os << "alpha,sigma,Ex2,lambda\n";
  for (const auto& r : rows) os << r.alpha << ',' << r.sigma << ',' << r.ex2 << ',' << r.lambda << '\n';
  os.precision(old);
}

void write_density_csv(std::ostream& os, const DensityProfile& density) {
  const auto old = os.precision(17);
  os << "x,p\n";
  for (std::size_t i = 0; i < density.x.size(); ++i) os << density.x[i] << ',' << density.p[i] << '\n';
  os.precision(old);
}

}  // namespace stospec
