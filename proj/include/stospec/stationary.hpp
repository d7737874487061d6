#pragma once

#include <iosfwd>
#include <vector>

#include "stospec/pitchfork.hpp"

namespace stospec {

/// Stationary density p(x) = N exp((alpha x^2 - x^4 / 2) / sigma^2) sampled on a grid.
struct DensityProfile {
  PitchforkParams params;
  double normalization = 0.0;      // N; may underflow for tiny sigma, see log_normalization
  double log_normalization = 0.0;  // ln N
  std::vector<double> x;
  std::vector<double> p;
  double quadrature_error = 0.0;  // absolute error estimate of the normalizing integral
};

/// Half-width of the integration domain: the exponent is 60 nats below its
/// maximum at +-radius.
double truncation_radius(const PitchforkParams& params);

DensityProfile stationary_density(const PitchforkParams& params, const std::vector<double>& x_grid);

/// E[x^k] under the stationary density; odd k gives exactly 0.
double moment(const PitchforkParams& params, int k);

/// Locations of the density maxima (0, or +-sqrt(alpha) when alpha > 0).
std::vector<double> density_modes(const PitchforkParams& params);

struct LyapunovQuadrature {
  double lambda = 0.0;           // alpha - 3 E[x^2]
  double lambda_integral = 0.0;  // -(2 / sigma^2) int (alpha x - x^3)^2 p dx
  double second_moment = 0.0;
  double identity_gap = 0.0;     // |lambda - lambda_integral|
};

/// Lyapunov exponent of the linearization along the random fixed point.
/// Throws std::runtime_error if the two forms disagree by more than 1e-8.
LyapunovQuadrature lyapunov_quadrature(const PitchforkParams& params);

struct SweepRow {
  double alpha;
  double sigma;
  double ex2;
  double lambda;
};

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows);
void write_density_csv(std::ostream& os, const DensityProfile& density);

}  // namespace stospec
