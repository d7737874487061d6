#pragma once

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <span>
#include <vector>

#include "stospec/noise_path.hpp"

namespace stospec {

/// Parameters of dx = (alpha x - x^3) dt + sigma dW.
struct PitchforkParams {
  double alpha = 0.0;
  double sigma = 1.0;

  void validate() const;
};

/// One Lie-splitting step of size h: exact cubic flow, exact linear flow, then
/// the noise increment. Every sub-map is strictly increasing, so the step is.
class SplittingStep {
 public:
  SplittingStep(const PitchforkParams& p, double h)
      : two_h_(2.0 * h), growth_(std::exp(p.alpha * h)), sigma_(p.sigma) {}

  double operator()(double x, double dw) const noexcept {
    x = x / std::sqrt(1.0 + two_h_ * x * x);
    return x * growth_ + sigma_ * dw;
  }

  /// Exact inverse of operator(). Returns NaN when the preimage does not exist
  /// (the cubic sub-map has bounded range; backward solutions blow up).
  double inverse(double y, double dw) const noexcept {
    const double u = (y - sigma_ * dw) / growth_;
    const double den = 1.0 - two_h_ * u * u;
    if (!(den > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    return u / std::sqrt(den);
  }

  /// d(step)/dx at x.
  double derivative(double x) const noexcept {
    return growth_ * std::pow(1.0 + two_h_ * x * x, -1.5);
  }

 private:
  double two_h_;
  double growth_;
  double sigma_;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<double> states;
  PitchforkParams params;
  NoisePath path;
};

/// Pathwise solution on the grid of `path` from t0 to t1.
Trajectory integrate(const PitchforkParams& params, const NoisePath& path, double x0, double t0,
                     double t1);

/// Final state only; same arithmetic as integrate().
double flow(const PitchforkParams& params, const NoisePath& path, double x0, double t0,
            double t1);

/// Applies the scheme over consecutive increments, writing every state
/// (including x0) into `out` (size increments.size() + 1) when non-empty.
double advance(const SplittingStep& step, double x0, std::span<const double> increments,
               std::span<double> out = {});

struct PullbackOptions {
  double t_start = 0.0;        // fixed point is reported on [t_start, horizon]
  double initial_depth = 1.0;  // first pullback depth, doubled until converged
  double max_depth = 16384.0;
  double bracket = 0.0;        // <= 0 selects 1 + |alpha| + 5 sigma
};

/// Samples of the random fixed point a(theta_t w) on a grid.
struct FixedPointTrajectory {
  PitchforkParams params;
  NoisePath path;  // possibly extended to the left of the input path
  double dt = 0.0;
  std::int64_t first_index = 0;  // grid index of values[0]
  std::vector<double> values;
  double depth = 0.0;  // pullback depth that achieved the gap
  double gap = 0.0;    // max distance between the two bracketing solutions
  std::vector<std::pair<double, double>> gap_history;  // (depth, gap) per attempt

  double t_start() const { return static_cast<double>(first_index) * dt; }
  double t_end() const {
    return static_cast<double>(first_index + static_cast<std::int64_t>(values.size()) - 1) * dt;
  }
  std::int64_t last_index() const {
    return first_index + static_cast<std::int64_t>(values.size()) - 1;
  }
  /// Value at grid index k (relative to the path origin).
  double at_index(std::int64_t k) const;
  std::vector<double> times() const;
};

double default_bracket(const PitchforkParams& params);

/// Max distance on [t_start, horizon] between the solutions started at +-bracket
/// at time t_start - depth. The path must cover the window.
double pullback_gap(const PitchforkParams& params, const NoisePath& path, double depth,
                    double t_start, double horizon, double bracket);

/// Pullback construction: solutions started at +-B at time t_start - depth are
/// integrated to `horizon`; depth doubles until their max gap is <= tol.
FixedPointTrajectory pullback_fixed_point(const PitchforkParams& params, const NoisePath& path,
                                          double horizon, double tol,
                                          const PullbackOptions& options = {});

struct OuFixedPoint {
  double value = 0.0;
  double tail_bound = 0.0;  // e^{-alpha * depth}
  double depth = 0.0;
};

/// z(w) = sigma * int_{-inf}^0 e^{alpha s} dW(s), truncated to the left window
/// of `path`. Throws if the window is too short for tail_tol.
OuFixedPoint ou_fixed_point(double alpha, double sigma, const NoisePath& path,
                            double tail_tol = 1e-8);

struct ProbeOptions {
  double dt = 1e-3;
  double tol = 1e-9;
  unsigned workers = 1;
};

/// Ensemble maxima of |phi(t, w, a(w) + x) - a(theta_t w)| over x in {+-delta, +-delta/2}.
struct AttractivityProbe {
  PitchforkParams params;
  double delta = 0.0;
  std::vector<double> times;
  std::vector<std::uint64_t> seeds;
  std::vector<double> sup;                   // S(t), one per time
  std::vector<std::vector<double>> per_path;  // [seed][time] max over x

  /// Fraction of paths whose value at times[t_index] exceeds threshold.
  double fraction_above(std::size_t t_index, double threshold) const;
};

AttractivityProbe uniform_attractivity_probe(const PitchforkParams& params,
                                             const std::vector<std::uint64_t>& seeds,
                                             double delta, const std::vector<double>& times,
                                             const ProbeOptions& options = {});

void write_trajectory_csv(std::ostream& os, const Trajectory& traj);
void write_fixed_point_csv(std::ostream& os, const FixedPointTrajectory& fp);
void write_probe_csv(std::ostream& os, const AttractivityProbe& probe);

}  // namespace stospec
