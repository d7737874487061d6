#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "stospec/pitchfork.hpp"

namespace stospec {

struct ConjugacyOptions {
  double tol = 1e-6;            // root tolerance on r; the truncated tail is below tol / 10
  double onset = 50.0;          // fixed stand-in for the Birkhoff onset time T(w)
  double backward = 20.0;       // initial left window for the root bracket
  double max_backward = 640.0;
  double pullback_tol = 1e-10;  // accuracy of a(w)
  /// Right-hand side c of int_r^inf psi = +-c. Any c > 0 yields a conjugacy;
  /// c = 1 is the usual normalization.
  double level = 1.0;

  bool operator==(const ConjugacyOptions&) const = default;
};

/// Thrown by radius() when the backward solution explodes before the
/// integral reaches the level, so no root exists for this (w, x).
class RootUnavailable : public std::runtime_error {
 public:
  RootUnavailable(const std::string& what, double mass) : std::runtime_error(what), mass_(mass) {}
  /// |int psi| over the resolved backward lifespan.
  double mass() const { return mass_; }

 private:
  double mass_;
};

/// psi(t, w, x) = phi(t, w, a(w) + x) - a(theta_t w) for the pitchfork SDE.
///
/// a(theta_t w) is taken as the orbit phi(t, w, a(w)) of the pullback fixed
/// point, forward by the scheme and backward by its exact inverse. psi is then
/// zero at x = 0 and strictly increasing in x on every grid time, exactly.
///
/// Construction rejects parameters with delta = E[a^2] / 4 - alpha <= 0.
class ShiftedFlow {
 public:
  ShiftedFlow(const PitchforkParams& params, const NoisePath& path, const ConjugacyOptions& options = {});

  const PitchforkParams& params() const { return params_; }
  const ConjugacyOptions& options() const { return options_; }
  double delta() const { return delta_; }
  double second_moment() const { return second_moment_; }
  double fixed_point() const { return a0_; }
  double dt() const { return path_.dt(); }
  const NoisePath& path() const { return path_; }

  /// Truncation horizon T_inf(x) = max(onset, (2 / delta) ln(20 |x| / (delta tol))), on the grid.
  double horizon(double x) const;

  /// psi at grid time t (negative t uses inverse steps). NaN past a backward blow-up.
  double operator()(double t, double x);

  /// psi on grid indices k_lo..k_hi (k_lo <= 0 <= k_hi).
  std::vector<double> trajectory(double x, std::int64_t k_lo, std::int64_t k_hi);

  /// Whether (1/t) int_0^t a^2 stays within delta/2 of E[a^2] on [onset, t_end].
  bool onset_verified(double t_end);

 private:
  void cover(std::int64_t k_lo, std::int64_t k_hi);

  PitchforkParams params_;
  ConjugacyOptions options_;
  NoisePath path_;
  double second_moment_ = 0.0;
  double delta_ = 0.0;
  double a0_ = 0.0;
};

/// The random fixed point of the pitchfork SDE must be unique and attracting
/// and the decay bound must apply: throws std::invalid_argument with E[a^2]
/// in the message when delta <= 0.
double conjugacy_delta(const PitchforkParams& params);

struct RadiusResult {
  double r = 0.0;
  double horizon = 0.0;    // T_inf used for the truncated integral
  double backward = 0.0;   // left window that bracketed the root
  int bisection_steps = 0;
};

/// Solves int_r^inf psi(s, w, x) ds = sign(x) * level by bisection then three
/// Newton steps. The optional bracket replaces the default [-backward, T_inf].
/// Throws RootUnavailable if psi explodes backward before a bracket is found.
RadiusResult radius(ShiftedFlow& flow, double x,
                    std::optional<std::pair<double, double>> bracket = std::nullopt);

/// g(w, x) = sign(x) exp(r(w, x)), g(w, 0) = 0.
double conjugacy_value(ShiftedFlow& flow, double x);

/// Symmetric logarithmic grid: +-10^lo .. +-10^hi with `per_decade` points per decade, plus 0.
std::vector<double> log_x_grid(double lo_exp = -3.0, double hi_exp = 1.0, int per_decade = 15);

struct ConjugacyTable {
  std::uint64_t seed = 0;
  PitchforkParams params;
  double dt = 0.0;
  double delta = 0.0;
  double second_moment = 0.0;
  bool onset_verified = false;
  std::vector<double> x;
  double level = 1.0;
  std::vector<double> r;  // NaN at x = 0 and where no root exists
  std::vector<double> g;  // NaN where no root exists
  std::vector<double> mass;  // resolved backward mass where no root exists, else NaN
  std::size_t missing = 0;
  std::vector<double> horizon;
  std::vector<double> shifts;                  // s values
  std::vector<std::vector<double>> residual;   // [shift][x]
  std::vector<std::vector<double>> r_defect;   // |r(w, x) - r(theta_s w, psi(s, w, x)) - s|, [shift][x]

  /// False if any entry is missing.
  bool g_strictly_increasing() const;
  /// Max over available entries; NaN entries are skipped.
  double max_residual() const;
  /// Shifted evaluations that had no root.
  std::size_t missing_shifted = 0;
};

/// Builds g on the grid for the realization sample_path(seed) with step dt,
/// and the cohomology residuals
///   rho(s, x) = |g(theta_s w, psi(s, w, x)) - e^{-s} g(w, x)| / max(|g(w, x)|, tol)
/// where g(theta_s w, .) is recomputed from scratch on the shifted path.
ConjugacyTable conjugacy(const PitchforkParams& params, std::uint64_t seed, double dt,
                         const std::vector<double>& x_grid, const std::vector<double>& shifts = {0.5, 1.0, 2.0},
                         const ConjugacyOptions& options = {});

struct UniformityTable {
  PitchforkParams params;
  std::vector<std::uint64_t> seeds;
  std::vector<double> abs_x;
  std::vector<double> max_abs_g;              // max over seeds and +-x of |g(w, x) - g(w, 0)|
  std::vector<std::vector<double>> per_seed;  // [seed][abs_x], NaN where no root exists
  std::vector<std::size_t> missing;           // per abs_x, realizations skipped for lack of a root
};

UniformityTable uniformity_probe(const PitchforkParams& params, const std::vector<std::uint64_t>& seeds,
                                 const std::vector<double>& abs_x, double dt = 1e-3,
                                 const ConjugacyOptions& options = {}, unsigned workers = 1);

void write_conjugacy_csv(std::ostream& os, const ConjugacyTable& table);
void write_uniformity_csv(std::ostream& os, const UniformityTable& table);

}  // namespace stospec
