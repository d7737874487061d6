#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

#include "stospec/pitchfork.hpp"

namespace stospec {

/// Scalar cocycle exp(int_0^t (alpha - 3 a(theta_s w)^2) ds) along the random
/// fixed point. The fixed point is computed from sample_path(seed, [0, T]) by
/// pullback with tolerance `tol`.
struct PitchforkLinearization {
  PitchforkParams params;
  double dt = 1e-3;
  double tol = 1e-9;
};

/// Discrete-time products of i.i.d. generators.
struct MatrixIid {
  std::vector<Eigen::MatrixXd> generators;
  std::vector<double> probabilities;
};

/// Autonomous flow exp(A t).
struct MatrixFlow {
  Eigen::MatrixXd generator;
};

/// Scalar discrete cocycle over an irrational circle rotation with multiplier
/// 1/n on U_n and theta^2 U_n, n on theta U_n, 1 elsewhere.
///
/// The circle is Z / 2^64: a point is a uint64 and the rotation adds an odd
/// integer close to 2^64 times the golden-mean fraction, so every orbit is
/// periodic only with period 2^64. All arc arithmetic is exact.
class RotationTower {
 public:
  struct Arc {
    std::uint64_t start;
    std::uint64_t length;  // arc is [start, start + length) modulo 2^64
    int n;
  };

  explicit RotationTower(int n_max = 50);

  int n_max() const { return n_max_; }
  std::uint64_t rotation() const { return rotation_; }
  const std::vector<Arc>& arcs() const { return arcs_; }  // U_n for n = 2..n_max

  std::uint64_t rotate(std::uint64_t point, std::int64_t steps = 1) const {
    return point + static_cast<std::uint64_t>(steps) * rotation_;
  }
  double multiplier(std::uint64_t point) const;

  /// Base point of a realization.
  static std::uint64_t base_point(std::uint64_t seed);

  /// Re-checks that all arcs U_n, theta U_n, theta^2 U_n are pairwise disjoint.
  bool verify_disjoint() const;

  static bool arcs_intersect(std::uint64_t a, std::uint64_t la, std::uint64_t b, std::uint64_t lb) {
    return b - a < la || a - b < lb;
  }

 private:
  int n_max_;
  std::uint64_t rotation_;
  std::vector<Arc> arcs_;
};

struct CocycleSpec {
  std::variant<PitchforkLinearization, MatrixIid, MatrixFlow, RotationTower> kind;
  /// Phi is replaced by e^{rate_shift t} Phi.
  double rate_shift = 0.0;

  int dimension() const;
  bool discrete_time() const;
  /// Stable textual description used for hashing.
  std::string describe() const;
  void validate() const;
};

/// A realization: root seed plus a base shift theta_shift (time units; must be
/// an integer for discrete cocycles and a multiple of dt for the pitchfork).
struct Realization {
  std::uint64_t seed = 0;
  double shift = 0.0;
};

/// Phi = Q * diag(exp(L)) * U with Q orthogonal and U upper triangular with
/// unit diagonal. Keeps products representable far past double overflow.
class LogQR {
 public:
  explicit LogQR(int d = 1);

  int dimension() const { return static_cast<int>(log_diag_.size()); }
  void apply(const Eigen::MatrixXd& step);  // Phi <- step * Phi
  void add_log_scale(double c) { log_diag_.array() += c; }

  const Eigen::MatrixXd& q() const { return q_; }
  const Eigen::MatrixXd& u() const { return u_; }
  const Eigen::VectorXd& log_diag() const { return log_diag_; }

  /// Plain matrix; overflows to inf when the entries do.
  Eigen::MatrixXd matrix() const;
  /// ln of the singular values, descending.
  Eigen::VectorXd log_singular_values() const;
  /// Right singular vectors as columns, ordered as log_singular_values().
  Eigen::MatrixXd right_singular_vectors() const;
  /// ln(|Phi x| / |x|).
  double log_growth(const Eigen::VectorXd& x) const;

  static LogQR scalar(double log_abs, double sign = 1.0);

 private:
  Eigen::MatrixXd q_;
  Eigen::MatrixXd u_;
  Eigen::VectorXd log_diag_;
};

/// Phi(T_k, w) at a checkpoint schedule for one realization.
struct CocycleSample {
  std::vector<double> times;
  std::vector<LogQR> factors;
  std::vector<Eigen::VectorXd> log_singular_values;  // per checkpoint, descending

  double lambda_max(std::size_t k) const { return log_singular_values[k](0) / times[k]; }
  double lambda_min(std::size_t k) const {
    const auto& s = log_singular_values[k];
    return s(s.size() - 1) / times[k];
  }
};

/// Evaluates the cocycle at increasing positive checkpoint times.
CocycleSample evaluate(const CocycleSpec& spec, const Realization& w,
                       const std::vector<double>& schedule);

/// Pitchfork variant on an explicit path; the path is extended as needed.
CocycleSample evaluate_pitchfork(const PitchforkLinearization& spec, const NoisePath& path,
                                 const std::vector<double>& schedule, double rate_shift = 0.0);

/// Fixed point used by the pitchfork variant for a realization, covering [0, horizon].
FixedPointTrajectory pitchfork_fixed_point(const PitchforkLinearization& spec,
                                           const Realization& w, double horizon);

struct FtleEnsemble {
  double T = 0.0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> lmax;
  std::vector<double> lmin;

  std::size_t size() const { return seeds.size(); }
  double max_lmax() const;
  double min_lmin() const;
  /// Fraction of members with lmax > threshold.
  double fraction_lmax_above(double threshold) const;
};

/// One ensemble per schedule entry, all evaluated on the same realizations.
std::vector<FtleEnsemble> ftle_ensembles(const CocycleSpec& spec,
                                         const std::vector<std::uint64_t>& seeds,
                                         const std::vector<double>& schedule,
                                         unsigned workers = 1);

FtleEnsemble ftle_ensemble(const CocycleSpec& spec, const std::vector<std::uint64_t>& seeds,
                           double T, unsigned workers = 1);

/// Ensemble maxima of ln+ |Phi(1, w)| and ln+ |Phi(1, w)^{-1}|.
///
/// The ladder holds the running maximum over the nested prefixes of size
/// N / 2^j. A side is reported unbounded when either an a-priori argument says
/// so or the ladder keeps rising over its upper half.
struct OneStepNorms {
  double max_log_norm = 0.0;
  double max_log_inverse_norm = 0.0;
  std::vector<std::size_t> ladder_sizes;
  std::vector<double> ladder_upper;
  std::vector<double> ladder_lower;
  bool bounded_above = true;
  bool bounded_below = true;
  std::string upper_reason;
  std::string lower_reason;
};

OneStepNorms onestep_log_norms(const CocycleSpec& spec, const std::vector<std::uint64_t>& seeds,
                               unsigned workers = 1);

void write_ftle_csv(std::ostream& os, const std::vector<FtleEnsemble>& ensembles);
void write_onestep_csv(std::ostream& os, const OneStepNorms& norms);

}  // namespace stospec
