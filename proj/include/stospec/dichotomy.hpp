#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <nlohmann/json_fwd.hpp>
#include <string>
#include <vector>

#include "stospec/cocycle.hpp"

namespace stospec {

/// Log singular values of Phi(t, w) for an ensemble at the checkpoints
/// T/8, T/4, T/2, T (rounded up to integers for discrete time).
struct EnsembleSpectra {
  std::string spec_hash;
  int dimension = 0;
  double T = 0.0;
  std::vector<double> checkpoints;
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<Eigen::VectorXd>> log_sv;  // [member][checkpoint], descending

  std::size_t size() const { return seeds.size(); }
};

EnsembleSpectra ensemble_spectra(const CocycleSpec& spec, const std::vector<std::uint64_t>& seeds,
                                 double T, unsigned workers = 1);

enum class Verdict { dichotomy, no_dichotomy, inconclusive };

const char* to_string(Verdict v);

struct DichotomyVerdict {
  double gamma = 0.0;
  Verdict verdict = Verdict::inconclusive;
  int rank = -1;  // number of singular values of e^{-gamma T} Phi(T) below 1; -1 if it varies
  bool rank_constant = false;
  double min_log_gap = 0.0;       // min over members and singular values of |ln s_i - gamma T|
  double min_log_gap_half = 0.0;  // same at T/2
  double K = 1.0;
  double alpha_ed = 0.0;
  double residual = 0.0;  // RMS misfit of the log-linear growth fits
  std::string reason;
};

/// Singular-value splitting test at growth rate gamma.
///
/// dichotomy:     every member has min log-gap >= ln(ratio_threshold), all members
///                report the same rank, the gap grew from T/2 to T, and the
///                fitted alpha_ed is positive.
/// no_dichotomy:  some member has a log-gap below ln(ratio_threshold) / 2.
/// inconclusive:  everything else; the reason is recorded.
DichotomyVerdict dichotomy_test(const EnsembleSpectra& spectra, double gamma,
                                double ratio_threshold = 1e3);

DichotomyVerdict dichotomy_test(const CocycleSpec& spec, double gamma, double T,
                                const std::vector<std::uint64_t>& seeds,
                                double ratio_threshold = 1e3, unsigned workers = 1);

struct SpectralInterval {
  double lo = 0.0;
  double hi = 0.0;
  bool lo_infinite = false;
  bool hi_infinite = false;
  bool degenerate = false;        // narrower than one base grid cell; lo == hi == midpoint
  bool lo_at_grid_edge = false;   // spectral at the first grid point
  bool hi_at_grid_edge = false;
};

struct SpectrumEstimate {
  std::string spec_hash;
  double T = 0.0;
  std::size_t N = 0;
  double ratio_threshold = 0.0;
  std::vector<double> gamma_grid;            // base grid as given
  std::vector<DichotomyVerdict> verdicts;    // base and refined points, sorted by gamma
  std::vector<SpectralInterval> intervals;   // ordered
  std::vector<int> gap_ranks;                // rank in each resolvent gap, bottom to top
  bool bounded_above = true;
  bool bounded_below = true;
  bool rank_monotone = true;
  bool estimation_failure = false;
  std::string failure_reason;
};

struct ScanOptions {
  double ratio_threshold = 1e3;
  int refinement_levels = 3;
  int refinement_factor = 4;
  unsigned workers = 1;
  /// Ensemble size for the one-step boundedness diagnostic; 0 skips it.
  std::size_t onestep_samples = 0;
};

/// Dichotomy test on every grid point, refinement near every change of
/// verdict or rank, then interval extraction. Infinite endpoints come from the
/// one-step norms when provided.
SpectrumEstimate scan_spectrum(const EnsembleSpectra& spectra, const std::vector<double>& gamma_grid,
                               const ScanOptions& options = {}, const OneStepNorms* onestep = nullptr);

SpectrumEstimate scan_spectrum(const CocycleSpec& spec, const std::vector<double>& gamma_grid,
                               double T, const std::vector<std::uint64_t>& seeds,
                               const ScanOptions& options = {});

struct EndpointRow {
  double T = 0.0;
  double sup_estimate = 0.0;  // ensemble max of lambda_max
  double inf_estimate = 0.0;  // ensemble min of lambda_min
  double se_upper = 0.0;      // std error of T * lambda_max over the ensemble
  double se_lower = 0.0;
};

struct EndpointEstimate {
  double sup = 0.0;
  double inf = 0.0;
  bool sup_infinite = false;
  bool inf_infinite = false;
  std::vector<EndpointRow> rows;
  bool subadditive_upper = true;  // T * max lambda_max subadditive up to 2 standard errors
  bool subadditive_lower = true;
  OneStepNorms onestep;
};

EndpointEstimate estimate_endpoints(const CocycleSpec& spec, const std::vector<double>& T_schedule,
                                    const std::vector<std::uint64_t>& seeds, unsigned workers = 1);

struct SubspaceEstimate {
  std::vector<Eigen::MatrixXd> bases;     // orthonormal columns, one block per interval
  std::vector<double> separators;         // resolvent rates between consecutive intervals
  std::vector<double> principal_angles;   // largest angle between the bases at T and T/2
  bool inconclusive = false;
};

/// Spectral manifolds for one realization from the right singular vectors of Phi(T, w).
SubspaceEstimate spectral_manifolds(const CocycleSpec& spec, const SpectrumEstimate& spectrum,
                                    const Realization& w, double T);

struct ShiftReport {
  double c = 0.0;
  SpectrumEstimate base;
  SpectrumEstimate shifted;
  double max_error = 0.0;
  double tolerance = 0.0;  // one base grid cell
  bool passed = false;
};

/// Compares the scan of e^{ct} Phi with the scan of Phi moved by c.
ShiftReport shift_property_check(const CocycleSpec& spec, double c,
                                 const std::vector<double>& gamma_grid, double T,
                                 const std::vector<std::uint64_t>& seeds,
                                 const ScanOptions& options = {});

nlohmann::json to_json(const SpectrumEstimate& estimate);
nlohmann::json to_json(const EndpointEstimate& estimate);
void write_gap_csv(std::ostream& os, const SpectrumEstimate& estimate);

std::string spec_hash(const CocycleSpec& spec);

}  // namespace stospec
