#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <nlohmann/json.hpp>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "stospec/cocycle.hpp"
#include "stospec/conjugacy.hpp"

namespace stospec {

/// Bumped whenever the envelope or a payload schema changes.
inline constexpr int kArtifactVersion = 1;

enum class StudyKind { density_sweep, ftle, attractivity, spectrum_scan, conjugacy, endpoints };

const char* to_string(StudyKind kind);
/// Accepts the dashed names (density-sweep, spectrum-scan, ...).
std::optional<StudyKind> parse_study(const std::string& name);

/// Configuration problems: unknown keys, bad values, empty seed lists.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  StudyKind study = StudyKind::ftle;
  std::string name;

  // [model] pitchfork SDE and its discretization
  double alpha = -1.0;
  double sigma = 1.0;
  double dt = 1e-3;
  double tol = 1e-9;  // pullback accuracy of the random fixed point

  // [sweep] density-sweep grid
  double alpha_min = -2.0;
  double alpha_max = 2.0;
  int alpha_count = 21;
  std::vector<double> sigmas{1.0};

  // [ensemble]
  std::vector<std::uint64_t> seeds;
  double T = 20.0;
  std::vector<double> T_schedule;  // ftle and endpoints; empty means {T}

  // [cocycle] for ftle, spectrum-scan and endpoints
  std::string cocycle = "pitchfork";  // pitchfork | flow | iid | tower
  std::vector<Eigen::MatrixXd> generators;
  std::vector<double> probabilities;
  int n_max = 50;
  double rate_shift = 0.0;

  // [scan]
  double gamma_min = -2.0;
  double gamma_max = 2.0;
  double gamma_step = 0.02;
  double ratio_threshold = 1e3;
  int refinement_levels = 3;
  int refinement_factor = 4;
  std::size_t onestep_samples = 0;

  // [attractivity]
  double delta = 0.25;
  std::vector<double> times{0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 40.0};
  double threshold = 0.25;

  // [conjugacy]
  ConjugacyOptions conjugacy;
  double x_lo_exp = -3.0;
  double x_hi_exp = 1.0;
  int per_decade = 15;
  std::vector<double> shifts{0.5, 1.0, 2.0};
  std::vector<double> uniformity_abs_x;  // empty skips the uniformity probe

  // [output]
  std::string out_dir = "stospec-out";
  bool write_csv = true;
  bool write_plotdata = true;
  bool write_svg = true;

  bool operator==(const ExperimentConfig&) const = default;

  /// Throws ConfigError on any violated invariant.
  void validate() const;

  std::vector<double> gamma_grid() const;
  std::vector<double> schedule() const;
  /// Cocycle described by the [cocycle] and [model] sections.
  CocycleSpec cocycle_spec() const;
};

/// Parses the `key = value` / `[section]` format. Unknown sections or keys are errors.
ExperimentConfig parse_config(std::istream& is);
ExperimentConfig load_config(const std::filesystem::path& file);

/// Canonical text form: every key, fixed order, shortest round-trip numbers.
std::string serialize_config(const ExperimentConfig& config);

/// FNV-1a of the canonical text without the [output] section, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

struct RunOptions {
  unsigned workers = 1;
  std::uint64_t seed_offset = 0;
  std::optional<std::filesystem::path> out_dir;  // overrides the config
  bool write_files = true;
};

struct ResultEnvelope {
  std::string study;
  std::string config_hash;
  int version = kArtifactVersion;
  nlohmann::json config;    // canonical config, section -> key -> string
  nlohmann::json payload;   // numeric results; byte-reproducible
  nlohmann::json metadata;  // wall clock, workers; not reproducible
  bool inconclusive = false;
  std::vector<std::string> notes;

  nlohmann::json to_json() const;
  static ResultEnvelope from_json(const nlohmann::json& j);
  /// payload.dump() with fixed formatting; compare these for determinism.
  std::string payload_text() const;
};

/// Checks the envelope layout and the per-study payload keys; returns the
/// problems found (empty when valid).
std::vector<std::string> validate_envelope(const nlohmann::json& envelope);

/// Runs the study. Applies seed_offset to every seed before hashing. Writes
/// envelope.json, payload.json, CSV and plot data when write_files is set.
ResultEnvelope run(ExperimentConfig config, const RunOptions& options = {});

/// Writes gnuplot-ready .dat files (and SVG renderings when `svg`) for the
/// envelope's study into `dir`. Returns the written paths.
std::vector<std::filesystem::path> emit_plotdata(const ResultEnvelope& envelope,
                                                 const std::filesystem::path& dir, bool svg = true);

/// Same, but rejects an envelope whose study differs from `expected`.
std::vector<std::filesystem::path> emit_plotdata(const ResultEnvelope& envelope, StudyKind expected,
                                                 const std::filesystem::path& dir, bool svg = true);

}  // namespace stospec
