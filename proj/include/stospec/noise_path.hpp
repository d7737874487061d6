#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

namespace stospec {

/// Uniform time grid window. Requires dt > 0 and t_min <= 0 <= t_max.
struct GridSpec {
  double dt = 1e-3;
  double t_min = 0.0;
  double t_max = 1.0;

  void validate() const;
};

/// Everything needed to regenerate a path bit-identically.
///
/// Increments are drawn per block of `block_size` grid steps; the block stream
/// is seeded by a counter-based hash of (root_seed, block_index), where the
/// block index is counted from the root origin. Extension counters are
/// bookkeeping only: the values never depend on extension history.
struct SeedLineage {
  std::uint64_t root_seed = 0;
  std::int64_t block_size = 0;
  std::int64_t origin_offset = 0;  // origin of this path in root grid steps
  std::uint32_t left_extensions = 0;
  std::uint32_t right_extensions = 0;
};

namespace detail {
struct PathBlock;
struct PathStore;
}  // namespace detail

/// Two-sided discretized Wiener path pinned at W(0) = 0.
///
/// Handles are immutable and cheap to copy; shifted and extended paths share
/// the generated blocks of the path they were derived from.
class NoisePath {
 public:
  double dt() const noexcept { return dt_; }
  double t_min() const noexcept { return static_cast<double>(lo_ - origin_) * dt_; }
  double t_max() const noexcept { return static_cast<double>(hi_ - origin_) * dt_; }

  /// Grid index (relative to t = 0) of the first and last sample.
  std::int64_t first_index() const noexcept { return lo_ - origin_; }
  std::int64_t last_index() const noexcept { return hi_ - origin_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(hi_ - lo_ + 1); }

  /// Grid index of time t; throws std::invalid_argument if t is not on the grid.
  std::int64_t index_of(double t) const;

  double at_index(std::int64_t k) const;
  /// Path value at time t, linear between grid points.
  double at(double t) const;

  /// Stored increment W((k+1)dt) - W(k dt).
  double increment(std::int64_t k) const;
  /// Increments for steps [from, to) into a fresh vector.
  std::vector<double> increments(std::int64_t from, std::int64_t to) const;
  void copy_increments(std::int64_t from, std::span<double> out) const;

  std::vector<double> times() const;
  std::vector<double> values() const;

  const SeedLineage& lineage() const noexcept { return lineage_; }

 private:
  friend NoisePath sample_path(std::uint64_t seed, const GridSpec& grid);
  friend NoisePath shift(const NoisePath& path, double s);
  friend NoisePath extend_left(const NoisePath& path, double delta);
  friend NoisePath extend_right(const NoisePath& path, double delta);

  double root_value(std::int64_t root_step) const;
  double root_increment(std::int64_t root_step) const;

  std::shared_ptr<const detail::PathStore> store_;
  double dt_ = 0.0;
  std::int64_t origin_ = 0;  // root step of t = 0
  std::int64_t lo_ = 0;      // root step of t_min
  std::int64_t hi_ = 0;      // root step of t_max
  double base_ = 0.0;        // stored root value at origin_
  SeedLineage lineage_;
};

/// Default number of grid steps per seeded block.
inline constexpr std::int64_t kPathBlockSize = 4096;

/// Grid index of time t for step dt; throws if t is not a grid multiple.
std::int64_t grid_steps(double t, double dt);

NoisePath sample_path(std::uint64_t seed, const GridSpec& grid);

/// Wiener shift: (theta_s w)(t) = w(s + t) - w(s). Re-bases on the stored
/// value at the new origin, so shift(shift(w, s), t) == shift(w, s + t) exactly.
NoisePath shift(const NoisePath& path, double s);

NoisePath extend_left(const NoisePath& path, double delta);
NoisePath extend_right(const NoisePath& path, double delta);

/// CSV dump with header `t,w`, 17 significant digits.
void write_path_csv(std::ostream& os, const NoisePath& path);

}  // namespace stospec
