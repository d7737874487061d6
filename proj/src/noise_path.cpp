#include "stospec/noise_path.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>

#include "stospec/random.hpp"

namespace stospec {

namespace detail {

struct PathBlock {
  std::vector<double> inc;  // inc[j]: step (bB + j) -> (bB + j + 1)
  std::vector<double> w;    // w[j]: root value at step bB + j
};

struct PathStore {
  std::uint64_t seed = 0;
  double dt = 0.0;
  std::int64_t block_size = kPathBlockSize;
  std::int64_t first_block = 0;
  std::vector<std::shared_ptr<const PathBlock>> blocks;

  std::int64_t last_block() const {
    return first_block + static_cast<std::int64_t>(blocks.size()) - 1;
  }
};

}  // namespace detail

namespace {

using detail::PathBlock;
using detail::PathStore;

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

std::vector<double> block_increments(std::uint64_t seed, std::int64_t block, std::int64_t n,
                                     double dt) {
  std::mt19937_64 gen(hash_combine(seed, static_cast<std::uint64_t>(block)));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double scale = std::sqrt(dt);
  std::vector<double> inc(static_cast<std::size_t>(n));
  for (auto& v : inc) v = scale * normal(gen);
  return inc;
}

// Right-growing block: values accumulate forward from `start`.
std::shared_ptr<const PathBlock> make_right_block(const PathStore& s, std::int64_t b,
                                                  double start) {
  auto blk = std::make_shared<PathBlock>();
  blk->inc = block_increments(s.seed, b, s.block_size, s.dt);
  blk->w.resize(blk->inc.size());
  double w = start;
  for (std::size_t j = 0; j < blk->inc.size(); ++j) {
    blk->w[j] = w;
    w += blk->inc[j];
  }
  return blk;
}

// Left-growing block: values accumulate backward from the value at its right edge.
std::shared_ptr<const PathBlock> make_left_block(const PathStore& s, std::int64_t b,
                                                 double right_edge) {
  auto blk = std::make_shared<PathBlock>();
  blk->inc = block_increments(s.seed, b, s.block_size, s.dt);
  blk->w.resize(blk->inc.size());
  double w = right_edge;
  for (std::size_t j = blk->inc.size(); j-- > 0;) {
    w -= blk->inc[j];
    blk->w[j] = w;
  }
  return blk;
}

// New store covering root blocks [b_lo, b_hi]; shares every block of `old`.
std::shared_ptr<const PathStore> grow_store(const PathStore* old, std::uint64_t seed, double dt,
                                            std::int64_t b_lo, std::int64_t b_hi) {
  auto s = std::make_shared<PathStore>();
  s->seed = seed;
  s->dt = dt;
  if (old == nullptr) {
    s->first_block = 0;
    s->blocks.push_back(make_right_block(*s, 0, 0.0));
  } else {
    s->block_size = old->block_size;
    s->first_block = old->first_block;
    s->blocks = old->blocks;
  }
  while (s->last_block() < b_hi) {
    const auto& prev = *s->blocks.back();
    s->blocks.push_back(make_right_block(*s, s->last_block() + 1, prev.w.back() + prev.inc.back()));
  }
  std::vector<std::shared_ptr<const PathBlock>> left;
  std::int64_t first = s->first_block;
  double edge = s->blocks.front()->w.front();
  while (first > b_lo) {
    --first;
    auto blk = make_left_block(*s, first, edge);
    edge = blk->w.front();
    left.push_back(std::move(blk));
  }
  if (!left.empty()) {
    s->blocks.insert(s->blocks.begin(), left.rbegin(), left.rend());
    s->first_block = first;
  }
  return s;
}

}  // namespace

void GridSpec::validate() const {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("grid: dt must be > 0");
  if (t_min > 0.0) throw std::invalid_argument("grid: t_min must be <= 0");
  if (t_max < 0.0) throw std::invalid_argument("grid: t_max must be >= 0");
}

std::int64_t grid_steps(double t, double dt) {
  const double n = t / dt;
  const double k = std::round(n);
  if (!std::isfinite(n) || std::abs(n - k) > 1e-7 * std::max(1.0, std::abs(n))) {
    throw std::invalid_argument("time " + std::to_string(t) + " is not a multiple of dt");
  }
  return static_cast<std::int64_t>(k);
}

std::int64_t NoisePath::index_of(double t) const { return grid_steps(t, dt_); }

double NoisePath::root_value(std::int64_t r) const {
  const auto& s = *store_;
  const std::int64_t b = floor_div(r, s.block_size);
  const auto& blk = *s.blocks[static_cast<std::size_t>(b - s.first_block)];
  return blk.w[static_cast<std::size_t>(r - b * s.block_size)];
}

double NoisePath::root_increment(std::int64_t r) const {
  const auto& s = *store_;
  const std::int64_t b = floor_div(r, s.block_size);
  const auto& blk = *s.blocks[static_cast<std::size_t>(b - s.first_block)];
  return blk.inc[static_cast<std::size_t>(r - b * s.block_size)];
}

double NoisePath::at_index(std::int64_t k) const {
  const std::int64_t r = origin_ + k;
  if (r < lo_ || r > hi_) throw std::out_of_range("path index outside window");
  if (r == origin_) return 0.0;
  return root_value(r) - base_;
}

double NoisePath::at(double t) const {
  const double u = t / dt_;
  const double k = std::floor(u);
  const auto i = static_cast<std::int64_t>(k);
  const double frac = u - k;
  if (frac <= 1e-12) return at_index(i);
  if (frac >= 1.0 - 1e-12) return at_index(i + 1);
  return (1.0 - frac) * at_index(i) + frac * at_index(i + 1);
}

double NoisePath::increment(std::int64_t k) const {
  const std::int64_t r = origin_ + k;
  if (r < lo_ || r >= hi_) throw std::out_of_range("increment index outside window");
  return root_increment(r);
}

void NoisePath::copy_increments(std::int64_t from, std::span<double> out) const {
  const std::int64_t r0 = origin_ + from;
  const auto n = static_cast<std::int64_t>(out.size());
  if (r0 < lo_ || r0 + n > hi_) throw std::out_of_range("increment range outside window");
  const auto& s = *store_;
  std::int64_t r = r0;
  std::size_t j = 0;
  while (j < out.size()) {
    const std::int64_t b = floor_div(r, s.block_size);
    const auto& blk = *s.blocks[static_cast<std::size_t>(b - s.first_block)];
    auto off = static_cast<std::size_t>(r - b * s.block_size);
    const std::size_t take = std::min(blk.inc.size() - off, out.size() - j);
    for (std::size_t q = 0; q < take; ++q) out[j + q] = blk.inc[off + q];
    j += take;
    r += static_cast<std::int64_t>(take);
  }
}

std::vector<double> NoisePath::increments(std::int64_t from, std::int64_t to) const {
  if (to < from) throw std::invalid_argument("increments: to < from");
  std::vector<double> out(static_cast<std::size_t>(to - from));
  copy_increments(from, out);
  return out;
}

std::vector<double> NoisePath::times() const {
  std::vector<double> t(size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = static_cast<double>(first_index() + static_cast<std::int64_t>(i)) * dt_;
  }
  return t;
}

std::vector<double> NoisePath::values() const {
  std::vector<double> v(size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = at_index(first_index() + static_cast<std::int64_t>(i));
  }
  return v;
}

NoisePath sample_path(std::uint64_t seed, const GridSpec& grid) {
  grid.validate();
  NoisePath p;
  p.dt_ = grid.dt;
  p.lo_ = grid_steps(grid.t_min, grid.dt);
  p.hi_ = grid_steps(grid.t_max, grid.dt);
  p.origin_ = 0;
  p.store_ = grow_store(nullptr, seed, grid.dt, floor_div(p.lo_, kPathBlockSize),
                        floor_div(p.hi_, kPathBlockSize));
  p.base_ = 0.0;
  p.lineage_.root_seed = seed;
  p.lineage_.block_size = kPathBlockSize;
  return p;
}

NoisePath shift(const NoisePath& path, double s) {
  const std::int64_t k = path.index_of(s);
  const std::int64_t origin = path.origin_ + k;
  if (origin < path.lo_ || origin > path.hi_) {
    throw std::out_of_range("shift: new origin outside the materialized window; extend first");
  }
  NoisePath p = path;
  p.origin_ = origin;
  p.base_ = path.root_value(origin);
  p.lineage_.origin_offset = origin;
  return p;
}

NoisePath extend_left(const NoisePath& path, double delta) {
  const std::int64_t k = path.index_of(delta);
  if (k <= 0) throw std::invalid_argument("extend_left: delta must be > 0");
  NoisePath p = path;
  p.lo_ = path.lo_ - k;
  const auto& s = *path.store_;
  const std::int64_t b_lo = floor_div(p.lo_, s.block_size);
  if (b_lo < s.first_block) p.store_ = grow_store(&s, s.seed, s.dt, b_lo, s.last_block());
  ++p.lineage_.left_extensions;
  return p;
}

NoisePath extend_right(const NoisePath& path, double delta) {
  const std::int64_t k = path.index_of(delta);
  if (k <= 0) throw std::invalid_argument("extend_right: delta must be > 0");
  NoisePath p = path;
  p.hi_ = path.hi_ + k;
  const auto& s = *path.store_;
  const std::int64_t b_hi = floor_div(p.hi_, s.block_size);
  if (b_hi > s.last_block()) p.store_ = grow_store(&s, s.seed, s.dt, s.first_block, b_hi);
  ++p.lineage_.right_extensions;
  return p;
}

void write_path_csv(std::ostream& os, const NoisePath& path) {
  const auto old = os.precision(17);
  os << "t,w\n";
  for (std::int64_t k = path.first_index(); k <= path.last_index(); ++k) {
    os << static_cast<double>(k) * path.dt() << ',' << path.at_index(k) << '\n';
  }
  os.precision(old);
}

}  // namespace stospec
