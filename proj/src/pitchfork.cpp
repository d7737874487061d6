#include "stospec/pitchfork.hpp"

#include <algorithm>
#include <iomanip>
#include <ostream>
#include <stdexcept>
#include <string>

#include "stospec/parallel.hpp"

namespace stospec {

void PitchforkParams::validate() const {
  if (!std::isfinite(alpha)) throw std::invalid_argument("pitchfork: alpha must be finite");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw std::invalid_argument("pitchfork: sigma must be >= 0");
  }
}

double advance(const SplittingStep& step, double x0, std::span<const double> increments,
               std::span<double> out) {
  double x = x0;
  if (out.empty()) {
    for (double dw : increments) x = step(x, dw);
    return x;
  }
  if (out.size() != increments.size() + 1) {
    throw std::invalid_argument("advance: output size must be increments + 1");
  }
  out[0] = x;
  for (std::size_t i = 0; i < increments.size(); ++i) {
    x = step(x, increments[i]);
    out[i + 1] = x;
  }
  return x;
}

namespace {

struct Window {
  std::int64_t i0;
  std::int64_t i1;
};

Window checked_window(const NoisePath& path, double t0, double t1) {
  if (!(t1 > t0)) throw std::invalid_argument("integrate: t1 must be > t0");
  const Window w{path.index_of(t0), path.index_of(t1)};
  if (w.i0 < path.first_index() || w.i1 > path.last_index()) {
    throw std::out_of_range("integrate: [t0, t1] outside the path window");
  }
  return w;
}

NoisePath cover(NoisePath path, std::int64_t lo, std::int64_t hi) {
  if (lo < path.first_index()) {
    path = extend_left(path, static_cast<double>(path.first_index() - lo) * path.dt());
  }
  if (hi > path.last_index()) {
    path = extend_right(path, static_cast<double>(hi - path.last_index()) * path.dt());
  }
  return path;
}

}  // namespace

Trajectory integrate(const PitchforkParams& params, const NoisePath& path, double x0, double t0,
                     double t1) {
  params.validate();
  const Window w = checked_window(path, t0, t1);
  const auto inc = path.increments(w.i0, w.i1);
  Trajectory tr{{}, std::vector<double>(inc.size() + 1), params, path};
  advance(SplittingStep(params, path.dt()), x0, inc, tr.states);
  tr.times.resize(tr.states.size());
  for (std::size_t i = 0; i < tr.times.size(); ++i) {
    tr.times[i] = static_cast<double>(w.i0 + static_cast<std::int64_t>(i)) * path.dt();
  }
  for (std::size_t i = 0; i < tr.states.size(); ++i) {
    if (!std::isfinite(tr.states[i])) {
      throw std::runtime_error("integrate: non-finite state at t=" + std::to_string(tr.times[i]));
    }
  }
  return tr;
}

double flow(const PitchforkParams& params, const NoisePath& path, double x0, double t0,
            double t1) {
  params.validate();
  const Window w = checked_window(path, t0, t1);
  const double x = advance(SplittingStep(params, path.dt()), x0, path.increments(w.i0, w.i1));
  if (!std::isfinite(x)) throw std::runtime_error("flow: non-finite state");
  return x;
}

double FixedPointTrajectory::at_index(std::int64_t k) const {
  if (k < first_index || k > last_index()) {
    throw std::out_of_range("fixed point: index outside the computed window");
  }
  return values[static_cast<std::size_t>(k - first_index)];
}

std::vector<double> FixedPointTrajectory::times() const {
  std::vector<double> t(values.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = static_cast<double>(first_index + static_cast<std::int64_t>(i)) * dt;
  }
  return t;
}

double default_bracket(const PitchforkParams& params) {
  return 1.0 + std::abs(params.alpha) + 5.0 * params.sigma;
}

double pullback_gap(const PitchforkParams& params, const NoisePath& path, double depth,
                    double t_start, double horizon, double bracket) {
  const SplittingStep step(params, path.dt());
  const std::int64_t is = path.index_of(t_start);
  const std::int64_t ih = path.index_of(horizon);
  const std::int64_t i0 = is - grid_steps(depth, path.dt());
  if (i0 < path.first_index() || ih > path.last_index()) {
    throw std::out_of_range("pullback_gap: window not covered by the path");
  }
  double up = bracket;
  double lo = -bracket;
  for (double dw : path.increments(i0, is)) {
    up = step(up, dw);
    lo = step(lo, dw);
  }
  double gap = up - lo;
  for (double dw : path.increments(is, ih)) {
    up = step(up, dw);
    lo = step(lo, dw);
    gap = std::max(gap, up - lo);
  }
  return gap;
}

FixedPointTrajectory pullback_fixed_point(const PitchforkParams& params, const NoisePath& path,
                                          double horizon, double tol,
                                          const PullbackOptions& options) {
  params.validate();
  if (!(params.sigma > 0.0)) {
    throw std::invalid_argument("pullback_fixed_point: requires sigma > 0");
  }
  if (!(tol > 0.0)) throw std::invalid_argument("pullback_fixed_point: tol must be > 0");
  const double dt = path.dt();
  const std::int64_t is = grid_steps(options.t_start, dt);
  const std::int64_t ih = grid_steps(horizon, dt);
  if (ih < is) throw std::invalid_argument("pullback_fixed_point: horizon < t_start");
  const double bracket = options.bracket > 0.0 ? options.bracket : default_bracket(params);
  const SplittingStep step(params, dt);

  FixedPointTrajectory fp;
  fp.params = params;
  fp.dt = dt;
  fp.first_index = is;
  fp.path = cover(path, is, ih);

  const std::size_t n = static_cast<std::size_t>(ih - is);
  const auto window_inc = fp.path.increments(is, ih);
  std::vector<double> up(n + 1), lo(n + 1);

  for (double depth = options.initial_depth; depth <= options.max_depth; depth *= 2.0) {
    const std::int64_t i0 = is - grid_steps(depth, dt);
    fp.path = cover(fp.path, i0, ih);
    double u = bracket;
    double l = -bracket;
    for (double dw : fp.path.increments(i0, is)) {
      u = step(u, dw);
      l = step(l, dw);
    }
    double gap = u - l;
    if (gap <= tol) {
      advance(step, u, window_inc, up);
      advance(step, l, window_inc, lo);
      for (std::size_t i = 0; i <= n; ++i) gap = std::max(gap, up[i] - lo[i]);
    }
    fp.gap_history.emplace_back(depth, gap);
    if (!std::isfinite(gap)) throw std::runtime_error("pullback_fixed_point: non-finite state");
    if (gap <= tol) {
      fp.values.resize(n + 1);
      for (std::size_t i = 0; i <= n; ++i) fp.values[i] = 0.5 * (up[i] + lo[i]);
      fp.depth = depth;
      fp.gap = gap;
      return fp;
    }
  }
  throw std::runtime_error("pullback_fixed_point: no convergence within max depth");
}

OuFixedPoint ou_fixed_point(double alpha, double sigma, const NoisePath& path, double tail_tol) {
  if (!(alpha > 0.0)) throw std::invalid_argument("ou_fixed_point: alpha must be > 0");
  OuFixedPoint z;
  z.depth = -path.t_min();
  z.tail_bound = std::exp(-alpha * z.depth);
  if (z.tail_bound > tail_tol) {
    throw std::out_of_range("ou_fixed_point: left window too short for the tail tolerance");
  }
  if (sigma == 0.0) return z;
  const double dt = path.dt();
  const auto inc = path.increments(path.first_index(), 0);
  double sum = 0.0;
  for (std::size_t j = 0; j < inc.size(); ++j) {
    const auto k = path.first_index() + static_cast<std::int64_t>(j);
    sum += std::exp(alpha * static_cast<double>(k) * dt) * inc[j];
  }
  z.value = sigma * sum;
  return z;
}

double AttractivityProbe::fraction_above(std::size_t t_index, double threshold) const {
  if (per_path.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& row : per_path) hits += row.at(t_index) > threshold ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(per_path.size());
}

AttractivityProbe uniform_attractivity_probe(const PitchforkParams& params,
                                             const std::vector<std::uint64_t>& seeds,
                                             double delta, const std::vector<double>& times,
                                             const ProbeOptions& options) {
  params.validate();
  if (!(delta >= 0.0)) throw std::invalid_argument("probe: delta must be >= 0");
  if (times.empty()) throw std::invalid_argument("probe: times must be nonempty");
  AttractivityProbe probe;
  probe.params = params;
  probe.delta = delta;
  probe.times = times;
  probe.seeds = seeds;
  probe.per_path.assign(seeds.size(), std::vector<double>(times.size(), 0.0));

  std::vector<std::int64_t> marks(times.size());
  for (std::size_t j = 0; j < times.size(); ++j) {
    marks[j] = grid_steps(times[j], options.dt);
    if (marks[j] < 0) throw std::invalid_argument("probe: times must be >= 0");
  }
  const std::int64_t last = *std::max_element(marks.begin(), marks.end());
  const double horizon = static_cast<double>(last) * options.dt;
  const double offsets[4] = {delta, -delta, 0.5 * delta, -0.5 * delta};

  parallel_for(seeds.size(), options.workers, [&](std::size_t i) {
    auto& row = probe.per_path[i];
    if (delta == 0.0) return;
    const NoisePath path = sample_path(seeds[i], {options.dt, 0.0, horizon});
    const auto fp = pullback_fixed_point(params, path, horizon, options.tol);
    const SplittingStep step(params, options.dt);
    const auto inc = fp.path.increments(0, last);
    // Reference is phi(t, w, a(w)), which equals a(theta_t w) by invariance.
    double ref = fp.values.front();
    double xs[4];
    for (int q = 0; q < 4; ++q) xs[q] = ref + offsets[q];
    auto record = [&](std::int64_t k) {
      double m = 0.0;
      for (double x : xs) m = std::max(m, std::abs(x - ref));
      for (std::size_t j = 0; j < marks.size(); ++j) {
        if (marks[j] == k) row[j] = m;
      }
    };
    record(0);
    for (std::int64_t k = 0; k < last; ++k) {
      const double dw = inc[static_cast<std::size_t>(k)];
      ref = step(ref, dw);
      for (double& x : xs) x = step(x, dw);
      record(k + 1);
    }
  });

  probe.sup.assign(times.size(), 0.0);
  for (const auto& row : probe.per_path) {
    for (std::size_t j = 0; j < times.size(); ++j) probe.sup[j] = std::max(probe.sup[j], row[j]);
  }
  return probe;
}

void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  const auto old = os.precision(17);
  os << "t,x\n";
  for (std::size_t i = 0; i < traj.times.size(); ++i) {
    os << traj.times[i] << ',' << traj.states[i] << '\n';
  }
  os.precision(old);
}

void write_fixed_point_csv(std::ostream& os, const FixedPointTrajectory& fp) {
  const auto old = os.precision(17);
  os << "t,a\n";
  const auto t = fp.times();
  for (std::size_t i = 0; i < t.size(); ++i) os << t[i] << ',' << fp.values[i] << '\n';
  os.precision(old);
}

void write_probe_csv(std::ostream& os, const AttractivityProbe& probe) {
  const auto old = os.precision(17);
  os << "t,S\n";
  for (std::size_t j = 0; j < probe.times.size(); ++j) {
    os << probe.times[j] << ',' << probe.sup[j] << '\n';
  }
  os.precision(old);
}

}  // namespace stospec
