#include "stospec/conjugacy.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "stospec/parallel.hpp"
#include "stospec/stationary.hpp"

namespace stospec {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::int64_t ceil_steps(double t, double dt) {
  return static_cast<std::int64_t>(std::ceil(t / dt - 1e-9));
}

// psi on grid indices kb..kt together with the right-anchored trapezoid
// integral C[i] = int_{t_i}^{t_kt} psi. Entries left of a backward blow-up are
// dropped, so `first` may be larger than the requested kb.
struct PsiTable {
  double dt = 0.0;
  std::int64_t first = 0;  // grid index of psi[0]
  std::int64_t last = 0;
  std::vector<double> psi;
  std::vector<double> tail;

  double t_first() const { return static_cast<double>(first) * dt; }
  double t_last() const { return static_cast<double>(last) * dt; }

  // Position of r inside cell i (0 <= u <= 1 measured from the right node).
  std::pair<std::size_t, double> locate(double r) const {
    const double pos = (r - t_first()) / dt;
    auto i = static_cast<std::int64_t>(std::floor(pos));
    i = std::clamp<std::int64_t>(i, 0, static_cast<std::int64_t>(psi.size()) - 2);
    const double u = static_cast<double>(i + 1) - pos;
    return {static_cast<std::size_t>(i), std::clamp(u, 0.0, 1.0)};
  }

  // int_r^{t_last} of the piecewise linear interpolant.
  double integral(double r) const {
    const auto [i, u] = locate(r);
    const double right = psi[i + 1];
    const double left = psi[i];
    return tail[i + 1] + dt * (u * right + 0.5 * u * u * (left - right));
  }

  double value(double r) const {
    const auto [i, u] = locate(r);
    return psi[i + 1] + u * (psi[i] - psi[i + 1]);
  }
};

PsiTable build_table(ShiftedFlow& flow, double x, std::int64_t kb, std::int64_t kt) {
  PsiTable tab;
  tab.dt = flow.dt();
  auto psi = flow.trajectory(x, kb, kt);
  std::size_t skip = 0;
  for (std::size_t i = psi.size(); i-- > 0;) {
    if (!std::isfinite(psi[i])) {
      skip = i + 1;
      break;
    }
  }
  if (psi.size() - skip < 2) throw std::runtime_error("radius: backward solution blew up at t = 0");
  tab.first = kb + static_cast<std::int64_t>(skip);
  tab.last = kt;
  tab.psi.assign(psi.begin() + static_cast<std::ptrdiff_t>(skip), psi.end());
  tab.tail.assign(tab.psi.size(), 0.0);
  for (std::size_t i = tab.psi.size() - 1; i-- > 0;) {
    tab.tail[i] = tab.tail[i + 1] + 0.5 * tab.dt * (tab.psi[i] + tab.psi[i + 1]);
  }
  return tab;
}

}  // namespace

double conjugacy_delta(const PitchforkParams& params) {
  params.validate();
  const double m2 = moment(params, 2);
  const double delta = 0.25 * m2 - params.alpha;
  if (!(delta > 0.0)) {
    std::ostringstream os;
    os << std::setprecision(10) << "conjugacy: alpha = " << params.alpha << ", sigma = " << params.sigma
       << " is outside the window: E[a^2] = " << m2 << ", E[a^2]/4 - alpha = " << delta << " <= 0";
    throw std::invalid_argument(os.str());
  }
  return delta;
}

ShiftedFlow::ShiftedFlow(const PitchforkParams& params, const NoisePath& path,
                         const ConjugacyOptions& options)
    : params_(params), options_(options), path_(path) {
  if (!(options_.tol > 0.0)) throw std::invalid_argument("conjugacy: tol must be > 0");
  if (!(options_.level > 0.0)) throw std::invalid_argument("conjugacy: level must be > 0");
  if (!(options_.backward > 0.0) || options_.max_backward < options_.backward) {
    throw std::invalid_argument("conjugacy: need 0 < backward <= max_backward");
  }
  delta_ = conjugacy_delta(params_);
  second_moment_ = moment(params_, 2);
  const auto fp = pullback_fixed_point(params_, path_, 0.0, options_.pullback_tol);
  a0_ = fp.at_index(0);
  path_ = fp.path;
}

double ShiftedFlow::horizon(double x) const {
  const double ax = std::abs(x);
  double t = options_.onset;
  if (ax > 0.0) t = std::max(t, 2.0 / delta_ * std::log(20.0 * ax / (delta_ * options_.tol)));
  return static_cast<double>(ceil_steps(t, dt())) * dt();
}

void ShiftedFlow::cover(std::int64_t k_lo, std::int64_t k_hi) {
  if (k_lo < path_.first_index()) {
    path_ = extend_left(path_, static_cast<double>(path_.first_index() - k_lo) * dt());
  }
  if (k_hi > path_.last_index()) {
    path_ = extend_right(path_, static_cast<double>(k_hi - path_.last_index()) * dt());
  }
}

std::vector<double> ShiftedFlow::trajectory(double x, std::int64_t k_lo, std::int64_t k_hi) {
  if (k_lo > 0 || k_hi < 0) throw std::invalid_argument("ShiftedFlow: need k_lo <= 0 <= k_hi");
  cover(k_lo, k_hi);
  const SplittingStep step(params_, dt());
  std::vector<double> out(static_cast<std::size_t>(k_hi - k_lo + 1));
  const auto at = [&](std::int64_t k) -> double& { return out[static_cast<std::size_t>(k - k_lo)]; };

  // Both orbits see the same increments, so x = 0 gives exactly 0 and the
  // order of offsets is preserved step by step.
  double ref = a0_;
  double y = a0_ + x;
  at(0) = y - ref;
  if (k_hi > 0) {
    const auto inc = path_.increments(0, k_hi);
    for (std::int64_t k = 0; k < k_hi; ++k) {
      const double dw = inc[static_cast<std::size_t>(k)];
      ref = step(ref, dw);
      y = step(y, dw);
      at(k + 1) = y - ref;
    }
  }
  if (k_lo < 0) {
    const auto inc = path_.increments(k_lo, 0);
    ref = a0_;
    y = a0_ + x;
    bool alive = true;
    for (std::int64_t k = 0; k > k_lo; --k) {
      if (alive) {
        const double dw = inc[static_cast<std::size_t>(k - 1 - k_lo)];
        ref = step.inverse(ref, dw);
        y = step.inverse(y, dw);
        alive = std::isfinite(ref) && std::isfinite(y);
      }
      at(k - 1) = alive ? y - ref : kNaN;
    }
  }
  return out;
}

double ShiftedFlow::operator()(double t, double x) {
  const std::int64_t k = grid_steps(t, dt());
  const auto v = trajectory(x, std::min<std::int64_t>(k, 0), std::max<std::int64_t>(k, 0));
  return k >= 0 ? v.back() : v.front();
}

bool ShiftedFlow::onset_verified(double t_end) {
  const std::int64_t kt = ceil_steps(t_end, dt());
  const std::int64_t ko = ceil_steps(options_.onset, dt());
  if (kt <= 0) return false;
  cover(0, kt);
  const SplittingStep step(params_, dt());
  const auto inc = path_.increments(0, kt);
  double a = a0_;
  double integral = 0.0;
  bool ok = true;
  for (std::int64_t k = 0; k < kt; ++k) {
    const double next = step(a, inc[static_cast<std::size_t>(k)]);
    integral += 0.5 * dt() * (a * a + next * next);
    a = next;
    if (k + 1 >= ko) {
      const double avg = integral / (static_cast<double>(k + 1) * dt());
      ok = ok && std::abs(avg - second_moment_) <= 0.5 * delta_;
    }
  }
  return ok;
}

RadiusResult radius(ShiftedFlow& flow, double x, std::optional<std::pair<double, double>> bracket) {
  if (x == 0.0 || !std::isfinite(x)) throw std::invalid_argument("radius: x must be finite and nonzero");
  const ConjugacyOptions& opt = flow.options();
  const double dt = flow.dt();
  const double sgn = x > 0.0 ? 1.0 : -1.0;
  RadiusResult res;
  res.horizon = flow.horizon(x);
  const std::int64_t kt = grid_steps(res.horizon, dt);

  double left = opt.backward;
  if (bracket) {
    if (!(bracket->first < bracket->second)) throw std::invalid_argument("radius: empty bracket");
    left = std::max(0.0, -bracket->first);
  }

  for (;;) {
    const PsiTable tab = build_table(flow, x, -ceil_steps(left, dt), kt);
    // G(r) = sign(x) int_r^T psi - level is strictly decreasing with G(T) = -level.
    const auto G = [&](double r) { return sgn * tab.integral(r) - opt.level; };
    double lo = tab.t_first();
    double hi = tab.t_last();
    const bool blew_up = tab.first > -ceil_steps(left, dt);
    if (bracket) {
      lo = std::max(lo, bracket->first);
      hi = std::min(hi, bracket->second);
      if (!(lo < hi) || !(G(lo) > 0.0) || !(G(hi) < 0.0)) {
        if (blew_up && lo == tab.t_first() && lo < hi && !(G(lo) > 0.0)) {
          throw RootUnavailable("radius: backward solution blew up before the integral reached the level",
                                sgn * tab.integral(lo));
        }
        throw std::invalid_argument("radius: bracket does not contain the root");
      }
    } else if (!(G(lo) > 0.0)) {
      if (blew_up) {
        std::ostringstream os;
        os << "radius: no root for x = " << x << ": psi explodes backward at t = " << tab.t_first()
           << " with |int psi| = " << sgn * tab.integral(lo) << " < " << opt.level;
        throw RootUnavailable(os.str(), sgn * tab.integral(lo));
      }
      if (left >= opt.max_backward) {
        std::ostringstream os;
        os << "radius: no bracket for x = " << x << " within the left window [" << tab.t_first() << ", 0]";
        throw std::runtime_error(os.str());
      }
      left = std::min(2.0 * left, opt.max_backward);
      continue;
    }
    res.backward = -tab.t_first();

    while (hi - lo > 0.25 * opt.tol) {
      const double mid = 0.5 * (lo + hi);
      (G(mid) > 0.0 ? lo : hi) = mid;
      ++res.bisection_steps;
    }
    double r = 0.5 * (lo + hi);
    for (int i = 0; i < 3; ++i) {
      const double slope = std::abs(tab.value(r));
      if (!(slope > 0.0)) break;
      const double next = r + G(r) / slope;
      if (!(next >= lo - opt.tol && next <= hi + opt.tol)) break;
      r = next;
    }
    res.r = r;
    return res;
  }
}

double conjugacy_value(ShiftedFlow& flow, double x) {
  if (x == 0.0) return 0.0;
  const double e = std::exp(radius(flow, x).r);
  return x > 0.0 ? e : -e;
}

std::vector<double> log_x_grid(double lo_exp, double hi_exp, int per_decade) {
  if (!(hi_exp > lo_exp) || per_decade < 1) throw std::invalid_argument("log_x_grid: bad range");
  const auto n = static_cast<int>(std::llround((hi_exp - lo_exp) * per_decade));
  std::vector<double> pos(static_cast<std::size_t>(n + 1));
  for (int i = 0; i <= n; ++i) pos[static_cast<std::size_t>(i)] = std::pow(10.0, lo_exp + static_cast<double>(i) / per_decade);
  std::vector<double> grid;
  grid.reserve(2 * pos.size() + 1);
  for (auto it = pos.rbegin(); it != pos.rend(); ++it) grid.push_back(-*it);
  grid.push_back(0.0);
  grid.insert(grid.end(), pos.begin(), pos.end());
  return grid;
}

bool ConjugacyTable::g_strictly_increasing() const {
  for (std::size_t i = 1; i < g.size(); ++i) {
    if (!(g[i] > g[i - 1])) return false;
  }
  return true;
}

double ConjugacyTable::max_residual() const {
  double m = 0.0;
  for (const auto& row : residual) {
    for (double v : row) {
      if (!std::isnan(v)) m = std::max(m, v);
    }
  }
  return m;
}

ConjugacyTable conjugacy(const PitchforkParams& params, std::uint64_t seed, double dt,
                         const std::vector<double>& x_grid, const std::vector<double>& shifts,
                         const ConjugacyOptions& options) {
  if (!std::is_sorted(x_grid.begin(), x_grid.end())) {
    throw std::invalid_argument("conjugacy: x grid must be sorted");
  }
  ConjugacyTable table;
  table.seed = seed;
  table.params = params;
  table.dt = dt;
  table.x = x_grid;
  table.shifts = shifts;

  const NoisePath path = sample_path(seed, {dt, 0.0, 1.0});
  ShiftedFlow flow(params, path, options);
  table.delta = flow.delta();
  table.second_moment = flow.second_moment();

  const std::size_t n = x_grid.size();
  table.level = options.level;
  table.r.assign(n, kNaN);
  table.g.assign(n, 0.0);
  table.mass.assign(n, kNaN);
  table.horizon.assign(n, 0.0);
  double max_horizon = options.onset;
  for (std::size_t i = 0; i < n; ++i) {
    table.horizon[i] = flow.horizon(x_grid[i]);
    max_horizon = std::max(max_horizon, table.horizon[i]);
    if (x_grid[i] == 0.0) continue;
    try {
      table.r[i] = radius(flow, x_grid[i]).r;
      table.g[i] = std::copysign(std::exp(table.r[i]), x_grid[i]);
    } catch (const RootUnavailable& e) {
      table.g[i] = kNaN;
      table.mass[i] = e.mass();
      ++table.missing;
    }
  }
  table.onset_verified = flow.onset_verified(max_horizon);

  table.residual.assign(shifts.size(), std::vector<double>(n, 0.0));
  table.r_defect.assign(shifts.size(), std::vector<double>(n, 0.0));
  for (std::size_t j = 0; j < shifts.size(); ++j) {
    const double s = shifts[j];
    if (!(s > 0.0)) throw std::invalid_argument("conjugacy: shifts must be > 0");
    ShiftedFlow moved(params, shift(flow.path(), s), options);
    for (std::size_t i = 0; i < n; ++i) {
      if (x_grid[i] == 0.0) continue;
      if (std::isnan(table.r[i])) {
        table.residual[j][i] = table.r_defect[j][i] = kNaN;
        continue;
      }
      const double y = flow(s, x_grid[i]);
      double r_moved = kNaN;
      try {
        r_moved = radius(moved, y).r;
      } catch (const RootUnavailable&) {
        ++table.missing_shifted;
      }
      const double g_moved = std::copysign(std::exp(r_moved), y);
      table.residual[j][i] =
          std::abs(g_moved - std::exp(-s) * table.g[i]) / std::max(std::abs(table.g[i]), options.tol);
      table.r_defect[j][i] = std::abs(table.r[i] - r_moved - s);
    }
  }
  return table;
}

UniformityTable uniformity_probe(const PitchforkParams& params, const std::vector<std::uint64_t>& seeds,
                                 const std::vector<double>& abs_x, double dt,
                                 const ConjugacyOptions& options, unsigned workers) {
  conjugacy_delta(params);
  UniformityTable table;
  table.params = params;
  table.seeds = seeds;
  table.abs_x = abs_x;
  table.per_seed.assign(seeds.size(), std::vector<double>(abs_x.size(), 0.0));
  parallel_for(seeds.size(), workers, [&](std::size_t i) {
    ShiftedFlow flow(params, sample_path(seeds[i], {dt, 0.0, 1.0}), options);
    for (std::size_t j = 0; j < abs_x.size(); ++j) {
      const double x = std::abs(abs_x[j]);
      if (x == 0.0) continue;
      try {
        table.per_seed[i][j] =
            std::max(std::abs(conjugacy_value(flow, x)), std::abs(conjugacy_value(flow, -x)));
      } catch (const RootUnavailable&) {
        table.per_seed[i][j] = kNaN;
      }
    }
  });
  table.max_abs_g.assign(abs_x.size(), 0.0);
  table.missing.assign(abs_x.size(), 0);
  for (const auto& row : table.per_seed) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (std::isnan(row[j])) {
        ++table.missing[j];
      } else {
        table.max_abs_g[j] = std::max(table.max_abs_g[j], row[j]);
      }
    }
  }
  return table;
}

void write_conjugacy_csv(std::ostream& os, const ConjugacyTable& table) {
  const auto old = os.precision(17);
  os << "x,r,g";
  const char* names[] = {"rho_s05", "rho_s1", "rho_s2"};
  for (std::size_t j = 0; j < table.shifts.size(); ++j) {
    const double s = table.shifts[j];
    if (j < 3 && s == std::array<double, 3>{0.5, 1.0, 2.0}[j]) {
      os << ',' << names[j];
    } else {
      os << ",rho_s" << s;
    }
  }
  os << '\n';
  for (std::size_t i = 0; i < table.x.size(); ++i) {
    os << table.x[i] << ',';
    if (std::isfinite(table.r[i])) os << table.r[i];
    os << ',' << table.g[i];
    for (const auto& row : table.residual) os << ',' << row[i];
    os << '\n';
  }
  os.precision(old);
}

void write_uniformity_csv(std::ostream& os, const UniformityTable& table) {
  const auto old = os.precision(17);
  os << "abs_x,max_abs_g,missing\n";
  for (std::size_t j = 0; j < table.abs_x.size(); ++j) {
    os << table.abs_x[j] << ',' << table.max_abs_g[j] << ',' << table.missing[j] << '\n';
  }
  os.precision(old);
}

}  // namespace stospec
