#include "stospec/cocycle.hpp"

#include <Eigen/SVD>
#include <unsupported/Eigen/MatrixFunctions>
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "stospec/parallel.hpp"
#include "stospec/random.hpp"

namespace stospec {

namespace {

using MatrixL = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
using VectorL = Eigen::Matrix<long double, Eigen::Dynamic, 1>;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

bool is_identity(const Eigen::MatrixXd& u) {
  return u.isIdentity(0.0);
}

std::int64_t integer_time(double t, const char* what) {
  const double r = std::round(t);
  if (std::abs(t - r) > 1e-9 * std::max(1.0, std::abs(t))) {
    throw std::invalid_argument(std::string(what) + ": discrete-time cocycle needs integer times");
  }
  return static_cast<std::int64_t>(r);
}

void check_schedule(const std::vector<double>& schedule) {
  if (schedule.empty()) throw std::invalid_argument("evaluate: empty schedule");
  double prev = 0.0;
  for (double t : schedule) {
    if (!(t > prev)) throw std::invalid_argument("evaluate: schedule must be positive and increasing");
    prev = t;
  }
}

CocycleSample finish(std::vector<double> times, std::vector<LogQR> factors, double rate_shift) {
  CocycleSample s;
  s.times = std::move(times);
  s.factors = std::move(factors);
  for (std::size_t k = 0; k < s.times.size(); ++k) {
    if (rate_shift != 0.0) s.factors[k].add_log_scale(rate_shift * s.times[k]);
    s.log_singular_values.push_back(s.factors[k].log_singular_values());
  }
  return s;
}

CocycleSample evaluate_iid(const MatrixIid& m, const Realization& w,
                           const std::vector<double>& schedule, double rate_shift) {
  const std::int64_t offset = integer_time(w.shift, "evaluate");
  std::vector<double> cumulative(m.probabilities.size());
  std::partial_sum(m.probabilities.begin(), m.probabilities.end(), cumulative.begin());
  const int d = static_cast<int>(m.generators.front().rows());
  LogQR acc(d);
  std::vector<LogQR> factors;
  std::int64_t step = 0;
  for (double t : schedule) {
    const std::int64_t target = integer_time(t, "evaluate");
    for (; step < target; ++step) {
      const double u = counter_uniform(w.seed, static_cast<std::uint64_t>(offset + step));
      std::size_t pick = 0;
      while (pick + 1 < cumulative.size() && u >= cumulative[pick]) ++pick;
      acc.apply(m.generators[pick]);
    }
    factors.push_back(acc);
  }
  return finish(schedule, std::move(factors), rate_shift);
}

CocycleSample evaluate_tower(const RotationTower& tower, const Realization& w,
                             const std::vector<double>& schedule, double rate_shift) {
  const std::int64_t offset = integer_time(w.shift, "evaluate");
  std::uint64_t point = tower.rotate(RotationTower::base_point(w.seed), offset);
  double log_abs = 0.0;
  std::vector<LogQR> factors;
  std::int64_t step = 0;
  for (double t : schedule) {
    const std::int64_t target = integer_time(t, "evaluate");
    for (; step < target; ++step) {
      log_abs += std::log(tower.multiplier(point));
      point = tower.rotate(point);
    }
    factors.push_back(LogQR::scalar(log_abs));
  }
  return finish(schedule, std::move(factors), rate_shift);
}

CocycleSample evaluate_flow(const MatrixFlow& f, const std::vector<double>& schedule,
                            double rate_shift) {
  // Steps of length at most 1 keep every factor well inside double range.
  std::map<double, Eigen::MatrixXd> cache;
  auto step_matrix = [&](double h) -> const Eigen::MatrixXd& {
    auto it = cache.find(h);
    if (it == cache.end()) it = cache.emplace(h, (f.generator * h).exp()).first;
    return it->second;
  };
  LogQR acc(static_cast<int>(f.generator.rows()));
  std::vector<LogQR> factors;
  double prev = 0.0;
  for (double t : schedule) {
    const double span = t - prev;
    const auto pieces = static_cast<std::int64_t>(std::ceil(span - 1e-12));
    const double h = span / static_cast<double>(std::max<std::int64_t>(pieces, 1));
    for (std::int64_t i = 0; i < std::max<std::int64_t>(pieces, 1); ++i) acc.apply(step_matrix(h));
    factors.push_back(acc);
    prev = t;
  }
  return finish(schedule, std::move(factors), rate_shift);
}

NoisePath realization_path(const PitchforkLinearization& spec, const Realization& w,
                           double horizon) {
  const std::int64_t s_steps = grid_steps(w.shift, spec.dt);
  const double s = static_cast<double>(s_steps) * spec.dt;
  auto path = sample_path(w.seed, {spec.dt, std::min(0.0, s), std::max(0.0, s) + horizon});
  if (s_steps != 0) path = shift(path, s);
  return path;
}

}  // namespace

// ---------------------------------------------------------------- RotationTower

namespace {

constexpr std::uint64_t kGoldenRotation = 0x9e3779b97f4a7c15ULL;  // odd

std::uint64_t circular_distance(std::uint64_t x) { return std::min(x, std::uint64_t{0} - x); }

}  // namespace

RotationTower::RotationTower(int n_max) : n_max_(n_max), rotation_(kGoldenRotation) {
  if (n_max < 2) throw std::invalid_argument("RotationTower: n_max must be >= 2");
  const std::uint64_t gap = std::min(circular_distance(rotation_), circular_distance(2 * rotation_));
  // Reserved spans include a guard of 1/8 of the arc after each copy.
  struct Span {
    std::uint64_t start, length;
  };
  std::vector<Span> reserved;
  auto fits = [&](std::uint64_t c, std::uint64_t len) {
    for (int j = 0; j < 3; ++j) {
      const std::uint64_t a = c + static_cast<std::uint64_t>(j) * rotation_;
      for (const auto& r : reserved) {
        if (arcs_intersect(a, len, r.start, r.length)) return false;
      }
    }
    return true;
  };
  for (int n = 2; n <= n_max; ++n) {
    const long double frac = 1.0L / (static_cast<long double>(n) * n * n);
    std::uint64_t len = static_cast<std::uint64_t>(frac * 18446744073709551616.0L);
    len = std::max<std::uint64_t>(1, std::min(len, gap / 4));
    const std::uint64_t span = len + std::max<std::uint64_t>(len / 8, 1);
    std::vector<std::uint64_t> candidates{0};
    for (const auto& r : reserved) {
      for (int j = 0; j < 3; ++j) {
        candidates.push_back(r.start + r.length - static_cast<std::uint64_t>(j) * rotation_);
      }
    }
    std::sort(candidates.begin(), candidates.end());
    bool placed = false;
    for (std::uint64_t c : candidates) {
      if (!fits(c, span)) continue;
      arcs_.push_back({c, len, n});
      for (int j = 0; j < 3; ++j) reserved.push_back({c + static_cast<std::uint64_t>(j) * rotation_, span});
      placed = true;
      break;
    }
    if (!placed) throw std::runtime_error("RotationTower: no room for U_" + std::to_string(n));
  }
  if (!verify_disjoint()) throw std::logic_error("RotationTower: arcs overlap");
}

double RotationTower::multiplier(std::uint64_t point) const {
  for (const auto& a : arcs_) {
    const std::uint64_t rel = point - a.start;
    if (rel < a.length) return 1.0 / a.n;
    if (rel - rotation_ < a.length) return a.n;
    if (rel - 2 * rotation_ < a.length) return 1.0 / a.n;
  }
  return 1.0;
}

std::uint64_t RotationTower::base_point(std::uint64_t seed) { return splitmix64(seed); }

bool RotationTower::verify_disjoint() const {
  std::vector<std::pair<std::uint64_t, std::uint64_t>> all;
  for (const auto& a : arcs_) {
    for (int j = 0; j < 3; ++j) all.emplace_back(a.start + static_cast<std::uint64_t>(j) * rotation_, a.length);
  }
  for (std::size_t i = 0; i < all.size(); ++i) {
    for (std::size_t k = i + 1; k < all.size(); ++k) {
      if (arcs_intersect(all[i].first, all[i].second, all[k].first, all[k].second)) return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------- CocycleSpec

int CocycleSpec::dimension() const {
  return std::visit(Overloaded{[](const PitchforkLinearization&) { return 1; },
                               [](const MatrixIid& m) {
                                 return m.generators.empty() ? 0 : static_cast<int>(m.generators[0].rows());
                               },
                               [](const MatrixFlow& f) { return static_cast<int>(f.generator.rows()); },
                               [](const RotationTower&) { return 1; }},
                    kind);
}

bool CocycleSpec::discrete_time() const {
  return std::holds_alternative<MatrixIid>(kind) || std::holds_alternative<RotationTower>(kind);
}

std::string CocycleSpec::describe() const {
  std::ostringstream os;
  os.precision(17);
  std::visit(Overloaded{[&](const PitchforkLinearization& p) {
                          os << "pitchfork alpha=" << p.params.alpha << " sigma=" << p.params.sigma
                             << " dt=" << p.dt << " tol=" << p.tol;
                        },
                        [&](const MatrixIid& m) {
                          os << "iid";
                          for (std::size_t i = 0; i < m.generators.size(); ++i) {
                            os << " p=" << m.probabilities[i] << " G=[";
                            const auto& g = m.generators[i];
                            for (Eigen::Index r = 0; r < g.rows(); ++r)
                              for (Eigen::Index c = 0; c < g.cols(); ++c) os << g(r, c) << ';';
                            os << ']';
                          }
                        },
                        [&](const MatrixFlow& f) {
                          os << "flow A=[";
                          for (Eigen::Index r = 0; r < f.generator.rows(); ++r)
                            for (Eigen::Index c = 0; c < f.generator.cols(); ++c) os << f.generator(r, c) << ';';
                          os << ']';
                        },
                        [&](const RotationTower& t) { os << "tower n_max=" << t.n_max(); }},
             kind);
  os << " shift=" << rate_shift;
  return os.str();
}

void CocycleSpec::validate() const {
  if (!std::isfinite(rate_shift)) throw std::invalid_argument("CocycleSpec: rate_shift must be finite");
  std::visit(Overloaded{[](const PitchforkLinearization& p) {
                          p.params.validate();
                          if (!(p.params.sigma > 0.0)) throw std::invalid_argument("pitchfork cocycle: sigma must be > 0");
                          if (!(p.dt > 0.0) || !(p.tol > 0.0)) throw std::invalid_argument("pitchfork cocycle: dt and tol must be > 0");
                        },
                        [](const MatrixIid& m) {
                          if (m.generators.empty()) throw std::invalid_argument("MatrixIid: no generators");
                          if (m.generators.size() != m.probabilities.size())
                            throw std::invalid_argument("MatrixIid: one probability per generator");
                          const auto d = m.generators[0].rows();
                          double total = 0.0;
                          for (std::size_t i = 0; i < m.generators.size(); ++i) {
                            const auto& g = m.generators[i];
                            if (g.rows() != d || g.cols() != d || d < 1)
                              throw std::invalid_argument("MatrixIid: generators must be square and equal size");
                            if (!(m.probabilities[i] >= 0.0)) throw std::invalid_argument("MatrixIid: negative probability");
                            Eigen::FullPivLU<Eigen::MatrixXd> lu(g);
                            if (!lu.isInvertible()) throw std::invalid_argument("MatrixIid: singular generator");
                            total += m.probabilities[i];
                          }
                          if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("MatrixIid: probabilities must sum to 1");
                        },
                        [](const MatrixFlow& f) {
                          if (f.generator.rows() < 1 || f.generator.rows() != f.generator.cols())
                            throw std::invalid_argument("MatrixFlow: generator must be square");
                          if (!f.generator.allFinite()) throw std::invalid_argument("MatrixFlow: non-finite generator");
                        },
                        [](const RotationTower&) {}},
             kind);
}

// ---------------------------------------------------------------- LogQR

LogQR::LogQR(int d)
    : q_(Eigen::MatrixXd::Identity(d, d)),
      u_(Eigen::MatrixXd::Identity(d, d)),
      log_diag_(Eigen::VectorXd::Zero(d)) {}

LogQR LogQR::scalar(double log_abs, double sign) {
  LogQR f(1);
  f.q_(0, 0) = sign < 0 ? -1.0 : 1.0;
  f.log_diag_(0) = log_abs;
  return f;
}

void LogQR::apply(const Eigen::MatrixXd& step) {
  const int d = dimension();
  if (d == 1) {
    const double v = step(0, 0) * q_(0, 0);
    if (v == 0.0 || !std::isfinite(v)) throw std::domain_error("LogQR: singular or non-finite step");
    q_(0, 0) = v < 0 ? -1.0 : 1.0;
    log_diag_(0) += std::log(std::abs(v));
    return;
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(step * q_);
  Eigen::MatrixXd q = qr.householderQ();
  Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int i = 0; i < d; ++i) {
    if (r(i, i) < 0) {
      r.row(i) *= -1.0;
      q.col(i) *= -1.0;
    }
    if (r(i, i) == 0.0 || !std::isfinite(r(i, i))) throw std::domain_error("LogQR: singular or non-finite step");
  }
  // New U = diag(e^{-L}) V diag(e^{L}) U with V = diag(r)^{-1} r unit upper triangular.
  bool diagonal = true;
  for (int i = 0; i < d && diagonal; ++i)
    for (int j = i + 1; j < d; ++j)
      if (r(i, j) != 0.0) diagonal = false;
  if (!diagonal) {
    MatrixL v = MatrixL::Identity(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = i + 1; j < d; ++j)
        v(i, j) = static_cast<long double>(r(i, j)) / r(i, i) *
                  std::exp(static_cast<long double>(log_diag_(j)) - log_diag_(i));
    const MatrixL next = v * u_.cast<long double>();
    u_ = next.cast<double>();
    if (!u_.allFinite()) throw std::overflow_error("LogQR: triangular factor overflowed");
  }
  for (int i = 0; i < d; ++i) log_diag_(i) += std::log(r(i, i));
  q_ = q;
}

Eigen::MatrixXd LogQR::matrix() const {
  Eigen::VectorXd scale = log_diag_.array().exp();
  return q_ * scale.asDiagonal() * u_;
}

namespace {

struct SvdParts {
  Eigen::VectorXd log_sv;
  Eigen::MatrixXd v;
};

SvdParts log_svd(const Eigen::MatrixXd& u, const Eigen::VectorXd& log_diag) {
  const int d = static_cast<int>(log_diag.size());
  SvdParts out;
  out.log_sv.resize(d);
  out.v = Eigen::MatrixXd::Zero(d, d);
  if (is_identity(u)) {
    // Columns of Q D are orthogonal: the singular values are exactly e^L.
    std::vector<int> order(d);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return log_diag(a) > log_diag(b); });
    for (int i = 0; i < d; ++i) {
      out.log_sv(i) = log_diag(order[i]);
      out.v(order[i], i) = 1.0;
    }
    return out;
  }
  const long double top = log_diag.maxCoeff();
  MatrixL b(d, d);
  for (int i = 0; i < d; ++i) {
    const long double s = std::exp(static_cast<long double>(log_diag(i)) - top);
    for (int j = 0; j < d; ++j) b(i, j) = s * static_cast<long double>(u(i, j));
  }
  Eigen::JacobiSVD<MatrixL> svd(b, Eigen::ComputeFullV);
  const VectorL sv = svd.singularValues();
  long double partial = 0.0L;
  for (int i = 0; i < d; ++i) {
    out.log_sv(i) = static_cast<double>(std::log(sv(i)) + top);
    if (i + 1 < d) partial += std::log(sv(i)) + top;
  }
  // det U = 1, so the product of singular values is exp(sum L). This recovers
  // the smallest one without cancellation.
  const long double total = log_diag.cast<long double>().sum();
  out.log_sv(d - 1) = static_cast<double>(total - partial);
  out.v = svd.matrixV().cast<double>();
  return out;
}

}  // namespace

Eigen::VectorXd LogQR::log_singular_values() const { return log_svd(u_, log_diag_).log_sv; }

Eigen::MatrixXd LogQR::right_singular_vectors() const { return log_svd(u_, log_diag_).v; }

double LogQR::log_growth(const Eigen::VectorXd& x) const {
  const VectorL y = u_.cast<long double>() * x.cast<long double>();
  const long double top = log_diag_.maxCoeff();
  long double s = 0.0L;
  for (int i = 0; i < dimension(); ++i) {
    const long double z = std::exp(static_cast<long double>(log_diag_(i)) - top) * y(i);
    s += z * z;
  }
  return static_cast<double>(0.5L * std::log(s) + top) - std::log(x.norm());
}

// ---------------------------------------------------------------- evaluation

FixedPointTrajectory pitchfork_fixed_point(const PitchforkLinearization& spec,
                                           const Realization& w, double horizon) {
  return pullback_fixed_point(spec.params, realization_path(spec, w, horizon), horizon, spec.tol);
}

CocycleSample evaluate_pitchfork(const PitchforkLinearization& spec, const NoisePath& path,
                                 const std::vector<double>& schedule, double rate_shift) {
  check_schedule(schedule);
  const auto fp = pullback_fixed_point(spec.params, path, schedule.back(), spec.tol);
  const double dt = fp.dt;
  const double alpha = spec.params.alpha;
  std::vector<LogQR> factors;
  double integral = 0.0;
  std::int64_t k = 0;
  for (double t : schedule) {
    const std::int64_t target = grid_steps(t, dt);
    for (; k < target; ++k) {
      const double a0 = fp.at_index(k);
      const double a1 = fp.at_index(k + 1);
      integral += 0.5 * dt * (a0 * a0 + a1 * a1);
    }
    factors.push_back(LogQR::scalar(alpha * t - 3.0 * integral));
  }
  return finish(schedule, std::move(factors), rate_shift);
}

CocycleSample evaluate(const CocycleSpec& spec, const Realization& w,
                       const std::vector<double>& schedule) {
  check_schedule(schedule);
  return std::visit(
      Overloaded{[&](const PitchforkLinearization& p) {
                   return evaluate_pitchfork(p, realization_path(p, w, schedule.back()), schedule,
                                             spec.rate_shift);
                 },
                 [&](const MatrixIid& m) { return evaluate_iid(m, w, schedule, spec.rate_shift); },
                 [&](const MatrixFlow& f) { return evaluate_flow(f, schedule, spec.rate_shift); },
                 [&](const RotationTower& t) { return evaluate_tower(t, w, schedule, spec.rate_shift); }},
      spec.kind);
}

// ---------------------------------------------------------------- ensembles

double FtleEnsemble::max_lmax() const { return *std::max_element(lmax.begin(), lmax.end()); }
double FtleEnsemble::min_lmin() const { return *std::min_element(lmin.begin(), lmin.end()); }

double FtleEnsemble::fraction_lmax_above(double threshold) const {
  const auto hits = std::count_if(lmax.begin(), lmax.end(), [&](double v) { return v > threshold; });
  return static_cast<double>(hits) / static_cast<double>(lmax.size());
}

std::vector<FtleEnsemble> ftle_ensembles(const CocycleSpec& spec,
                                         const std::vector<std::uint64_t>& seeds,
                                         const std::vector<double>& schedule, unsigned workers) {
  spec.validate();
  if (seeds.empty()) throw std::invalid_argument("ftle_ensembles: no seeds");
  check_schedule(schedule);
  std::vector<CocycleSample> samples(seeds.size());
  parallel_for(seeds.size(), workers, [&](std::size_t i) {
    auto s = evaluate(spec, {seeds[i], 0.0}, schedule);
    s.factors.clear();  // only the spectra are kept
    samples[i] = std::move(s);
  });
  std::vector<FtleEnsemble> out(schedule.size());
  for (std::size_t k = 0; k < schedule.size(); ++k) {
    out[k].T = schedule[k];
    out[k].seeds = seeds;
    for (const auto& s : samples) {
      out[k].lmax.push_back(s.lambda_max(k));
      out[k].lmin.push_back(s.lambda_min(k));
    }
  }
  return out;
}

FtleEnsemble ftle_ensemble(const CocycleSpec& spec, const std::vector<std::uint64_t>& seeds,
                           double T, unsigned workers) {
  return ftle_ensembles(spec, seeds, {T}, workers).front();
}

OneStepNorms onestep_log_norms(const CocycleSpec& spec, const std::vector<std::uint64_t>& seeds,
                               unsigned workers) {
  spec.validate();
  if (seeds.empty()) throw std::invalid_argument("onestep_log_norms: no seeds");
  std::vector<double> up(seeds.size()), down(seeds.size());
  parallel_for(seeds.size(), workers, [&](std::size_t i) {
    const auto s = evaluate(spec, {seeds[i], 0.0}, {1.0});
    const auto& lsv = s.log_singular_values[0];
    up[i] = std::max(0.0, lsv(0));
    down[i] = std::max(0.0, -lsv(lsv.size() - 1));
  });

  OneStepNorms out;
  for (std::size_t n = seeds.size(); n >= 1 && out.ladder_sizes.size() < 7; n /= 2) {
    out.ladder_sizes.push_back(n);
    if (n < 16) break;
  }
  std::reverse(out.ladder_sizes.begin(), out.ladder_sizes.end());
  for (std::size_t n : out.ladder_sizes) {
    out.ladder_upper.push_back(*std::max_element(up.begin(), up.begin() + n));
    out.ladder_lower.push_back(*std::max_element(down.begin(), down.begin() + n));
  }
  out.max_log_norm = out.ladder_upper.back();
  out.max_log_inverse_norm = out.ladder_lower.back();

  auto rising = [](const std::vector<double>& ladder) {
    return ladder.size() >= 2 && ladder.back() > ladder.front();
  };
  std::visit(Overloaded{[&](const PitchforkLinearization& p) {
                          out.bounded_above = true;
                          out.upper_reason = "a-priori: Phi(1) <= exp(alpha)";
                          out.bounded_below = !rising(out.ladder_lower);
                          out.lower_reason = "ladder trend of 3 int a^2 - alpha";
                          (void)p;
                        },
                        [&](const MatrixIid&) {
                          out.bounded_above = out.bounded_below = true;
                          out.upper_reason = out.lower_reason = "a-priori: finite generator set";
                        },
                        [&](const MatrixFlow&) {
                          out.bounded_above = out.bounded_below = true;
                          out.upper_reason = out.lower_reason = "a-priori: constant generator";
                        },
                        [&](const RotationTower&) {
                          out.bounded_above = !rising(out.ladder_upper);
                          out.bounded_below = !rising(out.ladder_lower);
                          out.upper_reason = out.lower_reason = "ladder trend";
                        }},
             spec.kind);
  return out;
}

void write_ftle_csv(std::ostream& os, const std::vector<FtleEnsemble>& ensembles) {
  const auto old = os.precision(17);
  os << "seed,T,lmax,lmin\n";
  for (const auto& e : ensembles) {
    for (std::size_t i = 0; i < e.size(); ++i) {
      os << e.seeds[i] << ',' << e.T << ',' << e.lmax[i] << ',' << e.lmin[i] << '\n';
    }
  }
  os.precision(old);
}

void write_onestep_csv(std::ostream& os, const OneStepNorms& norms) {
  const auto old = os.precision(17);
  os << "N,max_log_norm,max_log_inverse_norm\n";
  for (std::size_t i = 0; i < norms.ladder_sizes.size(); ++i) {
    os << norms.ladder_sizes[i] << ',' << norms.ladder_upper[i] << ',' << norms.ladder_lower[i] << '\n';
  }
  os.precision(old);
}

}  // namespace stospec
