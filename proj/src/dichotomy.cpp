#include "stospec/dichotomy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "stospec/parallel.hpp"
#include "stospec/random.hpp"

namespace stospec {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<double> checkpoint_schedule(double T, bool discrete) {
  std::vector<double> out;
  for (double f : {0.125, 0.25, 0.5, 1.0}) {
    double t = T * f;
    if (discrete) t = std::max(1.0, std::ceil(t - 1e-9));
    if (out.empty() || t > out.back()) out.push_back(t);
  }
  return out;
}

struct Fit {
  double intercept = 0.0;
  double slope = 0.0;
  double sse = 0.0;
};

Fit least_squares(const std::vector<double>& t, const std::vector<double>& y) {
  const double n = static_cast<double>(t.size());
  double st = 0, sy = 0, stt = 0, sty = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    st += t[i];
    sy += y[i];
    stt += t[i] * t[i];
    sty += t[i] * y[i];
  }
  Fit f;
  const double den = n * stt - st * st;
  f.slope = den != 0.0 ? (n * sty - st * sy) / den : 0.0;
  f.intercept = (sy - f.slope * st) / n;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double r = y[i] - f.intercept - f.slope * t[i];
    f.sse += r * r;
  }
  return f;
}

bool spectral(const DichotomyVerdict& v) { return v.verdict != Verdict::dichotomy; }

bool verdicts_differ(const DichotomyVerdict& a, const DichotomyVerdict& b) {
  if (spectral(a) != spectral(b)) return true;
  return !spectral(a) && a.rank != b.rank;
}

nlohmann::json endpoint_json(double v, bool infinite) {
  if (infinite) return v < 0 ? "-inf" : "+inf";
  return v;
}

}  // namespace

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::dichotomy:
      return "dichotomy";
    case Verdict::no_dichotomy:
      return "no-dichotomy";
    case Verdict::inconclusive:
      return "inconclusive";
  }
  return "?";
}

std::string spec_hash(const CocycleSpec& spec) {
  std::ostringstream os;
  os << std::hex << fnv1a64(spec.describe());
  return os.str();
}

EnsembleSpectra ensemble_spectra(const CocycleSpec& spec, const std::vector<std::uint64_t>& seeds,
                                 double T, unsigned workers) {
  spec.validate();
  if (seeds.empty()) throw std::invalid_argument("ensemble_spectra: no seeds");
  if (!(T > 0.0)) throw std::invalid_argument("ensemble_spectra: T must be > 0");
  EnsembleSpectra out;
  out.spec_hash = spec_hash(spec);
  out.dimension = spec.dimension();
  out.T = spec.discrete_time() ? std::max(1.0, std::round(T)) : T;
  out.checkpoints = checkpoint_schedule(out.T, spec.discrete_time());
  out.seeds = seeds;
  out.log_sv.resize(seeds.size());
  parallel_for(seeds.size(), workers, [&](std::size_t i) {
    out.log_sv[i] = evaluate(spec, {seeds[i], 0.0}, out.checkpoints).log_singular_values;
  });
  return out;
}

DichotomyVerdict dichotomy_test(const EnsembleSpectra& spectra, double gamma,
                                double ratio_threshold) {
  if (!(ratio_threshold > 1.0)) throw std::invalid_argument("dichotomy_test: ratio_threshold must be > 1");
  const double log_thr = std::log(ratio_threshold);
  const std::size_t m = spectra.checkpoints.size();
  const std::size_t last = m - 1;
  const std::size_t half = m >= 2 ? m - 2 : last;
  const int d = spectra.dimension;

  DichotomyVerdict v;
  v.gamma = gamma;
  auto scan = [&](std::size_t k, double& min_gap, int& rank, bool& constant) {
    const double t = spectra.checkpoints[k];
    min_gap = kInf;
    rank = -2;
    constant = true;
    for (const auto& member : spectra.log_sv) {
      const Eigen::VectorXd& s = member[k];
      int r = 0;
      for (int i = 0; i < d; ++i) {
        const double x = s(i) - gamma * t;
        if (x < 0) ++r;
        min_gap = std::min(min_gap, std::abs(x));
      }
      if (rank == -2) rank = r;
      else if (rank != r) constant = false;
    }
  };
  int rank_half = 0;
  bool constant_half = true;
  scan(last, v.min_log_gap, v.rank, v.rank_constant);
  scan(half, v.min_log_gap_half, rank_half, constant_half);
  if (!v.rank_constant) v.rank = -1;

  if (v.min_log_gap < 0.5 * log_thr) {
    v.verdict = Verdict::no_dichotomy;
    v.reason = "no uniform singular-value gap";
    return v;
  }
  if (v.min_log_gap < log_thr) {
    v.verdict = Verdict::inconclusive;
    v.reason = "gap inside the threshold band";
    return v;
  }
  if (!v.rank_constant) {
    v.verdict = Verdict::inconclusive;
    v.reason = "rank varies across the ensemble";
    return v;
  }
  if (half != last && !(v.min_log_gap > v.min_log_gap_half)) {
    v.verdict = Verdict::inconclusive;
    v.reason = "gap does not grow from T/2 to T";
    return v;
  }

  // Fit ln|Phi P| <= ln K - alpha t on the stable side and
  // ln m(Phi (1-P)) >= -ln K + alpha t on the unstable side.
  const int k = v.rank;
  std::vector<double> ts(spectra.checkpoints.begin(), spectra.checkpoints.end());
  std::vector<double> ys, yu;
  for (std::size_t c = 0; c < m; ++c) {
    double stable = -kInf, unstable = kInf;
    for (const auto& member : spectra.log_sv) {
      const Eigen::VectorXd& s = member[c];
      if (k > 0) stable = std::max(stable, s(d - k) - gamma * ts[c]);
      if (k < d) unstable = std::min(unstable, s(d - k - 1) - gamma * ts[c]);
    }
    ys.push_back(stable);
    yu.push_back(unstable);
  }
  double alpha = kInf, sse = 0.0;
  std::size_t points = 0;
  if (k > 0) {
    const Fit f = least_squares(ts, ys);
    alpha = std::min(alpha, -f.slope);
    sse += f.sse;
    points += ts.size();
  }
  if (k < d) {
    const Fit f = least_squares(ts, yu);
    alpha = std::min(alpha, f.slope);
    sse += f.sse;
    points += ts.size();
  }
  double log_k = 0.0;
  for (std::size_t c = 0; c < m; ++c) {
    if (k > 0) log_k = std::max(log_k, ys[c] + alpha * ts[c]);
    if (k < d) log_k = std::max(log_k, -yu[c] + alpha * ts[c]);
  }
  v.alpha_ed = alpha;
  v.K = std::exp(log_k);
  v.residual = std::sqrt(sse / static_cast<double>(points));
  if (!(alpha > 0.0)) {
    v.verdict = Verdict::inconclusive;
    v.reason = "fitted alpha_ed is not positive";
    return v;
  }
  v.verdict = Verdict::dichotomy;
  v.reason = "uniform gap";
  return v;
}

DichotomyVerdict dichotomy_test(const CocycleSpec& spec, double gamma, double T,
                                const std::vector<std::uint64_t>& seeds, double ratio_threshold,
                                unsigned workers) {
  return dichotomy_test(ensemble_spectra(spec, seeds, T, workers), gamma, ratio_threshold);
}

SpectrumEstimate scan_spectrum(const EnsembleSpectra& spectra, const std::vector<double>& gamma_grid,
                               const ScanOptions& options, const OneStepNorms* onestep) {
  if (gamma_grid.size() < 2) throw std::invalid_argument("scan_spectrum: need at least two grid points");
  if (!std::is_sorted(gamma_grid.begin(), gamma_grid.end()) ||
      std::adjacent_find(gamma_grid.begin(), gamma_grid.end()) != gamma_grid.end()) {
    throw std::invalid_argument("scan_spectrum: gamma grid must be strictly increasing");
  }
  SpectrumEstimate est;
  est.spec_hash = spectra.spec_hash;
  est.T = spectra.T;
  est.N = spectra.size();
  est.ratio_threshold = options.ratio_threshold;
  est.gamma_grid = gamma_grid;

  std::map<double, DichotomyVerdict> points;
  auto classify = [&](double g) -> const DichotomyVerdict& {
    auto it = points.find(g);
    if (it == points.end()) it = points.emplace(g, dichotomy_test(spectra, g, options.ratio_threshold)).first;
    return it->second;
  };
  for (double g : gamma_grid) classify(g);

  const int factor = std::max(2, options.refinement_factor);
  auto refine = [&](auto&& self, double lo, double hi, int level) -> void {
    if (level <= 0) return;
    std::vector<double> sub{lo};
    for (int j = 1; j < factor; ++j) sub.push_back(lo + (hi - lo) * j / factor);
    sub.push_back(hi);
    for (double g : sub) classify(g);
    for (std::size_t j = 0; j + 1 < sub.size(); ++j) {
      if (verdicts_differ(points.at(sub[j]), points.at(sub[j + 1]))) self(self, sub[j], sub[j + 1], level - 1);
    }
  };
  for (std::size_t i = 0; i + 1 < gamma_grid.size(); ++i) {
    if (verdicts_differ(points.at(gamma_grid[i]), points.at(gamma_grid[i + 1]))) {
      refine(refine, gamma_grid[i], gamma_grid[i + 1], options.refinement_levels);
    }
  }
  for (const auto& [g, v] : points) est.verdicts.push_back(v);

  // Base cell width around gamma, for the degenerate-interval rule.
  auto base_cell = [&](double g) {
    auto it = std::upper_bound(gamma_grid.begin(), gamma_grid.end(), g);
    if (it == gamma_grid.begin()) return gamma_grid[1] - gamma_grid[0];
    if (it == gamma_grid.end()) return gamma_grid.back() - gamma_grid[gamma_grid.size() - 2];
    return *it - *(it - 1);
  };

  const auto& vs = est.verdicts;
  for (std::size_t i = 0; i < vs.size();) {
    if (!spectral(vs[i])) {
      if (i + 1 < vs.size() && !spectral(vs[i + 1]) && vs[i].rank != vs[i + 1].rank) {
        // Rank jump between two resolvent points: a spectral point lies in between.
        const double mid = 0.5 * (vs[i].gamma + vs[i + 1].gamma);
        SpectralInterval s{mid, mid};
        s.degenerate = true;
        est.intervals.push_back(s);
      }
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j + 1 < vs.size() && spectral(vs[j + 1])) ++j;
    SpectralInterval s{vs[i].gamma, vs[j].gamma};
    s.lo_at_grid_edge = (i == 0);
    s.hi_at_grid_edge = (j + 1 == vs.size());
    if (!s.lo_at_grid_edge && !s.hi_at_grid_edge && s.hi - s.lo < base_cell(0.5 * (s.lo + s.hi))) {
      s.lo = s.hi = 0.5 * (s.lo + s.hi);
      s.degenerate = true;
    }
    est.intervals.push_back(s);
    i = j + 1;
  }

  if (onestep) {
    est.bounded_above = onestep->bounded_above;
    est.bounded_below = onestep->bounded_below;
  }
  if (!est.bounded_below) {
    if (est.intervals.empty()) {
      SpectralInterval s{gamma_grid.front(), gamma_grid.front()};
      s.hi_at_grid_edge = true;
      est.intervals.push_back(s);
    }
    auto& s = est.intervals.front();
    s.lo = -kInf;
    s.lo_infinite = true;
    s.degenerate = false;
  }
  if (!est.bounded_above) {
    if (est.intervals.empty()) {
      SpectralInterval s{gamma_grid.back(), gamma_grid.back()};
      s.lo_at_grid_edge = true;
      est.intervals.push_back(s);
    }
    auto& s = est.intervals.back();
    s.hi = kInf;
    s.hi_infinite = true;
    s.degenerate = false;
  }

  // Ranks per resolvent gap; gaps beyond an infinite endpoint do not exist.
  const std::size_t gaps = est.intervals.size() + 1;
  for (std::size_t g = 0; g < gaps; ++g) {
    if (g == 0 && !est.bounded_below) continue;
    if (g + 1 == gaps && !est.bounded_above) continue;
    const double lo = g == 0 ? -kInf : est.intervals[g - 1].hi;
    const double hi = g + 1 == gaps ? kInf : est.intervals[g].lo;
    int rank = -1;
    bool mixed = false;
    for (const auto& v : vs) {
      if (spectral(v) || !(v.gamma > lo && v.gamma < hi)) continue;
      if (rank == -1) rank = v.rank;
      else if (rank != v.rank) mixed = true;
    }
    est.gap_ranks.push_back(mixed ? -1 : rank);
  }

  int last_rank = -1;
  for (const auto& v : vs) {
    if (spectral(v)) continue;
    if (!est.bounded_below && v.gamma < est.intervals.front().hi) continue;
    if (!est.bounded_above && v.gamma > est.intervals.back().lo) continue;
    if (v.rank < last_rank) est.rank_monotone = false;
    last_rank = std::max(last_rank, v.rank);
  }
  if (!est.rank_monotone) {
    est.estimation_failure = true;
    est.failure_reason = "projector rank decreases in gamma; raise T or N";
  } else if (static_cast<int>(est.intervals.size()) > spectra.dimension) {
    est.estimation_failure = true;
    est.failure_reason = "more spectral intervals than the dimension; raise T or N";
  }
  return est;
}

SpectrumEstimate scan_spectrum(const CocycleSpec& spec, const std::vector<double>& gamma_grid,
                               double T, const std::vector<std::uint64_t>& seeds,
                               const ScanOptions& options) {
  const auto spectra = ensemble_spectra(spec, seeds, T, options.workers);
  if (options.onestep_samples > 0) {
    std::vector<std::uint64_t> one(options.onestep_samples);
    for (std::size_t i = 0; i < one.size(); ++i) one[i] = seeds.front() + i;
    const auto norms = onestep_log_norms(spec, one, options.workers);
    return scan_spectrum(spectra, gamma_grid, options, &norms);
  }
  return scan_spectrum(spectra, gamma_grid, options);
}

EndpointEstimate estimate_endpoints(const CocycleSpec& spec, const std::vector<double>& T_schedule,
                                    const std::vector<std::uint64_t>& seeds, unsigned workers) {
  EndpointEstimate out;
  out.onestep = onestep_log_norms(spec, seeds, workers);
  const auto ensembles = ftle_ensembles(spec, seeds, T_schedule, workers);
  auto std_error = [](const std::vector<double>& v, double T) {
    double mean = 0.0;
    for (double x : v) mean += x * T;
    mean /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x * T - mean) * (x * T - mean);
    return v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1) / static_cast<double>(v.size())) : 0.0;
  };
  for (const auto& e : ensembles) {
    out.rows.push_back({e.T, e.max_lmax(), e.min_lmin(), std_error(e.lmax, e.T), std_error(e.lmin, e.T)});
  }
  // T_j = T_a + T_b within the schedule.
  for (const auto& j : out.rows) {
    for (const auto& a : out.rows) {
      for (const auto& b : out.rows) {
        if (std::abs(a.T + b.T - j.T) > 1e-9 * j.T) continue;
        const double se = 2.0 * std::sqrt(a.se_upper * a.se_upper + b.se_upper * b.se_upper + j.se_upper * j.se_upper);
        if (j.T * j.sup_estimate > a.T * a.sup_estimate + b.T * b.sup_estimate + se) out.subadditive_upper = false;
        const double sl = 2.0 * std::sqrt(a.se_lower * a.se_lower + b.se_lower * b.se_lower + j.se_lower * j.se_lower);
        if (j.T * j.inf_estimate < a.T * a.inf_estimate + b.T * b.inf_estimate - sl) out.subadditive_lower = false;
      }
    }
  }
  out.sup_infinite = !out.onestep.bounded_above;
  out.inf_infinite = !out.onestep.bounded_below;
  out.sup = out.sup_infinite ? kInf : out.rows.back().sup_estimate;
  out.inf = out.inf_infinite ? -kInf : out.rows.back().inf_estimate;
  return out;
}

SubspaceEstimate spectral_manifolds(const CocycleSpec& spec, const SpectrumEstimate& spectrum,
                                    const Realization& w, double T) {
  if (spectrum.intervals.empty()) throw std::invalid_argument("spectral_manifolds: empty spectrum");
  SubspaceEstimate out;
  for (std::size_t i = 0; i + 1 < spectrum.intervals.size(); ++i) {
    out.separators.push_back(0.5 * (spectrum.intervals[i].hi + spectrum.intervals[i + 1].lo));
  }
  double half = 0.5 * T;
  if (spec.discrete_time()) {
    T = std::round(T);
    half = std::max(1.0, std::round(half));
  }
  const auto sample = evaluate(spec, w, {half, T});
  const int d = spec.dimension();
  auto split = [&](std::size_t k) {
    const Eigen::MatrixXd v = sample.factors[k].right_singular_vectors();
    const Eigen::VectorXd rates = sample.log_singular_values[k] / sample.times[k];
    std::vector<Eigen::MatrixXd> blocks;
    for (std::size_t b = 0; b < spectrum.intervals.size(); ++b) {
      const double lo = b == 0 ? -kInf : out.separators[b - 1];
      const double hi = b + 1 == spectrum.intervals.size() ? kInf : out.separators[b];
      std::vector<int> cols;
      for (int c = 0; c < d; ++c)
        if (rates(c) > lo && rates(c) <= hi) cols.push_back(c);
      Eigen::MatrixXd basis(d, static_cast<Eigen::Index>(cols.size()));
      for (std::size_t c = 0; c < cols.size(); ++c) basis.col(static_cast<Eigen::Index>(c)) = v.col(cols[c]);
      blocks.push_back(basis);
    }
    return blocks;
  };
  out.bases = split(1);
  const auto early = split(0);
  for (std::size_t b = 0; b < out.bases.size(); ++b) {
    if (out.bases[b].cols() == 0 || out.bases[b].cols() != early[b].cols()) {
      out.inconclusive = true;
      out.principal_angles.push_back(std::acos(0.0));
      continue;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(out.bases[b].transpose() * early[b]);
    const double c = std::clamp(svd.singularValues().minCoeff(), 0.0, 1.0);
    // acos loses accuracy near 1; asin of the complementary sine does not.
    out.principal_angles.push_back(std::asin(std::sqrt(std::max(0.0, (1.0 - c) * (1.0 + c)))));
  }
  return out;
}

ShiftReport shift_property_check(const CocycleSpec& spec, double c,
                                 const std::vector<double>& gamma_grid, double T,
                                 const std::vector<std::uint64_t>& seeds,
                                 const ScanOptions& options) {
  ShiftReport r;
  r.c = c;
  CocycleSpec moved = spec;
  moved.rate_shift += c;
  r.base = scan_spectrum(spec, gamma_grid, T, seeds, options);
  r.shifted = scan_spectrum(moved, gamma_grid, T, seeds, options);
  double cell = kInf;
  for (std::size_t i = 0; i + 1 < gamma_grid.size(); ++i) cell = std::min(cell, gamma_grid[i + 1] - gamma_grid[i]);
  r.tolerance = cell;
  r.passed = r.base.intervals.size() == r.shifted.intervals.size();
  for (std::size_t i = 0; r.passed && i < r.base.intervals.size(); ++i) {
    const auto& a = r.base.intervals[i];
    const auto& b = r.shifted.intervals[i];
    if (a.lo_infinite != b.lo_infinite || a.hi_infinite != b.hi_infinite) {
      r.passed = false;
      break;
    }
    if (!a.lo_infinite) r.max_error = std::max(r.max_error, std::abs(b.lo - (a.lo + c)));
    if (!a.hi_infinite) r.max_error = std::max(r.max_error, std::abs(b.hi - (a.hi + c)));
  }
  if (r.passed) r.passed = r.max_error <= r.tolerance * (1 + 1e-9);
  return r;
}

nlohmann::json to_json(const SpectrumEstimate& e) {
  nlohmann::json j;
  j["spec_hash"] = e.spec_hash;
  j["gamma_grid"] = e.gamma_grid;
  j["T"] = e.T;
  j["N"] = e.N;
  j["thresholds"] = {{"ratio_threshold", e.ratio_threshold},
                     {"log_gap_threshold", std::log(e.ratio_threshold)}};
  auto& verdicts = j["verdicts"] = nlohmann::json::array();
  for (const auto& v : e.verdicts) {
    verdicts.push_back({{"gamma", v.gamma},
                        {"verdict", to_string(v.verdict)},
                        {"rank", v.rank},
                        {"min_log_gap", v.min_log_gap},
                        {"min_log_gap_half", v.min_log_gap_half},
                        {"K", v.K},
                        {"alpha_ed", v.alpha_ed},
                        {"residual", v.residual},
                        {"reason", v.reason}});
  }
  auto& intervals = j["intervals"] = nlohmann::json::array();
  for (const auto& s : e.intervals) {
    intervals.push_back({{"lo", endpoint_json(s.lo, s.lo_infinite)},
                         {"hi", endpoint_json(s.hi, s.hi_infinite)},
                         {"degenerate", s.degenerate},
                         {"lo_at_grid_edge", s.lo_at_grid_edge},
                         {"hi_at_grid_edge", s.hi_at_grid_edge}});
  }
  j["ranks"] = e.gap_ranks;
  j["bounded_above"] = e.bounded_above;
  j["bounded_below"] = e.bounded_below;
  j["rank_monotone"] = e.rank_monotone;
  j["estimation_failure"] = e.estimation_failure;
  j["failure_reason"] = e.failure_reason;
  return j;
}

nlohmann::json to_json(const EndpointEstimate& e) {
  nlohmann::json j;
  j["sup"] = endpoint_json(e.sup, e.sup_infinite);
  j["inf"] = endpoint_json(e.inf, e.inf_infinite);
  auto& rows = j["rows"] = nlohmann::json::array();
  for (const auto& r : e.rows) {
    rows.push_back({{"T", r.T},
                    {"sup_estimate", r.sup_estimate},
                    {"inf_estimate", r.inf_estimate},
                    {"se_upper", r.se_upper},
                    {"se_lower", r.se_lower}});
  }
  j["subadditive_upper"] = e.subadditive_upper;
  j["subadditive_lower"] = e.subadditive_lower;
  j["onestep"] = {{"ladder_sizes", e.onestep.ladder_sizes},
                  {"ladder_upper", e.onestep.ladder_upper},
                  {"ladder_lower", e.onestep.ladder_lower},
                  {"bounded_above", e.onestep.bounded_above},
                  {"bounded_below", e.onestep.bounded_below},
                  {"upper_reason", e.onestep.upper_reason},
                  {"lower_reason", e.onestep.lower_reason}};
  return j;
}

void write_gap_csv(std::ostream& os, const SpectrumEstimate& estimate) {
  const auto old = os.precision(17);
  os << "gamma,min_log_gap,rank\n";
  for (const auto& v : estimate.verdicts) os << v.gamma << ',' << v.min_log_gap << ',' << v.rank << '\n';
  os.precision(old);
}

}  // namespace stospec
