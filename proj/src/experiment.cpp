#include "stospec/experiment.hpp"

#include <algorithm>
#include <boost/math/distributions/binomial.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include "stospec/dichotomy.hpp"
#include "stospec/parallel.hpp"
#include "stospec/random.hpp"
#include "stospec/stationary.hpp"
#include "stospec/svg.hpp"

namespace stospec {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// study names

namespace {

struct StudyName {
  StudyKind kind;
  const char* name;
};

constexpr StudyName kStudies[] = {
    {StudyKind::density_sweep, "density-sweep"}, {StudyKind::ftle, "ftle"},
    {StudyKind::attractivity, "attractivity"},   {StudyKind::spectrum_scan, "spectrum-scan"},
    {StudyKind::conjugacy, "conjugacy"},         {StudyKind::endpoints, "endpoints"},
};

}  // namespace

const char* to_string(StudyKind kind) {
  for (const auto& s : kStudies) {
    if (s.kind == kind) return s.name;
  }
  return "unknown";
}

std::optional<StudyKind> parse_study(const std::string& name) {
  for (const auto& s : kStudies) {
    if (name == s.name) return s.kind;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// value grammar

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, std::string s) {
  s = trim(s);
  if (!s.empty() && s[0] == '+') s.erase(0, 1);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError(key + ": expected a number, got '" + s + "'");
  }
  return v;
}

template <class Int>
Int parse_int(const std::string& key, std::string s) {
  s = trim(s);
  Int v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError(key + ": expected an integer, got '" + s + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  const std::string t = trim(s);
  if (t == "true" || t == "yes" || t == "1") return true;
  if (t == "false" || t == "no" || t == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + t + "'");
}

std::string fmt_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + fmt(v[i]);
  return out;
}

std::vector<double> parse_list(const std::string& key, const std::string& s) {
  std::vector<double> out;
  if (trim(s).empty()) return out;
  for (const auto& item : split(s, ',')) out.push_back(parse_double(key, item));
  return out;
}

// Seeds: comma separated integers or inclusive ranges a..b.
std::string fmt_seeds(const std::vector<std::uint64_t>& seeds) {
  std::string out;
  for (std::size_t i = 0; i < seeds.size();) {
    std::size_t j = i;
    while (j + 1 < seeds.size() && seeds[j + 1] == seeds[j] + 1) ++j;
    if (!out.empty()) out += ", ";
    out += std::to_string(seeds[i]);
    if (j > i) out += ".." + std::to_string(seeds[j]);
    i = j + 1;
  }
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& key, const std::string& s) {
  std::vector<std::uint64_t> out;
  if (trim(s).empty()) return out;
  for (const auto& item : split(s, ',')) {
    const auto dots = item.find("..");
    if (dots == std::string::npos) {
      out.push_back(parse_int<std::uint64_t>(key, item));
      continue;
    }
    const auto a = parse_int<std::uint64_t>(key, item.substr(0, dots));
    const auto b = parse_int<std::uint64_t>(key, item.substr(dots + 2));
    if (b < a) throw ConfigError(key + ": empty range '" + item + "'");
    if (b - a >= 100'000'000) throw ConfigError(key + ": range '" + item + "' too large");
    for (std::uint64_t v = a;; ++v) {
      out.push_back(v);
      if (v == b) break;
    }
  }
  return out;
}

// Matrices: rows separated by ';', entries by spaces; several matrices by '|'.
std::string fmt_matrix(const Eigen::MatrixXd& m) {
  std::string out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if (i) out += "; ";
    for (Eigen::Index j = 0; j < m.cols(); ++j) out += (j ? " " : "") + fmt(m(i, j));
  }
  return out;
}

Eigen::MatrixXd parse_matrix(const std::string& key, const std::string& s) {
  std::vector<std::vector<double>> rows;
  for (const auto& row : split(s, ';')) {
    std::istringstream is(row);
    std::vector<double> r;
    for (std::string tok; is >> tok;) r.push_back(parse_double(key, tok));
    rows.push_back(std::move(r));
  }
  const auto n = rows.size();
  for (const auto& r : rows) {
    if (r.size() != n) throw ConfigError(key + ": matrix must be square, got '" + s + "'");
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return m;
}

std::string fmt_matrices(const std::vector<Eigen::MatrixXd>& ms) {
  std::string out;
  for (std::size_t i = 0; i < ms.size(); ++i) out += (i ? " | " : "") + fmt_matrix(ms[i]);
  return out;
}

std::vector<Eigen::MatrixXd> parse_matrices(const std::string& key, const std::string& s) {
  std::vector<Eigen::MatrixXd> out;
  if (trim(s).empty()) return out;
  for (const auto& m : split(s, '|')) out.push_back(parse_matrix(key, m));
  return out;
}

// ---------------------------------------------------------------------------
// field table: one entry per key, in canonical order

using Cfg = ExperimentConfig;

struct Field {
  const char* section;
  const char* key;
  std::function<std::string(const Cfg&)> get;
  std::function<void(Cfg&, const std::string& key, const std::string& value)> set;
};

Field dbl(const char* sec, const char* key, double Cfg::*m) {
  return {sec, key, [m](const Cfg& c) { return fmt(c.*m); },
          [m](Cfg& c, const std::string& k, const std::string& v) { c.*m = parse_double(k, v); }};
}

Field dbl_opt(const char* key, double ConjugacyOptions::*m) {
  return {"conjugacy", key, [m](const Cfg& c) { return fmt(c.conjugacy.*m); },
          [m](Cfg& c, const std::string& k, const std::string& v) { c.conjugacy.*m = parse_double(k, v); }};
}

Field integer(const char* sec, const char* key, int Cfg::*m) {
  return {sec, key, [m](const Cfg& c) { return std::to_string(c.*m); },
          [m](Cfg& c, const std::string& k, const std::string& v) { c.*m = parse_int<int>(k, v); }};
}

Field list(const char* sec, const char* key, std::vector<double> Cfg::*m) {
  return {sec, key, [m](const Cfg& c) { return fmt_list(c.*m); },
          [m](Cfg& c, const std::string& k, const std::string& v) { c.*m = parse_list(k, v); }};
}

Field flag(const char* sec, const char* key, bool Cfg::*m) {
  return {sec, key, [m](const Cfg& c) { return std::string(c.*m ? "true" : "false"); },
          [m](Cfg& c, const std::string& k, const std::string& v) { c.*m = parse_bool(k, v); }};
}

Field text(const char* sec, const char* key, std::string Cfg::*m) {
  return {sec, key, [m](const Cfg& c) { return c.*m; },
          [m](Cfg& c, const std::string&, const std::string& v) { c.*m = trim(v); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"study", "kind", [](const Cfg& c) { return std::string(to_string(c.study)); },
                 [](Cfg& c, const std::string& k, const std::string& v) {
                   const auto s = parse_study(trim(v));
                   if (!s) throw ConfigError(k + ": unknown study kind '" + trim(v) + "'");
                   c.study = *s;
                 }});
    f.push_back(text("study", "name", &Cfg::name));
    f.push_back(dbl("model", "alpha", &Cfg::alpha));
    f.push_back(dbl("model", "sigma", &Cfg::sigma));
    f.push_back(dbl("model", "dt", &Cfg::dt));
    f.push_back(dbl("model", "tol", &Cfg::tol));
    f.push_back(dbl("sweep", "alpha_min", &Cfg::alpha_min));
    f.push_back(dbl("sweep", "alpha_max", &Cfg::alpha_max));
    f.push_back(integer("sweep", "alpha_count", &Cfg::alpha_count));
    f.push_back(list("sweep", "sigmas", &Cfg::sigmas));
    f.push_back({"ensemble", "seeds", [](const Cfg& c) { return fmt_seeds(c.seeds); },
                 [](Cfg& c, const std::string& k, const std::string& v) { c.seeds = parse_seeds(k, v); }});
    f.push_back(dbl("ensemble", "T", &Cfg::T));
    f.push_back(list("ensemble", "T_schedule", &Cfg::T_schedule));
    f.push_back(text("cocycle", "kind", &Cfg::cocycle));
    f.push_back({"cocycle", "generators", [](const Cfg& c) { return fmt_matrices(c.generators); },
                 [](Cfg& c, const std::string& k, const std::string& v) { c.generators = parse_matrices(k, v); }});
    f.push_back(list("cocycle", "probabilities", &Cfg::probabilities));
    f.push_back(integer("cocycle", "n_max", &Cfg::n_max));
    f.push_back(dbl("cocycle", "rate_shift", &Cfg::rate_shift));
    f.push_back(dbl("scan", "gamma_min", &Cfg::gamma_min));
    f.push_back(dbl("scan", "gamma_max", &Cfg::gamma_max));
    f.push_back(dbl("scan", "gamma_step", &Cfg::gamma_step));
    f.push_back(dbl("scan", "ratio_threshold", &Cfg::ratio_threshold));
    f.push_back(integer("scan", "refinement_levels", &Cfg::refinement_levels));
    f.push_back(integer("scan", "refinement_factor", &Cfg::refinement_factor));
    f.push_back({"scan", "onestep_samples", [](const Cfg& c) { return std::to_string(c.onestep_samples); },
                 [](Cfg& c, const std::string& k, const std::string& v) {
                   c.onestep_samples = parse_int<std::size_t>(k, v);
                 }});
    f.push_back(dbl("attractivity", "delta", &Cfg::delta));
    f.push_back(list("attractivity", "times", &Cfg::times));
    f.push_back(dbl("attractivity", "threshold", &Cfg::threshold));
    f.push_back(dbl_opt("tol", &ConjugacyOptions::tol));
    f.push_back(dbl_opt("onset", &ConjugacyOptions::onset));
    f.push_back(dbl_opt("backward", &ConjugacyOptions::backward));
    f.push_back(dbl_opt("max_backward", &ConjugacyOptions::max_backward));
    f.push_back(dbl_opt("pullback_tol", &ConjugacyOptions::pullback_tol));
    f.push_back(dbl_opt("level", &ConjugacyOptions::level));
    f.push_back(dbl("conjugacy", "x_lo_exp", &Cfg::x_lo_exp));
    f.push_back(dbl("conjugacy", "x_hi_exp", &Cfg::x_hi_exp));
    f.push_back(integer("conjugacy", "per_decade", &Cfg::per_decade));
    f.push_back(list("conjugacy", "shifts", &Cfg::shifts));
    f.push_back(list("conjugacy", "uniformity_abs_x", &Cfg::uniformity_abs_x));
    f.push_back(text("output", "dir", &Cfg::out_dir));
    f.push_back(flag("output", "csv", &Cfg::write_csv));
    f.push_back(flag("output", "plotdata", &Cfg::write_plotdata));
    f.push_back(flag("output", "svg", &Cfg::write_svg));
    return f;
  }();
  return table;
}

std::string canonical_text(const Cfg& c, bool with_output) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    if (!with_output && std::string_view(f.section) == "output") continue;
    if (section != f.section) {
      section = f.section;
      out += (out.empty() ? "[" : "\n[") + section + "]\n";
    }
    out += std::string(f.key) + " = " + f.get(c) + "\n";
  }
  return out;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

bool uses_seeds(StudyKind k) { return k != StudyKind::density_sweep; }

bool uses_cocycle(StudyKind k) {
  return k == StudyKind::ftle || k == StudyKind::spectrum_scan || k == StudyKind::endpoints;
}

}  // namespace

// ---------------------------------------------------------------------------
// config

void ExperimentConfig::validate() const {
  const auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  require(std::isfinite(alpha), "model.alpha must be finite");
  require(std::isfinite(sigma) && sigma >= 0.0, "model.sigma must be >= 0");
  require(positive(dt), "model.dt must be > 0");
  require(positive(tol), "model.tol must be > 0");
  if (uses_seeds(study)) require(!seeds.empty(), "ensemble.seeds must not be empty");

  switch (study) {
    case StudyKind::density_sweep:
      require(alpha_count >= 1, "sweep.alpha_count must be >= 1");
      require(std::isfinite(alpha_min) && std::isfinite(alpha_max) && alpha_min <= alpha_max,
              "sweep.alpha_min must be <= sweep.alpha_max");
      require(alpha_count == 1 || alpha_max > alpha_min, "sweep: several alphas need alpha_max > alpha_min");
      require(!sigmas.empty(), "sweep.sigmas must not be empty");
      for (double s : sigmas) require(positive(s), "sweep.sigmas must be > 0");
      break;
    case StudyKind::attractivity:
      require(positive(sigma), "attractivity needs model.sigma > 0");
      require(std::isfinite(delta) && delta >= 0.0, "attractivity.delta must be >= 0");
      require(!times.empty(), "attractivity.times must not be empty");
      for (double t : times) require(std::isfinite(t) && t >= 0.0, "attractivity.times must be >= 0");
      require(std::isfinite(threshold), "attractivity.threshold must be finite");
      break;
    case StudyKind::spectrum_scan:
      require(positive(T), "ensemble.T must be > 0");
      require(positive(gamma_step), "scan.gamma_step must be > 0");
      require(std::isfinite(gamma_min) && std::isfinite(gamma_max) && gamma_max > gamma_min,
              "scan.gamma_max must be > scan.gamma_min");
      require(std::isfinite(ratio_threshold) && ratio_threshold > 1.0, "scan.ratio_threshold must be > 1");
      require(refinement_levels >= 0, "scan.refinement_levels must be >= 0");
      require(refinement_factor >= 2, "scan.refinement_factor must be >= 2");
      break;
    case StudyKind::conjugacy:
      require(positive(sigma), "conjugacy needs model.sigma > 0");
      require(positive(conjugacy.tol), "conjugacy.tol must be > 0");
      require(positive(conjugacy.pullback_tol), "conjugacy.pullback_tol must be > 0");
      require(positive(conjugacy.level), "conjugacy.level must be > 0");
      require(std::isfinite(conjugacy.onset) && conjugacy.onset >= 0.0, "conjugacy.onset must be >= 0");
      require(positive(conjugacy.backward) && conjugacy.max_backward >= conjugacy.backward,
              "conjugacy: need 0 < backward <= max_backward");
      require(per_decade >= 1, "conjugacy.per_decade must be >= 1");
      require(std::isfinite(x_lo_exp) && std::isfinite(x_hi_exp) && x_hi_exp > x_lo_exp,
              "conjugacy.x_hi_exp must be > conjugacy.x_lo_exp");
      for (double s : shifts) require(positive(s), "conjugacy.shifts must be > 0");
      for (double x : uniformity_abs_x) require(std::isfinite(x) && x >= 0.0, "conjugacy.uniformity_abs_x must be >= 0");
      break;
    case StudyKind::ftle:
    case StudyKind::endpoints:
      for (double t : schedule()) require(positive(t), "ensemble T values must be > 0");
      break;
  }
  if (uses_cocycle(study)) {
    try {
      cocycle_spec().validate();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(std::string("cocycle: ") + e.what());
    }
  }
}

std::vector<double> ExperimentConfig::gamma_grid() const {
  const auto n = static_cast<std::int64_t>(std::floor((gamma_max - gamma_min) / gamma_step + 1e-9));
  std::vector<double> g(static_cast<std::size_t>(n + 1));
  for (std::int64_t i = 0; i <= n; ++i) g[static_cast<std::size_t>(i)] = gamma_min + static_cast<double>(i) * gamma_step;
  return g;
}

std::vector<double> ExperimentConfig::schedule() const {
  return T_schedule.empty() ? std::vector<double>{T} : T_schedule;
}

CocycleSpec ExperimentConfig::cocycle_spec() const {
  CocycleSpec spec;
  if (cocycle == "pitchfork") {
    spec.kind = PitchforkLinearization{{alpha, sigma}, dt, tol};
  } else if (cocycle == "flow") {
    require(generators.size() == 1, "cocycle.generators: flow needs exactly one generator");
    spec.kind = MatrixFlow{generators.front()};
  } else if (cocycle == "iid") {
    spec.kind = MatrixIid{generators, probabilities};
  } else if (cocycle == "tower") {
    require(n_max >= 2, "cocycle.n_max must be >= 2");
    spec.kind = RotationTower(n_max);
  } else {
    throw ConfigError("cocycle.kind: unknown cocycle '" + cocycle + "' (pitchfork, flow, iid, tower)");
  }
  spec.rate_shift = rate_shift;
  return spec;
}

ExperimentConfig parse_config(std::istream& is) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(is, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  ExperimentConfig c;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config: key '" + section + "' outside a [section]");
    for (const auto& [key, value] : body) {
      const auto it = std::find_if(fields().begin(), fields().end(), [&](const Field& f) {
        return section == f.section && key == f.key;
      });
      if (it == fields().end()) throw ConfigError("config: unknown key '" + section + "." + key + "'");
      it->set(c, section + "." + key, value.data());
    }
  }
  return c;
}

ExperimentConfig load_config(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config file '" + file.string() + "'");
  return parse_config(in);
}

std::string serialize_config(const ExperimentConfig& config) { return canonical_text(config, true); }

std::string config_hash(const ExperimentConfig& config) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(canonical_text(config, false));
  return os.str();
}

// ---------------------------------------------------------------------------
// envelope

json ResultEnvelope::to_json() const {
  return json{{"artifact", "stospec-result"}, {"version", version},          {"study", study},
              {"config_hash", config_hash},   {"config", config},            {"inconclusive", inconclusive},
              {"notes", notes},               {"payload", payload},          {"metadata", metadata}};
}

ResultEnvelope ResultEnvelope::from_json(const json& j) {
  const auto problems = validate_envelope(j);
  if (!problems.empty()) throw std::invalid_argument("envelope: " + problems.front());
  ResultEnvelope e;
  e.study = j.at("study").get<std::string>();
  e.config_hash = j.at("config_hash").get<std::string>();
  e.version = j.at("version").get<int>();
  e.config = j.at("config");
  e.payload = j.at("payload");
  e.metadata = j.value("metadata", json::object());
  e.inconclusive = j.at("inconclusive").get<bool>();
  e.notes = j.at("notes").get<std::vector<std::string>>();
  return e;
}

std::string ResultEnvelope::payload_text() const { return payload.dump(1); }

namespace {

const std::vector<std::string>& payload_keys(StudyKind kind) {
  static const std::vector<std::string> sweep{"rows", "all_negative"};
  static const std::vector<std::string> ftle{"cocycle", "ensembles", "histogram"};
  static const std::vector<std::string> attract{"delta", "times", "S", "threshold", "fraction_above"};
  static const std::vector<std::string> scan{"spectrum"};
  static const std::vector<std::string> conj{"delta", "second_moment", "level", "tables"};
  static const std::vector<std::string> ends{"cocycle", "endpoints"};
  switch (kind) {
    case StudyKind::density_sweep: return sweep;
    case StudyKind::ftle: return ftle;
    case StudyKind::attractivity: return attract;
    case StudyKind::spectrum_scan: return scan;
    case StudyKind::conjugacy: return conj;
    case StudyKind::endpoints: return ends;
  }
  return sweep;
}

}  // namespace

std::vector<std::string> validate_envelope(const json& j) {
  std::vector<std::string> problems;
  if (!j.is_object()) return {"not a JSON object"};
  const auto need = [&](const char* key, json::value_t type) {
    if (!j.contains(key)) {
      problems.push_back(std::string("missing '") + key + "'");
      return;
    }
    auto actual = j.at(key).type();
    if (actual == json::value_t::number_unsigned) actual = json::value_t::number_integer;  // parsed non-negatives
    if (actual != type) {
      problems.push_back(std::string("'") + key + "' has the wrong type");
    }
  };
  need("artifact", json::value_t::string);
  need("version", json::value_t::number_integer);
  need("study", json::value_t::string);
  need("config_hash", json::value_t::string);
  need("config", json::value_t::object);
  need("inconclusive", json::value_t::boolean);
  need("notes", json::value_t::array);
  need("payload", json::value_t::object);
  if (!problems.empty()) return problems;
  if (j["artifact"] != "stospec-result") problems.emplace_back("artifact is not 'stospec-result'");
  if (j["version"] != kArtifactVersion) problems.emplace_back("unsupported version");
  const auto kind = parse_study(j["study"].get<std::string>());
  if (!kind) {
    problems.emplace_back("unknown study");
    return problems;
  }
  for (const auto& key : payload_keys(*kind)) {
    if (!j["payload"].contains(key)) problems.push_back("payload lacks '" + key + "'");
  }
  return problems;
}

// ---------------------------------------------------------------------------
// studies

namespace {

struct Outcome {
  json payload;
  bool inconclusive = false;
  std::vector<std::string> notes;
  std::vector<std::pair<std::string, std::string>> csv;  // file name, contents
};

// Neumaier compensated sum.
double compensated_sum(const std::vector<double>& v) {
  double sum = 0.0;
  double c = 0.0;
  for (double x : v) {
    const double t = sum + x;
    c += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
    sum = t;
  }
  return sum + c;
}

// Clopper-Pearson 95% interval for a binomial proportion.
std::pair<double, double> proportion_ci(std::size_t hits, std::size_t n) {
  using boost::math::binomial_distribution;
  const auto trials = static_cast<double>(n);
  const auto k = static_cast<double>(hits);
  return {binomial_distribution<>::find_lower_bound_on_p(trials, k, 0.025),
          binomial_distribution<>::find_upper_bound_on_p(trials, k, 0.025)};
}

json histogram(const std::vector<double>& values, int bins) {
  json h = {{"bin_center", json::array()}, {"count", json::array()}};
  if (values.empty()) return h;
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  const double lo = *mn;
  const double width = *mx > lo ? (*mx - lo) / bins : 1.0;
  std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
  for (double v : values) {
    auto b = static_cast<std::int64_t>((v - lo) / width);
    b = std::clamp<std::int64_t>(b, 0, bins - 1);
    ++counts[static_cast<std::size_t>(b)];
  }
  for (int b = 0; b < bins; ++b) {
    h["bin_center"].push_back(lo + (b + 0.5) * width);
    h["count"].push_back(counts[static_cast<std::size_t>(b)]);
  }
  return h;
}

template <class Writer, class T>
std::string to_csv(Writer writer, const T& value) {
  std::ostringstream os;
  writer(os, value);
  return os.str();
}

Outcome run_density_sweep(const ExperimentConfig& c) {
  Outcome out;
  std::vector<SweepRow> rows;
  json jrows = json::array();
  bool all_negative = true;
  for (double sigma : c.sigmas) {
    for (int i = 0; i < c.alpha_count; ++i) {
      const double alpha =
          c.alpha_count == 1 ? c.alpha_min
                             : c.alpha_min + (c.alpha_max - c.alpha_min) * i / (c.alpha_count - 1);
      const auto q = lyapunov_quadrature({alpha, sigma});
      rows.push_back({alpha, sigma, q.second_moment, q.lambda});
      all_negative = all_negative && q.lambda < 0.0;
      jrows.push_back({{"alpha", alpha},
                       {"sigma", sigma},
                       {"ex2", q.second_moment},
                       {"lambda", q.lambda},
                       {"lambda_integral", q.lambda_integral},
                       {"identity_gap", q.identity_gap},
                       {"modes", density_modes({alpha, sigma})}});
    }
  }
  out.payload = {{"rows", jrows}, {"all_negative", all_negative}};
  out.csv.emplace_back("sweep.csv", to_csv(write_sweep_csv, rows));
  return out;
}

Outcome run_ftle(const ExperimentConfig& c, unsigned workers) {
  Outcome out;
  const auto spec = c.cocycle_spec();
  const auto ensembles = ftle_ensembles(spec, c.seeds, c.schedule(), workers);
  json jens = json::array();
  for (const auto& e : ensembles) {
    std::size_t positive = 0;
    for (double l : e.lmax) positive += l > 0.0 ? 1 : 0;
    const auto ci = proportion_ci(positive, e.size());
    jens.push_back({{"T", e.T},
                    {"N", e.size()},
                    {"max_lmax", e.max_lmax()},
                    {"min_lmin", e.min_lmin()},
                    {"mean_lmax", compensated_sum(e.lmax) / static_cast<double>(e.size())},
                    {"mean_lmin", compensated_sum(e.lmin) / static_cast<double>(e.size())},
                    {"positive_lmax", positive},
                    {"fraction_lmax_positive", static_cast<double>(positive) / static_cast<double>(e.size())},
                    {"fraction_ci95", {ci.first, ci.second}}});
  }
  out.payload = {{"cocycle", spec.describe()},
                 {"ensembles", jens},
                 {"histogram", histogram(ensembles.back().lmax, 40)}};
  out.payload["histogram"]["T"] = ensembles.back().T;
  out.csv.emplace_back("ftle.csv", to_csv(write_ftle_csv, ensembles));
  return out;
}

Outcome run_attractivity(const ExperimentConfig& c, unsigned workers) {
  Outcome out;
  const auto probe =
      uniform_attractivity_probe({c.alpha, c.sigma}, c.seeds, c.delta, c.times, {c.dt, c.tol, workers});
  json fractions = json::array();
  for (std::size_t j = 0; j < probe.times.size(); ++j) fractions.push_back(probe.fraction_above(j, c.threshold));
  out.payload = {{"alpha", c.alpha},         {"sigma", c.sigma},        {"delta", c.delta},
                 {"times", probe.times},     {"S", probe.sup},          {"threshold", c.threshold},
                 {"fraction_above", fractions}, {"N", probe.seeds.size()}};
  if (c.alpha < 0.0) {
    json ref = json::array();
    for (double t : probe.times) ref.push_back(c.delta * std::exp(c.alpha * t));
    out.payload["reference"] = ref;
  }
  out.csv.emplace_back("probe.csv", to_csv(write_probe_csv, probe));
  return out;
}

Outcome run_spectrum_scan(const ExperimentConfig& c, unsigned workers) {
  Outcome out;
  ScanOptions opt;
  opt.ratio_threshold = c.ratio_threshold;
  opt.refinement_levels = c.refinement_levels;
  opt.refinement_factor = c.refinement_factor;
  opt.workers = workers;
  opt.onestep_samples = c.onestep_samples;
  const auto spec = c.cocycle_spec();
  const auto estimate = scan_spectrum(spec, c.gamma_grid(), c.T, c.seeds, opt);
  out.payload = {{"cocycle", spec.describe()}, {"spectrum", to_json(estimate)}};
  if (estimate.estimation_failure) {
    out.inconclusive = true;
    out.notes.push_back("estimation failure: " + estimate.failure_reason);
  }
  out.csv.emplace_back("gamma_gap.csv", to_csv(write_gap_csv, estimate));
  return out;
}

Outcome run_conjugacy(const ExperimentConfig& c, unsigned workers) {
  Outcome out;
  const PitchforkParams params{c.alpha, c.sigma};
  const double delta = conjugacy_delta(params);
  const auto grid = log_x_grid(c.x_lo_exp, c.x_hi_exp, c.per_decade);
  std::vector<ConjugacyTable> tables(c.seeds.size());
  parallel_for(c.seeds.size(), workers, [&](std::size_t i) {
    tables[i] = conjugacy(params, c.seeds[i], c.dt, grid, c.shifts, c.conjugacy);
  });
  json jt = json::array();
  for (const auto& t : tables) {
    double max_defect = 0.0;
    json per_shift = json::array();
    for (std::size_t j = 0; j < t.shifts.size(); ++j) {
      double m = 0.0;
      for (std::size_t i = 0; i < t.x.size(); ++i) {
        if (!std::isnan(t.residual[j][i])) m = std::max(m, t.residual[j][i]);
        if (!std::isnan(t.r_defect[j][i])) max_defect = std::max(max_defect, t.r_defect[j][i]);
      }
      per_shift.push_back({{"s", t.shifts[j]}, {"max_residual", m}});
    }
    const auto zero = std::find(t.x.begin(), t.x.end(), 0.0);
    jt.push_back({{"seed", t.seed},
                  {"missing", t.missing},
                  {"missing_shifted", t.missing_shifted},
                  {"onset_verified", t.onset_verified},
                  {"g_strictly_increasing", t.g_strictly_increasing()},
                  {"g_zero", zero != t.x.end() && t.g[static_cast<std::size_t>(zero - t.x.begin())] == 0.0},
                  {"max_residual", t.max_residual()},
                  {"max_r_defect", max_defect},
                  {"residuals", per_shift},
                  {"x", t.x},
                  {"r", t.r},
                  {"g", t.g},
                  {"horizon", t.horizon},
                  {"mass", t.mass}});
    if (t.missing > 0) {
      out.inconclusive = true;
      out.notes.push_back("seed " + std::to_string(t.seed) + ": no root at level " + fmt(t.level) + " for " +
                          std::to_string(t.missing) + " of " + std::to_string(t.x.size()) +
                          " grid points (backward explosion)");
    }
    out.csv.emplace_back("conjugacy_" + std::to_string(t.seed) + ".csv", to_csv(write_conjugacy_csv, t));
  }
  out.payload = {{"alpha", c.alpha},
                 {"sigma", c.sigma},
                 {"dt", c.dt},
                 {"delta", delta},
                 {"second_moment", moment(params, 2)},
                 {"level", c.conjugacy.level},
                 {"tables", jt}};
  if (!c.uniformity_abs_x.empty()) {
    const auto u = uniformity_probe(params, c.seeds, c.uniformity_abs_x, c.dt, c.conjugacy, workers);
    out.payload["uniformity"] = {{"abs_x", u.abs_x}, {"max_abs_g", u.max_abs_g}, {"missing", u.missing}};
    out.csv.emplace_back("uniformity.csv", to_csv(write_uniformity_csv, u));
  }
  return out;
}

Outcome run_endpoints(const ExperimentConfig& c, unsigned workers) {
  Outcome out;
  const auto spec = c.cocycle_spec();
  const auto e = estimate_endpoints(spec, c.schedule(), c.seeds, workers);
  out.payload = {{"cocycle", spec.describe()}, {"endpoints", to_json(e)}};
  std::ostringstream os;
  os << std::setprecision(17) << "T,sup_estimate,inf_estimate,se_upper,se_lower\n";
  for (const auto& r : e.rows) {
    os << r.T << ',' << r.sup_estimate << ',' << r.inf_estimate << ',' << r.se_upper << ',' << r.se_lower << '\n';
  }
  out.csv.emplace_back("endpoints.csv", os.str());
  out.csv.emplace_back("onestep.csv", to_csv(write_onestep_csv, e.onestep));
  return out;
}

void write_file(const fs::path& path, const std::string& contents) {
  std::ofstream f(path, std::ios::binary);
  f << contents;
  f.close();
  if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json config_json(const ExperimentConfig& c) {
  json j = json::object();
  for (const auto& f : fields()) j[f.section][f.key] = f.get(c);
  return j;
}

}  // namespace

ResultEnvelope run(ExperimentConfig config, const RunOptions& options) {
  for (auto& s : config.seeds) s += options.seed_offset;
  if (options.out_dir) config.out_dir = options.out_dir->string();
  config.validate();
  const unsigned workers = std::max(1u, options.workers);

  ResultEnvelope env;
  env.study = to_string(config.study);
  env.config_hash = config_hash(config);
  env.config = config_json(config);

  const auto started = utc_now();
  const auto t0 = std::chrono::steady_clock::now();
  Outcome out;
  switch (config.study) {
    case StudyKind::density_sweep: out = run_density_sweep(config); break;
    case StudyKind::ftle: out = run_ftle(config, workers); break;
    case StudyKind::attractivity: out = run_attractivity(config, workers); break;
    case StudyKind::spectrum_scan: out = run_spectrum_scan(config, workers); break;
    case StudyKind::conjugacy: out = run_conjugacy(config, workers); break;
    case StudyKind::endpoints: out = run_endpoints(config, workers); break;
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  env.payload = std::move(out.payload);
  env.inconclusive = out.inconclusive;
  env.notes = std::move(out.notes);
  env.metadata = {{"started_utc", started},
                  {"wall_clock_seconds", seconds},
                  {"workers", workers},
                  {"seed_offset", options.seed_offset}};

  if (options.write_files) {
    const fs::path dir = config.out_dir;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory '" + dir.string() + "': " + ec.message());
    write_file(dir / "envelope.json", env.to_json().dump(2) + "\n");
    write_file(dir / "payload.json", env.payload_text() + "\n");
    write_file(dir / "config.ini", serialize_config(config));
    if (config.write_csv) {
      for (const auto& [name, text] : out.csv) write_file(dir / name, text);
    }
    if (config.write_plotdata) emit_plotdata(env, dir / "plot", config.write_svg);
  }
  return env;
}

// ---------------------------------------------------------------------------
// plot data

namespace {

struct DatWriter {
  std::ostringstream os;
  explicit DatWriter(const std::string& header) { os << std::setprecision(17) << "# " << header << '\n'; }
  template <class... V>
  void row(const V&... v) {
    const char* sep = "";
    ((os << sep << v, sep = " "), ...);
    os << '\n';
  }
};

double num(const json& v) {
  if (v.is_number()) return v.get<double>();
  return std::numeric_limits<double>::quiet_NaN();
}

std::vector<double> nums(const json& arr) {
  std::vector<double> out;
  for (const auto& v : arr) out.push_back(num(v));
  return out;
}

}  // namespace

std::vector<fs::path> emit_plotdata(const ResultEnvelope& env, const fs::path& dir, bool svg_too) {
  const auto kind = parse_study(env.study);
  if (!kind) throw std::invalid_argument("emit_plotdata: unknown study '" + env.study + "'");
  const auto problems = validate_envelope(env.to_json());
  if (!problems.empty()) throw std::invalid_argument("emit_plotdata: " + problems.front());
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create '" + dir.string() + "': " + ec.message());

  std::vector<fs::path> written;
  const auto put = [&](const std::string& name, const std::string& text) {
    write_file(dir / name, text);
    written.push_back(dir / name);
  };
  const auto put_svg = [&](const std::string& name, const std::vector<svg::Series>& s, const svg::Axes& a) {
    if (svg_too) put(name, svg::plot(s, a));
  };
  const json& p = env.payload;

  switch (*kind) {
    case StudyKind::density_sweep: {
      DatWriter dat("alpha sigma lambda ex2");
      std::vector<svg::Series> series;
      double current = std::numeric_limits<double>::quiet_NaN();
      for (const auto& r : p["rows"]) {
        const double sigma = num(r["sigma"]);
        if (sigma != current) {
          if (!series.empty()) dat.os << "\n\n";
          series.push_back({"sigma=" + fmt(sigma), {}, {}});
          current = sigma;
        }
        dat.row(num(r["alpha"]), sigma, num(r["lambda"]), num(r["ex2"]));
        series.back().x.push_back(num(r["alpha"]));
        series.back().y.push_back(num(r["lambda"]));
      }
      put("lambda.dat", dat.os.str());
      put_svg("lambda.svg", series, {"Lyapunov exponent of the random fixed point", "alpha", "lambda"});
      break;
    }
    case StudyKind::ftle: {
      DatWriter dat("bin_center count");
      const auto& h = p["histogram"];
      svg::Series s{"T=" + fmt(num(h.value("T", json()))), nums(h["bin_center"]), nums(h["count"]), false, true};
      for (std::size_t i = 0; i < s.x.size(); ++i) dat.row(s.x[i], static_cast<long long>(s.y[i]));
      put("ftle_hist.dat", dat.os.str());
      DatWriter ens("T max_lmax min_lmin fraction_lmax_positive");
      for (const auto& e : p["ensembles"]) {
        ens.row(num(e["T"]), num(e["max_lmax"]), num(e["min_lmin"]), num(e["fraction_lmax_positive"]));
      }
      put("ftle_extremes.dat", ens.os.str());
      put_svg("ftle_hist.svg", {s}, {"Largest finite-time exponent", "lambda_max", "count"});
      break;
    }
    case StudyKind::attractivity: {
      const auto t = nums(p["times"]);
      const auto S = nums(p["S"]);
      DatWriter dat("t S");
      for (std::size_t i = 0; i < t.size(); ++i) dat.row(t[i], S[i]);
      put("decay.dat", dat.os.str());
      std::vector<svg::Series> series{{"S(t)", t, S, false, false}};
      if (p.contains("reference")) {
        DatWriter ref("t delta*exp(alpha*t)");
        const auto r = nums(p["reference"]);
        for (std::size_t i = 0; i < t.size(); ++i) ref.row(t[i], r[i]);
        put("decay_reference.dat", ref.os.str());
        series.push_back({"delta exp(alpha t)", t, r, false, false});
      }
      put_svg("decay.svg", series, {"Ensemble sup of the offset", "t", "S(t)", true});
      break;
    }
    case StudyKind::spectrum_scan: {
      DatWriter dat("gamma min_log_gap rank");
      svg::Series gap{"min log-gap", {}, {}, true, false};
      for (const auto& v : p["spectrum"]["verdicts"]) {
        dat.row(num(v["gamma"]), num(v["min_log_gap"]), v["rank"].get<int>());
        gap.x.push_back(num(v["gamma"]));
        gap.y.push_back(num(v["min_log_gap"]));
      }
      put("gamma_gap.dat", dat.os.str());
      put_svg("gamma_gap.svg", {gap}, {"Singular-value gap across the growth-rate grid", "gamma", "min log-gap"});
      break;
    }
    case StudyKind::conjugacy: {
      std::vector<svg::Series> series;
      for (const auto& t : p["tables"]) {
        const auto seed = t["seed"].get<std::uint64_t>();
        DatWriter dat("x g");
        const auto x = nums(t["x"]);
        const auto g = nums(t["g"]);
        for (std::size_t i = 0; i < x.size(); ++i) dat.row(x[i], g[i]);
        put("conjugacy_" + std::to_string(seed) + ".dat", dat.os.str());
        if (series.size() < 6) series.push_back({"seed " + std::to_string(seed), x, g, false, false});
      }
      put_svg("conjugacy.svg", series, {"Conjugacy g(w, x)", "x", "g"});
      if (p.contains("uniformity")) {
        DatWriter dat("abs_x max_abs_g");
        const auto ax = nums(p["uniformity"]["abs_x"]);
        const auto mg = nums(p["uniformity"]["max_abs_g"]);
        for (std::size_t i = 0; i < ax.size(); ++i) dat.row(ax[i], mg[i]);
        put("uniformity.dat", dat.os.str());
        put_svg("uniformity.svg", {{"max |g|", ax, mg, true, false}},
                {"Ensemble maximum of |g(w, x)|", "|x|", "max |g|", true});
      }
      break;
    }
    case StudyKind::endpoints: {
      DatWriter dat("T sup_estimate inf_estimate");
      svg::Series up{"sup estimate", {}, {}}, lo{"inf estimate", {}, {}};
      for (const auto& r : p["endpoints"]["rows"]) {
        dat.row(num(r["T"]), num(r["sup_estimate"]), num(r["inf_estimate"]));
        up.x.push_back(num(r["T"]));
        up.y.push_back(num(r["sup_estimate"]));
        lo.x.push_back(num(r["T"]));
        lo.y.push_back(num(r["inf_estimate"]));
      }
      put("endpoints.dat", dat.os.str());
      put_svg("endpoints.svg", {up, lo}, {"Spectral endpoint estimates", "T", "rate"});
      break;
    }
  }
  return written;
}

std::vector<fs::path> emit_plotdata(const ResultEnvelope& env, StudyKind expected, const fs::path& dir,
                                    bool svg_too) {
  if (env.study != to_string(expected)) {
    throw std::invalid_argument(std::string("emit_plotdata: envelope holds a '") + env.study + "' study, expected '" +
                                to_string(expected) + "'");
  }
  return emit_plotdata(env, dir, svg_too);
}

}  // namespace stospec
