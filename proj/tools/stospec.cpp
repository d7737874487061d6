// Command line front end for the experiment runner.
//
//   stospec <study> --config FILE [--out DIR] [--workers N] [--seed-offset K]
//   stospec validate --config FILE
//   stospec plot --envelope FILE [--out DIR] [--no-svg]
//
// Exit status: 0 success, 2 the study finished but its estimate is
// inconclusive, 1 usage or runtime error.

#include <cstdlib>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "stospec/experiment.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kInconclusive = 2;

struct StudyArgs {
  std::string config;
  std::string out;
  unsigned workers = 1;
  std::uint64_t seed_offset = 0;
};

int run_study(stospec::StudyKind kind, const StudyArgs& args) {
  auto config = stospec::load_config(args.config);
  if (config.study != kind) {
    std::cerr << "stospec: config '" << args.config << "' describes a '" << stospec::to_string(config.study)
              << "' study, not '" << stospec::to_string(kind) << "'\n";
    return kUsage;
  }
  stospec::RunOptions opt;
  opt.workers = args.workers;
  opt.seed_offset = args.seed_offset;
  if (!args.out.empty()) {
    opt.out_dir = args.out;
  } else if (const char* env = std::getenv("STOSPEC_OUT"); env && *env) {
    opt.out_dir = env;
  }
  const auto envelope = stospec::run(config, opt);
  std::cout << envelope.study << ' ' << envelope.config_hash << " -> "
            << (opt.out_dir ? opt.out_dir->string() : config.out_dir) << '\n';
  for (const auto& note : envelope.notes) std::cout << "  note: " << note << '\n';
  if (envelope.inconclusive) {
    std::cout << "  estimate inconclusive\n";
    return kInconclusive;
  }
  return kOk;
}

int validate(const std::string& file) {
  const auto config = stospec::load_config(file);
  config.validate();
  std::cout << "ok " << stospec::to_string(config.study) << ' ' << stospec::config_hash(config) << '\n';
  return kOk;
}

int plot(const std::string& file, const std::string& out, bool svg) {
  std::ifstream in(file);
  if (!in) throw stospec::ConfigError("cannot read envelope '" + file + "'");
  const auto envelope = stospec::ResultEnvelope::from_json(nlohmann::json::parse(in));
  const std::filesystem::path dir = out.empty() ? std::filesystem::path(file).parent_path() / "plot" : std::filesystem::path(out);
  for (const auto& p : stospec::emit_plotdata(envelope, dir, svg)) std::cout << p.string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Random dynamical systems spectral laboratory"};
  app.require_subcommand(1);

  constexpr stospec::StudyKind kinds[] = {
      stospec::StudyKind::density_sweep, stospec::StudyKind::ftle,      stospec::StudyKind::attractivity,
      stospec::StudyKind::spectrum_scan, stospec::StudyKind::conjugacy, stospec::StudyKind::endpoints,
  };
  StudyArgs args;
  std::vector<std::pair<CLI::App*, stospec::StudyKind>> studies;
  for (auto kind : kinds) {
    auto* sub = app.add_subcommand(stospec::to_string(kind), std::string("run the ") + stospec::to_string(kind) + " study");
    sub->add_option("--config", args.config, "configuration file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", args.out, "output directory (default: $STOSPEC_OUT, then the config)");
    sub->add_option("--workers", args.workers, "worker threads; results do not depend on it")
        ->check(CLI::Range(1u, 1024u));
    sub->add_option("--seed-offset", args.seed_offset, "added to every seed");
    studies.emplace_back(sub, kind);
  }

  std::string validate_config;
  auto* val = app.add_subcommand("validate", "check a configuration file");
  val->add_option("--config", validate_config, "configuration file")->required()->check(CLI::ExistingFile);

  std::string envelope_file;
  std::string plot_out;
  bool no_svg = false;
  auto* pl = app.add_subcommand("plot", "write plot data for an existing envelope");
  pl->add_option("--envelope", envelope_file, "envelope.json of a finished run")->required()->check(CLI::ExistingFile);
  pl->add_option("--out", plot_out, "directory for .dat and .svg files");
  pl->add_flag("--no-svg", no_svg, "skip the SVG renderings");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*val) return validate(validate_config);
    if (*pl) return plot(envelope_file, plot_out, !no_svg);
    for (const auto& [sub, kind] : studies) {
      if (*sub) return run_study(kind, args);
    }
  } catch (const stospec::ConfigError& e) {
    std::cerr << "stospec: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "stospec: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
