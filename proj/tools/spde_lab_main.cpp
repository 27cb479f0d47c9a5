// spde-lab: command-line runner for the stochastic reaction-diffusion
// experiment suite.
//
//   spde-lab run <config> [--seed N] [--paths N] [--out DIR]
//                         [--strict-reproducible]
//   spde-lab list
//
// Exit codes: 0 all checks pass, 1 some check failed, 2 invalid
// configuration or usage, 3 runtime divergence.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "spdelab/spdelab.hpp"

namespace {

void print_summary(const spdelab::ResultBundle& b) {
  std::printf("experiment: %s\n", b.experiment.c_str());
  for (const auto& c : b.checks)
    std::printf("  [%s] %-32s %.6g %s %.6g\n", c.pass ? "PASS" : "FAIL",
                c.name.c_str(), c.value, c.comparator.c_str(), c.threshold);
  if (b.runtime_divergence) std::printf("  [FAIL] runtime divergence\n");
  std::printf("result: %s  (%.1f ms)\n", b.pass() ? "PASS" : "FAIL",
              b.wall_ms);
  for (const auto& o : b.outputs) std::printf("wrote: %s\n", o.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spde-lab: stochastic reaction-diffusion experiment runner"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> paths;
  std::optional<std::string> out_dir;
  bool strict = false;

  CLI::App* run = app.add_subcommand("run", "run one experiment config");
  run->add_option("config", config_path, "path to a key=value config file")
      ->required();
  run->add_option("--seed", seed, "override experiment.master_seed");
  run->add_option("--paths", paths, "override experiment.paths");
  run->add_option("--out", out_dir, "directory for result bundle + CSV files");
  run->add_flag("--strict-reproducible", strict,
                "force deterministic reduction order (always on; echoed in "
                "the bundle)");

  CLI::App* list = app.add_subcommand("list", "list available experiments");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (list->parsed()) {
    std::cout << spdelab::format_experiment_table();
    return 0;
  }

  try {
    const spdelab::Config cfg = spdelab::Config::parse_file(config_path);
    spdelab::RunOverrides ov;
    ov.master_seed = seed;
    ov.paths = paths;
    ov.strict_reproducible = strict;
    if (out_dir) {
      ov.output_dir = *out_dir;
    } else if (const char* env = std::getenv("SPDE_LAB_OUT")) {
      // the one permitted environment override: output directory
      if (*env != '\0') ov.output_dir = std::string(env);
    }
    const spdelab::ResultBundle bundle = spdelab::run_experiment(cfg, ov);
    print_summary(bundle);
    if (bundle.runtime_divergence) return 3;
    return bundle.pass() ? 0 : 1;
  } catch (const spdelab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const spdelab::DivergenceError& e) {
    std::cerr << "runtime divergence: " << e.what() << '\n';
    return 3;
  } catch (const spdelab::PicardError& e) {
    std::cerr << "fixed-point iteration failed: " << e.what() << '\n';
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
