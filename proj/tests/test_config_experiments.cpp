#include <catch2/catch_amalgamated.hpp>

#include <string>

#include "spdelab/config.hpp"
#include "spdelab/experiments.hpp"

using namespace spdelab;

TEST_CASE("flat key-value text with sections parses into dotted keys",
          "[config]") {
  const Config cfg = Config::parse_text(
      "top = 1\n"
      "[experiment]\n"
      "name = simulate   # trailing comment\n"
      "t = 0.5\n"
      "; full-line comment\n"
      "[model]\n"
      "n_modes = 16\n"
      "flags = 1 2.5 -3e-1\n");
  CHECK(cfg.get_double("top") == 1.0);
  CHECK(cfg.get_string("experiment.name") == "simulate");
  CHECK(cfg.get_double("experiment.t") == 0.5);
  CHECK(cfg.get_int("model.n_modes") == 16);
  const auto v = cfg.get_doubles("model.flags");
  REQUIRE(v.size() == 3);
  CHECK(v[2] == Catch::Approx(-0.3));
  CHECK(cfg.keys_in_order().front() == "top");
  CHECK(cfg.keys_in_order().back() == "model.flags");
  CHECK(cfg.get_string_or("missing", "fallback") == "fallback");
  CHECK(cfg.get_bool_or("missing", true));
}

TEST_CASE("malformed config lines are reported with their line number",
          "[config]") {
  try {
    Config::parse_text("a = 1\nnot a key value pair\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.line == 2);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  try {
    Config::parse_text("[s]\nk = 1\nk = 2\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.line == 3);
    CHECK(e.key == "s.k");
  }
  CHECK_THROWS_AS(Config::parse_text("[unterminated\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse_text("[]\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse_text("= 3\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse_file("no_such_config_file.cfg"), ConfigError);
}

TEST_CASE("typed getters validate their values", "[config]") {
  const Config cfg = Config::parse_text(
      "[a]\nnum = 12\nbad = 3x\nflag_on = yes\nflag_off = 0\nseed = "
      "18446744073709551615\n");
  CHECK(cfg.get_int("a.num") == 12);
  CHECK_THROWS_AS(cfg.get_double("a.bad"), ConfigError);
  CHECK(cfg.get_bool_or("a.flag_on", false));
  CHECK_FALSE(cfg.get_bool_or("a.flag_off", true));
  CHECK_THROWS_AS(cfg.get_bool_or("a.bad", false), ConfigError);
  CHECK(cfg.get_seed_or("a.seed", 0) == 18446744073709551615ull);
  try {
    cfg.get_double("a.missing");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.key == "a.missing");
  }
}

TEST_CASE("unknown keys are rejected before any computation", "[config]") {
  const Config cfg = Config::parse_text(
      "[experiment]\nname = kernel-check\n[model]\nn_modes = 8\n[kernel]\n"
      "betaa = 0.6\n");
  try {
    run_experiment(cfg);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("kernel.betaa") != std::string::npos);
  }
}

namespace {

ResultBundle run_text(const std::string& text, const RunOverrides& ov = {}) {
  return run_experiment(Config::parse_text(text), ov);
}

const std::string kTinyGaussian =
    "[experiment]\nname = gaussian-check\nt = 0.1\nx = 0.5\npaths = 400\n"
    "master_seed = 20260814\n"
    "[model]\nn_modes = 8\n"
    "[solver]\nn_steps = 32\n"
    "[sigma]\npreset = constant\nvalue = 1\n"
    "[gaussian]\nvariance_tol = 0.25\n";

}  // namespace

TEST_CASE("experiment names are validated", "[experiments]") {
  CHECK_THROWS_AS(run_text("[experiment]\nname = nope\n"), ConfigError);
  CHECK_THROWS_AS(run_text("name = simulate\n"), ConfigError);  // no section
}

TEST_CASE("linear decay run checks itself and passes", "[experiments]") {
  const ResultBundle b = run_text(
      "[experiment]\nname = simulate\nt = 0.1\n"
      "[model]\nn_modes = 4\n"
      "[solver]\nn_steps = 20\n"
      "[sigma]\npreset = constant\nvalue = 0\n"
      "[u0]\npreset = eigenmode\nmode = 1\namplitude = 1\n");
  CHECK(b.pass());
  CHECK_FALSE(b.runtime_divergence);
  bool found = false;
  for (const auto& c : b.checks)
    if (c.name == "linear_decay_rel_error") {
      found = true;
      CHECK(c.value <= 1e-12);
    }
  CHECK(found);
}

TEST_CASE("oracle cross-checks run inside the simulate experiment",
          "[experiments]") {
  const ResultBundle b = run_text(
      "[experiment]\nname = simulate\nt = 0.05\n"
      "[model]\nn_modes = 8\n"
      "[solver]\nn_steps = 16\n"
      "[drift]\ncoeffs = 0 1 0 -1\nclamp = 10\n"
      "[sigma]\npreset = affine_sine\n"
      "[u0]\npreset = eigenmode\nmode = 1\namplitude = 0.5\n"
      "[simulate]\ncross_check = oracles\n");
  CHECK(b.pass());
  int seen = 0;
  for (const auto& c : b.checks) {
    if (c.name == "picard_sup_distance" ||
        c.name == "random_field_eigen_rel_diff" ||
        c.name == "random_field_quadrature_rel_diff")
      ++seen;
  }
  CHECK(seen == 3);
}

TEST_CASE("runaway paths mark the bundle as divergent", "[experiments]") {
  const ResultBundle b = run_text(
      "[experiment]\nname = simulate\nt = 0.5\n"
      "[model]\nn_modes = 8\n"
      "[solver]\nn_steps = 50\n"
      "[drift]\ncoeffs = 0 0 0 1\nclamp = none\n"
      "[sigma]\npreset = constant\nvalue = 0\n"
      "[u0]\npreset = eigenmode\nmode = 1\namplitude = 5\n");
  CHECK(b.runtime_divergence);
  CHECK_FALSE(b.pass());
}

TEST_CASE("small gaussian run matches its closed-form law", "[experiments]") {
  const ResultBundle b = run_text(kTinyGaussian);
  CHECK(b.pass());
  CHECK(b.metrics["n_samples"].get<int>() == 400);
  // drift or varying sigma invalidate the closed form and are rejected
  CHECK_THROWS_AS(
      run_text(
          "[experiment]\nname = gaussian-check\nt = 0.1\npaths = 400\n"
          "[model]\nn_modes = 8\n[solver]\nn_steps = 32\n"
          "[drift]\ncoeffs = 0 1\n[sigma]\npreset = constant\nvalue = 1\n"),
      ConfigError);
  CHECK_THROWS_AS(
      run_text(
          "[experiment]\nname = gaussian-check\nt = 0.1\npaths = 400\n"
          "[model]\nn_modes = 8\n[solver]\nn_steps = 32\n"
          "[sigma]\npreset = affine_sine\n"),
      ConfigError);
}

TEST_CASE("overrides replace seed and path count and are echoed",
          "[experiments]") {
  RunOverrides ov;
  ov.paths = 150;
  ov.master_seed = 555;
  const ResultBundle b = run_text(kTinyGaussian, ov);
  CHECK(b.metrics["n_samples"].get<int>() == 150);
  CHECK(b.overrides_echo["paths"].get<int>() == 150);
  CHECK(b.overrides_echo["master_seed"].get<std::uint64_t>() == 555);
}

TEST_CASE("result bundles are byte-identical apart from the wall clock",
          "[experiments]") {
  const std::string cfg =
      "[experiment]\nname = kernel-check\nx = 0.5\n[model]\nn_modes = 32\n";
  const ResultBundle a = run_text(cfg);
  const ResultBundle b = run_text(cfg);
  CHECK(a.to_json(false).dump() == b.to_json(false).dump());
  CHECK(a.to_json(true).contains("wall_ms"));
  CHECK_FALSE(a.to_json(false).contains("wall_ms"));
}

TEST_CASE("kernel profile experiment verifies bounds and the limit",
          "[experiments]") {
  const ResultBundle b = run_text(
      "[experiment]\nname = kernel-check\nx = 0.5\n[model]\nn_modes = 64\n");
  CHECK(b.pass());
  // an impossible decay threshold must fail the limit check, not error out
  const ResultBundle f = run_text(
      "[experiment]\nname = kernel-check\nx = 0.5\n[model]\nn_modes = 64\n"
      "[kernel]\ndecade_threshold = 1e-9\n");
  CHECK_FALSE(f.pass());
}

TEST_CASE("sensitivity experiment validates the tangent and the identity",
          "[experiments]") {
  const ResultBundle b = run_text(
      "[experiment]\nname = malliavin-check\nt = 0.1\nx = 0.5\n"
      "[model]\nn_modes = 4\n"
      "[solver]\nn_steps = 16\n"
      "[drift]\ncoeffs = 0 1 0 -1\nclamp = 5\n"
      "[sigma]\npreset = affine_sine\n"
      "[u0]\npreset = eigenmode\nmode = 1\namplitude = 0.5\n"
      "[malliavin]\nadditive_n_modes = 16\nadditive_n_steps = 64\n"
      "additive_t = 0.25\nadditive_tol = 0.08\nfd_probes = 20\n"
      "fd_damping_floor = 1e-3\n");
  CHECK(b.pass());
  // asking for more informative probes than exist is a config error
  CHECK_THROWS_AS(
      run_text(
          "[experiment]\nname = malliavin-check\nt = 0.1\nx = 0.5\n"
          "[model]\nn_modes = 4\n[solver]\nn_steps = 16\n"
          "[drift]\ncoeffs = 0 1 0 -1\nclamp = 5\n"
          "[sigma]\npreset = affine_sine\n"
          "[u0]\npreset = eigenmode\nmode = 1\namplitude = 0.5\n"
          "[malliavin]\nfd_probes = 1000\nfd_damping_floor = 1e-3\n"),
      ConfigError);
}

TEST_CASE("window scaling experiment fits the log-log slope",
          "[experiments]") {
  const ResultBundle b = run_text(
      "[experiment]\nname = scaling\nt = 0.02\nx = 0.5\npaths = 100\n"
      "[model]\nn_modes = 8\n"
      "[solver]\nn_steps = 100\n"
      "[drift]\ncoeffs = 0 1 0 -1\nclamp = 5\n"
      "[sigma]\npreset = affine_sine\n"
      "[u0]\npreset = eigenmode\nmode = 1\namplitude = 0.5\n"
      "[scaling]\ndelta_min = 5e-4\ndelta_max = 5e-3\nn_deltas = 5\n"
      "multiplicative_min = 0.5\n");
  CHECK(b.pass());
  CHECK(b.metrics.contains("slope_additive"));
  CHECK(b.metrics.contains("slope_multiplicative"));
  CHECK_THROWS_AS(
      run_text("[experiment]\nname = scaling\nt = 0.02\npaths = 100\n"
               "[model]\nn_modes = 8\n[solver]\nn_steps = 100\n"
               "[scaling]\ncases = neither\n"),
      ConfigError);
}

TEST_CASE("density experiment flags the degenerate control", "[experiments]") {
  const ResultBundle b = run_text(
      "[experiment]\nname = density\nt = 0.075\nx = 0.5\npaths = 150\n"
      "[model]\nn_modes = 8\n"
      "[solver]\nn_steps = 48\n"
      "[drift]\ncoeffs = 0 1 0 -1\nclamp = 10\n"
      "[sigma]\npreset = affine_sine\n"
      "[density]\natom_paths = 800\ncontrol_paths = 60\nv0_tol = 0.08\n");
  CHECK(b.pass());
  bool control_seen = false;
  for (const auto& c : b.checks)
    if (c.name == "control_degeneracy_detected") {
      control_seen = true;
      CHECK(c.pass);
    }
  CHECK(control_seen);
  // sigma without a positive floor cannot support the lower-bound check
  CHECK_THROWS_AS(
      run_text("[experiment]\nname = density\nt = 0.075\npaths = 150\n"
               "[model]\nn_modes = 8\n[solver]\nn_steps = 48\n"
               "[sigma]\npreset = identity\n"),
      ConfigError);
}

TEST_CASE("localization experiment checks agreement before the stop",
          "[experiments]") {
  const std::string base =
      "[experiment]\nname = localize\nt = 0.2\nx = 0.5\n"
      "[model]\nn_modes = 8\n"
      "[solver]\nn_steps = 40\n"
      "[drift]\ncoeffs = 0 30 0 -0.01\nodd_dissipative = true\n"
      "[sigma]\npreset = constant\nvalue = 1\n"
      "[u0]\npreset = eigenmode\nmode = 1\namplitude = 1\n";
  const ResultBundle b = run_text(base + "[localize]\nlevels = 3 5 10 1e6\n");
  CHECK(b.pass());
  CHECK_THROWS_AS(run_text(base + "[localize]\nlevels = 3\n"), ConfigError);
  CHECK_THROWS_AS(run_text(base + "[localize]\nlevels = 5 3\n"), ConfigError);
  // the experiment owns the clamp levels; a drift clamp is contradictory
  const std::string clash =
      "[experiment]\nname = localize\nt = 0.2\n[model]\nn_modes = 8\n"
      "[solver]\nn_steps = 40\n[drift]\ncoeffs = 0 30 0 -0.01\nclamp = 7\n"
      "[localize]\nlevels = 3 1e6\n";
  CHECK_THROWS_AS(run_text(clash), ConfigError);
}

TEST_CASE("common validation failures surface as config errors",
          "[experiments]") {
  CHECK_THROWS_AS(
      run_text("[experiment]\nname = simulate\nt = -1\n[model]\nn_modes = 4\n"
               "[solver]\nn_steps = 10\n"),
      ConfigError);
  CHECK_THROWS_AS(
      run_text("[experiment]\nname = simulate\nt = 0.1\n[model]\nn_modes = 4\n"
               "[solver]\nn_steps = 0\n"),
      ConfigError);
  CHECK_THROWS_AS(
      run_text("[experiment]\nname = simulate\nt = 0.1\n[model]\nn_modes = 4\n"
               "[solver]\nn_steps = 10\n[u0]\npreset = eigenmode\nmode = 99\n"),
      ConfigError);
  CHECK_THROWS_AS(
      run_text("[experiment]\nname = simulate\nt = 0.1\n[model]\nn_modes = 4\n"
               "[solver]\nn_steps = 10\n[sigma]\npreset = wavy\n"),
      ConfigError);
  CHECK_THROWS_AS(
      run_text("[experiment]\nname = simulate\nt = 0.1\nx = 0.5 0.5\n"
               "[model]\nn_modes = 4\n[solver]\nn_steps = 10\n"),
      ConfigError);
  CHECK_THROWS_AS(
      run_text("[experiment]\nname = simulate\nt = 0.1\npaths = 0\n"
               "[model]\nn_modes = 4\n[solver]\nn_steps = 10\n"),
      ConfigError);
}

TEST_CASE("two-dimensional simulate runs end to end", "[experiments]") {
  const ResultBundle b = run_text(
      "[experiment]\nname = simulate\nt = 0.02\nx = 0.3 0.7\n"
      "[model]\ndimension = 2\nn_modes = 4\n"
      "[solver]\nn_steps = 20\n"
      "[drift]\ncoeffs = 0 1 0 -1\nclamp = 10\n"
      "[sigma]\npreset = affine_sine\n"
      "[u0]\npreset = eigenmode\nmode = 1\namplitude = 0.5\n");
  CHECK(b.pass());
}

TEST_CASE("experiment listing is stable and complete", "[experiments]") {
  const std::string table = format_experiment_table();
  CHECK(table == format_experiment_table());
  for (const auto& e : list_experiments())
    CHECK(table.find(e.name) != std::string::npos);
  CHECK(list_experiments().size() == 7);
}
