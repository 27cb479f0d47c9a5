#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

int run_command(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

std::string quoted(const fs::path& p) { return "\"" + p.string() + "\""; }

const fs::path kBin = SPDE_LAB_BIN;
const fs::path kConfigs = SPDE_LAB_CONFIG_DIR;

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("spde_cli_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("list subcommand prints every experiment", "[cli]") {
  TempDir tmp("list");
  const fs::path log = tmp.path / "list.txt";
  REQUIRE(run_command(quoted(kBin) + " list > " + quoted(log)) == 0);
  const std::string out = slurp(log);
  for (const char* name :
       {"simulate", "gaussian-check", "malliavin-check", "kernel-check",
        "scaling", "density", "localize"})
    CHECK(out.find(name) != std::string::npos);
}

TEST_CASE("run writes the result bundle and exits zero on success", "[cli]") {
  TempDir tmp("linear");
  const fs::path cfg = kConfigs / "simulate_linear.cfg";
  REQUIRE(run_command(quoted(kBin) + " run " + quoted(cfg) + " --out " +
                      quoted(tmp.path) + " > " +
                      quoted(tmp.path / "log.txt")) == 0);
  CHECK(fs::exists(tmp.path / "bundle.json"));
  CHECK(fs::exists(tmp.path / "trajectory.csv"));
  CHECK(fs::exists(tmp.path / "field_final.csv"));
  const std::string log = slurp(tmp.path / "log.txt");
  CHECK(log.find("result: PASS") != std::string::npos);
  const auto bundle = nlohmann::json::parse(slurp(tmp.path / "bundle.json"));
  CHECK(bundle.at("experiment") == "simulate");
  CHECK(bundle.at("wall_ms").is_number());
}

TEST_CASE("repeat runs produce identical bundles up to the wall clock",
          "[cli]") {
  TempDir tmp("det");
  const fs::path cfg = kConfigs / "simulate_linear.cfg";
  const std::string cmd = quoted(kBin) + " run " + quoted(cfg) + " --out " +
                          quoted(tmp.path) + " > /dev/null";
  REQUIRE(run_command(cmd) == 0);
  auto ja = nlohmann::json::parse(slurp(tmp.path / "bundle.json"));
  REQUIRE(run_command(cmd) == 0);
  auto jb = nlohmann::json::parse(slurp(tmp.path / "bundle.json"));
  ja.erase("wall_ms");
  jb.erase("wall_ms");
  CHECK(ja.dump() == jb.dump());
}

TEST_CASE("seed override changes results and is echoed", "[cli]") {
  TempDir a("seed_a"), b("seed_b");
  const fs::path cfg = kConfigs / "simulate_oracles.cfg";
  REQUIRE(run_command(quoted(kBin) + " run " + quoted(cfg) +
                      " --seed 1 --out " + quoted(a.path) + " > /dev/null") ==
          0);
  REQUIRE(run_command(quoted(kBin) + " run " + quoted(cfg) +
                      " --seed 2 --out " + quoted(b.path) + " > /dev/null") ==
          0);
  const auto ja = nlohmann::json::parse(slurp(a.path / "bundle.json"));
  const auto jb = nlohmann::json::parse(slurp(b.path / "bundle.json"));
  CHECK(ja.at("overrides").at("master_seed").get<std::uint64_t>() == 1);
  CHECK(ja.at("metrics").at("value_at_x").get<double>() !=
        jb.at("metrics").at("value_at_x").get<double>());
}

TEST_CASE("environment variable supplies the output directory", "[cli]") {
  TempDir tmp("env_out");
  const fs::path cfg = kConfigs / "simulate_linear.cfg";
  REQUIRE(run_command("SPDE_LAB_OUT=" + quoted(tmp.path) + " " + quoted(kBin) +
                      " run " + quoted(cfg) + " > /dev/null") == 0);
  CHECK(fs::exists(tmp.path / "bundle.json"));
}

TEST_CASE("failed checks exit with status one", "[cli]") {
  TempDir tmp("fail");
  const fs::path cfg = tmp.path / "impossible.cfg";
  {
    std::ofstream out(cfg);
    out << "[experiment]\nname = kernel-check\nx = 0.5\n"
        << "[model]\nn_modes = 32\n"
        << "[kernel]\ndecade_threshold = 1e-9\n";
  }
  CHECK(run_command(quoted(kBin) + " run " + quoted(cfg) + " > " +
                    quoted(tmp.path / "log.txt")) == 1);
  const std::string log = slurp(tmp.path / "log.txt");
  CHECK(log.find("result: FAIL") != std::string::npos);
  CHECK(log.find("[FAIL]") != std::string::npos);
}

TEST_CASE("bad usage and bad configs exit with status two", "[cli]") {
  TempDir tmp("usage");
  const std::string devnull = " > /dev/null 2>&1";
  CHECK(run_command(quoted(kBin) + devnull) == 2);           // no subcommand
  CHECK(run_command(quoted(kBin) + " run" + devnull) == 2);  // missing config
  CHECK(run_command(quoted(kBin) + " run no_such_file.cfg" + devnull) == 2);
  CHECK(run_command(quoted(kBin) + " --help" + devnull) == 0);

  const fs::path bad = tmp.path / "bad.cfg";
  {
    std::ofstream out(bad);
    out << "[experiment]\nname = simulate\nt = 0.1\n"
        << "[model]\nn_modes = 4\n[solver]\nn_steps = 10\n"
        << "[solver]\ntypo_key = 1\n";
  }
  const fs::path log = tmp.path / "bad_log.txt";
  CHECK(run_command(quoted(kBin) + " run " + quoted(bad) + " 2> " +
                    quoted(log) + " > /dev/null") == 2);
  CHECK(slurp(log).find("typo_key") != std::string::npos);
}

TEST_CASE("runtime divergence exits with status three", "[cli]") {
  TempDir tmp("blowup");
  const fs::path cfg = kConfigs / "simulate_blowup.cfg";
  CHECK(run_command(quoted(kBin) + " run " + quoted(cfg) + " --out " +
                    quoted(tmp.path) + " > " + quoted(tmp.path / "log.txt")) ==
        3);
}

TEST_CASE("strict reproducibility flag is accepted and echoed", "[cli]") {
  TempDir tmp("strict");
  const fs::path cfg = kConfigs / "simulate_linear.cfg";
  REQUIRE(run_command(quoted(kBin) + " run " + quoted(cfg) +
                      " --strict-reproducible --out " + quoted(tmp.path) +
                      " > /dev/null") == 0);
  const auto j = nlohmann::json::parse(slurp(tmp.path / "bundle.json"));
  CHECK(j.at("overrides").at("strict_reproducible").get<bool>());
}
