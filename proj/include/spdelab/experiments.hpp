#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "spdelab/config.hpp"
#include "spdelab/density.hpp"
#include "spdelab/io.hpp"
#include "spdelab/malliavin.hpp"
#include "spdelab/noise.hpp"
#include "spdelab/parallel.hpp"
#include "spdelab/solver.hpp"
#include "spdelab/spectral.hpp"

namespace spdelab {

// Raised when a run cannot produce a meaningful result because paths blew
// up (distinct from configuration problems, which raise ConfigError).
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunOverrides {
  std::optional<std::uint64_t> master_seed;
  std::optional<int> paths;
  std::optional<std::string> output_dir;
  std::optional<int> workers;
  bool strict_reproducible = false;
};

struct CheckResult {
  std::string name;
  double value = 0.0;
  std::string comparator;
  double threshold = 0.0;
  bool pass = false;
};

struct ResultBundle {
  std::string experiment;
  nlohmann::ordered_json config_echo = nlohmann::ordered_json::object();
  nlohmann::ordered_json overrides_echo = nlohmann::ordered_json::object();
  nlohmann::ordered_json metrics = nlohmann::ordered_json::object();
  std::vector<CheckResult> checks;
  std::vector<std::string> outputs;
  bool runtime_divergence = false;
  double wall_ms = 0.0;

  bool pass() const {
    for (const auto& c : checks)
      if (!c.pass) return false;
    return !runtime_divergence;
  }

  bool add_check(const std::string& name, double value,
                 const std::string& comparator, double threshold) {
    bool ok = false;
    if (comparator == "<=") ok = value <= threshold;
    else if (comparator == "<") ok = value < threshold;
    else if (comparator == ">=") ok = value >= threshold;
    else if (comparator == ">") ok = value > threshold;
    else if (comparator == "==") ok = value == threshold;
    else throw std::logic_error("unknown comparator " + comparator);
    checks.push_back({name, value, comparator, threshold, ok});
    return ok;
  }

  nlohmann::ordered_json to_json(bool include_wall = true) const {
    nlohmann::ordered_json j;
    j["schema"] = "spde-lab-result/1";
    j["experiment"] = experiment;
    j["pass"] = pass();
    j["runtime_divergence"] = runtime_divergence;
    j["config"] = config_echo;
    j["overrides"] = overrides_echo;
    auto arr = nlohmann::ordered_json::array();
    for (const auto& c : checks) {
      nlohmann::ordered_json e;
      e["name"] = c.name;
      e["value"] = c.value;
      e["comparator"] = c.comparator;
      e["threshold"] = c.threshold;
      e["pass"] = c.pass;
      arr.push_back(e);
    }
    j["checks"] = arr;
    j["metrics"] = metrics;
    j["outputs"] = outputs;
    if (include_wall) j["wall_ms"] = wall_ms;
    return j;
  }
};

struct ExperimentInfo {
  std::string name;
  std::string verifies;
  std::string required_keys;
};

inline const std::vector<ExperimentInfo>& list_experiments() {
  static const std::vector<ExperimentInfo> infos = {
      {"simulate",
       "single paths run stably; semigroup decay is exact on linear "
       "problems; stepper agrees with fixed-point and kernel-quadrature "
       "routes on shared noise",
       "experiment.t solver.n_steps model.n_modes"},
      {"gaussian-check",
       "with zero drift and constant diffusion the marginal is Gaussian "
       "with the closed-form window-norm variance",
       "experiment.t experiment.paths solver.n_steps model.n_modes"},
      {"malliavin-check",
       "the tangent recursion is the exact derivative of the scheme "
       "(finite-difference oracle) and reproduces the additive-case "
       "norm identity",
       "experiment.t solver.n_steps model.n_modes"},
      {"kernel-check",
       "window norms of the semigroup kernel dominate the linear lower "
       "bound and satisfy the vanishing-ratio criterion",
       "model.n_modes"},
      {"scaling",
       "expected squared sensitivity norms over trailing windows scale "
       "near-linearly in the window length",
       "experiment.t experiment.paths solver.n_steps model.n_modes"},
      {"density",
       "multiplicative-noise marginals carry no atoms and have strictly "
       "positive sensitivity norms; degenerate controls are flagged",
       "experiment.t experiment.paths solver.n_steps model.n_modes"},
      {"localize",
       "clamped drifts agree pathwise strictly before the stopping step, "
       "which is nondecreasing in the clamp level",
       "experiment.t solver.n_steps model.n_modes localize.levels"},
  };
  return infos;
}

inline std::string format_experiment_table() {
  size_t w_name = std::string("experiment").size();
  size_t w_keys = std::string("required keys").size();
  for (const auto& e : list_experiments()) {
    w_name = std::max(w_name, e.name.size());
    w_keys = std::max(w_keys, e.required_keys.size());
  }
  auto pad = [](std::ostringstream& os, const std::string& s, size_t w) {
    os << s;
    for (size_t i = s.size(); i < w + 2; ++i) os << ' ';
  };
  std::ostringstream os;
  pad(os, "experiment", w_name);
  pad(os, "required keys", w_keys);
  os << "verifies\n";
  pad(os, std::string(w_name, '-'), w_name);
  pad(os, std::string(w_keys, '-'), w_keys);
  os << "--------\n";
  for (const auto& e : list_experiments()) {
    pad(os, e.name, w_name);
    pad(os, e.required_keys, w_keys);
    os << e.verifies << '\n';
  }
  return os.str();
}

namespace detail {

struct CommonParams {
  SpectralModel model{1, 1, 1};
  Point x{0.5, 0.0};
  std::uint64_t master_seed = 0;
  int workers = 1;
  int paths = 1;
  bool strict_reproducible = false;
  std::optional<std::string> out_dir;
};

inline SpectralModel build_model(const Config& cfg) {
  const int dim = static_cast<int>(cfg.get_int_or("model.dimension", 1));
  const int n = static_cast<int>(cfg.get_int("model.n_modes"));
  const int m = static_cast<int>(cfg.get_int_or("model.smoothing_exponent", 1));
  try {
    return SpectralModel(dim, n, m);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what(), cfg.line_of("model.n_modes"));
  }
}

inline DriftSpec build_drift(const Config& cfg) {
  std::vector<double> coeffs = cfg.get_doubles_or("drift.coeffs", {});
  DriftSpec d = DriftSpec::polynomial(std::move(coeffs));
  if (cfg.get_bool_or("drift.odd_dissipative", false)) {
    try {
      d = DriftSpec::odd_dissipative(d.coefficients());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what(), cfg.line_of("drift.coeffs"), "drift.coeffs");
    }
  }
  const std::string clamp = cfg.get_string_or("drift.clamp", "default");
  if (clamp == "none") {
    d = d.without_clamp();
  } else if (clamp != "default") {
    try {
      d = d.with_clamp(std::stod(clamp));
    } catch (const std::exception&) {
      throw ConfigError("drift.clamp must be 'default', 'none' or a number",
                        cfg.line_of("drift.clamp"), "drift.clamp");
    }
  }
  return d;
}

inline DiffusionSpec build_sigma(const Config& cfg) {
  const std::string preset = cfg.get_string_or("sigma.preset", "constant");
  if (preset == "constant")
    return DiffusionSpec::constant(cfg.get_double_or("sigma.value", 1.0));
  if (preset == "identity") return DiffusionSpec::identity();
  if (preset == "affine_sine") return DiffusionSpec::affine_sine();
  throw ConfigError("unknown sigma.preset '" + preset +
                        "' (expected constant, identity or affine_sine)",
                    cfg.line_of("sigma.preset"), "sigma.preset");
}

inline InitialDatum build_u0(const Config& cfg, const SpectralModel& model) {
  const std::string preset = cfg.get_string_or("u0.preset", "zero");
  if (preset == "zero") return InitialDatum::zero();
  if (preset == "eigenmode") {
    const int mode = static_cast<int>(cfg.get_int_or("u0.mode", 1));
    if (mode < 1 || mode > model.total_modes())
      throw ConfigError("u0.mode out of range (1.." +
                            std::to_string(model.total_modes()) + ")",
                        cfg.line_of("u0.mode"), "u0.mode");
    return InitialDatum::eigenmode(mode - 1,
                                   cfg.get_double_or("u0.amplitude", 1.0));
  }
  throw ConfigError("unknown u0.preset '" + preset +
                        "' (expected zero or eigenmode)",
                    cfg.line_of("u0.preset"), "u0.preset");
}

inline Point build_point(const Config& cfg, const SpectralModel& model) {
  std::vector<double> xs = cfg.get_doubles_or(
      "experiment.x", model.dimension() == 1 ? std::vector<double>{0.5}
                                             : std::vector<double>{0.5, 0.5});
  if (static_cast<int>(xs.size()) != model.dimension())
    throw ConfigError("experiment.x needs " +
                          std::to_string(model.dimension()) + " coordinate(s)",
                      cfg.line_of("experiment.x"), "experiment.x");
  return model.dimension() == 1 ? point(xs[0]) : point(xs[0], xs[1]);
}

inline CommonParams build_common(const Config& cfg, const RunOverrides& ov,
                                 int default_paths) {
  CommonParams c;
  c.model = build_model(cfg);
  c.x = build_point(cfg, c.model);
  c.master_seed = ov.master_seed ? *ov.master_seed
                                 : cfg.get_seed_or("experiment.master_seed",
                                                   20260814ull);
  c.paths = ov.paths ? *ov.paths
                     : static_cast<int>(
                           cfg.get_int_or("experiment.paths", default_paths));
  if (c.paths < 1) throw ConfigError("experiment.paths must be >= 1");
  c.workers = ov.workers ? *ov.workers
                         : static_cast<int>(cfg.get_int_or(
                               "experiment.workers", default_workers()));
  if (c.workers < 1) throw ConfigError("experiment.workers must be >= 1");
  c.strict_reproducible =
      ov.strict_reproducible ||
      cfg.get_bool_or("experiment.strict_reproducible", false);
  if (ov.output_dir) c.out_dir = *ov.output_dir;
  else if (cfg.has("experiment.output_dir"))
    c.out_dir = cfg.get_string("experiment.output_dir");
  return c;
}

inline SolverConfig build_solver_config(const Config& cfg,
                                        const SpectralModel& model,
                                        const DriftSpec& drift) {
  SolverConfig sc;
  const double t = cfg.get_double("experiment.t");
  if (!(t > 0.0))
    throw ConfigError("experiment.t must be positive",
                      cfg.line_of("experiment.t"), "experiment.t");
  sc.n_steps = static_cast<int>(cfg.get_int("solver.n_steps"));
  if (sc.n_steps < 1)
    throw ConfigError("solver.n_steps must be >= 1",
                      cfg.line_of("solver.n_steps"), "solver.n_steps");
  sc.dt = t / sc.n_steps;
  sc.dealias_factor =
      static_cast<int>(cfg.get_int_or("solver.dealias_factor", 2));
  try {
    sc.validate(model, drift);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what(), cfg.line_of("solver.n_steps"));
  }
  return sc;
}

inline std::string join_path(const std::string& dir, const std::string& file) {
  return (std::filesystem::path(dir) / file).string();
}

inline void echo_config(const Config& cfg, const RunOverrides& ov,
                        ResultBundle& bundle) {
  for (const auto& key : cfg.keys_in_order())
    bundle.config_echo[key] = cfg.get_string(key);
  if (ov.master_seed) bundle.overrides_echo["master_seed"] = *ov.master_seed;
  if (ov.paths) bundle.overrides_echo["paths"] = *ov.paths;
  if (ov.output_dir) bundle.overrides_echo["output_dir"] = *ov.output_dir;
  if (ov.workers) bundle.overrides_echo["workers"] = *ov.workers;
  bundle.overrides_echo["strict_reproducible"] = ov.strict_reproducible;
}

inline std::vector<double> geometric_grid(double lo, double hi, int n) {
  std::vector<double> g;
  const double r = std::pow(hi / lo, 1.0 / (n - 1));
  double v = lo;
  for (int i = 0; i < n; ++i, v *= r) g.push_back(v);
  g.back() = hi;
  return g;
}

const std::vector<std::string> kCommonKeys = {
    "experiment.name",         "experiment.t",
    "experiment.x",            "experiment.paths",
    "experiment.master_seed",  "experiment.workers",
    "experiment.output_dir",   "experiment.strict_reproducible",
    "model.dimension",         "model.n_modes",
    "model.smoothing_exponent", "solver.n_steps",
    "solver.dealias_factor",   "drift.coeffs",
    "drift.clamp",             "drift.odd_dissipative",
    "sigma.preset",            "sigma.value",
    "u0.preset",               "u0.mode",
    "u0.amplitude"};

inline std::vector<std::string> allowed_keys(
    std::initializer_list<const char*> extra) {
  std::vector<std::string> keys = kCommonKeys;
  for (const char* e : extra) keys.emplace_back(e);
  return keys;
}

// ---------------------------------------------------------------- simulate

inline ResultBundle run_simulate(const Config& cfg, const RunOverrides& ov) {
  cfg.require_known_keys(allowed_keys(
      {"simulate.cross_check", "simulate.picard_tol",
       "simulate.picard_max_iter", "simulate.rf_grid_factor",
       "simulate.rf_trapezoid_tol", "simulate.export"}));
  ResultBundle bundle;
  bundle.experiment = "simulate";
  echo_config(cfg, ov, bundle);
  CommonParams c = build_common(cfg, ov, 1);
  const DriftSpec drift = build_drift(cfg);
  const DiffusionSpec sigma = build_sigma(cfg);
  const InitialDatum u0 = build_u0(cfg, c.model);
  const SolverConfig sc = build_solver_config(cfg, c.model, drift);
  const std::string cross = cfg.get_string_or("simulate.cross_check", "none");
  if (cross != "none" && cross != "oracles")
    throw ConfigError("simulate.cross_check must be 'none' or 'oracles'",
                      cfg.line_of("simulate.cross_check"));

  std::vector<Trajectory> trajs(static_cast<size_t>(c.paths));
  parallel_for(static_cast<size_t>(c.paths), c.workers, [&](size_t p) {
    const NoiseGrid noise = generate(c.model, sc.n_steps, sc.dt, c.master_seed,
                                     static_cast<std::uint32_t>(p));
    trajs[p] = solve(c.model, drift, sigma, u0, noise, sc);
  });

  int n_diverged = 0;
  int first_div_step = -1;
  for (const auto& tr : trajs)
    if (tr.diverged) {
      ++n_diverged;
      if (first_div_step < 0) first_div_step = tr.divergence_step;
    }
  bundle.add_check("no_divergence", n_diverged, "==", 0.0);
  if (n_diverged > 0) {
    bundle.runtime_divergence = true;
    bundle.metrics["first_divergence_step"] = first_div_step;
  }
  bundle.metrics["n_paths"] = c.paths;
  bundle.metrics["n_diverged"] = n_diverged;

  const Trajectory& t0 = trajs[0];
  if (!t0.diverged) {
    Collocation grid(c.model, sc.dealias_factor * c.model.modes_per_axis());
    const Eigen::VectorXd final_vals =
        grid.synthesis() * t0.coeffs.row(sc.n_steps).transpose();
    bundle.metrics["final_sup_norm"] = final_vals.cwiseAbs().maxCoeff();
    bundle.metrics["value_at_x"] = t0.eval(c.model, sc.n_steps, c.x);
  }

  // pure-decay exactness whenever the configured problem is linear and
  // deterministic
  if (drift.is_zero() && sigma.is_constant() && sigma.constant_value() == 0.0 &&
      !t0.diverged) {
    double max_err = 0.0;
    for (int j = 0; j <= sc.n_steps; ++j)
      for (int k = 0; k < c.model.total_modes(); ++k) {
        const double exact =
            std::exp(-c.model.lambda(k) * sc.dt * j) * t0.coeffs(0, k);
        const double scale = std::max(std::abs(t0.coeffs(0, k)), 1.0);
        max_err = std::max(max_err,
                           std::abs(t0.coeffs(j, k) - exact) / scale);
      }
    bundle.add_check("linear_decay_rel_error", max_err, "<=", 1e-12);
  }

  if (cross == "oracles" && !t0.diverged) {
    const NoiseGrid noise0 = generate(c.model, sc.n_steps, sc.dt,
                                      c.master_seed, 0);
    // fixed-point route
    const double ptol = cfg.get_double_or("simulate.picard_tol", 1e-10);
    const int pmax =
        static_cast<int>(cfg.get_int_or("simulate.picard_max_iter", 200));
    const PicardResult pic =
        solve_picard(c.model, drift, sigma, u0, noise0, sc, ptol, pmax);
    Collocation grid(c.model, sc.dealias_factor * c.model.modes_per_axis());
    double pic_sup = 0.0;
    for (int j = 0; j <= sc.n_steps; ++j) {
      const Eigen::VectorXd dv =
          grid.synthesis() *
          (pic.trajectory.coeffs.row(j) - t0.coeffs.row(j)).transpose();
      pic_sup = std::max(pic_sup, dv.cwiseAbs().maxCoeff());
    }
    bundle.add_check("picard_sup_distance", pic_sup, "<=", 1e-8);
    bundle.metrics["picard_iterations"] = pic.iterations;

    // kernel-quadrature route, eigen-projection grid
    const RandomFieldResult rf_eig = solve_random_field(
        c.model, drift, sigma, u0, noise0, sc,
        sc.dealias_factor * c.model.modes_per_axis(),
        RfQuadrature::kEigenProjection);
    double scale = 0.0, dev = 0.0;
    for (int j = 0; j <= sc.n_steps; ++j) {
      const Eigen::VectorXd sv =
          grid.synthesis() * t0.coeffs.row(j).transpose();
      scale = std::max(scale, sv.cwiseAbs().maxCoeff());
      dev = std::max(dev,
                     (sv - rf_eig.values.row(j).transpose()).cwiseAbs()
                         .maxCoeff());
    }
    bundle.add_check("random_field_eigen_rel_diff", dev / scale, "<=", 1e-10);

    // kernel-quadrature route, plain quadrature on a denser grid
    const int rf_factor =
        static_cast<int>(cfg.get_int_or("simulate.rf_grid_factor", 8));
    const RandomFieldResult rf_q = solve_random_field(
        c.model, drift, sigma, u0, noise0, sc,
        rf_factor * c.model.modes_per_axis(), RfQuadrature::kKernelMatrix);
    Collocation dense(c.model, rf_factor * c.model.modes_per_axis());
    double scale_q = 0.0, dev_q = 0.0;
    for (int j = 0; j <= sc.n_steps; ++j) {
      const Eigen::VectorXd sv =
          dense.synthesis() * t0.coeffs.row(j).transpose();
      scale_q = std::max(scale_q, sv.cwiseAbs().maxCoeff());
      dev_q = std::max(
          dev_q,
          (sv - rf_q.values.row(j).transpose()).cwiseAbs().maxCoeff());
    }
    bundle.add_check(
        "random_field_quadrature_rel_diff", dev_q / scale_q, "<=",
        cfg.get_double_or("simulate.rf_trapezoid_tol", 1e-4));
  }

  if (c.out_dir && cfg.get_string_or("simulate.export", "csv") == "csv") {
    write_trajectory_csv(join_path(*c.out_dir, "trajectory.csv"), c.model, t0);
    bundle.outputs.push_back("trajectory.csv");
    if (!t0.diverged) {
      write_field_csv(join_path(*c.out_dir, "field_final.csv"), c.model, t0,
                      sc.n_steps);
      bundle.outputs.push_back("field_final.csv");
    }
    const NoiseGrid noise0 =
        generate(c.model, sc.n_steps, sc.dt, c.master_seed, 0);
    write_noise_grid(join_path(*c.out_dir, "noise_path0.bin"), noise0);
    bundle.outputs.push_back("noise_path0.bin");
  }
  return bundle;
}

// ------------------------------------------------------------ gaussian-check

inline ResultBundle run_gaussian_check(const Config& cfg,
                                       const RunOverrides& ov) {
  cfg.require_known_keys(allowed_keys({"gaussian.variance_tol",
                                       "gaussian.mean_se_tol"}));
  ResultBundle bundle;
  bundle.experiment = "gaussian-check";
  echo_config(cfg, ov, bundle);
  CommonParams c = build_common(cfg, ov, 20000);
  const DriftSpec drift = build_drift(cfg);
  const DiffusionSpec sigma = build_sigma(cfg);
  if (!drift.is_zero() || !sigma.is_constant() ||
      sigma.constant_value() == 0.0)
    throw ConfigError(
        "gaussian-check requires zero drift and a nonzero constant sigma");
  const InitialDatum u0 = build_u0(cfg, c.model);
  const SolverConfig sc = build_solver_config(cfg, c.model, drift);
  if (c.paths < 100)
    throw ConfigError("gaussian-check needs at least 100 paths");

  const SampleSet samples = collect(c.model, drift, sigma, u0, sc, c.x,
                                    c.paths, c.master_seed, false, c.workers);
  const double t = sc.n_steps * sc.dt;
  const double cval = sigma.constant_value();
  const double var_ref = cval * cval * c.model.kernel_norm_sq(c.x, t);

  Collocation grid(c.model, sc.dealias_factor * c.model.modes_per_axis());
  const Eigen::VectorXd u0c = u0.resolve(c.model, grid);
  double mean_ref = 0.0;
  for (int k = 0; k < c.model.total_modes(); ++k)
    mean_ref += std::exp(-c.model.lambda(k) * t) * u0c(k) *
                c.model.eval_mode(k, c.x);

  const double mean = sample_mean(samples.values);
  const double var = sample_variance(samples.values);
  const double se = std::sqrt(var / samples.values.size());
  const KSResult ks = compare_to_reference(
      samples.values, ReferenceDistribution::normal(mean_ref, var_ref));

  bundle.metrics["n_samples"] = samples.values.size();
  bundle.metrics["n_diverged"] = samples.n_diverged;
  bundle.metrics["sample_mean"] = mean;
  bundle.metrics["mean_reference"] = mean_ref;
  bundle.metrics["sample_variance"] = var;
  bundle.metrics["variance_reference"] = var_ref;
  bundle.metrics["ks_statistic"] = ks.statistic;

  bundle.add_check("variance_rel_deviation", std::abs(var / var_ref - 1.0),
                   "<=", cfg.get_double_or("gaussian.variance_tol", 0.03));
  bundle.add_check("ks_statistic", ks.statistic, "<", ks.threshold);
  bundle.add_check("mean_deviation_in_se",
                   std::abs(mean - mean_ref) / std::max(se, 1e-300), "<=",
                   cfg.get_double_or("gaussian.mean_se_tol", 5.0));

  if (c.out_dir) {
    write_samples_csv(join_path(*c.out_dir, "samples.csv"), samples);
    bundle.outputs.push_back("samples.csv");
    const DensityCurve curve = kde(samples.values);
    write_kde_csv(join_path(*c.out_dir, "kde.csv"), curve);
    bundle.outputs.push_back("kde.csv");
  }
  return bundle;
}

// ----------------------------------------------------------- malliavin-check

inline ResultBundle run_malliavin_check(const Config& cfg,
                                        const RunOverrides& ov) {
  cfg.require_known_keys(allowed_keys(
      {"malliavin.additive_n_modes", "malliavin.additive_n_steps",
       "malliavin.additive_t", "malliavin.additive_tol", "malliavin.fd_probes",
       "malliavin.fd_h", "malliavin.fd_tol", "malliavin.fd_damping_floor"}));
  ResultBundle bundle;
  bundle.experiment = "malliavin-check";
  echo_config(cfg, ov, bundle);
  CommonParams c = build_common(cfg, ov, 1);

  // Part 1: additive identity  ||D u(t,x)||^2 == window norm series
  {
    const int n = static_cast<int>(
        cfg.get_int_or("malliavin.additive_n_modes", 64));
    const int m = static_cast<int>(
        cfg.get_int_or("malliavin.additive_n_steps", 512));
    const double t = cfg.get_double_or("malliavin.additive_t", 0.5);
    const SpectralModel model(1, n, c.model.smoothing_exponent());
    const Point x = point(c.x[0]);
    const DriftSpec drift = DriftSpec::zero();
    const DiffusionSpec sigma = DiffusionSpec::constant(1.0);
    SolverConfig sc;
    sc.dt = t / m;
    sc.n_steps = m;
    const NoiseGrid noise = generate(model, m, sc.dt, c.master_seed, 0);
    const Trajectory traj =
        solve(model, drift, sigma, InitialDatum::zero(), noise, sc);
    const TangentField tf =
        propagate_tangent(model, drift, sigma, traj, noise, sc);
    const double hn = h_norm_sq_full(model, tf, x);
    const double ref = model.kernel_norm_sq(x, t);
    bundle.metrics["additive_h_norm_sq"] = hn;
    bundle.metrics["additive_series"] = ref;
    bundle.add_check("additive_identity_rel_dev", std::abs(hn / ref - 1.0),
                     "<=", cfg.get_double_or("malliavin.additive_tol", 0.02));

    if (c.out_dir) {
      const HNormReport rep = h_norm_report(
          model, tf, x, {{0.0, t / 2.0}, {t / 2.0, t}, {0.0, t}});
      write_json(join_path(*c.out_dir, "hnorm_report.json"),
                 h_norm_report_json(model, rep));
      bundle.outputs.push_back("hnorm_report.json");
    }
  }

  // Part 2: finite-difference oracle on the configured multiplicative case
  {
    const DriftSpec drift = build_drift(cfg);
    const DiffusionSpec sigma = build_sigma(cfg);
    const InitialDatum u0 = build_u0(cfg, c.model);
    const SolverConfig sc = build_solver_config(cfg, c.model, drift);
    const int m = sc.n_steps;
    const int nmod = c.model.total_modes();
    const int probes = static_cast<int>(
        cfg.get_int_or("malliavin.fd_probes", 100));
    const double h = cfg.get_double_or("malliavin.fd_h", 1e-5);
    const double floor = cfg.get_double_or("malliavin.fd_damping_floor", 1e-4);

    const NoiseGrid noise = generate(c.model, m, sc.dt, c.master_seed, 0);
    const Trajectory traj = solve(c.model, drift, sigma, u0, noise, sc);
    if (traj.diverged)
      throw DivergenceError("malliavin-check: base path diverged");
    const TangentField tf =
        propagate_tangent(c.model, drift, sigma, traj, noise, sc);

    // candidate increments whose effect is large enough for central
    // differences to resolve at relative accuracy fd_tol
    std::vector<std::pair<int, int>> candidates;
    for (int i = 0; i < m; ++i)
      for (int l = 0; l < nmod; ++l)
        if (column_damping_factor(c.model, sc.dt, m, i, l) >= floor)
          candidates.emplace_back(i, l);
    if (static_cast<int>(candidates.size()) < probes)
      throw ConfigError(
          "malliavin-check: fewer informative increment indices than "
          "malliavin.fd_probes; lower the damping floor or shorten dt");
    // deterministic shuffle, then take the first `probes`
    const std::uint64_t key = rng::stream_key(c.master_seed, 0xFD);
    for (size_t i = candidates.size() - 1; i > 0; --i) {
      const size_t j = static_cast<size_t>(rng::word_at(key, i) % (i + 1));
      std::swap(candidates[i], candidates[j]);
    }
    candidates.resize(static_cast<size_t>(probes));

    double max_rel = 0.0;
    for (const auto& [i, l] : candidates) {
      const Eigen::VectorXd fd =
          fd_sensitivity(c.model, drift, sigma, u0, noise, sc, i, l, h);
      const Eigen::VectorXd tan = tf.column(i, l);
      max_rel = std::max(
          max_rel, (fd - tan).norm() / std::max(fd.norm(), 1e-300));
    }
    bundle.metrics["fd_probes"] = probes;
    bundle.metrics["fd_max_rel_error"] = max_rel;
    bundle.add_check("fd_max_rel_error", max_rel, "<=",
                     cfg.get_double_or("malliavin.fd_tol", 1e-5));
  }
  return bundle;
}

// -------------------------------------------------------------- kernel-check

inline ResultBundle run_kernel_check(const Config& cfg,
                                     const RunOverrides& ov) {
  cfg.require_known_keys(allowed_keys(
      {"kernel.beta", "kernel.bound_delta_min", "kernel.bound_delta_max",
       "kernel.bound_points", "kernel.limit_delta_min",
       "kernel.limit_delta_max", "kernel.limit_points",
       "kernel.decade_threshold"}));
  ResultBundle bundle;
  bundle.experiment = "kernel-check";
  echo_config(cfg, ov, bundle);
  CommonParams c = build_common(cfg, ov, 1);
  const double beta = cfg.get_double_or("kernel.beta", 0.6);

  const KernelNormProfile bound = kernel_norm_profile(
      c.model, c.x,
      geometric_grid(cfg.get_double_or("kernel.bound_delta_min", 1e-5),
                     cfg.get_double_or("kernel.bound_delta_max", 1e-1),
                     static_cast<int>(cfg.get_int_or("kernel.bound_points", 17))));

  double min_slack = std::numeric_limits<double>::infinity();
  double max_ratio_half = 0.0;
  bool increasing = true;
  for (size_t i = 0; i < bound.deltas.size(); ++i) {
    min_slack = std::min(min_slack,
                         bound.values[i] - bound.c_x * bound.deltas[i]);
    max_ratio_half =
        std::max(max_ratio_half,
                 std::sqrt(bound.deltas[i]) / std::sqrt(bound.values[i]));
    if (i > 0 && bound.values[i] <= bound.values[i - 1]) increasing = false;
  }
  bundle.metrics["c_x"] = bound.c_x;
  bundle.metrics["lower_bound_min_slack"] = min_slack;
  bundle.add_check("lower_bound_min_slack", min_slack, ">=", -1e-12);
  bundle.add_check("sqrt_ratio_bound", max_ratio_half, "<=",
                   (1.0 + 1e-10) / std::sqrt(bound.c_x));
  bundle.add_check("window_norm_increasing", increasing ? 1.0 : 0.0, "==", 1.0);

  ConditionCheckOptions copts;
  copts.decade_decay_threshold =
      cfg.get_double_or("kernel.decade_threshold", 0.1);
  const KernelNormProfile wide = kernel_norm_profile(
      c.model, c.x,
      geometric_grid(cfg.get_double_or("kernel.limit_delta_min", 1e-12),
                     cfg.get_double_or("kernel.limit_delta_max", 1e-1),
                     static_cast<int>(cfg.get_int_or("kernel.limit_points", 45))));
  const ConditionCheckResult cc = check_condition_88(wide, beta, copts);
  bundle.metrics["limit_small_decade_mean"] = cc.small_decade_mean;
  bundle.metrics["limit_large_decade_mean"] = cc.large_decade_mean;
  bundle.add_check("vanishing_ratio_pass", cc.pass ? 1.0 : 0.0, "==", 1.0);

  if (c.out_dir) {
    write_profile_csv(join_path(*c.out_dir, "profile_bound.csv"), bound, 0.5);
    write_profile_csv(join_path(*c.out_dir, "profile_limit.csv"), wide, beta);
    bundle.outputs.push_back("profile_bound.csv");
    bundle.outputs.push_back("profile_limit.csv");
  }
  return bundle;
}

// ------------------------------------------------------------------- scaling

inline ResultBundle run_scaling(const Config& cfg, const RunOverrides& ov) {
  cfg.require_known_keys(allowed_keys(
      {"scaling.delta_min", "scaling.delta_max", "scaling.n_deltas",
       "scaling.cases", "scaling.additive_band", "scaling.multiplicative_min"}));
  ResultBundle bundle;
  bundle.experiment = "scaling";
  echo_config(cfg, ov, bundle);
  CommonParams c = build_common(cfg, ov, 500);
  const DriftSpec drift_m = build_drift(cfg);
  const DiffusionSpec sigma_m = build_sigma(cfg);
  const InitialDatum u0 = build_u0(cfg, c.model);
  const SolverConfig sc = build_solver_config(cfg, c.model, drift_m);
  const double t = sc.n_steps * sc.dt;

  std::vector<double> deltas = geometric_grid(
      cfg.get_double_or("scaling.delta_min", 1e-4),
      cfg.get_double_or("scaling.delta_max", 1e-2),
      static_cast<int>(cfg.get_int_or("scaling.n_deltas", 9)));
  // snap to whole numbers of steps so each window is a union of blocks
  for (double& d : deltas)
    d = std::max(1.0, std::round(d / sc.dt)) * sc.dt;
  deltas.erase(std::unique(deltas.begin(), deltas.end()), deltas.end());
  for (double d : deltas)
    if (d > t + 1e-9 * sc.dt)
      throw ConfigError("scaling deltas exceed the horizon t");

  const std::string cases = cfg.get_string_or("scaling.cases",
                                              "additive multiplicative");
  const bool run_add = cases.find("additive") != std::string::npos;
  const bool run_mul = cases.find("multiplicative") != std::string::npos;
  if (!run_add && !run_mul)
    throw ConfigError("scaling.cases must mention additive or multiplicative");

  const std::vector<double> band =
      cfg.get_doubles_or("scaling.additive_band", {0.9, 1.1});
  if (band.size() != 2)
    throw ConfigError("scaling.additive_band needs two numbers");

  if (run_add) {
    const ScalingResult r = windowed_scaling(
        c.model, DriftSpec::zero(), DiffusionSpec::constant(1.0),
        InitialDatum::zero(), sc, c.x, deltas, c.paths, c.master_seed,
        c.workers);
    bundle.metrics["slope_additive"] = r.slope;
    bundle.metrics["additive_diverged"] = r.n_diverged;
    bundle.add_check("slope_additive_min", r.slope, ">=", band[0]);
    bundle.add_check("slope_additive_max", r.slope, "<=", band[1]);
    if (c.out_dir) {
      write_scaling_csv(join_path(*c.out_dir, "scaling_additive.csv"), r);
      bundle.outputs.push_back("scaling_additive.csv");
    }
  }
  if (run_mul) {
    const ScalingResult r =
        windowed_scaling(c.model, drift_m, sigma_m, u0, sc, c.x, deltas,
                         c.paths, c.master_seed + 1, c.workers);
    bundle.metrics["slope_multiplicative"] = r.slope;
    bundle.metrics["multiplicative_diverged"] = r.n_diverged;
    bundle.add_check("slope_multiplicative_min", r.slope, ">=",
                     cfg.get_double_or("scaling.multiplicative_min", 0.8));
    if (c.out_dir) {
      write_scaling_csv(join_path(*c.out_dir, "scaling_multiplicative.csv"),
                        r);
      bundle.outputs.push_back("scaling_multiplicative.csv");
    }
  }
  return bundle;
}

// ------------------------------------------------------------------- density

inline ResultBundle run_density(const Config& cfg, const RunOverrides& ov) {
  cfg.require_known_keys(allowed_keys(
      {"density.atom_paths", "density.control_paths", "density.v0_tol"}));
  ResultBundle bundle;
  bundle.experiment = "density";
  echo_config(cfg, ov, bundle);
  CommonParams c = build_common(cfg, ov, 1000);
  const DriftSpec drift = build_drift(cfg);
  const DiffusionSpec sigma = build_sigma(cfg);
  const InitialDatum u0 = build_u0(cfg, c.model);
  const SolverConfig sc = build_solver_config(cfg, c.model, drift);
  if (!(sigma.lower_bound() > 0.0))
    throw ConfigError(
        "density requires a sigma preset with a positive lower bound");
  const double t = sc.n_steps * sc.dt;

  // paired samples with sensitivity norms
  const SampleSet paired = collect(c.model, drift, sigma, u0, sc, c.x,
                                   c.paths, c.master_seed, true, c.workers);
  const NondegeneracyCurve curve = nondegeneracy_curve(paired.norms_sq);
  bundle.metrics["min_norm"] = curve.min_norm;
  bundle.metrics["n_norm_samples"] = paired.values.size();
  bundle.metrics["n_norm_diverged"] = paired.n_diverged;
  bundle.add_check("nondegeneracy_pass", curve.pass ? 1.0 : 0.0, "==", 1.0);

  // larger unpaired sample for the atom scan and the density curve
  const int atom_paths =
      static_cast<int>(cfg.get_int_or("density.atom_paths", 10000));
  const SampleSet big = collect(c.model, drift, sigma, u0, sc, c.x, atom_paths,
                                c.master_seed + 1, false, c.workers);
  const AtomTestResult atom = atom_test(big.values);
  bundle.metrics["atom_max_multiplicity"] = atom.max_multiplicity;
  bundle.metrics["atom_max_cdf_jump"] = atom.max_cdf_jump;
  bundle.add_check("atom_free", atom.pass ? 1.0 : 0.0, "==", 1.0);

  const DensityCurve dens = kde(big.values);
  bundle.metrics["kde_bandwidth"] = dens.bandwidth;
  bundle.metrics["kde_mass"] = dens.mass;
  bundle.add_check("kde_mass_dev", std::abs(dens.mass - 1.0), "<=", 1e-3);

  // leading-term lower bound on path 0
  {
    const NoiseGrid noise =
        generate(c.model, sc.n_steps, sc.dt, c.master_seed, 0);
    const Trajectory traj = solve(c.model, drift, sigma, u0, noise, sc);
    if (!traj.diverged) {
      const double v0 = v0_norm_sq(c.model, sigma, traj, c.x, 0.0, t,
                                   sc.dealias_factor);
      const double cref = sigma.lower_bound() * sigma.lower_bound() *
                          c.model.kernel_norm_sq(c.x, t);
      bundle.metrics["v0_norm_sq"] = v0;
      bundle.metrics["v0_reference"] = cref;
      bundle.add_check("v0_lower_bound_ratio", v0 / cref, ">=",
                       1.0 - cfg.get_double_or("density.v0_tol", 0.05));
    }
  }

  // degenerate control: same drift, sigma == 0 must be flagged
  {
    const int n_ctl =
        static_cast<int>(cfg.get_int_or("density.control_paths", 200));
    const SampleSet ctl =
        collect(c.model, drift, DiffusionSpec::constant(0.0), u0, sc, c.x,
                n_ctl, c.master_seed + 2, true, c.workers);
    const NondegeneracyCurve cc = nondegeneracy_curve(ctl.norms_sq);
    bool all_one = true;
    for (double p : cc.probs) all_one = all_one && p == 1.0;
    bundle.metrics["control_min_norm"] = cc.min_norm;
    bundle.add_check("control_degeneracy_detected",
                     (!cc.pass && all_one) ? 1.0 : 0.0, "==", 1.0);
    if (c.out_dir) {
      write_nondegeneracy_csv(
          join_path(*c.out_dir, "control_nondegeneracy.csv"), cc);
      bundle.outputs.push_back("control_nondegeneracy.csv");
    }
  }

  if (c.out_dir) {
    write_samples_csv(join_path(*c.out_dir, "samples.csv"), big);
    write_samples_csv(join_path(*c.out_dir, "norm_samples.csv"), paired);
    write_kde_csv(join_path(*c.out_dir, "kde.csv"), dens);
    write_nondegeneracy_csv(join_path(*c.out_dir, "nondegeneracy.csv"), curve);
    bundle.outputs.insert(bundle.outputs.end(),
                          {"samples.csv", "norm_samples.csv", "kde.csv",
                           "nondegeneracy.csv"});
  }
  return bundle;
}

// ------------------------------------------------------------------ localize

inline ResultBundle run_localize(const Config& cfg, const RunOverrides& ov) {
  cfg.require_known_keys(allowed_keys({"localize.levels"}));
  ResultBundle bundle;
  bundle.experiment = "localize";
  echo_config(cfg, ov, bundle);
  CommonParams c = build_common(cfg, ov, 1);
  if (cfg.get_string_or("drift.clamp", "default") != "default")
    throw ConfigError(
        "localize sets drift clamps itself; remove drift.clamp");
  const DriftSpec base_drift = build_drift(cfg);
  if (base_drift.is_zero())
    throw ConfigError("localize needs a nonzero drift polynomial");
  const DiffusionSpec sigma = build_sigma(cfg);
  const InitialDatum u0 = build_u0(cfg, c.model);
  const SolverConfig sc = build_solver_config(cfg, c.model, base_drift);

  std::vector<double> levels = cfg.get_doubles("localize.levels");
  if (levels.size() < 2)
    throw ConfigError("localize.levels needs at least two ascending levels",
                      cfg.line_of("localize.levels"));
  for (size_t i = 1; i < levels.size(); ++i)
    if (!(levels[i] > levels[i - 1]))
      throw ConfigError("localize.levels must be strictly ascending",
                        cfg.line_of("localize.levels"));

  const NoiseGrid noise =
      generate(c.model, sc.n_steps, sc.dt, c.master_seed, 0);
  std::vector<Trajectory> trajs;
  std::vector<StoppedPath> stops;
  for (double level : levels) {
    const DriftSpec d = base_drift.with_clamp(level);
    trajs.push_back(solve(c.model, d, sigma, u0, noise, sc));
    if (trajs.back().diverged) {
      bundle.runtime_divergence = true;
      bundle.metrics["first_divergence_step"] = trajs.back().divergence_step;
      bundle.add_check("no_divergence", 1.0, "==", 0.0);
      return bundle;
    }
    stops.push_back(stopping_step(c.model, trajs.back(), level,
                                  sc.dealias_factor));
  }

  auto taus = nlohmann::ordered_json::array();
  for (size_t i = 0; i < levels.size(); ++i) {
    nlohmann::ordered_json e;
    e["level"] = levels[i];
    e["tau_step"] = stops[i].tau_step;
    e["crossed"] = stops[i].crossed;
    taus.push_back(e);
  }
  bundle.metrics["stopping"] = taus;

  const int tau0 = stops.front().tau_step;
  bundle.add_check("tau_first_level_interior",
                   (tau0 > 0 && tau0 < sc.n_steps) ? 1.0 : 0.0, "==", 1.0);

  bool monotone = true;
  for (size_t i = 1; i < stops.size(); ++i)
    if (stops[i].tau_step < stops[i - 1].tau_step) monotone = false;
  bundle.add_check("tau_nondecreasing", monotone ? 1.0 : 0.0, "==", 1.0);

  // smallest vs largest level: identical machine states strictly before tau
  bool bitwise = true;
  const Trajectory& lo = trajs.front();
  const Trajectory& hi = trajs.back();
  for (int j = 0; j < tau0 && bitwise; ++j)
    for (int k = 0; k < lo.n_modes(); ++k)
      if (lo.coeffs(j, k) != hi.coeffs(j, k)) {
        bitwise = false;
        break;
      }
  bundle.add_check("bitwise_match_before_tau", bitwise ? 1.0 : 0.0, "==", 1.0);

  if (c.out_dir) {
    auto f = open_out(join_path(*c.out_dir, "sup_norms.csv"));
    f << "step,time";
    for (double level : levels) f << ",sup_level_" << level;
    f << '\n';
    for (int j = 0; j <= sc.n_steps; ++j) {
      f << j << ',' << j * sc.dt;
      for (const auto& s : stops)
        f << ','
          << (j < static_cast<int>(s.sup_norms.size())
                  ? std::to_string(s.sup_norms[static_cast<size_t>(j)])
                  : std::string());
      f << '\n';
    }
    bundle.outputs.push_back("sup_norms.csv");
  }
  return bundle;
}

}  // namespace detail

inline ResultBundle run_experiment(const Config& cfg,
                                   const RunOverrides& ov = {}) {
  const auto start = std::chrono::steady_clock::now();
  const std::string name = cfg.get_string("experiment.name");
  ResultBundle bundle;
  if (name == "simulate") bundle = detail::run_simulate(cfg, ov);
  else if (name == "gaussian-check") bundle = detail::run_gaussian_check(cfg, ov);
  else if (name == "malliavin-check") bundle = detail::run_malliavin_check(cfg, ov);
  else if (name == "kernel-check") bundle = detail::run_kernel_check(cfg, ov);
  else if (name == "scaling") bundle = detail::run_scaling(cfg, ov);
  else if (name == "density") bundle = detail::run_density(cfg, ov);
  else if (name == "localize") bundle = detail::run_localize(cfg, ov);
  else
    throw ConfigError("unknown experiment '" + name + "'",
                      cfg.line_of("experiment.name"), "experiment.name");
  bundle.wall_ms = std::chrono::duration<double, std::milli>(
                       std::chrono::steady_clock::now() - start)
                       .count();
  const RunOverrides& o = ov;
  std::optional<std::string> out_dir;
  if (o.output_dir) out_dir = *o.output_dir;
  else if (cfg.has("experiment.output_dir"))
    out_dir = cfg.get_string("experiment.output_dir");
  if (out_dir) {
    write_json(detail::join_path(*out_dir, "bundle.json"),
               bundle.to_json(true));
    bundle.outputs.push_back("bundle.json");
  }
  return bundle;
}

}  // namespace spdelab
