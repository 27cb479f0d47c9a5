#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "spdelab/coefficients.hpp"
#include "spdelab/collocation.hpp"
#include "spdelab/noise.hpp"
#include "spdelab/spectral.hpp"

namespace spdelab {

// Time discretization of one path: exponential Euler in the eigenbasis,
//   u_{j+1,k} = e^{-lambda_k dt} ( u_{j,k} + dt [f(u_j)]_k
//                                        + [sigma(u_j) B dW_j]_k ),
// nonlinear terms evaluated pseudo-spectrally on a dealiased grid.
struct SolverConfig {
  double dt = 0.0;
  int n_steps = 0;
  int dealias_factor = 2;      // interior grid points per axis = factor * n_modes
  double clamp_default = 1e6;  // applied to polynomial drifts without one

  void validate(const SpectralModel& model, const DriftSpec& drift) const {
    if (!(dt > 0.0))
      throw std::invalid_argument("SolverConfig: dt must be positive");
    if (n_steps < 1)
      throw std::invalid_argument("SolverConfig: n_steps must be >= 1");
    if (dealias_factor < 1)
      throw std::invalid_argument("SolverConfig: dealias_factor must be >= 1");
    const int n = model.modes_per_axis();
    const int p = dealias_factor * n + 1;  // subintervals per axis
    const int deg = drift.degree();
    if (deg >= 2 && 2 * p <= (deg + 1) * n)
      throw std::invalid_argument(
          "SolverConfig: dealias_factor too small for drift degree " +
          std::to_string(deg) + "; need dealias_factor > (degree - 1) / 2");
  }
};

struct Trajectory {
  Eigen::MatrixXd coeffs;  // (n_steps + 1) x n_modes, row j = state at t_j
  double dt = 0.0;
  std::uint64_t master_seed = 0;
  std::uint32_t path_index = 0;
  bool diverged = false;
  int divergence_step = -1;  // first step index with a non-finite state

  int n_steps() const { return static_cast<int>(coeffs.rows()) - 1; }
  int n_modes() const { return static_cast<int>(coeffs.cols()); }
  double time_at(int step) const { return dt * step; }

  double eval(const SpectralModel& model, int step, const Point& x) const {
    double s = 0.0;
    for (int k = 0; k < n_modes(); ++k)
      s += coeffs(step, k) * model.eval_mode(k, x);
    return s;
  }
};

// Initial state, either given directly in the eigenbasis or as a function
// projected onto it with the collocation quadrature.
class InitialDatum {
 public:
  static InitialDatum zero() { return InitialDatum(); }

  static InitialDatum coefficients(std::vector<double> c) {
    InitialDatum d;
    d.coeffs_ = std::move(c);
    return d;
  }

  // amplitude on the canonical mode with 0-based index `mode`.
  static InitialDatum eigenmode(int mode, double amplitude) {
    InitialDatum d;
    d.mode_ = mode;
    d.amplitude_ = amplitude;
    return d;
  }

  static InitialDatum from_function(std::function<double(Point)> f) {
    InitialDatum d;
    d.fn_ = std::move(f);
    return d;
  }

  Eigen::VectorXd resolve(const SpectralModel& model,
                          const Collocation& grid) const {
    const int n = model.total_modes();
    Eigen::VectorXd u = Eigen::VectorXd::Zero(n);
    if (fn_) {
      Eigen::VectorXd vals(grid.n_points());
      for (int p = 0; p < grid.n_points(); ++p)
        vals(p) = fn_(grid.points()[static_cast<size_t>(p)]);
      u = grid.analyze(vals);
    } else if (!coeffs_.empty()) {
      if (static_cast<int>(coeffs_.size()) != n)
        throw std::invalid_argument(
            "InitialDatum: coefficient count does not match model modes");
      for (int k = 0; k < n; ++k) u(k) = coeffs_[static_cast<size_t>(k)];
    } else if (mode_ >= 0) {
      if (mode_ >= n)
        throw std::invalid_argument("InitialDatum: mode index out of range");
      u(mode_) = amplitude_;
    }
    return u;
  }

 private:
  std::vector<double> coeffs_;
  std::function<double(Point)> fn_;
  int mode_ = -1;
  double amplitude_ = 0.0;
};

// One-step engine with preallocated workspace.  Kept separate from solve()
// so the tangent propagation can reuse the same grid, decay factors and
// structural shortcuts (zero drift / constant sigma) and thereby realize
// the exact derivative of the map implemented here.
class Stepper {
 public:
  Stepper(const SpectralModel& model, const DriftSpec& drift,
          const DiffusionSpec& diffusion, const SolverConfig& config)
      : model_(model),
        drift_(drift),
        diffusion_(diffusion),
        config_(config),
        grid_(model, config.dealias_factor * model.modes_per_axis()) {
    config.validate(model, drift);
    const int n = model.total_modes();
    decay_.resize(n);
    noise_w_.resize(n);
    for (int k = 0; k < n; ++k) {
      decay_(k) = std::exp(-model.lambda(k) * config.dt);
      noise_w_(k) = model.noise_weight(k);
    }
    clamp_ = drift.effective_clamp(config.clamp_default);
    drift_zero_ = drift.is_zero();
    sigma_const_ = diffusion.is_constant();
    uvals_.resize(grid_.n_points());
    bvals_.resize(grid_.n_points());
    gvals_.resize(grid_.n_points());
    smoothed_.resize(n);
  }

  const Collocation& grid() const { return grid_; }
  const Eigen::VectorXd& decay() const { return decay_; }
  const Eigen::VectorXd& noise_weights() const { return noise_w_; }
  const SolverConfig& config() const { return config_; }
  bool drift_is_zero() const { return drift_zero_; }
  bool sigma_is_constant() const { return sigma_const_; }
  std::optional<double> clamp() const { return clamp_; }

  double drift_value(double z) const {
    return clamp_ ? drift_.eval_clamped(z, *clamp_) : drift_.eval_raw(z);
  }
  double drift_slope(double z) const {
    if (clamp_) return drift_.derivative_clamped(z, *clamp_);
    return drift_.derivative_clamped(z, std::numeric_limits<double>::infinity());
  }

  // u_{j+1} from u_j and the j-th increments (pointer to n_modes doubles).
  void step_inplace(Eigen::VectorXd& u, const double* dw) {
    const int n = model_.total_modes();
    if (drift_zero_ && sigma_const_) {
      const double c = diffusion_.constant_value();
      for (int k = 0; k < n; ++k)
        u(k) = decay_(k) * (u(k) + c * noise_w_(k) * dw[k]);
      return;
    }
    uvals_.noalias() = grid_.synthesis() * u;
    if (!sigma_const_) {
      for (int k = 0; k < n; ++k) smoothed_(k) = noise_w_(k) * dw[k];
      bvals_.noalias() = grid_.synthesis() * smoothed_;
      for (int p = 0; p < gvals_.size(); ++p)
        gvals_(p) = diffusion_.eval(uvals_(p)) * bvals_(p);
      if (!drift_zero_)
        for (int p = 0; p < gvals_.size(); ++p)
          gvals_(p) += config_.dt * drift_value(uvals_(p));
      smoothed_.noalias() = grid_.analysis() * gvals_;
      for (int k = 0; k < n; ++k) u(k) = decay_(k) * (u(k) + smoothed_(k));
    } else {
      const double c = diffusion_.constant_value();
      for (int p = 0; p < gvals_.size(); ++p)
        gvals_(p) = config_.dt * drift_value(uvals_(p));
      smoothed_.noalias() = grid_.analysis() * gvals_;
      for (int k = 0; k < n; ++k)
        u(k) = decay_(k) * (u(k) + smoothed_(k) + c * noise_w_(k) * dw[k]);
    }
  }

 private:
  const SpectralModel& model_;
  DriftSpec drift_;
  DiffusionSpec diffusion_;
  SolverConfig config_;
  Collocation grid_;
  Eigen::VectorXd decay_;
  Eigen::VectorXd noise_w_;
  std::optional<double> clamp_;
  bool drift_zero_ = false;
  bool sigma_const_ = false;
  Eigen::VectorXd uvals_, bvals_, gvals_, smoothed_;
};

// Single exponential-Euler step (convenience wrapper around Stepper).
inline Eigen::VectorXd step(const SpectralModel& model, const DriftSpec& drift,
                            const DiffusionSpec& diffusion,
                            const Eigen::VectorXd& u, const double* dw,
                            const SolverConfig& config) {
  Stepper s(model, drift, diffusion, config);
  Eigen::VectorXd v = u;
  s.step_inplace(v, dw);
  return v;
}

namespace detail {
inline void check_noise_matches(const SpectralModel& model,
                                const NoiseGrid& noise,
                                const SolverConfig& config) {
  if (noise.n_modes != model.total_modes())
    throw std::invalid_argument("solve: noise grid mode count mismatch");
  if (noise.n_steps != config.n_steps)
    throw std::invalid_argument("solve: config.n_steps != noise.n_steps");
  if (std::abs(noise.dt - config.dt) >
      1e-12 * std::max(noise.dt, config.dt))
    throw std::invalid_argument("solve: config.dt != noise.dt");
}
}  // namespace detail

inline Trajectory solve(const SpectralModel& model, const DriftSpec& drift,
                        const DiffusionSpec& diffusion,
                        const InitialDatum& u0, const NoiseGrid& noise,
                        const SolverConfig& config) {
  detail::check_noise_matches(model, noise, config);
  Stepper st(model, drift, diffusion, config);
  const int n = model.total_modes();
  Trajectory traj;
  traj.coeffs = Eigen::MatrixXd::Zero(config.n_steps + 1, n);
  traj.dt = config.dt;
  traj.master_seed = noise.master_seed;
  traj.path_index = noise.path_index;
  Eigen::VectorXd u = u0.resolve(model, st.grid());
  traj.coeffs.row(0) = u.transpose();
  for (int j = 0; j < config.n_steps; ++j) {
    st.step_inplace(u, noise.row(j));
    traj.coeffs.row(j + 1) = u.transpose();
    if (!u.allFinite()) {
      traj.diverged = true;
      traj.divergence_step = j + 1;
      break;
    }
  }
  return traj;
}

// Fixed-point (Picard) route to the same discrete trajectory: iterate the
// discrete mild map, reading the nonlinearities from the previous iterate.
// Converges to the solve() trajectory since both satisfy the same fixed
// point equation; useful as an independent oracle.
struct PicardError : std::runtime_error {
  PicardError(const std::string& msg, double residual)
      : std::runtime_error(msg), last_residual(residual) {}
  double last_residual;
};

struct PicardResult {
  Trajectory trajectory;
  int iterations = 0;
  std::vector<double> residuals;  // sup-norm change per sweep
};

inline PicardResult solve_picard(const SpectralModel& model,
                                 const DriftSpec& drift,
                                 const DiffusionSpec& diffusion,
                                 const InitialDatum& u0,
                                 const NoiseGrid& noise,
                                 const SolverConfig& config, double tol,
                                 int max_iter) {
  detail::check_noise_matches(model, noise, config);
  if (!(tol > 0.0))
    throw std::invalid_argument("solve_picard: tol must be positive");
  if (max_iter < 1)
    throw std::invalid_argument("solve_picard: max_iter must be >= 1");
  Stepper st(model, drift, diffusion, config);
  const int n = model.total_modes();
  const int m = config.n_steps;
  const Eigen::VectorXd u_init = u0.resolve(model, st.grid());

  // iterate trajectories as (m+1) x n matrices; start constant in time
  Eigen::MatrixXd v(m + 1, n);
  for (int j = 0; j <= m; ++j) v.row(j) = u_init.transpose();
  Eigen::MatrixXd w(m + 1, n);

  PicardResult out;
  const int npts = st.grid().n_points();
  Eigen::VectorXd uvals(npts), bvals(npts), gvals(npts), proj(n), smoothed(n);
  for (int it = 1; it <= max_iter; ++it) {
    w.row(0) = u_init.transpose();
    for (int j = 0; j < m; ++j) {
      const double* dw = noise.row(j);
      uvals.noalias() = st.grid().synthesis() * v.row(j).transpose();
      for (int k = 0; k < n; ++k) smoothed(k) = st.noise_weights()(k) * dw[k];
      if (st.sigma_is_constant()) {
        const double c = diffusion.constant_value();
        for (int p = 0; p < npts; ++p)
          gvals(p) = config.dt * st.drift_value(uvals(p));
        proj.noalias() = st.grid().analysis() * gvals;
        proj += c * smoothed;
      } else {
        bvals.noalias() = st.grid().synthesis() * smoothed;
        for (int p = 0; p < npts; ++p)
          gvals(p) = config.dt * st.drift_value(uvals(p)) +
                     diffusion.eval(uvals(p)) * bvals(p);
        proj.noalias() = st.grid().analysis() * gvals;
      }
      for (int k = 0; k < n; ++k)
        w(j + 1, k) = st.decay()(k) * (w(j, k) + proj(k));
    }
    const double res = (w - v).cwiseAbs().maxCoeff();
    out.residuals.push_back(res);
    out.iterations = it;
    v.swap(w);
    if (res <= tol) {
      out.trajectory.coeffs = v;
      out.trajectory.dt = config.dt;
      out.trajectory.master_seed = noise.master_seed;
      out.trajectory.path_index = noise.path_index;
      return out;
    }
  }
  throw PicardError("solve_picard: no convergence after " +
                        std::to_string(max_iter) + " sweeps (residual " +
                        std::to_string(out.residuals.back()) + ")",
                    out.residuals.back());
}

// Random-field route: the state lives as point values on a quadrature grid
// and each step applies the truncated semigroup kernel by quadrature,
//   u_{j+1}(x) = sum_q w_q K_dt(x, y_q) [u_j + dt f(u_j) + sigma(u_j) BdW_j](y_q),
// with the deterministic, drift and noise contributions tracked separately.
enum class RfQuadrature {
  kEigenProjection,  // project -> decay -> synthesize (exact for the basis)
  kKernelMatrix      // explicit kernel matrix times quadrature weights
};

struct RandomFieldResult {
  std::vector<Point> points;
  Eigen::MatrixXd values;            // (n_steps + 1) x n_points
  Eigen::MatrixXd term_deterministic;  // semigroup part, same shape
  Eigen::MatrixXd term_drift;
  Eigen::MatrixXd term_noise;
  bool diverged = false;
  int divergence_step = -1;
};

inline RandomFieldResult solve_random_field(
    const SpectralModel& model, const DriftSpec& drift,
    const DiffusionSpec& diffusion, const InitialDatum& u0,
    const NoiseGrid& noise, const SolverConfig& config,
    int grid_points_per_axis, RfQuadrature quadrature) {
  detail::check_noise_matches(model, noise, config);
  config.validate(model, drift);
  if (grid_points_per_axis < 2 * model.modes_per_axis())
    throw std::invalid_argument(
        "solve_random_field: grid too coarse; need at least 2 * n_modes "
        "interior points per axis");
  Collocation grid(model, grid_points_per_axis);
  const int n = model.total_modes();
  const int npts = grid.n_points();
  const int m = config.n_steps;

  Eigen::VectorXd decay(n), noise_w(n);
  for (int k = 0; k < n; ++k) {
    decay(k) = std::exp(-model.lambda(k) * config.dt);
    noise_w(k) = model.noise_weight(k);
  }
  const auto clamp = drift.effective_clamp(config.clamp_default);
  auto f_of = [&](double z) {
    return clamp ? drift.eval_clamped(z, *clamp) : drift.eval_raw(z);
  };

  // kernel application as a value-space operator
  Eigen::MatrixXd kmat;
  if (quadrature == RfQuadrature::kKernelMatrix)
    kmat = grid.synthesis() * decay.asDiagonal() * grid.analysis();
  auto apply_kernel = [&](const Eigen::VectorXd& vals) -> Eigen::VectorXd {
    if (quadrature == RfQuadrature::kKernelMatrix) return kmat * vals;
    Eigen::VectorXd c = grid.analyze(vals);
    c.array() *= decay.array();
    return grid.synth(c);
  };

  RandomFieldResult out;
  out.points = grid.points();
  out.values = Eigen::MatrixXd::Zero(m + 1, npts);
  out.term_deterministic = Eigen::MatrixXd::Zero(m + 1, npts);
  out.term_drift = Eigen::MatrixXd::Zero(m + 1, npts);
  out.term_noise = Eigen::MatrixXd::Zero(m + 1, npts);

  Eigen::VectorXd a = grid.synth(u0.resolve(model, grid));
  Eigen::VectorXd b = Eigen::VectorXd::Zero(npts);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(npts);
  Eigen::VectorXd u = a + b + c;
  out.values.row(0) = u.transpose();
  out.term_deterministic.row(0) = a.transpose();

  Eigen::VectorXd smoothed(n), bvals(npts), tmp(npts);
  for (int j = 0; j < m; ++j) {
    const double* dw = noise.row(j);
    for (int k = 0; k < n; ++k) smoothed(k) = noise_w(k) * dw[k];
    bvals = grid.synth(smoothed);
    a = apply_kernel(a);
    for (int p = 0; p < npts; ++p) tmp(p) = b(p) + config.dt * f_of(u(p));
    b = apply_kernel(tmp);
    for (int p = 0; p < npts; ++p) tmp(p) = c(p) + diffusion.eval(u(p)) * bvals(p);
    c = apply_kernel(tmp);
    u = a + b + c;
    out.values.row(j + 1) = u.transpose();
    out.term_deterministic.row(j + 1) = a.transpose();
    out.term_drift.row(j + 1) = b.transpose();
    out.term_noise.row(j + 1) = c.transpose();
    if (!u.allFinite()) {
      out.diverged = true;
      out.divergence_step = j + 1;
      break;
    }
  }
  return out;
}

// First step index at which the sup norm of the field (over the collocation
// grid) reaches `level`; tau = n_steps when the path never crosses.
struct StoppedPath {
  double level = 0.0;
  int tau_step = 0;
  bool crossed = false;
  std::vector<double> sup_norms;  // per step, 0 .. tau_step
};

inline StoppedPath stopping_step(const SpectralModel& model,
                                 const Trajectory& traj, double level,
                                 int dealias_factor = 2) {
  if (!(level > 0.0))
    throw std::invalid_argument("stopping_step: level must be positive");
  Collocation grid(model, dealias_factor * model.modes_per_axis());
  StoppedPath out;
  out.level = level;
  out.tau_step = traj.n_steps();
  for (int j = 0; j <= traj.n_steps(); ++j) {
    const Eigen::VectorXd vals = grid.synthesis() * traj.coeffs.row(j).transpose();
    const double sup = vals.cwiseAbs().maxCoeff();
    out.sup_norms.push_back(sup);
    if (sup >= level) {
      out.tau_step = j;
      out.crossed = true;
      break;
    }
  }
  return out;
}

}  // namespace spdelab
