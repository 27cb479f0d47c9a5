#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "spdelab/noise.hpp"
#include "spdelab/parallel.hpp"
#include "spdelab/solver.hpp"
#include "spdelab/spectral.hpp"

namespace spdelab {

// Pathwise sensitivities of the discrete solution with respect to every
// Brownian increment: column (i, l) of S holds the eigen-coefficients of
//   s_{j}^{(i,l)} = d u_j / d dw[i][l],
// propagated by the linearization of the exponential-Euler step,
//   s_{j+1} = e^{-lambda dt} ( s_j + dt P[f'(u_j) s_j]
//             + P[sigma'(u_j) s_j (B dW_j)]
//             + 1_{i=j} P[sigma(u_j) (1+lambda_l)^-m e_l] ).
// Columns for increments at steps >= at_step are identically zero
// (adaptedness) and are not stored.
struct TangentField {
  int n_modes = 0;
  int start_step = 0;  // earliest increment step carried
  int at_step = 0;     // the matrix represents d u_{at_step} / d dw
  double dt = 0.0;
  Eigen::MatrixXd S;   // n_modes rows, (at_step - start_step) * n_modes cols

  int n_columns() const { return static_cast<int>(S.cols()); }
  int column_index(int step, int mode) const {
    return (step - start_step) * n_modes + mode;
  }
  // coefficients of d u_{at_step} / d dw[step][mode]
  Eigen::VectorXd column(int step, int mode) const {
    return S.col(column_index(step, mode));
  }
};

struct TangentOptions {
  int start_step = 0;  // ignore increments before this step (window runs)
  int at_step = -1;    // propagate up to this step; -1 = all steps
};

inline TangentField propagate_tangent(const SpectralModel& model,
                                      const DriftSpec& drift,
                                      const DiffusionSpec& diffusion,
                                      const Trajectory& traj,
                                      const NoiseGrid& noise,
                                      const SolverConfig& config,
                                      const TangentOptions& opts = {}) {
  detail::check_noise_matches(model, noise, config);
  if (!diffusion.has_derivative())
    throw std::invalid_argument(
        "propagate_tangent: diffusion has no derivative; probe sensitivities "
        "with finite differences (bump + re-solve) instead");
  const int m = config.n_steps;
  const int at = opts.at_step < 0 ? m : opts.at_step;
  if (at < 0 || at > m || opts.start_step < 0 || opts.start_step > at)
    throw std::invalid_argument("propagate_tangent: bad step range");
  if (traj.n_steps() != m)
    throw std::invalid_argument("propagate_tangent: trajectory/config mismatch");
  if (traj.diverged && traj.divergence_step <= at)
    throw std::runtime_error(
        "propagate_tangent: trajectory diverged inside the requested range");

  Stepper st(model, drift, diffusion, config);
  const Collocation& grid = st.grid();
  const int n = model.total_modes();
  const int npts = grid.n_points();
  const int total_cols = (at - opts.start_step) * n;

  TangentField tf;
  tf.n_modes = n;
  tf.start_step = opts.start_step;
  tf.at_step = at;
  tf.dt = config.dt;
  tf.S = Eigen::MatrixXd::Zero(n, std::max(total_cols, 1));
  if (total_cols == 0) {
    tf.S.resize(n, 0);
    return tf;
  }

  const bool quiet_multiplier = st.drift_is_zero() && st.sigma_is_constant();
  Eigen::VectorXd uvals(npts), bvals(npts), gvals(npts), smoothed(n),
      sigvals(npts);
  Eigen::MatrixXd work(npts, total_cols);
  Eigen::MatrixXd inj(n, n);

  for (int j = opts.start_step; j < at; ++j) {
    const int active = (j - opts.start_step) * n;
    const double* dw = noise.row(j);
    const bool need_grid_values = !quiet_multiplier || !st.sigma_is_constant();
    if (need_grid_values)
      uvals.noalias() = grid.synthesis() * traj.coeffs.row(j).transpose();

    // linearized reaction/diffusion multiplier on existing columns
    if (active > 0 && !quiet_multiplier) {
      if (st.sigma_is_constant()) {
        for (int p = 0; p < npts; ++p)
          gvals(p) = config.dt * st.drift_slope(uvals(p));
      } else {
        for (int k = 0; k < n; ++k) smoothed(k) = st.noise_weights()(k) * dw[k];
        bvals.noalias() = grid.synthesis() * smoothed;
        for (int p = 0; p < npts; ++p)
          gvals(p) = config.dt * st.drift_slope(uvals(p)) +
                     diffusion.derivative(uvals(p)) * bvals(p);
      }
      auto block = tf.S.leftCols(active);
      work.leftCols(active).noalias() = grid.synthesis() * block;
      work.leftCols(active) = gvals.asDiagonal() * work.leftCols(active);
      block.noalias() += grid.analysis() * work.leftCols(active);
    }

    // inject sensitivities to this step's own increments
    if (st.sigma_is_constant()) {
      const double c = diffusion.constant_value();
      tf.S.block(0, active, n, n).setZero();
      for (int l = 0; l < n; ++l)
        tf.S(l, active + l) = c * st.noise_weights()(l);
    } else {
      for (int p = 0; p < npts; ++p) sigvals(p) = diffusion.eval(uvals(p));
      inj.noalias() = grid.analysis() *
                      (sigvals.asDiagonal() * grid.synthesis());
      inj = inj * st.noise_weights().asDiagonal();
      tf.S.block(0, active, n, n) = inj;
    }

    // shared semigroup decay
    tf.S.leftCols(active + n) =
        st.decay().asDiagonal() * tf.S.leftCols(active + n);
  }
  return tf;
}

namespace detail {
// increments with t_i in [a, b), matching the window convention of the
// norm below; returns {i_lo, i_hi_exclusive} clipped to the carried range
inline std::pair<int, int> window_steps(double a, double b, double dt,
                                        int start_step, int at_step) {
  const double edge = 1e-9 * dt;
  if (!(b > a) || a < -edge)
    throw std::invalid_argument("window: need 0 <= a < b");
  if (b > at_step * dt + edge)
    throw std::invalid_argument("window: b exceeds the propagated horizon");
  int i_lo = static_cast<int>(std::ceil((a - edge) / dt));
  int i_hi = static_cast<int>(std::ceil((b - edge) / dt));
  if (i_lo < start_step)
    throw std::invalid_argument(
        "window: increments before the tangent's start_step were not carried");
  return {i_lo, std::min(i_hi, at_step)};
}
}  // namespace detail

// Squared norm of the sensitivity field at the space point x, restricted
// to increments in the time window [a, b):
//   sum_{i: t_i in [a,b)} sum_l ( sum_k S[(i,l)][k] e_k(x) )^2 dt.
// Windows are half-open on the right so adjacent windows partition [0, T].
inline double h_norm_sq(const SpectralModel& model, const TangentField& tf,
                        const Point& x, double a, double b) {
  const auto [i_lo, i_hi] =
      detail::window_steps(a, b, tf.dt, tf.start_step, tf.at_step);
  if (i_lo >= i_hi) return 0.0;
  const int n = tf.n_modes;
  Eigen::VectorXd ex(n);
  for (int k = 0; k < n; ++k) ex(k) = model.eval_mode(k, x);
  const int c0 = (i_lo - tf.start_step) * n;
  const int cn = (i_hi - i_lo) * n;
  const Eigen::VectorXd v = tf.S.middleCols(c0, cn).transpose() * ex;
  return v.squaredNorm() * tf.dt;
}

inline double h_norm_sq_full(const SpectralModel& model, const TangentField& tf,
                             const Point& x) {
  return h_norm_sq(model, tf, x, tf.start_step * tf.dt, tf.at_step * tf.dt);
}

// Window norms of the leading (kernel) part of the sensitivity field,
//   v0(tau, z) = K_{t-tau}(x, z) sigma(u(tau, z)),  t = final time,
// evaluated with the same left-endpoint time rule and the collocation
// quadrature in space:
//   sum_{i: t_i in [a,b)} dt sum_l (1+lambda_l)^-2m < K_{t-t_i}(x,.)
//                                   sigma(u(t_i,.)), e_l >^2.
inline double v0_norm_sq(const SpectralModel& model,
                         const DiffusionSpec& diffusion,
                         const Trajectory& traj, const Point& x, double a,
                         double b, int dealias_factor = 2) {
  const int m = traj.n_steps();
  const double dt = traj.dt;
  const auto [i_lo, i_hi] = detail::window_steps(a, b, dt, 0, m);
  if (i_lo >= i_hi) return 0.0;
  Collocation grid(model, dealias_factor * model.modes_per_axis());
  const int n = model.total_modes();
  const int npts = grid.n_points();
  const double t = m * dt;
  Eigen::VectorXd ex(n), kcoef(n), kvals(npts), uvals(npts), gvals(npts),
      proj(n);
  for (int k = 0; k < n; ++k) ex(k) = model.eval_mode(k, x);
  double total = 0.0;
  for (int i = i_lo; i < i_hi; ++i) {
    for (int k = 0; k < n; ++k)
      kcoef(k) = std::exp(-model.lambda(k) * (t - i * dt)) * ex(k);
    kvals.noalias() = grid.synthesis() * kcoef;
    uvals.noalias() = grid.synthesis() * traj.coeffs.row(i).transpose();
    for (int p = 0; p < npts; ++p)
      gvals(p) = diffusion.eval(uvals(p)) * kvals(p);
    proj.noalias() = grid.analysis() * gvals;
    double s = 0.0;
    for (int l = 0; l < n; ++l)
      s += model.covariance_weight(l) * proj(l) * proj(l);
    total += s;
  }
  return total * dt;
}

// Sensitivity of the final state to one increment by central differences;
// the independent oracle for propagate_tangent.
inline Eigen::VectorXd fd_sensitivity(const SpectralModel& model,
                                      const DriftSpec& drift,
                                      const DiffusionSpec& diffusion,
                                      const InitialDatum& u0,
                                      const NoiseGrid& noise,
                                      const SolverConfig& config, int step,
                                      int mode, double h) {
  const NoiseGrid up = bump(noise, step, mode, h);
  const NoiseGrid dn = bump(noise, step, mode, -h);
  const Trajectory tu = solve(model, drift, diffusion, u0, up, config);
  const Trajectory td = solve(model, drift, diffusion, u0, dn, config);
  if (tu.diverged || td.diverged)
    throw std::runtime_error("fd_sensitivity: bumped path diverged");
  return (tu.coeffs.row(config.n_steps) - td.coeffs.row(config.n_steps))
             .transpose() /
         (2.0 * h);
}

// A-priori size of the tangent column (step, mode): the semigroup damping
// between injection and readout times the noise smoothing weight.  Finite
// differences are only informative where this is not negligibly small.
inline double column_damping_factor(const SpectralModel& model, double dt,
                                    int n_steps, int step, int mode) {
  return std::exp(-model.lambda(mode) * dt * (n_steps - step)) *
         model.noise_weight(mode);
}

// Monte Carlo scaling of the expected window norm E || D u(t,x) ||^2 over
// trailing windows [t - delta, t), fitted as a log-log slope in delta.
struct ScalingResult {
  std::vector<double> deltas;
  std::vector<double> means;    // across paths, per delta
  std::vector<double> stderrs;  // standard error of the mean
  double slope = 0.0;           // OLS fit of log(mean) vs log(delta)
  int n_paths_used = 0;
  int n_diverged = 0;
};

inline ScalingResult windowed_scaling(
    const SpectralModel& model, const DriftSpec& drift,
    const DiffusionSpec& diffusion, const InitialDatum& u0,
    const SolverConfig& config, const Point& x, std::vector<double> deltas,
    int n_paths, std::uint64_t master_seed, int workers = 1) {
  if (n_paths < 100)
    throw std::invalid_argument(
        "windowed_scaling: need at least 100 paths for a stable fit");
  if (deltas.empty())
    throw std::invalid_argument("windowed_scaling: empty delta grid");
  std::sort(deltas.begin(), deltas.end());
  const int m = config.n_steps;
  const double t = m * config.dt;
  const double edge = 1e-9 * config.dt;
  if (!(deltas.front() >= config.dt - edge))
    throw std::invalid_argument("windowed_scaling: deltas must be >= dt");
  if (!(deltas.back() <= t + edge))
    throw std::invalid_argument("windowed_scaling: deltas must be <= t");

  const int start_step = static_cast<int>(
      std::ceil((t - deltas.back() - edge) / config.dt));
  const size_t nd = deltas.size();
  std::vector<double> values(static_cast<size_t>(n_paths) * nd, 0.0);
  std::vector<char> ok(static_cast<size_t>(n_paths), 0);

  parallel_for(static_cast<size_t>(n_paths), workers, [&](size_t p) {
    const NoiseGrid noise = generate(model, m, config.dt, master_seed,
                                     static_cast<std::uint32_t>(p));
    const Trajectory traj = solve(model, drift, diffusion, u0, noise, config);
    if (traj.diverged) return;
    TangentOptions topt;
    topt.start_step = std::max(start_step, 0);
    const TangentField tf =
        propagate_tangent(model, drift, diffusion, traj, noise, config, topt);
    for (size_t d = 0; d < nd; ++d)
      values[p * nd + d] = h_norm_sq(model, tf, x, t - deltas[d], t);
    ok[p] = 1;
  });

  ScalingResult out;
  out.deltas = deltas;
  out.means.assign(nd, 0.0);
  out.stderrs.assign(nd, 0.0);
  for (int p = 0; p < n_paths; ++p) (ok[static_cast<size_t>(p)] ? out.n_paths_used : out.n_diverged)++;
  if (out.n_paths_used == 0)
    throw std::runtime_error("windowed_scaling: all paths diverged");
  for (size_t d = 0; d < nd; ++d) {
    double s = 0.0;
    for (int p = 0; p < n_paths; ++p)
      if (ok[static_cast<size_t>(p)]) s += values[static_cast<size_t>(p) * nd + d];
    out.means[d] = s / out.n_paths_used;
    double ss = 0.0;
    for (int p = 0; p < n_paths; ++p)
      if (ok[static_cast<size_t>(p)]) {
        const double dv = values[static_cast<size_t>(p) * nd + d] - out.means[d];
        ss += dv * dv;
      }
    if (out.n_paths_used > 1)
      out.stderrs[d] =
          std::sqrt(ss / (out.n_paths_used - 1) / out.n_paths_used);
  }

  // OLS slope of log(mean) against log(delta)
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (size_t d = 0; d < nd; ++d) {
    if (!(out.means[d] > 0.0))
      throw std::runtime_error(
          "windowed_scaling: nonpositive mean norm; cannot fit slope");
    const double lx = std::log(out.deltas[d]);
    const double ly = std::log(out.means[d]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double n = static_cast<double>(nd);
  out.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  return out;
}

// Windowed norms at one space-time point, exportable as a report.
struct HNormReport {
  double t = 0.0;
  Point x{0.5, 0.0};
  double full_norm_sq = 0.0;
  std::vector<std::array<double, 3>> windows;  // {a, b, norm_sq}
};

inline HNormReport h_norm_report(const SpectralModel& model,
                                 const TangentField& tf, const Point& x,
                                 const std::vector<std::pair<double, double>>&
                                     windows) {
  HNormReport r;
  r.t = tf.at_step * tf.dt;
  r.x = x;
  r.full_norm_sq = h_norm_sq_full(model, tf, x);
  for (const auto& [a, b] : windows)
    r.windows.push_back({a, b, h_norm_sq(model, tf, x, a, b)});
  return r;
}

}  // namespace spdelab
