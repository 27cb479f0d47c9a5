#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spdelab/density.hpp"
#include "spdelab/malliavin.hpp"
#include "spdelab/solver.hpp"
#include "spdelab/spectral.hpp"

namespace spdelab {

namespace detail {
inline std::ofstream open_out(const std::string& path) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open output file '" + path + "'");
  f << std::setprecision(17);
  return f;
}
}  // namespace detail

// delta, window norm, linear lower bound, and the criterion ratio at beta.
inline void write_profile_csv(const std::string& path,
                              const KernelNormProfile& profile, double beta) {
  auto f = detail::open_out(path);
  f << "delta,value,c_x_delta,ratio_beta\n";
  for (size_t i = 0; i < profile.deltas.size(); ++i)
    f << profile.deltas[i] << ',' << profile.values[i] << ','
      << profile.c_x * profile.deltas[i] << ','
      << std::pow(profile.deltas[i], beta) / std::sqrt(profile.values[i])
      << '\n';
}

inline void write_trajectory_csv(const std::string& path,
                                 const SpectralModel& model,
                                 const Trajectory& traj) {
  auto f = detail::open_out(path);
  f << "step,time,mode,k1,k2,coefficient\n";
  const int last =
      traj.diverged ? traj.divergence_step : traj.n_steps();
  for (int j = 0; j <= last; ++j)
    for (int k = 0; k < traj.n_modes(); ++k)
      f << j << ',' << traj.time_at(j) << ',' << k << ','
        << model.modes()[static_cast<size_t>(k)].index[0] << ','
        << model.modes()[static_cast<size_t>(k)].index[1] << ','
        << traj.coeffs(j, k) << '\n';
}

// Field values at one step on a uniform evaluation grid (with boundaries).
inline void write_field_csv(const std::string& path,
                            const SpectralModel& model, const Trajectory& traj,
                            int step, int points_per_axis = 101) {
  auto f = detail::open_out(path);
  const int g = points_per_axis;
  if (model.dimension() == 1) {
    f << "x,value\n";
    for (int i = 0; i < g; ++i) {
      const double x = static_cast<double>(i) / (g - 1);
      f << x << ',' << traj.eval(model, step, point(x)) << '\n';
    }
  } else {
    f << "x,y,value\n";
    for (int i = 0; i < g; ++i)
      for (int j = 0; j < g; ++j) {
        const double x = static_cast<double>(i) / (g - 1);
        const double y = static_cast<double>(j) / (g - 1);
        f << x << ',' << y << ',' << traj.eval(model, step, point(x, y))
          << '\n';
      }
  }
}

inline void write_scaling_csv(const std::string& path,
                              const ScalingResult& r) {
  auto f = detail::open_out(path);
  f << "delta,mean_norm_sq,stderr,slope\n";
  for (size_t i = 0; i < r.deltas.size(); ++i)
    f << r.deltas[i] << ',' << r.means[i] << ',' << r.stderrs[i] << ','
      << r.slope << '\n';
}

inline void write_samples_csv(const std::string& path, const SampleSet& s) {
  auto f = detail::open_out(path);
  if (s.has_norms()) {
    f << "value,norm_sq\n";
    for (size_t i = 0; i < s.values.size(); ++i)
      f << s.values[i] << ',' << s.norms_sq[i] << '\n';
  } else {
    f << "value\n";
    for (double v : s.values) f << v << '\n';
  }
}

inline void write_kde_csv(const std::string& path, const DensityCurve& c) {
  auto f = detail::open_out(path);
  f << "x,density\n";
  for (size_t i = 0; i < c.grid.size(); ++i)
    f << c.grid[i] << ',' << c.density[i] << '\n';
}

inline void write_nondegeneracy_csv(const std::string& path,
                                    const NondegeneracyCurve& c) {
  auto f = detail::open_out(path);
  f << "epsilon,prob\n";
  for (size_t i = 0; i < c.eps.size(); ++i)
    f << c.eps[i] << ',' << c.probs[i] << '\n';
}

inline nlohmann::ordered_json h_norm_report_json(const SpectralModel& model,
                                                 const HNormReport& r) {
  nlohmann::ordered_json j;
  j["t"] = r.t;
  j["x"] = model.dimension() == 1
               ? nlohmann::ordered_json::array({r.x[0]})
               : nlohmann::ordered_json::array({r.x[0], r.x[1]});
  j["full_norm_sq"] = r.full_norm_sq;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& w : r.windows) {
    nlohmann::ordered_json e;
    e["a"] = w[0];
    e["b"] = w[1];
    e["norm_sq"] = w[2];
    arr.push_back(e);
  }
  j["windows"] = arr;
  return j;
}

inline void write_json(const std::string& path,
                       const nlohmann::ordered_json& j) {
  auto f = detail::open_out(path);
  f << j.dump(2) << '\n';
}

}  // namespace spdelab
