#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "spdelab/rng.hpp"
#include "spdelab/spectral.hpp"

namespace spdelab {

// All Brownian increments of one path on one time grid:
//   data[step * n_modes + mode] = dw[step][mode] ~ N(0, dt), i.i.d.
// Entries are a pure function of (master_seed, path_index, step, mode),
// so regeneration is bit-exact and scheduling-independent.
struct NoiseGrid {
  int n_steps = 0;
  int n_modes = 0;
  double dt = 0.0;
  std::uint64_t master_seed = 0;
  std::uint32_t path_index = 0;
  std::vector<double> data;  // row-major, step index slowest

  double at(int step, int mode) const {
    return data[static_cast<size_t>(step) * n_modes + mode];
  }
  double& at(int step, int mode) {
    return data[static_cast<size_t>(step) * n_modes + mode];
  }
  const double* row(int step) const {
    return data.data() + static_cast<size_t>(step) * n_modes;
  }
};

inline NoiseGrid generate(const SpectralModel& model, int n_steps, double dt,
                          std::uint64_t master_seed,
                          std::uint32_t path_index) {
  if (n_steps < 1) throw std::invalid_argument("generate: n_steps must be >= 1");
  if (!(dt > 0.0)) throw std::invalid_argument("generate: dt must be positive");
  NoiseGrid g;
  g.n_steps = n_steps;
  g.n_modes = model.total_modes();
  g.dt = dt;
  g.master_seed = master_seed;
  g.path_index = path_index;
  g.data.resize(static_cast<size_t>(n_steps) * g.n_modes);
  const std::uint64_t key = rng::stream_key(master_seed, path_index);
  const double sd = std::sqrt(dt);
  for (size_t i = 0; i < g.data.size(); ++i)
    g.data[i] = sd * rng::normal_at(key, i);
  return g;
}

// Copy of `g` with a single increment shifted by h (for sensitivity probes).
inline NoiseGrid bump(const NoiseGrid& g, int step, int mode, double h) {
  if (step < 0 || step >= g.n_steps || mode < 0 || mode >= g.n_modes)
    throw std::invalid_argument("bump: index out of range");
  NoiseGrid out = g;
  out.at(step, mode) += h;
  return out;
}

// Coefficients of the smoothed increment B dW_j, i.e.
// (1+lambda_k)^-m * dw[step][k] in canonical mode order.
inline std::vector<double> noise_field(const SpectralModel& model,
                                       const NoiseGrid& g, int step) {
  if (g.n_modes != model.total_modes())
    throw std::invalid_argument("noise_field: grid/model mode count mismatch");
  if (step < 0 || step >= g.n_steps)
    throw std::invalid_argument("noise_field: step out of range");
  std::vector<double> c(static_cast<size_t>(g.n_modes));
  for (int k = 0; k < g.n_modes; ++k)
    c[static_cast<size_t>(k)] = model.noise_weight(k) * g.at(step, k);
  return c;
}

// Evaluate a coefficient vector as a spatial field at x.
inline double eval_field(const SpectralModel& model,
                         const std::vector<double>& coeffs, const Point& x) {
  double s = 0.0;
  for (int k = 0; k < model.total_modes(); ++k)
    s += coeffs[static_cast<size_t>(k)] * model.eval_mode(k, x);
  return s;
}

// Sum consecutive increments into a coarser grid over the same Brownian
// path (factor new steps become one), for step-refinement studies.
inline NoiseGrid coarsen(const NoiseGrid& g, int factor) {
  if (factor < 1 || g.n_steps % factor != 0)
    throw std::invalid_argument("coarsen: factor must divide n_steps");
  NoiseGrid out;
  out.n_steps = g.n_steps / factor;
  out.n_modes = g.n_modes;
  out.dt = g.dt * factor;
  out.master_seed = g.master_seed;
  out.path_index = g.path_index;
  out.data.assign(static_cast<size_t>(out.n_steps) * out.n_modes, 0.0);
  for (int j = 0; j < g.n_steps; ++j)
    for (int k = 0; k < g.n_modes; ++k) out.at(j / factor, k) += g.at(j, k);
  return out;
}

// Binary dump: 32-byte header (magic "SPDN", u32 n_steps, u32 n_modes,
// f64 dt, u64 master_seed, u32 path_index), then the increments as
// little-endian 64-bit floats in row-major order.
inline void write_noise_grid(const std::string& path, const NoiseGrid& g) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_noise_grid: cannot open " + path);
  char header[32] = {};
  std::memcpy(header, "SPDN", 4);
  const std::uint32_t m = static_cast<std::uint32_t>(g.n_steps);
  const std::uint32_t n = static_cast<std::uint32_t>(g.n_modes);
  std::memcpy(header + 4, &m, 4);
  std::memcpy(header + 8, &n, 4);
  std::memcpy(header + 12, &g.dt, 8);
  std::memcpy(header + 20, &g.master_seed, 8);
  std::memcpy(header + 28, &g.path_index, 4);
  f.write(header, 32);
  f.write(reinterpret_cast<const char*>(g.data.data()),
          static_cast<std::streamsize>(g.data.size() * sizeof(double)));
  if (!f) throw std::runtime_error("write_noise_grid: short write to " + path);
}

inline NoiseGrid read_noise_grid(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_noise_grid: cannot open " + path);
  char header[32];
  f.read(header, 32);
  if (!f || std::memcmp(header, "SPDN", 4) != 0)
    throw std::runtime_error("read_noise_grid: bad magic in " + path);
  NoiseGrid g;
  std::uint32_t m = 0, n = 0;
  std::memcpy(&m, header + 4, 4);
  std::memcpy(&n, header + 8, 4);
  std::memcpy(&g.dt, header + 12, 8);
  std::memcpy(&g.master_seed, header + 20, 8);
  std::memcpy(&g.path_index, header + 28, 4);
  g.n_steps = static_cast<int>(m);
  g.n_modes = static_cast<int>(n);
  g.data.resize(static_cast<size_t>(m) * n);
  f.read(reinterpret_cast<char*>(g.data.data()),
         static_cast<std::streamsize>(g.data.size() * sizeof(double)));
  if (!f) throw std::runtime_error("read_noise_grid: truncated file " + path);
  return g;
}

}  // namespace spdelab
