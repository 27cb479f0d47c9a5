#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "spdelab/malliavin.hpp"
#include "spdelab/parallel.hpp"
#include "spdelab/solver.hpp"

namespace spdelab {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

inline double normal_pdf(double z) {
  constexpr double inv_sqrt_2pi = 0.3989422804014326779399460599344;
  return inv_sqrt_2pi * std::exp(-0.5 * z * z);
}

inline double sample_mean(const std::vector<double>& v) {
  if (v.empty()) throw std::invalid_argument("sample_mean: empty sample");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// unbiased
inline double sample_variance(const std::vector<double>& v) {
  if (v.size() < 2)
    throw std::invalid_argument("sample_variance: need at least 2 samples");
  const double m = sample_mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

// Monte Carlo draws of u(T, x), optionally paired with the squared
// sensitivity norms ||D u(T,x)||^2 of the same paths.  Diverged paths are
// dropped (and counted); sample order follows the path index.
struct SampleSet {
  double t = 0.0;
  Point x{0.5, 0.0};
  std::uint64_t master_seed = 0;
  int n_requested = 0;
  int n_diverged = 0;
  std::vector<double> values;
  std::vector<double> norms_sq;  // empty when norms were not requested

  bool has_norms() const { return !norms_sq.empty(); }
};

inline SampleSet collect(const SpectralModel& model, const DriftSpec& drift,
                         const DiffusionSpec& diffusion,
                         const InitialDatum& u0, const SolverConfig& config,
                         const Point& x, int n_paths,
                         std::uint64_t master_seed, bool with_norms,
                         int workers = 1) {
  if (n_paths < 1)
    throw std::invalid_argument("collect: n_paths must be >= 1");
  const int m = config.n_steps;
  std::vector<double> vals(static_cast<size_t>(n_paths), 0.0);
  std::vector<double> norms(static_cast<size_t>(n_paths), 0.0);
  std::vector<char> ok(static_cast<size_t>(n_paths), 0);

  parallel_for(static_cast<size_t>(n_paths), workers, [&](size_t p) {
    const NoiseGrid noise = generate(model, m, config.dt, master_seed,
                                     static_cast<std::uint32_t>(p));
    const Trajectory traj = solve(model, drift, diffusion, u0, noise, config);
    if (traj.diverged) return;
    vals[p] = traj.eval(model, m, x);
    if (with_norms) {
      const TangentField tf =
          propagate_tangent(model, drift, diffusion, traj, noise, config);
      norms[p] = h_norm_sq_full(model, tf, x);
    }
    ok[p] = 1;
  });

  SampleSet out;
  out.t = m * config.dt;
  out.x = x;
  out.master_seed = master_seed;
  out.n_requested = n_paths;
  for (int p = 0; p < n_paths; ++p) {
    if (!ok[static_cast<size_t>(p)]) {
      ++out.n_diverged;
      continue;
    }
    out.values.push_back(vals[static_cast<size_t>(p)]);
    if (with_norms) out.norms_sq.push_back(norms[static_cast<size_t>(p)]);
  }
  if (out.values.empty())
    throw std::runtime_error("collect: every path diverged");
  return out;
}

// Gaussian kernel density estimate with the normal-reference bandwidth
// h = 1.06 min(sd, iqr/1.34) n^{-1/5}, evaluated on a uniform grid that
// extends three bandwidths past the sample range.
struct DensityCurve {
  std::vector<double> grid;
  std::vector<double> density;
  double bandwidth = 0.0;
  double mass = 0.0;  // trapezoid integral over the grid
  bool atom = false;  // degenerate sample (zero spread); no curve
};

struct KdeOptions {
  double bandwidth = 0.0;  // <= 0 selects the normal-reference rule
  int grid_points = 801;
};

inline DensityCurve kde(const std::vector<double>& samples,
                        const KdeOptions& opts = {}) {
  if (samples.size() < 2)
    throw std::invalid_argument("kde: need at least 2 samples");
  if (opts.grid_points < 2)
    throw std::invalid_argument("kde: grid_points must be >= 2");
  DensityCurve out;
  const double n = static_cast<double>(samples.size());
  std::vector<double> sorted = samples;
  std::sort(sorted.begin(), sorted.end());
  const double sd = std::sqrt(sample_variance(samples));
  const double q1 = sorted[static_cast<size_t>(0.25 * (n - 1))];
  const double q3 = sorted[static_cast<size_t>(0.75 * (n - 1))];
  const double iqr = q3 - q1;
  double spread = sd;
  if (iqr > 0.0) spread = std::min(sd, iqr / 1.34);
  // a constant sample can pick up ulp-sized variance through the running
  // mean, so degeneracy is judged relative to the sample magnitude
  const double scale =
      std::max({std::abs(sorted.front()), std::abs(sorted.back()), 1.0});
  if (!(spread > 1e-13 * scale)) {
    out.atom = true;
    return out;
  }
  out.bandwidth = opts.bandwidth > 0.0
                      ? opts.bandwidth
                      : 1.06 * spread * std::pow(n, -0.2);
  const double lo = sorted.front() - 3.0 * out.bandwidth;
  const double hi = sorted.back() + 3.0 * out.bandwidth;
  const int g = opts.grid_points;
  const double dx = (hi - lo) / (g - 1);
  out.grid.resize(static_cast<size_t>(g));
  out.density.assign(static_cast<size_t>(g), 0.0);
  for (int i = 0; i < g; ++i) out.grid[static_cast<size_t>(i)] = lo + dx * i;
  const double inv_h = 1.0 / out.bandwidth;
  for (double s : samples)
    for (int i = 0; i < g; ++i)
      out.density[static_cast<size_t>(i)] +=
          normal_pdf((out.grid[static_cast<size_t>(i)] - s) * inv_h);
  for (double& d : out.density) d *= inv_h / n;
  for (int i = 0; i + 1 < g; ++i)
    out.mass += 0.5 *
                (out.density[static_cast<size_t>(i)] +
                 out.density[static_cast<size_t>(i) + 1]) *
                dx;
  return out;
}

// Looks for point masses: samples are rounded to 12 significant digits and
// tied values counted.  A diffuse law keeps multiplicities at 1-2 and
// empirical-CDF jumps well under 3/sqrt(n).
struct AtomTestResult {
  int max_multiplicity = 0;
  double max_cdf_jump = 0.0;
  double jump_threshold = 0.0;
  bool pass = false;
};

inline AtomTestResult atom_test(const std::vector<double>& samples) {
  if (samples.empty()) throw std::invalid_argument("atom_test: empty sample");
  std::vector<std::string> rounded;
  rounded.reserve(samples.size());
  char buf[40];
  for (double s : samples) {
    std::snprintf(buf, sizeof buf, "%.11e", s);
    rounded.emplace_back(buf);
  }
  std::sort(rounded.begin(), rounded.end());
  AtomTestResult out;
  int run = 1;
  out.max_multiplicity = 1;
  for (size_t i = 1; i < rounded.size(); ++i) {
    run = rounded[i] == rounded[i - 1] ? run + 1 : 1;
    out.max_multiplicity = std::max(out.max_multiplicity, run);
  }
  const double n = static_cast<double>(samples.size());
  out.max_cdf_jump = out.max_multiplicity / n;
  out.jump_threshold = 3.0 / std::sqrt(n);
  out.pass = out.max_multiplicity <= 2 && out.max_cdf_jump <= out.jump_threshold;
  return out;
}

// Empirical non-degeneracy curve eps -> P(||Du|| <= eps) on a decreasing
// eps grid.  Healthy multiplicative noise keeps every norm positive, so
// the curve must reach exactly 0 by eps = min(||Du||)/2, which is always
// appended to the grid.
struct NondegeneracyCurve {
  std::vector<double> eps;    // decreasing
  std::vector<double> probs;  // P(norm <= eps)
  double min_norm = 0.0;
  bool pass = false;
};

inline NondegeneracyCurve nondegeneracy_curve(
    const std::vector<double>& norms_sq, int n_grid = 13) {
  if (norms_sq.empty())
    throw std::invalid_argument("nondegeneracy_curve: empty norms");
  std::vector<double> norms;
  norms.reserve(norms_sq.size());
  for (double v : norms_sq) {
    if (v < 0.0)
      throw std::invalid_argument("nondegeneracy_curve: negative squared norm");
    norms.push_back(std::sqrt(v));
  }
  NondegeneracyCurve out;
  out.min_norm = *std::min_element(norms.begin(), norms.end());
  const double max_norm = *std::max_element(norms.begin(), norms.end());

  if (max_norm > 0.0) {
    const double hi = max_norm;
    const double lo = out.min_norm > 0.0
                          ? std::min(out.min_norm / 2.0, hi * 1e-4)
                          : hi * 1e-4;
    const double ratio = std::pow(lo / hi, 1.0 / (n_grid - 1));
    double e = hi;
    for (int i = 0; i < n_grid; ++i, e *= ratio) out.eps.push_back(e);
    if (out.min_norm > 0.0 && out.eps.back() > out.min_norm / 2.0)
      out.eps.push_back(out.min_norm / 2.0);
  } else {
    out.eps = {1.0, 1e-1, 1e-2, 1e-3, 1e-4};
  }
  const double n = static_cast<double>(norms.size());
  for (double e : out.eps) {
    int c = 0;
    for (double v : norms)
      if (v <= e) ++c;
    out.probs.push_back(c / n);
  }
  out.pass = out.min_norm > 0.0 && out.probs.back() == 0.0;
  return out;
}

// Reference law for one-sample comparisons: exact Gaussian or a (large)
// empirical sample standing in for an exact CDF.
class ReferenceDistribution {
 public:
  static ReferenceDistribution normal(double mean, double variance) {
    if (!(variance > 0.0))
      throw std::invalid_argument(
          "ReferenceDistribution: variance must be positive");
    ReferenceDistribution r;
    r.mean_ = mean;
    r.sd_ = std::sqrt(variance);
    return r;
  }

  static ReferenceDistribution empirical(std::vector<double> samples) {
    if (samples.empty())
      throw std::invalid_argument(
          "ReferenceDistribution: empty empirical reference");
    ReferenceDistribution r;
    std::sort(samples.begin(), samples.end());
    r.empirical_ = std::move(samples);
    return r;
  }

  double cdf(double x) const {
    if (empirical_.empty()) return normal_cdf((x - mean_) / sd_);
    const auto it =
        std::upper_bound(empirical_.begin(), empirical_.end(), x);
    return static_cast<double>(it - empirical_.begin()) /
           static_cast<double>(empirical_.size());
  }

 private:
  double mean_ = 0.0;
  double sd_ = 1.0;
  std::vector<double> empirical_;
};

// One-sample Kolmogorov-Smirnov distance with the 5%-level threshold
// 1.36/sqrt(n) attached.
struct KSResult {
  double statistic = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

inline KSResult compare_to_reference(const std::vector<double>& samples,
                                     const ReferenceDistribution& ref) {
  if (samples.empty())
    throw std::invalid_argument("compare_to_reference: empty sample");
  std::vector<double> sorted = samples;
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  double d = 0.0;
  for (size_t i = 0; i < sorted.size(); ++i) {
    const double f = ref.cdf(sorted[i]);
    d = std::max(d, f - static_cast<double>(i) / n);
    d = std::max(d, static_cast<double>(i + 1) / n - f);
  }
  KSResult out;
  out.statistic = d;
  out.threshold = 1.36 / std::sqrt(n);
  out.pass = d < out.threshold;
  return out;
}

}  // namespace spdelab
