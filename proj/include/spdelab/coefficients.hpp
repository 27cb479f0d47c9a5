#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "spdelab/rng.hpp"

namespace spdelab {

// Polynomial reaction term f(z) = sum_i coeffs[i] z^i with an optional
// clamp level n: the clamped drift is f(z) for |z| <= n and frozen at
// f(+-n) outside, which makes it globally Lipschitz and bounded.
class DriftSpec {
 public:
  static DriftSpec polynomial(std::vector<double> coeffs) {
    DriftSpec d;
    d.coeffs_ = std::move(coeffs);
    while (!d.coeffs_.empty() && d.coeffs_.back() == 0.0) d.coeffs_.pop_back();
    return d;
  }

  static DriftSpec zero() { return polynomial({}); }

  // Odd polynomial of positive degree with negative leading coefficient
  // (the dissipative class the density results assume).  Throws if the
  // coefficients do not satisfy that structure.
  static DriftSpec odd_dissipative(std::vector<double> coeffs) {
    DriftSpec d = polynomial(std::move(coeffs));
    if (d.degree() < 1)
      throw std::invalid_argument(
          "DriftSpec::odd_dissipative: degree must be >= 1");
    for (size_t i = 0; i < d.coeffs_.size(); ++i)
      if (i % 2 == 0 && d.coeffs_[i] != 0.0)
        throw std::invalid_argument(
            "DriftSpec::odd_dissipative: polynomial must be odd "
            "(even-power coefficients must vanish)");
    if (!(d.coeffs_.back() < 0.0))
      throw std::invalid_argument(
          "DriftSpec::odd_dissipative: leading coefficient must be negative");
    return d;
  }

  DriftSpec with_clamp(double level) const {
    if (!(level > 0.0))
      throw std::invalid_argument("DriftSpec::with_clamp: level must be > 0");
    DriftSpec d = *this;
    d.clamp_level_ = level;
    d.clamp_disabled_ = false;
    return d;
  }

  // Explicitly run the raw polynomial (divergence becomes possible).
  DriftSpec without_clamp() const {
    DriftSpec d = *this;
    d.clamp_level_ = std::nullopt;
    d.clamp_disabled_ = true;
    return d;
  }

  int degree() const {
    return coeffs_.empty() ? -1 : static_cast<int>(coeffs_.size()) - 1;
  }
  bool is_zero() const { return coeffs_.empty(); }
  const std::vector<double>& coefficients() const { return coeffs_; }
  std::optional<double> clamp_level() const { return clamp_level_; }
  bool clamp_disabled() const { return clamp_disabled_; }

  // Clamp level the solver should apply: an explicit level wins; otherwise
  // a large default keeps the executed drift Lipschitz unless clamping was
  // explicitly disabled.
  std::optional<double> effective_clamp(double default_level = 1e6) const {
    if (clamp_disabled_) return std::nullopt;
    if (clamp_level_) return clamp_level_;
    if (degree() >= 1) return default_level;
    return std::nullopt;
  }

  double eval_raw(double z) const {
    double r = 0.0;
    for (size_t i = coeffs_.size(); i-- > 0;) r = r * z + coeffs_[i];
    return r;
  }

  double eval_clamped(double z, double level) const {
    return eval_raw(std::clamp(z, -level, level));
  }

  // Derivative of the clamped drift: f'(z) inside [-level, level], 0 outside.
  double derivative_clamped(double z, double level) const {
    if (z < -level || z > level) return 0.0;
    double r = 0.0;
    for (size_t i = coeffs_.size(); i-- > 1;)
      r = r * z + coeffs_[i] * static_cast<double>(i);
    return r;
  }

 private:
  std::vector<double> coeffs_;
  std::optional<double> clamp_level_;
  bool clamp_disabled_ = false;
};

// Clamped copy of a drift (freezes the polynomial outside [-level, level]).
inline DriftSpec truncate_drift(const DriftSpec& drift, double level) {
  return drift.with_clamp(level);
}

// Scalar diffusion coefficient sigma applied pointwise to the solution.
// Carries its declared Lipschitz constant and (optional) uniform lower
// bound c, both of which are spot-checked by sampling at construction.
class DiffusionSpec {
 public:
  static DiffusionSpec constant(double value) {
    return make(
        "constant", [value](double) { return value; },
        [](double) { return 0.0; }, 0.0, std::abs(value), value);
  }

  static DiffusionSpec identity() {
    return make(
        "identity", [](double z) { return z; }, [](double) { return 1.0; },
        1.0, 0.0, std::nullopt);
  }

  static DiffusionSpec affine_sine() {
    return make(
        "affine_sine", [](double z) { return 1.0 + 0.5 * std::sin(z); },
        [](double z) { return 0.5 * std::cos(z); }, 0.5, 0.5, std::nullopt);
  }

  // User-supplied coefficient; derivative may be absent.  The declared
  // constants are validated by sampling and rejected when contradicted.
  static DiffusionSpec custom(std::string name,
                              std::function<double(double)> sigma,
                              std::function<double(double)> dsigma,
                              double lipschitz, double lower_bound) {
    return make(std::move(name), std::move(sigma), std::move(dsigma),
                lipschitz, lower_bound, std::nullopt);
  }

  const std::string& name() const { return name_; }
  double operator()(double z) const { return sigma_(z); }
  double eval(double z) const { return sigma_(z); }
  bool has_derivative() const { return static_cast<bool>(dsigma_); }
  double derivative(double z) const {
    if (!dsigma_)
      throw std::invalid_argument(
          "DiffusionSpec '" + name_ +
          "' has no derivative; use the finite-difference probe "
          "(bump the noise grid and re-solve) instead of the tangent");
    return dsigma_(z);
  }
  double lipschitz() const { return lipschitz_; }
  double lower_bound() const { return lower_bound_; }
  bool is_constant() const { return constant_value_.has_value(); }
  double constant_value() const { return constant_value_.value(); }

 private:
  static DiffusionSpec make(std::string name,
                            std::function<double(double)> sigma,
                            std::function<double(double)> dsigma,
                            double lipschitz, double lower_bound,
                            std::optional<double> constant_value) {
    DiffusionSpec s;
    s.name_ = std::move(name);
    s.sigma_ = std::move(sigma);
    s.dsigma_ = std::move(dsigma);
    s.lipschitz_ = lipschitz;
    s.lower_bound_ = lower_bound;
    s.constant_value_ = constant_value;
    s.validate();
    return s;
  }

  void validate() const {
    if (!sigma_) throw std::invalid_argument("DiffusionSpec: missing sigma");
    if (lower_bound_ < 0.0)
      throw std::invalid_argument("DiffusionSpec: lower bound must be >= 0");
    // |sigma| >= c on a wide grid.
    if (lower_bound_ > 0.0) {
      for (int i = -2000; i <= 2000; ++i) {
        const double z = 0.05 * i;
        if (std::abs(sigma_(z)) < lower_bound_ * (1.0 - 1e-12))
          throw std::invalid_argument(
              "DiffusionSpec '" + name_ +
              "': declared lower bound violated near z=" + std::to_string(z));
      }
    }
    // |sigma(z) - sigma(z')| <= L |z - z'| on random pairs.
    const std::uint64_t key = rng::stream_key(0x5157u, 0);
    for (int i = 0; i < 2000; ++i) {
      const double a = 100.0 * (rng::uniform_at(key, 2 * i) - 0.5);
      const double b = 100.0 * (rng::uniform_at(key, 2 * i + 1) - 0.5);
      const double lhs = std::abs(sigma_(a) - sigma_(b));
      if (lhs > lipschitz_ * std::abs(a - b) + 1e-12)
        throw std::invalid_argument("DiffusionSpec '" + name_ +
                                    "': declared Lipschitz constant violated");
    }
  }

  std::string name_;
  std::function<double(double)> sigma_;
  std::function<double(double)> dsigma_;
  double lipschitz_ = 0.0;
  double lower_bound_ = 0.0;
  std::optional<double> constant_value_;
};

}  // namespace spdelab
