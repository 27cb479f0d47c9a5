#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

#include "spdelab/spectral.hpp"

namespace spdelab {

// Interior sine-collocation grid on the unit box with the quadrature rule
// matched to the Dirichlet eigenbasis.
//
// Per axis the grid has n_interior points x_q = q/P, q = 1..n_interior,
// with P = n_interior + 1 subintervals.  The rule
//   integral_0^1 g ~= (1/P) sum_q g(x_q)
// is exact for products sin(j pi x) sin(k pi x) whenever j, k <= n_interior,
// so analysis of a field whose sine expansion stops below P is exact up to
// rounding.  Nonlinearities of degree D need n_interior large enough that
// aliases of frequencies up to D*n_modes stay above n_modes, i.e.
// 2P - D*n_modes > n_modes; callers enforce that via their dealias factor.
class Collocation {
 public:
  Collocation(const SpectralModel& model, int n_interior_per_axis)
      : dim_(model.dimension()), n_interior_(n_interior_per_axis) {
    if (n_interior_ < model.modes_per_axis())
      throw std::invalid_argument(
          "Collocation: grid must have at least n_modes interior points "
          "per axis");
    const int P = n_interior_ + 1;
    const int npts = dim_ == 1 ? n_interior_ : n_interior_ * n_interior_;
    points_.reserve(static_cast<size_t>(npts));
    if (dim_ == 1) {
      for (int q = 1; q <= n_interior_; ++q)
        points_.push_back(point(static_cast<double>(q) / P));
    } else {
      for (int q1 = 1; q1 <= n_interior_; ++q1)
        for (int q2 = 1; q2 <= n_interior_; ++q2)
          points_.push_back(point(static_cast<double>(q1) / P,
                                  static_cast<double>(q2) / P));
    }
    const int nm = model.total_modes();
    synth_.resize(npts, nm);
    for (int p = 0; p < npts; ++p)
      for (int k = 0; k < nm; ++k)
        synth_(p, k) = model.eval_mode(k, points_[static_cast<size_t>(p)]);
    weight_ = 1.0;
    for (int a = 0; a < dim_; ++a) weight_ /= P;
    analysis_ = weight_ * synth_.transpose();
  }

  int n_points() const { return static_cast<int>(points_.size()); }
  int n_interior_per_axis() const { return n_interior_; }
  double quadrature_weight() const { return weight_; }
  const std::vector<Point>& points() const { return points_; }

  // values(p) = sum_k coeffs(k) e_k(x_p)
  const Eigen::MatrixXd& synthesis() const { return synth_; }
  // coeffs(k) ~= <values, e_k> by the grid quadrature
  const Eigen::MatrixXd& analysis() const { return analysis_; }

  Eigen::VectorXd synth(const Eigen::VectorXd& coeffs) const {
    return synth_ * coeffs;
  }
  Eigen::VectorXd analyze(const Eigen::VectorXd& values) const {
    return analysis_ * values;
  }

 private:
  int dim_;
  int n_interior_;
  double weight_ = 0.0;
  std::vector<Point> points_;
  Eigen::MatrixXd synth_;
  Eigen::MatrixXd analysis_;
};

}  // namespace spdelab
