#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "spdelab/coefficients.hpp"
#include "spdelab/density.hpp"
#include "spdelab/rng.hpp"
#include "spdelab/solver.hpp"

using namespace spdelab;

namespace {

SolverConfig make_config(double t, int n_steps) {
  SolverConfig sc;
  sc.dt = t / n_steps;
  sc.n_steps = n_steps;
  return sc;
}

std::vector<double> normal_draws(int n, double mean, double sd,
                                 std::uint64_t seed) {
  const std::uint64_t key = rng::stream_key(seed, 0);
  std::vector<double> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    out[static_cast<size_t>(i)] =
        mean + sd * rng::normal_at(key, static_cast<std::uint64_t>(i));
  return out;
}

}  // namespace

TEST_CASE("sample moments are computed with the unbiased variance",
          "[density]") {
  CHECK(sample_mean({1.0, 2.0, 3.0}) == Catch::Approx(2.0));
  CHECK(sample_variance({1.0, 2.0, 3.0}) == Catch::Approx(1.0));
  CHECK_THROWS_AS(sample_variance({1.0}), std::invalid_argument);
}

TEST_CASE("collected samples are reproducible and unbiased", "[density]") {
  SpectralModel m(1, 16, 1);
  const SolverConfig sc = make_config(0.25, 64);
  const Point x = point(0.5);
  const SampleSet a =
      collect(m, DriftSpec::zero(), DiffusionSpec::constant(1.0),
              InitialDatum::zero(), sc, x, 2000, 20260814, false, 1);
  const SampleSet b =
      collect(m, DriftSpec::zero(), DiffusionSpec::constant(1.0),
              InitialDatum::zero(), sc, x, 2000, 20260814, false, 1);
  REQUIRE(a.values.size() == b.values.size());
  for (size_t i = 0; i < a.values.size(); ++i)
    CHECK(a.values[i] == b.values[i]);
  CHECK(a.n_diverged == 0);

  // zero initial state and zero drift: mean 0 within 5 standard errors
  const double mean = sample_mean(a.values);
  const double se =
      std::sqrt(sample_variance(a.values) / static_cast<double>(a.values.size()));
  CHECK(std::abs(mean) < 5.0 * se);

  CHECK_THROWS_AS(collect(m, DriftSpec::zero(), DiffusionSpec::constant(1.0),
                          InitialDatum::zero(), sc, x, 0, 1, false, 1),
                  std::invalid_argument);
}

TEST_CASE("collecting with norms pairs every sample with its sensitivity",
          "[density]") {
  SpectralModel m(1, 8, 1);
  const SolverConfig sc = make_config(0.1, 32);
  const SampleSet s =
      collect(m, DriftSpec::zero(), DiffusionSpec::constant(1.0),
              InitialDatum::zero(), sc, point(0.5), 50, 7, true, 1);
  REQUIRE(s.has_norms());
  REQUIRE(s.norms_sq.size() == s.values.size());
  for (double v : s.norms_sq) CHECK(v > 0.0);
}

TEST_CASE("density estimate integrates to one and tracks the normal curve",
          "[density]") {
  const std::vector<double> draws = normal_draws(20000, 0.3, 1.0, 99);
  const DensityCurve c = kde(draws);
  CHECK_FALSE(c.atom);
  CHECK(std::abs(c.mass - 1.0) <= 1e-3);
  double worst = 0.0;
  for (size_t i = 0; i < c.grid.size(); ++i) {
    const double exact = normal_pdf(c.grid[i] - 0.3);
    worst = std::max(worst, std::abs(c.density[i] - exact));
  }
  CHECK(worst < 0.05);
  CHECK(c.bandwidth > 0.0);
  CHECK_THROWS_AS(kde({1.0}), std::invalid_argument);
}

TEST_CASE("degenerate samples are reported as an atom, not a curve",
          "[density]") {
  const std::vector<double> same(100, 4.2);
  const DensityCurve c = kde(same);
  CHECK(c.atom);
  CHECK(c.grid.empty());
}

TEST_CASE("atom scan accepts continuous samples and flags mass points",
          "[density]") {
  const std::vector<double> clean = normal_draws(10000, 0.0, 1.0, 17);
  const AtomTestResult ok = atom_test(clean);
  CHECK(ok.pass);
  CHECK(ok.max_multiplicity <= 2);

  std::vector<double> atomic = normal_draws(5000, 0.0, 1.0, 18);
  atomic.resize(10000, 0.77);  // half the sample sits on one value
  const AtomTestResult bad = atom_test(atomic);
  CHECK_FALSE(bad.pass);
  CHECK(bad.max_cdf_jump == Catch::Approx(0.5).epsilon(0.01));
}

TEST_CASE("non-degeneracy curve separates positive norms from collapse",
          "[density]") {
  std::vector<double> positive;
  const std::uint64_t key = rng::stream_key(23, 0);
  for (int i = 0; i < 500; ++i) {
    const double g = rng::normal_at(key, static_cast<std::uint64_t>(i));
    positive.push_back(1e-3 + g * g);
  }
  const NondegeneracyCurve good = nondegeneracy_curve(positive);
  CHECK(good.pass);
  CHECK(good.min_norm > 0.0);
  CHECK(good.probs.front() == 1.0);  // largest epsilon covers everything
  CHECK(good.probs.back() == 0.0);   // smallest epsilon excludes everything
  for (size_t i = 1; i < good.eps.size(); ++i)
    CHECK(good.eps[i] < good.eps[i - 1]);

  const NondegeneracyCurve flat = nondegeneracy_curve(
      std::vector<double>(200, 0.0));
  CHECK_FALSE(flat.pass);
  for (double p : flat.probs) CHECK(p == 1.0);

  CHECK_THROWS_AS(nondegeneracy_curve({}), std::invalid_argument);
  CHECK_THROWS_AS(nondegeneracy_curve({-1.0}), std::invalid_argument);
}

TEST_CASE("one-sample distribution comparison uses the 1.36/sqrt(n) bar",
          "[density]") {
  const std::vector<double> draws = normal_draws(5000, 0.0, 1.0, 31);
  const KSResult self =
      compare_to_reference(draws, ReferenceDistribution::normal(0.0, 1.0));
  CHECK(self.pass);
  CHECK(self.threshold == Catch::Approx(1.36 / std::sqrt(5000.0)));

  const KSResult shifted =
      compare_to_reference(draws, ReferenceDistribution::normal(0.5, 1.0));
  CHECK_FALSE(shifted.pass);
  CHECK(shifted.statistic > self.statistic);

  // a large draw of the same law stands in as an empirical reference
  const ReferenceDistribution emp =
      ReferenceDistribution::empirical(normal_draws(20000, 0.0, 1.0, 32));
  CHECK(compare_to_reference(draws, emp).pass);

  CHECK_THROWS_AS(compare_to_reference({}, ReferenceDistribution::normal(0, 1)),
                  std::invalid_argument);
  CHECK_THROWS_AS(ReferenceDistribution::normal(0.0, 0.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(ReferenceDistribution::empirical({}),
                  std::invalid_argument);
}

TEST_CASE("normal cdf and pdf agree with known values", "[density]") {
  CHECK(normal_cdf(0.0) == Catch::Approx(0.5));
  CHECK(normal_cdf(1.959963984540054) == Catch::Approx(0.975).epsilon(1e-9));
  CHECK(normal_pdf(0.0) == Catch::Approx(0.3989422804014327).epsilon(1e-12));
}
