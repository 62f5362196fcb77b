#include <doctest.h>

#include <cmath>

#include "clusterkit/stats.hpp"

using namespace clusterkit;

TEST_CASE("incomplete beta basics") {
  CHECK(incomplete_beta(1.0, 1.0, 0.3) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(incomplete_beta(2.0, 1.0, 0.5) ==
        doctest::Approx(0.25).epsilon(1e-12));
  CHECK(incomplete_beta(0.5, 0.5, 0.0) == 0.0);
  CHECK(incomplete_beta(0.5, 0.5, 1.0) == 1.0);
}

TEST_CASE("student-t cdf reference values") {
  // References computed with an independent implementation of the t cdf.
  CHECK(t_cdf(2.201, 11) == doctest::Approx(0.9750006480237914).epsilon(1e-10));
  CHECK(t_cdf(1.5, 3) == doctest::Approx(0.8847080673775886).epsilon(1e-10));
  CHECK(t_cdf(-0.7, 27) ==
        doctest::Approx(0.24495764856476265).epsilon(1e-10));
  CHECK(t_cdf(0.0, 5) == doctest::Approx(0.5).epsilon(1e-14));
  // dof = 11, |t| = 2.201 is the 97.5% point: two-sided p close to 0.05.
  const double p = 2.0 * (1.0 - t_cdf(2.201, 11));
  CHECK(p == doctest::Approx(0.049998703952).epsilon(1e-6));
}

TEST_CASE("student-t cdf symmetry over the full grid") {
  for (int dof = 1; dof <= 200; ++dof)
    for (double x = -10.0; x <= 10.0; x += 0.25)
      CHECK(std::fabs(t_cdf(x, dof) + t_cdf(-x, dof) - 1.0) < 1e-12);
}

TEST_CASE("student-t quantile inverts the cdf") {
  CHECK(t_quantile(0.975, 11) ==
        doctest::Approx(2.200985160082949).epsilon(1e-10));
  for (int dof = 1; dof <= 200; ++dof)
    for (double x = -10.0; x <= 10.0; x += 0.5)
      CHECK(std::fabs(t_quantile(t_cdf(x, dof), dof) - x) < 1e-8);
}

TEST_CASE("normal cdf") {
  CHECK(normal_cdf(0.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(normal_cdf(1.959964) ==
        doctest::Approx(0.9750000009035577).epsilon(1e-12));
  CHECK(normal_cdf(-8.0) < 1e-14);
}
