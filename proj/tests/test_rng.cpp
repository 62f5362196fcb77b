#include <doctest.h>

#include <cmath>
#include <set>

#include "clusterkit/bootstrap.hpp"
#include "clusterkit/rng.hpp"

using namespace clusterkit;

TEST_CASE("counter rng is a pure function of (seed, stream, index)") {
  CHECK(draw_u64_at(7, 3, 11) == draw_u64_at(7, 3, 11));
  CHECK(draw_u64_at(7, 3, 11) != draw_u64_at(7, 3, 12));
  CHECK(draw_u64_at(7, 4, 11) != draw_u64_at(7, 3, 11));
  CHECK(draw_u64_at(8, 3, 11) != draw_u64_at(7, 3, 11));

  CounterRng a(42, 1), b(42, 1);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("uniform draws have the right moments") {
  CounterRng rng(123, 5);
  const int n = 1000000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.next_uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    sum += u;
    sumsq += u * u;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  CHECK(std::fabs(mean - 0.5) < 0.002);
  CHECK(std::fabs(var - 1.0 / 12.0) < 0.002);
}

TEST_CASE("normal draws have the right moments") {
  CounterRng rng(9, 2);
  const int n = 500000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.next_normal();
    sum += z;
    sumsq += z * z;
  }
  const double mean = sum / n;
  CHECK(std::fabs(mean) < 0.01);
  CHECK(std::fabs(sumsq / n - 1.0) < 0.01);
}

TEST_CASE("rademacher weights take only +-1") {
  for (long b = 0; b < 50; ++b) {
    const Eigen::VectorXd v = draw_weights(WeightDist::RADEMACHER, 8, b, 3);
    for (int g = 0; g < 8; ++g)
      CHECK((v(g) == 1.0 || v(g) == -1.0));
  }
}

TEST_CASE("webb six-point weights hit all six values with unit variance") {
  // Population variance (1/3)(1/2 + 1 + 3/2) = 1.
  const double s12 = std::sqrt(0.5), s32 = std::sqrt(1.5);
  std::set<double> seen;
  double sum = 0.0, sumsq = 0.0;
  const long B = 60000;
  for (long b = 0; b < B; ++b) {
    const Eigen::VectorXd v = draw_weights(WeightDist::WEBB6, 4, b, 17);
    for (int g = 0; g < 4; ++g) {
      seen.insert(v(g));
      sum += v(g);
      sumsq += v(g) * v(g);
      const double a = std::fabs(v(g));
      CHECK((std::fabs(a - s12) < 1e-15 || std::fabs(a - 1.0) < 1e-15 ||
             std::fabs(a - s32) < 1e-15));
    }
  }
  CHECK(seen.size() == 6);
  const double n = 4.0 * B;
  CHECK(std::fabs(sum / n) < 0.01);
  CHECK(std::fabs(sumsq / n - 1.0) < 0.01);
}

TEST_CASE("weight draws are independent of iteration order") {
  // The g-th weight of replicate b never depends on other (b, g) pairs.
  const Eigen::VectorXd v1 = draw_weights(WeightDist::RADEMACHER, 10, 7, 99);
  const Eigen::VectorXd v2 = draw_weights(WeightDist::RADEMACHER, 10, 7, 99);
  CHECK(v1 == v2);
  const Eigen::VectorXd w = draw_weights(WeightDist::RADEMACHER, 5, 7, 99);
  for (int g = 0; g < 5; ++g) CHECK(w(g) == v1(g));
}
