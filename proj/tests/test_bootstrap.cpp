#include <doctest.h>

#include "mmpred/bootstrap.hpp"
#include "mmpred/error.hpp"
#include "mmpred/rng.hpp"

using namespace mmpred::eval;
using mmpred::Rng;

TEST_CASE("perfect separation gives degenerate CI [1,1]") {
  std::vector<double> p = {0.9, 0.95, 0.85, 0.99, 0.9, 0.1, 0.05, 0.2, 0.15, 0.12};
  std::vector<int> y = {1, 1, 1, 1, 1, 0, 0, 0, 0, 0};
  BootstrapCi ci = bootstrap_ci(p, y, Metric::auroc, 200, 0.05, 7);
  CHECK(ci.interval.lower == doctest::Approx(1.0));
  CHECK(ci.interval.upper == doctest::Approx(1.0));
  CHECK(ci.point_estimate == doctest::Approx(1.0));
}

TEST_CASE("CI bounds within [0,1] and contain the point estimate (20 fixtures)") {
  Rng rng(99);
  for (int rep = 0; rep < 20; ++rep) {
    const int n = 40 + static_cast<int>(rng.uniform_int(0, 60));
    std::vector<double> p(n);
    std::vector<int> y(n);
    int pos = 0;
    for (int i = 0; i < n; ++i) {
      y[i] = rng.bernoulli(0.4) ? 1 : 0;
      pos += y[i];
      p[i] = 0.3 * y[i] + rng.uniform() * 0.7;  // weak signal
    }
    if (pos < 3 || pos > n - 3) continue;
    BootstrapCi ci = bootstrap_ci(p, y, Metric::auroc, 2000, 0.05, 1000 + rep);
    CHECK(ci.interval.lower >= 0.0);
    CHECK(ci.interval.upper <= 1.0);
    CHECK(ci.interval.lower <= ci.interval.upper);
    CHECK(ci.interval.lower <= ci.point_estimate);
    CHECK(ci.interval.upper >= ci.point_estimate);
  }
}

TEST_CASE("same seed reproduces the CI exactly") {
  Rng rng(5);
  std::vector<double> p(60);
  std::vector<int> y(60);
  for (int i = 0; i < 60; ++i) {
    y[i] = i % 3 == 0 ? 1 : 0;
    p[i] = rng.uniform();
  }
  BootstrapCi a = bootstrap_ci(p, y, Metric::auprc, 500, 0.05, 42);
  BootstrapCi b = bootstrap_ci(p, y, Metric::auprc, 500, 0.05, 42);
  CHECK(a.interval.lower == b.interval.lower);
  CHECK(a.interval.upper == b.interval.upper);
}

TEST_CASE("n < 10 rejected") {
  std::vector<double> p = {0.1, 0.9};
  std::vector<int> y = {0, 1};
  CHECK_THROWS_AS(bootstrap_ci(p, y, Metric::auroc, 100, 0.05, 0), mmpred::config_error);
}

TEST_CASE("single-class resamples are redrawn and counted") {
  // 1 positive in 12: ~37% of resamples miss it and must be redrawn.
  std::vector<double> p(12, 0.5);
  std::vector<int> y(12, 0);
  y[0] = 1;
  p[0] = 0.9;
  BootstrapCi ci = bootstrap_ci(p, y, Metric::auroc, 500, 0.05, 3);
  CHECK(ci.degenerate_redraws > 100);
  CHECK(ci.interval.lower >= 0.0);
  CHECK(ci.interval.upper <= 1.0);
}

TEST_CASE("paired bootstrap blocks share resample indices") {
  std::vector<int> y(50);
  std::vector<double> good(50), bad(50);
  Rng rng(8);
  for (int i = 0; i < 50; ++i) {
    y[i] = i % 2;
    good[i] = 0.2 + 0.6 * y[i] + 0.1 * rng.uniform();
    bad[i] = rng.uniform();
  }
  auto blocks = bootstrap_score_blocks({good, bad, good}, y, Metric::auroc, 50, 21);
  CHECK(blocks.size() == 50);
  for (const auto& row : blocks) {
    REQUIRE(row.size() == 3);
    // Identical classifiers evaluated on the same resample score identically.
    CHECK(row[0] == doctest::Approx(row[2]).epsilon(1e-15));
    CHECK(row[0] > row[1] - 0.35);
  }
}
