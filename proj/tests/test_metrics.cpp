#include <doctest.h>

#include <cmath>

#include "mmpred/error.hpp"
#include "mmpred/metrics.hpp"
#include "mmpred/rng.hpp"
#include "oracles.hpp"

using namespace mmpred::eval;
using namespace mmpred::testing;
using mmpred::Rng;

TEST_CASE("perfect ranking gives all ones") {
  const std::vector<double> p = {0.9, 0.8, 0.2, 0.1};
  const std::vector<int> y = {1, 1, 0, 0};
  MetricReport r = compute_metrics(p, y);
  CHECK(r.auroc == doctest::Approx(1.0));
  CHECK(r.auprc == doctest::Approx(1.0));
  CHECK(r.sensitivity == doctest::Approx(1.0));
  CHECK(r.specificity == doctest::Approx(1.0));
}

TEST_CASE("perfectly wrong ranking gives auroc 0") {
  CHECK(auroc({0.6, 0.4}, {0, 1}) == doctest::Approx(0.0));
}

TEST_CASE("hand-checked five-sample fixture") {
  const std::vector<double> p = {0.7, 0.6, 0.55, 0.4, 0.3};
  const std::vector<int> y = {1, 0, 1, 0, 0};
  MetricReport r = compute_metrics(p, y);
  CHECK(r.auroc == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  CHECK(r.auprc == doctest::Approx(brute_auprc(p, y)).epsilon(1e-12));
  CHECK(r.f1_macro == doctest::Approx(brute_threshold_metrics(p, y).f1_macro).epsilon(1e-12));
  CHECK(r.sensitivity == doctest::Approx(1.0));
  CHECK(r.specificity == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("oracle equivalence on exhaustive small fixtures") {
  Rng rng(123);
  int cases = 0;
  for (int n = 2; n <= 8; ++n) {
    // All label patterns with both classes, several probability draws each.
    for (int pattern = 1; pattern < (1 << n) - 1; ++pattern) {
      std::vector<int> y(n);
      for (int i = 0; i < n; ++i) y[i] = (pattern >> i) & 1;
      for (int rep = 0; rep < 3; ++rep) {
        std::vector<double> p(n);
        for (auto& v : p) v = rng.uniform();
        if (rep == 2) {
          // Force ties.
          for (auto& v : p) v = std::round(v * 3.0) / 3.0;
        }
        ++cases;
        CHECK(auroc(p, y) == doctest::Approx(brute_auroc(p, y)).epsilon(1e-12));
        CHECK(auprc(p, y) == doctest::Approx(brute_auprc(p, y)).epsilon(1e-12));
        const MetricReport r = compute_metrics(p, y);
        const BruteThresholdMetrics b = brute_threshold_metrics(p, y);
        CHECK(r.f1_macro == doctest::Approx(b.f1_macro).epsilon(1e-12));
        CHECK(r.sensitivity == doctest::Approx(b.sensitivity).epsilon(1e-12));
        CHECK(r.specificity == doctest::Approx(b.specificity).epsilon(1e-12));
      }
    }
  }
  CHECK(cases > 1000);
}

TEST_CASE("single-class labels: threshold metrics returned, areas undefined") {
  MetricReport r = compute_metrics({0.9, 0.7, 0.6}, {1, 1, 1});
  CHECK_FALSE(r.areas_defined);
  CHECK(std::isnan(r.auroc));
  CHECK(r.sensitivity == doctest::Approx(1.0));
  CHECK_THROWS_AS(auroc({0.9, 0.7}, {1, 1}), mmpred::split_error);
  CHECK_THROWS_AS(auprc({0.9, 0.7}, {0, 0}), mmpred::split_error);
}

TEST_CASE("metric range property") {
  Rng rng(77);
  for (int rep = 0; rep < 50; ++rep) {
    const int n = 5 + static_cast<int>(rng.uniform_int(0, 40));
    std::vector<double> p(n);
    std::vector<int> y(n);
    int pos = 0;
    for (int i = 0; i < n; ++i) {
      p[i] = rng.uniform();
      y[i] = rng.bernoulli(0.4) ? 1 : 0;
      pos += y[i];
    }
    if (pos == 0 || pos == n) continue;
    const MetricReport r = compute_metrics(p, y);
    for (double v : {r.auprc, r.auroc, r.f1_macro, r.sensitivity, r.specificity}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}
