#include <doctest.h>

#include <cmath>

#include "mmpred/error.hpp"
#include "mmpred/explain.hpp"
#include "mmpred/rng.hpp"

using namespace mmpred::explainer;
using mmpred::Rng;

namespace {

// Static-only sample with d features (labs/meds/text empty).
SerializedSample static_sample(const std::vector<double>& values) {
  mmpred::prep::MultimodalSample s;
  s.static_values = values;
  return serialize(s, 0, 0, 0, 0);
}

// Reads the static feature values back out of a flat vector.
std::vector<double> static_part(const SerializedSample& layout,
                                const std::vector<double>& flat) {
  std::vector<double> x(layout.static_dim);
  for (int f = 0; f < layout.static_dim; ++f) x[f] = flat[layout.coords[f].flat_pos];
  return x;
}

}  // namespace

TEST_CASE("exact shapley on an additive model") {
  SerializedSample s = static_sample({1.0, 1.0});
  auto model = [&](const SerializedSample&, const std::vector<double>& flat) {
    const auto x = static_part(s, flat);
    return 2.0 * x[0] + 3.0 * x[1];
  };
  Attribution a = exact_shapley(model, s, per_feature_groups(s));
  CHECK(a.phi[0] == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(a.phi[1] == doctest::Approx(3.0).epsilon(1e-10));
  CHECK(a.base_value == doctest::Approx(0.0));
  CHECK(a.full_value == doctest::Approx(5.0));
}

TEST_CASE("null player gets zero attribution") {
  SerializedSample s = static_sample({1.0, 1.0, 7.0});
  auto model = [&](const SerializedSample&, const std::vector<double>& flat) {
    const auto x = static_part(s, flat);
    return x[0] * x[1];  // ignores x[2]
  };
  Attribution a = exact_shapley(model, s, per_feature_groups(s));
  CHECK(a.phi[2] == doctest::Approx(0.0));
}

TEST_CASE("symmetric features with identical roles get equal attribution") {
  SerializedSample s = static_sample({0.7, 0.7, 0.2});
  auto model = [&](const SerializedSample&, const std::vector<double>& flat) {
    const auto x = static_part(s, flat);
    return std::tanh(x[0] + x[1]) + 0.3 * x[2];
  };
  Attribution a = exact_shapley(model, s, per_feature_groups(s));
  CHECK(a.phi[0] == doctest::Approx(a.phi[1]).epsilon(1e-12));
}

TEST_CASE("efficiency holds on a random nonlinear model") {
  Rng rng(31);
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<double> values(6);
    for (auto& v : values) v = rng.uniform(-1.0, 1.0);
    SerializedSample s = static_sample(values);
    std::vector<double> w(6);
    for (auto& v : w) v = rng.normal();
    auto model = [&](const SerializedSample&, const std::vector<double>& flat) {
      const auto x = static_part(s, flat);
      double z = 0.4 * x[0] * x[1];
      for (int i = 0; i < 6; ++i) z += w[i] * x[i];
      return 1.0 / (1.0 + std::exp(-z));
    };
    Attribution a = exact_shapley(model, s, per_feature_groups(s));
    double sum = 0.0;
    for (double p : a.phi) sum += p;
    CHECK(sum == doctest::Approx(a.full_value - a.base_value).epsilon(1e-8));
  }
}

TEST_CASE("exact shapley refuses more than 15 groups") {
  SerializedSample s = static_sample(std::vector<double>(16, 1.0));
  auto model = [](const SerializedSample&, const std::vector<double>&) { return 0.0; };
  CHECK_THROWS_AS(exact_shapley(model, s, per_feature_groups(s)), mmpred::config_error);
}

TEST_CASE("kernel shap with full enumeration matches the exact oracle") {
  Rng rng(37);
  const int M = 10;
  std::vector<double> values(M);
  for (auto& v : values) v = rng.uniform(0.2, 1.0);
  SerializedSample s = static_sample(values);
  std::vector<double> w(M);
  for (auto& v : w) v = rng.normal();

  SUBCASE("linear model matches to 1e-8") {
    auto model = [&](const SerializedSample&, const std::vector<double>& flat) {
      const auto x = static_part(s, flat);
      double z = 0.1;
      for (int i = 0; i < M; ++i) z += w[i] * x[i];
      return z;
    };
    Attribution exact = exact_shapley(model, s, per_feature_groups(s));
    KernelShapOptions opt;
    opt.n_coalitions = 1 << M;
    Attribution kernel = kernel_shap(model, s, per_feature_groups(s), opt);
    for (int i = 0; i < M; ++i) {
      CHECK(kernel.phi[i] == doctest::Approx(exact.phi[i]).epsilon(1e-8));
    }
  }

  SUBCASE("nonlinear model matches to 1e-6 under full enumeration") {
    auto model = [&](const SerializedSample&, const std::vector<double>& flat) {
      const auto x = static_part(s, flat);
      double z = 0.5 * x[0] * x[1] - 0.7 * x[2] * x[3] * x[4];
      for (int i = 0; i < M; ++i) z += w[i] * x[i];
      return 1.0 / (1.0 + std::exp(-z));
    };
    Attribution exact = exact_shapley(model, s, per_feature_groups(s));
    KernelShapOptions opt;
    opt.n_coalitions = 1 << M;
    Attribution kernel = kernel_shap(model, s, per_feature_groups(s), opt);
    for (int i = 0; i < M; ++i) {
      CHECK(std::fabs(kernel.phi[i] - exact.phi[i]) < 1e-6);
    }
  }
}

TEST_CASE("kernel shap converges to exact as the coalition budget doubles") {
  Rng rng(41);
  const int M = 10;
  std::vector<double> values(M);
  for (auto& v : values) v = rng.uniform(0.2, 1.0);
  SerializedSample s = static_sample(values);
  std::vector<double> w(M);
  for (auto& v : w) v = rng.normal();
  auto model = [&](const SerializedSample&, const std::vector<double>& flat) {
    const auto x = static_part(s, flat);
    double z = 0.6 * x[0] * x[1];
    for (int i = 0; i < M; ++i) z += w[i] * x[i];
    return 1.0 / (1.0 + std::exp(-z));
  };
  Attribution exact = exact_shapley(model, s, per_feature_groups(s));

  auto median_err = [&](int budget) {
    std::vector<double> errs;
    for (uint64_t seed = 0; seed < 5; ++seed) {
      KernelShapOptions opt;
      opt.n_coalitions = budget;
      opt.seed = seed;
      Attribution k = kernel_shap(model, s, per_feature_groups(s), opt);
      double sup = 0.0;
      for (int i = 0; i < M; ++i) sup = std::max(sup, std::fabs(k.phi[i] - exact.phi[i]));
      errs.push_back(sup);
    }
    std::sort(errs.begin(), errs.end());
    return errs[2];
  };
  double prev = 1e300;
  for (int budget : {64, 128, 256, 512, 1024}) {
    const double err = median_err(budget);
    CHECK(err <= prev + 1e-12);  // non-strict decrease
    prev = err;
  }
  // The full-enumeration budget (2^10) is effectively exact.
  CHECK(median_err(1 << M) < 1e-6);
}

TEST_CASE("deterministic in seed") {
  SerializedSample s = static_sample({0.3, 0.9, 0.5, 0.1, 0.7});
  auto model = [&](const SerializedSample&, const std::vector<double>& flat) {
    const auto x = static_part(s, flat);
    return x[0] + 2.0 * x[1] * x[2] - x[3] + 0.5 * x[4];
  };
  KernelShapOptions opt;
  opt.n_coalitions = 16;
  opt.seed = 99;
  Attribution a = kernel_shap(model, s, per_feature_groups(s), opt);
  Attribution b = kernel_shap(model, s, per_feature_groups(s), opt);
  CHECK(a.phi == b.phi);
}

TEST_CASE("modality relevance shares") {
  mmpred::prep::MultimodalSample m;
  m.static_values = {1.0, 0.0};
  m.labs = {2.0};
  m.meds = {1.0};
  m.note_tokens = {{5, 6}};
  m.note_months = {1};
  SerializedSample s = serialize(m, 1, 1, 1, 1);
  REQUIRE(s.n_features() == 6);

  SUBCASE("all mass on text") {
    Attribution a;
    a.phi = {0, 0, 0, 0, 0.4, -0.6};
    ModalityRelevance r = modality_relevance_of(a, s);
    CHECK(r.shares[3] == doctest::Approx(1.0));
    CHECK(r.shares[0] == doctest::Approx(0.0));
  }
  SUBCASE("equal magnitudes follow position counts") {
    Attribution a;
    a.phi = {0.5, -0.5, 0.5, 0.5, -0.5, 0.5};
    ModalityRelevance r = modality_relevance_of(a, s);
    CHECK(r.shares[0] == doctest::Approx(2.0 / 6.0));
    CHECK(r.shares[1] == doctest::Approx(1.0 / 6.0));
    CHECK(r.shares[2] == doctest::Approx(1.0 / 6.0));
    CHECK(r.shares[3] == doctest::Approx(2.0 / 6.0));
  }
  SUBCASE("all-zero attribution falls back to uniform with a flag") {
    Attribution a;
    a.phi.assign(6, 0.0);
    ModalityRelevance r = modality_relevance_of(a, s);
    CHECK(r.uniform_fallback);
    for (double v : r.shares) CHECK(v == doctest::Approx(0.25));
  }
}

TEST_CASE("top percentile selection") {
  std::vector<double> phi(1000);
  for (int i = 0; i < 1000; ++i) phi[i] = 0.001 * i;
  auto top = top_percentile_local(phi, 0.1);
  REQUIRE(top.size() == 1);
  CHECK(top[0] == 999);

  SUBCASE("ties at the cutoff are all included") {
    std::vector<double> tied = {1.0, 1.0, 0.5, 0.2};
    auto sel = top_percentile_local(tied, 10.0);  // k = 1 but two tie at 1.0
    CHECK(sel.size() == 2);
  }
  SUBCASE("invariant under positive rescaling") {
    std::vector<double> scaled(phi);
    for (auto& v : scaled) v *= 37.0;
    CHECK(top_percentile_local(scaled, 0.1) == top);
  }
}

TEST_CASE("perturbation curve endpoints and strategy behavior") {
  // Model: mean of the two informative static features; 6-feature sample.
  SerializedSample s = static_sample({1.0, 1.0, 0.2, 0.2, 0.2, 0.2});
  auto model = [&](const SerializedSample&, const std::vector<double>& flat) {
    const auto x = static_part(s, flat);
    return 0.5 * (x[0] + x[1]);
  };
  Attribution a = exact_shapley(model, s, per_feature_groups(s));
  std::vector<SerializedSample> samples = {s, s};
  std::vector<Attribution> attrs = {a, a};
  const std::vector<double> grid = {0.0, 1.0 / 6, 2.0 / 6, 3.0 / 6, 4.0 / 6, 5.0 / 6, 1.0};

  auto high = perturbation_curve(model, samples, attrs, MaskStrategy::high_to_low, grid, 5);
  auto low = perturbation_curve(model, samples, attrs, MaskStrategy::low_to_high, grid, 5);
  auto rnd = perturbation_curve(model, samples, attrs, MaskStrategy::random_order, grid, 5);

  CHECK(high.mean_output[0] == doctest::Approx(low.mean_output[0]));
  CHECK(high.mean_output[0] == doctest::Approx(rnd.mean_output[0]));
  CHECK(high.mean_output.back() == doctest::Approx(low.mean_output.back()));
  CHECK(high.mean_output.back() == doctest::Approx(rnd.mean_output.back()));
  // Masking the informative features first drops the output immediately.
  CHECK(high.mean_output[2] == doctest::Approx(0.0));
  CHECK(low.mean_output[2] == doctest::Approx(1.0));
  CHECK(output_drop_area(high) >= output_drop_area(rnd) - 1e-12);
  CHECK(output_drop_area(rnd) >= output_drop_area(low) - 1e-12);
  CHECK(crossing_fraction(high) < crossing_fraction(low));
}

TEST_CASE("grouped-by-modality attributions are cheap and consistent") {
  mmpred::prep::MultimodalSample m;
  m.static_values = {1.0};
  m.labs = {3.0, 4.0};
  m.meds = {1.0, 0.0};
  m.note_tokens = {{8}};
  m.note_months = {2};
  SerializedSample s = serialize(m, 1, 2, 1, 2);
  auto model = [&](const SerializedSample&, const std::vector<double>& flat) {
    double sum = 0.0;
    for (const auto& c : s.coords) sum += flat[c.flat_pos];
    return sum;
  };
  auto groups = per_modality_groups(s);
  CHECK(groups.size() == 4);
  Attribution a = exact_shapley(model, s, groups);
  double total = 0.0;
  for (double p : a.phi) total += p;
  CHECK(total == doctest::Approx(a.full_value - a.base_value).epsilon(1e-10));
}
