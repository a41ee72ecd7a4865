#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "mmpred/error.hpp"
#include "mmpred/metrics.hpp"
#include "mmpred/models.hpp"
#include "mmpred/rng.hpp"
#include "oracles.hpp"

using namespace mmpred::models;
using mmpred::Rng;
using mmpred::eval::auprc;
using mmpred::eval::auroc;

namespace {

// Linearly separable 8-point toy set in 2-D.
TabularData separable_toy() {
  TabularData t;
  t.n = 8;
  t.d = 2;
  t.x = {0.0, 0.0, 0.2, 0.5, 0.5, 0.1, 0.4, 0.4,
         2.0, 2.0, 2.2, 2.5, 2.5, 2.1, 2.4, 1.8};
  t.y = {0, 0, 0, 0, 1, 1, 1, 1};
  return t;
}

TabularData xor_2d(int n, uint64_t seed) {
  TabularData t;
  t.n = n;
  t.d = 2;
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    const int a = rng.bernoulli(0.5), b = rng.bernoulli(0.5);
    t.x.push_back(a + rng.uniform(-0.2, 0.2));
    t.x.push_back(b + rng.uniform(-0.2, 0.2));
    t.y.push_back(a ^ b);
  }
  return t;
}

double train_accuracy(const Model& m, const TabularData& t) {
  const auto probs = m.predict_proba(t);
  int correct = 0;
  for (int i = 0; i < t.n; ++i) correct += (probs[i] >= 0.5) == (t.y[i] == 1);
  return static_cast<double>(correct) / t.n;
}

// Minimal reference boosting on depth-2 trees, written independently as the
// learnability oracle for the XOR fixture: exhaustive two-level threshold
// search on logistic residuals.
struct OracleStump {
  int f1;
  double t1;
  int f2l, f2r;
  double t2l, t2r;
  double v_ll, v_lr, v_rl, v_rr;
};

double oracle_depth2_boost_auroc(const TabularData& t, int rounds) {
  const int n = t.n;
  std::vector<double> f(n, 0.0);
  auto best_split = [&](const std::vector<int>& rows, const std::vector<double>& r, int* feat,
                        double* thresh) {
    double best_gain = -1.0;
    for (int fe = 0; fe < t.d; ++fe) {
      std::vector<double> vals;
      for (int i : rows) vals.push_back(t.row(i)[fe]);
      std::sort(vals.begin(), vals.end());
      for (size_t v = 0; v + 1 < vals.size(); ++v) {
        if (vals[v] == vals[v + 1]) continue;
        const double th = 0.5 * (vals[v] + vals[v + 1]);
        double sl = 0, nl = 0, sr = 0, nr = 0;
        for (int i : rows) {
          if (t.row(i)[fe] <= th) {
            sl += r[i];
            ++nl;
          } else {
            sr += r[i];
            ++nr;
          }
        }
        if (nl == 0 || nr == 0) continue;
        const double gain = sl * sl / nl + sr * sr / nr;
        if (gain > best_gain) {
          best_gain = gain;
          *feat = fe;
          *thresh = th;
        }
      }
    }
    return best_gain >= 0.0;
  };
  for (int round = 0; round < rounds; ++round) {
    std::vector<double> r(n);
    for (int i = 0; i < n; ++i) r[i] = t.y[i] - 1.0 / (1.0 + std::exp(-f[i]));
    std::vector<int> all(n);
    std::iota(all.begin(), all.end(), 0);
    int f1;
    double t1;
    if (!best_split(all, r, &f1, &t1)) break;
    std::vector<int> left, right;
    for (int i : all) (t.row(i)[f1] <= t1 ? left : right).push_back(i);
    for (auto* side : {&left, &right}) {
      int f2;
      double t2;
      if (!best_split(*side, r, &f2, &t2)) {
        double s = 0;
        for (int i : *side) s += r[i];
        for (int i : *side) f[i] += 0.1 * s / side->size();
        continue;
      }
      for (int leaf = 0; leaf < 2; ++leaf) {
        double num = 0, den = 0;
        for (int i : *side) {
          const bool go_left = t.row(i)[f2] <= t2;
          if (go_left != (leaf == 0)) continue;
          const double p = 1.0 / (1.0 + std::exp(-f[i]));
          num += t.y[i] - p;
          den += p * (1 - p);
        }
        if (den <= 0) continue;
        for (int i : *side) {
          const bool go_left = t.row(i)[f2] <= t2;
          if (go_left == (leaf == 0)) f[i] += 0.1 * num / den;
        }
      }
    }
  }
  std::vector<double> probs(n);
  for (int i = 0; i < n; ++i) probs[i] = 1.0 / (1.0 + std::exp(-f[i]));
  return auroc(probs, t.y);
}

}  // namespace

TEST_CASE("grid fidelity against the literal hyperparameter table") {
  auto grid = default_grid(ModelKind::gbt);
  REQUIRE(grid.size() == 12);
  std::set<std::pair<int, int>> combos;
  for (const auto& hp : grid) {
    combos.insert({static_cast<int>(hp.get("n_estimators", 0)),
                   static_cast<int>(hp.get("max_depth", 0))});
  }
  for (int n_est : {100, 200, 300})
    for (int depth : {2, 3, 5, 10}) CHECK(combos.count({n_est, depth}) == 1);

  CHECK(default_grid(ModelKind::rforest).size() == 12);

  auto lr_grid = default_grid(ModelKind::logreg);
  REQUIRE(lr_grid.size() == 6);
  std::set<std::pair<double, std::string>> lr_combos;
  for (const auto& hp : lr_grid) lr_combos.insert({hp.get("C", 0), hp.get_cat("penalty", "")});
  for (double c : {0.1, 1.0, 10.0})
    for (const char* p : {"l1", "l2"}) CHECK(lr_combos.count({c, p}) == 1);

  auto mlp_grid = default_grid(ModelKind::mlp);
  REQUIRE(mlp_grid.size() == 6);
  auto rnn_grid = default_grid(ModelKind::gru_rnn);
  REQUIRE(rnn_grid.size() == 6);
  auto text_grid = default_grid(ModelKind::text_encoder);
  REQUIRE(text_grid.size() == 2);
  for (const auto& hp : text_grid) CHECK(hp.get("units_multiplier", 0) == 1.0);

  auto rocket_grid = default_grid(ModelKind::rocket);
  REQUIRE(rocket_grid.size() == 3);
  std::set<int> kernels;
  for (const auto& hp : rocket_grid) kernels.insert(static_cast<int>(hp.get("num_kernels", 0)));
  CHECK(kernels == std::set<int>({1000, 5000, 10000}));

  auto c22_grid = default_grid(ModelKind::c22features);
  REQUIRE(c22_grid.size() == 3);
  std::set<std::string> estimators;
  for (const auto& hp : c22_grid) estimators.insert(hp.get_cat("estimator", ""));
  CHECK(estimators == std::set<std::string>({"rforest200", "gbt200", "logreg"}));
}

TEST_CASE("logreg separates the separable toy set") {
  TabularData t = separable_toy();
  HyperPoint hp;
  hp.num["C"] = 10.0;
  hp.cat["penalty"] = "l2";
  auto m = fit_model(ModelKind::logreg, t, hp, 0);
  CHECK(train_accuracy(*m, t) == doctest::Approx(1.0));
  hp.cat["penalty"] = "l1";
  auto m_l1 = fit_model(ModelKind::logreg, t, hp, 0);
  CHECK(train_accuracy(*m_l1, t) == doctest::Approx(1.0));
}

TEST_CASE("logreg with zero weights predicts 0.5 everywhere") {
  mmpred::num::Checkpoint ck;
  ck.put("logreg.w", mmpred::num::Tensor::zeros(2, 1));
  ck.put("logreg.b", mmpred::num::Tensor::scalar(0.0));
  ck.put("logreg.l1", mmpred::num::Tensor::scalar(0.0));
  auto m = model_from_checkpoint(ModelKind::logreg, ck, 0);
  for (double p : m->predict_proba(separable_toy())) CHECK(p == doctest::Approx(0.5));
}

TEST_CASE("gbt learns XOR with depth-2 trees") {
  TabularData t = xor_2d(200, 5);
  // Learnability oracle first: reference depth-2 boosting must solve it.
  CHECK(oracle_depth2_boost_auroc(t, 100) >= 0.95);
  HyperPoint hp;
  hp.num["n_estimators"] = 100;
  hp.num["max_depth"] = 2;
  auto m = fit_model(ModelKind::gbt, t, hp, 0);
  CHECK(auroc(m->predict_proba(t), t.y) >= 0.95);
}

TEST_CASE("knn k=1 memorizes duplicate-free data; k>n rejected") {
  TabularData t = xor_2d(40, 7);
  HyperPoint hp;
  hp.num["k"] = 1;
  auto m = fit_model(ModelKind::knn, t, hp, 0);
  CHECK(train_accuracy(*m, t) == doctest::Approx(1.0));
  hp.num["k"] = 41;
  CHECK_THROWS_AS(fit_model(ModelKind::knn, t, hp, 0), mmpred::fit_error);
}

TEST_CASE("single-class labels are a fit error for every tabular kind") {
  TabularData t = separable_toy();
  std::fill(t.y.begin(), t.y.end(), 1);
  for (ModelKind k : {ModelKind::knn, ModelKind::logreg, ModelKind::gbt, ModelKind::rforest,
                      ModelKind::mlp}) {
    CHECK_THROWS_AS(fit_model(k, t, default_grid(k)[0], 0), mmpred::fit_error);
  }
}

TEST_CASE("rforest separates the toy set and stays deterministic") {
  TabularData t = xor_2d(120, 9);
  HyperPoint hp;
  hp.num["n_estimators"] = 100;
  hp.num["max_depth"] = 5;
  auto a = fit_model(ModelKind::rforest, t, hp, 3);
  auto b = fit_model(ModelKind::rforest, t, hp, 3);
  const auto pa = a->predict_proba(t);
  const auto pb = b->predict_proba(t);
  CHECK(pa == pb);
  CHECK(auroc(pa, t.y) > 0.95);
  auto c = fit_model(ModelKind::rforest, t, hp, 4);
  CHECK(c->predict_proba(t) != pa);  // different seed, different bootstrap
}

TEST_CASE("mlp hidden width follows units_multiplier") {
  TabularData t;
  t.n = 30;
  t.d = 10;
  Rng rng(11);
  for (int i = 0; i < t.n; ++i) {
    for (int f = 0; f < t.d; ++f) t.x.push_back(rng.uniform());
    t.y.push_back(i % 2);
  }
  TrainConfig cfg;
  cfg.max_epochs = 3;
  HyperPoint hp;
  hp.num["dropout"] = 0.2;
  hp.num["units_multiplier"] = 1;
  auto m = fit_model(ModelKind::mlp, t, hp, 0, cfg);
  CHECK(dynamic_cast<DeepModel*>(m.get())->latent_dim() == 10);
  hp.num["units_multiplier"] = 3;
  auto m3 = fit_model(ModelKind::mlp, t, hp, 0, cfg);
  CHECK(dynamic_cast<DeepModel*>(m3.get())->latent_dim() == 30);
}

TEST_CASE("mlp reaches the logreg oracle on separable data") {
  // Oracle: logreg must reach AUROC >= 0.99 on the same data, establishing
  // separability; then the MLP must too.
  TabularData t;
  t.n = 60;
  t.d = 2;
  Rng rng(13);
  for (int i = 0; i < t.n; ++i) {
    const int label = i % 2;
    t.x.push_back(label * 2.0 + rng.uniform(-0.5, 0.5));
    t.x.push_back(label * 2.0 + rng.uniform(-0.5, 0.5));
    t.y.push_back(label);
  }
  HyperPoint lr_hp;
  lr_hp.num["C"] = 10.0;
  auto oracle = fit_model(ModelKind::logreg, t, lr_hp, 0);
  REQUIRE(auroc(oracle->predict_proba(t), t.y) >= 0.99);

  HyperPoint hp;
  hp.num["dropout"] = 0.2;
  hp.num["units_multiplier"] = 2;
  TrainConfig cfg;
  cfg.max_epochs = 300;
  cfg.patience = 50;
  // Toy-scale training: 60 samples yield few optimizer steps per epoch, so
  // the step size is raised accordingly (lr is config, not contract).
  cfg.lr = 1e-2;
  cfg.batch_size = 16;
  // Capacity check: validate on the training set itself (12-sample internal
  // carves make early stopping too coarse to measure capacity).
  ModelInput val = t;
  for (uint64_t seed : {1, 3}) {  // seed 3 starts from an inverted ranking
    auto m = fit_model(ModelKind::mlp, t, hp, seed, cfg, &val);
    CHECK(auroc(m->predict_proba(t), t.y) >= 0.99);
  }
}

TEST_CASE("mlp on constant features predicts a constant") {
  TabularData t;
  t.n = 24;
  t.d = 3;
  for (int i = 0; i < t.n; ++i) {
    t.x.insert(t.x.end(), {1.0, 2.0, 3.0});
    t.y.push_back(i % 2);
  }
  HyperPoint hp;
  hp.num["dropout"] = 0.2;
  hp.num["units_multiplier"] = 1;
  TrainConfig cfg;
  cfg.max_epochs = 5;
  auto m = fit_model(ModelKind::mlp, t, hp, 0, cfg);
  const auto probs = m->predict_proba(t);
  for (double p : probs) CHECK(p == doctest::Approx(probs[0]).epsilon(1e-12));
}

TEST_CASE("rocket separates constant-vs-spike series") {
  // Oracle: a hand-built kernel's PPV feature separates the classes exactly.
  // Kernel [1,-1] with bias -1 stays negative on constant-zero series but
  // fires where the spike raises one value by +5.
  const int steps = 12;
  auto make = [&](int n, uint64_t seed) {
    SeriesData s;
    s.n = n;
    s.channels = 1;
    s.steps = steps;
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
      const int label = i % 2;
      std::vector<double> series(steps);
      for (auto& v : series) v = rng.uniform(-0.1, 0.1);
      if (label == 1) series[rng.uniform_int(0, steps - 1)] += 5.0;
      s.x.insert(s.x.end(), series.begin(), series.end());
      s.y.push_back(label);
    }
    return s;
  };
  SeriesData train = make(60, 1);
  {
    int separable = 0;
    for (int i = 0; i < train.n; ++i) {
      double ppv = 0.0;
      int total = 0;
      for (int start = 0; start + 1 < steps; ++start) {
        const double conv = train.at(i, 0, start) - train.at(i, 0, start + 1) - 1.0;
        ppv += conv > 0.0;
        ++total;
      }
      ppv /= total;
      separable += (ppv > 0.0) == (train.y[i] == 1);
    }
    REQUIRE(separable >= 57);  // the single PPV feature is nearly perfect
  }
  HyperPoint hp;
  hp.num["num_kernels"] = 500;
  auto m = fit_model(ModelKind::rocket, train, hp, 2);
  SeriesData test = make(30, 99);
  const auto probs = m->predict_proba(test);
  int correct = 0;
  for (int i = 0; i < test.n; ++i) correct += (probs[i] >= 0.5) == (test.y[i] == 1);
  CHECK(static_cast<double>(correct) / test.n >= 0.9);
}

TEST_CASE("rocket on identical series in both classes gives AUROC 0.5") {
  SeriesData s;
  s.n = 30;
  s.channels = 1;
  s.steps = 8;
  for (int i = 0; i < s.n; ++i) {
    for (int t = 0; t < 8; ++t) s.x.push_back(std::sin(0.3 * t));
    s.y.push_back(i % 2);
  }
  HyperPoint hp;
  hp.num["num_kernels"] = 200;
  auto m = fit_model(ModelKind::rocket, s, hp, 0);
  CHECK(auroc(m->predict_proba(s), s.y) == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("c22 features: hand-checked values") {
  const auto f = c22_channel_features({1, 2, 3, 4, 5, 6});
  CHECK(f[0] == doctest::Approx(3.5));              // mean
  CHECK(f[2] == doctest::Approx(3.0));              // streak above mean: 4,5,6
  CHECK(f[5] == doctest::Approx(1.0));              // slope
  CHECK(f[6] == doctest::Approx(0.5));              // proportion above mean
  CHECK(f[7] == doctest::Approx(5.0));              // last minus first
  const auto g = c22_channel_features({2, 2, 2, 2});
  CHECK(g[0] == doctest::Approx(2.0));
  CHECK(g[1] == doctest::Approx(0.0));
  CHECK(g[6] == doctest::Approx(0.0));
}

TEST_CASE("c22 classifier fits and routes through the chosen estimator") {
  SeriesData s;
  s.n = 60;
  s.channels = 2;
  s.steps = 6;
  Rng rng(17);
  for (int i = 0; i < s.n; ++i) {
    const int label = i % 2;
    for (int c = 0; c < 2; ++c)
      for (int t = 0; t < 6; ++t) s.x.push_back(rng.uniform() + (c == 0 ? label * 1.5 : 0.0));
    s.y.push_back(label);
  }
  for (const char* est : {"rforest200", "gbt200", "logreg"}) {
    HyperPoint hp;
    hp.cat["estimator"] = est;
    auto m = fit_model(ModelKind::c22features, s, hp, 0);
    CHECK(auroc(m->predict_proba(s), s.y) > 0.85);
  }
}

TEST_CASE("gru beats the time-averaged baseline when only month 6 carries signal") {
  // Construction where averaging provably destroys separation: positives get
  // +2.5 in month 6 and -0.5 in months 1..5, so the 6-month mean is class-
  // independent while the last step separates.
  auto make = [&](int n, uint64_t seed) {
    SeriesData s;
    s.n = n;
    s.channels = 2;
    s.steps = 6;
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
      const int label = i % 2;
      for (int c = 0; c < 2; ++c) {
        for (int t = 0; t < 6; ++t) {
          double v = rng.normal() * 0.6;
          if (c == 0 && label == 1) v += t == 5 ? 2.5 : -0.5;
          s.x.push_back(v);
        }
      }
      s.y.push_back(label);
    }
    return s;
  };

  double gru_sum = 0.0, avg_sum = 0.0, prevalence_sum = 0.0;
  for (uint64_t seed = 0; seed < 5; ++seed) {
    SeriesData train = make(200, 100 + seed);
    SeriesData test = make(120, 900 + seed);

    // Baseline: logistic regression on per-channel time means.
    auto time_avg = [](const SeriesData& s) {
      TabularData t;
      t.n = s.n;
      t.d = s.channels;
      for (int i = 0; i < s.n; ++i) {
        for (int c = 0; c < s.channels; ++c) {
          double mean = 0.0;
          for (int m = 0; m < s.steps; ++m) mean += s.at(i, c, m);
          t.x.push_back(mean / s.steps);
        }
      }
      t.y = s.y;
      return t;
    };
    HyperPoint lr_hp;
    lr_hp.num["C"] = 1.0;
    auto baseline = fit_model(ModelKind::logreg, time_avg(train), lr_hp, seed);
    avg_sum += auprc(baseline->predict_proba(time_avg(test)), test.y);

    HyperPoint hp;
    hp.num["dropout"] = 0.2;
    hp.num["units_multiplier"] = 2;
    TrainConfig cfg;
    cfg.max_epochs = 80;
    cfg.patience = 15;
    auto gru = fit_model(ModelKind::gru_rnn, train, hp, seed, cfg);
    const auto gru_probs = gru->predict_proba(test);
    gru_sum += auprc(gru_probs, test.y);
    prevalence_sum += 0.5;

    if (seed == 0) {
      // Shuffled-month control: permuting months scrambles the positional
      // signal the trained model depends on; AUPRC falls toward prevalence.
      SeriesData shuffled = test;
      Rng rng(424242);
      for (int i = 0; i < shuffled.n; ++i) {
        std::vector<int> perm(6);
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm);
        for (int c = 0; c < shuffled.channels; ++c) {
          std::vector<double> orig(6);
          for (int m = 0; m < 6; ++m) orig[m] = test.at(i, c, m);
          for (int m = 0; m < 6; ++m) {
            shuffled.x[(static_cast<size_t>(i) * shuffled.channels + c) * 6 + m] = orig[perm[m]];
          }
        }
      }
      const double clean = auprc(gru_probs, test.y);
      const double permuted = auprc(gru->predict_proba(shuffled), test.y);
      const double prevalence = 0.5;  // computed exactly from the construction
      CHECK(permuted < clean);
      CHECK(permuted - prevalence < 0.6 * (clean - prevalence));
    }
  }
  CHECK(gru_sum / 5.0 >= avg_sum / 5.0 + 0.05);
}

TEST_CASE("gru units_multiplier 0 is rejected by config validation") {
  SeriesData s;
  s.n = 20;
  s.channels = 1;
  s.steps = 6;
  for (int i = 0; i < 20; ++i) {
    for (int t = 0; t < 6; ++t) s.x.push_back(0.1 * i);
    s.y.push_back(i % 2);
  }
  HyperPoint hp;
  hp.num["units_multiplier"] = 0;
  CHECK_THROWS_AS(fit_model(ModelKind::gru_rnn, s, hp, 0), mmpred::config_error);
}

TEST_CASE("text encoder learns a planted suspicion token") {
  // 500-patient synthetic corpus: positives carry token 7 somewhere.
  const int vocab = 120;
  auto make = [&](int n, uint64_t seed) {
    TokenData t;
    t.vocab = vocab;
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
      const int label = i % 2;
      std::vector<int> stream;
      const int len = 10 + static_cast<int>(rng.uniform_int(0, 10));
      for (int j = 0; j < len; ++j) {
        stream.push_back(static_cast<int>(rng.uniform_int(10, vocab - 1)));
      }
      if (label == 1) stream[rng.uniform_int(0, len - 1)] = 7;
      t.streams.push_back(std::move(stream));
      t.y.push_back(label);
    }
    return t;
  };
  TokenData train = make(350, 3);
  TokenData test = make(150, 77);

  // Oracle: bag-of-words logistic regression must reach >= 0.95, establishing
  // that the signal exists in the token streams.
  auto bow = [&](const TokenData& t) {
    TabularData tab;
    tab.n = t.n();
    tab.d = vocab;
    tab.x.assign(static_cast<size_t>(tab.n) * vocab, 0.0);
    for (int i = 0; i < tab.n; ++i) {
      for (int id : t.streams[i]) tab.x[static_cast<size_t>(i) * vocab + id] += 1.0;
    }
    tab.y = t.y;
    return tab;
  };
  HyperPoint lr_hp;
  lr_hp.num["C"] = 1.0;
  auto oracle = fit_model(ModelKind::logreg, bow(train), lr_hp, 0);
  REQUIRE(auroc(oracle->predict_proba(bow(test)), test.y) >= 0.95);

  HyperPoint hp;
  hp.num["dropout"] = 0.2;
  hp.num["units_multiplier"] = 1;
  TrainConfig cfg;
  cfg.text_d_model = 16;
  cfg.text_heads = 2;
  cfg.text_blocks = 1;
  cfg.text_ffn = 32;
  cfg.max_epochs = 30;
  cfg.patience = 8;
  auto m = fit_model(ModelKind::text_encoder, train, hp, 1, cfg);
  CHECK(auroc(m->predict_proba(test), test.y) >= 0.9);

  // PAD-only and empty streams fall back to the prevalence prior.
  TokenData blank;
  blank.vocab = vocab;
  blank.streams = {{}, {0, 0, 0}};
  blank.y = {0, 0};
  const auto prior = m->predict_proba(blank);
  CHECK(prior[0] == doctest::Approx(0.5));  // training prevalence
  CHECK(prior[1] == doctest::Approx(prior[0]));
}

TEST_CASE("modality mismatch raises an inference error") {
  TabularData t = separable_toy();
  HyperPoint hp;
  hp.num["C"] = 1.0;
  auto m = fit_model(ModelKind::logreg, t, hp, 0);
  SeriesData s;
  s.n = 2;
  s.channels = 1;
  s.steps = 6;
  s.x.assign(12, 0.0);
  CHECK_THROWS_AS(m->predict_proba(s), mmpred::inference_error);
}

TEST_CASE("calibration smoke on null data: mean prediction near prevalence") {
  TabularData t;
  t.n = 200;
  t.d = 4;
  Rng rng(23);
  int pos = 0;
  for (int i = 0; i < t.n; ++i) {
    for (int f = 0; f < 4; ++f) t.x.push_back(rng.uniform());
    const int label = rng.bernoulli(0.3) ? 1 : 0;
    pos += label;
    t.y.push_back(label);
  }
  const double prevalence = static_cast<double>(pos) / t.n;
  for (ModelKind k : {ModelKind::logreg, ModelKind::gbt}) {
    auto m = fit_model(k, t, default_grid(k)[0], 0);
    const auto probs = m->predict_proba(t);
    double mean = 0.0;
    for (double p : probs) mean += p;
    mean /= t.n;
    CHECK(mean > prevalence - 0.15);
    CHECK(mean < prevalence + 0.15);
  }
}

TEST_CASE("checkpoint round trip preserves predictions for every kind") {
  TabularData tab = xor_2d(60, 31);
  SeriesData ser;
  ser.n = 40;
  ser.channels = 2;
  ser.steps = 6;
  Rng rng(33);
  for (int i = 0; i < ser.n; ++i) {
    for (int c = 0; c < 2; ++c)
      for (int t = 0; t < 6; ++t) ser.x.push_back(rng.normal() + (c == 0 ? ser.n % 2 : 0));
    ser.y.push_back(i % 2);
  }
  TokenData tok;
  tok.vocab = 60;
  for (int i = 0; i < 30; ++i) {
    std::vector<int> stream;
    for (int j = 0; j < 8; ++j) stream.push_back(static_cast<int>(rng.uniform_int(4, 59)));
    if (i % 2 == 1) stream[0] = 5;
    tok.streams.push_back(stream);
    tok.y.push_back(i % 2);
  }
  TrainConfig cfg;
  cfg.max_epochs = 4;
  cfg.text_d_model = 8;
  cfg.text_heads = 2;
  cfg.text_blocks = 1;
  cfg.text_ffn = 16;

  auto roundtrip = [&](ModelKind kind, const ModelInput& data) {
    auto m = fit_model(kind, data, default_grid(kind)[0], 7, cfg);
    const auto before = m->predict_proba(data);
    const std::string path = std::string("model_rt_") + kind_name(kind) + ".bin";
    m->save(path);
    auto loaded = model_from_checkpoint(kind, mmpred::num::Checkpoint::load(path), 7);
    const auto after = loaded->predict_proba(data);
    std::remove(path.c_str());
    REQUIRE(before.size() == after.size());
    for (size_t i = 0; i < before.size(); ++i) {
      CHECK(before[i] == doctest::Approx(after[i]).epsilon(1e-12));
    }
  };
  roundtrip(ModelKind::knn, tab);
  roundtrip(ModelKind::logreg, tab);
  roundtrip(ModelKind::gbt, tab);
  roundtrip(ModelKind::rforest, tab);
  roundtrip(ModelKind::mlp, tab);
  roundtrip(ModelKind::rocket, ser);
  roundtrip(ModelKind::c22features, ser);
  roundtrip(ModelKind::gru_rnn, ser);
  roundtrip(ModelKind::text_encoder, tok);
}

TEST_CASE("determinism: same kind, data, hyperparameters, seed") {
  TabularData t = xor_2d(80, 41);
  TrainConfig cfg;
  cfg.max_epochs = 10;
  for (ModelKind k : {ModelKind::logreg, ModelKind::gbt, ModelKind::rforest, ModelKind::mlp}) {
    auto a = fit_model(k, t, default_grid(k)[0], 11, cfg);
    auto b = fit_model(k, t, default_grid(k)[0], 11, cfg);
    CHECK(a->predict_proba(t) == b->predict_proba(t));
  }
}

TEST_CASE("text encoder masked-token pretraining pass runs and fits") {
  const int vocab = 80;
  TokenData t;
  t.vocab = vocab;
  Rng rng(51);
  for (int i = 0; i < 60; ++i) {
    std::vector<int> stream;
    for (int j = 0; j < 12; ++j) stream.push_back(static_cast<int>(rng.uniform_int(6, vocab - 1)));
    if (i % 2 == 1) stream[4] = 5;
    t.streams.push_back(std::move(stream));
    t.y.push_back(i % 2);
  }
  HyperPoint hp;
  hp.num["dropout"] = 0.2;
  hp.num["units_multiplier"] = 1;
  TrainConfig cfg;
  cfg.text_d_model = 8;
  cfg.text_heads = 2;
  cfg.text_blocks = 1;
  cfg.text_ffn = 16;
  cfg.lr = 1e-2;  // toy-scale step size, as elsewhere
  cfg.max_epochs = 30;
  cfg.patience = 30;
  cfg.text_pretrain = true;
  cfg.pretrain_epochs = 1;
  ModelInput val = t;
  auto m = fit_model(ModelKind::text_encoder, t, hp, 3, cfg, &val);
  const auto probs = m->predict_proba(t);
  for (double p : probs) {
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
  }
  CHECK(auroc(probs, t.y) > 0.6);  // the planted token is still learnable
}
