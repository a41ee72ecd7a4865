#include "mmpred/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "mmpred/error.hpp"
#include "mmpred/linalg.hpp"
#include "mmpred/metrics.hpp"
#include "mmpred/rng.hpp"
#include "mmpred/tokenizer.hpp"

namespace mmpred::models {

using num::Adam;
using num::BatchNorm1d;
using num::Checkpoint;
using num::Dense;
using num::Dropout;
using num::GRUCell;
using num::NamedParam;
using num::Tensor;
using num::TransformerBlock;

namespace {

constexpr int kPadId = prep::WordPieceTokenizer::kPad;
constexpr int kMaskId = prep::WordPieceTokenizer::kMask;

double prevalence(const std::vector<int>& y) {
  double s = 0.0;
  for (int v : y) s += v;
  return y.empty() ? 0.5 : s / static_cast<double>(y.size());
}

void require_binary_two_class(const std::vector<int>& y, const char* who) {
  int pos = 0;
  for (int v : y) {
    if (v != 0 && v != 1) throw fit_error(std::string(who) + ": labels must be binary");
    pos += v;
  }
  if (pos == 0 || pos == static_cast<int>(y.size())) {
    throw fit_error(std::string(who) + ": single-class training labels");
  }
}

void require_finite(const std::vector<double>& x, const char* who) {
  for (double v : x) {
    if (!std::isfinite(v)) throw fit_error(std::string(who) + ": non-finite feature value");
  }
}

const TabularData& as_tabular(const ModelInput& in, const char* who) {
  if (const auto* t = std::get_if<TabularData>(&in)) return *t;
  throw inference_error(std::string(who) + ": expected tabular input");
}

const SeriesData& as_series(const ModelInput& in, const char* who) {
  if (const auto* s = std::get_if<SeriesData>(&in)) return *s;
  throw inference_error(std::string(who) + ": expected time-series input");
}

const TokenData& as_tokens(const ModelInput& in, const char* who) {
  if (const auto* t = std::get_if<TokenData>(&in)) return *t;
  throw inference_error(std::string(who) + ": expected token-sequence input");
}

Tensor tensor_of_labels(const std::vector<int>& y, const std::vector<int>& rows) {
  Tensor t = Tensor::zeros(static_cast<int>(rows.size()), 1);
  for (size_t i = 0; i < rows.size(); ++i) t.data()[i] = y[rows[i]];
  return t;
}

// Stratified internal holdout for early stopping when no validation set is
// passed (largest-remainder semantics are overkill here; per-class shuffles).
std::pair<std::vector<int>, std::vector<int>> carve_validation(const std::vector<int>& y,
                                                               double fraction, uint64_t seed) {
  std::vector<int> pos, neg;
  for (size_t i = 0; i < y.size(); ++i) (y[i] == 1 ? pos : neg).push_back(static_cast<int>(i));
  Rng rng(seed ^ 0x45535456ULL);
  rng.shuffle(pos);
  rng.shuffle(neg);
  std::vector<int> train, val;
  auto divide = [&](std::vector<int>& cls) {
    int n_val = std::max(1, static_cast<int>(std::llround(fraction * cls.size())));
    if (n_val >= static_cast<int>(cls.size())) n_val = static_cast<int>(cls.size()) - 1;
    for (size_t i = 0; i < cls.size(); ++i) {
      (static_cast<int>(i) < n_val ? val : train).push_back(cls[i]);
    }
  };
  divide(pos);
  divide(neg);
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {train, val};
}

}  // namespace

const char* kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::knn: return "knn";
    case ModelKind::logreg: return "logreg";
    case ModelKind::gbt: return "gbt";
    case ModelKind::rforest: return "rforest";
    case ModelKind::mlp: return "mlp";
    case ModelKind::rocket: return "rocket";
    case ModelKind::c22features: return "c22features";
    case ModelKind::gru_rnn: return "gru_rnn";
    case ModelKind::text_encoder: return "text_encoder";
  }
  return "?";
}

ModelKind kind_from_name(const std::string& name) {
  for (ModelKind k : {ModelKind::knn, ModelKind::logreg, ModelKind::gbt, ModelKind::rforest,
                      ModelKind::mlp, ModelKind::rocket, ModelKind::c22features,
                      ModelKind::gru_rnn, ModelKind::text_encoder}) {
    if (name == kind_name(k)) return k;
  }
  throw config_error("unknown model kind '" + name + "'");
}

bool kind_is_deep(ModelKind k) {
  return k == ModelKind::mlp || k == ModelKind::gru_rnn || k == ModelKind::text_encoder;
}

double HyperPoint::get(const std::string& key, double fallback) const {
  auto it = num.find(key);
  return it == num.end() ? fallback : it->second;
}

std::string HyperPoint::get_cat(const std::string& key, const std::string& fallback) const {
  auto it = cat.find(key);
  return it == cat.end() ? fallback : it->second;
}

std::string HyperPoint::to_string() const {
  std::string s;
  for (const auto& [k, v] : num) {
    if (!s.empty()) s += ";";
    char buf[64];
    if (v == std::floor(v) && std::fabs(v) < 1e15) {
      std::snprintf(buf, sizeof(buf), "%s=%lld", k.c_str(), static_cast<long long>(v));
    } else {
      std::snprintf(buf, sizeof(buf), "%s=%g", k.c_str(), v);
    }
    s += buf;
  }
  for (const auto& [k, v] : cat) {
    if (!s.empty()) s += ";";
    s += k + "=" + v;
  }
  return s;
}

std::vector<HyperPoint> default_grid(ModelKind kind) {
  std::vector<HyperPoint> grid;
  auto add = [&](std::initializer_list<std::pair<std::string, double>> nums,
                 std::initializer_list<std::pair<std::string, std::string>> cats = {}) {
    HyperPoint hp;
    for (const auto& [k, v] : nums) hp.num[k] = v;
    for (const auto& [k, v] : cats) hp.cat[k] = v;
    grid.push_back(std::move(hp));
  };
  switch (kind) {
    case ModelKind::gbt:
    case ModelKind::rforest:
      for (double n_est : {100.0, 200.0, 300.0})
        for (double depth : {2.0, 3.0, 5.0, 10.0})
          add({{"n_estimators", n_est}, {"max_depth", depth}});
      break;
    case ModelKind::logreg:
      for (double c : {0.1, 1.0, 10.0})
        for (const char* pen : {"l1", "l2"}) add({{"C", c}}, {{"penalty", pen}});
      break;
    case ModelKind::mlp:
    case ModelKind::gru_rnn:
      for (double drop : {0.2, 0.3})
        for (double mult : {1.0, 2.0, 3.0})
          add({{"dropout", drop}, {"units_multiplier", mult}});
      break;
    case ModelKind::text_encoder:
      for (double drop : {0.2, 0.3}) add({{"dropout", drop}, {"units_multiplier", 1.0}});
      break;
    case ModelKind::rocket:
      for (double k : {1000.0, 5000.0, 10000.0}) add({{"num_kernels", k}});
      break;
    case ModelKind::c22features:
      for (const char* est : {"rforest200", "gbt200", "logreg"}) add({}, {{"estimator", est}});
      break;
    case ModelKind::knn:
      // No fixed search grid for knn; small documented default.
      for (double k : {5.0, 11.0, 21.0}) add({{"k", k}});
      break;
  }
  return grid;
}

void Model::save(const std::string& checkpoint_path) const {
  to_checkpoint().save(checkpoint_path);
}

std::vector<double> predict_proba(const Model& model, const ModelInput& data) {
  std::vector<double> probs = model.predict_proba(data);
  for (double p : probs) {
    if (!std::isfinite(p) || p < 0.0 || p > 1.0) {
      throw inference_error("predict_proba produced a value outside [0,1]");
    }
  }
  return probs;
}

// ===================== K-nearest neighbours =====================

class KnnModel final : public Model {
 public:
  KnnModel(const TabularData& train, int k) : k_(k), d_(train.d), x_(train.x), y_(train.y) {
    if (k_ < 1) throw fit_error("knn: k must be >= 1");
    if (k_ > train.n) {
      throw fit_error("knn: k=" + std::to_string(k_) + " exceeds n=" + std::to_string(train.n));
    }
  }

  ModelKind kind() const override { return ModelKind::knn; }

  std::vector<double> predict_proba(const ModelInput& data) const override {
    const TabularData& t = as_tabular(data, "knn");
    if (t.d != d_) throw inference_error("knn: feature width mismatch");
    const int n_train = static_cast<int>(y_.size());
    std::vector<double> out(t.n, 0.0);
    std::vector<std::pair<double, int>> dist(n_train);
    for (int i = 0; i < t.n; ++i) {
      const double* q = t.row(i);
      for (int j = 0; j < n_train; ++j) {
        const double* r = x_.data() + static_cast<size_t>(j) * d_;
        double s = 0.0;
        for (int f = 0; f < d_; ++f) {
          const double diff = q[f] - r[f];
          s += diff * diff;
        }
        dist[j] = {std::sqrt(s), j};
      }
      std::partial_sort(dist.begin(), dist.begin() + k_, dist.end());
      // Distance-weighted vote.
      double wsum = 0.0, psum = 0.0;
      for (int j = 0; j < k_; ++j) {
        const double w = 1.0 / (dist[j].first + 1e-9);
        wsum += w;
        psum += w * y_[dist[j].second];
      }
      out[i] = psum / wsum;
    }
    return out;
  }

  Checkpoint to_checkpoint() const override {
    Checkpoint ck;
    const int n = static_cast<int>(y_.size());
    ck.put("knn.x", Tensor::from_vec(n, d_, x_));
    std::vector<double> yd(y_.begin(), y_.end());
    ck.put("knn.y", Tensor::from_vec(n, 1, yd));
    ck.put("knn.k", Tensor::scalar(k_));
    return ck;
  }

  static std::unique_ptr<KnnModel> from_checkpoint(const Checkpoint& ck) {
    const Tensor& x = ck.get("knn.x");
    const Tensor& y = ck.get("knn.y");
    TabularData t;
    t.n = x.rows();
    t.d = x.cols();
    t.x = x.vec();
    t.y.assign(y.vec().begin(), y.vec().end());
    return std::make_unique<KnnModel>(t, static_cast<int>(ck.get("knn.k").item()));
  }

 private:
  int k_;
  int d_;
  std::vector<double> x_;
  std::vector<int> y_;
};

// ===================== Logistic regression =====================

// Penalized maximum likelihood: minimize mean log-loss + pen(w)/(C*n),
// intercept unpenalized. Proximal gradient (ISTA) handles l1; plain gradient
// steps handle l2. Deterministic, no line search: step = 1/L with L from the
// logistic Hessian bound 0.25 * lambda_max(X^T X) / n.
class LogRegModel final : public Model {
 public:
  LogRegModel(const TabularData& train, double c, const std::string& penalty)
      : d_(train.d), penalty_(penalty) {
    require_binary_two_class(train.y, "logreg");
    require_finite(train.x, "logreg");
    const int n = train.n;
    const double lambda = 1.0 / (c * n);
    w_.assign(d_, 0.0);
    b_ = 0.0;

    // Power iteration for lambda_max(X^T X).
    std::vector<double> v(d_, 1.0 / std::sqrt(static_cast<double>(d_)));
    std::vector<double> xv(n), xtxv(d_);
    double eig = 1.0;
    for (int it = 0; it < 30; ++it) {
      for (int i = 0; i < n; ++i) {
        const double* r = train.row(i);
        double s = 0.0;
        for (int f = 0; f < d_; ++f) s += r[f] * v[f];
        xv[i] = s;
      }
      std::fill(xtxv.begin(), xtxv.end(), 0.0);
      for (int i = 0; i < n; ++i) {
        const double* r = train.row(i);
        for (int f = 0; f < d_; ++f) xtxv[f] += r[f] * xv[i];
      }
      double norm = 0.0;
      for (double x : xtxv) norm += x * x;
      norm = std::sqrt(norm);
      if (norm < 1e-30) break;
      eig = norm;
      for (int f = 0; f < d_; ++f) v[f] = xtxv[f] / norm;
    }
    const double lipschitz = 0.25 * eig / n + (penalty_ == "l2" ? lambda : 0.0) + 1e-12;
    const double step = 1.0 / lipschitz;

    std::vector<double> grad(d_);
    for (int iter = 0; iter < 5000; ++iter) {
      std::fill(grad.begin(), grad.end(), 0.0);
      double grad_b = 0.0;
      for (int i = 0; i < n; ++i) {
        const double* r = train.row(i);
        double z = b_;
        for (int f = 0; f < d_; ++f) z += w_[f] * r[f];
        const double p = 1.0 / (1.0 + std::exp(-z));
        const double err = (p - train.y[i]) / n;
        for (int f = 0; f < d_; ++f) grad[f] += err * r[f];
        grad_b += err;
      }
      double max_delta = 0.0;
      for (int f = 0; f < d_; ++f) {
        double next;
        if (penalty_ == "l1") {
          const double u = w_[f] - step * grad[f];
          const double thresh = step * lambda;
          next = u > thresh ? u - thresh : (u < -thresh ? u + thresh : 0.0);
        } else {
          next = w_[f] - step * (grad[f] + lambda * w_[f]);
        }
        max_delta = std::max(max_delta, std::fabs(next - w_[f]));
        w_[f] = next;
      }
      const double next_b = b_ - step * grad_b;
      max_delta = std::max(max_delta, std::fabs(next_b - b_));
      b_ = next_b;
      if (max_delta < 1e-10) break;
    }
  }

  LogRegModel(std::vector<double> w, double b, std::string penalty)
      : d_(static_cast<int>(w.size())), penalty_(std::move(penalty)), w_(std::move(w)), b_(b) {}

  ModelKind kind() const override { return ModelKind::logreg; }

  std::vector<double> predict_proba(const ModelInput& data) const override {
    const TabularData& t = as_tabular(data, "logreg");
    if (t.d != d_) throw inference_error("logreg: feature width mismatch");
    std::vector<double> out(t.n);
    for (int i = 0; i < t.n; ++i) {
      const double* r = t.row(i);
      double z = b_;
      for (int f = 0; f < d_; ++f) z += w_[f] * r[f];
      out[i] = 1.0 / (1.0 + std::exp(-z));
    }
    return out;
  }

  Checkpoint to_checkpoint() const override {
    Checkpoint ck;
    ck.put("logreg.w", Tensor::from_vec(d_, 1, w_));
    ck.put("logreg.b", Tensor::scalar(b_));
    ck.put("logreg.l1", Tensor::scalar(penalty_ == "l1" ? 1.0 : 0.0));
    return ck;
  }

  static std::unique_ptr<LogRegModel> from_checkpoint(const Checkpoint& ck) {
    return std::make_unique<LogRegModel>(ck.get("logreg.w").vec(), ck.get("logreg.b").item(),
                                         ck.get("logreg.l1").item() > 0.5 ? "l1" : "l2");
  }

  const std::vector<double>& weights() const { return w_; }

 private:
  int d_;
  std::string penalty_;
  std::vector<double> w_;
  double b_ = 0.0;
};

// ===================== Gradient-boosted trees =====================

class GbtModel final : public Model {
 public:
  GbtModel(const TabularData& train, int n_estimators, int max_depth, uint64_t seed,
           double learning_rate = 0.1)
      : d_(train.d), lr_(learning_rate) {
    require_binary_two_class(train.y, "gbt");
    require_finite(train.x, "gbt");
    const int n = train.n;
    const double p0 = prevalence(train.y);
    f0_ = std::log(p0 / (1.0 - p0));
    std::vector<double> f(n, f0_), residual(n);
    std::vector<int> rows(n);
    std::iota(rows.begin(), rows.end(), 0);
    Rng rng(seed ^ 0x474254ULL);
    TreeOptions opt;
    opt.max_depth = max_depth;
    for (int m = 0; m < n_estimators; ++m) {
      std::vector<double> p(n), hess(n);
      for (int i = 0; i < n; ++i) {
        p[i] = 1.0 / (1.0 + std::exp(-f[i]));
        residual[i] = train.y[i] - p[i];
        hess[i] = std::max(p[i] * (1.0 - p[i]), 1e-12);
      }
      Tree tree = fit_regression_tree(train.x, n, d_, residual, rows, opt, rng);
      // Newton leaf values: sum(residual) / sum(p(1-p)) per leaf.
      std::vector<double> num_leaf(tree.nodes.size(), 0.0), den_leaf(tree.nodes.size(), 0.0);
      for (int i = 0; i < n; ++i) {
        const int leaf = tree.leaf_index(train.row(i));
        num_leaf[leaf] += residual[i];
        den_leaf[leaf] += hess[i];
      }
      for (size_t t = 0; t < tree.nodes.size(); ++t) {
        if (tree.nodes[t].feature < 0) {
          tree.nodes[t].value = num_leaf[t] / std::max(den_leaf[t], 1e-12);
        }
      }
      for (int i = 0; i < n; ++i) f[i] += lr_ * tree.predict(train.row(i));
      trees_.push_back(std::move(tree));
    }
  }

  GbtModel(int d, double f0, double lr, std::vector<Tree> trees)
      : d_(d), f0_(f0), lr_(lr), trees_(std::move(trees)) {}

  ModelKind kind() const override { return ModelKind::gbt; }

  std::vector<double> predict_proba(const ModelInput& data) const override {
    const TabularData& t = as_tabular(data, "gbt");
    if (t.d != d_) throw inference_error("gbt: feature width mismatch");
    std::vector<double> out(t.n);
    for (int i = 0; i < t.n; ++i) {
      double f = f0_;
      for (const auto& tree : trees_) f += lr_ * tree.predict(t.row(i));
      out[i] = 1.0 / (1.0 + std::exp(-f));
    }
    return out;
  }

  Checkpoint to_checkpoint() const override {
    Checkpoint ck;
    ck.put("gbt.meta", Tensor::from_vec(1, 3, {static_cast<double>(d_), f0_, lr_}));
    for (size_t t = 0; t < trees_.size(); ++t) ck.put(tree_key(t), tree_tensor(trees_[t]));
    ck.put("gbt.n_trees", Tensor::scalar(static_cast<double>(trees_.size())));
    return ck;
  }

  static std::unique_ptr<GbtModel> from_checkpoint(const Checkpoint& ck) {
    const auto& meta = ck.get("gbt.meta").vec();
    const int n_trees = static_cast<int>(ck.get("gbt.n_trees").item());
    std::vector<Tree> trees;
    for (int t = 0; t < n_trees; ++t) trees.push_back(tree_from_tensor(ck.get(tree_key(t))));
    return std::make_unique<GbtModel>(static_cast<int>(meta[0]), meta[1], meta[2],
                                      std::move(trees));
  }

  static std::string tree_key(size_t t) { return "gbt.tree." + std::to_string(t); }

  static Tensor tree_tensor(const Tree& tree) {
    std::vector<double> flat;
    flat.reserve(tree.nodes.size() * 5);
    for (const auto& n : tree.nodes) {
      flat.push_back(n.feature);
      flat.push_back(n.threshold);
      flat.push_back(n.left);
      flat.push_back(n.right);
      flat.push_back(n.value);
    }
    return Tensor::from_vec(static_cast<int>(tree.nodes.size()), 5, std::move(flat));
  }

  static Tree tree_from_tensor(const Tensor& t) {
    Tree tree;
    for (int i = 0; i < t.rows(); ++i) {
      TreeNode n;
      n.feature = static_cast<int>(t.at(i, 0));
      n.threshold = t.at(i, 1);
      n.left = static_cast<int>(t.at(i, 2));
      n.right = static_cast<int>(t.at(i, 3));
      n.value = t.at(i, 4);
      tree.nodes.push_back(n);
    }
    return tree;
  }

 private:
  int d_;
  double f0_ = 0.0;
  double lr_;
  std::vector<Tree> trees_;
};

// ===================== Random forest =====================

class RForestModel final : public Model {
 public:
  RForestModel(const TabularData& train, int n_estimators, int max_depth, uint64_t seed)
      : d_(train.d) {
    require_binary_two_class(train.y, "rforest");
    require_finite(train.x, "rforest");
    const int n = train.n;
    std::vector<double> targets(train.y.begin(), train.y.end());
    Rng rng(seed ^ 0x5246ULL);
    TreeOptions opt;
    opt.max_depth = max_depth;
    opt.feature_subsample = std::max(1, static_cast<int>(std::floor(std::sqrt(d_))));
    for (int m = 0; m < n_estimators; ++m) {
      std::vector<int> bootstrap(n);
      for (int i = 0; i < n; ++i) bootstrap[i] = static_cast<int>(rng.uniform_int(0, n - 1));
      trees_.push_back(fit_regression_tree(train.x, n, d_, targets, bootstrap, opt, rng));
    }
  }

  RForestModel(int d, std::vector<Tree> trees) : d_(d), trees_(std::move(trees)) {}

  ModelKind kind() const override { return ModelKind::rforest; }

  std::vector<double> predict_proba(const ModelInput& data) const override {
    const TabularData& t = as_tabular(data, "rforest");
    if (t.d != d_) throw inference_error("rforest: feature width mismatch");
    std::vector<double> out(t.n, 0.0);
    for (int i = 0; i < t.n; ++i) {
      double s = 0.0;
      for (const auto& tree : trees_) s += tree.predict(t.row(i));
      out[i] = std::clamp(s / static_cast<double>(trees_.size()), 0.0, 1.0);
    }
    return out;
  }

  Checkpoint to_checkpoint() const override {
    Checkpoint ck;
    ck.put("rf.d", Tensor::scalar(d_));
    ck.put("rf.n_trees", Tensor::scalar(static_cast<double>(trees_.size())));
    for (size_t t = 0; t < trees_.size(); ++t) {
      ck.put("rf.tree." + std::to_string(t), GbtModel::tree_tensor(trees_[t]));
    }
    return ck;
  }

  static std::unique_ptr<RForestModel> from_checkpoint(const Checkpoint& ck) {
    const int n_trees = static_cast<int>(ck.get("rf.n_trees").item());
    std::vector<Tree> trees;
    for (int t = 0; t < n_trees; ++t) {
      trees.push_back(GbtModel::tree_from_tensor(ck.get("rf.tree." + std::to_string(t))));
    }
    return std::make_unique<RForestModel>(static_cast<int>(ck.get("rf.d").item()),
                                          std::move(trees));
  }

 private:
  int d_;
  std::vector<Tree> trees_;
};

// ===================== Rocket =====================

// Random convolutional kernels + {PPV, max} pooling + ridge-regularized
// linear classifier on standardized features. Kernel lengths are drawn from
// {3,5,7,9,11} capped to the series length (clinical series here are only 6
// steps long); kernels that cannot fit after dilation are skipped.
class RocketModel final : public Model {
 public:
  struct Kernel {
    int channel = 0;
    int length = 0;
    int dilation = 1;
    bool padding = false;
    double bias = 0.0;
    std::vector<double> weights;
  };

  RocketModel(const SeriesData& train, int num_kernels, uint64_t seed, double alpha = 1.0)
      : channels_(train.channels), steps_(train.steps) {
    require_binary_two_class(train.y, "rocket");
    Rng rng(seed ^ 0x524f434bULL);
    const int candidates[] = {3, 5, 7, 9, 11};
    for (int k = 0; k < num_kernels; ++k) {
      Kernel kern;
      kern.channel = static_cast<int>(rng.uniform_int(0, channels_ - 1));
      kern.length = candidates[rng.uniform_int(0, 4)];
      if (kern.length > steps_) continue;  // kernel skipped, not an error
      const double max_exp =
          std::log2(static_cast<double>(steps_ - 1) / static_cast<double>(kern.length - 1));
      kern.dilation = static_cast<int>(std::pow(2.0, rng.uniform(0.0, std::max(0.0, max_exp))));
      if ((kern.length - 1) * kern.dilation + 1 > steps_) continue;
      kern.padding = rng.bernoulli(0.5);
      kern.bias = rng.uniform(-1.0, 1.0);
      kern.weights.resize(kern.length);
      double mean = 0.0;
      for (auto& w : kern.weights) {
        w = rng.normal();
        mean += w;
      }
      mean /= kern.length;
      for (auto& w : kern.weights) w -= mean;
      kernels_.push_back(std::move(kern));
    }
    if (kernels_.empty()) throw fit_error("rocket: no kernel fits the series length");

    // Feature matrix, standardized, then ridge on +-1 targets.
    const int n = train.n;
    const int d = static_cast<int>(kernels_.size()) * 2;
    std::vector<double> feat(static_cast<size_t>(n) * d);
    for (int i = 0; i < n; ++i) apply_kernels(train, i, feat.data() + static_cast<size_t>(i) * d);
    mean_.assign(d, 0.0);
    std_.assign(d, 0.0);
    for (int i = 0; i < n; ++i)
      for (int f = 0; f < d; ++f) mean_[f] += feat[static_cast<size_t>(i) * d + f];
    for (auto& m : mean_) m /= n;
    for (int i = 0; i < n; ++i)
      for (int f = 0; f < d; ++f) {
        const double dlt = feat[static_cast<size_t>(i) * d + f] - mean_[f];
        std_[f] += dlt * dlt;
      }
    for (auto& s : std_) s = std::sqrt(s / n) + 1e-8;
    for (int i = 0; i < n; ++i)
      for (int f = 0; f < d; ++f) {
        auto& v = feat[static_cast<size_t>(i) * d + f];
        v = (v - mean_[f]) / std_[f];
      }
    std::vector<double> target(n);
    for (int i = 0; i < n; ++i) target[i] = train.y[i] == 1 ? 1.0 : -1.0;
    weights_ = ridge_fit(feat, n, d, target, alpha);
  }

  RocketModel(int channels, int steps, std::vector<Kernel> kernels, std::vector<double> mean,
              std::vector<double> stddev, std::vector<double> weights)
      : channels_(channels),
        steps_(steps),
        kernels_(std::move(kernels)),
        mean_(std::move(mean)),
        std_(std::move(stddev)),
        weights_(std::move(weights)) {}

  ModelKind kind() const override { return ModelKind::rocket; }

  std::vector<double> predict_proba(const ModelInput& data) const override {
    const SeriesData& s = as_series(data, "rocket");
    if (s.channels != channels_ || s.steps != steps_) {
      throw inference_error("rocket: series shape mismatch");
    }
    const int d = static_cast<int>(kernels_.size()) * 2;
    std::vector<double> feat(d);
    std::vector<double> out(s.n);
    for (int i = 0; i < s.n; ++i) {
      apply_kernels(s, i, feat.data());
      double z = weights_[d];  // intercept is the trailing weight
      for (int f = 0; f < d; ++f) z += weights_[f] * (feat[f] - mean_[f]) / std_[f];
      out[i] = 1.0 / (1.0 + std::exp(-z));  // monotone map of the ridge decision value
    }
    return out;
  }

  Checkpoint to_checkpoint() const override {
    Checkpoint ck;
    ck.put("rocket.meta", Tensor::from_vec(1, 2, {static_cast<double>(channels_),
                                                  static_cast<double>(steps_)}));
    const int max_len = 11;
    std::vector<double> table;
    for (const auto& k : kernels_) {
      table.push_back(k.channel);
      table.push_back(k.length);
      table.push_back(k.dilation);
      table.push_back(k.padding ? 1.0 : 0.0);
      table.push_back(k.bias);
      for (int i = 0; i < max_len; ++i) {
        table.push_back(i < k.length ? k.weights[i] : 0.0);
      }
    }
    ck.put("rocket.kernels",
           Tensor::from_vec(static_cast<int>(kernels_.size()), 5 + max_len, std::move(table)));
    ck.put("rocket.mean", Tensor::from_vec(1, static_cast<int>(mean_.size()), mean_));
    ck.put("rocket.std", Tensor::from_vec(1, static_cast<int>(std_.size()), std_));
    ck.put("rocket.w", Tensor::from_vec(1, static_cast<int>(weights_.size()), weights_));
    return ck;
  }

  static std::unique_ptr<RocketModel> from_checkpoint(const Checkpoint& ck) {
    const auto& meta = ck.get("rocket.meta").vec();
    const Tensor& kt = ck.get("rocket.kernels");
    std::vector<Kernel> kernels;
    for (int i = 0; i < kt.rows(); ++i) {
      Kernel k;
      k.channel = static_cast<int>(kt.at(i, 0));
      k.length = static_cast<int>(kt.at(i, 1));
      k.dilation = static_cast<int>(kt.at(i, 2));
      k.padding = kt.at(i, 3) > 0.5;
      k.bias = kt.at(i, 4);
      for (int j = 0; j < k.length; ++j) k.weights.push_back(kt.at(i, 5 + j));
      kernels.push_back(std::move(k));
    }
    return std::make_unique<RocketModel>(static_cast<int>(meta[0]), static_cast<int>(meta[1]),
                                         std::move(kernels), ck.get("rocket.mean").vec(),
                                         ck.get("rocket.std").vec(), ck.get("rocket.w").vec());
  }

 private:
  void apply_kernels(const SeriesData& s, int row, double* out) const {
    for (size_t k = 0; k < kernels_.size(); ++k) {
      const Kernel& kern = kernels_[k];
      const int pad = kern.padding ? ((kern.length - 1) * kern.dilation) / 2 : 0;
      double max_v = -1e300;
      int positive = 0, total = 0;
      for (int start = -pad; start <= steps_ - 1 + pad - (kern.length - 1) * kern.dilation;
           ++start) {
        double acc = kern.bias;
        for (int j = 0; j < kern.length; ++j) {
          const int t = start + j * kern.dilation;
          if (t >= 0 && t < steps_) acc += kern.weights[j] * s.at(row, kern.channel, t);
        }
        max_v = std::max(max_v, acc);
        positive += acc > 0.0;
        ++total;
      }
      out[k * 2] = total > 0 ? static_cast<double>(positive) / total : 0.0;
      out[k * 2 + 1] = total > 0 ? max_v : 0.0;
    }
  }

  // Ridge with intercept; dual solve when features outnumber samples.
  static std::vector<double> ridge_fit(const std::vector<double>& X, int n, int d,
                                       const std::vector<double>& y, double alpha) {
    // Center targets; intercept recovered afterwards.
    double y_mean = 0.0;
    for (double v : y) y_mean += v;
    y_mean /= n;
    std::vector<double> yc(n);
    for (int i = 0; i < n; ++i) yc[i] = y[i] - y_mean;

    std::vector<double> w(d + 1, 0.0);
    if (d <= n) {
      std::vector<double> gram(static_cast<size_t>(d) * d, 0.0), rhs(d, 0.0);
      for (int i = 0; i < n; ++i) {
        const double* r = X.data() + static_cast<size_t>(i) * d;
        for (int a = 0; a < d; ++a) {
          rhs[a] += r[a] * yc[i];
          for (int b = a; b < d; ++b) gram[static_cast<size_t>(a) * d + b] += r[a] * r[b];
        }
      }
      for (int a = 0; a < d; ++a) {
        gram[static_cast<size_t>(a) * d + a] += alpha;
        for (int b = 0; b < a; ++b) {
          gram[static_cast<size_t>(a) * d + b] = gram[static_cast<size_t>(b) * d + a];
        }
      }
      std::vector<double> sol;
      if (!spd_solve(gram, rhs, d, sol)) throw fit_error("rocket: ridge solve failed");
      std::copy(sol.begin(), sol.end(), w.begin());
    } else {
      // w = X^T (X X^T + alpha I)^{-1} y
      std::vector<double> gram(static_cast<size_t>(n) * n, 0.0);
      for (int i = 0; i < n; ++i) {
        for (int j = i; j < n; ++j) {
          const double* a = X.data() + static_cast<size_t>(i) * d;
          const double* b = X.data() + static_cast<size_t>(j) * d;
          double s = 0.0;
          for (int f = 0; f < d; ++f) s += a[f] * b[f];
          gram[static_cast<size_t>(i) * n + j] = s;
          gram[static_cast<size_t>(j) * n + i] = s;
        }
        gram[static_cast<size_t>(i) * n + i] += alpha;
      }
      std::vector<double> dual;
      if (!spd_solve(gram, yc, n, dual)) throw fit_error("rocket: dual ridge solve failed");
      for (int i = 0; i < n; ++i) {
        const double* r = X.data() + static_cast<size_t>(i) * d;
        for (int f = 0; f < d; ++f) w[f] += dual[i] * r[f];
      }
    }
    w[d] = y_mean;  // features are standardized, so the intercept is the target mean
    return w;
  }

  int channels_;
  int steps_;
  std::vector<Kernel> kernels_;
  std::vector<double> mean_, std_;
  std::vector<double> weights_;  // d feature weights + intercept
};

// ===================== Catch22-subset features =====================

std::vector<double> c22_channel_features(const std::vector<double>& s) {
  const int n = static_cast<int>(s.size());
  std::vector<double> out(kC22FeaturesPerChannel, 0.0);
  if (n == 0) return out;
  double mean = 0.0;
  for (double v : s) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : s) var += (v - mean) * (v - mean);
  const double stddev = n > 1 ? std::sqrt(var / (n - 1)) : 0.0;

  int longest = 0, current = 0, above = 0;
  for (double v : s) {
    if (v > mean) {
      ++current;
      ++above;
      longest = std::max(longest, current);
    } else {
      current = 0;
    }
  }

  // First non-positive autocorrelation lag (population normalization).
  double first_zero = n;
  const double denom = var > 0.0 ? var : 1.0;
  for (int lag = 1; lag < n; ++lag) {
    double acf = 0.0;
    for (int t = 0; t + lag < n; ++t) acf += (s[t] - mean) * (s[t + lag] - mean);
    acf /= denom;
    if (acf <= 0.0) {
      first_zero = lag;
      break;
    }
  }

  // Mode of a 5-bin histogram (center of the most populated bin).
  double lo = *std::min_element(s.begin(), s.end());
  double hi = *std::max_element(s.begin(), s.end());
  double mode = mean;
  if (hi > lo) {
    int counts[5] = {0, 0, 0, 0, 0};
    for (double v : s) {
      int b = static_cast<int>((v - lo) / (hi - lo) * 5.0);
      counts[std::clamp(b, 0, 4)]++;
    }
    int best = 0;
    for (int b = 1; b < 5; ++b)
      if (counts[b] > counts[best]) best = b;
    mode = lo + (best + 0.5) * (hi - lo) / 5.0;
  }

  // OLS slope against t = 0..n-1.
  double slope = 0.0;
  if (n > 1) {
    const double t_mean = 0.5 * (n - 1);
    double cov = 0.0, tvar = 0.0;
    for (int t = 0; t < n; ++t) {
      cov += (t - t_mean) * (s[t] - mean);
      tvar += (t - t_mean) * (t - t_mean);
    }
    slope = cov / tvar;
  }

  out[0] = mean;
  out[1] = stddev;
  out[2] = longest;
  out[3] = first_zero;
  out[4] = mode;
  out[5] = slope;
  out[6] = static_cast<double>(above) / n;
  out[7] = s.back() - s.front();
  return out;
}

TabularData series_to_c22_features(const SeriesData& s) {
  TabularData t;
  t.n = s.n;
  t.d = s.channels * kC22FeaturesPerChannel;
  t.x.resize(static_cast<size_t>(t.n) * t.d);
  std::vector<double> channel(s.steps);
  for (int i = 0; i < s.n; ++i) {
    for (int c = 0; c < s.channels; ++c) {
      for (int m = 0; m < s.steps; ++m) channel[m] = s.at(i, c, m);
      const auto feats = c22_channel_features(channel);
      std::copy(feats.begin(), feats.end(),
                t.x.begin() + static_cast<size_t>(i) * t.d + c * kC22FeaturesPerChannel);
    }
  }
  t.y = s.y;
  return t;
}

class C22Model final : public Model {
 public:
  C22Model(const SeriesData& train, const std::string& estimator, uint64_t seed)
      : channels_(train.channels), steps_(train.steps), estimator_(estimator) {
    require_binary_two_class(train.y, "c22features");
    const TabularData feats = series_to_c22_features(train);
    if (estimator == "rforest200") {
      inner_ = std::make_unique<RForestModel>(feats, 200, 10, seed);
    } else if (estimator == "gbt200") {
      inner_ = std::make_unique<GbtModel>(feats, 200, 3, seed);
    } else if (estimator == "logreg") {
      inner_ = std::make_unique<LogRegModel>(feats, 1.0, "l2");
    } else {
      throw config_error("c22features: unknown estimator '" + estimator + "'");
    }
  }

  C22Model(int channels, int steps, std::string estimator, std::unique_ptr<Model> inner)
      : channels_(channels), steps_(steps), estimator_(std::move(estimator)),
        inner_(std::move(inner)) {}

  ModelKind kind() const override { return ModelKind::c22features; }

  std::vector<double> predict_proba(const ModelInput& data) const override {
    const SeriesData& s = as_series(data, "c22features");
    if (s.channels != channels_ || s.steps != steps_) {
      throw inference_error("c22features: series shape mismatch");
    }
    return inner_->predict_proba(series_to_c22_features(s));
  }

  Checkpoint to_checkpoint() const override {
    Checkpoint ck = inner_->to_checkpoint();
    const double est_id = estimator_ == "rforest200" ? 0.0 : estimator_ == "gbt200" ? 1.0 : 2.0;
    ck.put("c22.meta", Tensor::from_vec(1, 3, {static_cast<double>(channels_),
                                               static_cast<double>(steps_), est_id}));
    return ck;
  }

  static std::unique_ptr<C22Model> from_checkpoint(const Checkpoint& ck) {
    const auto& meta = ck.get("c22.meta").vec();
    const std::string est = meta[2] == 0.0 ? "rforest200" : meta[2] == 1.0 ? "gbt200" : "logreg";
    std::unique_ptr<Model> inner;
    if (est == "rforest200") {
      inner = RForestModel::from_checkpoint(ck);
    } else if (est == "gbt200") {
      inner = GbtModel::from_checkpoint(ck);
    } else {
      inner = LogRegModel::from_checkpoint(ck);
    }
    return std::make_unique<C22Model>(static_cast<int>(meta[0]), static_cast<int>(meta[1]), est,
                                      std::move(inner));
  }

 private:
  int channels_;
  int steps_;
  std::string estimator_;
  std::unique_ptr<Model> inner_;
};

// ===================== shared deep-training loop =====================

namespace {

struct EpochPlan {
  std::vector<std::vector<int>> batches;
};

EpochPlan make_batches(int n, int batch_size, Rng& rng) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  EpochPlan plan;
  for (int start = 0; start < n; start += batch_size) {
    const int end = std::min(start + batch_size, n);
    if (end - start < 2) {
      // Fold a trailing singleton into the previous batch; batch norm needs
      // at least two rows in train mode.
      if (!plan.batches.empty()) {
        plan.batches.back().insert(plan.batches.back().end(), order.begin() + start,
                                   order.begin() + end);
      } else {
        plan.batches.push_back({order.begin() + start, order.begin() + end});
      }
      continue;
    }
    plan.batches.push_back({order.begin() + start, order.begin() + end});
  }
  return plan;
}

// Generic epoch loop with early stopping on validation AUPRC.
template <typename ForwardBatch, typename PredictVal, typename CaptureState,
          typename RestoreState>
void train_with_early_stopping(int n_train, const std::vector<int>& val_labels,
                               const TrainConfig& cfg, Adam& opt, Rng& rng,
                               ForwardBatch&& forward_batch, PredictVal&& predict_val,
                               CaptureState&& capture, RestoreState&& restore) {
  double best_metric = -1.0;
  int best_epoch = -1;
  Checkpoint best_state;
  const bool has_val = !val_labels.empty() &&
                       std::count(val_labels.begin(), val_labels.end(), 1) > 0 &&
                       std::count(val_labels.begin(), val_labels.end(), 0) > 0;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const EpochPlan plan = make_batches(n_train, cfg.batch_size, rng);
    for (const auto& batch : plan.batches) {
      opt.zero_grad();
      Tensor loss = forward_batch(batch);
      if (!std::isfinite(loss.item())) {
        if (best_epoch >= 0) restore(best_state);
        throw fit_error("training diverged (non-finite loss) at epoch " +
                        std::to_string(epoch));
      }
      loss.backward();
      opt.step();
    }
    if (!has_val) continue;
    const std::vector<double> val_probs = predict_val();
    const double metric = eval::auprc(val_probs, val_labels);
    if (metric > best_metric + 1e-12) {
      best_metric = metric;
      best_epoch = epoch;
      best_state = capture();
    } else if (epoch - best_epoch >= cfg.patience) {
      break;
    }
  }
  if (best_epoch >= 0) restore(best_state);
}

}  // namespace

// ===================== MLP =====================

// dense(h) -> ReLU -> batchnorm -> dropout -> dense(1) -> sigmoid,
// h = units_multiplier * input_dim.
class MlpModel final : public DeepModel {
 public:
  MlpModel(int input_dim, int units_multiplier, double dropout, uint64_t seed) {
    if (units_multiplier < 1) {
      throw config_error("mlp: units_multiplier must be >= 1, got " +
                         std::to_string(units_multiplier));
    }
    Rng rng(seed ^ 0x4d4c50ULL);
    const int hidden = units_multiplier * input_dim;
    fc1_ = Dense(input_dim, hidden, rng);
    bn_ = BatchNorm1d(hidden);
    drop_.rate = dropout;
    drop_.rng = Rng(seed ^ 0x44524f50ULL);
    out_ = Dense(hidden, 1, rng);
    input_dim_ = input_dim;
    mult_ = units_multiplier;
  }

  void fit(const TabularData& train, const TabularData* val, const TrainConfig& cfg,
           uint64_t seed) {
    require_binary_two_class(train.y, "mlp");
    require_finite(train.x, "mlp");
    prevalence_ = prevalence(train.y);
    Adam opt(cfg.lr);
    opt.add_params(all_parameters());
    Rng rng(seed ^ 0x45504f43ULL);
    set_train_mode(true);
    auto forward = [&](const std::vector<int>& batch) {
      Tensor x = rows_tensor(train, batch);
      Tensor probs = num::sigmoid(out_.forward(encode_tensor(x)));
      return num::bce_loss(probs, tensor_of_labels(train.y, batch));
    };
    auto predict_val = [&] {
      set_train_mode(false);
      auto p = predict_proba(*val);
      set_train_mode(true);
      return p;
    };
    train_with_early_stopping(
        train.n, val ? val->y : std::vector<int>{}, cfg, opt, rng, forward, predict_val,
        [&] { return to_checkpoint(); }, [&](const Checkpoint& ck) { restore_checkpoint(ck); });
    set_train_mode(false);
  }

  ModelKind kind() const override { return ModelKind::mlp; }
  int latent_dim() const override { return fc1_.out_dim(); }

  std::vector<double> predict_proba(const ModelInput& data) const override {
    const TabularData& t = as_tabular(data, "mlp");
    if (t.d != input_dim_) throw inference_error("mlp: feature width mismatch");
    auto* self = const_cast<MlpModel*>(this);
    // Fitted models sit in eval mode, so concurrent prediction stays
    // write-free; only a mid-training call has to toggle modes.
    const bool was_train = bn_.train_mode;
    if (was_train) self->set_train_mode(false);
    Tensor x = rows_tensor(t, all_rows(t.n));
    Tensor probs = num::sigmoid(self->out_.forward(self->encode_tensor(x)));
    if (was_train) self->set_train_mode(true);
    return std::vector<double>(probs.data(), probs.data() + probs.size());
  }

  Tensor encode_rows(const ModelInput& data, const std::vector<int>& rows) override {
    const TabularData& t = as_tabular(data, "mlp");
    return encode_tensor(rows_tensor(t, rows));
  }

  void set_train_mode(bool train) override {
    bn_.train_mode = train;
    drop_.train_mode = train;
  }

  std::vector<NamedParam> encoder_parameters() override {
    std::vector<NamedParam> p;
    fc1_.collect("mlp.fc1", p);
    bn_.collect("mlp.bn", p);
    return p;
  }

  std::vector<NamedParam> all_parameters() override {
    std::vector<NamedParam> p = encoder_parameters();
    out_.collect("mlp.out", p);
    return p;
  }

  Checkpoint to_checkpoint() const override {
    auto* self = const_cast<MlpModel*>(this);
    Checkpoint ck = Checkpoint::capture(self->all_parameters());
    ck.put("mlp.bn.run_mean", Tensor::from_vec(1, latent_dim(), bn_.running_mean));
    ck.put("mlp.bn.run_var", Tensor::from_vec(1, latent_dim(), bn_.running_var));
    ck.put("mlp.meta", Tensor::from_vec(1, 4, {static_cast<double>(input_dim_),
                                               static_cast<double>(mult_), drop_.rate,
                                               prevalence_}));
    return ck;
  }

  void restore_checkpoint(const Checkpoint& ck) {
    ck.restore(all_parameters());
    bn_.running_mean = ck.get("mlp.bn.run_mean").vec();
    bn_.running_var = ck.get("mlp.bn.run_var").vec();
  }

  void restore_state(const Checkpoint& ck) override { restore_checkpoint(ck); }

  static std::unique_ptr<MlpModel> from_checkpoint(const Checkpoint& ck, uint64_t seed) {
    const auto& meta = ck.get("mlp.meta").vec();
    auto m = std::make_unique<MlpModel>(static_cast<int>(meta[0]), static_cast<int>(meta[1]),
                                        meta[2], seed);
    m->restore_checkpoint(ck);
    m->prevalence_ = meta[3];
    m->set_train_mode(false);
    return m;
  }

  std::unique_ptr<DeepModel> clone_deep() const override {
    auto m = std::make_unique<MlpModel>(input_dim_, mult_, drop_.rate, train_seed + 1);
    m->restore_checkpoint(to_checkpoint());
    m->prevalence_ = prevalence_;
    m->hyperparameters = hyperparameters;
    m->set_train_mode(false);
    return m;
  }

 private:
  static std::vector<int> all_rows(int n) {
    std::vector<int> rows(n);
    std::iota(rows.begin(), rows.end(), 0);
    return rows;
  }

  static Tensor rows_tensor(const TabularData& t, const std::vector<int>& rows) {
    Tensor x = Tensor::zeros(static_cast<int>(rows.size()), t.d);
    for (size_t i = 0; i < rows.size(); ++i) {
      std::copy(t.row(rows[i]), t.row(rows[i]) + t.d, x.data() + i * t.d);
    }
    return x;
  }

  Tensor encode_tensor(const Tensor& x) { return drop_.forward(bn_.forward(num::relu(fc1_.forward(x)))); }

  Dense fc1_, out_;
  BatchNorm1d bn_;
  Dropout drop_;
  int input_dim_ = 0;
  int mult_ = 1;
  double prevalence_ = 0.5;
};

// ===================== GRU over monthly series =====================

// GRU across the 6 monthly steps -> last hidden -> batchnorm -> dropout ->
// dense -> sigmoid. Hidden width = units_multiplier * channels. Inputs pass
// through a per-channel affine normalization fitted on the training series
// (the -1 missing sentinels enter the statistics and the model unchanged,
// just affinely mapped), keeping the gate pre-activations out of saturation.
class GruModel final : public DeepModel {
 public:
  GruModel(int channels, int steps, int units_multiplier, double dropout, uint64_t seed)
      : channels_(channels), steps_(steps), mult_(units_multiplier) {
    if (units_multiplier < 1) {
      throw config_error("gru_rnn: units_multiplier must be >= 1, got " +
                         std::to_string(units_multiplier));
    }
    Rng rng(seed ^ 0x475255ULL);
    const int hidden = units_multiplier * channels;
    cell_ = GRUCell(channels, hidden, rng);
    bn_ = BatchNorm1d(hidden);
    drop_.rate = dropout;
    drop_.rng = Rng(seed ^ 0x44524f32ULL);
    out_ = Dense(hidden, 1, rng);
    in_mean_.assign(channels, 0.0);
    in_scale_.assign(channels, 1.0);
  }

  void fit(const SeriesData& train, const SeriesData* val, const TrainConfig& cfg,
           uint64_t seed) {
    require_binary_two_class(train.y, "gru_rnn");
    prevalence_ = prevalence(train.y);
    for (int c = 0; c < channels_; ++c) {
      double sum = 0.0, sq = 0.0;
      const int cnt = train.n * steps_;
      for (int i = 0; i < train.n; ++i) {
        for (int t = 0; t < steps_; ++t) {
          const double v = train.at(i, c, t);
          sum += v;
          sq += v * v;
        }
      }
      in_mean_[c] = sum / cnt;
      in_scale_[c] = 1.0 / (std::sqrt(std::max(sq / cnt - in_mean_[c] * in_mean_[c], 0.0)) + 1e-8);
    }
    Adam opt(cfg.lr);
    opt.add_params(all_parameters());
    Rng rng(seed ^ 0x45504f43ULL);
    set_train_mode(true);
    auto forward = [&](const std::vector<int>& batch) {
      Tensor h = run_gru(train, batch);
      Tensor probs = num::sigmoid(out_.forward(drop_.forward(bn_.forward(h))));
      return num::bce_loss(probs, tensor_of_labels(train.y, batch));
    };
    auto predict_val = [&] {
      set_train_mode(false);
      auto p = predict_proba(*val);
      set_train_mode(true);
      return p;
    };
    train_with_early_stopping(
        train.n, val ? val->y : std::vector<int>{}, cfg, opt, rng, forward, predict_val,
        [&] { return to_checkpoint(); }, [&](const Checkpoint& ck) { restore_checkpoint(ck); });
    set_train_mode(false);
  }

  ModelKind kind() const override { return ModelKind::gru_rnn; }
  int latent_dim() const override { return cell_.hidden_dim(); }

  std::vector<double> predict_proba(const ModelInput& data) const override {
    const SeriesData& s = as_series(data, "gru_rnn");
    if (s.channels != channels_ || s.steps != steps_) {
      throw inference_error("gru_rnn: series shape mismatch");
    }
    auto* self = const_cast<GruModel*>(this);
    const bool was_train = bn_.train_mode;
    if (was_train) self->set_train_mode(false);
    std::vector<int> rows(s.n);
    std::iota(rows.begin(), rows.end(), 0);
    Tensor h = self->run_gru(s, rows);
    Tensor probs = num::sigmoid(self->out_.forward(self->drop_.forward(self->bn_.forward(h))));
    if (was_train) self->set_train_mode(true);
    return std::vector<double>(probs.data(), probs.data() + probs.size());
  }

  Tensor encode_rows(const ModelInput& data, const std::vector<int>& rows) override {
    const SeriesData& s = as_series(data, "gru_rnn");
    if (s.channels != channels_ || s.steps != steps_) {
      throw inference_error("gru_rnn: series shape mismatch");
    }
    return drop_.forward(bn_.forward(run_gru(s, rows)));
  }

  void set_train_mode(bool train) override {
    bn_.train_mode = train;
    drop_.train_mode = train;
  }

  std::vector<NamedParam> encoder_parameters() override {
    std::vector<NamedParam> p;
    cell_.collect("gru.cell", p);
    bn_.collect("gru.bn", p);
    return p;
  }

  std::vector<NamedParam> all_parameters() override {
    std::vector<NamedParam> p = encoder_parameters();
    out_.collect("gru.out", p);
    return p;
  }

  Checkpoint to_checkpoint() const override {
    auto* self = const_cast<GruModel*>(this);
    Checkpoint ck = Checkpoint::capture(self->all_parameters());
    ck.put("gru.bn.run_mean", Tensor::from_vec(1, latent_dim(), bn_.running_mean));
    ck.put("gru.bn.run_var", Tensor::from_vec(1, latent_dim(), bn_.running_var));
    ck.put("gru.in_mean", Tensor::from_vec(1, channels_, in_mean_));
    ck.put("gru.in_scale", Tensor::from_vec(1, channels_, in_scale_));
    ck.put("gru.meta", Tensor::from_vec(1, 5, {static_cast<double>(channels_),
                                               static_cast<double>(steps_),
                                               static_cast<double>(mult_), drop_.rate,
                                               prevalence_}));
    return ck;
  }

  void restore_checkpoint(const Checkpoint& ck) {
    ck.restore(all_parameters());
    bn_.running_mean = ck.get("gru.bn.run_mean").vec();
    bn_.running_var = ck.get("gru.bn.run_var").vec();
    in_mean_ = ck.get("gru.in_mean").vec();
    in_scale_ = ck.get("gru.in_scale").vec();
  }

  void restore_state(const Checkpoint& ck) override { restore_checkpoint(ck); }

  static std::unique_ptr<GruModel> from_checkpoint(const Checkpoint& ck, uint64_t seed) {
    const auto& meta = ck.get("gru.meta").vec();
    auto m = std::make_unique<GruModel>(static_cast<int>(meta[0]), static_cast<int>(meta[1]),
                                        static_cast<int>(meta[2]), meta[3], seed);
    m->restore_checkpoint(ck);
    m->prevalence_ = meta[4];
    m->set_train_mode(false);
    return m;
  }

  std::unique_ptr<DeepModel> clone_deep() const override {
    auto m = std::make_unique<GruModel>(channels_, steps_, mult_, drop_.rate, train_seed + 1);
    m->restore_checkpoint(to_checkpoint());
    m->prevalence_ = prevalence_;
    m->hyperparameters = hyperparameters;
    m->set_train_mode(false);
    return m;
  }

 private:
  Tensor run_gru(const SeriesData& s, const std::vector<int>& rows) {
    const int m = static_cast<int>(rows.size());
    Tensor h = Tensor::zeros(m, cell_.hidden_dim());
    for (int t = 0; t < steps_; ++t) {
      Tensor x = Tensor::zeros(m, channels_);
      for (int i = 0; i < m; ++i) {
        for (int c = 0; c < channels_; ++c) {
          x.at(i, c) = (s.at(rows[i], c, t) - in_mean_[c]) * in_scale_[c];
        }
      }
      h = cell_.step(x, h);
    }
    return h;
  }

  GRUCell cell_;
  BatchNorm1d bn_;
  Dropout drop_;
  Dense out_;
  int channels_, steps_, mult_;
  std::vector<double> in_mean_, in_scale_;
  double prevalence_ = 0.5;
};

// ===================== Text encoder =====================

// Token embedding + sinusoidal positions -> transformer blocks -> GRU over
// positions -> batchnorm -> dropout -> dense -> sigmoid. PAD positions are
// masked out of attention and skipped by the GRU. An optional masked-token
// pretraining pass stands in for the original pretrained encoder.
class TextModel final : public DeepModel {
 public:
  TextModel(int vocab, int d_model, int heads, int blocks, int ffn, int units_multiplier,
            double dropout, uint64_t seed)
      : vocab_(vocab), d_model_(d_model), heads_(heads), n_blocks_(blocks), ffn_(ffn),
        mult_(units_multiplier) {
    if (units_multiplier < 1) throw config_error("text_encoder: units_multiplier must be >= 1");
    Rng rng(seed ^ 0x54455854ULL);
    embedding_ = Tensor::uniform(vocab, d_model, 0.1, rng, true);
    for (int b = 0; b < blocks; ++b) blocks_.emplace_back(d_model, heads, ffn, rng);
    const int hidden = units_multiplier * d_model;
    gru_ = GRUCell(d_model, hidden, rng);
    bn_ = BatchNorm1d(hidden);
    drop_.rate = dropout;
    drop_.rng = Rng(seed ^ 0x44524f33ULL);
    out_ = Dense(hidden, 1, rng);
    pos_enc_ = num::sinusoidal_encoding(2048, d_model);
  }

  void fit(const TokenData& train, const TokenData* val, const TrainConfig& cfg, uint64_t seed) {
    require_binary_two_class(train.y, "text_encoder");
    prevalence_ = prevalence(train.y);
    if (cfg.text_pretrain) pretrain_masked(train, cfg, seed);
    Adam opt(cfg.lr);
    opt.add_params(all_parameters());
    Rng rng(seed ^ 0x45504f43ULL);
    set_train_mode(true);
    auto forward = [&](const std::vector<int>& batch) {
      std::vector<Tensor> hiddens;
      hiddens.reserve(batch.size());
      for (int row : batch) hiddens.push_back(encode_stream(train.streams[row]));
      Tensor h = num::concat_rows(hiddens);
      Tensor probs = num::sigmoid(out_.forward(drop_.forward(bn_.forward(h))));
      return num::bce_loss(probs, tensor_of_labels(train.y, batch));
    };
    auto predict_val = [&] {
      set_train_mode(false);
      auto p = predict_proba(*val);
      set_train_mode(true);
      return p;
    };
    train_with_early_stopping(
        train.n(), val ? val->y : std::vector<int>{}, cfg, opt, rng, forward, predict_val,
        [&] { return to_checkpoint(); }, [&](const Checkpoint& ck) { restore_checkpoint(ck); });
    set_train_mode(false);
  }

  ModelKind kind() const override { return ModelKind::text_encoder; }
  int latent_dim() const override { return gru_.hidden_dim(); }

  std::vector<double> predict_proba(const ModelInput& data) const override {
    const TokenData& t = as_tokens(data, "text_encoder");
    auto* self = const_cast<TextModel*>(this);
    const bool was_train = bn_.train_mode;
    if (was_train) self->set_train_mode(false);
    std::vector<double> out(t.n(), prevalence_);
    std::vector<Tensor> hiddens;
    std::vector<int> live_rows;
    for (int i = 0; i < t.n(); ++i) {
      if (is_blank(t.streams[i])) continue;  // empty stream keeps the prior
      hiddens.push_back(self->encode_stream(t.streams[i]));
      live_rows.push_back(i);
    }
    if (hiddens.empty()) {
      if (was_train) self->set_train_mode(true);
      return out;
    }
    Tensor h = num::concat_rows(hiddens);
    Tensor probs =
        num::sigmoid(self->out_.forward(self->drop_.forward(self->bn_.forward(h))));
    for (size_t i = 0; i < live_rows.size(); ++i) out[live_rows[i]] = probs.data()[i];
    if (was_train) self->set_train_mode(true);
    return out;
  }

  Tensor encode_rows(const ModelInput& data, const std::vector<int>& rows) override {
    const TokenData& t = as_tokens(data, "text_encoder");
    std::vector<Tensor> hiddens;
    for (int i : rows) {
      if (is_blank(t.streams[i])) {
        hiddens.push_back(Tensor::zeros(1, gru_.hidden_dim()));
      } else {
        hiddens.push_back(encode_stream(t.streams[i]));
      }
    }
    return drop_.forward(bn_.forward(num::concat_rows(hiddens)));
  }

  void set_train_mode(bool train) override {
    bn_.train_mode = train;
    drop_.train_mode = train;
  }

  std::vector<NamedParam> encoder_parameters() override {
    std::vector<NamedParam> p;
    p.emplace_back("text.embedding", embedding_);
    for (int b = 0; b < n_blocks_; ++b) {
      blocks_[b].collect("text.block" + std::to_string(b), p);
    }
    gru_.collect("text.gru", p);
    bn_.collect("text.bn", p);
    return p;
  }

  std::vector<NamedParam> all_parameters() override {
    std::vector<NamedParam> p = encoder_parameters();
    out_.collect("text.out", p);
    return p;
  }

  Checkpoint to_checkpoint() const override {
    auto* self = const_cast<TextModel*>(this);
    Checkpoint ck = Checkpoint::capture(self->all_parameters());
    ck.put("text.bn.run_mean", Tensor::from_vec(1, latent_dim(), bn_.running_mean));
    ck.put("text.bn.run_var", Tensor::from_vec(1, latent_dim(), bn_.running_var));
    ck.put("text.meta",
           Tensor::from_vec(1, 8, {static_cast<double>(vocab_), static_cast<double>(d_model_),
                                   static_cast<double>(heads_), static_cast<double>(n_blocks_),
                                   static_cast<double>(ffn_), static_cast<double>(mult_),
                                   drop_.rate, prevalence_}));
    return ck;
  }

  void restore_checkpoint(const Checkpoint& ck) {
    ck.restore(all_parameters());
    bn_.running_mean = ck.get("text.bn.run_mean").vec();
    bn_.running_var = ck.get("text.bn.run_var").vec();
  }

  void restore_state(const Checkpoint& ck) override { restore_checkpoint(ck); }

  static std::unique_ptr<TextModel> from_checkpoint(const Checkpoint& ck, uint64_t seed) {
    const auto& meta = ck.get("text.meta").vec();
    auto m = std::make_unique<TextModel>(static_cast<int>(meta[0]), static_cast<int>(meta[1]),
                                         static_cast<int>(meta[2]), static_cast<int>(meta[3]),
                                         static_cast<int>(meta[4]), static_cast<int>(meta[5]),
                                         meta[6], seed);
    m->restore_checkpoint(ck);
    m->prevalence_ = meta[7];
    m->set_train_mode(false);
    return m;
  }

  std::unique_ptr<DeepModel> clone_deep() const override {
    auto m = std::make_unique<TextModel>(vocab_, d_model_, heads_, n_blocks_, ffn_, mult_,
                                         drop_.rate, train_seed + 1);
    m->restore_checkpoint(to_checkpoint());
    m->prevalence_ = prevalence_;
    m->hyperparameters = hyperparameters;
    m->set_train_mode(false);
    return m;
  }

 private:
  static bool is_blank(const std::vector<int>& stream) {
    for (int id : stream) {
      if (id != kPadId) return false;
    }
    return true;
  }

  // Transformer over the stream, then GRU across positions (PAD skipped).
  // Embeddings are scaled by sqrt(d_model) so the sinusoidal positions do
  // not swamp token identity.
  Tensor encode_stream(const std::vector<int>& stream) {
    const int L = static_cast<int>(stream.size());
    std::vector<double> mask(L);
    for (int i = 0; i < L; ++i) mask[i] = stream[i] == kPadId ? 0.0 : 1.0;
    Tensor x = num::mul_scalar(num::embedding_lookup(embedding_, stream),
                               std::sqrt(static_cast<double>(d_model_)));
    std::vector<double> pos(static_cast<size_t>(L) * d_model_);
    for (int i = 0; i < L; ++i) {
      const int p = std::min(i, 2047);
      std::copy(pos_enc_.begin() + static_cast<size_t>(p) * d_model_,
                pos_enc_.begin() + static_cast<size_t>(p + 1) * d_model_,
                pos.begin() + static_cast<size_t>(i) * d_model_);
    }
    x = num::add_const(x, pos);
    for (auto& block : blocks_) x = block.forward(x, mask);
    Tensor h = Tensor::zeros(1, gru_.hidden_dim());
    for (int i = 0; i < L; ++i) {
      if (mask[i] == 0.0) continue;
      h = gru_.step(num::row_slice(x, i, i + 1), h);
    }
    return h;
  }

  // Masked-token pass over the supervised corpus: 15% of positions replaced
  // by [MASK], transformer output projected to vocab logits.
  void pretrain_masked(const TokenData& train, const TrainConfig& cfg, uint64_t seed) {
    Rng rng(seed ^ 0x4d4c4dULL);
    Dense lm_head(d_model_, vocab_, rng);
    Adam opt(cfg.lr);
    std::vector<NamedParam> params;
    params.emplace_back("text.embedding", embedding_);
    for (int b = 0; b < n_blocks_; ++b) blocks_[b].collect("blk" + std::to_string(b), params);
    lm_head.collect("lm", params);
    opt.add_params(params);
    for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
      for (const auto& stream : train.streams) {
        const int L = std::min<int>(static_cast<int>(stream.size()), 128);
        if (L < 4) continue;
        std::vector<int> masked(stream.begin(), stream.begin() + L);
        std::vector<int> positions, targets;
        for (int i = 0; i < L; ++i) {
          if (masked[i] != kPadId && rng.uniform() < 0.15) {
            positions.push_back(i);
            targets.push_back(masked[i]);
            masked[i] = kMaskId;
          }
        }
        if (positions.empty()) continue;
        std::vector<double> mask(L, 1.0);
        Tensor x = num::mul_scalar(num::embedding_lookup(embedding_, masked),
                                   std::sqrt(static_cast<double>(d_model_)));
        std::vector<double> pos(static_cast<size_t>(L) * d_model_);
        for (int i = 0; i < L; ++i) {
          std::copy(pos_enc_.begin() + static_cast<size_t>(i) * d_model_,
                    pos_enc_.begin() + static_cast<size_t>(i + 1) * d_model_,
                    pos.begin() + static_cast<size_t>(i) * d_model_);
        }
        x = num::add_const(x, pos);
        for (auto& block : blocks_) x = block.forward(x, mask);
        std::vector<Tensor> picked;
        picked.reserve(positions.size());
        for (int p : positions) picked.push_back(num::row_slice(x, p, p + 1));
        Tensor logits = lm_head.forward(num::concat_rows(picked));
        opt.zero_grad();
        Tensor loss = num::cross_entropy_rows(logits, targets);
        loss.backward();
        opt.step();
      }
    }
  }

  Tensor embedding_;
  std::vector<TransformerBlock> blocks_;
  GRUCell gru_;
  BatchNorm1d bn_;
  Dropout drop_;
  Dense out_;
  std::vector<double> pos_enc_;
  int vocab_, d_model_, heads_, n_blocks_, ffn_, mult_;
  double prevalence_ = 0.5;
};

// ===================== fit dispatch =====================

namespace {

TabularData tabular_subset(const TabularData& t, const std::vector<int>& rows) {
  TabularData out;
  out.n = static_cast<int>(rows.size());
  out.d = t.d;
  out.x.reserve(static_cast<size_t>(out.n) * out.d);
  for (int r : rows) out.x.insert(out.x.end(), t.row(r), t.row(r) + t.d);
  for (int r : rows) out.y.push_back(t.y[r]);
  return out;
}

SeriesData series_subset(const SeriesData& s, const std::vector<int>& rows) {
  SeriesData out;
  out.n = static_cast<int>(rows.size());
  out.channels = s.channels;
  out.steps = s.steps;
  const size_t stride = static_cast<size_t>(s.channels) * s.steps;
  out.x.reserve(out.n * stride);
  for (int r : rows) {
    out.x.insert(out.x.end(), s.x.begin() + r * stride, s.x.begin() + (r + 1) * stride);
  }
  for (int r : rows) out.y.push_back(s.y[r]);
  return out;
}

TokenData token_subset(const TokenData& t, const std::vector<int>& rows) {
  TokenData out;
  out.vocab = t.vocab;
  for (int r : rows) {
    out.streams.push_back(t.streams[r]);
    out.y.push_back(t.y[r]);
  }
  return out;
}

}  // namespace

std::unique_ptr<Model> fit_model(ModelKind kind, const ModelInput& train, const HyperPoint& hp,
                                 uint64_t seed, const TrainConfig& config,
                                 const ModelInput* validation) {
  std::unique_ptr<Model> model;
  switch (kind) {
    case ModelKind::knn: {
      const TabularData& t = as_tabular(train, "knn");
      require_binary_two_class(t.y, "knn");
      model = std::make_unique<KnnModel>(t, static_cast<int>(hp.get("k", 5)));
      break;
    }
    case ModelKind::logreg: {
      model = std::make_unique<LogRegModel>(as_tabular(train, "logreg"), hp.get("C", 1.0),
                                            hp.get_cat("penalty", "l2"));
      break;
    }
    case ModelKind::gbt: {
      model = std::make_unique<GbtModel>(as_tabular(train, "gbt"),
                                         static_cast<int>(hp.get("n_estimators", 100)),
                                         static_cast<int>(hp.get("max_depth", 3)), seed);
      break;
    }
    case ModelKind::rforest: {
      model = std::make_unique<RForestModel>(as_tabular(train, "rforest"),
                                             static_cast<int>(hp.get("n_estimators", 100)),
                                             static_cast<int>(hp.get("max_depth", 10)), seed);
      break;
    }
    case ModelKind::rocket: {
      model = std::make_unique<RocketModel>(as_series(train, "rocket"),
                                            static_cast<int>(hp.get("num_kernels", 1000)), seed);
      break;
    }
    case ModelKind::c22features: {
      model = std::make_unique<C22Model>(as_series(train, "c22features"),
                                         hp.get_cat("estimator", "logreg"), seed);
      break;
    }
    case ModelKind::mlp: {
      const TabularData& t = as_tabular(train, "mlp");
      auto m = std::make_unique<MlpModel>(t.d, static_cast<int>(hp.get("units_multiplier", 1)),
                                          hp.get("dropout", 0.2), seed);
      m->train_seed = seed;
      if (validation) {
        m->fit(t, &as_tabular(*validation, "mlp"), config, seed);
      } else {
        auto [tr, va] = carve_validation(t.y, config.val_fraction, seed);
        TabularData train_part = tabular_subset(t, tr);
        TabularData val_part = tabular_subset(t, va);
        m->fit(train_part, &val_part, config, seed);
      }
      model = std::move(m);
      break;
    }
    case ModelKind::gru_rnn: {
      const SeriesData& s = as_series(train, "gru_rnn");
      auto m = std::make_unique<GruModel>(s.channels, s.steps,
                                          static_cast<int>(hp.get("units_multiplier", 1)),
                                          hp.get("dropout", 0.2), seed);
      m->train_seed = seed;
      if (validation) {
        m->fit(s, &as_series(*validation, "gru_rnn"), config, seed);
      } else {
        auto [tr, va] = carve_validation(s.y, config.val_fraction, seed);
        SeriesData train_part = series_subset(s, tr);
        SeriesData val_part = series_subset(s, va);
        m->fit(train_part, &val_part, config, seed);
      }
      model = std::move(m);
      break;
    }
    case ModelKind::text_encoder: {
      const TokenData& t = as_tokens(train, "text_encoder");
      auto m = std::make_unique<TextModel>(t.vocab, config.text_d_model, config.text_heads,
                                           config.text_blocks, config.text_ffn,
                                           static_cast<int>(hp.get("units_multiplier", 1)),
                                           hp.get("dropout", 0.2), seed);
      m->train_seed = seed;
      if (validation) {
        m->fit(t, &as_tokens(*validation, "text_encoder"), config, seed);
      } else {
        auto [tr, va] = carve_validation(t.y, config.val_fraction, seed);
        TokenData train_part = token_subset(t, tr);
        TokenData val_part = token_subset(t, va);
        m->fit(train_part, &val_part, config, seed);
      }
      model = std::move(m);
      break;
    }
  }
  model->hyperparameters = hp;
  model->train_seed = seed;
  return model;
}

// Registry used by the pipeline when reloading saved checkpoints.
std::unique_ptr<Model> model_from_checkpoint(ModelKind kind, const Checkpoint& ck,
                                             uint64_t seed);

std::unique_ptr<Model> model_from_checkpoint(ModelKind kind, const Checkpoint& ck,
                                             uint64_t seed) {
  switch (kind) {
    case ModelKind::knn: return KnnModel::from_checkpoint(ck);
    case ModelKind::logreg: return LogRegModel::from_checkpoint(ck);
    case ModelKind::gbt: return GbtModel::from_checkpoint(ck);
    case ModelKind::rforest: return RForestModel::from_checkpoint(ck);
    case ModelKind::rocket: return RocketModel::from_checkpoint(ck);
    case ModelKind::c22features: return C22Model::from_checkpoint(ck);
    case ModelKind::mlp: return MlpModel::from_checkpoint(ck, seed);
    case ModelKind::gru_rnn: return GruModel::from_checkpoint(ck, seed);
    case ModelKind::text_encoder: return TextModel::from_checkpoint(ck, seed);
  }
  throw config_error("model_from_checkpoint: unknown kind");
}

}  // namespace mmpred::models
