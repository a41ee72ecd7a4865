#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mmpred/rng.hpp"

namespace mmpred::num {

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

// All tensors are 2-D [rows, cols]; scalars are [1, 1]. float64 throughout.
struct TensorNode {
  int rows = 0;
  int cols = 0;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily, same size as value
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(TensorNode&)> backward;

  size_t size() const { return value.size(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

// Shared-buffer handle over a graph node (copying a Tensor aliases its data).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(int rows, int cols, bool requires_grad = false);
  static Tensor full(int rows, int cols, double v, bool requires_grad = false);
  static Tensor from_vec(int rows, int cols, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  // Glorot-uniform init, limit sqrt(6 / (fan_in + fan_out)).
  static Tensor glorot(int rows, int cols, Rng& rng, bool requires_grad = true);
  // Uniform in [-limit, limit].
  static Tensor uniform(int rows, int cols, double limit, Rng& rng, bool requires_grad = true);

  bool defined() const { return node_ != nullptr; }
  int rows() const { return node_->rows; }
  int cols() const { return node_->cols; }
  size_t size() const { return node_->size(); }

  double* data() { return node_->value.data(); }
  const double* data() const { return node_->value.data(); }
  std::vector<double>& vec() { return node_->value; }
  const std::vector<double>& vec() const { return node_->value; }

  double at(int r, int c) const { return node_->value[static_cast<size_t>(r) * node_->cols + c]; }
  double& at(int r, int c) { return node_->value[static_cast<size_t>(r) * node_->cols + c]; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool f) { node_->requires_grad = f; }
  std::vector<double>& grad();
  void zero_grad();

  // Runs reverse-mode accumulation from this scalar node.
  void backward();

  // Value copy detached from the graph.
  Tensor detach() const;

  NodePtr node() const { return node_; }
  explicit Tensor(NodePtr n) : node_(std::move(n)) {}

 private:
  NodePtr node_;
};

// ----- primitive ops (each registers an exact analytic backward) -----

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);         // same shape
Tensor add_rowvec(const Tensor& a, const Tensor& b);  // [m,n] + [1,n]
Tensor sub(const Tensor& a, const Tensor& b);         // same shape
Tensor mul(const Tensor& a, const Tensor& b);         // same shape (elementwise)
Tensor mul_colvec(const Tensor& a, const Tensor& b);  // [m,n] * [m,1]
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor tanh_act(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor mean_all(const Tensor& a);                 // -> [1,1]
Tensor mean_axis0(const Tensor& a);               // column means -> [1,n]
Tensor row_slice(const Tensor& a, int r0, int r1);  // rows [r0, r1)

// Mean binary cross-entropy; probs/targets [m,1]; probs clamped to
// [1e-12, 1-1e-12] so finite inputs never produce NaN/Inf.
Tensor bce_loss(const Tensor& probs, const Tensor& targets);

// Mean softmax cross-entropy over rows of logits [m,n] against integer class
// targets; log-sum-exp stabilized, gradient (softmax - onehot)/m.
Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets);

// Per-row layer normalization with learned gamma/beta [1,n].
Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

// Batch normalization over axis 0 using batch statistics (train path).
// Writes the biased batch mean/var so the caller can update running stats.
Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                        std::vector<double>* batch_mean, std::vector<double>* batch_var);

// Normalization against fixed (running) statistics (eval path).
Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                       const std::vector<double>& mean, const std::vector<double>& var);

// Inverted dropout: scales kept units by 1/(1-rate) so eval is a no-op.
Tensor dropout_train(const Tensor& x, double rate, Rng& rng);

// Gathers rows of `table` [vocab,d] at `ids`; backward scatter-adds.
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);

// a + c where c is a constant buffer of the same size (no gradient through c).
Tensor add_const(const Tensor& a, const std::vector<double>& c);

}  // namespace mmpred::num
