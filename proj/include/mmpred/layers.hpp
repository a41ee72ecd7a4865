#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mmpred/rng.hpp"
#include "mmpred/tensor.hpp"

namespace mmpred::num {

using NamedParam = std::pair<std::string, Tensor>;

struct Dense {
  Tensor W, b;

  Dense() = default;
  Dense(int in, int out, Rng& rng);
  Tensor forward(const Tensor& x) const { return add_rowvec(matmul(x, W), b); }
  int in_dim() const { return W.rows(); }
  int out_dim() const { return W.cols(); }
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

struct BatchNorm1d {
  Tensor gamma, beta;
  std::vector<double> running_mean, running_var;
  double momentum = 0.9;
  double eps = 1e-5;
  bool train_mode = true;

  BatchNorm1d() = default;
  explicit BatchNorm1d(int dim);
  Tensor forward(const Tensor& x);
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

struct Dropout {
  double rate = 0.0;
  bool train_mode = true;
  Rng rng{1};

  Tensor forward(const Tensor& x) {
    return (train_mode && rate > 0.0) ? dropout_train(x, rate, rng) : x;
  }
};

struct LayerNorm {
  Tensor gamma, beta;
  double eps = 1e-5;

  LayerNorm() = default;
  explicit LayerNorm(int dim);
  Tensor forward(const Tensor& x) const { return layer_norm_rows(x, gamma, beta, eps); }
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

// Cho-style cell, PyTorch gate convention: h' = (1-z)*n + z*h.
struct GRUCell {
  Tensor Wz, Wr, Wn;  // [in, hidden]
  Tensor Uz, Ur, Un;  // [hidden, hidden]
  Tensor bz, br, bn;  // [1, hidden]

  GRUCell() = default;
  GRUCell(int in, int hidden, Rng& rng);
  Tensor step(const Tensor& x, const Tensor& h_prev) const;
  // Positions with mask 0 keep the previous hidden state (PAD handling).
  Tensor step_masked(const Tensor& x, const Tensor& h_prev, const Tensor& mask) const;
  int hidden_dim() const { return Uz.rows(); }
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

// Post-LN transformer encoder block: multi-head self-attention + FFN, both
// with residual connections. Heads use separate projection matrices so no
// column slicing is needed. pad_mask[i] == 0 removes position i from
// attention (additive -1e9 on its column).
struct TransformerBlock {
  int n_heads = 0;
  int d_model = 0;
  std::vector<Dense> Wq, Wk, Wv;  // per head [d_model, d_head]
  Dense Wo;                       // [d_model, d_model]
  Dense ff1, ff2;
  LayerNorm ln1, ln2;

  TransformerBlock() = default;
  TransformerBlock(int d_model, int n_heads, int d_ff, Rng& rng);
  Tensor forward(const Tensor& x, const std::vector<double>& pad_mask) const;
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

// Sinusoidal positional encoding table [max_len, d].
std::vector<double> sinusoidal_encoding(int max_len, int d);

struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled; 0 = the plain bias-corrected update
  long long t = 0;

  explicit Adam(double lr_ = 1e-3, double weight_decay_ = 0.0)
      : lr(lr_), weight_decay(weight_decay_) {}
  void add_params(const std::vector<NamedParam>& params);
  void zero_grad();
  void step();
  size_t n_params() const { return slots_.size(); }

 private:
  struct Slot {
    Tensor param;
    std::vector<double> m, v;
  };
  std::vector<Slot> slots_;
};

}  // namespace mmpred::num
