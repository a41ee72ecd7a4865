#include "mmpred/layers.hpp"

#include <cmath>

#include "mmpred/error.hpp"

namespace mmpred::num {

Dense::Dense(int in, int out, Rng& rng) {
  W = Tensor::glorot(in, out, rng);
  b = Tensor::zeros(1, out, true);
}

void Dense::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  out.emplace_back(prefix + ".W", W);
  out.emplace_back(prefix + ".b", b);
}

BatchNorm1d::BatchNorm1d(int dim) {
  gamma = Tensor::full(1, dim, 1.0, true);
  beta = Tensor::zeros(1, dim, true);
  running_mean.assign(dim, 0.0);
  running_var.assign(dim, 1.0);
}

Tensor BatchNorm1d::forward(const Tensor& x) {
  if (train_mode && x.rows() > 1) {
    std::vector<double> mu, var;
    Tensor y = batch_norm_train(x, gamma, beta, eps, &mu, &var);
    for (size_t j = 0; j < mu.size(); ++j) {
      running_mean[j] = momentum * running_mean[j] + (1.0 - momentum) * mu[j];
      running_var[j] = momentum * running_var[j] + (1.0 - momentum) * var[j];
    }
    return y;
  }
  // Single-row batches also fall through here: batch variance would be 0.
  return batch_norm_eval(x, gamma, beta, eps, running_mean, running_var);
}

void BatchNorm1d::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  out.emplace_back(prefix + ".gamma", gamma);
  out.emplace_back(prefix + ".beta", beta);
}

LayerNorm::LayerNorm(int dim) {
  gamma = Tensor::full(1, dim, 1.0, true);
  beta = Tensor::zeros(1, dim, true);
}

void LayerNorm::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  out.emplace_back(prefix + ".gamma", gamma);
  out.emplace_back(prefix + ".beta", beta);
}

GRUCell::GRUCell(int in, int hidden, Rng& rng) {
  const double limit = 1.0 / std::sqrt(static_cast<double>(hidden));
  Wz = Tensor::uniform(in, hidden, limit, rng);
  Wr = Tensor::uniform(in, hidden, limit, rng);
  Wn = Tensor::uniform(in, hidden, limit, rng);
  Uz = Tensor::uniform(hidden, hidden, limit, rng);
  Ur = Tensor::uniform(hidden, hidden, limit, rng);
  Un = Tensor::uniform(hidden, hidden, limit, rng);
  bz = Tensor::zeros(1, hidden, true);
  br = Tensor::zeros(1, hidden, true);
  bn = Tensor::zeros(1, hidden, true);
}

Tensor GRUCell::step(const Tensor& x, const Tensor& h_prev) const {
  if (x.cols() != Wz.rows()) {
    throw dim_error("gru_cell: input width " + std::to_string(x.cols()) + " vs expected " +
                    std::to_string(Wz.rows()));
  }
  if (h_prev.cols() != Uz.rows()) {
    throw dim_error("gru_cell: hidden width " + std::to_string(h_prev.cols()) + " vs expected " +
                    std::to_string(Uz.rows()));
  }
  Tensor z = sigmoid(add_rowvec(add(matmul(x, Wz), matmul(h_prev, Uz)), bz));
  Tensor r = sigmoid(add_rowvec(add(matmul(x, Wr), matmul(h_prev, Ur)), br));
  Tensor n = tanh_act(add_rowvec(add(matmul(x, Wn), matmul(mul(r, h_prev), Un)), bn));
  Tensor one_minus_z = add_scalar(mul_scalar(z, -1.0), 1.0);
  return add(mul(one_minus_z, n), mul(z, h_prev));
}

Tensor GRUCell::step_masked(const Tensor& x, const Tensor& h_prev, const Tensor& mask) const {
  Tensor h_new = step(x, h_prev);
  Tensor keep = add_scalar(mul_scalar(mask, -1.0), 1.0);
  return add(mul_colvec(h_new, mask), mul_colvec(h_prev, keep));
}

void GRUCell::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  out.emplace_back(prefix + ".Wz", Wz);
  out.emplace_back(prefix + ".Wr", Wr);
  out.emplace_back(prefix + ".Wn", Wn);
  out.emplace_back(prefix + ".Uz", Uz);
  out.emplace_back(prefix + ".Ur", Ur);
  out.emplace_back(prefix + ".Un", Un);
  out.emplace_back(prefix + ".bz", bz);
  out.emplace_back(prefix + ".br", br);
  out.emplace_back(prefix + ".bn", bn);
}

TransformerBlock::TransformerBlock(int d_model_, int n_heads_, int d_ff, Rng& rng)
    : n_heads(n_heads_), d_model(d_model_) {
  if (d_model % n_heads != 0) {
    throw dim_error("attention_block: d_model " + std::to_string(d_model) +
                    " not divisible by heads " + std::to_string(n_heads));
  }
  const int d_head = d_model / n_heads;
  for (int h = 0; h < n_heads; ++h) {
    Wq.emplace_back(d_model, d_head, rng);
    Wk.emplace_back(d_model, d_head, rng);
    Wv.emplace_back(d_model, d_head, rng);
  }
  Wo = Dense(d_model, d_model, rng);
  ff1 = Dense(d_model, d_ff, rng);
  ff2 = Dense(d_ff, d_model, rng);
  ln1 = LayerNorm(d_model);
  ln2 = LayerNorm(d_model);
}

Tensor TransformerBlock::forward(const Tensor& x, const std::vector<double>& pad_mask) const {
  const int L = x.rows();
  if (static_cast<int>(pad_mask.size()) != L) throw dim_error("attention_block: mask length");
  const int d_head = d_model / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_head));
  // Additive bias pushing masked-out columns to ~0 attention weight.
  std::vector<double> col_bias(static_cast<size_t>(L) * L, 0.0);
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < L; ++j)
      if (pad_mask[j] == 0.0) col_bias[static_cast<size_t>(i) * L + j] = -1e9;

  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  for (int h = 0; h < n_heads; ++h) {
    Tensor q = Wq[h].forward(x);
    Tensor k = Wk[h].forward(x);
    Tensor v = Wv[h].forward(x);
    Tensor scores = mul_scalar(matmul(q, transpose(k)), scale);
    Tensor attn = softmax_rows(add_const(scores, col_bias));
    heads.push_back(matmul(attn, v));
  }
  Tensor attended = Wo.forward(concat_cols(heads));
  Tensor x1 = ln1.forward(add(x, attended));
  Tensor ff = ff2.forward(relu(ff1.forward(x1)));
  return ln2.forward(add(x1, ff));
}

void TransformerBlock::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  for (int h = 0; h < n_heads; ++h) {
    const std::string hp = prefix + ".h" + std::to_string(h);
    Wq[h].collect(hp + ".q", out);
    Wk[h].collect(hp + ".k", out);
    Wv[h].collect(hp + ".v", out);
  }
  Wo.collect(prefix + ".o", out);
  ff1.collect(prefix + ".ff1", out);
  ff2.collect(prefix + ".ff2", out);
  ln1.collect(prefix + ".ln1", out);
  ln2.collect(prefix + ".ln2", out);
}

std::vector<double> sinusoidal_encoding(int max_len, int d) {
  std::vector<double> enc(static_cast<size_t>(max_len) * d, 0.0);
  for (int pos = 0; pos < max_len; ++pos) {
    for (int i = 0; i < d; i += 2) {
      const double angle = pos / std::pow(10000.0, static_cast<double>(i) / d);
      enc[static_cast<size_t>(pos) * d + i] = std::sin(angle);
      if (i + 1 < d) enc[static_cast<size_t>(pos) * d + i + 1] = std::cos(angle);
    }
  }
  return enc;
}

void Adam::add_params(const std::vector<NamedParam>& params) {
  for (const auto& [name, p] : params) {
    (void)name;
    Slot s;
    s.param = p;
    s.m.assign(p.size(), 0.0);
    s.v.assign(p.size(), 0.0);
    slots_.push_back(std::move(s));
  }
}

void Adam::zero_grad() {
  for (auto& s : slots_) s.param.zero_grad();
}

void Adam::step() {
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (auto& s : slots_) {
    double* w = s.param.data();
    const std::vector<double>& g = s.param.grad();
    for (size_t i = 0; i < s.m.size(); ++i) {
      s.m[i] = beta1 * s.m[i] + (1.0 - beta1) * g[i];
      s.v[i] = beta2 * s.v[i] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = s.m[i] / bc1;
      const double vhat = s.v[i] / bc2;
      w[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * w[i]);
    }
  }
}

}  // namespace mmpred::num
