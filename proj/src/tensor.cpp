#include "mmpred/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "mmpred/error.hpp"

namespace mmpred::num {

namespace {

NodePtr make_node(int rows, int cols) {
  auto n = std::make_shared<TensorNode>();
  n->rows = rows;
  n->cols = cols;
  n->value.assign(static_cast<size_t>(rows) * cols, 0.0);
  return n;
}

std::string shape_str(const Tensor& t) {
  return "[" + std::to_string(t.rows()) + "," + std::to_string(t.cols()) + "]";
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw dim_error(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

// C[m,n] = A[m,k] * B[k,n]
void mm(const double* A, const double* B, double* C, int m, int k, int n) {
  std::fill(C, C + static_cast<size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    const double* arow = A + static_cast<size_t>(i) * k;
    double* crow = C + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double a = arow[p];
      const double* brow = B + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
void mm_nt_acc(const double* A, const double* B, double* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = A + static_cast<size_t>(i) * k;
    double* crow = C + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* brow = B + static_cast<size_t>(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
      crow[j] += s;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
void mm_tn_acc(const double* A, const double* B, double* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = A + static_cast<size_t>(i) * k;
    const double* brow = B + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double a = arow[p];
      double* crow = C + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
    }
  }
}

}  // namespace

Tensor Tensor::zeros(int rows, int cols, bool requires_grad) {
  Tensor t(make_node(rows, cols));
  t.node()->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::full(int rows, int cols, double v, bool requires_grad) {
  Tensor t = zeros(rows, cols, requires_grad);
  std::fill(t.vec().begin(), t.vec().end(), v);
  return t;
}

Tensor Tensor::from_vec(int rows, int cols, std::vector<double> data, bool requires_grad) {
  if (data.size() != static_cast<size_t>(rows) * cols) {
    throw dim_error("from_vec: data length " + std::to_string(data.size()) + " does not fill [" +
                    std::to_string(rows) + "," + std::to_string(cols) + "]");
  }
  auto n = std::make_shared<TensorNode>();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::scalar(double v, bool requires_grad) { return full(1, 1, v, requires_grad); }

Tensor Tensor::glorot(int rows, int cols, Rng& rng, bool requires_grad) {
  const double limit = std::sqrt(6.0 / (rows + cols));
  return uniform(rows, cols, limit, rng, requires_grad);
}

Tensor Tensor::uniform(int rows, int cols, double limit, Rng& rng, bool requires_grad) {
  Tensor t = zeros(rows, cols, requires_grad);
  for (auto& v : t.vec()) v = rng.uniform(-limit, limit);
  return t;
}

double Tensor::item() const {
  if (size() != 1) throw dim_error("item(): tensor is not scalar, shape " + shape_str(*this));
  return node_->value[0];
}

std::vector<double>& Tensor::grad() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  node_->ensure_grad();
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  auto n = std::make_shared<TensorNode>();
  n->rows = node_->rows;
  n->cols = node_->cols;
  n->value = node_->value;
  return Tensor(n);
}

void Tensor::backward() {
  if (size() != 1) throw dim_error("backward(): root must be scalar, got " + shape_str(*this));
  // Topological order over the requires_grad subgraph.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      TensorNode* p = n->parents[idx].get();
      ++idx;
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (TensorNode* n : order) n->ensure_grad();
  node_->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

namespace {

// Builds the result node, wiring parents and requires_grad propagation.
Tensor make_result(int rows, int cols, std::vector<NodePtr> parents,
                   std::function<void(TensorNode&)> backward) {
  auto n = make_node(rows, cols);
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  n->requires_grad = rg;
  if (rg) {
    n->parents = std::move(parents);
    n->backward = std::move(backward);
  }
  return Tensor(n);
}

void accumulate(TensorNode* dst, const double* g, size_t n) {
  if (!dst->requires_grad) return;
  dst->ensure_grad();
  for (size_t i = 0; i < n; ++i) dst->grad[i] += g[i];
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw dim_error("matmul: inner dims differ, " + shape_str(a) + " x " + shape_str(b));
  }
  const int m = a.rows(), k = a.cols(), n = b.cols();
  auto an = a.node();
  auto bn = b.node();
  Tensor out = make_result(m, n, {an, bn}, [an, bn, m, k, n](TensorNode& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      mm_nt_acc(self.grad.data(), bn->value.data(), an->grad.data(), m, n, k);
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      mm_tn_acc(an->value.data(), self.grad.data(), bn->grad.data(), m, k, n);
    }
  });
  mm(an->value.data(), bn->value.data(), out.data(), m, k, n);
  return out;
}

Tensor transpose(const Tensor& a) {
  const int m = a.rows(), n = a.cols();
  auto an = a.node();
  Tensor out = make_result(n, m, {an}, [an, m, n](TensorNode& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j)
        an->grad[static_cast<size_t>(j) * n + i] += self.grad[static_cast<size_t>(i) * m + j];
  });
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.data()[static_cast<size_t>(j) * m + i] = a.data()[static_cast<size_t>(i) * n + j];
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto an = a.node();
  auto bn = b.node();
  Tensor out = make_result(a.rows(), a.cols(), {an, bn}, [an, bn](TensorNode& self) {
    accumulate(an.get(), self.grad.data(), self.size());
    accumulate(bn.get(), self.grad.data(), self.size());
  });
  for (size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  return out;
}

Tensor add_rowvec(const Tensor& a, const Tensor& b) {
  if (b.rows() != 1 || b.cols() != a.cols()) {
    throw dim_error("add_rowvec: " + shape_str(a) + " + " + shape_str(b));
  }
  const int m = a.rows(), n = a.cols();
  auto an = a.node();
  auto bn = b.node();
  Tensor out = make_result(m, n, {an, bn}, [an, bn, m, n](TensorNode& self) {
    accumulate(an.get(), self.grad.data(), self.size());
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) bn->grad[j] += self.grad[static_cast<size_t>(i) * n + j];
    }
  });
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      const size_t idx = static_cast<size_t>(i) * n + j;
      out.data()[idx] = a.data()[idx] + b.data()[j];
    }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto an = a.node();
  auto bn = b.node();
  Tensor out = make_result(a.rows(), a.cols(), {an, bn}, [an, bn](TensorNode& self) {
    accumulate(an.get(), self.grad.data(), self.size());
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.size(); ++i) bn->grad[i] -= self.grad[i];
    }
  });
  for (size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto an = a.node();
  auto bn = b.node();
  Tensor out = make_result(a.rows(), a.cols(), {an, bn}, [an, bn](TensorNode& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < self.size(); ++i) an->grad[i] += self.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.size(); ++i) bn->grad[i] += self.grad[i] * an->value[i];
    }
  });
  for (size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  return out;
}

Tensor mul_colvec(const Tensor& a, const Tensor& b) {
  if (b.cols() != 1 || b.rows() != a.rows()) {
    throw dim_error("mul_colvec: " + shape_str(a) + " * " + shape_str(b));
  }
  const int m = a.rows(), n = a.cols();
  auto an = a.node();
  auto bn = b.node();
  Tensor out = make_result(m, n, {an, bn}, [an, bn, m, n](TensorNode& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          const size_t idx = static_cast<size_t>(i) * n + j;
          an->grad[idx] += self.grad[idx] * bn->value[i];
        }
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (int i = 0; i < m; ++i) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) {
          const size_t idx = static_cast<size_t>(i) * n + j;
          s += self.grad[idx] * an->value[idx];
        }
        bn->grad[i] += s;
      }
    }
  });
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      const size_t idx = static_cast<size_t>(i) * n + j;
      out.data()[idx] = a.data()[idx] * b.data()[i];
    }
  return out;
}

Tensor add_scalar(const Tensor& a, double c) {
  auto an = a.node();
  Tensor out = make_result(a.rows(), a.cols(), {an}, [an](TensorNode& self) {
    accumulate(an.get(), self.grad.data(), self.size());
  });
  for (size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] + c;
  return out;
}

Tensor mul_scalar(const Tensor& a, double c) {
  auto an = a.node();
  Tensor out = make_result(a.rows(), a.cols(), {an}, [an, c](TensorNode& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < self.size(); ++i) an->grad[i] += self.grad[i] * c;
  });
  for (size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] * c;
  return out;
}

Tensor relu(const Tensor& a) {
  auto an = a.node();
  Tensor out = make_result(a.rows(), a.cols(), {an}, [an](TensorNode& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < self.size(); ++i)
      if (an->value[i] > 0.0) an->grad[i] += self.grad[i];
  });
  for (size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
  return out;
}

Tensor tanh_act(const Tensor& a) {
  auto an = a.node();
  Tensor out = make_result(a.rows(), a.cols(), {an}, [an](TensorNode& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < self.size(); ++i)
      an->grad[i] += self.grad[i] * (1.0 - self.value[i] * self.value[i]);
  });
  for (size_t i = 0; i < out.size(); ++i) out.data()[i] = std::tanh(a.data()[i]);
  return out;
}

Tensor sigmoid(const Tensor& a) {
  auto an = a.node();
  Tensor out = make_result(a.rows(), a.cols(), {an}, [an](TensorNode& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < self.size(); ++i)
      an->grad[i] += self.grad[i] * self.value[i] * (1.0 - self.value[i]);
  });
  for (size_t i = 0; i < out.size(); ++i) out.data()[i] = 1.0 / (1.0 + std::exp(-a.data()[i]));
  return out;
}

Tensor softmax_rows(const Tensor& a) {
  const int m = a.rows(), n = a.cols();
  auto an = a.node();
  Tensor out = make_result(m, n, {an}, [an, m, n](TensorNode& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    // dx_j = y_j * (dy_j - sum_j' dy_j' y_j') per row
    for (int i = 0; i < m; ++i) {
      const double* y = self.value.data() + static_cast<size_t>(i) * n;
      const double* dy = self.grad.data() + static_cast<size_t>(i) * n;
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += dy[j] * y[j];
      double* dx = an->grad.data() + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - dot);
    }
  });
  for (int i = 0; i < m; ++i) {
    const double* x = a.data() + static_cast<size_t>(i) * n;
    double* y = out.data() + static_cast<size_t>(i) * n;
    double mx = x[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    for (int j = 0; j < n; ++j) y[j] /= sum;
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw dim_error("concat_cols: no parts");
  const int m = parts[0].rows();
  int n = 0;
  std::vector<NodePtr> parents;
  for (const auto& p : parts) {
    if (p.rows() != m) throw dim_error("concat_cols: row mismatch");
    n += p.cols();
    parents.push_back(p.node());
  }
  auto parents_copy = parents;
  Tensor out = make_result(m, n, std::move(parents), [parents_copy, m, n](TensorNode& self) {
    int off = 0;
    for (const auto& pn : parents_copy) {
      const int pc = pn->cols;
      if (pn->requires_grad) {
        pn->ensure_grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < pc; ++j)
            pn->grad[static_cast<size_t>(i) * pc + j] +=
                self.grad[static_cast<size_t>(i) * n + off + j];
      }
      off += pc;
    }
  });
  int off = 0;
  for (const auto& p : parts) {
    const int pc = p.cols();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < pc; ++j)
        out.data()[static_cast<size_t>(i) * n + off + j] = p.data()[static_cast<size_t>(i) * pc + j];
    off += pc;
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw dim_error("concat_rows: no parts");
  const int n = parts[0].cols();
  int m = 0;
  std::vector<NodePtr> parents;
  for (const auto& p : parts) {
    if (p.cols() != n) throw dim_error("concat_rows: col mismatch");
    m += p.rows();
    parents.push_back(p.node());
  }
  auto parents_copy = parents;
  Tensor out = make_result(m, n, std::move(parents), [parents_copy, n](TensorNode& self) {
    size_t off = 0;
    for (const auto& pn : parents_copy) {
      const size_t cnt = pn->size();
      if (pn->requires_grad) {
        pn->ensure_grad();
        for (size_t i = 0; i < cnt; ++i) pn->grad[i] += self.grad[off + i];
      }
      off += cnt;
    }
  });
  size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data(), p.data() + p.size(), out.data() + off);
    off += p.size();
  }
  return out;
}

Tensor mean_all(const Tensor& a) {
  auto an = a.node();
  const double inv = 1.0 / static_cast<double>(a.size());
  Tensor out = make_result(1, 1, {an}, [an, inv](TensorNode& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    const double g = self.grad[0] * inv;
    for (auto& v : an->grad) v += g;
  });
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a.data()[i];
  out.data()[0] = s * inv;
  return out;
}

Tensor mean_axis0(const Tensor& a) {
  const int m = a.rows(), n = a.cols();
  auto an = a.node();
  const double inv = 1.0 / m;
  Tensor out = make_result(1, n, {an}, [an, m, n, inv](TensorNode& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) an->grad[static_cast<size_t>(i) * n + j] += self.grad[j] * inv;
  });
  for (int j = 0; j < n; ++j) {
    double s = 0.0;
    for (int i = 0; i < m; ++i) s += a.data()[static_cast<size_t>(i) * n + j];
    out.data()[j] = s * inv;
  }
  return out;
}

Tensor row_slice(const Tensor& a, int r0, int r1) {
  if (r0 < 0 || r1 > a.rows() || r0 >= r1) throw dim_error("row_slice: bad range");
  const int n = a.cols(), m = r1 - r0;
  auto an = a.node();
  Tensor out = make_result(m, n, {an}, [an, r0, m, n](TensorNode& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        an->grad[static_cast<size_t>(i + r0) * n + j] += self.grad[static_cast<size_t>(i) * n + j];
  });
  std::copy(a.data() + static_cast<size_t>(r0) * n, a.data() + static_cast<size_t>(r1) * n,
            out.data());
  return out;
}

Tensor bce_loss(const Tensor& probs, const Tensor& targets) {
  require_same_shape(probs, targets, "bce_loss");
  static constexpr double kEps = 1e-12;
  auto pn = probs.node();
  auto tn = targets.node();
  const size_t cnt = probs.size();
  const double inv = 1.0 / static_cast<double>(cnt);
  Tensor out = make_result(1, 1, {pn, tn}, [pn, tn, cnt, inv](TensorNode& self) {
    if (!pn->requires_grad) return;
    pn->ensure_grad();
    const double g = self.grad[0] * inv;
    for (size_t i = 0; i < cnt; ++i) {
      const double p = std::clamp(pn->value[i], kEps, 1.0 - kEps);
      const double y = tn->value[i];
      pn->grad[i] += g * (p - y) / (p * (1.0 - p));
    }
  });
  double loss = 0.0;
  for (size_t i = 0; i < cnt; ++i) {
    const double p = std::clamp(probs.data()[i], kEps, 1.0 - kEps);
    const double y = targets.data()[i];
    loss -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  out.data()[0] = loss * inv;
  return out;
}

Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets) {
  const int m = logits.rows(), n = logits.cols();
  if (static_cast<int>(targets.size()) != m) {
    throw dim_error("cross_entropy_rows: targets length " + std::to_string(targets.size()) +
                    " vs rows " + std::to_string(m));
  }
  for (int t : targets) {
    if (t < 0 || t >= n) throw dim_error("cross_entropy_rows: target class out of range");
  }
  auto ln = logits.node();
  auto softmax = std::make_shared<std::vector<double>>(logits.size());
  auto tgt = std::make_shared<std::vector<int>>(targets);
  Tensor out = make_result(1, 1, {ln}, [ln, softmax, tgt, m, n](TensorNode& self) {
    if (!ln->requires_grad) return;
    ln->ensure_grad();
    const double g = self.grad[0] / m;
    for (int i = 0; i < m; ++i) {
      const size_t base = static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        const double onehot = j == (*tgt)[i] ? 1.0 : 0.0;
        ln->grad[base + j] += g * ((*softmax)[base + j] - onehot);
      }
    }
  });
  double loss = 0.0;
  for (int i = 0; i < m; ++i) {
    const size_t base = static_cast<size_t>(i) * n;
    double mx = logits.data()[base];
    for (int j = 1; j < n; ++j) mx = std::max(mx, logits.data()[base + j]);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      (*softmax)[base + j] = std::exp(logits.data()[base + j] - mx);
      sum += (*softmax)[base + j];
    }
    for (int j = 0; j < n; ++j) (*softmax)[base + j] /= sum;
    loss -= std::log(std::max((*softmax)[base + targets[i]], 1e-300));
  }
  out.data()[0] = loss / m;
  return out;
}

namespace {

// Shared normalization backward: xhat/inv_std captured per column (axis=0) or
// per row (axis=1); gamma/beta are [1,n] for batch norm, [1,n] for layer norm.
struct NormCache {
  std::vector<double> xhat;
  std::vector<double> inv_std;  // one per column (bn) or per row (ln)
};

}  // namespace

Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                        std::vector<double>* batch_mean, std::vector<double>* batch_var) {
  const int m = x.rows(), n = x.cols();
  if (gamma.cols() != n || beta.cols() != n) throw dim_error("batch_norm: gamma/beta width");
  auto cache = std::make_shared<NormCache>();
  cache->xhat.resize(static_cast<size_t>(m) * n);
  cache->inv_std.resize(n);
  std::vector<double> mu(n, 0.0), var(n, 0.0);
  for (int j = 0; j < n; ++j) {
    double s = 0.0;
    for (int i = 0; i < m; ++i) s += x.at(i, j);
    mu[j] = s / m;
    double v = 0.0;
    for (int i = 0; i < m; ++i) {
      const double d = x.at(i, j) - mu[j];
      v += d * d;
    }
    var[j] = v / m;
    cache->inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
  }
  if (batch_mean) *batch_mean = mu;
  if (batch_var) *batch_var = var;

  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  Tensor out = make_result(m, n, {xn, gn, bn}, [xn, gn, bn, cache, m, n](TensorNode& self) {
    // dbeta_j = sum_i dy; dgamma_j = sum_i dy*xhat;
    // dx = inv_std/m * (m*dxh - sum(dxh) - xhat*sum(dxh*xhat)), dxh = dy*gamma
    for (int j = 0; j < n; ++j) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int i = 0; i < m; ++i) {
        const size_t idx = static_cast<size_t>(i) * n + j;
        sum_dy += self.grad[idx];
        sum_dy_xhat += self.grad[idx] * cache->xhat[idx];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        bn->grad[j] += sum_dy;
      }
      if (gn->requires_grad) {
        gn->ensure_grad();
        gn->grad[j] += sum_dy_xhat;
      }
      if (xn->requires_grad) {
        xn->ensure_grad();
        const double g = gn->value[j];
        const double k = cache->inv_std[j] / m;
        for (int i = 0; i < m; ++i) {
          const size_t idx = static_cast<size_t>(i) * n + j;
          xn->grad[idx] +=
              k * g * (m * self.grad[idx] - sum_dy - cache->xhat[idx] * sum_dy_xhat);
        }
      }
    }
  });
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      const size_t idx = static_cast<size_t>(i) * n + j;
      cache->xhat[idx] = (x.data()[idx] - mu[j]) * cache->inv_std[j];
      out.data()[idx] = gamma.data()[j] * cache->xhat[idx] + beta.data()[j];
    }
  return out;
}

Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                       const std::vector<double>& mean, const std::vector<double>& var) {
  const int m = x.rows(), n = x.cols();
  if (gamma.cols() != n || beta.cols() != n) throw dim_error("batch_norm_eval: gamma/beta width");
  auto inv_std = std::make_shared<std::vector<double>>(n);
  for (int j = 0; j < n; ++j) (*inv_std)[j] = 1.0 / std::sqrt(var[j] + eps);
  auto mu = std::make_shared<std::vector<double>>(mean);

  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  Tensor out = make_result(m, n, {xn, gn, bn}, [xn, gn, bn, inv_std, mu, m, n](TensorNode& self) {
    for (int j = 0; j < n; ++j) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int i = 0; i < m; ++i) {
        const size_t idx = static_cast<size_t>(i) * n + j;
        const double xhat = (xn->value[idx] - (*mu)[j]) * (*inv_std)[j];
        sum_dy += self.grad[idx];
        sum_dy_xhat += self.grad[idx] * xhat;
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        bn->grad[j] += sum_dy;
      }
      if (gn->requires_grad) {
        gn->ensure_grad();
        gn->grad[j] += sum_dy_xhat;
      }
      if (xn->requires_grad) {
        xn->ensure_grad();
        const double k = gn->value[j] * (*inv_std)[j];
        for (int i = 0; i < m; ++i) {
          const size_t idx = static_cast<size_t>(i) * n + j;
          xn->grad[idx] += k * self.grad[idx];
        }
      }
    }
  });
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      const size_t idx = static_cast<size_t>(i) * n + j;
      out.data()[idx] = gamma.data()[j] * (x.data()[idx] - mean[j]) * (*inv_std)[j] + beta.data()[j];
    }
  return out;
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const int m = x.rows(), n = x.cols();
  if (gamma.cols() != n || beta.cols() != n) throw dim_error("layer_norm: gamma/beta width");
  auto cache = std::make_shared<NormCache>();
  cache->xhat.resize(static_cast<size_t>(m) * n);
  cache->inv_std.resize(m);

  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  Tensor out = make_result(m, n, {xn, gn, bn}, [xn, gn, bn, cache, m, n](TensorNode& self) {
    for (int i = 0; i < m; ++i) {
      double sum_dxh = 0.0, sum_dxh_xhat = 0.0;
      const size_t base = static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        const double dxh = self.grad[base + j] * gn->value[j];
        sum_dxh += dxh;
        sum_dxh_xhat += dxh * cache->xhat[base + j];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (int j = 0; j < n; ++j) bn->grad[j] += self.grad[base + j];
      }
      if (gn->requires_grad) {
        gn->ensure_grad();
        for (int j = 0; j < n; ++j) gn->grad[j] += self.grad[base + j] * cache->xhat[base + j];
      }
      if (xn->requires_grad) {
        xn->ensure_grad();
        const double k = cache->inv_std[i] / n;
        for (int j = 0; j < n; ++j) {
          const double dxh = self.grad[base + j] * gn->value[j];
          xn->grad[base + j] += k * (n * dxh - sum_dxh - cache->xhat[base + j] * sum_dxh_xhat);
        }
      }
    }
  });
  for (int i = 0; i < m; ++i) {
    const size_t base = static_cast<size_t>(i) * n;
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += x.data()[base + j];
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
      const double d = x.data()[base + j] - mu;
      var += d * d;
    }
    var /= n;
    cache->inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < n; ++j) {
      cache->xhat[base + j] = (x.data()[base + j] - mu) * cache->inv_std[i];
      out.data()[base + j] = gamma.data()[j] * cache->xhat[base + j] + beta.data()[j];
    }
  }
  return out;
}

Tensor dropout_train(const Tensor& x, double rate, Rng& rng) {
  if (rate <= 0.0) return add_scalar(x, 0.0);
  if (rate >= 1.0) throw dim_error("dropout: rate must be < 1");
  const double scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(x.size());
  for (auto& m : *mask) m = rng.uniform() < rate ? 0.0 : scale;
  auto xn = x.node();
  Tensor out = make_result(x.rows(), x.cols(), {xn}, [xn, mask](TensorNode& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (size_t i = 0; i < self.size(); ++i) xn->grad[i] += self.grad[i] * (*mask)[i];
  });
  for (size_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] * (*mask)[i];
  return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  const int d = table.cols();
  const int L = static_cast<int>(ids.size());
  for (int id : ids) {
    if (id < 0 || id >= table.rows()) {
      throw dim_error("embedding_lookup: id " + std::to_string(id) + " outside table of " +
                      std::to_string(table.rows()));
    }
  }
  auto tn = table.node();
  auto ids_copy = std::make_shared<std::vector<int>>(ids);
  Tensor out = make_result(L, d, {tn}, [tn, ids_copy, d, L](TensorNode& self) {
    if (!tn->requires_grad) return;
    tn->ensure_grad();
    for (int i = 0; i < L; ++i) {
      const size_t src = static_cast<size_t>(i) * d;
      const size_t dst = static_cast<size_t>((*ids_copy)[i]) * d;
      for (int j = 0; j < d; ++j) tn->grad[dst + j] += self.grad[src + j];
    }
  });
  for (int i = 0; i < L; ++i) {
    const size_t src = static_cast<size_t>(ids[i]) * d;
    std::copy(table.data() + src, table.data() + src + d, out.data() + static_cast<size_t>(i) * d);
  }
  return out;
}

Tensor add_const(const Tensor& a, const std::vector<double>& c) {
  if (c.size() != a.size()) throw dim_error("add_const: buffer size mismatch");
  auto an = a.node();
  Tensor out = make_result(a.rows(), a.cols(), {an}, [an](TensorNode& self) {
    accumulate(an.get(), self.grad.data(), self.size());
  });
  for (size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + c[i];
  return out;
}

}  // namespace mmpred::num
