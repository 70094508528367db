#include "prunelab/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace prunelab {

template <typename T>
Var Tape<T>::parameter(Tensor<T> value, std::string tag) {
  if (tag.empty()) throw ContractError("parameter leaves need a tag");
  if (tags_.count(tag)) throw ContractError("duplicate parameter tag '" + tag + "'");
  value.set_tag(tag);
  Node node;
  node.value = std::move(value);
  node.requires_grad = record_;
  nodes_.push_back(std::move(node));
  tags_.emplace(std::move(tag), nodes_.size() - 1);
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::constant(Tensor<T> value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::record(Tensor<T> value, std::vector<Var> inputs, Backward backward) {
  Node node;
  node.value = std::move(value);
  if (record_) {
    for (auto in : inputs) {
      if (in.id >= nodes_.size()) throw ContractError("operation input is not on this tape");
      node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
    }
    if (node.requires_grad) {
      node.inputs.reserve(inputs.size());
      for (auto in : inputs) node.inputs.push_back(in.id);
      node.backward = std::move(backward);
    }
  }
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

template <typename T>
TensorMap<T> Tape<T>::grad(Var loss, std::span<const std::string> tags) {
  if (loss.id >= nodes_.size()) throw ContractError("loss is not on this tape");
  if (!nodes_[loss.id].value.is_scalar()) {
    throw ShapeError("grad needs a scalar loss, got shape " + shape_string(nodes_[loss.id].value.shape()));
  }
  for (const auto& tag : tags) {
    if (!tags_.count(tag)) throw ContractError("tag '" + tag + "' is not on the tape");
  }

  std::vector<Tensor<T>> grads(loss.id + 1);
  if (nodes_[loss.id].requires_grad) {
    grads[loss.id] = Tensor<T>(nodes_[loss.id].value.shape(), T{1});
  }
  std::vector<Tensor<T>*> slots;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.backward || grads[i].empty()) continue;
    slots.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const std::size_t in = node.inputs[k];
      if (!nodes_[in].requires_grad) continue;
      if (grads[in].empty()) grads[in] = Tensor<T>(nodes_[in].value.shape(), T{0});
      slots[k] = &grads[in];
    }
    node.backward(grads[i], slots);
  }

  TensorMap<T> out;
  for (const auto& tag : tags) {
    const std::size_t id = tags_.at(tag);
    Tensor<T> g = (id < grads.size() && !grads[id].empty()) ? std::move(grads[id])
                                                             : Tensor<T>(nodes_[id].value.shape(), T{0});
    g.set_tag(tag);
    out.emplace(tag, std::move(g));
  }
  return out;
}

template <typename T>
TensorMap<T> Tape<T>::grad(Var loss) {
  std::vector<std::string> all;
  all.reserve(tags_.size());
  for (const auto& [tag, id] : tags_) all.push_back(tag);
  return grad(loss, all);
}

namespace ops {

namespace {

template <typename T>
void require_matrix(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + " expects a matrix, got " + shape_string(t.shape()));
}

template <typename T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

}  // namespace

template <typename T>
Var matmul(Tape<T>& tape, Var a, Var b) {
  const auto& A = tape.value(a);
  const auto& B = tape.value(b);
  require_matrix(A, "matmul");
  require_matrix(B, "matmul");
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  if (B.rows() != k) throw ShapeError("matmul: " + shape_string(A.shape()) + " x " + shape_string(B.shape()));
  Tensor<T> out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = A.at(i, p);
      const T* brow = &B.at(p, 0);
      T* orow = &out.at(i, 0);
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  const Tensor<T>* pa = &A;
  const Tensor<T>* pb = &B;
  return tape.record(std::move(out), {a, b}, [pa, pb, m, k, n](const Tensor<T>& g, std::span<Tensor<T>* const> in) {
    if (in[0]) {
      auto& ga = *in[0];
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          T s{0};
          for (std::size_t j = 0; j < n; ++j) s += g.at(i, j) * pb->at(p, j);
          ga.at(i, p) += s;
        }
    }
    if (in[1]) {
      auto& gb = *in[1];
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const T aip = pa->at(i, p);
          for (std::size_t j = 0; j < n; ++j) gb.at(p, j) += aip * g.at(i, j);
        }
    }
  });
}

template <typename T>
Var matmul_nt(Tape<T>& tape, Var a, Var b) {
  const auto& A = tape.value(a);
  const auto& B = tape.value(b);
  require_matrix(A, "matmul_nt");
  require_matrix(B, "matmul_nt");
  const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
  if (B.cols() != k) {
    throw ShapeError("matmul_nt: " + shape_string(A.shape()) + " x " + shape_string(B.shape()) + "^T");
  }
  Tensor<T> out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = &A.at(i, 0);
    T* orow = &out.at(i, 0);
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = &B.at(j, 0);
      T s{0};
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      orow[j] = s;
    }
  }
  const Tensor<T>* pa = &A;
  const Tensor<T>* pb = &B;
  return tape.record(std::move(out), {a, b}, [pa, pb, m, k, n](const Tensor<T>& g, std::span<Tensor<T>* const> in) {
    if (in[0]) {
      auto& ga = *in[0];
      for (std::size_t i = 0; i < m; ++i) {
        T* garow = &ga.at(i, 0);
        for (std::size_t j = 0; j < n; ++j) {
          const T gij = g.at(i, j);
          if (gij == T{0}) continue;
          const T* brow = &pb->at(j, 0);
          for (std::size_t p = 0; p < k; ++p) garow[p] += gij * brow[p];
        }
      }
    }
    if (in[1]) {
      auto& gb = *in[1];
      for (std::size_t i = 0; i < m; ++i) {
        const T* arow = &pa->at(i, 0);
        for (std::size_t j = 0; j < n; ++j) {
          const T gij = g.at(i, j);
          if (gij == T{0}) continue;
          T* gbrow = &gb.at(j, 0);
          for (std::size_t p = 0; p < k; ++p) gbrow[p] += gij * arow[p];
        }
      }
    }
  });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  const auto& A = tape.value(a);
  const auto& B = tape.value(b);
  require_same(A, B, "add");
  Tensor<T> out = A;
  out.set_tag({});
  out.add_inplace(B);
  return tape.record(std::move(out), {a, b}, [](const Tensor<T>& g, std::span<Tensor<T>* const> in) {
    if (in[0]) in[0]->add_inplace(g);
    if (in[1]) in[1]->add_inplace(g);
  });
}

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
  const auto& A = tape.value(a);
  const auto& B = tape.value(b);
  require_same(A, B, "mul");
  Tensor<T> out(A.shape());
  for (std::size_t i = 0; i < A.numel(); ++i) out[i] = A[i] * B[i];
  const Tensor<T>* pa = &A;
  const Tensor<T>* pb = &B;
  return tape.record(std::move(out), {a, b}, [pa, pb](const Tensor<T>& g, std::span<Tensor<T>* const> in) {
    if (in[0])
      for (std::size_t i = 0; i < g.numel(); ++i) (*in[0])[i] += g[i] * (*pb)[i];
    if (in[1])
      for (std::size_t i = 0; i < g.numel(); ++i) (*in[1])[i] += g[i] * (*pa)[i];
  });
}

template <typename T>
Var scale(Tape<T>& tape, Var a, T factor) {
  Tensor<T> out = tape.value(a);
  out.set_tag({});
  out.scale_inplace(factor);
  return tape.record(std::move(out), {a}, [factor](const Tensor<T>& g, std::span<Tensor<T>* const> in) {
    for (std::size_t i = 0; i < g.numel(); ++i) (*in[0])[i] += factor * g[i];
  });
}

template <typename T>
Var sum(Tape<T>& tape, Var a) {
  const auto& A = tape.value(a);
  T s{0};
  for (auto v : A.data()) s += v;
  return tape.record(Tensor<T>::scalar(s), {a}, [](const Tensor<T>& g, std::span<Tensor<T>* const> in) {
    const T gv = g[0];
    for (auto& v : in[0]->data()) v += gv;
  });
}

template <typename T>
Var silu(Tape<T>& tape, Var a) {
  const auto& A = tape.value(a);
  Tensor<T> out(A.shape());
  for (std::size_t i = 0; i < A.numel(); ++i) {
    const T x = A[i];
    out[i] = x / (T{1} + std::exp(-x));
  }
  const Tensor<T>* pa = &A;
  return tape.record(std::move(out), {a}, [pa](const Tensor<T>& g, std::span<Tensor<T>* const> in) {
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const T x = (*pa)[i];
      const T s = T{1} / (T{1} + std::exp(-x));
      (*in[0])[i] += g[i] * s * (T{1} + x * (T{1} - s));
    }
  });
}

template <typename T>
Var softmax_rows(Tape<T>& tape, Var a) {
  const auto& A = tape.value(a);
  require_matrix(A, "softmax_rows");
  const std::size_t m = A.rows(), n = A.cols();
  Tensor<T> out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    auto x = A.row(i);
    auto y = out.row(i);
    const T mx = *std::max_element(x.begin(), x.end());
    T z{0};
    for (std::size_t j = 0; j < n; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (auto& v : y) v /= z;
  }
  auto saved = std::make_shared<Tensor<T>>(out);
  return tape.record(std::move(out), {a}, [saved, m, n](const Tensor<T>& g, std::span<Tensor<T>* const> in) {
    for (std::size_t i = 0; i < m; ++i) {
      auto y = saved->row(i);
      auto gy = g.row(i);
      T dot{0};
      for (std::size_t j = 0; j < n; ++j) dot += gy[j] * y[j];
      auto gx = in[0]->row(i);
      for (std::size_t j = 0; j < n; ++j) gx[j] += y[j] * (gy[j] - dot);
    }
  });
}

template <typename T>
Var rms_norm(Tape<T>& tape, Var x, Var gain, T eps) {
  const auto& X = tape.value(x);
  const auto& G = tape.value(gain);
  require_matrix(X, "rms_norm");
  const std::size_t m = X.rows(), n = X.cols();
  if (G.numel() != n) throw ShapeError("rms_norm gain " + shape_string(G.shape()) + " for width " + std::to_string(n));
  Tensor<T> out({m, n});
  auto inv = std::make_shared<std::vector<T>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    auto xr = X.row(i);
    T ss{0};
    for (auto v : xr) ss += v * v;
    const T r = T{1} / std::sqrt(ss / static_cast<T>(n) + eps);
    (*inv)[i] = r;
    auto yr = out.row(i);
    for (std::size_t j = 0; j < n; ++j) yr[j] = xr[j] * r * G[j];
  }
  const Tensor<T>* px = &X;
  const Tensor<T>* pg = &G;
  return tape.record(std::move(out), {x, gain},
                     [px, pg, inv, m, n](const Tensor<T>& g, std::span<Tensor<T>* const> in) {
                       for (std::size_t i = 0; i < m; ++i) {
                         const T r = (*inv)[i];
                         auto xr = px->row(i);
                         auto gr = g.row(i);
                         if (in[1]) {
                           for (std::size_t j = 0; j < n; ++j) (*in[1])[j] += gr[j] * xr[j] * r;
                         }
                         if (in[0]) {
                           T dot{0};
                           for (std::size_t j = 0; j < n; ++j) dot += gr[j] * (*pg)[j] * xr[j] * r;
                           dot /= static_cast<T>(n);
                           auto gx = in[0]->row(i);
                           for (std::size_t j = 0; j < n; ++j) {
                             const T xhat = xr[j] * r;
                             gx[j] += r * (gr[j] * (*pg)[j] - xhat * dot);
                           }
                         }
                       }
                     });
}

namespace {

template <typename T>
struct RotaryTable {
  std::vector<T> cos, sin;  // [len, head_dim/2]
};

template <typename T>
RotaryTable<T> rotary_table(std::size_t len, std::size_t head_dim, double base) {
  const std::size_t half = head_dim / 2;
  RotaryTable<T> t;
  t.cos.resize(len * half);
  t.sin.resize(len * half);
  for (std::size_t pos = 0; pos < len; ++pos) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
      const double angle = static_cast<double>(pos) * freq;
      t.cos[pos * half + i] = static_cast<T>(std::cos(angle));
      t.sin[pos * half + i] = static_cast<T>(std::sin(angle));
    }
  }
  return t;
}

}  // namespace

template <typename T>
Var rope(Tape<T>& tape, Var x, std::size_t head_dim, double base) {
  const auto& X = tape.value(x);
  require_matrix(X, "rope");
  const std::size_t len = X.rows(), width = X.cols();
  if (head_dim == 0 || head_dim % 2 != 0 || width % head_dim != 0) {
    throw ShapeError("rope needs an even head_dim dividing width " + std::to_string(width));
  }
  const std::size_t heads = width / head_dim, half = head_dim / 2;
  auto table = std::make_shared<RotaryTable<T>>(rotary_table<T>(len, head_dim, base));
  Tensor<T> out({len, width});
  for (std::size_t pos = 0; pos < len; ++pos) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < half; ++i) {
        const std::size_t c0 = h * head_dim + 2 * i;
        const T c = table->cos[pos * half + i], s = table->sin[pos * half + i];
        const T x0 = X.at(pos, c0), x1 = X.at(pos, c0 + 1);
        out.at(pos, c0) = x0 * c - x1 * s;
        out.at(pos, c0 + 1) = x0 * s + x1 * c;
      }
    }
  }
  return tape.record(std::move(out), {x},
                     [table, len, heads, head_dim, half](const Tensor<T>& g, std::span<Tensor<T>* const> in) {
                       auto& gx = *in[0];
                       for (std::size_t pos = 0; pos < len; ++pos)
                         for (std::size_t h = 0; h < heads; ++h)
                           for (std::size_t i = 0; i < half; ++i) {
                             const std::size_t c0 = h * head_dim + 2 * i;
                             const T c = table->cos[pos * half + i], s = table->sin[pos * half + i];
                             const T g0 = g.at(pos, c0), g1 = g.at(pos, c0 + 1);
                             gx.at(pos, c0) += g0 * c + g1 * s;
                             gx.at(pos, c0 + 1) += -g0 * s + g1 * c;
                           }
                     });
}

template <typename T>
Var causal_attention(Tape<T>& tape, Var q, Var k, Var v, std::size_t head_dim) {
  const auto& Q = tape.value(q);
  const auto& K = tape.value(k);
  const auto& V = tape.value(v);
  require_matrix(Q, "causal_attention");
  require_same(Q, K, "causal_attention q/k");
  require_same(Q, V, "causal_attention q/v");
  const std::size_t len = Q.rows(), width = Q.cols();
  if (head_dim == 0 || width % head_dim != 0) throw ShapeError("causal_attention: head_dim does not divide width");
  const std::size_t heads = width / head_dim;
  const T inv_sqrt = T{1} / std::sqrt(static_cast<T>(head_dim));

  // probs[h][i*len + j], j <= i
  auto probs = std::make_shared<std::vector<T>>(heads * len * len, T{0});
  Tensor<T> out({len, width});
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * head_dim;
    T* P = probs->data() + h * len * len;
    for (std::size_t i = 0; i < len; ++i) {
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j <= i; ++j) {
        T s{0};
        for (std::size_t d = 0; d < head_dim; ++d) s += Q.at(i, off + d) * K.at(j, off + d);
        s *= inv_sqrt;
        P[i * len + j] = s;
        mx = std::max(mx, s);
      }
      T z{0};
      for (std::size_t j = 0; j <= i; ++j) z += (P[i * len + j] = std::exp(P[i * len + j] - mx));
      for (std::size_t j = 0; j <= i; ++j) {
        const T p = (P[i * len + j] /= z);
        for (std::size_t d = 0; d < head_dim; ++d) out.at(i, off + d) += p * V.at(j, off + d);
      }
    }
  }
  const Tensor<T>* pq = &Q;
  const Tensor<T>* pk = &K;
  const Tensor<T>* pv = &V;
  return tape.record(
      std::move(out), {q, k, v},
      [pq, pk, pv, probs, len, heads, head_dim, inv_sqrt](const Tensor<T>& g, std::span<Tensor<T>* const> in) {
        std::vector<T> dp(len);
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t off = h * head_dim;
          const T* P = probs->data() + h * len * len;
          for (std::size_t i = 0; i < len; ++i) {
            T dot{0};
            for (std::size_t j = 0; j <= i; ++j) {
              T s{0};
              for (std::size_t d = 0; d < head_dim; ++d) s += g.at(i, off + d) * pv->at(j, off + d);
              dp[j] = s;
              dot += s * P[i * len + j];
            }
            for (std::size_t j = 0; j <= i; ++j) {
              const T p = P[i * len + j];
              if (in[2])
                for (std::size_t d = 0; d < head_dim; ++d) in[2]->at(j, off + d) += p * g.at(i, off + d);
              const T ds = p * (dp[j] - dot) * inv_sqrt;
              if (in[0])
                for (std::size_t d = 0; d < head_dim; ++d) in[0]->at(i, off + d) += ds * pk->at(j, off + d);
              if (in[1])
                for (std::size_t d = 0; d < head_dim; ++d) in[1]->at(j, off + d) += ds * pq->at(i, off + d);
            }
          }
        }
      });
}

template <typename T>
Var gather_rows(Tape<T>& tape, Var table, std::span<const std::size_t> ids) {
  const auto& W = tape.value(table);
  require_matrix(W, "gather_rows");
  if (ids.empty()) throw ShapeError("gather_rows needs at least one id");
  const std::size_t n = W.cols();
  Tensor<T> out({ids.size(), n});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= W.rows()) {
      throw ContractError("id " + std::to_string(ids[i]) + " out of range for table of " + std::to_string(W.rows()));
    }
    std::copy_n(&W.at(ids[i], 0), n, &out.at(i, 0));
  }
  auto saved = std::make_shared<std::vector<std::size_t>>(ids.begin(), ids.end());
  return tape.record(std::move(out), {table}, [saved, n](const Tensor<T>& g, std::span<Tensor<T>* const> in) {
    for (std::size_t i = 0; i < saved->size(); ++i) {
      T* dst = &in[0]->at((*saved)[i], 0);
      const T* src = &g.at(i, 0);
      for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
    }
  });
}

template <typename T>
Var cross_entropy(Tape<T>& tape, Var logits, std::span<const std::size_t> targets, std::span<const T> weights) {
  const auto& L = tape.value(logits);
  require_matrix(L, "cross_entropy");
  const std::size_t m = L.rows(), n = L.cols();
  std::vector<T> ones;
  if (weights.empty()) {
    ones.assign(m, T{1});
    weights = ones;
  }
  if (targets.size() != m || weights.size() != m) {
    throw ShapeError("cross_entropy: " + std::to_string(m) + " rows but " + std::to_string(targets.size()) +
                     " targets and " + std::to_string(weights.size()) + " weights");
  }
  T total_w{0};
  for (auto w : weights) {
    if (w < T{0}) throw ContractError("cross_entropy weights must be nonnegative");
    total_w += w;
  }
  if (total_w <= T{0}) throw ContractError("cross_entropy needs a positive total weight");

  auto probs = std::make_shared<Tensor<T>>(Shape{m, n});
  T loss{0};
  for (std::size_t i = 0; i < m; ++i) {
    if (targets[i] >= n) throw ContractError("target " + std::to_string(targets[i]) + " out of vocabulary");
    auto x = L.row(i);
    auto p = probs->row(i);
    const T mx = *std::max_element(x.begin(), x.end());
    T z{0};
    for (std::size_t j = 0; j < n; ++j) z += (p[j] = std::exp(x[j] - mx));
    for (auto& v : p) v /= z;
    if (weights[i] != T{0}) loss += weights[i] * (std::log(z) + mx - x[targets[i]]);
  }
  loss /= total_w;
  auto tgt = std::make_shared<std::vector<std::size_t>>(targets.begin(), targets.end());
  auto wts = std::make_shared<std::vector<T>>(weights.begin(), weights.end());
  return tape.record(Tensor<T>::scalar(loss), {logits},
                     [probs, tgt, wts, total_w, m, n](const Tensor<T>& g, std::span<Tensor<T>* const> in) {
                       const T gv = g[0];
                       for (std::size_t i = 0; i < m; ++i) {
                         const T w = (*wts)[i];
                         if (w == T{0}) continue;
                         const T c = gv * w / total_w;
                         auto p = probs->row(i);
                         auto gl = in[0]->row(i);
                         for (std::size_t j = 0; j < n; ++j) gl[j] += c * p[j];
                         gl[(*tgt)[i]] -= c;
                       }
                     });
}

#define PRUNELAB_INSTANTIATE_OPS(T)                                                                        \
  template Var matmul<T>(Tape<T>&, Var, Var);                                                              \
  template Var matmul_nt<T>(Tape<T>&, Var, Var);                                                           \
  template Var add<T>(Tape<T>&, Var, Var);                                                                 \
  template Var mul<T>(Tape<T>&, Var, Var);                                                                 \
  template Var scale<T>(Tape<T>&, Var, T);                                                                 \
  template Var sum<T>(Tape<T>&, Var);                                                                      \
  template Var silu<T>(Tape<T>&, Var);                                                                     \
  template Var softmax_rows<T>(Tape<T>&, Var);                                                             \
  template Var rms_norm<T>(Tape<T>&, Var, Var, T);                                                         \
  template Var rope<T>(Tape<T>&, Var, std::size_t, double);                                                \
  template Var causal_attention<T>(Tape<T>&, Var, Var, Var, std::size_t);                                  \
  template Var gather_rows<T>(Tape<T>&, Var, std::span<const std::size_t>);                                \
  template Var cross_entropy<T>(Tape<T>&, Var, std::span<const std::size_t>, std::span<const T>);

PRUNELAB_INSTANTIATE_OPS(float)
PRUNELAB_INSTANTIATE_OPS(double)

#undef PRUNELAB_INSTANTIATE_OPS

}  // namespace ops

TensorMap<double> finite_diff_gradient(const std::function<double(const TensorMap<double>&)>& f,
                                       TensorMap<double> params, double epsilon) {
  if (!(epsilon > 0.0)) throw ContractError("finite_diff_gradient needs epsilon > 0");
  TensorMap<double> out;
  for (auto& [tag, tensor] : params) {
    Tensor<double> g(tensor.shape());
    g.set_tag(tag);
    for (std::size_t i = 0; i < tensor.numel(); ++i) {
      const double original = tensor[i];
      tensor[i] = original + epsilon;
      const double up = f(params);
      tensor[i] = original - epsilon;
      const double down = f(params);
      tensor[i] = original;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("finite_diff_gradient: non-finite value probing '" + tag + "' element " +
                           std::to_string(i));
      }
      g[i] = (up - down) / (2.0 * epsilon);
    }
    out.emplace(tag, std::move(g));
  }
  return out;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace prunelab
