#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "prunelab/tensor.hpp"

namespace prunelab {

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

template <typename T>
using TensorMap = std::map<std::string, Tensor<T>>;

/// Reverse-mode record of primitive operations.
///
/// Nodes are appended in evaluation order, so inputs always precede the
/// operation that consumes them and a single reverse sweep is a valid
/// backward pass. A tape constructed with `record = false` still stores
/// values but keeps no backward closures (inference mode).
template <typename T>
class Tape {
 public:
  /// Receives the output gradient and one slot per input; a slot is null when
  /// that input does not require a gradient.
  using Backward = std::function<void(const Tensor<T>& out_grad, std::span<Tensor<T>* const> in_grads)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return record_; }

  /// Leaf that receives a gradient, identified by a unique tag.
  Var parameter(Tensor<T> value, std::string tag);
  /// Leaf without a gradient.
  Var constant(Tensor<T> value);

  Var record(Tensor<T> value, std::vector<Var> inputs, Backward backward);

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool has_tag(const std::string& tag) const { return tags_.count(tag) != 0; }

  /// Backpropagates from a scalar loss and returns d loss / d param for each
  /// requested tag. Parameters the loss does not reach map to zeros.
  TensorMap<T> grad(Var loss, std::span<const std::string> tags);
  /// Same, for every tagged parameter on the tape.
  TensorMap<T> grad(Var loss);

 private:
  struct Node {
    Tensor<T> value;
    std::vector<std::size_t> inputs;
    Backward backward;
    bool requires_grad = false;
  };

  bool record_;
  std::deque<Node> nodes_;
  std::map<std::string, std::size_t> tags_;
};

namespace ops {

/// a[m,k] x b[k,n]
template <typename T>
Var matmul(Tape<T>& tape, Var a, Var b);
/// a[m,k] x b[n,k]^T; b holds one output feature per row.
template <typename T>
Var matmul_nt(Tape<T>& tape, Var a, Var b);
template <typename T>
Var add(Tape<T>& tape, Var a, Var b);
template <typename T>
Var mul(Tape<T>& tape, Var a, Var b);
template <typename T>
Var scale(Tape<T>& tape, Var a, T factor);
template <typename T>
Var sum(Tape<T>& tape, Var a);
template <typename T>
Var silu(Tape<T>& tape, Var a);
template <typename T>
Var softmax_rows(Tape<T>& tape, Var a);
/// Row-wise root-mean-square normalization with a learned gain per column.
template <typename T>
Var rms_norm(Tape<T>& tape, Var x, Var gain, T eps);
/// Rotary position encoding applied independently to each head_dim block.
template <typename T>
Var rope(Tape<T>& tape, Var x, std::size_t head_dim, double base);
/// Causal scaled dot-product attention; q, k, v are [len, n_heads*head_dim].
template <typename T>
Var causal_attention(Tape<T>& tape, Var q, Var k, Var v, std::size_t head_dim);
/// Row lookup: out[i] = table[ids[i]].
template <typename T>
Var gather_rows(Tape<T>& tape, Var table, std::span<const std::size_t> ids);
/// Weighted mean softmax cross-entropy of logits rows against targets.
/// Empty weights count every row once.
template <typename T>
Var cross_entropy(Tape<T>& tape, Var logits, std::span<const std::size_t> targets, std::span<const T> weights);

}  // namespace ops

/// Central-difference gradient of f around `params`, one coordinate at a time.
TensorMap<double> finite_diff_gradient(const std::function<double(const TensorMap<double>&)>& f,
                                       TensorMap<double> params, double epsilon);

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace prunelab
