#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prunelab/autodiff.hpp"
#include "prunelab/tensor.hpp"

namespace prunelab {

/// Dimensions of the decoder. n_heads and ffn_dim are build-time values;
/// after pruning, per-layer widths are read from the weights themselves.
struct ModelConfig {
  std::size_t vocab_size = 259;
  std::size_t embed_dim = 32;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t head_dim = 8;
  std::size_t ffn_dim = 64;
  std::size_t max_seq_len = 128;
  std::uint64_t rng_seed = 0;
  double rope_base = 10000.0;
  double norm_eps = 1e-5;

  /// Throws ContractError for inconsistent dimensions.
  void validate() const;
};

/// Projection roles. q/k/v/gate/up hold one output unit per row block;
/// o/down hold one input unit per column block.
enum class ProjRole { q_proj, k_proj, v_proj, o_proj, gate_proj, up_proj, down_proj };

inline constexpr ProjRole kAllRoles[] = {ProjRole::q_proj, ProjRole::k_proj,    ProjRole::v_proj,
                                         ProjRole::o_proj, ProjRole::gate_proj, ProjRole::up_proj,
                                         ProjRole::down_proj};

const char* role_name(ProjRole role);
ProjRole role_from_name(const std::string& name);
bool is_attention_role(ProjRole role);

std::string param_name(std::size_t layer, ProjRole role);

template <typename T>
struct LayerWeights {
  Tensor<T> attn_norm;  // [embed]
  Tensor<T> q_proj;     // [heads*head_dim, embed]
  Tensor<T> k_proj;
  Tensor<T> v_proj;
  Tensor<T> o_proj;     // [embed, heads*head_dim]
  Tensor<T> ffn_norm;   // [embed]
  Tensor<T> gate_proj;  // [ffn, embed]
  Tensor<T> up_proj;
  Tensor<T> down_proj;  // [embed, ffn]

  Tensor<T>& proj(ProjRole role);
  const Tensor<T>& proj(ProjRole role) const;
};

/// LLaMA-style decoder: token embedding, pre-norm attention with rotary
/// positions, gated SiLU feed-forward, final norm and an untied output head.
template <typename T>
class TransformerModel {
 public:
  ModelConfig config;
  Tensor<T> tok_embed;  // [vocab, embed]
  std::vector<LayerWeights<T>> layers;
  Tensor<T> final_norm;  // [embed]
  Tensor<T> lm_head;     // [vocab, embed]

  std::size_t heads_in_layer(std::size_t layer) const;
  std::size_t ffn_in_layer(std::size_t layer) const;
  std::vector<std::size_t> heads_per_layer() const;
  std::vector<std::size_t> ffn_per_layer() const;

  /// Throws ShapeError unless every coupled structure agrees.
  void validate() const;
  std::size_t parameter_count() const;

  /// Visits parameters in canonical order.
  void for_each_parameter(const std::function<void(const std::string&, Tensor<T>&)>& fn);
  void for_each_parameter(const std::function<void(const std::string&, const Tensor<T>&)>& fn) const;

  Tensor<T>* find(const std::string& name);
  const Tensor<T>* find(const std::string& name) const;
  TensorMap<T> parameters() const;
  /// Replaces values by name; shapes must match.
  void set_parameters(const TensorMap<T>& values);

  template <typename U>
  TransformerModel<U> cast() const;

  friend bool operator==(const TransformerModel& a, const TransformerModel& b) {
    return a.parameters() == b.parameters() && a.config.n_layers == b.config.n_layers;
  }
};

using Model = TransformerModel<float>;
using Model64 = TransformerModel<double>;

/// Optional extra output added to a projection, used by adapters.
template <typename T>
using ProjectionHook = std::function<std::optional<Var>(Tape<T>&, Var input, const std::string& weight_name)>;

template <typename T>
struct ForwardOptions {
  /// Register base weights as gradient-carrying parameters.
  bool trainable_base = false;
  const ProjectionHook<T>* hook = nullptr;
};

template <typename T>
TransformerModel<T> build_model(const ModelConfig& config);

/// Records the causal forward pass; returns logits of shape [len, vocab].
template <typename T>
Var forward_logits(Tape<T>& tape, const TransformerModel<T>& model, std::span<const std::size_t> tokens,
                   const ForwardOptions<T>& options = {});

/// Inference-only forward.
template <typename T>
Tensor<T> compute_logits(const TransformerModel<T>& model, std::span<const std::size_t> tokens,
                         const ProjectionHook<T>* hook = nullptr);

/// Weighted mean cross-entropy of positions 0..len-2 against tokens 1..len-1.
/// `position_weights`, when given, has len-1 entries; empty means all ones.
template <typename T>
Var next_token_loss(Tape<T>& tape, const TransformerModel<T>& model, std::span<const std::size_t> tokens,
                    const ForwardOptions<T>& options = {}, std::span<const T> position_weights = {});

/// FNV-1a over the raw bytes of every parameter, in canonical order.
template <typename T>
std::uint64_t weights_checksum(const TransformerModel<T>& model);

extern template class TransformerModel<float>;
extern template class TransformerModel<double>;

}  // namespace prunelab
