#include "prunelab/model.hpp"

#include <cmath>
#include <cstring>
#include <random>

namespace prunelab {

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ContractError(std::string("model config: ") + name + " must be >= 1");
  };
  positive(vocab_size, "vocab_size");
  positive(embed_dim, "embed_dim");
  positive(n_heads, "n_heads");
  positive(head_dim, "head_dim");
  positive(ffn_dim, "ffn_dim");
  positive(max_seq_len, "max_seq_len");
  if (n_heads * head_dim != embed_dim) {
    throw ContractError("model config: n_heads * head_dim (" + std::to_string(n_heads * head_dim) +
                        ") != embed_dim (" + std::to_string(embed_dim) + ")");
  }
  if (head_dim % 2 != 0) throw ContractError("model config: rotary encoding needs an even head_dim");
  if (!(rope_base > 1.0)) throw ContractError("model config: rope_base must exceed 1");
  if (!(norm_eps > 0.0)) throw ContractError("model config: norm_eps must be positive");
}

const char* role_name(ProjRole role) {
  switch (role) {
    case ProjRole::q_proj: return "q_proj";
    case ProjRole::k_proj: return "k_proj";
    case ProjRole::v_proj: return "v_proj";
    case ProjRole::o_proj: return "o_proj";
    case ProjRole::gate_proj: return "gate_proj";
    case ProjRole::up_proj: return "up_proj";
    case ProjRole::down_proj: return "down_proj";
  }
  return "?";
}

ProjRole role_from_name(const std::string& name) {
  for (auto r : kAllRoles)
    if (name == role_name(r)) return r;
  throw ContractError("unknown projection role '" + name + "'");
}

bool is_attention_role(ProjRole role) {
  return role == ProjRole::q_proj || role == ProjRole::k_proj || role == ProjRole::v_proj ||
         role == ProjRole::o_proj;
}

std::string param_name(std::size_t layer, ProjRole role) {
  return "layers." + std::to_string(layer) + "." + role_name(role);
}

template <typename T>
Tensor<T>& LayerWeights<T>::proj(ProjRole role) {
  switch (role) {
    case ProjRole::q_proj: return q_proj;
    case ProjRole::k_proj: return k_proj;
    case ProjRole::v_proj: return v_proj;
    case ProjRole::o_proj: return o_proj;
    case ProjRole::gate_proj: return gate_proj;
    case ProjRole::up_proj: return up_proj;
    case ProjRole::down_proj: return down_proj;
  }
  throw ContractError("bad role");
}

template <typename T>
const Tensor<T>& LayerWeights<T>::proj(ProjRole role) const {
  return const_cast<LayerWeights<T>*>(this)->proj(role);
}

template <typename T>
std::size_t TransformerModel<T>::heads_in_layer(std::size_t layer) const {
  return layers.at(layer).q_proj.rows() / config.head_dim;
}

template <typename T>
std::size_t TransformerModel<T>::ffn_in_layer(std::size_t layer) const {
  return layers.at(layer).gate_proj.rows();
}

template <typename T>
std::vector<std::size_t> TransformerModel<T>::heads_per_layer() const {
  std::vector<std::size_t> out;
  for (std::size_t l = 0; l < layers.size(); ++l) out.push_back(heads_in_layer(l));
  return out;
}

template <typename T>
std::vector<std::size_t> TransformerModel<T>::ffn_per_layer() const {
  std::vector<std::size_t> out;
  for (std::size_t l = 0; l < layers.size(); ++l) out.push_back(ffn_in_layer(l));
  return out;
}

template <typename T>
void TransformerModel<T>::validate() const {
  const std::size_t d = config.embed_dim, hd = config.head_dim, V = config.vocab_size;
  auto expect = [](const Tensor<T>& t, const Shape& s, const std::string& name) {
    if (t.shape() != s) {
      throw ShapeError(name + " has shape " + shape_string(t.shape()) + ", expected " + shape_string(s));
    }
  };
  expect(tok_embed, {V, d}, "tok_embed");
  expect(final_norm, {d}, "final_norm");
  expect(lm_head, {V, d}, "lm_head");
  if (layers.size() != config.n_layers) {
    throw ShapeError("model has " + std::to_string(layers.size()) + " layers, config says " +
                     std::to_string(config.n_layers));
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    if (L.q_proj.rank() != 2 || L.q_proj.rows() % hd != 0) {
      throw ShapeError(p + "q_proj rows must be whole heads of " + std::to_string(hd));
    }
    const std::size_t width = L.q_proj.rows();
    const std::size_t ffn = L.gate_proj.rank() == 2 ? L.gate_proj.rows() : 0;
    if (width == 0 || ffn == 0) throw ShapeError(p + "layer emptied");
    expect(L.attn_norm, {d}, p + "attn_norm");
    expect(L.q_proj, {width, d}, p + "q_proj");
    expect(L.k_proj, {width, d}, p + "k_proj");
    expect(L.v_proj, {width, d}, p + "v_proj");
    expect(L.o_proj, {d, width}, p + "o_proj");
    expect(L.ffn_norm, {d}, p + "ffn_norm");
    expect(L.gate_proj, {ffn, d}, p + "gate_proj");
    expect(L.up_proj, {ffn, d}, p + "up_proj");
    expect(L.down_proj, {d, ffn}, p + "down_proj");
  }
}

template <typename T>
std::size_t TransformerModel<T>::parameter_count() const {
  std::size_t n = 0;
  for_each_parameter([&](const std::string&, const Tensor<T>& t) { n += t.numel(); });
  return n;
}

template <typename T>
void TransformerModel<T>::for_each_parameter(const std::function<void(const std::string&, Tensor<T>&)>& fn) {
  fn("tok_embed", tok_embed);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& L = layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    fn(p + "attn_norm", L.attn_norm);
    fn(p + "q_proj", L.q_proj);
    fn(p + "k_proj", L.k_proj);
    fn(p + "v_proj", L.v_proj);
    fn(p + "o_proj", L.o_proj);
    fn(p + "ffn_norm", L.ffn_norm);
    fn(p + "gate_proj", L.gate_proj);
    fn(p + "up_proj", L.up_proj);
    fn(p + "down_proj", L.down_proj);
  }
  fn("final_norm", final_norm);
  fn("lm_head", lm_head);
}

template <typename T>
void TransformerModel<T>::for_each_parameter(
    const std::function<void(const std::string&, const Tensor<T>&)>& fn) const {
  const_cast<TransformerModel<T>*>(this)->for_each_parameter(
      [&](const std::string& name, Tensor<T>& t) { fn(name, t); });
}

template <typename T>
Tensor<T>* TransformerModel<T>::find(const std::string& name) {
  Tensor<T>* hit = nullptr;
  for_each_parameter([&](const std::string& n, Tensor<T>& t) {
    if (n == name) hit = &t;
  });
  return hit;
}

template <typename T>
const Tensor<T>* TransformerModel<T>::find(const std::string& name) const {
  return const_cast<TransformerModel<T>*>(this)->find(name);
}

template <typename T>
TensorMap<T> TransformerModel<T>::parameters() const {
  TensorMap<T> out;
  for_each_parameter([&](const std::string& n, const Tensor<T>& t) { out.emplace(n, t); });
  return out;
}

template <typename T>
void TransformerModel<T>::set_parameters(const TensorMap<T>& values) {
  for (const auto& [name, value] : values) {
    Tensor<T>* dst = find(name);
    if (!dst) throw ContractError("model has no parameter '" + name + "'");
    if (dst->shape() != value.shape()) {
      throw ShapeError("parameter '" + name + "' is " + shape_string(dst->shape()) + ", got " +
                       shape_string(value.shape()));
    }
    *dst = value;
  }
}

template <typename T>
template <typename U>
TransformerModel<U> TransformerModel<T>::cast() const {
  TransformerModel<U> out;
  out.config = config;
  out.tok_embed = tok_embed.template cast<U>();
  out.final_norm = final_norm.template cast<U>();
  out.lm_head = lm_head.template cast<U>();
  for (const auto& L : layers) {
    LayerWeights<U> M;
    M.attn_norm = L.attn_norm.template cast<U>();
    M.ffn_norm = L.ffn_norm.template cast<U>();
    for (auto r : kAllRoles) M.proj(r) = L.proj(r).template cast<U>();
    out.layers.push_back(std::move(M));
  }
  return out;
}

template <typename T>
TransformerModel<T> build_model(const ModelConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.rng_seed);
  auto gaussian = [&](Shape shape, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(dist(rng));
    return t;
  };
  const std::size_t d = config.embed_dim, width = config.n_heads * config.head_dim, f = config.ffn_dim;
  const double in_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double residual_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(std::max<std::size_t>(config.n_layers, 1)));

  TransformerModel<T> m;
  m.config = config;
  m.tok_embed = gaussian({config.vocab_size, d}, 1.0);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    LayerWeights<T> L;
    L.attn_norm = Tensor<T>({d}, T{1});
    L.q_proj = gaussian({width, d}, in_std);
    L.k_proj = gaussian({width, d}, in_std);
    L.v_proj = gaussian({width, d}, in_std);
    L.o_proj = gaussian({d, width}, residual_scale / std::sqrt(static_cast<double>(width)));
    L.ffn_norm = Tensor<T>({d}, T{1});
    L.gate_proj = gaussian({f, d}, in_std);
    L.up_proj = gaussian({f, d}, in_std);
    L.down_proj = gaussian({d, f}, residual_scale / std::sqrt(static_cast<double>(f)));
    m.layers.push_back(std::move(L));
  }
  m.final_norm = Tensor<T>({d}, T{1});
  m.lm_head = gaussian({config.vocab_size, d}, in_std);
  return m;
}

namespace {

template <typename T>
Var project(Tape<T>& tape, Var x, Var weight, const std::string& name, const ForwardOptions<T>& options) {
  Var y = ops::matmul_nt(tape, x, weight);
  if (options.hook && *options.hook) {
    if (auto extra = (*options.hook)(tape, x, name)) y = ops::add(tape, y, *extra);
  }
  return y;
}

}  // namespace

template <typename T>
Var forward_logits(Tape<T>& tape, const TransformerModel<T>& model, std::span<const std::size_t> tokens,
                   const ForwardOptions<T>& options) {
  if (tokens.empty()) throw ContractError("forward needs at least one token");
  if (tokens.size() > model.config.max_seq_len) {
    throw ContractError("sequence of " + std::to_string(tokens.size()) + " tokens exceeds max_seq_len " +
                        std::to_string(model.config.max_seq_len));
  }
  for (auto id : tokens) {
    if (id >= model.config.vocab_size) throw ContractError("token id " + std::to_string(id) + " >= vocab_size");
  }
  auto leaf = [&](const std::string& name, const Tensor<T>& value) {
    return options.trainable_base ? tape.parameter(value, name) : tape.constant(value);
  };
  const T eps = static_cast<T>(model.config.norm_eps);
  const std::size_t hd = model.config.head_dim;

  Var x = ops::gather_rows(tape, leaf("tok_embed", model.tok_embed), tokens);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& L = model.layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    Var h = ops::rms_norm(tape, x, leaf(p + "attn_norm", L.attn_norm), eps);
    Var q = project(tape, h, leaf(p + "q_proj", L.q_proj), p + "q_proj", options);
    Var k = project(tape, h, leaf(p + "k_proj", L.k_proj), p + "k_proj", options);
    Var v = project(tape, h, leaf(p + "v_proj", L.v_proj), p + "v_proj", options);
    q = ops::rope(tape, q, hd, model.config.rope_base);
    k = ops::rope(tape, k, hd, model.config.rope_base);
    Var a = ops::causal_attention(tape, q, k, v, hd);
    x = ops::add(tape, x, project(tape, a, leaf(p + "o_proj", L.o_proj), p + "o_proj", options));

    Var h2 = ops::rms_norm(tape, x, leaf(p + "ffn_norm", L.ffn_norm), eps);
    Var g = project(tape, h2, leaf(p + "gate_proj", L.gate_proj), p + "gate_proj", options);
    Var u = project(tape, h2, leaf(p + "up_proj", L.up_proj), p + "up_proj", options);
    Var f = ops::mul(tape, ops::silu(tape, g), u);
    x = ops::add(tape, x, project(tape, f, leaf(p + "down_proj", L.down_proj), p + "down_proj", options));
  }
  Var out = ops::rms_norm(tape, x, leaf("final_norm", model.final_norm), eps);
  return ops::matmul_nt(tape, out, leaf("lm_head", model.lm_head));
}

template <typename T>
Tensor<T> compute_logits(const TransformerModel<T>& model, std::span<const std::size_t> tokens,
                         const ProjectionHook<T>* hook) {
  Tape<T> tape(false);
  ForwardOptions<T> options;
  options.hook = hook;
  Var logits = forward_logits(tape, model, tokens, options);
  return tape.value(logits);
}

template <typename T>
Var next_token_loss(Tape<T>& tape, const TransformerModel<T>& model, std::span<const std::size_t> tokens,
                    const ForwardOptions<T>& options, std::span<const T> position_weights) {
  if (tokens.size() < 2) throw ContractError("next-token loss needs at least two tokens");
  const std::size_t n = tokens.size() - 1;
  if (!position_weights.empty() && position_weights.size() != n) {
    throw ShapeError("expected " + std::to_string(n) + " position weights, got " +
                     std::to_string(position_weights.size()));
  }
  Var logits = forward_logits(tape, model, tokens.first(n), options);
  std::vector<T> ones;
  if (position_weights.empty()) {
    ones.assign(n, T{1});
    position_weights = ones;
  }
  return ops::cross_entropy(tape, logits, tokens.subspan(1), position_weights);
}

template <typename T>
std::uint64_t weights_checksum(const TransformerModel<T>& model) {
  std::uint64_t h = 1469598103934665603ULL;
  model.for_each_parameter([&](const std::string& name, const Tensor<T>& t) {
    for (unsigned char c : name) h = (h ^ c) * 1099511628211ULL;
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data().data());
    for (std::size_t i = 0; i < t.numel() * sizeof(T); ++i) h = (h ^ bytes[i]) * 1099511628211ULL;
  });
  return h;
}

template struct LayerWeights<float>;
template struct LayerWeights<double>;
template class TransformerModel<float>;
template class TransformerModel<double>;
template TransformerModel<float> TransformerModel<float>::cast<float>() const;
template TransformerModel<double> TransformerModel<float>::cast<double>() const;
template TransformerModel<float> TransformerModel<double>::cast<float>() const;
template TransformerModel<double> TransformerModel<double>::cast<double>() const;

#define PRUNELAB_INSTANTIATE_MODEL(T)                                                                      \
  template TransformerModel<T> build_model<T>(const ModelConfig&);                                         \
  template Var forward_logits<T>(Tape<T>&, const TransformerModel<T>&, std::span<const std::size_t>,       \
                                 const ForwardOptions<T>&);                                                \
  template Tensor<T> compute_logits<T>(const TransformerModel<T>&, std::span<const std::size_t>,           \
                                       const ProjectionHook<T>*);                                          \
  template Var next_token_loss<T>(Tape<T>&, const TransformerModel<T>&, std::span<const std::size_t>,      \
                                  const ForwardOptions<T>&, std::span<const T>);                           \
  template std::uint64_t weights_checksum<T>(const TransformerModel<T>&);

PRUNELAB_INSTANTIATE_MODEL(float)
PRUNELAB_INSTANTIATE_MODEL(double)

#undef PRUNELAB_INSTANTIATE_MODEL

}  // namespace prunelab
