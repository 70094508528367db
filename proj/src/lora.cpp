#include "prunelab/lora.hpp"

#include <random>

namespace prunelab {

template <typename T>
Tensor<T> LoRAAdapter<T>::delta() const {
  const std::size_t out = R.rows(), in = S.cols();
  Tensor<T> d({out, in});
  const T s = static_cast<T>(scaling());
  for (std::size_t i = 0; i < out; ++i)
    for (std::size_t k = 0; k < rank; ++k) {
      const T rik = R.at(i, k) * s;
      for (std::size_t j = 0; j < in; ++j) d.at(i, j) += rik * S.at(k, j);
    }
  return d;
}

template <typename T>
ProjectionHook<T> AdaptedModel<T>::hook(bool trainable) const {
  return [this, trainable](Tape<T>& tape, Var x, const std::string& name) -> std::optional<Var> {
    auto it = adapters.find(name);
    if (it == adapters.end()) return std::nullopt;
    const auto& a = it->second;
    Var r = trainable ? tape.parameter(a.R, name + ".lora_R") : tape.constant(a.R);
    Var s = trainable ? tape.parameter(a.S, name + ".lora_S") : tape.constant(a.S);
    Var low = ops::matmul_nt(tape, x, s);
    Var y = ops::matmul_nt(tape, low, r);
    if (a.scaling() != 1.0) y = ops::scale(tape, y, static_cast<T>(a.scaling()));
    return y;
  };
}

template <typename T>
Tensor<T> AdaptedModel<T>::logits(std::span<const std::size_t> tokens) const {
  const auto h = hook(false);
  return compute_logits(base, tokens, &h);
}

template <typename T>
std::size_t AdaptedModel<T>::trainable_parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, a] : adapters) n += a.R.numel() + a.S.numel();
  return n;
}

template <typename T>
AdaptedModel<T> attach_adapters(const TransformerModel<T>& model, const AttachOptions& options) {
  if (options.rank == 0) throw ContractError("adapter rank must be >= 1");
  AdaptedModel<T> adapted;
  adapted.base = model;
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> dist(0.0, options.init_std);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    for (auto role : kAllRoles) {
      const std::string name = param_name(l, role);
      const Tensor<T>& w = model.layers[l].proj(role);
      const std::size_t out = w.rows(), in = w.cols();
      if (options.rank > std::min(out, in)) {
        throw ContractError("adapter rank " + std::to_string(options.rank) + " exceeds the smaller dimension of " +
                            name + " " + shape_string(w.shape()));
      }
      LoRAAdapter<T> a;
      a.target = name;
      a.rank = options.rank;
      a.alpha = options.alpha.value_or(static_cast<double>(options.rank));
      a.R = Tensor<T>({out, options.rank});
      for (auto& v : a.R.data()) v = static_cast<T>(dist(rng));
      a.S = Tensor<T>({options.rank, in});
      adapted.adapters.emplace(name, std::move(a));
    }
  }
  return adapted;
}

template <typename T>
TransformerModel<T> merge_adapters(AdaptedModel<T>& adapted) {
  if (adapted.adapters.empty()) throw ContractError("merge_adapters: no adapters attached");
  for (const auto& [name, a] : adapted.adapters) {
    Tensor<T>* w = adapted.base.find(name);
    if (!w) throw ContractError("adapter targets unknown parameter " + name);
    w->add_inplace(a.delta());
  }
  adapted.adapters.clear();
  return adapted.base;
}

template <typename T>
TrainLog finetune(AdaptedModel<T>& adapted, const std::vector<TrainExample<T>>& examples, const TrainConfig& config) {
  if (adapted.adapters.empty()) throw ContractError("finetune needs attached adapters");
  std::vector<typename AdamW<T>::Slot> params;
  for (auto& [name, a] : adapted.adapters) {
    params.push_back({name + ".lora_R", &a.R});
    params.push_back({name + ".lora_S", &a.S});
  }
  if (config.total_steps(examples.size()) == 0 && !examples.empty()) return TrainLog{{}, 0, examples.size()};
  const auto hook = adapted.hook(true);
  ForwardOptions<T> options;
  options.hook = &hook;
  return run_training<T>(examples.size(), config, params, [&](std::size_t i, TensorMap<T>& accum) {
    const auto& ex = examples[i];
    Tape<T> tape;
    Var loss = next_token_loss(tape, adapted.base, std::span<const std::size_t>(ex.tokens), options,
                               std::span<const T>(ex.weights));
    for (auto& [name, g] : tape.grad(loss)) accum.at(name).add_inplace(g);
    return static_cast<double>(tape.value(loss).item());
  });
}

template struct LoRAAdapter<float>;
template struct LoRAAdapter<double>;
template class AdaptedModel<float>;
template class AdaptedModel<double>;
template AdaptedModel<float> attach_adapters<float>(const TransformerModel<float>&, const AttachOptions&);
template AdaptedModel<double> attach_adapters<double>(const TransformerModel<double>&, const AttachOptions&);
template TransformerModel<float> merge_adapters<float>(AdaptedModel<float>&);
template TransformerModel<double> merge_adapters<double>(AdaptedModel<double>&);
template TrainLog finetune<float>(AdaptedModel<float>&, const std::vector<TrainExample<float>>&, const TrainConfig&);
template TrainLog finetune<double>(AdaptedModel<double>&, const std::vector<TrainExample<double>>&, const TrainConfig&);

}  // namespace prunelab
