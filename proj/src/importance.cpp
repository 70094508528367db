#include "prunelab/importance.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <tuple>

#include "prunelab/tokenizer.hpp"

namespace prunelab {

CalibrationSet sample_calibration(std::string_view corpus, std::size_t count, std::size_t seq_len,
                                  std::uint64_t seed, std::string source) {
  if (seq_len < 2) throw ContractError("calibration sequences need length >= 2");
  const auto tokens = Tokenizer{}.encode(corpus);
  if (tokens.size() < seq_len) {
    throw ContractError("calibration corpus has " + std::to_string(tokens.size()) + " tokens, fewer than " +
                        std::to_string(seq_len));
  }
  CalibrationSet set;
  set.source = std::move(source);
  set.seed = seed;
  std::mt19937_64 rng(seed);
  const std::size_t span = tokens.size() - seq_len + 1;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t start = static_cast<std::size_t>(rng() % span);
    set.sequences.emplace_back(tokens.begin() + static_cast<std::ptrdiff_t>(start),
                               tokens.begin() + static_cast<std::ptrdiff_t>(start + seq_len));
  }
  return set;
}

template <typename T>
GradientStore<T> accumulate_calibration_gradients(const TransformerModel<T>& model, const CalibrationSet& calib) {
  std::vector<std::string> tags;
  for (std::size_t l = 0; l < model.layers.size(); ++l)
    for (auto r : kAllRoles) tags.push_back(param_name(l, r));

  GradientStore<T> store;
  for (const auto& tag : tags) store.grads.emplace(tag, Tensor<T>(model.find(tag)->shape()));
  ForwardOptions<T> options;
  options.trainable_base = true;
  for (std::size_t i = 0; i < calib.sequences.size(); ++i) {
    const auto& seq = calib.sequences[i];
    if (seq.size() < 2 || seq.size() > model.config.max_seq_len) {
      throw ContractError("calibration sequence " + std::to_string(i) + " has length " + std::to_string(seq.size()));
    }
    Tape<T> tape;
    Var loss = next_token_loss(tape, model, std::span<const std::size_t>(seq), options);
    if (!std::isfinite(static_cast<double>(tape.value(loss).item()))) {
      throw NumericError("non-finite calibration loss at sequence " + std::to_string(i));
    }
    auto grads = tape.grad(loss, tags);
    for (auto& [tag, g] : grads) {
      if (!g.all_finite()) {
        throw NumericError("non-finite gradient for " + tag + " at calibration sequence " + std::to_string(i));
      }
      store.grads.at(tag).add_inplace(g);
    }
    ++store.sequence_count;
  }
  return store;
}

template <typename T>
double element_importance(std::span<const T> weight, std::span<const T> grad) {
  if (weight.size() != grad.size()) {
    throw ShapeError("element_importance: " + std::to_string(weight.size()) + " weights vs " +
                     std::to_string(grad.size()) + " gradients");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < weight.size(); ++i) s += static_cast<double>(grad[i]) * static_cast<double>(weight[i]);
  return std::abs(s);
}

template <typename T>
double element_importance(const Tensor<T>& weight_slice, const Tensor<T>& grad_slice) {
  if (weight_slice.shape() != grad_slice.shape()) {
    throw ShapeError("element_importance: weight " + shape_string(weight_slice.shape()) + " vs gradient " +
                     shape_string(grad_slice.shape()));
  }
  return element_importance(weight_slice.data(), grad_slice.data());
}

template <typename T>
Tensor<T> extract_slice(const Tensor<T>& full, const ParamNode& node, std::size_t head_dim) {
  const std::size_t width = is_attention_role(node.role) ? head_dim : 1;
  const std::size_t begin = node.unit * width;
  if (node.axis == SliceAxis::rows) {
    if (begin + width > full.rows()) throw ShapeError("slice rows out of range for " + node.label());
    Tensor<T> out({width, full.cols()});
    for (std::size_t r = 0; r < width; ++r)
      std::copy_n(&full.at(begin + r, 0), full.cols(), &out.at(r, 0));
    return out;
  }
  if (begin + width > full.cols()) throw ShapeError("slice columns out of range for " + node.label());
  Tensor<T> out({full.rows(), width});
  for (std::size_t r = 0; r < full.rows(); ++r)
    for (std::size_t c = 0; c < width; ++c) out.at(r, c) = full.at(r, begin + c);
  return out;
}

SelectPolicy policy_from_name(const std::string& name) {
  if (name == "per-layer") return SelectPolicy::per_layer;
  if (name == "global") return SelectPolicy::global;
  throw ContractError("unknown selection policy '" + name + "' (expected per-layer or global)");
}

const char* policy_name(SelectPolicy policy) { return policy == SelectPolicy::per_layer ? "per-layer" : "global"; }

namespace {

template <typename T, typename MemberFn>
GroupScore score_with(const PruningGroup& group, const DependencyGraph& graph, MemberFn&& member_score) {
  GroupScore s;
  s.label = group.label;
  s.kind = group.kind;
  s.layer = group.layer;
  s.unit = group.unit;
  for (NodeId id : group.members) {
    const ParamNode& node = graph.nodes().at(id);
    const double v = member_score(node);
    s.members.push_back({id, node.label(), v});
    s.importance += v;
  }
  return s;
}

}  // namespace

template <typename T>
GroupScore group_importance(const PruningGroup& group, const DependencyGraph& graph,
                            const TransformerModel<T>& model, const GradientStore<T>& store) {
  return score_with<T>(group, graph, [&](const ParamNode& node) {
    const std::string name = param_name(node.layer, node.role);
    auto it = store.grads.find(name);
    if (it == store.grads.end()) throw ContractError("gradient store has no entry for " + name);
    const Tensor<T>* weight = model.find(name);
    if (!weight) throw ContractError("model has no parameter " + name);
    const std::size_t hd = model.config.head_dim;
    return element_importance(extract_slice(*weight, node, hd), extract_slice(it->second, node, hd));
  });
}

template <typename T>
GroupScore group_magnitude(const PruningGroup& group, const DependencyGraph& graph, const TransformerModel<T>& model) {
  return score_with<T>(group, graph, [&](const ParamNode& node) {
    const Tensor<T>* weight = model.find(param_name(node.layer, node.role));
    if (!weight) throw ContractError("model has no parameter " + param_name(node.layer, node.role));
    const auto slice = extract_slice(*weight, node, model.config.head_dim);
    double s = 0.0;
    for (auto v : slice.data()) s += std::abs(static_cast<double>(v));
    return s;
  });
}

template <typename T>
std::vector<GroupScore> score_groups(const std::vector<PruningGroup>& groups, const DependencyGraph& graph,
                                     const TransformerModel<T>& model, const GradientStore<T>* store,
                                     ScoreMethod method) {
  if (method == ScoreMethod::taylor && !store) throw ContractError("taylor scoring needs a gradient store");
  std::vector<GroupScore> out;
  out.reserve(groups.size());
  for (std::size_t i = 0; i < groups.size(); ++i) {
    GroupScore s = method == ScoreMethod::taylor ? group_importance(groups[i], graph, model, *store)
                                                 : group_magnitude(groups[i], graph, model);
    s.group_index = i;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::size_t> select_groups(const std::vector<GroupScore>& scores, const SelectOptions& options) {
  if (scores.empty()) throw ContractError("select_groups needs at least one score");
  if (!(options.ratio >= 0.0 && options.ratio < 1.0)) {
    throw ContractError("pruning ratio must lie in [0, 1), got " + std::to_string(options.ratio));
  }
  auto is_protected = [&](std::size_t layer) {
    return std::find(options.protected_layers.begin(), options.protected_layers.end(), layer) !=
           options.protected_layers.end();
  };
  auto order = [&](std::size_t a, std::size_t b) {
    const auto& x = scores[a];
    const auto& y = scores[b];
    return std::make_tuple(x.importance, x.layer, static_cast<int>(x.kind), x.unit) <
           std::make_tuple(y.importance, y.layer, static_cast<int>(y.kind), y.unit);
  };
  auto take = [&](std::size_t n) { return static_cast<std::size_t>(std::floor(options.ratio * n + 1e-9)); };

  // (layer, kind) -> member indices
  std::map<std::pair<std::size_t, int>, std::vector<std::size_t>> per_layer;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    per_layer[{scores[i].layer, static_cast<int>(scores[i].kind)}].push_back(i);
  }

  std::vector<std::size_t> chosen;
  if (options.policy == SelectPolicy::per_layer) {
    for (auto& [key, idx] : per_layer) {
      if (is_protected(key.first)) continue;
      const std::size_t k = take(idx.size());
      if (k >= idx.size()) {
        throw ContractError("ratio would remove every " + std::string(group_kind_name(static_cast<GroupKind>(key.second))) +
                            " in layer " + std::to_string(key.first));
      }
      std::sort(idx.begin(), idx.end(), order);
      chosen.insert(chosen.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    }
  } else {
    for (int kind : {0, 1}) {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < scores.size(); ++i)
        if (static_cast<int>(scores[i].kind) == kind && !is_protected(scores[i].layer)) idx.push_back(i);
      const std::size_t k = take(idx.size());
      std::sort(idx.begin(), idx.end(), order);
      chosen.insert(chosen.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    }
    std::map<std::pair<std::size_t, int>, std::size_t> removed;
    for (auto i : chosen) ++removed[{scores[i].layer, static_cast<int>(scores[i].kind)}];
    for (const auto& [key, n] : removed) {
      if (n >= per_layer.at(key).size()) {
        throw ContractError("global selection would remove every " +
                            std::string(group_kind_name(static_cast<GroupKind>(key.second))) + " in layer " +
                            std::to_string(key.first));
      }
    }
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

nlohmann::json scores_to_json(const std::vector<GroupScore>& scores, const std::vector<std::size_t>& selected) {
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& s : scores) {
    nlohmann::json members = nlohmann::json::array();
    for (const auto& m : s.members) members.push_back({{"node", m.node}, {"label", m.label}, {"importance", m.importance}});
    groups.push_back({{"index", s.group_index},
                      {"label", s.label},
                      {"kind", group_kind_name(s.kind)},
                      {"layer", s.layer},
                      {"unit", s.unit},
                      {"importance", s.importance},
                      {"members", members}});
  }
  nlohmann::json sel = nlohmann::json::array();
  for (auto i : selected) sel.push_back(scores.at(i).label);
  return {{"groups", groups}, {"selected", selected}, {"selected_labels", sel}};
}

#define PRUNELAB_INSTANTIATE_IMPORTANCE(T)                                                                  \
  template GradientStore<T> accumulate_calibration_gradients<T>(const TransformerModel<T>&,                 \
                                                                const CalibrationSet&);                     \
  template double element_importance<T>(std::span<const T>, std::span<const T>);                            \
  template double element_importance<T>(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> extract_slice<T>(const Tensor<T>&, const ParamNode&, std::size_t);                     \
  template GroupScore group_importance<T>(const PruningGroup&, const DependencyGraph&,                      \
                                          const TransformerModel<T>&, const GradientStore<T>&);             \
  template GroupScore group_magnitude<T>(const PruningGroup&, const DependencyGraph&,                       \
                                         const TransformerModel<T>&);                                       \
  template std::vector<GroupScore> score_groups<T>(const std::vector<PruningGroup>&, const DependencyGraph&, \
                                                   const TransformerModel<T>&, const GradientStore<T>*,     \
                                                   ScoreMethod);

PRUNELAB_INSTANTIATE_IMPORTANCE(float)
PRUNELAB_INSTANTIATE_IMPORTANCE(double)

#undef PRUNELAB_INSTANTIATE_IMPORTANCE

}  // namespace prunelab
