#include "prunelab/pruner.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace prunelab {

bool PruningPlan::empty() const {
  return std::all_of(entries.begin(), entries.end(), [](const PlanEntry& e) { return e.units.empty(); });
}

void PruningPlan::validate(const ModelShape& shape) const {
  std::set<std::pair<std::size_t, int>> seen;
  for (const auto& e : entries) {
    if (e.layer >= shape.heads_per_layer.size()) {
      throw ContractError("plan names layer " + std::to_string(e.layer) + " but model has " +
                          std::to_string(shape.heads_per_layer.size()));
    }
    if (!seen.insert({e.layer, static_cast<int>(e.kind)}).second) {
      throw ContractError("plan lists layer " + std::to_string(e.layer) + " " + group_kind_name(e.kind) + " twice");
    }
    const std::size_t count =
        e.kind == GroupKind::attention_head ? shape.heads_per_layer[e.layer] : shape.ffn_per_layer[e.layer];
    std::set<std::size_t> units(e.units.begin(), e.units.end());
    if (units.size() != e.units.size()) throw ContractError("plan repeats a unit in layer " + std::to_string(e.layer));
    for (auto u : units) {
      if (u >= count) {
        throw ContractError("plan removes " + std::string(group_kind_name(e.kind)) + " " + std::to_string(u) +
                            " of layer " + std::to_string(e.layer) + " which has " + std::to_string(count));
      }
    }
    if (units.size() >= count) {
      throw ContractError("plan would empty layer " + std::to_string(e.layer) + " of " + group_kind_name(e.kind) + "s");
    }
  }
}

nlohmann::json PruningPlan::to_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& e : entries) out.push_back({{"layer", e.layer}, {"kind", group_kind_name(e.kind)}, {"units", e.units}});
  return {{"ratio", ratio}, {"policy", policy_name(policy)}, {"score_snapshot", score_snapshot}, {"entries", out}};
}

PruningPlan make_plan(const std::vector<GroupScore>& scores, const std::vector<std::size_t>& selected,
                      double ratio, SelectPolicy policy, std::string score_snapshot) {
  std::map<std::pair<std::size_t, int>, std::vector<std::size_t>> buckets;
  for (auto i : selected) {
    const auto& s = scores.at(i);
    buckets[{s.layer, static_cast<int>(s.kind)}].push_back(s.unit);
  }
  PruningPlan plan;
  plan.ratio = ratio;
  plan.policy = policy;
  plan.score_snapshot = std::move(score_snapshot);
  for (auto& [key, units] : buckets) {
    std::sort(units.begin(), units.end());
    plan.entries.push_back({key.first, static_cast<GroupKind>(key.second), units});
  }
  return plan;
}

namespace {

template <typename T>
Tensor<T> keep_rows(const Tensor<T>& w, const std::vector<std::size_t>& blocks, std::size_t block) {
  Tensor<T> out({blocks.size() * block, w.cols()});
  std::size_t r = 0;
  for (auto b : blocks)
    for (std::size_t i = 0; i < block; ++i, ++r) std::copy_n(&w.at(b * block + i, 0), w.cols(), &out.at(r, 0));
  return out;
}

template <typename T>
Tensor<T> keep_cols(const Tensor<T>& w, const std::vector<std::size_t>& blocks, std::size_t block) {
  Tensor<T> out({w.rows(), blocks.size() * block});
  for (std::size_t r = 0; r < w.rows(); ++r) {
    std::size_t c = 0;
    for (auto b : blocks)
      for (std::size_t i = 0; i < block; ++i, ++c) out.at(r, c) = w.at(r, b * block + i);
  }
  return out;
}

std::vector<std::size_t> survivors(std::size_t count, const std::vector<std::size_t>& removed) {
  std::vector<std::size_t> keep;
  for (std::size_t u = 0; u < count; ++u)
    if (!std::binary_search(removed.begin(), removed.end(), u)) keep.push_back(u);
  return keep;
}

}  // namespace

template <typename T>
TransformerModel<T> apply_pruning(const TransformerModel<T>& model, const PruningPlan& plan) {
  model.validate();
  plan.validate(ModelShape::of(model));
  TransformerModel<T> out = model;
  const std::size_t hd = model.config.head_dim;
  for (const auto& e : plan.entries) {
    if (e.units.empty()) continue;
    std::vector<std::size_t> removed = e.units;
    std::sort(removed.begin(), removed.end());
    auto& L = out.layers[e.layer];
    if (e.kind == GroupKind::attention_head) {
      const auto keep = survivors(model.heads_in_layer(e.layer), removed);
      L.q_proj = keep_rows(L.q_proj, keep, hd);
      L.k_proj = keep_rows(L.k_proj, keep, hd);
      L.v_proj = keep_rows(L.v_proj, keep, hd);
      L.o_proj = keep_cols(L.o_proj, keep, hd);
    } else {
      const auto keep = survivors(model.ffn_in_layer(e.layer), removed);
      L.gate_proj = keep_rows(L.gate_proj, keep, 1);
      L.up_proj = keep_rows(L.up_proj, keep, 1);
      L.down_proj = keep_cols(L.down_proj, keep, 1);
    }
  }
  out.validate();
  return out;
}

nlohmann::json CompressionReport::to_json() const {
  return {{"original_params", original_params}, {"pruned_params", pruned_params},
          {"reduction", reduction},             {"original_heads", original_heads},
          {"pruned_heads", pruned_heads},       {"original_ffn", original_ffn},
          {"pruned_ffn", pruned_ffn}};
}

template <typename T>
CompressionReport compression_report(const TransformerModel<T>& original, const TransformerModel<T>& pruned) {
  CompressionReport r;
  r.original_params = original.parameter_count();
  r.pruned_params = pruned.parameter_count();
  r.reduction = parameter_reduction(static_cast<double>(r.original_params), static_cast<double>(r.pruned_params));
  r.original_heads = original.heads_per_layer();
  r.pruned_heads = pruned.heads_per_layer();
  r.original_ffn = original.ffn_per_layer();
  r.pruned_ffn = pruned.ffn_per_layer();
  return r;
}

double parameter_reduction(double original, double pruned) {
  if (!(original > 0.0)) throw ContractError("original parameter count must be positive");
  return 1.0 - pruned / original;
}

template TransformerModel<float> apply_pruning<float>(const TransformerModel<float>&, const PruningPlan&);
template TransformerModel<double> apply_pruning<double>(const TransformerModel<double>&, const PruningPlan&);
template CompressionReport compression_report<float>(const TransformerModel<float>&, const TransformerModel<float>&);
template CompressionReport compression_report<double>(const TransformerModel<double>&, const TransformerModel<double>&);

}  // namespace prunelab
