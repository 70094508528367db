#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "prunelab/importance.hpp"
#include "prunelab/model.hpp"

namespace prunelab {

struct PlanEntry {
  std::size_t layer = 0;
  GroupKind kind = GroupKind::attention_head;
  std::vector<std::size_t> units;  // sorted, unique
};

struct PruningPlan {
  std::vector<PlanEntry> entries;
  double ratio = 0.0;
  SelectPolicy policy = SelectPolicy::per_layer;
  std::string score_snapshot;

  bool empty() const;
  /// Throws ContractError on out-of-range or duplicate units, or an emptied layer.
  void validate(const ModelShape& shape) const;
  nlohmann::json to_json() const;
};

PruningPlan make_plan(const std::vector<GroupScore>& scores, const std::vector<std::size_t>& selected,
                      double ratio, SelectPolicy policy, std::string score_snapshot = {});

/// Rebuilds dense tensors without the planned heads and channels. Surviving
/// heads keep their relative order and are renumbered contiguously.
template <typename T>
TransformerModel<T> apply_pruning(const TransformerModel<T>& model, const PruningPlan& plan);

struct CompressionReport {
  std::size_t original_params = 0;
  std::size_t pruned_params = 0;
  double reduction = 0.0;  // 1 - pruned / original
  std::vector<std::size_t> original_heads, pruned_heads;
  std::vector<std::size_t> original_ffn, pruned_ffn;

  nlohmann::json to_json() const;
};

template <typename T>
CompressionReport compression_report(const TransformerModel<T>& original, const TransformerModel<T>& pruned);

/// Reduction fraction for counts given in any common unit (e.g. billions).
double parameter_reduction(double original, double pruned);

}  // namespace prunelab
