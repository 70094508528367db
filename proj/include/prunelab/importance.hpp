#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "prunelab/depgraph.hpp"
#include "prunelab/model.hpp"

namespace prunelab {

/// Token sequences used only to collect gradients for scoring.
struct CalibrationSet {
  std::vector<std::vector<std::size_t>> sequences;
  std::string source;
  std::uint64_t seed = 0;
};

/// Draws `count` windows of `seq_len` byte tokens from `corpus` at seeded offsets.
CalibrationSet sample_calibration(std::string_view corpus, std::size_t count, std::size_t seq_len,
                                  std::uint64_t seed, std::string source = "synthetic");

/// Summed d loss / d P over a calibration set, for every projection weight.
template <typename T>
struct GradientStore {
  TensorMap<T> grads;
  std::size_t sequence_count = 0;
};

template <typename T>
GradientStore<T> accumulate_calibration_gradients(const TransformerModel<T>& model, const CalibrationSet& calib);

/// |sum_i g_i * w_i|, accumulated in double.
template <typename T>
double element_importance(std::span<const T> weight, std::span<const T> grad);
template <typename T>
double element_importance(const Tensor<T>& weight_slice, const Tensor<T>& grad_slice);

/// Copy of the rows or columns a node would remove from its projection.
template <typename T>
Tensor<T> extract_slice(const Tensor<T>& full, const ParamNode& node, std::size_t head_dim);

struct MemberScore {
  NodeId node = 0;
  std::string label;
  double importance = 0.0;
};

struct GroupScore {
  std::size_t group_index = 0;
  std::string label;
  GroupKind kind = GroupKind::attention_head;
  std::size_t layer = 0;
  std::size_t unit = 0;
  double importance = 0.0;
  std::vector<MemberScore> members;
};

enum class ScoreMethod { taylor, magnitude };
enum class SelectPolicy { per_layer, global };

SelectPolicy policy_from_name(const std::string& name);
const char* policy_name(SelectPolicy policy);

/// First-order Taylor importance: sum over members of |<grad, weight>| on the
/// member's slice.
template <typename T>
GroupScore group_importance(const PruningGroup& group, const DependencyGraph& graph,
                            const TransformerModel<T>& model, const GradientStore<T>& store);

/// Baseline comparator: sum of |w| over the member slices.
template <typename T>
GroupScore group_magnitude(const PruningGroup& group, const DependencyGraph& graph, const TransformerModel<T>& model);

template <typename T>
std::vector<GroupScore> score_groups(const std::vector<PruningGroup>& groups, const DependencyGraph& graph,
                                     const TransformerModel<T>& model, const GradientStore<T>* store,
                                     ScoreMethod method);

struct SelectOptions {
  double ratio = 0.0;
  SelectPolicy policy = SelectPolicy::per_layer;
  /// Layers whose groups are never selected.
  std::vector<std::size_t> protected_layers;
};

/// Indices into `scores` of the groups to remove, ascending. Within a bucket
/// (per layer and kind, or per kind model-wide) the floor(ratio * count)
/// lowest scores go; ties fall to (layer, kind, unit) ascending.
std::vector<std::size_t> select_groups(const std::vector<GroupScore>& scores, const SelectOptions& options);

nlohmann::json scores_to_json(const std::vector<GroupScore>& scores, const std::vector<std::size_t>& selected);

}  // namespace prunelab
