#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "prunelab/model.hpp"

namespace prunelab {

enum class SliceAxis { rows, columns };
enum class GroupKind { attention_head, ffn_channel };

const char* group_kind_name(GroupKind kind);

using NodeId = std::size_t;

/// One prunable slice: the rows (or columns) of a projection that belong to a
/// single head or FFN channel.
struct ParamNode {
  NodeId id = 0;
  std::size_t layer = 0;
  ProjRole role = ProjRole::q_proj;
  SliceAxis axis = SliceAxis::rows;
  std::size_t unit = 0;

  GroupKind kind() const {
    return is_attention_role(role) ? GroupKind::attention_head : GroupKind::ffn_channel;
  }
  std::string label() const;
};

/// Per-layer head counts and FFN widths; all a graph needs to know.
struct ModelShape {
  std::vector<std::size_t> heads_per_layer;
  std::vector<std::size_t> ffn_per_layer;

  template <typename T>
  static ModelShape of(const TransformerModel<T>& model) {
    return {model.heads_per_layer(), model.ffn_per_layer()};
  }
};

struct PruningGroup {
  NodeId trigger = 0;
  std::vector<NodeId> members;  // sorted ascending
  std::string label;
  GroupKind kind = GroupKind::attention_head;
  std::size_t layer = 0;
  std::size_t unit = 0;
};

/// Directed coupling graph over projection slices. Edges follow the data
/// flow: q/k/v rows of a head feed the o columns of that head, gate/up rows of
/// a channel feed the down column of that channel.
class DependencyGraph {
 public:
  static DependencyGraph build(const ModelShape& shape);

  const std::vector<ParamNode>& nodes() const noexcept { return nodes_; }
  const std::vector<std::pair<NodeId, NodeId>>& edges() const noexcept { return edges_; }
  const std::vector<NodeId>& in(NodeId n) const { return in_.at(n); }
  const std::vector<NodeId>& out(NodeId n) const { return out_.at(n); }
  std::size_t in_degree(NodeId n) const { return in_.at(n).size(); }
  std::size_t out_degree(NodeId n) const { return out_.at(n).size(); }

  /// Distinct (layer, kind, unit) sources among In(n).
  std::size_t in_unit_degree(NodeId n) const;
  /// Distinct (layer, kind, unit) sinks among Out(n).
  std::size_t out_unit_degree(NodeId n) const;

  /// Throws ContractError when no node matches.
  NodeId find(std::size_t layer, ProjRole role, std::size_t unit) const;

  nlohmann::json to_json() const;

 private:
  std::vector<ParamNode> nodes_;
  std::vector<std::pair<NodeId, NodeId>> edges_;
  std::vector<std::vector<NodeId>> in_, out_;
};

/// Fixed point of dependency activation from `trigger`: an active P_i pulls in
/// every P_j in Out(P_i) fed by a single unit, and every P_k in In(P_i) that
/// feeds a single unit.
PruningGroup propagate_from_trigger(const DependencyGraph& graph, NodeId trigger);

/// Every parameter tried as trigger; one group per head and per channel.
std::vector<PruningGroup> enumerate_groups(const DependencyGraph& graph);

nlohmann::json groups_to_json(const DependencyGraph& graph, const std::vector<PruningGroup>& groups);

}  // namespace prunelab
