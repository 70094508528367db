#include "prunelab/depgraph.hpp"

#include <algorithm>
#include <deque>
#include <set>
#include <tuple>

namespace prunelab {

const char* group_kind_name(GroupKind kind) {
  return kind == GroupKind::attention_head ? "head" : "channel";
}

std::string ParamNode::label() const {
  return "layer " + std::to_string(layer) + " " + role_name(role) + (axis == SliceAxis::rows ? " rows " : " cols ") +
         std::to_string(unit);
}

DependencyGraph DependencyGraph::build(const ModelShape& shape) {
  if (shape.heads_per_layer.size() != shape.ffn_per_layer.size()) {
    throw ContractError("shape record lists " + std::to_string(shape.heads_per_layer.size()) + " head counts but " +
                        std::to_string(shape.ffn_per_layer.size()) + " ffn widths");
  }
  DependencyGraph g;
  auto add_node = [&](std::size_t layer, ProjRole role, std::size_t unit) {
    const bool columns = role == ProjRole::o_proj || role == ProjRole::down_proj;
    g.nodes_.push_back({g.nodes_.size(), layer, role, columns ? SliceAxis::columns : SliceAxis::rows, unit});
    return g.nodes_.back().id;
  };
  std::vector<std::pair<NodeId, NodeId>> edges;
  for (std::size_t l = 0; l < shape.heads_per_layer.size(); ++l) {
    const std::size_t heads = shape.heads_per_layer[l], ffn = shape.ffn_per_layer[l];
    if (heads == 0 || ffn == 0) throw ContractError("shape record has an empty layer " + std::to_string(l));
    std::vector<NodeId> q, k, v, o, gate, up, down;
    for (std::size_t h = 0; h < heads; ++h) q.push_back(add_node(l, ProjRole::q_proj, h));
    for (std::size_t h = 0; h < heads; ++h) k.push_back(add_node(l, ProjRole::k_proj, h));
    for (std::size_t h = 0; h < heads; ++h) v.push_back(add_node(l, ProjRole::v_proj, h));
    for (std::size_t h = 0; h < heads; ++h) o.push_back(add_node(l, ProjRole::o_proj, h));
    for (std::size_t c = 0; c < ffn; ++c) gate.push_back(add_node(l, ProjRole::gate_proj, c));
    for (std::size_t c = 0; c < ffn; ++c) up.push_back(add_node(l, ProjRole::up_proj, c));
    for (std::size_t c = 0; c < ffn; ++c) down.push_back(add_node(l, ProjRole::down_proj, c));
    for (std::size_t h = 0; h < heads; ++h) {
      edges.emplace_back(q[h], o[h]);
      edges.emplace_back(k[h], o[h]);
      edges.emplace_back(v[h], o[h]);
    }
    for (std::size_t c = 0; c < ffn; ++c) {
      edges.emplace_back(gate[c], down[c]);
      edges.emplace_back(up[c], down[c]);
    }
  }
  g.edges_ = std::move(edges);
  g.in_.assign(g.nodes_.size(), {});
  g.out_.assign(g.nodes_.size(), {});
  for (auto [from, to] : g.edges_) {
    g.out_[from].push_back(to);
    g.in_[to].push_back(from);
  }
  return g;
}

namespace {

auto unit_key(const ParamNode& n) { return std::make_tuple(n.layer, static_cast<int>(n.kind()), n.unit); }

}  // namespace

std::size_t DependencyGraph::in_unit_degree(NodeId n) const {
  std::set<std::tuple<std::size_t, int, std::size_t>> units;
  for (auto src : in_.at(n)) units.insert(unit_key(nodes_[src]));
  return units.size();
}

std::size_t DependencyGraph::out_unit_degree(NodeId n) const {
  std::set<std::tuple<std::size_t, int, std::size_t>> units;
  for (auto dst : out_.at(n)) units.insert(unit_key(nodes_[dst]));
  return units.size();
}

NodeId DependencyGraph::find(std::size_t layer, ProjRole role, std::size_t unit) const {
  for (const auto& n : nodes_)
    if (n.layer == layer && n.role == role && n.unit == unit) return n.id;
  throw ContractError("no node for layer " + std::to_string(layer) + " " + role_name(role) + " unit " +
                      std::to_string(unit));
}

nlohmann::json DependencyGraph::to_json() const {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : nodes_) {
    nodes.push_back({{"id", n.id},
                     {"layer", n.layer},
                     {"role", role_name(n.role)},
                     {"axis", n.axis == SliceAxis::rows ? "rows" : "columns"},
                     {"unit", n.unit},
                     {"in_degree", in_degree(n.id)},
                     {"out_degree", out_degree(n.id)}});
  }
  nlohmann::json edges = nlohmann::json::array();
  for (auto [a, b] : edges_) edges.push_back({a, b});
  return {{"nodes", nodes}, {"edges", edges}};
}

PruningGroup propagate_from_trigger(const DependencyGraph& graph, NodeId trigger) {
  if (trigger >= graph.nodes().size()) throw ContractError("unknown trigger node " + std::to_string(trigger));
  std::vector<char> active(graph.nodes().size(), 0);
  std::deque<NodeId> frontier{trigger};
  active[trigger] = 1;
  while (!frontier.empty()) {
    const NodeId cur = frontier.front();
    frontier.pop_front();
    for (NodeId next : graph.out(cur)) {
      if (!active[next] && graph.in_unit_degree(next) == 1) {
        active[next] = 1;
        frontier.push_back(next);
      }
    }
    for (NodeId prev : graph.in(cur)) {
      if (!active[prev] && graph.out_unit_degree(prev) == 1) {
        active[prev] = 1;
        frontier.push_back(prev);
      }
    }
  }
  PruningGroup g;
  g.trigger = trigger;
  for (NodeId id = 0; id < active.size(); ++id)
    if (active[id]) g.members.push_back(id);
  const ParamNode& t = graph.nodes()[trigger];
  g.kind = t.kind();
  g.layer = t.layer;
  g.unit = t.unit;
  g.label = "layer " + std::to_string(t.layer) + " " + group_kind_name(g.kind) + " " + std::to_string(t.unit);
  return g;
}

std::vector<PruningGroup> enumerate_groups(const DependencyGraph& graph) {
  std::vector<PruningGroup> groups;
  std::vector<char> assigned(graph.nodes().size(), 0);
  for (const auto& node : graph.nodes()) {
    if (assigned[node.id]) continue;
    PruningGroup g = propagate_from_trigger(graph, node.id);
    for (NodeId m : g.members) {
      if (assigned[m]) throw ContractError("dependency closure overlaps an existing group at node " + std::to_string(m));
      assigned[m] = 1;
    }
    groups.push_back(std::move(g));
  }
  return groups;
}

nlohmann::json groups_to_json(const DependencyGraph& graph, const std::vector<PruningGroup>& groups) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& g : groups) {
    nlohmann::json members = nlohmann::json::array();
    for (NodeId m : g.members) members.push_back(graph.nodes()[m].label());
    out.push_back({{"label", g.label},
                   {"kind", group_kind_name(g.kind)},
                   {"layer", g.layer},
                   {"unit", g.unit},
                   {"trigger", g.trigger},
                   {"member_ids", g.members},
                   {"members", members}});
  }
  return out;
}

}  // namespace prunelab
