#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rhip/error.hpp"

namespace rhip {

using NodeId = std::int32_t;
using EdgeId = std::int32_t;

inline constexpr NodeId kNoNode = -1;
inline constexpr EdgeId kNoEdge = -1;

// One padded out-edge position. Padding slots carry kNoEdge/kNoNode.
struct Slot {
  NodeId target = kNoNode;
  EdgeId edge = kNoEdge;

  bool valid() const { return edge != kNoEdge; }
  friend bool operator==(const Slot&, const Slot&) = default;
};

struct Coord {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Coord&, const Coord&) = default;
};

struct NodeRecord {
  NodeId id = kNoNode;
  Coord coord;
};

struct EdgeRecord {
  EdgeId id = kNoEdge;
  NodeId src = kNoNode;
  NodeId dst = kNoNode;
  std::vector<double> features;
  // Zero-reward edge introduced by node splitting.
  bool connector = false;
};

/// Immutable directed road graph stored as an S x V padded slot table.
///
/// Node and edge ids are dense: nodes 0..S-1, edges 0..E-1. Out-slots of each
/// node are ordered by (target id, edge id), so every downstream computation
/// sees the same layout for the same input.
class RoadGraph {
 public:
  RoadGraph() = default;

  int num_nodes() const { return num_nodes_; }
  int num_edges() const { return static_cast<int>(edge_src_.size()); }
  int max_out_degree() const { return max_out_degree_; }
  int feature_dim() const { return feature_dim_; }
  std::size_t padded_slot_count() const {
    return static_cast<std::size_t>(num_nodes_) * static_cast<std::size_t>(max_out_degree_);
  }

  std::span<const Slot> slots(NodeId s) const {
    return {slots_.data() + static_cast<std::size_t>(s) * max_out_degree_,
            static_cast<std::size_t>(max_out_degree_)};
  }
  int out_degree(NodeId s) const { return out_degree_[s]; }

  std::span<const EdgeId> in_edges(NodeId s) const {
    return {in_edges_.data() + in_offsets_[s], in_edges_.data() + in_offsets_[s + 1]};
  }

  NodeId edge_source(EdgeId e) const { return edge_src_[e]; }
  NodeId edge_target(EdgeId e) const { return edge_dst_[e]; }
  bool is_connector(EdgeId e) const { return connector_[e] != 0; }
  std::span<const double> features(EdgeId e) const {
    return {features_.data() + static_cast<std::size_t>(e) * feature_dim_,
            static_cast<std::size_t>(feature_dim_)};
  }
  Coord coord(NodeId s) const { return coords_[s]; }

  // Slot position of edge e inside its source node's slot row.
  int slot_of_edge(EdgeId e) const { return edge_slot_[e]; }

  // First edge (lowest slot) from src to dst, or kNoEdge.
  EdgeId find_edge(NodeId src, NodeId dst) const {
    for (const Slot& slot : slots(src)) {
      if (slot.valid() && slot.target == dst) return slot.edge;
    }
    return kNoEdge;
  }

  bool contains_node(NodeId s) const { return s >= 0 && s < num_nodes_; }
  bool contains_edge(EdgeId e) const { return e >= 0 && e < num_edges(); }

  std::vector<NodeRecord> node_records() const {
    std::vector<NodeRecord> out(num_nodes_);
    for (NodeId s = 0; s < num_nodes_; ++s) out[s] = {s, coords_[s]};
    return out;
  }

  std::vector<EdgeRecord> edge_records() const {
    std::vector<EdgeRecord> out(num_edges());
    for (EdgeId e = 0; e < num_edges(); ++e) {
      auto f = features(e);
      out[e] = {e, edge_src_[e], edge_dst_[e], {f.begin(), f.end()}, is_connector(e)};
    }
    return out;
  }

  friend bool operator==(const RoadGraph&, const RoadGraph&) = default;

  friend RoadGraph build_graph(std::vector<NodeRecord> nodes, std::vector<EdgeRecord> edges);

 private:
  int num_nodes_ = 0;
  int max_out_degree_ = 0;
  int feature_dim_ = 0;
  std::vector<Slot> slots_;
  std::vector<int> out_degree_;
  std::vector<NodeId> edge_src_;
  std::vector<NodeId> edge_dst_;
  std::vector<int> edge_slot_;
  std::vector<double> features_;
  std::vector<std::uint8_t> connector_;
  std::vector<Coord> coords_;
  std::vector<std::size_t> in_offsets_;
  std::vector<EdgeId> in_edges_;
};

/// Builds the padded graph. Node ids must cover 0..S-1 exactly once and edge
/// ids 0..E-1 exactly once; records may arrive in any order.
inline RoadGraph build_graph(std::vector<NodeRecord> nodes, std::vector<EdgeRecord> edges) {
  RoadGraph g;
  const int num_nodes = static_cast<int>(nodes.size());
  g.num_nodes_ = num_nodes;
  g.coords_.assign(num_nodes, Coord{});
  std::vector<std::uint8_t> seen_node(num_nodes, 0);
  for (const NodeRecord& n : nodes) {
    if (n.id < 0 || n.id >= num_nodes) {
      throw ValidationError("node id " + std::to_string(n.id) + " outside dense range 0.." +
                            std::to_string(num_nodes - 1));
    }
    if (seen_node[n.id]) throw ValidationError("duplicate node id " + std::to_string(n.id));
    seen_node[n.id] = 1;
    g.coords_[n.id] = n.coord;
  }

  const int num_edges = static_cast<int>(edges.size());
  std::sort(edges.begin(), edges.end(),
            [](const EdgeRecord& a, const EdgeRecord& b) { return a.id < b.id; });
  g.feature_dim_ = edges.empty() ? 0 : static_cast<int>(edges.front().features.size());
  g.edge_src_.resize(num_edges);
  g.edge_dst_.resize(num_edges);
  g.edge_slot_.resize(num_edges);
  g.connector_.resize(num_edges);
  g.features_.reserve(static_cast<std::size_t>(num_edges) * g.feature_dim_);
  g.out_degree_.assign(num_nodes, 0);

  for (int i = 0; i < num_edges; ++i) {
    const EdgeRecord& e = edges[i];
    if (e.id != i) {
      throw ValidationError("edge ids must be dense and unique; expected " + std::to_string(i) +
                            ", found " + std::to_string(e.id));
    }
    if (e.src < 0 || e.src >= num_nodes || e.dst < 0 || e.dst >= num_nodes) {
      throw ValidationError("edge " + std::to_string(e.id) + " references undeclared node (" +
                            std::to_string(e.src) + " -> " + std::to_string(e.dst) + ")");
    }
    if (static_cast<int>(e.features.size()) != g.feature_dim_) {
      throw ValidationError("edge " + std::to_string(e.id) + " has " +
                            std::to_string(e.features.size()) + " features, expected " +
                            std::to_string(g.feature_dim_));
    }
    for (double f : e.features) {
      if (!(f >= 0.0) || f == std::numeric_limits<double>::infinity()) {
        throw ValidationError("edge " + std::to_string(e.id) +
                              " has a negative or non-finite feature");
      }
      if (e.connector && f != 0.0) {
        throw ValidationError("connector edge " + std::to_string(e.id) +
                              " must have all-zero features");
      }
    }
    g.edge_src_[i] = e.src;
    g.edge_dst_[i] = e.dst;
    g.connector_[i] = e.connector ? 1 : 0;
    g.features_.insert(g.features_.end(), e.features.begin(), e.features.end());
    ++g.out_degree_[e.src];
  }

  g.max_out_degree_ = num_nodes == 0 ? 0 : *std::max_element(g.out_degree_.begin(), g.out_degree_.end());

  std::vector<std::vector<EdgeId>> out(num_nodes);
  for (EdgeId e = 0; e < num_edges; ++e) out[g.edge_src_[e]].push_back(e);
  g.slots_.assign(static_cast<std::size_t>(num_nodes) * g.max_out_degree_, Slot{});
  for (NodeId s = 0; s < num_nodes; ++s) {
    auto& row = out[s];
    std::sort(row.begin(), row.end(), [&](EdgeId a, EdgeId b) {
      return std::pair(g.edge_dst_[a], a) < std::pair(g.edge_dst_[b], b);
    });
    for (std::size_t k = 0; k < row.size(); ++k) {
      g.slots_[static_cast<std::size_t>(s) * g.max_out_degree_ + k] = {g.edge_dst_[row[k]], row[k]};
      g.edge_slot_[row[k]] = static_cast<int>(k);
    }
  }

  g.in_offsets_.assign(num_nodes + 1, 0);
  for (EdgeId e = 0; e < num_edges; ++e) ++g.in_offsets_[g.edge_dst_[e] + 1];
  for (int s = 0; s < num_nodes; ++s) g.in_offsets_[s + 1] += g.in_offsets_[s];
  g.in_edges_.resize(num_edges);
  std::vector<std::size_t> cursor(g.in_offsets_.begin(), g.in_offsets_.end() - 1);
  for (EdgeId e = 0; e < num_edges; ++e) g.in_edges_[cursor[g.edge_dst_[e]]++] = e;
  return g;
}

/// A road graph viewed with one node as the self-absorbing, zero-reward
/// destination. Out-edges of the destination are masked.
struct GoalView {
  const RoadGraph* graph = nullptr;
  NodeId destination = kNoNode;

  GoalView(const RoadGraph& g, NodeId dest) : graph(&g), destination(dest) {
    if (!g.contains_node(dest)) {
      throw ValidationError("destination " + std::to_string(dest) + " is not a node");
    }
  }

  const RoadGraph& base() const { return *graph; }
  int num_nodes() const { return graph->num_nodes(); }
  int max_out_degree() const { return graph->max_out_degree(); }

  bool active(NodeId s, const Slot& slot) const { return slot.valid() && s != destination; }
};

/// A demonstrated route. Edges are authoritative; nodes are derived from them.
struct Trajectory {
  std::vector<NodeId> nodes;
  std::vector<EdgeId> edges;

  NodeId origin() const { return nodes.front(); }
  NodeId destination() const { return nodes.back(); }
  std::size_t length() const { return edges.size(); }

  friend bool operator==(const Trajectory&, const Trajectory&) = default;

  static Trajectory from_edges(const RoadGraph& g, std::vector<EdgeId> edges) {
    if (edges.empty()) throw ValidationError("trajectory must contain at least one edge");
    Trajectory t;
    t.nodes.reserve(edges.size() + 1);
    for (std::size_t i = 0; i < edges.size(); ++i) {
      const EdgeId e = edges[i];
      if (!g.contains_edge(e)) {
        throw ValidationError("trajectory references missing edge " + std::to_string(e));
      }
      if (i == 0) {
        t.nodes.push_back(g.edge_source(e));
      } else if (g.edge_source(e) != t.nodes.back()) {
        throw ValidationError("trajectory edge " + std::to_string(e) + " does not continue from node " +
                              std::to_string(t.nodes.back()));
      }
      t.nodes.push_back(g.edge_target(e));
    }
    std::vector<EdgeId> sorted = edges;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw ValidationError("trajectory repeats an edge");
    }
    t.edges = std::move(edges);
    return t;
  }

  // Consecutive node pairs are resolved to the lowest-slot matching edge.
  static Trajectory from_nodes(const RoadGraph& g, const std::vector<NodeId>& nodes) {
    if (nodes.size() < 2) throw ValidationError("trajectory must contain at least one edge");
    std::vector<EdgeId> edges;
    edges.reserve(nodes.size() - 1);
    for (std::size_t i = 0; i + 1 < nodes.size(); ++i) {
      if (!g.contains_node(nodes[i]) || !g.contains_node(nodes[i + 1])) {
        throw ValidationError("trajectory references missing edge " + std::to_string(nodes[i]) +
                              " -> " + std::to_string(nodes[i + 1]));
      }
      const EdgeId e = g.find_edge(nodes[i], nodes[i + 1]);
      if (e == kNoEdge) {
        throw ValidationError("trajectory references missing edge " + std::to_string(nodes[i]) +
                              " -> " + std::to_string(nodes[i + 1]));
      }
      edges.push_back(e);
    }
    return from_edges(g, std::move(edges));
  }

  bool has_repeated_node() const {
    std::vector<NodeId> sorted = nodes;
    std::sort(sorted.begin(), sorted.end());
    return std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end();
  }
};

}  // namespace rhip
