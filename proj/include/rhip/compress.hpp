#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "rhip/error.hpp"
#include "rhip/graph.hpp"

namespace rhip {

/// Correspondence between a compressed graph and the graph it came from.
///
/// `expansion[e]` lists the original edge ids that compressed edge e stands
/// for, in travel order; connector edges expand to nothing.
struct MergeMap {
  std::vector<std::vector<EdgeId>> expansion;
  std::vector<NodeId> node_to_original;  // per compressed node
  std::vector<NodeId> original_to_node;  // per original node, kNoNode if removed

  static MergeMap identity(const RoadGraph& g) {
    MergeMap map;
    map.expansion.resize(g.num_edges());
    for (EdgeId e = 0; e < g.num_edges(); ++e) map.expansion[e] = {e};
    map.node_to_original.resize(g.num_nodes());
    map.original_to_node.resize(g.num_nodes());
    for (NodeId s = 0; s < g.num_nodes(); ++s) map.node_to_original[s] = map.original_to_node[s] = s;
    return map;
  }

  friend bool operator==(const MergeMap&, const MergeMap&) = default;
};

/// Chains two maps: `first` maps a middle graph onto the original, `second`
/// maps the final graph onto the middle one.
inline MergeMap compose(const MergeMap& first, const MergeMap& second) {
  MergeMap out;
  out.expansion.resize(second.expansion.size());
  for (std::size_t e = 0; e < second.expansion.size(); ++e) {
    for (EdgeId mid : second.expansion[e]) {
      const auto& orig = first.expansion.at(mid);
      out.expansion[e].insert(out.expansion[e].end(), orig.begin(), orig.end());
    }
  }
  out.node_to_original.resize(second.node_to_original.size());
  for (std::size_t n = 0; n < second.node_to_original.size(); ++n) {
    out.node_to_original[n] = first.node_to_original.at(second.node_to_original[n]);
  }
  out.original_to_node.resize(first.original_to_node.size());
  for (std::size_t o = 0; o < first.original_to_node.size(); ++o) {
    const NodeId mid = first.original_to_node[o];
    out.original_to_node[o] = mid == kNoNode ? kNoNode : second.original_to_node.at(mid);
  }
  return out;
}

/// Maps a compressed-graph trajectory back to original edge ids.
inline Trajectory expand(const Trajectory& compressed, const MergeMap& map, const RoadGraph& original) {
  std::vector<EdgeId> edges;
  for (EdgeId e : compressed.edges) {
    const auto& orig = map.expansion.at(e);
    edges.insert(edges.end(), orig.begin(), orig.end());
  }
  return Trajectory::from_edges(original, std::move(edges));
}

/// Maps an original-graph trajectory onto the compressed graph, inserting
/// connector hops where split nodes require them.
inline Trajectory compress(const Trajectory& original, const MergeMap& map, const RoadGraph& compressed) {
  NodeId cur = map.original_to_node.at(original.origin());
  if (cur == kNoNode) {
    throw ValidationError("trajectory origin " + std::to_string(original.origin()) +
                          " was removed by compression");
  }
  std::vector<EdgeId> out;
  std::size_t pos = 0;
  const auto& src = original.edges;
  while (pos < src.size()) {
    EdgeId matched = kNoEdge;
    EdgeId connector = kNoEdge;
    for (const Slot& slot : compressed.slots(cur)) {
      if (!slot.valid()) continue;
      const auto& exp = map.expansion.at(slot.edge);
      if (exp.empty()) {
        connector = slot.edge;
        continue;
      }
      if (pos + exp.size() <= src.size() && std::equal(exp.begin(), exp.end(), src.begin() + pos)) {
        matched = slot.edge;
        break;
      }
    }
    if (matched != kNoEdge) {
      out.push_back(matched);
      pos += map.expansion[matched].size();
      cur = compressed.edge_target(matched);
    } else if (connector != kNoEdge && out.size() < src.size() + compressed.num_nodes()) {
      out.push_back(connector);
      cur = compressed.edge_target(connector);
    } else {
      throw ValidationError("original edge " + std::to_string(src[pos]) +
                            " has no image in the compressed graph");
    }
  }
  if (map.node_to_original.at(cur) != original.destination() ||
      map.original_to_node.at(original.destination()) != cur) {
    throw ValidationError("compressed trajectory does not end at the destination's image");
  }
  return Trajectory::from_edges(compressed, std::move(out));
}

/// Caps out-degree at `v_cap`. A node with k > v_cap out-edges keeps its
/// first v_cap-1 slots and moves the rest behind a zero-feature connector to
/// a fresh continuation node (recursively). Incoming edges stay on the
/// original node, so path reward sums are preserved when connectors score 0.
inline std::pair<RoadGraph, MergeMap> split_high_degree(const RoadGraph& g, int v_cap) {
  if (v_cap < 2) throw ValidationError("v_cap must be at least 2");
  std::vector<NodeRecord> nodes = g.node_records();
  std::vector<EdgeRecord> edges = g.edge_records();
  MergeMap map = MergeMap::identity(g);
  const std::vector<double> zeros(g.feature_dim(), 0.0);

  for (NodeId s = 0; s < g.num_nodes(); ++s) {
    std::vector<EdgeId> row;
    for (const Slot& slot : g.slots(s)) {
      if (slot.valid()) row.push_back(slot.edge);
    }
    NodeId holder = s;
    std::size_t next = 0;
    while (row.size() - next > static_cast<std::size_t>(v_cap)) {
      next += static_cast<std::size_t>(v_cap - 1);
      const NodeId cont = static_cast<NodeId>(nodes.size());
      nodes.push_back({cont, g.coord(s)});
      const EdgeId conn = static_cast<EdgeId>(edges.size());
      edges.push_back({conn, holder, cont, zeros, true});
      map.expansion.push_back({});
      map.node_to_original.push_back(s);
      for (std::size_t k = next; k < row.size(); ++k) edges[row[k]].src = cont;
      holder = cont;
    }
  }
  return {build_graph(std::move(nodes), std::move(edges)), std::move(map)};
}

/// Contracts nodes with a single out-edge into their downstream node; the
/// replacement edge's features are the elementwise sum along the chain.
///
/// Guards: protected nodes (demonstration origins and destinations) are never
/// removed, and a node is skipped when contraction would create a self-loop or
/// a second edge between the same ordered node pair.
inline std::pair<RoadGraph, MergeMap> merge_chains(const RoadGraph& g,
                                                   const std::vector<NodeId>& protected_nodes = {}) {
  struct WorkEdge {
    NodeId src, dst;
    std::vector<double> features;
    std::vector<EdgeId> expansion;
    bool connector;
    bool alive;
  };
  std::vector<WorkEdge> work;
  work.reserve(g.num_edges());
  for (EdgeId e = 0; e < g.num_edges(); ++e) {
    auto f = g.features(e);
    work.push_back({g.edge_source(e), g.edge_target(e), {f.begin(), f.end()}, {e}, g.is_connector(e), true});
  }
  const int n = g.num_nodes();
  std::vector<std::set<int>> out(n), in(n);
  for (int e = 0; e < static_cast<int>(work.size()); ++e) {
    out[work[e].src].insert(e);
    in[work[e].dst].insert(e);
  }
  std::vector<char> alive(n, 1), is_protected(n, 0);
  for (NodeId p : protected_nodes) {
    if (!g.contains_node(p)) throw ValidationError("protected node " + std::to_string(p) + " is not a node");
    is_protected[p] = 1;
  }
  auto has_edge = [&](NodeId u, NodeId v) {
    return std::any_of(out[u].begin(), out[u].end(), [&](int e) { return work[e].dst == v; });
  };

  bool changed = true;
  while (changed) {
    changed = false;
    for (NodeId m = 0; m < n; ++m) {
      if (!alive[m] || is_protected[m] || out[m].size() != 1) continue;
      const int e_out = *out[m].begin();
      const NodeId b = work[e_out].dst;
      if (b == m) continue;
      bool blocked = false;
      std::set<NodeId> sources;
      for (int e_in : in[m]) {
        const NodeId u = work[e_in].src;
        if (u == b || !sources.insert(u).second || has_edge(u, b)) {
          blocked = true;
          break;
        }
      }
      if (blocked) continue;

      const std::vector<int> incoming(in[m].begin(), in[m].end());
      for (int e_in : incoming) {
        WorkEdge merged = work[e_in];
        for (std::size_t i = 0; i < merged.features.size(); ++i) merged.features[i] += work[e_out].features[i];
        merged.expansion.insert(merged.expansion.end(), work[e_out].expansion.begin(),
                                work[e_out].expansion.end());
        merged.dst = b;
        merged.connector = work[e_in].connector && work[e_out].connector;
        work[e_in].alive = false;
        out[merged.src].erase(e_in);
        const int id = static_cast<int>(work.size());
        work.push_back(std::move(merged));
        out[work[id].src].insert(id);
        in[b].insert(id);
      }
      work[e_out].alive = false;
      in[b].erase(e_out);
      out[m].clear();
      in[m].clear();
      alive[m] = 0;
      changed = true;
    }
  }

  MergeMap map;
  map.original_to_node.assign(n, kNoNode);
  std::vector<NodeRecord> nodes;
  for (NodeId s = 0; s < n; ++s) {
    if (!alive[s]) continue;
    const NodeId id = static_cast<NodeId>(nodes.size());
    map.original_to_node[s] = id;
    map.node_to_original.push_back(s);
    nodes.push_back({id, g.coord(s)});
  }
  std::vector<EdgeRecord> edges;
  for (const WorkEdge& w : work) {
    if (!w.alive) continue;
    const EdgeId id = static_cast<EdgeId>(edges.size());
    edges.push_back({id, map.original_to_node[w.src], map.original_to_node[w.dst], w.features, w.connector});
    map.expansion.push_back(w.expansion);
  }
  return {build_graph(std::move(nodes), std::move(edges)), std::move(map)};
}

/// Split first, then merge.
inline std::pair<RoadGraph, MergeMap> split_and_merge(const RoadGraph& g, int v_cap,
                                                      const std::vector<NodeId>& protected_nodes = {}) {
  auto [split_graph, split_map] = split_high_degree(g, v_cap);
  // Split keeps original node ids, so protection carries over unchanged.
  auto [merged_graph, merge_map] = merge_chains(split_graph, protected_nodes);
  return {std::move(merged_graph), compose(split_map, merge_map)};
}

struct CompressionStats {
  int num_nodes = 0;
  int max_out_degree = 0;
  double mean_out_degree = 0.0;
  std::size_t padded_slots = 0;
  int num_edges = 0;
};

inline CompressionStats compression_stats(const RoadGraph& g) {
  CompressionStats st;
  st.num_nodes = g.num_nodes();
  st.max_out_degree = g.max_out_degree();
  st.num_edges = g.num_edges();
  st.padded_slots = g.padded_slot_count();
  st.mean_out_degree = g.num_nodes() == 0 ? 0.0 : static_cast<double>(g.num_edges()) / g.num_nodes();
  return st;
}

// Origins and destinations of a dataset: the nodes merge must keep.
inline std::vector<NodeId> demo_endpoints(const std::vector<Trajectory>& demos) {
  std::vector<NodeId> out;
  for (const auto& t : demos) {
    out.push_back(t.origin());
    out.push_back(t.destination());
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace rhip
