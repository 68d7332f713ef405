#pragma once

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "rhip/compress.hpp"
#include "rhip/error.hpp"
#include "rhip/graph.hpp"

namespace rhip {

// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("failed to format number");
  return std::string(buf, ptr);
}

namespace detail {

inline std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

inline long long parse_id(const std::string& tok, const std::string& where) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || v < 0 || v > 0x7fffffff) {
    throw ValidationError(where + ": expected nonnegative integer id, got '" + tok + "'");
  }
  return v;
}

inline double parse_real(const std::string& tok, const std::string& where) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw ValidationError(where + ": expected number, got '" + tok + "'");
  }
  return v;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Graph file: `N <id> <x> <y>` and `E <id> <src> <dst> <f1> ... <fd>` lines.

inline std::string format_graph(const RoadGraph& g) {
  std::string out;
  for (const NodeRecord& n : g.node_records()) {
    out += "N " + std::to_string(n.id) + ' ' + format_double(n.coord.x) + ' ' + format_double(n.coord.y) + '\n';
  }
  for (EdgeId e = 0; e < g.num_edges(); ++e) {
    out += "E " + std::to_string(e) + ' ' + std::to_string(g.edge_source(e)) + ' ' +
           std::to_string(g.edge_target(e));
    for (double f : g.features(e)) out += ' ' + format_double(f);
    out += '\n';
  }
  return out;
}

inline RoadGraph parse_graph(const std::string& text) {
  std::vector<NodeRecord> nodes;
  std::vector<EdgeRecord> edges;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto tok = detail::split_ws(line);
    if (tok.empty()) continue;
    const std::string where = "graph line " + std::to_string(lineno);
    if (tok[0] == "N") {
      if (tok.size() != 4) throw ValidationError(where + ": node record needs `N <id> <x> <y>`");
      nodes.push_back({static_cast<NodeId>(detail::parse_id(tok[1], where)),
                       {detail::parse_real(tok[2], where), detail::parse_real(tok[3], where)}});
    } else if (tok[0] == "E") {
      if (tok.size() < 4) throw ValidationError(where + ": edge record needs `E <id> <src> <dst> ...`");
      EdgeRecord e;
      e.id = static_cast<EdgeId>(detail::parse_id(tok[1], where));
      e.src = static_cast<NodeId>(detail::parse_id(tok[2], where));
      e.dst = static_cast<NodeId>(detail::parse_id(tok[3], where));
      for (std::size_t i = 4; i < tok.size(); ++i) e.features.push_back(detail::parse_real(tok[i], where));
      edges.push_back(std::move(e));
    } else {
      throw ValidationError(where + ": unknown record type '" + tok[0] + "'");
    }
  }
  return build_graph(std::move(nodes), std::move(edges));
}

/// Loads a graph; when a merge map is supplied, edges that expand to nothing
/// are restored as connector edges.
inline RoadGraph load_graph(const std::string& path, const MergeMap* map = nullptr) {
  RoadGraph g = parse_graph(detail::read_file(path));
  if (map == nullptr) return g;
  if (map->expansion.size() != static_cast<std::size_t>(g.num_edges())) {
    throw ValidationError("merge map does not match graph edge count");
  }
  auto edges = g.edge_records();
  for (auto& e : edges) e.connector = map->expansion[e.id].empty();
  return build_graph(g.node_records(), std::move(edges));
}

inline void save_graph(const RoadGraph& g, const std::string& path) {
  detail::write_file(path, format_graph(g));
}

// ---------------------------------------------------------------------------
// Trajectory file: one trajectory per line as node ids.

inline std::string format_trajectories(const std::vector<Trajectory>& demos) {
  std::string out;
  for (const auto& t : demos) {
    for (std::size_t i = 0; i < t.nodes.size(); ++i) {
      if (i) out += ' ';
      out += std::to_string(t.nodes[i]);
    }
    out += '\n';
  }
  return out;
}

inline std::vector<Trajectory> parse_trajectories(const std::string& text, const RoadGraph& g) {
  std::vector<Trajectory> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto tok = detail::split_ws(line);
    if (tok.empty()) continue;
    const std::string where = "trajectory line " + std::to_string(lineno);
    std::vector<NodeId> nodes;
    for (const auto& t : tok) nodes.push_back(static_cast<NodeId>(detail::parse_id(t, where)));
    try {
      out.push_back(Trajectory::from_nodes(g, nodes));
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<Trajectory> load_trajectories(const std::string& path, const RoadGraph& g) {
  return parse_trajectories(detail::read_file(path), g);
}

inline void save_trajectories(const std::vector<Trajectory>& demos, const std::string& path) {
  detail::write_file(path, format_trajectories(demos));
}

// ---------------------------------------------------------------------------
// Merge map file: `M <merged_edge_id> <orig_id_1> ... <orig_id_k>` per
// compressed edge, plus `P <compressed_node> <original_node>` per node.

inline std::string format_merge_map(const MergeMap& map) {
  std::string out;
  for (std::size_t e = 0; e < map.expansion.size(); ++e) {
    out += "M " + std::to_string(e);
    for (EdgeId o : map.expansion[e]) out += ' ' + std::to_string(o);
    out += '\n';
  }
  for (std::size_t n = 0; n < map.node_to_original.size(); ++n) {
    out += "P " + std::to_string(n) + ' ' + std::to_string(map.node_to_original[n]) + '\n';
  }
  return out;
}

/// `original_nodes` is the node count of the uncompressed graph.
inline MergeMap parse_merge_map(const std::string& text, int original_nodes) {
  MergeMap map;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto tok = detail::split_ws(line);
    if (tok.empty()) continue;
    const std::string where = "merge map line " + std::to_string(lineno);
    if (tok[0] == "M") {
      if (tok.size() < 2) throw ValidationError(where + ": expected `M <id> ...`");
      const auto id = static_cast<std::size_t>(detail::parse_id(tok[1], where));
      if (id != map.expansion.size()) throw ValidationError(where + ": merged edge ids must be dense and ordered");
      std::vector<EdgeId> orig;
      for (std::size_t i = 2; i < tok.size(); ++i) orig.push_back(static_cast<EdgeId>(detail::parse_id(tok[i], where)));
      map.expansion.push_back(std::move(orig));
    } else if (tok[0] == "P") {
      if (tok.size() != 3) throw ValidationError(where + ": expected `P <node> <original>`");
      const auto id = static_cast<std::size_t>(detail::parse_id(tok[1], where));
      if (id != map.node_to_original.size()) throw ValidationError(where + ": node ids must be dense and ordered");
      const auto orig = static_cast<NodeId>(detail::parse_id(tok[2], where));
      if (orig >= original_nodes) throw ValidationError(where + ": original node out of range");
      map.node_to_original.push_back(orig);
    } else {
      throw ValidationError(where + ": unknown record type '" + tok[0] + "'");
    }
  }
  // Several compressed nodes (split continuations) can share one original;
  // the lowest id is the original node itself.
  map.original_to_node.assign(original_nodes, kNoNode);
  for (std::size_t n = 0; n < map.node_to_original.size(); ++n) {
    NodeId& slot = map.original_to_node[map.node_to_original[n]];
    if (slot == kNoNode) slot = static_cast<NodeId>(n);
  }
  return map;
}

inline MergeMap load_merge_map(const std::string& path, int original_nodes) {
  return parse_merge_map(detail::read_file(path), original_nodes);
}

inline void save_merge_map(const MergeMap& map, const std::string& path) {
  detail::write_file(path, format_merge_map(map));
}

}  // namespace rhip
