#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "rhip/error.hpp"
#include "rhip/graph.hpp"
#include "rhip/random.hpp"

namespace rhip {

struct FeatureDist {
  enum class Kind { Constant, Uniform, Bernoulli };
  Kind kind = Kind::Constant;
  double a = 1.0;  // constant value, uniform low, or bernoulli probability
  double b = 1.0;  // uniform high

  double draw(Rng& rng) const {
    switch (kind) {
      case Kind::Constant: return a;
      case Kind::Uniform: return rng.uniform(a, b);
      case Kind::Bernoulli: return rng.bernoulli(a) ? 1.0 : 0.0;
    }
    return a;
  }
};

struct FeatureSpec {
  std::vector<FeatureDist> dims;

  static FeatureSpec constant(std::vector<double> values) {
    FeatureSpec spec;
    for (double v : values) spec.dims.push_back({FeatureDist::Kind::Constant, v, v});
    return spec;
  }

  // Comma separated list of `const:v`, `uniform:lo:hi` or `bernoulli:p`.
  static FeatureSpec parse(const std::string& text) {
    FeatureSpec spec;
    std::stringstream items(text);
    std::string item;
    while (std::getline(items, item, ',')) {
      std::vector<std::string> parts;
      std::stringstream fields(item);
      std::string field;
      while (std::getline(fields, field, ':')) parts.push_back(field);
      try {
        if (parts.size() == 2 && parts[0] == "const") {
          const double v = std::stod(parts[1]);
          spec.dims.push_back({FeatureDist::Kind::Constant, v, v});
        } else if (parts.size() == 3 && parts[0] == "uniform") {
          spec.dims.push_back({FeatureDist::Kind::Uniform, std::stod(parts[1]), std::stod(parts[2])});
        } else if (parts.size() == 2 && parts[0] == "bernoulli") {
          spec.dims.push_back({FeatureDist::Kind::Bernoulli, std::stod(parts[1]), 0.0});
        } else {
          throw ValidationError("bad feature spec item '" + item + "'");
        }
      } catch (const std::logic_error& e) {
        if (dynamic_cast<const ValidationError*>(&e)) throw;
        throw ValidationError("bad number in feature spec item '" + item + "'");
      }
    }
    if (spec.dims.empty()) throw ValidationError("feature spec is empty");
    for (const auto& d : spec.dims) {
      const bool bad = (d.kind == FeatureDist::Kind::Constant && d.a < 0) ||
                       (d.kind == FeatureDist::Kind::Uniform && (d.a < 0 || d.b < d.a)) ||
                       (d.kind == FeatureDist::Kind::Bernoulli && (d.a < 0 || d.a > 1));
      if (bad) throw ValidationError("feature spec must produce nonnegative features");
    }
    return spec;
  }
};

/// Manhattan-style 4-connected bidirectional grid.
///
/// Intersections are numbered row-major (id = y * width + x). With
/// `segments_per_street` > 0, each directed street between adjacent
/// intersections is drawn as a chain of that many mid-block segment nodes,
/// each with a single "continue" out-edge; those nodes are numbered after the
/// intersections.
inline RoadGraph gen_gridworld(int width, int height, const FeatureSpec& spec, std::uint64_t seed,
                               int segments_per_street = 0) {
  if (width < 2 || height < 2) throw ValidationError("grid dimensions must be at least 2x2");
  if (segments_per_street < 0) throw ValidationError("segments_per_street must be nonnegative");
  if (spec.dims.empty()) throw ValidationError("feature spec is empty");

  Rng rng(seed);
  std::vector<NodeRecord> nodes;
  std::vector<EdgeRecord> edges;
  const int num_intersections = width * height;
  for (NodeId id = 0; id < num_intersections; ++id) {
    nodes.push_back({id, {static_cast<double>(id % width), static_cast<double>(id / width)}});
  }

  auto draw_features = [&] {
    std::vector<double> f(spec.dims.size());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = spec.dims[i].draw(rng);
    return f;
  };
  auto add_edge = [&](NodeId src, NodeId dst) {
    const EdgeId id = static_cast<EdgeId>(edges.size());
    edges.push_back({id, src, dst, draw_features(), false});
  };

  for (NodeId u = 0; u < num_intersections; ++u) {
    const int x = u % width;
    const int y = u / width;
    // Neighbors in ascending id order: up, left, right, down.
    std::vector<NodeId> neighbors;
    if (y > 0) neighbors.push_back(u - width);
    if (x > 0) neighbors.push_back(u - 1);
    if (x + 1 < width) neighbors.push_back(u + 1);
    if (y + 1 < height) neighbors.push_back(u + width);
    for (NodeId w : neighbors) {
      NodeId prev = u;
      const Coord cu = nodes[u].coord;
      const Coord cw = nodes[w].coord;
      for (int k = 1; k <= segments_per_street; ++k) {
        const double t = static_cast<double>(k) / (segments_per_street + 1);
        const NodeId mid = static_cast<NodeId>(nodes.size());
        nodes.push_back({mid, {cu.x + t * (cw.x - cu.x), cu.y + t * (cw.y - cu.y)}});
        add_edge(prev, mid);
        prev = mid;
      }
      add_edge(prev, w);
    }
  }
  return build_graph(std::move(nodes), std::move(edges));
}

}  // namespace rhip
