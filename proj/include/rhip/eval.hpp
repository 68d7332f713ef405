#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "rhip/compress.hpp"
#include "rhip/error.hpp"
#include "rhip/graph.hpp"
#include "rhip/irl.hpp"
#include "rhip/planners.hpp"
#include "rhip/reward_model.hpp"
#include "rhip/training.hpp"

namespace rhip {

struct Metrics {
  std::optional<double> nll;
  double acc = 0.0;
  double iou = 0.0;
  int n = 0;
  int unreachable = 0;
};

struct EvalOptions {
  double temperature = 1.0;
  bool compute_nll = true;
  int nll_max_iters = 0;
  const MergeMap* merge = nullptr;  // report in original edge ids when set
};

/// Highest-reward path from origin to destination under the greedy tie rule,
/// or nullopt when the destination is unreachable.
inline std::optional<std::vector<EdgeId>> predict_path(const GoalView& gv, const Policy& greedy, NodeId origin) {
  std::vector<EdgeId> path;
  NodeId s = origin;
  const RoadGraph& g = gv.base();
  while (s != gv.destination) {
    if (greedy.dead[s] || static_cast<int>(path.size()) > g.num_nodes()) return std::nullopt;
    const auto row = greedy.row(s);
    const auto slots = g.slots(s);
    EdgeId next = kNoEdge;
    for (std::size_t k = 0; k < slots.size(); ++k) {
      if (row[k] > 0.0) {
        next = slots[k].edge;
        break;
      }
    }
    if (next == kNoEdge) return std::nullopt;
    path.push_back(next);
    s = g.edge_target(next);
  }
  return path;
}

inline std::vector<EdgeId> to_original_edges(std::span<const EdgeId> edges, const MergeMap* merge) {
  if (merge == nullptr) return {edges.begin(), edges.end()};
  std::vector<EdgeId> out;
  for (EdgeId e : edges) {
    const auto& orig = merge->expansion.at(e);
    out.insert(out.end(), orig.begin(), orig.end());
  }
  return out;
}

inline double edge_iou(std::vector<EdgeId> a, std::vector<EdgeId> b) {
  std::sort(a.begin(), a.end());
  a.erase(std::unique(a.begin(), a.end()), a.end());
  std::sort(b.begin(), b.end());
  b.erase(std::unique(b.begin(), b.end()), b.end());
  std::vector<EdgeId> both;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
  const std::size_t uni = a.size() + b.size() - both.size();
  return uni == 0 ? 1.0 : static_cast<double>(both.size()) / static_cast<double>(uni);
}

/// Per-sample match indicators alongside the aggregate.
struct EvalDetail {
  Metrics metrics;
  std::vector<std::uint8_t> correct;
  std::vector<double> iou;
  std::vector<std::uint8_t> unreachable;
};

inline EvalDetail evaluate_detail(const RoadGraph& g, const RewardTable& r, std::span<const Trajectory> demos,
                                  const EvalOptions& opt = {}) {
  if (demos.empty()) throw ValidationError("evaluation needs at least one demonstration");
  check_rewards(g, r);
  EvalDetail out;
  std::map<NodeId, Policy> cache;
  double acc = 0.0, iou = 0.0;
  for (const Trajectory& demo : demos) {
    const NodeId dest = demo.destination();
    auto it = cache.find(dest);
    if (it == cache.end()) {
      const GoalView gv(g, dest);
      it = cache.emplace(dest, greedy_policy(gv, r, dijkstra_values(gv, r))).first;
    }
    const GoalView gv(g, dest);
    const auto pred = predict_path(gv, it->second, demo.origin());
    if (!pred) {
      out.correct.push_back(0);
      out.iou.push_back(0.0);
      out.unreachable.push_back(1);
      ++out.metrics.unreachable;
      continue;
    }
    const auto p = to_original_edges(*pred, opt.merge);
    const auto d = to_original_edges(demo.edges, opt.merge);
    const bool match = p == d;
    const double u = edge_iou(p, d);
    out.correct.push_back(match ? 1 : 0);
    out.iou.push_back(u);
    out.unreachable.push_back(0);
    acc += match ? 1.0 : 0.0;
    iou += u;
  }
  const double n = static_cast<double>(demos.size());
  out.metrics.n = static_cast<int>(demos.size());
  out.metrics.acc = acc / n;
  out.metrics.iou = iou / n;
  if (opt.compute_nll) {
    const double nll = maxent_nll(g, r, demos, opt.temperature, opt.nll_max_iters);
    if (std::isfinite(nll)) out.metrics.nll = nll;
  }
  return out;
}

inline Metrics evaluate(const RoadGraph& g, const RewardTable& r, std::span<const Trajectory> demos,
                        const EvalOptions& opt = {}) {
  return evaluate_detail(g, r, demos, opt).metrics;
}

inline Metrics evaluate(const RoadGraph& g, const RewardModel& model, std::span<const Trajectory> demos,
                        EvalOptions opt = {}) {
  opt.temperature = model.temperature;
  return evaluate(g, edge_rewards(model, g), demos, opt);
}

/// Demonstrations that are exactly the highest-reward paths of `r`, for
/// uniformly drawn reachable origin/destination pairs.
inline std::vector<Trajectory> greedy_demonstrations(const RoadGraph& g, const RewardTable& r, int n,
                                                     std::uint64_t seed) {
  if (n < 0) throw ValidationError("sample count must be nonnegative");
  if (g.num_nodes() < 2) throw ValidationError("graph needs at least two nodes");
  check_rewards(g, r);
  Rng rng(seed);
  std::map<NodeId, Policy> cache;
  std::vector<Trajectory> out;
  long long misses = 0;
  while (static_cast<int>(out.size()) < n) {
    const NodeId dest = static_cast<NodeId>(rng.below(g.num_nodes()));
    const NodeId origin = static_cast<NodeId>(rng.below(g.num_nodes()));
    if (origin == dest) continue;
    auto it = cache.find(dest);
    if (it == cache.end()) {
      const GoalView gv(g, dest);
      it = cache.emplace(dest, greedy_policy(gv, r, dijkstra_values(gv, r))).first;
    }
    const auto path = predict_path(GoalView(g, dest), it->second, origin);
    if (!path) {
      if (++misses > 1000LL * (n + 1)) throw ValidationError("graph has too few reachable pairs to sample from");
      continue;
    }
    out.push_back(Trajectory::from_edges(g, *path));
  }
  return out;
}

struct SignificanceResult {
  double z = 0.0;
  double p = 1.0;
  bool degenerate = false;
};

/// Two-sided pooled difference of proportions test with equal group sizes.
inline SignificanceResult diff_of_proportions(double p1, double p2, long long n) {
  if (!(p1 >= 0 && p1 <= 1) || !(p2 >= 0 && p2 <= 1)) throw ValidationError("proportions must lie in [0, 1]");
  if (n <= 0) throw ValidationError("sample size must be positive");
  SignificanceResult out;
  const double pooled = 0.5 * (p1 + p2);
  if (pooled <= 0.0 || pooled >= 1.0) {
    out.degenerate = true;
    return out;
  }
  const double se = std::sqrt(pooled * (1.0 - pooled) * 2.0 / static_cast<double>(n));
  out.z = (p1 - p2) / se;
  out.p = std::min(1.0, std::erfc(std::abs(out.z) / std::sqrt(2.0)));
  return out;
}

/// acc[i][j]: expert i's highest-reward-path accuracy on shard j's held-out
/// demos. Off the diagonal only the feature-based part of a model is usable.
inline std::vector<std::vector<double>> cross_region_eval(const std::vector<RewardModel>& models,
                                                          const std::vector<Shard>& shards,
                                                          const std::vector<std::vector<Trajectory>>& heldout) {
  if (models.size() != shards.size() || heldout.size() != shards.size()) {
    throw ValidationError("need one model and one held-out set per shard");
  }
  const std::size_t m = shards.size();
  std::vector<std::vector<double>> acc(m, std::vector<double>(m, std::numeric_limits<double>::quiet_NaN()));
  for (std::size_t i = 0; i < m; ++i) {
    const auto foreign = transferable_part(models[i]);
    for (std::size_t j = 0; j < m; ++j) {
      if (heldout[j].empty()) continue;
      EvalOptions opt;
      opt.compute_nll = false;
      if (i == j) {
        acc[i][j] = evaluate(shards[j].graph, models[i], heldout[j], opt).acc;
      } else {
        if (!foreign) throw ValidationError("per-edge model has no transferable part for cross-region evaluation");
        acc[i][j] = evaluate(shards[j].graph, *foreign, heldout[j], opt).acc;
      }
    }
  }
  return acc;
}

}  // namespace rhip
