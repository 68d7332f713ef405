#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <future>
#include <map>
#include <string>
#include <vector>

#include "rhip/error.hpp"
#include "rhip/graph.hpp"
#include "rhip/io.hpp"
#include "rhip/irl.hpp"
#include "rhip/random.hpp"
#include "rhip/reward_model.hpp"
#include "rhip/spectral.hpp"

namespace rhip {

/// One expert's subproblem: the nodes of a spatial cell with all their
/// out-edges, plus the one-hop halo nodes those edges reach. Halo nodes carry
/// no out-edges. Ids are local; the maps lead back to the global graph.
struct Shard {
  int cell = 0;
  RoadGraph graph;
  int owned_nodes = 0;  // local ids [0, owned_nodes) are inside the cell
  std::vector<NodeId> node_to_global;
  std::vector<EdgeId> edge_to_global;
  std::vector<Trajectory> demos;         // local ids
  std::vector<std::size_t> demo_index;   // position of each demo in the input
};

struct Partition {
  int rows = 1;
  int cols = 1;
  std::vector<int> node_cell;  // per global node
  std::vector<Shard> shards;
  std::vector<std::size_t> dropped;  // input positions of demos not contained in their shard
};

namespace detail {

// Thresholds splitting `values` into `parts` groups of near-equal size; a
// value v falls into group = number of thresholds <= v.
inline std::vector<double> quantile_thresholds(std::vector<double> values, int parts) {
  std::sort(values.begin(), values.end());
  std::vector<double> t;
  for (int c = 1; c < parts; ++c) {
    const std::size_t k = values.size() * static_cast<std::size_t>(c) / static_cast<std::size_t>(parts);
    t.push_back(values[std::min(k, values.size() - 1)]);
  }
  return t;
}

inline int group_of(const std::vector<double>& thresholds, double v) {
  return static_cast<int>(std::upper_bound(thresholds.begin(), thresholds.end(), v) - thresholds.begin());
}

}  // namespace detail

/// Balanced rectangular grid of m cells over node coordinates: columns by x
/// quantiles, then rows by y quantiles within each column. Demonstrations go
/// to the cell of their destination and are dropped (and counted) when any of
/// their edges leaves that shard.
inline Partition partition_geographic(const RoadGraph& g, const std::vector<Trajectory>& demos, int m) {
  if (m < 1) throw ValidationError("number of shards must be at least 1");
  if (m > g.num_nodes()) throw ValidationError("number of shards exceeds node count");
  Partition p;
  for (int d = 1; d * d <= m; ++d) {
    if (m % d == 0) p.rows = d;
  }
  p.cols = m / p.rows;

  const int n = g.num_nodes();
  std::vector<double> xs(n);
  for (NodeId s = 0; s < n; ++s) xs[s] = g.coord(s).x;
  const auto xcut = detail::quantile_thresholds(xs, p.cols);
  std::vector<int> col(n);
  std::vector<std::vector<double>> col_ys(p.cols);
  for (NodeId s = 0; s < n; ++s) {
    col[s] = detail::group_of(xcut, xs[s]);
    col_ys[col[s]].push_back(g.coord(s).y);
  }
  std::vector<std::vector<double>> ycut(p.cols);
  for (int c = 0; c < p.cols; ++c) {
    if (!col_ys[c].empty()) ycut[c] = detail::quantile_thresholds(col_ys[c], p.rows);
  }
  p.node_cell.resize(n);
  for (NodeId s = 0; s < n; ++s) p.node_cell[s] = col[s] * p.rows + detail::group_of(ycut[col[s]], g.coord(s).y);

  p.shards.resize(m);
  std::vector<NodeId> local(n, kNoNode);
  for (int c = 0; c < m; ++c) {
    Shard& sh = p.shards[c];
    sh.cell = c;
    std::fill(local.begin(), local.end(), kNoNode);
    for (NodeId s = 0; s < n; ++s) {
      if (p.node_cell[s] != c) continue;
      local[s] = static_cast<NodeId>(sh.node_to_global.size());
      sh.node_to_global.push_back(s);
    }
    sh.owned_nodes = static_cast<int>(sh.node_to_global.size());
    std::vector<NodeId> halo;
    for (EdgeId e = 0; e < g.num_edges(); ++e) {
      if (p.node_cell[g.edge_source(e)] != c) continue;
      sh.edge_to_global.push_back(e);
      const NodeId t = g.edge_target(e);
      if (p.node_cell[t] != c) halo.push_back(t);
    }
    std::sort(halo.begin(), halo.end());
    halo.erase(std::unique(halo.begin(), halo.end()), halo.end());
    for (NodeId t : halo) {
      local[t] = static_cast<NodeId>(sh.node_to_global.size());
      sh.node_to_global.push_back(t);
    }
    std::vector<NodeRecord> nodes;
    for (std::size_t i = 0; i < sh.node_to_global.size(); ++i) {
      nodes.push_back({static_cast<NodeId>(i), g.coord(sh.node_to_global[i])});
    }
    std::vector<EdgeRecord> edges;
    std::vector<EdgeId> edge_local(g.num_edges(), kNoEdge);
    for (std::size_t i = 0; i < sh.edge_to_global.size(); ++i) {
      const EdgeId e = sh.edge_to_global[i];
      auto f = g.features(e);
      edge_local[e] = static_cast<EdgeId>(i);
      edges.push_back({static_cast<EdgeId>(i), local[g.edge_source(e)], local[g.edge_target(e)], {f.begin(), f.end()},
                       g.is_connector(e)});
    }
    sh.graph = build_graph(std::move(nodes), std::move(edges));

    for (std::size_t d = 0; d < demos.size(); ++d) {
      const Trajectory& t = demos[d];
      if (p.node_cell[t.destination()] != c) continue;
      bool inside = true;
      std::vector<EdgeId> le;
      for (EdgeId e : t.edges) {
        if (edge_local[e] == kNoEdge) {
          inside = false;
          break;
        }
        le.push_back(edge_local[e]);
      }
      if (!inside) {
        p.dropped.push_back(d);
        continue;
      }
      sh.demos.push_back(Trajectory::from_edges(sh.graph, std::move(le)));
      sh.demo_index.push_back(d);
    }
  }
  std::sort(p.dropped.begin(), p.dropped.end());
  return p;
}

enum class OptimizerKind { SGD, Adam };

struct TrainConfig {
  IrlConfig irl;
  OptimizerKind optimizer = OptimizerKind::SGD;
  double learning_rate = 0.05;
  double beta1 = 0.99;
  double beta2 = 0.999;
  double epsilon = 1e-7;
  int warmup_steps = 100;
  int epochs = 1;
  int steps_per_epoch = 100;
  int batch_size = 8;
  double guard_margin = 0.05;
  int max_guard_trips = 20;  // consecutive reverted steps before stopping
  bool group_by_destination = false;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // epochs; 0 writes only the final epoch

  void validate() const {
    irl.validate();
    if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) throw ValidationError("learning rate must be >= 0");
    if (epochs < 0 || steps_per_epoch < 1 || batch_size < 1) {
      throw ValidationError("epochs, steps_per_epoch and batch_size must be positive");
    }
    if (warmup_steps < 0 || warmup_steps > std::max(1, epochs * steps_per_epoch)) {
      throw ValidationError("warmup steps must lie within the total step count");
    }
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1) || !(epsilon > 0)) {
      throw ValidationError("adaptive-moment coefficients out of range");
    }
    if (!(guard_margin >= 0 && guard_margin < 1)) throw ValidationError("guard_margin must lie in [0, 1)");
  }

  /// Linear warmup: (t / warmup) * lr for t <= warmup.
  double warmup_lr(int step) const {
    if (warmup_steps == 0 || step >= warmup_steps) return learning_rate;
    return learning_rate * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
};

struct StepRecord {
  int step = 0;
  int epoch = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
  double bound = 0.0;  // cheap eigenvalue bound of the model after the step
  double max_reward = 0.0;
  int used = 0;
  int skipped = 0;
  std::size_t ops = 0;  // planner slot evaluations for the batch
  bool accepted = true;
  double wall_ms = 0.0;
};

struct TrainHistory {
  std::vector<StepRecord> steps;
  int guard_trips = 0;
  int lr_halvings = 0;
  bool early_stopped = false;
  std::vector<std::string> checkpoints;
};

inline std::string format_history_csv(const TrainHistory& h) {
  std::string out = "step,epoch,loss,grad_norm,lr,bound,max_reward,used,skipped,ops,accepted,wall_ms\n";
  for (const auto& r : h.steps) {
    out += std::to_string(r.step) + ',' + std::to_string(r.epoch) + ',' + format_double(r.loss) + ',' +
           format_double(r.grad_norm) + ',' + format_double(r.lr) + ',' + format_double(r.bound) + ',' +
           format_double(r.max_reward) + ',' + std::to_string(r.used) + ',' + std::to_string(r.skipped) + ',' +
           std::to_string(r.ops) + ',' + (r.accepted ? "1" : "0") + ',' + format_double(r.wall_ms) + '\n';
  }
  return out;
}

struct TrainResult {
  RewardModel model;
  TrainHistory history;
};

inline bool guarded(const IrlConfig& cfg) {
  return cfg.stochastic_horizon() == kInfiniteHorizon;
}

/// Minibatch training of one expert. Each step samples a batch, averages the
/// per-sample gradients, applies the optimizer with linear warmup, projects to
/// non-positive rewards, and (for converged-policy algorithms) reverts any
/// step whose cheap eigenvalue bound reaches 1.
inline TrainResult train_expert(const RoadGraph& g, const std::vector<Trajectory>& demos, RewardModel model,
                                const TrainConfig& cfg, const std::string& checkpoint_dir = {}) {
  cfg.validate();
  model.check_compatible(g);
  const double inv_t = 1.0 / cfg.irl.temperature;
  const bool guard = guarded(cfg.irl);
  auto bound_of = [&](const RewardModel& m) {
    return cheap_bounds(g, edge_rewards(m, g).scaled(inv_t)).best();
  };
  if (guard && bound_of(model) >= 1.0) {
    throw InfeasibleError("initial model is not certified feasible (cheap eigenvalue bound >= 1)");
  }

  TrainResult out;
  std::vector<double> params = model.params();
  std::vector<double> m1(params.size(), 0.0), m2(params.size(), 0.0);
  Rng rng(cfg.seed);
  double lr_scale = 1.0;
  int adam_t = 0;
  int step = 0;
  int consecutive_trips = 0;
  std::vector<Trajectory> batch;
  auto save = [&](int epoch) {
    if (checkpoint_dir.empty()) return;
    std::filesystem::create_directories(checkpoint_dir);
    const std::string path = (std::filesystem::path(checkpoint_dir) / (std::to_string(epoch) + ".ckpt")).string();
    RewardModel snapshot = model;
    snapshot.temperature = cfg.irl.temperature;
    save_model(snapshot, path);
    out.history.checkpoints.push_back(path);
  };

  for (int epoch = 1; epoch <= cfg.epochs && !out.history.early_stopped; ++epoch) {
    for (int k = 0; k < cfg.steps_per_epoch; ++k) {
      const auto t0 = std::chrono::steady_clock::now();
      ++step;
      StepRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      rec.lr = cfg.warmup_lr(step) * lr_scale;
      batch.clear();
      if (!demos.empty()) {
        for (int b = 0; b < cfg.batch_size; ++b) batch.push_back(demos[rng.below(demos.size())]);
      }
      const BatchReport br = batch_gradient(g, model, batch, cfg.irl, cfg.group_by_destination);
      rec.loss = br.mean_loss;
      rec.used = br.used;
      rec.skipped = br.skipped;
      rec.ops = br.ops;
      double norm = 0.0;
      for (double x : br.gradient) norm += x * x;
      rec.grad_norm = std::sqrt(norm);

      if (br.used > 0 && rec.lr > 0.0) {
        std::vector<double> next = params;
        if (cfg.optimizer == OptimizerKind::SGD) {
          for (std::size_t i = 0; i < next.size(); ++i) next[i] -= rec.lr * br.gradient[i];
        } else {
          ++adam_t;
          const double c1 = 1.0 - std::pow(cfg.beta1, adam_t);
          const double c2 = 1.0 - std::pow(cfg.beta2, adam_t);
          for (std::size_t i = 0; i < next.size(); ++i) {
            const double gi = br.gradient[i];
            m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * gi;
            m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * gi * gi;
            next[i] -= rec.lr * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + cfg.epsilon);
          }
        }
        RewardModel candidate = model;
        candidate.set_params(next);
        candidate.project_nonpositive();
        const double bound = guard ? bound_of(candidate) : 0.0;
        if (guard && bound >= 1.0) {
          rec.accepted = false;
          rec.bound = bound;
          ++out.history.guard_trips;
          ++consecutive_trips;
          lr_scale *= 0.5;
          ++out.history.lr_halvings;
          if (consecutive_trips >= cfg.max_guard_trips) out.history.early_stopped = true;
        } else {
          consecutive_trips = 0;
          model = std::move(candidate);
          params = model.params();
          rec.bound = bound;
        }
      } else if (guard) {
        rec.bound = bound_of(model);
      }
      const RewardTable r = edge_rewards(model, g);
      rec.max_reward = r.values.empty() ? 0.0 : *std::max_element(r.values.begin(), r.values.end());
      rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      out.history.steps.push_back(rec);
      if (out.history.early_stopped) break;
    }
    // Soft guard: back off when the certified margin gets thin.
    if (guard && bound_of(model) > 1.0 - cfg.guard_margin) {
      lr_scale *= 0.5;
      ++out.history.lr_halvings;
    }
    const bool last = epoch == cfg.epochs || out.history.early_stopped;
    if ((cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) || last) save(epoch);
  }
  if (cfg.epochs == 0) save(0);
  out.model = std::move(model);
  return out;
}

/// Trains every shard's expert concurrently; results are in shard order.
inline std::vector<TrainResult> train_sharded(const Partition& part, const std::vector<RewardModel>& inits,
                                              const TrainConfig& cfg, const std::string& run_dir = {}) {
  if (inits.size() != part.shards.size()) throw ValidationError("need one initial model per shard");
  std::vector<std::future<TrainResult>> jobs;
  for (std::size_t i = 0; i < part.shards.size(); ++i) {
    TrainConfig shard_cfg = cfg;
    shard_cfg.seed = cfg.seed + i;
    const std::string dir =
        run_dir.empty() ? std::string() : (std::filesystem::path(run_dir) / std::to_string(i)).string();
    jobs.push_back(std::async(std::launch::async, [&part, &inits, shard_cfg, dir, i] {
      return train_expert(part.shards[i].graph, part.shards[i].demos, inits[i], shard_cfg, dir);
    }));
  }
  std::vector<TrainResult> out;
  for (auto& j : jobs) out.push_back(j.get());
  return out;
}

/// Global reward table: each edge is scored by the expert of its source
/// node's cell.
inline RewardTable assemble_global(const RoadGraph& g, const Partition& part, const std::vector<RewardModel>& models) {
  if (models.size() != part.shards.size()) throw ValidationError("need one model per shard");
  RewardTable out;
  out.values.assign(g.num_edges(), std::numeric_limits<double>::quiet_NaN());
  std::vector<int> seen(g.num_edges(), 0);
  for (std::size_t i = 0; i < part.shards.size(); ++i) {
    const Shard& sh = part.shards[i];
    const RewardTable local = edge_rewards(models[i], sh.graph);
    for (std::size_t le = 0; le < sh.edge_to_global.size(); ++le) {
      const EdgeId e = sh.edge_to_global[le];
      out.values[e] = local[static_cast<EdgeId>(le)];
      ++seen[e];
    }
  }
  for (EdgeId e = 0; e < g.num_edges(); ++e) {
    if (seen[e] != 1) throw ValidationError("edge " + std::to_string(e) + " is not covered exactly once");
  }
  return out;
}

/// The part of a model that transfers across graphs: everything except
/// per-edge parameters.
inline std::optional<RewardModel> transferable_part(const RewardModel& m) {
  switch (m.kind()) {
    case ModelKind::Linear:
    case ModelKind::DenseNet: return m;
    case ModelKind::SparsePerEdge: return std::nullopt;
    case ModelKind::Composite: {
      std::vector<RewardModel> keep;
      for (const auto& p : m.parts()) {
        if (p.kind() != ModelKind::SparsePerEdge) keep.push_back(p);
      }
      if (keep.empty()) return std::nullopt;
      if (keep.size() == 1) return keep.front();
      return RewardModel::composite(std::move(keep));
    }
  }
  return std::nullopt;
}

}  // namespace rhip
