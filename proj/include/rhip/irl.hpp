#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rhip/error.hpp"
#include "rhip/graph.hpp"
#include "rhip/planners.hpp"
#include "rhip/random.hpp"
#include "rhip/reward_model.hpp"

namespace rhip {

enum class Algorithm { RHIP, MaxEnt, MaxEntPP, BIRL, MMP };

inline std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::RHIP: return "rhip";
    case Algorithm::MaxEnt: return "maxent";
    case Algorithm::MaxEntPP: return "maxent++";
    case Algorithm::BIRL: return "birl";
    case Algorithm::MMP: return "mmp";
  }
  return "?";
}

inline Algorithm parse_algorithm(const std::string& s) {
  if (s == "rhip") return Algorithm::RHIP;
  if (s == "maxent") return Algorithm::MaxEnt;
  if (s == "maxent++" || s == "maxentpp") return Algorithm::MaxEntPP;
  if (s == "birl") return Algorithm::BIRL;
  if (s == "mmp") return Algorithm::MMP;
  throw ValidationError("unknown algorithm '" + s + "'");
}

inline constexpr int kInfiniteHorizon = -1;

struct IrlConfig {
  Algorithm algorithm = Algorithm::RHIP;
  int horizon = 10;  // RHIP only; kInfiniteHorizon means converged
  double temperature = 1.0;
  double margin = 0.0;      // added to off-demonstration edges in the planning reward
  double fixed_bias = 0.0;  // subtracted from every non-connector edge in the planning reward
  double value_tol = PlannerDefaults::kValueTol;
  int max_iters = 0;  // 0: 10*S
  double rollout_tol = PlannerDefaults::kRolloutTol;
  int max_steps = 0;  // 0: 10*S

  void validate() const {
    if (!(temperature > 0) || !std::isfinite(temperature)) throw ValidationError("temperature must be positive");
    if (horizon < 0 && horizon != kInfiniteHorizon) throw ValidationError("horizon must be >= 0 or infinite");
    if (!(margin >= 0) || !std::isfinite(margin)) throw ValidationError("margin must be finite and >= 0");
    if (!(fixed_bias >= 0) || !std::isfinite(fixed_bias)) throw ValidationError("fixed_bias must be finite and >= 0");
  }

  // Number of stochastic steps of the policy; kInfiniteHorizon for converged.
  int stochastic_horizon() const {
    switch (algorithm) {
      case Algorithm::RHIP: return horizon;
      case Algorithm::MaxEnt:
      case Algorithm::MaxEntPP: return kInfiniteHorizon;
      case Algorithm::BIRL: return 1;
      case Algorithm::MMP: return 0;
    }
    return 0;
  }
};

/// Per-sample result. `gradient` is the gradient of the loss being minimized,
/// i.e. sum_e (rho_theta - rho_*)(e) grad r(e) (scaled by 1/T for stochastic
/// policies) plus the regularizer; a descent step subtracts it.
struct GradientReport {
  std::vector<double> gradient;
  std::vector<double> residual;  // per-edge weights fed to backprop
  double nll = std::numeric_limits<double>::quiet_NaN();
  double loss = std::numeric_limits<double>::quiet_NaN();
  bool skipped = false;
  bool nonconvergent = false;
  bool truncated = false;
  bool unreachable = false;
  bool clamped = false;  // margin-augmented reward exceeded 0 and was clamped
  std::size_t ops = 0;
};

/// Planning state for one destination, shareable across demonstrations that
/// end there when no demonstration-dependent margin is in use.
struct DestinationPlan {
  NodeId destination = kNoNode;
  RewardTable scaled;  // planning reward divided by T
  ValueTable v0;       // highest-reward values under `scaled`
  Policy pi_d;
  Policy pi_s;  // empty for the deterministic algorithms
  int horizon = 0;
  int backups = 0;
  bool converged = true;
  bool clamped = false;
  std::size_t ops = 0;
};

namespace detail {

inline bool uses_margin(const IrlConfig& cfg) {
  return (cfg.algorithm == Algorithm::MMP || cfg.algorithm == Algorithm::RHIP) &&
         (cfg.margin != 0.0 || cfg.fixed_bias != 0.0);
}

inline double slot_prob(const RoadGraph& g, const Policy& pi, EdgeId e) {
  return pi.row(g.edge_source(e))[g.slot_of_edge(e)];
}

inline std::vector<double> path_indicator(const RoadGraph& g, const Trajectory& t) {
  std::vector<double> out(g.num_edges(), 0.0);
  for (EdgeId e : t.edges) out[e] += 1.0;
  return out;
}

}  // namespace detail

/// Planning reward for one demonstration: r + margin on off-demonstration
/// edges - fixed_bias, clamped to <= 0.
inline RewardTable augmented_rewards(const RoadGraph& g, const RewardTable& r, const Trajectory* demo,
                                     const IrlConfig& cfg, bool* clamped = nullptr) {
  RewardTable out = r;
  if (!detail::uses_margin(cfg)) return out;
  std::vector<std::uint8_t> on_demo(g.num_edges(), 0);
  if (demo) {
    for (EdgeId e : demo->edges) on_demo[e] = 1;
  }
  for (EdgeId e = 0; e < g.num_edges(); ++e) {
    if (g.is_connector(e)) continue;
    double v = r[e] - cfg.fixed_bias + (on_demo[e] ? 0.0 : cfg.margin);
    if (v > 0.0) {
      v = 0.0;
      if (clamped) *clamped = true;
    }
    out.values[e] = v;
  }
  return out;
}

/// Policy estimation for a destination: Dijkstra values, greedy tail, and the
/// stochastic policy after the configured number of soft backups.
inline DestinationPlan plan_destination(const RoadGraph& g, const RewardTable& planning_reward, NodeId destination,
                                        const IrlConfig& cfg) {
  cfg.validate();
  const GoalView gv(g, destination);
  DestinationPlan p;
  p.destination = destination;
  p.scaled = planning_reward.scaled(1.0 / cfg.temperature);
  p.v0 = dijkstra_values(gv, p.scaled);
  p.ops += static_cast<std::size_t>(g.num_edges());
  p.pi_d = greedy_policy(gv, p.scaled, p.v0);
  p.ops += g.padded_slot_count();
  p.horizon = cfg.stochastic_horizon();
  if (p.horizon == 0) return p;
  if (p.horizon == kInfiniteHorizon) {
    const ValueTable init = cfg.algorithm == Algorithm::MaxEnt ? one_hot_values(gv) : p.v0;
    const BackwardResult b = power_iteration_backward(gv, p.scaled, init, 1.0, cfg.value_tol, cfg.max_iters);
    p.backups = b.iters;
    p.converged = b.converged;
    p.ops += b.ops;
    p.pi_s = softmax_policy(gv, b.q);
  } else {
    const BackwardResult b = fixed_backups(gv, p.scaled, p.v0, p.horizon);
    p.backups = b.iters;
    p.ops += b.ops;
    p.pi_s = softmax_policy(gv, b.q);
  }
  return p;
}

namespace detail {

inline void finish(const RewardModel& model, const RoadGraph& g, const StateActionDistribution& rho_theta,
                   const StateActionDistribution& rho_star, double scale, GradientReport& rep) {
  rep.residual.assign(g.num_edges(), 0.0);
  for (EdgeId e = 0; e < g.num_edges(); ++e) rep.residual[e] = (rho_theta.mass[e] - rho_star.mass[e]) * scale;
  rep.gradient = backprop(model, g, rep.residual);
  rep.truncated = rep.truncated || rho_theta.truncated || rho_star.truncated;
  rep.ops += rho_theta.ops + rho_star.ops;
}

inline void withhold(const RewardModel& model, GradientReport& rep) {
  rep.skipped = true;
  rep.gradient.assign(model.num_params(), 0.0);
}

}  // namespace detail

/// Gradient for one demonstration given a plan for its destination. The
/// update direction follows the algorithm in `cfg`.
inline GradientReport gradient_from_plan(const RoadGraph& g, const RewardModel& model, const Trajectory& demo,
                                         const DestinationPlan& plan, const IrlConfig& cfg) {
  const GoalView gv(g, plan.destination);
  if (demo.destination() != plan.destination) throw ValidationError("plan destination does not match demonstration");
  GradientReport rep;
  rep.ops = plan.ops;
  rep.clamped = plan.clamped;
  for (NodeId s : demo.nodes) {
    if (plan.v0[s] == kNegInf) {
      rep.unreachable = true;
      detail::withhold(model, rep);
      return rep;
    }
  }
  if (!plan.converged) {
    rep.nonconvergent = true;
    detail::withhold(model, rep);
    return rep;
  }
  const int n = g.num_nodes();
  const std::span<const NodeId> states(demo.nodes.data(), demo.nodes.size() - 1);
  const std::vector<double> from_all = point_mass(n, states);
  const std::vector<double> from_second = point_mass(n, states.subspan(1));
  StateActionDistribution demo_sa;
  demo_sa.mass = detail::path_indicator(g, demo);
  const double inv_t = 1.0 / cfg.temperature;

  auto nll_of = [&](const Policy& pi) {
    double nll = 0.0;
    for (EdgeId e : demo.edges) nll -= std::log(detail::slot_prob(g, pi, e));
    return nll;
  };

  switch (cfg.algorithm) {
    case Algorithm::MaxEnt:
    case Algorithm::MaxEntPP: {
      const NodeId origin[] = {demo.origin()};
      const auto rho = rollout(plan.pi_s, point_mass(n, origin), gv, cfg.rollout_tol, cfg.max_steps);
      detail::finish(model, g, rho, demo_sa, inv_t, rep);
      rep.nll = nll_of(plan.pi_s);
      rep.loss = rep.nll + model.regularizer();
      return rep;
    }
    case Algorithm::BIRL: {
      // One softmax step over Q* from every demonstration state, then the
      // greedy tail; the comparison term follows the demonstration for one
      // step and then the greedy tail.
      StateActionDistribution rho_theta, rho_star;
      rho_theta.mass.assign(g.num_edges(), 0.0);
      std::vector<double> after_step(n, 0.0);
      for (NodeId s : states) {
        const auto slots = g.slots(s);
        const auto row = plan.pi_s.row(s);
        for (int k = 0; k < plan.pi_s.width; ++k) {
          if (row[k] == 0.0) continue;
          rho_theta.mass[slots[k].edge] += row[k];
          after_step[slots[k].target] += row[k];
        }
      }
      const auto tail_theta = rollout(plan.pi_d, after_step, gv);
      const auto tail_star = rollout(plan.pi_d, from_second, gv);
      for (EdgeId e = 0; e < g.num_edges(); ++e) rho_theta.mass[e] += tail_theta.mass[e];
      rho_theta.ops = g.padded_slot_count() + tail_theta.ops;
      rho_theta.truncated = tail_theta.truncated;
      rho_star = tail_star;
      for (EdgeId e = 0; e < g.num_edges(); ++e) rho_star.mass[e] += demo_sa.mass[e];
      detail::finish(model, g, rho_theta, rho_star, inv_t, rep);
      rep.nll = nll_of(plan.pi_s);
      rep.loss = rep.nll + model.regularizer();
      return rep;
    }
    case Algorithm::MMP: {
      const NodeId origin[] = {demo.origin()};
      const auto rho_sp = rollout(plan.pi_d, point_mass(n, origin), gv);
      detail::finish(model, g, rho_sp, demo_sa, 1.0, rep);
      // max over paths of the planning reward minus the demonstration's
      // reward under the same bias but without margin.
      double demo_reward = 0.0;
      for (EdgeId e : demo.edges) demo_reward += plan.scaled[e] * cfg.temperature;
      rep.loss = plan.v0[demo.origin()] * cfg.temperature - demo_reward + model.regularizer();
      return rep;
    }
    case Algorithm::RHIP: {
      const int h = plan.horizon;
      StateActionDistribution rho_theta, rho_star;
      double scale = inv_t;
      if (h == 0) {
        rho_theta = rollout(plan.pi_d, from_all, gv);
        rho_star = rollout(plan.pi_d, from_second, gv);
        scale = 1.0;
      } else if (h == kInfiniteHorizon) {
        rho_theta = rollout(plan.pi_s, from_all, gv, cfg.rollout_tol, cfg.max_steps);
        rho_star = rollout(plan.pi_s, from_second, gv, cfg.rollout_tol, cfg.max_steps);
      } else {
        rho_theta = rollout_receding(plan.pi_s, plan.pi_d, h, from_all, gv);
        rho_star = rollout_receding(plan.pi_s, plan.pi_d, h - 1, from_second, gv);
      }
      for (EdgeId e = 0; e < g.num_edges(); ++e) rho_star.mass[e] += demo_sa.mass[e];
      detail::finish(model, g, rho_theta, rho_star, scale, rep);
      // Diagnostic NLL: soft steps score their realized probability, the
      // greedy tail scores 0 or infinity.
      double nll = 0.0;
      for (std::size_t t = 0; t < demo.edges.size(); ++t) {
        const EdgeId e = demo.edges[t];
        const bool soft = h == kInfiniteHorizon || static_cast<int>(t) < h;
        const double p = detail::slot_prob(g, soft ? plan.pi_s : plan.pi_d, e);
        nll -= std::log(p);
      }
      rep.nll = nll;
      return rep;
    }
  }
  return rep;
}

/// Gradient for a single demonstration under `cfg.algorithm`.
inline GradientReport irl_gradient(const RoadGraph& g, const RewardModel& model, const Trajectory& demo,
                                   const IrlConfig& cfg) {
  cfg.validate();
  bool clamped = false;
  const RewardTable r = augmented_rewards(g, edge_rewards(model, g), &demo, cfg, &clamped);
  DestinationPlan plan = plan_destination(g, r, demo.destination(), cfg);
  plan.clamped = clamped;
  return gradient_from_plan(g, model, demo, plan, cfg);
}

inline GradientReport rhip_gradient(const RoadGraph& g, const RewardModel& model, const Trajectory& demo,
                                    IrlConfig cfg) {
  cfg.algorithm = Algorithm::RHIP;
  return irl_gradient(g, model, demo, cfg);
}

enum class InitMode { OneHot, Dijkstra };

inline GradientReport maxent_gradient(const RoadGraph& g, const RewardModel& model, const Trajectory& demo,
                                      IrlConfig cfg, InitMode init = InitMode::Dijkstra) {
  cfg.algorithm = init == InitMode::OneHot ? Algorithm::MaxEnt : Algorithm::MaxEntPP;
  return irl_gradient(g, model, demo, cfg);
}

inline GradientReport birl_gradient(const RoadGraph& g, const RewardModel& model, const Trajectory& demo,
                                    IrlConfig cfg) {
  cfg.algorithm = Algorithm::BIRL;
  return irl_gradient(g, model, demo, cfg);
}

inline GradientReport mmp_gradient(const RoadGraph& g, const RewardModel& model, const Trajectory& demo,
                                   IrlConfig cfg) {
  cfg.algorithm = Algorithm::MMP;
  return irl_gradient(g, model, demo, cfg);
}

struct BatchReport {
  std::vector<double> gradient;  // mean over used samples
  double mean_loss = 0.0;        // mean over used samples with a defined loss
  int used = 0;
  int skipped = 0;
  int truncated = 0;
  int clamped = 0;
  std::size_t ops = 0;
};

/// Mean gradient over a minibatch, accumulated in input order. With
/// `group_by_destination`, planning is shared among demonstrations with a
/// common destination (only when no demonstration-dependent margin is set).
inline BatchReport batch_gradient(const RoadGraph& g, const RewardModel& model, std::span<const Trajectory> demos,
                                  const IrlConfig& cfg, bool group_by_destination = false) {
  cfg.validate();
  BatchReport out;
  out.gradient.assign(model.num_params(), 0.0);
  const bool share = group_by_destination && !detail::uses_margin(cfg);
  const RewardTable base = edge_rewards(model, g);
  std::map<NodeId, DestinationPlan> cache;
  int with_loss = 0;
  for (const Trajectory& demo : demos) {
    GradientReport rep;
    if (share) {
      auto it = cache.find(demo.destination());
      if (it == cache.end()) it = cache.emplace(demo.destination(), plan_destination(g, base, demo.destination(), cfg)).first;
      rep = gradient_from_plan(g, model, demo, it->second, cfg);
    } else {
      bool clamped = false;
      DestinationPlan plan = plan_destination(g, augmented_rewards(g, base, &demo, cfg, &clamped), demo.destination(), cfg);
      plan.clamped = clamped;
      rep = gradient_from_plan(g, model, demo, plan, cfg);
    }
    out.ops += rep.ops;
    if (rep.truncated) ++out.truncated;
    if (rep.clamped) ++out.clamped;
    if (rep.skipped) {
      ++out.skipped;
      continue;
    }
    ++out.used;
    for (std::size_t i = 0; i < out.gradient.size(); ++i) out.gradient[i] += rep.gradient[i];
    if (std::isfinite(rep.loss)) {
      out.mean_loss += rep.loss;
      ++with_loss;
    }
  }
  if (out.used > 0) {
    for (double& x : out.gradient) x /= out.used;
  }
  out.mean_loss = with_loss > 0 ? out.mean_loss / with_loss : std::numeric_limits<double>::quiet_NaN();
  return out;
}

/// Mean MaxEnt NLL of demonstrations under a reward table, with the
/// converged policy per destination. Returns +inf when any destination's
/// backward pass does not converge.
inline double maxent_nll(const RoadGraph& g, const RewardTable& r, std::span<const Trajectory> demos,
                         double temperature = 1.0, int max_iters = 0, double tol = PlannerDefaults::kValueTol) {
  if (demos.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::map<NodeId, Policy> cache;
  const RewardTable scaled = r.scaled(1.0 / temperature);
  double total = 0.0;
  for (const Trajectory& demo : demos) {
    auto it = cache.find(demo.destination());
    if (it == cache.end()) {
      const GoalView gv(g, demo.destination());
      const BackwardResult b = power_iteration_backward(gv, scaled, dijkstra_values(gv, scaled), 1.0, tol, max_iters);
      if (!b.converged) return std::numeric_limits<double>::infinity();
      it = cache.emplace(demo.destination(), softmax_policy(gv, b.q)).first;
    }
    for (EdgeId e : demo.edges) total -= std::log(detail::slot_prob(g, it->second, e));
  }
  return total / static_cast<double>(demos.size());
}

/// Synthetic demonstrations from the converged MaxEnt policy of `true_model`.
/// Origin/destination pairs are uniform over reachable pairs; sampled paths
/// that revisit a node are rejected and redrawn.
inline std::vector<Trajectory> sample_demonstrations(const RoadGraph& g, const RewardModel& true_model, int n,
                                                     double temperature, std::uint64_t seed,
                                                     std::span<const NodeId> destinations = {}) {
  if (n < 0) throw ValidationError("sample count must be nonnegative");
  if (!(temperature > 0)) throw ValidationError("temperature must be positive");
  if (g.num_nodes() < 2) throw ValidationError("graph needs at least two nodes");
  const RewardTable scaled = edge_rewards(true_model, g).scaled(1.0 / temperature);
  struct Entry {
    Policy pi;
    ValueTable v0;
  };
  std::map<NodeId, Entry> cache;
  Rng rng(seed);
  std::vector<Trajectory> out;
  out.reserve(n);
  const int max_path = 4 * g.num_nodes();
  while (static_cast<int>(out.size()) < n) {
    const NodeId dest = destinations.empty() ? static_cast<NodeId>(rng.below(g.num_nodes()))
                                             : destinations[rng.below(destinations.size())];
    const NodeId origin = static_cast<NodeId>(rng.below(g.num_nodes()));
    if (origin == dest) continue;
    auto it = cache.find(dest);
    if (it == cache.end()) {
      const GoalView gv(g, dest);
      Entry entry;
      entry.v0 = dijkstra_values(gv, scaled);
      const BackwardResult b = power_iteration_backward(gv, scaled, entry.v0, 1.0);
      if (!b.converged) {
        throw InfeasibleError("sampling model has no convergent backward pass for destination " +
                              std::to_string(dest));
      }
      entry.pi = softmax_policy(gv, b.q);
      it = cache.emplace(dest, std::move(entry)).first;
    }
    const Entry& entry = it->second;
    if (entry.v0[origin] == kNegInf) continue;
    for (int attempt = 0; attempt < 100; ++attempt) {
      std::vector<EdgeId> edges;
      std::vector<std::uint8_t> seen(g.num_nodes(), 0);
      seen[origin] = 1;
      bool loop = false;
      NodeId s = origin;
      while (s != dest && static_cast<int>(edges.size()) < max_path) {
        const auto row = entry.pi.row(s);
        double u = rng.uniform();
        int pick = -1;
        for (int k = 0; k < entry.pi.width; ++k) {
          if (row[k] == 0.0) continue;
          pick = k;
          if (u < row[k]) break;
          u -= row[k];
        }
        edges.push_back(g.slots(s)[pick].edge);
        s = g.slots(s)[pick].target;
        if (seen[s]) {
          loop = true;
          break;
        }
        seen[s] = 1;
      }
      if (loop || s != dest) continue;
      out.push_back(Trajectory::from_edges(g, std::move(edges)));
      break;
    }
  }
  return out;
}

}  // namespace rhip
