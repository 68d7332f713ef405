#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "rhip/error.hpp"
#include "rhip/graph.hpp"
#include "rhip/io.hpp"
#include "rhip/reward_model.hpp"

namespace rhip {

/// Log-domain value per node.
struct ValueTable {
  std::vector<double> v;
  NodeId destination = kNoNode;
  // Hop count of the chosen highest-reward path; filled by dijkstra_values
  // and used for the greedy tie rule.
  std::vector<int> hops;

  double operator[](NodeId s) const { return v[s]; }
};

/// Q per padded slot (node-major, V slots per node); -inf where inactive.
struct QTable {
  std::vector<double> q;
  int width = 0;

  std::span<const double> row(NodeId s) const {
    return {q.data() + static_cast<std::size_t>(s) * width, static_cast<std::size_t>(width)};
  }
};

/// Action probabilities per padded slot. The destination row is all zero:
/// the destination absorbs mass without taking an edge.
struct Policy {
  std::vector<double> prob;
  int width = 0;
  NodeId destination = kNoNode;
  bool deterministic = false;
  // Non-destination nodes with no finite Q (destination unreachable).
  std::vector<std::uint8_t> dead;
  int dead_rows = 0;

  std::span<const double> row(NodeId s) const {
    return {prob.data() + static_cast<std::size_t>(s) * width, static_cast<std::size_t>(width)};
  }
};

/// Expected visitation mass per edge id.
struct StateActionDistribution {
  std::vector<double> mass;
  int steps = 0;
  double residual = 0.0;      // un-absorbed mass left at termination
  double dropped = 0.0;       // mass that hit a dead row
  bool truncated = false;     // residual >= tol at max_steps
  std::size_t ops = 0;        // slot evaluations performed

  double total() const {
    double s = 0.0;
    for (double m : mass) s += m;
    return s;
  }
};

struct PlannerDefaults {
  static constexpr double kValueTol = 1e-9;
  static constexpr double kRolloutTol = 1e-12;
  static int max_iters(const RoadGraph& g) { return 10 * std::max(1, g.num_nodes()); }
};

inline void check_rewards(const RoadGraph& g, const RewardTable& r) {
  if (r.size() != static_cast<std::size_t>(g.num_edges())) {
    throw ValidationError("reward table has " + std::to_string(r.size()) + " entries, graph has " +
                          std::to_string(g.num_edges()) + " edges");
  }
  for (std::size_t e = 0; e < r.size(); ++e) {
    if (!(r.values[e] <= 0.0) || std::isinf(r.values[e])) {
      throw ValidationError("edge " + std::to_string(e) + " reward must be finite and <= 0");
    }
  }
}

inline ValueTable one_hot_values(const GoalView& gv) {
  ValueTable out;
  out.destination = gv.destination;
  out.v.assign(gv.num_nodes(), kNegInf);
  out.v[gv.destination] = 0.0;
  return out;
}

/// Highest-reward value to the destination, by reverse Dijkstra on costs -r.
/// Ties on value prefer fewer hops.
inline ValueTable dijkstra_values(const GoalView& gv, const RewardTable& r) {
  const RoadGraph& g = gv.base();
  check_rewards(g, r);
  const int n = g.num_nodes();
  ValueTable out;
  out.destination = gv.destination;
  out.v.assign(n, kNegInf);
  out.hops.assign(n, std::numeric_limits<int>::max());
  out.v[gv.destination] = 0.0;
  out.hops[gv.destination] = 0;

  using Item = std::tuple<double, int, NodeId>;  // (-value, hops, node): min-heap order
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  std::vector<std::uint8_t> done(n, 0);
  heap.emplace(0.0, 0, gv.destination);
  while (!heap.empty()) {
    auto [negv, h, s] = heap.top();
    heap.pop();
    if (done[s]) continue;
    done[s] = 1;
    for (EdgeId e : g.in_edges(s)) {
      const NodeId u = g.edge_source(e);
      if (u == gv.destination || done[u]) continue;
      const double cand = r[e] + out.v[s];
      if (cand > out.v[u] || (cand == out.v[u] && h + 1 < out.hops[u])) {
        out.v[u] = cand;
        out.hops[u] = h + 1;
        heap.emplace(-cand, h + 1, u);
      }
    }
  }
  return out;
}

/// One-hot argmax of r(s,a) + v0(s'). Among tied slots the smallest successor
/// id wins (then edge id); a tied successor with the same value as s is only
/// eligible if it is closer in hops, so zero-reward plateaus cannot cycle.
inline Policy greedy_policy(const GoalView& gv, const RewardTable& r, const ValueTable& v0) {
  const RoadGraph& g = gv.base();
  const int n = g.num_nodes();
  const int width = g.max_out_degree();
  Policy pi;
  pi.width = width;
  pi.destination = gv.destination;
  pi.deterministic = true;
  pi.prob.assign(static_cast<std::size_t>(n) * width, 0.0);
  pi.dead.assign(n, 0);
  const bool have_hops = v0.hops.size() == static_cast<std::size_t>(n);
  for (NodeId s = 0; s < n; ++s) {
    if (s == gv.destination) continue;
    const auto slots = g.slots(s);
    double best = kNegInf;
    for (const Slot& slot : slots) {
      if (!gv.active(s, slot)) continue;
      best = std::max(best, r[slot.edge] + v0[slot.target]);
    }
    int chosen = -1;
    if (best > kNegInf) {
      for (int k = 0; k < width; ++k) {
        const Slot& slot = slots[k];
        if (!gv.active(s, slot) || r[slot.edge] + v0[slot.target] != best) continue;
        if (have_hops && !(v0[slot.target] > v0[s]) && v0.hops[slot.target] >= v0.hops[s]) continue;
        chosen = k;
        break;
      }
    }
    if (chosen < 0) {
      pi.dead[s] = 1;
      ++pi.dead_rows;
      continue;
    }
    pi.prob[static_cast<std::size_t>(s) * width + chosen] = 1.0;
  }
  return pi;
}

namespace detail {

inline double logsumexp(std::span<const double> xs) {
  double m = kNegInf;
  for (double x : xs) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  if (std::isinf(m)) return m;
  double s = 0.0;
  for (double x : xs) {
    if (x != kNegInf) s += std::exp(x - m);
  }
  return m + std::log(s);
}

// Writes Q = r/T + v_prev(s') and v = logsumexp(Q) into preallocated buffers.
inline void backup_into(const GoalView& gv, const RewardTable& r, double inv_t, const std::vector<double>& v_prev,
                        std::vector<double>& q, std::vector<double>& v) {
  const RoadGraph& g = gv.base();
  const int n = g.num_nodes();
  const int width = g.max_out_degree();
  for (NodeId s = 0; s < n; ++s) {
    const auto slots = g.slots(s);
    double* qrow = q.data() + static_cast<std::size_t>(s) * width;
    for (int k = 0; k < width; ++k) {
      const Slot& slot = slots[k];
      qrow[k] = gv.active(s, slot) ? r[slot.edge] * inv_t + v_prev[slot.target] : kNegInf;
    }
    v[s] = s == gv.destination ? 0.0 : logsumexp({qrow, static_cast<std::size_t>(width)});
  }
}

inline double max_change(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i]) continue;  // also covers -inf == -inf
    d = std::max(d, std::abs(a[i] - b[i]));
    if (std::isnan(d)) return std::numeric_limits<double>::infinity();
  }
  return d;
}

}  // namespace detail

/// One log-space soft backup at temperature T.
inline std::pair<QTable, ValueTable> softmax_backup(const GoalView& gv, const RewardTable& r, const ValueTable& v_prev,
                                                    double temperature = 1.0) {
  if (!(temperature > 0)) throw ValidationError("temperature must be positive");
  const RoadGraph& g = gv.base();
  QTable q;
  q.width = g.max_out_degree();
  q.q.assign(g.padded_slot_count(), kNegInf);
  ValueTable v;
  v.destination = gv.destination;
  v.v.assign(g.num_nodes(), kNegInf);
  detail::backup_into(gv, r, 1.0 / temperature, v_prev.v, q.q, v.v);
  return {std::move(q), std::move(v)};
}

struct BackwardResult {
  ValueTable values;
  QTable q;  // Q of the last backup, consistent with the returned policy
  int iters = 0;
  bool converged = false;
  std::size_t ops = 0;
};

/// Repeats soft backups until the max-norm change in v drops below tol.
/// `max_iters` <= 0 selects the default 10*S.
inline BackwardResult power_iteration_backward(const GoalView& gv, const RewardTable& r, const ValueTable& init,
                                               double temperature = 1.0, double tol = PlannerDefaults::kValueTol,
                                               int max_iters = 0) {
  if (!(temperature > 0)) throw ValidationError("temperature must be positive");
  const RoadGraph& g = gv.base();
  if (max_iters <= 0) max_iters = PlannerDefaults::max_iters(g);
  BackwardResult out;
  out.q.width = g.max_out_degree();
  out.q.q.assign(g.padded_slot_count(), kNegInf);
  std::vector<double> v = init.v;
  std::vector<double> next(v.size());
  v[gv.destination] = 0.0;
  for (int it = 1; it <= max_iters; ++it) {
    detail::backup_into(gv, r, 1.0 / temperature, v, out.q.q, next);
    out.ops += g.padded_slot_count();
    const double delta = detail::max_change(v, next);
    v.swap(next);
    out.iters = it;
    if (delta < tol) {
      out.converged = true;
      break;
    }
  }
  out.values.v = std::move(v);
  out.values.destination = gv.destination;
  return out;
}

/// Exactly `h` soft backups from `init`, no convergence test. h = 0 returns
/// init and an empty Q.
inline BackwardResult fixed_backups(const GoalView& gv, const RewardTable& r, const ValueTable& init, int h,
                                    double temperature = 1.0) {
  const RoadGraph& g = gv.base();
  BackwardResult out;
  out.q.width = g.max_out_degree();
  out.q.q.assign(g.padded_slot_count(), kNegInf);
  std::vector<double> v = init.v;
  std::vector<double> next(v.size());
  for (int it = 0; it < h; ++it) {
    detail::backup_into(gv, r, 1.0 / temperature, v, out.q.q, next);
    out.ops += g.padded_slot_count();
    v.swap(next);
  }
  out.iters = h;
  out.values.v = std::move(v);
  out.values.destination = gv.destination;
  return out;
}

/// Softmax over each row of Q.
inline Policy softmax_policy(const GoalView& gv, const QTable& q) {
  const int n = gv.num_nodes();
  Policy pi;
  pi.width = q.width;
  pi.destination = gv.destination;
  pi.prob.assign(q.q.size(), 0.0);
  pi.dead.assign(n, 0);
  for (NodeId s = 0; s < n; ++s) {
    if (s == gv.destination) continue;
    const auto row = q.row(s);
    const double lse = detail::logsumexp(row);
    if (!(lse > kNegInf) || !std::isfinite(lse)) {
      pi.dead[s] = 1;
      ++pi.dead_rows;
      continue;
    }
    double* out = pi.prob.data() + static_cast<std::size_t>(s) * q.width;
    for (int k = 0; k < q.width; ++k) out[k] = row[k] == kNegInf ? 0.0 : std::exp(row[k] - lse);
  }
  return pi;
}

namespace detail {

// Pushes `mass` one step through `pi`; returns mass left outside the
// destination. Edge visitation is accumulated into `edge_mass`.
inline double push_step(const GoalView& gv, const Policy& pi, const std::vector<double>& mass,
                        std::vector<double>& next, std::vector<double>& edge_mass, double& dropped,
                        std::size_t& ops) {
  const RoadGraph& g = gv.base();
  std::fill(next.begin(), next.end(), 0.0);
  for (NodeId s = 0; s < g.num_nodes(); ++s) {
    const double m = mass[s];
    if (m == 0.0 || s == gv.destination) continue;
    if (pi.dead[s]) {
      dropped += m;
      continue;
    }
    const auto slots = g.slots(s);
    const auto row = pi.row(s);
    for (int k = 0; k < pi.width; ++k) {
      if (row[k] == 0.0) continue;
      const double f = m * row[k];
      edge_mass[slots[k].edge] += f;
      next[slots[k].target] += f;
    }
  }
  ops += g.padded_slot_count();
  double residual = 0.0;
  for (NodeId s = 0; s < g.num_nodes(); ++s) {
    if (s != gv.destination) residual += next[s];
  }
  return residual;
}

// Exact propagation under a one-hot policy: nodes are processed farthest
// first along the policy's successor tree.
inline void deterministic_flow(const GoalView& gv, const Policy& pi, std::vector<double> mass,
                               std::vector<double>& edge_mass, double& dropped, bool& cyclic, std::size_t& ops) {
  const RoadGraph& g = gv.base();
  const int n = g.num_nodes();
  std::vector<int> choice(n, -1);
  for (NodeId s = 0; s < n; ++s) {
    if (s == gv.destination || pi.dead[s]) continue;
    const auto row = pi.row(s);
    for (int k = 0; k < pi.width; ++k) {
      if (row[k] > 0.0) {
        choice[s] = k;
        break;
      }
    }
  }
  // depth: hops to the destination or to a dead row; -2 while visiting.
  std::vector<int> depth(n, -1);
  std::vector<NodeId> stack;
  for (NodeId s0 = 0; s0 < n; ++s0) {
    if (depth[s0] >= 0) continue;
    NodeId s = s0;
    stack.clear();
    while (depth[s] == -1) {
      depth[s] = -2;
      stack.push_back(s);
      if (choice[s] < 0) break;
      s = g.slots(s)[choice[s]].target;
    }
    int base = 0;
    if (depth[s] >= 0) {
      base = depth[s] + 1;
    } else if (choice[s] >= 0) {
      // s is on the current stack: a cycle. Cut it by treating s as dead.
      cyclic = true;
      choice[s] = -1;
    }
    for (auto it = stack.rbegin(); it != stack.rend(); ++it) {
      if (choice[*it] < 0) {
        depth[*it] = 0;
        base = 1;
      } else {
        depth[*it] = base++;
      }
    }
  }
  std::vector<NodeId> order(n);
  for (NodeId s = 0; s < n; ++s) order[s] = s;
  std::stable_sort(order.begin(), order.end(), [&](NodeId a, NodeId b) { return depth[a] > depth[b]; });
  for (NodeId s : order) {
    const double m = mass[s];
    if (m == 0.0 || s == gv.destination) continue;
    if (choice[s] < 0) {
      dropped += m;
      continue;
    }
    const Slot& slot = g.slots(s)[choice[s]];
    edge_mass[slot.edge] += m;
    mass[slot.target] += m;
  }
  ops += static_cast<std::size_t>(n);
}

inline void check_initial(const GoalView& gv, std::span<const double> initial) {
  if (initial.size() != static_cast<std::size_t>(gv.num_nodes())) {
    throw ValidationError("initial mass must have one entry per node");
  }
  for (double m : initial) {
    if (!(m >= 0.0) || std::isinf(m)) throw ValidationError("initial mass must be finite and nonnegative");
  }
}

}  // namespace detail

/// Propagates initial node mass through `pi` until the un-absorbed mass falls
/// below tol. One-hot policies are propagated exactly.
inline StateActionDistribution rollout(const Policy& pi, std::span<const double> initial, const GoalView& gv,
                                       double tol = PlannerDefaults::kRolloutTol, int max_steps = 0) {
  detail::check_initial(gv, initial);
  const RoadGraph& g = gv.base();
  if (max_steps <= 0) max_steps = PlannerDefaults::max_iters(g);
  StateActionDistribution out;
  out.mass.assign(g.num_edges(), 0.0);
  if (pi.deterministic) {
    bool cyclic = false;
    detail::deterministic_flow(gv, pi, {initial.begin(), initial.end()}, out.mass, out.dropped, cyclic, out.ops);
    out.truncated = cyclic;
    return out;
  }
  std::vector<double> mass(initial.begin(), initial.end());
  std::vector<double> next(mass.size());
  double residual = 0.0;
  for (NodeId s = 0; s < g.num_nodes(); ++s) {
    if (s != gv.destination) residual += mass[s];
  }
  while (residual >= tol && out.steps < max_steps) {
    residual = detail::push_step(gv, pi, mass, next, out.mass, out.dropped, out.ops);
    mass.swap(next);
    ++out.steps;
  }
  out.residual = residual;
  out.truncated = residual >= tol;
  return out;
}

/// Rollout of [pi_s x h, pi_d x inf]: h stochastic steps, then the remaining
/// mass follows the one-hot policy exactly.
inline StateActionDistribution rollout_receding(const Policy& pi_s, const Policy& pi_d, int h,
                                                std::span<const double> initial, const GoalView& gv) {
  detail::check_initial(gv, initial);
  const RoadGraph& g = gv.base();
  StateActionDistribution out;
  out.mass.assign(g.num_edges(), 0.0);
  std::vector<double> mass(initial.begin(), initial.end());
  std::vector<double> next(mass.size());
  for (int step = 0; step < h; ++step) {
    const double residual = detail::push_step(gv, pi_s, mass, next, out.mass, out.dropped, out.ops);
    mass.swap(next);
    ++out.steps;
    if (residual == 0.0) break;
  }
  bool cyclic = false;
  detail::deterministic_flow(gv, pi_d, std::move(mass), out.mass, out.dropped, cyclic, out.ops);
  out.truncated = cyclic;
  return out;
}

/// Visitation via the fundamental matrix: solves (I - P1^T) z = initial over
/// the nodes reachable from the initial mass, then rho(s,a) = z(s) pi(a|s).
/// Throws InfeasibleError when some reachable node cannot reach the
/// destination under `pi` (the system is singular).
inline StateActionDistribution closed_form_forward(const Policy& pi, std::span<const double> initial,
                                                   const GoalView& gv) {
  detail::check_initial(gv, initial);
  const RoadGraph& g = gv.base();
  const int n = g.num_nodes();

  // Forward reachability through positive-probability actions.
  std::vector<std::uint8_t> reach(n, 0);
  std::vector<NodeId> stack;
  for (NodeId s = 0; s < n; ++s) {
    if (initial[s] > 0 && s != gv.destination) {
      reach[s] = 1;
      stack.push_back(s);
    }
  }
  while (!stack.empty()) {
    const NodeId s = stack.back();
    stack.pop_back();
    if (pi.dead[s]) continue;
    const auto slots = g.slots(s);
    const auto row = pi.row(s);
    for (int k = 0; k < pi.width; ++k) {
      const NodeId t = slots[k].target;
      if (row[k] > 0 && t != gv.destination && !reach[t]) {
        reach[t] = 1;
        stack.push_back(t);
      }
    }
  }
  // Backward reachability of the destination through the same actions.
  std::vector<std::uint8_t> exits(n, 0);
  exits[gv.destination] = 1;
  stack.assign(1, gv.destination);
  while (!stack.empty()) {
    const NodeId t = stack.back();
    stack.pop_back();
    for (EdgeId e : g.in_edges(t)) {
      const NodeId s = g.edge_source(e);
      if (exits[s] || s == gv.destination || pi.dead[s]) continue;
      if (pi.row(s)[g.slot_of_edge(e)] > 0) {
        exits[s] = 1;
        stack.push_back(s);
      }
    }
  }
  std::vector<int> index(n, -1);
  int m = 0;
  for (NodeId s = 0; s < n; ++s) {
    if (!reach[s]) continue;
    if (!exits[s]) {
      throw InfeasibleError("closed-form forward pass is singular: node " + std::to_string(s) +
                            " never reaches the destination");
    }
    index[s] = m++;
  }

  StateActionDistribution out;
  out.mass.assign(g.num_edges(), 0.0);
  if (m == 0) return out;

  std::vector<Eigen::Triplet<double>> triplets;
  Eigen::VectorXd b(m);
  for (NodeId s = 0; s < n; ++s) {
    if (index[s] < 0) continue;
    b[index[s]] = initial[s];
    triplets.emplace_back(index[s], index[s], 1.0);
    const auto slots = g.slots(s);
    const auto row = pi.row(s);
    for (int k = 0; k < pi.width; ++k) {
      if (row[k] > 0 && index[slots[k].target] >= 0) {
        triplets.emplace_back(index[slots[k].target], index[s], -row[k]);
      }
    }
  }
  Eigen::SparseMatrix<double> a(m, m);
  a.setFromTriplets(triplets.begin(), triplets.end());
  Eigen::SparseLU<Eigen::SparseMatrix<double>> solver;
  solver.compute(a);
  if (solver.info() != Eigen::Success) throw InfeasibleError("closed-form forward pass is singular");
  const Eigen::VectorXd z = solver.solve(b);
  if (solver.info() != Eigen::Success) throw InfeasibleError("closed-form forward solve failed");
  for (NodeId s = 0; s < n; ++s) {
    if (index[s] < 0) continue;
    const auto slots = g.slots(s);
    const auto row = pi.row(s);
    for (int k = 0; k < pi.width; ++k) {
      if (row[k] > 0) out.mass[slots[k].edge] += z[index[s]] * row[k];
    }
  }
  out.ops = static_cast<std::size_t>(triplets.size());
  return out;
}

struct LinearBackwardResult {
  std::vector<double> z;  // exp(v) in linear space
  int iters = 0;
  bool converged = false;
  int invalid_rows = 0;  // reachable nodes whose policy row is 0/0 or non-finite
};

/// The naive linear-space backward pass z <- exp(r/T) z with z(s_d) = 1,
/// kept as a diagnostic to show why the log-space form is needed.
inline LinearBackwardResult linear_space_backward(const GoalView& gv, const RewardTable& r, double temperature = 1.0,
                                                  double tol = PlannerDefaults::kValueTol, int max_iters = 0) {
  const RoadGraph& g = gv.base();
  if (max_iters <= 0) max_iters = PlannerDefaults::max_iters(g);
  const int n = g.num_nodes();
  LinearBackwardResult out;
  std::vector<double> z(n, 0.0), next(n);
  z[gv.destination] = 1.0;
  for (int it = 1; it <= max_iters; ++it) {
    for (NodeId s = 0; s < n; ++s) {
      if (s == gv.destination) {
        next[s] = 1.0;
        continue;
      }
      double acc = 0.0;
      for (const Slot& slot : g.slots(s)) {
        if (gv.active(s, slot)) acc += std::exp(r[slot.edge] / temperature) * z[slot.target];
      }
      next[s] = acc;
    }
    double delta = 0.0;
    for (NodeId s = 0; s < n; ++s) delta = std::max(delta, std::abs(next[s] - z[s]));
    z.swap(next);
    out.iters = it;
    if (delta < tol) {
      out.converged = true;
      break;
    }
  }
  // A node that can reach the destination needs a positive finite partition.
  const ValueTable reach = dijkstra_values(gv, r);
  for (NodeId s = 0; s < n; ++s) {
    if (s == gv.destination || reach[s] == kNegInf) continue;
    if (!(z[s] > 0.0) || !std::isfinite(z[s])) ++out.invalid_rows;
  }
  out.z = std::move(z);
  return out;
}

/// Unit mass at each listed node.
inline std::vector<double> point_mass(int num_nodes, std::span<const NodeId> nodes) {
  std::vector<double> m(num_nodes, 0.0);
  for (NodeId s : nodes) m[s] += 1.0;
  return m;
}

/// `<id> <value>` lines for golden-file dumps.
inline std::string format_dump(std::span<const double> values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += std::to_string(i) + ' ' + format_double(values[i]) + '\n';
  return out;
}

}  // namespace rhip
