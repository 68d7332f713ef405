#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "rhip/error.hpp"
#include "rhip/graph.hpp"
#include "rhip/irl.hpp"
#include "rhip/planners.hpp"
#include "rhip/reward_model.hpp"

namespace rhip {

enum class Feasibility { Feasible, Infeasible, Boundary };

inline std::string to_string(Feasibility f) {
  switch (f) {
    case Feasibility::Feasible: return "feasible";
    case Feasibility::Infeasible: return "infeasible";
    case Feasibility::Boundary: return "boundary";
  }
  return "?";
}

inline constexpr double kBoundaryBand = 1e-6;

struct CheapBounds {
  double row = 0.0;
  double col = 0.0;
  double best() const { return std::min(row, col); }
};

struct SpectralReport {
  double lambda_max = 0.0;
  // Collatz-Wielandt bracket of lambda_max from the last iterate.
  double lower = 0.0;
  double upper = 0.0;
  CheapBounds bounds;
  Feasibility classification = Feasibility::Feasible;
  int iterations = 0;
  bool converged = false;
  std::optional<double> lambda2_ratio;
};

inline Feasibility classify(double lambda, double band = kBoundaryBand) {
  if (std::abs(lambda - 1.0) <= band) return Feasibility::Boundary;
  return lambda < 1.0 ? Feasibility::Feasible : Feasibility::Infeasible;
}

/// Max row and column sums of B1 = exp(r) over non-destination nodes.
inline CheapBounds cheap_bounds(const GoalView& gv, const RewardTable& r) {
  const RoadGraph& g = gv.base();
  std::vector<double> rows(g.num_nodes(), 0.0), cols(g.num_nodes(), 0.0);
  for (EdgeId e = 0; e < g.num_edges(); ++e) {
    const NodeId s = g.edge_source(e), t = g.edge_target(e);
    if (s == gv.destination || t == gv.destination) continue;
    const double a = std::exp(r[e]);
    rows[s] += a;
    cols[t] += a;
  }
  CheapBounds b;
  for (NodeId s = 0; s < g.num_nodes(); ++s) {
    if (s == gv.destination) continue;
    b.row = std::max(b.row, rows[s]);
    b.col = std::max(b.col, cols[s]);
  }
  return b;
}

/// Destination-free bounds over the whole graph; they dominate the bounds of
/// every GoalView on it.
inline CheapBounds cheap_bounds(const RoadGraph& g, const RewardTable& r) {
  std::vector<double> rows(g.num_nodes(), 0.0), cols(g.num_nodes(), 0.0);
  for (EdgeId e = 0; e < g.num_edges(); ++e) {
    const double a = std::exp(r[e]);
    rows[g.edge_source(e)] += a;
    cols[g.edge_target(e)] += a;
  }
  CheapBounds b;
  for (NodeId s = 0; s < g.num_nodes(); ++s) {
    b.row = std::max(b.row, rows[s]);
    b.col = std::max(b.col, cols[s]);
  }
  return b;
}

/// Perron root of B1 by log-space power iteration on B1 + I (the shift
/// removes the +-lambda oscillation of bipartite graphs such as grids).
inline SpectralReport dominant_eigenvalue(const GoalView& gv, const RewardTable& r, double tol = 1e-12,
                                          double band = kBoundaryBand, int max_iters = 200000) {
  const RoadGraph& g = gv.base();
  check_rewards(g, r);
  const int n = g.num_nodes();
  SpectralReport rep;
  rep.bounds = cheap_bounds(gv, r);
  if (n <= 1) {
    rep.converged = true;
    rep.classification = classify(0.0, band);
    return rep;
  }
  std::vector<double> x(n, 0.0), y(n);
  x[gv.destination] = kNegInf;
  std::vector<double> terms;
  double estimate = 0.0;
  for (int it = 1; it <= max_iters; ++it) {
    double ymax = kNegInf;
    double lo = std::numeric_limits<double>::infinity();
    double hi = 0.0;
    for (NodeId s = 0; s < n; ++s) {
      if (s == gv.destination) {
        y[s] = kNegInf;
        continue;
      }
      terms.assign(1, x[s]);
      for (const Slot& slot : g.slots(s)) {
        if (slot.valid() && slot.target != gv.destination) terms.push_back(r[slot.edge] + x[slot.target]);
      }
      y[s] = detail::logsumexp(terms);
      const double ratio = std::exp(y[s] - x[s]);
      lo = std::min(lo, ratio);
      hi = std::max(hi, ratio);
      ymax = std::max(ymax, y[s]);
    }
    estimate = std::exp(ymax);  // x is normalized so that max(x) = 1
    for (NodeId s = 0; s < n; ++s) {
      if (s != gv.destination) y[s] -= ymax;
    }
    x.swap(y);
    rep.iterations = it;
    rep.lower = lo - 1.0;
    rep.upper = hi - 1.0;
    if (hi - lo < tol) {
      rep.converged = true;
      break;
    }
  }
  rep.lambda_max = std::clamp(estimate - 1.0, rep.lower, rep.upper);
  rep.lambda_max = std::max(rep.lambda_max, 0.0);
  rep.classification = classify(rep.lambda_max, band);
  return rep;
}

struct RateProbe {
  double ratio = 0.0;
  std::vector<double> errors;  // max-norm error of z^(k) against the fixed point
  int fit_points = 0;
};

/// Fits the geometric decay of the linear-space backward-pass error
/// ||z^(k) - z|| for z^(k) = A^k 1_{s_d}. The fitted rate estimates
/// |lambda2 / lambda1| with lambda1 = 1 in the feasible case.
inline RateProbe convergence_rate_probe(const GoalView& gv, const RewardTable& r, int iters) {
  const RoadGraph& g = gv.base();
  check_rewards(g, r);
  if (iters < 3) throw ValidationError("convergence_rate_probe needs at least 3 iterations");
  const SpectralReport spec = dominant_eigenvalue(gv, r);
  if (spec.classification != Feasibility::Feasible) throw InfeasibleError("backward pass does not converge; no rate to probe");
  // Fixed point from a direct solve of (I - B1) z1 = exp(r) into s_d.
  const int n = g.num_nodes();
  std::vector<int> index(n, -1);
  int m = 0;
  for (NodeId s = 0; s < n; ++s) {
    if (s != gv.destination) index[s] = m++;
  }
  std::vector<Eigen::Triplet<double>> triplets;
  Eigen::VectorXd b = Eigen::VectorXd::Zero(m);
  for (NodeId s = 0; s < n; ++s) {
    if (index[s] < 0) continue;
    triplets.emplace_back(index[s], index[s], 1.0);
    for (const Slot& slot : g.slots(s)) {
      if (!slot.valid()) continue;
      if (slot.target == gv.destination) {
        b[index[s]] += std::exp(r[slot.edge]);
      } else {
        triplets.emplace_back(index[s], index[slot.target], -std::exp(r[slot.edge]));
      }
    }
  }
  Eigen::SparseMatrix<double> a(m, m);
  a.setFromTriplets(triplets.begin(), triplets.end());
  Eigen::SparseLU<Eigen::SparseMatrix<double>> solver;
  solver.compute(a);
  if (solver.info() != Eigen::Success) throw InfeasibleError("fixed-point system is singular");
  const Eigen::VectorXd z1 = solver.solve(b);
  std::vector<double> z_star(n, 1.0);
  double scale = 1.0;
  for (NodeId s = 0; s < n; ++s) {
    if (index[s] < 0) continue;
    z_star[s] = z1[index[s]];
    scale = std::max(scale, std::abs(z_star[s]));
  }
  std::vector<double> z(n, 0.0), next(n);
  z[gv.destination] = 1.0;
  RateProbe probe;
  for (int k = 1; k <= iters; ++k) {
    for (NodeId s = 0; s < n; ++s) {
      if (s == gv.destination) {
        next[s] = 1.0;
        continue;
      }
      double acc = 0.0;
      for (const Slot& slot : g.slots(s)) {
        if (gv.active(s, slot)) acc += std::exp(r[slot.edge]) * z[slot.target];
      }
      next[s] = acc;
    }
    z.swap(next);
    double err = 0.0;
    for (NodeId s = 0; s < n; ++s) err = std::max(err, std::abs(z[s] - z_star[s]));
    probe.errors.push_back(err);
  }
  // A nilpotent B1 makes the series terminate: the error drops to the
  // rounding floor of the fixed point and the rate is 0.
  const double floor = 1e-12 * scale;
  std::vector<int> usable;
  for (int k = 0; k < iters; ++k) {
    if (probe.errors[k] > floor) usable.push_back(k);
  }
  if (usable.size() < 3 && probe.errors.back() <= floor) {
    probe.ratio = 0.0;
    return probe;
  }
  if (usable.size() < 3) throw ValidationError("too few iterations above the noise floor to fit a decay rate");
  // Least-squares slope of log error over the second half of the usable run.
  const std::size_t start = usable.size() / 2;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int pts = 0;
  for (std::size_t i = start; i < usable.size(); ++i) {
    const double kx = usable[i];
    const double ly = std::log(probe.errors[usable[i]]);
    sx += kx;
    sy += ly;
    sxx += kx * kx;
    sxy += kx * ly;
    ++pts;
  }
  if (pts < 2) throw ValidationError("too few iterations above the noise floor to fit a decay rate");
  const double slope = (pts * sxy - sx * sy) / (pts * sxx - sx * sx);
  probe.ratio = std::exp(slope);
  probe.fit_points = pts;
  return probe;
}

// ---------------------------------------------------------------------------
// The three-node example MDP: s1 = 0, s2 = 1, s_d = 2. Both out-edges of s1
// other than the exit cost theta1, both of s2 cost theta2, exits cost 1.

struct TwoStateMdp {
  RoadGraph graph;
  std::vector<Trajectory> demos;  // s1 -> s2 -> s_d and s2 -> s1 -> s_d
  static constexpr NodeId kDestination = 2;

  static RewardModel model(double theta1, double theta2) { return RewardModel::linear({-theta1, -theta2, -1.0}); }
};

inline TwoStateMdp two_state_mdp() {
  std::vector<NodeRecord> nodes{{0, {0, 0}}, {1, {1, 0}}, {2, {0.5, 1}}};
  std::vector<EdgeRecord> edges{
      {0, 0, 0, {1, 0, 0}, false}, {1, 0, 1, {1, 0, 0}, false}, {2, 1, 0, {0, 1, 0}, false},
      {3, 1, 1, {0, 1, 0}, false}, {4, 0, 2, {0, 0, 1}, false}, {5, 1, 2, {0, 0, 1}, false},
  };
  TwoStateMdp m;
  m.graph = build_graph(std::move(nodes), std::move(edges));
  m.demos.push_back(Trajectory::from_nodes(m.graph, {0, 1, 2}));
  m.demos.push_back(Trajectory::from_nodes(m.graph, {1, 0, 2}));
  return m;
}

struct ScanPoint {
  double theta1 = 0.0;
  double theta2 = 0.0;
  double lambda_max = 0.0;
  Feasibility classification = Feasibility::Feasible;
  double nll = 0.0;  // +inf unless feasible
};

/// Evaluates lambda_max and the mean MaxEnt NLL of the two demonstrations at
/// each grid point (steps x steps over [lo, hi]^2).
inline std::vector<ScanPoint> loss_surface_scan(int steps = 41, double lo = 0.0, double hi = 2.0) {
  if (steps < 2) throw ValidationError("scan needs at least 2 steps per axis");
  if (!(hi > lo)) throw ValidationError("scan range must be nonempty");
  const TwoStateMdp mdp = two_state_mdp();
  const GoalView gv(mdp.graph, TwoStateMdp::kDestination);
  std::vector<ScanPoint> out;
  out.reserve(static_cast<std::size_t>(steps) * steps);
  for (int i = 0; i < steps; ++i) {
    for (int j = 0; j < steps; ++j) {
      ScanPoint p;
      p.theta1 = lo + (hi - lo) * i / (steps - 1);
      p.theta2 = lo + (hi - lo) * j / (steps - 1);
      const RewardTable r = edge_rewards(TwoStateMdp::model(p.theta1, p.theta2), mdp.graph);
      const SpectralReport rep = dominant_eigenvalue(gv, r);
      p.lambda_max = rep.lambda_max;
      p.classification = rep.classification;
      p.nll = rep.classification == Feasibility::Feasible ? maxent_nll(mdp.graph, r, mdp.demos, 1.0, 10000000)
                                                          : std::numeric_limits<double>::infinity();
      out.push_back(p);
    }
  }
  return out;
}

inline std::string format_scan_csv(const std::vector<ScanPoint>& points) {
  std::string out = "theta1,theta2,lambda_max,nll\n";
  for (const auto& p : points) {
    out += format_double(p.theta1) + ',' + format_double(p.theta2) + ',' + format_double(p.lambda_max) + ',' +
           (std::isinf(p.nll) ? std::string("inf") : format_double(p.nll)) + '\n';
  }
  return out;
}

/// Midpoint-convexity violations of the feasible set on a square scan grid:
/// pairs of feasible points whose grid midpoint is not feasible.
inline long long convexity_violations(const std::vector<ScanPoint>& points, int steps) {
  auto feasible = [&](int i, int j) {
    return points[static_cast<std::size_t>(i) * steps + j].classification == Feasibility::Feasible;
  };
  std::vector<std::pair<int, int>> f;
  for (int i = 0; i < steps; ++i) {
    for (int j = 0; j < steps; ++j) {
      if (feasible(i, j)) f.emplace_back(i, j);
    }
  }
  long long bad = 0;
  for (std::size_t a = 0; a < f.size(); ++a) {
    for (std::size_t b = a + 1; b < f.size(); ++b) {
      const int si = f[a].first + f[b].first, sj = f[a].second + f[b].second;
      if (si % 2 != 0 || sj % 2 != 0) continue;
      if (!feasible(si / 2, sj / 2)) ++bad;
    }
  }
  return bad;
}

}  // namespace rhip
