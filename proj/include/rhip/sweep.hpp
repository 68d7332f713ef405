#pragma once

#include <string>
#include <vector>

#include "rhip/config.hpp"
#include "rhip/eval.hpp"
#include "rhip/io.hpp"
#include "rhip/training.hpp"

namespace rhip {

struct SweepRow {
  int horizon = 0;
  int steps = 0;
  double seconds = 0.0;
  double steps_per_sec = 0.0;
  double ops_per_step = 0.0;
  double acc = 0.0;
  double iou = 0.0;
};

/// Trains one RHIP model per horizon from the same start and reports the
/// training throughput next to held-out accuracy.
inline std::vector<SweepRow> horizon_sweep(const RoadGraph& g, const std::vector<Trajectory>& demos,
                                           const std::vector<Trajectory>& heldout, const TrainSetup& setup,
                                           const std::vector<int>& horizons) {
  if (horizons.empty()) throw ValidationError("horizon list is empty");
  std::vector<SweepRow> rows;
  for (int h : horizons) {
    TrainSetup s = setup;
    s.train.irl.algorithm = Algorithm::RHIP;
    s.train.irl.horizon = h;
    const RewardModel init = initial_model(s, g, s.train.seed);
    const TrainResult res = train_expert(g, demos, init, s.train);
    SweepRow row;
    row.horizon = h;
    row.steps = static_cast<int>(res.history.steps.size());
    double ops = 0.0;
    for (const auto& r : res.history.steps) {
      row.seconds += r.wall_ms / 1000.0;
      ops += static_cast<double>(r.ops);
    }
    row.steps_per_sec = row.seconds > 0 ? row.steps / row.seconds : 0.0;
    row.ops_per_step = row.steps > 0 ? ops / row.steps : 0.0;
    EvalOptions opt;
    opt.compute_nll = false;
    const Metrics m = evaluate(g, res.model, heldout.empty() ? demos : heldout, opt);
    row.acc = m.acc;
    row.iou = m.iou;
    rows.push_back(row);
  }
  return rows;
}

inline std::string format_sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "horizon,steps,seconds,steps_per_sec,ops_per_step,acc,iou\n";
  for (const auto& r : rows) {
    out += format_horizon(r.horizon) + ',' + std::to_string(r.steps) + ',' + format_double(r.seconds) + ',' +
           format_double(r.steps_per_sec) + ',' + format_double(r.ops_per_step) + ',' + format_double(r.acc) + ',' +
           format_double(r.iou) + '\n';
  }
  return out;
}

// Timing-free columns only; reproducible byte for byte.
inline std::string format_sweep_accuracy_csv(const std::vector<SweepRow>& rows) {
  std::string out = "horizon,ops_per_step,acc,iou\n";
  for (const auto& r : rows) {
    out += format_horizon(r.horizon) + ',' + format_double(r.ops_per_step) + ',' + format_double(r.acc) + ',' +
           format_double(r.iou) + '\n';
  }
  return out;
}

}  // namespace rhip
