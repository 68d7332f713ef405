#pragma once

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rhip/error.hpp"
#include "rhip/io.hpp"
#include "rhip/irl.hpp"
#include "rhip/random.hpp"
#include "rhip/reward_model.hpp"
#include "rhip/training.hpp"

namespace rhip {

using KeyValues = std::map<std::string, std::string>;

/// Flat `key = value` text; `#` starts a comment. Duplicate keys are an error.
inline KeyValues parse_key_values(const std::string& text) {
  KeyValues out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ValidationError("config line " + std::to_string(lineno) + ": empty key or value");
    }
    if (!out.emplace(key, value).second) throw ValidationError("config key repeated: " + key);
  }
  return out;
}

inline int parse_horizon(const std::string& s) {
  if (s == "inf" || s == "infinity") return kInfiniteHorizon;
  const long long h = detail::parse_id(s, "horizon");
  return static_cast<int>(h);
}

inline std::string format_horizon(int h) { return h == kInfiniteHorizon ? "inf" : std::to_string(h); }

inline std::vector<double> parse_real_list(const std::string& s, const std::string& where) {
  std::vector<double> out;
  std::string tok;
  std::istringstream in(s);
  while (std::getline(in, tok, ',')) out.push_back(detail::parse_real(tok, where));
  if (out.empty()) throw ValidationError(where + ": empty list");
  return out;
}

/// Everything `train` needs beyond the graph and demos.
struct TrainSetup {
  TrainConfig train;
  ModelKind model = ModelKind::Linear;
  DenseArch arch;
  double l1 = 1e-7;  // per-edge parameters only
  double init_noise = 0.02;
  std::vector<double> baseline_theta;  // empty: -1 per feature
  int shards = 1;
  int max_out_degree = 0;  // 0: no check
  double heldout_fraction = 0.0;
  bool optimizer_set = false;
  bool lr_set = false;

  /// Resolved values as key/value pairs, for the run manifest.
  KeyValues resolved() const {
    KeyValues kv;
    const IrlConfig& c = train.irl;
    kv["algorithm"] = to_string(c.algorithm);
    kv["horizon"] = format_horizon(c.horizon);
    kv["softmax_temperature"] = format_double(c.temperature);
    kv["margin"] = format_double(c.margin);
    kv["fixed_bias"] = format_double(c.fixed_bias);
    kv["model"] = to_string(model);
    kv["hidden_layer_width"] = std::to_string(arch.width);
    kv["hidden_layer_depth"] = std::to_string(arch.depth);
    kv["l1_regularization"] = format_double(l1);
    kv["initialization_noise"] = format_double(init_noise);
    std::string theta;
    for (double t : baseline_theta) theta += (theta.empty() ? "" : ",") + format_double(t);
    kv["baseline_theta"] = theta.empty() ? "default" : theta;
    kv["optimizer"] = train.optimizer == OptimizerKind::SGD ? "sgd" : "adam";
    kv["learning_rate"] = format_double(train.learning_rate);
    kv["adam_beta1"] = format_double(train.beta1);
    kv["adam_beta2"] = format_double(train.beta2);
    kv["adam_epsilon"] = format_double(train.epsilon);
    kv["lr_warmup_steps"] = std::to_string(train.warmup_steps);
    kv["steps_per_epoch"] = std::to_string(train.steps_per_epoch);
    kv["batch_size"] = std::to_string(train.batch_size);
    kv["epochs"] = std::to_string(train.epochs);
    kv["guard_margin"] = format_double(train.guard_margin);
    kv["group_by_destination"] = train.group_by_destination ? "true" : "false";
    kv["checkpoint_every"] = std::to_string(train.checkpoint_every);
    kv["seed"] = std::to_string(train.seed);
    kv["shards"] = std::to_string(shards);
    kv["max_out_degree"] = std::to_string(max_out_degree);
    kv["heldout_fraction"] = format_double(heldout_fraction);
    kv["value_tol"] = format_double(c.value_tol);
    kv["max_iters"] = std::to_string(c.max_iters);
    return kv;
  }

  /// Optimizer pairing by model kind unless set explicitly: plain SGD at 0.05
  /// for linear and dense, adaptive moments at 1e-5 for per-edge models.
  void apply_defaults() {
    const bool per_edge = model == ModelKind::SparsePerEdge || model == ModelKind::Composite;
    if (!optimizer_set) train.optimizer = per_edge ? OptimizerKind::Adam : OptimizerKind::SGD;
    if (!lr_set) train.learning_rate = train.optimizer == OptimizerKind::Adam ? 1e-5 : 0.05;
  }
};

inline bool parse_bool(const std::string& s, const std::string& key) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ValidationError(key + ": expected a boolean");
}

inline TrainSetup parse_train_setup(const KeyValues& kv) {
  TrainSetup s;
  IrlConfig& c = s.train.irl;
  auto real = [](const std::string& v, const std::string& k) { return detail::parse_real(v, k); };
  auto integer = [](const std::string& v, const std::string& k) { return static_cast<int>(detail::parse_id(v, k)); };
  for (const auto& [k, v] : kv) {
    if (k == "algorithm") c.algorithm = parse_algorithm(v);
    else if (k == "horizon") c.horizon = parse_horizon(v);
    else if (k == "softmax_temperature") c.temperature = real(v, k);
    else if (k == "margin") c.margin = real(v, k);
    else if (k == "fixed_bias") c.fixed_bias = real(v, k);
    else if (k == "value_tol") c.value_tol = real(v, k);
    else if (k == "max_iters") c.max_iters = integer(v, k);
    else if (k == "model") s.model = parse_model_kind(v);
    else if (k == "hidden_layer_width") s.arch.width = integer(v, k);
    else if (k == "hidden_layer_depth") s.arch.depth = integer(v, k);
    else if (k == "l1_regularization") s.l1 = real(v, k);
    else if (k == "initialization_noise") s.init_noise = real(v, k);
    else if (k == "baseline_theta") s.baseline_theta = parse_real_list(v, k);
    else if (k == "optimizer") {
      if (v == "sgd") s.train.optimizer = OptimizerKind::SGD;
      else if (v == "adam") s.train.optimizer = OptimizerKind::Adam;
      else throw ValidationError("optimizer must be sgd or adam");
      s.optimizer_set = true;
    } else if (k == "learning_rate") {
      s.train.learning_rate = real(v, k);
      s.lr_set = true;
    } else if (k == "adam_beta1") s.train.beta1 = real(v, k);
    else if (k == "adam_beta2") s.train.beta2 = real(v, k);
    else if (k == "adam_epsilon") s.train.epsilon = real(v, k);
    else if (k == "lr_warmup_steps") s.train.warmup_steps = integer(v, k);
    else if (k == "steps_per_epoch") s.train.steps_per_epoch = integer(v, k);
    else if (k == "batch_size") s.train.batch_size = integer(v, k);
    else if (k == "epochs") s.train.epochs = integer(v, k);
    else if (k == "guard_margin") s.train.guard_margin = real(v, k);
    else if (k == "group_by_destination") s.train.group_by_destination = parse_bool(v, k);
    else if (k == "checkpoint_every") s.train.checkpoint_every = integer(v, k);
    else if (k == "seed") s.train.seed = static_cast<std::uint64_t>(detail::parse_id(v, k));
    else if (k == "shards") s.shards = integer(v, k);
    else if (k == "max_out_degree") s.max_out_degree = integer(v, k);
    else if (k == "heldout_fraction") s.heldout_fraction = real(v, k);
    else throw ValidationError("unknown config key: " + k);
  }
  if (!(s.init_noise >= 0 && s.init_noise < 1)) throw ValidationError("initialization_noise must lie in [0, 1)");
  if (!(s.heldout_fraction >= 0 && s.heldout_fraction < 1)) throw ValidationError("heldout_fraction must lie in [0, 1)");
  if (s.shards < 1) throw ValidationError("shards must be at least 1");
  return s;
}

/// Starting model for one expert. The baseline stands in for a hand-tuned
/// cost: a linear model whose weights are jittered by (1 +- noise) for linear
/// and composite models; per-edge weights start at 0 on top of it.
inline RewardModel initial_model(const TrainSetup& s, const RoadGraph& g, std::uint64_t seed) {
  const int d = g.feature_dim();
  std::vector<double> base = s.baseline_theta;
  if (base.empty()) base.assign(d, -1.0);
  if (static_cast<int>(base.size()) != d) {
    throw ValidationError("baseline_theta has " + std::to_string(base.size()) + " entries, graph has " +
                          std::to_string(d) + " features");
  }
  Rng rng(seed);
  std::vector<double> jittered = base;
  for (double& t : jittered) t *= 1.0 + rng.uniform(-s.init_noise, s.init_noise);
  RewardModel m = RewardModel::linear(jittered);
  switch (s.model) {
    case ModelKind::Linear: break;
    case ModelKind::DenseNet: m = RewardModel::dense(d, s.arch, seed); break;
    case ModelKind::SparsePerEdge:
      m = RewardModel::sparse(g, edge_rewards(RewardModel::linear(base), g), s.l1);
      break;
    case ModelKind::Composite: m = RewardModel::composite({m, RewardModel::sparse(g, s.l1)}); break;
  }
  m.temperature = s.train.irl.temperature;
  m.project_nonpositive();
  return m;
}

}  // namespace rhip
