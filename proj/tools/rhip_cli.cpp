#include <CLI11.hpp>
#include <Eigen/Core>
#include <filesystem>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "rhip/rhip.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace rhip;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Manifest {
  std::string command;
  std::vector<std::string> argv;
  std::uint64_t seed = 0;
  json config = json::object();
  std::vector<std::string> outputs;
  std::vector<std::string> metric_outputs;  // reproducible byte for byte
};

void write_manifest(const fs::path& dir, const Manifest& m) {
  json j;
  j["command"] = m.command;
  j["argv"] = m.argv;
  j["seed"] = m.seed;
  j["config"] = m.config;
  j["versions"] = {{"rhip", kVersion},
                   {"compiler", __VERSION__},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)}};
  j["outputs"] = m.outputs;
  j["metric_outputs"] = m.metric_outputs;
  detail::write_file((dir / "manifest.json").string(), j.dump(2) + "\n");
}

json metrics_json(const Metrics& m) {
  json j;
  j["n"] = m.n;
  j["acc"] = m.acc;
  j["iou"] = m.iou;
  j["unreachable"] = m.unreachable;
  j["nll"] = m.nll ? json(*m.nll) : json(nullptr);
  return j;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

RewardTable load_rewards(const std::string& model_path, const std::string& rewards_path, const RoadGraph& g,
                         double* temperature) {
  if (!model_path.empty() == !rewards_path.empty()) throw ValidationError("give exactly one of --model or --rewards");
  if (!model_path.empty()) {
    const RewardModel m = load_model(model_path);
    if (temperature) *temperature = m.temperature;
    return edge_rewards(m, g);
  }
  RewardTable r = parse_reward_table(detail::read_file(rewards_path));
  check_rewards(g, r);
  return r;
}

struct Context {
  std::vector<std::string> argv;
};

// gen-grid -------------------------------------------------------------------

struct GenGridArgs {
  int width = 10, height = 10, segments = 0, demos = 100, heldout = 0;
  std::string features = "uniform:1:3,uniform:1:3,bernoulli:0.3";
  std::string theta;
  std::string policy = "softmax";
  double temperature = 1.0;
  std::uint64_t seed = 0;
  std::string out;
};

int run_gen_grid(const GenGridArgs& a, const Context& ctx) {
  const FeatureSpec spec = FeatureSpec::parse(a.features);
  const RoadGraph g = gen_gridworld(a.width, a.height, spec, a.seed, a.segments);
  std::vector<double> theta = a.theta.empty() ? std::vector<double>(g.feature_dim(), -1.0)
                                              : parse_real_list(a.theta, "--theta");
  RewardModel truth = RewardModel::linear(theta);
  truth.temperature = a.temperature;
  truth.check_compatible(g);
  for (double t : theta) {
    if (!(t <= 0)) throw ValidationError("--theta entries must be <= 0");
  }
  if (a.policy != "softmax" && a.policy != "greedy") throw ValidationError("--demo-policy must be softmax or greedy");
  auto draw = [&](int n, std::uint64_t seed) {
    if (a.policy == "greedy") return greedy_demonstrations(g, edge_rewards(truth, g), n, seed);
    return sample_demonstrations(g, truth, n, a.temperature, seed);
  };
  fs::create_directories(a.out);
  const fs::path out(a.out);
  Manifest m{"gen-grid", ctx.argv, a.seed};
  save_graph(g, (out / "graph.txt").string());
  save_model(truth, (out / "true_model.ckpt").string());
  save_trajectories(draw(a.demos, a.seed + 1), (out / "demos.txt").string());
  m.outputs = {"graph.txt", "true_model.ckpt", "demos.txt"};
  if (a.heldout > 0) {
    save_trajectories(draw(a.heldout, a.seed + 2), (out / "heldout.txt").string());
    m.outputs.push_back("heldout.txt");
  }
  m.metric_outputs = m.outputs;
  m.config = {{"width", a.width},     {"height", a.height},   {"segments", a.segments},
              {"features", a.features}, {"theta", theta},       {"temperature", a.temperature},
              {"demos", a.demos},     {"heldout", a.heldout}, {"demo_policy", a.policy}};
  write_manifest(out, m);
  std::cout << "nodes " << g.num_nodes() << " edges " << g.num_edges() << " V " << g.max_out_degree() << "\n";
  return 0;
}

// compress -------------------------------------------------------------------

struct CompressArgs {
  std::string graph, demos, out;
  int v_cap = 0;
  bool no_merge = false;
};

json stats_json(const CompressionStats& s) {
  return {{"nodes", s.num_nodes},
          {"edges", s.num_edges},
          {"max_out_degree", s.max_out_degree},
          {"padded_slots", s.padded_slots},
          {"mean_out_degree", s.mean_out_degree}};
}

int run_compress(const CompressArgs& a, const Context& ctx) {
  const RoadGraph g = load_graph(a.graph);
  std::vector<Trajectory> demos;
  if (!a.demos.empty()) demos = load_trajectories(a.demos, g);
  const auto protect = demo_endpoints(demos);
  auto [cg, map] = a.no_merge ? split_high_degree(g, a.v_cap) : split_and_merge(g, a.v_cap, protect);
  const auto before = compression_stats(g);
  const auto after = compression_stats(cg);
  fs::create_directories(a.out);
  const fs::path out(a.out);
  save_graph(cg, (out / "graph.txt").string());
  save_merge_map(map, (out / "merge.txt").string());
  Manifest m{"compress", ctx.argv, 0};
  m.outputs = {"graph.txt", "merge.txt", "stats.json"};
  if (!demos.empty()) {
    std::vector<Trajectory> cd;
    for (const auto& t : demos) cd.push_back(compress(t, map, cg));
    save_trajectories(cd, (out / "demos.txt").string());
    m.outputs.push_back("demos.txt");
  }
  json st = {{"before", stats_json(before)}, {"after", stats_json(after)}};
  st["padded_slot_reduction"] =
      before.padded_slots == 0 ? 0.0
                               : 1.0 - static_cast<double>(after.padded_slots) / static_cast<double>(before.padded_slots);
  detail::write_file((out / "stats.json").string(), dump(st));
  m.metric_outputs = m.outputs;
  m.config = {{"v_cap", a.v_cap}, {"merge", !a.no_merge}};
  write_manifest(out, m);
  std::cout << "nodes " << before.num_nodes << " -> " << after.num_nodes << ", V " << before.max_out_degree << " -> "
            << after.max_out_degree << ", padded slots " << before.padded_slots << " -> " << after.padded_slots
            << "\n";
  return 0;
}

// train ----------------------------------------------------------------------

struct TrainArgs {
  std::string graph, demos, heldout, config, out, algorithm, horizon;
  std::optional<std::uint64_t> seed;
  std::optional<int> shards;
};

TrainSetup load_setup(const std::string& config) {
  return parse_train_setup(config.empty() ? KeyValues{} : parse_key_values(detail::read_file(config)));
}

void apply_overrides(TrainSetup& s, const std::string& algorithm, const std::string& horizon,
                     std::optional<std::uint64_t> seed, std::optional<int> shards) {
  if (!algorithm.empty()) s.train.irl.algorithm = parse_algorithm(algorithm);
  if (!horizon.empty()) s.train.irl.horizon = parse_horizon(horizon);
  if (seed) s.train.seed = *seed;
  if (shards) s.shards = *shards;
  if (s.shards < 1) throw ValidationError("--shards must be at least 1");
  s.apply_defaults();
  s.train.validate();
}

int run_train(const TrainArgs& a, const Context& ctx) {
  const RoadGraph g = load_graph(a.graph);
  const auto demos = load_trajectories(a.demos, g);
  TrainSetup s = load_setup(a.config);
  apply_overrides(s, a.algorithm, a.horizon, a.seed, a.shards);
  if (s.max_out_degree > 0 && g.max_out_degree() > s.max_out_degree) {
    throw ValidationError("graph max out-degree " + std::to_string(g.max_out_degree()) + " exceeds max_out_degree " +
                          std::to_string(s.max_out_degree) + "; run compress first");
  }
  const Partition part = partition_geographic(g, demos, s.shards);
  std::vector<RewardModel> inits;
  for (std::size_t i = 0; i < part.shards.size(); ++i) {
    inits.push_back(initial_model(s, part.shards[i].graph, s.train.seed + 1000 + i));
  }
  fs::create_directories(a.out);
  const fs::path out(a.out);
  const auto results = train_sharded(part, inits, s.train, a.out);

  Manifest m{"train", ctx.argv, s.train.seed};
  json summary;
  summary["dropped_demos"] = part.dropped.size();
  summary["grid"] = {part.rows, part.cols};
  std::vector<RewardModel> models;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& h = results[i].history;
    const std::string hist = "history_" + std::to_string(i) + ".csv";
    detail::write_file((out / hist).string(), format_history_csv(h));
    m.outputs.push_back(hist);
    for (const auto& c : h.checkpoints) m.outputs.push_back(fs::relative(c, out).string());
    json sh = {{"cell", part.shards[i].cell},
               {"nodes", part.shards[i].graph.num_nodes()},
               {"edges", part.shards[i].graph.num_edges()},
               {"demos", part.shards[i].demos.size()},
               {"steps", h.steps.size()},
               {"guard_trips", h.guard_trips},
               {"lr_halvings", h.lr_halvings},
               {"early_stopped", h.early_stopped}};
    sh["final_loss"] = h.steps.empty() ? json(nullptr) : json(h.steps.back().loss);
    summary["shards"].push_back(sh);
    models.push_back(results[i].model);
    models.back().temperature = s.train.irl.temperature;
  }
  const RewardTable global = assemble_global(g, part, models);
  detail::write_file((out / "rewards.txt").string(), format_reward_table(global));
  detail::write_file((out / "summary.json").string(), dump(summary));
  m.outputs.insert(m.outputs.end(), {"rewards.txt", "summary.json"});
  m.metric_outputs = {"rewards.txt", "summary.json"};
  if (models.size() == 1) {
    save_model(models.front(), (out / "model.ckpt").string());
    m.outputs.push_back("model.ckpt");
    m.metric_outputs.push_back("model.ckpt");
  }
  if (!a.heldout.empty()) {
    const auto held = load_trajectories(a.heldout, g);
    EvalOptions opt;
    opt.temperature = s.train.irl.temperature;
    opt.compute_nll = s.train.irl.algorithm != Algorithm::MMP;
    json metrics = metrics_json(evaluate(g, global, held, opt));
    if (part.shards.size() >= 2) {
      const Partition hp = partition_geographic(g, held, s.shards);
      std::vector<std::vector<Trajectory>> per_shard;
      for (const auto& sh : hp.shards) per_shard.push_back(sh.demos);
      metrics["cross_region_acc"] = cross_region_eval(models, part.shards, per_shard);
    }
    detail::write_file((out / "metrics.json").string(), dump(metrics));
    m.outputs.push_back("metrics.json");
    m.metric_outputs.push_back("metrics.json");
    std::cout << dump(metrics);
  }
  json cfg;
  for (const auto& [k, v] : s.resolved()) cfg[k] = v;
  m.config = cfg;
  write_manifest(out, m);
  return 0;
}

// eval -----------------------------------------------------------------------

struct EvalArgs {
  std::string graph, demos, model, rewards, merge, original_graph, out, algorithm;
  std::optional<double> temperature;
};

int run_eval(const EvalArgs& a, const Context& ctx) {
  const RoadGraph g = load_graph(a.graph);
  const auto demos = load_trajectories(a.demos, g);
  double t = 1.0;
  const RewardTable r = load_rewards(a.model, a.rewards, g, &t);
  if (a.temperature) t = *a.temperature;
  EvalOptions opt;
  opt.temperature = t;
  opt.compute_nll = a.algorithm.empty() || parse_algorithm(a.algorithm) != Algorithm::MMP;
  std::optional<MergeMap> map;
  if (!a.merge.empty()) {
    if (a.original_graph.empty()) throw ValidationError("--merge needs --original-graph");
    map = load_merge_map(a.merge, load_graph(a.original_graph).num_nodes());
    if (map->expansion.size() != static_cast<std::size_t>(g.num_edges())) {
      throw ValidationError("merge map does not match the graph's edge count");
    }
    opt.merge = &*map;
  }
  const json metrics = metrics_json(evaluate(g, r, demos, opt));
  std::cout << dump(metrics);
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    detail::write_file((fs::path(a.out) / "metrics.json").string(), dump(metrics));
    Manifest m{"eval", ctx.argv, 0};
    m.outputs = m.metric_outputs = {"metrics.json"};
    m.config = {{"temperature", t}, {"compute_nll", opt.compute_nll}, {"merge", !a.merge.empty()}};
    write_manifest(a.out, m);
  }
  return 0;
}

// diagnose -------------------------------------------------------------------

struct DiagnoseArgs {
  std::string graph, model, rewards, out;
  std::vector<int> destinations;
  std::optional<double> temperature;
};

int run_diagnose(const DiagnoseArgs& a, const Context& ctx) {
  const RoadGraph g = load_graph(a.graph);
  double t = 1.0;
  const RewardTable r = load_rewards(a.model, a.rewards, g, &t);
  if (a.temperature) t = *a.temperature;
  if (!(t > 0)) throw ValidationError("temperature must be positive");
  const RewardTable scaled = r.scaled(1.0 / t);
  std::vector<NodeId> dests(a.destinations.begin(), a.destinations.end());
  if (dests.empty()) {
    for (NodeId s = 0; s < g.num_nodes(); ++s) dests.push_back(s);
  }
  json report;
  const CheapBounds whole = cheap_bounds(g, scaled);
  report["cheap_bound"] = {{"row", whole.row}, {"col", whole.col}, {"best", whole.best()}};
  double worst = 0.0;
  Feasibility overall = Feasibility::Feasible;
  for (NodeId d : dests) {
    if (!g.contains_node(d)) throw ValidationError("destination " + std::to_string(d) + " is not a node");
    const SpectralReport sr = dominant_eigenvalue(GoalView(g, d), scaled);
    report["destinations"].push_back({{"destination", d},
                                      {"lambda_max", sr.lambda_max},
                                      {"lower", sr.lower},
                                      {"upper", sr.upper},
                                      {"row_bound", sr.bounds.row},
                                      {"col_bound", sr.bounds.col},
                                      {"classification", to_string(sr.classification)},
                                      {"iterations", sr.iterations},
                                      {"converged", sr.converged}});
    worst = std::max(worst, sr.lambda_max);
    if (sr.classification == Feasibility::Infeasible) overall = Feasibility::Infeasible;
    else if (sr.classification == Feasibility::Boundary && overall == Feasibility::Feasible) overall = sr.classification;
  }
  report["lambda_max"] = worst;
  report["classification"] = to_string(overall);
  std::cout << dump(report);
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    detail::write_file((fs::path(a.out) / "spectral.json").string(), dump(report));
    Manifest m{"diagnose", ctx.argv, 0};
    m.outputs = m.metric_outputs = {"spectral.json"};
    m.config = {{"temperature", t}};
    write_manifest(a.out, m);
  }
  return 0;
}

// scan-loss ------------------------------------------------------------------

struct ScanArgs {
  int steps = 41;
  double lo = 0.0, hi = 2.0;
  std::string out;
};

int run_scan(const ScanArgs& a, const Context& ctx) {
  if (a.steps < 2 || !(a.hi > a.lo)) throw ValidationError("scan needs at least 2 steps and hi > lo");
  const auto points = loss_surface_scan(a.steps, a.lo, a.hi);
  const long long violations = convexity_violations(points, a.steps);
  fs::create_directories(a.out);
  detail::write_file((fs::path(a.out) / "scan.csv").string(), format_scan_csv(points));
  Manifest m{"scan-loss", ctx.argv, 0};
  m.outputs = m.metric_outputs = {"scan.csv"};
  m.config = {{"steps", a.steps}, {"lo", a.lo}, {"hi", a.hi}};
  write_manifest(a.out, m);
  std::cout << "points " << points.size() << " convexity_violations " << violations << "\n";
  return 0;
}

// sweep-horizon --------------------------------------------------------------

struct SweepArgs {
  std::string graph, demos, heldout, config, out, horizons = "0,1,2,10,100,inf";
  std::optional<std::uint64_t> seed;
};

int run_sweep(const SweepArgs& a, const Context& ctx) {
  const RoadGraph g = load_graph(a.graph);
  const auto demos = load_trajectories(a.demos, g);
  std::vector<Trajectory> held;
  if (!a.heldout.empty()) held = load_trajectories(a.heldout, g);
  TrainSetup s = load_setup(a.config);
  apply_overrides(s, "rhip", "", a.seed, std::nullopt);
  std::vector<int> hs;
  std::string tok;
  std::istringstream in(a.horizons);
  while (std::getline(in, tok, ',')) hs.push_back(parse_horizon(tok));
  const auto rows = horizon_sweep(g, demos, held, s, hs);
  fs::create_directories(a.out);
  const fs::path out(a.out);
  detail::write_file((out / "sweep.csv").string(), format_sweep_csv(rows));
  detail::write_file((out / "sweep_accuracy.csv").string(), format_sweep_accuracy_csv(rows));
  Manifest m{"sweep-horizon", ctx.argv, s.train.seed};
  m.outputs = {"sweep.csv", "sweep_accuracy.csv"};
  m.metric_outputs = {"sweep_accuracy.csv"};
  json cfg;
  for (const auto& [k, v] : s.resolved()) cfg[k] = v;
  cfg["horizons"] = a.horizons;
  m.config = cfg;
  write_manifest(out, m);
  std::cout << format_sweep_csv(rows);
  return 0;
}

int dispatch(std::vector<std::string> args);

// replay ---------------------------------------------------------------------

struct ReplayArgs {
  std::string manifest, out;
};

int run_replay(const ReplayArgs& a) {
  json j;
  try {
    j = json::parse(detail::read_file(a.manifest));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("manifest is not valid JSON: ") + e.what());
  }
  std::vector<std::string> args = j.at("argv").get<std::vector<std::string>>();
  bool replaced = false;
  for (std::size_t i = 0; i + 1 < args.size(); ++i) {
    if (args[i] == "--out") {
      args[i + 1] = a.out;
      replaced = true;
    }
  }
  if (!replaced) throw ValidationError("manifest command has no --out to redirect");
  const int rc = dispatch(args);
  if (rc != 0) return rc;
  const fs::path before = fs::path(a.manifest).parent_path();
  int mismatches = 0;
  for (const auto& name : j.at("metric_outputs").get<std::vector<std::string>>()) {
    const bool same = detail::read_file((before / name).string()) == detail::read_file((fs::path(a.out) / name).string());
    std::cout << (same ? "identical " : "DIFFERS ") << name << "\n";
    mismatches += same ? 0 : 1;
  }
  return mismatches == 0 ? 0 : 1;
}

int dispatch(std::vector<std::string> args) {
  CLI::App app{"Inverse reinforcement learning for route finding"};
  app.require_subcommand(1);
  Context ctx{args};

  GenGridArgs gg;
  auto* gen = app.add_subcommand("gen-grid", "synthetic grid graph plus demonstrations");
  gen->add_option("--width", gg.width);
  gen->add_option("--height", gg.height);
  gen->add_option("--segments", gg.segments, "mid-block nodes per street");
  gen->add_option("--features", gg.features);
  gen->add_option("--theta", gg.theta, "comma-separated linear weights of the generating model");
  gen->add_option("--temperature", gg.temperature);
  gen->add_option("--demos", gg.demos);
  gen->add_option("--heldout", gg.heldout);
  gen->add_option("--demo-policy", gg.policy, "softmax or greedy");
  gen->add_option("--seed", gg.seed);
  gen->add_option("--out", gg.out)->required();

  CompressArgs ca;
  auto* cmp = app.add_subcommand("compress", "split high-degree nodes and merge chains");
  cmp->add_option("--graph", ca.graph)->required();
  cmp->add_option("--demos", ca.demos);
  cmp->add_option("--v-cap", ca.v_cap)->required();
  cmp->add_flag("--no-merge", ca.no_merge);
  cmp->add_option("--out", ca.out)->required();

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "config-driven sharded training");
  trn->add_option("--graph", ta.graph)->required();
  trn->add_option("--demos", ta.demos)->required();
  trn->add_option("--heldout", ta.heldout);
  trn->add_option("--config", ta.config);
  trn->add_option("--algorithm", ta.algorithm);
  trn->add_option("--horizon", ta.horizon);
  trn->add_option("--seed", ta.seed);
  trn->add_option("--shards", ta.shards);
  trn->add_option("--out", ta.out)->required();

  EvalArgs ea;
  auto* evl = app.add_subcommand("eval", "accuracy, IoU and NLL of a model");
  evl->add_option("--graph", ea.graph)->required();
  evl->add_option("--demos", ea.demos)->required();
  evl->add_option("--model", ea.model);
  evl->add_option("--rewards", ea.rewards);
  evl->add_option("--merge", ea.merge);
  evl->add_option("--original-graph", ea.original_graph);
  evl->add_option("--algorithm", ea.algorithm);
  evl->add_option("--temperature", ea.temperature);
  evl->add_option("--out", ea.out);

  DiagnoseArgs da;
  auto* dgn = app.add_subcommand("diagnose", "dominant eigenvalue and feasibility");
  dgn->add_option("--graph", da.graph)->required();
  dgn->add_option("--model", da.model);
  dgn->add_option("--rewards", da.rewards);
  dgn->add_option("--destination", da.destinations);
  dgn->add_option("--temperature", da.temperature);
  dgn->add_option("--out", da.out);

  ScanArgs sa;
  auto* scn = app.add_subcommand("scan-loss", "loss surface scan of the two-state example");
  scn->add_option("--steps", sa.steps);
  scn->add_option("--lo", sa.lo);
  scn->add_option("--hi", sa.hi);
  scn->add_option("--out", sa.out)->required();

  SweepArgs wa;
  auto* swp = app.add_subcommand("sweep-horizon", "accuracy and throughput across RHIP horizons");
  swp->add_option("--graph", wa.graph)->required();
  swp->add_option("--demos", wa.demos)->required();
  swp->add_option("--heldout", wa.heldout);
  swp->add_option("--config", wa.config);
  swp->add_option("--horizons", wa.horizons);
  swp->add_option("--seed", wa.seed);
  swp->add_option("--out", wa.out)->required();

  ReplayArgs ra;
  auto* rpl = app.add_subcommand("replay", "re-run a manifest and compare metric outputs");
  rpl->add_option("--manifest", ra.manifest)->required();
  rpl->add_option("--out", ra.out)->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  if (gen->parsed()) return run_gen_grid(gg, ctx);
  if (cmp->parsed()) return run_compress(ca, ctx);
  if (trn->parsed()) return run_train(ta, ctx);
  if (evl->parsed()) return run_eval(ea, ctx);
  if (dgn->parsed()) return run_diagnose(da, ctx);
  if (scn->parsed()) return run_scan(sa, ctx);
  if (swp->parsed()) return run_sweep(wa, ctx);
  if (rpl->parsed()) return run_replay(ra);
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    return dispatch(args);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const InfeasibleError& e) {
    std::cerr << "infeasible: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
