#include <gtest/gtest.h>

#include <filesystem>

#include "oracles.hpp"
#include "rhip/config.hpp"
#include "rhip/gridworld.hpp"
#include "rhip/training.hpp"

using namespace rhip;

namespace {

RoadGraph grid4() { return gen_gridworld(4, 4, FeatureSpec::parse("uniform:1:2,uniform:1:2"), 17); }

TrainConfig quick_config(Algorithm a, int horizon = kInfiniteHorizon) {
  TrainConfig c;
  c.irl.algorithm = a;
  c.irl.horizon = horizon;
  c.warmup_steps = 0;
  c.steps_per_epoch = 20;
  c.batch_size = 4;
  c.learning_rate = 0.02;
  c.seed = 9;
  return c;
}

double theta_distance(const RewardModel& m, const std::vector<double>& truth) {
  double s = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) s += (m.params()[i] - truth[i]) * (m.params()[i] - truth[i]);
  return std::sqrt(s);
}

}  // namespace

TEST(Partition, GridCellsAndCoverage) {
  const RoadGraph g = grid4();
  const auto part = partition_geographic(g, {}, 4);
  EXPECT_EQ(part.rows, 2);
  EXPECT_EQ(part.cols, 2);
  ASSERT_EQ(part.shards.size(), 4u);
  std::size_t owned = 0, edges = 0;
  for (const auto& sh : part.shards) {
    EXPECT_EQ(sh.owned_nodes, 4);
    owned += sh.owned_nodes;
    edges += sh.edge_to_global.size();
    for (std::size_t i = static_cast<std::size_t>(sh.owned_nodes); i < sh.node_to_global.size(); ++i) {
      EXPECT_EQ(sh.graph.out_degree(static_cast<NodeId>(i)), 0);  // halo
    }
  }
  EXPECT_EQ(owned, 16u);
  EXPECT_EQ(edges, static_cast<std::size_t>(g.num_edges()));

  const auto model = RewardModel::linear({-1.0, -0.5});
  const std::vector<RewardModel> models(4, model);
  EXPECT_EQ(assemble_global(g, part, models).values, edge_rewards(model, g).values);
}

TEST(Partition, NonSquareCounts) {
  const RoadGraph g = grid4();
  const auto p3 = partition_geographic(g, {}, 3);
  EXPECT_EQ(p3.rows, 1);
  EXPECT_EQ(p3.cols, 3);
  const auto p6 = partition_geographic(g, {}, 6);
  EXPECT_EQ(p6.rows * p6.cols, 6);
  EXPECT_THROW(partition_geographic(g, {}, 0), ValidationError);
  EXPECT_THROW(partition_geographic(g, {}, 17), ValidationError);
}

TEST(Partition, DemosFollowDestinationAndDropWhenLeaving) {
  const RoadGraph g = grid4();
  // Node id = y * 4 + x. 0 -> 1 stays in the lower-left cell and 2 -> 3 in
  // the lower-right one; 0 -> 1 -> 2 ends lower-right but its first edges
  // belong to the lower-left shard.
  const std::vector<Trajectory> demos = {Trajectory::from_nodes(g, {0, 1}), Trajectory::from_nodes(g, {0, 1, 2}),
                                         Trajectory::from_nodes(g, {2, 3})};
  const auto part = partition_geographic(g, demos, 4);
  EXPECT_EQ(part.dropped, (std::vector<std::size_t>{1}));
  std::size_t kept = 0;
  for (const auto& sh : part.shards) {
    for (std::size_t k = 0; k < sh.demos.size(); ++k) {
      ++kept;
      const auto& original = demos[sh.demo_index[k]];
      ASSERT_EQ(sh.demos[k].edges.size(), original.edges.size());
      for (std::size_t i = 0; i < original.edges.size(); ++i) {
        EXPECT_EQ(sh.edge_to_global[sh.demos[k].edges[i]], original.edges[i]);
      }
      EXPECT_EQ(part.node_cell[original.destination()], sh.cell);
    }
  }
  EXPECT_EQ(kept, 2u);
}

TEST(TrainConfig, WarmupAndValidation) {
  TrainConfig c;
  c.learning_rate = 0.1;
  c.warmup_steps = 10;
  EXPECT_DOUBLE_EQ(c.warmup_lr(5), 0.05);
  EXPECT_DOUBLE_EQ(c.warmup_lr(10), 0.1);
  EXPECT_DOUBLE_EQ(c.warmup_lr(50), 0.1);
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  c.batch_size = 1;
  c.guard_margin = 1.0;
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(Train, MaxEntRecoversLinearWeights) {
  const RoadGraph g = grid4();
  const std::vector<double> truth = {-1.0, -2.0};
  const auto demos = sample_demonstrations(g, RewardModel::linear(truth), 300, 1.0, 4);
  TrainConfig c = quick_config(Algorithm::MaxEntPP);
  c.steps_per_epoch = 150;
  c.batch_size = 16;
  c.learning_rate = 0.1;
  const auto init = RewardModel::linear({-2.0, -1.0});
  const auto res = train_expert(g, demos, init, c);
  EXPECT_LT(theta_distance(res.model, truth), 0.5 * theta_distance(init, truth));
  const double before = maxent_nll(g, edge_rewards(init, g), demos);
  const double after = maxent_nll(g, edge_rewards(res.model, g), demos);
  EXPECT_LT(after, before);
  EXPECT_EQ(res.history.steps.size(), 150u);
  EXPECT_EQ(res.history.guard_trips, 0);
}

TEST(Train, DeterministicUnderSeed) {
  const RoadGraph g = grid4();
  const auto demos = sample_demonstrations(g, RewardModel::linear({-1.0, -1.5}), 50, 1.0, 2);
  for (Algorithm a : {Algorithm::MaxEntPP, Algorithm::BIRL, Algorithm::MMP, Algorithm::RHIP}) {
    const TrainConfig c = quick_config(a, 3);
    const auto init = RewardModel::linear({-1.2, -1.2});
    const auto r1 = train_expert(g, demos, init, c);
    const auto r2 = train_expert(g, demos, init, c);
    EXPECT_EQ(r1.model.params(), r2.model.params()) << to_string(a);
  }
}

TEST(Train, AdamMovesPerEdgeWeights) {
  const RoadGraph g = grid4();
  const auto demos = sample_demonstrations(g, RewardModel::linear({-1.0, -1.5}), 50, 1.0, 2);
  TrainConfig c = quick_config(Algorithm::RHIP, 4);
  c.optimizer = OptimizerKind::Adam;
  c.learning_rate = 1e-3;
  const auto init = RewardModel::sparse(g, edge_rewards(RewardModel::linear({-1.2, -1.2}), g), 1e-7);
  const auto res = train_expert(g, demos, init, c);
  bool moved = false;
  for (double p : res.model.params()) moved = moved || p != 0.0;
  EXPECT_TRUE(moved);
  for (double r : edge_rewards(res.model, g).values) EXPECT_LE(r, 0.0);
}

TEST(Guard, RevertsAndHalvesOnInfeasibleStep) {
  const RoadGraph g = gen_gridworld(3, 3, FeatureSpec::constant({1.0}), 0);
  // A snake through every node: far longer than the soft-optimal route, so
  // the gradient pushes the weight toward 0 where the bound exceeds 1.
  const std::vector<Trajectory> demos = {Trajectory::from_nodes(g, {0, 1, 2, 5, 4, 3, 6, 7, 8})};
  TrainConfig c = quick_config(Algorithm::MaxEntPP);
  c.learning_rate = 1.0;
  c.batch_size = 1;
  c.steps_per_epoch = 10;
  const auto res = train_expert(g, demos, RewardModel::linear({-3.0}), c);
  EXPECT_GT(res.history.guard_trips, 0);
  EXPECT_GE(res.history.lr_halvings, res.history.guard_trips);
  for (const auto& s : res.history.steps) {
    if (s.accepted) {
      EXPECT_LT(s.bound, 1.0);
    } else {
      EXPECT_GE(s.bound, 1.0);
    }
  }
  EXPECT_LT(cheap_bounds(g, edge_rewards(res.model, g)).best(), 1.0);
  EXPECT_FALSE(res.history.steps.front().accepted);
}

TEST(Guard, EarlyStopAfterConsecutiveTrips) {
  const RoadGraph g = gen_gridworld(3, 3, FeatureSpec::constant({1.0}), 0);
  const std::vector<Trajectory> demos = {Trajectory::from_nodes(g, {0, 1, 2, 5, 4, 3, 6, 7, 8})};
  TrainConfig c = quick_config(Algorithm::MaxEntPP);
  c.learning_rate = 1.0;
  c.batch_size = 1;
  c.max_guard_trips = 1;
  const auto res = train_expert(g, demos, RewardModel::linear({-3.0}), c);
  EXPECT_TRUE(res.history.early_stopped);
  EXPECT_EQ(res.history.steps.size(), 1u);
  EXPECT_EQ(res.model.params(), (std::vector<double>{-3.0}));
}

TEST(Guard, InfeasibleStartRejected) {
  const RoadGraph g = gen_gridworld(3, 3, FeatureSpec::constant({1.0}), 0);
  const std::vector<Trajectory> demos = {Trajectory::from_nodes(g, {0, 1})};
  EXPECT_THROW(train_expert(g, demos, RewardModel::linear({-0.5}), quick_config(Algorithm::MaxEntPP)),
               InfeasibleError);
  // Finite-horizon RHIP is unguarded and trains from the same start.
  EXPECT_NO_THROW(train_expert(g, demos, RewardModel::linear({-0.5}), quick_config(Algorithm::RHIP, 2)));
}

TEST(Train, CheckpointsAndHistory) {
  const RoadGraph g = grid4();
  const auto demos = sample_demonstrations(g, RewardModel::linear({-1.0, -1.5}), 30, 1.0, 2);
  TrainConfig c = quick_config(Algorithm::BIRL);
  c.epochs = 3;
  c.steps_per_epoch = 2;
  c.checkpoint_every = 2;
  const std::string dir = ::testing::TempDir() + "/rhip_ckpt";
  std::filesystem::remove_all(dir);
  const auto res = train_expert(g, demos, RewardModel::linear({-1.2, -1.2}), c, dir);
  ASSERT_EQ(res.history.checkpoints.size(), 2u);
  EXPECT_TRUE(std::filesystem::exists(dir + "/2.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir + "/3.ckpt"));
  EXPECT_EQ(load_model(dir + "/3.ckpt").params(), res.model.params());
  const std::string csv = format_history_csv(res.history);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "step,epoch,loss,grad_norm,lr,bound,max_reward,used,skipped,ops,accepted,wall_ms");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
}

TEST(Train, ShardedMatchesSequentialExperts) {
  const RoadGraph g = grid4();
  const auto demos = sample_demonstrations(g, RewardModel::linear({-1.0, -1.5}), 80, 1.0, 6);
  const auto part = partition_geographic(g, demos, 2);
  const TrainConfig c = quick_config(Algorithm::RHIP, 2);
  const std::vector<RewardModel> inits(2, RewardModel::linear({-1.2, -1.2}));
  const auto results = train_sharded(part, inits, c);
  ASSERT_EQ(results.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    TrainConfig ci = c;
    ci.seed = c.seed + i;
    const auto alone = train_expert(part.shards[i].graph, part.shards[i].demos, inits[i], ci);
    EXPECT_EQ(results[i].model.params(), alone.model.params());
  }
  EXPECT_THROW(train_sharded(part, {inits[0]}, c), ValidationError);
}

TEST(Train, TransferablePart) {
  const RoadGraph g = grid4();
  const auto lin = RewardModel::linear({-1.0, -1.0});
  const auto sp = RewardModel::sparse(g, 0.0);
  EXPECT_EQ(transferable_part(lin)->params(), lin.params());
  EXPECT_FALSE(transferable_part(sp).has_value());
  const auto comp = transferable_part(RewardModel::composite({lin, sp}));
  ASSERT_TRUE(comp.has_value());
  EXPECT_EQ(comp->kind(), ModelKind::Linear);
}

TEST(Config, KeyValueParsing) {
  const auto kv = parse_key_values("# run\nalgorithm = rhip  # inline\n\nhorizon=inf\n");
  EXPECT_EQ(kv.at("algorithm"), "rhip");
  EXPECT_EQ(kv.at("horizon"), "inf");
  EXPECT_THROW(parse_key_values("a = 1\na = 2\n"), ValidationError);
  EXPECT_THROW(parse_key_values("just words\n"), ValidationError);
  EXPECT_THROW(parse_key_values("a =\n"), ValidationError);
}

TEST(Config, TrainSetupKeysAndDefaults) {
  auto s = parse_train_setup(parse_key_values(
      "algorithm = rhip\nhorizon = 10\nmodel = composite\nbatch_size = 32\ngroup_by_destination = true\n"));
  EXPECT_EQ(s.train.irl.algorithm, Algorithm::RHIP);
  EXPECT_EQ(s.train.irl.horizon, 10);
  EXPECT_EQ(s.train.batch_size, 32);
  EXPECT_TRUE(s.train.group_by_destination);
  s.apply_defaults();
  EXPECT_EQ(s.train.optimizer, OptimizerKind::Adam);
  EXPECT_DOUBLE_EQ(s.train.learning_rate, 1e-5);

  auto lin = parse_train_setup(parse_key_values("model = linear\nlearning_rate = 0.3\n"));
  lin.apply_defaults();
  EXPECT_EQ(lin.train.optimizer, OptimizerKind::SGD);
  EXPECT_DOUBLE_EQ(lin.train.learning_rate, 0.3);

  EXPECT_EQ(parse_horizon("inf"), kInfiniteHorizon);
  EXPECT_EQ(format_horizon(kInfiniteHorizon), "inf");
  EXPECT_THROW(parse_train_setup(parse_key_values("colour = red\n")), ValidationError);
  EXPECT_THROW(parse_train_setup(parse_key_values("optimizer = rmsprop\n")), ValidationError);
  EXPECT_THROW(parse_train_setup(parse_key_values("shards = 0\n")), ValidationError);
  EXPECT_EQ(s.resolved().at("horizon"), "10");
}

TEST(Config, InitialModels) {
  const RoadGraph g = grid4();
  TrainSetup s;
  s.baseline_theta = {-1.0, -2.0};
  s.init_noise = 0.0;
  EXPECT_EQ(initial_model(s, g, 1).params(), s.baseline_theta);
  s.model = ModelKind::SparsePerEdge;
  const auto sp = initial_model(s, g, 1);
  EXPECT_EQ(edge_rewards(sp, g).values, edge_rewards(RewardModel::linear(s.baseline_theta), g).values);
  s.model = ModelKind::Composite;
  s.init_noise = 0.1;
  const auto comp = initial_model(s, g, 3);
  EXPECT_EQ(comp.kind(), ModelKind::Composite);
  EXPECT_NEAR(comp.params()[0], -1.0, 0.1 + 1e-12);
  EXPECT_EQ(comp.params(), initial_model(s, g, 3).params());
  s.baseline_theta = {-1.0};
  EXPECT_THROW(initial_model(s, g, 1), ValidationError);
}
