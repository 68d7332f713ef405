#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rhip/compress.hpp"
#include "rhip/gridworld.hpp"
#include "rhip/io.hpp"
#include "rhip/reward_model.hpp"

using namespace rhip;

namespace {

// Center 0 with out-edges to leaves 1..5; leaves have no out-edges.
RoadGraph star(int leaves = 5) {
  std::vector<NodeRecord> n;
  std::vector<EdgeRecord> e;
  n.push_back({0, {0, 0}});
  for (int i = 1; i <= leaves; ++i) {
    n.push_back({i, {static_cast<double>(i), 0}});
    e.push_back({i - 1, 0, i, {static_cast<double>(i)}, false});
  }
  return build_graph(n, e);
}

RoadGraph chain() {
  // 0 -> 1 -> 2 -> 3, plus 3 -> 0
  std::vector<NodeRecord> n = {{0, {0, 0}}, {1, {1, 0}}, {2, {2, 0}}, {3, {3, 0}}};
  std::vector<EdgeRecord> e = {{0, 0, 1, {1.0, 0.5}, false},
                               {1, 1, 2, {2.0, 0.0}, false},
                               {2, 2, 3, {0.5, 1.0}, false},
                               {3, 3, 0, {1.0, 1.0}, false}};
  return build_graph(n, e);
}

std::vector<double> linear_rewards(const RoadGraph& g, const std::vector<double>& theta) {
  return edge_rewards(RewardModel::linear(theta), g).values;
}

}  // namespace

TEST(Split, StarByHand) {
  const RoadGraph g = star();
  auto [s, map] = split_high_degree(g, 3);
  EXPECT_EQ(s.num_nodes(), g.num_nodes() + 1);
  EXPECT_EQ(s.max_out_degree(), 3);
  EXPECT_EQ(s.out_degree(0), 3);  // two original edges + connector
  const NodeId cont = g.num_nodes();
  EXPECT_EQ(s.out_degree(cont), 3);
  EXPECT_TRUE(s.is_connector(5));
  EXPECT_TRUE(map.expansion[5].empty());
  EXPECT_EQ(map.node_to_original[cont], 0);
}

TEST(Split, NoOpBelowCap) {
  const RoadGraph g = star(3);
  auto [s, map] = split_high_degree(g, 3);
  EXPECT_EQ(s, g);
  EXPECT_EQ(map, MergeMap::identity(g));
  EXPECT_THROW(split_high_degree(g, 1), ValidationError);
}

TEST(Split, PreservesPathRewardMultisets) {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const RoadGraph g = oracle::random_graph(rng, 7, 20, 1);
    auto [s, map] = split_high_degree(g, 2);
    EXPECT_LE(s.max_out_degree(), 2);
    std::vector<double> r(g.num_edges());
    for (double& x : r) x = -rng.uniform(0.1, 2.0);
    std::vector<double> rs(s.num_edges(), 0.0);
    for (EdgeId e = 0; e < s.num_edges(); ++e) {
      if (!map.expansion[e].empty()) rs[e] = r[map.expansion[e][0]];
    }
    for (NodeId a = 0; a < g.num_nodes(); ++a) {
      for (NodeId b = 0; b < g.num_nodes(); ++b) {
        if (a == b) continue;
        const auto before = oracle::path_rewards(oracle::simple_paths(g, a, b), r);
        const auto after = oracle::path_rewards(oracle::simple_paths(s, a, b), rs);
        ASSERT_EQ(before.size(), after.size());
        for (std::size_t i = 0; i < before.size(); ++i) EXPECT_NEAR(before[i], after[i], 1e-12);
      }
    }
  }
}

TEST(Merge, ChainByHand) {
  const RoadGraph g = chain();
  auto [m, map] = merge_chains(g, {0, 3});
  // 1 and 2 fold into a single 0 -> 3 edge.
  EXPECT_EQ(m.num_nodes(), 2);
  EXPECT_EQ(m.num_edges(), 2);
  const EdgeId e = m.find_edge(map.original_to_node[0], map.original_to_node[3]);
  ASSERT_NE(e, kNoEdge);
  EXPECT_EQ(map.expansion[e], (std::vector<EdgeId>{0, 1, 2}));
  EXPECT_DOUBLE_EQ(m.features(e)[0], 3.5);
  EXPECT_DOUBLE_EQ(m.features(e)[1], 1.5);
  EXPECT_EQ(map.original_to_node[1], kNoNode);
}

TEST(Merge, ProtectedNodesSurvive) {
  const RoadGraph g = chain();
  auto [m, map] = merge_chains(g, {0, 1, 2, 3});
  EXPECT_EQ(m.num_nodes(), 4);
  EXPECT_EQ(map.expansion.size(), 4u);
}

TEST(Merge, RefusesParallelEdge) {
  // 0 -> 1 -> 2 and 0 -> 2: contracting 1 would duplicate 0 -> 2.
  std::vector<NodeRecord> n = {{0, {}}, {1, {}}, {2, {}}};
  std::vector<EdgeRecord> e = {{0, 0, 1, {1.0}, false}, {1, 1, 2, {1.0}, false}, {2, 0, 2, {1.0}, false},
                               {3, 2, 0, {1.0}, false}};
  const RoadGraph g = build_graph(n, e);
  auto [m, map] = merge_chains(g, {0, 2});
  EXPECT_EQ(m.num_nodes(), 3);
}

TEST(Merge, PreservesLinearPathRewards) {
  const auto g = gen_gridworld(3, 3, FeatureSpec::parse("uniform:0:2,uniform:0:2"), 5, 2);
  const std::vector<NodeId> keep = {0, 4, 8};
  auto [m, map] = merge_chains(g, keep);
  EXPECT_LT(m.num_nodes(), g.num_nodes());
  const std::vector<double> theta = {-0.7, -1.3};
  const auto r = linear_rewards(g, theta);
  const auto rm = linear_rewards(m, theta);
  for (NodeId a : keep) {
    for (NodeId b : keep) {
      if (a == b) continue;
      const auto before = oracle::path_rewards(oracle::simple_paths(g, a, b), r);
      const auto after =
          oracle::path_rewards(oracle::simple_paths(m, map.original_to_node[a], map.original_to_node[b]), rm);
      ASSERT_EQ(before.size(), after.size());
      for (std::size_t i = 0; i < before.size(); ++i) EXPECT_NEAR(before[i], after[i], 1e-9);
    }
  }
}

TEST(Compress, TrajectoryRoundTrip) {
  const auto g = gen_gridworld(4, 4, FeatureSpec::constant({1.0}), 1, 1);
  const auto t = Trajectory::from_nodes(g, {0, 16, 1});
  auto [c, map] = split_and_merge(g, 3, {t.origin(), t.destination()});
  const Trajectory ct = compress(t, map, c);
  EXPECT_EQ(expand(ct, map, g), t);
}

TEST(Compress, ConnectorHopsInserted) {
  const RoadGraph g = star();
  auto [s, map] = split_high_degree(g, 3);
  const auto t = Trajectory::from_nodes(g, {0, 5});
  const Trajectory st = compress(t, map, s);
  EXPECT_EQ(st.length(), 2u);
  EXPECT_TRUE(s.is_connector(st.edges[0]));
  EXPECT_EQ(expand(st, map, g), t);
}

TEST(Compress, RemovedOriginIsError) {
  const RoadGraph g = chain();
  auto [m, map] = merge_chains(g, {0, 3});
  EXPECT_THROW(compress(Trajectory::from_nodes(g, {1, 2}), map, m), ValidationError);
}

TEST(Compress, GridReducesPaddedSlots) {
  const auto g = gen_gridworld(20, 20, FeatureSpec::constant({1.0}), 0, 1);
  auto [c, map] = split_and_merge(g, 3);
  const double before = static_cast<double>(g.padded_slot_count());
  const double after = static_cast<double>(c.padded_slot_count());
  EXPECT_LE(after, 0.75 * before);
  EXPECT_LE(c.max_out_degree(), 3);
}

TEST(Compress, MergeMapFileRoundTrip) {
  const auto g = gen_gridworld(3, 3, FeatureSpec::constant({1.0}), 0, 1);
  auto [c, map] = split_and_merge(g, 3, {0, 8});
  EXPECT_EQ(parse_merge_map(format_merge_map(map), g.num_nodes()), map);
  const RoadGraph reloaded = [&] {
    const std::string path = ::testing::TempDir() + "/merged_graph.txt";
    save_graph(c, path);
    return load_graph(path, &map);
  }();
  EXPECT_EQ(reloaded, c);
}

TEST(Compress, ComposeIdentity) {
  const RoadGraph g = chain();
  const auto id = MergeMap::identity(g);
  EXPECT_EQ(compose(id, id), id);
}
