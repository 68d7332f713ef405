#include <gtest/gtest.h>

#include "rhip/graph.hpp"
#include "rhip/gridworld.hpp"
#include "rhip/io.hpp"
#include "rhip/reward_model.hpp"

using namespace rhip;

namespace {

RoadGraph diamond() {
  // 0 -> 1 -> 3 and 0 -> 2 -> 3
  std::vector<NodeRecord> n = {{0, {0, 0}}, {1, {1, 1}}, {2, {1, -1}}, {3, {2, 0}}};
  std::vector<EdgeRecord> e = {{0, 0, 1, {1.0}, false},
                               {1, 0, 2, {2.0}, false},
                               {2, 1, 3, {1.0}, false},
                               {3, 2, 3, {1.0}, false}};
  return build_graph(n, e);
}

}  // namespace

TEST(Graph, SlotsSortedByTargetThenEdge) {
  std::vector<NodeRecord> n = {{0, {}}, {1, {}}, {2, {}}};
  std::vector<EdgeRecord> e = {{0, 0, 2, {0.0}, false}, {1, 0, 1, {0.0}, false}, {2, 0, 1, {1.0}, false}};
  const RoadGraph g = build_graph(n, e);
  ASSERT_EQ(g.max_out_degree(), 3);
  const auto s = g.slots(0);
  EXPECT_EQ(s[0].edge, 1);
  EXPECT_EQ(s[1].edge, 2);
  EXPECT_EQ(s[2].edge, 0);
  EXPECT_EQ(g.slot_of_edge(0), 2);
  EXPECT_FALSE(g.slots(1)[0].valid());
  EXPECT_EQ(g.padded_slot_count(), 9u);
  EXPECT_EQ(g.find_edge(0, 1), 1);
  EXPECT_EQ(g.find_edge(1, 0), kNoEdge);
}

TEST(Graph, InEdges) {
  const RoadGraph g = diamond();
  const auto in = g.in_edges(3);
  ASSERT_EQ(in.size(), 2u);
  EXPECT_EQ(in[0], 2);
  EXPECT_EQ(in[1], 3);
  EXPECT_TRUE(g.in_edges(0).empty());
}

TEST(Graph, RejectsBadInput) {
  std::vector<NodeRecord> n = {{0, {}}, {1, {}}};
  EXPECT_THROW(build_graph(n, {{0, 0, 5, {0.0}, false}}), ValidationError);
  EXPECT_THROW(build_graph(n, {{1, 0, 1, {0.0}, false}}), ValidationError);
  EXPECT_THROW(build_graph(n, {{0, 0, 1, {-1.0}, false}}), ValidationError);
  EXPECT_THROW(build_graph(n, {{0, 0, 1, {1.0}, true}}), ValidationError);
  EXPECT_THROW(build_graph(n, {{0, 0, 1, {1.0}, false}, {1, 1, 0, {1.0, 2.0}, false}}), ValidationError);
  EXPECT_THROW(build_graph({{0, {}}, {0, {}}}, {}), ValidationError);
}

TEST(Graph, GoalViewMasksDestination) {
  const RoadGraph g = diamond();
  const GoalView gv(g, 1);
  EXPECT_FALSE(gv.active(1, g.slots(1)[0]));
  EXPECT_TRUE(gv.active(0, g.slots(0)[0]));
  EXPECT_THROW(GoalView(g, 9), ValidationError);
}

TEST(Trajectory, FromNodesAndEdges) {
  const RoadGraph g = diamond();
  const auto t = Trajectory::from_nodes(g, {0, 2, 3});
  EXPECT_EQ(t.edges, (std::vector<EdgeId>{1, 3}));
  EXPECT_EQ(t.origin(), 0);
  EXPECT_EQ(t.destination(), 3);
  EXPECT_EQ(Trajectory::from_edges(g, {1, 3}), t);
  EXPECT_FALSE(t.has_repeated_node());
}

TEST(Trajectory, MissingEdgeMessage) {
  const RoadGraph g = diamond();
  try {
    Trajectory::from_nodes(g, {0, 3});
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_STREQ(e.what(), "trajectory references missing edge 0 -> 3");
  }
  EXPECT_THROW(Trajectory::from_edges(g, {0, 3}), ValidationError);
  EXPECT_THROW(Trajectory::from_edges(g, {}), ValidationError);
}

TEST(Gridworld, ShapeAndIds) {
  const RoadGraph g = gen_gridworld(3, 3, FeatureSpec::constant({1.0}), 0);
  EXPECT_EQ(g.num_nodes(), 9);
  EXPECT_EQ(g.num_edges(), 24);
  EXPECT_EQ(g.max_out_degree(), 4);
  EXPECT_EQ(g.out_degree(4), 4);
  EXPECT_EQ(g.out_degree(0), 2);
  EXPECT_EQ(g.coord(5).x, 2.0);
  EXPECT_EQ(g.coord(5).y, 1.0);
  EXPECT_NE(g.find_edge(4, 1), kNoEdge);
  EXPECT_EQ(g.find_edge(0, 4), kNoEdge);
}

TEST(Gridworld, SegmentsAddChainNodes) {
  const RoadGraph g = gen_gridworld(2, 2, FeatureSpec::constant({1.0}), 0, 2);
  // 8 directed streets, each with 2 mid-block nodes and 3 edges.
  EXPECT_EQ(g.num_nodes(), 4 + 16);
  EXPECT_EQ(g.num_edges(), 24);
  for (NodeId s = 4; s < g.num_nodes(); ++s) EXPECT_EQ(g.out_degree(s), 1);
}

TEST(Gridworld, DeterministicUnderSeed) {
  const auto spec = FeatureSpec::parse("uniform:1:3,bernoulli:0.5");
  EXPECT_EQ(gen_gridworld(4, 3, spec, 7), gen_gridworld(4, 3, spec, 7));
  EXPECT_FALSE(gen_gridworld(4, 3, spec, 7) == gen_gridworld(4, 3, spec, 8));
}

TEST(Gridworld, FeatureSpecErrors) {
  EXPECT_THROW(FeatureSpec::parse("uniform:3:1"), ValidationError);
  EXPECT_THROW(FeatureSpec::parse("bernoulli:2"), ValidationError);
  EXPECT_THROW(FeatureSpec::parse("gauss:0:1"), ValidationError);
  EXPECT_THROW(FeatureSpec::parse("const:x"), ValidationError);
  EXPECT_THROW(gen_gridworld(1, 4, FeatureSpec::constant({1.0}), 0), ValidationError);
}

TEST(Io, GraphRoundTrip) {
  const auto g = gen_gridworld(3, 2, FeatureSpec::parse("uniform:0:5,bernoulli:0.3"), 3, 1);
  EXPECT_EQ(parse_graph(format_graph(g)), g);
}

TEST(Io, GraphParseErrorsCarryLine) {
  try {
    parse_graph("N 0 0 0\nX 1\n");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  EXPECT_THROW(parse_graph("N 0 0 0\nE 0 0 1 1\n"), ValidationError);
}

TEST(Io, TrajectoriesRoundTrip) {
  const RoadGraph g = diamond();
  const std::vector<Trajectory> t = {Trajectory::from_nodes(g, {0, 1, 3}), Trajectory::from_nodes(g, {2, 3})};
  EXPECT_EQ(parse_trajectories(format_trajectories(t), g), t);
  EXPECT_THROW(parse_trajectories("0 3\n", g), ValidationError);
}

TEST(Io, FormatDoubleRoundTrips) {
  for (double v : {0.1, -1.0 / 3.0, 1e-300, 123456789.125}) {
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
}

TEST(Io, RewardTable) {
  RewardTable r{{-1.5, 0.0, -0.25}};
  EXPECT_EQ(parse_reward_table(format_reward_table(r)).values, r.values);
  EXPECT_THROW(parse_reward_table("0 0.5\n"), ValidationError);
  EXPECT_THROW(parse_reward_table("1 -0.5\n"), ValidationError);
}
