#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>

#include "rhip/rhip.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const fs::path& work_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::path(::testing::TempDir()) / "rhip_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

struct CliRun {
  int code = -1;
  std::string out;
};

CliRun cli(const std::string& args) {
  const fs::path log = work_dir() / "stdout.txt";
  const std::string cmd = std::string(RHIP_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = rhip::detail::read_file(log.string());
  return r;
}

std::string p(const std::string& rel) { return (work_dir() / rel).string(); }

void generate_once() {
  static bool done = false;
  if (done) return;
  const CliRun r = cli("gen-grid --width 5 --height 5 --features uniform:1:3,bernoulli:0.5 --theta -1,-0.5 --demos 40 "
                     "--heldout 20 --demo-policy greedy --seed 3 --out " + p("grid"));
  ASSERT_EQ(r.code, 0) << r.out;
  done = true;
}

}  // namespace

TEST(Cli, GenGridWritesArtifacts) {
  generate_once();
  for (const char* f : {"graph.txt", "true_model.ckpt", "demos.txt", "heldout.txt", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(work_dir() / "grid" / f)) << f;
  }
  const json m = json::parse(rhip::detail::read_file(p("grid/manifest.json")));
  EXPECT_EQ(m.at("command"), "gen-grid");
  EXPECT_EQ(m.at("seed"), 3);
  EXPECT_TRUE(m.at("versions").contains("eigen"));
}

TEST(Cli, TrueModelIsPerfectOnGreedyDemos) {
  generate_once();
  const CliRun r = cli("eval --graph " + p("grid/graph.txt") + " --demos " + p("grid/heldout.txt") + " --model " +
                     p("grid/true_model.ckpt"));
  ASSERT_EQ(r.code, 0) << r.out;
  const json j = json::parse(r.out);
  EXPECT_DOUBLE_EQ(j.at("acc").get<double>(), 1.0);
  EXPECT_FALSE(j.at("nll").is_null());
  const CliRun mmp = cli("eval --graph " + p("grid/graph.txt") + " --demos " + p("grid/heldout.txt") + " --model " +
                       p("grid/true_model.ckpt") + " --algorithm mmp");
  EXPECT_TRUE(json::parse(mmp.out).at("nll").is_null());
}

TEST(Cli, TrainThenReplayIsIdentical) {
  generate_once();
  rhip::detail::write_file(p("train.cfg"), "algorithm = rhip\nhorizon = 2\nsteps_per_epoch = 5\nlr_warmup_steps = 0\n"
                                           "batch_size = 4\nbaseline_theta = -1,-1\n");
  const CliRun r = cli("train --graph " + p("grid/graph.txt") + " --demos " + p("grid/demos.txt") + " --heldout " +
                     p("grid/heldout.txt") + " --config " + p("train.cfg") + " --seed 5 --out " + p("run"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(work_dir() / "run" / "model.ckpt"));
  EXPECT_TRUE(fs::exists(work_dir() / "run" / "history_0.csv"));
  const json summary = json::parse(rhip::detail::read_file(p("run/summary.json")));
  EXPECT_FALSE(summary.empty());
  const CliRun again = cli("replay --manifest " + p("run/manifest.json") + " --out " + p("run_again"));
  EXPECT_EQ(again.code, 0) << again.out;
  EXPECT_EQ(again.out.find("DIFFERS"), std::string::npos) << again.out;
}

TEST(Cli, CompressStar) {
  // Center 0 with five out-edges.
  std::string text;
  for (int i = 0; i <= 5; ++i) text += "N " + std::to_string(i) + " " + std::to_string(i) + " 0\n";
  for (int i = 1; i <= 5; ++i) text += "E " + std::to_string(i - 1) + " 0 " + std::to_string(i) + " 1\n";
  rhip::detail::write_file(p("star.txt"), text);
  const CliRun r = cli("compress --graph " + p("star.txt") + " --v-cap 3 --no-merge --out " + p("star"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto g = rhip::load_graph(p("star/graph.txt"));
  EXPECT_EQ(g.num_nodes(), 7);
  EXPECT_EQ(g.max_out_degree(), 3);
  const json stats = json::parse(rhip::detail::read_file(p("star/stats.json")));
  EXPECT_TRUE(stats.contains("padded_slot_reduction"));
}

TEST(Cli, DiagnoseAndScan) {
  generate_once();
  const CliRun d = cli("diagnose --graph " + p("grid/graph.txt") + " --model " + p("grid/true_model.ckpt") +
                     " --destination 0 --destination 12 --out " + p("diag"));
  ASSERT_EQ(d.code, 0) << d.out;
  const json j = json::parse(rhip::detail::read_file(p("diag/spectral.json")));
  EXPECT_EQ(j.at("destinations").size(), 2u);
  EXPECT_EQ(j.at("classification"), "feasible");

  const CliRun s = cli("scan-loss --steps 5 --out " + p("scan"));
  ASSERT_EQ(s.code, 0) << s.out;
  EXPECT_NE(s.out.find("convexity_violations 0"), std::string::npos) << s.out;
  const std::string csv = rhip::detail::read_file(p("scan/scan.csv"));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 26);
}

TEST(Cli, ExitCodes) {
  generate_once();
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("scan-loss --steps 1 --out " + p("bad")).code, 2);
  EXPECT_EQ(cli("eval --graph " + p("missing.txt") + " --demos x --model y").code, 2);
  rhip::detail::write_file(p("bad.cfg"), "algorithm = rhip\ncolour = red\n");
  EXPECT_EQ(cli("train --graph " + p("grid/graph.txt") + " --demos " + p("grid/demos.txt") + " --config " +
                 p("bad.cfg") + " --out " + p("bad_run"))
                .code,
            2);
  // theta = -0.1 per feature puts the initial model outside the certified
  // region, which the guarded algorithms refuse.
  rhip::detail::write_file(p("hot.cfg"), "algorithm = maxent\nbaseline_theta = -0.1,-0.1\n");
  EXPECT_EQ(cli("train --graph " + p("grid/graph.txt") + " --demos " + p("grid/demos.txt") + " --config " +
                 p("hot.cfg") + " --out " + p("hot_run"))
                .code,
            3);
}
