#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "smoea/error.hpp"
#include "smoea/evolution.hpp"
#include "smoea/network.hpp"
#include "smoea/run_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  int exit = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    root_ = fs::temp_directory_path() / (std::string("smoea_cli_") + info->name());
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  Outcome run(const std::string& args, const std::string& env = "") {
    const fs::path out = root_ / "stdout.txt", err = root_ / "stderr.txt";
    const std::string cmd = env + " \"" + std::string(SMOEA_CLI_PATH) + "\" " + args + " >\"" +
                            out.string() + "\" 2>\"" + err.string() + "\"";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
  }

  fs::path write_config(const std::string& name, const json& cfg) {
    const fs::path p = root_ / name;
    std::ofstream(p) << cfg.dump(2);
    return p;
  }

  // Small enough that a full prune finishes in a few seconds.
  json small_config() const {
    return json{{"model", {{"builtin", "cnn"}, {"layers", "6,8,M,8,8"}, {"seed", 2}}},
                {"dataset",
                 {{"kind", "synthetic"},
                  {"synthetic",
                   {{"classes", 4},
                    {"train_per_class", 40},
                    {"test_per_class", 25},
                    {"height", 8},
                    {"width", 8},
                    {"noise", 1.0},
                    {"seed", 2}}}}},
                {"plan", {{"l0", 3}, {"block_counts", {2}}}},
                {"evolution", {{"population_size", 30}, {"elite_size", 10}, {"generations", 10}}},
                {"finetune", {{"epochs", 1}, {"milestones", json::array()}}},
                {"calibration_size", 64}};
  }

  fs::path root_;
};

json error_line(const Outcome& r) { return json::parse(r.err.substr(0, r.err.find('\n'))); }

std::map<std::size_t, double> best_error_by_count(const fs::path& csv) {
  std::ifstream in(csv);
  std::map<std::size_t, double> best;
  for (const smoea::Individual& ind : smoea::read_front_csv(in, 8)) {
    auto [it, fresh] = best.emplace(ind.retained(), ind.objectives.error);
    if (!fresh) it->second = std::min(it->second, ind.objectives.error);
  }
  return best;
}

}  // namespace

TEST_F(Cli, ReportOnVgg14) {
  const fs::path cfg = write_config("vgg.json", {{"model", {{"builtin", "vgg14"}}}});
  const Outcome r = run("report -c \"" + cfg.string() + "\" -o \"" + (root_ / "run").string() + "\"");
  ASSERT_EQ(r.exit, 0) << r.err;
  EXPECT_NE(r.out.find("FLOPs 6.26E+08"), std::string::npos) << r.out;
  const json rep = json::parse(slurp(root_ / "run" / "report.json"));
  const double flops = rep.at("flops").get<double>();
  EXPECT_GE(flops, 6.20e8);
  EXPECT_LE(flops, 6.33e8);
  EXPECT_EQ(rep.at("conv_layers").size(), 13u);
}

TEST_F(Cli, ErrorExitCodes) {
  const fs::path good = write_config("good.json", small_config());
  Outcome r = run("evolve-layer --layer 9 -c \"" + good.string() + "\" -o \"" + (root_ / "a").string() + "\"");
  EXPECT_EQ(r.exit, 3);
  EXPECT_EQ(error_line(r).at("exit_code").get<int>(), 3);

  const fs::path bad = root_ / "bad.json";
  std::ofstream(bad) << "{\"plan\": ";
  r = run("prune -c \"" + bad.string() + "\" -o \"" + (root_ / "b").string() + "\"");
  EXPECT_EQ(r.exit, 2);
  EXPECT_EQ(error_line(r).at("error").get<std::string>(),
            smoea::to_string(smoea::ErrorCode::malformed_config));

  const fs::path wrong_type = write_config("wrong.json", {{"evolution", {{"population_size", "many"}}}});
  EXPECT_EQ(run("prune -c \"" + wrong_type.string() + "\" -o \"" + (root_ / "c").string() + "\"").exit, 2);

  r = run("prune -c \"" + (root_ / "absent.json").string() + "\"");
  EXPECT_EQ(r.exit, 4);
  EXPECT_EQ(error_line(r).at("exit_code").get<int>(), 4);

  r = run("report -m \"" + (root_ / "no_model").string() + "\" -o \"" + (root_ / "d").string() + "\"");
  EXPECT_EQ(r.exit, 4);

  EXPECT_EQ(run("prune --no-such-flag").exit, 2);
  EXPECT_EQ(run("evolve-layer").exit, 2);
  EXPECT_NE(run("").exit, 0);
}

TEST_F(Cli, PruneRunDirectoryIsSelfDescribing) {
  const fs::path cfg = write_config("cfg.json", small_config());
  const fs::path dir = root_ / "first";
  const Outcome r = run("prune -c \"" + cfg.string() + "\" -o \"" + dir.string() + "\"");
  ASSERT_EQ(r.exit, 0) << r.err;
  for (const char* f : {"config.echo", "log.txt", "report.json", "manifest.json",
                        "fronts/layer_3.csv", "fronts/layer_4.csv", "model/manifest.json"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  const json manifest = json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(manifest.at("command"), "prune");
  for (const auto& a : manifest.at("artifacts")) EXPECT_TRUE(fs::exists(dir / a.get<std::string>())) << a;
  EXPECT_EQ(manifest.at("config"), json::parse(slurp(dir / "config.echo")));

  // Echoed config parses back and reproduces every output bit-for-bit.
  const smoea::RunConfig echoed = smoea::load_run_config(dir / "config.echo");
  EXPECT_EQ(echoed.plan.l0, 3u);
  const fs::path again = root_ / "second";
  ASSERT_EQ(run("prune -c \"" + (dir / "config.echo").string() + "\" -o \"" + again.string() + "\"").exit, 0);
  for (const char* f : {"report.json", "fronts/layer_3.csv", "fronts/layer_4.csv"}) {
    EXPECT_EQ(slurp(dir / f), slurp(again / f)) << f;
  }
  EXPECT_EQ(smoea::load_model(dir / "model"), smoea::load_model(again / "model"));

  const json report = json::parse(slurp(dir / "report.json"));
  ASSERT_EQ(report.at("layers").size(), 2u);
  std::ifstream front(dir / "fronts/layer_3.csv");
  EXPECT_FALSE(smoea::read_front_csv(front, 8).empty());

  // A baseline matched to that report keeps the same per-layer counts.
  const fs::path base = root_ / "base";
  ASSERT_EQ(run("baseline --criterion rand --match \"" + (dir / "report.json").string() + "\" -c \"" +
                cfg.string() + "\" -o \"" + base.string() + "\"")
                .exit,
            0);
  const json brep = json::parse(slurp(base / "report.json"));
  EXPECT_EQ(brep.at("method"), "rand");
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(brep.at("layers")[i].at("retained"), report.at("layers")[i].at("retained"));
  }
}

TEST_F(Cli, EmptyPlanLeavesNetworkUnchanged) {
  json cfg = small_config();
  cfg["plan"]["block_counts"] = json::array();
  const fs::path file = write_config("empty.json", cfg);
  const fs::path dir = root_ / "run";
  const Outcome r = run("prune -c \"" + file.string() + "\" -o \"" + dir.string() + "\"");
  ASSERT_EQ(r.exit, 0) << r.err;
  const smoea::RunConfig parsed = smoea::load_run_config(file);
  EXPECT_EQ(smoea::load_model(dir / "model"), smoea::load_network(parsed.model, parsed.dataset));
  const json report = json::parse(slurp(dir / "report.json"));
  EXPECT_EQ(report.at("params_after"), report.at("params_before"));
  EXPECT_TRUE(report.at("layers").empty());
}

TEST_F(Cli, OptimizedAlphaFrontIsLowerLeft) {
  const fs::path cfg = write_config("cfg.json", small_config());
  for (const char* mode : {"optimized", "fixed-one"}) {
    const Outcome r = run(std::string("evolve-layer --layer 2 --seed 4 --alpha-mode ") + mode + " -c \"" +
                      cfg.string() + "\" -o \"" + (root_ / mode).string() + "\"");
    ASSERT_EQ(r.exit, 0) << r.err;
  }
  const auto opt = best_error_by_count(root_ / "optimized" / "fronts/layer_2.csv");
  const auto fixed = best_error_by_count(root_ / "fixed-one" / "fronts/layer_2.csv");
  std::size_t matched = 0;
  for (const auto& [count, err] : opt) {
    if (!fixed.count(count)) continue;
    ++matched;
    EXPECT_LE(err, fixed.at(count)) << "retained " << count;
  }
  EXPECT_GT(matched, 0u);
  const json evo = json::parse(slurp(root_ / "optimized" / "evolution.json"));
  EXPECT_EQ(evo.at("config").at("alpha_mode"), "optimized");
}

TEST_F(Cli, DefaultOutputRootFromEnvironment) {
  const std::string env = "SMOEA_OUTPUT_ROOT=\"" + (root_ / "runs").string() + "\"";
  ASSERT_EQ(run("report", env).exit, 0);
  ASSERT_EQ(run("report", env).exit, 0);
  EXPECT_TRUE(fs::exists(root_ / "runs" / "report-1" / "manifest.json"));
  EXPECT_TRUE(fs::exists(root_ / "runs" / "report-2" / "manifest.json"));
}
