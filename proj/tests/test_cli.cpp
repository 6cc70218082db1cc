#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "w2sd/config.hpp"
#include "w2sd/errors.hpp"
#include "w2sd/run.hpp"

using namespace w2sd;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("w2sd_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  f << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

int cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + W2SD_CLI_PATH + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// A distillation run directory with a config and a synthetic metrics table.
fs::path fake_run(const std::string& name, double alpha_weak, double w2_growth) {
  const fs::path dir = scratch(name);
  RunConfig c;
  c.mode = RunMode::DistillW2svd;
  c.views.alpha_weak = alpha_weak;
  write(dir / "config.txt", serialize_config(c));
  std::ostringstream csv;
  csv << "iter,l_dmd,w2_snapshot\n";
  double w2 = 0.2;
  for (int i = 0; i < 10; ++i) {
    csv << i << "," << 0.1 * i << ",";
    if (i % 2 == 1) csv << (w2 *= w2_growth);
    csv << "\n";
  }
  write(dir / "metrics.csv", csv.str());
  return dir / "metrics.csv";
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(Config, DefaultsRoundTrip) {
  const RunConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(parse_config(serialize_config(c)), c);
}

TEST(Config, EditedValuesRoundTrip) {
  const RunConfig c = parse_config(
      "run.seed = 42\n"
      "# comment line\n"
      "dataset.kind = moving-dot   # trailing comment\n"
      "dataset.condition = first-frame\n"
      "views.alpha_weak = 0.1\n"
      "lora.mode = output\n"
      "schedule.steps = 1000, 500\n"
      "distill.generator_lr = 0.00017\n"
      "distill.dmd_timestep = schedule\n"
      "prop1.alpha_strong = 0.5, 3\n"
      "compare.inputs = a.csv, b.csv\n");
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.dataset.kind, DatasetKind::MovingDot);
  EXPECT_EQ(c.lora_mode, LoraMode::Output);
  EXPECT_EQ(c.schedule, (std::vector<double>{1000, 500}));
  EXPECT_EQ(c.distill.generator_lr, 0.00017);
  EXPECT_EQ(c.distill.dmd_timestep, DmdTimestepMode::Schedule);
  EXPECT_EQ(c.compare_inputs, (std::vector<std::string>{"a.csv", "b.csv"}));
  EXPECT_EQ(parse_config(serialize_config(c)), c);
  EXPECT_EQ(c.net_config().sample_dim, 4u * 8u * 8u);
  EXPECT_EQ(c.net_config().cond_dim, 64u);
}

TEST(Config, HashTracksContent) {
  RunConfig a, b;
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  b.views.alpha_weak = 0.3;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Config, Errors) {
  EXPECT_THROW(parse_config("run.sede = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("run.seed = one\n"), ConfigError);
  EXPECT_THROW(parse_config("run.seed = 1\nrun.seed = 2\n"), ConfigError);
  EXPECT_THROW(parse_config("run.seed\n"), ConfigError);
  EXPECT_THROW(parse_config("lora.mode = wide\n"), ConfigError);
  try {
    parse_config("views.alpha_weak = 2\nviews.alpha_strong = 1\n").validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("alpha"), std::string::npos);
  }
  EXPECT_THROW(parse_run_mode("distill"), ConfigError);
  EXPECT_EQ(parse_run_mode("train-1step"), RunMode::TrainOneStep);
}

TEST(Config, VanillaEffectiveConfig) {
  RunConfig c;
  c.mode = RunMode::DistillVanillaDmd;
  c.views.alpha_weak = 0.5;
  const auto e = c.effective();
  EXPECT_EQ(e.views.alpha_weak, 0.0);
  EXPECT_FALSE(e.weights.reg_enabled);
  EXPECT_EQ(e.weights.reg_weight(), 0.0);
  c.mode = RunMode::DistillW2svd;
  EXPECT_EQ(c.effective(), c);
}

TEST(Compare, SelfComparisonHasZeroDeltas) {
  const auto csv = fake_run("self", 0.25, 1.0);
  const auto cmp = compare_runs({csv, csv});
  const auto rows = lines(cmp.table_csv);
  ASSERT_EQ(rows.size(), 11u);
  const auto header = rows.front();
  EXPECT_NE(header.find("delta_self#2:l_dmd"), std::string::npos);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    std::vector<std::string> cells;
    std::stringstream ss(rows[r]);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    // iter, 2 runs x 2 metrics, then 2 deltas
    ASSERT_GE(cells.size(), 6u);
    EXPECT_EQ(cells[5], "0");
    if (cells.size() > 6) EXPECT_EQ(cells[6], "0");
  }
}

TEST(Compare, AlphaGridSummary) {
  std::vector<fs::path> csvs;
  const double grid[] = {0.0, 0.1, 0.25, 0.5};
  for (double a : grid) csvs.push_back(fake_run("grid_" + std::to_string(a), a, a == 0.0 ? 2.0 : 0.9));
  const auto rows = lines(compare_runs(csvs).summary_csv);
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0], "run,alpha_weak,rows,final_l_dmd,final_w2_snapshot,best_w2,collapse");
  EXPECT_NE(rows[1].find(",0,10,"), std::string::npos);
  EXPECT_EQ(rows[1].substr(rows[1].rfind(',') + 1), "yes");
  EXPECT_NE(rows[3].find(",0.25,10,"), std::string::npos);
  for (int i = 2; i <= 4; ++i) EXPECT_EQ(rows[i].substr(rows[i].rfind(',') + 1), "no");
}

TEST(Compare, SchemaMismatchIsConfigError) {
  const auto a = fake_run("schema_a", 0.25, 1.0);
  const fs::path b = scratch("schema_b") / "metrics.csv";
  write(b, "iter,loss\n0,1\n");
  EXPECT_THROW(compare_runs({a, b}), ConfigError);
  const fs::path out = scratch("schema_out");
  EXPECT_EQ(cli("compare --out " + (out / "cmp").string() + " " + a.string() + " " + b.string()),
            kExitConfig);
}

TEST(Cli, CompareWritesOutputs) {
  const auto a = fake_run("cli_a", 0.0, 1.1);
  const auto b = fake_run("cli_b", 0.25, 1.0);
  const fs::path out = scratch("cli_cmp") / "out";
  ASSERT_EQ(cli("compare --out " + out.string() + " " + a.string() + " " + b.string()), kExitOk);
  for (const char* f : {"comparison.txt", "comparison.csv", "summary.csv", "config.txt"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  EXPECT_EQ(lines(slurp(out / "summary.csv")).size(), 3u);
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch("codes");
  EXPECT_EQ(cli("no-such-mode"), kExitConfig);
  EXPECT_EQ(cli("gradcheck --bogus-flag"), kExitConfig);
  write(dir / "bad.txt", "run.sede = 3\n");
  EXPECT_EQ(cli("pretrain --config " + (dir / "bad.txt").string()), kExitConfig);
  EXPECT_EQ(cli("eval --out " + (dir / "eval").string()), kExitConfig);  // no checkpoint given
  EXPECT_EQ(cli("gradcheck --out " + (dir / "threads").string(), "W2SD_THREADS=0"), kExitConfig);
}

TEST(Cli, Prop1AndRerunProtection) {
  const fs::path dir = scratch("prop1") / "run";
  ASSERT_EQ(cli("verify-prop1 --out " + dir.string()), kExitOk);
  const auto table = lines(slurp(dir / "prop1.csv"));
  EXPECT_EQ(table.size(), 1u + 4u + 6u + 6u);  // pairs with alpha_weak > alpha_strong are skipped
  EXPECT_EQ(cli("verify-prop1 --out " + dir.string()), kExitConfig);
  EXPECT_TRUE(fs::exists(dir / "config.txt"));
}
