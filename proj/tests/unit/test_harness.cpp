// Copyright 2026 The ShiftMatch Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "harness.hpp"
#include "shiftmatch/binio.hpp"

namespace shiftmatch::harness {
namespace {

namespace fs = std::filesystem;

const fs::path kConfigs = SHIFTMATCH_CONFIG_DIR;
const fs::path kData = fs::path(SHIFTMATCH_DATA_DIR) / "mnist10k";

std::string tiny_config(const fs::path& out) {
  return "graph = " + (kConfigs / "mlp-s.graph").string() + "\nimages = " + (kData / "images-idx3-ubyte.gz").string() +
         "\nlabels = " + (kData / "labels-idx1-ubyte.gz").string() +
         "\ntrain_count = 9000\ntest_count = 300\n"
         "corruptions = blur, noise\nintensities = 2\nmethods = plain, meanvar, shiftmatch, input-only\n"
         "members = 2\nepochs = 1\nbatch = 128\nout = " +
         out.string() + "\n";
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("shiftmatch_harness_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "shiftmatch");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

TEST(Config, ParsesKeysAndResolvesPaths) {
  const auto c = ExperimentConfig::parse(
      "# comment\ngraph = g.graph\nimages = /abs/i.gz  # trailing\nmethods = plain , meanvar\n"
      "intensities = 1,5\neps = 1e-3\nspec = full\nepochs = 3\ninclude_clean = false\n",
      "/base");
  EXPECT_EQ(c.graph, fs::path("/base/g.graph"));
  EXPECT_EQ(c.images, fs::path("/abs/i.gz"));
  EXPECT_EQ(c.methods, (std::vector<std::string>{"plain", "meanvar"}));
  EXPECT_EQ(c.intensities, (std::vector<int>{1, 5}));
  EXPECT_DOUBLE_EQ(c.eps, 1e-3);
  EXPECT_EQ(c.spec, CovKind::Full);
  EXPECT_EQ(c.train.epochs, 3);
  EXPECT_FALSE(c.include_clean);
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(ExperimentConfig::parse("colour = red\n"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("eps\n"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("eps = -1\n"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("eps = abc\n"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("intensities = 0\n"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("methods = plain, magic\n"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("corruptions = fog\n"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("placement = middle\n"), ConfigError);
  EXPECT_THROW(ExperimentConfig::load("/no/such/file.conf"), ConfigError);
}

TEST(Config, HashTracksContent) {
  const auto a = ExperimentConfig::parse("seed = 3\n"), b = ExperimentConfig::parse("seed = 3\n# same\n");
  const auto c = ExperimentConfig::parse("seed = 4\n");
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.hash(), c.hash());
  // Output location does not change the experiment.
  EXPECT_EQ(a.hash(), ExperimentConfig::parse("seed = 3\nout = elsewhere\n").hash());
}

TEST(Config, ShippedConfigLoads) {
  const auto c = ExperimentConfig::load(kConfigs / "mnist-lenet.conf");
  EXPECT_TRUE(fs::exists(c.graph));
  EXPECT_TRUE(fs::exists(c.images));
  EXPECT_EQ(c.members, 5u);
}

TEST(Overrides, ApplyOnTop) {
  ExperimentConfig c;
  Overrides o;
  o.methods = std::vector<std::string>{"full-cov"};
  o.eps = 0.5;
  o.spec = "channel-joint";
  o.placement = "post";
  o.seed = 77;
  o.apply(c);
  EXPECT_EQ(c.methods, (std::vector<std::string>{"full-cov"}));
  EXPECT_EQ(c.spec, CovKind::ChannelJoint);
  EXPECT_EQ(c.placement, "post");
  EXPECT_EQ(c.seed, 77u);
  o.spec = "bogus";
  EXPECT_THROW(o.apply(c), ConfigError);
}

TEST(Methods, Mapping) {
  ExperimentConfig c;
  EXPECT_FALSE(method_setup("plain", c).matched);
  EXPECT_EQ(method_setup("meanvar", c).stats_key(), "meanvar-pre");
  EXPECT_EQ(method_setup("shiftmatch", c).stats_key(), "kron-pre");
  EXPECT_EQ(method_setup("input-only", c).stats_key(), "kron-input-only");
  EXPECT_EQ(method_setup("channel-joint", c).stats_key(), "channel-joint-pre");
  EXPECT_EQ(method_setup("full-cov", c).stats_key(), "per-channel-pre");
  EXPECT_EQ(method_setup("post-activation", c).stats_key(), "kron-post");
  c.spec = CovKind::Full;
  c.placement = "post";
  EXPECT_EQ(method_setup("shiftmatch", c).stats_key(), "full-post");
  EXPECT_THROW(method_setup("other", c), ConfigError);
}

TEST(Report, CsvAndJsonRoundTrip) {
  Report r{0xabcdef0123456789ULL, "1.2.3",
           {{"plain", "clean", 0, 0.9815, 0.0612345678901234, 2000, 0.0},
            {"shiftmatch", "blur", 4, 1.0 / 3.0, 0.1, 2000, 12.5}}};
  const std::string csv = to_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kCsvHeader);
  Report back = from_csv(csv);
  EXPECT_EQ(back.rows, r.rows);  // shortest round-trip doubles
  EXPECT_EQ(from_json(nlohmann::json::parse(to_json(r).dump())), r);
  EXPECT_NE(r.find("shiftmatch", "blur", 4), nullptr);
  EXPECT_EQ(r.find("shiftmatch", "blur", 5), nullptr);
  EXPECT_THROW(from_csv("a,b\n"), FormatError);
  EXPECT_THROW(from_csv(std::string(kCsvHeader) + "\nx,y\n"), FormatError);
  EXPECT_THROW(from_json(nlohmann::json::object()), FormatError);
}

TEST(EndToEnd, DeterministicGrid) {
  const fs::path dir = fresh_dir("e2e");
  const auto cfg = ExperimentConfig::parse(tiny_config(dir / "out"));
  std::ostringstream log;
  EXPECT_THROW(cmd_eval(cfg, log), ConfigError);  // no weights yet

  const SampleSet s1 = cmd_train(cfg, log);
  ASSERT_EQ(s1.size(), 2u);
  EXPECT_EQ(s1[1].sample_id, cfg.seed + 1);
  const auto w0 = binio::read_file(weights_path(cfg, 0));
  const Report r1 = cmd_eval(cfg, log);
  EXPECT_EQ(r1.rows.size(), 4u * 3u);
  EXPECT_EQ(r1.config_hash, cfg.hash());
  const auto csv1 = binio::read_file(cfg.out / "report.csv");
  for (const auto& row : r1.rows) {
    EXPECT_EQ(row.examples, 300u);
    EXPECT_GT(row.accuracy, 0.5);
    EXPECT_EQ(row.ms, 0.0);
  }

  // Everything again from scratch: bit-identical artifacts.
  fs::remove_all(cfg.out);
  cmd_train(cfg, log);
  EXPECT_EQ(binio::read_file(weights_path(cfg, 0)), w0);
  const StatsTable st = cmd_stats(cfg, log);
  EXPECT_EQ(st.size(), 3u);
  EXPECT_TRUE(fs::exists(stats_path(cfg, method_setup("input-only", cfg), 1)));
  cmd_eval(cfg, log);
  EXPECT_EQ(binio::read_file(cfg.out / "report.csv"), csv1);
  const auto j = nlohmann::json::parse(std::ifstream(cfg.out / "report.json"));
  EXPECT_EQ(from_json(j), r1);
  fs::remove_all(dir);
}

TEST(Cli, ExitCodes) {
  const fs::path dir = fresh_dir("cli");
  std::ofstream(dir / "bad.conf") << "colour = red\n";
  std::ofstream(dir / "ok.conf") << tiny_config(dir / "out");
  EXPECT_EQ(cli({"eval", "--config", (dir / "bad.conf").string()}), kConfigError);
  EXPECT_EQ(cli({"eval"}), kConfigError);
  EXPECT_EQ(cli({"frobnicate"}), kConfigError);
  EXPECT_EQ(cli({"eval", "--config", (dir / "ok.conf").string()}), kConfigError);  // weights missing
  EXPECT_EQ(cli({"eval", "--config", (dir / "ok.conf").string(), "--spec", "diag"}), kConfigError);
  EXPECT_EQ(cli({"theory", "--out", (dir / "theory").string()}), kThresholdFailure);
  EXPECT_TRUE(fs::exists(dir / "theory" / "theory.csv"));
  fs::remove_all(dir);
}

}  // namespace
}  // namespace shiftmatch::harness
