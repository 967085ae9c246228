#include "epoch_active/cli.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#ifndef EPOCH_ACTIVE_TOOL
#error "EPOCH_ACTIVE_TOOL must point at the built CLI"
#endif

using namespace epoch_active;
using namespace epoch_active::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("epoch_active_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << text;
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Everything after the leading `#` comment line.
std::string body(const fs::path& p) {
  const std::string s = slurp(p);
  return s.substr(s.find('\n') + 1);
}

std::size_t data_rows(const fs::path& csv) {
  std::ifstream in(csv);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#') ++n;
  }
  return n - 1;  // header
}

int tool(const std::string& args, const fs::path& stderr_file) {
  const std::string cmd = std::string(EPOCH_ACTIVE_TOOL) + " " + args + " 2> " + stderr_file.string();
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

const char* kMinimal = R"({
  "instance": {"kind": "example1", "d": 2},
  "sweep": [15],
  "trials": 1,
  "mc_eval": 500,
  "record_wall_time": false
})";

}  // namespace

TEST(Config, MaterializesDefaults) {
  const auto cfg = parse_config(kMinimal);
  const json j = to_json(cfg);
  EXPECT_EQ(j["learner"]["delta"], 0.1);
  EXPECT_EQ(j["class"]["kind"], "binary_ball_linear");
  EXPECT_EQ(j["learner"]["comp"]["pdim"], 2.0);
  EXPECT_EQ(j["theta"]["theta_norm"], "as_written");
  // Round trip: the resolved document parses to the same configuration.
  EXPECT_EQ(to_json(parse_config(j.dump())), j);
}

TEST(Config, RejectsBadFieldsWithLocation) {
  try {
    parse_config("{\n  \"learner\": {\n    \"delta\": 1.5\n  }\n}");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field, "learner.delta");
    EXPECT_EQ(e.line, 3u);
  }
  EXPECT_THROW(parse_config(R"({"instance": {"kind": "example1", "dee": 2}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"sweep": [15, 7]})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"trials": 0})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"instance": {"kind": "nope"}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"surrogate": {"kind": "squared"}, "class": {"kind": "multiclass_linear"}})"),
               ConfigError);
  try {
    parse_config("{\n  \"trials\": 1,\n  oops\n}");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line, 3u);
  }
}

TEST(Csv, NineSignificantDigits) {
  EXPECT_EQ(num(1.0 / 3.0), "0.333333333");
  EXPECT_EQ(num(0.0), "0");
  EXPECT_EQ(num(123456789012.0), "1.23456789e+11");
}

TEST(Run, MinimalConfigWritesTwoRows) {
  const auto dir = scratch("minimal");
  const auto cfg = write_config(dir, kMinimal);
  ASSERT_EQ(tool("run --config " + cfg.string() + " --out " + (dir / "out").string(), dir / "err"), 0);
  const auto csv = dir / "out" / "results.csv";
  EXPECT_EQ(data_rows(csv), 2u);
  const std::string s = slurp(csv);
  EXPECT_EQ(s.rfind("# ", 0), 0u);
  EXPECT_NE(s.find(std::string("\n") + kResultsHeader + "\n"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "out" / "runs" / "t0_n15.artifact"));
  EXPECT_TRUE(fs::exists(dir / "out" / "config.resolved.json"));
}

TEST(Run, MalformedDeltaExitsTwoNamingTheField) {
  const auto dir = scratch("delta");
  const auto cfg = write_config(dir, R"({"instance": {"kind": "example1"}, "learner": {"delta": 1.5}})");
  EXPECT_EQ(tool("run --config " + cfg.string() + " --out " + (dir / "out").string(), dir / "err"), 2);
  EXPECT_NE(slurp(dir / "err").find("learner.delta"), std::string::npos);
}

TEST(Run, SweepTimesTrialsRowsAndInvariants) {
  const auto dir = scratch("sweep");
  const auto cfg = write_config(dir, R"({
    "instance": {"kind": "massart_linear", "d": 2, "gamma": 0.4},
    "learner": {"b_constant": 0.01},
    "sweep": [7, 15, 31],
    "trials": 3,
    "mc_eval": 500,
    "fstar_samples": 5000,
    "record_wall_time": false
  })");
  Overrides o;
  o.out = (dir / "out").string();
  o.jobs = 3;
  ASSERT_EQ(cmd_run(cfg.string(), o), 0);
  const auto rows = read_results((dir / "out" / "results.csv").string());
  ASSERT_EQ(rows.size(), 18u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    EXPECT_EQ(r.trial, i / 6);
    EXPECT_EQ(r.n, std::vector<std::size_t>({7, 15, 31})[(i / 2) % 3]);
    EXPECT_LE(r.N, r.n);
    EXPECT_GE(r.excess_class_risk, -3.0 * r.stderr_class);
  }
  // Passive rows use the active learner's label count.
  for (std::size_t i = 0; i < rows.size(); i += 2) EXPECT_EQ(rows[i + 1].N, std::max<std::size_t>(rows[i].N, 1));
}

TEST(Run, RerunsAreByteIdentical) {
  const auto dir = scratch("rerun");
  const auto cfg = write_config(dir, R"({
    "instance": {"kind": "massart_linear", "d": 2, "gamma": 0.3, "seed": 4},
    "learner": {"b_constant": 0.01},
    "sweep": [15, 63],
    "trials": 2,
    "mc_eval": 400,
    "fstar_samples": 4000,
    "record_wall_time": false
  })");
  Overrides a;
  a.out = (dir / "a").string();
  Overrides b = a;
  b.out = (dir / "b").string();
  b.jobs = 4;
  ASSERT_EQ(cmd_run(cfg.string(), a), 0);
  ASSERT_EQ(cmd_run(cfg.string(), b), 0);
  EXPECT_EQ(body(dir / "a" / "results.csv"), body(dir / "b" / "results.csv"));
  EXPECT_EQ(slurp(dir / "a" / "runs" / "t1_n63.artifact"), slurp(dir / "b" / "runs" / "t1_n63.artifact"));

  Overrides c = a;
  c.out = (dir / "c").string();
  c.seed = 99;
  ASSERT_EQ(cmd_run(cfg.string(), c), 0);
  EXPECT_NE(body(dir / "a" / "results.csv"), body(dir / "c" / "results.csv"));
}

TEST(Run, ArtifactRoundTrip) {
  const auto dir = scratch("artifact");
  const auto cfg = write_config(dir, R"({
    "instance": {"kind": "massart_linear", "d": 3, "gamma": 0.3},
    "learner": {"b_constant": 0.01},
    "sweep": [31],
    "mc_eval": 200,
    "fstar_samples": 2000,
    "record_wall_time": false
  })");
  Overrides o;
  o.out = (dir / "out").string();
  ASSERT_EQ(cmd_run(cfg.string(), o), 0);
  const auto [meta, epochs] = read_artifact(dir / "out" / "runs" / "t0_n31.artifact");
  EXPECT_EQ(meta["learner"]["b_constant"], 0.01);
  EXPECT_EQ(meta["learner"]["disagree"]["restarts"], 2);
  EXPECT_EQ(meta["run"]["n"], 31);
  ASSERT_EQ(epochs.size(), num_epochs(31));
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    EXPECT_EQ(epochs[i].index, i + 1);
    EXPECT_EQ(epochs[i].params.size(), 3);
    EXPECT_LE(epochs[i].params.norm(), 1.0 + 1e-9);
    total += epochs[i].queried;
  }
  EXPECT_EQ(total, meta["run"]["queries"].get<std::uint64_t>());
}

TEST(Verify, Example1Passes) {
  const auto dir = scratch("verify1");
  const auto cfg = write_config(dir, R"({"instance": {"kind": "example1", "d": 3}, "mc_eval": 100})");
  ASSERT_EQ(tool("verify --config " + cfg.string() + " --out " + (dir / "out").string(), dir / "err"), 0);
  EXPECT_NE(slurp(dir / "out" / "verify.csv").find("assumption,S=012,6,0,"), std::string::npos);
}

TEST(Verify, Example2IdentityFails) {
  const auto dir = scratch("verify2");
  const auto cfg = write_config(dir, R"({
    "instance": {"kind": "example2", "d": 1, "gamma": 0.1, "delta_prime": 0.01},
    "verify": {"psi": {"kind": "identity"}}
  })");
  const int rc = tool("verify --config " + cfg.string() + " --out " + (dir / "out").string(), dir / "err");
  EXPECT_NE(rc, 0);
  EXPECT_EQ(rc, exit_violations);
  EXPECT_NE(slurp(dir / "out" / "verify.csv").find("bound,f0,,,,0.2,"), std::string::npos);
}

TEST(Verify, Claim1FamilyPasses) {
  const auto dir = scratch("verify3");
  const auto cfg = write_config(dir, R"({
    "instance": {"kind": "linf_approx_realizable", "d": 3, "gamma": 0.3, "epsilon": 0.1},
    "mc_eval": 5000,
    "fstar_samples": 50000,
    "verify": {"samples": 20000}
  })");
  Overrides o;
  o.out = (dir / "out").string();
  EXPECT_EQ(cmd_verify(cfg.string(), o), 0) << slurp(dir / "out" / "verify.csv");
}

TEST(Theta, GridShapesAndErrors) {
  const auto dir = scratch("theta");
  const auto cfg = write_config(dir, R"({"instance": {"kind": "example1", "d": 2}, "theta": {"restarts": 2}})");
  const std::string base = "theta --config " + cfg.string() + " --out " + (dir / "out").string();
  ASSERT_EQ(tool(base + " --gamma 0.1 --epsilon 0.2", dir / "err"), 0);
  EXPECT_EQ(data_rows(dir / "out" / "theta.csv"), 1u);
  EXPECT_EQ(tool(base + " --gamma 0,0.1 --epsilon 0.2", dir / "err"), 2);
  ASSERT_EQ(tool(base + " --gamma 0.05,0.1,0.2 --epsilon 0.05,0.1,0.2", dir / "err"), 0);
  EXPECT_EQ(data_rows(dir / "out" / "theta.csv"), 9u);
  std::ifstream in(dir / "out" / "theta.csv");
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto first = line.find(',');
    const auto second = line.find(',', first + 1);
    EXPECT_GE(std::stod(line.substr(second + 1)), 1.0) << line;
  }
}

TEST(Report, AggregatesAndFits) {
  const auto dir = scratch("report");
  const auto cfg = write_config(dir, R"({
    "instance": {"kind": "massart_linear", "d": 1, "gamma": 0.2},
    "learner": {"b_constant": 0.01},
    "sweep": [31, 63, 127, 255],
    "trials": 2,
    "mc_eval": 2000,
    "fstar_samples": 5000,
    "record_wall_time": false
  })");
  Overrides o;
  o.out = (dir / "out").string();
  ASSERT_EQ(cmd_run(cfg.string(), o), 0);
  ASSERT_EQ(tool("report --out " + (dir / "out").string(), dir / "err"), 0);
  const std::string dat = slurp(dir / "out" / "report.dat");
  EXPECT_NE(dat.find("31 active"), std::string::npos);
  EXPECT_NE(dat.find("255 passive"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "out" / "report.txt"));
  EXPECT_EQ(tool("report --out " + (dir / "missing").string(), dir / "err"), 1);
}
