#include <gtest/gtest.h>
#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "slc/data.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;

namespace slc {
namespace {

using testing::scratch_dir;

struct Result {
  int code;
  std::string out;
};

Result cli(const std::string& args) {
  const std::string cmd = std::string("\"") + SLC_CLI_PATH + "\" " + args + " 2>&1";
  std::string out;
  FILE* p = popen(cmd.c_str(), "r");
  std::array<char, 4096> buf{};
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), p)) out.append(buf.data(), n);
  const int status = pclose(p);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

std::string read_text(const fs::path& p) {
  const auto b = read_file_bytes(p);
  return {b.begin(), b.end()};
}

const fs::path kConfigs = SLC_CONFIG_DIR;

TEST(CliTest, UsageErrorsExitTwo) {
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("bogus").code, 2);
  EXPECT_EQ(cli("gradcheck --no-such-flag").code, 2);
  EXPECT_EQ(cli("gen --out /tmp/x").code, 2);
  EXPECT_EQ(cli("paramcount --spec /nonexistent.json").code, 2);
  EXPECT_EQ(cli("--help").code, 0);
}

TEST(CliGenTest, WritesLoadableDeterministicScans) {
  const auto dir = scratch_dir("cli_gen");
  ASSERT_EQ(cli("gen --config " + q(kConfigs / "synth_desk.json") + " --count 3 --out " + q(dir / "a")).code, 0);
  ASSERT_EQ(cli("gen --config " + q(kConfigs / "synth_desk.json") + " --count 3 --jobs 2 --out " + q(dir / "b")).code,
            0);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir / "a")) {
    ++files;
    const RangeScan s = read_rsc1(e.path());
    EXPECT_EQ(s.height(), 32u);
    EXPECT_EQ(s.width(), 128u);
    EXPECT_NO_THROW(s.validate());
    EXPECT_EQ(read_file_bytes(e.path()), read_file_bytes(dir / "b" / e.path().filename()));
  }
  EXPECT_EQ(files, 3u);
  ASSERT_EQ(cli("gen --config " + q(kConfigs / "synth_desk.json") + " --count 1 --seed 99 --out " + q(dir / "c")).code,
            0);
  EXPECT_NE(read_file_bytes(dir / "a/scan_0000.rsc"), read_file_bytes(dir / "c/scan_0000.rsc"));
}

TEST(CliGenTest, InvalidConfigExitsTwo) {
  const auto dir = scratch_dir("cli_gen_bad");
  write_text(dir / "bad.json", R"({"num_classes": 1})");
  write_text(dir / "typo.json", R"({"heigth": 8})");
  write_text(dir / "broken.json", "{");
  for (const char* f : {"bad.json", "typo.json", "broken.json"}) {
    const Result r = cli("gen --config " + q(dir / f) + " --out " + q(dir / "o"));
    EXPECT_EQ(r.code, 2) << f;
    EXPECT_NE(r.out.find("error"), std::string::npos) << f;
  }
}

TEST(CliProjectTest, ProjectsLabeledCloud) {
  const auto dir = scratch_dir("cli_project");
  const std::vector<Point> pts = {{1.0f, 0.0f, 0.0f, 0.25f}, {3.0f, 0.0f, 0.0f, 0.75f}, {0.0f, 2.0f, 0.0f, 0.5f}};
  write_file_bytes(dir / "c.bin", encode_point_cloud(pts));
  write_file_bytes(dir / "c.label", encode_labels(std::vector<std::uint32_t>{0x0001000A, 40, 99}));
  const Result r = cli("project --cloud " + q(dir / "c.bin") + " --labels " + q(dir / "c.label") + " --remap " +
                       q(kConfigs / "remap_example.json") + " --h 64 --w 512 --fov-up 15 --fov-down -15 --out " +
                       q(dir / "out/s.rsc"));
  ASSERT_EQ(r.code, 0) << r.out;
  const RangeScan s = read_rsc1(dir / "out/s.rsc");
  EXPECT_EQ(s.height(), 64u);
  EXPECT_EQ(s.image.at({32, 256, 0}), 1.0);  // nearer of the two points on the x axis
  EXPECT_EQ(s.labels[32 * 512 + 256], 1);    // raw 10 -> 1
  EXPECT_EQ(s.labels[32 * 512 + 128], 0);    // raw 99 is not in the table
  EXPECT_EQ(s.mask[32 * 512 + 128], 1);
}

TEST(CliProjectTest, BadInputsExitTwo) {
  const auto dir = scratch_dir("cli_project_bad");
  write_file_bytes(dir / "c.bin", std::vector<std::uint8_t>(17, 0));
  EXPECT_EQ(cli("project --cloud " + q(dir / "c.bin") + " --out " + q(dir / "s.rsc")).code, 2);
  write_file_bytes(dir / "ok.bin", std::vector<std::uint8_t>(32, 0));
  write_file_bytes(dir / "short.label", std::vector<std::uint8_t>(4, 0));
  EXPECT_EQ(cli("project --cloud " + q(dir / "ok.bin") + " --labels " + q(dir / "short.label") + " --out " +
                q(dir / "s.rsc"))
                .code,
            2);
  EXPECT_EQ(cli("project --cloud " + q(dir / "ok.bin") + " --fov-up -30 --out " + q(dir / "s.rsc")).code, 2);
}

TEST(CliParamcountTest, DoublingAlphaDoublesInterior) {
  const auto dir = scratch_dir("cli_paramcount");
  const Result one = cli("paramcount --spec " + q(kConfigs / "reference_net.json"));
  ASSERT_EQ(one.code, 0);
  EXPECT_NE(one.out.find("interior ratio vs baseline: 1.000"), std::string::npos);
  const Result two = cli("paramcount --spec " + q(kConfigs / "reference_net.json") + " --alpha 2 --out " + q(dir));
  ASSERT_EQ(two.code, 0);
  EXPECT_NE(two.out.find("interior ratio vs baseline: 2.000"), std::string::npos);
  const auto j = nlohmann::json::parse(read_text(dir / "paramcount.json"));
  EXPECT_EQ(j["interior"].get<std::size_t>(), 2 * j["baseline_interior"].get<std::size_t>());
  const Result half = cli("paramcount --spec " + q(kConfigs / "reference_net.json") + " --divisor 2");
  EXPECT_NE(half.out.find("interior ratio vs baseline: 0.252"), std::string::npos);
  EXPECT_EQ(cli("paramcount --spec " + q(kConfigs / "reference_net.json") + " --divisor 3").code, 2);
  EXPECT_EQ(cli("paramcount --spec " + q(kConfigs / "reference_net.json") + " --alpha 64").code, 2);
}

TEST(CliGradcheckTest, ExitCodesAndDeterminism) {
  const auto dir = scratch_dir("cli_gradcheck");
  const Result a = cli("gradcheck --seed 5 --out " + q(dir));
  EXPECT_EQ(a.code, 0);
  EXPECT_NE(a.out.find("worst:"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "gradcheck.csv"));
  EXPECT_EQ(cli("gradcheck --seed 5").out, a.out);
  EXPECT_EQ(cli("gradcheck --seed 5 --corrupt").code, 1);
}

std::string tiny_experiment(const std::string& alphas, const std::string& divisors) {
  return R"({
    "network": {"input_shape": [8, 16, 2], "num_classes": 3, "layers": [
      {"kind": "conv", "out_channels": 4, "kernel": [3, 3]}, {"kind": "relu"},
      {"kind": "conv", "out_channels": 4, "kernel": [3, 3]}, {"kind": "relu"},
      {"kind": "conv", "out_channels": 3, "kernel": [1, 1]}]},
    "dataset": {"synthetic": {"height": 8, "width": 16, "num_classes": 3, "seed": 4}, "train_count": 4, "val_count": 2},
    "alphas": )" + alphas + R"(, "divisors": )" + divisors + R"(,
    "train": {"learning_rate": 0.05, "epochs": 2}
  })";
}

TEST(CliSweepTest, GridReportAndDeterminism) {
  const auto dir = scratch_dir("cli_sweep");
  write_text(dir / "exp.json", tiny_experiment("[1, 2, 4]", "[1, 2]"));
  const Result r = cli("sweep --experiment " + q(dir / "exp.json") + " --out " + q(dir / "a"));
  ASSERT_EQ(r.code, 0) << r.out;
  ASSERT_EQ(cli("sweep --experiment " + q(dir / "exp.json") + " --jobs 2 --out " + q(dir / "b")).code, 0);

  const std::string report = read_text(dir / "a/report.csv");
  EXPECT_EQ(report, read_text(dir / "b/report.csv"));
  EXPECT_TRUE(fs::exists(dir / "a/report.txt"));
  EXPECT_TRUE(fs::exists(dir / "a/channel_stats.json"));
  std::istringstream in(report);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "alpha,divisor,params_total,params_interior,param_ratio,matched,accuracy,miou");
  std::map<std::pair<int, int>, std::size_t> interior;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    int a = 0, d = 0;
    std::size_t total = 0, inner = 0;
    ASSERT_EQ(std::sscanf(line.c_str(), "%d,%d,%zu,%zu", &a, &d, &total, &inner), 4);
    interior[{a, d}] = inner;
  }
  EXPECT_EQ(rows, 6u);
  for (int d : {1, 2}) {
    EXPECT_EQ(interior[std::make_pair(2, d)], 2 * interior[std::make_pair(1, d)]);
    EXPECT_EQ(interior[std::make_pair(4, d)], 4 * interior[std::make_pair(1, d)]);
  }
  for (const char* cell : {"cell_a1_d1", "cell_a4_d2"}) {
    EXPECT_EQ(read_text(dir / "a" / cell / "metrics.csv"), read_text(dir / "b" / cell / "metrics.csv"));
    EXPECT_NO_THROW(parse_network_spec(read_text(dir / "a" / cell / "spec.json")));
  }
}

TEST(CliSweepTest, SingleCellAndBadConfig) {
  const auto dir = scratch_dir("cli_sweep_one");
  write_text(dir / "exp.json", tiny_experiment("[1]", "[1]"));
  ASSERT_EQ(cli("sweep --experiment " + q(dir / "exp.json") + " --out " + q(dir / "o")).code, 0);
  std::ifstream in(dir / "o/report.csv");
  std::size_t lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  EXPECT_EQ(lines, 2u);

  write_text(dir / "zero.json", tiny_experiment("[0]", "[1]"));
  EXPECT_EQ(cli("sweep --experiment " + q(dir / "zero.json") + " --out " + q(dir / "z")).code, 2);
  write_text(dir / "tall.json", tiny_experiment("[16]", "[1]"));
  EXPECT_EQ(cli("sweep --experiment " + q(dir / "tall.json") + " --out " + q(dir / "t")).code, 2);
  write_text(dir / "odd.json", tiny_experiment("[1]", "[3]"));
  EXPECT_EQ(cli("sweep --experiment " + q(dir / "odd.json") + " --out " + q(dir / "d")).code, 2);
}

}  // namespace
}  // namespace slc
