#include <nlohmann/json.hpp>

#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

struct RunResult {
  int status = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const char* bin = std::getenv("SPECPART_BIN");
    if (!bin) GTEST_SKIP() << "SPECPART_BIN not set";
    bin_ = bin;
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    root_ = fs::temp_directory_path() / ("specpart-cli-" + std::string(info->name()) + "-" + std::to_string(::getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override {
    if (!root_.empty()) fs::remove_all(root_);
  }

  fs::path write_config(const std::string& name, const std::string& text) {
    const fs::path p = root_ / name;
    std::ofstream(p) << text;
    return p;
  }

  RunResult run(const std::string& args, const std::string& env = "") {
    const fs::path o = root_ / "stdout.txt", e = root_ / "stderr.txt";
    const std::string cmd = env + " '" + bin_ + "' " + args + " >'" + o.string() + "' 2>'" + e.string() + "'";
    const int raw = std::system(cmd.c_str());
    RunResult r;
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.out = slurp(o);
    r.err = slurp(e);
    return r;
  }

  static std::string minimal(const std::string& output, const std::string& extra = "") {
    return "[model]\nname = diag_multiplier\n\n[run]\nlambdas = 8\nK = 2\nseed = 7\noutput = " + output + "\n" + extra +
           "\n[stages]\npartition = true\n";
  }

  std::string bin_;
  fs::path root_;
};

std::set<std::string> manifest_files(const fs::path& dir) {
  std::set<std::string> out;
  const Json m = Json::parse(slurp(dir / "manifest.json"));
  for (const auto& f : m.at("files")) out.insert(f.at("path").get<std::string>());
  return out;
}

}  // namespace

TEST_F(Cli, MinimalRunWritesFourFiles) {
  const auto cfg = write_config("min.ini", minimal("out"));
  const RunResult r = run("run --config '" + cfg.string() + "'");
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(manifest_files(root_ / "out"),
            (std::set<std::string>{"partition_L8.csv", "partition_L8.json", "residual_log.csv", "summary.json"}));
  EXPECT_NE(r.out.find("manifest.json"), std::string::npos);
  const Json m = Json::parse(slurp(root_ / "out" / "manifest.json"));
  for (const auto& f : m.at("files"))
    EXPECT_EQ(f.at("bytes").get<std::size_t>(), fs::file_size(root_ / "out" / f.at("path").get<std::string>()));
  EXPECT_EQ(Json::parse(slurp(root_ / "out" / "summary.json")).at("status"), "pass");
  EXPECT_FALSE(fs::exists(root_ / "out" / ".specpart.lock"));
}

TEST_F(Cli, SecondRunServesSpectraFromTheCache) {
  const auto cfg = write_config("min.ini", minimal("out"));
  ASSERT_EQ(run("run --config '" + cfg.string() + "'").status, 0);
  const Json first = Json::parse(slurp(root_ / "out" / "manifest.json"));
  ASSERT_EQ(run("run --config '" + cfg.string() + "'").status, 0);
  const Json second = Json::parse(slurp(root_ / "out" / "manifest.json"));
  ASSERT_FALSE(second.at("spectra").empty());
  for (const auto& s : first.at("spectra")) EXPECT_FALSE(s.at("cached").get<bool>());
  for (const auto& s : second.at("spectra")) EXPECT_TRUE(s.at("cached").get<bool>());
  EXPECT_EQ(first.at("files"), second.at("files"));
}

TEST_F(Cli, CacheDirectoryPrecedence) {
  const auto cfg = write_config("min.ini", minimal("out"));
  ASSERT_EQ(run("run --config '" + cfg.string() + "'", "SPECPART_CACHE='" + (root_ / "env").string() + "'").status, 0);
  EXPECT_FALSE(fs::is_empty(root_ / "env"));
  ASSERT_EQ(run("run --config '" + cfg.string() + "' --cache-dir '" + (root_ / "flag").string() + "'",
                "SPECPART_CACHE='" + (root_ / "env").string() + "'")
                .status,
            0);
  EXPECT_FALSE(fs::is_empty(root_ / "flag"));
  EXPECT_FALSE(fs::exists(root_ / "out" / "cache"));
}

TEST_F(Cli, GapBoundViolationIsAConfigError) {
  const auto cfg = write_config(
      "bad.ini", "[model]\nname = two_speed_perturbed\neps = 0.7\n\n[run]\nlambdas = 8\noutput = out\n");
  const RunResult r = run("run --config '" + cfg.string() + "'");
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.err.find("violates the gap bound"), std::string::npos) << r.err;
}

TEST_F(Cli, MalformedInputsAreConfigErrors) {
  const auto unknown = write_config("unknown.ini", minimal("out", "colour = blue\n"));
  EXPECT_EQ(run("run --config '" + unknown.string() + "'").status, 2);
  const auto range = write_config("range.ini", "[model]\nname = two_speed\n[run]\nlambdas = 2\n");
  EXPECT_EQ(run("run --config '" + range.string() + "'").status, 2);
  EXPECT_EQ(run("run --config '" + (root_ / "missing.ini").string() + "'").status, 2);
  EXPECT_EQ(run("no-such-command").status, 2);
  EXPECT_EQ(run("run").status, 2);
}

TEST_F(Cli, IdenticalRunsAreByteIdentical) {
  const auto a = write_config("a.ini", minimal("outa"));
  const auto b = write_config("b.ini", minimal("outb"));
  ASSERT_EQ(run("run --config '" + a.string() + "'").status, 0);
  ASSERT_EQ(run("run --config '" + b.string() + "'").status, 0);
  ASSERT_EQ(manifest_files(root_ / "outa"), manifest_files(root_ / "outb"));
  for (const auto& f : manifest_files(root_ / "outa")) EXPECT_EQ(slurp(root_ / "outa" / f), slurp(root_ / "outb" / f)) << f;
  EXPECT_EQ(slurp(root_ / "outa" / "manifest.json"), slurp(root_ / "outb" / "manifest.json"));
}

TEST_F(Cli, SeedOverrideChangesTheConfigDigest) {
  const auto cfg = write_config("min.ini", minimal("out"));
  ASSERT_EQ(run("run --config '" + cfg.string() + "'").status, 0);
  const std::string h1 = Json::parse(slurp(root_ / "out" / "summary.json")).at("config_hash");
  ASSERT_EQ(run("run --config '" + cfg.string() + "' --seed 8 --output '" + (root_ / "o2").string() + "'").status, 0);
  const std::string h2 = Json::parse(slurp(root_ / "o2" / "summary.json")).at("config_hash");
  EXPECT_NE(h1, h2);
}

TEST_F(Cli, ReportAggregatesAndVerifiesDigests) {
  const auto cfg = write_config("min.ini", minimal("out"));
  ASSERT_EQ(run("check-symbols --config '" + cfg.string() + "'").status, 0);
  EXPECT_TRUE(fs::exists(root_ / "out" / "symbol_check.json"));
  ASSERT_EQ(run("run --config '" + cfg.string() + "'").status, 0);
  const RunResult r = run("report --output '" + (root_ / "out").string() + "'");
  ASSERT_EQ(r.status, 0) << r.err;
  const Json rep = Json::parse(slurp(root_ / "out" / "report.json"));
  EXPECT_EQ(rep.at("status"), "pass");
  EXPECT_TRUE(rep.at("reports").contains("summary"));
  EXPECT_TRUE(rep.at("reports").contains("partition_L8"));
  EXPECT_TRUE(manifest_files(root_ / "out").count("report.json"));
  std::ofstream(root_ / "out" / "partition_L8.csv", std::ios::app) << "tampered\n";
  EXPECT_EQ(run("report --output '" + (root_ / "out").string() + "'").status, 3);
}

TEST_F(Cli, LockedOutputDirectoryIsRefused) {
  const auto cfg = write_config("min.ini", minimal("out"));
  fs::create_directories(root_ / "out");
  std::ofstream(root_ / "out" / ".specpart.lock") << "";
  const RunResult r = run("run --config '" + cfg.string() + "'");
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.err.find("locked"), std::string::npos) << r.err;
}

TEST_F(Cli, FailedChecksExitWithStatusOne) {
  // too few trusted eigenvalues at this cutoff for the Weyl fits
  const auto cfg = write_config("fail.ini",
                                "[model]\nname = two_speed\n\n[run]\nlambdas = 6\noutput = out\n\n"
                                "[stages]\npartition = false\nweyl = true\n");
  const RunResult r = run("run --config '" + cfg.string() + "'");
  EXPECT_EQ(r.status, 1) << r.err;
  const Json s = Json::parse(slurp(root_ / "out" / "summary.json"));
  EXPECT_EQ(s.at("status"), "fail");
  EXPECT_EQ(run("report --output '" + (root_ / "out").string() + "'").status, 1);
}

TEST_F(Cli, BandOverflowIsARuntimeError) {
  const auto cfg = write_config("band.ini",
                                "[model]\nname = two_speed_perturbed\neps = 0.4\n\n[run]\nlambdas = 8\nK = 1\n"
                                "output = out\n\n[stages]\npartition = true\n");
  const RunResult r = run("run --config '" + cfg.string() + "'");
  EXPECT_EQ(r.status, 3);
  EXPECT_NE(r.err.find("band overflow"), std::string::npos) << r.err;
}
