#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "pbf/binary_io.hpp"
#include "pbf/cli.hpp"

using namespace pbf;

namespace {

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult run(std::initializer_list<std::string> args) {
  std::vector<std::string> storage{"pbf"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : storage) argv.push_back(s.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  std::string operator/(const std::string& leaf) const { return (path_ / leaf).string(); }

 private:
  std::filesystem::path path_;
};

void write_file(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

}  // namespace

TEST_CASE("cli usage errors exit 2") {
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"frobnicate"}).code == kExitUsage);
  const CliResult r = run({"generate-data"});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.rfind("pbf: error[usage]:", 0) == 0);
  CHECK(run({"generate-data", "--out", "x", "--seed", "abc"}).code == kExitUsage);
  CHECK(run({"--help"}).code == kExitOk);
}

TEST_CASE("cli config, io and numeric errors") {
  TempDir dir("pbf_cli_errors");
  CHECK(run({"generate-data", "--preset", "nope", "--out", dir / "d.pbfd"}).code == kExitConfig);
  CHECK(run({"generate-data", "--n-known", "0", "--out", dir / "d.pbfd"}).code == kExitConfig);
  CHECK(run({"evaluate", "--data", dir / "missing.pbfd"}).code == kExitIo);

  write_file(dir / "junk.pbfd", "not a dataset");
  const CliResult junk = run({"evaluate", "--data", dir / "junk.pbfd"});
  CHECK(junk.code == kExitIo);
  CHECK(junk.err.find("error[format]") != std::string::npos);

  write_file(dir / "bad.cfg", "schema = pbf-train/1\nepochs = 2\nunknown_key = 1\n");
  CHECK(run({"train", "--config", dir / "bad.cfg"}).code == kExitConfig);

  write_file(dir / "spec.cfg", "values = 1\nmethods = kalman_zf\nfd_ts = 0.7\n");
  CHECK(run({"sweep", "--spec", dir / "spec.cfg"}).code == kExitConfig);

  // An absurd learning rate blows the weights up by the second batch.
  REQUIRE(run({"generate-data", "--n-t", "2", "--k-users", "2", "--n-known", "3", "--p-predict", "2", "--count",
               "4", "--out", dir / "nan.pbfd"})
              .code == kExitOk);
  const CliResult diverged = run({"train", "--data", dir / "nan.pbfd", "--out", dir / "m.pbfm", "--epochs", "3",
                                  "--hidden", "4", "--lr", "1e300", "--quiet"});
  CHECK(diverged.code == kExitNumeric);
  CHECK(diverged.err.find("batch") != std::string::npos);
}

TEST_CASE("cli pipeline is byte-for-byte deterministic") {
  TempDir dir("pbf_cli_determinism");
  auto pipeline = [&](const std::string& tag) {
    const std::vector<std::string> scenario{"--n-t", "2", "--k-users", "2", "--n-known", "4", "--p-predict", "2"};
    auto gen = [&](const std::string& out, const std::string& seed, bool test) {
      std::vector<std::string> storage{"pbf", "generate-data"};
      storage.insert(storage.end(), scenario.begin(), scenario.end());
      for (const std::string& s : {std::string("--seed"), seed, std::string("--count"), std::string("8"),
                                   std::string("--out"), out})
        storage.push_back(s);
      if (test) {
        storage.push_back("--split");
        storage.push_back("test");
        storage.push_back("--no-labels");
      }
      std::vector<const char*> argv;
      for (const auto& s : storage) argv.push_back(s.c_str());
      std::ostringstream o, e;
      return run_cli(static_cast<int>(argv.size()), argv.data(), o, e);
    };
    REQUIRE(gen(dir / (tag + "train.pbfd"), "5", false) == kExitOk);
    REQUIRE(gen(dir / (tag + "test.pbfd"), "6", true) == kExitOk);
    REQUIRE(run({"train", "--data", dir / (tag + "train.pbfd"), "--out", dir / (tag + "m.pbfm"), "--epochs", "2",
                 "--hidden", "6", "--batch-size", "4", "--seed", "3", "--quiet", "--loss-csv", dir / (tag + "loss.csv")})
                .code == kExitOk);
    REQUIRE(run({"evaluate", "--data", dir / (tag + "test.pbfd"), "--checkpoint", dir / (tag + "m.pbfm"), "--out",
                 dir / (tag + "eval.csv")})
                .code == kExitOk);
  };
  pipeline("a_");
  pipeline("b_");
  for (const std::string leaf : {"train.pbfd", "test.pbfd", "m.pbfm", "loss.csv", "eval.csv"}) {
    INFO(leaf);
    CHECK(io::read_bytes(dir / ("a_" + leaf)) == io::read_bytes(dir / ("b_" + leaf)));
  }
  const std::string csv = io::read_text(dir / "a_eval.csv");
  CHECK(csv.find("proposed,none") != std::string::npos);
  CHECK(csv.find("kalman_zf,none") != std::string::npos);

  // Separate-mode and no-attention checkpoints are rejected for the wrong method.
  CHECK(run({"evaluate", "--data", dir / "a_test.pbfd", "--checkpoint-no-attention", dir / "a_m.pbfm", "--methods",
             "no_attention"})
            .code == kExitConfig);
}

TEST_CASE("cli labels and sweep") {
  TempDir dir("pbf_cli_sweep");
  REQUIRE(run({"generate-data", "--n-t", "2", "--k-users", "2", "--n-known", "3", "--p-predict", "2", "--count", "3",
               "--no-labels", "--out", dir / "raw.pbfd"})
              .code == kExitOk);
  CHECK(run({"labels", "--in", dir / "raw.pbfd", "--out", dir / "lab.pbfd"}).code == kExitOk);

  write_file(dir / "spec.cfg",
             "schema = pbf-experiment/1\nn_t = 2\nk_users = 2\nn_known = 3\nvariable = p_predict\nvalues = 1, 2\n"
             "methods = kalman_zf, estimation_zf\ntest_frames = 4\ntrain_frames = 1\n");
  const CliResult s1 = run({"sweep", "--spec", dir / "spec.cfg", "--out", dir / "s1.csv"});
  REQUIRE(s1.code == kExitOk);
  REQUIRE(run({"sweep", "--spec", dir / "spec.cfg", "--out", dir / "s2.csv"}).code == kExitOk);
  CHECK(io::read_bytes(dir / "s1.csv") == io::read_bytes(dir / "s2.csv"));
  CHECK(std::filesystem::exists(dir / "s1.csv.manifest.json"));
}

TEST_CASE("cli gradcheck passes and its threshold is enforced") {
  const CliResult ok = run({"gradcheck", "--samples", "40"});
  CHECK(ok.code == kExitOk);
  CHECK(ok.out.find("joint_objective") != std::string::npos);
  CHECK(run({"gradcheck", "--samples", "40", "--threshold", "1e-300"}).code == kExitGradcheck);
}
