#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "doctest.h"
#include "mvdp/evaluation.hpp"
#include "temp_dir.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string output;  // stdout and stderr interleaved
};

Result mvdp_run(const std::string& args) {
  const std::string cmd = std::string(MVDP_CLI_PATH) + " " + args + " 2>&1";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), static_cast<int>(buf.size()), pipe) != nullptr) r.output += buf.data();
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

bool contains(const std::string& s, const std::string& what) { return s.find(what) != std::string::npos; }

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors exit with 2") {
  if (std::string(MVDP_CLI_PATH).empty()) return;
  auto r = mvdp_run("gen-data --stage bogus --split train --count 1");
  CHECK(r.code == 2);
  CHECK(contains(r.output, "--stage"));
  CHECK(mvdp_run("").code == 2);
  CHECK(mvdp_run("no-such-command").code == 2);
  CHECK(mvdp_run("gen-data --count -3").code == 2);
  r = mvdp_run("--help");
  CHECK(r.code == 0);
  CHECK(contains(r.output, "gen-data"));
}

TEST_CASE("dataset generation is repeatable") {
  if (std::string(MVDP_CLI_PATH).empty()) return;
  test::TempDir dir("cli_gen");
  const auto a = dir.path() / "a", b = dir.path() / "b";
  const std::string common = " --stage easy --split train --count 100 --cameras 3 --seed 7 --size 32";
  auto r = mvdp_run("gen-data" + common + " --out " + a.string());
  REQUIRE(r.code == 0);
  CHECK(contains(r.output, "wrote 100 samples"));
  REQUIRE(mvdp_run("gen-data" + common + " --out " + b.string()).code == 0);
  CHECK(slurp(a / "easy_train.mvds") == slurp(b / "easy_train.mvds"));
  CHECK(slurp(a / "easy_train.manifest") == slurp(b / "easy_train.manifest"));
  CHECK_FALSE(fs::exists(a / ".mvdp.lock"));

  // A held lock refuses to write.
  std::ofstream(a / ".mvdp.lock") << "1\n";
  r = mvdp_run("gen-data" + common + " --out " + a.string());
  CHECK(r.code == 1);
  CHECK(contains(r.output, "locked"));
}

TEST_CASE("train, run, eval and bench with the oracle") {
  if (std::string(MVDP_CLI_PATH).empty()) return;
  test::TempDir dir("cli_pipeline");
  const auto d = dir.path().string();
  REQUIRE(mvdp_run("gen-data --stage easy --split train --count 40 --cameras 2 --size 48 --seed 1 --out " + d).code == 0);
  REQUIRE(mvdp_run("gen-data --stage easy --split test --count 8 --cameras 2 --size 48 --seed 2 --sequence-length 4 --out " + d).code == 0);
  const std::string reg = (dir.path() / "reg.mvdm").string();
  auto r = mvdp_run("train-regressor --train " + d + "/easy_train.mvds --classifier oracle --folds 4 --out " + reg);
  REQUIRE(r.code == 0);
  CHECK(contains(r.output, "selected lambda"));
  CHECK(fs::exists(reg + ".cv.csv"));

  const auto on = dir.path() / "on", off = dir.path() / "off";
  r = mvdp_run("run --data " + d + "/easy_test.mvds --regressor " + reg + " --out-dir " + on.string());
  REQUIRE(r.code == 0);
  CHECK(contains(r.output, "frames/s"));
  REQUIRE(mvdp_run("run --data " + d + "/easy_test.mvds --regressor " + reg + " --smoothing off --out-dir " + off.string()).code == 0);
  const auto p_on = mvdp::read_predictions(on / "predictions.csv");
  const auto p_off = mvdp::read_predictions(off / "predictions.csv");
  REQUIRE(p_on.size() == 8);
  for (const auto& p : p_on) CHECK(p.size() == 21);
  CHECK(p_on[0] == p_off[0]);

  r = mvdp_run("eval --pred " + (on / "groundtruth.csv").string() + " --truth " + (on / "groundtruth.csv").string());
  CHECK(r.code == 0);
  CHECK(contains(r.output, "mean joint error: 0.0000 m"));
  CHECK(contains(r.output, "precision@0.10 m: 1.0000"));

  // Frame count mismatch is a runtime failure.
  std::ofstream(dir.path() / "short.csv") << "frame,joint,x,y,z\n0,0,0,0,0\n";
  r = mvdp_run("eval --pred " + (dir.path() / "short.csv").string() + " --truth " + (on / "groundtruth.csv").string());
  CHECK(r.code == 1);

  r = mvdp_run("bench --data " + d + "/easy_test.mvds --regressor " + reg + " --frames 8");
  CHECK(r.code == 0);
  CHECK(contains(r.output, "p95_ms"));
  CHECK(contains(r.output, "non-classifier stages"));
}

TEST_CASE("classifier training is repeatable") {
  if (std::string(MVDP_CLI_PATH).empty()) return;
  test::TempDir dir("cli_train");
  const auto d = dir.path().string();
  for (const char* split : {"train", "validation"}) {
    REQUIRE(mvdp_run(std::string("gen-data --stage easy --split ") + split + " --count 6 --cameras 1 --size 48 --seed 3 --out " + d).code == 0);
  }
  const std::string args = " --data " + d + " --stages easy --iterations 4 --batch 2 --size 32 --channels 4 8 --fusion-stages 1 --final-kernel 3 --quiet";
  REQUIRE(mvdp_run("train-classifier" + args + " --out " + d + "/a.mvdm").code == 0);
  REQUIRE(mvdp_run("train-classifier" + args + " --out " + d + "/b.mvdm").code == 0);
  CHECK(slurp(dir.path() / "a.mvdm") == slurp(dir.path() / "b.mvdm"));
  CHECK(contains(slurp(dir.path() / "a.mvdm.accuracy.csv"), "stage,iteration,split,accuracy"));
  CHECK(mvdp_run("train-classifier --data " + d + " --stages bogus --out " + d + "/c.mvdm").code == 2);
}

}  // TEST_SUITE
