#include <doctest.h>

#include <sstream>

#include "dlab/cli.hpp"
#include "dlab/experiment.hpp"
#include "support.hpp"

using namespace dlab;
using dlab::test::TempDir;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "dlab");
  std::ostringstream out, err;
  const int code = dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

const std::string kTiny = "synth:classes=3,train=60,eval=30,side=8,channels=1";

bool one_error_line(const std::string& err, const std::string& kind) {
  return err.rfind("error: kind=" + kind + " message=\"", 0) == 0 && err.find('\n') == err.size() - 1;
}

}  // namespace

TEST_CASE("usage errors exit 2 with one machine-readable line") {
  for (const auto& args : std::vector<std::vector<std::string>>{
           {"gradcheck"},
           {"train-teacher", "--out", "x"},
           {"gradcheck", "--seed", "1", "--bogus"},
           {"evaluate", "--seed", "1", "--out", "x"},
           {},
           {"frobnicate"},
           {"train-teacher", "--seed", "1", "--out", "x", "--strategy", "fmix"},
           {"distill", "--seed", "1", "--out", "x"},
       }) {
    const auto r = run(args);
    INFO(r.err);
    CHECK(r.code == kExitUsage);
    CHECK(one_error_line(r.err, "usage"));
  }
  const auto r = run({"evaluate", "--seed", "1", "--out", "x"});
  CHECK(r.err.find("--checkpoint") != std::string::npos);
}

TEST_CASE("help exits 0") {
  const auto r = run({"matrix", "--help"});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("--seed") != std::string::npos);
  CHECK(r.out.find("--from-manifest") != std::string::npos);
}

TEST_CASE("gradcheck subcommand") {
  const auto r = run({"gradcheck", "--seed", "1", "--precision", "f64"});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("PASS f64 dense") != std::string::npos);
  CHECK(r.out.find("FAIL") == std::string::npos);
}

TEST_CASE("synth, train, distill, evaluate, report, rerun") {
  TempDir dir;
  const auto synth = run({"synth", "--seed", "3", "--dataset", kTiny, "--out", (dir / "data").string()});
  REQUIRE(synth.code == kExitOk);
  const std::string data = "dir:" + (dir / "data").string();
  CHECK(fs::exists(dir / "data" / "train" / "images.dlab"));
  CHECK(fs::exists(dir / "data" / "shift" / "labels.dlab"));

  const auto teacher = run({"train-teacher", "--seed", "5", "--dataset", data, "--epochs", "1", "--strategy", "cutmix",
                            "--out", (dir / "t").string()});
  INFO(teacher.err);
  REQUIRE(teacher.code == kExitOk);
  CHECK(teacher.out.find("teacher/eval accuracy=") != std::string::npos);
  CHECK(fs::exists(dir / "t" / "teacher.ckpt"));
  CHECK(fs::exists(dir / "t" / "teacher" / "shift" / "report" / "reliability.csv"));

  const auto student = run({"distill", "--seed", "6", "--dataset", data, "--epochs", "1", "--teacher",
                            (dir / "t" / "teacher.ckpt").string(), "--temperature", "4", "--out",
                            (dir / "s").string()});
  INFO(student.err);
  REQUIRE(student.code == kExitOk);
  const auto m = read_manifest(dir / "s" / "manifest.json");
  CHECK(m.role == "student");
  CHECK(m.config.at("recipe").at("student").at("config").at("temperature").get<double>() == 4.0);

  SUBCASE("rerun reproduces metrics bitwise") {
    REQUIRE(run({"distill", "--from-manifest", (dir / "s" / "manifest.json").string(), "--out",
                 (dir / "s2").string()})
                .code == kExitOk);
    CHECK(test::read_text(dir / "s" / "metrics.csv") == test::read_text(dir / "s2" / "metrics.csv"));
    REQUIRE(run({"train-teacher", "--from-manifest", (dir / "t" / "manifest.json").string(), "--out",
                 (dir / "t2").string()})
                .code == kExitOk);
    CHECK(test::read_text(dir / "t" / "metrics.csv") == test::read_text(dir / "t2" / "metrics.csv"));
  }
  SUBCASE("manifest misuse") {
    auto r = run({"train-teacher", "--from-manifest", (dir / "s" / "manifest.json").string(), "--out",
                  (dir / "bad").string()});
    CHECK(r.code == kExitUsage);
    r = run({"distill", "--seed", "1", "--from-manifest", (dir / "s" / "manifest.json").string(), "--out",
             (dir / "bad2").string()});
    CHECK(r.code == kExitUsage);
  }
  SUBCASE("tampered artifact is an integrity failure") {
    test::write_bytes(dir / "s" / "student.ckpt.params", {0});
    const auto r = run({"distill", "--from-manifest", (dir / "s" / "manifest.json").string(), "--out",
                        (dir / "s3").string()});
    CHECK(r.code == kExitIntegrity);
    CHECK(one_error_line(r.err, "integrity"));
  }
  SUBCASE("evaluate and report") {
    REQUIRE(run({"evaluate", "--seed", "1", "--dataset", data, "--checkpoint", (dir / "s" / "student.ckpt").string(),
                 "--out", (dir / "e").string()})
                .code == kExitOk);
    CHECK(fs::exists(dir / "e" / "eval" / "probs.dlab"));
    const auto r = run({"report", "--seed", "1", "--dump", (dir / "e" / "eval").string(), "--embeddings", "--out",
                        (dir / "rep").string()});
    INFO(r.err);
    REQUIRE(r.code == kExitOk);
    CHECK(fs::exists(dir / "rep" / "kld_matrix.csv"));
    CHECK(fs::exists(dir / "rep" / "embeddings.dlab"));
  }
  SUBCASE("corrupt input is a format failure") {
    fs::create_directories(dir / "junk");
    test::write_bytes(dir / "junk" / "probs.dlab", {1, 2, 3});
    const auto r = run({"report", "--seed", "1", "--dump", (dir / "junk").string(), "--out", (dir / "r2").string()});
    CHECK(r.code == kExitFormat);
    CHECK(one_error_line(r.err, "format"));
  }
  SUBCASE("output directories are never overwritten") {
    const auto r = run({"train-teacher", "--seed", "5", "--dataset", data, "--epochs", "1", "--out",
                        (dir / "t").string()});
    CHECK(r.code != kExitOk);
  }
}
