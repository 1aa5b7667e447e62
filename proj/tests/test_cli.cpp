#include "doctest_torch.hpp"

#include <cstdlib>
#include <string>
#include <sys/wait.h>

#include "agegan/phantom.hpp"
#include "agegan/tensor_io.hpp"
#include "json.hpp"
#include "test_support.hpp"

using testing::TempDir;
namespace fs = std::filesystem;

namespace {

// Runs the CLI with output captured into `log`; returns the exit status.
int run(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(AGEGAN_CLI_PATH) + " " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

int count_files(const fs::path& dir) {
  int n = 0;
  for (const auto& e : fs::directory_iterator(dir)) n += e.is_regular_file() ? 1 : 0;
  return n;
}

// A small dataset plus two short training runs, shared by the cases below.
struct Workspace {
  TempDir dir{"cli"};
  fs::path data = dir / "data";
  fs::path acgan = dir / "run_acgan";
  fs::path dcgan = dir / "run_dcgan";
  std::string train_flags = " --resolution 64 --width-mult 1/16 --epochs 2 --seed 3";
  Workspace() {
    REQUIRE(run("phantom --out " + data.string() + " --per-class 30 --patients-per-class 5 --resolution 96 --seed 2",
                dir / "phantom.log") == 0);
    REQUIRE(run("train --data " + data.string() + " --arch age-acgan --out " + acgan.string() + train_flags,
                dir / "train_a.log") == 0);
    REQUIRE(run("train --data " + data.string() + " --arch dcgan --out " + dcgan.string() + train_flags,
                dir / "train_d.log") == 0);
  }
};

Workspace& ws() {
  static Workspace w;
  return w;
}

}  // namespace

TEST_CASE("help exits zero for every subcommand") {
  TempDir dir("help");
  CHECK(run("--help", dir / "h.log") == 0);
  for (const char* sub : {"phantom", "train", "synth", "eval", "compare"}) {
    CHECK(run(std::string(sub) + " --help", dir / "h.log") == 0);
    CHECK(testing::read_bytes(dir / "h.log").find("--") != std::string::npos);
  }
}

TEST_CASE("usage errors exit two") {
  TempDir dir("usage");
  CHECK(run("", dir / "u.log") == 2);
  CHECK(run("frobnicate", dir / "u.log") == 2);
  CHECK(run("phantom --per-class 3", dir / "u.log") == 2);
  CHECK(testing::read_bytes(dir / "u.log").find("--out") != std::string::npos);
  CHECK(run("phantom --out " + (dir / "d").string() + " --per-class 7 --patients-per-class 5", dir / "u.log") == 2);
  CHECK(run("train --data x --out y --arch bogus", dir / "u.log") == 2);
  CHECK(run("train --data x --out y --width-mult one", dir / "u.log") == 2);
  CHECK(run("train --data x --out y --batch 1", dir / "u.log") == 2);
}

TEST_CASE("phantom defaults write 300 sample pairs and a manifest") {
  TempDir dir("phdef");
  const auto out = dir / "data";
  REQUIRE(run("phantom --out " + out.string(), dir / "p.log") == 0);
  CHECK(count_files(out / "ct") == 300);
  CHECK(count_files(out / "mask") == 300);
  auto m = agegan::load_manifest(out);
  CHECK(m.entries.size() == 300);
  CHECK(m.resolution == 128);
  for (int c = 0; c < 3; ++c) CHECK(m.count(agegan::age_class_from_index(c)) == 100);
}

TEST_CASE("phantom with zero per class writes an empty valid manifest") {
  TempDir dir("phzero");
  REQUIRE(run("phantom --out " + (dir / "d").string() + " --per-class 0", dir / "p.log") == 0);
  auto m = agegan::load_manifest(dir / "d");
  CHECK(m.entries.empty());
  CHECK_NOTHROW(m.validate());
}

TEST_CASE("phantom config file overrides parameters") {
  TempDir dir("phcfg");
  {
    std::ofstream cfg(dir / "p.json");
    cfg << R"({"resolution": 80, "organ_area_px": 300})";
  }
  REQUIRE(run("phantom --out " + (dir / "d").string() + " --per-class 5 --config " + (dir / "p.json").string(),
              dir / "p.log") == 0);
  CHECK(agegan::load_manifest(dir / "d").resolution == 80);
}

TEST_CASE("train smoke run writes losses and final checkpoint") {
  auto& w = ws();
  CHECK(fs::exists(w.acgan / "losses.csv"));
  CHECK(fs::exists(w.acgan / "final.ckpt"));
  CHECK(fs::exists(w.dcgan / "final.ckpt"));
  // 90 samples, batch 16: 6 iterations per epoch.
  const auto csv = testing::read_bytes(w.acgan / "losses.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 12);
}

TEST_CASE("train rerun with the same seed reproduces losses.csv") {
  auto& w = ws();
  const auto again = w.dir / "run_again";
  REQUIRE(run("train --data " + w.data.string() + " --arch age-acgan --out " + again.string() + w.train_flags,
              w.dir / "again.log") == 0);
  CHECK(testing::read_bytes(again / "losses.csv") == testing::read_bytes(w.acgan / "losses.csv"));
}

TEST_CASE("train config file is overridden by explicit flags") {
  auto& w = ws();
  {
    std::ofstream cfg(w.dir / "t.json");
    cfg << R"({"batch_size": 8, "epochs": 1, "seed": 9})";
  }
  const auto out = w.dir / "run_cfg";
  REQUIRE(run("train --data " + w.data.string() + " --out " + out.string() +
                  " --resolution 64 --width-mult 0.0625 --batch 10 --config " + (w.dir / "t.json").string(),
              w.dir / "cfg.log") == 0);
  // batch 10 from the flag, one epoch from the file: ceil(90 / 10) = 9 rows.
  const auto csv = testing::read_bytes(out / "losses.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 9);
}

TEST_CASE("synth writes samples, binary masks and a grid") {
  auto& w = ws();
  const auto out = w.dir / "synth";
  REQUIRE(run("synth --checkpoint " + (w.acgan / "final.ckpt").string() +
                  " --age-class adolescent --count 8 --seed 4 --out " + out.string(),
              w.dir / "s.log") == 0);
  CHECK(count_files(out / "ct") == 8);
  CHECK(count_files(out / "mask") == 8);
  CHECK(fs::exists(out / "grid.png"));
  for (const auto& e : fs::directory_iterator(out / "mask")) {
    auto m = agegan::load_tensor(e.path()).to(torch::kFloat64);
    CHECK(((m == 0) | (m == 1)).all().item<bool>());
    CHECK(m.size(0) == 64);
  }
}

TEST_CASE("synth usage errors") {
  auto& w = ws();
  const auto ckpt = (w.acgan / "final.ckpt").string();
  CHECK(run("synth --checkpoint " + ckpt + " --age-class infant --threshold 1.5 --out " + (w.dir / "x").string(),
            w.dir / "s.log") == 2);
  CHECK(run("synth --checkpoint " + ckpt + " --age-class toddler --out " + (w.dir / "x").string(), w.dir / "s.log") ==
        2);
  CHECK(run("synth --checkpoint " + (w.dcgan / "final.ckpt").string() + " --age-class infant --out " +
                (w.dir / "x").string(),
            w.dir / "s.log") == 2);
  CHECK(run("synth --checkpoint " + (w.dir / "none.ckpt").string() + " --age-class infant --out " +
                (w.dir / "x").string(),
            w.dir / "s.log") == 1);
}

TEST_CASE("synth from the unconditional baseline without a class") {
  auto& w = ws();
  const auto out = w.dir / "synth_dc";
  REQUIRE(run("synth --checkpoint " + (w.dcgan / "final.ckpt").string() + " --count 3 --out " + out.string(),
              w.dir / "s.log") == 0);
  CHECK(count_files(out / "ct") == 3);
}

TEST_CASE("eval emits trend, fidelity and grids") {
  auto& w = ws();
  const int code = run("eval --run " + w.acgan.string() + " --data " + w.data.string() + " --n-per-class 32 --seed 5",
                       w.dir / "e.log");
  REQUIRE(code == 0);
  CHECK(fs::exists(w.acgan / "trend.json"));
  CHECK(fs::exists(w.acgan / "fidelity.json"));
  for (const char* c : {"infant", "preschool", "adolescent"}) {
    CHECK(fs::exists(w.acgan / (std::string("grid_") + c + ".png")));
  }
  auto j = nlohmann::json::parse(testing::read_bytes(w.acgan / "fidelity.json"));
  CHECK(j.contains("overall_accuracy"));
}

TEST_CASE("eval on a run without final.ckpt exits one with a message") {
  auto& w = ws();
  const auto empty = w.dir / "empty_run";
  fs::create_directories(empty);
  CHECK(run("eval --run " + empty.string() + " --data " + w.data.string(), w.dir / "e.log") == 1);
  CHECK(testing::read_bytes(w.dir / "e.log").find("final.ckpt") != std::string::npos);
}

TEST_CASE("compare writes two curves on one iteration grid") {
  auto& w = ws();
  const auto out = w.dir / "cmp";
  REQUIRE(run("compare --data " + w.data.string() + " --out " + out.string() +
                  " --resolution 64 --width-mult 1/16 --iterations 60 --seed 3",
              w.dir / "c.log") == 0);
  const auto csv = testing::read_bytes(out / "comparison.csv");
  CHECK(csv.rfind("iter,age_acgan,dcgan\n", 0) == 0);
  // 60 iterations with a 50-wide window: 11 smoothed points.
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 11);
  CHECK(fs::exists(out / "age_acgan" / "losses.csv"));
  CHECK(fs::exists(out / "dcgan" / "losses.csv"));
}
