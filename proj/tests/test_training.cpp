#include "doctest_torch.hpp"

#include <fstream>
#include <set>

#include "agegan/errors.hpp"
#include "agegan/training.hpp"
#include "test_support.hpp"

using namespace agegan;
using testing::TempDir;

namespace {

TrainConfig desk_config(uint64_t seed = 1) {
  TrainConfig c;
  c.resolution = 64;
  c.width_mult = 1.0 / 16;
  c.batch_size = 4;
  c.epochs = 1;
  c.seed = seed;
  return c;
}

// Random two-channel stand-in data; the trainer only needs the shapes.
TrainingSet random_set(int64_t n, uint64_t seed = 3) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  TrainingSet s;
  s.images = torch::rand({n, 2, 64, 64}, gen);
  s.labels = torch::arange(n, torch::kLong) % 3;
  for (int64_t i = 0; i < n; ++i) s.patient_ids.push_back(i);
  return s;
}

std::vector<torch::Tensor> snapshot(torch::nn::Module& m) {
  std::vector<torch::Tensor> out;
  for (const auto& p : m.parameters()) out.push_back(p.detach().clone());
  return out;
}

bool unchanged(torch::nn::Module& m, const std::vector<torch::Tensor>& before) {
  const auto params = m.parameters();
  for (size_t i = 0; i < params.size(); ++i) {
    if (!testing::same_bits(params[i].detach(), before[i])) return false;
  }
  return true;
}

double change_norm(torch::nn::Module& m, const std::vector<torch::Tensor>& before) {
  double sq = 0;
  const auto params = m.parameters();
  for (size_t i = 0; i < params.size(); ++i) sq += (params[i].detach() - before[i]).square().sum().item<double>();
  return std::sqrt(sq);
}

LossRow step(Trainer& t, const TrainingSet& data, int64_t it) {
  auto idx = batch_indices(it, data.size(), t.config().batch_size, t.config().seed);
  return t.train_step(data.images.index_select(0, idx), data.labels.index_select(0, idx));
}

}  // namespace

TEST_CASE("train config validation and json") {
  TrainConfig c;
  CHECK(c.batch_size == 16);
  CHECK(c.epochs == 3000);
  CHECK(c.learning_rate == 2e-4);
  CHECK(c.beta1 == 0.5);
  CHECK(c.beta2 == 0.999);
  CHECK(c.lambda_class == 1.0);
  CHECK_NOTHROW(c.validate());
  auto bad = c;
  bad.batch_size = 1;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  bad = c;
  bad.learning_rate = -1e-4;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);

  auto d = desk_config(9);
  nlohmann::json j = d;
  auto back = j.get<TrainConfig>();
  CHECK(nlohmann::json(back) == j);
  CHECK(nlohmann::json{{"seed", 4}}.get<TrainConfig>().batch_size == 16);
}

TEST_CASE("architecture names") {
  CHECK(architecture_name(Architecture::AgeAcgan) == "age-acgan");
  CHECK(architecture_from_name("dcgan") == Architecture::Dcgan);
  CHECK_THROWS_AS(architecture_from_name("bogus"), ArgumentError);
}

TEST_CASE("batch schedule") {
  CHECK(total_iterations(desk_config(), 10) == 3);
  auto c = desk_config();
  c.epochs = 5;
  CHECK(total_iterations(c, 12) == 15);
  c.max_iterations = 7;
  CHECK(total_iterations(c, 12) == 7);

  // One epoch of an evenly divisible dataset visits every sample once.
  std::set<int64_t> seen;
  for (int64_t it = 1; it <= 3; ++it) {
    auto idx = batch_indices(it, 12, 4, 5);
    for (int64_t i = 0; i < 4; ++i) seen.insert(idx[i].item<int64_t>());
  }
  CHECK(seen.size() == 12);
  CHECK(testing::same_bits(batch_indices(2, 12, 4, 5), batch_indices(2, 12, 4, 5)));
  CHECK_FALSE(testing::same_bits(batch_indices(1, 12, 4, 5), batch_indices(4, 12, 4, 5)));

  // A short final batch wraps to the start of the epoch's permutation.
  auto first = batch_indices(1, 10, 4, 5), last = batch_indices(3, 10, 4, 5);
  CHECK(last[2].item<int64_t>() == first[0].item<int64_t>());
  CHECK(last[3].item<int64_t>() == first[1].item<int64_t>());
}

TEST_CASE("one step changes both networks") {
  auto data = random_set(8);
  for (auto arch : {Architecture::AgeAcgan, Architecture::Dcgan}) {
    Trainer t(arch, desk_config());
    auto g0 = snapshot(t.model().generator()), d0 = snapshot(t.model().discriminator());
    auto row = step(t, data, 1);
    CHECK(row.iter == 1);
    CHECK(t.iteration() == 1);
    CHECK(change_norm(t.model().generator(), g0) > 0.0);
    CHECK(change_norm(t.model().discriminator(), d0) > 0.0);
  }
}

TEST_CASE("zero learning rate leaves parameters bit-identical") {
  auto data = random_set(8);
  auto c = desk_config();
  c.learning_rate = 0.0;
  for (auto arch : {Architecture::AgeAcgan, Architecture::Dcgan}) {
    Trainer t(arch, c);
    auto g0 = snapshot(t.model().generator()), d0 = snapshot(t.model().discriminator());
    step(t, data, 1);
    step(t, data, 2);
    CHECK(unchanged(t.model().generator(), g0));
    CHECK(unchanged(t.model().discriminator(), d0));
  }
}

TEST_CASE("each phase leaves the other network untouched") {
  auto data = random_set(8);
  Trainer t(Architecture::AgeAcgan, desk_config());
  for (int64_t it = 1; it <= 3; ++it) {
    LossRow row;
    row.iter = it;
    auto idx = batch_indices(it, data.size(), 4, 1);
    auto g0 = snapshot(t.model().generator());
    auto d0 = snapshot(t.model().discriminator());
    t.discriminator_phase(data.images.index_select(0, idx), data.labels.index_select(0, idx), row);
    CHECK(unchanged(t.model().generator(), g0));
    CHECK_FALSE(unchanged(t.model().discriminator(), d0));
    auto d1 = snapshot(t.model().discriminator());
    t.generator_phase(4, row);
    CHECK(unchanged(t.model().discriminator(), d1));
    CHECK_FALSE(unchanged(t.model().generator(), g0));
  }
}

TEST_CASE("first ten steps log finite losses") {
  auto data = random_set(16);
  auto c = desk_config();
  c.batch_size = 16;
  Trainer t(Architecture::AgeAcgan, c);
  for (int64_t it = 1; it <= 10; ++it) {
    auto row = step(t, data, it);
    CHECK(std::isfinite(row.d_loss));
    CHECK(std::isfinite(row.g_loss));
    CHECK(std::isfinite(row.ls));
    CHECK(std::isfinite(row.la));
    CHECK(row.la < 0.0);
  }
}

TEST_CASE("non-finite loss raises with the iteration index") {
  auto data = random_set(8);
  Trainer t(Architecture::AgeAcgan, desk_config());
  step(t, data, 1);
  auto poisoned = data.images.slice(0, 0, 4).clone();
  poisoned[0][0][0][0] = std::numeric_limits<float>::quiet_NaN();
  try {
    t.train_step(poisoned, data.labels.slice(0, 0, 4));
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.iteration() == 2);
  }
}

TEST_CASE("train flushes the partial log before raising") {
  TempDir dir("nan");
  auto data = random_set(12);
  auto c = desk_config();
  c.epochs = 2;
  // Find the first iteration whose batch contains sample 5, then poison it.
  int64_t bad_iter = 0;
  for (int64_t it = 1; it <= 6 && bad_iter == 0; ++it) {
    auto idx = batch_indices(it, 12, 4, c.seed);
    if ((idx == 5).any().item<bool>()) bad_iter = it;
  }
  REQUIRE(bad_iter > 0);
  data.images[5][1][3][3] = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(train(c, data, Architecture::AgeAcgan, dir.path()), NumericError);
  auto log = LossLog::read_csv(dir / "losses.csv");
  CHECK(static_cast<int64_t>(log.rows.size()) == bad_iter - 1);
}

TEST_CASE("loss log csv format") {
  TempDir dir("csv");
  LossLog log;
  log.rows.push_back({1, 1.5, 2.25, -0.5, -1.0});
  log.rows.push_back({2, 0.1, 3.0, -0.25, 0.0});
  log.write_csv(dir / "l.csv");
  const auto text = testing::read_bytes(dir / "l.csv");
  CHECK(text.rfind("iter,d_loss,g_loss,ls,la\n", 0) == 0);
  CHECK(text.find("\n1,1.5,2.25,-0.5,-1\n") != std::string::npos);
  auto back = LossLog::read_csv(dir / "l.csv");
  REQUIRE(back.rows.size() == 2);
  CHECK(back.rows[1].g_loss == 3.0);
}

TEST_CASE("identical seeds give byte-identical loss logs") {
  TempDir a("deta"), b("detb"), c("detc");
  auto data = random_set(12);
  auto cfg = desk_config(7);
  cfg.epochs = 2;
  train(cfg, data, Architecture::AgeAcgan, a.path());
  train(cfg, data, Architecture::AgeAcgan, b.path());
  CHECK(testing::read_bytes(a / "losses.csv") == testing::read_bytes(b / "losses.csv"));
  cfg.seed = 8;
  train(cfg, data, Architecture::AgeAcgan, c.path());
  CHECK(testing::read_bytes(a / "losses.csv") != testing::read_bytes(c / "losses.csv"));
}

TEST_CASE("run directory layout and checkpoint schedule") {
  TempDir dir("sched");
  auto data = random_set(8);
  auto cfg = desk_config();
  cfg.max_iterations = 250;
  cfg.epochs = 1000;
  cfg.checkpoint_every = 100;
  auto r = train(cfg, data, Architecture::AgeAcgan, dir.path());
  CHECK(r.iterations == 250);
  CHECK(r.log.rows.size() == 250);
  std::set<std::string> ckpts;
  for (const auto& e : std::filesystem::directory_iterator(dir / "checkpoints")) ckpts.insert(e.path().filename().string());
  CHECK(ckpts == std::set<std::string>{"iter_100.ckpt", "iter_200.ckpt"});
  CHECK(std::filesystem::exists(dir / "final.ckpt"));
  CHECK(std::filesystem::exists(dir / "losses.csv"));
  auto report = nlohmann::json::parse(testing::read_bytes(dir / "report.json"));
  CHECK(report["iterations"] == 250);
  CHECK(report["architecture"] == "age-acgan");

  // Resuming from the 200 checkpoint logs 201 next and matches the
  // uninterrupted run from there on.
  TempDir resumed("resume");
  auto cfg2 = cfg;
  cfg2.checkpoint_every = 0;
  auto r2 = train(cfg2, data, Architecture::AgeAcgan, resumed.path(), dir / "checkpoints" / "iter_200.ckpt");
  REQUIRE(r2.log.rows.size() == 50);
  CHECK(r2.log.rows.front().iter == 201);
  for (size_t i = 0; i < 50; ++i) {
    CHECK(r2.log.rows[i].d_loss == r.log.rows[200 + i].d_loss);
    CHECK(r2.log.rows[i].g_loss == r.log.rows[200 + i].g_loss);
  }
}

TEST_CASE("dcgan run logs a zero la column") {
  TempDir dir("dc");
  auto data = random_set(8);
  auto cfg = desk_config();
  cfg.epochs = 3;
  auto r = train(cfg, data, Architecture::Dcgan, dir.path());
  CHECK(r.log.rows.size() == 6);
  for (const auto& row : LossLog::read_csv(dir / "losses.csv").rows) CHECK(row.la == 0.0);
}

TEST_CASE("checkpoint round trip is bit exact") {
  TempDir dir("ckpt");
  auto data = random_set(8);
  for (auto arch : {Architecture::AgeAcgan, Architecture::Dcgan}) {
    Trainer t(arch, desk_config(3));
    for (int64_t it = 1; it <= 3; ++it) step(t, data, it);
    t.save_checkpoint(dir / "a.ckpt");
    auto back = Trainer::load_checkpoint(dir / "a.ckpt");
    CHECK(back.iteration() == 3);
    CHECK(back.architecture() == arch);
    CHECK(nlohmann::json(back.config()) == nlohmann::json(t.config()));
    auto sa = t.state_tensors(), sb = back.state_tensors();
    REQUIRE(sa.size() == sb.size());
    for (size_t i = 0; i < sa.size(); ++i) {
      CHECK(sa[i].first == sb[i].first);
      CHECK(testing::same_bits(sa[i].second.detach(), sb[i].second.detach()));
    }
    CHECK(back.generator_optimizer().steps() == 3);
    CHECK(testing::same_bits(back.rng().get_state(), t.rng().get_state()));
    back.save_checkpoint(dir / "b.ckpt");
    CHECK(testing::read_bytes(dir / "a.ckpt") == testing::read_bytes(dir / "b.ckpt"));
  }
}

TEST_CASE("resume then train equals training without a pause") {
  TempDir dir("res");
  auto data = random_set(8);
  Trainer straight(Architecture::AgeAcgan, desk_config(4));
  for (int64_t it = 1; it <= 5; ++it) step(straight, data, it);
  straight.save_checkpoint(dir / "mid.ckpt");
  std::vector<LossRow> a, b;
  for (int64_t it = 6; it <= 10; ++it) a.push_back(step(straight, data, it));
  auto resumed = Trainer::load_checkpoint(dir / "mid.ckpt");
  for (int64_t it = 6; it <= 10; ++it) b.push_back(step(resumed, data, it));
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].iter == b[i].iter);
    CHECK(a[i].d_loss == b[i].d_loss);
    CHECK(a[i].g_loss == b[i].g_loss);
  }
  auto sa = straight.state_tensors(), sb = resumed.state_tensors();
  for (size_t i = 0; i < sa.size(); ++i) CHECK(testing::same_bits(sa[i].second.detach(), sb[i].second.detach()));
}

TEST_CASE("loading under a different spec raises SpecMismatchError") {
  TempDir dir("mm");
  Trainer t(Architecture::AgeAcgan, desk_config());
  t.save_checkpoint(dir / "c.ckpt");
  auto other = desk_config();
  other.width_mult = 1.0 / 8;
  CHECK_THROWS_AS(Trainer::load_checkpoint(dir / "c.ckpt", Architecture::AgeAcgan, other), SpecMismatchError);
  CHECK_THROWS_AS(Trainer::load_checkpoint(dir / "c.ckpt", Architecture::Dcgan, desk_config()), SpecMismatchError);
  CHECK_NOTHROW(Trainer::load_checkpoint(dir / "c.ckpt", Architecture::AgeAcgan, desk_config()));
}

TEST_CASE("malformed checkpoints raise FormatError") {
  TempDir dir("badck");
  Trainer t(Architecture::AgeAcgan, desk_config());
  t.save_checkpoint(dir / "c.ckpt");
  const auto bytes = testing::read_bytes(dir / "c.ckpt");
  std::ofstream(dir / "trunc.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS_AS(Trainer::load_checkpoint(dir / "trunc.ckpt"), FormatError);
  std::ofstream(dir / "junk.ckpt", std::ios::binary) << "not a checkpoint at all";
  CHECK_THROWS_AS(Trainer::load_checkpoint(dir / "junk.ckpt"), FormatError);

  // Header is a u64 length followed by JSON naming every tensor.
  uint64_t len = 0;
  std::memcpy(&len, bytes.data(), 8);
  auto header = nlohmann::json::parse(bytes.substr(8, len));
  CHECK(header.contains("spec"));
  CHECK(header.contains("config"));
  CHECK(header["iteration"] == 0);
  const auto& dir_entry = header["parameters"].begin().value();
  CHECK(dir_entry.contains("dims"));
  CHECK(dir_entry.contains("offset"));
  CHECK(dir_entry.contains("length"));
}

TEST_CASE("moving average length and values") {
  std::vector<double> v(120);
  for (size_t i = 0; i < v.size(); ++i) v[i] = std::sin(0.1 * i) + i * 0.01;
  auto ma = moving_average(v, 50);
  REQUIRE(ma.size() == v.size() - 49);
  for (size_t k = 0; k < ma.size(); k += 17) {
    double s = 0;
    for (size_t i = k; i < k + 50; ++i) s += v[i];
    CHECK(std::abs(ma[k] - s / 50) < 1e-12);
  }
  CHECK(moving_average(std::vector<double>(49, 1.0), 50).empty());

  LossLog log;
  for (int64_t i = 1; i <= 120; ++i) log.rows.push_back({i, 0, v[static_cast<size_t>(i - 1)], 0, 0});
  auto curve = smoothed_curve(log);
  CHECK(curve.values.size() == 71);
  CHECK(curve.iters.front() == 50);
  CHECK(curve.iters.back() == 120);
}

TEST_CASE("convergence detector on a curve constant from iteration 200") {
  LossLog log;
  for (int64_t i = 1; i <= 2000; ++i) {
    const double g = i < 200 ? 6.0 - 0.02 * i + 0.5 * std::sin(0.7 * i) : 1.0;
    log.rows.push_back({i, 0, g, 0, 0});
  }
  auto detected = detect_convergence(smoothed_curve(log));
  REQUIRE(detected.has_value());
  CHECK(*detected <= 250);
  CHECK(*detected >= 200);
}

TEST_CASE("convergence detector rejects curves that never settle") {
  LossLog log;
  for (int64_t i = 1; i <= 2000; ++i) log.rows.push_back({i, 0, 1.0 + 0.9 * std::sin(0.01 * i), 0, 0});
  auto curve = smoothed_curve(log);
  auto detected = detect_convergence(curve);
  CHECK((!detected || *detected > 1700));
  CHECK_FALSE(detect_convergence(Curve{}).has_value());
}

TEST_CASE("comparison harness writes both curves on one grid") {
  TempDir dir("cmp");
  auto data = random_set(8);
  auto cfg = desk_config();
  cfg.max_iterations = 60;
  cfg.epochs = 100;
  auto report = run_comparison(cfg, data, dir.path());
  CHECK(report.age_acgan_curve.iters == report.dcgan_curve.iters);
  CHECK(report.age_acgan_curve.values.size() == 11);
  std::ifstream in(dir / "comparison.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "iter,age_acgan,dcgan");
  int rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++rows;
    CHECK(std::count(line.begin(), line.end(), ',') == 2);
  }
  CHECK(rows == 11);
  for (const char* p : {"age_acgan/losses.csv", "dcgan/losses.csv", "age_acgan/final.ckpt", "dcgan/final.ckpt",
                        "report.json", "comparison.png"}) {
    CHECK(std::filesystem::exists(dir / p));
  }
}
