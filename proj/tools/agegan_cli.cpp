// agegan: phantom data, training, synthesis, evaluation and comparison.
//
//   agegan phantom --out data
//   agegan train --data data --arch age-acgan --out runs/a
//   agegan synth --checkpoint runs/a/final.ckpt --age-class infant --count 8 --out synth
//   agegan eval --run runs/a --data data
//   agegan compare --data data --out cmp
//
// Exit codes: 0 success, 1 runtime error, 2 usage error.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "agegan/errors.hpp"
#include "agegan/evaluation.hpp"
#include "agegan/phantom.hpp"
#include "agegan/seeding.hpp"
#include "agegan/tensor_io.hpp"
#include "agegan/training.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace agegan;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("config " + path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

// Accepts "0.125" or "1/8".
double parse_fraction(const std::string& s) {
  try {
    const auto slash = s.find('/');
    size_t used = 0;
    if (slash == std::string::npos) {
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    }
    const double num = std::stod(s.substr(0, slash), &used);
    if (used != slash) throw std::invalid_argument(s);
    const std::string den_text = s.substr(slash + 1);
    const double den = std::stod(den_text, &used);
    if (used != den_text.size() || den == 0.0) throw std::invalid_argument(s);
    return num / den;
  } catch (const std::logic_error&) {
    throw UsageError("--width-mult: not a number or fraction: " + s);
  }
}

std::string format_index(int64_t i) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%04lld", static_cast<long long>(i));
  return buf;
}

// Flags shared by train and compare. Precedence: scale defaults, then
// --config, then explicit flags.
struct TrainFlags {
  bool paper_scale = false;
  std::string config_file;
  int64_t resolution = 0;
  std::string width_mult;
  int64_t epochs = 0;
  int64_t iterations = 0;
  int64_t batch = 0;
  uint64_t seed = 1;
  double lr = 0.0;
  double lambda_class = 0.0;
  int64_t checkpoint_every = 0;
  std::string data;
  std::string out;

  std::map<std::string, CLI::Option*> opts;

  void attach(CLI::App* cmd) {
    cmd->add_option("--data", data, "Dataset directory (manifest.json)")->required();
    cmd->add_option("--out", out, "Output directory")->required();
    cmd->add_flag("--paper-scale", paper_scale, "Resolution 128, width-mult 1, 3000 epochs");
    opts["config"] = cmd->add_option("--config", config_file, "JSON file with TrainConfig field overrides");
    opts["resolution"] = cmd->add_option("--resolution", resolution, "Training window in pixels");
    opts["width_mult"] = cmd->add_option("--width-mult", width_mult, "Channel width multiplier, e.g. 1/8");
    opts["epochs"] = cmd->add_option("--epochs", epochs, "Training epochs");
    opts["iterations"] = cmd->add_option("--iterations", iterations, "Iteration cap (0: epochs x batches per epoch)");
    opts["batch"] = cmd->add_option("--batch", batch, "Batch size (default 16)");
    opts["seed"] = cmd->add_option("--seed", seed, "Master seed");
    opts["lr"] = cmd->add_option("--lr", lr, "Adam learning rate");
    opts["lambda"] = cmd->add_option("--lambda-class", lambda_class, "Weight of the class term in the generator loss");
    opts["checkpoint_every"] = cmd->add_option("--checkpoint-every", checkpoint_every, "Checkpoint period in iterations");
  }

  bool given(const std::string& k) const { return opts.at(k)->count() > 0; }

  TrainConfig build() const {
    TrainConfig c;
    if (paper_scale) {
      c.resolution = 128;
      c.width_mult = 1.0;
      c.epochs = 3000;
    } else {
      c.resolution = 64;
      c.width_mult = 1.0 / 8;
      c.epochs = 100;
    }
    if (given("config")) from_json(read_json_file(config_file), c);
    if (given("resolution")) c.resolution = resolution;
    if (given("width_mult")) c.width_mult = parse_fraction(width_mult);
    if (given("epochs")) c.epochs = epochs;
    if (given("iterations")) c.max_iterations = iterations;
    if (given("batch")) c.batch_size = batch;
    if (given("seed")) c.seed = seed;
    if (given("lr")) c.learning_rate = lr;
    if (given("lambda")) c.lambda_class = lambda_class;
    if (given("checkpoint_every")) c.checkpoint_every = checkpoint_every;
    try {
      c.validate();
    } catch (const ArgumentError& e) {
      throw UsageError(e.what());
    }
    return c;
  }
};

DatasetManifest open_dataset(const std::string& dir) {
  auto m = load_manifest(dir);
  m.validate();
  return m;
}

int cmd_phantom(const std::string& out, int64_t per_class, int64_t patients, std::optional<int64_t> resolution,
                uint64_t seed, const std::string& config_file) {
  PhantomParams params;
  if (!config_file.empty()) from_json(read_json_file(config_file), params);
  if (resolution) params.resolution = *resolution;
  if (per_class < 0 || patients < 1) throw UsageError("--per-class must be >= 0 and --patients-per-class >= 1");
  if (per_class % patients != 0) throw UsageError("--per-class must be divisible by --patients-per-class");
  try {
    params.validate();
  } catch (const ArgumentError& e) {
    throw UsageError(e.what());
  }
  auto m = build_dataset(params, per_class, patients, seed, out);
  std::cout << "wrote " << m.entries.size() << " samples to " << out << "\n";
  return 0;
}

int cmd_train(const TrainFlags& f, const std::string& arch_name) {
  const auto arch = architecture_from_name(arch_name);
  const auto config = f.build();
  auto result = train(config, open_dataset(f.data), arch, f.out);
  std::cout << architecture_name(arch) << ": " << result.iterations << " iterations, ";
  if (result.convergence_iteration) {
    std::cout << "converged at " << *result.convergence_iteration;
  } else {
    std::cout << "no convergence detected";
  }
  std::cout << "; " << (result.dir / "losses.csv").string() << "\n";
  return 0;
}

int cmd_synth(const std::string& checkpoint, const std::string& age_class, int64_t count, double threshold,
              uint64_t seed, const std::string& out) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw UsageError("--threshold must lie in (0, 1)");
  if (count < 1) throw UsageError("--count must be >= 1");
  if (!fs::exists(checkpoint)) throw IoError("checkpoint not found: " + checkpoint);
  auto trainer = Trainer::load_checkpoint(checkpoint);
  auto& model = trainer.model();

  torch::Tensor batch;
  if (model.conditional()) {
    if (age_class.empty()) throw UsageError("--age-class is required for an age-acgan checkpoint");
    const auto cls = age_class_from_name(age_class);
    batch = generator_source(model.age_generator())(cls, count, seed);
  } else {
    if (!age_class.empty()) throw UsageError("--age-class given, but the dcgan baseline is unconditional");
    torch::NoGradGuard no_grad;
    model.generator().eval();
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    batch = model.generate(torch::zeros({count}, torch::kLong), gen);
  }

  fs::create_directories(fs::path(out) / "ct");
  fs::create_directories(fs::path(out) / "mask");
  std::vector<torch::Tensor> tiles;
  for (int64_t i = 0; i < count; ++i) {
    auto ct = batch[i][0].contiguous();
    auto mask = threshold_mask(batch[i][1], threshold);
    save_tensor(fs::path(out) / "ct" / (format_index(i) + ".agt"), ct);
    save_tensor(fs::path(out) / "mask" / (format_index(i) + ".agt"), mask);
    tiles.push_back(torch::stack({ct, mask.to(torch::kFloat32)}));
  }
  const auto cols = static_cast<int64_t>(std::ceil(std::sqrt(static_cast<double>(count))));
  const auto rows = (count + cols - 1) / cols;
  emit_grid(tiles, rows, cols, fs::path(out) / "grid.png");
  std::cout << "wrote " << count << " samples to " << out << "\n";
  return 0;
}

int cmd_eval(const std::string& run, const std::string& data, int64_t n_per_class, uint64_t seed) {
  const auto ckpt = fs::path(run) / "final.ckpt";
  if (!fs::exists(ckpt)) throw IoError("run directory has no final.ckpt: " + run);
  if (n_per_class < kMinTrendSamples) {
    throw UsageError("--n-per-class must be >= " + std::to_string(kMinTrendSamples));
  }
  auto trainer = Trainer::load_checkpoint(ckpt);
  if (!trainer.model().conditional()) throw UsageError("eval needs an age-acgan run; the dcgan baseline has no classes");
  const auto window = trainer.config().resolution;
  auto source = generator_source(trainer.model().age_generator());

  auto oracle = train_oracle(open_dataset(data), window, seed);
  auto fidelity = conditional_fidelity(oracle, source, n_per_class, seed);
  auto trend = trend_report(source, n_per_class, seed);
  write_json_file(fs::path(run) / "fidelity.json", fidelity.to_json());
  write_json_file(fs::path(run) / "trend.json", trend.to_json());

  for (int64_t c = 0; c < 3; ++c) {
    const auto cls = age_class_from_index(c);
    auto x = source(cls, 8, derive_seed(seed, {0x6121D, static_cast<uint64_t>(c)}));
    std::vector<torch::Tensor> tiles;
    for (int64_t i = 0; i < x.size(0); ++i) {
      tiles.push_back(torch::stack({x[i][0], threshold_mask(x[i][1]).to(torch::kFloat32)}));
    }
    emit_grid(tiles, 2, 4, fs::path(run) / ("grid_" + std::string(age_class_name(cls)) + ".png"), true);
  }
  std::cout << "fidelity " << fidelity.overall_accuracy << " (oracle held-out " << oracle.held_out_accuracy
            << "), trend " << (trend.monotone ? "monotone" : "not monotone") << "\n";
  return 0;
}

int cmd_compare(const TrainFlags& f) {
  auto report = run_comparison(f.build(), open_dataset(f.data), f.out);
  auto show = [](const char* name, const RunResult& r) {
    std::cout << name << ": ";
    if (r.convergence_iteration) {
      std::cout << "converged at " << *r.convergence_iteration << "\n";
    } else {
      std::cout << "no convergence within " << r.iterations << " iterations\n";
    }
  };
  show("age-acgan", report.age_acgan);
  show("dcgan", report.dcgan);
  std::cout << "curves: " << (fs::path(f.out) / "comparison.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Age-conditioned CT patch and organ mask synthesis"};
  app.require_subcommand(1);

  auto* phantom = app.add_subcommand("phantom", "Generate a procedural phantom dataset");
  std::string ph_out, ph_config;
  int64_t ph_per_class = 100, ph_patients = 5, ph_resolution = 128;
  uint64_t ph_seed = 1;
  phantom->add_option("--out", ph_out, "Output directory")->required();
  phantom->add_option("--per-class", ph_per_class, "Samples per age class")->capture_default_str();
  phantom->add_option("--patients-per-class", ph_patients, "Simulated patients per class")->capture_default_str();
  auto* ph_res_opt = phantom->add_option("--resolution", ph_resolution, "Slice size in pixels")->capture_default_str();
  phantom->add_option("--seed", ph_seed, "Master seed")->capture_default_str();
  phantom->add_option("--config", ph_config, "JSON file with PhantomParams field overrides");

  auto* train_cmd = app.add_subcommand("train", "Train Age-ACGAN or the DCGAN baseline");
  TrainFlags train_flags;
  std::string arch = "age-acgan";
  train_cmd->add_option("--arch", arch, "age-acgan | dcgan")
      ->check(CLI::IsMember({"age-acgan", "dcgan"}))
      ->capture_default_str();
  train_flags.attach(train_cmd);

  auto* synth = app.add_subcommand("synth", "Sample CT patches and masks from a checkpoint");
  std::string sy_ckpt, sy_class, sy_out;
  int64_t sy_count = 8;
  double sy_threshold = 0.5;
  uint64_t sy_seed = 1;
  synth->add_option("--checkpoint", sy_ckpt, "Checkpoint file")->required();
  synth->add_option("--age-class", sy_class, "infant | preschool | adolescent")
      ->check(CLI::IsMember({"infant", "preschool", "adolescent"}));
  synth->add_option("--count", sy_count, "Number of samples")->capture_default_str();
  synth->add_option("--threshold", sy_threshold, "Mask binarization cutoff")->capture_default_str();
  synth->add_option("--seed", sy_seed, "Sampling seed")->capture_default_str();
  synth->add_option("--out", sy_out, "Output directory")->required();

  auto* eval = app.add_subcommand("eval", "Fidelity, trend and grids for a trained run");
  std::string ev_run, ev_data;
  int64_t ev_n = 64;
  uint64_t ev_seed = 1;
  eval->add_option("--run", ev_run, "Run directory holding final.ckpt")->required();
  eval->add_option("--data", ev_data, "Dataset for the oracle classifier")->required();
  eval->add_option("--n-per-class", ev_n, "Synthesized samples per class")->capture_default_str();
  eval->add_option("--seed", ev_seed, "Evaluation seed")->capture_default_str();

  auto* compare = app.add_subcommand("compare", "Train both architectures and compare loss curves");
  TrainFlags compare_flags;
  compare_flags.attach(compare);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*phantom) {
      std::optional<int64_t> res;
      if (ph_res_opt->count() > 0) res = ph_resolution;
      return cmd_phantom(ph_out, ph_per_class, ph_patients, res, ph_seed, ph_config);
    }
    if (*train_cmd) return cmd_train(train_flags, arch);
    if (*synth) return cmd_synth(sy_ckpt, sy_class, sy_count, sy_threshold, sy_seed, sy_out);
    if (*eval) return cmd_eval(ev_run, ev_data, ev_n, ev_seed);
    if (*compare) return cmd_compare(compare_flags);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    for (auto* sub : app.get_subcommands()) std::cerr << sub->help();
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
