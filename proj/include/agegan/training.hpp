#pragma once

// Alternating minimax training for Age-ACGAN and the DCGAN baseline:
// one discriminator update, then one generator update per iteration.

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "agegan/networks.hpp"
#include "agegan/optimizer.hpp"
#include "agegan/phantom.hpp"
#include "json.hpp"

namespace agegan {

enum class Architecture { AgeAcgan, Dcgan };

std::string architecture_name(Architecture a);        // "age-acgan" | "dcgan"
Architecture architecture_from_name(const std::string& s);  // throws ArgumentError

struct TrainConfig {
  int64_t batch_size = 16;
  int64_t epochs = 3000;
  int64_t max_iterations = 0;  // 0: epochs x ceil(N / batch)
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double lambda_class = 1.0;
  uint64_t seed = 1;
  int64_t checkpoint_every = 0;  // 0: final checkpoint only
  int64_t resolution = 128;
  double width_mult = 1.0;
  int64_t latent_dim = 100;
  double dropout = 0.5;

  void validate() const;  // throws ArgumentError
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);  // missing keys keep defaults

struct LossRow {
  int64_t iter = 0;
  double d_loss = 0.0;
  double g_loss = 0.0;
  double ls = 0.0;
  double la = 0.0;
};

struct LossLog {
  static constexpr const char* kHeader = "iter,d_loss,g_loss,ls,la";
  std::vector<LossRow> rows;

  std::vector<double> g_losses() const;
  void write_csv(const std::filesystem::path& path) const;
  static LossLog read_csv(const std::filesystem::path& path);
};

// Generator/discriminator pair behind a common surface so the trainer does not
// care which architecture it drives.
class GanModel {
 public:
  virtual ~GanModel() = default;
  virtual Architecture architecture() const = 0;
  virtual bool conditional() const = 0;
  virtual int64_t latent_dim() const = 0;
  // Fake batch for the given labels (ignored when unconditional).
  virtual torch::Tensor generate(const torch::Tensor& labels, at::Generator& gen) = 0;
  virtual torch::Tensor generate_from(const LatentBatch& codes) = 0;
  virtual DiscriminatorOutput discriminate(const torch::Tensor& x, at::Generator& gen) = 0;
  virtual torch::nn::Module& generator() = 0;
  virtual torch::nn::Module& discriminator() = 0;
  // The conditional generator; throws ArgumentError for the baseline.
  virtual AgeGenerator age_generator() = 0;
  virtual nlohmann::json spec_json() const = 0;
  virtual nlohmann::json summary() const = 0;
};

std::unique_ptr<GanModel> make_model(Architecture arch, const TrainConfig& config);

// Iteration i (1-based) draws its batch from the permutation of epoch
// (i - 1) / ceil(N / B); short final batches wrap to the epoch's start.
torch::Tensor batch_indices(int64_t iteration, int64_t dataset_size, int64_t batch_size, uint64_t seed);

int64_t total_iterations(const TrainConfig& config, int64_t dataset_size);

class Trainer {
 public:
  Trainer(Architecture arch, TrainConfig config);

  // One discriminator update then one generator update. Throws NumericError
  // (with the iteration index) on any non-finite loss or parameter.
  LossRow train_step(const torch::Tensor& real_batch, const torch::Tensor& real_labels);
  // The two halves of train_step; each fills its part of `row` (row.iter
  // must already be set) and leaves the other network untouched.
  void discriminator_phase(const torch::Tensor& real_batch, const torch::Tensor& real_labels, LossRow& row);
  void generator_phase(int64_t batch_size, LossRow& row);

  int64_t iteration() const { return iteration_; }
  Architecture architecture() const { return model_->architecture(); }
  const TrainConfig& config() const { return config_; }
  GanModel& model() { return *model_; }
  Adam& generator_optimizer() { return opt_g_; }
  Adam& discriminator_optimizer() { return opt_d_; }
  at::Generator& rng() { return rng_; }

  // Named tensors in a fixed order: parameters, buffers, optimizer moments.
  std::vector<std::pair<std::string, torch::Tensor>> state_tensors();

  void save_checkpoint(const std::filesystem::path& path);
  // Restores from the file's own architecture and config.
  static Trainer load_checkpoint(const std::filesystem::path& path);
  // As above, but throws SpecMismatchError when the stored network specs
  // differ from those implied by (arch, requested).
  static Trainer load_checkpoint(const std::filesystem::path& path, Architecture arch,
                                 const TrainConfig& requested);

 private:
  Trainer(Architecture arch, TrainConfig config, bool);
  TrainConfig config_;
  std::unique_ptr<GanModel> model_;
  Adam opt_g_;
  Adam opt_d_;
  at::Generator rng_;
  int64_t iteration_ = 0;
};

struct RunResult {
  std::filesystem::path dir;
  LossLog log;
  int64_t iterations = 0;
  std::optional<int64_t> convergence_iteration;
};

// Trains until total_iterations(config, N) and writes losses.csv,
// checkpoints/iter_<n>.ckpt, final.ckpt and report.json into out_dir.
// With `resume`, continues from that checkpoint's iteration.
RunResult train(const TrainConfig& config, const DatasetManifest& manifest, Architecture arch,
                const std::filesystem::path& out_dir,
                const std::optional<std::filesystem::path>& resume = std::nullopt);

// Same, on an already-preprocessed training set.
RunResult train(const TrainConfig& config, const TrainingSet& data, Architecture arch,
                const std::filesystem::path& out_dir,
                const std::optional<std::filesystem::path>& resume = std::nullopt);

inline constexpr int64_t kSmoothingWindow = 50;
inline constexpr double kConvergenceBand = 0.10;
inline constexpr int64_t kConvergenceMinHold = 250;

// Trailing moving average; length n - window + 1 (empty when n < window).
std::vector<double> moving_average(const std::vector<double>& values, int64_t window = kSmoothingWindow);

// A smoothed g_loss curve; iters[k] is the last raw iteration in window k.
struct Curve {
  std::vector<int64_t> iters;
  std::vector<double> values;
};

Curve smoothed_curve(const LossLog& log, int64_t window = kSmoothingWindow);

// First iteration after which the curve stays within +/- band of its final
// value, provided that holds for at least min_hold iterations; else nullopt.
std::optional<int64_t> detect_convergence(const Curve& curve, double band = kConvergenceBand,
                                          int64_t min_hold = kConvergenceMinHold);

struct ComparisonReport {
  RunResult age_acgan;
  RunResult dcgan;
  Curve age_acgan_curve;
  Curve dcgan_curve;
  nlohmann::json to_json() const;
};

// Trains both arms with identical config/seed on the same data and writes
// age_acgan/, dcgan/, comparison.csv, comparison.png and report.json.
ComparisonReport run_comparison(const TrainConfig& config, const DatasetManifest& manifest,
                                const std::filesystem::path& out_dir);
ComparisonReport run_comparison(const TrainConfig& config, const TrainingSet& data,
                                const std::filesystem::path& out_dir);

}  // namespace agegan
