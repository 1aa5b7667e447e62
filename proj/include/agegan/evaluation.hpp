#pragma once

// Quantitative checks of conditional synthesis: mask elongation per age
// class, oracle-classifier fidelity, and image grids.

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "agegan/networks.hpp"
#include "agegan/phantom.hpp"
#include "json.hpp"

namespace agegan {

inline constexpr int64_t kMinMaskPixels = 8;
inline constexpr double kMaskCutoff = 0.5;

// sqrt(lambda_max / lambda_min) of the foreground second central moments.
// Throws DegenerateMask below 8 foreground pixels, ArgumentError if not binary.
double elongation(const torch::Tensor& mask);

// Produces `n` two-channel samples [n, 2, W, W] in [0, 1] meant to belong to
// `requested`. Everything synthetic or replayed is viewed through this.
using SampleSource = std::function<torch::Tensor(AgeClass requested, int64_t n, uint64_t seed)>;

SampleSource generator_source(AgeGenerator gen);
// Generator fed a uniformly random class instead of the requested one.
SampleSource shuffled_generator_source(AgeGenerator gen);
// Fresh phantom slices, preprocessed to `window`.
SampleSource phantom_source(const PhantomParams& params, int64_t window);
// Real training samples of the requested class, drawn with replacement.
SampleSource replay_source(const TrainingSet& data);

// Channel 0 min-max normalized per sample, channel 1 thresholded at 0.5.
torch::Tensor prepare_for_oracle(const torch::Tensor& batch);

class OracleNetImpl : public torch::nn::Module {
 public:
  explicit OracleNetImpl(int64_t window);
  torch::Tensor forward(const torch::Tensor& x);  // logits [B, 3]

  torch::nn::Sequential features{nullptr};
  torch::nn::Linear head{nullptr};
};
TORCH_MODULE(OracleNet);

struct OracleOptions {
  int64_t epochs = 20;
  int64_t batch_size = 16;
  double learning_rate = 1e-3;
  double held_out_fraction = 0.2;
  bool permute_labels = false;  // chance-level control
};

struct Oracle {
  OracleNet net{nullptr};
  double train_accuracy = 0.0;
  double held_out_accuracy = 0.0;
  int64_t window = 0;

  torch::Tensor predict(const torch::Tensor& batch);  // class indices [B]
  double accuracy(const torch::Tensor& batch, const torch::Tensor& labels);
};

// Patient-wise split (last 20% of each class's patients held out). Throws
// DataError with fewer than 30 samples in any class.
Oracle train_oracle(const TrainingSet& data, uint64_t seed, const OracleOptions& options = {});
Oracle train_oracle(const DatasetManifest& manifest, int64_t window, uint64_t seed,
                    const OracleOptions& options = {});

inline constexpr double kOracleReliableAccuracy = 0.9;

struct FidelityReport {
  std::array<double, 3> per_class_accuracy{};
  double overall_accuracy = 0.0;
  double oracle_held_out_accuracy = 0.0;
  int64_t n_per_class = 0;
  bool reliable = false;
  uint64_t seed = 0;
  nlohmann::json to_json() const;
};

FidelityReport conditional_fidelity(Oracle& oracle, const SampleSource& source, int64_t n_per_class, uint64_t seed);

struct ClassTrend {
  double mean = 0.0;
  double sd = 0.0;
  int64_t n = 0;
  int64_t degenerate_n = 0;
};

struct TrendReport {
  std::array<ClassTrend, 3> classes{};
  bool monotone = false;
  uint64_t seed = 0;

  double min_gap() const;  // smallest step between consecutive class means
  nlohmann::json to_json() const;
};

inline constexpr int64_t kMinTrendSamples = 32;

// Thresholds masks at 0.5 and tabulates elongation per class. Degenerate
// masks are excluded but counted; more than half degenerate in a class
// raises QualityError.
TrendReport trend_report(const SampleSource& source, int64_t n_per_class, uint64_t seed);

// samples: [N, 2, H, W] or a list of [2, H, W]. Writes CT tiles as a rows x
// cols panel on the left and masks on the right (or ct|mask pairs per cell
// when interleave is set). 8-bit PGM, or PNG for a .png path.
void emit_grid(const std::vector<torch::Tensor>& samples, int64_t rows, int64_t cols,
               const std::filesystem::path& path, bool interleave = false);
torch::Tensor compose_grid(const std::vector<torch::Tensor>& samples, int64_t rows, int64_t cols,
                           bool interleave = false);

}  // namespace agegan
