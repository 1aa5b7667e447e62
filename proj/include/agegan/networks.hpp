#pragma once

// Age-ACGAN generator / dual-head discriminator and the DCGAN baseline,
// built from declarative specs. Generator counts (7 conv blocks, 9 residual
// blocks, widths up to 1024 x width_mult, 3x3 kernels) are checked at build
// time.

#include <torch/torch.h>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace agegan {

inline constexpr int64_t kKernelSize = 3;
inline constexpr int64_t kRequiredConvBlocks = 7;
inline constexpr int64_t kRequiredResidualBlocks = 9;
inline constexpr int64_t kMaxBaseWidth = 1024;
inline constexpr int64_t kDiscriminatorTrunkLayers = 7;
inline constexpr double kInitStd = 0.02;

enum class StageKind { Conv, Residual, Upsample };

// One step of the generator stage plan. Channel counts are at width_mult 1.
struct GeneratorStage {
  StageKind kind = StageKind::Conv;
  int64_t base_out_channels = 0;  // Conv only
};

struct GeneratorSpec {
  int64_t latent_dim = 100;
  int64_t num_classes = 3;
  int64_t output_resolution = 128;
  int64_t output_channels = 2;
  double width_mult = 1.0;
  // Width of the 4x4 latent projection at width_mult 1.
  int64_t base_projection_channels = 1024;
  // Empty selects the default plan for output_resolution.
  std::vector<GeneratorStage> stages;

  std::vector<GeneratorStage> resolved_stages() const;
  int64_t channels(int64_t base) const;  // throws SpecError if not an integer >= 2
  void validate() const;                  // throws SpecError
};

std::vector<GeneratorStage> default_generator_stages(int64_t output_resolution);

struct DiscriminatorSpec {
  int64_t input_channels = 2;
  int64_t num_classes = 3;
  int64_t input_resolution = 128;
  double width_mult = 1.0;
  double dropout = 0.5;
  double leaky_slope = 0.2;
  int64_t pooled_size = 4;
  // BatchNorm after trunk layers 2..7, as in the original ACGAN discriminator.
  bool batch_norm = true;

  int64_t channels(int64_t base) const;  // integer >= 1
  void validate() const;
};

struct DcganSpec {
  int64_t latent_dim = 100;
  int64_t output_resolution = 128;
  int64_t output_channels = 2;
  double width_mult = 1.0;

  int64_t channels(int64_t base) const;
  void validate() const;
};

nlohmann::json to_json(const GeneratorSpec& s);
nlohmann::json to_json(const DiscriminatorSpec& s);
nlohmann::json to_json(const DcganSpec& s);
GeneratorSpec generator_spec_from_json(const nlohmann::json& j);
DiscriminatorSpec discriminator_spec_from_json(const nlohmann::json& j);
DcganSpec dcgan_spec_from_json(const nlohmann::json& j);

// conv 3x3 -> PixelNorm -> SELU, or a bare conv for the output block.
class ConvBlockImpl : public torch::nn::Module {
 public:
  ConvBlockImpl(int64_t in_channels, int64_t out_channels, bool norm_act);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv{nullptr};
  bool norm_act;
};
TORCH_MODULE(ConvBlock);

// out = inner(x) + x, inner = two conv blocks at constant width.
class ResidualBlockImpl : public torch::nn::Module {
 public:
  explicit ResidualBlockImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

  ConvBlock first{nullptr};
  ConvBlock second{nullptr};
};
TORCH_MODULE(ResidualBlock);

// Generator input: z and a one-hot age code, batched.
struct LatentBatch {
  torch::Tensor z;       // [B, latent_dim]
  torch::Tensor onehot;  // [B, num_classes]
  int64_t size() const { return z.size(0); }
};

torch::Tensor one_hot(const torch::Tensor& labels, int64_t num_classes = 3);

// z ~ N(0, 1) for each label.
LatentBatch sample_latents(const torch::Tensor& labels, int64_t latent_dim, at::Generator& gen,
                           int64_t num_classes = 3);

class AgeGeneratorImpl : public torch::nn::Module {
 public:
  AgeGeneratorImpl(GeneratorSpec spec, uint64_t init_seed);

  // Concatenated [z, onehot] -> [B, output_channels, R, R] in (0, 1).
  torch::Tensor forward(const torch::Tensor& z, const torch::Tensor& onehot);

  const GeneratorSpec& spec() const { return spec_; }
  nlohmann::json summary() const;

  torch::nn::Linear projection{nullptr};

 private:
  struct Step {
    StageKind kind;
    ConvBlock conv{nullptr};
    ResidualBlock residual{nullptr};
    int64_t in_channels;
    int64_t out_channels;
    int64_t resolution;
  };
  GeneratorSpec spec_;
  int64_t projection_channels_ = 0;
  std::vector<Step> steps_;
};
TORCH_MODULE(AgeGenerator);

// Builds and validates. Throws SpecError.
AgeGenerator build_generator(const GeneratorSpec& spec, uint64_t init_seed = 0);

// Validates the one-hot codes, then runs the generator.
// Throws ArgumentError on malformed codes.
torch::Tensor generate(AgeGenerator& gen, const LatentBatch& codes);

struct DiscriminatorOutput {
  torch::Tensor source;       // [B] P(real)
  torch::Tensor class_probs;  // [B, num_classes]; undefined for source-only nets
};

class AgeDiscriminatorImpl : public torch::nn::Module {
 public:
  AgeDiscriminatorImpl(DiscriminatorSpec spec, uint64_t init_seed);

  // `dropout_gen` drives the dropout mask so training stays reproducible.
  DiscriminatorOutput forward(const torch::Tensor& x, std::optional<at::Generator> dropout_gen = std::nullopt);

  const DiscriminatorSpec& spec() const { return spec_; }
  nlohmann::json summary() const;

  torch::nn::ModuleList trunk{nullptr};
  torch::nn::ModuleList norms{nullptr};  // one per trunk layer after the first; empty without batch_norm
  torch::nn::Linear source_head{nullptr};
  torch::nn::Linear class_head{nullptr};

 private:
  DiscriminatorSpec spec_;
  std::vector<int64_t> strides_;
};
TORCH_MODULE(AgeDiscriminator);

AgeDiscriminator build_discriminator(const DiscriminatorSpec& spec, uint64_t init_seed = 0);

class DcganGeneratorImpl : public torch::nn::Module {
 public:
  DcganGeneratorImpl(DcganSpec spec, uint64_t init_seed);
  torch::Tensor forward(const torch::Tensor& z);
  const DcganSpec& spec() const { return spec_; }
  nlohmann::json summary() const;

  torch::nn::Sequential body{nullptr};

 private:
  DcganSpec spec_;
};
TORCH_MODULE(DcganGenerator);

class DcganDiscriminatorImpl : public torch::nn::Module {
 public:
  DcganDiscriminatorImpl(DcganSpec spec, uint64_t init_seed);
  DiscriminatorOutput forward(const torch::Tensor& x);
  const DcganSpec& spec() const { return spec_; }
  nlohmann::json summary() const;

  torch::nn::Sequential body{nullptr};

 private:
  DcganSpec spec_;
};
TORCH_MODULE(DcganDiscriminator);

struct DcganPair {
  DcganGenerator generator{nullptr};
  DcganDiscriminator discriminator{nullptr};
};

DcganPair build_dcgan_baseline(const DcganSpec& spec, uint64_t init_seed = 0);

// N(0, 0.02) conv/linear weights, zero biases, drawn from a seeded generator.
void init_weights(torch::nn::Module& module, uint64_t seed);

int64_t parameter_count(const torch::nn::Module& module);

}  // namespace agegan
