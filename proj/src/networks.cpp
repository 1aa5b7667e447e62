#include "agegan/networks.hpp"

#include <algorithm>
#include <cmath>

#include "agegan/errors.hpp"
#include "agegan/numeric_blocks.hpp"

namespace agegan {
namespace nn = torch::nn;

namespace {

int64_t scaled_channels(int64_t base, double width_mult, int64_t minimum, const char* what) {
  const double exact = static_cast<double>(base) * width_mult;
  const auto rounded = static_cast<int64_t>(std::llround(exact));
  if (std::abs(exact - static_cast<double>(rounded)) > 1e-9 || rounded < minimum) {
    throw SpecError(std::string(what) + ": width_mult " + std::to_string(width_mult) + " turns " +
                    std::to_string(base) + " channels into a non-integer or fewer than " +
                    std::to_string(minimum));
  }
  return rounded;
}

const char* kind_name(StageKind k) {
  switch (k) {
    case StageKind::Conv: return "conv_block";
    case StageKind::Residual: return "residual_block";
    case StageKind::Upsample: return "upsample";
  }
  return "?";
}

StageKind kind_from_name(const std::string& s) {
  if (s == "conv_block") return StageKind::Conv;
  if (s == "residual_block") return StageKind::Residual;
  if (s == "upsample") return StageKind::Upsample;
  throw SpecError("unknown stage kind " + s);
}

bool is_power_of_two_multiple_of_4(int64_t r) {
  if (r < 4 || r % 4 != 0) return false;
  const int64_t q = r / 4;
  return (q & (q - 1)) == 0;
}

}  // namespace

// ---------------------------------------------------------------------------
// Specs

std::vector<GeneratorStage> default_generator_stages(int64_t output_resolution) {
  using K = StageKind;
  std::vector<GeneratorStage> s = {{K::Conv, 1024}, {K::Upsample, 0}, {K::Conv, 512}};
  for (int64_t width : {512, 256, 128}) {
    for (int i = 0; i < 3; ++i) s.push_back({K::Residual, 0});
    s.push_back({K::Upsample, 0});
    if (width > 128) s.push_back({K::Conv, width / 2});
  }
  s.push_back({K::Conv, 64});
  // 128x128 output: 4 -> 8 -> 16 -> 32 -> 64 -> 128. For 64x64 the last
  // upsample is dropped and the 32-wide block runs at 64x64.
  if (output_resolution != 64) s.push_back({K::Upsample, 0});
  s.push_back({K::Conv, 32});
  s.push_back({K::Conv, 0});  // output block, width = output_channels
  return s;
}

std::vector<GeneratorStage> GeneratorSpec::resolved_stages() const {
  return stages.empty() ? default_generator_stages(output_resolution) : stages;
}

int64_t GeneratorSpec::channels(int64_t base) const {
  return scaled_channels(base, width_mult, 2, "generator");
}

void GeneratorSpec::validate() const {
  if (latent_dim < 1) throw SpecError("latent_dim must be positive");
  if (num_classes != 3) throw SpecError("the generator is conditioned on exactly 3 age classes");
  if (output_channels != 2) throw SpecError("generator output must have 2 channels (ct, mask)");
  if (output_resolution != 64 && output_resolution != 128) {
    throw SpecError("output_resolution must be 64 or 128");
  }
  if (!(width_mult > 0.0)) throw SpecError("width_mult must be positive");
  if (base_projection_channels > kMaxBaseWidth) throw SpecError("projection wider than 1024 channels");
  channels(base_projection_channels);

  const auto plan = resolved_stages();
  int64_t convs = 0, residuals = 0, resolution = 4;
  for (size_t i = 0; i < plan.size(); ++i) {
    const auto& st = plan[i];
    const bool output_block = i + 1 == plan.size();
    switch (st.kind) {
      case StageKind::Conv:
        ++convs;
        if (!output_block) {
          if (st.base_out_channels > kMaxBaseWidth) throw SpecError("conv block wider than 1024 channels");
          channels(st.base_out_channels);
        }
        break;
      case StageKind::Residual: ++residuals; break;
      case StageKind::Upsample: resolution *= 2; break;
    }
  }
  if (plan.empty() || plan.back().kind != StageKind::Conv) {
    throw SpecError("the stage plan must end in the output conv block");
  }
  if (convs != kRequiredConvBlocks) {
    throw SpecError("generator needs exactly 7 conv blocks, plan has " + std::to_string(convs));
  }
  if (residuals != kRequiredResidualBlocks) {
    throw SpecError("generator needs exactly 9 residual blocks, plan has " + std::to_string(residuals));
  }
  if (resolution != output_resolution) {
    throw SpecError("stage plan reaches " + std::to_string(resolution) + "px, expected " +
                    std::to_string(output_resolution));
  }
}

int64_t DiscriminatorSpec::channels(int64_t base) const {
  return scaled_channels(base, width_mult, 1, "discriminator");
}

void DiscriminatorSpec::validate() const {
  if (input_channels != 2) throw SpecError("discriminator input must have 2 channels");
  if (num_classes != 3) throw SpecError("discriminator class head must have 3 outputs");
  if (input_resolution < 8 || !is_power_of_two_multiple_of_4(input_resolution)) {
    throw SpecError("discriminator input_resolution must be 4 * 2^k and >= 8");
  }
  if (!(width_mult > 0.0)) throw SpecError("width_mult must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw SpecError("dropout must lie in [0, 1)");
  if (pooled_size < 1) throw SpecError("pooled_size must be positive");
  for (int64_t c : {32, 64, 128, 256, 512}) channels(c);
}

int64_t DcganSpec::channels(int64_t base) const {
  return scaled_channels(base, width_mult, 2, "dcgan");
}

void DcganSpec::validate() const {
  if (latent_dim < 1) throw SpecError("latent_dim must be positive");
  if (output_channels != 2) throw SpecError("dcgan output must have 2 channels");
  if (output_resolution != 64 && output_resolution != 128) {
    throw SpecError("output_resolution must be 64 or 128");
  }
  if (!(width_mult > 0.0)) throw SpecError("width_mult must be positive");
  for (int64_t c : {64, 128, 256, 512, 1024}) channels(c);
}

nlohmann::json to_json(const GeneratorSpec& s) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& st : s.resolved_stages()) {
    stages.push_back({{"kind", kind_name(st.kind)}, {"base_out_channels", st.base_out_channels}});
  }
  return {{"latent_dim", s.latent_dim},
          {"num_classes", s.num_classes},
          {"output_resolution", s.output_resolution},
          {"output_channels", s.output_channels},
          {"width_mult", s.width_mult},
          {"base_projection_channels", s.base_projection_channels},
          {"stages", stages}};
}

nlohmann::json to_json(const DiscriminatorSpec& s) {
  return {{"input_channels", s.input_channels}, {"num_classes", s.num_classes},
          {"input_resolution", s.input_resolution}, {"width_mult", s.width_mult},
          {"dropout", s.dropout}, {"leaky_slope", s.leaky_slope}, {"pooled_size", s.pooled_size},
          {"batch_norm", s.batch_norm}};
}

nlohmann::json to_json(const DcganSpec& s) {
  return {{"latent_dim", s.latent_dim}, {"output_resolution", s.output_resolution},
          {"output_channels", s.output_channels}, {"width_mult", s.width_mult}};
}

GeneratorSpec generator_spec_from_json(const nlohmann::json& j) {
  try {
    GeneratorSpec s;
    s.latent_dim = j.at("latent_dim");
    s.num_classes = j.at("num_classes");
    s.output_resolution = j.at("output_resolution");
    s.output_channels = j.at("output_channels");
    s.width_mult = j.at("width_mult");
    s.base_projection_channels = j.at("base_projection_channels");
    for (const auto& st : j.at("stages")) {
      s.stages.push_back({kind_from_name(st.at("kind")), st.at("base_out_channels")});
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw SpecError(std::string("malformed generator spec: ") + e.what());
  }
}

DiscriminatorSpec discriminator_spec_from_json(const nlohmann::json& j) {
  try {
    DiscriminatorSpec s;
    s.input_channels = j.at("input_channels");
    s.num_classes = j.at("num_classes");
    s.input_resolution = j.at("input_resolution");
    s.width_mult = j.at("width_mult");
    s.dropout = j.at("dropout");
    s.leaky_slope = j.at("leaky_slope");
    s.pooled_size = j.at("pooled_size");
    s.batch_norm = j.at("batch_norm");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw SpecError(std::string("malformed discriminator spec: ") + e.what());
  }
}

DcganSpec dcgan_spec_from_json(const nlohmann::json& j) {
  try {
    DcganSpec s;
    s.latent_dim = j.at("latent_dim");
    s.output_resolution = j.at("output_resolution");
    s.output_channels = j.at("output_channels");
    s.width_mult = j.at("width_mult");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw SpecError(std::string("malformed dcgan spec: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Building blocks

void init_weights(nn::Module& module, uint64_t seed) {
  torch::NoGradGuard no_grad;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  for (const auto& item : module.named_parameters(/*recurse=*/true)) {
    const auto& name = item.key();
    auto p = item.value();
    const bool is_bias = name.size() >= 4 && name.compare(name.size() - 4, 4, "bias") == 0;
    // BatchNorm scales keep their unit init.
    const bool is_norm_scale = p.dim() == 1 && !is_bias;
    if (is_bias) {
      p.zero_();
    } else if (!is_norm_scale) {
      p.normal_(0.0, kInitStd, gen);
    }
  }
}

int64_t parameter_count(const nn::Module& module) {
  int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

ConvBlockImpl::ConvBlockImpl(int64_t in_channels, int64_t out_channels, bool norm_act_)
    : conv(register_module("conv", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, kKernelSize)
                                                  .padding(kKernelSize / 2)))),
      norm_act(norm_act_) {}

torch::Tensor ConvBlockImpl::forward(const torch::Tensor& x) {
  auto y = conv->forward(x);
  return norm_act ? agegan::selu(pixel_norm_unchecked(y)) : y;
}

ResidualBlockImpl::ResidualBlockImpl(int64_t channels)
    : first(register_module("first", ConvBlock(channels, channels, true))),
      second(register_module("second", ConvBlock(channels, channels, true))) {}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  return second->forward(first->forward(x)) + x;
}

torch::Tensor one_hot(const torch::Tensor& labels, int64_t num_classes) {
  return torch::one_hot(labels.to(torch::kLong), num_classes).to(torch::kFloat32);
}

LatentBatch sample_latents(const torch::Tensor& labels, int64_t latent_dim, at::Generator& gen,
                           int64_t num_classes) {
  LatentBatch b;
  b.z = torch::empty({labels.size(0), latent_dim}, torch::kFloat32).normal_(0.0, 1.0, gen);
  b.onehot = agegan::one_hot(labels, num_classes);
  return b;
}

// ---------------------------------------------------------------------------
// Age-ACGAN generator

AgeGeneratorImpl::AgeGeneratorImpl(GeneratorSpec spec, uint64_t init_seed) : spec_(std::move(spec)) {
  spec_.validate();
  projection_channels_ = spec_.channels(spec_.base_projection_channels);
  projection = register_module(
      "projection", nn::Linear(spec_.latent_dim + spec_.num_classes, projection_channels_ * 16));

  const auto plan = spec_.resolved_stages();
  int64_t channels = projection_channels_, resolution = 4, conv_index = 0, res_index = 0;
  for (size_t i = 0; i < plan.size(); ++i) {
    const auto& st = plan[i];
    Step step{st.kind, nullptr, nullptr, channels, channels, resolution};
    if (st.kind == StageKind::Conv) {
      const bool output_block = i + 1 == plan.size();
      const int64_t out = output_block ? spec_.output_channels : spec_.channels(st.base_out_channels);
      step.conv = register_module("conv" + std::to_string(++conv_index), ConvBlock(channels, out, !output_block));
      step.out_channels = out;
      channels = out;
    } else if (st.kind == StageKind::Residual) {
      step.residual = register_module("res" + std::to_string(++res_index), ResidualBlock(channels));
    } else {
      resolution *= 2;
      step.resolution = resolution;
    }
    steps_.push_back(std::move(step));
  }
  init_weights(*this, init_seed);
}

torch::Tensor AgeGeneratorImpl::forward(const torch::Tensor& z, const torch::Tensor& onehot) {
  auto h = projection->forward(torch::cat({z, onehot}, 1)).view({z.size(0), projection_channels_, 4, 4});
  h = agegan::selu(pixel_norm_unchecked(h));
  for (auto& step : steps_) {
    switch (step.kind) {
      case StageKind::Conv: h = step.conv->forward(h); break;
      case StageKind::Residual: h = step.residual->forward(h); break;
      case StageKind::Upsample:
        h = torch::upsample_nearest2d(h, std::vector<int64_t>{step.resolution, step.resolution});
        break;
    }
  }
  return torch::sigmoid(h);
}

nlohmann::json AgeGeneratorImpl::summary() const {
  nlohmann::json blocks = nlohmann::json::array();
  int64_t convs = 0, residuals = 0, max_width = projection_channels_;
  std::vector<int64_t> kernels;
  blocks.push_back({{"type", "projection"},
                    {"in_features", spec_.latent_dim + spec_.num_classes},
                    {"out_channels", projection_channels_},
                    {"resolution", 4},
                    {"params", parameter_count(*projection)}});
  for (size_t i = 0; i < steps_.size(); ++i) {
    const auto& st = steps_[i];
    nlohmann::json b = {{"type", kind_name(st.kind)},
                        {"in_channels", st.in_channels},
                        {"out_channels", st.out_channels},
                        {"resolution", st.resolution}};
    if (st.kind == StageKind::Conv) {
      ++convs;
      const auto& w = st.conv->conv->weight;
      b["kernel"] = {w.size(2), w.size(3)};
      b["activation"] = st.conv->norm_act ? "pixelnorm+selu" : "sigmoid";
      b["params"] = parameter_count(*st.conv);
      kernels.push_back(w.size(2));
      kernels.push_back(w.size(3));
    } else if (st.kind == StageKind::Residual) {
      ++residuals;
      for (const auto* cb : {&st.residual->first, &st.residual->second}) {
        kernels.push_back((*cb)->conv->weight.size(2));
        kernels.push_back((*cb)->conv->weight.size(3));
      }
      b["kernel"] = {kKernelSize, kKernelSize};
      b["activation"] = "pixelnorm+selu";
      b["params"] = parameter_count(*st.residual);
    } else {
      b["mode"] = "nearest";
    }
    max_width = std::max(max_width, st.out_channels);
    blocks.push_back(std::move(b));
  }
  const bool all_3x3 = std::all_of(kernels.begin(), kernels.end(), [](int64_t k) { return k == 3; });
  return {{"network", "age_acgan_generator"},
          {"blocks", blocks},
          {"conv_blocks", convs},
          {"residual_blocks", residuals},
          {"max_width", max_width},
          {"all_kernels_3x3", all_3x3},
          {"final_activation", "sigmoid"},
          {"output_resolution", spec_.output_resolution},
          {"parameter_count", parameter_count(*this)}};
}

AgeGenerator build_generator(const GeneratorSpec& spec, uint64_t init_seed) {
  return AgeGenerator(spec, init_seed);
}

torch::Tensor generate(AgeGenerator& gen, const LatentBatch& codes) {
  const auto& spec = gen->spec();
  if (codes.z.dim() != 2 || codes.z.size(1) != spec.latent_dim) {
    throw ArgumentError("latent z must be [B, " + std::to_string(spec.latent_dim) + "]");
  }
  const auto& oh = codes.onehot;
  if (oh.dim() != 2 || oh.size(0) != codes.z.size(0) || oh.size(1) != spec.num_classes) {
    throw ArgumentError("age one-hot must be [B, 3]");
  }
  const bool binary = ((oh == 0) | (oh == 1)).all().item<bool>();
  const bool single = (oh.sum(1) == 1).all().item<bool>();
  if (!binary || !single) throw ArgumentError("age code must be one-hot");
  return gen->forward(codes.z, codes.onehot);
}

// ---------------------------------------------------------------------------
// Age-ACGAN discriminator

namespace {

// Six-layer ACGAN-style base plus one extra 512-wide layer.
constexpr int64_t kTrunkBase[kDiscriminatorTrunkLayers] = {32, 64, 128, 256, 512, 512, 512};
constexpr int64_t kTrunkStride[kDiscriminatorTrunkLayers] = {2, 1, 2, 1, 2, 1, 1};

}  // namespace

AgeDiscriminatorImpl::AgeDiscriminatorImpl(DiscriminatorSpec spec, uint64_t init_seed) : spec_(std::move(spec)) {
  spec_.validate();
  trunk = register_module("trunk", nn::ModuleList());
  norms = register_module("norms", nn::ModuleList());
  int64_t in = spec_.input_channels;
  for (int64_t i = 0; i < kDiscriminatorTrunkLayers; ++i) {
    const int64_t out = spec_.channels(kTrunkBase[i]);
    trunk->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, kKernelSize).stride(kTrunkStride[i]).padding(1)));
    if (spec_.batch_norm && i > 0) norms->push_back(nn::BatchNorm2d(out));
    strides_.push_back(kTrunkStride[i]);
    in = out;
  }
  const int64_t features = in * spec_.pooled_size * spec_.pooled_size;
  source_head = register_module("source_head", nn::Linear(features, 1));
  class_head = register_module("class_head", nn::Linear(features, spec_.num_classes));
  init_weights(*this, init_seed);
}

DiscriminatorOutput AgeDiscriminatorImpl::forward(const torch::Tensor& x, std::optional<at::Generator> dropout_gen) {
  const bool drop = is_training() && spec_.dropout > 0.0;
  const double keep = 1.0 - spec_.dropout;
  auto h = x;
  for (size_t i = 0; i < trunk->size(); ++i) {
    h = trunk[i]->as<nn::Conv2d>()->forward(h);
    if (spec_.batch_norm && i > 0) h = norms[i - 1]->as<nn::BatchNorm2d>()->forward(h);
    h = torch::leaky_relu(h, spec_.leaky_slope);
    if (drop) h = h * torch::empty_like(h).bernoulli_(keep, dropout_gen) / keep;
  }
  h = torch::adaptive_avg_pool2d(h, {spec_.pooled_size, spec_.pooled_size}).flatten(1);
  DiscriminatorOutput out;
  out.source = torch::sigmoid(source_head->forward(h)).squeeze(1);
  out.class_probs = torch::softmax(class_head->forward(h), 1);
  return out;
}

nlohmann::json AgeDiscriminatorImpl::summary() const {
  nlohmann::json layers = nlohmann::json::array();
  int64_t resolution = spec_.input_resolution;
  bool all_3x3 = true;
  const auto layers_list = trunk->children();
  for (size_t i = 0; i < layers_list.size(); ++i) {
    const auto* conv = layers_list[i]->as<nn::Conv2d>();
    const auto& w = conv->weight;
    resolution = (resolution + strides_[i] - 1) / strides_[i];
    all_3x3 = all_3x3 && w.size(2) == 3 && w.size(3) == 3;
    layers.push_back({{"type", "conv"},
                      {"in_channels", w.size(1)},
                      {"out_channels", w.size(0)},
                      {"kernel", {w.size(2), w.size(3)}},
                      {"stride", strides_[i]},
                      {"resolution", resolution},
                      {"batch_norm", spec_.batch_norm && i > 0},
                      {"activation", "leaky_relu"},
                      {"params", parameter_count(*conv)}});
  }
  return {{"network", "age_acgan_discriminator"},
          {"trunk", layers},
          {"trunk_conv_layers", static_cast<int64_t>(trunk->size())},
          {"all_kernels_3x3", all_3x3},
          {"pooled_size", spec_.pooled_size},
          {"heads",
           {{{"name", "source"}, {"units", source_head->weight.size(0)}, {"activation", "sigmoid"}},
            {{"name", "class"}, {"units", class_head->weight.size(0)}, {"activation", "softmax"}}}},
          {"parameter_count", parameter_count(*this)}};
}

AgeDiscriminator build_discriminator(const DiscriminatorSpec& spec, uint64_t init_seed) {
  return AgeDiscriminator(spec, init_seed);
}

// ---------------------------------------------------------------------------
// DCGAN baseline: transposed convolutions + batch norm + ReLU, unconditional.

DcganGeneratorImpl::DcganGeneratorImpl(DcganSpec spec, uint64_t init_seed) : spec_(std::move(spec)) {
  spec_.validate();
  body = register_module("body", nn::Sequential());
  int64_t width = spec_.channels(1024);
  body->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(spec_.latent_dim, width, 4).bias(false)));
  body->push_back(nn::BatchNorm2d(width));
  body->push_back(nn::ReLU());
  int64_t base = 1024;
  for (int64_t r = 8; r < spec_.output_resolution; r *= 2) {
    base /= 2;
    const int64_t next = spec_.channels(base);
    body->push_back(
        nn::ConvTranspose2d(nn::ConvTranspose2dOptions(width, next, 4).stride(2).padding(1).bias(false)));
    body->push_back(nn::BatchNorm2d(next));
    body->push_back(nn::ReLU());
    width = next;
  }
  body->push_back(
      nn::ConvTranspose2d(nn::ConvTranspose2dOptions(width, spec_.output_channels, 4).stride(2).padding(1)));
  body->push_back(nn::Sigmoid());
  init_weights(*this, init_seed);
}

torch::Tensor DcganGeneratorImpl::forward(const torch::Tensor& z) {
  return body->forward(z.view({z.size(0), z.size(1), 1, 1}));
}

nlohmann::json DcganGeneratorImpl::summary() const {
  int64_t transposed = 0, batch_norms = 0, max_width = 0;
  for (const auto& m : body->children()) {
    if (auto* t = m->as<nn::ConvTranspose2d>()) {
      ++transposed;
      max_width = std::max(max_width, t->weight.size(1));
    }
    if (m->as<nn::BatchNorm2d>()) ++batch_norms;
  }
  return {{"network", "dcgan_generator"},
          {"transposed_conv_layers", transposed},
          {"batch_norm_layers", batch_norms},
          {"residual_blocks", 0},
          {"conditional", false},
          {"max_width", max_width},
          {"final_activation", "sigmoid"},
          {"output_resolution", spec_.output_resolution},
          {"parameter_count", parameter_count(*this)}};
}

DcganDiscriminatorImpl::DcganDiscriminatorImpl(DcganSpec spec, uint64_t init_seed) : spec_(std::move(spec)) {
  spec_.validate();
  body = register_module("body", nn::Sequential());
  int64_t in = spec_.output_channels, base = 64;
  for (int64_t r = spec_.output_resolution; r > 4; r /= 2, base *= 2) {
    const int64_t out = spec_.channels(base);
    body->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, 4).stride(2).padding(1).bias(base == 64)));
    if (base != 64) body->push_back(nn::BatchNorm2d(out));
    body->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
    in = out;
  }
  body->push_back(nn::Conv2d(nn::Conv2dOptions(in, 1, 4)));
  init_weights(*this, init_seed);
}

DiscriminatorOutput DcganDiscriminatorImpl::forward(const torch::Tensor& x) {
  DiscriminatorOutput out;
  out.source = torch::sigmoid(body->forward(x)).flatten();
  return out;
}

nlohmann::json DcganDiscriminatorImpl::summary() const {
  int64_t convs = 0;
  for (const auto& m : body->children()) {
    if (m->as<nn::Conv2d>()) ++convs;
  }
  return {{"network", "dcgan_discriminator"},
          {"conv_layers", convs},
          {"heads", {{{"name", "source"}, {"units", 1}, {"activation", "sigmoid"}}}},
          {"parameter_count", parameter_count(*this)}};
}

DcganPair build_dcgan_baseline(const DcganSpec& spec, uint64_t init_seed) {
  return {DcganGenerator(spec, init_seed), DcganDiscriminator(spec, init_seed ^ 0x5DEECE66Dull)};
}

}  // namespace agegan
