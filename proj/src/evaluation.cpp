#include "agegan/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "agegan/errors.hpp"
#include "agegan/image_io.hpp"
#include "agegan/seeding.hpp"

namespace agegan {
namespace nn = torch::nn;

double elongation(const torch::Tensor& mask) {
  if (mask.dim() != 2) throw ArgumentError("elongation expects an [H, W] mask");
  auto m = mask.to(torch::kFloat64);
  if (!((m == 0) | (m == 1)).all().item<bool>()) throw ArgumentError("elongation expects a binary mask");
  auto coords = torch::nonzero(m).to(torch::kFloat64);  // [N, 2] as (y, x)
  const int64_t n = coords.size(0);
  if (n < kMinMaskPixels) {
    throw DegenerateMask("mask has " + std::to_string(n) + " foreground pixels, need at least 8");
  }
  auto centred = coords - coords.mean(0, /*keepdim=*/true);
  auto ys = centred.select(1, 0), xs = centred.select(1, 1);
  const double mu20 = (xs * xs).mean().item<double>();
  const double mu02 = (ys * ys).mean().item<double>();
  const double mu11 = (xs * ys).mean().item<double>();
  const double half_trace = 0.5 * (mu20 + mu02);
  const double radius = std::hypot(0.5 * (mu20 - mu02), mu11);
  const double lambda_max = half_trace + radius;
  const double lambda_min = half_trace - radius;
  if (!(lambda_min > 1e-12)) throw DegenerateMask("mask foreground is collinear");
  return std::sqrt(lambda_max / lambda_min);
}

// ---------------------------------------------------------------------------
// Sample sources

namespace {

constexpr int64_t kSynthesisChunk = 64;

torch::Tensor synthesize(AgeGenerator& gen, const torch::Tensor& labels, uint64_t seed) {
  torch::NoGradGuard no_grad;
  gen->eval();
  auto rng = at::make_generator<at::CPUGeneratorImpl>(seed);
  std::vector<torch::Tensor> parts;
  for (int64_t start = 0; start < labels.size(0); start += kSynthesisChunk) {
    auto chunk = labels.slice(0, start, std::min(start + kSynthesisChunk, labels.size(0)));
    parts.push_back(generate(gen, sample_latents(chunk, gen->spec().latent_dim, rng)));
  }
  return torch::cat(parts, 0);
}

}  // namespace

SampleSource generator_source(AgeGenerator gen) {
  return [gen](AgeClass requested, int64_t n, uint64_t seed) mutable {
    return synthesize(gen, torch::full({n}, index_of(requested), torch::kLong), seed);
  };
}

SampleSource shuffled_generator_source(AgeGenerator gen) {
  return [gen](AgeClass, int64_t n, uint64_t seed) mutable {
    auto rng = at::make_generator<at::CPUGeneratorImpl>(derive_seed(seed, {0x5A}));
    auto labels = torch::randint(0, kNumAgeClasses, {n}, rng, torch::kLong);
    return synthesize(gen, labels, seed);
  };
}

SampleSource phantom_source(const PhantomParams& params, int64_t window) {
  return [params, window](AgeClass requested, int64_t n, uint64_t seed) {
    std::vector<torch::Tensor> parts;
    for (int64_t i = 0; i < n; ++i) {
      auto s = generate_sample(params, requested, derive_seed(seed, {static_cast<uint64_t>(i)}));
      parts.push_back(preprocess(s, window));
    }
    return parts.empty() ? torch::empty({0, 2, window, window}) : torch::cat(parts, 0);
  };
}

SampleSource replay_source(const TrainingSet& data) {
  return [data](AgeClass requested, int64_t n, uint64_t seed) {
    auto pool = torch::nonzero(data.labels == index_of(requested)).flatten();
    if (pool.numel() == 0) throw DataError("no real samples of class " + std::string(age_class_name(requested)));
    auto rng = at::make_generator<at::CPUGeneratorImpl>(seed);
    auto pick = torch::randint(0, pool.numel(), {n}, rng, torch::kLong);
    return data.images.index_select(0, pool.index_select(0, pick));
  };
}

torch::Tensor prepare_for_oracle(const torch::Tensor& batch) {
  if (batch.dim() != 4 || batch.size(1) != 2) throw ArgumentError("expected a [B, 2, H, W] batch");
  auto ct = batch.select(1, 0).to(torch::kFloat32);
  auto lo = ct.amin({1, 2}, true), hi = ct.amax({1, 2}, true);
  auto range = hi - lo;
  auto ct_norm = torch::where(range > 0, (ct - lo) / range.clamp_min(1e-12), torch::zeros_like(ct));
  auto mask = (batch.select(1, 1) >= kMaskCutoff).to(torch::kFloat32);
  return torch::stack({ct_norm, mask}, 1);
}

// ---------------------------------------------------------------------------
// Oracle classifier

OracleNetImpl::OracleNetImpl(int64_t window) {
  if (window < 16 || window % 16 != 0) throw ArgumentError("oracle window must be a multiple of 16");
  features = register_module("features", nn::Sequential());
  int64_t in = 2;
  for (int64_t out : {8, 16, 32, 32}) {
    features->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(2).padding(1)));
    features->push_back(nn::ReLU());
    in = out;
  }
  const int64_t side = window / 16;
  head = register_module("head", nn::Linear(in * side * side, kNumAgeClasses));
}

torch::Tensor OracleNetImpl::forward(const torch::Tensor& x) {
  return head->forward(features->forward(x).flatten(1));
}

torch::Tensor Oracle::predict(const torch::Tensor& batch) {
  torch::NoGradGuard no_grad;
  net->eval();
  return net->forward(prepare_for_oracle(batch)).argmax(1);
}

double Oracle::accuracy(const torch::Tensor& batch, const torch::Tensor& labels) {
  if (batch.size(0) == 0) return 0.0;
  return (predict(batch) == labels).to(torch::kFloat64).mean().item<double>();
}

namespace {

void kaiming_init(nn::Module& module, uint64_t seed) {
  torch::NoGradGuard no_grad;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  for (auto& p : module.parameters()) {
    if (p.dim() >= 2) {
      const double fan_in = static_cast<double>(p[0].numel());
      const double bound = std::sqrt(6.0 / fan_in);
      p.uniform_(-bound, bound, gen);
    } else {
      p.zero_();
    }
  }
}

}  // namespace

Oracle train_oracle(const TrainingSet& data, uint64_t seed, const OracleOptions& options) {
  const int64_t n = data.size();
  auto labels = data.labels.clone();
  for (AgeClass c : kAllAgeClasses) {
    if ((labels == index_of(c)).sum().item<int64_t>() < 30) {
      throw DataError("oracle training needs at least 30 samples per class");
    }
  }
  if (options.permute_labels) {
    auto rng = at::make_generator<at::CPUGeneratorImpl>(derive_seed(seed, {0xC0}));
    labels = labels.index_select(0, torch::randperm(n, rng, torch::kLong));
  }

  // Hold out the last ceil(20%) of each class's patients (by true class).
  std::vector<int64_t> train_idx, held_idx;
  for (AgeClass c : kAllAgeClasses) {
    std::vector<int64_t> patients;
    for (int64_t i = 0; i < n; ++i) {
      if (data.labels[i].item<int64_t>() == index_of(c)) patients.push_back(data.patient_ids[static_cast<size_t>(i)]);
    }
    std::sort(patients.begin(), patients.end());
    patients.erase(std::unique(patients.begin(), patients.end()), patients.end());
    const auto held = std::max<size_t>(
        1, static_cast<size_t>(std::ceil(options.held_out_fraction * static_cast<double>(patients.size()) - 1e-9)));
    if (patients.size() < 2) throw DataError("oracle split needs at least 2 patients per class");
    const int64_t first_held = patients[patients.size() - held];
    for (int64_t i = 0; i < n; ++i) {
      if (data.labels[i].item<int64_t>() != index_of(c)) continue;
      (data.patient_ids[static_cast<size_t>(i)] >= first_held ? held_idx : train_idx).push_back(i);
    }
  }
  auto train_t = torch::tensor(train_idx, torch::kLong);
  auto held_t = torch::tensor(held_idx, torch::kLong);
  auto train_x = prepare_for_oracle(data.images.index_select(0, train_t));
  auto train_y = labels.index_select(0, train_t);

  Oracle oracle;
  oracle.window = data.images.size(2);
  oracle.net = OracleNet(oracle.window);
  kaiming_init(*oracle.net, derive_seed(seed, {0x0A}));
  torch::optim::Adam opt(oracle.net->parameters(), torch::optim::AdamOptions(options.learning_rate));
  auto rng = at::make_generator<at::CPUGeneratorImpl>(derive_seed(seed, {0x0B}));
  const int64_t m = train_x.size(0);
  for (int64_t epoch = 0; epoch < options.epochs; ++epoch) {
    oracle.net->train();
    auto perm = torch::randperm(m, rng, torch::kLong);
    for (int64_t start = 0; start < m; start += options.batch_size) {
      auto idx = perm.slice(0, start, std::min(start + options.batch_size, m));
      auto logits = oracle.net->forward(train_x.index_select(0, idx));
      auto loss = torch::nn::functional::cross_entropy(logits, train_y.index_select(0, idx));
      opt.zero_grad();
      loss.backward();
      opt.step();
    }
  }
  oracle.train_accuracy = oracle.accuracy(data.images.index_select(0, train_t), train_y);
  oracle.held_out_accuracy =
      oracle.accuracy(data.images.index_select(0, held_t), labels.index_select(0, held_t));
  return oracle;
}

Oracle train_oracle(const DatasetManifest& manifest, int64_t window, uint64_t seed, const OracleOptions& options) {
  return train_oracle(load_training_set(manifest, window), seed, options);
}

// ---------------------------------------------------------------------------
// Reports

nlohmann::json FidelityReport::to_json() const {
  nlohmann::json per_class;
  for (AgeClass c : kAllAgeClasses) {
    per_class[std::string(age_class_name(c))] = per_class_accuracy[static_cast<size_t>(index_of(c))];
  }
  return {{"per_class_accuracy", per_class},
          {"overall_accuracy", overall_accuracy},
          {"oracle_held_out_accuracy", oracle_held_out_accuracy},
          {"n_per_class", n_per_class},
          {"reliable", reliable},
          {"seed", seed}};
}

FidelityReport conditional_fidelity(Oracle& oracle, const SampleSource& source, int64_t n_per_class, uint64_t seed) {
  if (n_per_class <= 0) throw ArgumentError("n_per_class must be positive");
  FidelityReport r;
  r.n_per_class = n_per_class;
  r.seed = seed;
  r.oracle_held_out_accuracy = oracle.held_out_accuracy;
  r.reliable = oracle.held_out_accuracy >= kOracleReliableAccuracy;
  double total = 0.0;
  for (AgeClass c : kAllAgeClasses) {
    auto batch = source(c, n_per_class, derive_seed(seed, {static_cast<uint64_t>(index_of(c))}));
    const double acc = oracle.accuracy(batch, torch::full({n_per_class}, index_of(c), torch::kLong));
    r.per_class_accuracy[static_cast<size_t>(index_of(c))] = acc;
    total += acc;
  }
  r.overall_accuracy = total / static_cast<double>(kNumAgeClasses);
  return r;
}

double TrendReport::min_gap() const {
  return std::min(classes[1].mean - classes[0].mean, classes[2].mean - classes[1].mean);
}

nlohmann::json TrendReport::to_json() const {
  nlohmann::json j;
  for (AgeClass c : kAllAgeClasses) {
    const auto& t = classes[static_cast<size_t>(index_of(c))];
    j[std::string(age_class_name(c))] = {{"mean", t.mean}, {"sd", t.sd}, {"n", t.n}, {"degenerate_n", t.degenerate_n}};
  }
  j["monotone"] = monotone;
  j["seed"] = seed;
  return j;
}

TrendReport trend_report(const SampleSource& source, int64_t n_per_class, uint64_t seed) {
  if (n_per_class < kMinTrendSamples) throw ArgumentError("trend_report needs at least 32 samples per class");
  TrendReport r;
  r.seed = seed;
  for (AgeClass c : kAllAgeClasses) {
    auto batch = source(c, n_per_class, derive_seed(seed, {static_cast<uint64_t>(index_of(c))}));
    auto masks = threshold_mask(batch.select(1, 1).contiguous(), kMaskCutoff);
    std::vector<double> values;
    auto& t = r.classes[static_cast<size_t>(index_of(c))];
    for (int64_t i = 0; i < masks.size(0); ++i) {
      try {
        values.push_back(elongation(masks[i]));
      } catch (const DegenerateMask&) {
        ++t.degenerate_n;
      }
    }
    if (2 * t.degenerate_n > n_per_class) {
      throw QualityError(std::to_string(t.degenerate_n) + " of " + std::to_string(n_per_class) + " " +
                         std::string(age_class_name(c)) + " masks are degenerate");
    }
    t.n = static_cast<int64_t>(values.size());
    t.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(t.n);
    double ss = 0.0;
    for (double v : values) ss += (v - t.mean) * (v - t.mean);
    t.sd = t.n > 1 ? std::sqrt(ss / static_cast<double>(t.n - 1)) : 0.0;
  }
  r.monotone = r.classes[0].mean < r.classes[1].mean && r.classes[1].mean < r.classes[2].mean;
  return r;
}

// ---------------------------------------------------------------------------
// Grids

torch::Tensor compose_grid(const std::vector<torch::Tensor>& samples, int64_t rows, int64_t cols, bool interleave) {
  if (samples.empty()) throw ArgumentError("emit_grid needs at least one sample");
  if (rows < 1 || cols < 1 || rows * cols < static_cast<int64_t>(samples.size())) {
    throw ArgumentError("grid of " + std::to_string(rows) + "x" + std::to_string(cols) + " cannot hold " +
                        std::to_string(samples.size()) + " samples");
  }
  const int64_t h = samples.front().size(-2), w = samples.front().size(-1);
  auto canvas = torch::zeros({rows * h, 2 * cols * w}, torch::kFloat32);
  for (size_t i = 0; i < samples.size(); ++i) {
    auto s = samples[i].to(torch::kFloat32);
    if (s.dim() == 4) s = s.squeeze(0);
    if (s.dim() != 3 || s.size(0) != 2 || s.size(1) != h || s.size(2) != w) {
      throw ArgumentError("grid samples must all be [2, H, W] of one size");
    }
    const int64_t r = static_cast<int64_t>(i) / cols, c = static_cast<int64_t>(i) % cols;
    const int64_t y = r * h;
    const int64_t ct_x = interleave ? 2 * c * w : c * w;
    const int64_t mask_x = interleave ? (2 * c + 1) * w : (cols + c) * w;
    canvas.slice(0, y, y + h).slice(1, ct_x, ct_x + w).copy_(s[0].clamp(0.0, 1.0));
    canvas.slice(0, y, y + h).slice(1, mask_x, mask_x + w).copy_(s[1].clamp(0.0, 1.0));
  }
  return to_gray8(canvas);
}

void emit_grid(const std::vector<torch::Tensor>& samples, int64_t rows, int64_t cols,
               const std::filesystem::path& path, bool interleave) {
  write_image(path, compose_grid(samples, rows, cols, interleave));
}

}  // namespace agegan
