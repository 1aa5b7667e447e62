#include "agegan/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "agegan/errors.hpp"
#include "agegan/image_io.hpp"
#include "agegan/numeric_blocks.hpp"
#include "agegan/objectives.hpp"
#include "agegan/seeding.hpp"

namespace agegan {
namespace fs = std::filesystem;

std::string architecture_name(Architecture a) {
  return a == Architecture::AgeAcgan ? "age-acgan" : "dcgan";
}

Architecture architecture_from_name(const std::string& s) {
  if (s == "age-acgan") return Architecture::AgeAcgan;
  if (s == "dcgan") return Architecture::Dcgan;
  throw ArgumentError("unknown architecture '" + s + "' (expected age-acgan or dcgan)");
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw ArgumentError("batch_size must be >= 2");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ArgumentError("learning_rate must be >= 0");
  if (epochs < 0 || max_iterations < 0 || checkpoint_every < 0) throw ArgumentError("negative schedule value");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ArgumentError("betas must lie in [0, 1)");
  if (lambda_class < 0.0) throw ArgumentError("lambda_class must be >= 0");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"batch_size", c.batch_size},     {"epochs", c.epochs},
                     {"max_iterations", c.max_iterations}, {"learning_rate", c.learning_rate},
                     {"beta1", c.beta1},               {"beta2", c.beta2},
                     {"lambda_class", c.lambda_class}, {"seed", c.seed},
                     {"checkpoint_every", c.checkpoint_every}, {"resolution", c.resolution},
                     {"width_mult", c.width_mult},     {"latent_dim", c.latent_dim},
                     {"dropout", c.dropout}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("batch_size", c.batch_size);
  get("epochs", c.epochs);
  get("max_iterations", c.max_iterations);
  get("learning_rate", c.learning_rate);
  get("beta1", c.beta1);
  get("beta2", c.beta2);
  get("lambda_class", c.lambda_class);
  get("seed", c.seed);
  get("checkpoint_every", c.checkpoint_every);
  get("resolution", c.resolution);
  get("width_mult", c.width_mult);
  get("latent_dim", c.latent_dim);
  get("dropout", c.dropout);
}

// ---------------------------------------------------------------------------
// Loss log

std::vector<double> LossLog::g_losses() const {
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r.g_loss);
  return out;
}

void LossLog::write_csv(const fs::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << kHeader << '\n';
  char line[160];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%lld,%.9g,%.9g,%.9g,%.9g\n", static_cast<long long>(r.iter), r.d_loss,
                  r.g_loss, r.ls, r.la);
    out << line;
  }
  if (!out) throw IoError("failed writing " + path.string());
}

LossLog LossLog::read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kHeader) throw FormatError(path.string() + ": unexpected header");
  LossLog log;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    LossRow r;
    long long iter = 0;
    if (std::sscanf(line.c_str(), "%lld,%lf,%lf,%lf,%lf", &iter, &r.d_loss, &r.g_loss, &r.ls, &r.la) != 5) {
      throw FormatError(path.string() + ": malformed row '" + line + "'");
    }
    r.iter = iter;
    log.rows.push_back(r);
  }
  return log;
}

// ---------------------------------------------------------------------------
// Models

namespace {

GeneratorSpec generator_spec_for(const TrainConfig& c) {
  GeneratorSpec s;
  s.latent_dim = c.latent_dim;
  s.output_resolution = c.resolution;
  s.width_mult = c.width_mult;
  return s;
}

DiscriminatorSpec discriminator_spec_for(const TrainConfig& c) {
  DiscriminatorSpec s;
  s.input_resolution = c.resolution;
  s.width_mult = c.width_mult;
  s.dropout = c.dropout;
  return s;
}

DcganSpec dcgan_spec_for(const TrainConfig& c) {
  DcganSpec s;
  s.latent_dim = c.latent_dim;
  s.output_resolution = c.resolution;
  s.width_mult = c.width_mult;
  return s;
}

nlohmann::json spec_json_for(Architecture arch, const TrainConfig& c) {
  if (arch == Architecture::AgeAcgan) {
    return {{"generator", to_json(generator_spec_for(c))}, {"discriminator", to_json(discriminator_spec_for(c))}};
  }
  return {{"dcgan", to_json(dcgan_spec_for(c))}};
}

class AgeAcganModel final : public GanModel {
 public:
  explicit AgeAcganModel(const TrainConfig& c)
      : g_(build_generator(generator_spec_for(c), derive_seed(c.seed, {1}))),
        d_(build_discriminator(discriminator_spec_for(c), derive_seed(c.seed, {2}))),
        spec_(spec_json_for(Architecture::AgeAcgan, c)) {}

  Architecture architecture() const override { return Architecture::AgeAcgan; }
  bool conditional() const override { return true; }
  int64_t latent_dim() const override { return g_->spec().latent_dim; }
  torch::Tensor generate(const torch::Tensor& labels, at::Generator& gen) override {
    return generate_from(sample_latents(labels, latent_dim(), gen));
  }
  torch::Tensor generate_from(const LatentBatch& codes) override { return agegan::generate(g_, codes); }
  DiscriminatorOutput discriminate(const torch::Tensor& x, at::Generator& gen) override {
    return d_->forward(x, gen);
  }
  torch::nn::Module& generator() override { return *g_; }
  AgeGenerator age_generator() override { return g_; }
  torch::nn::Module& discriminator() override { return *d_; }
  nlohmann::json spec_json() const override { return spec_; }
  nlohmann::json summary() const override {
    return {{"generator", g_->summary()}, {"discriminator", d_->summary()}};
  }

 private:
  AgeGenerator g_;
  AgeDiscriminator d_;
  nlohmann::json spec_;
};

class DcganModel final : public GanModel {
 public:
  explicit DcganModel(const TrainConfig& c)
      : pair_(build_dcgan_baseline(dcgan_spec_for(c), derive_seed(c.seed, {1}))),
        spec_(spec_json_for(Architecture::Dcgan, c)) {}

  Architecture architecture() const override { return Architecture::Dcgan; }
  bool conditional() const override { return false; }
  int64_t latent_dim() const override { return pair_.generator->spec().latent_dim; }
  torch::Tensor generate(const torch::Tensor& labels, at::Generator& gen) override {
    return generate_from(sample_latents(labels, latent_dim(), gen));
  }
  torch::Tensor generate_from(const LatentBatch& codes) override { return pair_.generator->forward(codes.z); }
  DiscriminatorOutput discriminate(const torch::Tensor& x, at::Generator&) override {
    return pair_.discriminator->forward(x);
  }
  torch::nn::Module& generator() override { return *pair_.generator; }
  AgeGenerator age_generator() override {
    throw ArgumentError("the dcgan baseline has no age-conditioned generator");
  }
  torch::nn::Module& discriminator() override { return *pair_.discriminator; }
  nlohmann::json spec_json() const override { return spec_; }
  nlohmann::json summary() const override {
    return {{"generator", pair_.generator->summary()}, {"discriminator", pair_.discriminator->summary()}};
  }

 private:
  DcganPair pair_;
  nlohmann::json spec_;
};

void set_requires_grad(torch::nn::Module& m, bool flag) {
  for (auto& p : m.parameters()) p.set_requires_grad(flag);
}

void require_finite_params(torch::nn::Module& m, const char* what, int64_t iteration) {
  for (const auto& p : m.parameters()) {
    if (!torch::isfinite(p).all().item<bool>()) {
      throw NumericError(std::string("non-finite ") + what + " parameters", iteration);
    }
  }
}

AdamOptions adam_options(const TrainConfig& c) {
  return {c.learning_rate, c.beta1, c.beta2, 1e-8};
}

}  // namespace

std::unique_ptr<GanModel> make_model(Architecture arch, const TrainConfig& config) {
  if (arch == Architecture::AgeAcgan) return std::make_unique<AgeAcganModel>(config);
  return std::make_unique<DcganModel>(config);
}

torch::Tensor batch_indices(int64_t iteration, int64_t dataset_size, int64_t batch_size, uint64_t seed) {
  if (iteration < 1 || dataset_size < 1) throw ArgumentError("batch_indices needs iteration >= 1 and data");
  const int64_t per_epoch = (dataset_size + batch_size - 1) / batch_size;
  const int64_t epoch = (iteration - 1) / per_epoch;
  const int64_t k = (iteration - 1) % per_epoch;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(derive_seed(seed, {static_cast<uint64_t>(epoch), 0xE90C}));
  auto perm = torch::randperm(dataset_size, gen, torch::kLong);
  auto pos = (torch::arange(batch_size, torch::kLong) + k * batch_size).remainder(dataset_size);
  return perm.index_select(0, pos);
}

int64_t total_iterations(const TrainConfig& config, int64_t dataset_size) {
  const int64_t per_epoch = (dataset_size + config.batch_size - 1) / config.batch_size;
  const int64_t total = config.epochs * per_epoch;
  return config.max_iterations > 0 ? std::min(total, config.max_iterations) : total;
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(Architecture arch, TrainConfig config) : Trainer(arch, (config.validate(), config), true) {}

Trainer::Trainer(Architecture arch, TrainConfig config, bool)
    : config_(std::move(config)),
      model_(make_model(arch, config_)),
      opt_g_(model_->generator().parameters(), adam_options(config_)),
      opt_d_(model_->discriminator().parameters(), adam_options(config_)),
      rng_(at::make_generator<at::CPUGeneratorImpl>(derive_seed(config_.seed, {3}))) {}

LossRow Trainer::train_step(const torch::Tensor& real_batch, const torch::Tensor& real_labels) {
  const int64_t it = iteration_ + 1;
  const int64_t b = real_batch.size(0);
  if (real_batch.dim() != 4 || real_batch.size(1) != 2 || real_batch.size(2) != config_.resolution ||
      real_batch.size(3) != config_.resolution) {
    throw ArgumentError("real batch must be [B, 2, resolution, resolution]");
  }
  if (real_labels.dim() != 1 || real_labels.size(0) != b) throw ArgumentError("one label per real sample");
  LossRow row;
  row.iter = it;
  discriminator_phase(real_batch, real_labels, row);
  generator_phase(b, row);
  require_finite_params(model_->generator(), "generator", it);
  require_finite_params(model_->discriminator(), "discriminator", it);
  iteration_ = it;
  return row;
}

void Trainer::discriminator_phase(const torch::Tensor& real_batch, const torch::Tensor& real_labels, LossRow& row) {
  const int64_t it = row.iter;
  const int64_t b = real_batch.size(0);
  const bool conditional = model_->conditional();
  auto& g = model_->generator();
  auto& d = model_->discriminator();
  g.train();
  d.train();

  // Minimize -(L_s + L_a) with G frozen.
  set_requires_grad(g, false);
  set_requires_grad(d, true);
  {
    auto fake_labels = torch::randint(0, kNumAgeClasses, {b}, rng_, torch::kLong);
    torch::Tensor fake;
    {
      torch::NoGradGuard no_grad;
      fake = model_->generate(fake_labels, rng_);
    }
    auto real_out = model_->discriminate(real_batch, rng_);
    auto fake_out = model_->discriminate(fake, rng_);
    BatchPredictions preds{real_out.source, fake_out.source, torch::Tensor(), torch::Tensor(),
                           real_labels, fake_labels};
    if (conditional) {
      preds.class_real = real_out.class_probs;
      preds.class_fake = fake_out.class_probs;
    }
    auto d_loss = discriminator_loss(preds);
    row.d_loss = d_loss.item<double>();
    {
      torch::NoGradGuard no_grad;
      row.ls = source_ll(preds.source_real, preds.source_fake).item<double>();
      row.la = conditional ? age_ll(preds.class_real, real_labels, preds.class_fake, fake_labels).item<double>() : 0.0;
    }
    if (!std::isfinite(row.d_loss)) throw NumericError("non-finite discriminator loss", it);
    opt_d_.zero_grad();
    d_loss.backward();
    opt_d_.step();
  }
}

void Trainer::generator_phase(int64_t b, LossRow& row) {
  const int64_t it = row.iter;
  const bool conditional = model_->conditional();
  auto& g = model_->generator();
  auto& d = model_->discriminator();
  g.train();
  d.train();

  // Fresh latents and labels, D frozen.
  set_requires_grad(d, false);
  set_requires_grad(g, true);
  {
    auto labels = torch::randint(0, kNumAgeClasses, {b}, rng_, torch::kLong);
    auto fake = model_->generate(labels, rng_);
    auto out = model_->discriminate(fake, rng_);
    auto g_loss = generator_loss(out.source, conditional ? out.class_probs : torch::Tensor(), labels,
                                 config_.lambda_class);
    row.g_loss = g_loss.item<double>();
    if (!std::isfinite(row.g_loss)) throw NumericError("non-finite generator loss", it);
    opt_g_.zero_grad();
    g_loss.backward();
    opt_g_.step();
  }
  set_requires_grad(d, true);
}

std::vector<std::pair<std::string, torch::Tensor>> Trainer::state_tensors() {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  auto add_module = [&](const std::string& prefix, torch::nn::Module& m, Adam& opt) {
    const auto named = m.named_parameters();
    for (const auto& p : named) out.emplace_back(prefix + "/" + p.key(), p.value());
    for (const auto& buf : m.named_buffers()) out.emplace_back(prefix + "/buffer/" + buf.key(), buf.value());
    for (size_t i = 0; i < named.size(); ++i) {
      out.emplace_back("opt_" + prefix + "/m/" + named[i].key(), opt.first_moments()[i]);
      out.emplace_back("opt_" + prefix + "/v/" + named[i].key(), opt.second_moments()[i]);
    }
  };
  add_module("generator", model_->generator(), opt_g_);
  add_module("discriminator", model_->discriminator(), opt_d_);
  return out;
}

namespace {

constexpr const char* kCheckpointFormat = "agegan-checkpoint";
constexpr int kCheckpointVersion = 1;

std::string to_hex(const torch::Tensor& bytes) {
  static const char* digits = "0123456789abcdef";
  auto b = bytes.contiguous();
  std::string s;
  const auto* p = b.data_ptr<uint8_t>();
  for (int64_t i = 0; i < b.numel(); ++i) {
    s.push_back(digits[p[i] >> 4]);
    s.push_back(digits[p[i] & 0xF]);
  }
  return s;
}

torch::Tensor from_hex(const std::string& s) {
  if (s.size() % 2 != 0) throw FormatError("malformed rng state");
  auto t = torch::empty({static_cast<int64_t>(s.size() / 2)}, torch::kUInt8);
  auto* p = t.data_ptr<uint8_t>();
  for (size_t i = 0; i < s.size(); i += 2) p[i / 2] = static_cast<uint8_t>(std::stoi(s.substr(i, 2), nullptr, 16));
  return t;
}

}  // namespace

void Trainer::save_checkpoint(const fs::path& path) {
  nlohmann::json params = nlohmann::json::object();
  std::string payload;
  for (const auto& [name, tensor] : state_tensors()) {
    auto data = tensor.detach().to(torch::kFloat32).contiguous();
    const auto offset = payload.size();
    const auto length = static_cast<size_t>(data.numel()) * sizeof(float);
    payload.append(reinterpret_cast<const char*>(data.data_ptr<float>()), length);
    params[name] = {{"dims", data.sizes().vec()}, {"offset", offset}, {"length", length}};
  }
  nlohmann::json header = {{"format", kCheckpointFormat},
                           {"version", kCheckpointVersion},
                           {"architecture", architecture_name(architecture())},
                           {"spec", model_->spec_json()},
                           {"config", config_},
                           {"iteration", iteration_},
                           {"optimizer", {{"generator_steps", opt_g_.steps()}, {"discriminator_steps", opt_d_.steps()}}},
                           {"rng_state", to_hex(rng_.get_state())},
                           {"parameters", params}};
  const std::string text = header.dump();
  std::string bytes;
  const auto len = static_cast<uint64_t>(text.size());
  for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<char>((len >> (8 * i)) & 0xFFu));
  bytes += text;
  bytes += payload;

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

namespace {

struct RawCheckpoint {
  nlohmann::json header;
  std::string payload;
};

RawCheckpoint read_checkpoint_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8) throw FormatError(path.string() + ": truncated checkpoint");
  uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<uint64_t>(static_cast<unsigned char>(bytes[i])) << (8 * i);
  if (len > bytes.size() - 8) throw FormatError(path.string() + ": header length exceeds file");
  RawCheckpoint raw;
  try {
    raw.header = nlohmann::json::parse(bytes.substr(8, len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad checkpoint header: " + e.what());
  }
  if (raw.header.value("format", "") != kCheckpointFormat) throw FormatError(path.string() + ": not a checkpoint");
  raw.payload = bytes.substr(8 + len);
  return raw;
}

Trainer restore(Architecture arch, const TrainConfig& config, const RawCheckpoint& raw, const fs::path& path) {
  Trainer t(arch, config);
  const auto& params = raw.header.at("parameters");
  torch::NoGradGuard no_grad;
  auto tensors = t.state_tensors();
  if (params.size() != tensors.size()) throw FormatError(path.string() + ": tensor count mismatch");
  for (auto& [name, tensor] : tensors) {
    if (!params.contains(name)) throw FormatError(path.string() + ": missing tensor " + name);
    const auto& entry = params.at(name);
    const auto dims = entry.at("dims").get<std::vector<int64_t>>();
    const auto offset = entry.at("offset").get<size_t>();
    const auto length = entry.at("length").get<size_t>();
    if (dims != tensor.sizes().vec()) throw FormatError(path.string() + ": shape mismatch for " + name);
    if (offset + length > raw.payload.size() || length != static_cast<size_t>(tensor.numel()) * sizeof(float)) {
      throw FormatError(path.string() + ": truncated payload for " + name);
    }
    auto src = torch::empty(dims, torch::kFloat32);
    std::memcpy(src.data_ptr<float>(), raw.payload.data() + offset, length);
    tensor.copy_(src.to(tensor.scalar_type()));
  }
  return t;
}

}  // namespace

Trainer Trainer::load_checkpoint(const fs::path& path) {
  auto raw = read_checkpoint_file(path);
  try {
    const auto arch = architecture_from_name(raw.header.at("architecture").get<std::string>());
    const auto config = raw.header.at("config").get<TrainConfig>();
    return load_checkpoint(path, arch, config);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Trainer Trainer::load_checkpoint(const fs::path& path, Architecture arch, const TrainConfig& requested) {
  auto raw = read_checkpoint_file(path);
  try {
    const auto stored_arch = architecture_from_name(raw.header.at("architecture").get<std::string>());
    if (stored_arch != arch) {
      throw SpecMismatchError("checkpoint holds a " + architecture_name(stored_arch) + " model, not " +
                              architecture_name(arch));
    }
    if (raw.header.at("spec") != spec_json_for(arch, requested)) {
      throw SpecMismatchError("checkpoint architecture spec differs from the requested configuration");
    }
    Trainer t = restore(arch, requested, raw, path);
    t.iteration_ = raw.header.at("iteration").get<int64_t>();
    t.opt_g_.set_steps(raw.header.at("optimizer").at("generator_steps").get<int64_t>());
    t.opt_d_.set_steps(raw.header.at("optimizer").at("discriminator_steps").get<int64_t>());
    t.rng_.set_state(from_hex(raw.header.at("rng_state").get<std::string>()));
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Runs

std::vector<double> moving_average(const std::vector<double>& values, int64_t window) {
  if (window < 1) throw ArgumentError("window must be positive");
  std::vector<double> out;
  const auto w = static_cast<size_t>(window);
  if (values.size() < w) return out;
  double sum = 0.0;
  for (size_t i = 0; i < values.size(); ++i) {
    sum += values[i];
    if (i >= w) sum -= values[i - w];
    if (i + 1 >= w) out.push_back(sum / static_cast<double>(w));
  }
  return out;
}

Curve smoothed_curve(const LossLog& log, int64_t window) {
  Curve c;
  c.values = moving_average(log.g_losses(), window);
  for (size_t k = 0; k < c.values.size(); ++k) c.iters.push_back(log.rows[k + static_cast<size_t>(window) - 1].iter);
  return c;
}

std::optional<int64_t> detect_convergence(const Curve& curve, double band, int64_t min_hold) {
  if (curve.values.empty()) return std::nullopt;
  const double final_value = curve.values.back();
  const double tol = band * std::abs(final_value);
  size_t first = curve.values.size() - 1;
  while (first > 0 && std::abs(curve.values[first - 1] - final_value) <= tol) --first;
  if (curve.iters.back() - curve.iters[first] < min_hold) return std::nullopt;
  return curve.iters[first];
}

namespace {

nlohmann::json run_report(Architecture arch, const Trainer& t, GanModel& model, const LossLog& log,
                          const std::optional<int64_t>& convergence) {
  nlohmann::json report = {{"architecture", architecture_name(arch)},
                           {"iterations", t.iteration()},
                           {"config", t.config()},
                           {"summary", model.summary()},
                           {"smoothing_window", kSmoothingWindow},
                           {"convergence_band", kConvergenceBand},
                           {"convergence_min_hold", kConvergenceMinHold}};
  report["convergence_iteration"] = convergence ? nlohmann::json(*convergence) : nlohmann::json(nullptr);
  if (!log.rows.empty()) {
    const auto& last = log.rows.back();
    report["final"] = {{"d_loss", last.d_loss}, {"g_loss", last.g_loss}, {"ls", last.ls}, {"la", last.la}};
  }
  return report;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace

RunResult train(const TrainConfig& config, const DatasetManifest& manifest, Architecture arch, const fs::path& out_dir,
                const std::optional<fs::path>& resume) {
  if (manifest.entries.empty()) throw DataError("dataset is empty");
  if (manifest.resolution < config.resolution) {
    throw ArgumentError("dataset resolution is smaller than the training resolution");
  }
  return train(config, load_training_set(manifest, config.resolution), arch, out_dir, resume);
}

RunResult train(const TrainConfig& config, const TrainingSet& data, Architecture arch, const fs::path& out_dir,
                const std::optional<fs::path>& resume) {
  config.validate();
  if (data.size() == 0) throw DataError("dataset is empty");
  try {
    fs::create_directories(out_dir / "checkpoints");
  } catch (const fs::filesystem_error& e) {
    throw IoError(e.what());
  }

  Trainer trainer = resume ? Trainer::load_checkpoint(*resume, arch, config) : Trainer(arch, config);
  LossLog log;
  if (resume && fs::exists(out_dir / "losses.csv")) {
    for (const auto& r : LossLog::read_csv(out_dir / "losses.csv").rows) {
      if (r.iter <= trainer.iteration()) log.rows.push_back(r);
    }
  }

  const int64_t total = total_iterations(config, data.size());
  try {
    for (int64_t it = trainer.iteration() + 1; it <= total; ++it) {
      auto idx = batch_indices(it, data.size(), config.batch_size, config.seed);
      log.rows.push_back(trainer.train_step(data.images.index_select(0, idx), data.labels.index_select(0, idx)));
      if (config.checkpoint_every > 0 && it % config.checkpoint_every == 0) {
        trainer.save_checkpoint(out_dir / "checkpoints" / ("iter_" + std::to_string(it) + ".ckpt"));
      }
    }
  } catch (const NumericError&) {
    log.write_csv(out_dir / "losses.csv");
    throw;
  }

  log.write_csv(out_dir / "losses.csv");
  trainer.save_checkpoint(out_dir / "final.ckpt");
  RunResult result;
  result.dir = out_dir;
  result.iterations = trainer.iteration();
  result.convergence_iteration = detect_convergence(smoothed_curve(log));
  write_json(out_dir / "report.json", run_report(arch, trainer, trainer.model(), log, result.convergence_iteration));
  result.log = std::move(log);
  return result;
}

nlohmann::json ComparisonReport::to_json() const {
  auto arm = [](const RunResult& r, const Curve& c) {
    nlohmann::json j = {{"iterations", r.iterations}, {"smoothed_points", c.values.size()}};
    j["convergence_iteration"] = r.convergence_iteration ? nlohmann::json(*r.convergence_iteration) : nlohmann::json(nullptr);
    j["final_smoothed_g_loss"] = c.values.empty() ? nlohmann::json(nullptr) : nlohmann::json(c.values.back());
    return j;
  };
  return {{"age_acgan", arm(age_acgan, age_acgan_curve)},
          {"dcgan", arm(dcgan, dcgan_curve)},
          {"smoothing_window", kSmoothingWindow},
          {"convergence_band", kConvergenceBand},
          {"convergence_min_hold", kConvergenceMinHold}};
}

ComparisonReport run_comparison(const TrainConfig& config, const DatasetManifest& manifest, const fs::path& out_dir) {
  if (manifest.entries.empty()) throw DataError("dataset is empty");
  return run_comparison(config, load_training_set(manifest, config.resolution), out_dir);
}

ComparisonReport run_comparison(const TrainConfig& config, const TrainingSet& data, const fs::path& out_dir) {
  ComparisonReport report;
  report.age_acgan = train(config, data, Architecture::AgeAcgan, out_dir / "age_acgan");
  report.dcgan = train(config, data, Architecture::Dcgan, out_dir / "dcgan");
  report.age_acgan_curve = smoothed_curve(report.age_acgan.log);
  report.dcgan_curve = smoothed_curve(report.dcgan.log);
  if (report.age_acgan_curve.iters != report.dcgan_curve.iters) {
    throw Error("comparison arms ran on different iteration grids");
  }

  std::ofstream csv(out_dir / "comparison.csv", std::ios::trunc);
  if (!csv) throw IoError("cannot write " + (out_dir / "comparison.csv").string());
  csv << "iter,age_acgan,dcgan\n";
  char line[128];
  for (size_t k = 0; k < report.age_acgan_curve.iters.size(); ++k) {
    std::snprintf(line, sizeof line, "%lld,%.9g,%.9g\n", static_cast<long long>(report.age_acgan_curve.iters[k]),
                  report.age_acgan_curve.values[k], report.dcgan_curve.values[k]);
    csv << line;
  }
  csv.close();
  write_png(out_dir / "comparison.png",
            render_line_chart({report.age_acgan_curve.values, report.dcgan_curve.values}));
  write_json(out_dir / "report.json", report.to_json());
  return report;
}

}  // namespace agegan
