#include "agegan/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include "agegan/errors.hpp"
#include "agegan/seeding.hpp"
#include "agegan/tensor_io.hpp"

namespace agegan {
namespace fs = std::filesystem;

std::string_view age_class_name(AgeClass c) {
  switch (c) {
    case AgeClass::Infant: return "infant";
    case AgeClass::Preschool: return "preschool";
    case AgeClass::Adolescent: return "adolescent";
  }
  throw IndexError("unknown age class");
}

AgeClass age_class_from_name(std::string_view name) {
  for (AgeClass c : kAllAgeClasses) {
    if (age_class_name(c) == name) return c;
  }
  throw ArgumentError("unknown age class '" + std::string(name) + "'");
}

AgeClass age_class_from_index(int64_t index) {
  if (index < 0 || index >= kNumAgeClasses) {
    throw IndexError("age class index " + std::to_string(index) + " outside [0, 3)");
  }
  return static_cast<AgeClass>(index);
}

AgeRange age_range(AgeClass c) {
  switch (c) {
    case AgeClass::Infant: return {1, 3};
    case AgeClass::Preschool: return {4, 6};
    case AgeClass::Adolescent: return {16, 18};
  }
  throw IndexError("unknown age class");
}

void PhantomParams::validate() const {
  auto fail = [](const std::string& what) { throw ArgumentError("invalid phantom params: " + what); };
  if (resolution < 16) fail("resolution must be >= 16");
  if (!(organ_area_px >= 8.0)) fail("organ_area_px must be >= 8");
  for (size_t i = 0; i < aspect_mean.size(); ++i) {
    if (!(aspect_mean[i] - aspect_jitter >= 1.0)) fail("aspect ratios must stay >= 1 after jitter");
    if (i > 0 && !(aspect_mean[i] > aspect_mean[i - 1])) fail("aspect_mean must increase with age");
  }
  if (aspect_jitter < 0.0 || rotation_jitter_deg < 0.0 || noise_sigma < 0.0) fail("negative jitter");
  auto in_unit = [](double mean, double jitter) { return mean - jitter >= 0.0 && mean + jitter <= 1.0; };
  if (!in_unit(body_intensity, body_intensity_jitter)) fail("body intensity leaves [0, 1]");
  if (!in_unit(organ_intensity, organ_intensity_jitter)) fail("organ intensity leaves [0, 1]");
  if (!in_unit(background, 0.0)) fail("background leaves [0, 1]");
  if (streak_probability < 0.0 || streak_probability > 1.0) fail("streak_probability outside [0, 1]");
}

void to_json(nlohmann::json& j, const PhantomParams& p) {
  j = nlohmann::json{{"resolution", p.resolution},
                     {"organ_area_px", p.organ_area_px},
                     {"aspect_mean", p.aspect_mean},
                     {"aspect_jitter", p.aspect_jitter},
                     {"rotation_jitter_deg", p.rotation_jitter_deg},
                     {"body_intensity", p.body_intensity},
                     {"body_intensity_jitter", p.body_intensity_jitter},
                     {"organ_intensity", p.organ_intensity},
                     {"organ_intensity_jitter", p.organ_intensity_jitter},
                     {"background", p.background},
                     {"noise_sigma", p.noise_sigma},
                     {"streak_probability", p.streak_probability}};
}

void from_json(const nlohmann::json& j, PhantomParams& p) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("resolution", p.resolution);
  get("organ_area_px", p.organ_area_px);
  get("aspect_mean", p.aspect_mean);
  get("aspect_jitter", p.aspect_jitter);
  get("rotation_jitter_deg", p.rotation_jitter_deg);
  get("body_intensity", p.body_intensity);
  get("body_intensity_jitter", p.body_intensity_jitter);
  get("organ_intensity", p.organ_intensity);
  get("organ_intensity_jitter", p.organ_intensity_jitter);
  get("background", p.background);
  get("noise_sigma", p.noise_sigma);
  get("streak_probability", p.streak_probability);
}

namespace {

// Patient-level share of each jitter; the slice draws the remainder so the
// total stays within the configured bound.
constexpr double kPatientShare = 2.0 / 3.0;
constexpr int kPlacementAttempts = 4;
constexpr double kRetryShrink = 0.85;

double uniform(std::mt19937_64& rng, double half_width) {
  return std::uniform_real_distribution<double>(-half_width, half_width)(rng);
}

struct Ellipse {
  double cx, cy, a, b, theta;

  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(theta), s = std::sin(theta);
    const double u = (dx * c + dy * s) / a;
    const double v = (-dx * s + dy * c) / b;
    return u * u + v * v <= 1.0;
  }

  // Half-extents of the axis-aligned bounding box.
  double half_width() const {
    return std::hypot(a * std::cos(theta), b * std::sin(theta));
  }
  double half_height() const {
    return std::hypot(a * std::sin(theta), b * std::cos(theta));
  }
};

}  // namespace

PatientAnatomy draw_patient(const PhantomParams& params, uint64_t seed) {
  std::mt19937_64 rng(seed);
  PatientAnatomy p;
  p.aspect_offset = uniform(rng, params.aspect_jitter * kPatientShare);
  p.area_scale = 1.0 + uniform(rng, 0.10);
  p.body_scale = 1.0 + uniform(rng, 0.08);
  p.body_intensity = params.body_intensity + uniform(rng, params.body_intensity_jitter);
  p.organ_intensity = params.organ_intensity + uniform(rng, params.organ_intensity_jitter);
  p.rotation_deg = uniform(rng, params.rotation_jitter_deg * kPatientShare);
  return p;
}

Sample render_slice(const PhantomParams& params, AgeClass age_class, const PatientAnatomy& patient,
                    uint64_t slice_seed) {
  params.validate();
  std::mt19937_64 rng(slice_seed);
  const int64_t n = params.resolution;
  const double res = static_cast<double>(n);
  const double centre = (res - 1.0) / 2.0;

  const double aspect = params.aspect_mean[static_cast<size_t>(index_of(age_class))] + patient.aspect_offset +
                        uniform(rng, params.aspect_jitter * (1.0 - kPatientShare));
  const double area = params.organ_area_px * patient.area_scale * (1.0 + uniform(rng, 0.05));
  const double theta_deg = patient.rotation_deg + uniform(rng, params.rotation_jitter_deg * (1.0 - kPatientShare));
  const double shift_x = uniform(rng, 0.06 * res);
  const double shift_y = uniform(rng, 0.06 * res);

  const Ellipse body{centre, centre, 0.42 * res * patient.body_scale, 0.32 * res * patient.body_scale, 0.0};

  Ellipse organ{};
  bool placed = false;
  double scale = 1.0;
  for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt, scale *= kRetryShrink) {
    const double minor = std::sqrt(area / (std::numbers::pi * aspect)) * scale;
    organ = Ellipse{centre + shift_x * scale, centre + shift_y * scale, aspect * minor, minor,
                    theta_deg * std::numbers::pi / 180.0};
    placed = organ.cx - organ.half_width() >= 1.0 && organ.cx + organ.half_width() <= res - 2.0 &&
             organ.cy - organ.half_height() >= 1.0 && organ.cy + organ.half_height() <= res - 2.0;
  }
  if (!placed) throw GeometryError("organ ellipse does not fit inside the image");

  std::normal_distribution<double> noise(0.0, 1.0);
  const bool streaks = params.streak_probability > 0.0 &&
                       std::bernoulli_distribution(params.streak_probability)(rng);
  const double streak_angle = std::uniform_real_distribution<double>(0.0, std::numbers::pi)(rng);

  auto ct = torch::empty({n, n}, torch::kFloat32);
  auto mask = torch::zeros({n, n}, torch::kFloat32);
  auto ct_a = ct.accessor<float, 2>();
  auto mask_a = mask.accessor<float, 2>();
  int64_t foreground = 0;
  for (int64_t y = 0; y < n; ++y) {
    for (int64_t x = 0; x < n; ++x) {
      const double px = static_cast<double>(x), py = static_cast<double>(y);
      double v = params.background;
      if (body.contains(px, py)) v = patient.body_intensity;
      if (organ.contains(px, py)) {
        v = patient.organ_intensity;
        mask_a[y][x] = 1.0f;
        ++foreground;
      }
      if (streaks) {
        // Alternating bright/dark bands radiating through the organ centre.
        const double ang = std::atan2(py - organ.cy, px - organ.cx) - streak_angle;
        v += 0.08 * std::cos(12.0 * ang);
      }
      v += params.noise_sigma * noise(rng);
      ct_a[y][x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  if (foreground < 8) throw GeometryError("organ mask has fewer than 8 pixels");

  Sample s;
  s.ct = ct;
  s.mask = mask;
  s.age_class = age_class;
  return s;
}

Sample generate_sample(const PhantomParams& params, AgeClass age_class, uint64_t seed) {
  params.validate();
  const auto patient = draw_patient(params, derive_seed(seed, {0}));
  return render_slice(params, age_class, patient, derive_seed(seed, {1}));
}

int64_t DatasetManifest::count(AgeClass c) const {
  return std::count_if(entries.begin(), entries.end(), [c](const ManifestEntry& e) { return e.age_class == c; });
}

void DatasetManifest::validate(bool check_files) const {
  if (version != kVersion) throw FormatError("unsupported manifest version " + std::to_string(version));
  const int64_t first = count(AgeClass::Infant);
  for (AgeClass c : kAllAgeClasses) {
    if (count(c) != first) throw FormatError("manifest classes are unbalanced");
  }
  std::set<std::string> ids;
  for (const auto& e : entries) {
    if (!ids.insert(e.id).second) throw FormatError("duplicate sample id " + e.id);
  }
  if (check_files) {
    for (size_t i = 0; i < entries.size(); ++i) {
      try {
        auto s = load_sample(i);
        if (s.ct.sizes() != s.mask.sizes()) throw FormatError("ct/mask dims differ for " + entries[i].id);
      } catch (const IoError& e) {
        throw FormatError(e.what());
      }
    }
  }
}

Sample DatasetManifest::load_sample(size_t index) const {
  const auto& e = entries.at(index);
  Sample s;
  s.ct = load_tensor(root / e.ct);
  s.mask = load_tensor(root / e.mask);
  s.age_class = e.age_class;
  s.patient_id = e.patient_id;
  s.slice_idx = e.slice_idx;
  return s;
}

nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : m.entries) {
    entries.push_back({{"id", e.id},
                       {"age_class", std::string(age_class_name(e.age_class))},
                       {"patient_id", e.patient_id},
                       {"slice_idx", e.slice_idx},
                       {"ct", e.ct},
                       {"mask", e.mask}});
  }
  return {{"version", m.version}, {"resolution", m.resolution}, {"entries", entries}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    m.version = j.at("version").get<int>();
    m.resolution = j.at("resolution").get<int64_t>();
    for (const auto& e : j.at("entries")) {
      ManifestEntry entry;
      entry.id = e.at("id").get<std::string>();
      entry.age_class = age_class_from_name(e.at("age_class").get<std::string>());
      entry.patient_id = e.at("patient_id").get<int64_t>();
      entry.slice_idx = e.at("slice_idx").get<int64_t>();
      entry.ct = e.at("ct").get<std::string>();
      entry.mask = e.at("mask").get<std::string>();
      m.entries.push_back(std::move(entry));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what());
  } catch (const ArgumentError& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

void save_manifest(const DatasetManifest& m, const fs::path& dir) {
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << manifest_to_json(m).dump(2) << '\n';
  if (!out) throw IoError("failed writing " + (dir / "manifest.json").string());
}

DatasetManifest load_manifest(const fs::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  auto m = manifest_from_json(j);
  m.root = dir;
  m.validate(false);
  return m;
}

DatasetManifest build_dataset(const PhantomParams& params, int64_t per_class, int64_t patients_per_class,
                              uint64_t seed, const fs::path& out_dir) {
  params.validate();
  if (per_class < 0 || patients_per_class <= 0) throw ArgumentError("counts must be non-negative");
  if (per_class % patients_per_class != 0) {
    throw ArgumentError("per_class must be divisible by patients_per_class");
  }
  try {
    fs::create_directories(out_dir / "ct");
    fs::create_directories(out_dir / "mask");
  } catch (const fs::filesystem_error& e) {
    throw IoError(e.what());
  }

  DatasetManifest m;
  m.resolution = params.resolution;
  m.root = out_dir;
  const int64_t slices = per_class / patients_per_class;
  for (AgeClass c : kAllAgeClasses) {
    const auto ci = static_cast<uint64_t>(index_of(c));
    for (int64_t p = 0; p < (per_class > 0 ? patients_per_class : 0); ++p) {
      const int64_t patient_id = index_of(c) * patients_per_class + p;
      const auto anatomy = draw_patient(params, derive_seed(seed, {ci, static_cast<uint64_t>(p)}));
      for (int64_t s = 0; s < slices; ++s) {
        auto sample = render_slice(params, c, anatomy,
                                   derive_seed(seed, {ci, static_cast<uint64_t>(p), static_cast<uint64_t>(s)}));
        char id[64];
        std::snprintf(id, sizeof id, "%s_p%02lld_s%02lld", std::string(age_class_name(c)).c_str(),
                      static_cast<long long>(patient_id), static_cast<long long>(s));
        ManifestEntry e{id, c, patient_id, s, "ct/" + std::string(id) + ".agt", "mask/" + std::string(id) + ".agt"};
        save_tensor(out_dir / e.ct, sample.ct);
        save_tensor(out_dir / e.mask, sample.mask);
        m.entries.push_back(std::move(e));
      }
    }
  }
  save_manifest(m, out_dir);
  return m;
}

torch::Tensor preprocess(const Sample& sample, int64_t window) {
  const int64_t h = sample.ct.size(0), w = sample.ct.size(1);
  if (window <= 0 || window > h || window > w) throw ArgumentError("window exceeds sample resolution");
  auto mask = sample.mask.to(torch::kFloat32);
  const double total = mask.sum().item<double>();
  if (total <= 0.0) throw DegenerateMask("cannot crop around an empty mask");

  auto ys = torch::arange(h, torch::kFloat32).unsqueeze(1);
  auto xs = torch::arange(w, torch::kFloat32).unsqueeze(0);
  const double cy = (mask * ys).sum().item<double>() / total;
  const double cx = (mask * xs).sum().item<double>() / total;
  auto start = [window](double c, int64_t extent) {
    const auto s = static_cast<int64_t>(std::floor(c - static_cast<double>(window) / 2.0 + 0.5));
    return std::clamp<int64_t>(s, 0, extent - window);
  };
  const int64_t y0 = start(cy, h), x0 = start(cx, w);

  auto ct = sample.ct.slice(0, y0, y0 + window).slice(1, x0, x0 + window).to(torch::kFloat32);
  auto m = mask.slice(0, y0, y0 + window).slice(1, x0, x0 + window);
  const auto lo = ct.min(), hi = ct.max();
  const double range = (hi - lo).item<double>();
  auto ct_norm = range > 0.0 ? (ct - lo) / (hi - lo) : torch::zeros_like(ct);
  return torch::stack({ct_norm, m}).unsqueeze(0).contiguous();
}

torch::Tensor threshold_mask(const torch::Tensor& soft_mask, double cutoff) {
  if (!(cutoff > 0.0 && cutoff < 1.0)) throw ArgumentError("threshold cutoff must lie in (0, 1)");
  if (soft_mask.numel() > 0 &&
      (soft_mask.min().item<double>() < 0.0 || soft_mask.max().item<double>() > 1.0)) {
    throw ArgumentError("soft mask values must lie in [0, 1]");
  }
  return (soft_mask >= cutoff).to(torch::kFloat32);
}

TrainingSet load_training_set(const DatasetManifest& m, int64_t window) {
  if (m.entries.empty()) throw DataError("dataset is empty");
  std::vector<torch::Tensor> images;
  std::vector<int64_t> labels;
  TrainingSet set;
  for (size_t i = 0; i < m.entries.size(); ++i) {
    auto s = m.load_sample(i);
    images.push_back(preprocess(s, window));
    labels.push_back(index_of(s.age_class));
    set.patient_ids.push_back(s.patient_id);
  }
  set.images = torch::cat(images, 0);
  set.labels = torch::tensor(labels, torch::kLong);
  return set;
}

}  // namespace agegan
