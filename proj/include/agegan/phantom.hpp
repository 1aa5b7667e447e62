#pragma once

// Procedural, age-parameterized phantom dataset: CT-like slices with a
// paired binary organ mask. Organ elongation grows with the age class.

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace agegan {

enum class AgeClass : int64_t { Infant = 0, Preschool = 1, Adolescent = 2 };

inline constexpr int64_t kNumAgeClasses = 3;
inline constexpr std::array<AgeClass, 3> kAllAgeClasses = {AgeClass::Infant, AgeClass::Preschool,
                                                           AgeClass::Adolescent};

struct AgeRange {
  int min_years;
  int max_years;
};

std::string_view age_class_name(AgeClass c);
AgeClass age_class_from_name(std::string_view name);  // throws ArgumentError
AgeClass age_class_from_index(int64_t index);          // throws IndexError
AgeRange age_range(AgeClass c);
inline int64_t index_of(AgeClass c) { return static_cast<int64_t>(c); }

struct PhantomParams {
  int64_t resolution = 128;
  double organ_area_px = 450.0;
  std::array<double, 3> aspect_mean = {1.2, 1.8, 2.6};
  double aspect_jitter = 0.15;
  double rotation_jitter_deg = 15.0;
  double body_intensity = 0.50;
  double body_intensity_jitter = 0.05;
  double organ_intensity = 0.65;
  double organ_intensity_jitter = 0.05;
  double background = 0.20;
  double noise_sigma = 0.02;
  double streak_probability = 0.0;

  // Throws ArgumentError when an invariant fails.
  void validate() const;
};

void to_json(nlohmann::json& j, const PhantomParams& p);
// Missing keys keep their defaults.
void from_json(const nlohmann::json& j, PhantomParams& p);

struct Sample {
  torch::Tensor ct;    // [H, W] float32 in [0, 1]
  torch::Tensor mask;  // [H, W] float32 in {0, 1}
  AgeClass age_class = AgeClass::Infant;
  int64_t patient_id = 0;
  int64_t slice_idx = 0;
};

// Anatomy shared by all slices of one phantom patient.
struct PatientAnatomy {
  double aspect_offset = 0.0;
  double area_scale = 1.0;
  double body_scale = 1.0;
  double body_intensity = 0.5;
  double organ_intensity = 0.65;
  double rotation_deg = 0.0;
};

PatientAnatomy draw_patient(const PhantomParams& params, uint64_t seed);

// Renders one slice of `patient`. Deterministic in all arguments.
Sample render_slice(const PhantomParams& params, AgeClass age_class, const PatientAnatomy& patient,
                    uint64_t slice_seed);

// A single-slice phantom: patient anatomy and slice jitter both derive from
// `seed`. Throws GeometryError if the organ cannot be placed.
Sample generate_sample(const PhantomParams& params, AgeClass age_class, uint64_t seed);

struct ManifestEntry {
  std::string id;
  AgeClass age_class = AgeClass::Infant;
  int64_t patient_id = 0;
  int64_t slice_idx = 0;
  std::string ct;    // relative to the dataset directory
  std::string mask;
};

struct DatasetManifest {
  static constexpr int kVersion = 1;
  int version = kVersion;
  int64_t resolution = 128;
  std::vector<ManifestEntry> entries;
  std::filesystem::path root;  // directory holding manifest.json; not serialized

  int64_t count(AgeClass c) const;
  // Equal per-class counts and unique ids; with check_files, every tensor
  // file must exist and parse. Throws FormatError.
  void validate(bool check_files = false) const;
  Sample load_sample(size_t index) const;
};

nlohmann::json manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);

void save_manifest(const DatasetManifest& m, const std::filesystem::path& dir);
DatasetManifest load_manifest(const std::filesystem::path& dir);

// Writes 3 x per_class samples (ct/ and mask/ AGT1 files) plus manifest.json.
// per_class must be divisible by patients_per_class. Throws IoError when the
// directory cannot be written.
DatasetManifest build_dataset(const PhantomParams& params, int64_t per_class,
                              int64_t patients_per_class, uint64_t seed,
                              const std::filesystem::path& out_dir);

// Centroid-centered crop of `window` pixels, clamped inside the image; ct
// min-max normalized over the crop (flat crop -> zeros). Returns
// [1, 2, window, window]. Throws DegenerateMask on an empty mask.
torch::Tensor preprocess(const Sample& sample, int64_t window);

// 1 where value >= cutoff, else 0. Throws ArgumentError unless 0 < cutoff < 1
// and every value lies in [0, 1].
torch::Tensor threshold_mask(const torch::Tensor& soft_mask, double cutoff = 0.5);

// Preprocessed training tensors for a whole manifest.
struct TrainingSet {
  torch::Tensor images;  // [N, 2, window, window]
  torch::Tensor labels;  // [N] int64
  std::vector<int64_t> patient_ids;
  int64_t size() const { return images.defined() ? images.size(0) : 0; }
};

TrainingSet load_training_set(const DatasetManifest& m, int64_t window);

}  // namespace agegan
