#include "agegan/objectives.hpp"

#include "agegan/errors.hpp"
#include "agegan/numeric_blocks.hpp"
#include "agegan/phantom.hpp"

namespace agegan {
namespace {

void check_source(const torch::Tensor& p, const char* what) {
  if (!p.defined() || p.numel() == 0) throw ArgumentError(std::string(what) + ": empty batch");
  auto d = p.detach();
  if (d.min().item<double>() < 0.0 || d.max().item<double>() > 1.0) {
    throw DistributionError(std::string(what) + ": probabilities outside [0, 1]");
  }
}

void check_class(const torch::Tensor& probs, const torch::Tensor& labels, const char* what) {
  if (!probs.defined() || probs.dim() != 2 || probs.size(0) == 0) {
    throw ArgumentError(std::string(what) + ": expected a non-empty [B, K] batch");
  }
  if (!labels.defined() || labels.dim() != 1 || labels.size(0) != probs.size(0)) {
    throw ArgumentError(std::string(what) + ": one label per row required");
  }
  auto d = probs.detach();
  if ((d.sum(1) - 1.0).abs().max().item<double>() > 1e-5) {
    throw DistributionError(std::string(what) + ": class rows do not sum to 1");
  }
  if (labels.min().item<int64_t>() < 0 || labels.max().item<int64_t>() >= kNumAgeClasses) {
    throw IndexError(std::string(what) + ": label outside {0, 1, 2}");
  }
}

torch::Tensor mean_log_correct(const torch::Tensor& probs, const torch::Tensor& labels) {
  auto picked = probs.gather(1, labels.to(torch::kLong).unsqueeze(1)).squeeze(1);
  return torch::log(clamp_probability(picked)).mean();
}

}  // namespace

torch::Tensor gan_value(const torch::Tensor& source_real, const torch::Tensor& source_fake) {
  check_source(source_real, "gan_value real");
  check_source(source_fake, "gan_value fake");
  return torch::log(clamp_probability(source_real)).mean() +
         torch::log(1.0 - clamp_probability(source_fake)).mean();
}

torch::Tensor source_ll(const torch::Tensor& source_real, const torch::Tensor& source_fake) {
  // P(S=fake | X) = 1 - D(X), so L_s is exactly the minimax value.
  return gan_value(source_real, source_fake);
}

torch::Tensor age_ll(const torch::Tensor& class_real, const torch::Tensor& labels_real,
                     const torch::Tensor& class_fake, const torch::Tensor& labels_fake) {
  check_class(class_real, labels_real, "age_ll real");
  check_class(class_fake, labels_fake, "age_ll fake");
  return mean_log_correct(class_real, labels_real) + mean_log_correct(class_fake, labels_fake);
}

torch::Tensor discriminator_loss(const BatchPredictions& preds) {
  auto ls = source_ll(preds.source_real, preds.source_fake);
  if (!preds.has_class_terms()) return -ls;
  return -(ls + age_ll(preds.class_real, preds.labels_real, preds.class_fake, preds.labels_fake));
}

torch::Tensor generator_loss(const torch::Tensor& source_fake, const torch::Tensor& class_fake,
                             const torch::Tensor& labels_fake, double lambda_class) {
  check_source(source_fake, "generator_loss");
  auto loss = -torch::log(clamp_probability(source_fake)).mean();
  if (class_fake.defined()) {
    check_class(class_fake, labels_fake, "generator_loss");
    loss = loss - lambda_class * mean_log_correct(class_fake, labels_fake);
  }
  return loss;
}

}  // namespace agegan
