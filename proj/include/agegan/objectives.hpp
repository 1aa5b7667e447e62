#pragma once

// Minimax value, source and age-class log-likelihoods, and the training
// losses built from them. Expectations are batch means; every probability is
// clamped to [1e-7, 1 - 1e-7] before a log.

#include <torch/torch.h>

namespace agegan {

struct BatchPredictions {
  torch::Tensor source_real;  // [B] D(x)
  torch::Tensor source_fake;  // [B] D(G(z))
  torch::Tensor class_real;   // [B, 3]; undefined for unconditional models
  torch::Tensor class_fake;   // [B, 3]
  torch::Tensor labels_real;  // [B] int64
  torch::Tensor labels_fake;  // [B] int64

  bool has_class_terms() const { return class_real.defined() && class_fake.defined(); }
};

// E[log D(x)] + E[log(1 - D(G(z)))]. Throws ArgumentError on an empty batch.
torch::Tensor gan_value(const torch::Tensor& source_real, const torch::Tensor& source_fake);

// L_s, log-likelihood of the correct source; numerically identical to gan_value.
torch::Tensor source_ll(const torch::Tensor& source_real, const torch::Tensor& source_fake);

// L_a, log-likelihood of the correct age class over real and fake batches.
// Throws IndexError for labels outside {0, 1, 2}.
torch::Tensor age_ll(const torch::Tensor& class_real, const torch::Tensor& labels_real,
                     const torch::Tensor& class_fake, const torch::Tensor& labels_fake);

// -(L_s + L_a); the L_a term is dropped when class predictions are absent.
torch::Tensor discriminator_loss(const BatchPredictions& preds);

// Non-saturating source term plus lambda_class times the fake-class
// cross-entropy. class_fake may be undefined (unconditional baseline).
torch::Tensor generator_loss(const torch::Tensor& source_fake, const torch::Tensor& class_fake,
                             const torch::Tensor& labels_fake, double lambda_class = 1.0);

}  // namespace agegan
