#pragma once

// Numeric primitives used by the networks: PixelNorm, SELU, clamped
// cross-entropy, and a central-difference gradient checker.
//
// Feature maps use (batch, channels, height, width) axis order everywhere.

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace agegan {

inline constexpr double kSeluLambda = 1.0507009873554805;
inline constexpr double kSeluAlpha = 1.6732632423543772;
inline constexpr double kPixelNormEps = 1e-8;

// Floor (and 1 - floor ceiling) applied to every probability before a log.
inline constexpr double kProbFloor = 1e-7;

// out[b,c,h,w] = x[b,c,h,w] / sqrt(mean_c x[b,:,h,w]^2 + eps)
// Throws NumericError on non-finite input, ArgumentError on a non-4-D tensor.
torch::Tensor pixel_norm(const torch::Tensor& x, double eps = kPixelNormEps);
// Same formula without the finiteness scan; used inside the networks, where
// the trainer checks the losses instead.
torch::Tensor pixel_norm_unchecked(const torch::Tensor& x, double eps = kPixelNormEps);

// lambda * x for x > 0, lambda * alpha * (e^x - 1) otherwise.
torch::Tensor selu(const torch::Tensor& x);
double selu(double x);

// Clamps probabilities into [kProbFloor, 1 - kProbFloor].
torch::Tensor clamp_probability(const torch::Tensor& p);

// -log(pred[target]) with pred clamped below at kProbFloor. `pred` must be a
// distribution (entries in [0,1], sum within 1e-5 of 1).
double cross_entropy(std::span<const double> pred, int64_t target);

// Batched, differentiable form: probs is [N, K] rows of distributions,
// targets is [N] int64. Returns the mean over rows.
torch::Tensor cross_entropy(const torch::Tensor& probs, const torch::Tensor& targets);

struct GradCheckResult {
  double max_relative_error = 0.0;
  int64_t entries_checked = 0;
  // Index into the params list and flat entry index of the worst entry.
  int64_t worst_param = -1;
  int64_t worst_entry = -1;
};

struct GradCheckOptions {
  double step = 1e-5;
  // 0 checks every entry; otherwise a seeded random subset per tensor.
  int64_t max_entries_per_param = 0;
  uint64_t seed = 0;
};

// Compares the supplied analytic gradients to central finite differences
// (f(p + h) - f(p - h)) / 2h, entry by entry. Relative error per entry is
// |a - n| / max(|a|, |n|, 1e-8). Parameters must be float64.
GradCheckResult compare_gradients(const std::function<double()>& loss_value,
                                  const std::vector<torch::Tensor>& params,
                                  const std::vector<torch::Tensor>& analytic,
                                  const GradCheckOptions& options = {});

// Takes analytic gradients from autograd on loss_fn(), then defers to
// compare_gradients. Throws NumericError if a probe produces a non-finite loss.
GradCheckResult grad_check(const std::function<torch::Tensor()>& loss_fn,
                           const std::vector<torch::Tensor>& params,
                           const GradCheckOptions& options = {});

inline constexpr double kGradCheckThreshold = 1e-3;

// Throws NumericError unless every element of t is finite.
void require_finite(const torch::Tensor& t, const char* what);

}  // namespace agegan
