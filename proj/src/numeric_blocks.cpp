#include "agegan/numeric_blocks.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "agegan/errors.hpp"

namespace agegan {

void require_finite(const torch::Tensor& t, const char* what) {
  if (!torch::isfinite(t).all().item<bool>()) {
    throw NumericError(std::string("non-finite values in ") + what);
  }
}

torch::Tensor pixel_norm(const torch::Tensor& x, double eps) {
  if (x.dim() != 4 || x.size(1) < 1) {
    throw ArgumentError("pixel_norm expects a (batch, channels, height, width) tensor");
  }
  require_finite(x, "pixel_norm input");
  return pixel_norm_unchecked(x, eps);
}

torch::Tensor pixel_norm_unchecked(const torch::Tensor& x, double eps) {
  return x * torch::rsqrt(x.square().mean(1, /*keepdim=*/true) + eps);
}

torch::Tensor selu(const torch::Tensor& x) {
  // ATen's selu uses the same two constants.
  return torch::selu(x);
}

double selu(double x) {
  return x > 0.0 ? kSeluLambda * x : kSeluLambda * kSeluAlpha * std::expm1(x);
}

torch::Tensor clamp_probability(const torch::Tensor& p) {
  return p.clamp(kProbFloor, 1.0 - kProbFloor);
}

double cross_entropy(std::span<const double> pred, int64_t target) {
  if (target < 0 || target >= static_cast<int64_t>(pred.size())) {
    throw IndexError("cross_entropy target " + std::to_string(target) + " outside [0, " +
                     std::to_string(pred.size()) + ")");
  }
  double sum = 0.0;
  for (double p : pred) {
    if (!(p >= 0.0 && p <= 1.0)) throw DistributionError("probability outside [0, 1]");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-5) throw DistributionError("probabilities do not sum to 1");
  return -std::log(std::max(pred[static_cast<size_t>(target)], kProbFloor));
}

torch::Tensor cross_entropy(const torch::Tensor& probs, const torch::Tensor& targets) {
  if (probs.dim() != 2 || targets.dim() != 1 || probs.size(0) != targets.size(0)) {
    throw ArgumentError("cross_entropy expects [N, K] probabilities and [N] targets");
  }
  const int64_t k = probs.size(1);
  if (targets.numel() > 0 &&
      (targets.min().item<int64_t>() < 0 || targets.max().item<int64_t>() >= k)) {
    throw IndexError("cross_entropy target outside [0, " + std::to_string(k) + ")");
  }
  auto picked = probs.gather(1, targets.to(torch::kLong).unsqueeze(1)).squeeze(1);
  return -torch::log(picked.clamp_min(kProbFloor)).mean();
}

namespace {

std::vector<int64_t> probe_entries(int64_t numel, int64_t limit, std::mt19937_64& rng) {
  std::vector<int64_t> idx(static_cast<size_t>(numel));
  for (int64_t i = 0; i < numel; ++i) idx[static_cast<size_t>(i)] = i;
  if (limit > 0 && limit < numel) {
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<size_t>(limit));
    std::sort(idx.begin(), idx.end());
  }
  return idx;
}

}  // namespace

GradCheckResult compare_gradients(const std::function<double()>& loss_value,
                                  const std::vector<torch::Tensor>& params,
                                  const std::vector<torch::Tensor>& analytic,
                                  const GradCheckOptions& options) {
  if (params.size() != analytic.size()) {
    throw ArgumentError("one analytic gradient per parameter tensor is required");
  }
  GradCheckResult result;
  std::mt19937_64 rng(options.seed);
  torch::NoGradGuard no_grad;
  for (size_t p = 0; p < params.size(); ++p) {
    const auto& param = params[p];
    if (param.scalar_type() != torch::kFloat64) {
      throw ArgumentError("grad_check requires float64 parameters");
    }
    auto flat = param.view({-1});
    auto grad = analytic[p].to(torch::kFloat64).contiguous().view({-1});
    for (int64_t i : probe_entries(flat.numel(), options.max_entries_per_param, rng)) {
      const double original = flat[i].item<double>();
      flat[i] = original + options.step;
      const double plus = loss_value();
      flat[i] = original - options.step;
      const double minus = loss_value();
      flat[i] = original;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        throw NumericError("non-finite loss while probing gradients");
      }
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = grad[i].item<double>();
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++result.entries_checked;
      if (rel > result.max_relative_error || result.worst_param < 0) {
        result.max_relative_error = std::max(rel, result.max_relative_error);
        result.worst_param = static_cast<int64_t>(p);
        result.worst_entry = i;
      }
    }
  }
  return result;
}

GradCheckResult grad_check(const std::function<torch::Tensor()>& loss_fn,
                           const std::vector<torch::Tensor>& params,
                           const GradCheckOptions& options) {
  std::vector<torch::Tensor> analytic;
  {
    for (const auto& p : params) {
      if (p.grad().defined()) p.mutable_grad().zero_();
    }
    auto loss = loss_fn();
    if (!std::isfinite(loss.item<double>())) throw NumericError("non-finite loss at the probe point");
    analytic = torch::autograd::grad({loss}, params, /*grad_outputs=*/{}, /*retain_graph=*/false,
                                     /*create_graph=*/false, /*allow_unused=*/true);
    for (size_t i = 0; i < analytic.size(); ++i) {
      if (!analytic[i].defined()) analytic[i] = torch::zeros_like(params[i]);
    }
  }
  auto value = [&] { return loss_fn().item<double>(); };
  return compare_gradients(value, params, analytic, options);
}

}  // namespace agegan
