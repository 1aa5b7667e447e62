#pragma once

#include <torch/torch.h>

#include <vector>

namespace agegan {

struct AdamOptions {
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adaptive-moment optimizer with explicit, serializable moment state.
class Adam {
 public:
  Adam(std::vector<torch::Tensor> params, AdamOptions options);

  void zero_grad();
  void step();

  const AdamOptions& options() const { return options_; }
  int64_t steps() const { return steps_; }
  void set_steps(int64_t s) { steps_ = s; }
  std::vector<torch::Tensor>& first_moments() { return m_; }
  std::vector<torch::Tensor>& second_moments() { return v_; }
  const std::vector<torch::Tensor>& params() const { return params_; }

 private:
  std::vector<torch::Tensor> params_;
  std::vector<torch::Tensor> m_;
  std::vector<torch::Tensor> v_;
  AdamOptions options_;
  int64_t steps_ = 0;
};

}  // namespace agegan
