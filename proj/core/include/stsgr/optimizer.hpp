#pragma once

#include <vector>

#include "stsgr/tensor.hpp"

namespace stsgr {

// Bias-corrected Adam with the inverse-square-root warm-up schedule:
// lr(step) = lr_scale * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5).
struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double lr_scale = 1.0;
  std::size_t warmup_steps = 400;
  std::size_t d_model = 64;
};

class Adam {
 public:
  Adam(std::vector<NamedParam> params, AdamConfig cfg);

  // Applies grads accumulated on the parameters; throws on a NaN gradient
  // naming the parameter. Returns the learning rate used.
  double step();
  void zero_grad();
  double lr_at(std::size_t step) const;
  std::size_t step_count() const { return step_count_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  std::vector<NamedParam> params_;
  std::vector<Moments> moments_;
  AdamConfig cfg_;
  std::size_t step_count_ = 0;
};

}  // namespace stsgr
