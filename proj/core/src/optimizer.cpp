#include "stsgr/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace stsgr {

Adam::Adam(std::vector<NamedParam> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  moments_.reserve(params_.size());
  for (const auto& p : params_)
    moments_.push_back({std::vector<double>(p.tensor.size(), 0.0),
                        std::vector<double>(p.tensor.size(), 0.0)});
}

double Adam::lr_at(std::size_t step) const {
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(cfg_.warmup_steps);
  return cfg_.lr_scale / std::sqrt(static_cast<double>(cfg_.d_model)) *
         std::min(1.0 / std::sqrt(s), s / (w * std::sqrt(w)));
}

double Adam::step() {
  ++step_count_;
  const double lr = lr_at(step_count_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    auto vals = params_[pi].tensor.values_mut();
    auto grad = params_[pi].tensor.grad();
    if (grad.empty()) continue;  // parameter untouched by this loss
    auto& mom = moments_[pi];
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double g = grad[i];
      if (std::isnan(g))
        throw std::runtime_error("adam: NaN gradient in parameter '" + params_[pi].name +
                                 "' at step " + std::to_string(step_count_));
      mom.m[i] = cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * g;
      mom.v[i] = cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * g * g;
      const double m_hat = mom.m[i] / bc1;
      const double v_hat = mom.v[i] / bc2;
      vals[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
  }
  return lr;
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

}  // namespace stsgr
