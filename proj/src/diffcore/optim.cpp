#include "vcwn/optim.hpp"

#include <cmath>

#include "vcwn/error.hpp"

namespace vcwn {

void Adam::step(ParameterSet& params) {
  auto& items = params.items();
  if (m_.empty()) {
    for (const auto& p : items) {
      m_.push_back(Tensor::zeros_like(p.value));
      v_.push_back(Tensor::zeros_like(p.value));
    }
  }
  require(m_.size() == items.size(), ErrorCode::kInvalidArgument,
          "adam: parameter count changed between steps");
  for (std::size_t k = 0; k < items.size(); ++k) {
    const Parameter& p = items[k];
    require(p.grad.same_shape(p.value) && m_[k].same_shape(p.value),
            ErrorCode::kInvalidArgument,
            "adam: gradient/moment shape mismatch for '" + p.name + "'");
    if (!p.grad.all_finite())
      fail(ErrorCode::kNonFinite, "adam: non-finite gradient for '" + p.name + "'");
  }

  ++step_;
  const double t = static_cast<double>(step_);
  const double correction1 = 1.0 - std::pow(config_.beta1, t);
  const double correction2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t k = 0; k < items.size(); ++k) {
    Parameter& p = items[k];
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p.value[i] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

double clip_grad_norm(ParameterSet& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params.items())
    for (double g : p.grad.values()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& p : params.items())
      for (double& g : p.grad.values()) g *= s;
  }
  return norm;
}

}  // namespace vcwn
