#include "tabforge/lm/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include "tabforge/error.hpp"

namespace tabforge::lm {

WarmupSchedule::WarmupSchedule(double peak_lr, double warmup_ratio, std::size_t total_steps)
    : peak_(peak_lr), warmup_(static_cast<std::size_t>(std::ceil(warmup_ratio * static_cast<double>(total_steps)))) {}

double WarmupSchedule::lr(std::size_t step) const {
  if (warmup_ == 0 || step >= warmup_) return peak_;
  return peak_ * static_cast<double>(step) / static_cast<double>(warmup_);
}

template <typename Scalar>
void Adam::step(std::span<Scalar> params, std::span<const double> grad, double lr) {
  if (params.size() != grad.size()) throw DomainError("Adam: parameter/gradient size mismatch");
  if (m_.empty()) {
    m_.assign(params.size(), 0.0);
    v_.assign(params.size(), 0.0);
  }
  if (m_.size() != params.size()) throw DomainError("Adam: parameter count changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    const double m_hat = m_[i] / c1;
    const double v_hat = v_[i] / c2;
    params[i] = static_cast<Scalar>(static_cast<double>(params[i]) - lr * m_hat / (std::sqrt(v_hat) + eps_));
  }
}

void Adam::restore(std::size_t steps_taken, std::vector<double> m, std::vector<double> v) {
  if (m.size() != v.size()) throw DomainError("Adam: moment sizes differ");
  t_ = steps_taken;
  m_ = std::move(m);
  v_ = std::move(v);
}

template void Adam::step<float>(std::span<float>, std::span<const double>, double);
template void Adam::step<double>(std::span<double>, std::span<const double>, double);

}  // namespace tabforge::lm
