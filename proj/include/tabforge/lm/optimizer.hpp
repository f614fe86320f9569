#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace tabforge::lm {

// Linear warmup over the first warmup_steps(total) steps, then constant.
// Steps are 1-based: lr(s) = peak * s / W for s <= W.
class WarmupSchedule {
 public:
  WarmupSchedule(double peak_lr, double warmup_ratio, std::size_t total_steps);
  double lr(std::size_t step) const;
  std::size_t warmup_steps() const noexcept { return warmup_; }

 private:
  double peak_;
  std::size_t warmup_;
};

// Adam with bias correction; moments kept in double.
class Adam {
 public:
  Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Applies one update from a (mean) gradient. Moment buffers are sized on
  // first use.
  template <typename Scalar>
  void step(std::span<Scalar> params, std::span<const double> grad, double lr);

  std::size_t steps_taken() const noexcept { return t_; }
  std::vector<double>& first_moment() noexcept { return m_; }
  std::vector<double>& second_moment() noexcept { return v_; }
  const std::vector<double>& first_moment() const noexcept { return m_; }
  const std::vector<double>& second_moment() const noexcept { return v_; }
  void restore(std::size_t steps_taken, std::vector<double> m, std::vector<double> v);

 private:
  double beta1_;
  double beta2_;
  double eps_;
  std::size_t t_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

}  // namespace tabforge::lm
