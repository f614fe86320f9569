#pragma once

#include <cstdint>
#include <span>

#include "tabforge/lm/model.hpp"

namespace tabforge::lm {

template <typename Scalar>
struct LossResult {
  double loss = 0.0;
  Matrix<Scalar> d_logits;  // zero on rows outside the mask
};

// Mean cross-entropy over rows t with mask[t] != 0, target class targets[t].
// Accumulates in double. Throws DomainError for an empty mask.
template <typename Scalar>
LossResult<Scalar> lm_loss(const Matrix<Scalar>& logits, std::span<const int> targets,
                           std::span<const std::uint8_t> mask);

// log softmax of one row, in double.
template <typename Scalar>
std::vector<double> log_softmax_row(const Matrix<Scalar>& logits, Eigen::Index row);

extern template LossResult<float> lm_loss(const Matrix<float>&, std::span<const int>, std::span<const std::uint8_t>);
extern template LossResult<double> lm_loss(const Matrix<double>&, std::span<const int>, std::span<const std::uint8_t>);
extern template std::vector<double> log_softmax_row(const Matrix<float>&, Eigen::Index);
extern template std::vector<double> log_softmax_row(const Matrix<double>&, Eigen::Index);

}  // namespace tabforge::lm
