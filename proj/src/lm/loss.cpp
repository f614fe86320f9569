#include "tabforge/lm/loss.hpp"

#include <algorithm>
#include <cmath>

#include "tabforge/error.hpp"

namespace tabforge::lm {

template <typename Scalar>
std::vector<double> log_softmax_row(const Matrix<Scalar>& logits, Eigen::Index row) {
  const Eigen::Index v = logits.cols();
  double max_logit = -INFINITY;
  for (Eigen::Index j = 0; j < v; ++j) max_logit = std::max(max_logit, static_cast<double>(logits(row, j)));
  double sum = 0.0;
  for (Eigen::Index j = 0; j < v; ++j) sum += std::exp(static_cast<double>(logits(row, j)) - max_logit);
  const double log_z = max_logit + std::log(sum);
  std::vector<double> out(static_cast<std::size_t>(v));
  for (Eigen::Index j = 0; j < v; ++j) out[static_cast<std::size_t>(j)] = static_cast<double>(logits(row, j)) - log_z;
  return out;
}

template <typename Scalar>
LossResult<Scalar> lm_loss(const Matrix<Scalar>& logits, std::span<const int> targets,
                           std::span<const std::uint8_t> mask) {
  const auto rows = static_cast<std::size_t>(logits.rows());
  if (targets.size() != rows || mask.size() != rows) throw DomainError("lm_loss: targets/mask length mismatch");
  std::size_t count = 0;
  for (auto m : mask) count += m ? 1 : 0;
  if (count == 0) throw DomainError("lm_loss: empty loss mask");

  LossResult<Scalar> out;
  out.d_logits = Matrix<Scalar>::Zero(logits.rows(), logits.cols());
  const double inv = 1.0 / static_cast<double>(count);
  double total = 0.0;
  for (std::size_t t = 0; t < rows; ++t) {
    if (!mask[t]) continue;
    const int y = targets[t];
    if (y < 0 || y >= logits.cols()) throw DomainError("lm_loss: target id out of range");
    const auto logp = log_softmax_row(logits, static_cast<Eigen::Index>(t));
    total -= logp[static_cast<std::size_t>(y)];
    for (std::size_t j = 0; j < logp.size(); ++j) {
      const double g = std::exp(logp[j]) - (static_cast<int>(j) == y ? 1.0 : 0.0);
      out.d_logits(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j)) = static_cast<Scalar>(g * inv);
    }
  }
  out.loss = total * inv;
  return out;
}

template LossResult<float> lm_loss(const Matrix<float>&, std::span<const int>, std::span<const std::uint8_t>);
template LossResult<double> lm_loss(const Matrix<double>&, std::span<const int>, std::span<const std::uint8_t>);
template std::vector<double> log_softmax_row(const Matrix<float>&, Eigen::Index);
template std::vector<double> log_softmax_row(const Matrix<double>&, Eigen::Index);

}  // namespace tabforge::lm
