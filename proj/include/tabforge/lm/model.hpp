#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tabforge/lm/config.hpp"
#include "tabforge/lm/rope.hpp"

namespace tabforge::lm {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct TensorInfo {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;
  std::size_t size() const noexcept { return rows * cols; }
};

// Decoder-only transformer: pre-RMS normalization,
// causal multi-head attention with rotary position embeddings, a gated SiLU
// feed-forward network and residual connections. Weights live in one flat
// buffer (gradients in a parallel one); rows index sequence positions.
//
// Forward and backward passes are single-threaded and deterministic.
template <typename Scalar>
class Transformer {
 public:
  using Mat = Matrix<Scalar>;

  struct LayerCache {
    Mat x_in, xn1, q, k, v, attn_cat, h, xn2, gate, up, act;
    std::vector<Scalar> inv_rms1, inv_rms2;
    std::vector<Mat> probs;  // per head, T x T
  };

  struct Cache {
    std::vector<int> ids;
    std::vector<LayerCache> layers;
    Mat x_final;
    std::vector<Scalar> inv_rms_final;
  };

  Transformer(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }

  std::span<Scalar> parameters() noexcept { return params_; }
  std::span<const Scalar> parameters() const noexcept { return params_; }
  std::span<Scalar> gradients() noexcept { return grads_; }
  std::span<const Scalar> gradients() const noexcept { return grads_; }
  void zero_grad();
  const std::vector<TensorInfo>& tensors() const noexcept { return tensors_; }
  const TensorInfo& tensor(const std::string& name) const;
  std::size_t num_parameters() const noexcept { return params_.size(); }

  // Final normalized hidden states, T x d_model. Throws DomainError when the
  // sequence is empty or longer than context_len, or contains unknown ids.
  Mat hidden_states(std::span<const int> ids, Cache* cache = nullptr) const;

  // Logits for every position, T x vocab.
  Mat forward(std::span<const int> ids) const;

  // Logits for selected rows of a hidden-state matrix.
  Mat project(const Mat& hidden, std::span<const std::size_t> positions) const;

  // Accumulates output-projection gradients for project() and adds the
  // resulting hidden-state gradient into d_hidden.
  void backward_project(const Mat& hidden, std::span<const std::size_t> positions, const Mat& d_logits,
                        Mat& d_hidden);

  // Accumulates all backbone gradients given dL/d(hidden states).
  void backward(const Cache& cache, const Mat& d_hidden);

  // One next-token loss pass: mean cross-entropy over positions t with
  // loss_mask[t] set, predicting ids[t + 1]. Adds weight * gradient into the
  // gradient buffer and returns the (unweighted) loss.
  double accumulate_lm_gradients(std::span<const int> ids, std::span<const std::uint8_t> loss_mask, double weight);

 private:
  Eigen::Map<const Mat> view(std::size_t tensor_index) const;
  Eigen::Map<Mat> grad_view(std::size_t tensor_index);
  std::size_t add_tensor(const std::string& name, std::size_t rows, std::size_t cols);

  struct LayerIndex {
    std::size_t attn_norm, wq, wk, wv, wo, ffn_norm, w_gate, w_up, w_down;
  };

  ModelConfig config_;
  std::vector<Scalar> params_;
  std::vector<Scalar> grads_;
  std::vector<TensorInfo> tensors_;
  std::size_t embed_ = 0;
  std::vector<LayerIndex> layers_;
  std::size_t final_norm_ = 0;
  std::size_t output_ = 0;
  RopeTable rope_;
};

extern template class Transformer<float>;
extern template class Transformer<double>;

// Copies weights between precisions; configs must match.
template <typename To, typename From>
Transformer<To> convert(const Transformer<From>& model) {
  Transformer<To> out(model.config(), 0);
  auto src = model.parameters();
  auto dst = out.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<To>(src[i]);
  return out;
}

}  // namespace tabforge::lm
