#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "tabforge/lm/model.hpp"
#include "tabforge/lm/trainer.hpp"

namespace tabforge::lm {

enum class HeadKind { classification, regression };

const char* to_string(HeadKind kind);
HeadKind head_kind_from_string(const std::string& s);

// Linear read-out on the hidden state of the last non-pad token. Regression
// heads predict a z-scored target and undo the scaling on output.
template <typename Scalar>
class Head {
 public:
  Head(HeadKind kind, int d_model, int n_outputs, std::uint64_t seed, double init_std = 0.02);

  HeadKind kind() const noexcept { return kind_; }
  int d_model() const noexcept { return d_model_; }
  int n_outputs() const noexcept { return n_outputs_; }
  double target_mean() const noexcept { return mean_; }
  double target_std() const noexcept { return std_; }
  void set_target_scaling(double mean, double std);

  std::span<Scalar> parameters() noexcept { return params_; }
  std::span<const Scalar> parameters() const noexcept { return params_; }
  std::span<Scalar> gradients() noexcept { return grads_; }

  // Raw outputs (class logits or the z-scored prediction) for one hidden row.
  std::vector<double> outputs(std::span<const Scalar> hidden) const;

  // Adds weight * d(loss)/d(head params); returns the loss and writes
  // d(loss)/d(hidden) scaled by weight. Cross-entropy for classification,
  // squared error on the z-scored target for regression.
  double accumulate(std::span<const Scalar> hidden, int label, double target, double weight,
                    std::span<Scalar> d_hidden);

  nlohmann::json to_json() const;  // kind, shape and scaling; weights travel separately

 private:
  HeadKind kind_;
  int d_model_;
  int n_outputs_;
  double mean_ = 0.0;
  double std_ = 1.0;
  std::vector<Scalar> params_;  // W (d x C, row-major) then b (C)
  std::vector<Scalar> grads_;
};

extern template class Head<float>;
extern template class Head<double>;

struct HeadExample {
  std::vector<int> ids;
  int label = -1;      // classification
  double target = 0;   // regression, raw units
};

// Index of the last token that is not <pad>.
std::size_t last_token_position(std::span<const int> ids, int pad_id);

// Mean and sample standard deviation (n - 1); a zero spread maps to 1.
std::pair<double, double> target_scaling(std::span<const double> targets);

template <typename Scalar>
struct FineTuned {
  Transformer<Scalar> model;
  Head<Scalar> head;
  TrainResult result;
};

// Builds a head sized for the examples (z-scoring from them for regression)
// and fine-tunes backbone and head jointly. Classification data with fewer
// than two distinct labels is rejected.
template <typename Scalar>
FineTuned<Scalar> attach_head_and_finetune(Transformer<Scalar> model, HeadKind kind, int n_classes,
                                           const std::vector<HeadExample>& examples, const TrainConfig& cfg,
                                           int pad_id);

// Continues fine-tuning an existing head.
template <typename Scalar>
TrainResult finetune_head(Transformer<Scalar>& model, Head<Scalar>& head, const std::vector<HeadExample>& examples,
                          const TrainConfig& cfg, int pad_id, TrainState* state = nullptr,
                          const std::function<void(const TrainState&)>& on_step = {});

// Class probabilities (softmax of head logits).
template <typename Scalar>
std::vector<double> predict_proba(const Transformer<Scalar>& model, const Head<Scalar>& head, std::span<const int> ids,
                                  int pad_id);

// Regression prediction in target units.
template <typename Scalar>
double predict_value(const Transformer<Scalar>& model, const Head<Scalar>& head, std::span<const int> ids, int pad_id);

}  // namespace tabforge::lm
