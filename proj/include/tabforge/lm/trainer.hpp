#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "tabforge/error.hpp"
#include "tabforge/lm/config.hpp"
#include "tabforge/lm/model.hpp"
#include "tabforge/lm/optimizer.hpp"
#include "tabforge/lm/tokenizer.hpp"
#include "tabforge/textgen.hpp"

namespace tabforge::lm {

// Token ids plus a per-position loss mask; mask[t] marks that the prediction
// of ids[t + 1] is scored.
struct TrainingSequence {
  std::vector<int> ids;
  std::vector<std::uint8_t> loss_mask;
};

// <s> + prompt rendered with an empty answer. This is the inference input.
std::vector<int> encode_prompt(const Tokenizer& tokenizer, const PromptExample& example);

// encode_prompt(...) + answer tokens + </s>. With answer_only, only the
// positions that predict the answer and </s> are scored.
TrainingSequence make_training_sequence(const Tokenizer& tokenizer, const PromptExample& example, LossSpan span);

class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::size_t step, std::vector<std::size_t> sample_ids)
      : Error(what), step_(step), sample_ids_(std::move(sample_ids)) {}
  std::size_t step() const noexcept { return step_; }
  const std::vector<std::size_t>& sample_ids() const noexcept { return sample_ids_; }

 private:
  std::size_t step_;
  std::vector<std::size_t> sample_ids_;
};

// Optimizer state carried across checkpoints. One Adam per parameter group.
struct TrainState {
  std::size_t step = 0;
  std::vector<Adam> optimizers;
  std::vector<double> losses;
  std::vector<double> learning_rates;
};

struct TrainResult {
  std::vector<double> losses;          // one mean loss per optimizer step
  std::vector<double> learning_rates;  // lr applied at each step
  std::size_t steps = 0;
  std::size_t micro_batches = 0;
  std::vector<std::size_t> dropped;    // record indices over context_len
};

template <typename Scalar>
struct ParamGroup {
  std::span<Scalar> params;
  std::span<Scalar> grads;
};

// Optimizer steps a run performs over n samples.
std::size_t planned_steps(std::size_t n_samples, const TrainConfig& cfg);

// Sample index at stream position p: epoch-wise seeded permutations.
class SampleOrder {
 public:
  SampleOrder(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {}
  std::size_t at(std::size_t position);

 private:
  std::size_t n_;
  std::uint64_t seed_;
  std::size_t epoch_ = static_cast<std::size_t>(-1);
  std::vector<std::size_t> perm_;
};

// Shared loop: micro-batches of batch_size samples, grad_accum_steps
// micro-batches per Adam update on their mean gradient, warmup schedule.
// `accumulate(sample, weight)` adds weight * d(loss)/d(params) into the
// groups' gradient buffers and returns the sample loss. `on_step` runs after
// every update.
template <typename Scalar>
TrainResult run_training(std::size_t n_samples, const TrainConfig& cfg, std::vector<ParamGroup<Scalar>> groups,
                         const std::function<double(std::size_t, double)>& accumulate, TrainState& state,
                         const std::function<void(const TrainState&)>& on_step = {});

// Span-masked language-model training on pre-tokenized sequences.
template <typename Scalar>
TrainResult train(Transformer<Scalar>& model, const std::vector<TrainingSequence>& sequences, const TrainConfig& cfg,
                  TrainState* state = nullptr, const std::function<void(const TrainState&)>& on_step = {});

// Tokenizes records, drops those longer than context_len (reported in
// TrainResult::dropped), then trains.
template <typename Scalar>
TrainResult train(Transformer<Scalar>& model, const Tokenizer& tokenizer, const std::vector<PromptExample>& records,
                  const TrainConfig& cfg, TrainState* state = nullptr,
                  const std::function<void(const TrainState&)>& on_step = {});

}  // namespace tabforge::lm
