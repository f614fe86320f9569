#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

namespace tabforge::lm {

struct ModelConfig {
  int d_model = 128;
  int n_layers = 4;
  int n_heads = 4;
  int d_head = 32;
  int ffn_dim = 0;  // 0 -> 8/3 d_model rounded up to a multiple of 8
  int vocab_size = 0;
  int context_len = 512;
  double rope_base = 10000.0;
  double init_std = 0.02;
  double norm_eps = 1e-5;

  int hidden_ffn_dim() const noexcept;
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class LossSpan { answer_only, full_sequence };

// Optimizer and schedule constants. The learning-rate default is the large
// model fine-tuning value; desk-scale runs override it.
struct TrainConfig {
  double learning_rate = 2e-5;
  double warmup_ratio = 0.05;
  int grad_accum_steps = 4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.95;
  double adam_eps = 1e-8;
  int max_steps = 0;  // optimizer steps; 0 -> derived from epochs
  int epochs = 1;
  int batch_size = 1;
  std::uint64_t seed = 0;
  LossSpan loss_span = LossSpan::answer_only;
  int checkpoint_every = 0;  // optimizer steps between checkpoints; 0 disables
  double grad_clip = 0.0;    // global-norm clip; 0 disables

  void validate() const;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

}  // namespace tabforge::lm
