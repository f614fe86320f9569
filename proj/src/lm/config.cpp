#include "tabforge/lm/config.hpp"

#include <set>

#include "tabforge/error.hpp"

namespace tabforge::lm {

namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const char* what) {
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw ConfigError(std::string("unknown ") + what + " key '" + key + "'");
}

}  // namespace

int ModelConfig::hidden_ffn_dim() const noexcept {
  if (ffn_dim > 0) return ffn_dim;
  const int raw = (8 * d_model + 2) / 3;
  return (raw + 7) / 8 * 8;
}

void ModelConfig::validate() const {
  if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_head <= 0) throw ConfigError("model dimensions must be positive");
  if (d_model != n_heads * d_head) throw ConfigError("d_model must equal n_heads * d_head");
  if (d_head % 2 != 0) throw ConfigError("d_head must be even for rotary embeddings");
  if (vocab_size <= 0) throw ConfigError("vocab_size must be positive");
  if (context_len < 8) throw ConfigError("context_len must be >= 8");
  if (!(rope_base > 0.0)) throw ConfigError("rope_base must be positive");
  if (!(init_std > 0.0) || !(norm_eps > 0.0)) throw ConfigError("init_std and norm_eps must be positive");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"d_model", d_model},     {"n_layers", n_layers},       {"n_heads", n_heads},
          {"d_head", d_head},       {"ffn_dim", ffn_dim},         {"vocab_size", vocab_size},
          {"context_len", context_len}, {"rope_base", rope_base}, {"init_std", init_std},
          {"norm_eps", norm_eps}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  reject_unknown(j, {"d_model", "n_layers", "n_heads", "d_head", "ffn_dim", "vocab_size", "context_len", "rope_base",
                     "init_std", "norm_eps"},
                 "model");
  ModelConfig c;
  c.d_model = j.value("d_model", c.d_model);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.d_head = j.value("d_head", c.d_model / c.n_heads);
  c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.context_len = j.value("context_len", c.context_len);
  c.rope_base = j.value("rope_base", c.rope_base);
  c.init_std = j.value("init_std", c.init_std);
  c.norm_eps = j.value("norm_eps", c.norm_eps);
  return c;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(warmup_ratio > 0.0 && warmup_ratio < 1.0)) throw ConfigError("warmup_ratio must lie in (0, 1)");
  if (grad_accum_steps < 1) throw ConfigError("grad_accum_steps must be >= 1");
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0) || !(adam_beta2 > 0.0 && adam_beta2 < 1.0))
    throw ConfigError("Adam betas must lie in (0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (max_steps < 0 || epochs < 0 || (max_steps == 0 && epochs == 0))
    throw ConfigError("either max_steps or epochs must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (checkpoint_every < 0 || grad_clip < 0.0) throw ConfigError("checkpoint_every and grad_clip must be >= 0");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"learning_rate", learning_rate},
          {"warmup_ratio", warmup_ratio},
          {"grad_accum_steps", grad_accum_steps},
          {"adam_beta1", adam_beta1},
          {"adam_beta2", adam_beta2},
          {"adam_eps", adam_eps},
          {"max_steps", max_steps},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"seed", seed},
          {"loss_span", loss_span == LossSpan::answer_only ? "answer_only" : "full_sequence"},
          {"checkpoint_every", checkpoint_every},
          {"grad_clip", grad_clip}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  reject_unknown(j, {"learning_rate", "warmup_ratio", "grad_accum_steps", "adam_beta1", "adam_beta2", "adam_eps",
                     "max_steps", "epochs", "batch_size", "seed", "loss_span", "checkpoint_every", "grad_clip"},
                 "train");
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.warmup_ratio = j.value("warmup_ratio", c.warmup_ratio);
  c.grad_accum_steps = j.value("grad_accum_steps", c.grad_accum_steps);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  const auto span = j.value("loss_span", std::string("answer_only"));
  if (span == "answer_only") {
    c.loss_span = LossSpan::answer_only;
  } else if (span == "full_sequence") {
    c.loss_span = LossSpan::full_sequence;
  } else {
    throw ConfigError("unknown loss_span '" + span + "'");
  }
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  return c;
}

}  // namespace tabforge::lm
