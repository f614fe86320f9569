#include "tabforge/lm/trainer.hpp"

#include <cmath>
#include <numeric>

#include "tabforge/random.hpp"

namespace tabforge::lm {

std::vector<int> encode_prompt(const Tokenizer& tokenizer, const PromptExample& example) {
  std::vector<int> ids = {tokenizer.begin_id()};
  const auto body = tokenizer.encode(render_prompt(example, false));
  ids.insert(ids.end(), body.begin(), body.end());
  return ids;
}

TrainingSequence make_training_sequence(const Tokenizer& tokenizer, const PromptExample& example, LossSpan span) {
  TrainingSequence seq;
  seq.ids = encode_prompt(tokenizer, example);
  const std::size_t prompt_len = seq.ids.size();
  const auto answer = tokenizer.encode(example.answer);
  seq.ids.insert(seq.ids.end(), answer.begin(), answer.end());
  seq.ids.push_back(tokenizer.end_id());
  seq.loss_mask.assign(seq.ids.size(), 0);
  const std::size_t first = span == LossSpan::answer_only ? prompt_len - 1 : 0;
  for (std::size_t t = first; t + 1 < seq.ids.size(); ++t) seq.loss_mask[t] = 1;
  return seq;
}

std::size_t planned_steps(std::size_t n_samples, const TrainConfig& cfg) {
  const auto accum = static_cast<std::size_t>(cfg.grad_accum_steps);
  if (cfg.max_steps > 0) return static_cast<std::size_t>(cfg.max_steps);
  const std::size_t samples = n_samples * static_cast<std::size_t>(cfg.epochs);
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t micro = (samples + batch - 1) / batch;
  return (micro + accum - 1) / accum;
}

std::size_t SampleOrder::at(std::size_t position) {
  const std::size_t epoch = position / n_;
  if (epoch != epoch_) {
    perm_.resize(n_);
    std::iota(perm_.begin(), perm_.end(), std::size_t{0});
    Rng rng(derive_seed(seed_, {epoch}));
    rng.shuffle(std::span<std::size_t>(perm_));
    epoch_ = epoch;
  }
  return perm_[position % n_];
}

template <typename Scalar>
TrainResult run_training(std::size_t n_samples, const TrainConfig& cfg, std::vector<ParamGroup<Scalar>> groups,
                         const std::function<double(std::size_t, double)>& accumulate, TrainState& state,
                         const std::function<void(const TrainState&)>& on_step) {
  cfg.validate();
  if (n_samples == 0) throw DomainError("no training samples");
  const auto accum = static_cast<std::size_t>(cfg.grad_accum_steps);
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t total_steps = planned_steps(n_samples, cfg);
  const std::size_t stream_len = cfg.max_steps > 0 ? total_steps * accum * batch
                                                   : n_samples * static_cast<std::size_t>(cfg.epochs);
  const std::size_t total_micro = (stream_len + batch - 1) / batch;
  const WarmupSchedule schedule(cfg.learning_rate, cfg.warmup_ratio, total_steps);

  while (state.optimizers.size() < groups.size()) state.optimizers.emplace_back(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  std::vector<std::vector<double>> mean_grad(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) mean_grad[g].resize(groups[g].params.size());

  SampleOrder order(n_samples, cfg.seed);
  TrainResult result;
  for (std::size_t step = state.step + 1; step <= total_steps; ++step) {
    for (auto& mg : mean_grad) std::fill(mg.begin(), mg.end(), 0.0);
    const std::size_t micro_begin = (step - 1) * accum;
    const std::size_t micro_end = std::min(step * accum, total_micro);
    double loss_sum = 0.0;
    std::vector<std::size_t> step_samples;
    for (std::size_t mb = micro_begin; mb < micro_end; ++mb) {
      for (auto& grp : groups) std::fill(grp.grads.begin(), grp.grads.end(), Scalar(0));
      const std::size_t first = mb * batch;
      const std::size_t last = std::min(first + batch, stream_len);
      const double weight = 1.0 / static_cast<double>(last - first);
      double mb_loss = 0.0;
      for (std::size_t p = first; p < last; ++p) {
        const std::size_t sample = order.at(p);
        step_samples.push_back(sample);
        mb_loss += weight * accumulate(sample, weight);
      }
      if (!std::isfinite(mb_loss))
        throw TrainingError("non-finite loss at optimizer step " + std::to_string(step), step, step_samples);
      loss_sum += mb_loss;
      for (std::size_t g = 0; g < groups.size(); ++g)
        for (std::size_t i = 0; i < groups[g].grads.size(); ++i) mean_grad[g][i] += static_cast<double>(groups[g].grads[i]);
      ++result.micro_batches;
    }
    const auto n_micro = static_cast<double>(micro_end - micro_begin);
    double norm_sq = 0.0;
    for (auto& mg : mean_grad)
      for (double& v : mg) {
        v /= n_micro;
        norm_sq += v * v;
      }
    if (!std::isfinite(norm_sq))
      throw TrainingError("non-finite gradient at optimizer step " + std::to_string(step), step, step_samples);
    if (cfg.grad_clip > 0.0 && std::sqrt(norm_sq) > cfg.grad_clip) {
      const double s = cfg.grad_clip / std::sqrt(norm_sq);
      for (auto& mg : mean_grad)
        for (double& v : mg) v *= s;
    }
    const double lr = schedule.lr(step);
    for (std::size_t g = 0; g < groups.size(); ++g) state.optimizers[g].step(groups[g].params, mean_grad[g], lr);
    state.step = step;
    state.losses.push_back(loss_sum / n_micro);
    state.learning_rates.push_back(lr);
    result.losses.push_back(state.losses.back());
    result.learning_rates.push_back(lr);
    ++result.steps;
    if (on_step) on_step(state);
  }
  for (auto& grp : groups) std::fill(grp.grads.begin(), grp.grads.end(), Scalar(0));
  return result;
}

template <typename Scalar>
TrainResult train(Transformer<Scalar>& model, const std::vector<TrainingSequence>& sequences, const TrainConfig& cfg,
                  TrainState* state, const std::function<void(const TrainState&)>& on_step) {
  TrainState local;
  TrainState& st = state ? *state : local;
  std::vector<ParamGroup<Scalar>> groups = {{model.parameters(), model.gradients()}};
  return run_training<Scalar>(
      sequences.size(), cfg, std::move(groups),
      [&](std::size_t i, double weight) {
        return model.accumulate_lm_gradients(sequences[i].ids, sequences[i].loss_mask, weight);
      },
      st, on_step);
}

template <typename Scalar>
TrainResult train(Transformer<Scalar>& model, const Tokenizer& tokenizer, const std::vector<PromptExample>& records,
                  const TrainConfig& cfg, TrainState* state, const std::function<void(const TrainState&)>& on_step) {
  std::vector<TrainingSequence> sequences;
  std::vector<std::size_t> dropped;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto seq = make_training_sequence(tokenizer, records[i], cfg.loss_span);
    if (seq.ids.size() > static_cast<std::size_t>(model.config().context_len)) {
      dropped.push_back(i);
      continue;
    }
    sequences.push_back(std::move(seq));
  }
  auto result = train(model, sequences, cfg, state, on_step);
  result.dropped = std::move(dropped);
  return result;
}

template TrainResult run_training<float>(std::size_t, const TrainConfig&, std::vector<ParamGroup<float>>,
                                         const std::function<double(std::size_t, double)>&, TrainState&,
                                         const std::function<void(const TrainState&)>&);
template TrainResult run_training<double>(std::size_t, const TrainConfig&, std::vector<ParamGroup<double>>,
                                          const std::function<double(std::size_t, double)>&, TrainState&,
                                          const std::function<void(const TrainState&)>&);
template TrainResult train<float>(Transformer<float>&, const std::vector<TrainingSequence>&, const TrainConfig&,
                                  TrainState*, const std::function<void(const TrainState&)>&);
template TrainResult train<double>(Transformer<double>&, const std::vector<TrainingSequence>&, const TrainConfig&,
                                   TrainState*, const std::function<void(const TrainState&)>&);
template TrainResult train<float>(Transformer<float>&, const Tokenizer&, const std::vector<PromptExample>&,
                                  const TrainConfig&, TrainState*, const std::function<void(const TrainState&)>&);
template TrainResult train<double>(Transformer<double>&, const Tokenizer&, const std::vector<PromptExample>&,
                                   const TrainConfig&, TrainState*, const std::function<void(const TrainState&)>&);

}  // namespace tabforge::lm
