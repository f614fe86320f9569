#include "tabforge/lm/head.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "tabforge/error.hpp"
#include "tabforge/random.hpp"

namespace tabforge::lm {

const char* to_string(HeadKind kind) { return kind == HeadKind::classification ? "classification" : "regression"; }

HeadKind head_kind_from_string(const std::string& s) {
  if (s == "classification") return HeadKind::classification;
  if (s == "regression") return HeadKind::regression;
  throw ConfigError("unknown head kind '" + s + "'");
}

template <typename Scalar>
Head<Scalar>::Head(HeadKind kind, int d_model, int n_outputs, std::uint64_t seed, double init_std)
    : kind_(kind), d_model_(d_model), n_outputs_(n_outputs) {
  if (d_model <= 0) throw ConfigError("head d_model must be positive");
  if (kind == HeadKind::regression && n_outputs != 1) throw ConfigError("regression head has exactly one output");
  if (kind == HeadKind::classification && n_outputs < 2) throw ConfigError("classification head needs >= 2 classes");
  const auto d = static_cast<std::size_t>(d_model);
  const auto c = static_cast<std::size_t>(n_outputs);
  params_.assign(d * c + c, Scalar(0));
  grads_.assign(params_.size(), Scalar(0));
  Rng rng(derive_seed(seed, {0x68656164ULL}));
  for (std::size_t i = 0; i < d * c; ++i) params_[i] = static_cast<Scalar>(init_std * rng.normal());
}

template <typename Scalar>
void Head<Scalar>::set_target_scaling(double mean, double std) {
  if (!std::isfinite(mean) || !std::isfinite(std) || std <= 0.0) throw DomainError("invalid target scaling");
  mean_ = mean;
  std_ = std;
}

template <typename Scalar>
std::vector<double> Head<Scalar>::outputs(std::span<const Scalar> hidden) const {
  const auto d = static_cast<std::size_t>(d_model_);
  const auto c = static_cast<std::size_t>(n_outputs_);
  if (hidden.size() != d) throw DomainError("hidden size does not match head");
  std::vector<double> out(c);
  for (std::size_t j = 0; j < c; ++j) out[j] = static_cast<double>(params_[d * c + j]);
  for (std::size_t i = 0; i < d; ++i) {
    const double h = static_cast<double>(hidden[i]);
    for (std::size_t j = 0; j < c; ++j) out[j] += h * static_cast<double>(params_[i * c + j]);
  }
  return out;
}

template <typename Scalar>
double Head<Scalar>::accumulate(std::span<const Scalar> hidden, int label, double target, double weight,
                                std::span<Scalar> d_hidden) {
  const auto d = static_cast<std::size_t>(d_model_);
  const auto c = static_cast<std::size_t>(n_outputs_);
  const auto out = outputs(hidden);
  std::vector<double> d_out(c);
  double loss = 0.0;
  if (kind_ == HeadKind::classification) {
    if (label < 0 || label >= n_outputs_) throw DomainError("label " + std::to_string(label) + " out of range");
    const double mx = *std::max_element(out.begin(), out.end());
    double z = 0.0;
    for (double v : out) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    loss = lse - out[static_cast<std::size_t>(label)];
    for (std::size_t j = 0; j < c; ++j) d_out[j] = std::exp(out[j] - lse);
    d_out[static_cast<std::size_t>(label)] -= 1.0;
  } else {
    const double diff = out[0] - (target - mean_) / std_;
    loss = diff * diff;
    d_out[0] = 2.0 * diff;
  }
  for (std::size_t j = 0; j < c; ++j) grads_[d * c + j] += static_cast<Scalar>(weight * d_out[j]);
  for (std::size_t i = 0; i < d; ++i) {
    const double h = static_cast<double>(hidden[i]);
    double dh = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      grads_[i * c + j] += static_cast<Scalar>(weight * h * d_out[j]);
      dh += static_cast<double>(params_[i * c + j]) * d_out[j];
    }
    d_hidden[i] = static_cast<Scalar>(weight * dh);
  }
  return loss;
}

template <typename Scalar>
nlohmann::json Head<Scalar>::to_json() const {
  return {{"kind", to_string(kind_)},
          {"d_model", d_model_},
          {"n_outputs", n_outputs_},
          {"target_mean", mean_},
          {"target_std", std_}};
}

std::size_t last_token_position(std::span<const int> ids, int pad_id) {
  for (std::size_t t = ids.size(); t-- > 0;)
    if (ids[t] != pad_id) return t;
  throw DomainError("sequence has no non-pad token");
}

std::pair<double, double> target_scaling(std::span<const double> targets) {
  if (targets.empty()) throw DomainError("no regression targets");
  double mean = 0.0;
  for (double v : targets) mean += v;
  mean /= static_cast<double>(targets.size());
  if (targets.size() < 2) return {mean, 1.0};
  double ss = 0.0;
  for (double v : targets) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(targets.size() - 1));
  return {mean, sd > 0.0 ? sd : 1.0};
}

template <typename Scalar>
TrainResult finetune_head(Transformer<Scalar>& model, Head<Scalar>& head, const std::vector<HeadExample>& examples,
                          const TrainConfig& cfg, int pad_id, TrainState* state,
                          const std::function<void(const TrainState&)>& on_step) {
  using Mat = Matrix<Scalar>;
  if (head.d_model() != model.config().d_model) throw ConfigError("head does not match model width");
  TrainState local;
  TrainState& st = state ? *state : local;
  std::vector<ParamGroup<Scalar>> groups = {{model.parameters(), model.gradients()},
                                            {head.parameters(), head.gradients()}};
  const auto d = static_cast<std::size_t>(model.config().d_model);
  return run_training<Scalar>(
      examples.size(), cfg, std::move(groups),
      [&](std::size_t i, double weight) {
        const auto& ex = examples[i];
        typename Transformer<Scalar>::Cache cache;
        const Mat hidden = model.hidden_states(ex.ids, &cache);
        const std::size_t pos = last_token_position(ex.ids, pad_id);
        Mat d_hidden = Mat::Zero(hidden.rows(), hidden.cols());
        const double loss = head.accumulate(std::span<const Scalar>(hidden.row(pos).data(), d), ex.label, ex.target,
                                            weight, std::span<Scalar>(d_hidden.row(pos).data(), d));
        model.backward(cache, d_hidden);
        return loss;
      },
      st, on_step);
}

template <typename Scalar>
FineTuned<Scalar> attach_head_and_finetune(Transformer<Scalar> model, HeadKind kind, int n_classes,
                                           const std::vector<HeadExample>& examples, const TrainConfig& cfg,
                                           int pad_id) {
  if (examples.empty()) throw DomainError("no fine-tuning examples");
  const int outputs = kind == HeadKind::classification ? n_classes : 1;
  Head<Scalar> head(kind, model.config().d_model, outputs, derive_seed(cfg.seed, {0x6865ULL}), model.config().init_std);
  if (kind == HeadKind::classification) {
    std::set<int> labels;
    for (const auto& ex : examples) labels.insert(ex.label);
    if (labels.size() < 2) throw DomainError("classification fine-tuning needs at least two classes in the training data");
  } else {
    std::vector<double> targets;
    for (const auto& ex : examples) targets.push_back(ex.target);
    const auto [mean, sd] = target_scaling(targets);
    head.set_target_scaling(mean, sd);
  }
  auto result = finetune_head(model, head, examples, cfg, pad_id);
  return {std::move(model), std::move(head), std::move(result)};
}

template <typename Scalar>
static std::vector<double> head_outputs(const Transformer<Scalar>& model, const Head<Scalar>& head,
                                        std::span<const int> ids, int pad_id) {
  const auto hidden = model.hidden_states(ids);
  const std::size_t pos = last_token_position(ids, pad_id);
  return head.outputs(std::span<const Scalar>(hidden.row(pos).data(), static_cast<std::size_t>(hidden.cols())));
}

template <typename Scalar>
std::vector<double> predict_proba(const Transformer<Scalar>& model, const Head<Scalar>& head, std::span<const int> ids,
                                  int pad_id) {
  if (head.kind() != HeadKind::classification) throw DomainError("predict_proba needs a classification head");
  auto out = head_outputs(model, head, ids, pad_id);
  const double mx = *std::max_element(out.begin(), out.end());
  double z = 0.0;
  for (double& v : out) z += (v = std::exp(v - mx));
  for (double& v : out) v /= z;
  return out;
}

template <typename Scalar>
double predict_value(const Transformer<Scalar>& model, const Head<Scalar>& head, std::span<const int> ids, int pad_id) {
  if (head.kind() != HeadKind::regression) throw DomainError("predict_value needs a regression head");
  return head_outputs(model, head, ids, pad_id)[0] * head.target_std() + head.target_mean();
}

template class Head<float>;
template class Head<double>;

#define TABFORGE_HEAD_INSTANTIATE(S)                                                                               \
  template TrainResult finetune_head<S>(Transformer<S>&, Head<S>&, const std::vector<HeadExample>&,                \
                                        const TrainConfig&, int, TrainState*,                                      \
                                        const std::function<void(const TrainState&)>&);                            \
  template FineTuned<S> attach_head_and_finetune<S>(Transformer<S>, HeadKind, int, const std::vector<HeadExample>&, \
                                                    const TrainConfig&, int);                                      \
  template std::vector<double> predict_proba<S>(const Transformer<S>&, const Head<S>&, std::span<const int>, int);  \
  template double predict_value<S>(const Transformer<S>&, const Head<S>&, std::span<const int>, int);

TABFORGE_HEAD_INSTANTIATE(float)
TABFORGE_HEAD_INSTANTIATE(double)

}  // namespace tabforge::lm
