#include "tabforge/lm/decode.hpp"

#include <algorithm>
#include <cmath>

#include "tabforge/error.hpp"
#include "tabforge/lm/loss.hpp"

namespace tabforge::lm {

template <typename Scalar>
double sequence_log_prob(const Transformer<Scalar>& model, std::span<const int> prefix,
                         std::span<const int> continuation) {
  if (prefix.empty()) throw DomainError("empty prefix");
  if (continuation.empty()) return 0.0;
  std::vector<int> ids(prefix.begin(), prefix.end());
  ids.insert(ids.end(), continuation.begin(), continuation.end());
  if (ids.size() > static_cast<std::size_t>(model.config().context_len))
    throw DomainError("prompt plus option exceeds the context window");
  const auto hidden = model.hidden_states(ids);
  std::vector<std::size_t> positions;
  for (std::size_t i = 0; i < continuation.size(); ++i) positions.push_back(prefix.size() - 1 + i);
  const auto logits = model.project(hidden, positions);
  double total = 0.0;
  for (std::size_t i = 0; i < continuation.size(); ++i) {
    const auto row = log_softmax_row(logits, static_cast<Eigen::Index>(i));
    total += row[static_cast<std::size_t>(continuation[i])];
  }
  return total;
}

template <typename Scalar>
std::vector<double> constrained_decode(const Transformer<Scalar>& model, const Tokenizer& tokenizer,
                                       std::span<const int> prompt_ids, const std::vector<std::string>& options) {
  if (options.empty()) throw DomainError("no options to score");
  std::vector<double> scores;
  for (const auto& opt : options) {
    auto cont = tokenizer.encode(opt);
    cont.push_back(tokenizer.end_id());
    scores.push_back(sequence_log_prob(model, prompt_ids, cont));
  }
  const double mx = *std::max_element(scores.begin(), scores.end());
  double z = 0.0;
  for (double& s : scores) z += (s = std::exp(s - mx));
  for (double& s : scores) s /= z;
  return scores;
}

template <typename Scalar>
std::string generate_greedy(const Transformer<Scalar>& model, const Tokenizer& tokenizer,
                            std::span<const int> prompt_ids, std::size_t max_new_tokens) {
  if (prompt_ids.empty()) throw DomainError("empty prompt");
  if (prompt_ids.size() + max_new_tokens > static_cast<std::size_t>(model.config().context_len))
    throw DomainError("prompt of " + std::to_string(prompt_ids.size()) + " tokens leaves no room for " +
                      std::to_string(max_new_tokens) + " new tokens");
  std::vector<int> ids(prompt_ids.begin(), prompt_ids.end());
  std::vector<int> out;
  for (std::size_t n = 0; n < max_new_tokens; ++n) {
    const auto hidden = model.hidden_states(ids);
    const std::size_t last = ids.size() - 1;
    const auto logits = model.project(hidden, std::span<const std::size_t>(&last, 1));
    Eigen::Index best = 0;
    logits.row(0).maxCoeff(&best);
    const int id = static_cast<int>(best);
    if (id == tokenizer.end_id()) break;
    ids.push_back(id);
    out.push_back(id);
  }
  return tokenizer.decode(out);
}

template double sequence_log_prob<float>(const Transformer<float>&, std::span<const int>, std::span<const int>);
template double sequence_log_prob<double>(const Transformer<double>&, std::span<const int>, std::span<const int>);
template std::vector<double> constrained_decode<float>(const Transformer<float>&, const Tokenizer&,
                                                       std::span<const int>, const std::vector<std::string>&);
template std::vector<double> constrained_decode<double>(const Transformer<double>&, const Tokenizer&,
                                                        std::span<const int>, const std::vector<std::string>&);
template std::string generate_greedy<float>(const Transformer<float>&, const Tokenizer&, std::span<const int>,
                                            std::size_t);
template std::string generate_greedy<double>(const Transformer<double>&, const Tokenizer&, std::span<const int>,
                                             std::size_t);

}  // namespace tabforge::lm
