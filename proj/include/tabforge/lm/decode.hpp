#pragma once

#include <span>
#include <string>
#include <vector>

#include "tabforge/lm/model.hpp"
#include "tabforge/lm/tokenizer.hpp"

namespace tabforge::lm {

// Sum of next-token log-probabilities of `continuation` after `prefix`.
template <typename Scalar>
double sequence_log_prob(const Transformer<Scalar>& model, std::span<const int> prefix,
                         std::span<const int> continuation);

// Scores each option as a continuation of the prompt and returns the softmax
// over the summed log-probabilities. Options are encoded as they would appear
// after the answer marker, followed by </s>.
template <typename Scalar>
std::vector<double> constrained_decode(const Transformer<Scalar>& model, const Tokenizer& tokenizer,
                                       std::span<const int> prompt_ids, const std::vector<std::string>& options);

// Greedy decoding until </s> or max_new_tokens. The prompt plus the token
// budget must fit the context window.
template <typename Scalar>
std::string generate_greedy(const Transformer<Scalar>& model, const Tokenizer& tokenizer,
                            std::span<const int> prompt_ids, std::size_t max_new_tokens);

}  // namespace tabforge::lm
