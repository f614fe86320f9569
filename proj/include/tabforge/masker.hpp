#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>

#include "tabforge/table_model.hpp"
#include "tabforge/textgen.hpp"

namespace tabforge {

inline constexpr std::size_t kMaxSentinels = 32;

// "<missing_value_{index}>"
std::string sentinel_token(std::size_t index);

struct MaskConfig {
  double ratio = 0.15;
  bool dynamic = false;
  std::size_t max_sentinels = kMaxSentinels;
  bool include_headers = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct MaskedExample {
  PromptExample prompt;
  std::map<std::size_t, std::string> targets;  // sentinel index -> gold text

  friend bool operator==(const MaskedExample&, const MaskedExample&) = default;
};

// Number of maskable units: non-missing body cells plus, optionally, headers.
std::size_t count_maskable_units(const Table& table, bool include_headers);

// Static sentinel count: round_half_even(ratio * units) clamped to
// [1, max_sentinels].
std::size_t static_mask_count(std::size_t units, const MaskConfig& cfg);

// Mask-Then-Predict: hides k whole cells (header names included when
// configured) behind sentinels numbered in reading order.
MaskedExample mask_table(const Table& table, const MaskConfig& cfg);

// Hides exactly m body cells, 1 <= m <= min(4, non-missing body cells).
MaskedExample corrupt_for_imputation(const Table& table, std::size_t missing_count, std::uint64_t seed);

// "<missing_value_0> v0 <missing_value_1> v1 ..."
std::string render_sentinel_answer(const std::map<std::size_t, std::string>& targets);

// Lenient inverse of render_sentinel_answer. Indices the text does not
// mention map to "". The first occurrence of a sentinel wins.
std::map<std::size_t, std::string> parse_sentinel_answer(std::string_view answer_text, std::size_t k);

// Replaces each sentinel in a masked Markdown table with its escaped gold.
std::string fill_sentinels(std::string_view masked_markdown, const std::map<std::size_t, std::string>& targets);

}  // namespace tabforge
