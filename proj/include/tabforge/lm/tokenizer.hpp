#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace tabforge::lm {

// Byte-level BPE with a fixed special-token table.
//
// Ids: 0 <pad>, 1 <s>, 2 </s>, then the three template markers, then the 32
// sentinels, then the 256 byte tokens, then one id per learned merge.
// Markers and sentinels found in text encode to their single id; pad, begin
// and end are control tokens and never come out of encode().
//
// Text is pre-split into chunks before merging: an optional leading space
// plus a letter run, an optional leading space plus a punctuation run, a
// single digit, or a whitespace run. Merges never cross chunk boundaries,
// so numbers always tokenize digit by digit.
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBegin = 1;
  static constexpr int kEnd = 2;

  // Byte-level vocabulary with no merges.
  Tokenizer();

  // Learns up to `num_merges` merges from the corpus; ties on pair frequency
  // go to the smaller (left, right) id pair.
  static Tokenizer train(const std::vector<std::string>& corpus, std::size_t num_merges);

  std::vector<int> encode(std::string_view text) const;
  // Control tokens decode to nothing.
  std::string decode(std::span<const int> ids) const;

  int vocab_size() const noexcept { return static_cast<int>(pieces_.size()); }
  int pad_id() const noexcept { return kPad; }
  int begin_id() const noexcept { return kBegin; }
  int end_id() const noexcept { return kEnd; }
  int sentinel_id(std::size_t index) const;
  int instruction_marker_id() const noexcept { return 3; }
  int table_marker_id() const noexcept { return 4; }
  int answer_marker_id() const noexcept { return 5; }
  bool is_special(int id) const noexcept { return id >= 0 && id < first_byte_id(); }
  const std::string& piece(int id) const { return pieces_.at(static_cast<std::size_t>(id)); }
  std::size_t num_merges() const noexcept { return merges_.size(); }

  nlohmann::json to_json() const;
  static Tokenizer from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static Tokenizer load(const std::filesystem::path& path);

  // Splits out special tokens; the second member is -1 for plain text spans.
  std::vector<std::pair<std::string_view, int>> split_specials(std::string_view text) const;

 private:
  int first_byte_id() const noexcept { return static_cast<int>(specials_.size()); }
  void add_merge(int left, int right);
  std::vector<int> encode_chunk(std::string_view chunk) const;

  std::vector<std::string> specials_;
  std::vector<std::string> pieces_;
  std::vector<std::pair<int, int>> merges_;
  std::map<std::pair<int, int>, int> merge_rank_;
};

// Pre-tokenizer used by Tokenizer; exposed for tests.
std::vector<std::string_view> split_chunks(std::string_view text);

}  // namespace tabforge::lm
