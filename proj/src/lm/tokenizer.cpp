#include "tabforge/lm/tokenizer.hpp"

#include <fstream>
#include <limits>
#include <unordered_map>

#include "tabforge/error.hpp"
#include "tabforge/masker.hpp"
#include "tabforge/textgen.hpp"

namespace tabforge::lm {

namespace {

bool is_letter(unsigned char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80; }
bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }
bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
bool is_punct(unsigned char c) { return !is_letter(c) && !is_digit(c) && !is_space(c); }

constexpr std::size_t kFirstSentinel = 6;

}  // namespace

std::vector<std::string_view> split_chunks(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  const auto at = [&](std::size_t k) { return static_cast<unsigned char>(text[k]); };
  while (i < text.size()) {
    const std::size_t start = i;
    const unsigned char c = at(i);
    if (c == ' ' && i + 1 < text.size() && (is_letter(at(i + 1)) || is_punct(at(i + 1)))) {
      ++i;
      const bool letters = is_letter(at(i));
      while (i < text.size() && (letters ? is_letter(at(i)) : is_punct(at(i)))) ++i;
    } else if (is_letter(c)) {
      while (i < text.size() && is_letter(at(i))) ++i;
    } else if (is_digit(c)) {
      ++i;
    } else if (is_punct(c)) {
      while (i < text.size() && is_punct(at(i))) ++i;
    } else {
      while (i < text.size() && is_space(at(i))) {
        // Leave a single trailing space to prefix the next word.
        if (at(i) == ' ' && i + 1 < text.size() && i > start && (is_letter(at(i + 1)) || is_punct(at(i + 1))))
          break;
        ++i;
      }
    }
    out.push_back(text.substr(start, i - start));
  }
  return out;
}

Tokenizer::Tokenizer() {
  specials_ = {"<pad>", "<s>", "</s>", std::string(kInstructionMarker), std::string(kTableMarker),
               std::string(kAnswerMarker)};
  for (std::size_t i = 0; i < kMaxSentinels; ++i) specials_.push_back(sentinel_token(i));
  pieces_ = specials_;
  for (int b = 0; b < 256; ++b) pieces_.emplace_back(1, static_cast<char>(b));
}

int Tokenizer::sentinel_id(std::size_t index) const {
  if (index >= kMaxSentinels) throw DomainError("sentinel index " + std::to_string(index) + " out of range");
  return static_cast<int>(kFirstSentinel + index);
}

void Tokenizer::add_merge(int left, int right) {
  pieces_.push_back(pieces_.at(static_cast<std::size_t>(left)) + pieces_.at(static_cast<std::size_t>(right)));
  merge_rank_[{left, right}] = static_cast<int>(merges_.size());
  merges_.emplace_back(left, right);
}

std::vector<std::pair<std::string_view, int>> Tokenizer::split_specials(std::string_view text) const {
  std::vector<std::pair<std::string_view, int>> out;
  std::size_t plain_start = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    int match = -1;
    std::size_t match_len = 0;
    if (text[i] == '#') {
      for (int id = 3; id <= 5; ++id) {
        const auto& s = specials_[static_cast<std::size_t>(id)];
        if (text.substr(i).starts_with(s)) {
          match = id;
          match_len = s.size();
        }
      }
    } else if (text[i] == '<' && text.substr(i).starts_with("<missing_value_")) {
      std::size_t p = i + 15;
      std::size_t index = 0;
      const std::size_t digits = p;
      while (p < text.size() && p - digits < 3 && is_digit(static_cast<unsigned char>(text[p])))
        index = index * 10 + static_cast<std::size_t>(text[p++] - '0');
      const bool canonical = p - digits == 1 || (p - digits > 1 && text[digits] != '0');
      if (p > digits && canonical && p < text.size() && text[p] == '>' && index < kMaxSentinels) {
        match = static_cast<int>(kFirstSentinel + index);
        match_len = p + 1 - i;
      }
    }
    if (match < 0) {
      ++i;
      continue;
    }
    if (i > plain_start) out.emplace_back(text.substr(plain_start, i - plain_start), -1);
    out.emplace_back(text.substr(i, match_len), match);
    i += match_len;
    plain_start = i;
  }
  if (plain_start < text.size()) out.emplace_back(text.substr(plain_start), -1);
  return out;
}

std::vector<int> Tokenizer::encode_chunk(std::string_view chunk) const {
  std::vector<int> symbols;
  symbols.reserve(chunk.size());
  for (unsigned char c : chunk) symbols.push_back(first_byte_id() + c);
  while (symbols.size() > 1) {
    int best_rank = std::numeric_limits<int>::max();
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = merge_rank_.find({symbols[i], symbols[i + 1]});
      if (it != merge_rank_.end() && it->second < best_rank) best_rank = it->second;
    }
    if (best_rank == std::numeric_limits<int>::max()) break;
    const auto [left, right] = merges_[static_cast<std::size_t>(best_rank)];
    const int merged = first_byte_id() + 256 + best_rank;
    std::size_t out = 0;
    for (std::size_t i = 0; i < symbols.size(); ++out) {
      if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
        symbols[out] = merged;
        i += 2;
      } else {
        symbols[out] = symbols[i++];
      }
    }
    symbols.resize(out);
  }
  return symbols;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& [span, special] : split_specials(text)) {
    if (special >= 0) {
      ids.push_back(special);
      continue;
    }
    for (auto chunk : split_chunks(span)) {
      auto part = encode_chunk(chunk);
      ids.insert(ids.end(), part.begin(), part.end());
    }
  }
  return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= vocab_size()) throw DomainError("token id " + std::to_string(id) + " out of range");
    if (id == kPad || id == kBegin || id == kEnd) continue;
    out += pieces_[static_cast<std::size_t>(id)];
  }
  return out;
}

Tokenizer Tokenizer::train(const std::vector<std::string>& corpus, std::size_t num_merges) {
  Tokenizer tok;
  std::map<std::string, std::size_t> chunk_counts;
  for (const auto& text : corpus)
    for (const auto& [span, special] : tok.split_specials(text))
      if (special < 0)
        for (auto chunk : split_chunks(span))
          if (chunk.size() > 1) ++chunk_counts[std::string(chunk)];

  struct Word {
    std::vector<int> symbols;
    std::size_t count;
  };
  std::vector<Word> words;
  words.reserve(chunk_counts.size());
  for (const auto& [chunk, count] : chunk_counts) {
    Word w{{}, count};
    for (unsigned char c : chunk) w.symbols.push_back(tok.first_byte_id() + c);
    words.push_back(std::move(w));
  }

  for (std::size_t m = 0; m < num_merges; ++m) {
    std::map<std::pair<int, int>, std::size_t> pair_counts;
    for (const auto& w : words)
      for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i) pair_counts[{w.symbols[i], w.symbols[i + 1]}] += w.count;
    std::pair<int, int> best{-1, -1};
    std::size_t best_count = 1;
    for (const auto& [pair, count] : pair_counts) {
      if (count > best_count) {
        best = pair;
        best_count = count;
      }
    }
    if (best.first < 0) break;
    const int merged = tok.vocab_size();
    tok.add_merge(best.first, best.second);
    for (auto& w : words) {
      std::vector<int> next;
      next.reserve(w.symbols.size());
      for (std::size_t i = 0; i < w.symbols.size();) {
        if (i + 1 < w.symbols.size() && w.symbols[i] == best.first && w.symbols[i + 1] == best.second) {
          next.push_back(merged);
          i += 2;
        } else {
          next.push_back(w.symbols[i++]);
        }
      }
      w.symbols = std::move(next);
    }
  }
  return tok;
}

nlohmann::json Tokenizer::to_json() const {
  nlohmann::json merges = nlohmann::json::array();
  for (const auto& [l, r] : merges_) merges.push_back({l, r});
  nlohmann::json specials = nlohmann::json::array();
  for (std::size_t i = 0; i < specials_.size(); ++i) specials.push_back({{"id", i}, {"text", specials_[i]}});
  return {{"format", "tabforge-bpe"}, {"version", 1}, {"specials", specials}, {"byte_offset", first_byte_id()},
          {"merges", merges}};
}

Tokenizer Tokenizer::from_json(const nlohmann::json& j) {
  if (j.value("format", std::string()) != "tabforge-bpe") throw ParseError("not a tabforge tokenizer file", 0);
  Tokenizer tok;
  const auto& specials = j.at("specials");
  if (specials.size() != tok.specials_.size()) throw ParseError("special-token table mismatch", 0);
  for (std::size_t i = 0; i < specials.size(); ++i)
    if (specials[i].at("text").get<std::string>() != tok.specials_[i])
      throw ParseError("special-token table mismatch at id " + std::to_string(i), 0);
  for (const auto& m : j.at("merges")) {
    const int l = m.at(0).get<int>();
    const int r = m.at(1).get<int>();
    if (l < tok.first_byte_id() || r < tok.first_byte_id() || l >= tok.vocab_size() || r >= tok.vocab_size())
      throw ParseError("merge refers to an unknown id", 0);
    tok.add_merge(l, r);
  }
  return tok;
}

void Tokenizer::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json().dump() << "\n";
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  return from_json(nlohmann::json::parse(in));
}

}  // namespace tabforge::lm
