#include "tabforge/masker.hpp"

#include <algorithm>
#include <cctype>
#include <cfenv>
#include <cmath>

#include "tabforge/error.hpp"
#include "tabforge/instructions.hpp"
#include "tabforge/random.hpp"

namespace tabforge {

namespace {

constexpr std::string_view kSentinelPrefix = "<missing_value_";

// A maskable unit; row == npos addresses the header.
struct Unit {
  std::size_t row;
  std::size_t col;
};

constexpr std::size_t kHeaderRow = static_cast<std::size_t>(-1);

std::vector<Unit> maskable_units(const Table& table, bool include_headers) {
  std::vector<Unit> units;
  if (include_headers)
    for (std::size_t c = 0; c < table.num_columns(); ++c) units.push_back({kHeaderRow, c});
  for (std::size_t r = 0; r < table.num_rows(); ++r)
    for (std::size_t c = 0; c < table.num_columns(); ++c)
      if (!table.cell(r, c).is_missing()) units.push_back({r, c});
  return units;
}

MaskedExample mask_units(const Table& table, const std::vector<Unit>& units, std::vector<std::size_t> chosen,
                         std::string instruction, TaskKind kind) {
  std::sort(chosen.begin(), chosen.end());
  auto raw = render_raw(table);
  MaskedExample out;
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    const Unit& u = units[chosen[i]];
    std::string& slot = u.row == kHeaderRow ? raw[0][u.col] : raw[u.row + 1][u.col];
    out.targets[i] = slot;
    slot = sentinel_token(i);
  }
  out.prompt.instruction = std::move(instruction);
  out.prompt.table_markdown =
      render_markdown_grid(raw.front(), std::vector<std::vector<std::string>>(raw.begin() + 1, raw.end()));
  out.prompt.answer = render_sentinel_answer(out.targets);
  out.prompt.task_kind = kind;
  nlohmann::json targets = nlohmann::json::object();
  for (const auto& [i, v] : out.targets) targets[std::to_string(i)] = v;
  out.prompt.meta = {{"k", out.targets.size()}, {"sentinel_targets", targets}, {"table", table.name()}};
  return out;
}

}  // namespace

std::string sentinel_token(std::size_t index) {
  return std::string(kSentinelPrefix) + std::to_string(index) + ">";
}

void MaskConfig::validate() const {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("mask ratio must lie in (0, 1)");
  if (max_sentinels < 1) throw ConfigError("max_sentinels must be >= 1");
  if (max_sentinels > kMaxSentinels)
    throw ConfigError("max_sentinels exceeds the tokenizer's " + std::to_string(kMaxSentinels) + " sentinels");
}

std::size_t count_maskable_units(const Table& table, bool include_headers) {
  return maskable_units(table, include_headers).size();
}

std::size_t static_mask_count(std::size_t units, const MaskConfig& cfg) {
  const int previous = std::fegetround();
  std::fesetround(FE_TONEAREST);
  const double k = std::nearbyint(cfg.ratio * static_cast<double>(units));
  std::fesetround(previous);
  return std::clamp<std::size_t>(static_cast<std::size_t>(k), 1, cfg.max_sentinels);
}

MaskedExample mask_table(const Table& table, const MaskConfig& cfg) {
  cfg.validate();
  const auto units = maskable_units(table, cfg.include_headers);
  if (units.empty()) throw StructuralError("table '" + table.name() + "' has no maskable cells");
  Rng rng(cfg.seed);
  std::size_t k = std::min(static_mask_count(units.size(), cfg), units.size());
  if (cfg.dynamic) k = 1 + rng.below(k);
  auto chosen = rng.sample_without_replacement(units.size(), k);
  return mask_units(table, units, std::move(chosen), std::string(kMaskThenPredictInstruction), TaskKind::mtp);
}

MaskedExample corrupt_for_imputation(const Table& table, std::size_t missing_count, std::uint64_t seed) {
  const auto units = maskable_units(table, false);
  const std::size_t limit = std::min<std::size_t>(4, units.size());
  if (missing_count < 1 || missing_count > limit)
    throw DomainError("missing count " + std::to_string(missing_count) + " outside [1, " + std::to_string(limit) + "]");
  Rng rng(seed);
  auto chosen = rng.sample_without_replacement(units.size(), missing_count);
  return mask_units(table, units, std::move(chosen), std::string(kImputationInstruction), TaskKind::imputation);
}

std::string render_sentinel_answer(const std::map<std::size_t, std::string>& targets) {
  std::string out;
  for (const auto& [i, v] : targets) {
    if (!out.empty()) out += " ";
    out += sentinel_token(i);
    out += " ";
    out += v;
  }
  return out;
}

std::map<std::size_t, std::string> parse_sentinel_answer(std::string_view text, std::size_t k) {
  struct Hit {
    std::size_t index;
    std::size_t begin;
    std::size_t end;
  };
  std::vector<Hit> hits;
  for (std::size_t pos = text.find(kSentinelPrefix); pos != std::string_view::npos;
       pos = text.find(kSentinelPrefix, pos + 1)) {
    std::size_t p = pos + kSentinelPrefix.size();
    std::size_t index = 0;
    const std::size_t digits_begin = p;
    while (p < text.size() && p - digits_begin < 6 && text[p] >= '0' && text[p] <= '9')
      index = index * 10 + static_cast<std::size_t>(text[p++] - '0');
    if (p == digits_begin || p >= text.size() || text[p] != '>') continue;
    hits.push_back({index, pos, p + 1});
  }
  std::map<std::size_t, std::string> out;
  for (std::size_t i = 0; i < k; ++i) out[i] = "";
  std::vector<bool> seen(k, false);
  for (std::size_t h = 0; h < hits.size(); ++h) {
    const auto& hit = hits[h];
    if (hit.index >= k || seen[hit.index]) continue;
    seen[hit.index] = true;
    const std::size_t stop = h + 1 < hits.size() ? hits[h + 1].begin : text.size();
    std::string_view value = text.substr(hit.end, stop - hit.end);
    while (!value.empty() && std::isspace(static_cast<unsigned char>(value.front()))) value.remove_prefix(1);
    while (!value.empty() && std::isspace(static_cast<unsigned char>(value.back()))) value.remove_suffix(1);
    out[hit.index] = std::string(value);
  }
  return out;
}

std::string fill_sentinels(std::string_view masked_markdown, const std::map<std::size_t, std::string>& targets) {
  std::string out(masked_markdown);
  for (const auto& [i, v] : targets) {
    const auto token = sentinel_token(i);
    const auto pos = out.find(token);
    if (pos == std::string::npos) throw DomainError("sentinel " + token + " not present");
    out.replace(pos, token.size(), escape_markdown_cell(v));
  }
  return out;
}

}  // namespace tabforge
