#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tabforge/table_model.hpp"

namespace tabforge {

inline constexpr std::string_view kInstructionMarker = "### Instruction:";
inline constexpr std::string_view kTableMarker = "### Table:";
inline constexpr std::string_view kAnswerMarker = "### Answer:";

enum class TaskKind { mtp, classification, regression, imputation };

std::string_view to_string(TaskKind kind);
TaskKind task_kind_from_string(std::string_view text);

// The universal training/inference record. Inference records have an empty
// answer.
struct PromptExample {
  std::string instruction;
  std::string table_markdown;
  std::string answer;
  TaskKind task_kind = TaskKind::mtp;
  nlohmann::json meta = nlohmann::json::object();

  friend bool operator==(const PromptExample&, const PromptExample&) = default;
};

// Escapes a cell for a Markdown table: '|' -> "\|", line breaks -> ' '.
std::string escape_markdown_cell(std::string_view text);

// Renders an already-stringified grid (header + body).
std::string render_markdown_grid(const std::vector<std::string>& header,
                                 const std::vector<std::vector<std::string>>& body);

// Header row, "| --- |" separator, one line per row. No trailing newline.
std::string to_markdown(const Table& table);

// Splits a to_markdown rendering back into header + body strings,
// unescaping "\|". Throws ParseError (with 1-based line) on a malformed
// separator, a line that is not a table row, or a ragged body.
RawGrid parse_markdown_grid(std::string_view text);

// Inverse of to_markdown on canonical tables; kinds are re-inferred.
Table from_markdown(std::string_view text, std::string name = "table",
                    std::optional<std::string> domain_tag = std::nullopt);

// "### Instruction:\n{instruction}\n### Table:\n{table}\n### Answer:\n{answer}".
// Rejects any field that contains a marker spelling.
std::string render_prompt(std::string_view instruction, std::string_view table_markdown, std::string_view answer);
std::string render_prompt(const PromptExample& example, bool with_answer = true);

// "c0 is v0, c1 is v1, ..."; Missing renders as "unknown".
std::string to_sentence(const Table& table, std::size_t row_index);

nlohmann::json to_json(const PromptExample& example);
PromptExample prompt_example_from_json(const nlohmann::json& j);

// One record per line, '\n' terminated, keys in a fixed order.
std::string to_jsonl(const std::vector<PromptExample>& examples);
void write_jsonl(const std::filesystem::path& path, const std::vector<PromptExample>& examples);
std::vector<PromptExample> read_jsonl(const std::filesystem::path& path);

}  // namespace tabforge
