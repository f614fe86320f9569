#include "tabforge/textgen.hpp"

#include <array>
#include <fstream>
#include <sstream>

#include "tabforge/error.hpp"

namespace tabforge {

namespace {

constexpr std::array<std::string_view, 3> kMarkers = {kInstructionMarker, kTableMarker, kAnswerMarker};

std::string_view trim_spaces(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

std::vector<std::string> split_row(std::string_view line, std::size_t line_no) {
  line = trim_spaces(line);
  if (line.size() < 2 || line.front() != '|' || line.back() != '|')
    throw ParseError("not a table row: must start and end with '|'", line_no);
  std::vector<std::string> cells;
  std::string current;
  for (std::size_t i = 1; i < line.size(); ++i) {
    const char c = line[i];
    if (c == '\\' && i + 1 < line.size() && line[i + 1] == '|') {
      current.push_back('|');
      ++i;
    } else if (c == '|') {
      cells.emplace_back(trim_spaces(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  if (!trim_spaces(current).empty()) throw ParseError("text after the closing '|'", line_no);
  return cells;
}

bool is_separator_cell(std::string_view cell) {
  if (!cell.empty() && cell.front() == ':') cell.remove_prefix(1);
  if (!cell.empty() && cell.back() == ':') cell.remove_suffix(1);
  return cell.size() >= 3 && cell.find_first_not_of('-') == std::string_view::npos;
}

void ensure_marker_free(std::string_view field, std::string_view what) {
  for (auto m : kMarkers) {
    if (field.find(m) != std::string_view::npos)
      throw DomainError(std::string(what) + " contains the template marker '" + std::string(m) + "'");
  }
}

}  // namespace

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::mtp: return "mtp";
    case TaskKind::classification: return "classification";
    case TaskKind::regression: return "regression";
    case TaskKind::imputation: return "imputation";
  }
  return "mtp";
}

TaskKind task_kind_from_string(std::string_view text) {
  if (text == "mtp") return TaskKind::mtp;
  if (text == "classification") return TaskKind::classification;
  if (text == "regression") return TaskKind::regression;
  if (text == "imputation") return TaskKind::imputation;
  throw ParseError("unknown task kind '" + std::string(text) + "'", 0);
}

std::string escape_markdown_cell(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '|') {
      out += "\\|";
    } else if (c == '\r') {
      if (i + 1 < text.size() && text[i + 1] == '\n') ++i;
      out.push_back(' ');
    } else if (c == '\n') {
      out.push_back(' ');
    } else {
      out.push_back(c);
    }
  }
  return out;
}

std::string render_markdown_grid(const std::vector<std::string>& header,
                                 const std::vector<std::vector<std::string>>& body) {
  std::string out;
  auto emit_row = [&out](const std::vector<std::string>& cells) {
    out += "|";
    for (const auto& c : cells) {
      out += " ";
      out += escape_markdown_cell(c);
      out += " |";
    }
  };
  emit_row(header);
  out += "\n|";
  for (std::size_t i = 0; i < header.size(); ++i) out += " --- |";
  for (const auto& row : body) {
    out += "\n";
    emit_row(row);
  }
  return out;
}

std::string to_markdown(const Table& table) {
  const auto raw = render_raw(table);
  return render_markdown_grid(raw.front(), std::vector<std::vector<std::string>>(raw.begin() + 1, raw.end()));
}

RawGrid parse_markdown_grid(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto nl = text.find('\n', start);
    const auto end = nl == std::string_view::npos ? text.size() : nl;
    lines.push_back(text.substr(start, end - start));
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  while (!lines.empty() && trim_spaces(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw ParseError("empty table text", 1);
  if (lines.size() < 2) throw ParseError("missing separator row", 2);

  RawGrid grid;
  grid.push_back(split_row(lines[0], 1));
  const auto sep = split_row(lines[1], 2);
  if (sep.size() != grid.front().size())
    throw ParseError("separator row has " + std::to_string(sep.size()) + " cells, header has " +
                         std::to_string(grid.front().size()),
                     2);
  for (const auto& s : sep)
    if (!is_separator_cell(s)) throw ParseError("malformed separator row", 2);
  for (std::size_t i = 2; i < lines.size(); ++i) {
    auto row = split_row(lines[i], i + 1);
    if (row.size() != grid.front().size())
      throw ParseError("row has " + std::to_string(row.size()) + " cells, header has " +
                           std::to_string(grid.front().size()),
                       i + 1);
    grid.push_back(std::move(row));
  }
  return grid;
}

Table from_markdown(std::string_view text, std::string name, std::optional<std::string> domain_tag) {
  return load_table(parse_markdown_grid(text), std::move(name), std::move(domain_tag));
}

std::string render_prompt(std::string_view instruction, std::string_view table_markdown, std::string_view answer) {
  ensure_marker_free(instruction, "instruction");
  ensure_marker_free(table_markdown, "table");
  ensure_marker_free(answer, "answer");
  std::string out;
  out.reserve(instruction.size() + table_markdown.size() + answer.size() + 48);
  out += kInstructionMarker;
  out += "\n";
  out += instruction;
  out += "\n";
  out += kTableMarker;
  out += "\n";
  out += table_markdown;
  out += "\n";
  out += kAnswerMarker;
  out += "\n";
  out += answer;
  return out;
}

std::string render_prompt(const PromptExample& example, bool with_answer) {
  return render_prompt(example.instruction, example.table_markdown, with_answer ? example.answer : std::string_view{});
}

std::string to_sentence(const Table& table, std::size_t row_index) {
  if (row_index >= table.num_rows())
    throw DomainError("row " + std::to_string(row_index) + " out of range for table '" + table.name() + "'");
  std::string out;
  const auto& row = table.rows()[row_index];
  for (std::size_t c = 0; c < table.num_columns(); ++c) {
    if (c > 0) out += ", ";
    out += table.columns()[c].name;
    out += " is ";
    out += row[c].is_missing() ? std::string("unknown") : row[c].render();
  }
  return out;
}

nlohmann::json to_json(const PromptExample& example) {
  return {{"task", to_string(example.task_kind)},
          {"instruction", example.instruction},
          {"table_markdown", example.table_markdown},
          {"answer", example.answer},
          {"meta", example.meta}};
}

PromptExample prompt_example_from_json(const nlohmann::json& j) {
  PromptExample e;
  e.task_kind = task_kind_from_string(j.at("task").get<std::string>());
  e.instruction = j.at("instruction").get<std::string>();
  e.table_markdown = j.at("table_markdown").get<std::string>();
  e.answer = j.at("answer").get<std::string>();
  e.meta = j.contains("meta") ? j.at("meta") : nlohmann::json::object();
  return e;
}

std::string to_jsonl(const std::vector<PromptExample>& examples) {
  std::string out;
  for (const auto& e : examples) {
    // ordered_json keeps the documented key order on disk.
    nlohmann::ordered_json j;
    j["task"] = to_string(e.task_kind);
    j["instruction"] = e.instruction;
    j["table_markdown"] = e.table_markdown;
    j["answer"] = e.answer;
    j["meta"] = nlohmann::ordered_json::parse(e.meta.dump());
    out += j.dump();
    out += "\n";
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<PromptExample>& examples) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << to_jsonl(examples);
}

std::vector<PromptExample> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<PromptExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(prompt_example_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ": " + e.what(), line_no);
    }
  }
  return out;
}

}  // namespace tabforge
