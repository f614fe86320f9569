#include "tabforge/taskgen.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <span>

#include "tabforge/error.hpp"
#include "tabforge/instructions.hpp"
#include "tabforge/random.hpp"

namespace tabforge {

namespace {

std::string replace_all(std::string text, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = text.find(from, pos)) != std::string::npos) {
    text.replace(pos, from.size(), to);
    pos += to.size();
  }
  return text;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out += sep;
    out += parts[i];
  }
  return out;
}

Table single_row_table(const Table& table, std::size_t row, std::optional<std::size_t> drop_column) {
  std::vector<ColumnSpec> columns;
  std::vector<Cell> cells;
  for (std::size_t c = 0; c < table.num_columns(); ++c) {
    if (drop_column && c == *drop_column) continue;
    columns.push_back(table.columns()[c]);
    cells.push_back(table.cell(row, c));
  }
  return Table(table.name(), table.domain_tag(), std::move(columns), {std::move(cells)});
}

}  // namespace

void TaskSpec::validate(const Table& table) const {
  if (!table.column_index(target_column))
    throw ConfigError("target column '" + target_column + "' not found in dataset '" + dataset_id + "'");
  if (table.num_columns() < 2) throw ConfigError("dataset '" + dataset_id + "' has no feature columns");
  if (kind == Kind::classification) {
    std::set<std::string> distinct(options.begin(), options.end());
    if (distinct.size() < 2 || distinct.size() != options.size())
      throw ConfigError("classification task '" + dataset_id + "' needs >= 2 distinct options");
  }
}

std::string TaskSpec::instruction() const {
  std::string tmpl = instruction_template;
  if (tmpl.empty())
    tmpl = std::string(kind == Kind::classification ? kClassificationTemplate : kRegressionTemplate);
  tmpl = replace_all(std::move(tmpl), "{target}", target_column);
  return replace_all(std::move(tmpl), "{options}", join(options, ", "));
}

std::optional<std::size_t> TaskSpec::option_index(std::string_view label) const {
  for (std::size_t i = 0; i < options.size(); ++i)
    if (options[i] == label) return i;
  if (const auto a = Decimal::parse(label)) {
    for (std::size_t i = 0; i < options.size(); ++i) {
      const auto b = Decimal::parse(options[i]);
      if (b && canonicalize_numeric(*a) == canonicalize_numeric(*b)) return i;
    }
  }
  return std::nullopt;
}

TaskSpec TaskSpec::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {"dataset_id", "kind", "options", "target_column",
                                              "instruction_template"};
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw ConfigError("unknown task manifest key '" + key + "'");
  TaskSpec spec;
  spec.dataset_id = j.at("dataset_id").get<std::string>();
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "classification") {
    spec.kind = Kind::classification;
  } else if (kind == "regression") {
    spec.kind = Kind::regression;
  } else {
    throw ConfigError("task '" + spec.dataset_id + "': unknown kind '" + kind + "'");
  }
  if (j.contains("options")) spec.options = j.at("options").get<std::vector<std::string>>();
  spec.target_column = j.at("target_column").get<std::string>();
  spec.instruction_template = j.value("instruction_template", std::string());
  if (spec.kind == Kind::classification && spec.options.size() < 2)
    throw ConfigError("classification task '" + spec.dataset_id + "' needs >= 2 options");
  return spec;
}

nlohmann::json TaskSpec::to_json() const {
  nlohmann::json j = {{"dataset_id", dataset_id},
                      {"kind", kind == Kind::classification ? "classification" : "regression"},
                      {"target_column", target_column},
                      {"instruction_template", instruction_template}};
  if (kind == Kind::classification) j["options"] = options;
  return j;
}

std::vector<TaskSpec> load_task_manifest(const nlohmann::json& j) {
  std::vector<TaskSpec> specs;
  const auto& list = j.is_object() && j.contains("tasks") ? j.at("tasks") : j;
  if (!list.is_array()) throw ConfigError("task manifest must be an array of task specs");
  for (const auto& item : list) specs.push_back(TaskSpec::from_json(item));
  std::set<std::string> ids;
  for (const auto& s : specs)
    if (!ids.insert(s.dataset_id).second) throw ConfigError("duplicate dataset_id '" + s.dataset_id + "'");
  return specs;
}

void SplitPlan::validate() const {
  std::set<std::size_t> seen;
  for (const auto* list : {&train, &val, &test})
    for (auto i : *list)
      if (!seen.insert(i).second) throw ConfigError("split lists overlap at row " + std::to_string(i));
  if (shots && *shots > train.size()) throw ConfigError("shots exceed the training split");
}

SplitPlan make_split(std::size_t n_rows, double test_fraction, double val_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0) || !(val_fraction >= 0.0 && val_fraction < 1.0))
    throw ConfigError("split fractions must lie in [0, 1)");
  std::vector<std::size_t> order(n_rows);
  for (std::size_t i = 0; i < n_rows; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n_rows)));
  const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n_rows - n_test)));
  SplitPlan plan;
  plan.seed = seed;
  plan.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  plan.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test),
                  order.begin() + static_cast<std::ptrdiff_t>(n_test + n_val));
  plan.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test + n_val), order.end());
  for (auto* list : {&plan.train, &plan.val, &plan.test}) std::sort(list->begin(), list->end());
  return plan;
}

void SkipReport::merge(const SkipReport& other) {
  considered += other.considered;
  emitted += other.emitted;
  for (const auto& [reason, n] : other.skipped) skipped[reason] += n;
}

std::size_t SkipReport::total_skipped() const {
  std::size_t n = 0;
  for (const auto& [_, c] : skipped) n += c;
  return n;
}

nlohmann::json SkipReport::to_json() const {
  return {{"considered", considered}, {"emitted", emitted}, {"skipped", skipped}};
}

std::optional<std::string> target_text(const Table& table, std::size_t row, const TaskSpec& spec) {
  const auto col = table.column_index(spec.target_column);
  if (!col) throw ConfigError("target column '" + spec.target_column + "' not found");
  const Cell& cell = table.cell(row, *col);
  if (cell.is_missing()) return std::nullopt;
  return cell.render();
}

std::optional<PromptExample> build_supervised_example(const Table& table, std::size_t row, const TaskSpec& spec,
                                                      SkipReport* report) {
  SkipReport local;
  SkipReport& rep = report ? *report : local;
  ++rep.considered;
  const auto col = table.column_index(spec.target_column);
  if (!col) throw ConfigError("target column '" + spec.target_column + "' not found");
  const auto label = target_text(table, row, spec);
  if (!label) {
    rep.skip("missing target");
    return std::nullopt;
  }
  PromptExample ex;
  ex.instruction = spec.instruction();
  ex.table_markdown = to_markdown(single_row_table(table, row, *col));
  if (spec.is_classification()) {
    const auto idx = spec.option_index(*label);
    if (!idx) {
      rep.skip("label not in options");
      return std::nullopt;
    }
    ex.answer = spec.options[*idx];
    ex.task_kind = TaskKind::classification;
    ex.meta = {{"dataset_id", spec.dataset_id}, {"row", row}, {"label_index", *idx}};
  } else {
    ex.answer = *label;
    ex.task_kind = TaskKind::regression;
    ex.meta = {{"dataset_id", spec.dataset_id}, {"row", row}, {"target", table.cell(row, *col).number().to_double()}};
  }
  ++rep.emitted;
  return ex;
}

std::vector<std::size_t> sample_few_shot(const std::vector<std::string>& labels, std::size_t k, std::uint64_t seed) {
  if (k > labels.size())
    throw DomainError("k = " + std::to_string(k) + " exceeds " + std::to_string(labels.size()) + " training rows");
  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  if (k < by_class.size())
    throw DomainError("k = " + std::to_string(k) + " is smaller than the " + std::to_string(by_class.size()) +
                      " classes");
  std::vector<std::string> classes;
  for (const auto& [c, _] : by_class) classes.push_back(c);
  Rng rng(seed);
  std::vector<std::string> remainder_order = classes;
  rng.shuffle(std::span<std::string>(remainder_order));
  const std::size_t base = k / classes.size();
  const std::size_t extra = k % classes.size();
  std::map<std::string, std::size_t> quota;
  for (const auto& c : classes) quota[c] = base;
  for (std::size_t i = 0; i < extra; ++i) ++quota[remainder_order[i]];

  std::vector<std::size_t> out;
  for (const auto& c : classes) {
    const auto& members = by_class[c];
    if (members.size() < quota[c])
      throw DomainError("class '" + c + "' has " + std::to_string(members.size()) + " rows, balanced draw needs " +
                        std::to_string(quota[c]));
    for (auto j : rng.sample_without_replacement(members.size(), quota[c])) out.push_back(members[j]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::size_t> sample_few_shot(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k > n) throw DomainError("k = " + std::to_string(k) + " exceeds " + std::to_string(n) + " training rows");
  Rng rng(seed);
  auto out = rng.sample_without_replacement(n, k);
  std::sort(out.begin(), out.end());
  return out;
}

std::string augment_cot(std::string_view instruction) {
  if (instruction.find(kChainOfThoughtSuffix) != std::string_view::npos)
    throw DomainError("instruction already carries the chain-of-thought request");
  if (instruction.empty()) return std::string(kChainOfThoughtSuffix);
  std::string out(instruction);
  out += " ";
  out += kChainOfThoughtSuffix;
  return out;
}

std::optional<MaskedExample> build_predict_as_impute(const Table& table, std::size_t row, const TaskSpec& spec,
                                                     SkipReport* report) {
  if (!spec.is_classification()) throw DomainError("predict-as-impute needs a classification task");
  SkipReport local;
  SkipReport& rep = report ? *report : local;
  ++rep.considered;
  const auto col = table.column_index(spec.target_column);
  if (!col) throw ConfigError("target column '" + spec.target_column + "' not found");
  const auto label = target_text(table, row, spec);
  if (!label) {
    rep.skip("missing target");
    return std::nullopt;
  }
  const auto idx = spec.option_index(*label);
  if (!idx) {
    rep.skip("label not in options");
    return std::nullopt;
  }
  auto raw = render_raw(single_row_table(table, row, std::nullopt));
  raw[1][*col] = sentinel_token(0);
  MaskedExample out;
  out.targets[0] = spec.options[*idx];
  out.prompt.instruction = std::string(kImputationInstruction);
  out.prompt.table_markdown = render_markdown_grid(raw[0], {raw[1]});
  out.prompt.answer = render_sentinel_answer(out.targets);
  out.prompt.task_kind = TaskKind::imputation;
  out.prompt.meta = {{"dataset_id", spec.dataset_id},
                     {"row", row},
                     {"label_index", *idx},
                     {"k", 1},
                     {"sentinel_targets", {{"0", out.targets[0]}}}};
  ++rep.emitted;
  return out;
}

}  // namespace tabforge
