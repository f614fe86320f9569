#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tabforge/masker.hpp"
#include "tabforge/table_model.hpp"
#include "tabforge/textgen.hpp"

namespace tabforge {

struct TaskSpec {
  enum class Kind { classification, regression };

  std::string dataset_id;
  Kind kind = Kind::classification;
  std::vector<std::string> options;  // classification only, in label order
  std::string target_column;
  std::string instruction_template;  // {target} and {options} are interpolated

  bool is_classification() const noexcept { return kind == Kind::classification; }

  // Throws ConfigError unless this spec is usable on the table.
  void validate(const Table& table) const;
  // The interpolated instruction.
  std::string instruction() const;
  // Index into options of a label text, comparing numerically when both parse.
  std::optional<std::size_t> option_index(std::string_view label) const;

  static TaskSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

std::vector<TaskSpec> load_task_manifest(const nlohmann::json& j);

struct SplitPlan {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  std::optional<std::size_t> shots;
  std::uint64_t seed = 0;

  void validate() const;
};

// Seeded shuffle, then test_fraction of the rows go to test and
// val_fraction of the remainder to validation. Each list is sorted.
SplitPlan make_split(std::size_t n_rows, double test_fraction, double val_fraction, std::uint64_t seed);

// Merge-safe tally of skipped rows.
struct SkipReport {
  std::size_t considered = 0;
  std::size_t emitted = 0;
  std::map<std::string, std::size_t> skipped;  // reason -> count

  void skip(const std::string& reason) { ++skipped[reason]; }
  void merge(const SkipReport& other);
  std::size_t total_skipped() const;
  nlohmann::json to_json() const;
};

// Single-row example with the whole target column removed from the table.
// Rows whose target is Missing (or not a listed option) are skipped and
// tallied in `report`.
std::optional<PromptExample> build_supervised_example(const Table& table, std::size_t row, const TaskSpec& spec,
                                                      SkipReport* report = nullptr);

// Label text of a row's target cell, canonical; nullopt when Missing.
std::optional<std::string> target_text(const Table& table, std::size_t row, const TaskSpec& spec);

// Class-balanced draw of k indices: per-class counts differ by at most one,
// remainder classes picked by a seeded shuffle. Returned sorted.
std::vector<std::size_t> sample_few_shot(const std::vector<std::string>& labels, std::size_t k, std::uint64_t seed);
// Unbalanced fallback for regression tasks.
std::vector<std::size_t> sample_few_shot(std::size_t n, std::size_t k, std::uint64_t seed);

// Appends the chain-of-thought request. Applying it twice is an error.
std::string augment_cot(std::string_view instruction);

// Keeps the target column and hides its cell behind <missing_value_0>.
std::optional<MaskedExample> build_predict_as_impute(const Table& table, std::size_t row, const TaskSpec& spec,
                                                     SkipReport* report = nullptr);

// Few-shot shot grid swept by the harness.
inline const std::vector<std::size_t> kDefaultShotGrid = {4, 8, 16, 32, 64};

}  // namespace tabforge
