#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace tabforge::metrics {

// Area under the ROC curve as the Mann-Whitney statistic: the share of
// (positive, negative) pairs where the positive scores higher, ties 1/2.
// Computed from average ranks in O(n log n). Throws unless both classes
// are present.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

// Mean one-vs-rest AUC over the classes present in `labels`;
// probabilities[i][c] is the score of row i for class c.
double roc_auc_one_vs_rest(const std::vector<std::vector<double>>& probabilities, std::span<const int> labels);

// 1 - SS_res / SS_tot. Requires >= 2 values and a non-constant y.
double r_squared(std::span<const double> y, std::span<const double> y_hat);

double accuracy(std::span<const int> predicted, std::span<const int> labels);

// Lowercased whitespace tokens.
std::vector<std::string> rouge_tokens(std::string_view text);

// Sentence-level ROUGE-L F1 (beta = 1) over lowercased whitespace tokens.
// Both empty -> 1; exactly one empty -> 0.
double rouge_l(std::string_view prediction, std::string_view reference);

// Length of the longest common subsequence (two-row dynamic program).
std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b);

// Gini coefficient of the class-proportion vector:
// sum_ij |p_i - p_j| / (2 n^2 mean(p)). When `classes` is given, classes
// absent from `labels` enter with proportion 0.
double gini_index(const std::vector<std::string>& labels,
                  const std::optional<std::vector<std::string>>& classes = std::nullopt);

struct MetricRecord {
  std::string task_id;
  std::string metric_name;
  double value = 0.0;
  std::map<std::string, std::string> strata;
};

class MetricReport {
 public:
  MetricReport() = default;
  explicit MetricReport(std::string title) : title_(std::move(title)) {}

  void add(MetricRecord record);
  void add(std::string task_id, std::string metric_name, double value, std::map<std::string, std::string> strata = {});
  void add_note(std::string note) { notes_.push_back(std::move(note)); }
  // Concatenation; aggregation is associative.
  void merge(const MetricReport& other);

  const std::vector<MetricRecord>& records() const noexcept { return records_; }
  const std::vector<std::string>& notes() const noexcept { return notes_; }
  const std::string& title() const noexcept { return title_; }

  // Records matching the metric name and every given stratum value.
  std::vector<MetricRecord> select(std::string_view metric_name,
                                   const std::map<std::string, std::string>& strata = {}) const;

  nlohmann::json to_json() const;
  std::string to_text() const;
  // One row per record; strata keys become columns.
  std::string to_csv() const;

 private:
  std::string title_;
  std::vector<std::string> notes_;
  std::vector<MetricRecord> records_;
};

struct DatasetScore {
  std::string task_id;
  double gini = 0.0;
  double value = 0.0;
};

// Equal-width buckets over the observed gini range, mean score per bucket.
// Datasets at the upper edge land in the last bucket; a zero-width range
// puts everything in bucket 0. Empty buckets are reported with count 0.
MetricReport stratify_by_gini(const std::vector<DatasetScore>& datasets, std::string metric_name,
                              std::size_t n_buckets = 3);

}  // namespace tabforge::metrics
