#include "tabforge/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "tabforge/error.hpp"

namespace tabforge::metrics {

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DomainError("roc_auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw DomainError("roc_auc: labels must be 0 or 1");
    n_pos += static_cast<std::size_t>(l);
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw DomainError("roc_auc: both classes must be present");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of positive ranks, tied groups sharing their average rank.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t)
      if (labels[order[t]] == 1) rank_sum += avg_rank;
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos);
  const double u = rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

double roc_auc_one_vs_rest(const std::vector<std::vector<double>>& probabilities, std::span<const int> labels) {
  if (probabilities.size() != labels.size()) throw DomainError("roc_auc_one_vs_rest: size mismatch");
  std::set<int> present(labels.begin(), labels.end());
  if (present.size() < 2) throw DomainError("roc_auc_one_vs_rest: both classes must be present");
  double total = 0.0;
  for (int c : present) {
    std::vector<double> s(labels.size());
    std::vector<int> l(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      s[i] = probabilities[i].at(static_cast<std::size_t>(c));
      l[i] = labels[i] == c ? 1 : 0;
    }
    total += roc_auc(s, l);
  }
  return total / static_cast<double>(present.size());
}

double r_squared(std::span<const double> y, std::span<const double> y_hat) {
  if (y.size() != y_hat.size()) throw DomainError("r_squared: size mismatch");
  if (y.size() < 2) throw DomainError("r_squared: needs at least two values");
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double ss_res = 0.0;
  double ss_tot = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ss_res += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
    ss_tot += (y[i] - mean) * (y[i] - mean);
  }
  if (ss_tot == 0.0) throw DomainError("r_squared: constant target");
  return 1.0 - ss_res / ss_tot;
}

double accuracy(std::span<const int> predicted, std::span<const int> labels) {
  if (predicted.size() != labels.size() || labels.empty()) throw DomainError("accuracy: bad input sizes");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predicted[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

std::vector<std::string> rouge_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0);
  std::vector<std::size_t> cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(std::string_view prediction, std::string_view reference) {
  const auto p = rouge_tokens(prediction);
  const auto r = rouge_tokens(reference);
  if (p.empty() && r.empty()) return 1.0;
  if (p.empty() || r.empty()) return 0.0;
  const auto lcs = static_cast<double>(lcs_length(p, r));
  if (lcs == 0.0) return 0.0;
  const double precision = lcs / static_cast<double>(p.size());
  const double recall = lcs / static_cast<double>(r.size());
  return 2.0 * precision * recall / (precision + recall);
}

double gini_index(const std::vector<std::string>& labels, const std::optional<std::vector<std::string>>& classes) {
  if (labels.empty()) throw DomainError("gini_index: no labels");
  std::map<std::string, double> counts;
  if (classes)
    for (const auto& c : *classes) counts[c] = 0.0;
  for (const auto& l : labels) counts[l] += 1.0;
  const double n = static_cast<double>(counts.size());
  const double total = static_cast<double>(labels.size());
  std::vector<double> p;
  for (const auto& [_, c] : counts) p.push_back(c / total);
  double diff = 0.0;
  for (double a : p)
    for (double b : p) diff += std::abs(a - b);
  const double mean = 1.0 / n;
  return diff / (2.0 * n * n * mean);
}

void MetricReport::add(MetricRecord record) { records_.push_back(std::move(record)); }

void MetricReport::add(std::string task_id, std::string metric_name, double value,
                       std::map<std::string, std::string> strata) {
  records_.push_back({std::move(task_id), std::move(metric_name), value, std::move(strata)});
}

void MetricReport::merge(const MetricReport& other) {
  records_.insert(records_.end(), other.records_.begin(), other.records_.end());
  notes_.insert(notes_.end(), other.notes_.begin(), other.notes_.end());
}

std::vector<MetricRecord> MetricReport::select(std::string_view metric_name,
                                               const std::map<std::string, std::string>& strata) const {
  std::vector<MetricRecord> out;
  for (const auto& r : records_) {
    if (r.metric_name != metric_name) continue;
    bool ok = true;
    for (const auto& [k, v] : strata) {
      auto it = r.strata.find(k);
      if (it == r.strata.end() || it->second != v) {
        ok = false;
        break;
      }
    }
    if (ok) out.push_back(r);
  }
  return out;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j;
  j["title"] = title_;
  j["notes"] = notes_;
  auto recs = nlohmann::json::array();
  for (const auto& r : records_)
    recs.push_back({{"task_id", r.task_id}, {"metric", r.metric_name}, {"value", r.value}, {"strata", r.strata}});
  j["records"] = std::move(recs);
  return j;
}

namespace {

std::vector<std::string> strata_keys(const std::vector<MetricRecord>& records) {
  std::set<std::string> keys;
  for (const auto& r : records)
    for (const auto& [k, _] : r.strata) keys.insert(k);
  return {keys.begin(), keys.end()};
}

std::string format_value(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << v;
  return os.str();
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  return out + "\"";
}

}  // namespace

std::string MetricReport::to_text() const {
  const auto keys = strata_keys(records_);
  std::vector<std::string> header = {"task", "metric", "value"};
  header.insert(header.end(), keys.begin(), keys.end());
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : records_) {
    std::vector<std::string> row = {r.task_id, r.metric_name, format_value(r.value)};
    for (const auto& k : keys) {
      auto it = r.strata.find(k);
      row.push_back(it == r.strata.end() ? "-" : it->second);
    }
    rows.push_back(std::move(row));
  }
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) {
    width[c] = header[c].size();
    for (const auto& row : rows) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream os;
  if (!title_.empty()) os << "# " << title_ << "\n";
  for (const auto& n : notes_) os << "# " << n << "\n";
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c > 0) os << "  ";
      os << std::left << std::setw(static_cast<int>(width[c])) << row[c];
    }
    os << "\n";
  };
  emit(header);
  for (const auto& row : rows) emit(row);
  return os.str();
}

std::string MetricReport::to_csv() const {
  const auto keys = strata_keys(records_);
  std::ostringstream os;
  os << "task,metric,value";
  for (const auto& k : keys) os << "," << csv_field(k);
  os << "\n";
  for (const auto& r : records_) {
    os << csv_field(r.task_id) << "," << csv_field(r.metric_name) << "," << std::setprecision(17) << r.value;
    for (const auto& k : keys) {
      auto it = r.strata.find(k);
      os << "," << (it == r.strata.end() ? std::string() : csv_field(it->second));
    }
    os << "\n";
  }
  return os.str();
}

MetricReport stratify_by_gini(const std::vector<DatasetScore>& datasets, std::string metric_name,
                              std::size_t n_buckets) {
  if (n_buckets == 0) throw DomainError("stratify_by_gini: n_buckets must be >= 1");
  MetricReport report("gini-stratified " + metric_name);
  report.add_note("equal-width gini buckets over the observed range");
  if (datasets.empty()) return report;
  double lo = datasets.front().gini;
  double hi = lo;
  for (const auto& d : datasets) {
    lo = std::min(lo, d.gini);
    hi = std::max(hi, d.gini);
  }
  const double width = (hi - lo) / static_cast<double>(n_buckets);
  std::vector<double> sum(n_buckets, 0.0);
  std::vector<std::size_t> count(n_buckets, 0);
  for (const auto& d : datasets) {
    std::size_t b = 0;
    if (width > 0.0) b = std::min(n_buckets - 1, static_cast<std::size_t>((d.gini - lo) / width));
    sum[b] += d.value;
    ++count[b];
  }
  for (std::size_t b = 0; b < n_buckets; ++b) {
    const double lower = lo + width * static_cast<double>(b);
    const double upper = b + 1 == n_buckets ? hi : lo + width * static_cast<double>(b + 1);
    std::ostringstream range;
    range << std::setprecision(4) << "[" << lower << ", " << upper << (b + 1 == n_buckets ? "]" : ")");
    report.add("gini_bucket_" + std::to_string(b), "mean_" + metric_name,
               count[b] ? sum[b] / static_cast<double>(count[b]) : 0.0,
               {{"gini_bucket", std::to_string(b)}, {"range", range.str()}, {"count", std::to_string(count[b])}});
  }
  return report;
}

}  // namespace tabforge::metrics
