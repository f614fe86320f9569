#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tabforge/error.hpp"
#include "tabforge/lm/tokenizer.hpp"
#include "tabforge/metrics.hpp"
#include "tabforge/run_config.hpp"
#include "tabforge/table_model.hpp"
#include "tabforge/taskgen.hpp"

namespace tabforge::pipeline {

// Raised when an artifact was produced under a different config hash.
class LineageError : public Error {
 public:
  using Error::Error;
};

// Output layout under RunConfig::output_dir.
struct Layout {
  explicit Layout(const RunConfig& cfg);

  std::filesystem::path root;
  std::filesystem::path corpus;    // <table>.json + manifest.json
  std::filesystem::path datasets;  // JSONL files + *.summary.json sidecars
  std::filesystem::path tokenizer;
  std::filesystem::path run;       // runs/<variant>: checkpoints, loss curves, reports

  std::filesystem::path checkpoint(const std::string& stage) const;
  std::filesystem::path finetuned(const std::string& task) const;
  std::filesystem::path report(const std::string& protocol, const std::string& ext) const;
};

// "full", "no-mtp", "no-multitask" or "none" from the stage switches.
std::string variant_name(const RunConfig& cfg);

nlohmann::json cmd_ingest(const RunConfig& cfg);
nlohmann::json cmd_stats(const RunConfig& cfg);
// which: mtp, tasks, fewshot, icl, impute or all.
nlohmann::json cmd_build(const RunConfig& cfg, const std::string& which);
nlohmann::json cmd_train(const RunConfig& cfg, bool resume = false);
nlohmann::json cmd_finetune(const RunConfig& cfg);
// protocol: cls, reg, impute, zeroshot, fewshot, icl, predict-as-impute, cot.
metrics::MetricReport cmd_eval(const RunConfig& cfg, const std::string& protocol);

std::vector<Table> load_corpus(const RunConfig& cfg);
std::vector<TaskSpec> load_tasks(const RunConfig& cfg);
Table drop_column(const Table& table, const std::string& column);

}  // namespace tabforge::pipeline
