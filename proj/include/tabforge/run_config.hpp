#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tabforge/icl.hpp"
#include "tabforge/lm/config.hpp"
#include "tabforge/masker.hpp"

namespace tabforge {

// Environment variable that overrides RunConfig::output_dir.
inline constexpr const char* kOutputDirEnv = "TABFORGE_OUTPUT_DIR";

struct CorpusSettings {
  std::vector<std::filesystem::path> inputs;           // CSV files or directories
  std::map<std::string, std::string> domains;          // table name -> domain tag
  double numeric_threshold = kDefaultNumericThreshold;
};

struct MtpSettings {
  MaskConfig mask;
  std::size_t epochs = 1;   // masked copies per table, re-seeded each pass
  std::size_t max_rows = 8; // row window per example
};

struct TaskSettings {
  std::optional<std::filesystem::path> manifest;
  double test_fraction = 0.2;
  double val_fraction = 0.1;
  std::vector<std::size_t> shots = {4, 8, 16, 32, 64};
};

struct ImputeSettings {
  std::vector<std::size_t> missing_counts = {1, 2, 3, 4};
  std::size_t examples_per_count = 16;  // per table
  std::size_t max_rows = 5;
};

struct IclSettings {
  ContextPlan plan{8, 480, true};
  std::vector<std::size_t> k_grid = {0, 1, 2, 4, 8, 16, 32, 48};
  std::size_t max_queries = 200;
  std::size_t embed_dim = 256;
};

struct StageSettings {
  bool mtp = true;
  bool multitask = true;
  lm::TrainConfig mtp_train;
  lm::TrainConfig multitask_train;
};

struct FinetuneSettings {
  lm::TrainConfig train;
  bool imputation = false;  // also fine-tune the LM on imputation records
  lm::TrainConfig imputation_train;
};

struct EvalSettings {
  std::vector<std::string> protocols = {"cls", "reg", "zeroshot", "impute"};
  std::size_t max_new_tokens = 48;
  std::size_t max_examples = 0;  // per dataset; 0 = all
  bool cot = false;
  bool allow_hash_mismatch = false;
};

// One document drives every subcommand. Relative paths resolve against the
// config file's directory; unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "out";
  CorpusSettings corpus;
  MtpSettings mtp;
  TaskSettings tasks;
  ImputeSettings impute;
  IclSettings icl;
  std::size_t tokenizer_merges = 400;
  lm::ModelConfig model;
  StageSettings stages;
  FinetuneSettings finetune;
  EvalSettings eval;

  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static RunConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  // Hash of every setting that shapes datasets and their serialization.
  std::string dataset_hash() const;
  // dataset_hash plus tokenizer, model and training stages.
  std::string model_hash() const;

  // ModelConfig checks, ignoring a vocab_size left at 0 for the tokenizer.
  void validate_model() const;

  // Applies the environment override and checks referenced paths.
  void finalize();
};

std::string hex_hash(const std::string& text);

}  // namespace tabforge
