#include "tabforge/run_config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>

#include "tabforge/error.hpp"
#include "tabforge/random.hpp"

namespace tabforge {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Reads keys from one JSON object and rejects whatever was not read.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config section '" + name_ + "' must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + name_ + "." + key + "': " + e.what());
    }
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + name_ + "." + key + "'");
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

fs::path resolve(const fs::path& base, const fs::path& p) { return p.is_absolute() ? p : base / p; }

lm::TrainConfig train_from(const json* j, const lm::TrainConfig& fallback) {
  return j ? lm::TrainConfig::from_json(*j) : fallback;
}

}  // namespace

std::string hex_hash(const std::string& text) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(text)));
  return buf;
}

RunConfig RunConfig::from_json(const json& j, const fs::path& base_dir) {
  RunConfig c;
  Section top(j, "config");
  top.read("seed", c.seed);
  std::string out_dir = c.output_dir.string();
  top.read("output_dir", out_dir);
  c.output_dir = resolve(base_dir, out_dir);

  if (const json* s = top.sub("corpus")) {
    Section sec(*s, "corpus");
    std::vector<std::string> inputs;
    sec.read("inputs", inputs);
    for (const auto& p : inputs) c.corpus.inputs.push_back(resolve(base_dir, p));
    sec.read("domains", c.corpus.domains);
    sec.read("numeric_threshold", c.corpus.numeric_threshold);
    sec.finish();
  }
  if (const json* s = top.sub("mtp")) {
    Section sec(*s, "mtp");
    sec.read("ratio", c.mtp.mask.ratio);
    sec.read("dynamic", c.mtp.mask.dynamic);
    sec.read("max_sentinels", c.mtp.mask.max_sentinels);
    sec.read("include_headers", c.mtp.mask.include_headers);
    sec.read("epochs", c.mtp.epochs);
    sec.read("max_rows", c.mtp.max_rows);
    sec.finish();
  }
  if (const json* s = top.sub("tasks")) {
    Section sec(*s, "tasks");
    std::string manifest;
    sec.read("manifest", manifest);
    if (!manifest.empty()) c.tasks.manifest = resolve(base_dir, manifest);
    sec.read("test_fraction", c.tasks.test_fraction);
    sec.read("val_fraction", c.tasks.val_fraction);
    sec.read("shots", c.tasks.shots);
    sec.finish();
  }
  if (const json* s = top.sub("impute")) {
    Section sec(*s, "impute");
    sec.read("missing_counts", c.impute.missing_counts);
    sec.read("examples_per_count", c.impute.examples_per_count);
    sec.read("max_rows", c.impute.max_rows);
    sec.finish();
  }
  if (const json* s = top.sub("icl")) {
    Section sec(*s, "icl");
    sec.read("k", c.icl.plan.k);
    sec.read("token_budget", c.icl.plan.token_budget);
    sec.read("balance", c.icl.plan.balance);
    sec.read("k_grid", c.icl.k_grid);
    sec.read("max_queries", c.icl.max_queries);
    sec.read("embed_dim", c.icl.embed_dim);
    sec.finish();
  }
  top.read("tokenizer_merges", c.tokenizer_merges);
  if (const json* s = top.sub("model")) c.model = lm::ModelConfig::from_json(*s);
  if (const json* s = top.sub("stages")) {
    Section sec(*s, "stages");
    sec.read("mtp", c.stages.mtp);
    sec.read("multitask", c.stages.multitask);
    c.stages.mtp_train = train_from(sec.sub("mtp_train"), c.stages.mtp_train);
    c.stages.multitask_train = train_from(sec.sub("multitask_train"), c.stages.multitask_train);
    sec.finish();
  }
  if (const json* s = top.sub("finetune")) {
    Section sec(*s, "finetune");
    c.finetune.train = train_from(sec.sub("train"), c.finetune.train);
    sec.read("imputation", c.finetune.imputation);
    c.finetune.imputation_train = train_from(sec.sub("imputation_train"), c.finetune.imputation_train);
    sec.finish();
  }
  if (const json* s = top.sub("eval")) {
    Section sec(*s, "eval");
    sec.read("protocols", c.eval.protocols);
    sec.read("max_new_tokens", c.eval.max_new_tokens);
    sec.read("max_examples", c.eval.max_examples);
    sec.read("cot", c.eval.cot);
    sec.read("allow_hash_mismatch", c.eval.allow_hash_mismatch);
    sec.finish();
  }
  top.finish();

  c.mtp.mask.validate();
  if (c.mtp.epochs == 0) throw ConfigError("mtp.epochs must be >= 1");
  if (c.mtp.max_rows == 0 || c.impute.max_rows == 0) throw ConfigError("max_rows must be >= 1");
  for (std::size_t m : c.impute.missing_counts)
    if (m < 1 || m > 4) throw ConfigError("impute.missing_counts must lie in 1..4");
  static const std::set<std::string> known = {"cls",    "reg", "impute",            "zeroshot",
                                              "fewshot", "icl", "predict-as-impute", "cot"};
  for (const auto& p : c.eval.protocols)
    if (!known.count(p)) throw ConfigError("unknown eval protocol '" + p + "'");
  c.validate_model();
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  auto c = from_json(j, fs::absolute(path).parent_path());
  c.finalize();
  return c;
}

void RunConfig::validate_model() const {
  auto m = model;
  if (m.vocab_size == 0) m.vocab_size = 1;  // filled in from the tokenizer
  m.validate();
}

void RunConfig::finalize() {
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) output_dir = env;
  for (const auto& p : corpus.inputs)
    if (!fs::exists(p)) throw ConfigError("corpus input does not exist: " + p.string());
  if (tasks.manifest && !fs::exists(*tasks.manifest))
    throw ConfigError("task manifest does not exist: " + tasks.manifest->string());
}

json RunConfig::to_json() const {
  std::vector<std::string> inputs;
  for (const auto& p : corpus.inputs) inputs.push_back(p.string());
  return {{"seed", seed},
          {"output_dir", output_dir.string()},
          {"corpus", {{"inputs", inputs}, {"domains", corpus.domains}, {"numeric_threshold", corpus.numeric_threshold}}},
          {"mtp",
           {{"ratio", mtp.mask.ratio},
            {"dynamic", mtp.mask.dynamic},
            {"max_sentinels", mtp.mask.max_sentinels},
            {"include_headers", mtp.mask.include_headers},
            {"epochs", mtp.epochs},
            {"max_rows", mtp.max_rows}}},
          {"tasks",
           {{"manifest", tasks.manifest ? tasks.manifest->string() : std::string()},
            {"test_fraction", tasks.test_fraction},
            {"val_fraction", tasks.val_fraction},
            {"shots", tasks.shots}}},
          {"impute",
           {{"missing_counts", impute.missing_counts},
            {"examples_per_count", impute.examples_per_count},
            {"max_rows", impute.max_rows}}},
          {"icl",
           {{"k", icl.plan.k},
            {"token_budget", icl.plan.token_budget},
            {"balance", icl.plan.balance},
            {"k_grid", icl.k_grid},
            {"max_queries", icl.max_queries},
            {"embed_dim", icl.embed_dim}}},
          {"tokenizer_merges", tokenizer_merges},
          {"model", model.to_json()},
          {"stages",
           {{"mtp", stages.mtp},
            {"multitask", stages.multitask},
            {"mtp_train", stages.mtp_train.to_json()},
            {"multitask_train", stages.multitask_train.to_json()}}},
          {"finetune",
           {{"train", finetune.train.to_json()},
            {"imputation", finetune.imputation},
            {"imputation_train", finetune.imputation_train.to_json()}}},
          {"eval",
           {{"protocols", eval.protocols},
            {"max_new_tokens", eval.max_new_tokens},
            {"max_examples", eval.max_examples},
            {"cot", eval.cot},
            {"allow_hash_mismatch", eval.allow_hash_mismatch}}}};
}

std::string RunConfig::dataset_hash() const {
  json j = to_json();
  json keep = {{"seed", j["seed"]}, {"corpus", j["corpus"]}, {"mtp", j["mtp"]},
               {"tasks", j["tasks"]}, {"impute", j["impute"]}, {"icl", j["icl"]}, {"format", 1}};
  keep["corpus"].erase("inputs");
  std::string manifest_text;
  if (tasks.manifest) {
    std::ifstream in(*tasks.manifest);
    manifest_text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  keep["tasks"]["manifest"] = hex_hash(manifest_text);
  return hex_hash(keep.dump());
}

std::string RunConfig::model_hash() const {
  json j = to_json();
  json keep = {{"dataset", dataset_hash()}, {"tokenizer_merges", j["tokenizer_merges"]}, {"model", j["model"]},
               {"stages", j["stages"]}};
  return hex_hash(keep.dump());
}

}  // namespace tabforge
