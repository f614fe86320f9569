#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>

#include "tabforge/error.hpp"
#include "tabforge/pipeline.hpp"
#include "tabforge/run_config.hpp"

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> context_k;
  std::optional<std::size_t> token_budget;
  std::vector<std::size_t> shots;
  std::optional<double> rope_base;
  bool no_mtp = false;
  bool no_multitask = false;
  bool cot = false;
  bool allow_hash_mismatch = false;

  void apply(tabforge::RunConfig& cfg) const {
    if (seed) cfg.seed = *seed;
    if (context_k) {
      cfg.icl.plan.k = *context_k;
      cfg.icl.k_grid = *context_k == 0 ? std::vector<std::size_t>{0} : std::vector<std::size_t>{0, *context_k};
    }
    if (token_budget) cfg.icl.plan.token_budget = *token_budget;
    if (!shots.empty()) cfg.tasks.shots = shots;
    if (rope_base) {
      cfg.model.rope_base = *rope_base;
      cfg.validate_model();
    }
    if (no_mtp) cfg.stages.mtp = false;
    if (no_multitask) cfg.stages.multitask = false;
    if (cot) cfg.eval.cot = true;
    if (allow_hash_mismatch) cfg.eval.allow_hash_mismatch = true;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tabforge: table-to-text training and evaluation pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  Overrides ov;
  app.add_option("--config", config_path, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  app.add_option("--seed", ov.seed, "Global seed");
  app.add_option("--context-k", ov.context_k, "In-context demonstrations (icl build/eval)");
  app.add_option("--token-budget", ov.token_budget, "Token budget for assembled icl inputs");
  app.add_option("--shots", ov.shots, "Few-shot grid")->delimiter(',');
  app.add_option("--rope-base", ov.rope_base, "RoPE frequency base");
  app.add_flag("--no-mtp", ov.no_mtp, "Skip the Mask-Then-Predict stage");
  app.add_flag("--no-multitask", ov.no_multitask, "Skip the multi-task stage");
  app.add_flag("--cot", ov.cot, "Append the chain-of-thought request to imputation prompts");
  app.add_flag("--allow-hash-mismatch", ov.allow_hash_mismatch, "Evaluate artifacts from a different config hash");

  auto* ingest = app.add_subcommand("ingest", "Load CSV files into the canonical corpus");
  auto* stats = app.add_subcommand("stats", "Column-kind and domain statistics of the corpus");
  auto* build = app.add_subcommand("build", "Write JSONL datasets");
  std::string which = "all";
  build->add_option("kind", which, "mtp | tasks | fewshot | icl | impute | all")
      ->check(CLI::IsMember({"mtp", "tasks", "fewshot", "icl", "impute", "all"}));
  auto* train = app.add_subcommand("train", "Run the Mask-Then-Predict and multi-task stages");
  bool resume = false;
  train->add_flag("--resume", resume, "Continue from the latest checkpoints");
  auto* finetune = app.add_subcommand("finetune", "Fine-tune task heads (and optionally imputation)");
  auto* eval = app.add_subcommand("eval", "Run an evaluation protocol");
  std::string protocol;
  eval->add_option("protocol", protocol, "cls | reg | impute | zeroshot | fewshot | icl | predict-as-impute | cot")
      ->required()
      ->check(CLI::IsMember({"cls", "reg", "impute", "zeroshot", "fewshot", "icl", "predict-as-impute", "cot"}));

  CLI11_PARSE(app, argc, argv);

  try {
    auto cfg = tabforge::RunConfig::load(config_path);
    ov.apply(cfg);
    namespace p = tabforge::pipeline;
    if (*ingest) {
      const auto manifest = p::cmd_ingest(cfg);
      std::cout << manifest.at("tables").size() << " tables ingested, " << manifest.at("errors").size()
                << " errors\n";
      for (const auto& e : manifest.at("errors"))
        std::cerr << "  " << e.at("file").get<std::string>() << ": " << e.at("error").get<std::string>() << "\n";
    } else if (*stats) {
      p::cmd_stats(cfg);
      std::cout << std::ifstream(cfg.output_dir / "stats.txt").rdbuf();
    } else if (*build) {
      std::cout << p::cmd_build(cfg, which).dump(2) << "\n";
    } else if (*train) {
      const auto log = p::cmd_train(cfg, resume);
      for (const auto& [stage, curve] : log.at("stages").items()) {
        const auto& losses = curve.at("losses");
        std::cout << stage << ": " << curve.at("steps") << " steps";
        if (!losses.empty()) std::cout << ", final loss " << losses.back().get<double>();
        std::cout << "\n";
      }
    } else if (*finetune) {
      std::cout << p::cmd_finetune(cfg).size() << " models fine-tuned\n";
    } else if (*eval) {
      std::cout << p::cmd_eval(cfg, protocol).to_text();
    }
  } catch (const tabforge::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
