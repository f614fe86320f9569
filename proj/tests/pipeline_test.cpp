#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tabforge/error.hpp"
#include "tabforge/pipeline.hpp"
#include "tabforge/random.hpp"
#include "tabforge/run_config.hpp"

using namespace tabforge;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

// Scratch project: three good CSVs, one malformed, one empty, a manifest and
// a tiny model config.
struct Workspace {
  fs::path dir;

  explicit Workspace(const std::string& name) : dir(fs::temp_directory_path() / ("tabforge_pipeline_" + name)) {
    fs::remove_all(dir);
    Rng rng(8);
    std::string loans = "income,age,job,approved\n";
    for (int i = 0; i < 40; ++i) {
      const int income = 20 + static_cast<int>(rng.below(80));
      loans += std::to_string(income) + "," + std::to_string(20 + rng.below(40)) + "," +
               (i % 3 ? "clerk" : "chef") + "," + (income > 60 ? "yes" : "no") + "\n";
    }
    std::string houses = "rooms,city,price\n";
    for (int i = 0; i < 30; ++i) {
      const int rooms = 1 + static_cast<int>(rng.below(6));
      houses += std::to_string(rooms) + "," + (i % 2 ? "lima" : "oslo") + "," + std::to_string(rooms * 50 + i) + ".5\n";
    }
    std::string pets = "name,kind\n";
    for (int i = 0; i < 10; ++i) pets += "p" + std::to_string(i) + "," + (i % 2 ? "cat" : "dog") + "\n";
    spit(dir / "data" / "loans.csv", loans);
    spit(dir / "data" / "houses.csv", houses);
    spit(dir / "data" / "pets.csv", pets);
    spit(dir / "data" / "broken.csv", "a,b\n\"1,2\n");
    spit(dir / "data" / "empty.csv", "");
    spit(dir / "tasks.json", json{{"tasks",
                                   {{{"dataset_id", "loans"},
                                     {"kind", "classification"},
                                     {"options", {"no", "yes"}},
                                     {"target_column", "approved"}},
                                    {{"dataset_id", "houses"}, {"kind", "regression"}, {"target_column", "price"}}}}}
                                 .dump(2));
    spit(dir / "config.json", config().dump(2));
  }

  ~Workspace() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }

  static json config() {
    json train = {{"learning_rate", 0.003}, {"max_steps", 3}, {"seed", 1}};
    return {{"seed", 5},
            {"output_dir", "out"},
            {"corpus", {{"inputs", {"data"}}, {"domains", {{"loans", "finance"}, {"houses", "real_estate"}, {"pets", "finance"}}}}},
            {"mtp", {{"epochs", 2}, {"max_rows", 3}}},
            {"tasks", {{"manifest", "tasks.json"}, {"test_fraction", 0.25}, {"shots", {4, 8}}}},
            {"impute", {{"examples_per_count", 2}, {"max_rows", 3}}},
            {"icl", {{"k", 2}, {"token_budget", 300}, {"k_grid", {0, 2}}, {"max_queries", 4}}},
            {"tokenizer_merges", 60},
            {"model", {{"d_model", 16}, {"n_layers", 1}, {"n_heads", 2}, {"d_head", 8}, {"context_len", 384}}},
            {"stages", {{"mtp_train", train}, {"multitask_train", train}}},
            {"finetune", {{"train", train}}},
            {"eval", {{"max_examples", 3}, {"max_new_tokens", 8}}}};
  }

  RunConfig load() const { return RunConfig::load(dir / "config.json"); }
  fs::path out() const { return dir / "out"; }
};

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("ingest lists good tables and error entries, idempotently") {
    Workspace ws("ingest");
    const auto cfg = ws.load();
    const auto manifest = pipeline::cmd_ingest(cfg);
    REQUIRE(manifest.at("tables").size() == 3);
    CHECK(manifest.at("errors").size() == 2);
    bool broken_listed = false;
    for (const auto& e : manifest.at("errors"))
      broken_listed |= e.at("file").get<std::string>().find("broken.csv") != std::string::npos;
    CHECK(broken_listed);
    for (const auto& t : manifest.at("tables")) {
      CHECK(t.contains("rows"));
      CHECK(t.contains("columns"));
      CHECK(t.contains("domain_tag"));
    }
    const auto before = slurp(ws.out() / "corpus" / "manifest.json");
    const auto loans = slurp(ws.out() / "corpus" / "loans.json");
    pipeline::cmd_ingest(cfg);
    CHECK(slurp(ws.out() / "corpus" / "manifest.json") == before);
    CHECK(slurp(ws.out() / "corpus" / "loans.json") == loans);
  }

  TEST_CASE("stats fractions and domain order") {
    Workspace ws("stats");
    auto cfg = ws.load();
    pipeline::cmd_ingest(cfg);
    const auto stats = pipeline::cmd_stats(cfg);
    // loans 2+2, houses 2+1, pets 0+2 -> 4 numeric of 9.
    CHECK(stats.at("numeric_columns") == 4);
    CHECK(stats.at("textual_columns") == 5);
    CHECK(stats.at("domains")[0].at("domain") == "finance");
    CHECK(stats.at("domains")[0].at("tables") == 2);
    CHECK(slurp(ws.out() / "stats.txt").find("~60% numeric / ~40% textual") != std::string::npos);

    Workspace one("stats_one");
    auto j = Workspace::config();
    j["corpus"]["inputs"] = {"data/loans.csv"};
    auto c1 = RunConfig::from_json(j, one.dir);
    c1.finalize();
    pipeline::cmd_ingest(c1);
    const auto s1 = pipeline::cmd_stats(c1);
    CHECK(s1.at("numeric_fraction").get<double>() == doctest::Approx(0.5));
    CHECK(s1.at("textual_fraction").get<double>() == doctest::Approx(0.5));
  }

  TEST_CASE("build outputs, counts and determinism") {
    Workspace ws("build");
    const auto cfg = ws.load();
    pipeline::cmd_ingest(cfg);
    const auto built = pipeline::cmd_build(cfg, "all");
    CHECK(built.at("mtp").at("records") == 3 * 2);
    const fs::path d = ws.out() / "datasets";
    for (const char* f : {"mtp.jsonl", "multitask.jsonl", "impute.jsonl", "tasks/loans.train.jsonl",
                          "tasks/loans.test.jsonl", "tasks/houses.train.jsonl", "fewshot/loans.k4.jsonl",
                          "fewshot/loans.k8.jsonl", "fewshot/houses.k4.jsonl", "fewshot/houses.k8.jsonl",
                          "icl/loans.jsonl"})
      CHECK_MESSAGE(fs::exists(d / f), f);
    for (const auto& s : {"mtp", "tasks", "fewshot", "icl", "impute"})
      CHECK(json::parse(slurp(d / (std::string(s) + ".summary.json"))).at("config_hash") == cfg.dataset_hash());
    CHECK(built.at("impute").at("records") == 3 * 4 * 2);

    const auto mtp = slurp(d / "mtp.jsonl");
    const auto icl = slurp(d / "icl" / "loans.jsonl");
    pipeline::cmd_build(cfg, "all");
    CHECK(slurp(d / "mtp.jsonl") == mtp);
    CHECK(slurp(d / "icl" / "loans.jsonl") == icl);
    CHECK_THROWS_AS(pipeline::cmd_build(cfg, "nonsense"), ConfigError);
  }

  TEST_CASE("config validation and overrides") {
    Workspace ws("config");
    auto j = Workspace::config();
    j["mtp"]["colour"] = 1;
    CHECK_THROWS_AS(RunConfig::from_json(j, ws.dir), ConfigError);
    j = Workspace::config();
    j["bogus"] = true;
    CHECK_THROWS_AS(RunConfig::from_json(j, ws.dir), ConfigError);
    j = Workspace::config();
    j["corpus"]["inputs"] = {"missing_dir"};
    auto c = RunConfig::from_json(j, ws.dir);
    CHECK_THROWS_AS(c.finalize(), ConfigError);
    j = Workspace::config();
    j["impute"]["missing_counts"] = {1, 5};
    CHECK_THROWS_AS(RunConfig::from_json(j, ws.dir), ConfigError);

    const auto base = ws.load();
    CHECK(base.output_dir == ws.dir / "out");
    const fs::path alt = ws.dir / "elsewhere";
    ::setenv(kOutputDirEnv, alt.c_str(), 1);
    const auto env = ws.load();
    ::unsetenv(kOutputDirEnv);
    CHECK(env.output_dir == alt);
    CHECK(env.dataset_hash() == base.dataset_hash());

    auto changed = base;
    changed.seed = 6;
    CHECK(changed.dataset_hash() != base.dataset_hash());
    auto model_only = base;
    model_only.model.d_model = 32;
    CHECK(model_only.dataset_hash() == base.dataset_hash());
    CHECK(model_only.model_hash() != base.model_hash());
    CHECK(RunConfig::from_json(base.to_json(), ws.dir).dataset_hash() == base.dataset_hash());
  }

  TEST_CASE("end to end on a tiny model with the lineage guard") {
    Workspace ws("e2e");
    const auto cfg = ws.load();
    pipeline::cmd_ingest(cfg);
    pipeline::cmd_build(cfg, "all");
    const auto log = pipeline::cmd_train(cfg);
    CHECK(log.at("stages").at("mtp").at("steps") == 3);
    CHECK(fs::exists(pipeline::Layout(cfg).checkpoint("base")));
    pipeline::cmd_finetune(cfg);
    CHECK(fs::exists(pipeline::Layout(cfg).finetuned("loans")));

    const auto impute = pipeline::cmd_eval(cfg, "impute");
    for (int m = 1; m <= 4; ++m)
      CHECK_MESSAGE(!impute.select("rouge_l", {{"m", std::to_string(m)}}).empty(), m);
    CHECK(fs::exists(pipeline::Layout(cfg).report("impute", "json")));

    const auto icl = pipeline::cmd_eval(cfg, "icl");
    CHECK(!icl.select("accuracy", {{"k", "0"}}).empty());
    CHECK(!pipeline::cmd_eval(cfg, "cls").select("accuracy").empty());

    auto other = cfg;
    other.seed = 99;
    CHECK_THROWS_AS(pipeline::cmd_eval(other, "cls"), pipeline::LineageError);
    other.eval.allow_hash_mismatch = true;
    CHECK_NOTHROW(pipeline::cmd_eval(other, "cls"));

    auto ablated = cfg;
    ablated.stages.mtp = false;
    CHECK(pipeline::variant_name(ablated) == "no-mtp");
    CHECK_THROWS(pipeline::cmd_eval(ablated, "cls"));
  }
}
