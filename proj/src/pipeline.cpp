#include "tabforge/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "tabforge/csv.hpp"
#include "tabforge/error.hpp"
#include "tabforge/icl.hpp"
#include "tabforge/lm/checkpoint.hpp"
#include "tabforge/lm/decode.hpp"
#include "tabforge/lm/head.hpp"
#include "tabforge/lm/trainer.hpp"
#include "tabforge/masker.hpp"
#include "tabforge/random.hpp"
#include "tabforge/textgen.hpp"

namespace tabforge::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;
using Model = lm::Transformer<float>;

namespace {

// Stable stream tags for derive_seed.
enum : std::uint64_t { kSeedMtp = 1, kSeedSplit, kSeedFewShot, kSeedImpute, kSeedIclQueries, kSeedModel, kSeedHead };

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) { return json::parse(read_text(path)); }

std::vector<fs::path> csv_files(const std::vector<fs::path>& inputs) {
  std::vector<fs::path> files;
  for (const auto& p : inputs) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p))
        if (e.is_regular_file() && e.path().extension() == ".csv") found.push_back(e.path());
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.push_back(p);
    }
  }
  return files;
}

// A window of at most max_rows consecutive rows; the start is seeded.
Table row_window(const Table& t, std::size_t max_rows, std::uint64_t seed) {
  if (t.num_rows() <= max_rows) return t;
  Rng rng(seed);
  const std::size_t start = rng.below(t.num_rows() - max_rows + 1);
  std::vector<std::size_t> rows(max_rows);
  for (std::size_t i = 0; i < max_rows; ++i) rows[i] = start + i;
  return t.select_rows(rows);
}

json summary_header(const RunConfig& cfg, const std::string& kind) {
  return {{"kind", kind}, {"config_hash", cfg.dataset_hash()}};
}

void check_hash(const RunConfig& cfg, const std::string& artifact, const std::string& recorded,
                const std::string& expected) {
  if (recorded == expected || cfg.eval.allow_hash_mismatch) return;
  throw LineageError(artifact + " was produced under config hash " + recorded + ", current hash is " + expected +
                     " (set eval.allow_hash_mismatch to override)");
}

void check_dataset_summary(const RunConfig& cfg, const fs::path& summary) {
  if (!fs::exists(summary)) throw Error("missing dataset summary " + summary.string() + "; run build first");
  check_hash(cfg, summary.string(), read_json(summary).at("config_hash").get<std::string>(), cfg.dataset_hash());
}

std::vector<PromptExample> read_records(const fs::path& path) {
  if (!fs::exists(path)) throw Error("missing dataset " + path.string() + "; run build first");
  return read_jsonl(path);
}

std::vector<PromptExample> limit(std::vector<PromptExample> v, std::size_t max_examples) {
  if (max_examples > 0 && v.size() > max_examples) v.resize(max_examples);
  return v;
}

lm::Tokenizer load_tokenizer(const Layout& layout) {
  if (!fs::exists(layout.tokenizer)) throw Error("missing tokenizer " + layout.tokenizer.string() + "; run train first");
  return lm::Tokenizer::load(layout.tokenizer);
}

struct LoadedModel {
  lm::Checkpoint ckpt;
  Model model;
};

LoadedModel load_model(const RunConfig& cfg, const fs::path& path) {
  if (!fs::exists(path)) throw Error("missing checkpoint " + path.string());
  auto ckpt = lm::load_checkpoint(path);
  check_hash(cfg, path.string(), ckpt.meta.value("dataset_hash", std::string()), cfg.dataset_hash());
  auto model = lm::model_from_checkpoint<float>(ckpt);
  return {std::move(ckpt), std::move(model)};
}

std::vector<lm::HeadExample> head_examples(const lm::Tokenizer& tok, const std::vector<PromptExample>& records,
                                           std::size_t context_len) {
  std::vector<lm::HeadExample> out;
  for (const auto& r : records) {
    lm::HeadExample ex;
    ex.ids = lm::encode_prompt(tok, r);
    if (ex.ids.size() > context_len) continue;
    if (r.meta.contains("label_index")) ex.label = r.meta.at("label_index").get<int>();
    if (r.meta.contains("target")) ex.target = r.meta.at("target").get<double>();
    out.push_back(std::move(ex));
  }
  return out;
}

void save_report(const Layout& layout, const std::string& protocol, const metrics::MetricReport& report) {
  write_text(layout.report(protocol, "json"), report.to_json().dump(2) + "\n");
  write_text(layout.report(protocol, "txt"), report.to_text());
  write_text(layout.report(protocol, "csv"), report.to_csv());
}

std::vector<std::string> record_labels(const std::vector<PromptExample>& records) {
  std::vector<std::string> labels;
  for (const auto& r : records) labels.push_back(r.answer);
  return labels;
}

// Train and test records of one task as written by build.
struct TaskData {
  std::vector<PromptExample> train;
  std::vector<PromptExample> test;
};

TaskData read_task(const Layout& layout, const TaskSpec& spec) {
  return {read_records(layout.datasets / "tasks" / (spec.dataset_id + ".train.jsonl")),
          read_records(layout.datasets / "tasks" / (spec.dataset_id + ".test.jsonl"))};
}

// Scores binary tasks by the probability of the second option and larger
// ones by mean one-vs-rest AUC; needs both classes in the labels.
std::optional<double> auc_of(const std::vector<std::vector<double>>& probs, const std::vector<int>& labels,
                             std::size_t n_classes) {
  if (std::set<int>(labels.begin(), labels.end()).size() < 2) return std::nullopt;
  if (n_classes == 2) {
    std::vector<double> pos;
    for (const auto& p : probs) pos.push_back(p[1]);
    return metrics::roc_auc(pos, labels);
  }
  return metrics::roc_auc_one_vs_rest(probs, labels);
}

int argmax(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

void add_classification_scores(metrics::MetricReport& report, const std::string& task,
                               const std::vector<std::vector<double>>& probs, const std::vector<int>& labels,
                               std::size_t n_classes, std::map<std::string, std::string> strata = {}) {
  std::vector<int> pred;
  for (const auto& p : probs) pred.push_back(argmax(p));
  if (!labels.empty()) report.add(task, "accuracy", metrics::accuracy(pred, labels), strata);
  if (auto auc = auc_of(probs, labels, n_classes)) report.add(task, "roc_auc", *auc, strata);
  report.add(task, "n", static_cast<double>(labels.size()), std::move(strata));
}

}  // namespace

Layout::Layout(const RunConfig& cfg)
    : root(cfg.output_dir),
      corpus(cfg.output_dir / "corpus"),
      datasets(cfg.output_dir / "datasets"),
      tokenizer(cfg.output_dir / "tokenizer.json"),
      run(cfg.output_dir / "runs" / variant_name(cfg)) {}

fs::path Layout::checkpoint(const std::string& stage) const { return run / (stage + ".ckpt"); }
fs::path Layout::finetuned(const std::string& task) const { return run / "finetune" / (task + ".ckpt"); }
fs::path Layout::report(const std::string& protocol, const std::string& ext) const {
  return run / "reports" / (protocol + "." + ext);
}

std::string variant_name(const RunConfig& cfg) {
  if (cfg.stages.mtp && cfg.stages.multitask) return "full";
  if (cfg.stages.multitask) return "no-mtp";
  if (cfg.stages.mtp) return "no-multitask";
  return "none";
}

Table drop_column(const Table& table, const std::string& column) {
  const auto col = table.column_index(column);
  if (!col) throw ConfigError("column '" + column + "' not found in table '" + table.name() + "'");
  std::vector<ColumnSpec> cols;
  for (std::size_t c = 0; c < table.num_columns(); ++c)
    if (c != *col) cols.push_back(table.columns()[c]);
  std::vector<std::vector<Cell>> rows;
  for (const auto& row : table.rows()) {
    std::vector<Cell> r;
    for (std::size_t c = 0; c < row.size(); ++c)
      if (c != *col) r.push_back(row[c]);
    rows.push_back(std::move(r));
  }
  return Table(table.name(), table.domain_tag(), std::move(cols), std::move(rows));
}

// ---------------------------------------------------------------- ingest

json cmd_ingest(const RunConfig& cfg) {
  const Layout layout(cfg);
  if (cfg.corpus.inputs.empty()) throw ConfigError("corpus.inputs is empty");
  json tables = json::array();
  json errors = json::array();
  std::set<std::string> names;
  for (const auto& file : csv_files(cfg.corpus.inputs)) {
    const std::string name = file.stem().string();
    try {
      if (names.count(name)) throw StructuralError("duplicate table name '" + name + "'");
      std::optional<std::string> domain;
      if (auto it = cfg.corpus.domains.find(name); it != cfg.corpus.domains.end()) domain = it->second;
      const Table t = load_table(parse_csv(read_text(file)), name, domain, cfg.corpus.numeric_threshold);
      write_text(layout.corpus / (name + ".json"), table_to_json(t).dump() + "\n");
      names.insert(name);
      tables.push_back({{"table", name},
                        {"rows", t.num_rows()},
                        {"columns", t.num_columns()},
                        {"domain_tag", domain ? json(*domain) : json()}});
    } catch (const Error& e) {
      errors.push_back({{"file", file.filename().string()}, {"error", e.what()}});
    }
  }
  json manifest = {{"config_hash", cfg.dataset_hash()}, {"tables", tables}, {"errors", errors}};
  write_json(layout.corpus / "manifest.json", manifest);
  return manifest;
}

std::vector<Table> load_corpus(const RunConfig& cfg) {
  const Layout layout(cfg);
  const fs::path manifest = layout.corpus / "manifest.json";
  if (!fs::exists(manifest)) throw Error("no corpus manifest at " + manifest.string() + "; run ingest first");
  std::vector<Table> out;
  const json doc = read_json(manifest);
  for (const auto& entry : doc.at("tables"))
    out.push_back(table_from_json(read_json(layout.corpus / (entry.at("table").get<std::string>() + ".json"))));
  return out;
}

std::vector<TaskSpec> load_tasks(const RunConfig& cfg) {
  if (!cfg.tasks.manifest) throw ConfigError("tasks.manifest is not set");
  return load_task_manifest(read_json(*cfg.tasks.manifest));
}

// ----------------------------------------------------------------- stats

json cmd_stats(const RunConfig& cfg) {
  const Layout layout(cfg);
  const auto tables = load_corpus(cfg);
  if (tables.empty()) throw Error("corpus is empty");
  std::size_t numeric = 0, textual = 0, rows = 0;
  std::map<std::string, std::size_t> domains;
  for (const auto& t : tables) {
    for (const auto& c : t.columns()) (c.kind == ColumnKind::numeric ? numeric : textual)++;
    rows += t.num_rows();
    ++domains[t.domain_tag().value_or("unknown")];
  }
  std::vector<std::pair<std::string, std::size_t>> sorted(domains.begin(), domains.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  const double total = static_cast<double>(numeric + textual);
  json dom = json::array();
  for (const auto& [name, count] : sorted)
    dom.push_back({{"domain", name}, {"tables", count}, {"fraction", static_cast<double>(count) / tables.size()}});
  json datasets = json::object();
  if (fs::exists(layout.datasets)) {
    std::vector<fs::path> summaries;
    for (const auto& e : fs::recursive_directory_iterator(layout.datasets))
      if (e.path().string().ends_with(".summary.json")) summaries.push_back(e.path());
    std::sort(summaries.begin(), summaries.end());
    for (const auto& p : summaries) {
      const auto s = read_json(p);
      datasets[fs::relative(p, layout.datasets).string()] = s.value("records", 0);
    }
  }
  const std::string reference = "reference corpus: ~60% numeric / ~40% textual";
  json stats = {{"config_hash", cfg.dataset_hash()},
                {"tables", tables.size()},
                {"rows", rows},
                {"columns", numeric + textual},
                {"numeric_columns", numeric},
                {"textual_columns", textual},
                {"numeric_fraction", numeric / total},
                {"textual_fraction", textual / total},
                {"domains", dom},
                {"dataset_records", datasets},
                {"reference", reference}};
  std::ostringstream txt;
  txt << std::fixed << std::setprecision(1);
  txt << "tables: " << tables.size() << "\nrows: " << rows << "\ncolumns: " << numeric + textual << "\n";
  txt << "numeric: " << 100.0 * numeric / total << "% / textual: " << 100.0 * textual / total << "%\n";
  txt << reference << "\n\ndomains:\n";
  for (const auto& [name, count] : sorted)
    txt << "  " << std::left << std::setw(24) << name << count << " (" << 100.0 * count / tables.size() << "%)\n";
  if (!datasets.empty()) {
    txt << "\ndataset records:\n";
    for (const auto& [name, count] : datasets.items()) txt << "  " << std::left << std::setw(40) << name << count << "\n";
  }
  write_json(layout.root / "stats.json", stats);
  write_text(layout.root / "stats.txt", txt.str());
  return stats;
}

// ----------------------------------------------------------------- build

namespace {

json build_mtp(const RunConfig& cfg, const Layout& layout, const std::vector<Table>& tables) {
  std::vector<PromptExample> records;
  SkipReport report;
  for (std::size_t e = 0; e < cfg.mtp.epochs; ++e) {
    for (std::size_t i = 0; i < tables.size(); ++i) {
      ++report.considered;
      const Table window = row_window(tables[i], cfg.mtp.max_rows, derive_seed(cfg.seed, {kSeedMtp, i, e, 0}));
      if (count_maskable_units(window, cfg.mtp.mask.include_headers) == 0) {
        report.skip("no maskable cells");
        continue;
      }
      MaskConfig mc = cfg.mtp.mask;
      mc.seed = derive_seed(cfg.seed, {kSeedMtp, i, e, 1});
      auto ex = mask_table(window, mc);
      ex.prompt.meta["epoch"] = e;
      records.push_back(std::move(ex.prompt));
      ++report.emitted;
    }
  }
  write_jsonl(layout.datasets / "mtp.jsonl", records);
  json summary = summary_header(cfg, "mtp");
  summary["records"] = records.size();
  summary["skips"] = report.to_json();
  write_json(layout.datasets / "mtp.summary.json", summary);
  return summary;
}

const Table& find_table(const std::vector<Table>& tables, const std::string& name) {
  for (const auto& t : tables)
    if (t.name() == name) return t;
  throw StructuralError("task manifest names dataset '" + name + "' which is not in the corpus");
}

SplitPlan task_split(const RunConfig& cfg, const TaskSpec& spec, const Table& table) {
  return make_split(table.num_rows(), cfg.tasks.test_fraction, cfg.tasks.val_fraction,
                    derive_seed(cfg.seed, {kSeedSplit, fnv1a64(spec.dataset_id)}));
}

std::vector<PromptExample> supervised(const Table& table, const std::vector<std::size_t>& rows, const TaskSpec& spec,
                                      SkipReport& report) {
  std::vector<PromptExample> out;
  for (std::size_t r : rows)
    if (auto ex = build_supervised_example(table, r, spec, &report)) out.push_back(std::move(*ex));
  return out;
}

json build_tasks(const RunConfig& cfg, const Layout& layout, const std::vector<Table>& tables) {
  json outputs = json::array();
  std::vector<PromptExample> multitask;
  for (const auto& spec : load_tasks(cfg)) {
    const Table& table = find_table(tables, spec.dataset_id);
    spec.validate(table);
    const auto split = task_split(cfg, spec, table);
    SkipReport report;
    const auto train = supervised(table, split.train, spec, report);
    const auto val = supervised(table, split.val, spec, report);
    const auto test = supervised(table, split.test, spec, report);
    const fs::path dir = layout.datasets / "tasks";
    write_jsonl(dir / (spec.dataset_id + ".train.jsonl"), train);
    write_jsonl(dir / (spec.dataset_id + ".test.jsonl"), test);
    if (!val.empty()) write_jsonl(dir / (spec.dataset_id + ".val.jsonl"), val);
    json entry = {{"dataset_id", spec.dataset_id},
                  {"kind", spec.is_classification() ? "classification" : "regression"},
                  {"train", train.size()},
                  {"val", val.size()},
                  {"test", test.size()},
                  {"skips", report.to_json()}};
    if (spec.is_classification())
      entry["gini"] = metrics::gini_index(record_labels(train), spec.options);
    outputs.push_back(entry);
    multitask.insert(multitask.end(), train.begin(), train.end());
  }
  write_jsonl(layout.datasets / "multitask.jsonl", multitask);
  json summary = summary_header(cfg, "tasks");
  summary["records"] = multitask.size();
  summary["datasets"] = outputs;
  write_json(layout.datasets / "tasks.summary.json", summary);
  return summary;
}

json build_fewshot(const RunConfig& cfg, const Layout& layout, const std::vector<Table>& tables) {
  json outputs = json::array();
  std::size_t total = 0;
  for (const auto& spec : load_tasks(cfg)) {
    const Table& table = find_table(tables, spec.dataset_id);
    spec.validate(table);
    SkipReport ignored;
    const auto train = supervised(table, task_split(cfg, spec, table).train, spec, ignored);
    for (std::size_t k : cfg.tasks.shots) {
      const std::uint64_t seed = derive_seed(cfg.seed, {kSeedFewShot, fnv1a64(spec.dataset_id), k});
      json entry = {{"dataset_id", spec.dataset_id}, {"shots", k}};
      try {
        const auto picks = spec.is_classification() ? sample_few_shot(record_labels(train), k, seed)
                                                    : sample_few_shot(train.size(), k, seed);
        std::vector<PromptExample> subset;
        for (std::size_t i : picks) subset.push_back(train[i]);
        write_jsonl(layout.datasets / "fewshot" / (spec.dataset_id + ".k" + std::to_string(k) + ".jsonl"), subset);
        entry["records"] = subset.size();
        total += subset.size();
      } catch (const DomainError& e) {
        entry["skipped"] = e.what();
      }
      outputs.push_back(entry);
    }
  }
  json summary = summary_header(cfg, "fewshot");
  summary["records"] = total;
  summary["subsets"] = outputs;
  write_json(layout.datasets / "fewshot.summary.json", summary);
  return summary;
}

json build_icl(const RunConfig& cfg, const Layout& layout, const std::vector<Table>& tables) {
  const HashEmbedder embedder(cfg.icl.embed_dim);
  const std::size_t k_max = *std::max_element(cfg.icl.k_grid.begin(), cfg.icl.k_grid.end());
  json outputs = json::array();
  std::size_t total = 0;
  for (const auto& spec : load_tasks(cfg)) {
    if (!spec.is_classification()) continue;
    const Table& table = find_table(tables, spec.dataset_id);
    spec.validate(table);
    const Table features = drop_column(table, spec.target_column);
    const auto split = task_split(cfg, spec, table);
    SkipReport report;
    EmbeddingCache cache(embedder.id());
    std::vector<std::vector<double>> cand_emb;
    std::vector<std::string> cand_labels;
    std::vector<std::size_t> cand_rows;
    for (std::size_t r : split.train) {
      const auto label = target_text(table, r, spec);
      if (!label || !spec.option_index(*label)) continue;
      cand_emb.push_back(cache.get(spec.dataset_id, r, features, embedder));
      cand_labels.push_back(*label);
      cand_rows.push_back(r);
    }
    std::vector<std::size_t> queries = split.test;
    if (queries.size() > cfg.icl.max_queries) {
      Rng rng(derive_seed(cfg.seed, {kSeedIclQueries, fnv1a64(spec.dataset_id)}));
      rng.shuffle(std::span<std::size_t>(queries));
      queries.resize(cfg.icl.max_queries);
      std::sort(queries.begin(), queries.end());
    }
    std::vector<PromptExample> records;
    for (std::size_t q : queries) {
      auto ex = build_supervised_example(table, q, spec, &report);
      if (!ex) continue;
      const auto& qe = cache.get(spec.dataset_id, q, features, embedder);
      auto scored = score_candidates(qe, cand_emb, cand_labels);
      // Nearest k_max, farthest first; any smaller k takes a suffix-balanced
      // reselection at eval time from this ranked pool.
      const std::size_t pool = std::min(scored.size(), std::max<std::size_t>(k_max * 4, 64));
      std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(pool), scored.end(),
                        [](const auto& a, const auto& b) {
                          return a.distance != b.distance ? a.distance < b.distance : a.index < b.index;
                        });
      scored.resize(pool);
      json ranked = json::array();
      for (const auto& c : scored)
        ranked.push_back({{"row", cand_rows[c.index]}, {"label", c.label}, {"distance", c.distance}});
      ex->meta["candidates"] = ranked;
      records.push_back(std::move(*ex));
    }
    write_jsonl(layout.datasets / "icl" / (spec.dataset_id + ".jsonl"), records);
    cache.save(layout.datasets / "icl" / (spec.dataset_id + ".embeddings.json"));
    outputs.push_back({{"dataset_id", spec.dataset_id}, {"queries", records.size()}, {"candidates", cand_rows.size()}});
    total += records.size();
  }
  json summary = summary_header(cfg, "icl");
  summary["records"] = total;
  summary["datasets"] = outputs;
  summary["plan"] = cfg.icl.plan.to_json();
  summary["k_grid"] = cfg.icl.k_grid;
  write_json(layout.datasets / "icl.summary.json", summary);
  return summary;
}

json build_impute(const RunConfig& cfg, const Layout& layout, const std::vector<Table>& tables) {
  std::vector<PromptExample> records;
  SkipReport report;
  for (std::size_t i = 0; i < tables.size(); ++i) {
    for (std::size_t m : cfg.impute.missing_counts) {
      for (std::size_t j = 0; j < cfg.impute.examples_per_count; ++j) {
        ++report.considered;
        const Table window =
            row_window(tables[i], cfg.impute.max_rows, derive_seed(cfg.seed, {kSeedImpute, i, m, j, 0}));
        if (count_maskable_units(window, false) < m) {
          report.skip("fewer cells than m");
          continue;
        }
        auto ex = corrupt_for_imputation(window, m, derive_seed(cfg.seed, {kSeedImpute, i, m, j, 1}));
        ex.prompt.meta["m"] = m;
        records.push_back(std::move(ex.prompt));
        ++report.emitted;
      }
    }
  }
  write_jsonl(layout.datasets / "impute.jsonl", records);
  json summary = summary_header(cfg, "impute");
  summary["records"] = records.size();
  summary["skips"] = report.to_json();
  write_json(layout.datasets / "impute.summary.json", summary);
  return summary;
}

}  // namespace

json cmd_build(const RunConfig& cfg, const std::string& which) {
  static const std::vector<std::string> kinds = {"mtp", "tasks", "fewshot", "icl", "impute"};
  if (which != "all" && std::find(kinds.begin(), kinds.end(), which) == kinds.end())
    throw ConfigError("unknown build kind '" + which + "'");
  const Layout layout(cfg);
  const auto tables = load_corpus(cfg);
  json out = json::object();
  const bool all = which == "all";
  if (all || which == "mtp") out["mtp"] = build_mtp(cfg, layout, tables);
  if ((all && cfg.tasks.manifest) || which == "tasks") out["tasks"] = build_tasks(cfg, layout, tables);
  if ((all && cfg.tasks.manifest) || which == "fewshot") out["fewshot"] = build_fewshot(cfg, layout, tables);
  if ((all && cfg.tasks.manifest) || which == "icl") out["icl"] = build_icl(cfg, layout, tables);
  if (all || which == "impute") out["impute"] = build_impute(cfg, layout, tables);
  return out;
}

// ----------------------------------------------------------------- train

namespace {

lm::Tokenizer ensure_tokenizer(const RunConfig& cfg, const Layout& layout) {
  if (fs::exists(layout.tokenizer)) return lm::Tokenizer::load(layout.tokenizer);
  std::vector<std::string> corpus;
  for (const char* name : {"mtp.jsonl", "multitask.jsonl", "impute.jsonl"}) {
    const fs::path p = layout.datasets / name;
    if (!fs::exists(p)) continue;
    for (const auto& r : read_jsonl(p)) corpus.push_back(render_prompt(r, true));
  }
  if (corpus.empty()) throw Error("no datasets to train a tokenizer on; run build first");
  auto tok = lm::Tokenizer::train(corpus, cfg.tokenizer_merges);
  fs::create_directories(layout.root);
  tok.save(layout.tokenizer);
  return tok;
}

lm::ModelConfig model_config(const RunConfig& cfg, const lm::Tokenizer& tok) {
  auto mc = cfg.model;
  mc.vocab_size = tok.vocab_size();
  mc.validate();
  return mc;
}

json ckpt_meta(const RunConfig& cfg, const std::string& stage) {
  return {{"dataset_hash", cfg.dataset_hash()},
          {"model_hash", cfg.model_hash()},
          {"stage", stage},
          {"variant", variant_name(cfg)}};
}

struct StageOutcome {
  json curve;
  Model model;
};

// Runs one LM stage, resuming from a partial checkpoint when asked.
StageOutcome run_lm_stage(const RunConfig& cfg, const Layout& layout, const lm::Tokenizer& tok, Model model,
                          const std::string& stage, const std::vector<PromptExample>& records,
                          const lm::TrainConfig& tc, bool resume) {
  const fs::path final_path = layout.checkpoint(stage);
  const fs::path partial_path = layout.run / (stage + ".partial.ckpt");
  if (resume && fs::exists(final_path)) {
    auto ckpt = lm::load_checkpoint(final_path);
    auto state = lm::train_state_from_checkpoint(ckpt, tc);
    return {{{"losses", state.losses}, {"learning_rates", state.learning_rates}, {"steps", state.step},
             {"resumed", true}},
            lm::model_from_checkpoint<float>(ckpt)};
  }
  lm::TrainState state;
  if (resume && fs::exists(partial_path)) {
    auto ckpt = lm::load_checkpoint(partial_path);
    model = lm::model_from_checkpoint<float>(ckpt);
    state = lm::train_state_from_checkpoint(ckpt, tc);
  }
  auto on_step = [&](const lm::TrainState& st) {
    if (tc.checkpoint_every > 0 && st.step % static_cast<std::size_t>(tc.checkpoint_every) == 0) {
      auto ckpt = lm::make_checkpoint<float>(model, nullptr, &st);
      ckpt.meta.update(ckpt_meta(cfg, stage));
      lm::save_checkpoint(partial_path, ckpt);
    }
  };
  lm::TrainResult result;
  try {
    result = lm::train(model, tok, records, tc, &state, on_step);
  } catch (const lm::TrainingError& e) {
    throw lm::TrainingError("stage " + stage + ": " + e.what(), e.step(), e.sample_ids());
  }
  auto ckpt = lm::make_checkpoint<float>(model, nullptr, &state);
  ckpt.meta.update(ckpt_meta(cfg, stage));
  lm::save_checkpoint(final_path, ckpt);
  if (fs::exists(partial_path)) fs::remove(partial_path);
  json curve = {{"losses", state.losses},
                {"learning_rates", state.learning_rates},
                {"steps", state.step},
                {"records", records.size()},
                {"dropped", result.dropped}};
  return {curve, std::move(model)};
}

}  // namespace

json cmd_train(const RunConfig& cfg, bool resume) {
  const Layout layout(cfg);
  const auto tok = ensure_tokenizer(cfg, layout);
  Model model(model_config(cfg, tok), derive_seed(cfg.seed, {kSeedModel}));
  json stages = json::object();
  if (cfg.stages.mtp) {
    check_dataset_summary(cfg, layout.datasets / "mtp.summary.json");
    auto tc = cfg.stages.mtp_train;
    auto out = run_lm_stage(cfg, layout, tok, std::move(model), "mtp", read_records(layout.datasets / "mtp.jsonl"), tc,
                            resume);
    stages["mtp"] = out.curve;
    model = std::move(out.model);
  }
  if (cfg.stages.multitask) {
    check_dataset_summary(cfg, layout.datasets / "tasks.summary.json");
    auto out = run_lm_stage(cfg, layout, tok, std::move(model), "multitask",
                            read_records(layout.datasets / "multitask.jsonl"), cfg.stages.multitask_train, resume);
    stages["multitask"] = out.curve;
    model = std::move(out.model);
  }
  auto ckpt = lm::make_checkpoint<float>(model);
  ckpt.meta.update(ckpt_meta(cfg, "base"));
  lm::save_checkpoint(layout.checkpoint("base"), ckpt);
  json log = {{"config_hash", cfg.model_hash()},
              {"dataset_hash", cfg.dataset_hash()},
              {"variant", variant_name(cfg)},
              {"stages", stages}};
  write_json(layout.run / "loss.json", log);
  return log;
}

// -------------------------------------------------------------- finetune

json cmd_finetune(const RunConfig& cfg) {
  const Layout layout(cfg);
  const auto tok = load_tokenizer(layout);
  const auto base = load_model(cfg, layout.checkpoint("base"));
  const auto ctx = static_cast<std::size_t>(base.model.config().context_len);
  json out = json::object();
  if (cfg.tasks.manifest) {
    check_dataset_summary(cfg, layout.datasets / "tasks.summary.json");
    for (const auto& spec : load_tasks(cfg)) {
      const auto data = read_task(layout, spec);
      const auto examples = head_examples(tok, data.train, ctx);
      auto tc = cfg.finetune.train;
      tc.seed = derive_seed(tc.seed, {kSeedHead, fnv1a64(spec.dataset_id)});
      const auto kind = spec.is_classification() ? lm::HeadKind::classification : lm::HeadKind::regression;
      auto tuned = lm::attach_head_and_finetune<float>(base.model, kind, static_cast<int>(spec.options.size()),
                                                       examples, tc, tok.pad_id());
      auto ckpt = lm::make_checkpoint<float>(tuned.model, &tuned.head);
      ckpt.meta.update(ckpt_meta(cfg, "finetune"));
      ckpt.meta["task"] = spec.dataset_id;
      lm::save_checkpoint(layout.finetuned(spec.dataset_id), ckpt);
      out[spec.dataset_id] = {{"losses", tuned.result.losses}, {"examples", examples.size()}};
    }
  }
  if (cfg.finetune.imputation) {
    check_dataset_summary(cfg, layout.datasets / "impute.summary.json");
    Model model = base.model;
    lm::TrainState state;
    auto result = lm::train(model, tok, read_records(layout.datasets / "impute.jsonl"), cfg.finetune.imputation_train,
                            &state);
    auto ckpt = lm::make_checkpoint<float>(model, nullptr, &state);
    ckpt.meta.update(ckpt_meta(cfg, "finetune"));
    ckpt.meta["task"] = "impute";
    lm::save_checkpoint(layout.finetuned("impute"), ckpt);
    out["impute"] = {{"losses", state.losses}, {"dropped", result.dropped}};
  }
  write_json(layout.run / "finetune.json", {{"config_hash", cfg.model_hash()}, {"tasks", out}});
  return out;
}

// ------------------------------------------------------------------ eval

namespace {

struct EvalContext {
  const RunConfig& cfg;
  Layout layout;
  lm::Tokenizer tok;
};

std::vector<std::vector<double>> head_probabilities(const LoadedModel& lmod, const lm::Head<float>& head,
                                                    const std::vector<lm::HeadExample>& examples, int pad) {
  std::vector<std::vector<double>> probs;
  for (const auto& ex : examples) probs.push_back(lm::predict_proba(lmod.model, head, ex.ids, pad));
  return probs;
}

std::vector<int> example_labels(const std::vector<lm::HeadExample>& examples) {
  std::vector<int> labels;
  for (const auto& ex : examples) labels.push_back(ex.label);
  return labels;
}

void eval_heads(EvalContext& ec, metrics::MetricReport& report, bool classification) {
  std::vector<metrics::DatasetScore> scores;
  for (const auto& spec : load_tasks(ec.cfg)) {
    if (spec.is_classification() != classification) continue;
    const auto data = read_task(ec.layout, spec);
    const auto lmod = load_model(ec.cfg, ec.layout.finetuned(spec.dataset_id));
    const auto head = lm::head_from_checkpoint<float>(lmod.ckpt);
    const auto ctx = static_cast<std::size_t>(lmod.model.config().context_len);
    const auto test = head_examples(ec.tok, limit(data.test, ec.cfg.eval.max_examples), ctx);
    if (classification) {
      const auto probs = head_probabilities(lmod, head, test, ec.tok.pad_id());
      const auto labels = example_labels(test);
      const double gini = metrics::gini_index(record_labels(data.train), spec.options);
      add_classification_scores(report, spec.dataset_id, probs, labels, spec.options.size(),
                                {{"gini", canonicalize_numeric(gini)}});
      if (auto auc = auc_of(probs, labels, spec.options.size())) scores.push_back({spec.dataset_id, gini, *auc});
    } else {
      std::vector<double> y, y_hat;
      for (const auto& ex : test) {
        y.push_back(ex.target);
        y_hat.push_back(lm::predict_value(lmod.model, head, ex.ids, ec.tok.pad_id()));
      }
      report.add(spec.dataset_id, "r_squared", metrics::r_squared(y, y_hat));
      report.add(spec.dataset_id, "n", static_cast<double>(y.size()));
    }
  }
  if (!scores.empty()) {
    report.merge(metrics::stratify_by_gini(scores, "roc_auc"));
  }
}

std::vector<std::vector<double>> constrained(const Model& model, const lm::Tokenizer& tok,
                                             const std::vector<std::vector<int>>& prompts,
                                             const std::vector<std::string>& options) {
  std::vector<std::vector<double>> out;
  for (const auto& p : prompts) out.push_back(lm::constrained_decode(model, tok, p, options));
  return out;
}

void eval_zeroshot(EvalContext& ec, metrics::MetricReport& report) {
  const auto base = load_model(ec.cfg, ec.layout.checkpoint("base"));
  for (const auto& spec : load_tasks(ec.cfg)) {
    if (!spec.is_classification()) continue;
    const auto data = read_task(ec.layout, spec);
    std::vector<std::vector<int>> prompts;
    std::vector<int> labels;
    for (const auto& r : limit(data.test, ec.cfg.eval.max_examples)) {
      prompts.push_back(lm::encode_prompt(ec.tok, r));
      labels.push_back(r.meta.at("label_index").get<int>());
    }
    add_classification_scores(report, spec.dataset_id, constrained(base.model, ec.tok, prompts, spec.options), labels,
                              spec.options.size());
  }
}

void eval_fewshot(EvalContext& ec, metrics::MetricReport& report) {
  const auto base = load_model(ec.cfg, ec.layout.checkpoint("base"));
  const auto ctx = static_cast<std::size_t>(base.model.config().context_len);
  for (const auto& spec : load_tasks(ec.cfg)) {
    const auto data = read_task(ec.layout, spec);
    const auto test = head_examples(ec.tok, limit(data.test, ec.cfg.eval.max_examples), ctx);
    for (std::size_t k : ec.cfg.tasks.shots) {
      const fs::path p = ec.layout.datasets / "fewshot" / (spec.dataset_id + ".k" + std::to_string(k) + ".jsonl");
      if (!fs::exists(p)) continue;
      const auto train = head_examples(ec.tok, read_jsonl(p), ctx);
      auto tc = ec.cfg.finetune.train;
      tc.seed = derive_seed(tc.seed, {kSeedHead, fnv1a64(spec.dataset_id), k});
      const auto kind = spec.is_classification() ? lm::HeadKind::classification : lm::HeadKind::regression;
      const std::map<std::string, std::string> strata = {{"shots", std::to_string(k)}};
      try {
        auto tuned = lm::attach_head_and_finetune<float>(base.model, kind, static_cast<int>(spec.options.size()),
                                                         train, tc, ec.tok.pad_id());
        if (spec.is_classification()) {
          std::vector<std::vector<double>> probs;
          for (const auto& ex : test) probs.push_back(lm::predict_proba(tuned.model, tuned.head, ex.ids, ec.tok.pad_id()));
          add_classification_scores(report, spec.dataset_id, probs, example_labels(test), spec.options.size(), strata);
        } else {
          std::vector<double> y, y_hat;
          for (const auto& ex : test) {
            y.push_back(ex.target);
            y_hat.push_back(lm::predict_value(tuned.model, tuned.head, ex.ids, ec.tok.pad_id()));
          }
          report.add(spec.dataset_id, "r_squared", metrics::r_squared(y, y_hat), strata);
        }
      } catch (const DomainError& e) {
        report.add_note(spec.dataset_id + " shots=" + std::to_string(k) + " skipped: " + e.what());
      }
    }
  }
}

void eval_icl(EvalContext& ec, metrics::MetricReport& report) {
  const auto base = load_model(ec.cfg, ec.layout.checkpoint("base"));
  const auto ctx = static_cast<std::size_t>(base.model.config().context_len);
  for (const auto& spec : load_tasks(ec.cfg)) {
    if (!spec.is_classification()) continue;
    const fs::path p = ec.layout.datasets / "icl" / (spec.dataset_id + ".jsonl");
    const auto queries = limit(read_records(p), ec.cfg.eval.max_examples);
    const auto train = read_task(ec.layout, spec).train;
    std::map<std::size_t, const PromptExample*> by_row;
    for (const auto& r : train) by_row[r.meta.at("row").get<std::size_t>()] = &r;
    std::size_t longest_option = 0;
    for (const auto& o : spec.options) longest_option = std::max(longest_option, ec.tok.encode(o).size() + 1);
    const std::size_t budget = std::min(ec.cfg.icl.plan.token_budget, ctx - 1 - longest_option);
    for (std::size_t k : ec.cfg.icl.k_grid) {
      std::vector<std::vector<double>> probs;
      std::vector<int> labels;
      std::size_t kept_total = 0, skipped = 0;
      for (const auto& q : queries) {
        std::vector<ScoredCandidate> pool;
        for (const auto& c : q.meta.at("candidates"))
          pool.push_back({c.at("row").get<std::size_t>(), c.at("label").get<std::string>(),
                          c.at("distance").get<double>()});
        std::vector<ScoredCandidate> chosen;
        try {
          chosen = select_context(pool, k, ec.cfg.icl.plan.balance, spec.options);
        } catch (const DomainError&) {
          ++skipped;
          continue;
        }
        std::vector<PromptExample> context;
        for (const auto& c : chosen) context.push_back(*by_row.at(c.index));
        std::size_t kept = 0;
        const std::string text = assemble_long_input(context, q, budget, ec.tok, &kept);
        kept_total += kept;
        std::vector<int> ids = {ec.tok.begin_id()};
        const auto body = ec.tok.encode(text);
        ids.insert(ids.end(), body.begin(), body.end());
        probs.push_back(lm::constrained_decode(base.model, ec.tok, ids, spec.options));
        labels.push_back(q.meta.at("label_index").get<int>());
      }
      const std::map<std::string, std::string> strata = {{"k", std::to_string(k)}};
      add_classification_scores(report, spec.dataset_id, probs, labels, spec.options.size(), strata);
      if (!labels.empty())
        report.add(spec.dataset_id, "mean_context", static_cast<double>(kept_total) / labels.size(), strata);
      if (skipped) report.add_note(spec.dataset_id + " k=" + std::to_string(k) + ": " + std::to_string(skipped) +
                                   " queries lacked balanced candidates");
    }
  }
}

std::map<std::size_t, std::string> gold_targets(const PromptExample& r) {
  std::map<std::size_t, std::string> out;
  for (const auto& [key, value] : r.meta.at("sentinel_targets").items())
    out[static_cast<std::size_t>(std::stoul(key))] = value.get<std::string>();
  return out;
}

// Numeric golds and predictions compare in canonical form.
std::string canonical_for_rouge(const std::string& text) {
  if (auto d = Decimal::parse(text)) return canonicalize_numeric(*d);
  return text;
}

void eval_impute(EvalContext& ec, metrics::MetricReport& report, bool cot) {
  const fs::path tuned = ec.layout.finetuned("impute");
  const auto lmod = load_model(ec.cfg, fs::exists(tuned) ? tuned : ec.layout.checkpoint("base"));
  check_dataset_summary(ec.cfg, ec.layout.datasets / "impute.summary.json");
  const auto records = read_records(ec.layout.datasets / "impute.jsonl");
  const auto ctx = static_cast<std::size_t>(lmod.model.config().context_len);
  std::map<std::size_t, std::vector<double>> rouge, exact;
  std::size_t too_long = 0;
  for (auto r : records) {
    const auto m = r.meta.at("m").get<std::size_t>();
    if (ec.cfg.eval.max_examples > 0 && rouge[m].size() >= ec.cfg.eval.max_examples) continue;
    if (cot) r.instruction = augment_cot(r.instruction);
    const auto prompt = lm::encode_prompt(ec.tok, r);
    if (prompt.size() + ec.cfg.eval.max_new_tokens > ctx) {
      ++too_long;
      continue;
    }
    const std::string generated = lm::generate_greedy(lmod.model, ec.tok, prompt, ec.cfg.eval.max_new_tokens);
    const auto gold = gold_targets(r);
    const auto pred = parse_sentinel_answer(generated, gold.size());
    double sum = 0.0, hits = 0.0;
    for (const auto& [idx, g] : gold) {
      const auto it = pred.find(idx);
      const std::string p = it == pred.end() ? std::string() : it->second;
      sum += metrics::rouge_l(canonical_for_rouge(p), canonical_for_rouge(g));
      hits += canonical_for_rouge(p) == canonical_for_rouge(g) ? 1.0 : 0.0;
    }
    rouge[m].push_back(sum / static_cast<double>(gold.size()));
    exact[m].push_back(hits / static_cast<double>(gold.size()));
  }
  for (std::size_t m : ec.cfg.impute.missing_counts) {
    const std::map<std::string, std::string> strata = {{"m", std::to_string(m)}};
    const auto& rv = rouge[m];
    const auto& ev = exact[m];
    const auto mean = [](const std::vector<double>& v) {
      double s = 0.0;
      for (double x : v) s += x;
      return v.empty() ? 0.0 : s / static_cast<double>(v.size());
    };
    report.add("impute", "rouge_l", mean(rv), strata);
    report.add("impute", "exact_match", mean(ev), strata);
    report.add("impute", "n", static_cast<double>(rv.size()), strata);
  }
  if (too_long) report.add_note(std::to_string(too_long) + " records did not fit the context window");
  if (cot) report.add_note("instructions carry the chain-of-thought request");
  report.add_note("ROUGE-L is sentence-level F1 (beta = 1) over lowercased whitespace tokens");
}

void eval_predict_as_impute(EvalContext& ec, metrics::MetricReport& report) {
  const auto base = load_model(ec.cfg, ec.layout.checkpoint("base"));
  const auto tables = load_corpus(ec.cfg);
  for (const auto& spec : load_tasks(ec.cfg)) {
    if (!spec.is_classification()) continue;
    const Table& table = find_table(tables, spec.dataset_id);
    auto rows = task_split(ec.cfg, spec, table).test;
    if (ec.cfg.eval.max_examples > 0 && rows.size() > ec.cfg.eval.max_examples) rows.resize(ec.cfg.eval.max_examples);
    std::vector<std::string> options;
    for (const auto& o : spec.options) options.push_back(sentinel_token(0) + " " + o);
    std::vector<std::vector<double>> probs;
    std::vector<int> labels;
    for (std::size_t r : rows) {
      auto ex = build_predict_as_impute(table, r, spec);
      if (!ex) continue;
      probs.push_back(lm::constrained_decode(base.model, ec.tok, lm::encode_prompt(ec.tok, ex->prompt), options));
      labels.push_back(ex->prompt.meta.at("label_index").get<int>());
    }
    add_classification_scores(report, spec.dataset_id, probs, labels, spec.options.size());
  }
}

}  // namespace

metrics::MetricReport cmd_eval(const RunConfig& cfg, const std::string& protocol) {
  EvalContext ec{cfg, Layout(cfg), lm::Tokenizer()};
  ec.tok = load_tokenizer(ec.layout);
  metrics::MetricReport report(protocol);
  report.add_note("config hash " + cfg.model_hash() + ", dataset hash " + cfg.dataset_hash());
  const bool needs_tasks = protocol != "impute" && protocol != "cot";
  if (needs_tasks) check_dataset_summary(cfg, ec.layout.datasets / "tasks.summary.json");
  if (protocol == "cls") {
    eval_heads(ec, report, true);
  } else if (protocol == "reg") {
    eval_heads(ec, report, false);
  } else if (protocol == "zeroshot") {
    eval_zeroshot(ec, report);
  } else if (protocol == "fewshot") {
    eval_fewshot(ec, report);
  } else if (protocol == "icl") {
    check_dataset_summary(cfg, ec.layout.datasets / "icl.summary.json");
    eval_icl(ec, report);
  } else if (protocol == "impute") {
    eval_impute(ec, report, cfg.eval.cot);
  } else if (protocol == "cot") {
    eval_impute(ec, report, true);
  } else if (protocol == "predict-as-impute") {
    eval_predict_as_impute(ec, report);
  } else {
    throw ConfigError("unknown eval protocol '" + protocol + "'");
  }
  save_report(ec.layout, protocol, report);
  return report;
}

}  // namespace tabforge::pipeline
