#include "tabforge/icl.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>

#include "tabforge/error.hpp"
#include "tabforge/random.hpp"

namespace tabforge {

HashEmbedder::HashEmbedder(std::size_t dimension) : dim_(dimension) {
  if (dimension == 0) throw ConfigError("embedding dimension must be positive");
}

std::vector<double> HashEmbedder::embed(std::string_view text) const {
  std::vector<double> v(dim_, 0.0);
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) v[fnv1a64(text.substr(i, j - i)) % dim_] += 1.0;
    i = j;
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm > 0.0) {
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
  }
  return v;
}

bool is_zero_vector(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DomainError("embedding dimensions differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

nlohmann::json ContextPlan::to_json() const {
  return {{"k", k}, {"token_budget", token_budget}, {"balance", balance}, {"order", "nearest_last"}};
}

ContextPlan ContextPlan::from_json(const nlohmann::json& j) {
  ContextPlan p;
  for (const auto& [key, value] : j.items()) {
    if (key == "k") p.k = value.get<std::size_t>();
    else if (key == "token_budget") p.token_budget = value.get<std::size_t>();
    else if (key == "balance") p.balance = value.get<bool>();
    else if (key == "order") {
      if (value.get<std::string>() != "nearest_last") throw ConfigError("only nearest_last ordering is supported");
    } else throw ConfigError("unknown context plan key '" + key + "'");
  }
  return p;
}

namespace {

bool nearer(const ScoredCandidate& a, const ScoredCandidate& b) {
  if (a.distance != b.distance) return a.distance < b.distance;
  return a.index < b.index;
}

}  // namespace

std::vector<ScoredCandidate> select_context(const std::vector<ScoredCandidate>& candidates, std::size_t k,
                                            bool balance, const std::vector<std::string>& classes) {
  if (k > candidates.size())
    throw DomainError("k = " + std::to_string(k) + " exceeds the " + std::to_string(candidates.size()) +
                      " available candidates");
  std::vector<ScoredCandidate> chosen;
  if (k == 0) return chosen;
  if (!balance) {
    chosen = candidates;
    std::sort(chosen.begin(), chosen.end(), nearer);
    chosen.resize(k);
  } else {
    std::vector<std::string> class_list = classes;
    if (class_list.empty()) {
      std::set<std::string> seen;
      for (const auto& c : candidates) seen.insert(c.label);
      class_list.assign(seen.begin(), seen.end());
    }
    std::map<std::string, std::vector<ScoredCandidate>> by_class;
    for (const auto& name : class_list) by_class[name];
    for (const auto& c : candidates) {
      auto it = by_class.find(c.label);
      if (it != by_class.end()) it->second.push_back(c);
    }
    for (const auto& name : class_list)
      if (by_class[name].empty()) throw DomainError("class '" + name + "' has no candidates for balanced selection");
    const std::size_t n_classes = class_list.size();
    const std::size_t base = k / n_classes;
    std::size_t extra = k % n_classes;
    for (auto& [name, list] : by_class) std::sort(list.begin(), list.end(), nearer);
    for (const auto& name : class_list)
      if (by_class[name].size() < base)
        throw DomainError("class '" + name + "' has " + std::to_string(by_class[name].size()) +
                          " candidates; balanced selection needs " + std::to_string(base));
    for (const auto& name : class_list) {
      const auto& list = by_class[name];
      chosen.insert(chosen.end(), list.begin(), list.begin() + static_cast<std::ptrdiff_t>(base));
    }
    if (extra > 0) {
      std::vector<ScoredCandidate> next;
      for (const auto& name : class_list)
        if (by_class[name].size() > base) next.push_back(by_class[name][base]);
      if (next.size() < extra) throw DomainError("not enough candidates to fill k balanced slots");
      std::sort(next.begin(), next.end(), nearer);
      chosen.insert(chosen.end(), next.begin(), next.begin() + static_cast<std::ptrdiff_t>(extra));
    }
  }
  std::sort(chosen.begin(), chosen.end(), [](const auto& a, const auto& b) { return nearer(b, a); });
  return chosen;
}

std::vector<ScoredCandidate> score_candidates(const std::vector<double>& query,
                                              const std::vector<std::vector<double>>& embeddings,
                                              const std::vector<std::string>& labels) {
  if (embeddings.size() != labels.size()) throw DomainError("embeddings and labels differ in length");
  std::vector<ScoredCandidate> out;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    if (is_zero_vector(embeddings[i])) continue;
    out.push_back({i, labels[i], 1.0 - dot(query, embeddings[i])});
  }
  return out;
}

std::string assemble_long_input(const std::vector<PromptExample>& context, const PromptExample& query,
                                std::size_t token_budget, const lm::Tokenizer& tokenizer, std::size_t* kept) {
  const std::string tail = render_prompt(query, false);
  if (tokenizer.encode(tail).size() > token_budget)
    throw DomainError("query prompt alone exceeds the token budget of " + std::to_string(token_budget));
  std::vector<std::string> parts;
  for (const auto& ex : context) parts.push_back(render_prompt(ex, true));
  std::size_t first = 0;
  std::string text;
  for (;; ++first) {
    text.clear();
    for (std::size_t i = first; i < parts.size(); ++i) text += parts[i] + "\n\n";
    text += tail;
    if (first == parts.size() || tokenizer.encode(text).size() <= token_budget) break;
  }
  if (kept) *kept = parts.size() - first;
  return text;
}

std::vector<double> embed_row(const Table& table, std::size_t row, const Embedder& embedder) {
  return embedder.embed(to_sentence(table, row));
}

const std::vector<double>& EmbeddingCache::get(const std::string& dataset, std::size_t row, const Table& table,
                                               const Embedder& embedder) {
  if (embedder.id() != embedder_id_) throw ConfigError("embedding cache built with " + embedder_id_);
  const std::string key = dataset + ":" + std::to_string(row);
  auto it = entries_.find(key);
  if (it == entries_.end()) it = entries_.emplace(key, embed_row(table, row, embedder)).first;
  return it->second;
}

void EmbeddingCache::save(const std::filesystem::path& path) const {
  nlohmann::json j = {{"embedder", embedder_id_}, {"rows", entries_}};
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump() << '\n';
}

EmbeddingCache EmbeddingCache::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  const auto j = nlohmann::json::parse(in);
  EmbeddingCache cache(j.at("embedder").get<std::string>());
  cache.entries_ = j.at("rows").get<std::map<std::string, std::vector<double>>>();
  return cache;
}

}  // namespace tabforge
