#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tabforge/lm/tokenizer.hpp"
#include "tabforge/table_model.hpp"
#include "tabforge/textgen.hpp"

namespace tabforge {

// Text to unit vector. A zero vector marks text with nothing to embed.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::vector<double> embed(std::string_view text) const = 0;
  virtual std::size_t dimension() const = 0;
  virtual std::string id() const = 0;
};

// Bag of whitespace tokens hashed (FNV-1a 64) into D buckets, L2-normalized.
class HashEmbedder final : public Embedder {
 public:
  explicit HashEmbedder(std::size_t dimension = 256);
  std::vector<double> embed(std::string_view text) const override;
  std::size_t dimension() const override { return dim_; }
  std::string id() const override { return "hash-" + std::to_string(dim_); }

 private:
  std::size_t dim_;
};

bool is_zero_vector(const std::vector<double>& v);
double dot(const std::vector<double>& a, const std::vector<double>& b);

struct ContextPlan {
  std::size_t k = 0;
  std::size_t token_budget = 512;
  bool balance = true;

  nlohmann::json to_json() const;
  static ContextPlan from_json(const nlohmann::json& j);
};

struct ScoredCandidate {
  std::size_t index = 0;  // caller's candidate id; breaks distance ties
  std::string label;
  double distance = 0.0;
};

// Chooses k candidates and returns them farthest first, so the nearest one
// ends up next to the query. With balance, per-class counts differ by at most
// one; extra slots go to the classes whose next candidate is nearest. When
// `classes` is empty the class set is taken from the candidates.
std::vector<ScoredCandidate> select_context(const std::vector<ScoredCandidate>& candidates, std::size_t k,
                                            bool balance, const std::vector<std::string>& classes = {});

// Cosine distances (1 - dot) from a query embedding. Candidates with zero
// embeddings are left out.
std::vector<ScoredCandidate> score_candidates(const std::vector<double>& query,
                                              const std::vector<std::vector<double>>& embeddings,
                                              const std::vector<std::string>& labels);

// Demonstrations (farthest first) rendered with answers, joined with blank
// lines, then the query with an empty answer. Demonstrations are dropped from
// the front until the encoded text has at most token_budget tokens.
std::string assemble_long_input(const std::vector<PromptExample>& context, const PromptExample& query,
                                std::size_t token_budget, const lm::Tokenizer& tokenizer,
                                std::size_t* kept = nullptr);

std::vector<double> embed_row(const Table& table, std::size_t row, const Embedder& embedder);

// Embeddings keyed by "<dataset>:<row>", stored as JSON.
class EmbeddingCache {
 public:
  explicit EmbeddingCache(std::string embedder_id) : embedder_id_(std::move(embedder_id)) {}

  const std::vector<double>& get(const std::string& dataset, std::size_t row, const Table& table,
                                 const Embedder& embedder);
  std::size_t size() const noexcept { return entries_.size(); }

  void save(const std::filesystem::path& path) const;
  static EmbeddingCache load(const std::filesystem::path& path);

 private:
  std::string embedder_id_;
  std::map<std::string, std::vector<double>> entries_;
};

}  // namespace tabforge
