#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "tabforge/error.hpp"
#include "tabforge/icl.hpp"
#include "tabforge/lm/tokenizer.hpp"
#include "tabforge/random.hpp"
#include "tabforge/textgen.hpp"

using namespace tabforge;

namespace {

double cosine(const Embedder& e, std::string_view a, std::string_view b) { return dot(e.embed(a), e.embed(b)); }

bool nearer(const ScoredCandidate& a, const ScoredCandidate& b) {
  return a.distance != b.distance ? a.distance < b.distance : a.index < b.index;
}

std::vector<std::size_t> ids(const std::vector<ScoredCandidate>& cs) {
  std::vector<std::size_t> out;
  for (const auto& c : cs) out.push_back(c.index);
  return out;
}

// Brute-force balanced selection, written independently of the library.
std::set<std::size_t> oracle_balanced(const std::vector<ScoredCandidate>& cands, std::size_t k) {
  std::map<std::string, std::vector<ScoredCandidate>> by;
  for (const auto& c : cands) by[c.label].push_back(c);
  for (auto& [_, v] : by) std::sort(v.begin(), v.end(), nearer);
  const std::size_t base = k / by.size();
  std::size_t extra = k % by.size();
  std::vector<std::pair<ScoredCandidate, std::string>> next;
  for (const auto& [lab, v] : by)
    if (v.size() > base) next.push_back({v[base], lab});
  std::sort(next.begin(), next.end(), [](const auto& a, const auto& b) { return nearer(a.first, b.first); });
  std::map<std::string, std::size_t> quota;
  for (const auto& [lab, _] : by) quota[lab] = base;
  for (std::size_t i = 0; i < extra && i < next.size(); ++i) ++quota[next[i].second];
  std::set<std::size_t> out;
  for (const auto& [lab, v] : by)
    for (std::size_t i = 0; i < quota[lab]; ++i) out.insert(v[i].index);
  return out;
}

PromptExample demo(int i) {
  PromptExample p;
  p.instruction = "Predict y.";
  p.table_markdown = "| x |\n| --- |\n| " + std::to_string(i) + " |";
  p.answer = i % 2 ? "yes" : "no";
  return p;
}

std::size_t count(std::string_view hay, std::string_view needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string_view::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

}  // namespace

TEST_SUITE("icl") {
  TEST_CASE("hash embedder cosine") {
    const HashEmbedder e;
    REQUIRE(fnv1a64("a") % 256 != fnv1a64("b") % 256);
    REQUIRE(fnv1a64("a") % 256 != fnv1a64("c") % 256);
    REQUIRE(fnv1a64("b") % 256 != fnv1a64("c") % 256);
    CHECK(cosine(e, "x is 1, y is 2", "x is 1, y is 2") == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(cosine(e, "a", "b") == 0.0);
    CHECK(cosine(e, "a b", "a c") == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(is_zero_vector(e.embed("")));
    CHECK(is_zero_vector(e.embed("  \n ")));
    CHECK(e.id() == "hash-256");
    CHECK(e.embed("a b").size() == 256);
  }

  TEST_CASE("zero embeddings are excluded from scoring") {
    const HashEmbedder e(16);
    const auto s = score_candidates(e.embed("a"), {e.embed("a"), e.embed(""), e.embed("b")}, {"p", "q", "r"});
    REQUIRE(s.size() == 2);
    CHECK(s[0].index == 0);
    CHECK(s[0].distance == doctest::Approx(0.0));
    CHECK(s[1].index == 2);
  }

  TEST_CASE("selection examples") {
    CHECK(select_context({{0, "A", 0.1}}, 0, true).empty());
    const std::vector<ScoredCandidate> c = {{0, "A", 0.1}, {1, "A", 5.0}, {2, "B", 0.2}, {3, "B", 6.0}};
    const auto sel = select_context(c, 4, true);
    CHECK(ids(sel) == std::vector<std::size_t>{3, 1, 2, 0});
    CHECK(sel.back().distance == 0.1);

    const std::vector<ScoredCandidate> only_a = {{0, "A", 0.1}, {1, "A", 0.3}, {2, "A", 0.5}};
    try {
      select_context(only_a, 2, true, {"A", "B"});
      FAIL("missing class accepted");
    } catch (const DomainError& e) {
      CHECK(std::string(e.what()).find("B") != std::string::npos);
    }
    CHECK_THROWS(select_context(only_a, 4, false));
    CHECK(ids(select_context(only_a, 2, false)) == std::vector<std::size_t>{1, 0});
  }

  TEST_CASE("ties break by candidate index") {
    const std::vector<ScoredCandidate> c = {{5, "A", 0.5}, {2, "A", 0.5}, {9, "B", 0.5}, {1, "B", 0.5}};
    CHECK(ids(select_context(c, 2, true)) == std::vector<std::size_t>{2, 1});
  }

  TEST_CASE("balanced selection matches brute force") {
    Rng rng(51);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t n = 50 + rng.below(951);
      const std::size_t classes = 2 + rng.below(3);
      std::vector<ScoredCandidate> cands;
      for (std::size_t i = 0; i < n; ++i)
        cands.push_back({i, std::string(1, static_cast<char>('A' + rng.below(classes))),
                         std::round(rng.uniform() * 200.0) / 100.0});
      std::set<std::string> present;
      for (const auto& c : cands) present.insert(c.label);
      const std::size_t k = present.size() + rng.below(20);
      const auto sel = select_context(cands, k, true);
      REQUIRE(sel.size() == k);
      const auto picked = ids(sel);
      CHECK(std::set<std::size_t>(picked.begin(), picked.end()) == oracle_balanced(cands, k));
      std::map<std::string, int> counts;
      for (const auto& s : sel) ++counts[s.label];
      int lo = 1 << 30, hi = 0;
      for (const auto& [_, m] : counts) lo = std::min(lo, m), hi = std::max(hi, m);
      CHECK(hi - lo <= 1);
      for (std::size_t i = 1; i < sel.size(); ++i) CHECK(nearer(sel[i], sel[i - 1]));

      auto all = cands;
      std::sort(all.begin(), all.end(), nearer);
      std::vector<std::size_t> top;
      for (std::size_t i = 0; i < k; ++i) top.push_back(all[k - 1 - i].index);
      CHECK(ids(select_context(cands, k, false)) == top);
    }
  }

  TEST_CASE("long-input assembly") {
    const auto tok = lm::Tokenizer::train({render_prompt(demo(1)), render_prompt(demo(2))}, 50);
    PromptExample query = demo(99);
    query.answer = "";
    const std::string bare = render_prompt(query, false);
    CHECK(assemble_long_input({}, query, 512, tok) == bare);

    std::vector<PromptExample> ctx = {demo(1), demo(2), demo(3)};
    std::size_t kept = 0;
    const std::string full = assemble_long_input(ctx, query, 100000, tok, &kept);
    CHECK(kept == 3);
    CHECK(count(full, "### Answer:\nyes") + count(full, "### Answer:\nno") == 3);
    CHECK(count(full, "### Answer:") == 4);
    CHECK(full.ends_with(bare));
    CHECK(full.starts_with(render_prompt(demo(1)) + "\n\n"));

    const std::size_t query_len = tok.encode(bare).size();
    CHECK(assemble_long_input(ctx, query, query_len + 1, tok, &kept) == bare);
    CHECK(kept == 0);

    // Dropping removes the farthest (front) demonstrations first.
    const std::size_t two = tok.encode(render_prompt(demo(2)) + "\n\n" + render_prompt(demo(3)) + "\n\n" + bare).size();
    const std::string partial = assemble_long_input(ctx, query, two, tok, &kept);
    CHECK(kept == 2);
    CHECK(partial.find("| 1 |") == std::string::npos);
    CHECK(partial.find("| 3 |") != std::string::npos);

    CHECK_THROWS(assemble_long_input(ctx, query, query_len - 1, tok));

    Rng rng(52);
    for (int i = 0; i < 100; ++i) {
      const std::size_t budget = query_len + rng.below(200);
      std::vector<PromptExample> c;
      for (std::size_t j = 0; j < rng.below(8); ++j) c.push_back(demo(static_cast<int>(rng.below(1000))));
      CHECK(tok.encode(assemble_long_input(c, query, budget, tok)).size() <= budget);
    }
  }

  TEST_CASE("context plan json") {
    ContextPlan p;
    p.k = 8;
    p.token_budget = 480;
    const auto back = ContextPlan::from_json(p.to_json());
    CHECK(back.k == 8);
    CHECK(back.token_budget == 480);
    CHECK_THROWS_AS(ContextPlan::from_json({{"order", "random"}}), ConfigError);
    CHECK_THROWS_AS(ContextPlan::from_json({{"kk", 1}}), ConfigError);
  }

  TEST_CASE("embedding cache") {
    const Table t = load_table({{"x", "y"}, {"1", "a"}, {"2", "b"}}, "t");
    const HashEmbedder e(32);
    EmbeddingCache cache(e.id());
    const auto v = cache.get("t", 1, t, e);
    CHECK(v == e.embed(to_sentence(t, 1)));
    CHECK(v == embed_row(t, 1, e));
    cache.get("t", 0, t, e);
    CHECK(cache.size() == 2);
    const auto path = std::filesystem::temp_directory_path() / "tabforge_icl_cache.json";
    cache.save(path);
    auto loaded = EmbeddingCache::load(path);
    CHECK(loaded.size() == 2);
    CHECK(loaded.get("t", 1, t, e) == v);
    std::filesystem::remove(path);
  }
}
