#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "tabforge/lm/checkpoint.hpp"
#include "tabforge/lm/optimizer.hpp"
#include "tabforge/lm/tokenizer.hpp"
#include "tabforge/lm/trainer.hpp"

using namespace tabforge;
using namespace tabforge::lm;

namespace {

ModelConfig tiny(int vocab) {
  ModelConfig c;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_head = 8;
  c.vocab_size = vocab;
  c.context_len = 32;
  return c;
}

std::vector<TrainingSequence> toy_sequences() {
  std::vector<TrainingSequence> out;
  for (int i = 0; i < 6; ++i) {
    TrainingSequence s;
    for (int t = 0; t < 8; ++t) s.ids.push_back(3 + (i + t) % 7);
    s.loss_mask.assign(s.ids.size(), 0);
    for (std::size_t t = 4; t + 1 < s.ids.size(); ++t) s.loss_mask[t] = 1;
    out.push_back(s);
  }
  return out;
}

TrainConfig toy_config() {
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.max_steps = 6;
  cfg.batch_size = 2;
  cfg.grad_accum_steps = 2;
  cfg.seed = 17;
  return cfg;
}

struct Interrupt {};

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("warmup schedule") {
    const WarmupSchedule s(1e-3, 0.05, 100);
    CHECK(s.warmup_steps() == 5);
    CHECK(s.lr(1) == doctest::Approx(2e-4));
    CHECK(s.lr(5) == doctest::Approx(1e-3));
    CHECK(s.lr(50) == doctest::Approx(1e-3));
    CHECK(WarmupSchedule(1e-3, 0.05, 10).warmup_steps() == 1);
    CHECK(WarmupSchedule(1e-3, 0.0, 10).lr(1) == doctest::Approx(1e-3));
  }

  TEST_CASE("first Adam step with unit gradient moves each parameter by -lr") {
    const double lr = 1e-3, eps = 1e-8;
    Adam adam(0.9, 0.95, eps);
    std::vector<float> p(50, 0.5f);
    std::vector<double> g(50, 1.0);
    adam.step(std::span<float>(p), std::span<const double>(g), lr);
    for (float v : p) CHECK(std::abs((static_cast<double>(v) - 0.5) - (-lr / (1.0 + eps))) <= 1e-6);
    CHECK(adam.steps_taken() == 1);

    std::vector<double> q(3, 0.0);
    Adam b(0.9, 0.95, eps);
    b.step(std::span<double>(q), std::span<const double>(g.data(), 3), lr);
    for (double v : q) CHECK(std::abs(v + lr / (1.0 + eps)) <= 1e-12);
  }

  TEST_CASE("optimizer steps are ceil(micro-batches / accumulation)") {
    for (std::size_t n : {1u, 3u, 4u, 10u, 17u}) {
      std::vector<double> w(1, 0.0), gw(1, 0.0);
      TrainConfig cfg;
      cfg.learning_rate = 0.1;
      TrainState st;
      const auto res = run_training<double>(
          n, cfg, {{std::span<double>(w), std::span<double>(gw)}},
          [&](std::size_t, double weight) {
            gw[0] += weight * 2.0 * (w[0] - 1.0);
            return (w[0] - 1.0) * (w[0] - 1.0);
          },
          st);
      CHECK(res.micro_batches == n);
      CHECK(res.steps == (n + 3) / 4);
      CHECK(planned_steps(n, cfg) == (n + 3) / 4);
      CHECK(st.step == res.steps);
    }
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 2;
    CHECK(planned_steps(10, cfg) == 4);  // 15 micro-batches
  }

  TEST_CASE("sample order is a permutation per epoch") {
    SampleOrder order(7, 3);
    for (int e = 0; e < 3; ++e) {
      std::vector<int> seen(7, 0);
      for (std::size_t p = 0; p < 7; ++p) ++seen[order.at(static_cast<std::size_t>(e) * 7 + p)];
      for (int s : seen) CHECK(s == 1);
    }
  }

  TEST_CASE("non-finite loss aborts with diagnostics") {
    std::vector<double> w(1, 0.0), gw(1, 0.0);
    TrainConfig cfg;
    cfg.grad_accum_steps = 1;
    cfg.batch_size = 2;
    TrainState st;
    std::size_t poisoned = 3;
    try {
      run_training<double>(
          8, cfg, {{std::span<double>(w), std::span<double>(gw)}},
          [&](std::size_t i, double) { return i == poisoned ? std::numeric_limits<double>::quiet_NaN() : 1.0; }, st);
      FAIL("NaN loss did not abort");
    } catch (const TrainingError& e) {
      CHECK(e.step() >= 1);
      CHECK(e.sample_ids().size() == 2);
      CHECK(std::find(e.sample_ids().begin(), e.sample_ids().end(), poisoned) != e.sample_ids().end());
      CHECK(st.step == e.step() - 1);
    }
  }

  TEST_CASE("gradient clipping bounds the update direction") {
    std::vector<double> w(2, 0.0), gw(2, 0.0);
    TrainConfig cfg;
    cfg.grad_accum_steps = 1;
    cfg.grad_clip = 1e-3;
    cfg.learning_rate = 0.1;
    TrainState st;
    run_training<double>(
        1, cfg, {{std::span<double>(w), std::span<double>(gw)}},
        [&](std::size_t, double weight) {
          gw[0] += weight * 300.0;
          gw[1] += weight * 400.0;
          return 1.0;
        },
        st);
    CHECK(st.optimizers[0].first_moment()[0] == doctest::Approx(0.1 * 0.6e-3));
    CHECK(st.optimizers[0].first_moment()[1] == doctest::Approx(0.1 * 0.8e-3));
  }

  TEST_CASE("training is deterministic and lowers the loss") {
    const auto seqs = toy_sequences();
    Transformer<float> a(tiny(12), 5), b(tiny(12), 5);
    auto cfg = toy_config();
    cfg.max_steps = 30;
    const auto ra = train(a, seqs, cfg);
    const auto rb = train(b, seqs, cfg);
    CHECK(ra.losses == rb.losses);
    CHECK(std::equal(a.parameters().begin(), a.parameters().end(), b.parameters().begin()));
    CHECK(ra.losses.back() < ra.losses.front());
    CHECK(ra.learning_rates.front() < ra.learning_rates.back());
  }

  TEST_CASE("resuming from a checkpoint continues bit-exactly") {
    const auto seqs = toy_sequences();
    const auto cfg = toy_config();
    Transformer<float> full(tiny(12), 9);
    TrainState full_state;
    train(full, seqs, cfg, &full_state);

    const auto path = std::filesystem::temp_directory_path() / "tabforge_resume.ckpt";
    Transformer<float> part(tiny(12), 9);
    TrainState part_state;
    try {
      train(part, seqs, cfg, &part_state, [&](const TrainState& st) {
        if (st.step == 3) {
          save_checkpoint(path, make_checkpoint(part, static_cast<const Head<float>*>(nullptr), &st));
          throw Interrupt{};
        }
      });
    } catch (const Interrupt&) {
    }
    const auto ckpt = load_checkpoint(path);
    auto resumed = model_from_checkpoint<float>(ckpt);
    auto state = train_state_from_checkpoint(ckpt, cfg);
    CHECK(state.step == 3);
    const auto rest = train(resumed, seqs, cfg, &state);
    CHECK(rest.steps == 3);
    CHECK(state.losses == full_state.losses);
    CHECK(std::equal(resumed.parameters().begin(), resumed.parameters().end(), full.parameters().begin()));
    std::filesystem::remove(path);
  }

  TEST_CASE("training sequences score only the answer span") {
    const auto tok = Tokenizer::train({"### Answer:\nyes no"}, 10);
    PromptExample ex;
    ex.instruction = "Predict.";
    ex.table_markdown = "| a |\n| --- |\n| 1 |";
    ex.answer = "yes";
    const auto prompt = encode_prompt(tok, ex);
    CHECK(prompt.front() == Tokenizer::kBegin);
    CHECK(prompt.back() != Tokenizer::kEnd);
    const auto seq = make_training_sequence(tok, ex, LossSpan::answer_only);
    const auto answer = tok.encode("yes");
    REQUIRE(seq.ids.size() == prompt.size() + answer.size() + 1);
    CHECK(seq.ids.back() == Tokenizer::kEnd);
    std::size_t scored = 0;
    for (std::size_t t = 0; t < seq.loss_mask.size(); ++t) {
      if (seq.loss_mask[t]) {
        ++scored;
        CHECK(t + 1 >= prompt.size());
      }
    }
    CHECK(scored == answer.size() + 1);
    const auto full = make_training_sequence(tok, ex, LossSpan::full_sequence);
    CHECK(std::count(full.loss_mask.begin(), full.loss_mask.end(), 1) == static_cast<long>(full.ids.size() - 1));
  }

  TEST_CASE("over-length records are dropped and reported") {
    const auto tok = Tokenizer();
    PromptExample small, big;
    small.instruction = "x";
    small.table_markdown = "| a |";
    small.answer = "1";
    big = small;
    big.table_markdown = std::string(200, 'z');
    Transformer<float> m(tiny(tok.vocab_size()), 1);
    auto cfg = toy_config();
    cfg.max_steps = 1;
    const auto res = train(m, tok, {small, big, small}, cfg);
    CHECK(res.dropped == std::vector<std::size_t>{1});
  }
}
