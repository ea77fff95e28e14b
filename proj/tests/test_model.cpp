#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <limits>

#include "helpers.hpp"
#include "scd/dataset.hpp"
#include "scd/error.hpp"
#include "scd/model.hpp"
#include "scd/parallel.hpp"
#include "scd/trainer.hpp"

using namespace scd;
using namespace scd::testing;

namespace {

ModelConfig tiny_model(std::uint64_t seed = 3) {
  ModelConfig m;
  m.model_dim = 16;
  m.heads = 2;
  m.enc_layers = 1;
  m.dec_layers = 1;
  m.ff_dim = 32;
  m.dropout = 0.0;
  m.seed = seed;
  return m;
}

std::vector<Example> tiny_examples(std::size_t count, int words = 8) {
  CorpusConfig c;
  c.num_words = words;
  c.mean_turn_len_words = 3.0;
  return make_examples(generate_corpus(c, count), SyntheticSpeakerProvider(), {}, Ablation::none);
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.batch_size = 3;
  t.total_epochs = 4;
  t.tf_epochs = 2;
  t.warmup_iters = 2;
  return t;
}

}  // namespace

TEST_CASE("initialization is deterministic in the seed") {
  const Model a = init_model(tiny_model());
  const Model b = init_model(tiny_model());
  CHECK(a.params == b.params);
  CHECK(!(init_model(tiny_model(4)).params == a.params));

  const Tensor& w = a.params[a.head_w];
  const double bound = std::sqrt(6.0 / (16 + 3));
  for (double v : w.values()) CHECK(std::abs(v) <= bound);
  for (double v : a.params[a.head_b].values()) CHECK(v == 0.0);
  for (double v : a.params[a.enc_norm_gain].values()) CHECK(v == 1.0);
  CHECK(a.params[a.label_table].shape() == std::vector<std::size_t>{3, 768});
}

TEST_CASE("invalid model configs are rejected") {
  ModelConfig m = tiny_model();
  m.heads = 3;
  CHECK_THROWS_AS(init_model(m), Error);
  m = tiny_model();
  m.enc_layers = 0;
  CHECK_THROWS_AS(init_model(m), Error);
  m = tiny_model();
  m.dropout = 1.0;
  CHECK_THROWS_AS(init_model(m), Error);
}

TEST_CASE("decoder inputs and targets") {
  const std::vector<Label> y = {Label::same, Label::change, Label::same};
  CHECK(decoder_input_ids(y) == std::vector<std::size_t>{0, 1, 2, 1});
  CHECK(training_targets(y) == std::vector<std::size_t>{0, 1, 0, 2});
  CHECK(decoder_input_ids({}) == std::vector<std::size_t>{0});
}

TEST_CASE("decoder logits are causal in the label prefix") {
  const Model model = init_model(tiny_model());
  const auto ex = tiny_examples(1).front();
  const std::vector<std::size_t> ids = {0, 1, 1, 2, 1, 1, 2, 1, 1};
  ad::Tape t1;
  const ad::Var enc1 = encode(t1, model, ex.fused, RunMode::eval());
  const Tensor base = decode_logits(t1, model, ids, enc1, RunMode::eval()).value();
  REQUIRE(base.rows() == ids.size());
  for (std::size_t k = 1; k < ids.size(); ++k) {
    std::vector<std::size_t> changed = ids;
    changed[k] = ids[k] == 1 ? 2 : 1;
    ad::Tape t2;
    const ad::Var enc2 = encode(t2, model, ex.fused, RunMode::eval());
    const Tensor other = decode_logits(t2, model, changed, enc2, RunMode::eval()).value();
    for (std::size_t r = 0; r < k; ++r)
      for (std::size_t c = 0; c < kNumClasses; ++c) CHECK(other(r, c) == base(r, c));
    bool moved = false;
    for (std::size_t c = 0; c < kNumClasses; ++c) moved |= other(k, c) != base(k, c);
    CHECK(moved);
  }
}

TEST_CASE("encoder sees the whole sequence") {
  const Model model = init_model(tiny_model());
  const auto ex = tiny_examples(1).front();
  Tensor shifted = ex.fused;
  const std::size_t last = shifted.rows() - 1;
  for (std::size_t c = 0; c < shifted.cols(); ++c) shifted(last, c) *= -1.0;
  ad::Tape t;
  const Tensor a = encode(t, model, ex.fused, RunMode::eval()).value();
  const Tensor b = encode(t, model, shifted, RunMode::eval()).value();
  CHECK(a(0, 0) != b(0, 0));
}

TEST_CASE("sequence loss needs a trailing eos") {
  ad::Tape t;
  const ad::Var logits = t.constant(Tensor::matrix(3, 3, 0.0));
  const std::vector<std::size_t> good = {0, 1, 2};
  CHECK(sequence_loss(logits, good).value()[0] == doctest::Approx(std::log(3.0)));
  const std::vector<std::size_t> no_eos = {0, 1, 0};
  CHECK_THROWS_AS(sequence_loss(logits, no_eos), Error);
  const std::vector<std::size_t> short_targets = {0, 2};
  CHECK_THROWS_AS(sequence_loss(logits, short_targets), Error);
}

TEST_CASE("learning-rate schedule") {
  TrainConfig cfg;  // lr 1e-3, min 5e-6, warmup 1000
  const std::size_t total = 5001;
  CHECK(lr_at(0, total, cfg) == 0.0);
  CHECK(lr_at(500, total, cfg) == doctest::Approx(5e-4).epsilon(1e-15));
  CHECK(lr_at(1000, total, cfg) == 1e-3);
  CHECK(lr_at(total - 1, total, cfg) == 5e-6);
  // Both branches meet at the warmup boundary.
  const double warm_limit = cfg.lr_init * 1000.0 / 1000.0;
  CHECK(std::abs(lr_at(1000, total, cfg) - warm_limit) <= 1e-12);
  CHECK(std::abs(lr_at(1001, total, cfg) - lr_at(999, total, cfg)) < 2e-6);
  const double mid = lr_at(1000 + (total - 1 - 1000) / 2, total, cfg);
  CHECK(mid == doctest::Approx(0.5 * (1e-3 + 5e-6)).epsilon(1e-12));
  for (std::size_t i = 1001; i < total; ++i) CHECK(lr_at(i, total, cfg) <= lr_at(i - 1, total, cfg));
  CHECK_THROWS_AS(lr_at(total, total, cfg), Error);
  CHECK_THROWS_AS(lr_at(0, 1000, cfg), Error);
}

TEST_CASE("one AdamW step matches the closed form") {
  ParamSet params;
  params.add("w", Tensor::vector({1.0, -2.0, 0.5}));
  OptimizerState state = make_optimizer_state(params);
  TrainConfig cfg;
  cfg.weight_decay = 0.01;
  const double lr = 0.1;
  const Gradients g = {Tensor::vector({0.5, -0.25, 0.0})};
  adamw_step(params, g, state, lr, cfg);
  CHECK(state.step == 1);
  const std::vector<double> p0 = {1.0, -2.0, 0.5};
  for (std::size_t k = 0; k < 3; ++k) {
    const double gk = g[0][k];
    // Bias correction makes the first moment ratio g / (|g| + eps).
    const double expect = p0[k] - lr * cfg.weight_decay * p0[k] - lr * gk / (std::abs(gk) + cfg.eps);
    CHECK(params.at(0)[k] == doctest::Approx(expect).epsilon(1e-12));
    CHECK(state.m[0][k] == doctest::Approx(0.1 * gk));
    CHECK(state.v[0][k] == doctest::Approx(0.001 * gk * gk));
  }
}

TEST_CASE("AdamW refuses non-finite gradients and leaves state untouched") {
  ParamSet params;
  params.add("w", Tensor::vector({1.0, 2.0}));
  OptimizerState state = make_optimizer_state(params);
  const ParamSet before = params;
  const Gradients g = {Tensor::vector({0.1, std::numeric_limits<double>::quiet_NaN()})};
  CHECK_THROWS_AS(adamw_step(params, g, state, 0.1, TrainConfig{}), Error);
  CHECK(params == before);
  CHECK(state.step == 0);
  CHECK_THROWS_AS(adamw_step(params, Gradients{}, state, 0.1, TrainConfig{}), Error);
}

TEST_CASE("sequence gradient matches finite differences on the head") {
  const Model model = init_model(tiny_model());
  const auto ex = tiny_examples(1, 5).front();
  const SequenceGradient sg = sequence_gradient(model, ex, ex.labels, RunMode::eval());
  const std::size_t head = model.head_b.index;
  for (std::size_t k = 0; k < 3; ++k) {
    Model up = model, down = model;
    up.params.at(head)[k] += 1e-6;
    down.params.at(head)[k] -= 1e-6;
    const double num = (sequence_gradient(up, ex, ex.labels, RunMode::eval()).loss -
                        sequence_gradient(down, ex, ex.labels, RunMode::eval()).loss) /
                       2e-6;
    CHECK(sg.grads[head][k] == doctest::Approx(num).epsilon(1e-5));
  }
}

TEST_CASE("training is deterministic and independent of the worker count") {
  const auto data = tiny_examples(7);
  auto train = [&] {
    Model m = init_model(tiny_model());
    Trainer tr(m, tiny_train(), data);
    tr.run();
    return m.params;
  };
  const ParamSet a = train();
  CHECK(a == train());
  setenv("SCD_THREADS", "1", 1);
  const ParamSet single = train();
  unsetenv("SCD_THREADS");
  CHECK(single == a);
  CHECK(!(a == init_model(tiny_model()).params));
}

TEST_CASE("training lowers the loss on a small set") {
  const auto data = tiny_examples(6);
  Model m = init_model(tiny_model());
  TrainConfig cfg = tiny_train();
  cfg.lr_init = 3e-3;
  cfg.total_epochs = 30;
  cfg.tf_epochs = 30;
  Trainer tr(m, cfg, data);
  std::vector<double> losses;
  tr.run([&](const EpochMetrics& e) { losses.push_back(e.mean_loss); });
  REQUIRE(losses.size() == 30);
  CHECK(losses.back() < 0.7 * losses.front());
}

TEST_CASE("phases follow the schedule") {
  const auto data = tiny_examples(4);
  Model m = init_model(tiny_model());
  Trainer tr(m, tiny_train(), data);
  std::vector<Phase> phases;
  tr.run([&](const EpochMetrics& e) { phases.push_back(e.phase); });
  CHECK(phases == std::vector<Phase>{Phase::teacher_forcing, Phase::teacher_forcing, Phase::autoregressive,
                                     Phase::autoregressive});
  CHECK(tr.batches_per_epoch() == 2);
  CHECK(tr.total_iterations() == 8);
  CHECK(tr.iterations_done() == 8);
}

TEST_CASE("resuming reproduces an uninterrupted run") {
  const auto data = tiny_examples(5);
  Model full = init_model(tiny_model());
  Trainer a(full, tiny_train(), data);
  a.run();

  Model part = init_model(tiny_model());
  Trainer b(part, tiny_train(), data);
  b.train_next_epoch();
  b.train_next_epoch();
  b.train_next_epoch();
  Model resumed = part;
  Trainer c(resumed, tiny_train(), data);
  c.restore_progress(b.epochs_done(), b.optimizer());
  c.run();
  CHECK(c.epochs_done() == 4);
  CHECK(resumed.params == full.params);
}

TEST_CASE("own prefix is the greedy decode") {
  const auto data = tiny_examples(1);
  Model m = init_model(tiny_model());
  Trainer tr(m, tiny_train(), data);
  const auto prefix = tr.own_prefix(data.front());
  CHECK(prefix.size() == data.front().length());
}

TEST_CASE("trainer rejects unusable configs") {
  Model m = init_model(tiny_model());
  TrainConfig cfg = tiny_train();
  cfg.tf_epochs = 5;
  CHECK_THROWS_AS(Trainer(m, cfg, tiny_examples(2)), Error);
  CHECK_THROWS_AS(Trainer(m, tiny_train(), {}), Error);
}

TEST_CASE("parallel_for visits each index once") {
  std::vector<int> hits(1000, 0);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) CHECK(h == 1);
  CHECK_THROWS_AS(parallel_for(10, [](std::size_t i) {
                    if (i == 7) fail("boom", "index 7");
                  }),
                  Error);
}
