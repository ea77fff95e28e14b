#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "scd/alignment.hpp"
#include "scd/corpus.hpp"
#include "scd/dataset.hpp"
#include "scd/error.hpp"
#include "scd/fusion.hpp"

using namespace scd;
namespace fs = std::filesystem;

namespace {

CorpusConfig small_config(int words = 40) {
  CorpusConfig c;
  c.num_words = words;
  return c;
}

Token token(double on, double off, int spk, Label label) {
  Token t;
  t.onset_s = on;
  t.offset_s = off;
  t.speaker_id = spk;
  t.label = label;
  t.text_emb.assign(kTextDim, 0.1);
  t.speaker_vec.assign(kSpeakerDim, spk + 1.0);
  return t;
}

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("scd_test_" + name); }

std::size_t brute_nearest(double t, const std::vector<double>& mids) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < mids.size(); ++i)
    if (std::abs(t - mids[i]) < std::abs(t - mids[best])) best = i;
  return best;
}

}  // namespace

TEST_CASE("generated labels follow the adjacent-speaker rule") {
  const Corpus corpus = generate_corpus(small_config(), 50);
  for (const auto& conv : corpus) {
    REQUIRE(!conv.tokens.empty());
    CHECK(conv.tokens[0].label == Label::same);
    for (std::size_t i = 1; i < conv.tokens.size(); ++i) {
      const bool changed = conv.tokens[i].speaker_id != conv.tokens[i - 1].speaker_id;
      CHECK((conv.tokens[i].label == Label::change) == changed);
      CHECK(conv.tokens[i].onset_s > conv.tokens[i - 1].onset_s);
    }
    CHECK(conv.duration_s >= conv.tokens.back().offset_s);
    CHECK_NOTHROW(validate_conversation(conv));
  }
}

TEST_CASE("generation is deterministic per (config, index)") {
  const CorpusConfig c = small_config();
  const Conversation a = generate(c, 3);
  const Conversation b = generate(c, 3);
  CHECK(conversation_to_json_line(a) == conversation_to_json_line(b));
  // Order of generation does not matter.
  const Corpus batch = generate_corpus(c, 5);
  CHECK(conversation_to_json_line(batch[3]) == conversation_to_json_line(a));
  CorpusConfig other = c;
  other.seed = 2;
  CHECK(conversation_to_json_line(generate(other, 3)) != conversation_to_json_line(a));
}

TEST_CASE("speaker centroids sit on the sqrt(256) sphere") {
  CorpusConfig c = small_config();
  c.speaker_noise_sigma = 0.0;
  for (const auto& t : generate(c, 0).tokens) {
    double n = 0.0;
    for (double v : t.speaker_vec) n += v * v;
    CHECK(std::sqrt(n) == doctest::Approx(16.0).epsilon(1e-5));
  }
}

TEST_CASE("change rate tracks the mean turn length") {
  CorpusConfig c = small_config(60);
  const double rate15 = class_balance(generate_corpus(c, 300));
  CHECK(rate15 == doctest::Approx(1.0 / 15).epsilon(0.3));
  CHECK(rate15 < 0.10);
  c.mean_turn_len_words = 5.0;
  const double rate5 = class_balance(generate_corpus(c, 300));
  c.mean_turn_len_words = 30.0;
  const double rate30 = class_balance(generate_corpus(c, 300));
  CHECK(rate5 > rate15);
  CHECK(rate15 > rate30);
}

TEST_CASE("a single long turn has no change labels") {
  CorpusConfig c = small_config(20);
  c.mean_turn_len_words = 1e9;
  for (const auto& conv : generate_corpus(c, 20)) CHECK(class_balance({conv}) == 0.0);
}

TEST_CASE("class balance fixtures") {
  Conversation same;
  same.id = "s";
  for (int i = 0; i < 5; ++i) same.tokens.push_back(token(i, i + 0.5, 0, Label::same));
  CHECK(class_balance({same}) == 0.0);

  Conversation alt;
  alt.id = "a";
  for (int i = 0; i < 6; ++i) alt.tokens.push_back(token(i, i + 0.5, i % 2, i == 0 ? Label::same : Label::change));
  CHECK(class_balance({alt}) == doctest::Approx(5.0 / 6.0));
  CHECK_THROWS_AS(class_balance({}), Error);
}

TEST_CASE("invalid corpus configs are rejected") {
  CorpusConfig c;
  c.num_words = 1;
  CHECK_THROWS_AS(generate(c, 0), Error);
  c = CorpusConfig{};
  c.num_speakers = 1;
  CHECK_THROWS_AS(generate(c, 0), Error);
}

TEST_CASE("corpus files round-trip") {
  const Corpus corpus = generate_corpus(small_config(12), 1000);
  const fs::path p = temp_file("roundtrip.jsonl");
  write_corpus(corpus, p);
  const Corpus back = read_corpus(p);
  REQUIRE(back.size() == corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    CHECK(back[i].id == corpus[i].id);
    CHECK(back[i].duration_s == corpus[i].duration_s);
    REQUIRE(back[i].tokens.size() == corpus[i].tokens.size());
    for (std::size_t k = 0; k < corpus[i].tokens.size(); ++k) {
      const Token &a = corpus[i].tokens[k], &b = back[i].tokens[k];
      CHECK(a.onset_s == b.onset_s);
      CHECK(a.offset_s == b.offset_s);
      CHECK(a.speaker_id == b.speaker_id);
      CHECK(a.label == b.label);
      CHECK(a.text_emb == b.text_emb);
      CHECK(a.speaker_vec == b.speaker_vec);
    }
  }
  fs::remove(p);
}

TEST_CASE("empty corpus file reads as an empty corpus") {
  const fs::path p = temp_file("empty.jsonl");
  std::ofstream(p).close();
  CHECK(read_corpus(p).empty());
  fs::remove(p);
}

TEST_CASE("malformed records name the line and field") {
  Conversation conv = generate(small_config(4), 0);
  std::string good = conversation_to_json_line(conv);
  conv.tokens[2].offset_s = conv.tokens[2].onset_s;
  const std::string bad = conversation_to_json_line(conv);
  const fs::path p = temp_file("bad.jsonl");
  {
    std::ofstream f(p);
    f << good << "\n" << bad << "\n";
  }
  try {
    read_corpus(p);
    FAIL("expected an error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("line 2") != std::string::npos);
    CHECK(msg.find("offset") != std::string::npos);
  }
  {
    std::ofstream f(p);
    f << R"({"id":"x","duration_s":1.0,"tokens":[{"onset_s":0.1}]})" << "\n";
  }
  try {
    read_corpus(p);
    FAIL("expected an error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("line 1") != std::string::npos);
    CHECK(msg.find("offset_s") != std::string::npos);
  }
  fs::remove(p);
}

TEST_CASE("window grid examples") {
  auto starts = [](double dur) {
    std::vector<double> s;
    for (const auto& w : window_grid(dur)) s.push_back(w.start_s);
    return s;
  };
  CHECK(starts(3.0) == std::vector<double>{0.0, 0.5, 1.0, 1.5});
  std::vector<double> mids;
  for (const auto& w : window_grid(3.0)) mids.push_back(w.midpoint_s);
  CHECK(mids == std::vector<double>{0.75, 1.25, 1.75, 2.25});
  const auto one = window_grid(1.0);
  REQUIRE(one.size() == 1);
  CHECK(one[0].end_s == 1.0);
  CHECK(one[0].midpoint_s == 0.5);
  const auto exact = window_grid(1.5);
  REQUIRE(exact.size() == 1);
  CHECK(exact[0].midpoint_s == 0.75);
  CHECK_THROWS_AS(window_grid(0.0), Error);
  CHECK_THROWS_AS(window_grid(2.0, {1.5, 0.0}), Error);
  CHECK_THROWS_AS(window_grid(2.0, {-1.0, 0.5}), Error);
}

TEST_CASE("assign_window examples") {
  const std::vector<double> mids = {0.75, 1.25, 1.75, 2.25};
  CHECK(assign_window(1.9, mids) == 2);
  const std::vector<double> two = {0.75, 1.25};
  CHECK(assign_window(1.0, two) == 0);
  const std::vector<double> single = {0.5};
  CHECK(assign_window(7.0, single) == 0);
  CHECK(assign_window(9.0, mids) == 3);
  CHECK_THROWS_AS(assign_window(1.0, std::vector<double>{}), Error);
}

TEST_CASE("shared windows for close tokens") {
  Conversation conv;
  conv.id = "pair";
  conv.tokens = {token(0.65, 0.75, 0, Label::same), token(0.75, 0.85, 0, Label::same)};
  conv.duration_s = 1.75;
  const AlignedSequence seq = align_conversation(conv, SyntheticSpeakerProvider());
  CHECK(seq.window_index == std::vector<std::size_t>{0, 0});
  for (std::size_t c = 0; c < kSpeakerDim; ++c) CHECK(seq.speaker(0, c) == seq.speaker(1, c));
}

TEST_CASE("synthetic provider averages overlapping speakers") {
  Conversation conv;
  conv.id = "mix";
  conv.tokens = {token(0.0, 0.5, 0, Label::same), token(0.5, 1.5, 1, Label::change)};
  conv.duration_s = 1.5;
  const auto windows = window_grid(conv.duration_s);
  const auto emb = SyntheticSpeakerProvider().embed(conv, windows);
  REQUIRE(emb.size() == 1);
  // One third of the window is speaker 0 (value 1), two thirds speaker 1 (value 2).
  CHECK(emb[0][0] == doctest::Approx(1.0 / 3.0 + 2.0 * 2.0 / 3.0));
}

TEST_CASE("assignment equals brute-force nearest midpoint") {
  std::mt19937_64 rng(1234);
  std::uniform_real_distribution<double> dur(0.2, 30.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const double d = dur(rng);
    std::vector<double> mids;
    for (const auto& w : window_grid(d)) mids.push_back(w.midpoint_s);
    std::uniform_real_distribution<double> pos(-0.5, d + 0.5);
    for (int k = 0; k < 20; ++k) {
      const double t = pos(rng);
      CHECK(assign_window(t, mids) == brute_nearest(t, mids));
    }
    // Exact ties between neighbours resolve to the lower index.
    if (mids.size() >= 2) CHECK(assign_window(0.5 * (mids[0] + mids[1]), mids) == 0);
  }
}

TEST_CASE("assignment is monotone and covers every token") {
  const Corpus corpus = generate_corpus(small_config(), 30);
  for (const auto& conv : corpus) {
    const AlignedSequence seq = align_conversation(conv, SyntheticSpeakerProvider());
    const auto windows = window_grid(conv.duration_s);
    REQUIRE(seq.length() == conv.tokens.size());
    for (std::size_t i = 0; i < seq.length(); ++i) {
      CHECK(seq.window_index[i] < windows.size());
      if (i > 0) CHECK(seq.window_index[i] >= seq.window_index[i - 1]);
      if (conv.duration_s >= 1.5)
        CHECK(std::abs(conv.tokens[i].midpoint_s() - windows[seq.window_index[i]].midpoint_s) <= 1.5);
    }
  }
}

TEST_CASE("providers with the wrong dimension are rejected") {
  struct Bad final : SpeakerEmbeddingProvider {
    std::vector<std::vector<double>> embed(const Conversation&, std::span<const SpeakerWindow> w) const override {
      return std::vector<std::vector<double>>(w.size(), std::vector<double>(8, 1.0));
    }
  };
  CHECK_THROWS_AS(align_conversation(generate(small_config(), 0), Bad()), Error);
}

TEST_CASE("magnitude normalization") {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> n(0.0, 3.0);
  for (std::size_t dim : {4u, 256u, 768u}) {
    for (int trial = 0; trial < 10000 / 3; ++trial) {
      std::vector<double> v(dim);
      for (double& x : v) x = n(rng);
      const auto u = magnitude_normalize(v);
      double s = 0.0;
      for (double x : u) s += x * x;
      CHECK(std::abs(std::sqrt(s) - std::sqrt(static_cast<double>(dim))) < 1e-9);
    }
  }
  CHECK_THROWS_AS(magnitude_normalize(std::vector<double>(4, 0.0)), Error);
}

TEST_CASE("positional encoding values") {
  const auto p0 = positional_encoding(0, 8);
  for (std::size_t i = 0; i < 8; ++i) CHECK(p0[i] == (i % 2 == 0 ? 0.0 : 1.0));
  const auto p3 = positional_encoding(3, 8);
  CHECK(p3[0] == doctest::Approx(std::sin(3.0)));
  CHECK(p3[1] == doctest::Approx(std::cos(3.0)));
  CHECK(p3[2] == doctest::Approx(std::sin(3.0 / std::pow(10000.0, 2.0 / 8))));
  CHECK(p3[5] == doctest::Approx(std::cos(3.0 / std::pow(10000.0, 4.0 / 8))));
  const Tensor table = positional_table(4, 8, 2);
  for (std::size_t c = 0; c < 8; ++c) CHECK(table(1, c) == p3[c]);
}

TEST_CASE("fused inputs and ablations") {
  const Conversation conv = generate(small_config(10), 1);
  const AlignedSequence seq = align_conversation(conv, SyntheticSpeakerProvider());
  const Tensor full = fused_input_matrix(seq);
  const Tensor no_audio = fused_input_matrix(seq, Ablation::no_audio);
  const Tensor no_text = fused_input_matrix(seq, Ablation::no_text);
  REQUIRE(full.cols() == 1024);
  for (std::size_t r = 0; r < full.rows(); ++r) {
    double ns = 0.0, nt = 0.0;
    for (std::size_t c = 0; c < 1024; ++c) {
      (c < 256 ? ns : nt) += full(r, c) * full(r, c);
      if (c < 256) {
        CHECK(no_audio(r, c) == 0.0);
        CHECK(no_text(r, c) == full(r, c));
      } else {
        CHECK(no_text(r, c) == 0.0);
        CHECK(no_audio(r, c) == full(r, c));
      }
    }
    CHECK(std::sqrt(ns) == doctest::Approx(16.0));
    CHECK(std::sqrt(nt) == doctest::Approx(std::sqrt(768.0)));
  }
  CHECK(parse_ablation("no_text") == Ablation::no_text);
  CHECK(std::string(ablation_name(Ablation::no_audio)) == "no_audio");
  CHECK_THROWS_AS(parse_ablation("both"), Error);
}

TEST_CASE("single-row fusion matches the batched projection") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n;
  Tensor w = Tensor::matrix(1024, 8), b({8}, 0.0);
  for (double& v : w.values()) v = 0.05 * n(rng);
  for (double& v : b.values()) v = n(rng);
  const Conversation conv = generate(small_config(6), 2);
  const AlignedSequence seq = align_conversation(conv, SyntheticSpeakerProvider());
  ad::Tape tape;
  const ad::Var all = project_with_position(tape.constant(fused_input_matrix(seq)), tape.constant(w),
                                            tape.constant(b), RunMode::eval());
  for (std::size_t pos = 0; pos < seq.length(); ++pos) {
    const auto row = fuse_encoder_input(seq.speaker.row(pos), seq.text.row(pos), pos, w, b, RunMode::eval());
    for (std::size_t c = 0; c < 8; ++c) CHECK(row[c] == doctest::Approx(all.value()(pos, c)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(fuse_encoder_input(std::vector<double>(10, 1.0), seq.text.row(0), 0, w, b, RunMode::eval()),
                  Error);
}

TEST_CASE("examples carry fused inputs and labels") {
  const Corpus corpus = generate_corpus(small_config(15), 3);
  const auto examples = make_examples(corpus, SyntheticSpeakerProvider(), {}, Ablation::none);
  REQUIRE(examples.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(examples[i].id == corpus[i].id);
    CHECK(examples[i].fused.rows() == 15);
    CHECK(examples[i].length() == 15);
  }
}
