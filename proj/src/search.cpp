#include "scd/search.hpp"

#include <algorithm>
#include <numeric>

#include "scd/error.hpp"

namespace scd {

const char* decode_mode_name(DecodeMode m) { return m == DecodeMode::beam ? "beam" : "greedy"; }

DecodeMode parse_decode_mode(const std::string& text) {
  if (text == "greedy") return DecodeMode::greedy;
  if (text == "beam") return DecodeMode::beam;
  fail("invalid_argument", "unknown decode mode '" + text + "' (expected greedy|beam)");
}

const char* score_mode_name(ScoreMode m) {
  return m == ScoreMode::autoregressive ? "autoregressive" : "teacher_forced";
}

ScoreMode parse_score_mode(const std::string& text) {
  if (text == "teacher_forced") return ScoreMode::teacher_forced;
  if (text == "autoregressive") return ScoreMode::autoregressive;
  fail("invalid_argument", "unknown score mode '" + text + "'");
}

namespace {

DecoderSymbol symbol_of(Label l) {
  return l == Label::change ? DecoderSymbol::change : DecoderSymbol::same;
}

}  // namespace

std::vector<Label> greedy_decode(const Model& model, const Tensor& enc_hidden, std::size_t length) {
  require(length >= 1, "invalid_argument", "decode length must be >= 1");
  const DecoderSession session(model, enc_hidden);
  auto state = session.initial_state();
  auto log_probs = binary_log_probs(session.step(state, DecoderSymbol::bos));
  // The comparison is made on accumulated scores, exactly as a width-1 beam
  // would, so rounding can never make the two disagree.
  double score = 0.0;
  std::vector<Label> out;
  out.reserve(length);
  for (std::size_t t = 0; t < length; ++t) {
    const double if_same = score + log_probs[0];
    const double if_change = score + log_probs[1];
    const Label next = if_change > if_same ? Label::change : Label::same;
    score = next == Label::change ? if_change : if_same;
    out.push_back(next);
    if (t + 1 < length) log_probs = binary_log_probs(session.step(state, symbol_of(next)));
  }
  return out;
}

std::vector<Hypothesis> beam_search(const Model& model, const Tensor& enc_hidden, std::size_t length,
                                    std::size_t width) {
  require(width >= 1, "invalid_argument", "beam width must be >= 1");
  require(length >= 1, "invalid_argument", "decode length must be >= 1");
  const DecoderSession session(model, enc_hidden);

  struct Beam {
    Hypothesis hyp;
    DecoderSession::State state;
    std::array<double, 2> next_log_probs;
  };
  struct Candidate {
    std::size_t parent;
    Label label;
    double score;
  };

  std::vector<Beam> beams(1);
  beams[0].state = session.initial_state();
  beams[0].next_log_probs = binary_log_probs(session.step(beams[0].state, DecoderSymbol::bos));

  // Lexicographic order on (parent labels ++ label), same < change.
  auto lex_less = [&](const Candidate& a, const Candidate& b) {
    const auto& la = beams[a.parent].hyp.labels;
    const auto& lb = beams[b.parent].hyp.labels;
    const auto [ia, ib] = std::mismatch(la.begin(), la.end(), lb.begin());
    if (ia != la.end()) return *ia < *ib;
    return a.label < b.label;
  };

  for (std::size_t t = 0; t < length; ++t) {
    std::vector<Candidate> cands;
    cands.reserve(beams.size() * 2);
    for (std::size_t i = 0; i < beams.size(); ++i) {
      for (Label l : {Label::same, Label::change}) {
        cands.push_back({i, l, beams[i].hyp.score + beams[i].next_log_probs[static_cast<std::size_t>(l)]});
      }
    }
    // Keeping the top `width` retains everything while 2^t <= width.
    std::sort(cands.begin(), cands.end(), [&](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      return lex_less(a, b);
    });
    if (cands.size() > width) cands.resize(width);

    std::vector<Beam> next;
    next.reserve(cands.size());
    for (const Candidate& c : cands) {
      const Beam& parent = beams[c.parent];
      Beam b;
      b.hyp.labels = parent.hyp.labels;
      b.hyp.labels.push_back(c.label);
      b.hyp.score = c.score;
      if (t + 1 < length) {
        b.state = parent.state;
        b.next_log_probs = binary_log_probs(session.step(b.state, symbol_of(c.label)));
      }
      next.push_back(std::move(b));
    }
    beams = std::move(next);
  }

  std::vector<Hypothesis> out;
  out.reserve(beams.size());
  for (auto& b : beams) out.push_back(std::move(b.hyp));
  return out;
}

std::vector<Label> beam_decode(const Model& model, const Tensor& enc_hidden, std::size_t length,
                               std::size_t width) {
  // beam_search returns hypotheses sorted best first with the tie rule applied.
  return beam_search(model, enc_hidden, length, width).front().labels;
}

std::vector<Label> decode(const Model& model, const Tensor& enc_hidden, std::size_t length,
                          const DecodeConfig& config) {
  return config.mode == DecodeMode::beam ? beam_decode(model, enc_hidden, length, config.width)
                                         : greedy_decode(model, enc_hidden, length);
}

std::vector<double> change_scores(const Model& model, const Tensor& enc_hidden,
                                  std::span<const Label> labels, std::size_t length, ScoreMode mode) {
  require(length >= 1, "invalid_argument", "score length must be >= 1");
  std::vector<Label> own_prefix;
  if (mode == ScoreMode::teacher_forced) {
    require(labels.size() == length, "invalid_argument",
            "teacher-forced scoring needs the ground-truth labels");
  } else {
    own_prefix = greedy_decode(model, enc_hidden, length);
    labels = own_prefix;
  }
  const DecoderSession session(model, enc_hidden);
  auto state = session.initial_state();
  ClassLogits logits = session.step(state, DecoderSymbol::bos);
  std::vector<double> scores;
  scores.reserve(length);
  for (std::size_t t = 0; t < length; ++t) {
    scores.push_back(change_probability(logits));
    if (t + 1 < length) logits = session.step(state, symbol_of(labels[t]));
  }
  return scores;
}

}  // namespace scd
