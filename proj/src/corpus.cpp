#include "scd/corpus.hpp"

#include <cmath>
#include <fstream>
#include <memory>
#include <mutex>
#include <random>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "scd/error.hpp"
#include "scd/random.hpp"

namespace scd {

using nlohmann::json;

const char* label_name(Label label) { return label == Label::change ? "change" : "same"; }

Label parse_label(const std::string& text) {
  if (text == "same") return Label::same;
  if (text == "change") return Label::change;
  fail("invalid_label", "unknown label '" + text + "'");
}

void CorpusConfig::validate() const {
  require(num_speakers >= 2, "invalid_config", "num_speakers must be >= 2");
  require(num_words >= 2, "invalid_config", "num_words must be >= 2");
  require(mean_turn_len_words > 1.0, "invalid_config", "mean_turn_len_words must be > 1");
  require(word_dur_range_s.first > 0.0 && word_dur_range_s.second >= word_dur_range_s.first,
          "invalid_config", "word_dur_range_s must be a positive (min, max) pair");
  require(inter_word_gap_s.first >= 0.0 && inter_word_gap_s.second >= inter_word_gap_s.first,
          "invalid_config", "inter_word_gap_s must be a non-negative (min, max) pair");
  require(speaker_noise_sigma >= 0.0, "invalid_config", "speaker_noise_sigma must be >= 0");
  require(text_cue_strength >= 0.0 && text_cue_strength <= 1.0, "invalid_config",
          "text_cue_strength must lie in [0, 1]");
  require(vocab_size >= 1 && cue_vocab_size >= 1, "invalid_config",
          "vocab_size and cue_vocab_size must be positive");
}

namespace {

// Generated values are rounded to 1e-6 so the corpus text stays compact and
// still round-trips exactly.
double quantize(double v) { return std::round(v * 1e6) / 1e6; }

std::vector<double> gaussian_vector(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  for (double& x : v) x = normal(rng);
  return v;
}

std::vector<double> sphere_point(std::mt19937_64& rng, std::size_t dim, double radius) {
  std::vector<double> v;
  double norm = 0.0;
  do {
    v = gaussian_vector(rng, dim);
    norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
  } while (norm == 0.0);
  for (double& x : v) x *= radius / norm;
  return v;
}

struct Lexicon {
  std::vector<std::vector<double>> words;
  std::vector<std::vector<double>> cues;
};

Lexicon build_lexicon(const CorpusConfig& config) {
  std::mt19937_64 rng(mix_seed(config.vocab_seed, 0));
  Lexicon lex;
  lex.words.reserve(static_cast<std::size_t>(config.vocab_size));
  for (int i = 0; i < config.vocab_size; ++i) {
    auto v = gaussian_vector(rng, kTextDim);
    for (double& x : v) x = quantize(x);
    lex.words.push_back(std::move(v));
  }
  for (int i = 0; i < config.cue_vocab_size; ++i) {
    auto v = gaussian_vector(rng, kTextDim);
    for (double& x : v) x = quantize(x);
    lex.cues.push_back(std::move(v));
  }
  return lex;
}

// The most recent lexicon is kept so per-index generation does not redraw it.
std::shared_ptr<const Lexicon> make_lexicon(const CorpusConfig& config) {
  static std::mutex mutex;
  static std::tuple<std::uint64_t, int, int> key;
  static std::shared_ptr<const Lexicon> cached;
  const auto want = std::make_tuple(config.vocab_seed, config.vocab_size, config.cue_vocab_size);
  std::lock_guard lock(mutex);
  if (!cached || key != want) {
    cached = std::make_shared<const Lexicon>(build_lexicon(config));
    key = want;
  }
  return cached;
}

Conversation generate_with(const CorpusConfig& config, const Lexicon& lex, std::uint64_t index) {
  std::mt19937_64 rng = make_rng(config.seed, index);
  std::uniform_real_distribution<double> dur(config.word_dur_range_s.first,
                                             config.word_dur_range_s.second);
  std::uniform_real_distribution<double> gap(config.inter_word_gap_s.first,
                                             config.inter_word_gap_s.second);
  std::geometric_distribution<int> extra_turn_words(1.0 / config.mean_turn_len_words);
  std::uniform_int_distribution<int> other_speaker(1, config.num_speakers - 1);
  std::uniform_int_distribution<int> first_speaker(0, config.num_speakers - 1);
  std::uniform_int_distribution<std::size_t> word_pick(0, lex.words.size() - 1);
  std::uniform_int_distribution<std::size_t> cue_pick(0, lex.cues.size() - 1);
  std::bernoulli_distribution use_cue(config.text_cue_strength);
  std::normal_distribution<double> noise(0.0, config.speaker_noise_sigma);

  std::vector<std::vector<double>> centroids;
  for (int s = 0; s < config.num_speakers; ++s) {
    centroids.push_back(sphere_point(rng, kSpeakerDim, std::sqrt(double(kSpeakerDim))));
  }

  Conversation conv;
  conv.id = "conv-" + std::to_string(config.seed) + "-" + std::to_string(index);
  int speaker = first_speaker(rng);
  // Turn lengths are geometric on {1, 2, ...} with the configured mean.
  int remaining_in_turn = 1 + extra_turn_words(rng);
  double t = gap(rng);
  for (int i = 0; i < config.num_words; ++i) {
    Token tok;
    if (remaining_in_turn == 0) {
      speaker = (speaker + other_speaker(rng)) % config.num_speakers;
      remaining_in_turn = 1 + extra_turn_words(rng);
      tok.label = Label::change;
    }
    --remaining_in_turn;
    tok.speaker_id = speaker;
    tok.onset_s = quantize(t);
    tok.offset_s = quantize(t + dur(rng));
    if (tok.offset_s <= tok.onset_s) tok.offset_s = tok.onset_s + 1e-6;
    t = tok.offset_s + gap(rng);

    const bool cue = tok.label == Label::change && use_cue(rng);
    tok.text_emb = cue ? lex.cues[cue_pick(rng)] : lex.words[word_pick(rng)];
    tok.speaker_vec = centroids[static_cast<std::size_t>(speaker)];
    if (config.speaker_noise_sigma > 0.0) {
      for (double& x : tok.speaker_vec) x += noise(rng);
    }
    for (double& x : tok.speaker_vec) x = quantize(x);
    conv.tokens.push_back(std::move(tok));
  }
  conv.duration_s = quantize(t);
  if (conv.duration_s < conv.tokens.back().offset_s) conv.duration_s = conv.tokens.back().offset_s;
  return conv;
}

}  // namespace

Conversation generate(const CorpusConfig& config, std::uint64_t index) {
  config.validate();
  return generate_with(config, *make_lexicon(config), index);
}

Corpus generate_corpus(const CorpusConfig& config, std::size_t count, std::uint64_t first_index) {
  config.validate();
  const auto lex = make_lexicon(config);
  Corpus corpus;
  corpus.reserve(count);
  for (std::size_t i = 0; i < count; ++i) corpus.push_back(generate_with(config, *lex, first_index + i));
  return corpus;
}

double class_balance(const Corpus& corpus) {
  std::size_t changes = 0, total = 0;
  for (const auto& conv : corpus) {
    for (const auto& tok : conv.tokens) {
      changes += tok.label == Label::change ? 1 : 0;
      ++total;
    }
  }
  require(total > 0, "empty_corpus", "class balance of an empty corpus");
  return static_cast<double>(changes) / static_cast<double>(total);
}

void validate_conversation(const Conversation& conv) {
  require(!conv.tokens.empty(), "invalid_conversation", "conversation " + conv.id + " has no tokens");
  for (std::size_t i = 0; i < conv.tokens.size(); ++i) {
    const Token& tok = conv.tokens[i];
    const std::string where = "conversation " + conv.id + " token " + std::to_string(i);
    require(std::isfinite(tok.onset_s) && std::isfinite(tok.offset_s) && tok.offset_s > tok.onset_s,
            "invalid_conversation", where + ": offset_s must exceed onset_s");
    require(tok.text_emb.size() == kTextDim, "invalid_conversation",
            where + ": text_emb must have " + std::to_string(kTextDim) + " values");
    require(tok.speaker_vec.empty() || tok.speaker_vec.size() == kSpeakerDim, "invalid_conversation",
            where + ": speaker_vec must have " + std::to_string(kSpeakerDim) + " values");
    if (i > 0) {
      const Token& prev = conv.tokens[i - 1];
      require(tok.onset_s > prev.onset_s, "invalid_conversation", where + ": onsets not increasing");
      const Label expected = tok.speaker_id != prev.speaker_id ? Label::change : Label::same;
      require(tok.label == expected, "invalid_conversation",
              where + ": label disagrees with speaker ids");
    } else {
      require(tok.label == Label::same, "invalid_conversation", where + ": first label must be same");
    }
  }
  require(conv.duration_s >= conv.tokens.back().offset_s, "invalid_conversation",
          "conversation " + conv.id + ": duration_s is shorter than the last token");
}

std::string conversation_to_json_line(const Conversation& conv) {
  json tokens = json::array();
  for (const auto& tok : conv.tokens) {
    json t;
    t["onset_s"] = tok.onset_s;
    t["offset_s"] = tok.offset_s;
    t["speaker_id"] = tok.speaker_id;
    t["label"] = label_name(tok.label);
    t["text_emb"] = tok.text_emb;
    if (!tok.speaker_vec.empty()) t["speaker_vec"] = tok.speaker_vec;
    tokens.push_back(std::move(t));
  }
  json j;
  j["id"] = conv.id;
  j["duration_s"] = conv.duration_s;
  j["tokens"] = std::move(tokens);
  return j.dump();
}

namespace {

[[noreturn]] void field_error(std::size_t line, const std::string& field, const std::string& what) {
  fail("parse_error", "line " + std::to_string(line) + ", field '" + field + "': " + what);
}

const json& field(const json& obj, const char* name, std::size_t line, const std::string& prefix) {
  const auto it = obj.find(name);
  if (it == obj.end()) field_error(line, prefix + name, "missing");
  return *it;
}

double number_field(const json& obj, const char* name, std::size_t line, const std::string& prefix) {
  const json& v = field(obj, name, line, prefix);
  if (!v.is_number()) field_error(line, prefix + name, "expected a number");
  return v.get<double>();
}

std::vector<double> vector_field(const json& obj, const char* name, std::size_t dim,
                                 std::size_t line, const std::string& prefix) {
  const json& v = field(obj, name, line, prefix);
  if (!v.is_array() || v.size() != dim)
    field_error(line, prefix + name, "expected an array of " + std::to_string(dim) + " numbers");
  std::vector<double> out;
  out.reserve(dim);
  for (const auto& x : v) {
    if (!x.is_number()) field_error(line, prefix + name, "non-numeric element");
    out.push_back(x.get<double>());
  }
  return out;
}

}  // namespace

Conversation conversation_from_json_line(const std::string& line, std::size_t line_number) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    fail("parse_error", "line " + std::to_string(line_number) + ": invalid JSON (" + e.what() + ")");
  }
  if (!j.is_object()) field_error(line_number, "<record>", "expected an object");
  Conversation conv;
  const json& id = field(j, "id", line_number, "");
  if (!id.is_string()) field_error(line_number, "id", "expected a string");
  conv.id = id.get<std::string>();
  conv.duration_s = number_field(j, "duration_s", line_number, "");
  const json& toks = field(j, "tokens", line_number, "");
  if (!toks.is_array() || toks.empty()) field_error(line_number, "tokens", "expected a non-empty array");
  for (std::size_t i = 0; i < toks.size(); ++i) {
    const json& t = toks[i];
    const std::string prefix = "tokens[" + std::to_string(i) + "].";
    if (!t.is_object()) field_error(line_number, prefix, "expected an object");
    Token tok;
    tok.onset_s = number_field(t, "onset_s", line_number, prefix);
    tok.offset_s = number_field(t, "offset_s", line_number, prefix);
    if (!(tok.offset_s > tok.onset_s))
      field_error(line_number, prefix + "offset_s", "offset_s must be greater than onset_s");
    const json& spk = field(t, "speaker_id", line_number, prefix);
    if (!spk.is_number_integer()) field_error(line_number, prefix + "speaker_id", "expected an integer");
    tok.speaker_id = spk.get<int>();
    const json& label = field(t, "label", line_number, prefix);
    if (!label.is_string() || (label != "same" && label != "change"))
      field_error(line_number, prefix + "label", "expected \"same\" or \"change\"");
    tok.label = parse_label(label.get<std::string>());
    tok.text_emb = vector_field(t, "text_emb", kTextDim, line_number, prefix);
    if (t.contains("speaker_vec"))
      tok.speaker_vec = vector_field(t, "speaker_vec", kSpeakerDim, line_number, prefix);
    conv.tokens.push_back(std::move(tok));
  }
  try {
    validate_conversation(conv);
  } catch (const Error& e) {
    fail("parse_error", "line " + std::to_string(line_number) + ": " + e.what());
  }
  return conv;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), "io_error", "cannot open " + path.string() + " for writing");
  for (const auto& conv : corpus) out << conversation_to_json_line(conv) << '\n';
  out.flush();
  require(static_cast<bool>(out), "io_error", "failed writing " + path.string());
}

Corpus read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "io_error", "cannot open " + path.string());
  Corpus corpus;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    corpus.push_back(conversation_from_json_line(line, number));
  }
  return corpus;
}

}  // namespace scd
