#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace scd {

inline constexpr std::size_t kTextDim = 768;
inline constexpr std::size_t kSpeakerDim = 256;

enum class Label : std::uint8_t { same = 0, change = 1 };

const char* label_name(Label label);
Label parse_label(const std::string& text);

struct Token {
  std::vector<double> text_emb;     // kTextDim
  std::vector<double> speaker_vec;  // kSpeakerDim, ground-truth speaker vector
  double onset_s = 0.0;
  double offset_s = 0.0;
  int speaker_id = 0;
  Label label = Label::same;

  double midpoint_s() const { return 0.5 * (onset_s + offset_s); }
  friend bool operator==(const Token&, const Token&) = default;
};

struct SpeakerWindow {
  double start_s = 0.0;
  double end_s = 0.0;
  double midpoint_s = 0.0;
  std::vector<double> spk_emb;  // kSpeakerDim once filled by a provider
  friend bool operator==(const SpeakerWindow&, const SpeakerWindow&) = default;
};

struct Conversation {
  std::string id;
  double duration_s = 0.0;
  std::vector<Token> tokens;
  std::vector<SpeakerWindow> windows;
  friend bool operator==(const Conversation&, const Conversation&) = default;
};

using Corpus = std::vector<Conversation>;

struct CorpusConfig {
  int num_speakers = 2;
  double mean_turn_len_words = 15.0;
  int num_words = 60;
  std::pair<double, double> word_dur_range_s{0.1, 0.4};
  std::pair<double, double> inter_word_gap_s{0.05, 0.25};
  double speaker_noise_sigma = 0.1;
  double text_cue_strength = 0.5;
  int vocab_size = 500;
  int cue_vocab_size = 8;
  // Vocabulary and cue tables come from this seed so that every split of a
  // corpus family shares one lexicon.
  std::uint64_t vocab_seed = 7;
  std::uint64_t seed = 1;

  void validate() const;
};

// Conversation `index` of the corpus family defined by `config`. Each index
// has its own random stream, so conversations can be generated in any order.
Conversation generate(const CorpusConfig& config, std::uint64_t index = 0);

// Conversations first_index .. first_index + count - 1.
Corpus generate_corpus(const CorpusConfig& config, std::size_t count, std::uint64_t first_index = 0);

// Fraction of tokens labelled `change`.
double class_balance(const Corpus& corpus);

// One conversation per line; see README for the schema.
void write_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus read_corpus(const std::filesystem::path& path);

std::string conversation_to_json_line(const Conversation& conv);
// `line_number` is used in diagnostics only.
Conversation conversation_from_json_line(const std::string& line, std::size_t line_number);

// Checks ordering, timing, dimensions and the label rule; throws on violation.
void validate_conversation(const Conversation& conv);

}  // namespace scd
