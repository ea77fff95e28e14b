#include "scd/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "config_json.hpp"
#include "scd/error.hpp"

namespace scd {

using nlohmann::json;

void ExperimentConfig::validate() const {
  corpus.validate();
  model.validate();
  train.validate();
  require(train_conversations >= 1, "invalid_config", "train_conversations must be >= 1");
  require(window.window_s > 0.0 && window.shift_s > 0.0, "invalid_config",
          "window length and shift must be positive");
  require(provider_noise_sigma >= 0.0, "invalid_config", "provider noise sigma must be >= 0");
  require(decode.width >= 1, "invalid_config", "decode width must be >= 1");
  const std::size_t batches = (train_conversations + train.batch_size - 1) / train.batch_size;
  require(batches * train.total_epochs > train.warmup_iters, "invalid_config",
          "warmup_iters (" + std::to_string(train.warmup_iters) + ") must be below the " +
              std::to_string(batches * train.total_epochs) + " scheduled iterations");
}

ExperimentConfig profile_config(const std::string& name) {
  ExperimentConfig c;
  c.profile = name;
  if (name == "desk") {
    c.model.model_dim = 32;
    c.model.heads = 4;
    c.model.enc_layers = 2;
    c.model.dec_layers = 1;
    c.model.ff_dim = 64;
    c.train.batch_size = 16;
    c.train.total_epochs = 100;
    c.train.tf_epochs = 80;
    c.train.warmup_iters = 100;
    c.output_dir = "runs/desk";
  } else if (name == "switchboard-like") {
    c.train.batch_size = 64;
    c.train.total_epochs = 400;
    c.train.tf_epochs = 300;
    c.train_conversations = 2000;
    c.test_conversations = 100;
    c.output_dir = "runs/switchboard-like";
  } else if (name == "ami-like") {
    c.train.batch_size = 32;
    c.train.total_epochs = 8000;
    c.train.tf_epochs = 6000;
    c.train_conversations = 150;
    c.test_conversations = 20;
    c.corpus.num_speakers = 4;
    c.corpus.num_words = 400;
    c.output_dir = "runs/ami-like";
  } else {
    fail("invalid_config", "unknown profile '" + name + "' (expected desk, switchboard-like or ami-like)");
  }
  return c;
}

namespace {

json pair_json(const std::pair<double, double>& p) { return json::array({p.first, p.second}); }

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    fail("invalid_config", "field " + where + "." + key + " has the wrong type");
  }
}

void read_pair(const json& obj, const char* key, std::pair<double, double>& out, const std::string& where) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  require(v.is_array() && v.size() == 2 && v[0].is_number() && v[1].is_number(), "invalid_config",
          "field " + where + "." + key + " must be a two-number array");
  out = {v[0].get<double>(), v[1].get<double>()};
}

const json& section(const json& root, const char* key) {
  static const json empty = json::object();
  if (!root.contains(key)) return empty;
  require(root.at(key).is_object(), "invalid_config", std::string("section ") + key + " must be an object");
  return root.at(key);
}

}  // namespace

json model_config_json(const ModelConfig& m) {
  return {{"model_dim", m.model_dim}, {"heads", m.heads},     {"enc_layers", m.enc_layers},
          {"dec_layers", m.dec_layers}, {"ff_dim", m.ff_dim}, {"dropout", m.dropout},
          {"seed", m.seed}};
}

json train_config_json(const TrainConfig& t) {
  return {{"lr_init", t.lr_init},
          {"weight_decay", t.weight_decay},
          {"lr_min", t.lr_min},
          {"warmup_iters", t.warmup_iters},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"eps", t.eps},
          {"batch_size", t.batch_size},
          {"total_epochs", t.total_epochs},
          {"tf_epochs", t.tf_epochs},
          {"ablation", ablation_name(t.ablation)},
          {"seed", t.seed}};
}

void read_model_config(const json& model, ModelConfig& m) {
  read(model, "model_dim", m.model_dim, "model");
  read(model, "heads", m.heads, "model");
  read(model, "enc_layers", m.enc_layers, "model");
  read(model, "dec_layers", m.dec_layers, "model");
  read(model, "ff_dim", m.ff_dim, "model");
  read(model, "dropout", m.dropout, "model");
  read(model, "seed", m.seed, "model");
}

void read_train_config(const json& train, TrainConfig& t) {
  read(train, "lr_init", t.lr_init, "train");
  read(train, "weight_decay", t.weight_decay, "train");
  read(train, "lr_min", t.lr_min, "train");
  read(train, "warmup_iters", t.warmup_iters, "train");
  read(train, "beta1", t.beta1, "train");
  read(train, "beta2", t.beta2, "train");
  read(train, "eps", t.eps, "train");
  read(train, "batch_size", t.batch_size, "train");
  read(train, "total_epochs", t.total_epochs, "train");
  read(train, "tf_epochs", t.tf_epochs, "train");
  read(train, "seed", t.seed, "train");
  if (train.contains("ablation")) {
    std::string a;
    read(train, "ablation", a, "train");
    t.ablation = parse_ablation(a);
  }
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["profile"] = c.profile;
  j["corpus"] = {
      {"num_speakers", c.corpus.num_speakers},
      {"mean_turn_len_words", c.corpus.mean_turn_len_words},
      {"num_words", c.corpus.num_words},
      {"word_dur_range_s", pair_json(c.corpus.word_dur_range_s)},
      {"inter_word_gap_s", pair_json(c.corpus.inter_word_gap_s)},
      {"speaker_noise_sigma", c.corpus.speaker_noise_sigma},
      {"text_cue_strength", c.corpus.text_cue_strength},
      {"vocab_size", c.corpus.vocab_size},
      {"cue_vocab_size", c.corpus.cue_vocab_size},
      {"vocab_seed", c.corpus.vocab_seed},
      {"seed", c.corpus.seed},
  };
  j["data"] = {{"train_conversations", c.train_conversations}, {"test_conversations", c.test_conversations}};
  j["alignment"] = {{"window_s", c.window.window_s},
                    {"shift_s", c.window.shift_s},
                    {"provider_noise_sigma", c.provider_noise_sigma},
                    {"provider_seed", c.provider_seed}};
  j["model"] = model_config_json(c.model);
  j["train"] = train_config_json(c.train);
  j["decode"] = {{"mode", decode_mode_name(c.decode.mode)},
                 {"width", c.decode.width},
                 {"scores", score_mode_name(c.decode.scores)}};
  j["output_dir"] = c.output_dir;
  return j.dump(2) + "\n";
}

ExperimentConfig config_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    fail("invalid_config", std::string("config is not valid JSON: ") + e.what());
  }
  require(root.is_object(), "invalid_config", "config root must be an object");
  std::string profile = "desk";
  read(root, "profile", profile, "root");
  ExperimentConfig c = profile_config(profile);

  const json& corpus = section(root, "corpus");
  read(corpus, "num_speakers", c.corpus.num_speakers, "corpus");
  read(corpus, "mean_turn_len_words", c.corpus.mean_turn_len_words, "corpus");
  read(corpus, "num_words", c.corpus.num_words, "corpus");
  read_pair(corpus, "word_dur_range_s", c.corpus.word_dur_range_s, "corpus");
  read_pair(corpus, "inter_word_gap_s", c.corpus.inter_word_gap_s, "corpus");
  read(corpus, "speaker_noise_sigma", c.corpus.speaker_noise_sigma, "corpus");
  read(corpus, "text_cue_strength", c.corpus.text_cue_strength, "corpus");
  read(corpus, "vocab_size", c.corpus.vocab_size, "corpus");
  read(corpus, "cue_vocab_size", c.corpus.cue_vocab_size, "corpus");
  read(corpus, "vocab_seed", c.corpus.vocab_seed, "corpus");
  read(corpus, "seed", c.corpus.seed, "corpus");

  const json& data = section(root, "data");
  read(data, "train_conversations", c.train_conversations, "data");
  read(data, "test_conversations", c.test_conversations, "data");

  const json& align = section(root, "alignment");
  read(align, "window_s", c.window.window_s, "alignment");
  read(align, "shift_s", c.window.shift_s, "alignment");
  read(align, "provider_noise_sigma", c.provider_noise_sigma, "alignment");
  read(align, "provider_seed", c.provider_seed, "alignment");

  read_model_config(section(root, "model"), c.model);
  read_train_config(section(root, "train"), c.train);

  const json& decode = section(root, "decode");
  if (decode.contains("mode")) {
    std::string m;
    read(decode, "mode", m, "decode");
    c.decode.mode = parse_decode_mode(m);
  }
  read(decode, "width", c.decode.width, "decode");
  if (decode.contains("scores")) {
    std::string s;
    read(decode, "scores", s, "decode");
    c.decode.scores = parse_score_mode(s);
  }
  read(root, "output_dir", c.output_dir, "root");
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "io_error", "cannot open config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

void apply_seed(ExperimentConfig& config, std::uint64_t seed) {
  config.corpus.seed = seed;
  config.model.seed = seed;
  config.train.seed = seed;
}

}  // namespace scd
