#include "scd/experiment.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "scd/checkpoint.hpp"
#include "scd/error.hpp"
#include "scd/gradcheck.hpp"
#include "scd/inference.hpp"

namespace scd {

namespace fs = std::filesystem;

Corpus make_split(const ExperimentConfig& config, Split split) {
  if (split == Split::train) return generate_corpus(config.corpus, config.train_conversations, 0);
  return generate_corpus(config.corpus, config.test_conversations, config.train_conversations);
}

std::vector<Example> prepare_examples(const ExperimentConfig& config, const Corpus& corpus,
                                      Ablation ablation) {
  const SyntheticSpeakerProvider provider(config.provider_noise_sigma, config.provider_seed);
  return make_examples(corpus, provider, config.window, ablation);
}

TrainOutcome train_model(const ExperimentConfig& config, const std::vector<Example>& examples,
                         const std::function<void(const EpochMetrics&)>& on_epoch) {
  TrainOutcome out{init_model(config.model), {}};
  Trainer trainer(out.model, config.train, examples);
  trainer.run([&](const EpochMetrics& m) {
    out.history.push_back(m);
    if (on_epoch) on_epoch(m);
  });
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& config, Ablation ablation) {
  ExperimentConfig c = config;
  c.train.ablation = ablation;
  const auto train = prepare_examples(c, make_split(c, Split::train), ablation);
  const auto test = prepare_examples(c, make_split(c, Split::test), ablation);
  TrainOutcome trained = train_model(c, train);
  return {evaluate(trained.model, test, c.decode), std::move(trained.history)};
}

std::string train_corpus_path(const ExperimentConfig& c) { return (fs::path(c.output_dir) / "train.jsonl").string(); }
std::string test_corpus_path(const ExperimentConfig& c) { return (fs::path(c.output_dir) / "test.jsonl").string(); }
std::string checkpoint_path(const ExperimentConfig& c) { return (fs::path(c.output_dir) / "model.ckpt").string(); }
std::string metrics_path(const ExperimentConfig& c) { return (fs::path(c.output_dir) / "metrics.jsonl").string(); }

namespace {

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, "io_error", "cannot create directory " + dir + ": " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(f), "io_error", "cannot write " + path);
  f << text;
  require(static_cast<bool>(f), "io_error", "write failed for " + path);
}

Corpus read_existing(const std::string& path) {
  require(fs::exists(path), "missing_corpus", path + " not found; run `scd gen` first");
  return read_corpus(path);
}

// Writes to a sibling file first so an interrupted save never leaves a
// half-written checkpoint behind.
void save_atomically(const std::string& path, const Model& model, const TrainConfig& train,
                     std::size_t epoch, const OptimizerState& state) {
  const std::string tmp = path + ".tmp";
  save_checkpoint(tmp, model, train, epoch, state);
  fs::rename(tmp, path);
}

const char* ablation_row_name(Ablation a) {
  switch (a) {
    case Ablation::none:
      return "proposed";
    case Ablation::no_audio:
      return "w/o audio modality";
    case Ablation::no_text:
      return "w/o text modality";
  }
  return "?";
}

}  // namespace

void cmd_gen(const ExperimentConfig& config, std::ostream& out) {
  config.validate();
  ensure_dir(config.output_dir);
  const Corpus train = make_split(config, Split::train);
  const Corpus test = make_split(config, Split::test);
  write_corpus(train, train_corpus_path(config));
  write_corpus(test, test_corpus_path(config));
  write_text((fs::path(config.output_dir) / "config.json").string(), config_to_json(config));
  for (const auto& [name, corpus] : {std::pair{"train", &train}, std::pair{"test", &test}}) {
    std::size_t tokens = 0;
    for (const auto& c : *corpus) tokens += c.tokens.size();
    out << name << ": " << corpus->size() << " conversations, " << tokens << " tokens, change rate "
        << std::fixed << std::setprecision(4) << (corpus->empty() ? 0.0 : class_balance(*corpus)) << "\n";
  }
}

void cmd_train(const ExperimentConfig& config, bool resume, std::ostream& out) {
  config.validate();
  ensure_dir(config.output_dir);
  const Corpus corpus = read_existing(train_corpus_path(config));
  const Ablation ablation = config.train.ablation;
  const auto examples = prepare_examples(config, corpus, ablation);

  Model model = init_model(config.model);
  std::optional<Checkpoint> ck;
  if (resume && fs::exists(checkpoint_path(config))) {
    ck = load_checkpoint(checkpoint_path(config));
    require(ck->meta.model == config.model, "config_mismatch",
            "checkpoint model config differs from the requested one");
    require(ck->meta.train.ablation == ablation, "config_mismatch",
            std::string("checkpoint was trained with ablation ") + ablation_name(ck->meta.train.ablation));
    model = std::move(ck->model);
  }
  Trainer trainer(model, config.train, examples);
  if (ck) trainer.restore_progress(ck->meta.epoch, std::move(ck->optimizer));

  std::ofstream metrics(metrics_path(config), ck ? std::ios::app : std::ios::trunc);
  require(static_cast<bool>(metrics), "io_error", "cannot write " + metrics_path(config));
  trainer.run([&](const EpochMetrics& m) {
    metrics << m.to_json() << "\n";
    metrics.flush();
    save_atomically(checkpoint_path(config), model, config.train, trainer.epochs_done(), trainer.optimizer());
    out << "epoch " << m.epoch << " [" << phase_name(m.phase) << "] loss " << std::setprecision(6)
        << m.mean_loss << "\n";
  });
  save_atomically(checkpoint_path(config), model, config.train, trainer.epochs_done(), trainer.optimizer());
  out << "checkpoint " << checkpoint_path(config) << " after " << trainer.epochs_done() << " epochs\n";
}

namespace {

EvalReport evaluate_checkpoint(const ExperimentConfig& config, const std::string& ckpt_path) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const Corpus corpus = read_existing(test_corpus_path(config));
  const auto examples = prepare_examples(config, corpus, ck.meta.train.ablation);
  return evaluate(ck.model, examples, config.decode);
}

}  // namespace

void cmd_eval(const ExperimentConfig& config, std::ostream& out) {
  config.validate();
  const EvalReport r = evaluate_checkpoint(config, checkpoint_path(config));
  write_text((fs::path(config.output_dir) / "report.json").string(), r.to_json() + "\n");
  write_text((fs::path(config.output_dir) / "report.csv").string(),
             "decode,width,scores," + EvalReport::csv_header() + "\n" + decode_mode_name(config.decode.mode) +
                 "," + std::to_string(config.decode.width) + "," + score_mode_name(config.decode.scores) +
                 "," + r.csv_row() + "\n");
  out << r.to_json() << "\n";
}

void cmd_ablate(const ExperimentConfig& config, Ablation ablation, std::ostream& out) {
  config.validate();
  ExperimentConfig sub = config;
  sub.train.ablation = ablation;
  sub.output_dir = (fs::path(config.output_dir) / (std::string("ablate-") + ablation_name(ablation))).string();
  ensure_dir(sub.output_dir);
  // Both splits are shared with the parent run.
  if (!fs::exists(train_corpus_path(sub))) {
    fs::copy_file(train_corpus_path(config), train_corpus_path(sub));
    fs::copy_file(test_corpus_path(config), test_corpus_path(sub));
  }
  bool complete = false;
  if (fs::exists(checkpoint_path(sub))) {
    const CheckpointMeta meta = inspect_checkpoint(checkpoint_path(sub));
    complete = meta.epoch == sub.train.total_epochs && meta.model == sub.model && meta.train.ablation == ablation;
  }
  if (!complete) {
    std::ostringstream log;
    cmd_train(sub, true, log);
  }
  const EvalReport r = evaluate_checkpoint(sub, checkpoint_path(sub));
  write_text((fs::path(sub.output_dir) / "report.json").string(), r.to_json() + "\n");

  // Collect every finished row in table order.
  const std::string header = "system," + EvalReport::csv_header() + "\n";
  std::string body;
  for (Ablation a : {Ablation::none, Ablation::no_audio, Ablation::no_text}) {
    const fs::path rep = fs::path(config.output_dir) / (std::string("ablate-") + ablation_name(a)) / "report.csv";
    if (a == ablation) write_text(rep.string(), std::string(ablation_row_name(a)) + "," + r.csv_row() + "\n");
    if (!fs::exists(rep)) continue;
    std::ifstream in(rep);
    std::string line;
    std::getline(in, line);
    body += line + "\n";
  }
  write_text((fs::path(config.output_dir) / "ablation.csv").string(), header + body);
  out << ablation_row_name(ablation) << ": " << r.to_json() << "\n";
}

void cmd_decode(const ExperimentConfig& config, std::size_t conversation, std::ostream& out) {
  config.validate();
  const Checkpoint ck = load_checkpoint(checkpoint_path(config));
  const Corpus corpus = read_existing(test_corpus_path(config));
  require(conversation < corpus.size(), "invalid_argument",
          "conversation " + std::to_string(conversation) + " out of range (" + std::to_string(corpus.size()) +
              " in the test split)");
  const Conversation& conv = corpus[conversation];
  const SyntheticSpeakerProvider provider(config.provider_noise_sigma, config.provider_seed);
  const Example ex = make_example(conv, provider, config.window, ck.meta.train.ablation);
  const auto outputs = run_model(ck.model, std::span(&ex, 1), config.decode);
  const ConversationOutput& o = outputs.front();
  out << "# " << conv.id << " decode=" << decode_mode_name(config.decode.mode)
      << " width=" << config.decode.width << "\n";
  out << "index\tonset_s\toffset_s\ttruth\tpredicted\tp_change\n";
  for (std::size_t i = 0; i < conv.tokens.size(); ++i) {
    out << i << '\t' << std::fixed << std::setprecision(3) << conv.tokens[i].onset_s << '\t'
        << conv.tokens[i].offset_s << '\t' << label_name(o.labels[i]) << '\t' << label_name(o.predictions[i])
        << '\t' << std::setprecision(4) << o.scores[i] << "\n";
  }
}

bool cmd_gradcheck(std::ostream& out) {
  const GradcheckReport r = run_gradcheck(GradcheckConfig{});
  for (const auto& a : r.arrays) {
    out << (a.pass ? "ok   " : "FAIL ") << std::left << std::setw(32) << a.name << std::right << std::setw(7)
        << a.count << "  rel " << std::scientific << std::setprecision(3) << a.rel_error << std::defaultfloat
        << "\n";
  }
  out << (r.pass ? "gradcheck passed" : "gradcheck FAILED") << ": max rel error " << std::scientific
      << std::setprecision(3) << r.max_rel_error << std::defaultfloat << ", " << std::fixed
      << std::setprecision(1) << r.seconds << " s\n";
  return r.pass;
}

}  // namespace scd
