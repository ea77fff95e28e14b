#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "scd/config.hpp"
#include "scd/dataset.hpp"
#include "scd/metrics.hpp"

namespace scd {

enum class Split { train, test };

// Train conversations are indices [0, n_train); test ones follow them, so the
// two splits never share a conversation but do share the lexicon.
Corpus make_split(const ExperimentConfig& config, Split split);
std::vector<Example> prepare_examples(const ExperimentConfig& config, const Corpus& corpus,
                                      Ablation ablation);

struct TrainOutcome {
  Model model;
  std::vector<EpochMetrics> history;
};

// Fresh model trained on `examples` with config.train (ablation already
// applied to the examples).
TrainOutcome train_model(const ExperimentConfig& config, const std::vector<Example>& examples,
                         const std::function<void(const EpochMetrics&)>& on_epoch = {});

// In-memory gen -> train -> eval with one ablation setting.
struct ExperimentResult {
  EvalReport report;
  std::vector<EpochMetrics> history;
};
ExperimentResult run_experiment(const ExperimentConfig& config, Ablation ablation);

// Files under config.output_dir.
std::string train_corpus_path(const ExperimentConfig& config);
std::string test_corpus_path(const ExperimentConfig& config);
std::string checkpoint_path(const ExperimentConfig& config);
std::string metrics_path(const ExperimentConfig& config);

// Command bodies. Each writes a short summary to `out` and throws scd::Error
// on failure.
void cmd_gen(const ExperimentConfig& config, std::ostream& out);
void cmd_train(const ExperimentConfig& config, bool resume, std::ostream& out);
void cmd_eval(const ExperimentConfig& config, std::ostream& out);
// Trains (or reuses) the model for `ablation` under <output_dir>/ablate-<name>,
// evaluates it and rewrites ablation.csv with every row trained so far.
void cmd_ablate(const ExperimentConfig& config, Ablation ablation, std::ostream& out);
void cmd_decode(const ExperimentConfig& config, std::size_t conversation, std::ostream& out);
// Returns true when every array passes.
bool cmd_gradcheck(std::ostream& out);

}  // namespace scd
