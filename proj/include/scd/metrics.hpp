#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "scd/corpus.hpp"
#include "scd/dataset.hpp"
#include "scd/model.hpp"
#include "scd/search.hpp"

namespace scd {

// Confusion counts with `change` as the positive class.
struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::size_t total() const { return tp + fp + fn + tn; }
  Counts& operator+=(const Counts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend bool operator==(const Counts&, const Counts&) = default;
};

struct PRF1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Exact position matching, no collar.
Counts count_decisions(std::span<const Label> preds, std::span<const Label> labels);
// Undefined ratios (nothing predicted, nothing to recall) are reported as 0.
PRF1 prf1_from_counts(const Counts& c);
PRF1 prf1(std::span<const Label> preds, std::span<const Label> labels);

// Equal error rate over a threshold sweep (predict change when score >= t),
// linearly interpolated at the false-alarm / miss crossing. Needs both classes.
double eer(std::span<const double> scores, std::span<const Label> labels);

struct EvalReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double eer = 0.0;  // NaN when the labels hold a single class
  Counts counts;
  std::size_t tokens = 0;

  std::string to_json() const;
  static std::string csv_header();
  std::string csv_row() const;
};

// Decisions and scores for one conversation.
struct ConversationOutput {
  std::vector<Label> predictions;
  std::vector<double> scores;
  std::vector<Label> labels;
};

// Pools all conversations (micro average) into one report.
EvalReport report_from_outputs(std::span<const ConversationOutput> outputs);

// Decodes and scores every example with `model`.
std::vector<ConversationOutput> run_model(const Model& model, std::span<const Example> examples,
                                          const DecodeConfig& config);

EvalReport evaluate(const Model& model, std::span<const Example> examples, const DecodeConfig& config);

}  // namespace scd
