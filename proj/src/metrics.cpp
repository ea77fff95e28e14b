#include "scd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "scd/error.hpp"
#include "scd/inference.hpp"
#include "scd/parallel.hpp"

namespace scd {

Counts count_decisions(std::span<const Label> preds, std::span<const Label> labels) {
  require(preds.size() == labels.size(), "shape_mismatch",
          "predictions (" + std::to_string(preds.size()) + ") and labels (" +
              std::to_string(labels.size()) + ") differ in length");
  Counts c;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool p = preds[i] == Label::change;
    const bool t = labels[i] == Label::change;
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

PRF1 prf1_from_counts(const Counts& c) {
  PRF1 r;
  if (c.tp + c.fp > 0) r.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0) r.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  if (r.precision + r.recall > 0.0) r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

PRF1 prf1(std::span<const Label> preds, std::span<const Label> labels) {
  return prf1_from_counts(count_decisions(preds, labels));
}

double eer(std::span<const double> scores, std::span<const Label> labels) {
  require(scores.size() == labels.size(), "shape_mismatch", "scores and labels differ in length");
  std::vector<std::pair<double, bool>> items;
  items.reserve(scores.size());
  std::size_t positives = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    require(std::isfinite(scores[i]), "non_finite", "EER score is not finite");
    const bool pos = labels[i] == Label::change;
    positives += pos ? 1 : 0;
    items.emplace_back(scores[i], pos);
  }
  const std::size_t negatives = items.size() - positives;
  require(positives > 0 && negatives > 0, "single_class",
          "EER needs at least one change and one same label");
  std::sort(items.begin(), items.end());

  // Operating points for thresholds at each distinct score (ascending), then
  // +inf. Accepting everything at the lowest score gives FA = 1, miss = 0.
  const double P = static_cast<double>(positives), N = static_cast<double>(negatives);
  std::size_t neg_below = 0, pos_below = 0;
  double prev_fa = 1.0, prev_miss = 0.0;
  std::size_t i = 0;
  while (true) {
    double fa, miss;
    if (i == 0) {
      fa = 1.0;
      miss = 0.0;
    } else {
      fa = (N - static_cast<double>(neg_below)) / N;
      miss = static_cast<double>(pos_below) / P;
    }
    const double diff = fa - miss;
    if (diff == 0.0) return fa;
    if (diff < 0.0) {
      const double prev_diff = prev_fa - prev_miss;
      const double alpha = prev_diff / (prev_diff - diff);
      return prev_fa + alpha * (fa - prev_fa);
    }
    prev_fa = fa;
    prev_miss = miss;
    if (i == items.size()) break;
    // Move the threshold past every item tied at this score.
    const double s = items[i].first;
    while (i < items.size() && items[i].first == s) {
      if (items[i].second) ++pos_below;
      else ++neg_below;
      ++i;
    }
  }
  // Unreachable: at +inf FA = 0 and miss = 1.
  return prev_fa;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["precision"] = precision;
  j["recall"] = recall;
  j["f1"] = f1;
  if (std::isnan(eer)) j["eer"] = nullptr;
  else j["eer"] = eer;
  j["tp"] = counts.tp;
  j["fp"] = counts.fp;
  j["fn"] = counts.fn;
  j["tn"] = counts.tn;
  j["tokens"] = tokens;
  return j.dump();
}

std::string EvalReport::csv_header() { return "precision,recall,f1,eer,tp,fp,fn,tn,tokens"; }

std::string EvalReport::csv_row() const {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed << precision << ',' << recall << ',' << f1 << ',';
  if (std::isnan(eer)) out << "nan";
  else out << eer;
  out << ',' << counts.tp << ',' << counts.fp << ',' << counts.fn << ',' << counts.tn << ',' << tokens;
  return out.str();
}

EvalReport report_from_outputs(std::span<const ConversationOutput> outputs) {
  require(!outputs.empty(), "empty_corpus", "nothing to evaluate");
  EvalReport r;
  std::vector<double> scores;
  std::vector<Label> labels;
  for (const auto& o : outputs) {
    r.counts += count_decisions(o.predictions, o.labels);
    require(o.scores.size() == o.labels.size(), "shape_mismatch", "scores and labels differ in length");
    scores.insert(scores.end(), o.scores.begin(), o.scores.end());
    labels.insert(labels.end(), o.labels.begin(), o.labels.end());
  }
  const PRF1 p = prf1_from_counts(r.counts);
  r.precision = p.precision;
  r.recall = p.recall;
  r.f1 = p.f1;
  r.tokens = r.counts.total();
  const bool has_pos = std::find(labels.begin(), labels.end(), Label::change) != labels.end();
  const bool has_neg = std::find(labels.begin(), labels.end(), Label::same) != labels.end();
  r.eer = has_pos && has_neg ? eer(scores, labels) : std::numeric_limits<double>::quiet_NaN();
  return r;
}

std::vector<ConversationOutput> run_model(const Model& model, std::span<const Example> examples,
                                          const DecodeConfig& config) {
  std::vector<ConversationOutput> outputs(examples.size());
  parallel_for(examples.size(), [&](std::size_t i) {
    const Example& ex = examples[i];
    const Tensor enc = encode_eval(model, ex.fused);
    outputs[i].predictions = decode(model, enc, ex.length(), config);
    outputs[i].scores = change_scores(model, enc, ex.labels, ex.length(), config.scores);
    outputs[i].labels = ex.labels;
  });
  return outputs;
}

EvalReport evaluate(const Model& model, std::span<const Example> examples, const DecodeConfig& config) {
  require(!examples.empty(), "empty_corpus", "cannot evaluate an empty corpus");
  const auto outputs = run_model(model, examples, config);
  return report_from_outputs(outputs);
}

}  // namespace scd
