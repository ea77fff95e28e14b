#include "scd/gradcheck.hpp"

#include <chrono>
#include <cmath>

#include "scd/alignment.hpp"
#include "scd/corpus.hpp"
#include "scd/dataset.hpp"
#include "scd/trainer.hpp"

namespace scd {

GradcheckConfig::GradcheckConfig() {
  model.model_dim = 16;
  model.heads = 2;
  model.enc_layers = 1;
  model.dec_layers = 1;
  model.ff_dim = 32;
  model.dropout = 0.0;
}

namespace {

double loss_of(const Model& model, const Example& ex) {
  ad::Tape tape(false);
  const ad::Var logits = forward_with_prefix(tape, model, ex.fused, ex.labels, RunMode::eval());
  return sequence_loss(logits, training_targets(ex.labels)).value()[0];
}

double norm2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

GradcheckReport run_gradcheck(const GradcheckConfig& config, const GradientHook& sabotage) {
  const auto start = std::chrono::steady_clock::now();
  ModelConfig mc = config.model;
  mc.seed = config.seed;
  Model model = init_model(mc);

  // Short conversation with alternating turns so both labels appear.
  CorpusConfig cc;
  cc.num_words = static_cast<int>(config.length);
  cc.mean_turn_len_words = 2.0;
  cc.seed = config.seed;
  const Example ex = make_example(generate(cc, 0), SyntheticSpeakerProvider(), {}, Ablation::none);

  GradcheckReport report;
  Gradients analytic = sequence_gradient(model, ex, ex.labels, RunMode::eval()).grads;
  if (sabotage) sabotage(model, analytic);

  report.pass = true;
  for (std::size_t a = 0; a < model.params.size(); ++a) {
    Tensor& p = model.params.at(a);
    std::vector<double> diff(p.size()), num(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p[i];
      p[i] = saved + config.step;
      const double up = loss_of(model, ex);
      p[i] = saved - config.step;
      const double down = loss_of(model, ex);
      p[i] = saved;
      num[i] = (up - down) / (2.0 * config.step);
      diff[i] = analytic[a][i] - num[i];
    }
    ArrayCheck c;
    c.name = model.params.name(a);
    c.count = p.size();
    c.analytic_norm = norm2({analytic[a].values().begin(), analytic[a].values().end()});
    c.numeric_norm = norm2(num);
    const double scale = std::max(c.analytic_norm, c.numeric_norm);
    // Arrays whose gradient vanishes both ways (e.g. an unused table row) pass on absolute error.
    c.rel_error = scale > 1e-10 ? norm2(diff) / scale : norm2(diff);
    c.pass = c.rel_error < config.tolerance;
    report.pass = report.pass && c.pass;
    report.max_rel_error = std::max(report.max_rel_error, c.rel_error);
    report.arrays.push_back(std::move(c));
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace scd
