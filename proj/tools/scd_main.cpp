// scd: command-line entry point for corpus generation, training, evaluation,
// gradient checking and single-conversation decoding.

#include <cstdlib>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "scd/config.hpp"
#include "scd/error.hpp"
#include "scd/experiment.hpp"

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string profile;
  std::string decode;
  std::optional<std::size_t> width;
  std::string ablate;
  std::string scores;
  std::string output_dir;
  bool resume = false;
  std::size_t conversation = 0;
};

scd::ExperimentConfig resolve(const Options& o) {
  scd::ExperimentConfig c = o.config_path.empty() ? scd::profile_config(o.profile.empty() ? "desk" : o.profile)
                                                  : scd::load_config(o.config_path);
  if (!o.config_path.empty() && !o.profile.empty() && o.profile != c.profile) {
    scd::fail("invalid_argument", "--profile " + o.profile + " conflicts with profile " + c.profile +
                                      " in " + o.config_path);
  }
  if (o.seed) scd::apply_seed(c, *o.seed);
  if (!o.decode.empty()) c.decode.mode = scd::parse_decode_mode(o.decode);
  if (o.width) c.decode.width = *o.width;
  if (!o.scores.empty()) c.decode.scores = scd::parse_score_mode(o.scores);
  if (!o.output_dir.empty()) c.output_dir = o.output_dir;
  c.validate();
  return c;
}

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config_path, "JSON experiment config");
  cmd->add_option("--seed", o.seed, "seed for corpus, model and training");
  cmd->add_option("--profile", o.profile, "desk | switchboard-like | ami-like")
      ->check(CLI::IsMember({"desk", "switchboard-like", "ami-like"}));
  cmd->add_option("--out", o.output_dir, "output directory (overrides the config)");
}

void add_decode(CLI::App* cmd, Options& o) {
  cmd->add_option("--decode", o.decode, "greedy | beam")->check(CLI::IsMember({"greedy", "beam"}));
  cmd->add_option("--width", o.width, "beam width")->check(CLI::PositiveNumber);
  cmd->add_option("--scores", o.scores, "teacher_forced | autoregressive")
      ->check(CLI::IsMember({"teacher_forced", "autoregressive"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal speaker change detection on synthetic conversations"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("gen", "generate the train and test corpora");
  add_common(gen, o);

  auto* train = app.add_subcommand("train", "run the teacher-forcing then autoregressive schedule");
  add_common(train, o);
  train->add_option("--ablate", o.ablate, "none | no_audio | no_text")
      ->check(CLI::IsMember({"none", "no_audio", "no_text"}));
  train->add_flag("--resume", o.resume, "continue from the checkpoint in the output directory");

  auto* eval = app.add_subcommand("eval", "evaluate the trained checkpoint on the test split");
  add_common(eval, o);
  add_decode(eval, o);
  eval->add_option("--ablate", o.ablate,
                   "train (or reuse) a model with this ablation and add its row to ablation.csv")
      ->check(CLI::IsMember({"none", "no_audio", "no_text"}));

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every parameter gradient");
  add_common(grad, o);

  auto* dec = app.add_subcommand("decode", "print per-token labels for one test conversation");
  add_common(dec, o);
  add_decode(dec, o);
  dec->add_option("--conversation", o.conversation, "index into the test split");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() != 0) std::cerr << "error usage: ";
    return app.exit(e);
  }

  try {
    if (*grad) return scd::cmd_gradcheck(std::cout) ? EXIT_SUCCESS : EXIT_FAILURE;
    scd::ExperimentConfig c = resolve(o);
    if (*gen) {
      scd::cmd_gen(c, std::cout);
    } else if (*train) {
      if (!o.ablate.empty()) c.train.ablation = scd::parse_ablation(o.ablate);
      scd::cmd_train(c, o.resume, std::cout);
    } else if (*eval) {
      if (o.ablate.empty()) scd::cmd_eval(c, std::cout);
      else scd::cmd_ablate(c, scd::parse_ablation(o.ablate), std::cout);
    } else if (*dec) {
      scd::cmd_decode(c, o.conversation, std::cout);
    }
  } catch (const scd::Error& e) {
    std::cerr << "error " << e.code() << ": " << e.what() << "\n";
    return EXIT_FAILURE;
  } catch (const std::exception& e) {
    std::cerr << "error internal: " << e.what() << "\n";
    return EXIT_FAILURE;
  }
  return EXIT_SUCCESS;
}
