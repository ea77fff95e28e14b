#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "scd/alignment.hpp"
#include "scd/corpus.hpp"
#include "scd/model.hpp"
#include "scd/search.hpp"
#include "scd/trainer.hpp"

namespace scd {

// Everything one experiment needs. Serialized as a single nested JSON
// document; missing keys keep their defaults.
struct ExperimentConfig {
  std::string profile = "desk";
  CorpusConfig corpus;
  std::size_t train_conversations = 200;
  std::size_t test_conversations = 50;
  WindowSpec window;
  double provider_noise_sigma = 0.0;
  std::uint64_t provider_seed = 0;
  ModelConfig model;
  TrainConfig train;
  DecodeConfig decode;
  std::string output_dir = "runs/default";

  void validate() const;
};

// Named presets: "desk" (small model, batch 16, 80 TF + 20 AR epochs),
// "switchboard-like" (d512, 8 heads, 3+1 layers, batch 64, 400 epochs) and "ami-like"
// (same model, batch 32, 8000 epochs).
ExperimentConfig profile_config(const std::string& name);

std::string config_to_json(const ExperimentConfig& config);
// Starts from the profile named in the document (desk if absent) and
// overrides every key present.
ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// Sets every seed (corpus, model, training) from one value.
void apply_seed(ExperimentConfig& config, std::uint64_t seed);

}  // namespace scd
