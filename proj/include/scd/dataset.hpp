#pragma once

#include <string>
#include <vector>

#include "scd/alignment.hpp"
#include "scd/corpus.hpp"
#include "scd/fusion.hpp"
#include "scd/tensor.hpp"

namespace scd {

// One conversation ready for the model: aligned, normalized and fused inputs
// plus ground-truth labels.
struct Example {
  std::string id;
  Tensor fused;  // [L, 1024]
  std::vector<Label> labels;

  std::size_t length() const { return labels.size(); }
};

Example make_example(const Conversation& conv, const SpeakerEmbeddingProvider& provider,
                     const WindowSpec& spec, Ablation ablation);

std::vector<Example> make_examples(const Corpus& corpus, const SpeakerEmbeddingProvider& provider,
                                   const WindowSpec& spec, Ablation ablation);

}  // namespace scd
