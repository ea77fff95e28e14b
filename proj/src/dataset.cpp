#include "scd/dataset.hpp"

#include "scd/model.hpp"
#include "scd/parallel.hpp"

namespace scd {

Example make_example(const Conversation& conv, const SpeakerEmbeddingProvider& provider,
                     const WindowSpec& spec, Ablation ablation) {
  const AlignedSequence seq = align_conversation(conv, provider, spec);
  return Example{conv.id, fused_input_matrix(seq, ablation), labels_of(conv)};
}

std::vector<Example> make_examples(const Corpus& corpus, const SpeakerEmbeddingProvider& provider,
                                   const WindowSpec& spec, Ablation ablation) {
  std::vector<Example> out(corpus.size());
  parallel_for(corpus.size(), [&](std::size_t i) {
    out[i] = make_example(corpus[i], provider, spec, ablation);
  });
  return out;
}

}  // namespace scd
