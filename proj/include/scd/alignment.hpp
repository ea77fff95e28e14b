#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "scd/corpus.hpp"
#include "scd/tensor.hpp"

namespace scd {

struct WindowSpec {
  double window_s = 1.5;
  double shift_s = 0.5;
};

// Sliding windows at starts 0, shift, 2*shift, ... while start + window <= duration.
// A conversation shorter than one window gets the single window [0, duration].
// The returned windows have empty embeddings.
std::vector<SpeakerWindow> window_grid(double duration_s, const WindowSpec& spec = {});

// Index of the window midpoint nearest to `token_midpoint_s`; ties go to the
// lower index. Midpoints must be sorted ascending.
std::size_t assign_window(double token_midpoint_s, std::span<const double> window_midpoints);

// Source of one speaker embedding per window. Real extractor outputs can be
// plugged in behind this interface.
class SpeakerEmbeddingProvider {
 public:
  virtual ~SpeakerEmbeddingProvider() = default;
  virtual std::vector<std::vector<double>> embed(const Conversation& conv,
                                                 std::span<const SpeakerWindow> windows) const = 0;
};

// Overlap-weighted mean of the ground-truth `speaker_vec` of the tokens inside
// each window, plus optional Gaussian noise. A window covering only silence
// takes the vector of the temporally nearest token.
class SyntheticSpeakerProvider final : public SpeakerEmbeddingProvider {
 public:
  explicit SyntheticSpeakerProvider(double noise_sigma = 0.0, std::uint64_t seed = 0)
      : noise_sigma_(noise_sigma), seed_(seed) {}

  std::vector<std::vector<double>> embed(const Conversation& conv,
                                         std::span<const SpeakerWindow> windows) const override;

 private:
  double noise_sigma_;
  std::uint64_t seed_;
};

// Per-token (text, speaker) embedding pairs in token order.
struct AlignedSequence {
  Tensor text;     // [L, kTextDim]
  Tensor speaker;  // [L, kSpeakerDim]
  std::vector<std::size_t> window_index;

  std::size_t length() const { return window_index.size(); }
};

// Builds the window grid for `conv`, asks the provider for embeddings and
// fills conv.windows.
void attach_windows(Conversation& conv, const SpeakerEmbeddingProvider& provider,
                    const WindowSpec& spec = {});

// Maps every token to its nearest-midpoint window. Uses conv.windows when
// already filled, otherwise computes them with `provider`.
AlignedSequence align_conversation(const Conversation& conv, const SpeakerEmbeddingProvider& provider,
                                   const WindowSpec& spec = {});

}  // namespace scd
