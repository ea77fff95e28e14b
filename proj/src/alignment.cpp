#include "scd/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "scd/error.hpp"
#include "scd/random.hpp"

namespace scd {

std::vector<SpeakerWindow> window_grid(double duration_s, const WindowSpec& spec) {
  require(duration_s > 0.0 && std::isfinite(duration_s), "invalid_argument",
          "window grid needs a positive duration");
  require(spec.window_s > 0.0 && spec.shift_s > 0.0, "invalid_argument",
          "window and shift must be positive");
  std::vector<SpeakerWindow> grid;
  if (duration_s < spec.window_s) {
    grid.push_back({0.0, duration_s, 0.5 * duration_s, {}});
    return grid;
  }
  // Slack for starts like 3 * 0.5 that should land exactly on the boundary.
  const double slack = 1e-9 * std::max(1.0, duration_s);
  for (std::size_t k = 0;; ++k) {
    const double start = static_cast<double>(k) * spec.shift_s;
    const double end = start + spec.window_s;
    if (end > duration_s + slack) break;
    grid.push_back({start, end, 0.5 * (start + end), {}});
  }
  return grid;
}

std::size_t assign_window(double token_midpoint_s, std::span<const double> window_midpoints) {
  require(!window_midpoints.empty(), "invalid_argument", "cannot assign a token to an empty grid");
  const auto it = std::lower_bound(window_midpoints.begin(), window_midpoints.end(), token_midpoint_s);
  const auto idx = static_cast<std::size_t>(it - window_midpoints.begin());
  if (idx == 0) return 0;
  if (idx == window_midpoints.size()) return idx - 1;
  const double before = std::abs(token_midpoint_s - window_midpoints[idx - 1]);
  const double after = std::abs(token_midpoint_s - window_midpoints[idx]);
  return before <= after ? idx - 1 : idx;
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::vector<std::vector<double>> SyntheticSpeakerProvider::embed(
    const Conversation& conv, std::span<const SpeakerWindow> windows) const {
  require(!conv.tokens.empty(), "invalid_argument", "conversation has no tokens");
  for (const auto& tok : conv.tokens) {
    require(tok.speaker_vec.size() == kSpeakerDim, "invalid_argument",
            "synthetic speaker embeddings need ground-truth speaker_vec on every token");
  }
  std::mt19937_64 rng = make_rng(seed_, fnv1a(conv.id));
  std::normal_distribution<double> noise(0.0, noise_sigma_ > 0.0 ? noise_sigma_ : 1.0);

  std::vector<std::vector<double>> out;
  out.reserve(windows.size());
  for (const auto& w : windows) {
    std::vector<double> emb(kSpeakerDim, 0.0);
    double total = 0.0;
    for (const auto& tok : conv.tokens) {
      const double overlap = std::min(w.end_s, tok.offset_s) - std::max(w.start_s, tok.onset_s);
      if (overlap <= 0.0) continue;
      total += overlap;
      for (std::size_t d = 0; d < kSpeakerDim; ++d) emb[d] += overlap * tok.speaker_vec[d];
    }
    if (total > 0.0) {
      for (double& x : emb) x /= total;
    } else {
      const auto nearest = std::min_element(
          conv.tokens.begin(), conv.tokens.end(), [&](const Token& a, const Token& b) {
            return std::abs(a.midpoint_s() - w.midpoint_s) < std::abs(b.midpoint_s() - w.midpoint_s);
          });
      emb = nearest->speaker_vec;
    }
    if (noise_sigma_ > 0.0) {
      for (double& x : emb) x += noise(rng);
    }
    out.push_back(std::move(emb));
  }
  return out;
}

void attach_windows(Conversation& conv, const SpeakerEmbeddingProvider& provider,
                    const WindowSpec& spec) {
  auto grid = window_grid(conv.duration_s, spec);
  auto embs = provider.embed(conv, grid);
  require(embs.size() == grid.size(), "shape_mismatch", "provider returned wrong window count");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    require(embs[i].size() == kSpeakerDim, "shape_mismatch",
            "speaker embedding has dimension " + std::to_string(embs[i].size()) + ", expected " +
                std::to_string(kSpeakerDim));
    grid[i].spk_emb = std::move(embs[i]);
  }
  conv.windows = std::move(grid);
}

AlignedSequence align_conversation(const Conversation& conv, const SpeakerEmbeddingProvider& provider,
                                   const WindowSpec& spec) {
  require(!conv.tokens.empty(), "invalid_argument", "cannot align an empty conversation");
  std::vector<SpeakerWindow> computed;
  std::span<const SpeakerWindow> windows = conv.windows;
  if (windows.empty()) {
    Conversation copy;
    copy.id = conv.id;
    copy.duration_s = conv.duration_s;
    copy.tokens = conv.tokens;
    attach_windows(copy, provider, spec);
    computed = std::move(copy.windows);
    windows = computed;
  }
  std::vector<double> midpoints;
  midpoints.reserve(windows.size());
  for (const auto& w : windows) {
    require(w.spk_emb.size() == kSpeakerDim, "shape_mismatch",
            "speaker embedding has dimension " + std::to_string(w.spk_emb.size()) + ", expected " +
                std::to_string(kSpeakerDim));
    midpoints.push_back(w.midpoint_s);
  }

  const std::size_t n = conv.tokens.size();
  AlignedSequence seq{Tensor::matrix(n, kTextDim), Tensor::matrix(n, kSpeakerDim), {}};
  seq.window_index.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Token& tok = conv.tokens[i];
    require(tok.text_emb.size() == kTextDim, "shape_mismatch", "text embedding must be 768-d");
    const std::size_t w = assign_window(tok.midpoint_s(), midpoints);
    seq.window_index.push_back(w);
    std::copy(tok.text_emb.begin(), tok.text_emb.end(), seq.text.row(i).begin());
    std::copy(windows[w].spk_emb.begin(), windows[w].spk_emb.end(), seq.speaker.row(i).begin());
  }
  return seq;
}

}  // namespace scd
