#pragma once

#include <random>
#include <string>
#include <vector>

#include "stsgr/tensor.hpp"

namespace stsgr {

// Sliding-window attention over frame memories. Frames are rows here: the
// window F holds tau rows of width 2*d_h, beta = softmax(tanh(F w) gamma)
// and the center frame becomes the beta-weighted row combination.
struct WindowParams {
  Tensor w_tau;   // 2*d_h x 2*d_h
  Tensor gamma;   // 2*d_h x 1
  std::size_t tau = 3;

  std::size_t width() const { return w_tau.rows(); }
  static WindowParams init(std::size_t two_d_h, std::size_t tau, std::mt19937_64& rng);
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
};

enum class MemoryStage { Raw, Aggregated, AudioAugmented, Projected };

struct VisualMemorySequence {
  std::vector<Tensor> frames;  // each 1 x width, one width per stage
  MemoryStage stage = MemoryStage::Raw;

  std::size_t length() const { return frames.size(); }
};

// One window: F is tau x 2*d_h (rows = frames), returns 1 x 2*d_h.
Tensor aggregate_window(const Tensor& window, const WindowParams& p);

// Every frame aggregated over its centered window; windows near the ends are
// edge-clamped (first/last frame repeated) so the output keeps length L.
VisualMemorySequence aggregate_sequence(const VisualMemorySequence& memories,
                                        const WindowParams& p);

// Per-frame concatenation with aligned audio vectors; an empty audio span is
// a pass-through with the stage tag unchanged.
VisualMemorySequence audio_augment(const VisualMemorySequence& memories,
                                   std::span<const std::vector<double>> audio);

// Single affine layer to the model dimension: L x d_h.
Tensor project_memories(const VisualMemorySequence& memories, const Tensor& w,
                        const Tensor& b);

}  // namespace stsgr
