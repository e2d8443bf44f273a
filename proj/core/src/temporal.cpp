#include "stsgr/temporal.hpp"

#include <algorithm>
#include <stdexcept>

namespace stsgr {

WindowParams WindowParams::init(std::size_t two_d_h, std::size_t tau, std::mt19937_64& rng) {
  if (tau < 1 || tau % 2 == 0)
    throw std::invalid_argument("window: tau must be odd and >= 1, got " + std::to_string(tau));
  WindowParams p;
  p.w_tau = xavier_uniform(two_d_h, two_d_h, rng);
  p.gamma = xavier_uniform(two_d_h, 1, rng);
  p.tau = tau;
  return p;
}

void WindowParams::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".w_tau", w_tau});
  out.push_back({prefix + ".gamma", gamma});
}

Tensor aggregate_window(const Tensor& window, const WindowParams& p) {
  if (window.rows() != p.tau)
    throw std::invalid_argument("aggregate_window: got " + std::to_string(window.rows()) +
                                " frames, window size is " + std::to_string(p.tau));
  if (window.cols() != p.width())
    throw std::invalid_argument("aggregate_window: frame width " +
                                std::to_string(window.cols()) + " != params width " +
                                std::to_string(p.width()));
  Tensor logits = matmul(tanh(matmul(window, p.w_tau)), p.gamma);  // tau x 1
  Tensor beta = softmax_rows(transpose(logits));                   // 1 x tau
  return matmul(beta, window);                                     // 1 x 2*d_h
}

VisualMemorySequence aggregate_sequence(const VisualMemorySequence& memories,
                                        const WindowParams& p) {
  const std::size_t len = memories.length();
  if (len < 1) throw std::invalid_argument("aggregate_sequence: empty sequence");
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(p.tau / 2);
  VisualMemorySequence out;
  out.stage = MemoryStage::Aggregated;
  out.frames.reserve(len);
  for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(len); ++c) {
    std::vector<Tensor> rows;
    rows.reserve(p.tau);
    for (std::ptrdiff_t o = -half; o <= half; ++o) {
      std::ptrdiff_t idx = std::clamp<std::ptrdiff_t>(c + o, 0, len - 1);
      rows.push_back(memories.frames[static_cast<std::size_t>(idx)]);
    }
    out.frames.push_back(aggregate_window(concat(rows, 0), p));
  }
  return out;
}

VisualMemorySequence audio_augment(const VisualMemorySequence& memories,
                                   std::span<const std::vector<double>> audio) {
  if (audio.empty()) return memories;
  if (audio.size() != memories.length())
    throw std::invalid_argument("audio_augment: " + std::to_string(audio.size()) +
                                " audio frames vs " + std::to_string(memories.length()) +
                                " video frames");
  VisualMemorySequence out;
  out.stage = MemoryStage::AudioAugmented;
  out.frames.reserve(memories.length());
  for (std::size_t i = 0; i < memories.length(); ++i)
    out.frames.push_back(concat({memories.frames[i], Tensor::row(audio[i])}, 1));
  return out;
}

Tensor project_memories(const VisualMemorySequence& memories, const Tensor& w,
                        const Tensor& b) {
  if (memories.length() < 1)
    throw std::invalid_argument("project_memories: empty sequence");
  Tensor stacked = concat(std::span<const Tensor>(memories.frames), 0);  // L x width
  if (stacked.cols() != w.rows())
    throw std::invalid_argument("project_memories: memory width " +
                                std::to_string(stacked.cols()) + " != projection input " +
                                std::to_string(w.rows()));
  return add_row_bias(matmul(stacked, w), b);
}

}  // namespace stsgr
