#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stsgr/data.hpp"

namespace stsgr {

// Synthetic video-dialog world: each video holds a few persistent objects
// (color + shape classes) that appear at some frame and stay; some pairs are
// "touching", marked only by a union node fed by edges from both endpoints.
// Questions are drawn from four templates, every answer is computed by an
// exact rule over the scene-graph sequence.
struct SyntheticTaskSpec {
  std::uint64_t seed = 1;
  std::size_t frames = 4;
  std::size_t min_objects = 2;
  std::size_t max_objects = 4;
  std::size_t d_vis = 16;
  double feature_noise = 0.1;
  std::vector<std::string> colors = {"red", "blue", "green"};
  std::vector<std::string> shapes = {"cube", "ball"};
  double touch_prob = 0.4;
  double noise_edge_prob = 0.3;
  std::size_t history_turns = 2;
  std::size_t candidates = 0;  // 0 = generation-only dataset
  bool with_audio = false;
  bool audio_informative = false;
  std::size_t d_audio = 128;

  void validate() const;
  static SyntheticTaskSpec from_json_file(const std::string& path);
  static SyntheticTaskSpec from_json_text(const std::string& text);
};

// Deterministic for a fixed spec: the same seed yields a bit-identical
// dataset.
Dataset synthesize(const SyntheticTaskSpec& spec, std::size_t n);

const std::vector<std::string>& number_words();  // "zero" ... "twelve"

}  // namespace stsgr
