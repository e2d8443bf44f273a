#pragma once

#include <cstdint>
#include <string>

namespace stsgr {

enum class ShuffleMode { Off, Deterministic, RandomPerStep };
enum class TaskKind { Generate, Retrieve };

std::string to_string(ShuffleMode m);
ShuffleMode shuffle_mode_from_string(const std::string& s);
std::string to_string(TaskKind t);
TaskKind task_from_string(const std::string& s);

// All architecture and training hyperparameters. The desk profile is the
// default; paper_profile() carries the published-scale settings.
struct ModelConfig {
  std::size_t d_h = 64;
  std::size_t d_ff = 256;
  std::size_t heads = 4;
  std::size_t tau = 3;  // temporal window, odd
  std::size_t gat_layers = 1;
  std::size_t edgeconv_layers = 1;
  ShuffleMode shuffle_mode = ShuffleMode::Deterministic;
  std::size_t shuffle_segments = 0;  // segments per head; 0 = use head count
  double dropout = 0.0;
  double label_smoothing = 0.1;
  std::size_t beam_width = 3;
  std::size_t max_answer_len = 8;
  std::size_t history_turns = 3;
  std::uint64_t seed = 7;

  std::size_t d_vis = 16;
  std::size_t d_label = 16;
  std::size_t d_audio = 128;
  std::size_t min_count = 1;

  std::size_t batch_size = 16;
  std::size_t warmup_steps = 400;
  std::size_t epochs = 10;
  std::size_t max_steps = 0;  // 0 = bounded by epochs only
  double lr_scale = 1.0;
  std::size_t eval_every = 50;

  bool use_residual_ln = true;
  bool use_gat = true;
  bool use_edgeconv = true;
  bool use_union_nodes = true;
  bool use_audio = false;
  bool retrieval_coattention = false;

  TaskKind task = TaskKind::Generate;

  static ModelConfig desk_profile();
  static ModelConfig paper_profile();

  std::size_t segments() const { return shuffle_segments == 0 ? heads : shuffle_segments; }
  void validate() const;  // throws std::invalid_argument with the offending field
};

// Flat JSON object whose keys mirror the field names; unknown keys are
// rejected. Missing keys keep desk defaults.
ModelConfig config_from_json_file(const std::string& path);
ModelConfig config_from_json_text(const std::string& text);
std::string config_to_json(const ModelConfig& cfg);

}  // namespace stsgr
