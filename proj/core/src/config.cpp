#include "stsgr/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace stsgr {

using nlohmann::json;

std::string to_string(ShuffleMode m) {
  switch (m) {
    case ShuffleMode::Off: return "off";
    case ShuffleMode::Deterministic: return "deterministic";
    case ShuffleMode::RandomPerStep: return "random";
  }
  return "off";
}

ShuffleMode shuffle_mode_from_string(const std::string& s) {
  if (s == "off") return ShuffleMode::Off;
  if (s == "deterministic") return ShuffleMode::Deterministic;
  if (s == "random") return ShuffleMode::RandomPerStep;
  throw std::invalid_argument("shuffle_mode must be one of off|deterministic|random, got '" +
                              s + "'");
}

std::string to_string(TaskKind t) {
  return t == TaskKind::Generate ? "generate" : "retrieve";
}

TaskKind task_from_string(const std::string& s) {
  if (s == "generate") return TaskKind::Generate;
  if (s == "retrieve") return TaskKind::Retrieve;
  throw std::invalid_argument("task must be generate|retrieve, got '" + s + "'");
}

ModelConfig ModelConfig::desk_profile() { return ModelConfig{}; }

ModelConfig ModelConfig::paper_profile() {
  ModelConfig cfg;
  cfg.d_h = 512;
  cfg.d_ff = 2048;
  cfg.heads = 8;
  cfg.warmup_steps = 10000;
  cfg.batch_size = 16;
  cfg.d_label = 300;
  cfg.dropout = 0.1;
  cfg.min_count = 5;
  return cfg;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
  if (d_h == 0 || d_ff == 0 || heads == 0) fail("d_h, d_ff, heads must be positive");
  if (d_h % heads != 0) fail("d_h must be divisible by heads");
  if (tau == 0 || tau % 2 == 0) fail("tau must be odd and >= 1");
  if (shuffle_segments != 0 && (d_h / heads) % shuffle_segments != 0)
    fail("head width d_h/heads must be divisible by shuffle_segments");
  if (shuffle_segments == 0 && (d_h / heads) % heads != 0)
    fail("head width d_h/heads must be divisible by the default segment count (heads)");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must be in [0,1)");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) fail("label_smoothing must be in [0,1)");
  if (beam_width == 0) fail("beam_width must be >= 1");
  if (max_answer_len == 0) fail("max_answer_len must be >= 1");
  if (batch_size == 0) fail("batch_size must be >= 1");
  if (warmup_steps == 0) fail("warmup_steps must be >= 1");
  if (d_vis == 0) fail("d_vis must be positive");
}

namespace {

ModelConfig from_json(const json& j) {
  ModelConfig cfg;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const json& v = it.value();
    if (k == "d_h") cfg.d_h = v.get<std::size_t>();
    else if (k == "d_ff") cfg.d_ff = v.get<std::size_t>();
    else if (k == "heads") cfg.heads = v.get<std::size_t>();
    else if (k == "tau") cfg.tau = v.get<std::size_t>();
    else if (k == "gat_layers") cfg.gat_layers = v.get<std::size_t>();
    else if (k == "edgeconv_layers") cfg.edgeconv_layers = v.get<std::size_t>();
    else if (k == "shuffle_mode") cfg.shuffle_mode = shuffle_mode_from_string(v.get<std::string>());
    else if (k == "shuffle_segments") cfg.shuffle_segments = v.get<std::size_t>();
    else if (k == "dropout") cfg.dropout = v.get<double>();
    else if (k == "label_smoothing") cfg.label_smoothing = v.get<double>();
    else if (k == "beam_width") cfg.beam_width = v.get<std::size_t>();
    else if (k == "max_answer_len") cfg.max_answer_len = v.get<std::size_t>();
    else if (k == "history_turns") cfg.history_turns = v.get<std::size_t>();
    else if (k == "seed") cfg.seed = v.get<std::uint64_t>();
    else if (k == "d_vis") cfg.d_vis = v.get<std::size_t>();
    else if (k == "d_label") cfg.d_label = v.get<std::size_t>();
    else if (k == "d_audio") cfg.d_audio = v.get<std::size_t>();
    else if (k == "min_count") cfg.min_count = v.get<std::size_t>();
    else if (k == "batch_size") cfg.batch_size = v.get<std::size_t>();
    else if (k == "warmup_steps") cfg.warmup_steps = v.get<std::size_t>();
    else if (k == "epochs") cfg.epochs = v.get<std::size_t>();
    else if (k == "max_steps") cfg.max_steps = v.get<std::size_t>();
    else if (k == "lr_scale") cfg.lr_scale = v.get<double>();
    else if (k == "eval_every") cfg.eval_every = v.get<std::size_t>();
    else if (k == "use_residual_ln") cfg.use_residual_ln = v.get<bool>();
    else if (k == "use_gat") cfg.use_gat = v.get<bool>();
    else if (k == "use_edgeconv") cfg.use_edgeconv = v.get<bool>();
    else if (k == "use_union_nodes") cfg.use_union_nodes = v.get<bool>();
    else if (k == "use_audio") cfg.use_audio = v.get<bool>();
    else if (k == "retrieval_coattention") cfg.retrieval_coattention = v.get<bool>();
    else if (k == "task") cfg.task = task_from_string(v.get<std::string>());
    else throw std::invalid_argument("config: unknown key '" + k + "'");
  }
  cfg.validate();
  return cfg;
}

}  // namespace

ModelConfig config_from_json_text(const std::string& text) {
  json j = json::parse(text);
  if (!j.is_object()) throw std::invalid_argument("config: expected a flat JSON object");
  return from_json(j);
}

ModelConfig config_from_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("config: cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return config_from_json_text(ss.str());
}

std::string config_to_json(const ModelConfig& cfg) {
  json j;
  j["d_h"] = cfg.d_h;
  j["d_ff"] = cfg.d_ff;
  j["heads"] = cfg.heads;
  j["tau"] = cfg.tau;
  j["gat_layers"] = cfg.gat_layers;
  j["edgeconv_layers"] = cfg.edgeconv_layers;
  j["shuffle_mode"] = to_string(cfg.shuffle_mode);
  j["shuffle_segments"] = cfg.shuffle_segments;
  j["dropout"] = cfg.dropout;
  j["label_smoothing"] = cfg.label_smoothing;
  j["beam_width"] = cfg.beam_width;
  j["max_answer_len"] = cfg.max_answer_len;
  j["history_turns"] = cfg.history_turns;
  j["seed"] = cfg.seed;
  j["d_vis"] = cfg.d_vis;
  j["d_label"] = cfg.d_label;
  j["d_audio"] = cfg.d_audio;
  j["min_count"] = cfg.min_count;
  j["batch_size"] = cfg.batch_size;
  j["warmup_steps"] = cfg.warmup_steps;
  j["epochs"] = cfg.epochs;
  j["max_steps"] = cfg.max_steps;
  j["lr_scale"] = cfg.lr_scale;
  j["eval_every"] = cfg.eval_every;
  j["use_residual_ln"] = cfg.use_residual_ln;
  j["use_gat"] = cfg.use_gat;
  j["use_edgeconv"] = cfg.use_edgeconv;
  j["use_union_nodes"] = cfg.use_union_nodes;
  j["use_audio"] = cfg.use_audio;
  j["retrieval_coattention"] = cfg.retrieval_coattention;
  j["task"] = to_string(cfg.task);
  return j.dump(2);
}

}  // namespace stsgr
