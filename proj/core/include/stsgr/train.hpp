#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stsgr/dialog.hpp"
#include "stsgr/optimizer.hpp"

namespace stsgr {

struct MetricsReport {
  std::vector<double> epoch_losses;  // mean training loss per epoch
  double final_loss = 0.0;           // best validation loss (teacher-forced / BCE)
  double token_accuracy = 0.0;
  double perplexity = 0.0;
  double bleu4_score = 0.0;
  double mean_retrieval_rank = 0.0;
  std::size_t steps = 0;
  double wall_clock_sec = 0.0;
  std::string config_json;  // resolved config echo

  std::string to_json(bool include_wall_clock = true) const;
};

struct TrainResult {
  MetricsReport report;
  std::vector<double> step_losses;  // training loss at every step
};

// Seeded, deterministic given the model config. Shuffles examples per epoch,
// validates every eval_every steps, and restores the best-validation
// parameters before returning.
TrainResult train_model(DialogModel& model, const Dataset& data);

struct GenerationEval {
  double loss = 0.0;  // plain cross entropy per token
  double token_accuracy = 0.0;
  double perplexity = 0.0;
};

GenerationEval generation_eval(DialogModel& model, const Dataset& data);
double corpus_bleu4(DialogModel& model, const Dataset& data);
double mean_retrieval_rank(DialogModel& model, const Dataset& data);

MetricsReport evaluate_generation(DialogModel& model, const Dataset& data,
                                  bool with_bleu = true);
MetricsReport evaluate_retrieval(DialogModel& model, const Dataset& data);

// Checkpoints embed the resolved config (and vocab/label sizes) as reserved
// "config.*" records alongside the parameters.
void save_model(const std::string& path, DialogModel& model);
DialogModel load_model(const std::string& path, Vocabulary vocab);

struct AblationRow {
  std::string name;
  ModelConfig config;
  double train_loss = 0.0;
  double eval_loss = 0.0;   // plain CE on the held-out split
  double token_accuracy = 0.0;
  double bleu4_score = 0.0;
  std::size_t steps = 0;
};

// Trains one model per ablation switch with a shared seed: full model,
// w/o shuffle, w/o GAT, w/o EdgeConv, w/o union box, w/o temporal, + audio.
std::vector<AblationRow> run_ablation(const ModelConfig& base, const Dataset& train_data,
                                      const Dataset& eval_data);

std::string ablation_table_text(std::span<const AblationRow> rows);
std::string ablation_table_json(std::span<const AblationRow> rows);

}  // namespace stsgr
