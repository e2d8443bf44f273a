#pragma once

#include <memory>

#include "stsgr/config.hpp"
#include "stsgr/data.hpp"
#include "stsgr/graph.hpp"
#include "stsgr/temporal.hpp"
#include "stsgr/transformer.hpp"

namespace stsgr {

// The four per-prefix encodings plus their fusion, all sharing the
// answer-prefix row count.
struct EncoderState {
  Tensor h_a, h_v, h_ch, h_q;  // each T_a x d_h
  Tensor fused;                // T_a x 4*d_h, order a, v, c+h, q
};

Tensor fuse(const EncoderState& state);

// Encoded input modalities for one example. e_ch is caption rows followed by
// history rows.
struct ModalitySources {
  Tensor e_v, e_c, e_h, e_ch, e_q;
};

// Autoregressive token scorer driving beam search. prefix starts with the
// start-of-sequence id and carries the tokens generated so far.
class NextTokenModel {
 public:
  virtual ~NextTokenModel() = default;
  virtual std::vector<double> next_dist(std::span<const int> prefix) = 0;
  virtual std::size_t vocab_size() const = 0;
};

struct ScoredSequence {
  std::vector<int> tokens;  // generated tokens, terminating eos included
  double log_prob = 0.0;
  double normalized = 0.0;  // log_prob / token count
};

// Length-normalized beam search; beams hitting max_len get end-of-sequence
// forced. Returns up to beam_width finished sequences, best first.
std::vector<ScoredSequence> beam_search(NextTokenModel& model, std::size_t beam_width,
                                        std::size_t max_len, int eos_id = Vocabulary::kEos);

// Label-smoothed cross entropy over probability rows; targets equal to
// pad_id are excluded from the average.
Tensor smoothed_ce_loss(const Tensor& probs, std::span<const int> targets, double eps,
                        int pad_id = Vocabulary::kPad);

// Rank of the ground-truth candidate; tied scores count against it.
std::size_t retrieval_rank(std::span<const double> scores, std::size_t gt_index);

enum class CoStage { Visual, CaptionHistory, Question };

class DialogModel {
 public:
  DialogModel(const ModelConfig& cfg, Vocabulary vocab, std::size_t label_word_count);

  const ModelConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  std::size_t vocab_size() const { return vocab_.size(); }
  std::size_t label_word_count() const { return label_words_; }
  std::vector<NamedParam> parameters();
  ForwardCtx make_ctx(bool training, std::mt19937_64* rng) const;

  // Token embedding + sinusoidal positional encoding (+ dropout in training).
  Tensor embed_tokens(std::span<const int> ids, ForwardCtx& ctx) const;

  // Scene-graph pipeline + temporal aggregation + audio + projection -> e_v,
  // then the text embeddings.
  ModalitySources encode_sources(const DialogExample& ex, const LabelVocab& labels,
                                 ForwardCtx& ctx) const;

  // Causally masked self-attention stage over the answer prefix embedding.
  Tensor encode_answer_prefix(const Tensor& e_a, ForwardCtx& ctx) const;

  // One co-attention stage: queries from the previous encoding, keys/values
  // from the modality embedding.
  Tensor coattend(const Tensor& h_prev, const Tensor& e_j, CoStage stage,
                  ForwardCtx& ctx) const;

  // Full encode in the fixed order a -> v -> c+h -> q, with fusion.
  EncoderState encode(const ModalitySources& sources, std::span<const int> prefix_ids,
                      ForwardCtx& ctx) const;

  // softmax(affine(fused rows)) over the vocabulary.
  Tensor next_token_dist(const Tensor& fused_rows) const;

  // Teacher-forced next-token distributions for every prefix position.
  Tensor prefix_distributions(const ModalitySources& sources,
                              std::span<const int> prefix_ids, ForwardCtx& ctx) const;

  // LSTM over candidate tokens; final hidden state, 1 x 4*d_h.
  Tensor embed_candidate(std::span<const int> ids, ForwardCtx& ctx) const;

  // Dot-product scores of every candidate against the pooled context.
  Tensor retrieval_scores(const ModalitySources& sources,
                          std::span<const std::vector<int>> candidates,
                          ForwardCtx& ctx) const;
  Tensor retrieval_loss(const Tensor& scores, std::size_t gt_index) const;

  // Mean cross-batch generation loss per the smoothed CE definition.
  Tensor generation_loss(std::span<const DialogExample> batch, const LabelVocab& labels,
                         ForwardCtx& ctx) const;
  Tensor retrieval_batch_loss(std::span<const DialogExample> batch,
                              const LabelVocab& labels, ForwardCtx& ctx) const;

  // Target ids for teacher forcing: answer tokens then eos.
  std::vector<int> target_ids(const DialogExample& ex) const;
  // Prefix ids: sos then the answer tokens.
  std::vector<int> prefix_ids(const DialogExample& ex) const;

  // Beam-search decoding against pre-encoded sources.
  std::vector<ScoredSequence> generate(const ModalitySources& sources,
                                       std::size_t beam_width, std::size_t max_len) const;

 private:
  const EncoderStage& stage_for(CoStage stage) const;

  ModelConfig cfg_;
  Vocabulary vocab_;
  std::size_t label_words_ = 0;

  Tensor token_table_;  // |V| x d_h
  Tensor label_table_;  // label words x d_label
  IntraFrameNet intra_;
  WindowParams window_;
  Tensor visual_proj_w_, visual_proj_b_;
  EncoderStage stage_a_, stage_v_, stage_ch_, stage_q_;
  Tensor gen_w_, gen_b_;  // 4*d_h x |V|
  struct LstmGate {
    Tensor w, u, b;
  };
  LstmGate lstm_i_, lstm_f_, lstm_g_, lstm_o_;
};

}  // namespace stsgr
