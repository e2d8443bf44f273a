#include "stsgr/dialog.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace stsgr {

Tensor fuse(const EncoderState& state) {
  for (const Tensor* t : {&state.h_a, &state.h_v, &state.h_ch, &state.h_q})
    if (!t->defined()) throw std::invalid_argument("fuse: all four encodings must be present");
  const std::size_t rows = state.h_a.rows();
  for (const Tensor* t : {&state.h_v, &state.h_ch, &state.h_q})
    if (t->rows() != rows)
      throw std::invalid_argument("fuse: row-count mismatch, " + std::to_string(rows) +
                                  " vs " + std::to_string(t->rows()));
  return concat({state.h_a, state.h_v, state.h_ch, state.h_q}, 1);
}

std::vector<ScoredSequence> beam_search(NextTokenModel& model, std::size_t beam_width,
                                        std::size_t max_len, int eos_id) {
  if (beam_width < 1) throw std::invalid_argument("beam_search: beam width must be >= 1");
  struct Beam {
    std::vector<int> tokens;
    double log_prob = 0.0;
  };
  auto normalized = [](const Beam& b) {
    return b.log_prob / static_cast<double>(std::max<std::size_t>(b.tokens.size(), 1));
  };
  auto prefix_of = [](const Beam& b) {
    std::vector<int> p;
    p.reserve(b.tokens.size() + 1);
    p.push_back(Vocabulary::kSos);
    p.insert(p.end(), b.tokens.begin(), b.tokens.end());
    return p;
  };

  std::vector<Beam> active{Beam{}};
  std::vector<ScoredSequence> finished;
  for (std::size_t step = 0; step < max_len && !active.empty(); ++step) {
    std::vector<Beam> pool;
    for (const Beam& beam : active) {
      std::vector<double> dist = model.next_dist(prefix_of(beam));
      std::vector<std::size_t> order(dist.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      const std::size_t take = std::min<std::size_t>(beam_width, dist.size());
      // ties go to the lowest token id, mirroring greedy argmax
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take),
                        order.end(), [&](std::size_t a, std::size_t b) {
                          if (dist[a] != dist[b]) return dist[a] > dist[b];
                          return a < b;
                        });
      for (std::size_t r = 0; r < take; ++r) {
        Beam next = beam;
        next.tokens.push_back(static_cast<int>(order[r]));
        next.log_prob += std::log(std::max(dist[order[r]], 1e-300));
        if (static_cast<int>(order[r]) == eos_id)
          finished.push_back({next.tokens, next.log_prob, normalized(next)});
        else
          pool.push_back(std::move(next));
      }
    }
    std::stable_sort(pool.begin(), pool.end(), [&](const Beam& a, const Beam& b) {
      return normalized(a) > normalized(b);
    });
    if (pool.size() > beam_width) pool.resize(beam_width);
    active = std::move(pool);
  }
  // beams that ran out of length: force end-of-sequence
  for (const Beam& beam : active) {
    std::vector<double> dist = model.next_dist(prefix_of(beam));
    Beam done = beam;
    done.tokens.push_back(eos_id);
    done.log_prob += std::log(std::max(dist[static_cast<std::size_t>(eos_id)], 1e-300));
    finished.push_back({done.tokens, done.log_prob, normalized(done)});
  }
  std::stable_sort(finished.begin(), finished.end(),
                   [](const ScoredSequence& a, const ScoredSequence& b) {
                     return a.normalized > b.normalized;
                   });
  if (finished.size() > beam_width) finished.resize(beam_width);
  return finished;
}

Tensor smoothed_ce_loss(const Tensor& probs, std::span<const int> targets, double eps,
                        int pad_id) {
  if (eps < 0.0 || eps >= 1.0)
    throw std::invalid_argument("smoothed_ce_loss: eps must be in [0,1)");
  if (probs.rows() != targets.size())
    throw std::invalid_argument("smoothed_ce_loss: " + std::to_string(probs.rows()) +
                                " rows vs " + std::to_string(targets.size()) + " targets");
  const std::size_t v = probs.cols();
  std::vector<double> smoothed(probs.rows() * v, 0.0);
  std::size_t counted = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] == pad_id) continue;  // padding positions excluded from the average
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v)
      throw std::invalid_argument("smoothed_ce_loss: target id " +
                                  std::to_string(targets[i]) + " out of vocabulary");
    ++counted;
    for (std::size_t u = 0; u < v; ++u) smoothed[i * v + u] = eps / static_cast<double>(v);
    smoothed[i * v + static_cast<std::size_t>(targets[i])] += 1.0 - eps;
  }
  if (counted == 0)
    throw std::invalid_argument("smoothed_ce_loss: every position is padding");
  Tensor target_dist({probs.rows(), v}, std::move(smoothed));
  return scale(sum_all(mul(target_dist, log_clamped(probs))),
               -1.0 / static_cast<double>(counted));
}

std::size_t retrieval_rank(std::span<const double> scores, std::size_t gt_index) {
  if (gt_index >= scores.size())
    throw std::invalid_argument("retrieval_rank: ground-truth index out of range");
  const double gt = scores[gt_index];
  std::size_t rank = 1;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (i != gt_index && scores[i] >= gt) ++rank;  // ties count against the ground truth
  return rank;
}

DialogModel::DialogModel(const ModelConfig& cfg, Vocabulary vocab,
                         std::size_t label_word_count)
    : cfg_(cfg), vocab_(std::move(vocab)), label_words_(label_word_count) {
  cfg_.validate();
  if (vocab_.size() < 4) throw std::invalid_argument("dialog model: vocabulary too small");
  std::mt19937_64 rng(cfg.seed);
  const std::size_t d_h = cfg.d_h;
  token_table_ = xavier_uniform(vocab_.size(), d_h, rng);
  label_table_ = xavier_uniform(std::max<std::size_t>(label_words_, 1), cfg.d_label, rng);
  intra_ = IntraFrameNet::init(cfg.d_vis + cfg.d_label, d_h, cfg.heads, cfg.gat_layers,
                               cfg.edgeconv_layers, cfg.use_gat, cfg.use_edgeconv, rng);
  window_ = WindowParams::init(2 * d_h, cfg.tau, rng);
  const std::size_t mem_width = 2 * d_h + (cfg.use_audio ? cfg.d_audio : 0);
  visual_proj_w_ = xavier_uniform(mem_width, d_h, rng);
  visual_proj_b_ = Tensor::zeros({1, d_h}, true);
  stage_a_ = EncoderStage::init(d_h, cfg.d_ff, cfg.heads, cfg.shuffle_mode,
                                cfg.use_residual_ln, rng);
  stage_v_ = EncoderStage::init(d_h, cfg.d_ff, cfg.heads, cfg.shuffle_mode,
                                cfg.use_residual_ln, rng);
  stage_ch_ = EncoderStage::init(d_h, cfg.d_ff, cfg.heads, cfg.shuffle_mode,
                                 cfg.use_residual_ln, rng);
  stage_q_ = EncoderStage::init(d_h, cfg.d_ff, cfg.heads, cfg.shuffle_mode,
                                cfg.use_residual_ln, rng);
  gen_w_ = xavier_uniform(4 * d_h, vocab_.size(), rng);
  gen_b_ = Tensor::zeros({1, vocab_.size()}, true);
  const std::size_t hid = 4 * d_h;
  for (LstmGate* g : {&lstm_i_, &lstm_f_, &lstm_g_, &lstm_o_}) {
    g->w = xavier_uniform(d_h, hid, rng);
    g->u = xavier_uniform(hid, hid, rng);
    g->b = Tensor::zeros({1, hid}, true);
  }
}

std::vector<NamedParam> DialogModel::parameters() {
  std::vector<NamedParam> out;
  out.push_back({"embed.token", token_table_});
  out.push_back({"embed.label", label_table_});
  intra_.collect("graph", out);
  window_.collect("temporal", out);
  out.push_back({"visual_proj.w", visual_proj_w_});
  out.push_back({"visual_proj.b", visual_proj_b_});
  stage_a_.collect("enc.a", out);
  stage_v_.collect("enc.v", out);
  stage_ch_.collect("enc.ch", out);
  stage_q_.collect("enc.q", out);
  out.push_back({"gen.w", gen_w_});
  out.push_back({"gen.b", gen_b_});
  const char* gate_names[] = {"i", "f", "g", "o"};
  LstmGate* gates[] = {&lstm_i_, &lstm_f_, &lstm_g_, &lstm_o_};
  for (int k = 0; k < 4; ++k) {
    const std::string p = std::string("retr.lstm.") + gate_names[k];
    out.push_back({p + ".w", gates[k]->w});
    out.push_back({p + ".u", gates[k]->u});
    out.push_back({p + ".b", gates[k]->b});
  }
  return out;
}

ForwardCtx DialogModel::make_ctx(bool training, std::mt19937_64* rng) const {
  ForwardCtx ctx;
  ctx.training = training;
  ctx.dropout = cfg_.dropout;
  ctx.rng = rng;
  ctx.shuffle = resolve_shuffle(cfg_, training, rng);
  return ctx;
}

Tensor DialogModel::embed_tokens(std::span<const int> ids, ForwardCtx& ctx) const {
  if (ids.empty()) throw std::invalid_argument("embed_tokens: empty token sequence");
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size())
      throw std::invalid_argument("embed_tokens: token id " + std::to_string(id) +
                                  " out of vocabulary");
    rows.push_back(static_cast<std::size_t>(id));
  }
  Tensor e = add(gather_rows(token_table_, rows), positional_encoding(ids.size(), cfg_.d_h));
  if (ctx.training && ctx.dropout > 0.0 && ctx.rng)
    e = dropout(e, ctx.dropout, *ctx.rng, true);
  return e;
}

ModalitySources DialogModel::encode_sources(const DialogExample& ex,
                                            const LabelVocab& labels,
                                            ForwardCtx& ctx) const {
  if (ex.scene_graphs.empty())
    throw std::invalid_argument("encode_sources: example has no scene graphs");
  VisualMemorySequence memories;
  memories.stage = MemoryStage::Raw;
  for (const SceneGraph& raw : ex.scene_graphs) {
    const SceneGraph g = cfg_.use_union_nodes ? raw : without_union_nodes(raw);
    if (g.node_features.cols() != cfg_.d_vis)
      throw std::invalid_argument("encode_sources: node feature width " +
                                  std::to_string(g.node_features.cols()) +
                                  " != configured d_vis " + std::to_string(cfg_.d_vis));
    Tensor lab = g.label_ids.empty()
                     ? Tensor::zeros({g.node_count(), cfg_.d_label})
                     : label_embed(g.label_ids, labels, label_table_);
    Tensor x = concat({g.node_features, lab}, 1);
    memories.frames.push_back(intra_.frame_memory(g, x).memory);
  }
  memories = aggregate_sequence(memories, window_);
  if (cfg_.use_audio) {
    if (ex.audio.empty())
      throw std::invalid_argument("encode_sources: use_audio is set but example '" +
                                  ex.video_id + "' has no audio");
    memories = audio_augment(memories, ex.audio);
  }

  ModalitySources s;
  s.e_v = project_memories(memories, visual_proj_w_, visual_proj_b_);
  s.e_c = embed_tokens(vocab_.encode(ex.caption), ctx);

  std::vector<int> history_ids;
  const std::size_t keep = std::min<std::size_t>(cfg_.history_turns, ex.history.size());
  for (std::size_t t = ex.history.size() - keep; t < ex.history.size(); ++t) {
    for (int id : vocab_.encode(ex.history[t].question)) history_ids.push_back(id);
    for (int id : vocab_.encode(ex.history[t].answer)) history_ids.push_back(id);
  }
  if (history_ids.empty()) history_ids.push_back(Vocabulary::kPad);
  s.e_h = embed_tokens(history_ids, ctx);
  s.e_ch = concat({s.e_c, s.e_h}, 0);  // caption rows then history rows
  s.e_q = embed_tokens(vocab_.encode(ex.question), ctx);
  return s;
}

Tensor DialogModel::encode_answer_prefix(const Tensor& e_a, ForwardCtx& ctx) const {
  if (e_a.rows() < 1) throw std::invalid_argument("encode_answer_prefix: empty prefix");
  const Mask mask = causal_mask(e_a.rows());
  return stage_a_.forward(e_a, e_a, &mask, ctx);
}

const EncoderStage& DialogModel::stage_for(CoStage stage) const {
  switch (stage) {
    case CoStage::Visual: return stage_v_;
    case CoStage::CaptionHistory: return stage_ch_;
    case CoStage::Question: return stage_q_;
  }
  throw std::logic_error("stage_for: bad stage");
}

Tensor DialogModel::coattend(const Tensor& h_prev, const Tensor& e_j, CoStage stage,
                             ForwardCtx& ctx) const {
  if (!e_j.defined() || e_j.rows() < 1)
    throw std::invalid_argument("coattend: empty source embedding");
  return stage_for(stage).forward(h_prev, e_j, nullptr, ctx);
}

EncoderState DialogModel::encode(const ModalitySources& sources,
                                 std::span<const int> prefix_ids, ForwardCtx& ctx) const {
  EncoderState st;
  Tensor e_a = embed_tokens(prefix_ids, ctx);
  st.h_a = encode_answer_prefix(e_a, ctx);
  st.h_v = coattend(st.h_a, sources.e_v, CoStage::Visual, ctx);
  st.h_ch = coattend(st.h_v, sources.e_ch, CoStage::CaptionHistory, ctx);
  st.h_q = coattend(st.h_ch, sources.e_q, CoStage::Question, ctx);
  st.fused = fuse(st);
  return st;
}

Tensor DialogModel::next_token_dist(const Tensor& fused_rows) const {
  return softmax_rows(add_row_bias(matmul(fused_rows, gen_w_), gen_b_));
}

Tensor DialogModel::prefix_distributions(const ModalitySources& sources,
                                         std::span<const int> prefix_ids,
                                         ForwardCtx& ctx) const {
  return next_token_dist(encode(sources, prefix_ids, ctx).fused);
}

Tensor DialogModel::embed_candidate(std::span<const int> ids, ForwardCtx& ctx) const {
  if (ids.empty()) throw std::invalid_argument("embed_candidate: empty candidate");
  Tensor x = embed_tokens(ids, ctx);
  const std::size_t hid = 4 * cfg_.d_h;
  Tensor h = Tensor::zeros({1, hid});
  Tensor c = Tensor::zeros({1, hid});
  for (std::size_t t = 0; t < ids.size(); ++t) {
    Tensor xt = slice_rows(x, t, t + 1);
    auto gate = [&](const LstmGate& g) {
      return add_row_bias(add(matmul(xt, g.w), matmul(h, g.u)), g.b);
    };
    Tensor i = sigmoid(gate(lstm_i_));
    Tensor f = sigmoid(gate(lstm_f_));
    Tensor gg = tanh(gate(lstm_g_));
    Tensor o = sigmoid(gate(lstm_o_));
    c = add(mul(f, c), mul(i, gg));
    h = mul(o, tanh(c));
  }
  return h;
}

Tensor DialogModel::retrieval_scores(const ModalitySources& sources,
                                     std::span<const std::vector<int>> candidates,
                                     ForwardCtx& ctx) const {
  if (candidates.size() < 2)
    throw std::invalid_argument("retrieval_scores: need at least 2 candidates");
  Tensor context;
  if (cfg_.retrieval_coattention) {
    const std::vector<int> sos{Vocabulary::kSos};
    context = encode(sources, sos, ctx).fused;  // 1 x 4*d_h
  } else {
    context = concat({mean_rows(sources.e_h), mean_rows(sources.e_c),
                      mean_rows(sources.e_q), mean_rows(sources.e_v)},
                     1);
  }
  std::vector<Tensor> scores;
  scores.reserve(candidates.size());
  for (const auto& cand : candidates)
    scores.push_back(matmul(context, transpose(embed_candidate(cand, ctx))));
  return concat(scores, 1);  // 1 x C
}

Tensor DialogModel::retrieval_loss(const Tensor& scores, std::size_t gt_index) const {
  if (gt_index >= scores.size())
    throw std::invalid_argument("retrieval_loss: ground-truth index " +
                                std::to_string(gt_index) + " out of range for " +
                                std::to_string(scores.size()) + " candidates");
  std::vector<double> targets(scores.size(), 0.0);
  targets[gt_index] = 1.0;
  return bce_with_logits_mean(scores, targets);
}

std::vector<int> DialogModel::target_ids(const DialogExample& ex) const {
  std::vector<int> ids = vocab_.encode(ex.answer);
  ids.push_back(Vocabulary::kEos);
  return ids;
}

std::vector<int> DialogModel::prefix_ids(const DialogExample& ex) const {
  std::vector<int> ids{Vocabulary::kSos};
  for (int id : vocab_.encode(ex.answer)) ids.push_back(id);
  return ids;
}

Tensor DialogModel::generation_loss(std::span<const DialogExample> batch,
                                    const LabelVocab& labels, ForwardCtx& ctx) const {
  if (batch.empty()) throw std::invalid_argument("generation_loss: empty batch");
  std::vector<Tensor> fused;
  std::vector<int> targets;
  for (const DialogExample& ex : batch) {
    ModalitySources sources = encode_sources(ex, labels, ctx);
    fused.push_back(encode(sources, prefix_ids(ex), ctx).fused);
    for (int id : target_ids(ex)) targets.push_back(id);
  }
  Tensor probs = next_token_dist(concat(fused, 0));
  return smoothed_ce_loss(probs, targets, cfg_.label_smoothing);
}

Tensor DialogModel::retrieval_batch_loss(std::span<const DialogExample> batch,
                                         const LabelVocab& labels, ForwardCtx& ctx) const {
  if (batch.empty()) throw std::invalid_argument("retrieval_batch_loss: empty batch");
  Tensor total = Tensor::scalar(0.0);
  std::size_t counted = 0;
  for (const DialogExample& ex : batch) {
    if (!ex.has_candidates())
      throw std::invalid_argument("retrieval_batch_loss: example '" + ex.video_id +
                                  "' has no candidates");
    std::vector<std::vector<int>> cand_ids;
    cand_ids.reserve(ex.candidates.size());
    for (const auto& c : ex.candidates) cand_ids.push_back(vocab_.encode(c));
    ModalitySources sources = encode_sources(ex, labels, ctx);
    Tensor scores = retrieval_scores(sources, cand_ids, ctx);
    total = add(total, retrieval_loss(scores, static_cast<std::size_t>(ex.gt_index)));
    ++counted;
  }
  return scale(total, 1.0 / static_cast<double>(counted));
}

namespace {

class ModelPrefixScorer final : public NextTokenModel {
 public:
  ModelPrefixScorer(const DialogModel& model, const ModalitySources& sources)
      : model_(model), sources_(sources) {}

  std::vector<double> next_dist(std::span<const int> prefix) override {
    ForwardCtx ctx = ForwardCtx::eval();
    ctx.shuffle = resolve_shuffle(model_.config(), false, nullptr);
    Tensor probs = model_.prefix_distributions(sources_, prefix, ctx);
    Tensor last = slice_rows(probs, probs.rows() - 1, probs.rows());
    return std::vector<double>(last.values().begin(), last.values().end());
  }

  std::size_t vocab_size() const override { return model_.vocab_size(); }

 private:
  const DialogModel& model_;
  const ModalitySources& sources_;
};

}  // namespace

std::vector<ScoredSequence> DialogModel::generate(const ModalitySources& sources,
                                                  std::size_t beam_width,
                                                  std::size_t max_len) const {
  ModelPrefixScorer scorer(*this, sources);
  return beam_search(scorer, beam_width, max_len, Vocabulary::kEos);
}

}  // namespace stsgr
