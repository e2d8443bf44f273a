#include "stsgr/gradsuite.hpp"

#include <random>
#include <set>

#include "stsgr/dialog.hpp"
#include "stsgr/graph.hpp"
#include "stsgr/synth.hpp"
#include "stsgr/temporal.hpp"
#include "stsgr/transformer.hpp"

namespace stsgr {

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng,
                     bool requires_grad = false) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> v(r * c);
  for (auto& x : v) x = dist(rng);
  return Tensor({r, c}, std::move(v), requires_grad);
}

SceneGraph random_graph(std::size_t n, std::size_t n_edges, std::size_t d_vis,
                        std::mt19937_64& rng) {
  SceneGraph g;
  g.node_features = random_matrix(n, d_vis, rng);
  std::set<std::pair<int, int>> seen;
  while (g.edges.size() < n_edges) {
    const int a = static_cast<int>(rng() % n);
    const int b = static_cast<int>(rng() % n);
    if (a == b || !seen.insert({a, b}).second) continue;
    g.edges.emplace_back(a, b);
  }
  g.validate();
  return g;
}

ModuleGradCheck check_gat(std::size_t d_h, std::mt19937_64& rng) {
  const std::size_t d_in = 6;
  SceneGraph g = random_graph(5, 8, d_in, rng);
  GatParams p = GatParams::init(d_in, d_h, 2, rng);
  std::vector<NamedParam> params;
  p.collect("gat", params);
  auto f = [&] { return sum_all(gat_forward(g, g.node_features, p)); };
  return {"gat", finite_diff_check(f, params)};
}

ModuleGradCheck check_edgeconv(std::size_t d_h, std::mt19937_64& rng) {
  SceneGraph g = random_graph(4, 6, d_h, rng);
  EdgeConvParams p = EdgeConvParams::init(d_h, rng);
  std::vector<NamedParam> params;
  p.collect("edgeconv", params);
  Tensor x = random_matrix(4, d_h, rng, true);
  params.push_back({"edgeconv.input", x});
  auto f = [&] { return sum_all(edgeconv_forward(x, g, p)); };
  return {"edgeconv", finite_diff_check(f, params)};
}

ModuleGradCheck check_pool(std::size_t d_h, std::mt19937_64& rng) {
  Tensor x = random_matrix(5, d_h, rng, true);
  Tensor weights = random_matrix(1, 2 * d_h, rng);
  std::vector<NamedParam> params{{"pool.input", x}};
  // weighted sum keeps max-pool subgradients informative
  auto f = [&] { return sum_all(mul(graph_pool(x), weights)); };
  return {"graph_pool", finite_diff_check(f, params)};
}

ModuleGradCheck check_window(std::size_t d_h, std::mt19937_64& rng) {
  WindowParams p = WindowParams::init(2 * d_h, 3, rng);
  VisualMemorySequence seq;
  for (int i = 0; i < 4; ++i) seq.frames.push_back(random_matrix(1, 2 * d_h, rng, true));
  std::vector<NamedParam> params;
  p.collect("window", params);
  for (std::size_t i = 0; i < seq.frames.size(); ++i)
    params.push_back({"window.frame" + std::to_string(i), seq.frames[i]});
  auto f = [&] {
    VisualMemorySequence out = aggregate_sequence(seq, p);
    Tensor total = out.frames[0];
    for (std::size_t i = 1; i < out.frames.size(); ++i) total = add(total, out.frames[i]);
    return sum_all(total);
  };
  return {"window_aggregation", finite_diff_check(f, params)};
}

ModuleGradCheck check_mha(std::size_t d_h, std::mt19937_64& rng, bool shuffled) {
  MhaParams p = MhaParams::init(d_h, 2,
                                shuffled ? ShuffleMode::Deterministic : ShuffleMode::Off, rng);
  Tensor x_q = random_matrix(3, d_h, rng, true);
  Tensor x_kv = random_matrix(4, d_h, rng, true);
  std::vector<NamedParam> params;
  p.collect("mha", params);
  params.push_back({"mha.x_q", x_q});
  params.push_back({"mha.x_kv", x_kv});
  ShuffleSpec spec = ShuffleSpec::transpose_shuffle(2, 2);
  auto f = [&] {
    Tensor out = shuffled ? shuffled_mha(x_q, x_kv, p, spec) : mha(x_q, x_kv, p);
    return sum_all(out);
  };
  return {shuffled ? "shuffled_mha" : "mha", finite_diff_check(f, params)};
}

ModuleGradCheck check_ffn(std::size_t d_h, std::mt19937_64& rng) {
  FfnParams p = FfnParams::init(d_h, 2 * d_h, rng);
  Tensor x = random_matrix(3, d_h, rng, true);
  std::vector<NamedParam> params;
  p.collect("ffn", params);
  params.push_back({"ffn.input", x});
  auto f = [&] { return sum_all(ffn(x, p)); };
  return {"ffn", finite_diff_check(f, params)};
}

ModuleGradCheck check_generation_head(std::size_t d_h, std::mt19937_64& rng) {
  const std::size_t vocab = 9;
  Tensor fused = random_matrix(3, 4 * d_h, rng, true);
  Tensor w = xavier_uniform(4 * d_h, vocab, rng);
  Tensor b = Tensor::zeros({1, vocab}, true);
  std::vector<NamedParam> params{{"gen.fused", fused}, {"gen.w", w}, {"gen.b", b}};
  const std::vector<int> targets{4, 7, 2};
  auto f = [&] {
    Tensor probs = softmax_rows(add_row_bias(matmul(fused, w), b));
    return smoothed_ce_loss(probs, targets, 0.1);
  };
  return {"generation_head", finite_diff_check(f, params)};
}

ModuleGradCheck check_retrieval_head(std::size_t d_h, std::mt19937_64& rng) {
  // standalone gated recurrence + dot-product scorer on 3 candidates
  const std::size_t hid = 4 * d_h;
  ModelConfig cfg = ModelConfig::desk_profile();
  cfg.d_h = d_h;
  cfg.heads = 2;
  cfg.d_ff = 2 * d_h;
  cfg.d_vis = 4;
  cfg.d_label = 4;
  cfg.min_count = 1;
  Vocabulary vocab;
  vocab.id_to_token = {"<pad>", "<sos>", "<eos>", "<unk>", "a", "b", "c", "d"};
  for (std::size_t i = 4; i < vocab.id_to_token.size(); ++i)
    vocab.token_to_id.emplace(vocab.id_to_token[i], static_cast<int>(i));
  DialogModel model(cfg, vocab, 2);
  std::vector<NamedParam> lstm_params;
  for (auto& p : model.parameters())
    if (p.name.rfind("retr.", 0) == 0) lstm_params.push_back(p);
  Tensor context = random_matrix(1, hid, rng, true);
  lstm_params.push_back({"retr.context", context});
  const std::vector<std::vector<int>> cands{{4, 5}, {6}, {7, 5, 4}};
  auto f = [&] {
    ForwardCtx ctx = model.make_ctx(false, nullptr);
    std::vector<Tensor> scores;
    for (const auto& c : cands)
      scores.push_back(matmul(context, transpose(model.embed_candidate(c, ctx))));
    std::vector<double> targets{1.0, 0.0, 0.0};
    return bce_with_logits_mean(concat(scores, 1), targets);
  };
  return {"retrieval_head", finite_diff_check(f, lstm_params)};
}

ModuleGradCheck check_full_model(std::size_t d_h, std::uint64_t seed) {
  SyntheticTaskSpec spec;
  spec.seed = seed;
  spec.frames = 2;
  spec.min_objects = 2;
  spec.max_objects = 3;
  spec.d_vis = 6;
  spec.history_turns = 1;
  spec.candidates = 3;
  Dataset data = synthesize(spec, 2);

  ModelConfig cfg = ModelConfig::desk_profile();
  cfg.d_h = d_h;
  cfg.heads = 2;
  cfg.d_ff = 2 * d_h;
  cfg.d_vis = spec.d_vis;
  cfg.d_label = 4;
  cfg.seed = seed;
  cfg.min_count = 1;
  Vocabulary vocab = build_vocab(text_corpus(data.examples), 1);
  DialogModel model(cfg, vocab, data.labels.word_count);
  std::vector<NamedParam> params = model.parameters();

  auto f = [&, data] {
    ForwardCtx ctx = model.make_ctx(false, nullptr);
    std::span<const DialogExample> one(data.examples.data(), 1);
    Tensor gen = model.generation_loss(one, data.labels, ctx);
    Tensor retr = model.retrieval_batch_loss(one, data.labels, ctx);
    return add(gen, retr);
  };
  return {"full_model", finite_diff_check(f, params)};
}

}  // namespace

std::vector<ModuleGradCheck> run_gradient_suite(std::size_t d_h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<ModuleGradCheck> out;
  out.push_back(check_gat(d_h, rng));
  out.push_back(check_edgeconv(d_h, rng));
  out.push_back(check_pool(d_h, rng));
  out.push_back(check_window(d_h, rng));
  out.push_back(check_mha(d_h, rng, false));
  out.push_back(check_mha(d_h, rng, true));
  out.push_back(check_ffn(d_h, rng));
  out.push_back(check_generation_head(d_h, rng));
  out.push_back(check_retrieval_head(d_h, rng));
  out.push_back(check_full_model(d_h, seed));
  return out;
}

}  // namespace stsgr
