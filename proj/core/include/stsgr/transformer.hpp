#pragma once

#include <random>
#include <string>
#include <vector>

#include "stsgr/config.hpp"
#include "stsgr/tensor.hpp"

namespace stsgr {

// Permutation over the heads*segments attention-output segments.
// perm[src] = destination slot; slot s lands in bundle s / segments.
struct ShuffleSpec {
  std::size_t heads = 1;
  std::size_t segments = 1;
  std::vector<std::size_t> perm;

  // ShuffleNet-style transpose: segment g of head k moves to slot g*heads+k,
  // so bundle g collects segment g of every head.
  static ShuffleSpec transpose_shuffle(std::size_t heads, std::size_t segments);
  static ShuffleSpec identity(std::size_t heads, std::size_t segments);
  static ShuffleSpec random_shuffle(std::size_t heads, std::size_t segments,
                                    std::mt19937_64& rng);
  bool is_bijection() const;
  std::vector<std::size_t> inverse() const;
};

struct MhaParams {
  std::size_t heads = 1;
  Tensor wq, wk, wv;             // d_h x d_h, column blocks per head
  std::vector<Tensor> out_maps;  // 1 map (d_h x d_h) vanilla; heads maps (w x w) shuffled
  ShuffleMode mode = ShuffleMode::Off;

  std::size_t d_h() const { return wq.rows(); }
  std::size_t head_width() const { return d_h() / heads; }
  static MhaParams init(std::size_t d_h, std::size_t heads, ShuffleMode mode,
                        std::mt19937_64& rng);
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
};

// softmax(q kT / sqrt(width)) v; masked entries contribute exactly 0.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const Mask* mask = nullptr);

// Vanilla multi-head attention: per-head attention on head-sliced
// projections, concatenation, one output transform. Requires mode Off.
Tensor mha(const Tensor& x_q, const Tensor& x_kv, const MhaParams& p,
           const Mask* mask = nullptr);

// Splits each head output into spec.segments column segments, permutes all
// heads*segments of them, and re-forms bundles of the original head width.
std::vector<Tensor> head_shuffle(std::span<const Tensor> head_outputs,
                                 const ShuffleSpec& spec);

// Per-head attention -> head_shuffle -> per-bundle output map -> late-fusion
// concatenation. Requires mode != Off (pass the resolved per-step spec).
Tensor shuffled_mha(const Tensor& x_q, const Tensor& x_kv, const MhaParams& p,
                    const ShuffleSpec& spec, const Mask* mask = nullptr);

struct FfnParams {
  Tensor w1, b1;  // d_h x d_ff, 1 x d_ff
  Tensor w2, b2;  // d_ff x d_h, 1 x d_h

  static FfnParams init(std::size_t d_h, std::size_t d_ff, std::mt19937_64& rng);
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
};

Tensor ffn(const Tensor& x, const FfnParams& p);

// Sinusoidal encodings, row t: [sin(t/10000^(0/d)), cos(t/10000^(0/d)), ...].
Tensor positional_encoding(std::size_t len, std::size_t d);

// Per-pass state: training flag, dropout rate, rng for dropout / random
// shuffling, and the shuffle permutation resolved for this pass.
struct ForwardCtx {
  bool training = false;
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;
  ShuffleSpec shuffle;

  static ForwardCtx eval() { return ForwardCtx{}; }
};

// One attention + feed-forward block, optionally with post-sublayer residual
// connections and layer norm (the published Transformer arrangement).
struct EncoderStage {
  MhaParams mha_params;
  FfnParams ffn_params;
  Tensor ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
  bool use_residual_ln = true;

  static EncoderStage init(std::size_t d_h, std::size_t d_ff, std::size_t heads,
                           ShuffleMode mode, bool use_residual_ln, std::mt19937_64& rng);
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
  Tensor forward(const Tensor& x_q, const Tensor& x_kv, const Mask* mask,
                 ForwardCtx& ctx) const;
};

// Resolves the permutation used for one pass: the deterministic transpose in
// eval mode or deterministic mode, a fresh random bijection per training
// step in random mode.
ShuffleSpec resolve_shuffle(const ModelConfig& cfg, bool training, std::mt19937_64* rng);

}  // namespace stsgr
