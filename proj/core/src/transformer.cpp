#include "stsgr/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace stsgr {

ShuffleSpec ShuffleSpec::transpose_shuffle(std::size_t heads, std::size_t segments) {
  ShuffleSpec s;
  s.heads = heads;
  s.segments = segments;
  s.perm.resize(heads * segments);
  for (std::size_t k = 0; k < heads; ++k)
    for (std::size_t g = 0; g < segments; ++g) s.perm[k * segments + g] = g * heads + k;
  return s;
}

ShuffleSpec ShuffleSpec::identity(std::size_t heads, std::size_t segments) {
  ShuffleSpec s;
  s.heads = heads;
  s.segments = segments;
  s.perm.resize(heads * segments);
  std::iota(s.perm.begin(), s.perm.end(), 0);
  return s;
}

ShuffleSpec ShuffleSpec::random_shuffle(std::size_t heads, std::size_t segments,
                                        std::mt19937_64& rng) {
  ShuffleSpec s = identity(heads, segments);
  for (std::size_t i = s.perm.size(); i > 1; --i)
    std::swap(s.perm[i - 1], s.perm[rng() % i]);
  return s;
}

bool ShuffleSpec::is_bijection() const {
  if (perm.size() != heads * segments) return false;
  std::vector<bool> hit(perm.size(), false);
  for (std::size_t p : perm) {
    if (p >= perm.size() || hit[p]) return false;
    hit[p] = true;
  }
  return true;
}

std::vector<std::size_t> ShuffleSpec::inverse() const {
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
  return inv;
}

MhaParams MhaParams::init(std::size_t d_h, std::size_t heads, ShuffleMode mode,
                          std::mt19937_64& rng) {
  if (d_h % heads != 0)
    throw std::invalid_argument("mha: d_h " + std::to_string(d_h) +
                                " not divisible by heads " + std::to_string(heads));
  MhaParams p;
  p.heads = heads;
  p.mode = mode;
  p.wq = xavier_uniform(d_h, d_h, rng);
  p.wk = xavier_uniform(d_h, d_h, rng);
  p.wv = xavier_uniform(d_h, d_h, rng);
  if (mode == ShuffleMode::Off) {
    p.out_maps.push_back(xavier_uniform(d_h, d_h, rng));
  } else {
    const std::size_t w = d_h / heads;
    for (std::size_t k = 0; k < heads; ++k) p.out_maps.push_back(xavier_uniform(w, w, rng));
  }
  return p;
}

void MhaParams::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".wq", wq});
  out.push_back({prefix + ".wk", wk});
  out.push_back({prefix + ".wv", wv});
  if (out_maps.size() == 1) {
    out.push_back({prefix + ".out", out_maps[0]});
  } else {
    for (std::size_t k = 0; k < out_maps.size(); ++k)
      out.push_back({prefix + ".out" + std::to_string(k), out_maps[k]});
  }
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const Mask* mask) {
  if (q.cols() != k.cols())
    throw std::invalid_argument("attention: query width " + std::to_string(q.cols()) +
                                " != key width " + std::to_string(k.cols()));
  if (k.rows() != v.rows())
    throw std::invalid_argument("attention: " + std::to_string(k.rows()) + " keys vs " +
                                std::to_string(v.rows()) + " values");
  Tensor logits = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(q.cols())));
  Tensor weights = mask ? masked_softmax_rows(logits, *mask) : softmax_rows(logits);
  return matmul(weights, v);
}

namespace {

std::vector<Tensor> head_attention(const Tensor& x_q, const Tensor& x_kv,
                                   const MhaParams& p, const Mask* mask) {
  if (x_q.cols() != p.d_h() || x_kv.cols() != p.d_h())
    throw std::invalid_argument("mha: input width must be d_h = " + std::to_string(p.d_h()));
  if (mask && (mask->rows != x_q.rows() || mask->cols != x_kv.rows()))
    throw std::invalid_argument("mha: mask " + std::to_string(mask->rows) + "x" +
                                std::to_string(mask->cols) + " does not match " +
                                std::to_string(x_q.rows()) + " queries x " +
                                std::to_string(x_kv.rows()) + " keys");
  Tensor q = matmul(x_q, p.wq);
  Tensor k = matmul(x_kv, p.wk);
  Tensor v = matmul(x_kv, p.wv);
  const std::size_t w = p.head_width();
  std::vector<Tensor> heads;
  heads.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h)
    heads.push_back(attention(slice_cols(q, h * w, (h + 1) * w),
                              slice_cols(k, h * w, (h + 1) * w),
                              slice_cols(v, h * w, (h + 1) * w), mask));
  return heads;
}

}  // namespace

Tensor mha(const Tensor& x_q, const Tensor& x_kv, const MhaParams& p, const Mask* mask) {
  if (p.out_maps.size() != 1)
    throw std::invalid_argument("mha: expected a single output transform, got " +
                                std::to_string(p.out_maps.size()));
  std::vector<Tensor> heads = head_attention(x_q, x_kv, p, mask);
  return matmul(concat(heads, 1), p.out_maps[0]);
}

std::vector<Tensor> head_shuffle(std::span<const Tensor> head_outputs,
                                 const ShuffleSpec& spec) {
  if (head_outputs.size() != spec.heads)
    throw std::invalid_argument("head_shuffle: " + std::to_string(head_outputs.size()) +
                                " heads vs spec " + std::to_string(spec.heads));
  if (!spec.is_bijection())
    throw std::invalid_argument("head_shuffle: permutation is not a bijection");
  const std::size_t width = head_outputs[0].cols();
  if (width % spec.segments != 0)
    throw std::invalid_argument("head_shuffle: head width " + std::to_string(width) +
                                " not divisible by " + std::to_string(spec.segments) +
                                " segments");
  const std::size_t seg_w = width / spec.segments;
  // slot s (filled by the segment with perm == s) -> source (head, segment)
  const std::vector<std::size_t> inv = spec.inverse();
  std::vector<Tensor> bundles;
  bundles.reserve(spec.heads);
  for (std::size_t b = 0; b < spec.heads; ++b) {
    std::vector<Tensor> slots;
    slots.reserve(spec.segments);
    for (std::size_t s = 0; s < spec.segments; ++s) {
      const std::size_t src = inv[b * spec.segments + s];
      const std::size_t src_head = src / spec.segments;
      const std::size_t src_seg = src % spec.segments;
      slots.push_back(
          slice_cols(head_outputs[src_head], src_seg * seg_w, (src_seg + 1) * seg_w));
    }
    bundles.push_back(spec.segments == 1 ? slots[0] : concat(slots, 1));
  }
  return bundles;
}

Tensor shuffled_mha(const Tensor& x_q, const Tensor& x_kv, const MhaParams& p,
                    const ShuffleSpec& spec, const Mask* mask) {
  if (p.out_maps.size() != p.heads)
    throw std::invalid_argument("shuffled_mha: expected " + std::to_string(p.heads) +
                                " output maps, got " + std::to_string(p.out_maps.size()));
  std::vector<Tensor> heads = head_attention(x_q, x_kv, p, mask);
  std::vector<Tensor> bundles = head_shuffle(heads, spec);
  std::vector<Tensor> mapped;
  mapped.reserve(bundles.size());
  for (std::size_t b = 0; b < bundles.size(); ++b)
    mapped.push_back(matmul(bundles[b], p.out_maps[b]));
  return concat(mapped, 1);
}

FfnParams FfnParams::init(std::size_t d_h, std::size_t d_ff, std::mt19937_64& rng) {
  FfnParams p;
  p.w1 = xavier_uniform(d_h, d_ff, rng);
  p.b1 = Tensor::zeros({1, d_ff}, true);
  p.w2 = xavier_uniform(d_ff, d_h, rng);
  p.b2 = Tensor::zeros({1, d_h}, true);
  return p;
}

void FfnParams::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".w1", w1});
  out.push_back({prefix + ".b1", b1});
  out.push_back({prefix + ".w2", w2});
  out.push_back({prefix + ".b2", b2});
}

Tensor ffn(const Tensor& x, const FfnParams& p) {
  return add_row_bias(matmul(relu(add_row_bias(matmul(x, p.w1), p.b1)), p.w2), p.b2);
}

Tensor positional_encoding(std::size_t len, std::size_t d) {
  std::vector<double> v(len * d);
  for (std::size_t t = 0; t < len; ++t)
    for (std::size_t i = 0; i < d; ++i) {
      const double freq =
          std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      const double angle = static_cast<double>(t) * freq;
      v[t * d + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return Tensor({len, d}, std::move(v));
}

EncoderStage EncoderStage::init(std::size_t d_h, std::size_t d_ff, std::size_t heads,
                                ShuffleMode mode, bool use_residual_ln,
                                std::mt19937_64& rng) {
  EncoderStage s;
  s.mha_params = MhaParams::init(d_h, heads, mode, rng);
  s.ffn_params = FfnParams::init(d_h, d_ff, rng);
  s.use_residual_ln = use_residual_ln;
  if (use_residual_ln) {
    s.ln1_gamma = Tensor::full({1, d_h}, 1.0, true);
    s.ln1_beta = Tensor::zeros({1, d_h}, true);
    s.ln2_gamma = Tensor::full({1, d_h}, 1.0, true);
    s.ln2_beta = Tensor::zeros({1, d_h}, true);
  }
  return s;
}

void EncoderStage::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  mha_params.collect(prefix + ".mha", out);
  ffn_params.collect(prefix + ".ffn", out);
  if (use_residual_ln) {
    out.push_back({prefix + ".ln1.gamma", ln1_gamma});
    out.push_back({prefix + ".ln1.beta", ln1_beta});
    out.push_back({prefix + ".ln2.gamma", ln2_gamma});
    out.push_back({prefix + ".ln2.beta", ln2_beta});
  }
}

Tensor EncoderStage::forward(const Tensor& x_q, const Tensor& x_kv, const Mask* mask,
                             ForwardCtx& ctx) const {
  Tensor att = mha_params.mode == ShuffleMode::Off
                   ? mha(x_q, x_kv, mha_params, mask)
                   : shuffled_mha(x_q, x_kv, mha_params, ctx.shuffle, mask);
  if (ctx.training && ctx.dropout > 0.0 && ctx.rng)
    att = dropout(att, ctx.dropout, *ctx.rng, true);
  if (!use_residual_ln) return ffn(att, ffn_params);
  Tensor h = layer_norm_rows(add(x_q, att), ln1_gamma, ln1_beta);
  Tensor f = ffn(h, ffn_params);
  if (ctx.training && ctx.dropout > 0.0 && ctx.rng)
    f = dropout(f, ctx.dropout, *ctx.rng, true);
  return layer_norm_rows(add(h, f), ln2_gamma, ln2_beta);
}

ShuffleSpec resolve_shuffle(const ModelConfig& cfg, bool training, std::mt19937_64* rng) {
  const std::size_t segments = cfg.segments();
  if (cfg.shuffle_mode == ShuffleMode::RandomPerStep && training) {
    if (!rng) throw std::invalid_argument("resolve_shuffle: random mode needs an rng");
    return ShuffleSpec::random_shuffle(cfg.heads, segments, *rng);
  }
  return ShuffleSpec::transpose_shuffle(cfg.heads, segments);
}

}  // namespace stsgr
