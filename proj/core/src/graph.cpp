#include "stsgr/graph.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>

namespace stsgr {

void SceneGraph::validate() const {
  const std::size_t n = node_features.rows();
  if (n < 1) throw std::invalid_argument("scene graph: must have at least one node");
  std::set<std::pair<int, int>> seen;
  for (const auto& [i, j] : edges) {
    if (i < 0 || j < 0 || i >= static_cast<int>(n) || j >= static_cast<int>(n))
      throw std::invalid_argument("scene graph: edge (" + std::to_string(i) + "," +
                                  std::to_string(j) + ") out of range for " +
                                  std::to_string(n) + " nodes");
    if (!seen.insert({i, j}).second)
      throw std::invalid_argument("scene graph: duplicate edge (" + std::to_string(i) + "," +
                                  std::to_string(j) + ")");
  }
  if (!label_ids.empty() && label_ids.size() != n)
    throw std::invalid_argument("scene graph: labels size " + std::to_string(label_ids.size()) +
                                " != node count " + std::to_string(n));
  if (!union_node_flags.empty() && union_node_flags.size() != n)
    throw std::invalid_argument("scene graph: union_flags size " +
                                std::to_string(union_node_flags.size()) + " != node count " +
                                std::to_string(n));
}

std::vector<std::vector<std::size_t>> in_neighbors_with_self(const SceneGraph& g) {
  const std::size_t n = g.node_count();
  std::vector<std::vector<std::size_t>> nbrs(n);
  for (std::size_t i = 0; i < n; ++i) nbrs[i].push_back(i);
  for (const auto& [src, dst] : g.edges)
    if (src != dst) nbrs[static_cast<std::size_t>(dst)].push_back(static_cast<std::size_t>(src));
  for (auto& v : nbrs) std::sort(v.begin(), v.end());
  return nbrs;
}

SceneGraph without_union_nodes(const SceneGraph& g) {
  if (g.union_node_flags.empty()) return g;
  const std::size_t n = g.node_count();
  std::vector<int> remap(n, -1);
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < n; ++i)
    if (!g.union_node_flags[i]) {
      remap[i] = static_cast<int>(kept.size());
      kept.push_back(i);
    }
  if (kept.empty() || kept.size() == n) {
    if (kept.empty())
      throw std::invalid_argument("scene graph: removing union nodes leaves no nodes");
    return g;
  }
  SceneGraph out;
  out.frame_index = g.frame_index;
  out.node_features = gather_rows(g.node_features, kept);
  for (const auto& [i, j] : g.edges)
    if (remap[i] >= 0 && remap[j] >= 0) out.edges.emplace_back(remap[i], remap[j]);
  if (!g.label_ids.empty())
    for (std::size_t i : kept) out.label_ids.push_back(g.label_ids[i]);
  out.union_node_flags.assign(kept.size(), false);
  return out;
}

GatParams GatParams::init(std::size_t d_in, std::size_t d_h, std::size_t heads,
                          std::mt19937_64& rng) {
  if (d_h % heads != 0)
    throw std::invalid_argument("gat: d_h " + std::to_string(d_h) +
                                " not divisible by heads " + std::to_string(heads));
  GatParams p;
  p.heads = heads;
  for (std::size_t k = 0; k < heads; ++k) {
    p.w1.push_back(xavier_uniform(d_in, d_h, rng));
    p.theta.push_back(xavier_uniform(2 * d_h, 1, rng));
    p.w2.push_back(xavier_uniform(d_in, d_h / heads, rng));
  }
  return p;
}

void GatParams::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  for (std::size_t k = 0; k < heads; ++k) {
    const std::string h = prefix + ".h" + std::to_string(k);
    out.push_back({h + ".w1", w1[k]});
    out.push_back({h + ".theta", theta[k]});
    out.push_back({h + ".w2", w2[k]});
  }
}

Tensor gat_forward(const SceneGraph& g, const Tensor& x, const GatParams& p) {
  const std::size_t n = x.rows();
  if (n == 0) throw std::invalid_argument("gat_forward: empty graph");
  if (g.node_count() != n)
    throw std::invalid_argument("gat_forward: feature rows " + std::to_string(n) +
                                " != graph nodes " + std::to_string(g.node_count()));
  if (x.cols() != p.d_in())
    throw std::invalid_argument("gat_forward: input width " + std::to_string(x.cols()) +
                                " != params d_in " + std::to_string(p.d_in()));
  const std::size_t d_h = p.d_h();
  const auto nbrs = in_neighbors_with_self(g);

  std::vector<Tensor> head_outputs;
  head_outputs.reserve(p.heads);
  for (std::size_t k = 0; k < p.heads; ++k) {
    Tensor s = matmul(x, p.w1[k]);                               // N x d_h
    Tensor theta_self = slice_rows(p.theta[k], 0, d_h);          // applied to W1 x_i
    Tensor theta_nbr = slice_rows(p.theta[k], d_h, 2 * d_h);     // applied to W1 x_j
    Tensor a = matmul(s, theta_self);                            // N x 1
    Tensor b = matmul(s, theta_nbr);                             // N x 1
    Tensor z = matmul(x, p.w2[k]);                               // N x d_h/K

    std::vector<Tensor> rows;
    rows.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& idx = nbrs[i];
      std::vector<std::size_t> self_rep(idx.size(), i);
      Tensor logits = add(gather_rows(a, self_rep), gather_rows(b, idx));  // |N_i| x 1
      Tensor alpha = softmax_rows(transpose(leaky_relu(logits)));          // 1 x |N_i|
      rows.push_back(matmul(alpha, gather_rows(z, idx)));                  // 1 x d_h/K
    }
    head_outputs.push_back(leaky_relu(concat(rows, 0)));
  }
  return concat(head_outputs, 1);  // N x d_h
}

EdgeConvParams EdgeConvParams::init(std::size_t d_h, std::mt19937_64& rng) {
  EdgeConvParams p;
  p.w1 = xavier_uniform(2 * d_h, d_h, rng);
  p.b1 = Tensor::zeros({1, d_h}, true);
  p.w2 = xavier_uniform(d_h, d_h, rng);
  p.b2 = Tensor::zeros({1, d_h}, true);
  return p;
}

void EdgeConvParams::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".w1", w1});
  out.push_back({prefix + ".b1", b1});
  out.push_back({prefix + ".w2", w2});
  out.push_back({prefix + ".b2", b2});
}

Tensor edgeconv_forward(const Tensor& x_prime, const SceneGraph& g,
                        const EdgeConvParams& p) {
  const std::size_t n = x_prime.rows();
  if (g.node_count() != n)
    throw std::invalid_argument("edgeconv_forward: feature rows != graph nodes");
  if (x_prime.cols() != p.d_h())
    throw std::invalid_argument("edgeconv_forward: input width " +
                                std::to_string(x_prime.cols()) + " != params d_h " +
                                std::to_string(p.d_h()));
  const auto nbrs = in_neighbors_with_self(g);

  // All incoming edges (j, i) grouped by destination i; self-loops keep every
  // group non-empty.
  std::vector<std::size_t> srcs, dsts, group_offset(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j : nbrs[i]) {
      srcs.push_back(j);
      dsts.push_back(i);
    }
    group_offset[i + 1] = srcs.size();
  }
  Tensor pair_in = concat({gather_rows(x_prime, srcs), gather_rows(x_prime, dsts)}, 1);
  Tensor hidden = relu(add_row_bias(matmul(pair_in, p.w1), p.b1));
  Tensor edge_feat = add_row_bias(matmul(hidden, p.w2), p.b2);  // E x d_h

  std::vector<Tensor> rows;
  rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (group_offset[i] == group_offset[i + 1])
      throw std::logic_error("edgeconv_forward: node " + std::to_string(i) +
                             " has no incoming edges after augmentation");
    rows.push_back(max_rows(slice_rows(edge_feat, group_offset[i], group_offset[i + 1])));
  }
  return concat(rows, 0);
}

Tensor graph_pool(const Tensor& x_star) {
  if (x_star.rows() < 1) throw std::invalid_argument("graph_pool: empty node set");
  return concat({mean_rows(x_star), max_rows(x_star)}, 1);
}

LabelVocab LabelVocab::from_names(std::vector<std::string> names) {
  LabelVocab v;
  v.names = std::move(names);
  std::vector<std::string> word_list;
  std::map<std::string, std::size_t> word_ids;
  for (const auto& name : v.names) {
    std::vector<std::size_t> ids;
    std::string word;
    auto flush = [&] {
      if (word.empty()) return;
      auto it = word_ids.find(word);
      if (it == word_ids.end()) {
        it = word_ids.emplace(word, word_list.size()).first;
        word_list.push_back(word);
      }
      ids.push_back(it->second);
      word.clear();
    };
    for (char c : name) {
      if (c == ' ')
        flush();
      else
        word.push_back(c);
    }
    flush();
    v.words.push_back(std::move(ids));
  }
  v.word_count = word_list.size();
  return v;
}

Tensor label_embed(std::span<const int> label_ids, const LabelVocab& vocab,
                   const Tensor& table) {
  const std::size_t d = table.cols();
  std::vector<Tensor> rows;
  rows.reserve(label_ids.size());
  for (int id : label_ids) {
    if (id < 0) {
      rows.push_back(Tensor::zeros({1, d}));
      continue;
    }
    if (static_cast<std::size_t>(id) >= vocab.words.size())
      throw std::invalid_argument("label_embed: label id " + std::to_string(id) +
                                  " out of range for vocabulary of " +
                                  std::to_string(vocab.words.size()));
    const auto& word_ids = vocab.words[static_cast<std::size_t>(id)];
    if (word_ids.empty()) {
      rows.push_back(Tensor::zeros({1, d}));
    } else {
      rows.push_back(mean_rows(gather_rows(table, word_ids)));
    }
  }
  return concat(rows, 0);
}

IntraFrameNet IntraFrameNet::init(std::size_t d_in, std::size_t d_h, std::size_t heads,
                                  std::size_t gat_layers, std::size_t edgeconv_layers,
                                  bool use_gat, bool use_edgeconv, std::mt19937_64& rng) {
  IntraFrameNet net;
  net.d_in = d_in;
  net.d_h = d_h;
  net.use_gat = use_gat;
  net.use_edgeconv = use_edgeconv;
  if (use_gat) {
    for (std::size_t l = 0; l < gat_layers; ++l)
      net.gat.push_back(GatParams::init(l == 0 ? d_in : d_h, d_h, heads, rng));
  } else {
    net.proj_w = xavier_uniform(d_in, d_h, rng);
    net.proj_b = Tensor::zeros({1, d_h}, true);
  }
  if (use_edgeconv)
    for (std::size_t l = 0; l < edgeconv_layers; ++l)
      net.edge.push_back(EdgeConvParams::init(d_h, rng));
  return net;
}

void IntraFrameNet::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  for (std::size_t l = 0; l < gat.size(); ++l)
    gat[l].collect(prefix + ".gat" + std::to_string(l), out);
  if (!use_gat) {
    out.push_back({prefix + ".proj.w", proj_w});
    out.push_back({prefix + ".proj.b", proj_b});
  }
  for (std::size_t l = 0; l < edge.size(); ++l)
    edge[l].collect(prefix + ".edge" + std::to_string(l), out);
}

Tensor IntraFrameNet::node_update(const SceneGraph& g, const Tensor& x) const {
  Tensor h = x;
  if (use_gat) {
    for (const auto& layer : gat) h = gat_forward(g, h, layer);
  } else {
    h = leaky_relu(add_row_bias(matmul(h, proj_w), proj_b));
  }
  if (use_edgeconv)
    for (const auto& layer : edge) h = edgeconv_forward(h, g, layer);
  return h;
}

FrameMemory IntraFrameNet::frame_memory(const SceneGraph& g, const Tensor& x) const {
  return FrameMemory{graph_pool(node_update(g, x)), g.frame_index};
}

}  // namespace stsgr
