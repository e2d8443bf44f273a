#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "stsgr/tensor.hpp"

namespace stsgr {

// Per-frame directed scene graph. Edge (i, j) points from subject i to
// object j; union-box nodes are ordinary nodes flagged in union_node_flags.
struct SceneGraph {
  Tensor node_features;                       // N x d_vis
  std::vector<std::pair<int, int>> edges;     // directed, no duplicates
  std::vector<int> label_ids;                 // size N or empty; -1 = unlabeled
  std::vector<bool> union_node_flags;         // size N or empty
  int frame_index = 0;

  std::size_t node_count() const { return node_features.rows(); }
  void validate() const;  // throws std::invalid_argument naming the violation
};

// In-neighbors of each node plus the node itself, sorted ascending. This is
// the neighborhood used by graph attention and the incoming edge set used by
// edge convolution (self-loops keep both well-defined on isolated nodes).
std::vector<std::vector<std::size_t>> in_neighbors_with_self(const SceneGraph& g);

// Drops union-flagged nodes and their incident edges, remapping indices.
SceneGraph without_union_nodes(const SceneGraph& g);

struct GatParams {
  std::size_t heads = 1;
  std::vector<Tensor> w1;     // per head: d_in x d_h
  std::vector<Tensor> theta;  // per head: 2*d_h x 1
  std::vector<Tensor> w2;     // per head: d_in x (d_h / heads)

  std::size_t d_in() const { return w1.at(0).rows(); }
  std::size_t d_h() const { return w1.at(0).cols(); }
  static GatParams init(std::size_t d_in, std::size_t d_h, std::size_t heads,
                        std::mt19937_64& rng);
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
};

// Two-layer map h(u, v) = relu([u || v] w1 + b1) w2 + b2 from 2*d_h to d_h.
struct EdgeConvParams {
  Tensor w1, b1, w2, b2;

  std::size_t d_h() const { return w2.cols(); }
  static EdgeConvParams init(std::size_t d_h, std::mt19937_64& rng);
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
};

struct FrameMemory {
  Tensor memory;  // 1 x 2*d_h: node mean || coordinatewise max
  int frame_index = 0;
};

// Multi-head graph attention over in-neighbors + self. x holds the node
// inputs (visual features, optionally with label embeddings concatenated).
Tensor gat_forward(const SceneGraph& g, const Tensor& x, const GatParams& p);

// Edge features on every incoming edge (j, i), max-aggregated per node.
Tensor edgeconv_forward(const Tensor& x_prime, const SceneGraph& g,
                        const EdgeConvParams& p);

Tensor graph_pool(const Tensor& x_star);  // 1 x 2*d_h

// Semantic labels: label id -> word ids into a word-embedding table.
struct LabelVocab {
  std::vector<std::string> names;
  std::vector<std::vector<std::size_t>> words;
  std::size_t word_count = 0;

  static LabelVocab from_names(std::vector<std::string> names);
  bool empty() const { return names.empty(); }
};

// Looked-up label rows; multi-word labels average their word embeddings,
// id -1 yields a zero row. Output is N x d_label.
Tensor label_embed(std::span<const int> label_ids, const LabelVocab& vocab,
                   const Tensor& table);

// The intra-frame cascade: (optional label fusion) -> GAT -> EdgeConv ->
// pooling. With use_gat off the nodes go through a shared per-node
// projection instead; with use_edgeconv off that stage passes through.
struct IntraFrameNet {
  std::size_t d_in = 0, d_h = 0;
  bool use_gat = true, use_edgeconv = true;
  std::vector<GatParams> gat;
  std::vector<EdgeConvParams> edge;
  Tensor proj_w, proj_b;  // per-node projection for the no-GAT path

  static IntraFrameNet init(std::size_t d_in, std::size_t d_h, std::size_t heads,
                            std::size_t gat_layers, std::size_t edgeconv_layers,
                            bool use_gat, bool use_edgeconv, std::mt19937_64& rng);
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
  Tensor node_update(const SceneGraph& g, const Tensor& x) const;  // N x d_h
  FrameMemory frame_memory(const SceneGraph& g, const Tensor& x) const;
};

}  // namespace stsgr
