#pragma once

// Heterogeneous Graph Transformer layers over the document graph: per-head
// attention with node-type-specific key/query/message projections,
// edge-type-specific W_a/W_m matrices and a learned meta-relation prior mu.
// Per head i on edge (s, e, t):
//   A-head_i = mu(phi(s), psi(e), phi(t)) / sqrt(d) * (K_i(s) W_a Q_i(t)^T)
//   attention = softmax over t's in-neighborhood, per head
//   M-head_i  = M-linear_i(h(s)) W_m
//   h~(t) = sum_s Attn * Msg,  h'(t) = G-head(gelu(h~(t))) + h(t)
// Isolated targets keep their state through the residual (G is bias-free and
// gelu(0) = 0).

#include <map>
#include <memory>
#include <random>
#include <stdexcept>
#include <vector>

#include "temprex/autodiff.hpp"
#include "temprex/hetgraph.hpp"
#include "temprex/nn.hpp"

namespace temprex {

struct HgtConfig {
  int dim = 64;   // d; equals the span embedding dim so the residual lines up
  int heads = 2;  // N_h; must divide dim
  int layers = 2;
  int iterations = 2;           // refinement passes over the layer stack
  double dropout = 0.3;
  double residual_coefficient = 1.0;
  bool proj_bias = true;        // K/Q/M biases (bias-free in identity tests)
  bool share_iteration_params = true;
};

struct HgtLayerParams {
  std::vector<nn::Linear> K, Q, M;  // per node type, d -> d (head blocks)
  std::vector<ad::Var> G;           // per node type, bias-free d x d
  std::vector<ad::Var> Wa, Wm;      // per edge type, (d/heads) x (d/heads)
};

class HgtModule {
 public:
  HgtModule(nn::ParamStore& ps, std::shared_ptr<const GraphTypeRegistry> types,
            const HgtConfig& cfg, std::mt19937_64& rng)
      : cfg_(cfg), types_(std::move(types)) {
    if (cfg.dim % cfg.heads != 0)
      throw std::invalid_argument("HgtConfig: dim must be divisible by heads");
    int n_stacks = cfg.share_iteration_params ? 1 : cfg.iterations;
    for (int s = 0; s < n_stacks; ++s)
      for (int l = 0; l < cfg.layers; ++l)
        stacks_.push_back(make_layer(ps, "hgt.s" + std::to_string(s) + ".l" + std::to_string(l),
                                     rng));
    // One learned significance factor per meta-relation, initialized to one
    // so the homogeneous case starts as plain scaled dot-product attention.
    long n_meta = (long)types_->n_node_types() * types_->n_edge_types() * types_->n_node_types();
    mu_ = ps.add("hgt.mu", ad::Matrix::Ones(n_meta, 1));
  }

  const HgtConfig& config() const { return cfg_; }
  const GraphTypeRegistry& types() const { return *types_; }

  long mu_index(int src_type, int etype, int dst_type) const {
    return ((long)src_type * types_->n_edge_types() + etype) * types_->n_node_types() + dst_type;
  }

  // Per-edge, per-head attention weights in graph.edges order, softmax
  // normalized over each target's in-neighborhood.
  ad::Var mutual_attention(const HeteroGraph& g, const ad::Var& states, int layer) const {
    check(g, states);
    const HgtLayerParams& p = stacks_.at(layer);
    const int dh = cfg_.dim / cfg_.heads;
    auto groups = group_edges(g);
    std::vector<ad::Var> parts;
    std::vector<int> order;  // edge index per concat row
    for (auto& [et, eidx] : groups) {
      auto meta = types_->edge_meta[et];
      std::vector<int> src, dst;
      for (int e : eidx) {
        src.push_back(g.edges[e].src);
        dst.push_back(g.edges[e].dst);
        order.push_back(e);
      }
      ad::Var K = p.K[meta.src_type](ad::gather_rows(states, src));
      ad::Var Q = p.Q[meta.dst_type](ad::gather_rows(states, dst));
      std::vector<ad::Var> head_scores;
      for (int h = 0; h < cfg_.heads; ++h) {
        ad::Var kw = ad::matmul(ad::slice_cols(K, h * dh, dh), p.Wa[et]);
        head_scores.push_back(ad::rowwise_sum(ad::mul(kw, ad::slice_cols(Q, h * dh, dh))));
      }
      ad::Var scores = ad::concat_cols(head_scores);
      ad::Var mu_e = ad::gather_rows(mu_, {(int)mu_index(meta.src_type, et, meta.dst_type)});
      scores = ad::scale(ad::scale_by(scores, mu_e), 1.0 / std::sqrt((double)cfg_.dim));
      parts.push_back(scores);
    }
    if (parts.empty()) return ad::Var::constant(ad::Matrix::Zero(0, cfg_.heads));
    ad::Var all = ad::gather_rows(ad::concat_rows(parts), inverse_permutation(order));
    std::vector<int> dst_per_edge;
    for (const auto& e : g.edges) dst_per_edge.push_back(e.dst);
    return ad::segment_softmax_cols(all, dst_per_edge, (long)g.nodes.size());
  }

  // Per-edge messages (heads concatenated) in graph.edges order.
  ad::Var message(const HeteroGraph& g, const ad::Var& states, int layer) const {
    check(g, states);
    const HgtLayerParams& p = stacks_.at(layer);
    const int dh = cfg_.dim / cfg_.heads;
    auto groups = group_edges(g);
    std::vector<ad::Var> parts;
    std::vector<int> order;
    for (auto& [et, eidx] : groups) {
      auto meta = types_->edge_meta[et];
      std::vector<int> src;
      for (int e : eidx) {
        src.push_back(g.edges[e].src);
        order.push_back(e);
      }
      ad::Var M = p.M[meta.src_type](ad::gather_rows(states, src));
      std::vector<ad::Var> heads;
      for (int h = 0; h < cfg_.heads; ++h)
        heads.push_back(ad::matmul(ad::slice_cols(M, h * dh, dh), p.Wm[et]));
      parts.push_back(ad::concat_cols(heads));
    }
    if (parts.empty()) return ad::Var::constant(ad::Matrix::Zero(0, cfg_.dim));
    return ad::gather_rows(ad::concat_rows(parts), inverse_permutation(order));
  }

  // h'(t) = G-head(gelu(sum_s attn * msg)) + h(t); targets without incoming
  // edges aggregate zero and pass through unchanged.
  ad::Var aggregate(const HeteroGraph& g, const ad::Var& attention, const ad::Var& messages,
                    const ad::Var& states, int layer, bool training,
                    std::mt19937_64& rng) const {
    check(g, states);
    if (attention.rows() != (long)g.edges.size() || messages.rows() != (long)g.edges.size())
      throw std::invalid_argument("aggregate: attention/messages not aligned with edges");
    const HgtLayerParams& p = stacks_.at(layer);
    ad::Var agg;
    if (g.edges.empty()) {
      agg = ad::Var::constant(ad::Matrix::Zero((long)g.nodes.size(), cfg_.dim));
    } else {
      std::vector<int> dst;
      for (const auto& e : g.edges) dst.push_back(e.dst);
      agg = ad::scatter_sum_rows(ad::block_colscale(messages, attention, cfg_.heads), dst,
                                 (long)g.nodes.size());
    }
    ad::Var act = ad::gelu(agg);
    // per-node-type G head, reassembled by scatter (each node appears once)
    std::vector<ad::Var> parts;
    std::vector<int> ids;
    for (int t = 0; t < types_->n_node_types(); ++t) {
      std::vector<int> nodes_t;
      for (size_t i = 0; i < g.nodes.size(); ++i)
        if (g.nodes[i].type == t) nodes_t.push_back((int)i);
      if (nodes_t.empty()) continue;
      parts.push_back(ad::matmul(ad::gather_rows(act, nodes_t), p.G[t]));
      ids.insert(ids.end(), nodes_t.begin(), nodes_t.end());
    }
    ad::Var delta = parts.empty()
                        ? ad::Var::constant(ad::Matrix::Zero((long)g.nodes.size(), cfg_.dim))
                        : ad::scatter_sum_rows(ad::concat_rows(parts), ids,
                                               (long)g.nodes.size());
    delta = ad::dropout(delta, cfg_.dropout, training, rng);
    return ad::add(delta, states);
  }

  ad::Var layer_forward(const HeteroGraph& g, const ad::Var& states, int layer, bool training,
                        std::mt19937_64& rng) const {
    ad::Var attn = mutual_attention(g, states, layer);
    ad::Var msg = message(g, states, layer);
    return aggregate(g, attn, msg, states, layer, training, rng);
  }

  // Applies the full layer stack `iterations` times. With shared parameters
  // every iteration reuses the same stack.
  ad::Var refine(const HeteroGraph& g, const ad::Var& initial_states, bool training,
                 std::mt19937_64& rng) const {
    if (cfg_.iterations < 1) throw std::invalid_argument("refine: iterations must be >= 1");
    ad::Var h = initial_states;
    for (int it = 0; it < cfg_.iterations; ++it) {
      int base = cfg_.share_iteration_params ? 0 : it * cfg_.layers;
      for (int l = 0; l < cfg_.layers; ++l) h = layer_forward(g, h, base + l, training, rng);
    }
    return h;
  }

  int layer_count() const { return (int)stacks_.size(); }

 private:
  HgtLayerParams make_layer(nn::ParamStore& ps, const std::string& name,
                            std::mt19937_64& rng) const {
    HgtLayerParams p;
    const int d = cfg_.dim, dh = d / cfg_.heads;
    for (int t = 0; t < types_->n_node_types(); ++t) {
      const std::string tn = types_->node_types[t];
      p.K.push_back(nn::Linear::create(ps, name + ".K." + tn, d, d, rng, cfg_.proj_bias));
      p.Q.push_back(nn::Linear::create(ps, name + ".Q." + tn, d, d, rng, cfg_.proj_bias));
      p.M.push_back(nn::Linear::create(ps, name + ".M." + tn, d, d, rng, cfg_.proj_bias));
      p.G.push_back(ps.add(name + ".G." + tn, nn::uniform_init(d, d, d, rng)));
    }
    for (int e = 0; e < types_->n_edge_types(); ++e) {
      p.Wa.push_back(ps.add(name + ".Wa." + std::to_string(e), nn::uniform_init(dh, dh, dh, rng)));
      p.Wm.push_back(ps.add(name + ".Wm." + std::to_string(e), nn::uniform_init(dh, dh, dh, rng)));
    }
    return p;
  }

  void check(const HeteroGraph& g, const ad::Var& states) const {
    if (states.rows() != (long)g.nodes.size() || states.cols() != cfg_.dim)
      throw std::invalid_argument("hgt: states shape does not match graph/dim");
    for (const auto& n : g.nodes)
      if (n.type < 0 || n.type >= types_->n_node_types())
        throw std::invalid_argument("hgt: node type without registered parameters");
    for (const auto& e : g.edges)
      if (e.etype < 0 || e.etype >= types_->n_edge_types())
        throw std::invalid_argument("hgt: edge type without registered parameters");
  }

  static std::map<int, std::vector<int>> group_edges(const HeteroGraph& g) {
    std::map<int, std::vector<int>> groups;
    for (size_t i = 0; i < g.edges.size(); ++i) groups[g.edges[i].etype].push_back((int)i);
    return groups;
  }

  static std::vector<int> inverse_permutation(const std::vector<int>& order) {
    std::vector<int> inv(order.size());
    for (size_t row = 0; row < order.size(); ++row) inv[order[row]] = (int)row;
    return inv;
  }

  HgtConfig cfg_;
  std::shared_ptr<const GraphTypeRegistry> types_;
  std::vector<HgtLayerParams> stacks_;  // stack-major: s0.l0, s0.l1, s1.l0, ...
  ad::Var mu_;
};

// enhanced_i = h_graph(entity node i) + coefficient * e_sp_i. Entity nodes
// must map one-to-one onto the span embedding rows.
inline ad::Var combine_residual(const ad::Var& span_embeddings, const ad::Var& states,
                                const HeteroGraph& g, double coefficient) {
  if (coefficient < 0) throw std::invalid_argument("combine_residual: coefficient must be >= 0");
  std::vector<int> entity_nodes(span_embeddings.rows(), -1);
  for (size_t i = 0; i < g.nodes.size(); ++i) {
    const auto& n = g.nodes[i];
    if (n.kind != GraphNode::kEntity) continue;
    if (n.entity_index < 0 || n.entity_index >= (int)entity_nodes.size())
      throw std::invalid_argument("combine_residual: entity index out of range");
    entity_nodes[n.entity_index] = (int)i;
  }
  for (size_t i = 0; i < entity_nodes.size(); ++i)
    if (entity_nodes[i] < 0)
      throw std::invalid_argument("combine_residual: no graph node for span " + std::to_string(i));
  ad::Var graph_part = ad::gather_rows(states, entity_nodes);
  if (coefficient == 0.0) return graph_part;
  return ad::add(graph_part, ad::scale(span_embeddings, coefficient));
}

}  // namespace temprex
