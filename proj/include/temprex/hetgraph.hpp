#pragma once

// Document-level heterogeneous graph built from span-model predictions:
// entity nodes typed by predicted entity type, CONTEXT nodes holding pooled
// between-span embeddings, WINDOW nodes over fixed-length token segments,
// and typed edges indexed by full meta-relation triples
// (source node type, edge type, target node type).

#include <Eigen/Dense>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "temprex/encoding.hpp"
#include "temprex/span_model.hpp"

namespace temprex {

// Stable node/edge type inventory derived from a label schema. All possible
// meta-relations are pre-registered so parameter shapes do not depend on
// which documents have been seen.
struct GraphTypeRegistry {
  std::vector<std::string> node_types;  // entity types, then CONTEXT, WINDOW
  std::vector<std::string> edge_types;
  struct Meta {
    int src_type, dst_type;
  };
  std::vector<Meta> edge_meta;  // parallel to edge_types

  int n_entity_types = 0;
  int context_type = -1, window_type = -1;

  static GraphTypeRegistry build(const LabelSchema& schema) {
    GraphTypeRegistry r;
    r.n_entity_types = (int)schema.entity_types.size();
    r.node_types = schema.entity_types;
    r.context_type = (int)r.node_types.size();
    r.node_types.push_back("CONTEXT");
    r.window_type = (int)r.node_types.size();
    r.node_types.push_back("WINDOW");

    auto add_edge_type = [&](const std::string& name, int src, int dst) {
      r.edge_types.push_back(name);
      r.edge_meta.push_back({src, dst});
    };
    static const char* rel_names[3] = {"Before", "After", "Overlap"};
    for (int h = 0; h < r.n_entity_types; ++h)
      for (int rel = 0; rel < 3; ++rel)
        for (int t = 0; t < r.n_entity_types; ++t)
          add_edge_type(schema.entity_types[h] + "|" + rel_names[rel] + "|" +
                            schema.entity_types[t],
                        h, t);
    for (int e = 0; e < r.n_entity_types; ++e)
      add_edge_type(schema.entity_types[e] + "|BELONGS-TO|WINDOW", e, r.window_type);
    add_edge_type("WINDOW|TO|WINDOW", r.window_type, r.window_type);
    for (int e = 0; e < r.n_entity_types; ++e)
      add_edge_type(schema.entity_types[e] + "|BEFORE-CONTEXT|CONTEXT", e, r.context_type);
    for (int e = 0; e < r.n_entity_types; ++e)
      add_edge_type(schema.entity_types[e] + "|AFTER-CONTEXT|CONTEXT", e, r.context_type);
    return r;
  }

  int n_node_types() const { return (int)node_types.size(); }
  int n_edge_types() const { return (int)edge_types.size(); }

  int relation_edge_type(int head_etype, int rel_class, int tail_etype) const {
    return (head_etype * 3 + rel_class) * n_entity_types + tail_etype;
  }
  int belongs_edge_type(int etype) const {
    return n_entity_types * 3 * n_entity_types + etype;
  }
  int window_chain_edge_type() const {
    return n_entity_types * 3 * n_entity_types + n_entity_types;
  }
  int before_context_edge_type(int etype) const {
    return n_entity_types * 3 * n_entity_types + n_entity_types + 1 + etype;
  }
  int after_context_edge_type(int etype) const {
    return before_context_edge_type(etype) + n_entity_types;
  }
};

struct GraphNode {
  enum Kind { kEntity, kContext, kWindow };
  std::string id;
  Kind kind = kEntity;
  int type = -1;                 // node type id in the registry
  int entity_index = -1;         // entity nodes: row in the entity list
  std::vector<int> between;      // context nodes: pooled token indices
  int window_index = -1;         // window nodes: segment index
  int summary_index = -1;        // window nodes: encoding-window summary row
  Eigen::VectorXd feature;       // construction-time feature (export/tests)
};

struct GraphEdge {
  int src = -1, etype = -1, dst = -1;
};

struct HeteroGraph {
  std::shared_ptr<const GraphTypeRegistry> types;
  std::vector<GraphNode> nodes;
  std::vector<GraphEdge> edges;

  int add_node(GraphNode n) {
    if (n.type < 0 || n.type >= types->n_node_types())
      throw std::invalid_argument("HeteroGraph: unregistered node type");
    nodes.push_back(std::move(n));
    return (int)nodes.size() - 1;
  }
  void add_edge(int src, int etype, int dst) {
    if (src < 0 || src >= (int)nodes.size() || dst < 0 || dst >= (int)nodes.size())
      throw std::invalid_argument("HeteroGraph: edge endpoint does not exist");
    if (etype < 0 || etype >= types->n_edge_types())
      throw std::invalid_argument("HeteroGraph: unregistered edge type");
    const auto& meta = types->edge_meta[etype];
    if (nodes[src].type != meta.src_type || nodes[dst].type != meta.dst_type)
      throw std::invalid_argument("HeteroGraph: endpoint types do not match the meta-relation " +
                                  types->edge_types[etype]);
    edges.push_back({src, etype, dst});
  }
};

// Entity nodes for every prediction in `entities` (already filtered to
// non-NOT-ENTITY), plus one edge per relation prediction that is not
// NO-RELATION and clears the confidence threshold. Overlap edges are
// materialized in both directions; Before/After point head -> tail.
inline HeteroGraph build_entity_subgraph(const std::vector<EntityPrediction>& entities,
                                         const std::vector<RelationPrediction>& relations,
                                         double tau,
                                         std::shared_ptr<const GraphTypeRegistry> types,
                                         const Eigen::MatrixXd* features = nullptr) {
  if (tau < 0.0 || tau > 1.0)
    throw std::invalid_argument("build_entity_subgraph: tau must be in [0,1]");
  HeteroGraph g;
  g.types = std::move(types);
  for (size_t i = 0; i < entities.size(); ++i) {
    if (entities[i].type_index < 0 || entities[i].type_index >= g.types->n_entity_types)
      throw std::invalid_argument("build_entity_subgraph: prediction is not an entity");
    GraphNode n;
    n.id = "e" + std::to_string(i);
    n.kind = GraphNode::kEntity;
    n.type = entities[i].type_index;
    n.entity_index = (int)i;
    if (features) n.feature = features->row((long)i);
    g.add_node(std::move(n));
  }
  for (const auto& r : relations) {
    if (r.rel_class == kRelNone || r.probability < tau) continue;
    int ht = entities[r.head].type_index, tt = entities[r.tail].type_index;
    g.add_edge(r.head, g.types->relation_edge_type(ht, r.rel_class, tt), r.tail);
    if (r.rel_class == kRelOverlap)
      g.add_edge(r.tail, g.types->relation_edge_type(tt, r.rel_class, ht), r.head);
  }
  return g;
}

// One CONTEXT node per entity pair whose between-distance
// (start_j - end_i in lexical order) lies in (1, d_c]. The earlier entity
// connects with BEFORE-CONTEXT, the later one with AFTER-CONTEXT; features
// are the max-pooled strictly-between token embeddings.
inline void add_context_nodes(HeteroGraph& g, const std::vector<Span>& entity_spans,
                              const PairPlan& plan, double d_c,
                              const Eigen::MatrixXd* rho = nullptr) {
  if (d_c < 2)
    throw std::invalid_argument("add_context_nodes: d_c must be >= 2 (one between token)");
  for (size_t p = 0; p < plan.pairs.size(); ++p) {
    auto [i, j] = plan.pairs[p];
    int gap = entity_spans[j].start - entity_spans[i].end;
    if (gap <= 1 || (double)gap > d_c) continue;
    GraphNode n;
    n.id = "ctx:" + std::to_string(i) + ":" + std::to_string(j);
    n.kind = GraphNode::kContext;
    n.type = g.types->context_type;
    n.between = plan.between[p];
    if (rho) {
      Eigen::VectorXd f = Eigen::VectorXd::Constant(rho->cols(),
                                                    -std::numeric_limits<double>::infinity());
      for (int t : n.between) f = f.cwiseMax(rho->row(t).transpose());
      n.feature = n.between.empty() ? Eigen::VectorXd::Zero(rho->cols()) : f;
    }
    int ctx = g.add_node(std::move(n));
    g.add_edge(i, g.types->before_context_edge_type(g.nodes[i].type), ctx);
    g.add_edge(j, g.types->after_context_edge_type(g.nodes[j].type), ctx);
  }
}

// ceil(L / L_w) WINDOW nodes over disjoint consecutive token segments.
// Entities attach to the window containing their start token through an
// edge typed by the entity's type; consecutive windows chain with TO edges.
// Window features come from the encoding window that owns the segment's
// first token (encoding windows overlap, graph segments do not, so the
// owner mapping makes the choice deterministic).
inline void add_window_nodes(HeteroGraph& g, const std::vector<Span>& entity_spans,
                             int token_count, int window_length, const WindowPlan& enc_plan,
                             const Eigen::MatrixXd* summaries = nullptr) {
  if (window_length < 1) throw std::invalid_argument("add_window_nodes: window_length >= 1");
  if (token_count <= 0) return;
  int n_windows = (token_count + window_length - 1) / window_length;
  std::vector<int> window_node_ids;
  for (int w = 0; w < n_windows; ++w) {
    GraphNode n;
    n.id = "win:" + std::to_string(w);
    n.kind = GraphNode::kWindow;
    n.type = g.types->window_type;
    n.window_index = w;
    int first_token = w * window_length;
    n.summary_index =
        first_token < (int)enc_plan.owner.size() ? enc_plan.owner[first_token].first : -1;
    if (summaries && n.summary_index >= 0) n.feature = summaries->row(n.summary_index);
    window_node_ids.push_back(g.add_node(std::move(n)));
  }
  for (size_t i = 0; i < entity_spans.size(); ++i) {
    int w = entity_spans[i].start / window_length;
    g.add_edge((int)i, g.types->belongs_edge_type(g.nodes[i].type), window_node_ids[w]);
  }
  for (int w = 0; w + 1 < n_windows; ++w)
    g.add_edge(window_node_ids[w], g.types->window_chain_edge_type(), window_node_ids[w + 1]);
}

inline int entity_window_index(const Span& span, int window_length) {
  return span.start / window_length;
}

// ---- export ----

inline nlohmann::json hetgraph_to_json(const HeteroGraph& g) {
  nlohmann::json j;
  j["nodes"] = nlohmann::json::array();
  for (const auto& n : g.nodes)
    j["nodes"].push_back({{"id", n.id},
                          {"type", g.types->node_types[n.type]},
                          {"feature_dim", (int)n.feature.size()}});
  j["edges"] = nlohmann::json::array();
  for (const auto& e : g.edges)
    j["edges"].push_back({{"source", g.nodes[e.src].id},
                          {"target", g.nodes[e.dst].id},
                          {"meta_relation", g.types->edge_types[e.etype]}});
  return j;
}

inline std::string hetgraph_to_dot(const HeteroGraph& g) {
  std::ostringstream out;
  out << "digraph document {\n";
  for (const auto& n : g.nodes) {
    const char* shape = n.kind == GraphNode::kEntity ? "ellipse"
                        : n.kind == GraphNode::kContext ? "box" : "diamond";
    out << "  \"" << n.id << "\" [shape=" << shape << ", label=\"" << n.id << "\\n"
        << g.types->node_types[n.type] << "\"];\n";
  }
  for (const auto& e : g.edges)
    out << "  \"" << g.nodes[e.src].id << "\" -> \"" << g.nodes[e.dst].id << "\" [label=\""
        << g.types->edge_types[e.etype] << "\"];\n";
  out << "}\n";
  return out.str();
}

}  // namespace temprex
