#pragma once

// Full extraction model: sliding-window encoding, span-based entity and
// relation decoding, and optionally the document graph refined by HGT layers
// whose output re-enters the shared relation decoder. "span" mode stops at
// the initial relation predictions; "graph" mode runs the whole path.

#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "temprex/corpus.hpp"
#include "temprex/encoding.hpp"
#include "temprex/hetgraph.hpp"
#include "temprex/hgt.hpp"
#include "temprex/metrics.hpp"
#include "temprex/span_model.hpp"

namespace temprex {

enum class Mode { Span, Graph };

inline Mode mode_from_string(const std::string& s) {
  if (s == "span" || s == "spantrex") return Mode::Span;
  if (s == "graph" || s == "graphtrex") return Mode::Graph;
  throw std::invalid_argument("unknown mode '" + s + "' (expected span|graph)");
}

// Ablation switches for the graph construction (entity nodes are always on).
struct GraphToggles {
  bool context_nodes = true;
  bool window_nodes = true;
};

struct ModelConfig {
  std::string schema = "i2b2";
  std::string encoder = "hash";  // hash | embedding
  int encoder_dim = 64;
  int encoder_vocab_slots = 4096;  // embedding encoder hash buckets
  bool freeze_encoder = true;
  int window_size = 512;  // encoder input length and graph segment length
  SpanModelConfig span;
  HgtConfig hgt;
  double tau = 0.4;    // confidence threshold for graph edges
  double delta = 0.5;  // context-node distance limit, fraction of doc length
  double negative_sample_rate = 1.0;  // NO-RELATION pairs kept in the loss
  uint64_t seed = 13;
};

struct DocumentPrediction {
  std::vector<EntityPrediction> entities;    // non-NOT-ENTITY, postprocessed
  std::vector<RelationPrediction> relations; // final, NO-RELATION dropped
  TemporalGraph graph;                       // nodes "e0".."eN" by entity index
  std::vector<int> entity_windows;           // window index per entity
  std::optional<HeteroGraph> hetgraph;       // populated in graph mode
};

class Model {
 public:
  explicit Model(const ModelConfig& cfg)
      : cfg_(cfg), schema_(cfg.schema == "e3c" ? LabelSchema::e3c() : LabelSchema::i2b2()),
        init_rng_(cfg.seed), dropout_rng_(cfg.seed ^ 0x9e3779b97f4a7c15ULL) {
    cfg_.hgt.dim = cfg_.span.span_dim;  // residual path requires equal dims
    if (cfg_.encoder == "embedding") {
      encoder_ = std::make_unique<EmbeddingEncoder>(params_, cfg_.encoder_vocab_slots,
                                                    cfg_.encoder_dim, cfg_.window_size, init_rng_);
      encoder_->set_frozen(cfg_.freeze_encoder);
    } else if (cfg_.encoder == "hash") {
      encoder_ = std::make_unique<HashEncoder>(cfg_.encoder_dim, cfg_.window_size, cfg_.seed);
    } else {
      throw std::invalid_argument("unknown encoder '" + cfg_.encoder + "'");
    }
    span_model_ = std::make_unique<SpanModel>(params_, schema_, cfg_.span, cfg_.encoder_dim,
                                              init_rng_);
    graph_types_ = std::make_shared<GraphTypeRegistry>(GraphTypeRegistry::build(schema_));
    hgt_ = std::make_unique<HgtModule>(params_, graph_types_, cfg_.hgt, init_rng_);
    // CONTEXT and WINDOW features live in encoder space; project into the
    // graph hidden dimension.
    ctx_in_ = nn::Linear::create(params_, "graph.ctx_in", cfg_.encoder_dim, cfg_.hgt.dim,
                                 init_rng_);
    win_in_ = nn::Linear::create(params_, "graph.win_in", cfg_.encoder_dim, cfg_.hgt.dim,
                                 init_rng_);
  }

  const ModelConfig& config() const { return cfg_; }
  const LabelSchema& schema() const { return schema_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  Encoder& encoder() { return *encoder_; }

  std::vector<ad::Var> encoder_parameters() { return encoder_->parameters(); }
  std::vector<ad::Var> decoder_parameters() {
    std::vector<ad::Var> out;
    auto enc = encoder_->parameters();
    auto is_enc = [&](const ad::Var& v) {
      for (auto& e : enc)
        if (e.node() == v.node()) return true;
      return false;
    };
    for (auto& [name, v] : params_.entries())
      if (!is_enc(v)) out.push_back(v);
    return out;
  }

  struct Forward {
    std::vector<Span> spans;
    ad::Var entity_logits;                    // S x classes
    std::vector<EntityPrediction> entities;   // filtered to non-NOT-ENTITY
    PairPlan plan;
    std::optional<ad::Var> relation_logits;   // final logits, P x 4
    std::vector<RelationPrediction> relations;
    std::optional<HeteroGraph> graph;
    EncodedDocument encoded;
  };

  // Runs the model on one document. `entity_only` skips everything past the
  // entity decoder (warm-up epochs).
  Forward forward(const Document& doc, Mode mode, bool training, bool entity_only = false,
                  const GraphToggles& toggles = {}) {
    Forward f;
    int T = (int)doc.tokens.size();
    if (T == 0) {
      f.entity_logits =
          ad::Var::constant(ad::Matrix::Zero(0, (long)schema_.entity_types.size() + 1));
      return f;
    }
    f.encoded = encode_document(doc, *encoder_);
    const ad::Var& rho = f.encoded.token_embeddings;
    f.spans = enumerate_spans(T, cfg_.span.k_max);
    ad::Var span_embs = span_model_->embed_spans(f.spans, rho, training, dropout_rng_);
    f.entity_logits = span_model_->entity_logits(span_embs, training, dropout_rng_);
    if (entity_only) return f;

    auto all_preds = span_model_->decode_entities(f.spans, f.entity_logits.value());
    std::vector<int> entity_span_indices;
    for (auto& p : all_preds) {
      if (p.type_index == span_model_->not_entity_class()) continue;
      entity_span_indices.push_back(p.span_index);
      f.entities.push_back(std::move(p));
    }
    if (f.entities.empty()) return f;

    std::vector<Span> entity_spans;
    std::vector<int> entity_types;
    for (const auto& e : f.entities) {
      entity_spans.push_back(e.span);
      entity_types.push_back(e.type_index);
    }
    f.plan = build_pair_plan(entity_spans, cfg_.span.max_pair_candidates);
    ad::Var ent_embs = ad::gather_rows(span_embs, entity_span_indices);

    ad::Var reps = span_model_->pair_representations(ent_embs, entity_types, f.plan, rho);
    ad::Var initial_logits = span_model_->relation_logits(reps, training, dropout_rng_);

    if (mode == Mode::Span || f.plan.pairs.empty()) {
      f.relation_logits = initial_logits;
      f.relations = span_model_->decode_relations(f.plan, initial_logits.value());
      return f;
    }

    // graph construction from the initial high-confidence predictions
    auto initial_preds = span_model_->decode_relations(f.plan, initial_logits.value());
    Eigen::MatrixXd feat = ent_embs.value();
    HeteroGraph g = build_entity_subgraph(f.entities, initial_preds, cfg_.tau, graph_types_,
                                          &feat);
    std::vector<ad::Var> state_parts = {ent_embs};
    if (toggles.context_nodes) {
      double d_c = cfg_.delta * (double)T;
      if (d_c >= 2.0) {
        add_context_nodes(g, entity_spans, f.plan, d_c, &rho.value());
        std::vector<std::vector<int>> between;
        for (const auto& n : g.nodes)
          if (n.kind == GraphNode::kContext) between.push_back(n.between);
        if (!between.empty())
          state_parts.push_back(ctx_in_(ad::rows_max_sets(rho, between)));
      }
    }
    if (toggles.window_nodes) {
      add_window_nodes(g, entity_spans, T, cfg_.window_size, f.encoded.plan,
                       &f.encoded.window_summaries.value());
      std::vector<int> sidx;
      for (const auto& n : g.nodes)
        if (n.kind == GraphNode::kWindow) sidx.push_back(n.summary_index);
      if (!sidx.empty())
        state_parts.push_back(win_in_(ad::gather_rows(f.encoded.window_summaries, sidx)));
    }
    ad::Var states0 = state_parts.size() == 1 ? state_parts[0] : ad::concat_rows(state_parts);
    ad::Var refined = hgt_->refine(g, states0, training, dropout_rng_);
    ad::Var enhanced = combine_residual(ent_embs, refined, g, cfg_.hgt.residual_coefficient);

    ad::Var final_reps = span_model_->pair_representations(enhanced, entity_types, f.plan, rho);
    f.relation_logits = span_model_->relation_logits(final_reps, training, dropout_rng_);
    f.relations = span_model_->decode_relations(f.plan, f.relation_logits->value());
    f.graph = std::move(g);
    return f;
  }

  // Training loss for one document; gold targets come from the
  // overlap-resolved annotations with flip augmentation.
  ad::Var loss(const Document& doc, Mode mode, bool entity_only) {
    auto resolved = resolve_overlaps(doc.gold_entities);
    auto links = augment_flip_relations(filter_tlinks(doc.gold_tlinks, resolved), schema_);
    Forward f = forward(doc, mode, /*training=*/true, entity_only);
    std::vector<int> etgt = span_model_->entity_targets(f.spans, resolved);
    std::optional<ad::Var> rlogits = f.relation_logits;
    std::vector<int> rtgt;
    if (!entity_only && rlogits) {
      std::vector<Span> espans;
      for (const auto& e : f.entities) espans.push_back(e.span);
      rtgt = span_model_->relation_targets(espans, f.plan, resolved, links);
      if (cfg_.negative_sample_rate < 1.0 && !rtgt.empty()) {
        // keep every labeled pair, sample the NO-RELATION ones
        std::bernoulli_distribution keep(cfg_.negative_sample_rate);
        std::vector<int> rows, sampled;
        for (size_t p = 0; p < rtgt.size(); ++p)
          if (rtgt[p] != kRelNone || keep(dropout_rng_)) {
            rows.push_back((int)p);
            sampled.push_back(rtgt[p]);
          }
        if (rows.empty()) {
          rlogits.reset();
        } else {
          rlogits = ad::gather_rows(*rlogits, rows);
          rtgt = std::move(sampled);
        }
      }
    }
    return joint_loss(f.entity_logits, etgt, rlogits, rtgt, entity_only);
  }

  DocumentPrediction predict(const Document& doc, Mode mode, const GraphToggles& toggles = {}) {
    Forward f = forward(doc, mode, /*training=*/false, /*entity_only=*/false, toggles);
    DocumentPrediction out;
    out.entities = postprocess_predictions(f.entities, schema_);
    for (const auto& e : out.entities)
      out.entity_windows.push_back(entity_window_index(e.span, cfg_.window_size));
    for (const auto& r : f.relations) {
      if (r.rel_class == kRelNone) continue;
      out.relations.push_back(r);
      out.graph.add_edge("e" + std::to_string(r.head), rel_class_to_type(r.rel_class),
                         "e" + std::to_string(r.tail));
    }
    for (size_t i = 0; i < f.entities.size(); ++i) out.graph.add_node("e" + std::to_string(i));
    if (f.graph) out.hetgraph = std::move(f.graph);
    return out;
  }

 private:
  ModelConfig cfg_;
  LabelSchema schema_;
  nn::ParamStore params_;
  std::mt19937_64 init_rng_, dropout_rng_;
  std::unique_ptr<Encoder> encoder_;
  std::unique_ptr<SpanModel> span_model_;
  std::shared_ptr<GraphTypeRegistry> graph_types_;
  std::unique_ptr<HgtModule> hgt_;
  nn::Linear ctx_in_, win_in_;
};

// Prediction output schema: entities [{span, etype, score}] and relations
// [{head_idx, tail_idx, rtype, prob}].
inline nlohmann::json prediction_to_json(const std::string& doc_id,
                                         const DocumentPrediction& p) {
  nlohmann::json j;
  j["doc_id"] = doc_id;
  j["entities"] = nlohmann::json::array();
  for (const auto& e : p.entities)
    j["entities"].push_back({{"span", {e.span.start, e.span.end}},
                             {"etype", e.etype},
                             {"score", e.score}});
  j["relations"] = nlohmann::json::array();
  for (const auto& r : p.relations)
    j["relations"].push_back({{"head_idx", r.head},
                              {"tail_idx", r.tail},
                              {"rtype", to_string(rel_class_to_type(r.rel_class))},
                              {"prob", r.probability}});
  return j;
}

}  // namespace temprex
