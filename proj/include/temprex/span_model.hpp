#pragma once

// Joint span-based entity and relation extraction: enumerate candidate
// spans, embed them from the start/end token embeddings plus a width
// embedding, classify entity types (with a NOT-ENTITY class), build pair
// representations for the predicted entities and classify temporal
// relations. Entity and relation losses are plain cross-entropy and sum
// into the joint training loss.

#include <Eigen/Dense>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "temprex/autodiff.hpp"
#include "temprex/corpus.hpp"
#include "temprex/nn.hpp"

namespace temprex {

struct Span {
  int start = 0, end = 0;  // inclusive token indices
  int width() const { return end - start + 1; }
  bool operator==(const Span&) const = default;
  bool operator<(const Span& o) const {
    return std::tie(start, end) < std::tie(o.start, o.end);
  }
};

// All contiguous spans of width 1..min(k_max, token_count) in lexical order.
inline std::vector<Span> enumerate_spans(int token_count, int k_max) {
  if (k_max < 1) throw std::invalid_argument("enumerate_spans: k_max must be >= 1");
  std::vector<Span> out;
  for (int s = 0; s < token_count; ++s)
    for (int e = s; e < std::min(token_count, s + k_max); ++e) out.push_back({s, e});
  return out;
}

// Relation decoder class indices. NO-RELATION is the negative class.
enum RelClass : int { kRelBefore = 0, kRelAfter = 1, kRelOverlap = 2, kRelNone = 3 };
constexpr int kNumRelClasses = 4;

inline RelType rel_class_to_type(int c) {
  switch (c) {
    case kRelBefore: return RelType::Before;
    case kRelAfter: return RelType::After;
    case kRelOverlap: return RelType::Overlap;
  }
  throw std::invalid_argument("rel_class_to_type: NO-RELATION has no relation type");
}

inline int rel_type_to_class(RelType r) {
  switch (r) {
    case RelType::Before: return kRelBefore;
    case RelType::After: return kRelAfter;
    case RelType::Overlap: return kRelOverlap;
  }
  return kRelNone;
}

// Before and After exchange when a pair is flipped into lexical order.
inline int flip_rel_class(int c) {
  if (c == kRelBefore) return kRelAfter;
  if (c == kRelAfter) return kRelBefore;
  return c;
}

// Lowest class index wins ties, so decoding is deterministic.
inline int argmax_lowest(const Eigen::RowVectorXd& v) {
  int best = 0;
  for (int i = 1; i < v.cols(); ++i)
    if (v(i) > v(best)) best = i;
  return best;
}

struct EntityPrediction {
  Span span;
  int span_index = -1;      // index into the enumerated span list
  int type_index = -1;      // index into schema.entity_types
  std::string etype;
  double score = 0;         // max of the type distribution
  Eigen::RowVectorXd distribution;
};

struct RelationPrediction {
  int head = -1, tail = -1;  // indices into the entity prediction list
  int rel_class = kRelNone;
  double probability = 0;    // max of the class distribution
  Eigen::RowVectorXd distribution;
};

struct SpanModelConfig {
  int k_max = 7;
  int width_dim = 7;
  int span_dim = 64;        // d_e
  int type_dim = 16;        // d_t
  int hidden = 1000;        // decoder hidden width
  double dropout = 0.35;
  long max_pair_candidates = 2'000'000;  // memory-budget guard
};

// Pair candidates over a lexically ordered entity list: all (i, j) with
// i < j, plus the strictly-between token index sets used for context pooling.
struct PairPlan {
  std::vector<std::pair<int, int>> pairs;
  std::vector<std::vector<int>> between;
};

inline PairPlan build_pair_plan(const std::vector<Span>& entity_spans, long max_candidates) {
  long n = (long)entity_spans.size();
  if (n * (n - 1) / 2 > max_candidates)
    throw std::runtime_error(
        "relation candidate count " + std::to_string(n * (n - 1) / 2) +
        " exceeds max_pair_candidates; raise the limit or reduce entities per chunk");
  PairPlan plan;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      plan.pairs.push_back({i, j});
      std::vector<int> between;
      for (int t = entity_spans[i].end + 1; t < entity_spans[j].start; ++t) between.push_back(t);
      plan.between.push_back(std::move(between));
    }
  }
  return plan;
}

class SpanModel {
 public:
  SpanModel(nn::ParamStore& ps, const LabelSchema& schema, const SpanModelConfig& cfg,
            int rho_dim, std::mt19937_64& rng)
      : schema_(schema), cfg_(cfg), rho_dim_(rho_dim) {
    n_entity_classes_ = (int)schema.entity_types.size() + 1;  // + NOT-ENTITY
    width_table_ = nn::Embedding::create(ps, "span.width_table", cfg.k_max, cfg.width_dim, rng);
    span_ffnn_ = nn::Ffnn::create(ps, "span.embedder", 2 * rho_dim + cfg.width_dim, cfg.hidden,
                                  cfg.span_dim, 1, rng);
    entity_decoder_ = nn::Ffnn::create(ps, "span.entity_decoder", cfg.span_dim, cfg.hidden,
                                       n_entity_classes_, 1, rng);
    type_table_ = nn::Embedding::create(ps, "span.type_table", n_entity_classes_, cfg.type_dim, rng);
    relation_decoder_ = nn::Ffnn::create(
        ps, "span.relation_decoder", 3 * cfg.span_dim + 2 * cfg.type_dim + rho_dim, cfg.hidden,
        kNumRelClasses, 1, rng);
  }

  const LabelSchema& schema() const { return schema_; }
  const SpanModelConfig& config() const { return cfg_; }
  int not_entity_class() const { return n_entity_classes_ - 1; }
  int pair_dim() const { return 3 * cfg_.span_dim + 2 * cfg_.type_dim + rho_dim_; }

  // e_sp = FFNN([rho_start ; rho_end ; width-embedding]) for every span.
  ad::Var embed_spans(const std::vector<Span>& spans, const ad::Var& rho, bool training,
                      std::mt19937_64& rng) const {
    std::vector<int> starts, ends, widths;
    starts.reserve(spans.size());
    for (const auto& s : spans) {
      if (s.width() < 1 || s.width() > cfg_.k_max)
        throw std::invalid_argument("embed_spans: span width " + std::to_string(s.width()) +
                                    " outside the width table range 1.." +
                                    std::to_string(cfg_.k_max));
      if (s.start < 0 || s.end >= rho.rows())
        throw std::invalid_argument("embed_spans: span outside the document");
      starts.push_back(s.start);
      ends.push_back(s.end);
      widths.push_back(s.width() - 1);
    }
    ad::Var cat = ad::concat_cols({ad::gather_rows(rho, starts), ad::gather_rows(rho, ends),
                                   width_table_(widths)});
    return ffnn_dropout(span_ffnn_, cat, training, rng);
  }

  ad::Var entity_logits(const ad::Var& span_embeddings, bool training,
                        std::mt19937_64& rng) const {
    return ffnn_dropout(entity_decoder_, span_embeddings, training, rng);
  }

  // One prediction per span; NOT-ENTITY spans are kept in the output so the
  // caller can filter or inspect them.
  std::vector<EntityPrediction> decode_entities(const std::vector<Span>& spans,
                                                const ad::Matrix& logits) const {
    if ((long)spans.size() != logits.rows())
      throw std::invalid_argument("decode_entities: span/logit count mismatch");
    ad::Matrix probs = ad::softmax_rows_value(logits);
    std::vector<EntityPrediction> out(spans.size());
    for (size_t i = 0; i < spans.size(); ++i) {
      EntityPrediction& p = out[i];
      p.span = spans[i];
      p.span_index = (int)i;
      p.distribution = probs.row((long)i);
      p.type_index = argmax_lowest(p.distribution);
      p.score = p.distribution(p.type_index);
      p.etype = p.type_index == not_entity_class() ? "NOT-ENTITY"
                                                   : schema_.entity_types[p.type_index];
    }
    return out;
  }

  // epsilon_ij = [e_i ; e_j ; e_i*e_j ; type_emb_i ; type_emb_j ; ctx(i,j)]
  // where ctx is the max-pool over strictly-between token embeddings (zero
  // vector when the pair is adjacent or overlapping).
  ad::Var pair_representations(const ad::Var& entity_embeddings,
                               const std::vector<int>& entity_type_indices,
                               const PairPlan& plan, const ad::Var& rho) const {
    if (plan.pairs.empty())
      return ad::Var::constant(ad::Matrix::Zero(0, pair_dim()));
    std::vector<int> heads, tails, head_types, tail_types;
    for (auto [i, j] : plan.pairs) {
      if (i == j) throw std::invalid_argument("pair_representations: self-pair");
      heads.push_back(i);
      tails.push_back(j);
      head_types.push_back(entity_type_indices[i]);
      tail_types.push_back(entity_type_indices[j]);
    }
    ad::Var e_i = ad::gather_rows(entity_embeddings, heads);
    ad::Var e_j = ad::gather_rows(entity_embeddings, tails);
    ad::Var ctx = ad::rows_max_sets(rho, plan.between);
    return ad::concat_cols({e_i, e_j, ad::mul(e_i, e_j), type_table_(head_types),
                            type_table_(tail_types), ctx});
  }

  ad::Var relation_logits(const ad::Var& pair_reps, bool training, std::mt19937_64& rng) const {
    return ffnn_dropout(relation_decoder_, pair_reps, training, rng);
  }

  std::vector<RelationPrediction> decode_relations(const PairPlan& plan,
                                                   const ad::Matrix& logits) const {
    if ((long)plan.pairs.size() != logits.rows())
      throw std::invalid_argument("decode_relations: pair/logit count mismatch");
    ad::Matrix probs = ad::softmax_rows_value(logits);
    std::vector<RelationPrediction> out(plan.pairs.size());
    for (size_t i = 0; i < plan.pairs.size(); ++i) {
      RelationPrediction& p = out[i];
      p.head = plan.pairs[i].first;
      p.tail = plan.pairs[i].second;
      p.distribution = probs.row((long)i);
      p.rel_class = argmax_lowest(p.distribution);
      p.probability = p.distribution(p.rel_class);
    }
    return out;
  }

  // Entity targets over the enumerated spans: gold spans take their type
  // index, everything else is NOT-ENTITY. Gold entities wider than k_max
  // have no candidate span and are skipped.
  std::vector<int> entity_targets(const std::vector<Span>& spans,
                                  const std::vector<EntityAnnotation>& gold) const {
    std::map<Span, int> gold_by_span;
    for (const auto& g : gold) {
      int ti = schema_.type_index(g.etype);
      if (ti >= 0) gold_by_span[{g.token_start, g.token_end}] = ti;
    }
    std::vector<int> targets(spans.size(), not_entity_class());
    for (size_t i = 0; i < spans.size(); ++i) {
      auto it = gold_by_span.find(spans[i]);
      if (it != gold_by_span.end()) targets[i] = it->second;
    }
    return targets;
  }

  // Relation targets over the candidate pairs: a gold link whose endpoint
  // spans exactly match the pair's entity spans sets the class, flipped
  // Before<->After when the gold orientation is anti-lexical. Unlabeled
  // pairs are NO-RELATION.
  std::vector<int> relation_targets(const std::vector<Span>& entity_spans, const PairPlan& plan,
                                    const std::vector<EntityAnnotation>& gold_entities,
                                    const std::vector<TLinkAnnotation>& gold_tlinks) const {
    std::map<std::string, Span> span_of;
    for (const auto& g : gold_entities) span_of[g.id] = {g.token_start, g.token_end};
    std::map<std::pair<Span, Span>, int> label;
    for (const auto& t : gold_tlinks) {
      auto h = span_of.find(t.head_id);
      auto l = span_of.find(t.tail_id);
      if (h == span_of.end() || l == span_of.end()) continue;
      int c = rel_type_to_class(t.rtype);
      if (l->second < h->second) {
        // anti-lexical gold orientation: flip into lexical order
        label.emplace(std::make_pair(l->second, h->second), flip_rel_class(c));
      } else {
        label.emplace(std::make_pair(h->second, l->second), c);
      }
    }
    std::vector<int> targets(plan.pairs.size(), kRelNone);
    for (size_t p = 0; p < plan.pairs.size(); ++p) {
      auto key = std::make_pair(entity_spans[plan.pairs[p].first],
                                entity_spans[plan.pairs[p].second]);
      auto it = label.find(key);
      if (it != label.end()) targets[p] = it->second;
    }
    return targets;
  }

 private:
  // Dropout after each hidden activation inside the decoder stacks.
  ad::Var ffnn_dropout(const nn::Ffnn& f, const ad::Var& x, bool training,
                       std::mt19937_64& rng) const {
    ad::Var h = x;
    for (size_t i = 0; i + 1 < f.layers.size(); ++i)
      h = ad::dropout(ad::relu(f.layers[i](h)), cfg_.dropout, training, rng);
    return f.layers.back()(h);
  }

  LabelSchema schema_;
  SpanModelConfig cfg_;
  int rho_dim_;
  int n_entity_classes_;
  nn::Embedding width_table_, type_table_;
  nn::Ffnn span_ffnn_, entity_decoder_, relation_decoder_;
};

// L = L_n + L_r (both mean cross-entropy); during entity-only warmup the
// relation term is dropped entirely.
inline ad::Var joint_loss(const ad::Var& entity_logits, const std::vector<int>& entity_targets,
                          const std::optional<ad::Var>& relation_logits,
                          const std::vector<int>& relation_targets, bool entity_only) {
  ad::Var ln = ad::cross_entropy_mean(entity_logits, entity_targets);
  if (entity_only || !relation_logits || relation_logits->rows() == 0) return ln;
  return ad::add(ln, ad::cross_entropy_mean(*relation_logits, relation_targets));
}

// Inference-time post-processing for the I2B2 schema: every predicted
// ADMISSION or DISCHARGE span gains a co-located DATE prediction (the gold
// consistently carries a DATE on those spans).
inline std::vector<EntityPrediction> postprocess_predictions(
    const std::vector<EntityPrediction>& preds, const LabelSchema& schema) {
  if (schema.name != "i2b2") return preds;
  int date_index = schema.type_index("DATE");
  std::vector<EntityPrediction> out = preds;
  for (const auto& p : preds) {
    if (p.etype != "ADMISSION" && p.etype != "DISCHARGE") continue;
    EntityPrediction d = p;
    d.type_index = date_index;
    d.etype = "DATE";
    d.distribution = Eigen::RowVectorXd::Zero(p.distribution.cols());
    d.distribution(date_index) = 1.0;
    d.score = 1.0;
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace temprex
