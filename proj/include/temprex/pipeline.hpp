#pragma once

// Training, checkpointing and corpus-level evaluation. A batch is a set of
// whole documents; gradients accumulate across the batch before one Adam
// step. The first warmup_entity_only_epochs epochs train with the entity
// loss alone, after which the joint loss and graph refinement are active.
// Model selection is by dev tempeval F1.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "temprex/metrics.hpp"
#include "temprex/model.hpp"

namespace temprex {

struct TrainConfig {
  int epochs = 20;
  int batch_size_docs = 8;
  int warmup_entity_only_epochs = 2;
  double learning_rate_decoders = 8e-4;
  double learning_rate_encoder = 3e-5;
  double dropout_decoders = 0.35;
  double dropout_hgt = 0.3;
  double tau = 0.4;
  double delta = 0.5;
  int k_max = 7;
  int window_size = 512;
  int hgt_layers = 2;
  int hgt_heads = 2;
  int refinement_iterations = 2;
  double residual_coefficient = 1.0;
  uint64_t seed = 13;
  double lr_warmup_fraction = 0.1;  // linear LR warmup, share of total steps

  // artifact knobs (dimensions, encoder, schema)
  std::string schema = "i2b2";
  std::string mode = "graph";
  std::string encoder = "hash";
  int encoder_dim = 64;
  int span_dim = 64;
  int type_dim = 16;
  int width_dim = 7;
  int hidden = 1000;
  bool freeze_encoder = true;
  long max_pair_candidates = 2'000'000;
  double negative_sample_rate = 1.0;  // fraction of NO-RELATION pairs kept in the loss

  ModelConfig to_model_config() const {
    ModelConfig m;
    m.schema = schema;
    m.encoder = encoder;
    m.encoder_dim = encoder_dim;
    m.freeze_encoder = freeze_encoder;
    m.window_size = window_size;
    m.seed = seed;
    m.tau = tau;
    m.delta = delta;
    m.span.k_max = k_max;
    m.span.width_dim = width_dim;
    m.span.span_dim = span_dim;
    m.span.type_dim = type_dim;
    m.span.hidden = hidden;
    m.span.dropout = dropout_decoders;
    m.span.max_pair_candidates = max_pair_candidates;
    m.negative_sample_rate = negative_sample_rate;
    m.hgt.dim = span_dim;
    m.hgt.heads = hgt_heads;
    m.hgt.layers = hgt_layers;
    m.hgt.iterations = refinement_iterations;
    m.hgt.dropout = dropout_hgt;
    m.hgt.residual_coefficient = residual_coefficient;
    return m;
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size_docs", c.batch_size_docs},
       {"warmup_entity_only_epochs", c.warmup_entity_only_epochs},
       {"learning_rate_decoders", c.learning_rate_decoders},
       {"learning_rate_encoder", c.learning_rate_encoder},
       {"dropout_decoders", c.dropout_decoders},
       {"dropout_hgt", c.dropout_hgt},
       {"tau", c.tau},
       {"delta", c.delta},
       {"k_max", c.k_max},
       {"window_size", c.window_size},
       {"hgt_layers", c.hgt_layers},
       {"hgt_heads", c.hgt_heads},
       {"refinement_iterations", c.refinement_iterations},
       {"residual_coefficient", c.residual_coefficient},
       {"seed", c.seed},
       {"lr_warmup_fraction", c.lr_warmup_fraction},
       {"schema", c.schema},
       {"mode", c.mode},
       {"encoder", c.encoder},
       {"encoder_dim", c.encoder_dim},
       {"span_dim", c.span_dim},
       {"type_dim", c.type_dim},
       {"width_dim", c.width_dim},
       {"hidden", c.hidden},
       {"freeze_encoder", c.freeze_encoder},
       {"max_pair_candidates", c.max_pair_candidates},
       {"negative_sample_rate", c.negative_sample_rate}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  auto get = [&](const char* key, auto& field, const auto& fallback) {
    field = j.value(key, fallback);
  };
  get("epochs", c.epochs, d.epochs);
  get("batch_size_docs", c.batch_size_docs, d.batch_size_docs);
  get("warmup_entity_only_epochs", c.warmup_entity_only_epochs, d.warmup_entity_only_epochs);
  get("learning_rate_decoders", c.learning_rate_decoders, d.learning_rate_decoders);
  get("learning_rate_encoder", c.learning_rate_encoder, d.learning_rate_encoder);
  get("dropout_decoders", c.dropout_decoders, d.dropout_decoders);
  get("dropout_hgt", c.dropout_hgt, d.dropout_hgt);
  get("tau", c.tau, d.tau);
  get("delta", c.delta, d.delta);
  get("k_max", c.k_max, d.k_max);
  get("window_size", c.window_size, d.window_size);
  get("hgt_layers", c.hgt_layers, d.hgt_layers);
  get("hgt_heads", c.hgt_heads, d.hgt_heads);
  get("refinement_iterations", c.refinement_iterations, d.refinement_iterations);
  get("residual_coefficient", c.residual_coefficient, d.residual_coefficient);
  get("seed", c.seed, d.seed);
  get("lr_warmup_fraction", c.lr_warmup_fraction, d.lr_warmup_fraction);
  get("schema", c.schema, d.schema);
  get("mode", c.mode, d.mode);
  get("encoder", c.encoder, d.encoder);
  get("encoder_dim", c.encoder_dim, d.encoder_dim);
  get("span_dim", c.span_dim, d.span_dim);
  get("type_dim", c.type_dim, d.type_dim);
  get("width_dim", c.width_dim, d.width_dim);
  get("hidden", c.hidden, d.hidden);
  get("freeze_encoder", c.freeze_encoder, d.freeze_encoder);
  get("max_pair_candidates", c.max_pair_candidates, d.max_pair_candidates);
  get("negative_sample_rate", c.negative_sample_rate, d.negative_sample_rate);
}

// ---- evaluation ----

struct EvalOptions {
  Mode mode = Mode::Graph;
  GraphToggles toggles;
  bool per_class = true;
  bool strata = true;
  bool exact_entity_match = false;
};

namespace detail {

// Greedy lexical alignment: a system entity takes the id of the first
// unmatched gold entity whose token range overlaps it with the same type;
// unaligned system entities keep synthetic ids and can never intersect gold.
inline std::map<int, std::string> align_entities(const std::vector<EntityPrediction>& sys,
                                                 const std::vector<EntityAnnotation>& gold) {
  std::vector<size_t> order(sys.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return sys[a].span < sys[b].span;
  });
  std::vector<char> used(gold.size(), 0);
  std::map<int, std::string> id_of;
  for (size_t k : order) {
    for (size_t g = 0; g < gold.size(); ++g) {
      if (used[g]) continue;
      bool overlap = sys[k].span.start <= gold[g].token_end &&
                     gold[g].token_start <= sys[k].span.end;
      if (overlap && sys[k].etype == gold[g].etype) {
        used[g] = 1;
        id_of[(int)k] = gold[g].id;
        break;
      }
    }
  }
  return id_of;
}

}  // namespace detail

// Corpus-level scoring of per-document predictions against gold annotations.
inline MetricReport evaluate_predictions(const std::vector<Document>& docs,
                                         const std::vector<DocumentPrediction>& preds,
                                         const LabelSchema& schema, int window_size,
                                         const EvalOptions& opt = {}) {
  if (docs.size() != preds.size())
    throw std::invalid_argument("evaluate_predictions: document/prediction count mismatch");
  TempevalCounts tempeval;
  EntityCounts entity_counts;
  std::map<std::string, TempevalCounts> per_class;
  StratifiedAccumulator strata;
  MicroCounts micro_rel, micro_ent;

  std::vector<std::string> class_names = {"Before", "Overlap"};
  if (schema.has_after) class_names.insert(class_names.begin() + 1, "After");

  for (size_t di = 0; di < docs.size(); ++di) {
    const Document& doc = docs[di];
    const DocumentPrediction& pred = preds[di];
    auto id_of = detail::align_entities(pred.entities, doc.gold_entities);

    auto sys_node = [&](int entity_idx) {
      auto it = id_of.find(entity_idx);
      return it != id_of.end() ? it->second : "sys:" + doc.doc_id + ":" + std::to_string(entity_idx);
    };

    // raw (pre-normalization) edge lists keep the predicted relation label
    std::vector<TemporalEdge> sys_edges;
    for (const auto& r : pred.relations)
      sys_edges.push_back({sys_node(r.head), sys_node(r.tail),
                           rel_class_to_type(r.rel_class)});
    std::vector<TemporalEdge> gold_edges;
    for (const auto& t : doc.gold_tlinks) gold_edges.push_back({t.head_id, t.tail_id, t.rtype});

    auto graph_of = [](const std::vector<TemporalEdge>& edges) {
      TemporalGraph g;
      for (const auto& e : edges) g.add_edge(e.head, e.rel, e.tail);
      return g;
    };
    TemporalGraph sys_graph = graph_of(sys_edges);
    TemporalGraph gold_graph = graph_of(gold_edges);
    tempeval.add(sys_graph, gold_graph);

    std::vector<TypedSpan> sys_spans, gold_spans;
    for (const auto& e : pred.entities) sys_spans.push_back({e.span.start, e.span.end, e.etype});
    for (const auto& g : doc.gold_entities)
      gold_spans.push_back({g.token_start, g.token_end, g.etype});
    entity_counts.add(sys_spans, gold_spans, opt.exact_entity_match);

    if (opt.per_class) {
      // gold is flip-augmented first, mirroring the training augmentation
      auto gold_aug = augment_flip_relations(doc.gold_tlinks, schema);
      for (const auto& cls : class_names) {
        RelType want;
        rel_from_string(cls, want);
        std::vector<TemporalEdge> se, ge;
        for (const auto& e : sys_edges)
          if (e.rel == want) se.push_back(e);
        for (const auto& t : gold_aug)
          if (t.rtype == want) ge.push_back({t.head_id, t.tail_id, t.rtype});
        per_class[cls].add(graph_of(se), graph_of(ge));
      }
    }

    if (opt.strata) {
      std::map<std::string, int> window_of;
      for (const auto& g : doc.gold_entities)
        window_of[g.id] = entity_window_index({g.token_start, g.token_end}, window_size);
      for (size_t i = 0; i < pred.entities.size(); ++i) {
        std::string id = sys_node((int)i);
        if (!window_of.count(id)) window_of[id] = pred.entity_windows[i];
      }
      strata.add(sys_graph, gold_graph, window_of);
    }

    if (!schema.has_after) {  // E3C: THYME-style exact micro scores
      std::vector<RelationTuple> ps, gs;
      std::map<std::string, TypedSpan> gold_span_of;
      for (const auto& g : doc.gold_entities)
        gold_span_of[g.id] = {g.token_start, g.token_end, g.etype};
      for (const auto& r : pred.relations) {
        const auto& h = pred.entities[r.head];
        const auto& t = pred.entities[r.tail];
        ps.push_back({{h.span.start, h.span.end, h.etype},
                      {t.span.start, t.span.end, t.etype},
                      rel_class_to_type(r.rel_class)});
      }
      for (const auto& t : doc.gold_tlinks)
        gs.push_back({gold_span_of.at(t.head_id), gold_span_of.at(t.tail_id), t.rtype});
      micro_rel.add(ps, gs);
      std::vector<RelationTuple> pe, ge;
      for (const auto& s : sys_spans) pe.push_back({s, s, RelType::Overlap});
      for (const auto& s : gold_spans) ge.push_back({s, s, RelType::Overlap});
      micro_ent.add(pe, ge);
    }
  }

  MetricReport report;
  report.documents = (int)docs.size();
  report.tempeval = tempeval.finish();
  report.inconsistency_flagged = tempeval.inconsistency_flagged;
  report.entity = entity_counts.finish();
  for (auto& [cls, counts] : per_class) report.per_class[cls] = counts.finish();
  if (opt.strata)
    for (size_t i = 0; i < strata.strata.size(); ++i)
      report.strata.push_back({strata.strata[i].label, strata.counts[i].tempeval.finish(),
                               strata.counts[i].docs > 0
                                   ? strata.counts[i].gold_links / strata.counts[i].docs
                                   : 0.0});
  if (!schema.has_after) {
    report.micro_relation_f1 = micro_rel.finish().f1;
    report.micro_entity_f1 = micro_ent.finish().f1;
  }
  return report;
}

// Corpus-level evaluation of a model against gold annotations.
inline MetricReport evaluate(Model& model, const std::vector<Document>& docs,
                             const EvalOptions& opt = {}) {
  std::vector<DocumentPrediction> preds;
  preds.reserve(docs.size());
  for (const auto& doc : docs) preds.push_back(model.predict(doc, opt.mode, opt.toggles));
  return evaluate_predictions(docs, preds, model.schema(), model.config().window_size, opt);
}

// ---- checkpointing ----

struct Checkpoint {
  TrainConfig config;
  nlohmann::json parameters;  // name -> {rows, cols, data}
  int epoch = -1;
  double dev_f1 = 0;
  nlohmann::json dev_report;  // MetricReport snapshot at the selected epoch

  static Checkpoint capture(const Model& model, const TrainConfig& cfg, int epoch,
                            const MetricReport& dev) {
    Checkpoint ck;
    ck.config = cfg;
    ck.epoch = epoch;
    ck.dev_f1 = dev.tempeval.f1;
    ck.dev_report = dev.to_json();
    ck.parameters = nlohmann::json::object();
    for (const auto& [name, v] : model.params().entries()) {
      std::vector<double> data(v.value().data(), v.value().data() + v.value().size());
      ck.parameters[name] = {{"rows", v.rows()}, {"cols", v.cols()}, {"data", data}};
    }
    return ck;
  }

  void restore_into(Model& model) const {
    for (const auto& [name, v] : model.params().entries()) {
      if (!parameters.contains(name))
        throw std::runtime_error("checkpoint missing parameter " + name);
      const auto& p = parameters.at(name);
      long rows = p.at("rows").get<long>(), cols = p.at("cols").get<long>();
      if (rows != v.rows() || cols != v.cols())
        throw std::runtime_error("checkpoint shape mismatch for " + name);
      std::vector<double> data = p.at("data").get<std::vector<double>>();
      ad::Matrix m = Eigen::Map<ad::Matrix>(data.data(), rows, cols);
      const_cast<ad::Var&>(v).value() = m;
    }
  }

  void save(const std::string& path) const {
    nlohmann::json j;
    j["config"] = config;
    j["epoch"] = epoch;
    j["dev_f1"] = dev_f1;
    j["dev_report"] = dev_report;
    j["parameters"] = parameters;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump();
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    nlohmann::json j = nlohmann::json::parse(in);
    Checkpoint ck;
    ck.config = j.at("config").get<TrainConfig>();
    ck.epoch = j.at("epoch").get<int>();
    ck.dev_f1 = j.at("dev_f1").get<double>();
    ck.dev_report = j.value("dev_report", nlohmann::json::object());
    ck.parameters = j.at("parameters");
    return ck;
  }

  std::unique_ptr<Model> instantiate() const {
    auto model = std::make_unique<Model>(config.to_model_config());
    restore_into(*model);
    return model;
  }
};

// ---- training ----

struct TrainResult {
  Checkpoint best;
  std::vector<double> epoch_dev_f1;
  std::vector<double> epoch_loss;
};

// Deterministic training given the seed: document order, dropout masks and
// parameter init all derive from it. Aborts on non-finite loss with the
// epoch/batch position.
inline TrainResult train(const TrainConfig& cfg, const CorpusSplit& split,
                         std::ostream* log = nullptr) {
  if (split.train.empty()) throw std::invalid_argument("train: empty training split");
  auto model = std::make_unique<Model>(cfg.to_model_config());
  Mode mode = mode_from_string(cfg.mode);

  nn::AdamOptimizer opt;
  opt.add_group(model->decoder_parameters(), cfg.learning_rate_decoders);
  auto enc_params = model->encoder_parameters();
  if (!enc_params.empty() && !cfg.freeze_encoder)
    opt.add_group(enc_params, cfg.learning_rate_encoder);

  long batches_per_epoch =
      ((long)split.train.size() + cfg.batch_size_docs - 1) / cfg.batch_size_docs;
  opt.set_warmup_steps((long)std::llround(cfg.lr_warmup_fraction *
                                          (double)(batches_per_epoch * cfg.epochs)));

  TrainResult result;
  std::mt19937_64 shuffle_rng(cfg.seed * 7919 + 1);
  std::vector<size_t> order(split.train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    bool entity_only = epoch < cfg.warmup_entity_only_epochs;
    for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng() % i]);

    double epoch_loss = 0;
    long n_batches = 0;
    for (size_t b = 0; b < order.size(); b += cfg.batch_size_docs) {
      model->params().zero_grad();
      size_t hi = std::min(order.size(), b + cfg.batch_size_docs);
      double batch_loss = 0;
      for (size_t k = b; k < hi; ++k) {
        ad::Var l = model->loss(split.train[order[k]], mode, entity_only);
        ad::Var scaled = ad::scale(l, 1.0 / (double)(hi - b));
        ad::backward(scaled);
        batch_loss += scaled.value()(0, 0);
      }
      if (!std::isfinite(batch_loss))
        throw std::runtime_error("training diverged (non-finite loss) at epoch " +
                                 std::to_string(epoch) + ", batch " +
                                 std::to_string(b / cfg.batch_size_docs));
      opt.step();
      epoch_loss += batch_loss;
      ++n_batches;
    }
    epoch_loss /= std::max<long>(1, n_batches);
    result.epoch_loss.push_back(epoch_loss);

    EvalOptions dev_opt;
    dev_opt.mode = mode;
    dev_opt.per_class = false;
    dev_opt.strata = false;
    const std::vector<Document>& dev_docs = split.dev.empty() ? split.train : split.dev;
    MetricReport dev = evaluate(*model, dev_docs, dev_opt);
    result.epoch_dev_f1.push_back(dev.tempeval.f1);
    if (log)
      (*log) << "epoch " << epoch << " loss " << epoch_loss << " dev tempeval F1 "
             << dev.tempeval.f1 << "\n";
    if (result.best.epoch < 0 || dev.tempeval.f1 > result.best.dev_f1)
      result.best = Checkpoint::capture(*model, cfg, epoch, dev);
  }
  return result;
}

}  // namespace temprex
