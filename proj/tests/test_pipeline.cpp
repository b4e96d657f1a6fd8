#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "temprex/synthetic.hpp"
#include "temprex/pipeline.hpp"

using namespace temprex;
using Catch::Approx;

namespace {

TrainConfig toy_config(int epochs = 6) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size_docs = 3;
  c.warmup_entity_only_epochs = 1;
  c.learning_rate_decoders = 3e-3;
  c.dropout_decoders = 0.0;
  c.dropout_hgt = 0.0;
  c.window_size = 24;
  c.encoder_dim = 20;
  c.span_dim = 20;
  c.type_dim = 6;
  c.hidden = 40;
  c.k_max = 3;
  c.seed = 41;
  c.mode = "graph";
  return c;
}

CorpusSplit toy_split(int n_docs = 3, uint64_t seed = 99) {
  temprex::synthetic::Options opt;
  opt.n_docs = n_docs;
  opt.approx_tokens = 40;
  opt.n_entities = 5;
  opt.n_relations = 6;
  opt.seed = seed;
  auto docs = temprex::synthetic::make_corpus(opt);
  CorpusSplit split;
  split.train = docs;
  split.dev = {docs[0]};
  return split;
}

}  // namespace

TEST_CASE("train config defaults match the reference schedule") {
  TrainConfig c;
  CHECK(c.epochs == 20);
  CHECK(c.batch_size_docs == 8);
  CHECK(c.warmup_entity_only_epochs == 2);
  CHECK(c.learning_rate_decoders == Approx(8e-4));
  CHECK(c.learning_rate_encoder == Approx(3e-5));
  CHECK(c.dropout_decoders == Approx(0.35));
  CHECK(c.dropout_hgt == Approx(0.3));
  CHECK(c.tau == Approx(0.4));
  CHECK(c.delta == Approx(0.5));
  CHECK(c.k_max == 7);
  CHECK(c.width_dim == 7);
  CHECK(c.window_size == 512);
  CHECK(c.hgt_layers == 2);
  CHECK(c.hgt_heads == 2);
  CHECK(c.refinement_iterations == 2);
  CHECK(c.residual_coefficient == Approx(1.0));
  CHECK(c.hidden == 1000);
}

TEST_CASE("train config json round trip with overrides") {
  TrainConfig c = toy_config();
  nlohmann::json j = c;
  TrainConfig back = j.get<TrainConfig>();
  nlohmann::json j2 = back;
  CHECK(j == j2);

  // every field is overridable; unknown fields fall back to defaults
  TrainConfig partial = nlohmann::json{{"epochs", 3}, {"tau", 0.25}}.get<TrainConfig>();
  CHECK(partial.epochs == 3);
  CHECK(partial.tau == Approx(0.25));
  CHECK(partial.batch_size_docs == 8);
}

TEST_CASE("empty document predicts an empty graph") {
  Model model(toy_config().to_model_config());
  Document doc;
  doc.doc_id = "empty";
  auto pred = model.predict(doc, Mode::Graph);
  CHECK(pred.entities.empty());
  CHECK(pred.relations.empty());
  CHECK(pred.graph.empty());
}

TEST_CASE("span mode skips the graph stages") {
  auto split = toy_split();
  Model model(toy_config().to_model_config());
  auto span_pred = model.predict(split.train[0], Mode::Span);
  CHECK_FALSE(span_pred.hetgraph.has_value());
  auto graph_pred = model.predict(split.train[0], Mode::Graph);
  if (!graph_pred.entities.empty()) CHECK(graph_pred.hetgraph.has_value());
}

TEST_CASE("prediction is deterministic for a fixed model") {
  auto split = toy_split();
  Model model(toy_config().to_model_config());
  auto a = model.predict(split.train[1], Mode::Graph);
  auto b = model.predict(split.train[1], Mode::Graph);
  REQUIRE(a.entities.size() == b.entities.size());
  REQUIRE(a.relations.size() == b.relations.size());
  CHECK(a.graph == b.graph);
  for (size_t i = 0; i < a.entities.size(); ++i) {
    CHECK(a.entities[i].span == b.entities[i].span);
    CHECK(a.entities[i].score == b.entities[i].score);
  }
}

TEST_CASE("training is seed-deterministic and improves the toy corpus") {
  auto split = toy_split();
  TrainConfig cfg = toy_config(6);
  TrainResult r1 = train(cfg, split);
  TrainResult r2 = train(cfg, split);
  REQUIRE(r1.epoch_dev_f1.size() == r2.epoch_dev_f1.size());
  for (size_t i = 0; i < r1.epoch_dev_f1.size(); ++i)
    CHECK(r1.epoch_dev_f1[i] == r2.epoch_dev_f1[i]);
  for (size_t i = 0; i < r1.epoch_loss.size(); ++i) CHECK(r1.epoch_loss[i] == r2.epoch_loss[i]);
  CHECK(r1.best.epoch >= 0);
  // entity warmup epoch then joint epochs: loss must drop overall
  CHECK(r1.epoch_loss.back() < r1.epoch_loss[1]);
}

TEST_CASE("entity-only warmup leaves the relation decoder untouched") {
  auto split = toy_split();
  TrainConfig cfg = toy_config(2);
  cfg.warmup_entity_only_epochs = 2;  // every epoch is warmup
  TrainResult r = train(cfg, split);
  // the checkpointed relation decoder equals a fresh seeded initialization
  Model fresh(cfg.to_model_config());
  auto model = r.best.instantiate();
  for (const auto& [name, v] : model->params().entries()) {
    if (name.rfind("span.relation_decoder", 0) != 0) continue;
    CHECK((v.value() - fresh.params().get(name).value()).norm() == 0.0);
  }
  // while the entity decoder moved
  double moved = 0;
  for (const auto& [name, v] : model->params().entries())
    if (name.rfind("span.entity_decoder", 0) == 0)
      moved += (v.value() - fresh.params().get(name).value()).norm();
  CHECK(moved > 0);
}

TEST_CASE("checkpoint round trip reproduces predictions exactly") {
  auto split = toy_split();
  TrainConfig cfg = toy_config(3);
  TrainResult r = train(cfg, split);

  auto path = (std::filesystem::temp_directory_path() / "temprex_ckpt.json").string();
  r.best.save(path);
  Checkpoint loaded = Checkpoint::load(path);
  std::remove(path.c_str());

  auto m1 = r.best.instantiate();
  auto m2 = loaded.instantiate();
  for (const auto& doc : split.train) {
    auto p1 = m1->predict(doc, Mode::Graph);
    auto p2 = m2->predict(doc, Mode::Graph);
    REQUIRE(p1.entities.size() == p2.entities.size());
    REQUIRE(p1.relations.size() == p2.relations.size());
    CHECK(p1.graph == p2.graph);
    for (size_t i = 0; i < p1.relations.size(); ++i)
      CHECK(p1.relations[i].probability == p2.relations[i].probability);
  }
}

TEST_CASE("evaluate supports the graph-component ablation lattice") {
  auto split = toy_split(2);
  Model model(toy_config().to_model_config());
  EvalOptions opt;
  opt.mode = Mode::Graph;
  std::vector<GraphToggles> lattice = {{false, false}, {true, false}, {false, true}, {true, true}};
  for (const auto& t : lattice) {
    opt.toggles = t;
    MetricReport rep = evaluate(model, split.train, opt);
    CHECK(rep.documents == 2);
    CHECK(rep.tempeval.f1 >= 0.0);
    CHECK(rep.tempeval.f1 <= 1.0);
    CHECK(rep.strata.size() == 3);
  }
}

TEST_CASE("evaluation against gold-equal predictions scores one") {
  // feed the gold straight through the metric path used by evaluate
  auto split = toy_split(2);
  TempevalCounts counts;
  for (const auto& doc : split.train) {
    TemporalGraph g;
    for (const auto& t : doc.gold_tlinks) g.add_edge(t.head_id, t.rtype, t.tail_id);
    counts.add(g, g);
  }
  Prf s = counts.finish();
  CHECK(s.p == 1.0);
  CHECK(s.r == 1.0);
  CHECK(s.f1 == 1.0);
}

TEST_CASE("per-class evaluation flips gold to mirror the training augmentation") {
  auto split = toy_split(2, 123);
  Model model(toy_config().to_model_config());
  EvalOptions opt;
  opt.per_class = true;
  MetricReport rep = evaluate(model, split.train, opt);
  REQUIRE(rep.per_class.count("Before") == 1);
  REQUIRE(rep.per_class.count("After") == 1);
  REQUIRE(rep.per_class.count("Overlap") == 1);
}

TEST_CASE("zeroed graph layers with zero residual reduce to span-mode output") {
  // With all HGT parameters zeroed the refined states equal the inputs, and
  // a zero residual coefficient hands the relation decoder exactly the span
  // embeddings, so the full path must reproduce the span-mode predictions.
  auto split = toy_split();
  ModelConfig mc = toy_config().to_model_config();
  mc.hgt.residual_coefficient = 0.0;
  mc.hgt.proj_bias = false;
  Model model(mc);
  for (auto& [name, v] : model.params().entries())
    if (name.rfind("hgt.", 0) == 0 && name != "hgt.mu") const_cast<ad::Var&>(v).value().setZero();
  for (const auto& doc : split.train) {
    auto span_pred = model.predict(doc, Mode::Span);
    auto graph_pred = model.predict(doc, Mode::Graph);
    REQUIRE(span_pred.relations.size() == graph_pred.relations.size());
    CHECK(span_pred.graph == graph_pred.graph);
    for (size_t i = 0; i < span_pred.relations.size(); ++i)
      CHECK(span_pred.relations[i].probability ==
            Approx(graph_pred.relations[i].probability).margin(1e-12));
  }
}

TEST_CASE("e3c schema trains and reports micro scores without an After class") {
  synthetic::Options so;
  so.n_docs = 2;
  so.approx_tokens = 30;
  so.n_entities = 4;
  so.n_relations = 4;
  so.e3c = true;
  CorpusSplit split;
  split.train = temprex::synthetic::make_corpus(so);
  TrainConfig cfg = toy_config(2);
  cfg.schema = "e3c";
  TrainResult r = train(cfg, split);
  auto model = r.best.instantiate();
  MetricReport rep = evaluate(*model, split.train);
  CHECK(rep.micro_relation_f1 >= 0.0);
  CHECK(rep.micro_entity_f1 >= 0.0);
  CHECK(rep.per_class.count("After") == 0);
  CHECK(rep.per_class.count("Before") == 1);
}

TEST_CASE("negative pair subsampling trains and stays deterministic") {
  auto split = toy_split(2);
  TrainConfig cfg = toy_config(4);
  cfg.negative_sample_rate = 0.5;
  TrainResult a = train(cfg, split);
  TrainResult b = train(cfg, split);
  REQUIRE(a.epoch_loss.size() == b.epoch_loss.size());
  for (size_t i = 0; i < a.epoch_loss.size(); ++i) CHECK(a.epoch_loss[i] == b.epoch_loss[i]);
}

TEST_CASE("embedding encoder fine-tunes only when unfrozen") {
  auto split = toy_split(2);
  TrainConfig cfg = toy_config(3);
  cfg.encoder = "embedding";

  cfg.freeze_encoder = true;
  TrainResult frozen = train(cfg, split);
  Model fresh(cfg.to_model_config());
  auto frozen_model = frozen.best.instantiate();
  CHECK((frozen_model->params().get("encoder.table").value() -
         fresh.params().get("encoder.table").value())
            .norm() == 0.0);

  cfg.freeze_encoder = false;
  cfg.learning_rate_encoder = 1e-3;
  TrainResult tuned = train(cfg, split);
  auto tuned_model = tuned.best.instantiate();
  CHECK((tuned_model->params().get("encoder.table").value() -
         fresh.params().get("encoder.table").value())
            .norm() > 0.0);
}

TEST_CASE("encoder failures carry the window index") {
  struct BrokenEncoder : Encoder {
    int max_input_length() const override { return 6; }
    int dim() const override { return 4; }
    ad::Var encode_window(const Document&, const Window& w) override {
      if (w.first_token > 0) throw std::runtime_error("backend unavailable");
      return ad::Var::constant(ad::Matrix::Zero(6, 4));
    }
  };
  Document doc;
  doc.doc_id = "boom";
  for (int i = 0; i < 12; ++i) doc.tokens.push_back({"t" + std::to_string(i), i * 2, i * 2 + 1});
  BrokenEncoder enc;
  CHECK_THROWS_WITH(encode_document(doc, enc),
                    Catch::Matchers::ContainsSubstring("window 1") &&
                        Catch::Matchers::ContainsSubstring("boom"));
}

TEST_CASE("non-finite training loss aborts with the epoch and batch") {
  auto split = toy_split(2);
  TrainConfig cfg = toy_config(30);
  // a NaN learning rate poisons the parameters after the first step, so the
  // next forward pass produces a non-finite loss
  cfg.learning_rate_decoders = std::numeric_limits<double>::quiet_NaN();
  cfg.warmup_entity_only_epochs = 0;
  try {
    train(cfg, split);
    FAIL("expected divergence");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("diverged") != std::string::npos);
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("prediction json carries the documented fields") {
  auto split = toy_split(1);
  Model model(toy_config().to_model_config());
  auto pred = model.predict(split.train[0], Mode::Span);
  auto j = prediction_to_json(split.train[0].doc_id, pred);
  CHECK(j.contains("entities"));
  CHECK(j.contains("relations"));
  for (const auto& e : j["entities"]) {
    CHECK(e.contains("span"));
    CHECK(e.contains("etype"));
    CHECK(e.contains("score"));
  }
  for (const auto& r : j["relations"]) {
    CHECK(r.contains("head_idx"));
    CHECK(r.contains("tail_idx"));
    CHECK(r.contains("rtype"));
    CHECK(r.contains("prob"));
  }
}
