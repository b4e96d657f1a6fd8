// Command-line front end: preprocess raw corpora into normalized JSONL,
// train/predict/evaluate models, run temporal closure/reduction on graph
// files, and generate a synthetic demo corpus. Relative corpus paths resolve
// against $TEMPREX_CORPUS_ROOT when it is set.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "temprex/e3c.hpp"
#include "temprex/i2b2.hpp"
#include "temprex/pipeline.hpp"
#include "temprex/synthetic.hpp"

namespace fs = std::filesystem;
using namespace temprex;

namespace {

std::string resolve(const std::string& path) {
  if (path.empty() || fs::path(path).is_absolute()) return path;
  const char* root = std::getenv("TEMPREX_CORPUS_ROOT");
  if (root && *root) return (fs::path(root) / path).string();
  return path;
}

TrainConfig load_config(const std::string& path) {
  TrainConfig cfg;
  if (path.empty()) return cfg;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path);
  return nlohmann::json::parse(in).get<TrainConfig>();
}

std::vector<std::string> list_files(const std::string& dir,
                                    const std::vector<std::string>& extensions) {
  std::vector<std::string> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    for (const auto& want : extensions)
      if (ext == want) out.push_back(entry.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

int run_preprocess(const std::string& format, const std::string& train_dir,
                   const std::string& test_dir, const std::string& out_dir,
                   const std::string& repair_dir) {
  fs::create_directories(out_dir);
  if (!repair_dir.empty()) fs::create_directories(repair_dir);
  auto load = [&](const std::string& path) {
    return format == "e3c" ? load_e3c_document(path) : load_i2b2_document(path);
  };
  auto extensions = format == "e3c" ? std::vector<std::string>{".xmi", ".xml"}
                                    : std::vector<std::string>{".xml"};
  size_t repairs = 0;
  auto process = [&](const std::string& dir, const std::string& out_name) {
    std::vector<Document> docs;
    if (dir.empty()) return docs;
    for (const auto& file : list_files(resolve(dir), extensions)) {
      LoadResult res = load(file);
      if (!res.repair.entries.empty()) {
        repairs += res.repair.entries.size();
        if (!repair_dir.empty())
          res.repair.save((fs::path(repair_dir) / (res.doc.doc_id + ".repair.json")).string());
      }
      docs.push_back(std::move(res.doc));
    }
    save_corpus_jsonl(docs, (fs::path(out_dir) / out_name).string());
    return docs;
  };
  auto train_docs = process(train_dir, "train.jsonl");
  auto test_docs = process(test_dir, "test.jsonl");
  std::cout << "wrote " << train_docs.size() << " train and " << test_docs.size()
            << " test documents to " << out_dir << " (" << repairs << " repair entries)\n";
  return 0;
}

int run_train(const std::string& config_path, const std::string& corpus_path,
              const std::string& test_path, int dev_count, double dev_fraction,
              const std::string& out_path, bool quiet) {
  TrainConfig cfg = load_config(config_path);
  std::vector<Document> pool = load_corpus_jsonl(resolve(corpus_path));
  std::vector<Document> test;
  if (!test_path.empty()) test = load_corpus_jsonl(resolve(test_path));
  DevSpec dev = dev_count >= 0      ? DevSpec::by_count(dev_count)
                : dev_fraction >= 0 ? DevSpec::by_frac(dev_fraction)
                : cfg.schema == "e3c"
                    ? DevSpec::by_frac(0.2)
                    : DevSpec::by_count(std::min<int>(9, (int)pool.size() / 2));
  CorpusSplit split = split_corpus(pool, test, dev, cfg.seed);
  std::cout << "training on " << split.train.size() << " docs, dev " << split.dev.size()
            << ", test " << split.test.size() << "\n";
  TrainResult result = train(cfg, split, quiet ? nullptr : &std::cout);
  result.best.save(out_path);
  std::cout << "best epoch " << result.best.epoch << " dev tempeval F1 " << result.best.dev_f1
            << " -> " << out_path << "\n";
  return 0;
}

int run_predict(const std::string& ckpt_path, const std::string& docs_path,
                const std::string& out_path, const std::string& mode_name,
                const std::string& graph_dir) {
  Checkpoint ckpt = Checkpoint::load(ckpt_path);
  auto model = ckpt.instantiate();
  Mode mode = mode_from_string(mode_name);
  std::vector<Document> docs = load_corpus_jsonl(resolve(docs_path));
  if (!graph_dir.empty()) fs::create_directories(graph_dir);
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  for (const auto& doc : docs) {
    DocumentPrediction pred = model->predict(doc, mode);
    out << prediction_to_json(doc.doc_id, pred).dump() << "\n";
    if (!graph_dir.empty() && pred.hetgraph) {
      std::ofstream gj((fs::path(graph_dir) / (doc.doc_id + ".graph.json")).string());
      gj << hetgraph_to_json(*pred.hetgraph).dump(2) << "\n";
      std::ofstream gd((fs::path(graph_dir) / (doc.doc_id + ".graph.dot")).string());
      gd << hetgraph_to_dot(*pred.hetgraph);
    }
  }
  std::cout << "wrote predictions for " << docs.size() << " documents to " << out_path << "\n";
  return 0;
}

GraphToggles parse_components(const std::string& components) {
  if (components == "full") return {true, true};
  if (components == "entity") return {false, false};
  if (components == "entity+context") return {true, false};
  if (components == "entity+window") return {false, true};
  throw std::runtime_error("--components expects full|entity|entity+context|entity+window");
}

DocumentPrediction parse_prediction(const nlohmann::json& j, const LabelSchema& schema,
                                    int window_size) {
  DocumentPrediction p;
  int n_classes = (int)schema.entity_types.size() + 1;
  for (const auto& e : j.at("entities")) {
    EntityPrediction ep;
    ep.span = {e.at("span").at(0).get<int>(), e.at("span").at(1).get<int>()};
    ep.etype = e.at("etype").get<std::string>();
    ep.type_index = schema.type_index(ep.etype);
    ep.score = e.at("score").get<double>();
    ep.distribution = Eigen::RowVectorXd::Zero(n_classes);
    if (ep.type_index >= 0) ep.distribution(ep.type_index) = 1.0;
    p.entities.push_back(std::move(ep));
  }
  for (const auto& r : j.at("relations")) {
    RelationPrediction rp;
    rp.head = r.at("head_idx").get<int>();
    rp.tail = r.at("tail_idx").get<int>();
    RelType rel;
    if (!rel_from_string(r.at("rtype").get<std::string>(), rel))
      throw std::runtime_error("bad rtype in prediction file");
    rp.rel_class = rel_type_to_class(rel);
    rp.probability = r.value("prob", 1.0);
    p.relations.push_back(rp);
    p.graph.add_edge("e" + std::to_string(rp.head), rel, "e" + std::to_string(rp.tail));
  }
  for (size_t i = 0; i < p.entities.size(); ++i) {
    p.graph.add_node("e" + std::to_string(i));
    p.entity_windows.push_back(entity_window_index(p.entities[i].span, window_size));
  }
  return p;
}

int run_evaluate(const std::string& ckpt_path, const std::string& docs_path,
                 const std::string& preds_path, const std::string& gold_path,
                 const std::string& mode_name, const std::string& components,
                 const std::string& compare_path, const std::string& out_path, bool table) {
  EvalOptions opt;
  opt.mode = mode_from_string(mode_name);
  opt.toggles = parse_components(components);

  MetricReport report;
  std::string title;
  if (!ckpt_path.empty()) {
    Checkpoint ckpt = Checkpoint::load(ckpt_path);
    auto model = ckpt.instantiate();
    std::vector<Document> docs = load_corpus_jsonl(resolve(docs_path));
    report = evaluate(*model, docs, opt);
    title = ckpt_path + " (" + mode_name + ", " + components + ")";
  } else if (!preds_path.empty() && !gold_path.empty()) {
    std::vector<Document> docs = load_corpus_jsonl(resolve(gold_path));
    LabelSchema schema = !docs.empty() && docs[0].source == Source::E3C ? LabelSchema::e3c()
                                                                        : LabelSchema::i2b2();
    std::map<std::string, nlohmann::json> by_id;
    std::ifstream in(resolve(preds_path));
    if (!in) throw std::runtime_error("cannot read " + preds_path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line);
      by_id[j.at("doc_id").get<std::string>()] = j;
    }
    TrainConfig defaults;
    std::vector<DocumentPrediction> preds;
    for (const auto& doc : docs) {
      auto it = by_id.find(doc.doc_id);
      if (it == by_id.end()) throw std::runtime_error("no prediction for document " + doc.doc_id);
      preds.push_back(parse_prediction(it->second, schema, defaults.window_size));
    }
    report = evaluate_predictions(docs, preds, schema, defaults.window_size, opt);
    title = preds_path;
  } else {
    throw std::runtime_error("evaluate needs --checkpoint/--docs or --predictions/--gold");
  }

  if (!compare_path.empty()) {
    Checkpoint other = Checkpoint::load(compare_path);
    auto other_model = other.instantiate();
    std::vector<Document> docs = load_corpus_jsonl(resolve(docs_path));
    MetricReport baseline = evaluate(*other_model, docs, opt);
    std::cout << report.to_table(title, &baseline);
  } else if (table || out_path.empty()) {
    std::cout << report.to_table(title);
  }
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    out << report.to_json().dump(2) << "\n";
    std::cout << "report written to " << out_path << "\n";
  }
  return 0;
}

TemporalGraph graph_from_json(const nlohmann::json& j) {
  TemporalGraph g;
  if (j.contains("nodes"))
    for (const auto& n : j.at("nodes")) g.add_node(n.get<std::string>());
  for (const auto& e : j.at("edges")) {
    RelType rel;
    if (!rel_from_string(e.at("rtype").get<std::string>(), rel))
      throw std::runtime_error("bad rtype in graph file");
    g.add_edge(e.at("head").get<std::string>(), rel, e.at("tail").get<std::string>());
  }
  return g;
}

nlohmann::json graph_to_json(const TemporalGraph& g) {
  nlohmann::json j;
  j["nodes"] = nlohmann::json::array();
  for (const auto& n : g.nodes()) j["nodes"].push_back(n);
  j["edges"] = nlohmann::json::array();
  for (const auto& e : g.edges())
    j["edges"].push_back({{"head", e.head}, {"rtype", to_string(e.rel)}, {"tail", e.tail}});
  return j;
}

std::string temporal_graph_dot(const TemporalGraph& g) {
  std::ostringstream out;
  out << "digraph timeline {\n";
  for (const auto& n : g.nodes()) out << "  \"" << n << "\";\n";
  for (const auto& e : g.edges()) {
    if (e.rel == RelType::Overlap)
      out << "  \"" << e.head << "\" -> \"" << e.tail << "\" [label=\"Overlap\", dir=none];\n";
    else
      out << "  \"" << e.head << "\" -> \"" << e.tail << "\" [label=\"" << to_string(e.rel)
          << "\"];\n";
  }
  out << "}\n";
  return out.str();
}

int run_closure(const std::string& in_path, const std::string& out_path,
                const std::string& reduced_path, const std::string& dot_path) {
  std::ifstream in(resolve(in_path));
  if (!in) throw std::runtime_error("cannot read " + in_path);
  TemporalGraph g = graph_from_json(nlohmann::json::parse(in));
  ClosureResult cl = temporal_closure(g);
  std::cout << "graph: " << g.nodes().size() << " nodes, " << g.edge_count()
            << " edges; closure " << cl.graph.edge_count() << " edges"
            << (cl.consistent ? "" : " [INCONSISTENT]") << "\n";
  if (!cl.consistent) {
    std::cout << "conflict cycle:";
    for (const auto& id : cl.conflict) std::cout << " " << id;
    std::cout << "\n";
  }
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    nlohmann::json j = graph_to_json(cl.graph);
    j["consistent"] = cl.consistent;
    out << j.dump(2) << "\n";
  }
  if (!reduced_path.empty()) {
    TemporalGraph red = reduce_for_scoring(g);
    std::ofstream out(reduced_path);
    out << graph_to_json(red).dump(2) << "\n";
    std::cout << "reduction: " << red.edge_count() << " edges\n";
  }
  if (!dot_path.empty()) {
    std::ofstream out(dot_path);
    out << temporal_graph_dot(cl.graph);
  }
  return 0;
}

int run_synth(const std::string& out_dir, int n_docs, int tokens, int entities, int relations,
              uint64_t seed, const std::string& format) {
  synthetic::Options opt;
  opt.n_docs = n_docs;
  opt.approx_tokens = tokens;
  opt.n_entities = entities;
  opt.n_relations = relations;
  opt.seed = seed;
  auto docs = synthetic::make_corpus(opt);
  fs::create_directories(out_dir);
  if (format == "jsonl") {
    save_corpus_jsonl(docs, (fs::path(out_dir) / "synthetic.jsonl").string());
    std::cout << "wrote " << docs.size() << " documents to " << out_dir << "/synthetic.jsonl\n";
  } else {
    for (const auto& doc : docs) {
      std::ofstream out((fs::path(out_dir) / (doc.doc_id + ".xml")).string());
      out << to_i2b2_xml(doc);
    }
    std::cout << "wrote " << docs.size() << " annotation files to " << out_dir << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"temprex: temporal entity and relation extraction over clinical text"};
  app.require_subcommand(1);

  auto* pre = app.add_subcommand("preprocess", "normalize raw annotation files to JSONL");
  std::string pre_format = "i2b2", pre_train, pre_test, pre_out = "corpus", pre_repair;
  pre->add_option("--format", pre_format, "i2b2|e3c")->check(CLI::IsMember({"i2b2", "e3c"}));
  pre->add_option("--train", pre_train, "directory of training annotation files");
  pre->add_option("--test", pre_test, "directory of test annotation files");
  pre->add_option("--out-dir", pre_out, "output directory for train.jsonl/test.jsonl");
  pre->add_option("--repair-dir", pre_repair, "directory for per-document repair logs");

  auto* tr = app.add_subcommand("train", "train a model on a normalized corpus");
  std::string tr_config, tr_corpus, tr_test, tr_out = "model.ckpt.json";
  int tr_dev_count = -1;
  double tr_dev_fraction = -1;
  bool tr_quiet = false;
  tr->add_option("--config", tr_config, "JSON config mirroring the training defaults");
  tr->add_option("--corpus", tr_corpus, "training pool JSONL")->required();
  tr->add_option("--test", tr_test, "held-out test JSONL (stored in the split)");
  tr->add_option("--dev-count", tr_dev_count, "dev documents sampled from the pool");
  tr->add_option("--dev-fraction", tr_dev_fraction, "dev fraction of the pool");
  tr->add_option("--out", tr_out, "checkpoint output path");
  tr->add_flag("--quiet", tr_quiet, "suppress per-epoch log lines");

  auto* pr = app.add_subcommand("predict", "run a checkpoint over documents");
  std::string pr_ckpt, pr_docs, pr_out = "predictions.jsonl", pr_mode = "graph", pr_graph_dir;
  pr->add_option("--checkpoint", pr_ckpt)->required();
  pr->add_option("--docs", pr_docs, "JSONL documents")->required();
  pr->add_option("--out", pr_out, "predictions JSONL output");
  pr->add_option("--mode", pr_mode, "graph (full path) or span (skip graph stages)");
  pr->add_option("--graph-dir", pr_graph_dir, "export per-document graphs (JSON + DOT)");

  auto* ev = app.add_subcommand("evaluate", "score predictions or a checkpoint against gold");
  std::string ev_ckpt, ev_docs, ev_preds, ev_gold, ev_mode = "graph", ev_components = "full";
  std::string ev_compare, ev_out;
  bool ev_table = false;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint to run");
  ev->add_option("--docs", ev_docs, "gold JSONL (with --checkpoint)");
  ev->add_option("--predictions", ev_preds, "predictions JSONL (without --checkpoint)");
  ev->add_option("--gold", ev_gold, "gold JSONL (with --predictions)");
  ev->add_option("--mode", ev_mode, "graph|span");
  ev->add_option("--components", ev_components, "full|entity|entity+context|entity+window");
  ev->add_option("--compare", ev_compare, "baseline checkpoint for %IMP columns");
  ev->add_option("--out", ev_out, "metric report JSON output");
  ev->add_flag("--table", ev_table, "print the fixed-column table");

  auto* cl = app.add_subcommand("closure", "temporal closure/reduction of a graph JSON");
  std::string cl_in, cl_out, cl_reduced, cl_dot;
  cl->add_option("--in", cl_in, "graph JSON {nodes, edges:[{head,rtype,tail}]}")->required();
  cl->add_option("--out", cl_out, "closed graph JSON output");
  cl->add_option("--reduced", cl_reduced, "reduced graph JSON output");
  cl->add_option("--dot", cl_dot, "DOT export of the closed graph");

  auto* sy = app.add_subcommand("synth", "generate a synthetic demo corpus");
  std::string sy_out = "synthetic", sy_format = "i2b2";
  int sy_docs = 5, sy_tokens = 50, sy_entities = 6, sy_relations = 8;
  uint64_t sy_seed = 99;
  sy->add_option("--out-dir", sy_out);
  sy->add_option("--docs", sy_docs);
  sy->add_option("--tokens", sy_tokens);
  sy->add_option("--entities", sy_entities);
  sy->add_option("--relations", sy_relations);
  sy->add_option("--seed", sy_seed);
  sy->add_option("--format", sy_format, "i2b2 (XML files) or jsonl")
      ->check(CLI::IsMember({"i2b2", "jsonl"}));

  CLI11_PARSE(app, argc, argv);
  try {
    if (pre->parsed())
      return run_preprocess(pre_format, pre_train, pre_test, pre_out, pre_repair);
    if (tr->parsed())
      return run_train(tr_config, tr_corpus, tr_test, tr_dev_count, tr_dev_fraction, tr_out,
                       tr_quiet);
    if (pr->parsed()) return run_predict(pr_ckpt, pr_docs, pr_out, pr_mode, pr_graph_dir);
    if (ev->parsed())
      return run_evaluate(ev_ckpt, ev_docs, ev_preds, ev_gold, ev_mode, ev_components,
                          ev_compare, ev_out, ev_table);
    if (cl->parsed()) return run_closure(cl_in, cl_out, cl_reduced, cl_dot);
    if (sy->parsed())
      return run_synth(sy_out, sy_docs, sy_tokens, sy_entities, sy_relations, sy_seed, sy_format);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
