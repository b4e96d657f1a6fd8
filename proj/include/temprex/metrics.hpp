#pragma once

// Temporal-awareness scoring. Precision compares the reduced system graph
// against the closed gold graph, recall the reduced gold graph against the
// closed system graph, so redundant or inverted encodings of the same
// timeline are neither rewarded nor punished. Plus span-level entity scores,
// exact-tuple micro-F1 (THYME style) and distance-stratified breakdowns.

#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "temprex/temporal.hpp"

namespace temprex {

struct Prf {
  double p = 0, r = 0, f1 = 0;
};

inline double f1_of(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

// Corpus-level accumulator: numerators and denominators add up over
// documents (micro average), and inconsistent closures are flagged.
struct TempevalCounts {
  double p_num = 0, p_den = 0, r_num = 0, r_den = 0;
  bool inconsistency_flagged = false;

  void add(const TemporalGraph& sys, const TemporalGraph& gold) {
    ClosureResult sys_cl = temporal_closure(sys);
    ClosureResult gold_cl = temporal_closure(gold);
    if (!sys_cl.consistent || !gold_cl.consistent) inconsistency_flagged = true;
    TemporalGraph sys_red = reduce_for_scoring(sys);
    TemporalGraph gold_red = reduce_for_scoring(gold);
    p_den += (double)sys_red.edge_count();
    r_den += (double)gold_red.edge_count();
    for (const auto& e : sys_red.edges())
      if (gold_cl.graph.contains(e.head, e.rel, e.tail)) p_num += 1;
    for (const auto& e : gold_red.edges())
      if (sys_cl.graph.contains(e.head, e.rel, e.tail)) r_num += 1;
  }

  Prf finish() const {
    Prf s;
    s.p = p_den > 0 ? p_num / p_den : 0.0;
    s.r = r_den > 0 ? r_num / r_den : 0.0;
    s.f1 = f1_of(s.p, s.r);
    return s;
  }
};

inline Prf tempeval_scores(const TemporalGraph& sys, const TemporalGraph& gold) {
  TempevalCounts c;
  c.add(sys, gold);
  return c.finish();
}

// ---- entity scores ----

struct TypedSpan {
  int start = 0, end = 0;  // inclusive token range
  std::string type;
};

struct EntityScore {
  Prf ei;              // span identification, partial (overlap) match
  double ec_accuracy = 0;  // type accuracy among span-matched pairs
  int matched = 0;
};

// Greedy one-to-one matching in lexical order. A prediction matches the
// first unmatched gold entity whose token range overlaps it (or is identical
// when exact_match is set); types are compared only for EC.
inline EntityScore entity_scores(std::vector<TypedSpan> preds, std::vector<TypedSpan> gold,
                                 bool exact_match = false) {
  auto lex = [](const TypedSpan& a, const TypedSpan& b) {
    return std::tie(a.start, a.end) < std::tie(b.start, b.end);
  };
  std::sort(preds.begin(), preds.end(), lex);
  std::sort(gold.begin(), gold.end(), lex);
  std::vector<char> gold_used(gold.size(), 0);
  int matched = 0, type_ok = 0;
  for (const auto& p : preds) {
    for (size_t g = 0; g < gold.size(); ++g) {
      if (gold_used[g]) continue;
      bool hit = exact_match ? (p.start == gold[g].start && p.end == gold[g].end)
                             : (p.start <= gold[g].end && gold[g].start <= p.end);
      if (hit) {
        gold_used[g] = 1;
        ++matched;
        if (p.type == gold[g].type) ++type_ok;
        break;
      }
    }
  }
  EntityScore s;
  s.matched = matched;
  s.ei.p = preds.empty() ? 0.0 : (double)matched / (double)preds.size();
  s.ei.r = gold.empty() ? 0.0 : (double)matched / (double)gold.size();
  s.ei.f1 = f1_of(s.ei.p, s.ei.r);
  s.ec_accuracy = matched > 0 ? (double)type_ok / (double)matched : 0.0;
  return s;
}

// Corpus accumulation for entity scores.
struct EntityCounts {
  double n_pred = 0, n_gold = 0, n_matched = 0, n_type_ok = 0;
  void add(std::vector<TypedSpan> preds, std::vector<TypedSpan> gold, bool exact = false) {
    EntityScore s = entity_scores(preds, gold, exact);
    n_pred += (double)preds.size();
    n_gold += (double)gold.size();
    n_matched += s.matched;
    n_type_ok += s.ec_accuracy * s.matched;
  }
  EntityScore finish() const {
    EntityScore s;
    s.matched = (int)n_matched;
    s.ei.p = n_pred > 0 ? n_matched / n_pred : 0.0;
    s.ei.r = n_gold > 0 ? n_matched / n_gold : 0.0;
    s.ei.f1 = f1_of(s.ei.p, s.ei.r);
    s.ec_accuracy = n_matched > 0 ? n_type_ok / n_matched : 0.0;
    return s;
  }
};

// ---- exact-tuple micro-F1 (THYME standard, used for E3C) ----

struct RelationTuple {
  TypedSpan head, tail;
  RelType rel = RelType::Before;
};

namespace detail {

inline std::string tuple_key(const RelationTuple& t) {
  auto span_key = [](const TypedSpan& s) {
    return std::to_string(s.start) + ":" + std::to_string(s.end);
  };
  RelationTuple n = t;
  if (n.rel == RelType::After) {
    std::swap(n.head, n.tail);
    n.rel = RelType::Before;
  }
  if (n.rel == RelType::Overlap &&
      std::tie(n.tail.start, n.tail.end) < std::tie(n.head.start, n.head.end))
    std::swap(n.head, n.tail);
  return span_key(n.head) + "|" + to_string(n.rel) + "|" + span_key(n.tail);
}

}  // namespace detail

struct MicroCounts {
  double tp = 0, n_pred = 0, n_gold = 0;
  void add(const std::vector<RelationTuple>& pred, const std::vector<RelationTuple>& gold) {
    std::set<std::string> pk, gk;
    for (const auto& t : pred) pk.insert(detail::tuple_key(t));
    for (const auto& t : gold) gk.insert(detail::tuple_key(t));
    n_pred += (double)pk.size();
    n_gold += (double)gk.size();
    for (const auto& k : pk)
      if (gk.count(k)) tp += 1;
  }
  Prf finish() const {
    Prf s;
    s.p = n_pred > 0 ? tp / n_pred : 0.0;
    s.r = n_gold > 0 ? tp / n_gold : 0.0;
    s.f1 = f1_of(s.p, s.r);
    return s;
  }
};

inline double micro_f1(const std::vector<RelationTuple>& pred,
                       const std::vector<RelationTuple>& gold) {
  MicroCounts c;
  c.add(pred, gold);
  return c.finish().f1;
}

// ---- distance-stratified evaluation ----

// d_r counts the window segments separating two entities. Edges whose
// endpoints lack a window assignment are excluded from every stratum.
struct Stratum {
  std::string label;
  std::function<bool(int)> predicate;
};

inline std::vector<Stratum> default_strata() {
  return {{"d_r=0", [](int d) { return d == 0; }},
          {"d_r>0", [](int d) { return d > 0; }},
          {"d_r>1", [](int d) { return d > 1; }}};
}

inline TemporalGraph filter_by_distance(const TemporalGraph& g,
                                        const std::map<std::string, int>& window_of,
                                        const std::function<bool(int)>& pred) {
  TemporalGraph out;
  for (const auto& e : g.edges()) {
    auto h = window_of.find(e.head);
    auto t = window_of.find(e.tail);
    if (h == window_of.end() || t == window_of.end()) continue;
    if (pred(std::abs(h->second - t->second))) out.add_edge(e.head, e.rel, e.tail);
  }
  return out;
}

struct StratumCounts {
  TempevalCounts tempeval;
  double gold_links = 0;
  int docs = 0;
};

struct StratifiedAccumulator {
  std::vector<Stratum> strata;
  std::vector<StratumCounts> counts;

  explicit StratifiedAccumulator(std::vector<Stratum> s = default_strata())
      : strata(std::move(s)), counts(strata.size()) {}

  void add(const TemporalGraph& sys, const TemporalGraph& gold,
           const std::map<std::string, int>& window_of) {
    for (size_t i = 0; i < strata.size(); ++i) {
      TemporalGraph fs = filter_by_distance(sys, window_of, strata[i].predicate);
      TemporalGraph fg = filter_by_distance(gold, window_of, strata[i].predicate);
      counts[i].tempeval.add(fs, fg);
      counts[i].gold_links += (double)fg.edge_count();
      counts[i].docs += 1;
    }
  }
};

struct StratumRow {
  std::string label;
  Prf scores;
  double mean_gold_tlinks = 0;
};

// F1 lift of system b over system a, in percent.
inline double percent_improvement(double f1_a, double f1_b) {
  return f1_a > 0 ? (f1_b - f1_a) / f1_a * 100.0 : 0.0;
}

// ---- aggregate report ----

struct MetricReport {
  Prf tempeval;
  EntityScore entity;
  std::map<std::string, Prf> per_class;
  std::vector<StratumRow> strata;
  double micro_relation_f1 = -1;  // < 0 means not applicable
  double micro_entity_f1 = -1;
  bool inconsistency_flagged = false;
  int documents = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["documents"] = documents;
    j["tempeval"] = {{"P", tempeval.p}, {"R", tempeval.r}, {"F1", tempeval.f1}};
    j["entity"] = {{"EI_P", entity.ei.p},
                   {"EI_R", entity.ei.r},
                   {"EI_F1", entity.ei.f1},
                   {"EC_accuracy", entity.ec_accuracy}};
    j["per_class"] = nlohmann::json::object();
    for (const auto& [k, v] : per_class)
      j["per_class"][k] = {{"P", v.p}, {"R", v.r}, {"F1", v.f1}};
    j["strata"] = nlohmann::json::array();
    for (const auto& s : strata)
      j["strata"].push_back({{"label", s.label},
                             {"P", s.scores.p},
                             {"R", s.scores.r},
                             {"F1", s.scores.f1},
                             {"mean_gold_tlinks", s.mean_gold_tlinks}});
    if (micro_relation_f1 >= 0) j["micro_relation_F1"] = micro_relation_f1;
    if (micro_entity_f1 >= 0) j["micro_entity_F1"] = micro_entity_f1;
    j["inconsistency_flagged"] = inconsistency_flagged;
    return j;
  }

  std::string to_table(const std::string& title = "results",
                       const MetricReport* baseline = nullptr) const {
    std::ostringstream out;
    auto pct = [](double v) {
      std::ostringstream s;
      s << std::fixed << std::setprecision(2) << v * 100.0;
      return s.str();
    };
    out << "== " << title << " (" << documents << " documents) ==\n";
    out << std::left << std::setw(14) << "metric" << std::setw(9) << "P" << std::setw(9) << "R"
        << std::setw(9) << "F1" << "\n";
    out << std::left << std::setw(14) << "TLink" << std::setw(9) << pct(tempeval.p)
        << std::setw(9) << pct(tempeval.r) << std::setw(9) << pct(tempeval.f1);
    if (baseline)
      out << "  %IMP " << std::fixed << std::setprecision(2)
          << percent_improvement(baseline->tempeval.f1, tempeval.f1);
    out << "\n";
    out << std::left << std::setw(14) << "Entity EI" << std::setw(9) << pct(entity.ei.p)
        << std::setw(9) << pct(entity.ei.r) << std::setw(9) << pct(entity.ei.f1) << "\n";
    out << std::left << std::setw(14) << "Entity EC" << "acc " << pct(entity.ec_accuracy) << "\n";
    for (const auto& [k, v] : per_class)
      out << std::left << std::setw(14) << ("TLink " + k) << std::setw(9) << pct(v.p)
          << std::setw(9) << pct(v.r) << std::setw(9) << pct(v.f1) << "\n";
    if (!strata.empty()) {
      out << std::left << std::setw(10) << "distance" << std::setw(9) << "n_r" << std::setw(9)
          << "P" << std::setw(9) << "R" << std::setw(9) << "F1";
      if (baseline) out << std::setw(9) << "%IMP";
      out << "\n";
      for (size_t i = 0; i < strata.size(); ++i) {
        const auto& s = strata[i];
        out << std::left << std::setw(10) << s.label << std::setw(9) << std::fixed
            << std::setprecision(1) << s.mean_gold_tlinks << std::setw(9) << pct(s.scores.p)
            << std::setw(9) << pct(s.scores.r) << std::setw(9) << pct(s.scores.f1);
        if (baseline && i < baseline->strata.size())
          out << std::setw(9) << std::setprecision(2)
              << percent_improvement(baseline->strata[i].scores.f1, s.scores.f1);
        out << "\n";
      }
    }
    if (micro_relation_f1 >= 0)
      out << "micro relation F1 " << pct(micro_relation_f1) << "  micro entity F1 "
          << pct(micro_entity_f1) << "\n";
    if (inconsistency_flagged)
      out << "note: at least one closure was inconsistent; scored on the flagged fixpoint\n";
    return out.str();
  }
};

}  // namespace temprex
