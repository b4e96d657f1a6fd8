#pragma once

// Loader for E3C layer-1 (manual annotation) files in the UIMA/XMI layout:
// a Sofa element holds the document text, typed annotation elements carry
// xmi:id/begin/end, and TLINK elements reference annotation ids. Only EVENT
// entities and EVENT-EVENT links are retained; the richer E3C relation
// inventory is merged down to {Before, Overlap}.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "temprex/corpus.hpp"
#include "temprex/i2b2.hpp"  // read_file, realign_span, stem_of
#include "temprex/xml_lite.hpp"

namespace temprex {

// Maps an E3C relation label onto the merged scheme. `flip` reports that the
// stored pair order must be reversed: (A, Begins-On, B) means B starts A, so
// it becomes (B, Before, A).
inline std::optional<std::pair<RelType, bool>> merge_e3c_labels(const std::string& label) {
  std::string t;
  for (char c : label)
    if (c != '-' && c != '_' && c != ' ') t.push_back((char)std::tolower((unsigned char)c));
  if (t == "before") return std::make_pair(RelType::Before, false);
  if (t == "contains") return std::make_pair(RelType::Overlap, false);
  if (t == "overlap") return std::make_pair(RelType::Overlap, false);
  if (t == "simultaneous") return std::make_pair(RelType::Overlap, false);
  if (t == "endson") return std::make_pair(RelType::Before, false);
  if (t == "beginson") return std::make_pair(RelType::Before, true);
  return std::nullopt;
}

inline LoadResult load_e3c_document(const std::string& path,
                                    const TokenizerFn& tokenizer = simple_tokenize) {
  LoadResult res;
  res.doc.doc_id = detail::stem_of(path);
  res.doc.source = Source::E3C;
  res.repair.doc_id = res.doc.doc_id;

  xml::XmlNode root = xml::parse(detail::read_file(path));

  // Document text: the Sofa's sofaString.
  const xml::XmlNode* sofa = nullptr;
  for (const auto& c : root.children)
    if (c.local_name() == "Sofa") sofa = &c;
  if (!sofa || !sofa->attr("sofaString"))
    throw std::runtime_error(path + ": missing Sofa/sofaString");
  res.doc.text = *sofa->attr("sofaString");
  res.doc.tokens = tokenizer(res.doc.text);

  struct Ann {
    std::string kind;
    int begin = 0, end = 0;
  };
  std::map<std::string, Ann> by_id;  // all span annotations, for TLINK filtering

  static const std::set<std::string> span_kinds = {
      "EVENT", "TIMEX3", "BODYPART", "ACTOR", "RML", "PREPOSTEXP", "OTHER"};

  for (const auto& c : root.children) {
    std::string kind = c.local_name();
    if (!span_kinds.count(kind)) continue;
    const auto* id = c.attr("xmi:id");
    const auto* b = c.attr("begin");
    const auto* e = c.attr("end");
    if (!id || !b || !e) {
      res.repair.add("entity_dropped", id ? *id : "", kind + " missing xmi:id/begin/end");
      continue;
    }
    Ann a{kind, 0, 0};
    try {
      a.begin = std::stoi(*b);
      a.end = std::stoi(*e);
    } catch (...) {
      res.repair.add("entity_dropped", *id, "non-numeric offsets");
      continue;
    }
    // Offsets are verified against the covered-text attribute when present
    // (carriage-return shifts in the distribution), otherwise taken as-is.
    if (const auto* surface = c.attr("text")) {
      auto span = detail::realign_span(res.doc.text, a.begin, a.end, *surface);
      if (!span) {
        res.repair.add("entity_dropped", *id, "surface form not found near offset");
        continue;
      }
      if (span->first != a.begin || span->second != a.end) {
        res.repair.add("offset_corrected", *id,
                       "[" + std::to_string(a.begin) + "," + std::to_string(a.end) + ") -> [" +
                           std::to_string(span->first) + "," + std::to_string(span->second) + ")");
        a.begin = span->first;
        a.end = span->second;
      }
    } else if (a.begin < 0 || a.end < a.begin || a.end > (int)res.doc.text.size()) {
      res.repair.add("entity_dropped", *id, "offsets out of range");
      continue;
    }
    by_id[*id] = a;
    if (kind == "EVENT") {
      auto toks = snap_to_tokens(res.doc.tokens, a.begin, a.end);
      if (!toks) {
        res.repair.add("entity_dropped", *id, "no tokens cover the annotated span");
        continue;
      }
      res.doc.gold_entities.push_back({*id, toks->first, toks->second, "EVENT"});
    }
  }

  std::set<std::string> event_ids;
  for (const auto& e : res.doc.gold_entities) event_ids.insert(e.id);

  for (const auto& c : root.children) {
    if (c.local_name() != "TLINK") continue;
    std::string tid = c.attr("xmi:id") ? *c.attr("xmi:id") : "";
    const auto* src = c.attr("source") ? c.attr("source") : c.attr("from");
    const auto* tgt = c.attr("target") ? c.attr("target") : c.attr("to");
    const auto* rel = c.attr("relType") ? c.attr("relType") : c.attr("type");
    if (!src || !tgt || !rel) {
      res.repair.add("tlink_dropped", tid, "missing source/target/relType");
      continue;
    }
    if (!by_id.count(*src) || !by_id.count(*tgt)) {
      res.repair.add("tlink_dropped", tid, "missing head/tail annotation");
      continue;
    }
    if (!event_ids.count(*src) || !event_ids.count(*tgt)) {
      res.repair.add("tlink_dropped", tid, "non EVENT-EVENT link");
      continue;
    }
    auto merged = merge_e3c_labels(*rel);
    if (!merged) {
      res.repair.add("tlink_dropped", tid, "unknown relation type '" + *rel + "'");
      continue;
    }
    if (*src == *tgt) {
      res.repair.add("tlink_dropped", tid, "self-referential");
      continue;
    }
    auto [rtype, flip] = *merged;
    if (flip)
      res.doc.gold_tlinks.push_back({*tgt, *src, rtype});
    else
      res.doc.gold_tlinks.push_back({*src, *tgt, rtype});
  }
  return res;
}

// Serializes a Document to the E3C-style XMI layout (test fixtures).
inline std::string to_e3c_xmi(const Document& doc) {
  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<xmi:XMI xmlns:xmi=\"http://www.omg.org/XMI\" xmi:version=\"2.0\">\n";
  out << "<cas:Sofa xmi:id=\"1\" sofaNum=\"1\" sofaID=\"_InitialView\" sofaString=\""
      << xml::escape(doc.text) << "\"/>\n";
  for (const auto& e : doc.gold_entities) {
    int cs = doc.tokens[e.token_start].char_start;
    int ce = doc.tokens[e.token_end].char_end;
    out << "<custom:EVENT xmi:id=\"" << xml::escape(e.id) << "\" sofa=\"1\" begin=\"" << cs
        << "\" end=\"" << ce << "\" text=\"" << xml::escape(doc.text.substr(cs, ce - cs))
        << "\"/>\n";
  }
  int i = 1000;
  for (const auto& t : doc.gold_tlinks) {
    std::string rt = t.rtype == RelType::Overlap ? "CONTAINS" : "BEFORE";
    out << "<custom:TLINK xmi:id=\"" << i++ << "\" sofa=\"1\" source=\""
        << xml::escape(t.head_id) << "\" target=\"" << xml::escape(t.tail_id) << "\" relType=\""
        << rt << "\"/>\n";
  }
  out << "</xmi:XMI>\n";
  return out.str();
}

}  // namespace temprex
