#pragma once

// Loader for I2B2-2012-style temporal annotation XML. The distributed gold
// carries systematic defects (shifted character offsets, dangling TLink
// endpoints, the unannotated "Discharge" id); every correction applied here
// lands in the per-document repair log.

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "temprex/corpus.hpp"
#include "temprex/xml_lite.hpp"

namespace temprex {

using TokenizerFn = std::function<std::vector<Token>(const std::string&)>;

struct LoadResult {
  Document doc;
  RepairLog repair;
};

namespace detail {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string stem_of(const std::string& path) {
  return std::filesystem::path(path).stem().string();
}

// Re-aligns [start, end) so the document slice equals the annotated surface
// form, searching near the annotated start. Returns the corrected span, or
// nullopt when the surface form cannot be located.
inline std::optional<std::pair<int, int>> realign_span(const std::string& text, int start,
                                                       int end, const std::string& surface,
                                                       int search_radius = 64) {
  auto ok = [&](int s) {
    return s >= 0 && s + (int)surface.size() <= (int)text.size() &&
           text.compare(s, surface.size(), surface) == 0;
  };
  if (surface.empty()) {
    if (start >= 0 && end >= start && end <= (int)text.size())
      return std::make_pair(start, end);
    return std::nullopt;
  }
  if (ok(start) && end == start + (int)surface.size())
    return std::make_pair(start, end);
  for (int d = 0; d <= search_radius; ++d) {
    if (ok(start - d)) return std::make_pair(start - d, start - d + (int)surface.size());
    if (d > 0 && ok(start + d)) return std::make_pair(start + d, start + d + (int)surface.size());
  }
  return std::nullopt;
}

inline std::string normalize_i2b2_type(std::string t) {
  for (auto& c : t) c = (char)std::toupper((unsigned char)c);
  if (t == "CLINICAL_DEPARTMENT") return "CLINICAL_DEPT";
  return t;
}

struct RawAnnotation {
  std::string id, surface, etype;
  int char_start = 0, char_end = 0;
};

}  // namespace detail

// Parses one I2B2 2012 annotation file: a root element containing a TEXT
// child (the note) and a TAGS child with EVENT / TIMEX3 / SECTIME / TLINK
// entries. Character spans are end-exclusive; shifted offsets are re-aligned
// against the annotated surface form. TLinks whose endpoints vanished are
// dropped, except that the bare id "Discharge" is re-bound to an entity whose
// text reads "Discharge" when one survives.
inline LoadResult load_i2b2_document(const std::string& path,
                                     const TokenizerFn& tokenizer = simple_tokenize) {
  LoadResult res;
  res.doc.doc_id = detail::stem_of(path);
  res.doc.source = Source::I2B2;
  res.repair.doc_id = res.doc.doc_id;

  xml::XmlNode root = xml::parse(detail::read_file(path));
  const xml::XmlNode* text_node = root.child("TEXT");
  const xml::XmlNode* tags = root.child("TAGS");
  if (!text_node) throw std::runtime_error(path + ": missing TEXT element");
  res.doc.text = text_node->text;
  res.doc.tokens = tokenizer(res.doc.text);

  LabelSchema schema = LabelSchema::i2b2();
  std::vector<detail::RawAnnotation> raw;
  if (tags) {
    for (const auto& c : tags->children) {
      if (c.name != "EVENT" && c.name != "TIMEX3" && c.name != "SECTIME") continue;
      detail::RawAnnotation a;
      if (const auto* v = c.attr("id")) a.id = *v;
      if (const auto* v = c.attr("text")) a.surface = *v;
      if (const auto* v = c.attr("type")) a.etype = detail::normalize_i2b2_type(*v);
      const auto* s = c.attr("start");
      const auto* e = c.attr("end");
      if (!s || !e || a.id.empty()) {
        res.repair.add("entity_dropped", a.id, c.name + " missing id/start/end");
        continue;
      }
      try {
        a.char_start = std::stoi(*s);
        a.char_end = std::stoi(*e);
      } catch (...) {
        res.repair.add("entity_dropped", a.id, "non-numeric offsets");
        continue;
      }
      if (schema.type_index(a.etype) < 0) {
        res.repair.add("entity_dropped", a.id, "unannotated or unknown type '" + a.etype + "'");
        continue;
      }
      raw.push_back(std::move(a));
    }
  }

  // Surface-form verification and token snapping.
  std::map<std::string, std::string> surface_of;
  for (const auto& a : raw) {
    auto span = detail::realign_span(res.doc.text, a.char_start, a.char_end, a.surface);
    if (!span) {
      res.repair.add("entity_dropped", a.id,
                     "surface form '" + a.surface + "' not found near offset " +
                         std::to_string(a.char_start));
      continue;
    }
    if (span->first != a.char_start || span->second != a.char_end)
      res.repair.add("offset_corrected", a.id,
                     "[" + std::to_string(a.char_start) + "," + std::to_string(a.char_end) +
                         ") -> [" + std::to_string(span->first) + "," +
                         std::to_string(span->second) + ")");
    auto toks = snap_to_tokens(res.doc.tokens, span->first, span->second);
    if (!toks) {
      res.repair.add("entity_dropped", a.id, "no tokens cover the annotated span");
      continue;
    }
    res.doc.gold_entities.push_back({a.id, toks->first, toks->second, a.etype});
    surface_of[a.id] = a.surface;
  }

  std::map<std::string, size_t> by_id;
  for (size_t i = 0; i < res.doc.gold_entities.size(); ++i)
    by_id[res.doc.gold_entities[i].id] = i;

  auto lower = [](std::string s) {
    for (auto& c : s) c = (char)std::tolower((unsigned char)c);
    return s;
  };
  auto resolve_endpoint = [&](const std::string& id, const std::string& tlink_id)
      -> std::optional<std::string> {
    if (by_id.count(id)) return id;
    if (lower(id) == "discharge") {
      for (const auto& e : res.doc.gold_entities)
        if (lower(surface_of[e.id]) == "discharge") {
          res.repair.add("tlink_rebound", tlink_id,
                         "endpoint 'Discharge' re-bound to entity " + e.id);
          return e.id;
        }
    }
    return std::nullopt;
  };

  if (tags) {
    for (const auto& c : tags->children_named("TLINK")) {
      std::string tid = c->attr("id") ? *c->attr("id") : "";
      const auto* from = c->attr("fromID");
      const auto* to = c->attr("toID");
      const auto* type = c->attr("type");
      if (!from || !to || !type) {
        res.repair.add("tlink_dropped", tid, "missing fromID/toID/type");
        continue;
      }
      RelType rel;
      if (!rel_from_string(*type, rel)) {
        res.repair.add("tlink_dropped", tid, "unknown relation type '" + *type + "'");
        continue;
      }
      auto h = resolve_endpoint(*from, tid);
      auto t = resolve_endpoint(*to, tid);
      if (!h || !t) {
        res.repair.add("tlink_dropped", tid,
                       "missing " + std::string(!h ? "head '" + *from + "'" : "tail '" + *to + "'"));
        continue;
      }
      if (*h == *t) {
        res.repair.add("tlink_dropped", tid, "self-referential after resolution");
        continue;
      }
      res.doc.gold_tlinks.push_back({*h, *t, rel});
    }
  }
  return res;
}

// Serializes a Document back to the I2B2 XML layout (used by tests and the
// synthetic corpus tooling).
inline std::string to_i2b2_xml(const Document& doc) {
  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\" ?>\n";
  out << "<ClinicalNarrativeTemporalAnnotation>\n<TEXT><![CDATA[" << doc.text
      << "]]></TEXT>\n<TAGS>\n";
  LabelSchema schema = LabelSchema::i2b2();
  for (const auto& e : doc.gold_entities) {
    int cs = doc.tokens[e.token_start].char_start;
    int ce = doc.tokens[e.token_end].char_end;
    const char* tag = schema.is_sectime(e.etype)
                          ? "SECTIME"
                          : (schema.type_index(e.etype) >= 6 ? "TIMEX3" : "EVENT");
    out << "<" << tag << " id=\"" << xml::escape(e.id) << "\" start=\"" << cs << "\" end=\""
        << ce << "\" text=\"" << xml::escape(doc.text.substr(cs, ce - cs)) << "\" type=\""
        << e.etype << "\" />\n";
  }
  int i = 0;
  for (const auto& t : doc.gold_tlinks) {
    std::string rt = to_string(t.rtype);
    for (auto& c : rt) c = (char)std::toupper((unsigned char)c);
    out << "<TLINK id=\"TL" << i++ << "\" fromID=\"" << xml::escape(t.head_id) << "\" toID=\""
        << xml::escape(t.tail_id) << "\" type=\"" << rt << "\" />\n";
  }
  out << "</TAGS>\n</ClinicalNarrativeTemporalAnnotation>\n";
  return out.str();
}

}  // namespace temprex
