#pragma once

// Corpus model: tokenized documents with gold entity and TLink annotations,
// label schemas, overlap resolution, relation flip augmentation,
// deterministic train/dev/test splitting and the normalized JSONL format.

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "temprex/temporal.hpp"

namespace temprex {

enum class Source { I2B2, E3C, SYNTHETIC };

inline const char* to_string(Source s) {
  switch (s) {
    case Source::I2B2: return "I2B2";
    case Source::E3C: return "E3C";
    case Source::SYNTHETIC: return "SYNTHETIC";
  }
  return "?";
}

inline Source source_from_string(const std::string& s) {
  if (s == "I2B2") return Source::I2B2;
  if (s == "E3C") return Source::E3C;
  if (s == "SYNTHETIC") return Source::SYNTHETIC;
  throw std::invalid_argument("unknown corpus source: " + s);
}

struct Token {
  std::string text;
  int char_start = 0;  // [char_start, char_end)
  int char_end = 0;
  bool operator==(const Token&) const = default;
};

struct EntityAnnotation {
  std::string id;
  int token_start = 0;  // inclusive
  int token_end = 0;    // inclusive
  std::string etype;
  bool operator==(const EntityAnnotation&) const = default;
};

struct TLinkAnnotation {
  std::string head_id, tail_id;
  RelType rtype = RelType::Before;
  bool operator==(const TLinkAnnotation&) const = default;
  bool operator<(const TLinkAnnotation& o) const {
    return std::tie(head_id, tail_id, rtype) < std::tie(o.head_id, o.tail_id, o.rtype);
  }
};

struct Document {
  std::string doc_id;
  std::string text;  // raw character sequence; auxiliary, not serialized
  std::vector<Token> tokens;
  std::vector<EntityAnnotation> gold_entities;
  std::vector<TLinkAnnotation> gold_tlinks;
  Source source = Source::SYNTHETIC;

  // Equality over the normalized fields; `text` is loader-side context only.
  bool operator==(const Document& o) const {
    return doc_id == o.doc_id && tokens == o.tokens && gold_entities == o.gold_entities &&
           gold_tlinks == o.gold_tlinks && source == o.source;
  }
};

// Entity/relation label inventory for one corpus style.
struct LabelSchema {
  std::string name;
  std::vector<std::string> entity_types;
  bool has_after = true;  // E3C has no After class

  static LabelSchema i2b2() {
    return {"i2b2",
            {"PROBLEM", "TREATMENT", "TEST", "CLINICAL_DEPT", "EVIDENTIAL", "OCCURRENCE",
             "DATE", "TIME", "DURATION", "FREQUENCY", "ADMISSION", "DISCHARGE"},
            true};
  }
  static LabelSchema e3c() { return {"e3c", {"EVENT"}, false}; }
  static LabelSchema for_source(Source s) {
    return s == Source::E3C ? e3c() : i2b2();
  }

  int type_index(const std::string& t) const {
    for (size_t i = 0; i < entity_types.size(); ++i)
      if (entity_types[i] == t) return (int)i;
    return -1;
  }
  bool is_sectime(const std::string& t) const { return t == "ADMISSION" || t == "DISCHARGE"; }
};

// Whitespace/punctuation tokenizer with character offsets: alphanumeric runs
// form one token, every other non-space character is its own token.
inline std::vector<Token> simple_tokenize(const std::string& text) {
  std::vector<Token> out;
  int i = 0, n = (int)text.size();
  while (i < n) {
    unsigned char c = text[i];
    if (std::isspace(c)) { ++i; continue; }
    int start = i;
    if (std::isalnum(c)) {
      while (i < n && std::isalnum((unsigned char)text[i])) ++i;
    } else {
      ++i;
    }
    out.push_back({text.substr(start, i - start), start, i});
  }
  return out;
}

// Smallest token range covering the character span [cs, ce); nullopt when no
// token overlaps it.
inline std::optional<std::pair<int, int>> snap_to_tokens(const std::vector<Token>& tokens,
                                                         int cs, int ce) {
  int first = -1, last = -1;
  for (size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t].char_end <= cs) continue;
    if (tokens[t].char_start >= ce) break;
    if (first < 0) first = (int)t;
    last = (int)t;
  }
  if (first < 0) return std::nullopt;
  return std::make_pair(first, last);
}

// Keeps a maximal token-disjoint subset of the annotations: ADMISSION and
// DISCHARGE beat any other overlapping type, otherwise the earlier annotation
// wins. Output preserves the input order of the survivors.
inline std::vector<EntityAnnotation> resolve_overlaps(const std::vector<EntityAnnotation>& entities) {
  auto is_priority = [](const EntityAnnotation& e) {
    return e.etype == "ADMISSION" || e.etype == "DISCHARGE";
  };
  std::vector<char> alive(entities.size(), 0);
  std::set<int> occupied;
  auto try_keep = [&](size_t i) {
    for (int t = entities[i].token_start; t <= entities[i].token_end; ++t)
      if (occupied.count(t)) return;
    for (int t = entities[i].token_start; t <= entities[i].token_end; ++t) occupied.insert(t);
    alive[i] = 1;
  };
  for (size_t i = 0; i < entities.size(); ++i)
    if (is_priority(entities[i])) try_keep(i);
  for (size_t i = 0; i < entities.size(); ++i)
    if (!is_priority(entities[i])) try_keep(i);
  std::vector<EntityAnnotation> out;
  for (size_t i = 0; i < entities.size(); ++i)
    if (alive[i]) out.push_back(entities[i]);
  return out;
}

// Drops TLinks whose endpoints did not survive entity filtering.
inline std::vector<TLinkAnnotation> filter_tlinks(const std::vector<TLinkAnnotation>& tlinks,
                                                  const std::vector<EntityAnnotation>& entities) {
  std::set<std::string> ids;
  for (const auto& e : entities) ids.insert(e.id);
  std::vector<TLinkAnnotation> out;
  for (const auto& t : tlinks)
    if (ids.count(t.head_id) && ids.count(t.tail_id)) out.push_back(t);
  return out;
}

// Adds inverse relations: Before(A,B) gains After(B,A) and vice versa,
// Overlap is mirrored. Under a schema without an After class (E3C) Before is
// left alone and only Overlap is mirrored. Output is deduplicated and the
// operation is idempotent.
inline std::vector<TLinkAnnotation> augment_flip_relations(
    const std::vector<TLinkAnnotation>& tlinks, const LabelSchema& schema) {
  std::set<TLinkAnnotation> out(tlinks.begin(), tlinks.end());
  for (const auto& t : tlinks) {
    switch (t.rtype) {
      case RelType::Before:
        if (schema.has_after) out.insert({t.tail_id, t.head_id, RelType::After});
        break;
      case RelType::After:
        out.insert({t.tail_id, t.head_id, RelType::Before});
        break;
      case RelType::Overlap:
        out.insert({t.tail_id, t.head_id, RelType::Overlap});
        break;
    }
  }
  return {out.begin(), out.end()};
}

struct CorpusSplit {
  std::vector<Document> train, dev, test;
};

struct DevSpec {
  bool by_fraction = false;
  int count = 0;
  double fraction = 0.0;
  static DevSpec by_count(int n) { return {false, n, 0.0}; }
  static DevSpec by_frac(double f) { return {true, 0, f}; }
};

namespace detail {

// Platform-stable Fisher-Yates shuffle (std::shuffle is not portable across
// standard libraries).
inline void deterministic_shuffle(std::vector<size_t>& idx, uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (size_t i = idx.size(); i > 1; --i) {
    size_t j = (size_t)(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
}

}  // namespace detail

// Deterministic dev sample from the training pool; test documents pass
// through untouched. Train/test membership comes from the distribution, so
// the pools arrive pre-separated.
inline CorpusSplit split_corpus(const std::vector<Document>& train_pool,
                                const std::vector<Document>& test, DevSpec dev,
                                uint64_t seed) {
  size_t dev_n = dev.by_fraction ? (size_t)std::llround(dev.fraction * (double)train_pool.size())
                                 : (size_t)std::max(0, dev.count);
  if (dev_n > train_pool.size())
    throw std::invalid_argument("split_corpus: dev size " + std::to_string(dev_n) +
                                " exceeds training pool of " + std::to_string(train_pool.size()));
  std::vector<size_t> idx(train_pool.size());
  std::iota(idx.begin(), idx.end(), 0);
  detail::deterministic_shuffle(idx, seed);
  std::set<size_t> dev_idx(idx.begin(), idx.begin() + dev_n);
  CorpusSplit split;
  for (size_t i = 0; i < train_pool.size(); ++i)
    (dev_idx.count(i) ? split.dev : split.train).push_back(train_pool[i]);
  split.test = test;
  return split;
}

// ---- normalized JSONL corpus ----

inline nlohmann::json document_to_json(const Document& d) {
  nlohmann::json j;
  j["doc_id"] = d.doc_id;
  j["tokens"] = nlohmann::json::array();
  for (const auto& t : d.tokens) j["tokens"].push_back({t.text, t.char_start, t.char_end});
  j["entities"] = nlohmann::json::array();
  for (const auto& e : d.gold_entities)
    j["entities"].push_back({{"id", e.id},
                             {"start", e.token_start},
                             {"end", e.token_end},
                             {"type", e.etype}});
  j["tlinks"] = nlohmann::json::array();
  for (const auto& t : d.gold_tlinks)
    j["tlinks"].push_back({{"head", t.head_id}, {"tail", t.tail_id}, {"type", to_string(t.rtype)}});
  j["source"] = to_string(d.source);
  return j;
}

inline Document document_from_json(const nlohmann::json& j) {
  Document d;
  d.doc_id = j.at("doc_id").get<std::string>();
  for (const auto& t : j.at("tokens"))
    d.tokens.push_back({t.at(0).get<std::string>(), t.at(1).get<int>(), t.at(2).get<int>()});
  for (const auto& e : j.at("entities"))
    d.gold_entities.push_back({e.at("id").get<std::string>(), e.at("start").get<int>(),
                               e.at("end").get<int>(), e.at("type").get<std::string>()});
  for (const auto& t : j.at("tlinks")) {
    RelType r;
    if (!rel_from_string(t.at("type").get<std::string>(), r))
      throw std::invalid_argument("bad tlink type in " + d.doc_id);
    d.gold_tlinks.push_back({t.at("head").get<std::string>(), t.at("tail").get<std::string>(), r});
  }
  d.source = source_from_string(j.at("source").get<std::string>());
  return d;
}

inline void save_corpus_jsonl(const std::vector<Document>& docs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& d : docs) out << document_to_json(d).dump() << "\n";
}

inline std::vector<Document> load_corpus_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::vector<Document> docs;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      docs.push_back(document_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return docs;
}

// ---- repair log ----

// Structured sidecar record of every annotation repair or drop performed by a
// loader. Gold errors are auditable, never silently discarded.
struct RepairEntry {
  std::string kind;    // e.g. offset_corrected, entity_dropped, tlink_dropped
  std::string ref_id;  // annotation id involved
  std::string detail;
};

struct RepairLog {
  std::string doc_id;
  std::vector<RepairEntry> entries;

  void add(std::string kind, std::string ref_id, std::string detail) {
    entries.push_back({std::move(kind), std::move(ref_id), std::move(detail)});
  }
  nlohmann::json to_json() const {
    nlohmann::json j;
    j["doc_id"] = doc_id;
    j["entries"] = nlohmann::json::array();
    for (const auto& e : entries)
      j["entries"].push_back({{"kind", e.kind}, {"id", e.ref_id}, {"detail", e.detail}});
    return j;
  }
  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << to_json().dump(2) << "\n";
  }
};

}  // namespace temprex
