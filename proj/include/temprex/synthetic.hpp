#pragma once

// Synthetic document generator: entities with unique surface tokens and a
// consistent timeline (relations derived from integer timestamps, so gold
// closures are contradiction-free by construction). Used by the overfit
// suite and the CLI demo corpus.

#include <random>
#include <string>
#include <vector>

#include "temprex/corpus.hpp"

namespace temprex::synthetic {

struct Options {
  int n_docs = 5;
  int approx_tokens = 50;
  int n_entities = 6;
  int n_relations = 8;
  int entity_max_width = 2;
  uint64_t seed = 99;
  bool e3c = false;
};

inline std::vector<Document> make_corpus(const Options& opt) {
  std::mt19937_64 rng(opt.seed);
  std::vector<std::string> types =
      opt.e3c ? std::vector<std::string>{"EVENT"}
              : std::vector<std::string>{"PROBLEM", "TREATMENT", "TEST",
                                         "DATE",    "OCCURRENCE", "TIME"};
  std::vector<Document> docs;
  for (int d = 0; d < opt.n_docs; ++d) {
    Document doc;
    doc.doc_id = "synthetic-" + std::to_string(d);
    doc.source = opt.e3c ? Source::E3C : Source::SYNTHETIC;

    // entity slots spread across the token sequence
    int gap = std::max(2, opt.approx_tokens / (opt.n_entities + 1));
    struct Slot {
      int start, width;
      std::string type;
      int timestamp;
    };
    std::vector<Slot> slots;
    for (int e = 0; e < opt.n_entities; ++e) {
      Slot s;
      s.start = (e + 1) * gap;
      s.width = 1 + (int)(rng() % opt.entity_max_width);
      s.type = types[e % types.size()];
      s.timestamp = (int)(rng() % 3);
      slots.push_back(s);
    }

    int total = slots.back().start + slots.back().width + gap;
    std::vector<std::string> words(total);
    for (int t = 0; t < total; ++t)
      words[t] = "w" + std::to_string(d) + "x" + std::to_string(t);
    for (int e = 0; e < (int)slots.size(); ++e)
      for (int k = 0; k < slots[e].width; ++k)
        words[slots[e].start + k] =
            slots[e].type + std::to_string(d) + "e" + std::to_string(e) + "t" + std::to_string(k);

    int pos = 0;
    for (int t = 0; t < total; ++t) {
      doc.tokens.push_back({words[t], pos, pos + (int)words[t].size()});
      doc.text += words[t] + " ";
      pos += (int)words[t].size() + 1;
    }

    for (int e = 0; e < (int)slots.size(); ++e)
      doc.gold_entities.push_back({"d" + std::to_string(d) + "e" + std::to_string(e),
                                   slots[e].start, slots[e].start + slots[e].width - 1,
                                   slots[e].type});

    // relations over distinct pairs, labels from the timestamps
    std::vector<std::pair<int, int>> pairs;
    for (int i = 0; i < (int)slots.size(); ++i)
      for (int j = i + 1; j < (int)slots.size(); ++j) pairs.push_back({i, j});
    for (size_t i = pairs.size(); i > 1; --i) std::swap(pairs[i - 1], pairs[rng() % i]);
    int n_rel = std::min((int)pairs.size(), opt.n_relations);
    for (int r = 0; r < n_rel; ++r) {
      auto [i, j] = pairs[r];
      RelType rel;
      int a = slots[i].timestamp, b = slots[j].timestamp;
      std::string head = "d" + std::to_string(d) + "e" + std::to_string(i);
      std::string tail = "d" + std::to_string(d) + "e" + std::to_string(j);
      if (a == b) {
        rel = RelType::Overlap;
      } else if (a < b) {
        rel = RelType::Before;
      } else if (opt.e3c) {
        std::swap(head, tail);  // E3C gold has no After class
        rel = RelType::Before;
      } else {
        rel = RelType::After;
      }
      doc.gold_tlinks.push_back({head, tail, rel});
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

}  // namespace temprex::synthetic
