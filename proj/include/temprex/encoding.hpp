#pragma once

// Long-document encoding through overlapping sliding windows with
// unique-ownership masks: every document token contributes its final
// embedding from exactly one window, other windows only see it as context.
//
// Mask values: 1 owned token, -2 context-only token, -3 CLS/SEP, -4 PAD.

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "temprex/autodiff.hpp"
#include "temprex/corpus.hpp"
#include "temprex/nn.hpp"

namespace temprex {

constexpr int kMaskOwned = 1;
constexpr int kMaskContext = -2;
constexpr int kMaskSpecial = -3;
constexpr int kMaskPad = -4;

// Sentinel slot values; non-negative slots hold document token indices.
constexpr int kSlotCls = -1;
constexpr int kSlotSep = -2;
constexpr int kSlotPad = -3;

struct Window {
  int first_token = 0;       // document index of the first real token slot
  int own_begin = 0;         // owned token range [own_begin, own_end)
  int own_end = 0;
  std::vector<int> slots;    // length = window_size
  std::vector<int> mask;     // length = window_size
};

struct WindowPlan {
  int token_count = 0;
  int window_size = 0;
  std::vector<Window> windows;
  // owner[t] = (window index, slot index) where token t carries mask 1
  std::vector<std::pair<int, int>> owner;
};

// Enumerates overlapping windows of `n` slots (2 reserved for CLS/SEP) with
// stride (n-2)/2. The middle inner_size/2 slots of each window are owned;
// the first window additionally owns its left margin and the last window its
// right margin, so ownership tiles the document exactly once. Documents of
// at most n-2 tokens get a single window owning everything.
inline WindowPlan build_window_plan(int token_count, int window_size) {
  if (window_size < 4)
    throw std::invalid_argument("build_window_plan: window_size must be >= 4, got " +
                                std::to_string(window_size));
  if (token_count < 0)
    throw std::invalid_argument("build_window_plan: negative token_count");

  WindowPlan plan;
  plan.token_count = token_count;
  plan.window_size = window_size;
  plan.owner.assign(token_count, {-1, -1});
  if (token_count == 0) return plan;

  const int inner = window_size - 2;
  const int left = inner / 4;
  const int stride = inner / 2;

  int n_windows;
  if (token_count <= inner) {
    n_windows = 1;
  } else {
    n_windows = (token_count - left + stride - 1) / stride;
  }

  for (int w = 0; w < n_windows; ++w) {
    Window win;
    win.first_token = (token_count <= inner) ? 0 : w * stride;
    int tok_end = std::min(win.first_token + inner, token_count);
    if (token_count <= inner) {
      win.own_begin = 0;
      win.own_end = token_count;
    } else {
      win.own_begin = (w == 0) ? 0 : win.first_token + left;
      win.own_end = (w == n_windows - 1) ? token_count
                                         : win.first_token + left + stride;
    }

    win.slots.reserve(window_size);
    win.mask.reserve(window_size);
    win.slots.push_back(kSlotCls);
    win.mask.push_back(kMaskSpecial);
    for (int t = win.first_token; t < tok_end; ++t) {
      win.slots.push_back(t);
      bool owned = t >= win.own_begin && t < win.own_end;
      win.mask.push_back(owned ? kMaskOwned : kMaskContext);
      if (owned) plan.owner[t] = {w, (int)win.slots.size() - 1};
    }
    win.slots.push_back(kSlotSep);
    win.mask.push_back(kMaskSpecial);
    while ((int)win.slots.size() < window_size) {
      win.slots.push_back(kSlotPad);
      win.mask.push_back(kMaskPad);
    }
    plan.windows.push_back(std::move(win));
  }
  return plan;
}

// A contextual encoder maps one window to per-slot vectors. Implementations
// may expose trainable parameters; set_frozen gates whether they receive
// gradients (the encoder learning rate is configured separately).
class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual int max_input_length() const = 0;
  virtual int dim() const = 0;
  // Returns a (window_size x dim) Var of per-slot outputs.
  virtual ad::Var encode_window(const Document& doc, const Window& window) = 0;
  virtual void set_frozen(bool frozen) { frozen_ = frozen; }
  bool frozen() const { return frozen_; }
  virtual std::vector<ad::Var> parameters() { return {}; }

 protected:
  bool frozen_ = true;
};

namespace detail {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline void fill_hash_row(Eigen::Ref<Eigen::RowVectorXd> row, uint64_t seed) {
  uint64_t s = seed;
  for (long j = 0; j < row.cols(); ++j) {
    s = splitmix64(s);
    row(j) = (double)(s >> 11) * (2.0 / 9007199254740992.0) - 1.0;
  }
}

}  // namespace detail

// Deterministic non-trainable encoder for tests and CPU-only runs: each slot
// vector is a seeded hash of the token string mixed with a positional salt,
// so repeated surface forms stay distinguishable.
class HashEncoder : public Encoder {
 public:
  HashEncoder(int dim, int max_len, uint64_t seed = 17)
      : dim_(dim), max_len_(max_len), seed_(seed) {
    if (max_len < 4) throw std::invalid_argument("HashEncoder: max_len must be >= 4");
  }
  int max_input_length() const override { return max_len_; }
  int dim() const override { return dim_; }

  ad::Var encode_window(const Document& doc, const Window& window) override {
    Eigen::MatrixXd out(window.slots.size(), dim_);
    uint64_t window_salt = seed_;
    for (int s : window.slots)
      if (s >= 0) window_salt = detail::splitmix64(window_salt ^ detail::fnv1a(doc.tokens[s].text));
    for (size_t i = 0; i < window.slots.size(); ++i) {
      int s = window.slots[i];
      if (s >= 0) {
        Eigen::RowVectorXd tok(dim_), pos(dim_);
        detail::fill_hash_row(tok, detail::splitmix64(seed_ ^ detail::fnv1a(doc.tokens[s].text)));
        detail::fill_hash_row(pos, detail::splitmix64(seed_ * 31 + (uint64_t)s * 2654435761ULL));
        out.row(i) = 0.7 * tok + 0.3 * pos;
      } else if (s == kSlotCls) {
        Eigen::RowVectorXd cls(dim_);
        detail::fill_hash_row(cls, detail::splitmix64(window_salt ^ 0xc15ULL));
        out.row(i) = cls;
      } else {
        out.row(i).setZero();
      }
    }
    return ad::Var::constant(std::move(out));
  }

 private:
  int dim_, max_len_;
  uint64_t seed_;
};

// Trainable bag-of-hashed-tokens embedding table. Rows are hashed vocabulary
// slots plus two dedicated rows for CLS and SEP/PAD; unfreezing lets the
// optimizer fine-tune the table with the encoder learning rate.
class EmbeddingEncoder : public Encoder {
 public:
  EmbeddingEncoder(nn::ParamStore& ps, int vocab_slots, int dim, int max_len,
                   std::mt19937_64& rng)
      : vocab_(vocab_slots), dim_(dim), max_len_(max_len) {
    table_ = ps.add("encoder.table", nn::uniform_init(vocab_slots + 2, dim, dim, rng));
  }
  int max_input_length() const override { return max_len_; }
  int dim() const override { return dim_; }

  ad::Var encode_window(const Document& doc, const Window& window) override {
    std::vector<int> rows;
    rows.reserve(window.slots.size());
    for (int s : window.slots) {
      if (s >= 0)
        rows.push_back((int)(detail::fnv1a(doc.tokens[s].text) % (uint64_t)vocab_));
      else if (s == kSlotCls)
        rows.push_back(vocab_);
      else
        rows.push_back(vocab_ + 1);
    }
    ad::Var out = ad::gather_rows(table_, rows);
    if (frozen_) return ad::Var::constant(out.value());
    return out;
  }
  std::vector<ad::Var> parameters() override { return {table_}; }

 private:
  int vocab_, dim_, max_len_;
  ad::Var table_;
};

struct EncodedDocument {
  ad::Var token_embeddings;   // token_count x dim, one row per document token
  ad::Var window_summaries;   // n_windows x dim, the CLS-slot outputs
  WindowPlan plan;
};

// Runs the encoder over every window of the plan and assembles per-token
// embeddings from each token's owning window. Assembly is by index, so the
// result does not depend on window evaluation order.
inline EncodedDocument encode_document(const Document& doc, Encoder& encoder) {
  EncodedDocument enc;
  enc.plan = build_window_plan((int)doc.tokens.size(), encoder.max_input_length());
  if (doc.tokens.empty()) {
    enc.token_embeddings = ad::Var::constant(Eigen::MatrixXd::Zero(0, encoder.dim()));
    enc.window_summaries = ad::Var::constant(Eigen::MatrixXd::Zero(0, encoder.dim()));
    return enc;
  }
  std::vector<ad::Var> window_rows;
  std::vector<ad::Var> cls_rows;
  window_rows.reserve(enc.plan.windows.size());
  for (size_t w = 0; w < enc.plan.windows.size(); ++w) {
    ad::Var out;
    try {
      out = encoder.encode_window(doc, enc.plan.windows[w]);
    } catch (const std::exception& e) {
      throw std::runtime_error("encoder failed on window " + std::to_string(w) + " of " +
                               doc.doc_id + ": " + e.what());
    }
    if (out.rows() != (long)enc.plan.windows[w].slots.size() || out.cols() != encoder.dim())
      throw std::runtime_error("encoder output shape mismatch on window " + std::to_string(w));
    window_rows.push_back(out);
    cls_rows.push_back(ad::gather_rows(out, {0}));
  }
  // Pick each token's row from its owning window.
  std::vector<ad::Var> parts;
  if (enc.plan.windows.size() == 1) {
    std::vector<int> slots(enc.plan.token_count);
    for (int t = 0; t < enc.plan.token_count; ++t) slots[t] = enc.plan.owner[t].second;
    enc.token_embeddings = ad::gather_rows(window_rows[0], slots);
  } else {
    // Tokens owned by one window are contiguous; gather per window and stack.
    for (size_t w = 0; w < enc.plan.windows.size(); ++w) {
      const Window& win = enc.plan.windows[w];
      std::vector<int> slots;
      slots.reserve(win.own_end - win.own_begin);
      for (int t = win.own_begin; t < win.own_end; ++t) slots.push_back(enc.plan.owner[t].second);
      if (!slots.empty()) parts.push_back(ad::gather_rows(window_rows[w], slots));
    }
    enc.token_embeddings = ad::concat_rows(parts);
  }
  enc.window_summaries = ad::concat_rows(cls_rows);
  return enc;
}

}  // namespace temprex
