#pragma once

// Temporal graphs over Before/After/Overlap edges, their deductive closure
// and closure-preserving reduction. Overlap is treated as temporal equality
// (point model): Overlap edges merge nodes into equivalence classes and
// Before imposes a strict order on the classes, so
//   Before.Before -> Before, Overlap.Overlap -> Overlap,
//   Before.Overlap -> Before, Overlap.Before -> Before,
// Overlap is symmetric and Before(a,b) is interchangeable with After(b,a).
// The composition behavior is centralized in ClassStructure; swapping in a
// different interval calculus means replacing that core.

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace temprex {

enum class RelType { Before, After, Overlap };

inline const char* to_string(RelType r) {
  switch (r) {
    case RelType::Before: return "Before";
    case RelType::After: return "After";
    case RelType::Overlap: return "Overlap";
  }
  return "?";
}

inline bool rel_from_string(const std::string& s, RelType& out) {
  std::string t;
  for (char c : s) t.push_back((char)std::tolower((unsigned char)c));
  if (t == "before") { out = RelType::Before; return true; }
  if (t == "after") { out = RelType::After; return true; }
  if (t == "overlap") { out = RelType::Overlap; return true; }
  return false;
}

struct TemporalEdge {
  std::string head, tail;
  RelType rel = RelType::Before;

  // After(a,b) is stored as Before(b,a); Overlap uses a fixed endpoint order.
  TemporalEdge normalized() const {
    if (rel == RelType::After) return {tail, head, RelType::Before};
    if (rel == RelType::Overlap && tail < head) return {tail, head, RelType::Overlap};
    return *this;
  }
  bool operator<(const TemporalEdge& o) const {
    return std::tie(head, tail, rel) < std::tie(o.head, o.tail, o.rel);
  }
  bool operator==(const TemporalEdge& o) const {
    return head == o.head && tail == o.tail && rel == o.rel;
  }
};

// Node set plus a deduplicated, normalized edge set. Nodes may be isolated.
class TemporalGraph {
 public:
  TemporalGraph() = default;

  void add_node(const std::string& id) { nodes_.insert(id); }

  // Self-loop Overlap edges are vacuous and dropped; a Before self-loop is
  // kept so closure can flag it as an inconsistency.
  void add_edge(const std::string& head, RelType rel, const std::string& tail) {
    nodes_.insert(head);
    nodes_.insert(tail);
    TemporalEdge e = TemporalEdge{head, tail, rel}.normalized();
    if (e.head == e.tail && e.rel == RelType::Overlap) return;
    edges_.insert(e);
  }

  const std::set<std::string>& nodes() const { return nodes_; }
  const std::set<TemporalEdge>& edges() const { return edges_; }
  size_t edge_count() const { return edges_.size(); }
  bool empty() const { return edges_.empty(); }

  bool contains(const std::string& head, RelType rel, const std::string& tail) const {
    return edges_.count(TemporalEdge{head, tail, rel}.normalized()) > 0;
  }

  bool operator==(const TemporalGraph& o) const { return edges_ == o.edges_; }

 private:
  std::set<std::string> nodes_;
  std::set<TemporalEdge> edges_;
};

namespace detail {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[a] = b;
    return true;
  }
};

// Equivalence classes from Overlap edges plus the transitive closure of
// Before over those classes. This is the whole point-model calculus.
struct ClassStructure {
  std::vector<std::string> ids;
  std::map<std::string, int> index;
  std::vector<int> node_class;
  int n_class = 0;
  // before[u] holds a bitset row of classes reachable from u via Before.
  std::vector<std::vector<uint64_t>> before;

  explicit ClassStructure(const TemporalGraph& g) {
    ids.assign(g.nodes().begin(), g.nodes().end());
    for (size_t i = 0; i < ids.size(); ++i) index[ids[i]] = (int)i;

    UnionFind uf(ids.size());
    for (const auto& e : g.edges())
      if (e.rel == RelType::Overlap) uf.unite(index[e.head], index[e.tail]);
    std::map<int, int> root_to_class;
    node_class.resize(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) {
      int r = uf.find((int)i);
      auto it = root_to_class.find(r);
      if (it == root_to_class.end()) {
        node_class[i] = (int)root_to_class.size();
        root_to_class[r] = node_class[i];
      } else {
        node_class[i] = it->second;
      }
    }
    n_class = (int)root_to_class.size();

    size_t words = (n_class + 63) / 64;
    before.assign(n_class, std::vector<uint64_t>(words, 0));
    for (const auto& e : g.edges())
      if (e.rel == RelType::Before) {
        int u = node_class[index.at(e.head)], v = node_class[index.at(e.tail)];
        before[u][v / 64] |= 1ULL << (v % 64);
      }
    // Floyd-Warshall over bitset rows: after step k, row(i) covers all paths
    // with intermediates among the first k classes.
    for (int k = 0; k < n_class; ++k)
      for (int i = 0; i < n_class; ++i)
        if (test(i, k))
          for (size_t w = 0; w < words; ++w) before[i][w] |= before[k][w];
  }

  bool test(int u, int v) const { return (before[u][v / 64] >> (v % 64)) & 1ULL; }
  int class_of(const std::string& id) const { return node_class[index.at(id)]; }

  bool consistent(std::vector<std::string>* conflict = nullptr) const {
    for (int c = 0; c < n_class; ++c) {
      if (!test(c, c)) continue;
      if (conflict)
        for (size_t i = 0; i < ids.size(); ++i) {
          int ci = node_class[i];
          if (ci == c || (test(c, ci) && test(ci, c))) conflict->push_back(ids[i]);
        }
      return false;
    }
    return true;
  }
};

}  // namespace detail

struct ClosureResult {
  TemporalGraph graph;
  bool consistent = true;
  // One witness cycle (node ids) when inconsistent, e.g. {A, B} for
  // Before(A,B) and Before(B,A) both entailed.
  std::vector<std::string> conflict;
};

// Least fixpoint of the composition rules, materialized over node pairs.
// An inconsistency (a class ordered before itself) is reported, and the
// returned graph is the full fixpoint including the contradictory pairs.
inline ClosureResult temporal_closure(const TemporalGraph& g) {
  detail::ClassStructure cs(g);
  ClosureResult res;
  for (const auto& id : cs.ids) res.graph.add_node(id);
  for (size_t a = 0; a < cs.ids.size(); ++a) {
    for (size_t b = 0; b < cs.ids.size(); ++b) {
      if (a == b) continue;
      int ca = cs.node_class[a], cb = cs.node_class[b];
      if (ca == cb && a < b) res.graph.add_edge(cs.ids[a], RelType::Overlap, cs.ids[b]);
      if (cs.test(ca, cb)) res.graph.add_edge(cs.ids[a], RelType::Before, cs.ids[b]);
    }
  }
  res.consistent = cs.consistent(&res.conflict);
  return res;
}

inline bool entails(const TemporalGraph& g, const TemporalEdge& edge) {
  detail::ClassStructure cs(g);
  TemporalEdge e = edge.normalized();
  if (!cs.index.count(e.head) || !cs.index.count(e.tail)) return false;
  int ch = cs.class_of(e.head), ct = cs.class_of(e.tail);
  if (e.rel == RelType::Overlap) return ch == ct && e.head != e.tail;
  return cs.test(ch, ct);
}

namespace detail {

// Shared reduction core: a deterministic greedy sweep in sorted edge order.
// Overlap edges keep a per-class spanning forest (a cycle-closing Overlap
// edge is always derivable from the kept ones). Before edges collapse to one
// representative per class pair (parallel edges derive from each other), and
// the surviving class edges are swept in sorted order, dropping any edge
// whose target stays reachable without it. Reachability runs on bitset rows,
// so inconsistent (cyclic) prediction graphs reduce in the same way and at
// the same cost as consistent ones.
inline TemporalGraph reduce_impl(const TemporalGraph& g, const ClassStructure& cs) {
  TemporalGraph out;
  for (const auto& n : g.nodes()) out.add_node(n);

  UnionFind forest(cs.ids.size());
  for (const auto& e : g.edges())
    if (e.rel == RelType::Overlap && forest.unite(cs.index.at(e.head), cs.index.at(e.tail)))
      out.add_edge(e.head, e.rel, e.tail);

  std::map<std::pair<int, int>, TemporalEdge> class_edge;
  for (const auto& e : g.edges()) {
    if (e.rel != RelType::Before) continue;
    class_edge.emplace(std::make_pair(cs.class_of(e.head), cs.class_of(e.tail)), e);
  }

  const int C = cs.n_class;
  const size_t words = (C + 63) / 64;
  std::vector<std::vector<uint64_t>> adj(C, std::vector<uint64_t>(words, 0));
  for (const auto& [key, e] : class_edge) adj[key.first][key.second / 64] |= 1ULL << (key.second % 64);

  std::vector<uint64_t> visited(words);
  std::vector<int> stack;
  auto reaches = [&](int from, int to) {
    std::fill(visited.begin(), visited.end(), 0);
    stack.assign(1, from);
    visited[from / 64] |= 1ULL << (from % 64);
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      if ((adj[u][to / 64] >> (to % 64)) & 1ULL) return true;  // handles to == from
      for (size_t w = 0; w < words; ++w) {
        uint64_t fresh = adj[u][w] & ~visited[w];
        visited[w] |= fresh;
        while (fresh) {
          stack.push_back((int)(w * 64 + (size_t)__builtin_ctzll(fresh)));
          fresh &= fresh - 1;
        }
      }
    }
    return false;
  };

  for (const auto& [key, e] : class_edge) {
    auto [u, v] = key;
    adj[u][v / 64] &= ~(1ULL << (v % 64));
    if (!reaches(u, v)) {
      adj[u][v / 64] |= 1ULL << (v % 64);
      out.add_edge(e.head, e.rel, e.tail);
    }
  }
  return out;
}

}  // namespace detail

// Greedy closure-preserving reduction in deterministic (sorted normalized)
// edge order: closure(reduction(G)) == closure(G). Raises on inconsistent
// input, carrying the offending cycle.
inline TemporalGraph temporal_reduction(const TemporalGraph& g) {
  detail::ClassStructure cs(g);
  std::vector<std::string> conflict;
  if (!cs.consistent(&conflict)) {
    std::string msg = "temporal_reduction: inconsistent graph, cycle involving:";
    for (const auto& id : conflict) msg += " " + id;
    throw std::invalid_argument(msg);
  }
  return detail::reduce_impl(g, cs);
}

// Reduction that tolerates inconsistent graphs for scoring purposes: the
// derivability test runs on the fixpoint, so contradictory edges survive as
// long as they are not redundant.
inline TemporalGraph reduce_for_scoring(const TemporalGraph& g) {
  detail::ClassStructure cs(g);
  return detail::reduce_impl(g, cs);
}

}  // namespace temprex
