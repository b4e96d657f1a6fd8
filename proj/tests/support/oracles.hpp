#pragma once

// Independent brute-force oracles used by the test suites. These never call
// into the implementation paths they check.

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "temprex/temporal.hpp"

namespace oracles {

// Point-model oracle for the temporal algebra: nodes are timestamps over a
// small integer domain, Overlap means equal timestamps, Before means
// strictly smaller. Entailment = truth in every assignment satisfying the
// premises.
class PointModel {
 public:
  explicit PointModel(const temprex::TemporalGraph& g)
      : ids_(g.nodes().begin(), g.nodes().end()) {
    for (const auto& e : g.edges()) {
      int h = index_of(e.head), t = index_of(e.tail);
      premises_.push_back({h, t, e.rel});
    }
    enumerate_models();
  }

  bool consistent() const { return !models_.empty(); }

  bool entails(const std::string& head, temprex::RelType rel, const std::string& tail) const {
    int h = find(head), t = find(tail);
    if (h < 0 || t < 0) return false;
    if (models_.empty()) return true;  // everything follows from contradiction
    for (const auto& m : models_)
      if (!holds(m, h, t, rel)) return false;
    return true;
  }

  // Full entailment set over distinct node pairs, as a normalized graph.
  temprex::TemporalGraph entailment_set() const {
    temprex::TemporalGraph out;
    for (const auto& id : ids_) out.add_node(id);
    for (size_t a = 0; a < ids_.size(); ++a)
      for (size_t b = 0; b < ids_.size(); ++b) {
        if (a == b) continue;
        if (entails(ids_[a], temprex::RelType::Before, ids_[b]))
          out.add_edge(ids_[a], temprex::RelType::Before, ids_[b]);
        if (a < b && entails(ids_[a], temprex::RelType::Overlap, ids_[b]))
          out.add_edge(ids_[a], temprex::RelType::Overlap, ids_[b]);
      }
    return out;
  }

 private:
  struct Premise {
    int head, tail;
    temprex::RelType rel;
  };

  std::vector<std::string> ids_;
  std::vector<Premise> premises_;
  std::vector<std::vector<int>> models_;

  int index_of(const std::string& id) {
    for (size_t i = 0; i < ids_.size(); ++i)
      if (ids_[i] == id) return (int)i;
    ids_.push_back(id);
    return (int)ids_.size() - 1;
  }
  int find(const std::string& id) const {
    for (size_t i = 0; i < ids_.size(); ++i)
      if (ids_[i] == id) return (int)i;
    return -1;
  }

  static bool holds(const std::vector<int>& ts, int h, int t, temprex::RelType rel) {
    switch (rel) {
      case temprex::RelType::Before: return ts[h] < ts[t];
      case temprex::RelType::After: return ts[h] > ts[t];
      case temprex::RelType::Overlap: return ts[h] == ts[t];
    }
    return false;
  }

  void enumerate_models() {
    int n = (int)ids_.size();
    if (n == 0) return;
    std::vector<int> ts(n, 0);
    for (;;) {
      bool ok = true;
      for (const auto& p : premises_)
        if (!holds(ts, p.head, p.tail, p.rel)) { ok = false; break; }
      if (ok) models_.push_back(ts);
      int i = 0;
      while (i < n && ++ts[i] == n) ts[i++] = 0;
      if (i == n) break;
    }
  }
};

// Dense single-type attention layer computed with plain loops, independent of
// the graph machinery: every node attends over all in-neighbors listed in
// `edges` using one shared K/Q/M/G parameter set and one W_a/W_m.
struct DenseAttentionOracle {
  Eigen::MatrixXd Kw, Qw, Mw, Gw;  // d x d (head blocks of width d/heads)
  Eigen::MatrixXd Wa, Wm;          // (d/heads) x (d/heads)
  int heads;
  double mu = 1.0;

  Eigen::MatrixXd layer(const Eigen::MatrixXd& h,
                        const std::vector<std::pair<int, int>>& edges) const {
    const int n = (int)h.rows(), d = (int)h.cols(), dh = d / heads;
    Eigen::MatrixXd K = h * Kw, Q = h * Qw, M = h * Mw;
    Eigen::MatrixXd agg = Eigen::MatrixXd::Zero(n, d);
    for (int t = 0; t < n; ++t) {
      std::vector<int> srcs;
      for (auto& [s, tt] : edges)
        if (tt == t) srcs.push_back(s);
      if (srcs.empty()) continue;
      for (int hd = 0; hd < heads; ++hd) {
        Eigen::VectorXd scores(srcs.size());
        for (size_t i = 0; i < srcs.size(); ++i) {
          Eigen::RowVectorXd k = K.row(srcs[i]).segment(hd * dh, dh);
          Eigen::RowVectorXd q = Q.row(t).segment(hd * dh, dh);
          scores(i) = mu / std::sqrt((double)d) * (k * Wa).dot(q);
        }
        Eigen::VectorXd alpha = (scores.array() - scores.maxCoeff()).exp();
        alpha /= alpha.sum();
        for (size_t i = 0; i < srcs.size(); ++i) {
          Eigen::RowVectorXd msg = (M.row(srcs[i]).segment(hd * dh, dh) * Wm);
          agg.row(t).segment(hd * dh, dh) += alpha(i) * msg;
        }
      }
    }
    auto gelu = [](double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); };
    Eigen::MatrixXd out = agg.unaryExpr(gelu) * Gw + h;
    return out;
  }
};

}  // namespace oracles
