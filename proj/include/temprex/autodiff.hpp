#pragma once

// Reverse-mode automatic differentiation on dense double matrices.
// A Var wraps a graph node; operations build the graph, backward() runs a
// topological sweep. Parameters are long-lived leaf Vars whose gradients
// accumulate until zero_grad().

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <unordered_set>
#include <vector>

namespace temprex::ad {

using Matrix = Eigen::MatrixXd;

struct Node {
  Matrix val;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> prev;
  std::function<void(Node&)> back;

  void ensure_grad() {
    if (grad.size() == 0) grad = Matrix::Zero(val.rows(), val.cols());
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Var constant(Matrix m) {
    auto n = std::make_shared<Node>();
    n->val = std::move(m);
    return Var(n);
  }
  static Var param(Matrix m) {
    auto n = std::make_shared<Node>();
    n->val = std::move(m);
    n->requires_grad = true;
    return Var(n);
  }

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->val; }
  Matrix& value() { return node_->val; }
  const Matrix& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void zero_grad() { if (node_) node_->grad.setZero(); }
  std::shared_ptr<Node> node() const { return node_; }

  long rows() const { return node_->val.rows(); }
  long cols() const { return node_->val.cols(); }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

inline Var make_op(Matrix val, std::vector<Var> parents,
                   std::function<void(Node&)> back) {
  auto n = std::make_shared<Node>();
  n->val = std::move(val);
  for (auto& p : parents) {
    n->prev.push_back(p.node());
    if (p.requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) n->back = std::move(back);
  return Var(n);
}

inline void add_grad(const std::shared_ptr<Node>& n, const Matrix& g) {
  if (!n->requires_grad) return;
  n->ensure_grad();
  n->grad += g;
}

}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: shape mismatch");
  auto an = a.node(), bn = b.node();
  return detail::make_op(a.value() * b.value(), {a, b}, [an, bn](Node& o) {
    if (an->requires_grad) detail::add_grad(an, o.grad * bn->val.transpose());
    if (bn->requires_grad) detail::add_grad(bn, an->val.transpose() * o.grad);
  });
}

inline Var add(const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("add: shape mismatch");
  auto an = a.node(), bn = b.node();
  return detail::make_op(a.value() + b.value(), {a, b}, [an, bn](Node& o) {
    detail::add_grad(an, o.grad);
    detail::add_grad(bn, o.grad);
  });
}

// out = a + rowvec broadcast over rows (bias add).
inline Var add_rowvec(const Var& a, const Var& b) {
  if (b.rows() != 1 || a.cols() != b.cols())
    throw std::invalid_argument("add_rowvec: shape mismatch");
  auto an = a.node(), bn = b.node();
  Matrix v = a.value();
  v.rowwise() += Eigen::RowVectorXd(b.value().row(0));
  return detail::make_op(std::move(v), {a, b}, [an, bn](Node& o) {
    detail::add_grad(an, o.grad);
    if (bn->requires_grad) detail::add_grad(bn, o.grad.colwise().sum());
  });
}

inline Var mul(const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("mul: shape mismatch");
  auto an = a.node(), bn = b.node();
  return detail::make_op(a.value().cwiseProduct(b.value()), {a, b},
                         [an, bn](Node& o) {
    if (an->requires_grad) detail::add_grad(an, o.grad.cwiseProduct(bn->val));
    if (bn->requires_grad) detail::add_grad(bn, o.grad.cwiseProduct(an->val));
  });
}

// Scale row i of a by c(i,0).
inline Var mul_colvec(const Var& a, const Var& c) {
  if (c.cols() != 1 || a.rows() != c.rows())
    throw std::invalid_argument("mul_colvec: shape mismatch");
  auto an = a.node(), cn = c.node();
  Matrix v = a.value().array().colwise() * c.value().col(0).array();
  return detail::make_op(std::move(v), {a, c}, [an, cn](Node& o) {
    if (an->requires_grad)
      detail::add_grad(an, (o.grad.array().colwise() * cn->val.col(0).array()).matrix());
    if (cn->requires_grad)
      detail::add_grad(cn, o.grad.cwiseProduct(an->val).rowwise().sum());
  });
}

inline Var scale(const Var& a, double s) {
  auto an = a.node();
  return detail::make_op(a.value() * s, {a}, [an, s](Node& o) {
    detail::add_grad(an, o.grad * s);
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  long rows = parts[0].rows(), cols = 0;
  for (auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix v(rows, cols);
  long off = 0;
  std::vector<long> offs;
  for (auto& p : parts) {
    offs.push_back(off);
    v.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  auto nodes = std::make_shared<std::vector<std::shared_ptr<Node>>>();
  for (auto& p : parts) nodes->push_back(p.node());
  return detail::make_op(std::move(v), parts, [nodes, offs](Node& o) {
    for (size_t i = 0; i < nodes->size(); ++i) {
      auto& n = (*nodes)[i];
      if (n->requires_grad)
        detail::add_grad(n, o.grad.middleCols(offs[i], n->val.cols()));
    }
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  long cols = parts[0].cols(), rows = 0;
  for (auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: col mismatch");
    rows += p.rows();
  }
  Matrix v(rows, cols);
  long off = 0;
  std::vector<long> offs;
  for (auto& p : parts) {
    offs.push_back(off);
    v.middleRows(off, p.rows()) = p.value();
    off += p.rows();
  }
  auto nodes = std::make_shared<std::vector<std::shared_ptr<Node>>>();
  for (auto& p : parts) nodes->push_back(p.node());
  return detail::make_op(std::move(v), parts, [nodes, offs](Node& o) {
    for (size_t i = 0; i < nodes->size(); ++i) {
      auto& n = (*nodes)[i];
      if (n->requires_grad)
        detail::add_grad(n, o.grad.middleRows(offs[i], n->val.rows()));
    }
  });
}

inline Var relu(const Var& a) {
  auto an = a.node();
  return detail::make_op(a.value().cwiseMax(0.0), {a}, [an](Node& o) {
    Matrix m = (an->val.array() > 0.0).cast<double>();
    detail::add_grad(an, o.grad.cwiseProduct(m));
  });
}

inline Var gelu(const Var& a) {
  auto an = a.node();
  Matrix v = a.value().unaryExpr([](double x) {
    return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
  });
  return detail::make_op(std::move(v), {a}, [an](Node& o) {
    Matrix d = an->val.unaryExpr([](double x) {
      const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
      const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * M_PI);
      return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) +
             x * inv_sqrt2pi * std::exp(-0.5 * x * x);
    });
    detail::add_grad(an, o.grad.cwiseProduct(d));
  });
}

inline Matrix softmax_rows_value(const Matrix& a) {
  Matrix out(a.rows(), a.cols());
  for (long i = 0; i < a.rows(); ++i) {
    double mx = a.row(i).maxCoeff();
    Eigen::ArrayXd e = (a.row(i).array() - mx).exp();
    out.row(i) = (e / e.sum()).matrix();
  }
  return out;
}

inline Var softmax_rows(const Var& a) {
  auto an = a.node();
  Matrix s = softmax_rows_value(a.value());
  auto sv = std::make_shared<Matrix>(s);
  return detail::make_op(std::move(s), {a}, [an, sv](Node& o) {
    Matrix g(sv->rows(), sv->cols());
    for (long i = 0; i < sv->rows(); ++i) {
      double dot = o.grad.row(i).dot(sv->row(i));
      g.row(i) = sv->row(i).cwiseProduct(o.grad.row(i).array().matrix() -
                                         Matrix::Constant(1, sv->cols(), dot));
    }
    detail::add_grad(an, g);
  });
}

// Mean cross-entropy of row-wise logits against integer targets. 1x1 output.
inline Var cross_entropy_mean(const Var& logits, const std::vector<int>& targets) {
  if ((long)targets.size() != logits.rows())
    throw std::invalid_argument("cross_entropy_mean: target count mismatch");
  auto ln = logits.node();
  const Matrix& z = logits.value();
  auto probs = std::make_shared<Matrix>(softmax_rows_value(z));
  double loss = 0.0;
  for (long i = 0; i < z.rows(); ++i) {
    if (targets[i] < 0 || targets[i] >= z.cols())
      throw std::invalid_argument("cross_entropy_mean: target out of range");
    loss -= std::log(std::max((*probs)(i, targets[i]), 1e-300));
  }
  loss /= std::max<long>(1, z.rows());
  Matrix v(1, 1);
  v(0, 0) = loss;
  auto tgt = std::make_shared<std::vector<int>>(targets);
  return detail::make_op(std::move(v), {logits}, [ln, probs, tgt](Node& o) {
    double g = o.grad(0, 0) / std::max<size_t>(1, tgt->size());
    Matrix d = *probs;
    for (long i = 0; i < d.rows(); ++i) d(i, (*tgt)[i]) -= 1.0;
    detail::add_grad(ln, d * g);
  });
}

inline Var gather_rows(const Var& a, const std::vector<int>& idx) {
  auto an = a.node();
  Matrix v(idx.size(), a.cols());
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.rows())
      throw std::out_of_range("gather_rows: index out of range");
    v.row(i) = a.value().row(idx[i]);
  }
  auto ix = std::make_shared<std::vector<int>>(idx);
  return detail::make_op(std::move(v), {a}, [an, ix](Node& o) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < ix->size(); ++i) an->grad.row((*ix)[i]) += o.grad.row(i);
  });
}

// out has n_rows rows; row idx[i] accumulates a.row(i).
inline Var scatter_sum_rows(const Var& a, const std::vector<int>& idx, long n_rows) {
  if ((long)idx.size() != a.rows())
    throw std::invalid_argument("scatter_sum_rows: index count mismatch");
  auto an = a.node();
  Matrix v = Matrix::Zero(n_rows, a.cols());
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= n_rows)
      throw std::out_of_range("scatter_sum_rows: index out of range");
    v.row(idx[i]) += a.value().row(i);
  }
  auto ix = std::make_shared<std::vector<int>>(idx);
  return detail::make_op(std::move(v), {a}, [an, ix](Node& o) {
    if (!an->requires_grad) return;
    Matrix g(ix->size(), o.grad.cols());
    for (size_t i = 0; i < ix->size(); ++i) g.row(i) = o.grad.row((*ix)[i]);
    detail::add_grad(an, g);
  });
}

// Column-wise softmax within row groups sharing a segment id.
inline Var segment_softmax_cols(const Var& a, const std::vector<int>& seg, long n_segs) {
  if ((long)seg.size() != a.rows())
    throw std::invalid_argument("segment_softmax_cols: segment count mismatch");
  auto an = a.node();
  std::vector<std::vector<int>> groups(n_segs);
  for (size_t i = 0; i < seg.size(); ++i) {
    if (seg[i] < 0 || seg[i] >= n_segs)
      throw std::out_of_range("segment_softmax_cols: segment id out of range");
    groups[seg[i]].push_back((int)i);
  }
  Matrix v(a.rows(), a.cols());
  for (auto& g : groups) {
    if (g.empty()) continue;
    for (long c = 0; c < a.cols(); ++c) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int r : g) mx = std::max(mx, a.value()(r, c));
      double sum = 0.0;
      for (int r : g) sum += std::exp(a.value()(r, c) - mx);
      for (int r : g) v(r, c) = std::exp(a.value()(r, c) - mx) / sum;
    }
  }
  auto sv = std::make_shared<Matrix>(v);
  auto gr = std::make_shared<std::vector<std::vector<int>>>(std::move(groups));
  return detail::make_op(std::move(v), {a}, [an, sv, gr](Node& o) {
    Matrix g = Matrix::Zero(sv->rows(), sv->cols());
    for (auto& grp : *gr) {
      if (grp.empty()) continue;
      for (long c = 0; c < sv->cols(); ++c) {
        double dot = 0.0;
        for (int r : grp) dot += o.grad(r, c) * (*sv)(r, c);
        for (int r : grp) g(r, c) = (*sv)(r, c) * (o.grad(r, c) - dot);
      }
    }
    detail::add_grad(an, g);
  });
}

// Row k of the output is the column-wise max over a's rows listed in sets[k];
// an empty set yields a zero row.
inline Var rows_max_sets(const Var& a, const std::vector<std::vector<int>>& sets) {
  auto an = a.node();
  Matrix v = Matrix::Zero(sets.size(), a.cols());
  auto arg = std::make_shared<std::vector<std::vector<int>>>(
      sets.size(), std::vector<int>(a.cols(), -1));
  for (size_t k = 0; k < sets.size(); ++k) {
    if (sets[k].empty()) continue;
    for (long c = 0; c < a.cols(); ++c) {
      double best = -std::numeric_limits<double>::infinity();
      int bi = -1;
      for (int r : sets[k]) {
        if (r < 0 || r >= a.rows()) throw std::out_of_range("rows_max_sets: row index");
        if (a.value()(r, c) > best) { best = a.value()(r, c); bi = r; }
      }
      v(k, c) = best;
      (*arg)[k][c] = bi;
    }
  }
  return detail::make_op(std::move(v), {a}, [an, arg](Node& o) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t k = 0; k < arg->size(); ++k)
      for (long c = 0; c < o.grad.cols(); ++c)
        if ((*arg)[k][c] >= 0) an->grad((*arg)[k][c], c) += o.grad(k, c);
  });
}

// Split m's columns into n_blocks equal blocks; scale block h by s.col(h).
inline Var block_colscale(const Var& m, const Var& s, int n_blocks) {
  if (m.cols() % n_blocks != 0 || s.cols() != n_blocks || s.rows() != m.rows())
    throw std::invalid_argument("block_colscale: shape mismatch");
  long bw = m.cols() / n_blocks;
  auto mn = m.node(), sn = s.node();
  Matrix v(m.rows(), m.cols());
  for (int h = 0; h < n_blocks; ++h)
    v.middleCols(h * bw, bw) =
        m.value().middleCols(h * bw, bw).array().colwise() * s.value().col(h).array();
  return detail::make_op(std::move(v), {m, s}, [mn, sn, n_blocks, bw](Node& o) {
    if (mn->requires_grad) {
      Matrix g(o.grad.rows(), o.grad.cols());
      for (int h = 0; h < n_blocks; ++h)
        g.middleCols(h * bw, bw) =
            o.grad.middleCols(h * bw, bw).array().colwise() * sn->val.col(h).array();
      detail::add_grad(mn, g);
    }
    if (sn->requires_grad) {
      Matrix g(sn->val.rows(), sn->val.cols());
      for (int h = 0; h < n_blocks; ++h)
        g.col(h) = o.grad.middleCols(h * bw, bw)
                       .cwiseProduct(mn->val.middleCols(h * bw, bw))
                       .rowwise().sum();
      detail::add_grad(sn, g);
    }
  });
}

inline Var slice_cols(const Var& a, long start, long count) {
  if (start < 0 || start + count > a.cols())
    throw std::out_of_range("slice_cols: range out of bounds");
  auto an = a.node();
  return detail::make_op(a.value().middleCols(start, count), {a},
                         [an, start, count](Node& o) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    an->grad.middleCols(start, count) += o.grad;
  });
}

inline Var rowwise_sum(const Var& a) {
  auto an = a.node();
  return detail::make_op(a.value().rowwise().sum(), {a}, [an](Node& o) {
    detail::add_grad(an, o.grad * Matrix::Ones(1, an->val.cols()));
  });
}

// Multiply every entry of a by the 1x1 Var s.
inline Var scale_by(const Var& a, const Var& s) {
  if (s.rows() != 1 || s.cols() != 1) throw std::invalid_argument("scale_by: s must be 1x1");
  auto an = a.node(), sn = s.node();
  return detail::make_op(a.value() * s.value()(0, 0), {a, s}, [an, sn](Node& o) {
    if (an->requires_grad) detail::add_grad(an, o.grad * sn->val(0, 0));
    if (sn->requires_grad) {
      Matrix g(1, 1);
      g(0, 0) = o.grad.cwiseProduct(an->val).sum();
      detail::add_grad(sn, g);
    }
  });
}

inline Var sum_squares(const Var& a) {
  auto an = a.node();
  Matrix v(1, 1);
  v(0, 0) = a.value().squaredNorm();
  return detail::make_op(std::move(v), {a}, [an](Node& o) {
    detail::add_grad(an, 2.0 * o.grad(0, 0) * an->val);
  });
}

inline Var sum_all(const Var& a) {
  auto an = a.node();
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  return detail::make_op(std::move(v), {a}, [an](Node& o) {
    detail::add_grad(an, Matrix::Constant(an->val.rows(), an->val.cols(), o.grad(0, 0)));
  });
}

// Inverted dropout; identity when not training or p == 0.
template <typename Rng>
inline Var dropout(const Var& a, double p, bool training, Rng& rng) {
  if (!training || p <= 0.0) return a;
  if (p >= 1.0) throw std::invalid_argument("dropout: p must be < 1");
  auto an = a.node();
  std::bernoulli_distribution keep(1.0 - p);
  auto mask = std::make_shared<Matrix>(a.rows(), a.cols());
  for (long i = 0; i < a.rows(); ++i)
    for (long j = 0; j < a.cols(); ++j)
      (*mask)(i, j) = keep(rng) ? 1.0 / (1.0 - p) : 0.0;
  return detail::make_op(a.value().cwiseProduct(*mask), {a}, [an, mask](Node& o) {
    detail::add_grad(an, o.grad.cwiseProduct(*mask));
  });
}

inline void backward(const Var& root) {
  std::vector<Node*> topo;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.push_back({root.node().get(), 0});
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->prev.size()) {
      Node* c = n->prev[i++].get();
      if (c->requires_grad && !seen.count(c)) {
        seen.insert(c);
        stack.push_back({c, 0});
      }
    } else {
      topo.push_back(n);
      stack.pop_back();
    }
  }
  root.node()->ensure_grad();
  root.node()->grad.setOnes();
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = *it;
    if (n->back) {
      n->ensure_grad();
      n->back(*n);
    }
  }
}

}  // namespace temprex::ad
