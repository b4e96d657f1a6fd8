#pragma once

// Small neural-net building blocks over the autodiff Vars: linear layers,
// feed-forward stacks, embedding tables, a named parameter registry and Adam
// with linear warmup.

#include <cmath>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "temprex/autodiff.hpp"

namespace temprex::nn {

using ad::Matrix;
using ad::Var;

// Named registry of trainable parameters. Iteration order is registration
// order, so optimizer state and checkpoints are stable across runs.
class ParamStore {
 public:
  Var add(const std::string& name, Matrix init) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    Var v = Var::param(std::move(init));
    index_[name] = params_.size();
    params_.push_back({name, v});
    return v;
  }
  const std::vector<std::pair<std::string, Var>>& entries() const { return params_; }
  Var get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter: " + name);
    return params_[it->second].second;
  }
  bool has(const std::string& name) const { return index_.count(name) > 0; }
  void zero_grad() {
    for (auto& [_, v] : params_) v.zero_grad();
  }
  size_t size() const { return params_.size(); }

 private:
  std::vector<std::pair<std::string, Var>> params_;
  std::map<std::string, size_t> index_;
};

// PyTorch-style default uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
inline Matrix uniform_init(long rows, long cols, long fan_in, std::mt19937_64& rng) {
  double bound = fan_in > 0 ? 1.0 / std::sqrt((double)fan_in) : 0.0;
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (long i = 0; i < rows; ++i)
    for (long j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

struct Linear {
  Var weight;  // in x out
  Var bias;    // 1 x out; may be undefined for bias-free layers

  static Linear create(ParamStore& ps, const std::string& name, long in, long out,
                       std::mt19937_64& rng, bool with_bias = true) {
    Linear l;
    l.weight = ps.add(name + ".weight", uniform_init(in, out, in, rng));
    if (with_bias) l.bias = ps.add(name + ".bias", uniform_init(1, out, in, rng));
    return l;
  }

  Var operator()(const Var& x) const {
    Var y = ad::matmul(x, weight);
    if (bias.defined()) y = ad::add_rowvec(y, bias);
    return y;
  }
  long in_dim() const { return weight.rows(); }
  long out_dim() const { return weight.cols(); }
};

// Feed-forward stack: `hidden_layers` ReLU hidden layers then a linear output.
struct Ffnn {
  std::vector<Linear> layers;

  static Ffnn create(ParamStore& ps, const std::string& name, long in, long hidden,
                     long out, int hidden_layers, std::mt19937_64& rng) {
    Ffnn f;
    long cur = in;
    for (int i = 0; i < hidden_layers; ++i) {
      f.layers.push_back(Linear::create(ps, name + ".h" + std::to_string(i), cur, hidden, rng));
      cur = hidden;
    }
    f.layers.push_back(Linear::create(ps, name + ".out", cur, out, rng));
    return f;
  }

  Var operator()(const Var& x) const {
    Var h = x;
    for (size_t i = 0; i + 1 < layers.size(); ++i) h = ad::relu(layers[i](h));
    return layers.back()(h);
  }
};

struct Embedding {
  Var table;  // n x dim

  static Embedding create(ParamStore& ps, const std::string& name, long n, long dim,
                          std::mt19937_64& rng) {
    return Embedding{ps.add(name, uniform_init(n, dim, dim, rng))};
  }
  Var operator()(const std::vector<int>& idx) const { return ad::gather_rows(table, idx); }
  long dim() const { return table.cols(); }
};

// Adam with optional linear learning-rate warmup. Parameters are split into
// named groups so decoders and the encoder can use different base rates.
class AdamOptimizer {
 public:
  struct Group {
    std::vector<Var> params;
    double lr = 1e-3;
  };

  AdamOptimizer(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void add_group(const std::vector<Var>& params, double lr) {
    groups_.push_back({params, lr});
    for (auto& p : params) {
      m_.push_back(Matrix::Zero(p.rows(), p.cols()));
      v_.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
  }

  void set_warmup_steps(long steps) { warmup_steps_ = steps; }
  long step_count() const { return step_; }

  void step() {
    ++step_;
    double warm = warmup_steps_ > 0 ? std::min(1.0, (double)step_ / (double)warmup_steps_) : 1.0;
    double bc1 = 1.0 - std::pow(beta1_, (double)step_);
    double bc2 = 1.0 - std::pow(beta2_, (double)step_);
    size_t k = 0;
    for (auto& g : groups_) {
      double lr = g.lr * warm;
      for (auto& p : g.params) {
        Matrix grad = p.grad().size() ? p.grad()
                                      : Matrix::Zero(p.rows(), p.cols());
        m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * grad;
        v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * grad.cwiseProduct(grad);
        Matrix mhat = m_[k] / bc1;
        Matrix vhat = v_[k] / bc2;
        p.value() -= lr * mhat.cwiseQuotient(vhat.cwiseSqrt().array().matrix() +
                                             Matrix::Constant(vhat.rows(), vhat.cols(), eps_));
        ++k;
      }
    }
  }

  void zero_grad() {
    for (auto& g : groups_)
      for (auto& p : g.params) p.zero_grad();
  }

 private:
  double beta1_, beta2_, eps_;
  long warmup_steps_ = 0;
  long step_ = 0;
  std::vector<Group> groups_;
  std::vector<Matrix> m_, v_;
};

}  // namespace temprex::nn
