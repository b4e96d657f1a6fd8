#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "support/gradcheck.hpp"
#include "temprex/autodiff.hpp"
#include "temprex/nn.hpp"

using namespace temprex;
using ad::Matrix;
using ad::Var;
using Catch::Approx;

namespace {

Matrix randm(long r, long c, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  Matrix m(r, c);
  for (long i = 0; i < r; ++i)
    for (long j = 0; j < c; ++j) m(i, j) = d(rng);
  return m;
}

}  // namespace

TEST_CASE("matmul forward and gradients") {
  std::mt19937_64 rng(1);
  Var a = Var::param(randm(3, 4, rng));
  Var b = Var::param(randm(4, 2, rng));
  CHECK(gradcheck::max_relative_error({a, b}, [&] {
          return ad::sum_squares(ad::matmul(a, b));
        }) < 1e-6);
}

TEST_CASE("elementwise and broadcast ops differentiate") {
  std::mt19937_64 rng(2);
  Var a = Var::param(randm(3, 4, rng));
  Var b = Var::param(randm(3, 4, rng));
  Var bias = Var::param(randm(1, 4, rng));
  Var colv = Var::param(randm(3, 1, rng));
  CHECK(gradcheck::max_relative_error({a, b, bias, colv}, [&] {
          Var x = ad::mul(a, b);
          x = ad::add_rowvec(x, bias);
          x = ad::mul_colvec(x, colv);
          return ad::sum_squares(ad::scale(x, 0.7));
        }) < 1e-6);
}

TEST_CASE("activations differentiate") {
  std::mt19937_64 rng(3);
  Var a = Var::param(randm(4, 5, rng));
  CHECK(gradcheck::max_relative_error({a}, [&] { return ad::sum_squares(ad::relu(a)); },
                                      1e-7) < 1e-4);
  CHECK(gradcheck::max_relative_error({a}, [&] { return ad::sum_squares(ad::gelu(a)); }) < 1e-6);
  CHECK(ad::gelu(Var::constant(Matrix::Zero(1, 1))).value()(0, 0) == 0.0);
}

TEST_CASE("softmax rows sum to one and differentiate") {
  std::mt19937_64 rng(4);
  Var a = Var::param(randm(3, 6, rng));
  Var s = ad::softmax_rows(a);
  for (long i = 0; i < s.rows(); ++i) CHECK(s.value().row(i).sum() == Approx(1.0).epsilon(1e-9));
  Var w = Var::constant(randm(3, 6, rng));
  CHECK(gradcheck::max_relative_error({a}, [&] {
          return ad::sum_squares(ad::mul(ad::softmax_rows(a), w));
        }) < 1e-6);
}

TEST_CASE("cross entropy reaches zero on perfect one-hot logits") {
  Matrix logits(2, 3);
  logits << 100, 0, 0, 0, 0, 100;
  Var v = Var::constant(logits);
  CHECK(ad::cross_entropy_mean(v, {0, 2}).value()(0, 0) == Approx(0.0).margin(1e-9));
}

TEST_CASE("cross entropy differentiates") {
  std::mt19937_64 rng(5);
  Var a = Var::param(randm(4, 3, rng));
  CHECK(gradcheck::max_relative_error({a}, [&] {
          return ad::cross_entropy_mean(a, {0, 2, 1, 1});
        }) < 1e-6);
}

TEST_CASE("gather, scatter and concat differentiate") {
  std::mt19937_64 rng(6);
  Var a = Var::param(randm(5, 3, rng));
  Var b = Var::param(randm(2, 3, rng));
  CHECK(gradcheck::max_relative_error({a, b}, [&] {
          Var g = ad::gather_rows(a, {0, 2, 2, 4});
          Var s = ad::scatter_sum_rows(g, {1, 0, 1, 1}, 2);
          return ad::sum_squares(ad::add(s, b));
        }) < 1e-6);
  CHECK(gradcheck::max_relative_error({a, b}, [&] {
          return ad::sum_squares(ad::concat_rows({a, b}));
        }) < 1e-6);
  CHECK(gradcheck::max_relative_error({a}, [&] {
          Var l = ad::gather_rows(a, {0, 1});
          Var r = ad::gather_rows(a, {3, 4});
          return ad::sum_squares(ad::concat_cols({l, r}));
        }) < 1e-6);
}

TEST_CASE("segment softmax normalizes per segment and column") {
  std::mt19937_64 rng(7);
  Var a = Var::param(randm(6, 2, rng));
  std::vector<int> seg = {0, 1, 0, 1, 1, 0};
  Var s = ad::segment_softmax_cols(a, seg, 2);
  for (int g = 0; g < 2; ++g) {
    for (long c = 0; c < 2; ++c) {
      double sum = 0;
      for (size_t i = 0; i < seg.size(); ++i)
        if (seg[i] == g) sum += s.value()((long)i, c);
      CHECK(sum == Approx(1.0).epsilon(1e-9));
    }
  }
  Var w = Var::constant(randm(6, 2, rng));
  CHECK(gradcheck::max_relative_error({a}, [&] {
          return ad::sum_squares(ad::mul(ad::segment_softmax_cols(a, seg, 2), w));
        }) < 1e-6);
}

TEST_CASE("rows_max_sets pools correctly and routes gradients") {
  Matrix m(4, 2);
  m << 1, 8, 5, 2, 3, 9, 7, 0;
  Var a = Var::param(m);
  Var pooled = ad::rows_max_sets(a, {{0, 1, 2}, {}, {3}});
  CHECK(pooled.value()(0, 0) == 5);
  CHECK(pooled.value()(0, 1) == 9);
  CHECK(pooled.value()(1, 0) == 0);  // empty set pools to zero
  CHECK(pooled.value()(2, 0) == 7);
  std::mt19937_64 rng(8);
  Var w = Var::constant(randm(3, 2, rng));
  CHECK(gradcheck::max_relative_error({a}, [&] {
          return ad::sum_squares(ad::mul(ad::rows_max_sets(a, {{0, 1, 2}, {}, {3}}), w));
        }) < 1e-6);
}

TEST_CASE("block_colscale scales head blocks") {
  std::mt19937_64 rng(9);
  Var m = Var::param(randm(3, 6, rng));
  Var s = Var::param(randm(3, 2, rng));
  Var out = ad::block_colscale(m, s, 2);
  CHECK(out.value()(1, 0) == Approx(m.value()(1, 0) * s.value()(1, 0)));
  CHECK(out.value()(1, 4) == Approx(m.value()(1, 4) * s.value()(1, 1)));
  CHECK(gradcheck::max_relative_error({m, s}, [&] {
          return ad::sum_squares(ad::block_colscale(m, s, 2));
        }) < 1e-6);
}

TEST_CASE("gradients accumulate across uses of the same parameter") {
  Var a = Var::param(Matrix::Constant(1, 1, 2.0));
  Var y = ad::mul(a, a);  // y = a^2, dy/da = 2a = 4
  ad::backward(y);
  CHECK(a.grad()(0, 0) == Approx(4.0));
}

TEST_CASE("Adam with warmup takes decreasing-then-full steps") {
  Var a = Var::param(Matrix::Constant(1, 1, 1.0));
  nn::AdamOptimizer opt;
  opt.add_group({a}, 0.1);
  opt.set_warmup_steps(10);
  Var l = ad::sum_squares(a);
  ad::backward(l);
  double before = a.value()(0, 0);
  opt.step();
  // warmup scales the first step to 0.1 * 1/10 of the Adam step (~= lr)
  CHECK(std::abs(before - a.value()(0, 0)) < 0.02);
  CHECK(a.value()(0, 0) < before);
}

TEST_CASE("Ffnn trains to fit a tiny target with Adam") {
  std::mt19937_64 rng(10);
  nn::ParamStore ps;
  nn::Ffnn f = nn::Ffnn::create(ps, "f", 3, 16, 2, 1, rng);
  Matrix x = randm(8, 3, rng);
  std::vector<int> y = {0, 1, 1, 0, 1, 0, 0, 1};
  std::vector<Var> params;
  for (auto& [name, v] : ps.entries()) params.push_back(v);
  nn::AdamOptimizer opt;
  opt.add_group(params, 1e-2);
  double last = 1e9;
  for (int step = 0; step < 300; ++step) {
    ps.zero_grad();
    Var loss = ad::cross_entropy_mean(f(Var::constant(x)), y);
    ad::backward(loss);
    opt.step();
    last = loss.value()(0, 0);
  }
  CHECK(last < 0.01);
}
