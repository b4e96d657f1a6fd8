#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "temprex/hgt.hpp"

using namespace temprex;
using ad::Matrix;
using ad::Var;
using Catch::Approx;

namespace {

Matrix randm(long r, long c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Matrix m(r, c);
  for (long i = 0; i < r; ++i)
    for (long j = 0; j < c; ++j) m(i, j) = d(rng);
  return m;
}

// Minimal single-type registry for the homogeneous-reduction check.
std::shared_ptr<GraphTypeRegistry> homogeneous_registry() {
  auto r = std::make_shared<GraphTypeRegistry>();
  r->node_types = {"NODE"};
  r->n_entity_types = 1;
  r->context_type = -1;
  r->window_type = -1;
  r->edge_types = {"NODE|E|NODE"};
  r->edge_meta = {{0, 0}};
  return r;
}

// Two-node-type, two-edge-type registry for heterogeneous tests.
std::shared_ptr<GraphTypeRegistry> small_registry() {
  auto r = std::make_shared<GraphTypeRegistry>();
  r->node_types = {"X", "Y"};
  r->n_entity_types = 2;
  r->context_type = -1;
  r->window_type = -1;
  r->edge_types = {"X|a|Y", "Y|b|X", "X|c|X"};
  r->edge_meta = {{0, 1}, {1, 0}, {0, 0}};
  return r;
}

HeteroGraph make_graph(std::shared_ptr<const GraphTypeRegistry> types,
                       const std::vector<int>& node_types,
                       const std::vector<std::tuple<int, int, int>>& edges) {
  HeteroGraph g;
  g.types = std::move(types);
  for (size_t i = 0; i < node_types.size(); ++i) {
    GraphNode n;
    n.id = "n" + std::to_string(i);
    n.kind = GraphNode::kEntity;
    n.type = node_types[i];
    n.entity_index = (int)i;
    g.add_node(std::move(n));
  }
  for (auto [s, et, t] : edges) g.add_edge(s, et, t);
  return g;
}

}  // namespace

TEST_CASE("attention weights normalize per target and head") {
  auto types = small_registry();
  nn::ParamStore ps;
  std::mt19937_64 rng(1);
  HgtConfig cfg;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.layers = 1;
  cfg.iterations = 1;
  cfg.dropout = 0;
  HgtModule hgt(ps, types, cfg, rng);

  // node 3 (type Y) has two in-neighbors; nodes 0 and 2 have exactly one
  auto g = make_graph(types, {0, 1, 0, 1}, {{0, 0, 3}, {2, 0, 3}, {1, 1, 0}, {0, 2, 2}});
  Var h = Var::constant(randm(4, 8, rng));
  Var attn = hgt.mutual_attention(g, h, 0);
  REQUIRE(attn.rows() == 4);
  REQUIRE(attn.cols() == 2);
  // target 3: edges 0 and 1
  for (int head = 0; head < 2; ++head) {
    CHECK(attn.value()(0, head) + attn.value()(1, head) == Approx(1.0).margin(1e-6));
    CHECK(attn.value()(2, head) == Approx(1.0).margin(1e-6));  // singleton softmax
    CHECK(attn.value()(3, head) == Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("messages follow the per-head linear algebra") {
  auto types = small_registry();
  nn::ParamStore ps;
  std::mt19937_64 rng(2);
  HgtConfig cfg;
  cfg.dim = 4;
  cfg.heads = 2;
  cfg.layers = 1;
  cfg.dropout = 0;
  cfg.proj_bias = false;
  HgtModule hgt(ps, types, cfg, rng);
  auto g = make_graph(types, {0, 1}, {{0, 0, 1}});
  Matrix hv = randm(2, 4, rng);
  Var msg = hgt.message(g, Var::constant(hv), 0);
  REQUIRE(msg.rows() == 1);
  REQUIRE(msg.cols() == 4);
  // independent hand computation: M = h(s) * M_X; heads multiply by Wm
  Matrix M = hv.row(0) * ps.get("hgt.s0.l0.M.X.weight").value();
  Matrix wm = ps.get("hgt.s0.l0.Wm.0").value();
  Eigen::RowVectorXd expect(4);
  expect.segment(0, 2) = M.row(0).segment(0, 2) * wm;
  expect.segment(2, 2) = M.row(0).segment(2, 2) * wm;
  CHECK((msg.value().row(0) - expect).norm() < 1e-12);

  // zero source state with bias-free projections -> zero message
  Var zero_msg = hgt.message(g, Var::constant(Matrix::Zero(2, 4)), 0);
  CHECK(zero_msg.value().norm() == 0.0);
}

TEST_CASE("isolated nodes pass through aggregation unchanged") {
  auto types = small_registry();
  nn::ParamStore ps;
  std::mt19937_64 rng(3);
  HgtConfig cfg;
  cfg.dim = 4;
  cfg.heads = 2;
  cfg.layers = 1;
  cfg.dropout = 0;
  cfg.proj_bias = false;
  HgtModule hgt(ps, types, cfg, rng);
  auto g = make_graph(types, {0, 1, 0}, {{0, 0, 1}});  // node 2 isolated
  Matrix hv = randm(3, 4, rng);
  Var out = hgt.layer_forward(g, Var::constant(hv), 0, false, rng);
  CHECK((out.value().row(2) - hv.row(2)).norm() == 0.0);  // residual identity
  CHECK((out.value().row(0) - hv.row(0)).norm() == 0.0);  // no in-edges either
  CHECK((out.value().row(1) - hv.row(1)).norm() > 0.0);   // target did update
}

TEST_CASE("zero-weight parameters with bias-free heads leave states fixed") {
  auto types = small_registry();
  nn::ParamStore ps;
  std::mt19937_64 rng(4);
  HgtConfig cfg;
  cfg.dim = 4;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.iterations = 2;
  cfg.dropout = 0;
  cfg.proj_bias = false;
  HgtModule hgt(ps, types, cfg, rng);
  for (auto& [name, v] : ps.entries())
    if (name != "hgt.mu") const_cast<Var&>(v).value().setZero();
  auto g = make_graph(types, {0, 1, 0}, {{0, 0, 1}, {2, 0, 1}, {1, 1, 0}});
  Matrix hv = randm(3, 4, rng);
  Var out = hgt.refine(g, Var::constant(hv), false, rng);
  CHECK((out.value() - hv).norm() == 0.0);
}

TEST_CASE("homogeneous reduction matches the dense attention oracle") {
  auto types = homogeneous_registry();
  std::mt19937_64 rng(5);
  for (int n = 2; n <= 6; ++n) {
    for (int d : {4, 8}) {
      nn::ParamStore ps;
      HgtConfig cfg;
      cfg.dim = d;
      cfg.heads = 2;
      cfg.layers = 1;
      cfg.iterations = 1;
      cfg.dropout = 0;
      cfg.proj_bias = false;
      HgtModule hgt(ps, types, cfg, rng);

      // dense digraph including self-loops
      std::vector<int> node_types(n, 0);
      std::vector<std::tuple<int, int, int>> edges;
      std::vector<std::pair<int, int>> dense_edges;
      for (int s = 0; s < n; ++s)
        for (int t = 0; t < n; ++t) {
          edges.push_back({s, 0, t});
          dense_edges.push_back({s, t});
        }
      auto g = make_graph(types, node_types, edges);
      Matrix hv = randm(n, d, rng);
      Var out = hgt.layer_forward(g, Var::constant(hv), 0, false, rng);

      oracles::DenseAttentionOracle oracle;
      oracle.Kw = ps.get("hgt.s0.l0.K.NODE.weight").value();
      oracle.Qw = ps.get("hgt.s0.l0.Q.NODE.weight").value();
      oracle.Mw = ps.get("hgt.s0.l0.M.NODE.weight").value();
      oracle.Gw = ps.get("hgt.s0.l0.G.NODE").value();
      oracle.Wa = ps.get("hgt.s0.l0.Wa.0").value();
      oracle.Wm = ps.get("hgt.s0.l0.Wm.0").value();
      oracle.heads = 2;
      oracle.mu = 1.0;  // mu is all-ones at initialization
      Matrix expect = oracle.layer(hv, dense_edges);
      REQUIRE((out.value() - expect).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
}

TEST_CASE("heterogeneous two-node case matches a direct formula evaluation") {
  auto types = small_registry();
  nn::ParamStore ps;
  std::mt19937_64 rng(6);
  HgtConfig cfg;
  cfg.dim = 4;
  cfg.heads = 2;
  cfg.layers = 1;
  cfg.iterations = 1;
  cfg.dropout = 0;
  cfg.proj_bias = false;
  HgtModule hgt(ps, types, cfg, rng);
  ps.get("hgt.mu").value().setConstant(1.7);  // exercise the prior scaling

  auto g = make_graph(types, {0, 1}, {{0, 0, 1}});
  Matrix hv = randm(2, 4, rng);
  Var out = hgt.layer_forward(g, Var::constant(hv), 0, false, rng);

  // straight-line evaluation of the update rule for the single edge
  Matrix K = hv.row(0) * ps.get("hgt.s0.l0.K.X.weight").value();
  Matrix Q = hv.row(1) * ps.get("hgt.s0.l0.Q.Y.weight").value();
  Matrix M = hv.row(0) * ps.get("hgt.s0.l0.M.X.weight").value();
  Matrix wa = ps.get("hgt.s0.l0.Wa.0").value();
  Matrix wm = ps.get("hgt.s0.l0.Wm.0").value();
  // singleton softmax -> attention 1 per head regardless of the raw score
  Eigen::RowVectorXd msg(4);
  msg.segment(0, 2) = M.row(0).segment(0, 2) * wm;
  msg.segment(2, 2) = M.row(0).segment(2, 2) * wm;
  auto gelu = [](double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); };
  Eigen::RowVectorXd expect =
      (msg.unaryExpr(gelu) * ps.get("hgt.s0.l0.G.Y").value()).row(0) + hv.row(1);
  CHECK((out.value().row(1) - expect).norm() < 1e-12);
  CHECK((out.value().row(0) - hv.row(0)).norm() == 0.0);
}

TEST_CASE("permutation equivariance of refine") {
  auto types = small_registry();
  nn::ParamStore ps;
  std::mt19937_64 rng(7);
  HgtConfig cfg;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.iterations = 2;
  cfg.dropout = 0;
  HgtModule hgt(ps, types, cfg, rng);

  int n = 7;
  std::vector<int> node_types;
  for (int i = 0; i < n; ++i) node_types.push_back((int)(rng() % 2));
  std::vector<std::tuple<int, int, int>> edges;
  for (int e = 0; e < 12; ++e) {
    int s = (int)(rng() % n), t = (int)(rng() % n);
    int st = node_types[s], tt = node_types[t];
    int et = st == 0 && tt == 1 ? 0 : (st == 1 && tt == 0 ? 1 : (st == 0 ? 2 : -1));
    if (et < 0) continue;
    edges.push_back({s, et, t});
  }
  auto g = make_graph(types, node_types, edges);
  Matrix hv = randm(n, 8, rng);
  Var out = hgt.refine(g, Var::constant(hv), false, rng);

  // permute node ids and rerun
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);  // perm[old] = new
  std::vector<int> ptypes(n);
  Matrix phv(n, 8);
  for (int i = 0; i < n; ++i) {
    ptypes[perm[i]] = node_types[i];
    phv.row(perm[i]) = hv.row(i);
  }
  std::vector<std::tuple<int, int, int>> pedges;
  for (auto [s, et, t] : edges) pedges.push_back({perm[s], et, perm[t]});
  auto pg = make_graph(types, ptypes, pedges);
  Var pout = hgt.refine(pg, Var::constant(phv), false, rng);

  for (int i = 0; i < n; ++i)
    REQUIRE((pout.value().row(perm[i]) - out.value().row(i)).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("iterations reapply the shared stack") {
  auto types = small_registry();
  nn::ParamStore ps;
  std::mt19937_64 rng(8);
  HgtConfig cfg;
  cfg.dim = 4;
  cfg.heads = 2;
  cfg.layers = 1;
  cfg.iterations = 1;
  cfg.dropout = 0;
  HgtModule hgt(ps, types, cfg, rng);
  auto g = make_graph(types, {0, 1}, {{0, 0, 1}});
  Matrix hv = randm(2, 4, rng);
  Var once = hgt.refine(g, Var::constant(hv), false, rng);
  Var one_layer = hgt.layer_forward(g, Var::constant(hv), 0, false, rng);
  CHECK((once.value() - one_layer.value()).norm() == 0.0);
}

TEST_CASE("finite differences confirm gradients for every parameter class") {
  auto types = small_registry();
  nn::ParamStore ps;
  std::mt19937_64 rng(9);
  HgtConfig cfg;
  cfg.dim = 4;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.iterations = 2;
  cfg.dropout = 0;
  HgtModule hgt(ps, types, cfg, rng);
  auto g = make_graph(types, {0, 1, 0, 1},
                      {{0, 0, 1}, {2, 0, 1}, {1, 1, 0}, {0, 2, 2}, {3, 1, 2}, {2, 0, 3}});
  Matrix hv = randm(4, 4, rng);
  Matrix target = randm(4, 4, rng);

  std::vector<Var> params;
  for (auto& [name, v] : ps.entries()) params.push_back(v);
  // parameter classes present: K/Q/M (weight+bias), G, Wa, Wm, mu
  bool has_mu = false;
  for (auto& [name, v] : ps.entries()) has_mu |= name == "hgt.mu";
  REQUIRE(has_mu);

  auto loss_fn = [&]() -> Var {
    Var out = hgt.refine(g, Var::constant(hv), false, rng);
    Var diff = ad::add(out, ad::scale(Var::constant(target), -1.0));
    return ad::sum_squares(diff);
  };
  CHECK(gradcheck::max_relative_error(params, loss_fn) <= 1e-4);
}

TEST_CASE("refine stays finite on a 50-node random graph at defaults") {
  auto types = small_registry();
  nn::ParamStore ps;
  std::mt19937_64 rng(10);
  HgtConfig cfg;  // defaults: 2 layers, 2 heads, 2 iterations
  cfg.dim = 16;
  cfg.dropout = 0;
  HgtModule hgt(ps, types, cfg, rng);
  int n = 50;
  std::vector<int> node_types;
  for (int i = 0; i < n; ++i) node_types.push_back((int)(rng() % 2));
  std::vector<std::tuple<int, int, int>> edges;
  for (int e = 0; e < 200; ++e) {
    int s = (int)(rng() % n), t = (int)(rng() % n);
    int st = node_types[s], tt = node_types[t];
    int et = st == 0 && tt == 1 ? 0 : (st == 1 && tt == 0 ? 1 : (st == 0 ? 2 : -1));
    if (et < 0) continue;
    edges.push_back({s, et, t});
  }
  auto g = make_graph(types, node_types, edges);
  Var out = hgt.refine(g, Var::constant(randm(n, 16, rng)), false, rng);
  CHECK(out.value().allFinite());
}

TEST_CASE("combine_residual blends graph states with span embeddings") {
  auto types = small_registry();
  std::mt19937_64 rng(11);
  auto g = make_graph(types, {0, 1, 0}, {});
  Matrix states = randm(3, 4, rng);
  Matrix spans = randm(3, 4, rng);
  Var s = Var::constant(states), e = Var::constant(spans);

  Var zero_coef = combine_residual(e, s, g, 0.0);
  CHECK((zero_coef.value() - states).norm() == 0.0);

  Var zero_graph = combine_residual(e, Var::constant(Matrix::Zero(3, 4)), g, 1.0);
  CHECK((zero_graph.value() - spans).norm() == 0.0);

  Var blended = combine_residual(e, s, g, 1.0);
  CHECK((blended.value() - (states + spans)).norm() < 1e-12);

  CHECK_THROWS_AS(combine_residual(Var::constant(Matrix::Zero(4, 4)), s, g, 1.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(combine_residual(e, s, g, -1.0), std::invalid_argument);
}

TEST_CASE("graphs with unregistered types are rejected") {
  auto types = small_registry();
  nn::ParamStore ps;
  std::mt19937_64 rng(12);
  HgtConfig cfg;
  cfg.dim = 4;
  cfg.heads = 2;
  cfg.layers = 1;
  cfg.iterations = 1;
  HgtModule hgt(ps, types, cfg, rng);
  auto g = make_graph(types, {0, 1}, {{0, 0, 1}});
  g.nodes[0].type = 9;  // corrupt after construction
  CHECK_THROWS_AS(hgt.mutual_attention(g, Var::constant(Matrix::Zero(2, 4)), 0),
                  std::invalid_argument);
}
