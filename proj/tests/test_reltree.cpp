#include <doctest.h>

#include <algorithm>

#include "oracles.hpp"
#include "vmrn/reltree.hpp"
#include "vmrn/rng.hpp"

using namespace vmrn;
using namespace vmrn::tree;

namespace {

Prob3 random_prob3(Rng& rng) {
  Prob3 p{rng.uniform(0.01, 1.0), rng.uniform(0.01, 1.0), rng.uniform(0.01, 1.0)};
  const double sum = p[0] + p[1] + p[2];
  for (double& v : p) v /= sum;
  return p;
}

PairwiseScores random_scores(Rng& rng, int n) {
  PairwiseScores s;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) s[{i, j}] = random_prob3(rng);
  return s;
}

// Certainty scores realizing a given edge set over nodes 0..n-1.
PairwiseScores scores_for_edges(int n, const std::vector<Edge>& edges) {
  ManipulationTree t;
  for (int i = 0; i < n; ++i) t.nodes.push_back(i);
  t.edges = edges;
  PairwiseScores s;
  for (const auto& [pair, label] : tree_to_labels(t)) {
    Prob3 p{0, 0, 0};
    p[label_index(label)] = 1.0;
    s[pair] = p;
  }
  return s;
}

bool same_edges(const ManipulationTree& a, const ManipulationTree& b) {
  auto key = [](const Edge& e) { return std::pair{e.parent, e.child}; };
  std::vector<std::pair<int, int>> ea, eb;
  for (const auto& e : a.edges) ea.push_back(key(e));
  for (const auto& e : b.edges) eb.push_back(key(e));
  std::sort(ea.begin(), ea.end());
  std::sort(eb.begin(), eb.end());
  return ea == eb;
}

}  // namespace

TEST_SUITE_BEGIN("reltree");

TEST_CASE("reconcile: consistent directions") {
  const auto r = reconcile(Prob3{1, 0, 0}, Prob3{0, 1, 0});
  CHECK(r.label == RelationLabel::kParentOf);
  CHECK(r.confidence == doctest::Approx(1.0));
}

TEST_CASE("reconcile: uniform tie goes to NO_REL") {
  const Prob3 u{1.0 / 3, 1.0 / 3, 1.0 / 3};
  const auto r = reconcile(u, u);
  CHECK(r.label == RelationLabel::kNoRel);
  CHECK(r.confidence == doctest::Approx(1.0 / 3));
}

TEST_CASE("reconcile: disagreeing directions average out") {
  // s = (0.4, 0.2, 0.4) -> NO_REL at 0.4
  const auto r = reconcile(Prob3{0.6, 0.2, 0.2}, Prob3{0.2, 0.2, 0.6});
  CHECK(r.label == RelationLabel::kNoRel);
  CHECK(r.confidence == doctest::Approx(0.4));
}

TEST_CASE("reconcile rejects non-normalized input") {
  CHECK_THROWS_AS(reconcile(Prob3{0.5, 0.5, 0.5}, Prob3{1, 0, 0}), InvalidInput);
  CHECK_THROWS_AS(reconcile(Prob3{1, 0, 0}, Prob3{-0.2, 0.6, 0.6}), InvalidInput);
}

TEST_CASE("reconcile of swapped arguments gives the inverse label") {
  Rng rng(3);
  for (int i = 0; i < 2000; ++i) {
    const Prob3 p = random_prob3(rng), q = random_prob3(rng);
    const auto fwd = reconcile(p, q);
    const auto rev = reconcile(q, p);
    CHECK(rev.label == inverse_label(fwd.label));
    CHECK(rev.confidence == doctest::Approx(fwd.confidence));
  }
}

TEST_CASE("build_tree reproduces the stacked-desk scene") {
  // remote on book carries a pen; apple and stapler also on the book
  enum { kBook, kRemote, kPen, kApple, kStapler };
  const std::vector<Edge> want{{kBook, kRemote}, {kRemote, kPen}, {kBook, kApple}, {kBook, kStapler}};
  const auto scores = scores_for_edges(5, want);
  const auto t = build_tree({0, 1, 2, 3, 4}, scores);
  REQUIRE(t.edges.size() == 4);
  for (const auto& e : want) CHECK(t.has_edge(e.parent, e.child));
  CHECK(leaf_nodes(t) == std::vector<int>{kPen, kApple, kStapler});
}

TEST_CASE("build_tree on one object") {
  const auto t = build_tree({42}, {});
  CHECK(t.nodes == std::vector<int>{42});
  CHECK(t.edges.empty());
  CHECK(leaf_nodes(t) == std::vector<int>{42});
}

TEST_CASE("build_tree breaks a 3-cycle at the weakest edge") {
  // a->b (0.9), b->c (0.8), c->a (0.7): c->a goes
  PairwiseScores s;
  auto directed = [&](int i, int j, double conf) {
    s[{i, j}] = Prob3{conf, 0.0, 1.0 - conf};
    s[{j, i}] = Prob3{0.0, conf, 1.0 - conf};
  };
  directed(0, 1, 0.9);
  directed(1, 2, 0.8);
  directed(2, 0, 0.7);
  const auto t = build_tree({0, 1, 2}, s);
  CHECK(t.has_edge(0, 1));
  CHECK(t.has_edge(1, 2));
  CHECK_FALSE(t.has_edge(2, 0));
  CHECK(validate(t).empty());
}

TEST_CASE("build_tree requires complete scores") {
  PairwiseScores s;
  s[{0, 1}] = Prob3{1, 0, 0};
  CHECK_THROWS_AS(build_tree({0, 1}, s), InvalidInput);
}

TEST_CASE("build_tree matches the brute-force reference on random scores") {
  Rng rng(17);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_int(4));  // up to 5 nodes
    std::vector<int> ids(n);
    for (int i = 0; i < n; ++i) ids[i] = i;
    const auto scores = random_scores(rng, n);
    const auto got = build_tree(ids, scores);
    const auto want = test::oracle_build_tree(ids, scores);
    CHECK(same_edges(got, want));
    CHECK(test::oracle_is_acyclic(got));
    CHECK(validate(got).empty());
  }
}

TEST_CASE("leaf_nodes of an edgeless tree is every node") {
  ManipulationTree t;
  t.nodes = {1, 2, 3, 4};
  CHECK(leaf_nodes(t) == t.nodes);
}

TEST_CASE("leaf_nodes of a chain is the last node") {
  ManipulationTree t;
  t.nodes = {0, 1, 2};
  t.edges = {{0, 1}, {1, 2}};
  CHECK(leaf_nodes(t) == std::vector<int>{2});
}

TEST_CASE("leaf_nodes is nonempty for random acyclic trees") {
  Rng rng(23);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform_int(6));
    std::vector<int> ids(n);
    for (int i = 0; i < n; ++i) ids[i] = i;
    const auto t = build_tree(ids, random_scores(rng, n));
    CHECK_FALSE(leaf_nodes(t).empty());
  }
}

TEST_CASE("tree_to_labels: direct edges only") {
  ManipulationTree t;
  t.nodes = {0, 1, 2};
  t.edges = {{0, 1}, {1, 2}};  // chain a->b->c
  const auto labels = tree_to_labels(t);
  CHECK(labels.at({0, 1}) == RelationLabel::kParentOf);
  CHECK(labels.at({1, 0}) == RelationLabel::kChildOf);
  CHECK(labels.at({0, 2}) == RelationLabel::kNoRel);  // grandparent is not a relation
  CHECK(labels.at({2, 0}) == RelationLabel::kNoRel);
}

TEST_CASE("tree_to_labels of independent objects is all NO_REL") {
  ManipulationTree t;
  t.nodes = {0, 1, 2, 3};
  const auto labels = tree_to_labels(t);
  CHECK(labels.size() == 12);
  for (const auto& [pair, label] : labels) CHECK(label == RelationLabel::kNoRel);
}

TEST_CASE("tree_to_labels then build_tree is the identity on certainty scores") {
  Rng rng(29);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_int(4));
    std::vector<int> ids(n);
    for (int i = 0; i < n; ++i) ids[i] = i;
    // random valid tree: each node may hang under one earlier node
    ManipulationTree t;
    t.nodes = ids;
    for (int i = 1; i < n; ++i) {
      if (rng.bernoulli(0.6)) t.edges.push_back({static_cast<int>(rng.uniform_int(i)), i, 1.0});
    }
    const auto rebuilt = build_tree(ids, scores_for_edges(n, t.edges));
    CHECK(same_edges(rebuilt, t));
  }
}

TEST_CASE("validate flags self-edges") {
  ManipulationTree t;
  t.nodes = {0};
  t.edges = {{0, 0}};
  const auto v = validate(t);
  REQUIRE(v.size() == 1);
  CHECK(v[0].kind == Violation::Kind::kSelfEdge);
}

TEST_CASE("validate flags 2-cycles") {
  ManipulationTree t;
  t.nodes = {0, 1};
  t.edges = {{0, 1}, {1, 0}};
  const auto v = validate(t);
  REQUIRE(v.size() == 1);
  CHECK(v[0].kind == Violation::Kind::kCycle);
}

TEST_CASE("validate flags dangling ids") {
  ManipulationTree t;
  t.nodes = {0, 1};
  t.edges = {{0, 7}};
  const auto v = validate(t);
  REQUIRE(v.size() == 1);
  CHECK(v[0].kind == Violation::Kind::kDanglingId);
}

TEST_CASE("validate accepts shared children") {
  // two supports under one object is legal
  ManipulationTree t;
  t.nodes = {0, 1, 2};
  t.edges = {{0, 2}, {1, 2}};
  CHECK(validate(t).empty());
}

TEST_CASE("to_dot lists nodes and edges") {
  ManipulationTree t;
  t.nodes = {0, 1};
  t.edges = {{0, 1}};
  const auto dot = to_dot(t, {{0, "book"}, {1, "pen"}});
  CHECK(dot.find("n0 [label=\"book\"]") != std::string::npos);
  CHECK(dot.find("n1 [label=\"pen\"]") != std::string::npos);
  CHECK(dot.find("n0 -> n1;") != std::string::npos);
}

TEST_SUITE_END();
