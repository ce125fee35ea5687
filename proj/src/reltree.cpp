#include "vmrn/reltree.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace vmrn::tree {

const char* label_name(RelationLabel r) {
  switch (r) {
    case RelationLabel::kParentOf: return "parent-of";
    case RelationLabel::kChildOf: return "child-of";
    default: return "no-rel";
  }
}

bool ManipulationTree::has_edge(int parent, int child) const {
  return std::any_of(edges.begin(), edges.end(),
                     [&](const Edge& e) { return e.parent == parent && e.child == child; });
}

std::vector<int> ManipulationTree::children_of(int node) const {
  std::vector<int> out;
  for (const Edge& e : edges)
    if (e.parent == node) out.push_back(e.child);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<int> ManipulationTree::parents_of(int node) const {
  std::vector<int> out;
  for (const Edge& e : edges)
    if (e.child == node) out.push_back(e.parent);
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

void check_prob3(const Prob3& p, const char* what) {
  double sum = 0.0;
  for (double v : p) {
    if (!std::isfinite(v) || v < 0.0) throw InvalidInput(std::string(what) + ": entries must be finite and non-negative");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw InvalidInput(std::string(what) + ": probabilities sum to " + std::to_string(sum) + ", expected 1");
  }
}

// True when `to` is reachable from `from` along directed edges.
bool reachable(const std::vector<Edge>& edges, int from, int to) {
  std::vector<int> stack{from};
  std::set<int> seen{from};
  while (!stack.empty()) {
    int cur = stack.back();
    stack.pop_back();
    if (cur == to) return true;
    for (const Edge& e : edges) {
      if (e.parent == cur && !seen.count(e.child)) {
        seen.insert(e.child);
        stack.push_back(e.child);
      }
    }
  }
  return false;
}

}  // namespace

ReconcileResult reconcile(const Prob3& p_ij, const Prob3& p_ji) {
  check_prob3(p_ij, "reconcile: p_ij");
  check_prob3(p_ji, "reconcile: p_ji");
  // Swap parent/child components of the reverse prediction, then average.
  const Prob3 s{0.5 * (p_ij[0] + p_ji[1]), 0.5 * (p_ij[1] + p_ji[0]), 0.5 * (p_ij[2] + p_ji[2])};
  // Tie preference: NO_REL, then PARENT_OF, then CHILD_OF.
  int best = 2;
  if (s[0] > s[best]) best = 0;
  if (s[1] > s[best]) best = 1;
  return ReconcileResult{label_from_index(best), s[best]};
}

ManipulationTree build_tree(const std::vector<int>& object_ids, const PairwiseScores& scores) {
  ManipulationTree t;
  t.nodes = object_ids;
  std::sort(t.nodes.begin(), t.nodes.end());
  t.nodes.erase(std::unique(t.nodes.begin(), t.nodes.end()), t.nodes.end());

  for (size_t a = 0; a < t.nodes.size(); ++a) {
    for (size_t b = a + 1; b < t.nodes.size(); ++b) {
      const int i = t.nodes[a], j = t.nodes[b];
      const auto fwd = scores.find({i, j});
      const auto rev = scores.find({j, i});
      if (fwd == scores.end() || rev == scores.end()) {
        throw InvalidInput("build_tree: scores missing for pair (" + std::to_string(i) + ", " +
                           std::to_string(j) + ")");
      }
      const ReconcileResult r = reconcile(fwd->second, rev->second);
      if (r.label == RelationLabel::kParentOf) {
        t.edges.push_back(Edge{i, j, r.confidence});
      } else if (r.label == RelationLabel::kChildOf) {
        t.edges.push_back(Edge{j, i, r.confidence});
      }
    }
  }

  // Cycle repair: drop the weakest edge lying on any cycle until acyclic.
  for (;;) {
    int victim = -1;
    for (size_t k = 0; k < t.edges.size(); ++k) {
      const Edge& e = t.edges[k];
      if (!reachable(t.edges, e.child, e.parent)) continue;  // not on a cycle
      if (victim < 0) {
        victim = static_cast<int>(k);
        continue;
      }
      const Edge& v = t.edges[victim];
      if (e.confidence < v.confidence ||
          (e.confidence == v.confidence &&
           std::pair{e.parent, e.child} < std::pair{v.parent, v.child})) {
        victim = static_cast<int>(k);
      }
    }
    if (victim < 0) break;
    t.edges.erase(t.edges.begin() + victim);
  }
  return t;
}

std::vector<int> leaf_nodes(const ManipulationTree& t) {
  std::vector<int> out;
  for (int n : t.nodes) {
    bool has_child = std::any_of(t.edges.begin(), t.edges.end(),
                                 [&](const Edge& e) { return e.parent == n; });
    if (!has_child) out.push_back(n);
  }
  std::sort(out.begin(), out.end());
  return out;
}

PairwiseLabels tree_to_labels(const ManipulationTree& t) {
  PairwiseLabels labels;
  for (int i : t.nodes) {
    for (int j : t.nodes) {
      if (i == j) continue;
      RelationLabel r = RelationLabel::kNoRel;
      if (t.has_edge(i, j)) r = RelationLabel::kParentOf;
      else if (t.has_edge(j, i)) r = RelationLabel::kChildOf;
      labels[{i, j}] = r;
    }
  }
  return labels;
}

std::vector<Violation> validate(const ManipulationTree& t) {
  std::vector<Violation> out;
  const std::set<int> nodes(t.nodes.begin(), t.nodes.end());

  for (const Edge& e : t.edges) {
    if (e.parent == e.child) {
      out.push_back({Violation::Kind::kSelfEdge, "self-edge at node " + std::to_string(e.parent)});
    }
    for (int endpoint : {e.parent, e.child}) {
      if (!nodes.count(endpoint)) {
        out.push_back({Violation::Kind::kDanglingId,
                       "edge " + std::to_string(e.parent) + "->" + std::to_string(e.child) +
                           " references unknown node " + std::to_string(endpoint)});
      }
    }
  }

  // Kahn's algorithm; leftover in-degree means a cycle.
  std::map<int, int> indeg;
  for (int n : t.nodes) indeg[n] = 0;
  for (const Edge& e : t.edges)
    if (e.parent != e.child && nodes.count(e.parent) && nodes.count(e.child)) indeg[e.child]++;
  std::vector<int> stack;
  for (auto& [n, d] : indeg)
    if (d == 0) stack.push_back(n);
  size_t removed = 0;
  while (!stack.empty()) {
    int n = stack.back();
    stack.pop_back();
    ++removed;
    for (const Edge& e : t.edges) {
      if (e.parent != n || e.parent == e.child || !nodes.count(e.child)) continue;
      if (--indeg[e.child] == 0) stack.push_back(e.child);
    }
  }
  if (removed < indeg.size()) {
    std::ostringstream os;
    os << "cycle through nodes {";
    bool first = true;
    for (auto& [n, d] : indeg) {
      if (d > 0) {
        if (!first) os << ", ";
        os << n;
        first = false;
      }
    }
    os << "}";
    out.push_back({Violation::Kind::kCycle, os.str()});
  }
  return out;
}

std::string to_dot(const ManipulationTree& t, const std::map<int, std::string>& names) {
  std::ostringstream os;
  os << "digraph manipulation_tree {\n";
  for (int n : t.nodes) {
    auto it = names.find(n);
    const std::string label = it == names.end() ? std::to_string(n) : it->second;
    os << "  n" << n << " [label=\"" << label << "\"];\n";
  }
  for (const Edge& e : t.edges) {
    os << "  n" << e.parent << " -> n" << e.child << ";\n";
  }
  os << "}\n";
  return os.str();
}

}  // namespace vmrn::tree
