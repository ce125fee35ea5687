#pragma once

#include <array>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vmrn/error.hpp"

namespace vmrn::tree {

/// Manipulation relationship between an ordered object pair (O_i, O_j).
/// kParentOf means O_i supports O_j, so O_j must be grasped first.
enum class RelationLabel : int {
  kParentOf = 1,
  kChildOf = 2,
  kNoRel = 3,
};

/// 3-way probability vector over {parent-of, child-of, no-relationship},
/// indexed by label_index().
using Prob3 = std::array<double, 3>;

inline int label_index(RelationLabel r) { return static_cast<int>(r) - 1; }

inline RelationLabel label_from_index(int idx) {
  if (idx < 0 || idx > 2) throw InvalidInput("relation label index out of range: " + std::to_string(idx));
  return static_cast<RelationLabel>(idx + 1);
}

/// The label of the swapped pair: PARENT_OF <-> CHILD_OF, NO_REL fixed.
inline RelationLabel inverse_label(RelationLabel r) {
  switch (r) {
    case RelationLabel::kParentOf: return RelationLabel::kChildOf;
    case RelationLabel::kChildOf: return RelationLabel::kParentOf;
    default: return RelationLabel::kNoRel;
  }
}

const char* label_name(RelationLabel r);

/// Directed parent -> child edge. The confidence is carried along so cycle
/// repair can drop the weakest edge.
struct Edge {
  int parent = 0;
  int child = 0;
  double confidence = 1.0;

  friend bool operator==(const Edge& a, const Edge& b) {
    return a.parent == b.parent && a.child == b.child;
  }
};

/// Manipulation relationship tree: object-id nodes plus directed
/// parent -> child edges. A node may have several parents (two objects can
/// share a child), but the edge set must stay acyclic and self-edge free.
struct ManipulationTree {
  std::vector<int> nodes;
  std::vector<Edge> edges;

  bool has_edge(int parent, int child) const;
  std::vector<int> children_of(int node) const;
  std::vector<int> parents_of(int node) const;
};

/// Scores for every ordered pair (i, j), i != j, as 3-way probabilities.
using PairwiseScores = std::map<std::pair<int, int>, Prob3>;

/// Labels for every ordered pair, derived from a tree or from predictions.
using PairwiseLabels = std::map<std::pair<int, int>, RelationLabel>;

struct ReconcileResult {
  RelationLabel label = RelationLabel::kNoRel;
  double confidence = 0.0;
};

/// Fuses the two directional predictions for one pair: the swapped p_ji is
/// averaged with p_ij, the argmax wins, and ties break toward NO_REL first,
/// then PARENT_OF. Inputs must be probability vectors (sum 1 +- 1e-6).
ReconcileResult reconcile(const Prob3& p_ij, const Prob3& p_ji);

/// Builds a tree from reconciled pairwise scores. Directed cycles are
/// repaired by repeatedly deleting the lowest-confidence edge that lies on
/// any cycle (ties broken by (parent, child) order) until none remain.
ManipulationTree build_tree(const std::vector<int>& object_ids, const PairwiseScores& scores);

/// Nodes with no children: the objects that may be grasped right now.
std::vector<int> leaf_nodes(const ManipulationTree& t);

/// Ordered-pair labels implied by the tree. Only direct edges count as
/// relations; ancestors beyond one edge are NO_REL.
PairwiseLabels tree_to_labels(const ManipulationTree& t);

struct Violation {
  enum class Kind { kSelfEdge, kCycle, kDanglingId };
  Kind kind;
  std::string detail;
};

/// Structural check; violations are returned as data, never thrown.
std::vector<Violation> validate(const ManipulationTree& t);

/// DOT text with one node per object (labeled by class name when provided)
/// and one arrow per parent -> child edge.
std::string to_dot(const ManipulationTree& t, const std::map<int, std::string>& names = {});

}  // namespace vmrn::tree
