#pragma once

// Perfect binary description trees and problem instances.
//
// A depth-L tree has nodes (k,i), k=1..L, i=1..2^{k-1}; node (k,i) covers the
// description subset S_{k,i}, the children of (k,i) are (k+1,2i-1) and
// (k+1,2i), and the leaves k=L are singletons. An instance attaches the
// source covariance and one distortion constraint matrix per node. Trees
// given as a general laminar constraint family are padded to this shape with
// dummy descriptions and redundant constraints.

#include "mdtree/psd.hpp"

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

namespace mdtree {

struct TreeIndex {
  int k = 1;  // level, 1-based; root is (1,1)
  int i = 1;  // position within the level, 1-based

  friend bool operator==(const TreeIndex&, const TreeIndex&) = default;
};

inline std::string to_string(const TreeIndex& n) {
  return "(" + std::to_string(n.k) + "," + std::to_string(n.i) + ")";
}

// Flat storage offset for node (k,i): level-major, 2^{k-1}-1 + (i-1).
inline int node_offset(const TreeIndex& n) {
  return (1 << (n.k - 1)) - 1 + (n.i - 1);
}

inline int node_count(int levels) { return (1 << levels) - 1; }

inline int level_width(int k) { return 1 << (k - 1); }

inline TreeIndex left_child(const TreeIndex& n) { return {n.k + 1, 2 * n.i - 1}; }
inline TreeIndex right_child(const TreeIndex& n) { return {n.k + 1, 2 * n.i}; }
inline TreeIndex parent(const TreeIndex& n) { return {n.k - 1, (n.i + 1) / 2}; }

// Descriptions covered by node (k,i) in a depth-L tree:
// { j : 2^L (i-1) / 2^k < j <= 2^L i / 2^k }, i.e. a block of 2^{L-k}
// consecutive indices out of 1..2^{L-1}.
inline std::vector<int> subset(const TreeIndex& n, int L) {
  const int lo = (n.i - 1) << (L - n.k);
  const int hi = n.i << (L - n.k);
  std::vector<int> s;
  s.reserve(hi - lo);
  for (int j = lo + 1; j <= hi; ++j) s.push_back(j);
  return s;
}

// Deepest common ancestor of two leaves (L,a) and (L,b), a != b.
inline TreeIndex leaf_lca(int a, int b, int L) {
  int ia = a, ib = b;
  for (int k = L; k > 1; --k) {
    if (ia == ib) return {k, ia};
    ia = (ia + 1) / 2;
    ib = (ib + 1) / 2;
  }
  return {1, 1};
}

// A source covariance plus one distortion constraint per tree node, stored
// level-major (see node_offset).
struct ProblemInstance {
  int m = 1;
  int L = 2;
  SymMatrix sigma_x = SymMatrix::Identity(1);
  std::vector<SymMatrix> distortions;

  const SymMatrix& distortion(const TreeIndex& n) const {
    return distortions.at(node_offset(n));
  }
  int num_descriptions() const { return 1 << (L - 1); }
};

// One validation finding; validate() reports all of them instead of stopping
// at the first.
struct Violation {
  std::string where;
  std::string what;
};

inline std::vector<Violation> validate(const ProblemInstance& inst,
                                       const Tolerance& tol = {}) {
  std::vector<Violation> out;
  if (inst.m < 1) out.push_back({"m", "source dimension must be >= 1"});
  if (inst.L < 2) out.push_back({"L", "tree depth must be >= 2"});
  if (inst.sigma_x.dim() != inst.m) {
    out.push_back({"sigma_x", "dimension " + std::to_string(inst.sigma_x.dim()) +
                                  " does not match m=" + std::to_string(inst.m)});
    return out;  // downstream checks would cascade
  }
  if (min_eigenvalue(inst.sigma_x) <= psd_threshold(inst.sigma_x, tol)) {
    out.push_back({"sigma_x", "source covariance must be positive definite"});
  }
  if (inst.L < 2) return out;
  const int want = node_count(inst.L);
  if (static_cast<int>(inst.distortions.size()) != want) {
    out.push_back({"distortions",
                   "expected " + std::to_string(want) + " node matrices, got " +
                       std::to_string(inst.distortions.size())});
    return out;
  }
  for (int k = 1; k <= inst.L; ++k) {
    for (int i = 1; i <= level_width(k); ++i) {
      const TreeIndex n{k, i};
      const SymMatrix& d = inst.distortion(n);
      if (d.dim() != inst.m) {
        out.push_back({to_string(n), "distortion dimension mismatch"});
        continue;
      }
      if (min_eigenvalue(d) <= psd_threshold(d, tol)) {
        out.push_back({to_string(n), "distortion must be positive definite"});
      }
      if (!is_loewner_leq(d, inst.sigma_x, tol)) {
        out.push_back(
            {to_string(n),
             "distortion must not exceed the source covariance (Loewner order)"});
      }
    }
  }
  return out;
}

// True when every node satisfies 0 < D < sigma_x strictly, with margin above
// the PSD tolerance. Instances that fail this need epsilon_shrink before the
// slack-coordinate machinery applies.
inline bool is_strictly_interior(const ProblemInstance& inst,
                                 const Tolerance& tol = {}) {
  for (const SymMatrix& d : inst.distortions) {
    if (d.dim() != inst.sigma_x.dim()) return false;
    if (min_eigenvalue(d) <= psd_threshold(d, tol)) return false;
    const SymMatrix gap = inst.sigma_x - d;
    if (min_eigenvalue(gap) <= psd_threshold(inst.sigma_x, tol)) return false;
  }
  return true;
}

// Tighten every distortion constraint to D - eps*I. Throws eps_too_large when
// any shrunk matrix stops being positive definite.
inline ProblemInstance epsilon_shrink(const ProblemInstance& inst, double eps) {
  if (!(eps >= 0.0) || !std::isfinite(eps)) {
    throw error(errc::invalid_argument, "epsilon_shrink: eps must be finite and >= 0");
  }
  ProblemInstance out = inst;
  const Eigen::MatrixXd eye =
      eps * Eigen::MatrixXd::Identity(inst.m, inst.m);
  for (std::size_t t = 0; t < out.distortions.size(); ++t) {
    SymMatrix shrunk(out.distortions[t].mat() - eye);
    if (min_eigenvalue(shrunk) <= 0.0) {
      throw error(errc::eps_too_large,
                  "epsilon_shrink: node offset " + std::to_string(t) +
                      " loses positive definiteness at eps=" + std::to_string(eps));
    }
    out.distortions[t] = shrunk;
  }
  return out;
}

// ---------------------------------------------------------------------------
// General (laminar) constraint families and padding.

struct GeneralConstraint {
  std::vector<int> subset;  // description indices, 1-based
  SymMatrix d = SymMatrix::Identity(1);
};

struct GeneralTreeSpec {
  int m = 1;
  int M = 1;  // number of descriptions
  SymMatrix sigma_x = SymMatrix::Identity(1);
  std::vector<GeneralConstraint> constraints;
};

struct PaddingResult {
  ProblemInstance instance;
  // relabel[j-1] is the padded description index of original description j;
  // padded indices not in this list belong to dummy descriptions.
  std::vector<int> relabel;
  int dummy_count = 0;
};

namespace detail {

struct BinNode {
  std::vector<int> members;  // original description indices, sorted
  int constraint_id = -1;    // index into the constraint list, -1 if none
  std::unique_ptr<BinNode> left, right;
  bool is_leaf() const { return !left; }
};

inline std::unique_ptr<BinNode> join(std::unique_ptr<BinNode> a,
                                     std::unique_ptr<BinNode> b) {
  auto n = std::make_unique<BinNode>();
  n->members.resize(a->members.size() + b->members.size());
  std::merge(a->members.begin(), a->members.end(), b->members.begin(),
             b->members.end(), n->members.begin());
  n->left = std::move(a);
  n->right = std::move(b);
  return n;
}

// Pair adjacent units in rounds so the subtree stays shallow.
inline std::unique_ptr<BinNode> reduce_units(
    std::vector<std::unique_ptr<BinNode>> units) {
  while (units.size() > 1) {
    std::vector<std::unique_ptr<BinNode>> next;
    for (std::size_t t = 0; t + 1 < units.size(); t += 2) {
      next.push_back(join(std::move(units[t]), std::move(units[t + 1])));
    }
    if (units.size() % 2 == 1) next.push_back(std::move(units.back()));
    units = std::move(next);
  }
  return std::move(units.front());
}

inline int max_leaf_depth(const BinNode& n) {
  if (n.is_leaf()) return 0;
  return 1 + std::max(max_leaf_depth(*n.left), max_leaf_depth(*n.right));
}

}  // namespace detail

// Embed a laminar constraint family into a perfect binary tree. Every
// constrained subset becomes the real-description set of exactly one node;
// all other nodes (including dummy leaves appended to even out depth and
// reach a power-of-two description count) receive the always-satisfied
// constraint D = sigma_x.
//
// Throws not_a_tree when two subsets overlap without nesting or a subset is
// repeated; a missing root constraint is not an error (the root is inserted
// with D = sigma_x). Matrix contents are not checked here; run validate() on
// the result.
inline PaddingResult pad_to_perfect_binary(const GeneralTreeSpec& spec,
                                           const Tolerance& tol = {}) {
  (void)tol;
  if (spec.M < 1) throw error(errc::invalid_argument, "pad: M must be >= 1");
  // Canonicalize subsets and check membership bounds.
  std::vector<std::vector<int>> subsets(spec.constraints.size());
  for (std::size_t c = 0; c < spec.constraints.size(); ++c) {
    std::set<int> s(spec.constraints[c].subset.begin(),
                    spec.constraints[c].subset.end());
    if (s.empty()) {
      throw error(errc::invalid_argument,
                  "pad: constraint " + std::to_string(c) + " has an empty subset");
    }
    if (*s.begin() < 1 || *s.rbegin() > spec.M) {
      throw error(errc::invalid_argument,
                  "pad: constraint " + std::to_string(c) +
                      " references a description outside 1.." +
                      std::to_string(spec.M));
    }
    subsets[c].assign(s.begin(), s.end());
  }
  // Laminarity: every pair nested or disjoint, no duplicates.
  for (std::size_t a = 0; a < subsets.size(); ++a) {
    for (std::size_t b = a + 1; b < subsets.size(); ++b) {
      std::vector<int> inter;
      std::set_intersection(subsets[a].begin(), subsets[a].end(),
                            subsets[b].begin(), subsets[b].end(),
                            std::back_inserter(inter));
      if (inter.empty()) continue;
      if (subsets[a] == subsets[b]) {
        throw error(errc::not_a_tree, "pad: duplicate subset in constraints " +
                                          std::to_string(a) + " and " +
                                          std::to_string(b));
      }
      const bool a_in_b = std::includes(subsets[b].begin(), subsets[b].end(),
                                        subsets[a].begin(), subsets[a].end());
      const bool b_in_a = std::includes(subsets[a].begin(), subsets[a].end(),
                                        subsets[b].begin(), subsets[b].end());
      if (!a_in_b && !b_in_a) {
        throw error(errc::not_a_tree,
                    "pad: constraints " + std::to_string(a) + " and " +
                        std::to_string(b) + " overlap without nesting");
      }
    }
  }
  // Sort constraint ids by decreasing subset size; parents precede children.
  std::vector<int> order(subsets.size());
  for (std::size_t c = 0; c < order.size(); ++c) order[c] = static_cast<int>(c);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return subsets[a].size() > subsets[b].size();
  });
  // Children lists within the laminar forest (direct containment only).
  const int n_con = static_cast<int>(subsets.size());
  std::vector<std::vector<int>> kids(n_con);
  std::vector<int> up(n_con, -1);
  for (int pos = 0; pos < n_con; ++pos) {
    const int c = order[pos];
    // The parent is the smallest strict superset, i.e. the latest earlier
    // entry in size order containing c.
    int best = -1;
    std::size_t best_size = static_cast<std::size_t>(spec.M) + 1;
    for (int qos = 0; qos < pos; ++qos) {
      const int p = order[qos];
      if (subsets[p].size() <= subsets[c].size()) continue;
      if (std::includes(subsets[p].begin(), subsets[p].end(),
                        subsets[c].begin(), subsets[c].end()) &&
          subsets[p].size() < best_size) {
        best = p;
        best_size = subsets[p].size();
      }
    }
    up[c] = best;
    if (best >= 0) kids[best].push_back(c);
  }
  std::vector<int> roots;
  for (int c = 0; c < n_con; ++c)
    if (up[c] < 0) roots.push_back(c);

  // Recursive embedding: a constrained set becomes the fold of its children
  // plus leaves for elements no child covers, ordered by smallest member.
  auto embed = [&](auto&& self, int cid) -> std::unique_ptr<detail::BinNode> {
    const std::vector<int>& mem = subsets[cid];
    if (mem.size() == 1) {
      auto leaf = std::make_unique<detail::BinNode>();
      leaf->members = mem;
      leaf->constraint_id = cid;
      return leaf;
    }
    std::vector<std::unique_ptr<detail::BinNode>> units;
    std::set<int> covered;
    for (int child : kids[cid]) {
      units.push_back(self(self, child));
      covered.insert(subsets[child].begin(), subsets[child].end());
    }
    for (int e : mem) {
      if (covered.count(e)) continue;
      auto leaf = std::make_unique<detail::BinNode>();
      leaf->members = {e};
      units.push_back(std::move(leaf));
    }
    std::sort(units.begin(), units.end(), [](const auto& a, const auto& b) {
      return a->members.front() < b->members.front();
    });
    auto node = detail::reduce_units(std::move(units));
    node->constraint_id = cid;
    return node;
  };

  // Top level: forest roots plus uncovered elements, under an implicit or
  // explicit all-descriptions root.
  std::vector<std::unique_ptr<detail::BinNode>> top;
  std::set<int> covered;
  int full_root_cid = -1;
  for (int r : roots) {
    if (static_cast<int>(subsets[r].size()) == spec.M) {
      full_root_cid = r;
      break;
    }
  }
  if (full_root_cid >= 0) {
    top.push_back(embed(embed, full_root_cid));
  } else {
    for (int r : roots) {
      top.push_back(embed(embed, r));
      covered.insert(subsets[r].begin(), subsets[r].end());
    }
    for (int e = 1; e <= spec.M; ++e) {
      if (covered.count(e)) continue;
      auto leaf = std::make_unique<detail::BinNode>();
      leaf->members = {e};
      top.push_back(std::move(leaf));
    }
    std::sort(top.begin(), top.end(), [](const auto& a, const auto& b) {
      return a->members.front() < b->members.front();
    });
  }
  std::unique_ptr<detail::BinNode> root = detail::reduce_units(std::move(top));

  // Even out leaf depth with dummy siblings; the real description and its
  // constraint ride the deepest copy. A minimum depth of 1 keeps L >= 2.
  const int depth = std::max(detail::max_leaf_depth(*root), 1);
  auto deepen = [&](auto&& self, std::unique_ptr<detail::BinNode> n,
                    int remaining) -> std::unique_ptr<detail::BinNode> {
    if (!n->is_leaf()) {
      n->left = self(self, std::move(n->left), remaining - 1);
      n->right = self(self, std::move(n->right), remaining - 1);
      return n;
    }
    if (remaining == 0) return n;
    auto dummy = std::make_unique<detail::BinNode>();  // no members
    auto holder = std::make_unique<detail::BinNode>();
    holder->members = n->members;
    holder->left = self(self, std::move(n), remaining - 1);
    holder->right = self(self, std::move(dummy), remaining - 1);
    return holder;
  };
  // Dummies created above have no members; give each a fresh index later via
  // leaf positions. First push real trees to uniform depth.
  root = deepen(deepen, std::move(root), depth);

  const int L = depth + 1;
  PaddingResult out;
  out.instance.m = spec.m;
  out.instance.L = L;
  out.instance.sigma_x = spec.sigma_x;
  out.instance.distortions.assign(node_count(L), spec.sigma_x);
  out.relabel.assign(spec.M, 0);

  // Walk the tree; node (k,i) follows from the path. Leaves are visited left
  // to right, which fixes the relabeling.
  int next_leaf = 0;
  auto assign = [&](auto&& self, const detail::BinNode& n, int k, int i) -> void {
    if (n.constraint_id >= 0) {
      out.instance.distortions[node_offset({k, i})] =
          spec.constraints[n.constraint_id].d;
    }
    if (k == L) {
      ++next_leaf;
      if (!n.members.empty()) out.relabel[n.members.front() - 1] = next_leaf;
      return;
    }
    if (n.is_leaf()) {
      // A childless node above leaf level is an all-dummy subtree.
      self(self, detail::BinNode{}, k + 1, 2 * i - 1);
      self(self, detail::BinNode{}, k + 1, 2 * i);
      return;
    }
    self(self, *n.left, k + 1, 2 * i - 1);
    self(self, *n.right, k + 1, 2 * i);
  };
  assign(assign, *root, 1, 1);
  out.dummy_count = out.instance.num_descriptions() - spec.M;
  return out;
}

}  // namespace mdtree
