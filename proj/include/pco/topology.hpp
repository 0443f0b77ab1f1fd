#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pco/error.hpp"
#include "pco/rational.hpp"

namespace pco {

using NodeId = std::size_t;

struct WeightedEdge {
  NodeId a = 0;
  NodeId b = 0;
  double tau = 0.0;  // propagation delay in PCO periods
};

/// Undirected connected graph with a symmetric per-edge delay matrix.
/// Immutable once built; share it freely across concurrent trials.
class Topology {
 public:
  std::size_t node_count() const { return n_; }

  bool adjacent(NodeId i, NodeId j) const { return adj_[i * n_ + j] != 0; }

  // Zero for non-edges and the diagonal.
  double delay(NodeId i, NodeId j) const { return delay_[i * n_ + j]; }

  std::span<const NodeId> neighbors(NodeId i) const { return neighbors_[i]; }

  // Edges with a < b, in lexicographic order.
  const std::vector<WeightedEdge>& edges() const { return edges_; }

  double max_delay() const { return max_delay_; }
  double min_delay() const { return min_delay_; }
  bool has_delays() const { return max_delay_ > 0.0; }

 private:
  friend Topology build_topology(std::size_t, std::span<const WeightedEdge>);

  std::size_t n_ = 0;
  std::vector<char> adj_;
  std::vector<double> delay_;
  std::vector<std::vector<NodeId>> neighbors_;
  std::vector<WeightedEdge> edges_;
  double max_delay_ = 0.0;
  double min_delay_ = 0.0;
};

inline Topology build_topology(std::size_t node_count, std::span<const WeightedEdge> edge_list) {
  if (node_count == 0) throw Error(ErrorCode::InvalidNode, "topology needs at least one node");
  Topology t;
  t.n_ = node_count;
  t.adj_.assign(node_count * node_count, 0);
  t.delay_.assign(node_count * node_count, 0.0);
  t.neighbors_.assign(node_count, {});

  for (const auto& e : edge_list) {
    if (e.a >= node_count || e.b >= node_count) {
      throw Error(ErrorCode::InvalidNode,
                  "edge (" + std::to_string(e.a) + "," + std::to_string(e.b) + ") outside [0," +
                      std::to_string(node_count) + ")");
    }
    if (e.a == e.b) throw Error(ErrorCode::SelfLoop, "edge at node " + std::to_string(e.a));
    if (!(e.tau >= 0.0 && e.tau < 1.0)) {
      throw Error(ErrorCode::DelayOutOfRange,
                  "delay " + std::to_string(e.tau) + " on edge (" + std::to_string(e.a) + "," +
                      std::to_string(e.b) + ") must lie in [0,1)");
    }
    if (t.adj_[e.a * node_count + e.b]) {
      throw Error(ErrorCode::DuplicateEdge,
                  "(" + std::to_string(e.a) + "," + std::to_string(e.b) + ")");
    }
    t.adj_[e.a * node_count + e.b] = t.adj_[e.b * node_count + e.a] = 1;
    t.delay_[e.a * node_count + e.b] = t.delay_[e.b * node_count + e.a] = e.tau;
    t.neighbors_[e.a].push_back(e.b);
    t.neighbors_[e.b].push_back(e.a);
    t.edges_.push_back({std::min(e.a, e.b), std::max(e.a, e.b), e.tau});
  }
  for (auto& nb : t.neighbors_) std::sort(nb.begin(), nb.end());
  std::sort(t.edges_.begin(), t.edges_.end(), [](const WeightedEdge& x, const WeightedEdge& y) {
    return std::pair(x.a, x.b) < std::pair(y.a, y.b);
  });

  // connectivity
  std::vector<char> seen(node_count, 0);
  std::vector<NodeId> stack{0};
  seen[0] = 1;
  std::size_t reached = 1;
  while (!stack.empty()) {
    const NodeId u = stack.back();
    stack.pop_back();
    for (NodeId v : t.neighbors_[u]) {
      if (!seen[v]) {
        seen[v] = 1;
        ++reached;
        stack.push_back(v);
      }
    }
  }
  if (reached != node_count) {
    const auto isolated = std::find(seen.begin(), seen.end(), 0) - seen.begin();
    throw Error(ErrorCode::DisconnectedGraph,
                std::to_string(node_count - reached) + " node(s) unreachable from node 0, e.g. node " +
                    std::to_string(isolated));
  }

  if (!t.edges_.empty()) {
    t.max_delay_ = 0.0;
    t.min_delay_ = std::numeric_limits<double>::infinity();
    for (const auto& e : t.edges_) {
      t.max_delay_ = std::max(t.max_delay_, e.tau);
      t.min_delay_ = std::min(t.min_delay_, e.tau);
    }
  }
  return t;
}

inline Topology build_topology(std::size_t node_count,
                               std::span<const std::pair<NodeId, NodeId>> edge_list,
                               std::span<const double> delay_list) {
  if (edge_list.size() != delay_list.size()) {
    throw Error(ErrorCode::LengthMismatch, std::to_string(edge_list.size()) + " edges but " +
                                               std::to_string(delay_list.size()) + " delays");
  }
  std::vector<WeightedEdge> edges;
  edges.reserve(edge_list.size());
  for (std::size_t k = 0; k < edge_list.size(); ++k) {
    edges.push_back({edge_list[k].first, edge_list[k].second, delay_list[k]});
  }
  return build_topology(node_count, edges);
}

// ---------------------------------------------------------------------------
// Maximal cliques

struct CliqueCover {
  // Each clique sorted ascending; the list is sorted lexicographically.
  std::vector<std::vector<NodeId>> cliques;
  // node -> indices of the cliques containing it (ascending)
  std::vector<std::vector<std::size_t>> membership;
  // clique -> nodes that belong to no other clique
  std::vector<std::vector<NodeId>> local;
  // (c, c') with c < c' -> V_c ∩ V_c'; only nonempty intersections are stored
  std::map<std::pair<std::size_t, std::size_t>, std::vector<NodeId>> shared;

  std::size_t node_count() const { return membership.size(); }
  std::size_t size() const { return cliques.size(); }

  bool contains(std::size_t c, NodeId i) const {
    return std::binary_search(cliques[c].begin(), cliques[c].end(), i);
  }

  bool is_local(NodeId i) const { return membership[i].size() == 1; }

  std::vector<NodeId> shared_nodes(std::size_t c, std::size_t d) const {
    if (c == d) return {};
    auto it = shared.find({std::min(c, d), std::max(c, d)});
    return it == shared.end() ? std::vector<NodeId>{} : it->second;
  }
};

// Derives membership/local/shared from an explicit clique list.
inline CliqueCover make_clique_cover(std::size_t node_count,
                                     std::vector<std::vector<NodeId>> cliques) {
  CliqueCover cover;
  for (auto& c : cliques) std::sort(c.begin(), c.end());
  std::sort(cliques.begin(), cliques.end());
  cover.cliques = std::move(cliques);
  cover.membership.assign(node_count, {});
  for (std::size_t c = 0; c < cover.cliques.size(); ++c) {
    for (NodeId i : cover.cliques[c]) {
      if (i >= node_count) throw Error(ErrorCode::InvalidNode, "clique member " + std::to_string(i));
      cover.membership[i].push_back(c);
    }
  }
  cover.local.assign(cover.cliques.size(), {});
  for (std::size_t c = 0; c < cover.cliques.size(); ++c) {
    for (NodeId i : cover.cliques[c]) {
      if (cover.membership[i].size() == 1) cover.local[c].push_back(i);
    }
  }
  for (std::size_t c = 0; c < cover.cliques.size(); ++c) {
    for (std::size_t d = c + 1; d < cover.cliques.size(); ++d) {
      std::vector<NodeId> both;
      std::set_intersection(cover.cliques[c].begin(), cover.cliques[c].end(),
                            cover.cliques[d].begin(), cover.cliques[d].end(),
                            std::back_inserter(both));
      if (!both.empty()) cover.shared.emplace(std::pair(c, d), std::move(both));
    }
  }
  return cover;
}

namespace detail {

class BronKerbosch {
 public:
  BronKerbosch(const Topology& t, std::size_t cap) : t_(t), cap_(cap) {}

  std::vector<std::vector<NodeId>> run() {
    const auto order = degeneracy_order();
    std::vector<std::size_t> rank(t_.node_count());
    for (std::size_t k = 0; k < order.size(); ++k) rank[order[k]] = k;
    for (NodeId v : order) {
      std::vector<NodeId> later, earlier;
      for (NodeId u : t_.neighbors(v)) (rank[u] > rank[v] ? later : earlier).push_back(u);
      std::vector<NodeId> r{v};
      expand(r, later, earlier);
    }
    return std::move(found_);
  }

 private:
  std::vector<NodeId> degeneracy_order() const {
    const std::size_t n = t_.node_count();
    std::vector<std::size_t> degree(n);
    std::vector<char> removed(n, 0);
    for (NodeId i = 0; i < n; ++i) degree[i] = t_.neighbors(i).size();
    std::vector<NodeId> order;
    order.reserve(n);
    for (std::size_t step = 0; step < n; ++step) {
      NodeId best = n;
      for (NodeId i = 0; i < n; ++i) {
        if (!removed[i] && (best == n || degree[i] < degree[best])) best = i;
      }
      removed[best] = 1;
      order.push_back(best);
      for (NodeId u : t_.neighbors(best)) {
        if (!removed[u]) --degree[u];
      }
    }
    return order;
  }

  std::vector<NodeId> neighbors_in(NodeId u, const std::vector<NodeId>& set) const {
    std::vector<NodeId> out;
    for (NodeId w : set) {
      if (t_.adjacent(u, w)) out.push_back(w);
    }
    return out;
  }

  void expand(std::vector<NodeId>& r, std::vector<NodeId> p, std::vector<NodeId> x) {
    if (p.empty()) {
      if (x.empty()) {
        if (found_.size() >= cap_) {
          throw Error(ErrorCode::CliqueExplosion,
                      "more than " + std::to_string(cap_) + " maximal cliques");
        }
        auto clique = r;
        std::sort(clique.begin(), clique.end());
        found_.push_back(std::move(clique));
      }
      return;
    }
    // pivot maximizing |P ∩ N(u)|
    NodeId pivot = p.front();
    std::size_t best = 0;
    for (const auto* set : {&p, &x}) {
      for (NodeId u : *set) {
        const std::size_t k = neighbors_in(u, p).size();
        if (k >= best) {
          best = k;
          pivot = u;
        }
      }
    }
    std::vector<NodeId> candidates;
    for (NodeId v : p) {
      if (!t_.adjacent(pivot, v)) candidates.push_back(v);
    }
    for (NodeId v : candidates) {
      r.push_back(v);
      expand(r, neighbors_in(v, p), neighbors_in(v, x));
      r.pop_back();
      p.erase(std::find(p.begin(), p.end(), v));
      x.push_back(v);
    }
  }

  const Topology& t_;
  std::size_t cap_;
  std::vector<std::vector<NodeId>> found_;
};

}  // namespace detail

inline CliqueCover maximal_cliques(const Topology& topology, std::size_t cap = 10'000) {
  return make_clique_cover(topology.node_count(), detail::BronKerbosch(topology, cap).run());
}

// ---------------------------------------------------------------------------
// Accumulated path delay (minimum total delay over all paths)

inline std::vector<double> delay_distances(const Topology& t, NodeId source) {
  const std::size_t n = t.node_count();
  if (source >= n) throw Error(ErrorCode::InvalidNode, "source " + std::to_string(source));
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  using Item = std::pair<double, NodeId>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
  dist[source] = 0.0;
  queue.push({0.0, source});
  while (!queue.empty()) {
    const auto [d, u] = queue.top();
    queue.pop();
    if (d > dist[u]) continue;
    for (NodeId v : t.neighbors(u)) {
      const double alt = d + t.delay(u, v);
      if (alt < dist[v]) {
        dist[v] = alt;
        queue.push({alt, v});
      }
    }
  }
  return dist;
}

inline double path_delay(const Topology& t, NodeId i, NodeId j) {
  if (j >= t.node_count()) throw Error(ErrorCode::InvalidNode, "target " + std::to_string(j));
  return delay_distances(t, i)[j];
}

// Row h holds τ_{h→j} for every j.
inline std::vector<std::vector<double>> all_path_delays(const Topology& t) {
  std::vector<std::vector<double>> out;
  out.reserve(t.node_count());
  for (NodeId h = 0; h < t.node_count(); ++h) out.push_back(delay_distances(t, h));
  return out;
}

// ---------------------------------------------------------------------------
// Demand partition A_c

enum class TieBreak {
  Reject,       // AmbiguousPartition when overlapping cliques tie on total demand
  LowestIndex,  // resolve ties towards the lower clique index and report them
};

struct DemandPartition {
  std::vector<std::size_t> assignment;           // node -> clique index c with i ∈ A_c
  std::vector<std::vector<NodeId>> members;      // c -> A_c (possibly empty)
  std::vector<std::size_t> order;                // cliques by decreasing Σ_{A_c}(D+δ)
  std::vector<Rational> clique_totals;           // Σ_{V_c}(D+δ)
  std::vector<Rational> partition_totals;        // Σ_{A_c}(D+δ)
  std::vector<NodeId> tie_broken;                // nodes resolved by TieBreak::LowestIndex
};

inline DemandPartition demand_partition(const CliqueCover& cover, std::span<const Rational> demands,
                                        const Rational& delta, TieBreak ties = TieBreak::Reject) {
  const std::size_t n = cover.node_count();
  if (demands.size() != n) {
    throw Error(ErrorCode::LengthMismatch,
                std::to_string(demands.size()) + " demands for " + std::to_string(n) + " nodes");
  }
  for (const auto& d : demands) {
    if (d <= 0) throw Error(ErrorCode::InvalidConfig, "demands must be positive");
  }
  if (delta <= 0) throw Error(ErrorCode::InvalidConfig, "guard δ must be positive");

  DemandPartition part;
  part.clique_totals.assign(cover.size(), Rational(0));
  for (std::size_t c = 0; c < cover.size(); ++c) {
    for (NodeId v : cover.cliques[c]) part.clique_totals[c] += demands[v] + delta;
  }
  part.assignment.assign(n, 0);
  part.members.assign(cover.size(), {});
  for (NodeId i = 0; i < n; ++i) {
    const auto& cs = cover.membership[i];
    std::size_t best = cs.front();
    bool tied = false;
    for (std::size_t k = 1; k < cs.size(); ++k) {
      const std::size_t c = cs[k];
      if (part.clique_totals[c] > part.clique_totals[best]) {
        best = c;
        tied = false;
      } else if (part.clique_totals[c] == part.clique_totals[best]) {
        tied = true;
      }
    }
    if (tied) {
      if (ties == TieBreak::Reject) {
        throw Error(ErrorCode::AmbiguousPartition,
                    "node " + std::to_string(i) + " lies in overlapping cliques with equal total demand " +
                        to_fraction_string(part.clique_totals[best]));
      }
      part.tie_broken.push_back(i);
    }
    part.assignment[i] = best;
    part.members[best].push_back(i);
  }
  part.partition_totals.assign(cover.size(), Rational(0));
  for (NodeId i = 0; i < n; ++i) part.partition_totals[part.assignment[i]] += demands[i] + delta;
  part.order.resize(cover.size());
  for (std::size_t c = 0; c < cover.size(); ++c) part.order[c] = c;
  std::stable_sort(part.order.begin(), part.order.end(), [&](std::size_t x, std::size_t y) {
    return part.partition_totals[x] > part.partition_totals[y];
  });
  return part;
}

struct AssumptionTwoVerdict {
  bool holds = true;
  std::optional<std::size_t> violating_clique;
  std::vector<std::size_t> partitions_touched;  // includes the clique's own index
};

// True iff every clique satisfies V_c ⊂ A_c ∪ A_c' for a single c'.
inline AssumptionTwoVerdict check_assumption_two(const CliqueCover& cover,
                                                 const DemandPartition& partition) {
  for (std::size_t c = 0; c < cover.size(); ++c) {
    std::vector<std::size_t> touched{c};
    for (NodeId v : cover.cliques[c]) touched.push_back(partition.assignment[v]);
    std::sort(touched.begin(), touched.end());
    touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
    if (touched.size() > 2) return {false, c, touched};
  }
  return {};
}

}  // namespace pco
