#pragma once

// Slow, obviously-correct reference computations used only by tests.

#include <algorithm>
#include <complex>
#include <cstdint>
#include <limits>
#include <set>
#include <vector>

#include "pco/rng.hpp"
#include "pco/topology.hpp"

namespace oracle {

using pco::NodeId;

inline std::vector<std::vector<bool>> adjacency(const pco::Topology& t) {
  const std::size_t n = t.node_count();
  std::vector<std::vector<bool>> a(n, std::vector<bool>(n, false));
  for (const auto& e : t.edges()) a[e.a][e.b] = a[e.b][e.a] = true;
  return a;
}

// Every subset, keep the cliques that no single extra vertex can extend.
inline std::set<std::vector<NodeId>> maximal_cliques(const pco::Topology& t) {
  const std::size_t n = t.node_count();
  const auto a = adjacency(t);
  std::set<std::vector<NodeId>> out;
  for (std::uint32_t mask = 1; mask < (1U << n); ++mask) {
    std::vector<NodeId> s;
    for (NodeId v = 0; v < n; ++v) {
      if (mask & (1U << v)) s.push_back(v);
    }
    bool clique = true;
    for (std::size_t x = 0; x < s.size() && clique; ++x) {
      for (std::size_t y = x + 1; y < s.size() && clique; ++y) clique = a[s[x]][s[y]];
    }
    if (!clique) continue;
    bool maximal = true;
    for (NodeId v = 0; v < n && maximal; ++v) {
      if (mask & (1U << v)) continue;
      maximal = !std::all_of(s.begin(), s.end(), [&](NodeId u) { return a[u][v]; });
    }
    if (maximal) out.insert(s);
  }
  return out;
}

// Minimum delay over all simple paths, by exhaustive DFS.
inline double path_delay(const pco::Topology& t, NodeId from, NodeId to) {
  const std::size_t n = t.node_count();
  double best = std::numeric_limits<double>::infinity();
  std::vector<bool> seen(n, false);
  auto dfs = [&](auto&& self, NodeId v, double acc) -> void {
    if (v == to) {
      best = std::min(best, acc);
      return;
    }
    seen[v] = true;
    for (NodeId w = 0; w < n; ++w) {
      if (!seen[w] && t.adjacent(v, w)) self(self, w, acc + t.delay(v, w));
    }
    seen[v] = false;
  };
  dfs(dfs, from, 0.0);
  return best;
}

// Smallest k admitting a proper coloring, trying every assignment in k^n.
inline std::size_t chromatic_number(const pco::Topology& t) {
  const std::size_t n = t.node_count();
  for (std::size_t k = 1; k <= n; ++k) {
    std::vector<std::size_t> c(n, 0);
    while (true) {
      bool ok = true;
      for (const auto& e : t.edges()) {
        if (c[e.a] == c[e.b]) {
          ok = false;
          break;
        }
      }
      if (ok) return k;
      std::size_t pos = 0;
      while (pos < n && ++c[pos] == k) c[pos++] = 0;
      if (pos == n) break;
    }
  }
  return n;
}

// det(λI − S) for the n=2 equal-demand step matrix, by cofactor expansion.
// S = Jᵀ²·blockdiag(U, 1): row k of S is row k+2 (mod 4) of the block matrix.
inline std::complex<double> char_poly_n2(std::complex<double> l, double beta, double mu) {
  const double a = beta * mu;                 // off-diagonal guard weight
  const double b = beta * (1.0 - 2.0 * mu);   // slot weight
  const double e = 1.0 - beta * (1.0 - mu);   // guard diagonal
  const double m = 1.0 - 2.0 * beta * mu;     // slot diagonal
  const std::complex<double> s[4][4] = {
      {a, a, e, 0}, {0, 0, 0, 1}, {e, a, a, 0}, {b, m, b, 0}};
  std::complex<double> x[4][4];
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) x[r][c] = (r == c ? l : 0.0) - s[r][c];
  }
  auto det3 = [](std::complex<double> q[3][3]) {
    return q[0][0] * (q[1][1] * q[2][2] - q[1][2] * q[2][1]) - q[0][1] * (q[1][0] * q[2][2] - q[1][2] * q[2][0]) +
           q[0][2] * (q[1][0] * q[2][1] - q[1][1] * q[2][0]);
  };
  std::complex<double> det = 0.0;
  for (int c = 0; c < 4; ++c) {
    std::complex<double> minor[3][3];
    for (int r = 1; r < 4; ++r) {
      int cc = 0;
      for (int k = 0; k < 4; ++k) {
        if (k != c) minor[r - 1][cc++] = x[r][k];
      }
    }
    det += (c % 2 ? -1.0 : 1.0) * x[0][c] * det3(minor);
  }
  return det;
}

// Connected graph on n nodes: random spanning tree plus each remaining pair with probability p.
inline pco::Topology random_connected(pco::CounterRng& rng, std::size_t n, double p, double tau_lo = 0.0,
                                      double tau_hi = 0.0) {
  std::vector<pco::WeightedEdge> edges;
  std::vector<std::vector<bool>> used(n, std::vector<bool>(n, false));
  auto tau = [&] { return tau_hi > tau_lo ? rng.uniform(tau_lo, tau_hi) : tau_lo; };
  for (NodeId v = 1; v < n; ++v) {
    const NodeId u = rng.below(v);
    edges.push_back({u, v, tau()});
    used[u][v] = used[v][u] = true;
  }
  for (NodeId a = 0; a < n; ++a) {
    for (NodeId b = a + 1; b < n; ++b) {
      if (!used[a][b] && rng.uniform() < p) edges.push_back({a, b, tau()});
    }
  }
  return pco::build_topology(n, edges);
}

}  // namespace oracle
