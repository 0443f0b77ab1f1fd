#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "pco/error.hpp"
#include "pco/rational.hpp"
#include "pco/sched.hpp"
#include "pco/topology.hpp"

namespace pco {

using Complex = std::complex<double>;

// ---------------------------------------------------------------------------
// Update matrices

// 3×3 block acting on (Θ_i, Γ_i, Θ_suc(i)); columns sum to one.
template <class T>
std::array<std::array<T, 3>, 3> u_block(const T& demand, const T& delta, const T& beta) {
  const T den = demand + 2 * delta;
  const T a = beta * delta / den;
  const T b = beta * demand / den;
  const T edge = 1 - beta * (demand + delta) / den;
  const T mid = 1 - beta * 2 * delta / den;
  return {{{edge, a, a}, {b, mid, b}, {a, a, edge}}};
}

// Circular down-shift on 2n entries: (Jx)_k = x_{k-1}.
inline Eigen::MatrixXd shift_matrix(std::size_t size) {
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(size, size);
  for (std::size_t k = 0; k < size; ++k) j((k + 1) % size, k) = 1.0;
  return j;
}

struct CliqueSystem {
  std::size_t n = 0;
  std::vector<double> demands;  // in firing order
  double delta = 0.0;
  double beta = 0.0;
  std::vector<Eigen::Matrix3d> blocks;      // U per firing position
  std::vector<Eigen::MatrixXd> node_update;  // M_{π_k}
  Eigen::MatrixXd shift;                     // J
  Eigen::MatrixXd round;                     // M^c = M_{π_n} ⋯ M_{π_1}

  bool equal_demand() const {
    return std::all_of(demands.begin(), demands.end(), [&](double d) { return d == demands.front(); });
  }
};

inline CliqueSystem build_clique_system(std::span<const double> demands, double delta, double beta) {
  if (demands.size() < 2) throw Error(ErrorCode::DegenerateClique, "a clique needs two members");
  if (!(delta > 0.0)) throw Error(ErrorCode::InvalidConfig, "delta must be positive");
  if (!(beta >= 0.0 && beta < 1.0)) throw Error(ErrorCode::InvalidConfig, "beta must lie in [0,1)");
  CliqueSystem s;
  s.n = demands.size();
  s.demands.assign(demands.begin(), demands.end());
  s.delta = delta;
  s.beta = beta;
  const std::size_t size = 2 * s.n;
  s.shift = shift_matrix(size);
  s.round = Eigen::MatrixXd::Identity(size, size);
  for (std::size_t k = 0; k < s.n; ++k) {
    const auto u = u_block(demands[k], delta, beta);
    Eigen::Matrix3d block;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) block(r, c) = u[r][c];
    }
    s.blocks.push_back(block);
    // J^{2k} · blockdiag(U, I) · Jᵀ^{2k} places U on rows 2k, 2k+1, 2k+2 (cyclic)
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(size, size);
    const std::array<std::size_t, 3> idx{2 * k, 2 * k + 1, (2 * k + 2) % size};
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) m(idx[r], idx[c]) = block(r, c);
    }
    s.node_update.push_back(m);
    s.round = m * s.round;
  }
  return s;
}

// blockdiag(U, I) for the equal-demand case; M^c = (J^{-2}·B)^n.
inline Eigen::MatrixXd step_matrix(const CliqueSystem& s) {
  const std::size_t size = 2 * s.n;
  Eigen::MatrixXd b = Eigen::MatrixXd::Identity(size, size);
  b.topLeftCorner<3, 3>() = s.blocks.front();
  Eigen::MatrixXd back = Eigen::MatrixXd::Identity(size, size);
  const Eigen::MatrixXd jt = s.shift.transpose();
  back = jt * jt;
  return back * b;
}

// ---------------------------------------------------------------------------
// Spectra

inline Complex ipow(Complex z, std::size_t k) {
  Complex r(1.0, 0.0);
  while (k) {
    if (k & 1U) r *= z;
    z *= z;
    k >>= 1U;
  }
  return r;
}

// Characteristic polynomial of the equal-demand step matrix, μ = δ/(D+2δ).
inline Complex char_poly_eval(Complex lambda, std::size_t n, double beta, double mu) {
  const Complex ln = ipow(lambda, n);
  const Complex ln1 = ipow(lambda, n - 1);
  const Complex l2n = ln * ln;
  const Complex l2n1 = ipow(lambda, 2 * n - 1);
  const Complex ln_plus = ln * lambda;
  const double bm1 = beta - 1.0;
  return l2n - ln - bm1 * bm1 * (ln - 1.0) + beta * beta * mu * (2.0 * ln - ln1 - lambda) -
         beta * mu * (l2n1 + ln_plus - ln1 - lambda);
}

struct PerturbationRoot {
  std::size_t k = 0;
  Complex z;       // first-order correction
  Complex lambda;  // reconstructed step-matrix root
};

inline std::vector<PerturbationRoot> perturbation_roots(std::size_t n, double beta, double mu) {
  if (n < 2) throw Error(ErrorCode::InvalidConfig, "n must be at least 2");
  std::vector<PerturbationRoot> out;
  const double nn = static_cast<double>(n);
  for (std::size_t k = 1; k < n; ++k) {
    const double w = 2.0 * std::numbers::pi * static_cast<double>(k) / nn;
    Complex z(0.0, 0.0);
    if (mu > 0.0 && beta > 0.0) {
      const Complex den = 1.0 - 0.5 * std::polar(1.0, -w) - std::sin(w) / nn +
                          (1.0 / (beta * mu)) * (1.0 - beta / 2.0 - mu * std::cos(w));
      z = ((1.0 - std::cos(w)) / nn) / den;
    }
    out.push_back({k, z, (1.0 - z.real()) * std::polar(1.0, w - z.imag())});
  }
  return out;
}

inline double lambda2_approx(std::size_t n, double beta, double demand, double delta) {
  const double mu = delta / (demand + 2.0 * delta);
  const double nn = static_cast<double>(n);
  return 1.0 - 2.0 * beta * mu * std::numbers::pi * std::numbers::pi / (nn * nn);
}

struct EigenPair {
  Complex value;
  double residual = 0.0;  // ‖M v − λ v‖ / ‖v‖
};

struct SpectralReport {
  std::size_t n = 0;
  double beta = 0.0;
  double mu = 0.0;
  std::vector<EigenPair> eigen;          // M^c, by decreasing modulus
  double lambda2 = 0.0;                  // |λ_2(M^c)|
  std::optional<double> lambda2_approx;  // equal demand only
  std::vector<Complex> step_eigen;       // equal demand only: eigenvalues of J^{-2}B
  double char_poly_max_residual = 0.0;   // over step_eigen
  std::vector<PerturbationRoot> roots;   // equal demand only
  std::optional<double> lambda2_perturbation;  // |λ(n-1)|^n
};

inline std::vector<EigenPair> dense_eigen(const Eigen::MatrixXd& m) {
  Eigen::EigenSolver<Eigen::MatrixXd> solver(m, true);
  if (solver.info() != Eigen::Success) {
    throw Error(ErrorCode::EigenNoConvergence,
                "eigen solver failed on a " + std::to_string(m.rows()) + "×" + std::to_string(m.cols()) +
                    " matrix");
  }
  const Eigen::MatrixXcd mc = m.cast<Complex>();
  std::vector<EigenPair> out;
  for (Eigen::Index k = 0; k < m.rows(); ++k) {
    const Eigen::VectorXcd v = solver.eigenvectors().col(k);
    const Complex lambda = solver.eigenvalues()(k);
    const double norm = v.norm();
    out.push_back({lambda, norm > 0 ? (mc * v - lambda * v).norm() / norm : 0.0});
  }
  std::stable_sort(out.begin(), out.end(), [](const EigenPair& a, const EigenPair& b) {
    const double ma = std::abs(a.value), mb = std::abs(b.value);
    if (ma != mb) return ma > mb;
    if (a.value.real() != b.value.real()) return a.value.real() > b.value.real();
    return a.value.imag() > b.value.imag();
  });
  return out;
}

inline SpectralReport eigenvalues(const CliqueSystem& s) {
  SpectralReport r;
  r.n = s.n;
  r.beta = s.beta;
  r.eigen = dense_eigen(s.round);
  r.lambda2 = r.eigen.size() > 1 ? std::abs(r.eigen[1].value) : 0.0;
  if (s.equal_demand()) {
    const double d = s.demands.front();
    r.mu = s.delta / (d + 2.0 * s.delta);
    r.lambda2_approx = lambda2_approx(s.n, s.beta, d, s.delta);
    for (const auto& p : dense_eigen(step_matrix(s))) {
      r.step_eigen.push_back(p.value);
      r.char_poly_max_residual =
          std::max(r.char_poly_max_residual, std::abs(char_poly_eval(p.value, s.n, s.beta, r.mu)));
    }
    r.roots = perturbation_roots(s.n, s.beta, r.mu);
    r.lambda2_perturbation = std::pow(std::abs(r.roots.back().lambda), static_cast<double>(s.n));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Closed-form fixed points

enum class PredictionKind { SingleClique, TwoClique, MultiCliqueRecursion, SetValued };

inline const char* to_string(PredictionKind k) {
  switch (k) {
    case PredictionKind::SingleClique: return "single-clique";
    case PredictionKind::TwoClique: return "two-clique";
    case PredictionKind::MultiCliqueRecursion: return "multi-clique-recursion";
    case PredictionKind::SetValued: return "set-valued";
  }
  return "?";
}

// Per clique, its members in (cyclic) firing order.
using Arrangement = std::vector<std::vector<NodeId>>;

struct CliqueUpsilon {
  std::vector<NodeId> order;
  std::vector<Rational> entries;  // Θ_{π_1}, Γ_{π_1}, ...

  Rational sum() const {
    Rational s = 0;
    for (const auto& e : entries) s += e;
    return s;
  }
  // Guard preceding node v in this clique.
  const Rational& theta_of(NodeId v) const {
    return entries[2 * static_cast<std::size_t>(std::find(order.begin(), order.end(), v) - order.begin())];
  }
  const Rational& gamma_of(NodeId v) const {
    return entries[2 * static_cast<std::size_t>(std::find(order.begin(), order.end(), v) - order.begin()) + 1];
  }
};

struct ParameterRange {
  std::string name;
  Rational lo;
  Rational hi;
};

struct FixedPointPrediction {
  PredictionKind kind = PredictionKind::SingleClique;
  std::vector<Rational> gamma;          // Γ* per node
  std::vector<CliqueUpsilon> upsilon;   // per clique, in cover order
  std::vector<ParameterRange> ranges;   // set-valued only; upsilon holds the lower endpoint
  bool tie_resolved = false;            // partition ties were broken by clique index
  // set-valued only: the prediction at a given free parameter value
  std::function<FixedPointPrediction(const Rational&)> at;

  Arrangement arrangement() const {
    Arrangement a;
    for (const auto& u : upsilon) a.push_back(u.order);
    return a;
  }
};

inline void require_positive(std::span<const Rational> demands, const Rational& delta, bool allow_zero_delta) {
  for (const auto& d : demands) {
    if (d <= 0) throw Error(ErrorCode::InvalidConfig, "demands must be positive");
  }
  if (delta < 0 || (!allow_zero_delta && delta == 0)) {
    throw Error(ErrorCode::InvalidConfig, "guard δ must be positive");
  }
}

// Υ* = (γ/D)(δ, D_{π_1}, δ, D_{π_2}, ...) for demands listed in firing order.
inline CliqueUpsilon single_clique_upsilon(std::span<const NodeId> order, std::span<const Rational> demands,
                                           const Rational& delta) {
  Rational total = 0;
  for (NodeId v : order) total += demands[v] + delta;
  CliqueUpsilon u;
  u.order.assign(order.begin(), order.end());
  for (NodeId v : order) {
    u.entries.push_back(delta / total);
    u.entries.push_back(demands[v] / total);
  }
  return u;
}

inline FixedPointPrediction fixed_point_single_clique(std::span<const Rational> demands, const Rational& delta) {
  if (demands.size() < 2) throw Error(ErrorCode::DegenerateClique, "a clique needs two members");
  require_positive(demands, delta, true);
  std::vector<NodeId> order(demands.size());
  for (NodeId i = 0; i < order.size(); ++i) order[i] = i;
  FixedPointPrediction p;
  p.kind = PredictionKind::SingleClique;
  p.upsilon.push_back(single_clique_upsilon(order, demands, delta));
  for (NodeId i = 0; i < order.size(); ++i) p.gamma.push_back(p.upsilon[0].gamma_of(i));
  return p;
}

namespace detail {

inline void check_arrangement(const CliqueCover& cover, const Arrangement& a) {
  if (a.size() != cover.size()) {
    throw Error(ErrorCode::UnsupportedArrangement, "arrangement must list every clique");
  }
  for (std::size_t c = 0; c < cover.size(); ++c) {
    auto sorted = a[c];
    std::sort(sorted.begin(), sorted.end());
    if (sorted != cover.cliques[c]) {
      throw Error(ErrorCode::UnsupportedArrangement,
                  "order for clique " + std::to_string(c) + " is not a permutation of its members");
    }
  }
}

// Default arrangement: foreign (or shared) block first, own block after, each ascending.
inline Arrangement default_arrangement(const CliqueCover& cover,
                                       const std::function<bool(std::size_t, NodeId)>& first) {
  Arrangement a;
  for (std::size_t c = 0; c < cover.size(); ++c) {
    std::vector<NodeId> head, tail;
    for (NodeId v : cover.cliques[c]) (first(c, v) ? head : tail).push_back(v);
    head.insert(head.end(), tail.begin(), tail.end());
    a.push_back(std::move(head));
  }
  return a;
}

}  // namespace detail

// Two overlapping cliques, any cyclic arrangement of the shared nodes. Between consecutive shared
// nodes s_j, s_{j+1} each clique c holds a run of locals; the tighter clique fixes the run length
// E_j = max_c (D̃_{c,j} + (k_{c,j}+1)δ) and the looser one stretches its locals by E_j/E_{c,j}.
inline FixedPointPrediction fixed_point_two_clique(const CliqueCover& cover, std::span<const Rational> demands,
                                                   const Rational& delta,
                                                   std::optional<Arrangement> arrangement = std::nullopt) {
  if (cover.size() != 2) {
    throw Error(ErrorCode::UnsupportedArrangement, "expected two cliques, got " + std::to_string(cover.size()));
  }
  const auto shared = cover.shared_nodes(0, 1);
  if (shared.empty()) throw Error(ErrorCode::UnsupportedArrangement, "the cliques share no node");
  if (demands.size() != cover.node_count()) {
    throw Error(ErrorCode::LengthMismatch, "one demand per node required");
  }
  require_positive(demands, delta, true);
  const auto is_shared = [&](NodeId v) { return std::binary_search(shared.begin(), shared.end(), v); };
  Arrangement arr = arrangement ? *arrangement
                                : detail::default_arrangement(cover, [&](std::size_t, NodeId v) { return is_shared(v); });
  detail::check_arrangement(cover, arr);

  // rotate both orders to begin at the same shared node
  const NodeId anchor = shared.front();
  for (auto& o : arr) std::rotate(o.begin(), std::find(o.begin(), o.end(), anchor), o.end());
  std::vector<NodeId> shared_seq[2];
  for (int c = 0; c < 2; ++c) {
    for (NodeId v : arr[c]) {
      if (is_shared(v)) shared_seq[c].push_back(v);
    }
  }
  if (shared_seq[0] != shared_seq[1]) {
    throw Error(ErrorCode::UnsupportedArrangement, "shared nodes fire in different orders in the two cliques");
  }
  const std::size_t gaps = shared_seq[0].size();

  // run j follows shared_seq[j]
  std::vector<std::array<Rational, 2>> run(gaps);
  for (int c = 0; c < 2; ++c) {
    std::size_t j = 0;
    Rational acc = delta;
    for (std::size_t k = 1; k <= arr[c].size(); ++k) {
      const NodeId v = arr[c][k % arr[c].size()];
      if (is_shared(v)) {
        run[j][c] = acc;
        acc = delta;
        ++j;
      } else {
        acc += demands[v] + delta;
      }
    }
  }
  Rational z = 0;
  for (NodeId s : shared) z += demands[s];
  std::vector<Rational> widest(gaps);
  for (std::size_t j = 0; j < gaps; ++j) {
    widest[j] = std::max(run[j][0], run[j][1]);
    z += widest[j];
  }

  FixedPointPrediction p;
  p.kind = PredictionKind::TwoClique;
  p.gamma.assign(cover.node_count(), Rational(0));
  for (int c = 0; c < 2; ++c) {
    CliqueUpsilon u;
    u.order = arr[c];
    std::size_t j = gaps - 1;  // the run preceding the anchor is the last one
    for (NodeId v : arr[c]) {
      const Rational stretch = run[j][c] == 0 ? Rational(1) : widest[j] / run[j][c];
      u.entries.push_back(delta * stretch / z);
      if (is_shared(v)) {
        p.gamma[v] = demands[v] / z;
        u.entries.push_back(p.gamma[v]);
      } else {
        p.gamma[v] = demands[v] * stretch / z;
        u.entries.push_back(p.gamma[v]);
      }
      if (is_shared(v)) j = (j + 1) % gaps;
    }
    p.upsilon.push_back(std::move(u));
  }
  return p;
}

namespace detail {

// Three-clique chain: outer cliques a, b each fully owning their members, a middle clique m
// touching both through single gateways, everything else in m owned by m.
struct ChainPattern {
  std::size_t a = 0, m = 0, b = 0;
  NodeId gate_a = 0, gate_b = 0;
};

inline std::optional<ChainPattern> match_chain(const CliqueCover& cover, const DemandPartition& part) {
  if (cover.size() != 3) return std::nullopt;
  for (std::size_t m = 0; m < 3; ++m) {
    const std::size_t a = (m + 1) % 3, b = (m + 2) % 3;
    const auto sa = cover.shared_nodes(m, a), sb = cover.shared_nodes(m, b);
    if (sa.size() != 1 || sb.size() != 1 || !cover.shared_nodes(a, b).empty()) continue;
    ChainPattern pat{std::min(a, b), m, std::max(a, b), 0, 0};
    pat.gate_a = cover.shared_nodes(m, pat.a).front();
    pat.gate_b = cover.shared_nodes(m, pat.b).front();
    if (part.assignment[pat.gate_a] != pat.a || part.assignment[pat.gate_b] != pat.b) continue;
    if (part.members[pat.a].size() != cover.cliques[pat.a].size()) continue;
    if (part.members[pat.b].size() != cover.cliques[pat.b].size()) continue;
    if (part.members[m].size() + 2 != cover.cliques[m].size()) continue;
    return pat;
  }
  return std::nullopt;
}

}  // namespace detail

// Scales x_c per partition: Γ_v = D_v·x_{p(v)}. Own-block guards use x_c; guards between two
// foreign nodes use the foreign partition's scale.
inline FixedPointPrediction fixed_point_multiclique(const CliqueCover& cover, std::span<const Rational> demands,
                                                    const Rational& delta,
                                                    std::optional<Arrangement> arrangement = std::nullopt,
                                                    std::optional<Rational> guard_override = std::nullopt) {
  if (demands.size() != cover.node_count()) {
    throw Error(ErrorCode::LengthMismatch, "one demand per node required");
  }
  require_positive(demands, delta, false);
  for (std::size_t c = 0; c < cover.size(); ++c) {
    if (cover.cliques[c].size() < 2) throw Error(ErrorCode::DegenerateClique, "clique " + std::to_string(c));
  }
  // guard_override evaluates the same structure at another guard value (δ → 0 for coloring)
  const Rational g = guard_override.value_or(delta);

  DemandPartition part;
  bool tie = false;
  try {
    part = demand_partition(cover, demands, delta, TieBreak::Reject);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::AmbiguousPartition) throw;
    part = demand_partition(cover, demands, delta, TieBreak::LowestIndex);
    tie = true;
  }

  const auto verdict = check_assumption_two(cover, part);
  if (!verdict.holds) {
    const auto chain = detail::match_chain(cover, part);
    if (!chain) {
      std::string touched;
      for (auto c : verdict.partitions_touched) touched += (touched.empty() ? "" : ",") + std::to_string(c);
      throw Error(ErrorCode::AssumptionViolated, "clique " + std::to_string(*verdict.violating_clique) +
                                                     " spans partitions {" + touched + "}");
    }
    const auto& pat = *chain;
    auto total = [&](std::span<const NodeId> nodes) {
      Rational s = 0;
      for (NodeId v : nodes) s += demands[v] + g;
      return s;
    };
    const Rational xa = 1 / total(cover.cliques[pat.a]);
    const Rational xb = 1 / total(cover.cliques[pat.b]);
    const auto& inner = part.members[pat.m];
    const Rational inner_total = total(inner) + g;
    const Rational lo = std::max(g * xa, g * xb);
    const Rational hi = 1 - demands[pat.gate_a] * xa - demands[pat.gate_b] * xb - std::max(xa, xb) * inner_total;
    if (hi < lo) throw Error(ErrorCode::AssumptionViolated, "chain pattern admits no fixed point");

    Arrangement arr = arrangement ? *arrangement : Arrangement{};
    if (!arrangement) {
      arr = detail::default_arrangement(cover, [&](std::size_t c, NodeId v) { return part.assignment[v] != c; });
      // middle clique: gate_a, own block, gate_b
      std::vector<NodeId> mid{pat.gate_a};
      mid.insert(mid.end(), inner.begin(), inner.end());
      mid.push_back(pat.gate_b);
      arr[pat.m] = mid;
    }
    detail::check_arrangement(cover, arr);
    {
      // the two gateways must be adjacent in the middle clique's cycle
      const auto& o = arr[pat.m];
      const std::size_t ia = std::find(o.begin(), o.end(), pat.gate_a) - o.begin();
      const std::size_t ib = std::find(o.begin(), o.end(), pat.gate_b) - o.begin();
      const std::size_t d = (ia + o.size() - ib) % o.size();
      if (d != 1 && d != o.size() - 1) {
        throw Error(ErrorCode::UnsupportedArrangement, "gateways separated in the middle clique");
      }
    }

    const std::vector<Rational> dem(demands.begin(), demands.end());
    auto build = [=, cover = cover, demands = dem](const Rational& theta) {
      FixedPointPrediction p;
      p.kind = PredictionKind::SetValued;
      p.tie_resolved = tie;
      p.gamma.assign(cover.node_count(), Rational(0));
      for (std::size_t c : {pat.a, pat.b}) {
        const Rational x = c == pat.a ? xa : xb;
        for (NodeId v : cover.cliques[c]) p.gamma[v] = demands[v] * x;
      }
      const Rational gap = 1 - theta - p.gamma[pat.gate_a] - p.gamma[pat.gate_b];
      const Rational y = gap / inner_total;
      for (NodeId v : inner) p.gamma[v] = demands[v] * y;
      for (std::size_t c = 0; c < cover.size(); ++c) {
        CliqueUpsilon u;
        u.order = arr[c];
        const std::size_t m = u.order.size();
        for (std::size_t k = 0; k < m; ++k) {
          const NodeId v = u.order[k];
          const NodeId pre = u.order[(k + m - 1) % m];
          Rational guard;
          if (c != pat.m) {
            guard = g * (c == pat.a ? xa : xb);
          } else if ((v == pat.gate_a && pre == pat.gate_b) || (v == pat.gate_b && pre == pat.gate_a)) {
            guard = theta;
          } else {
            guard = g * y;
          }
          u.entries.push_back(guard);
          u.entries.push_back(p.gamma[v]);
        }
        p.upsilon.push_back(std::move(u));
      }
      return p;
    };
    FixedPointPrediction p = build(lo);
    p.ranges.push_back({"theta", lo, hi});
    p.at = build;
    return p;
  }

  // lazy recursion over partitions
  const std::size_t nc = cover.size();
  std::vector<std::optional<Rational>> scale(nc);
  std::vector<char> visiting(nc, 0);
  std::vector<std::optional<std::size_t>> foreign_part(nc);
  for (std::size_t c = 0; c < nc; ++c) {
    if (part.members[c].empty()) {
      throw Error(ErrorCode::AssumptionViolated, "clique " + std::to_string(c) + " owns no node");
    }
    for (NodeId v : cover.cliques[c]) {
      if (part.assignment[v] != c) foreign_part[c] = part.assignment[v];
    }
  }
  std::function<Rational(std::size_t)> x_of = [&](std::size_t c) -> Rational {
    if (scale[c]) return *scale[c];
    if (visiting[c]) {
      throw Error(ErrorCode::AssumptionViolated, "cyclic dependency between partitions at clique " + std::to_string(c));
    }
    visiting[c] = 1;
    Rational own = 0;
    for (NodeId v : part.members[c]) own += demands[v] + g;
    Rational x;
    if (!foreign_part[c]) {
      x = 1 / own;
    } else {
      const std::size_t f = *foreign_part[c];
      const Rational xf = x_of(f);
      Rational span = 1 + g * xf;
      for (NodeId v : cover.cliques[c]) {
        if (part.assignment[v] != c) span -= (demands[v] + g) * xf;
      }
      x = span / (own + g);
    }
    visiting[c] = 0;
    scale[c] = x;
    return x;
  };

  Arrangement arr = arrangement ? *arrangement
                                : detail::default_arrangement(cover, [&](std::size_t c, NodeId v) { return part.assignment[v] != c; });
  detail::check_arrangement(cover, arr);
  for (std::size_t c = 0; c < nc; ++c) {
    if (!block_contiguous(std::span<const NodeId>(arr[c]), [&](NodeId v) { return part.assignment[v] == c; })) {
      throw Error(ErrorCode::UnsupportedArrangement,
                  "clique " + std::to_string(c) + " does not keep its own block contiguous");
    }
  }

  FixedPointPrediction p;
  p.kind = nc == 1 ? PredictionKind::SingleClique : PredictionKind::MultiCliqueRecursion;
  p.tie_resolved = tie;
  p.gamma.assign(cover.node_count(), Rational(0));
  for (NodeId v = 0; v < cover.node_count(); ++v) p.gamma[v] = demands[v] * x_of(part.assignment[v]);
  for (std::size_t c = 0; c < nc; ++c) {
    CliqueUpsilon u;
    u.order = arr[c];
    const std::size_t m = u.order.size();
    for (std::size_t k = 0; k < m; ++k) {
      const NodeId v = u.order[k];
      const NodeId pre = u.order[(k + m - 1) % m];
      const bool both_foreign = part.assignment[v] != c && part.assignment[pre] != c;
      u.entries.push_back(g * (both_foreign ? x_of(part.assignment[v]) : x_of(c)));
      u.entries.push_back(p.gamma[v]);
    }
    p.upsilon.push_back(std::move(u));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Slot layout

struct Arc {
  Rational start;  // in [0,1)
  Rational width;  // in (0,1]
};

inline bool arc_contains(const Arc& a, const Rational& point) {
  Rational d = point - a.start;
  if (d < 0) d += 1;
  return d < a.width;
}

// Absolute slot arcs, aligning cliques through already placed shared nodes.
inline std::vector<Arc> layout_arcs(const FixedPointPrediction& p, const CliqueCover& cover) {
  const std::size_t n = cover.node_count();
  std::vector<std::optional<Rational>> pos(n);
  std::vector<char> done(cover.size(), 0);
  auto wrap = [](Rational r) {
    while (r >= 1) r -= 1;
    while (r < 0) r += 1;
    return r;
  };
  for (std::size_t placed = 0; placed < cover.size(); ++placed) {
    // next clique: any undone clique with a placed member, else the first undone one
    std::size_t c = cover.size();
    for (std::size_t d = 0; d < cover.size() && c == cover.size(); ++d) {
      if (done[d]) continue;
      for (NodeId v : cover.cliques[d]) {
        if (pos[v]) {
          c = d;
          break;
        }
      }
    }
    if (c == cover.size()) c = std::find(done.begin(), done.end(), 0) - done.begin();
    const auto& u = p.upsilon[c];
    std::vector<Rational> rel(u.order.size());
    Rational t = 0;
    for (std::size_t k = 0; k < u.order.size(); ++k) {
      if (k > 0) t += u.entries[2 * k - 1] + u.entries[2 * k];
      rel[k] = t;
    }
    Rational offset = 0;
    for (std::size_t k = 0; k < u.order.size(); ++k) {
      if (pos[u.order[k]]) {
        offset = *pos[u.order[k]] - rel[k];
        break;
      }
    }
    for (std::size_t k = 0; k < u.order.size(); ++k) {
      const Rational at = wrap(rel[k] + offset);
      auto& slot = pos[u.order[k]];
      if (slot && *slot != at) {
        throw Error(ErrorCode::UnsupportedArrangement,
                    "shared node " + std::to_string(u.order[k]) + " placed inconsistently across cliques");
      }
      slot = at;
    }
    done[c] = 1;
  }
  std::vector<Arc> arcs(n);
  for (NodeId v = 0; v < n; ++v) arcs[v] = {*pos[v], p.gamma[v]};
  return arcs;
}

// Picks the predictor matching the clique structure; the arrangement defaults per predictor.
// Rejects arrangements whose per-clique vectors disagree on where a shared node starts.
inline FixedPointPrediction predict_fixed_point(const CliqueCover& cover, std::span<const Rational> demands,
                                                const Rational& delta,
                                                std::optional<Arrangement> arrangement = std::nullopt,
                                                std::optional<Rational> guard_override = std::nullopt) {
  FixedPointPrediction p;
  if (cover.size() == 1) {
    if (demands.size() != cover.node_count()) throw Error(ErrorCode::LengthMismatch, "one demand per node required");
    require_positive(demands, delta, false);
    p.kind = PredictionKind::SingleClique;
    const auto order = arrangement ? arrangement->front() : cover.cliques.front();
    detail::check_arrangement(cover, Arrangement{order});
    p.upsilon.push_back(single_clique_upsilon(order, demands, guard_override.value_or(delta)));
    p.gamma.assign(cover.node_count(), Rational(0));
    for (NodeId v : order) p.gamma[v] = p.upsilon[0].gamma_of(v);
  } else if (cover.size() == 2) {
    require_positive(demands, delta, false);
    p = fixed_point_two_clique(cover, demands, guard_override.value_or(delta), std::move(arrangement));
  } else {
    p = fixed_point_multiclique(cover, demands, delta, std::move(arrangement), guard_override);
  }
  layout_arcs(p, cover);
  return p;
}

// Largest per-node deviation of Θ (per clique) and Γ between a simulated state and a prediction.
inline double prediction_error(const SchedState& s, const FixedPointPrediction& p) {
  double err = 0.0;
  for (std::size_t c = 0; c < s.cover().size(); ++c) {
    const auto u = s.upsilon(c);
    const auto& q = p.upsilon.at(c);
    for (std::size_t k = 0; k < u.order.size(); ++k) {
      const NodeId v = u.order[k];
      err = std::max(err, std::abs(u.theta(k) - to_double(q.theta_of(v))));
      err = std::max(err, std::abs(u.gamma(k) - to_double(q.gamma_of(v))));
    }
  }
  return err;
}

inline Arrangement arrangement_of(const SchedState& s) {
  Arrangement a;
  for (std::size_t c = 0; c < s.cover().size(); ++c) a.push_back(s.firing_order(c));
  return a;
}

// ---------------------------------------------------------------------------
// Fairness

struct ScheduleView {
  Arrangement orders;         // per clique, firing order
  std::vector<double> gamma;  // per node slot width
};

inline ScheduleView view_of(const FixedPointPrediction& p) {
  ScheduleView v;
  v.orders = p.arrangement();
  for (const auto& g : p.gamma) v.gamma.push_back(to_double(g));
  return v;
}

inline ScheduleView view_of(const SchedState& s) {
  ScheduleView v;
  for (std::size_t c = 0; c < s.cover().size(); ++c) v.orders.push_back(s.firing_order(c));
  for (NodeId i = 0; i < s.node_count(); ++i) v.gamma.push_back(cyclic_diff(s.start_phase(i), s.end_phase(i)));
  return v;
}

struct FairnessVerdict {
  bool partial = true;
  bool global = true;
  std::vector<std::string> witnesses;
};

inline FairnessVerdict check_fairness(const ScheduleView& s, const CliqueCover& cover,
                                      std::span<const double> demands, double delta, double tol = 1e-9) {
  FairnessVerdict out;
  for (std::size_t c = 0; c < cover.size(); ++c) {
    const auto& order = s.orders[c];
    const std::size_t m = order.size();
    for (std::size_t k = 0; k < m; ++k) {
      const NodeId i = order[k], j = order[(k + m - 1) % m];
      if (i == j || !cover.is_local(i) || !cover.is_local(j)) continue;
      if (std::abs(s.gamma[i] / demands[i] - s.gamma[j] / demands[j]) > tol) {
        out.partial = false;
        out.global = false;
        out.witnesses.push_back("partial: nodes " + std::to_string(j) + "," + std::to_string(i) + " in clique " +
                                std::to_string(c));
      }
    }
    const auto& locals = cover.local[c];
    for (std::size_t a = 0; a < locals.size(); ++a) {
      for (std::size_t b = a + 1; b < locals.size(); ++b) {
        const NodeId i = locals[a], j = locals[b];
        if (std::abs(s.gamma[i] / demands[i] - s.gamma[j] / demands[j]) > tol) {
          out.global = false;
          out.witnesses.push_back("global: locals " + std::to_string(i) + "," + std::to_string(j) +
                                  " in clique " + std::to_string(c));
        }
      }
    }
  }
  for (NodeId i = 0; i < cover.node_count(); ++i) {
    double bound = std::numeric_limits<double>::infinity();
    for (std::size_t c : cover.membership[i]) {
      double total = 0.0;
      for (NodeId j : cover.cliques[c]) total += demands[j] + delta;
      bound = std::min(bound, demands[i] / total);
    }
    if (s.gamma[i] < bound - tol) {
      out.global = false;
      out.witnesses.push_back("global: node " + std::to_string(i) + " share " + std::to_string(s.gamma[i]) +
                              " below " + std::to_string(bound));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Coloring

namespace detail {

// Minimum stabbing of half-open intervals [l, r); returns the chosen points.
inline std::vector<Rational> stab_intervals(std::vector<std::pair<Rational, Rational>> iv) {
  std::sort(iv.begin(), iv.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
  std::vector<Rational> points;
  std::vector<char> hit(iv.size(), 0);
  for (std::size_t k = 0; k < iv.size(); ++k) {
    if (hit[k]) continue;
    // latest left end among open intervals starting before this right end
    Rational point = iv[k].first;
    for (std::size_t q = k; q < iv.size(); ++q) {
      if (!hit[q] && iv[q].first < iv[k].second) point = std::max(point, iv[q].first);
    }
    points.push_back(point);
    for (std::size_t q = k; q < iv.size(); ++q) {
      if (!hit[q] && iv[q].first <= point && point < iv[q].second) hit[q] = 1;
    }
  }
  return points;
}

}  // namespace detail

// Exact minimum set of instants meeting every arc.
inline std::vector<Rational> stab_arcs(const std::vector<Arc>& arcs) {
  std::vector<Rational> best;
  bool first = true;
  for (const auto& seed : arcs) {
    const Rational p = seed.start;
    std::vector<std::pair<Rational, Rational>> rest;
    for (const auto& a : arcs) {
      if (arc_contains(a, p)) continue;
      Rational l = a.start - p;
      if (l < 0) l += 1;
      rest.push_back({l, l + a.width});
    }
    auto pts = detail::stab_intervals(std::move(rest));
    for (auto& q : pts) {
      q += p;
      if (q >= 1) q -= 1;
    }
    pts.insert(pts.begin(), p);
    if (first || pts.size() < best.size()) {
      best = std::move(pts);
      first = false;
    }
  }
  return best;
}

inline std::optional<std::size_t> chromatic_number(const Topology& t, std::size_t limit = 12) {
  const std::size_t n = t.node_count();
  if (n > limit) return std::nullopt;
  std::vector<int> color(n, -1);
  std::function<bool(NodeId, int)> paint = [&](NodeId v, int k) {
    if (v == n) return true;
    for (int c = 0; c < k; ++c) {
      bool ok = true;
      for (NodeId u : t.neighbors(v)) {
        if (u < v && color[u] == c) {
          ok = false;
          break;
        }
      }
      if (!ok) continue;
      color[v] = c;
      if (paint(v + 1, k)) return true;
    }
    color[v] = -1;
    return false;
  };
  for (std::size_t k = 1; k <= n; ++k) {
    if (paint(0, static_cast<int>(k))) return k;
  }
  return n;
}

struct ColoringResult {
  std::vector<std::size_t> color;  // per node
  std::size_t colors = 0;
  bool proper = false;
  std::optional<std::size_t> chromatic;
  std::optional<bool> minimal;
  std::optional<ErrorCode> skipped;  // TooLargeForExactChromatic when the verdict was not attempted
};

inline ColoringResult coloring_from_arcs(const std::vector<Arc>& arcs, const Topology& t) {
  ColoringResult r;
  const auto points = stab_arcs(arcs);
  r.colors = points.size();
  r.color.assign(arcs.size(), 0);
  for (NodeId v = 0; v < arcs.size(); ++v) {
    for (std::size_t k = 0; k < points.size(); ++k) {
      if (arc_contains(arcs[v], points[k])) {
        r.color[v] = k;
        break;
      }
    }
  }
  r.proper = true;
  for (const auto& e : t.edges()) {
    if (r.color[e.a] == r.color[e.b]) r.proper = false;
  }
  r.chromatic = chromatic_number(t);
  if (r.chromatic) {
    r.minimal = *r.chromatic == r.colors;
  } else {
    r.skipped = ErrorCode::TooLargeForExactChromatic;
  }
  return r;
}

// Colors from the prediction's zero-guard limit: nodes transmitting at a common instant share a color.
inline ColoringResult schedule_to_coloring(const CliqueCover& cover, std::span<const Rational> demands,
                                           const Rational& delta, const Topology& t,
                                           std::optional<Arrangement> arrangement = std::nullopt) {
  if (!arrangement) arrangement = predict_fixed_point(cover, demands, delta).arrangement();
  auto p = predict_fixed_point(cover, demands, delta, std::move(arrangement), Rational(0));
  if (p.at) p = p.at(p.ranges.front().lo);
  return coloring_from_arcs(layout_arcs(p, cover), t);
}

inline ColoringResult schedule_to_coloring(const SchedState& s, const Topology& t) {
  std::vector<Arc> arcs;
  for (NodeId i = 0; i < s.node_count(); ++i) {
    // phases are floating point; snap to a fine rational grid for exact comparisons
    auto snap = [](double x) { return Rational(static_cast<long long>(std::llround(x * 1e12)), 1'000'000'000'000LL); };
    Rational start = 1 - snap(s.start_phase(i));
    if (start >= 1) start -= 1;
    arcs.push_back({start, snap(cyclic_diff(s.start_phase(i), s.end_phase(i)))});
  }
  return coloring_from_arcs(arcs, t);
}

}  // namespace pco
