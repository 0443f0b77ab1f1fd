#include <gtest/gtest.h>

#include <numbers>

#include "oracles.hpp"
#include "pco/harness.hpp"
#include "pco/spectral.hpp"

using namespace pco;

namespace {

std::vector<Rational> equal(std::size_t n, long long d = 4) { return std::vector<Rational>(n, Rational(d)); }

std::vector<double> as_double(const std::vector<Rational>& v) {
  std::vector<double> out;
  for (const auto& x : v) out.push_back(to_double(x));
  return out;
}

std::size_t middle_clique(const CliqueCover& c) {
  for (std::size_t q = 0; q < c.size(); ++q) {
    if (c.contains(q, 4)) return q;
  }
  return 0;
}

}  // namespace

TEST(UBlock, ExactEntries) {
  const auto u = u_block(Rational(4), Rational(1), Rational(1, 2));
  const Rational expect[3][3] = {{Rational(7, 12), Rational(1, 12), Rational(1, 12)},
                                 {Rational(1, 3), Rational(5, 6), Rational(1, 3)},
                                 {Rational(1, 12), Rational(1, 12), Rational(7, 12)}};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) EXPECT_EQ(u[r][c], expect[r][c]);
  }
  for (int c = 0; c < 3; ++c) EXPECT_EQ(u[0][c] + u[1][c] + u[2][c], Rational(1));
}

TEST(CliqueSystem, ZeroBetaIsIdentity) {
  const std::vector<double> d{4, 4, 4};
  const auto s = build_clique_system(d, 1.0, 0.0);
  EXPECT_TRUE(s.round.isApprox(Eigen::MatrixXd::Identity(6, 6), 1e-15));
}

TEST(CliqueSystem, RejectsBadInput) {
  const std::vector<double> one{4};
  const std::vector<double> two{4, 4};
  EXPECT_THROW(build_clique_system(one, 1.0, 0.5), Error);
  EXPECT_THROW(build_clique_system(two, 0.0, 0.5), Error);
  EXPECT_THROW(build_clique_system(two, 1.0, 1.0), Error);
}

TEST(CliqueSystem, ColumnStochasticWithUnitSpectralRadius) {
  CounterRng rng(71);
  for (int k = 0; k < 100; ++k) {
    std::vector<double> d(2 + rng.below(9));
    for (double& x : d) x = rng.uniform(0.5, 10.0);
    const auto s = build_clique_system(d, rng.uniform(0.1, 2.0), rng.uniform(0.05, 0.95));
    for (const auto& m : s.node_update) {
      EXPECT_LE((m.colwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
    }
    EXPECT_LE((s.round.colwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
    const auto r = eigenvalues(s);
    EXPECT_NEAR(std::abs(r.eigen.front().value), 1.0, 1e-9);
    EXPECT_LT(r.lambda2, 1.0);
    for (const auto& p : r.eigen) EXPECT_LT(p.residual, 1e-6);
  }
}

TEST(CharPoly, TwoNodesMatchesCofactorExpansion) {
  const std::vector<double> d{4, 4};
  for (double beta : {0.2, 0.5, 0.9}) {
    const auto s = build_clique_system(d, 1.0, beta);
    const auto r = eigenvalues(s);
    ASSERT_EQ(r.step_eigen.size(), 4u);
    for (const auto& l : r.step_eigen) {
      EXPECT_LT(std::abs(oracle::char_poly_n2(l, beta, r.mu)), 1e-9);
      EXPECT_LT(std::abs(char_poly_eval(l, 2, beta, r.mu)), 1e-9);
    }
    // both are monic of degree 4 with the same roots
    CounterRng rng(5);
    for (int k = 0; k < 10; ++k) {
      const Complex z(rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0));
      EXPECT_LT(std::abs(oracle::char_poly_n2(z, beta, r.mu) - char_poly_eval(z, 2, beta, r.mu)), 1e-9);
    }
  }
}

TEST(CharPoly, RootAtOneAndRootsOfUnity) {
  for (std::size_t n : {2u, 5u, 16u}) {
    EXPECT_EQ(std::abs(char_poly_eval(Complex(1.0, 0.0), n, 0.5, 1.0 / 6.0)), 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      const Complex w = std::polar(1.0, 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n));
      EXPECT_LT(std::abs(char_poly_eval(w, n, 0.5, 0.0)), 1e-12);
    }
  }
}

TEST(CharPoly, DenseEigenvaluesAreRoots) {
  for (std::size_t n : {3u, 8u, 12u}) {
    const std::vector<double> d(n, 4.0);
    const auto r = eigenvalues(build_clique_system(d, 1.0, 0.5));
    EXPECT_LT(r.char_poly_max_residual, 1e-6);
  }
}

TEST(Perturbation, ZeroMuGivesRootsOfUnity) {
  for (const auto& p : perturbation_roots(8, 0.5, 0.0)) {
    EXPECT_NEAR(std::abs(p.lambda), 1.0, 1e-12);
    EXPECT_LT(std::abs(ipow(p.lambda, 8) - 1.0), 1e-12);
  }
}

TEST(Perturbation, ResidualShrinksWithMu) {
  double prev = std::numeric_limits<double>::infinity();
  for (double mu : {0.2, 0.1, 0.05, 0.02}) {
    double worst = 0.0;
    for (const auto& p : perturbation_roots(16, 0.5, mu)) {
      worst = std::max(worst, std::abs(char_poly_eval(p.lambda, 16, 0.5, mu)));
    }
    EXPECT_LT(worst, prev) << "mu " << mu;
    prev = worst;
  }
}

TEST(Perturbation, SlowestRootResidual) {
  const auto at = [](double mu) {
    const auto r = perturbation_roots(16, 0.5, mu);
    return std::abs(char_poly_eval(r.back().lambda, 16, 0.5, mu));
  };
  EXPECT_LT(at(1.0 / 6.0), 1e-2);
  EXPECT_LT(at(1.0 / 60.0), 1e-3);
}

TEST(Perturbation, LastRootHasLargestModulus) {
  for (std::size_t n : {4u, 8u, 16u}) {
    const auto roots = perturbation_roots(n, 0.5, 1.0 / 6.0);
    double best = 0.0;
    for (const auto& p : roots) {
      if (p.k != 0) best = std::max(best, std::abs(p.lambda));
    }
    EXPECT_NEAR(std::abs(roots.back().lambda), best, 1e-12);
  }
}

TEST(Lambda2, ApproximationAtEightAndConvergence) {
  EXPECT_NEAR(lambda2_approx(8, 0.5, 4.0, 1.0), 1.0 - std::numbers::pi * std::numbers::pi / 384.0, 1e-15);
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t n : {8u, 16u, 32u}) {
    const std::vector<double> d(n, 4.0);
    const auto r = eigenvalues(build_clique_system(d, 1.0, 0.5));
    ASSERT_TRUE(r.lambda2_approx.has_value());
    const double gap = std::abs(r.lambda2 - *r.lambda2_approx);
    EXPECT_LT(gap, prev);
    prev = gap;
  }
}

TEST(SingleClique, ExactFixedPoint) {
  const auto p = fixed_point_single_clique(equal(3), Rational(1));
  const auto& e = p.upsilon[0].entries;
  ASSERT_EQ(e.size(), 6u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(e[2 * k], Rational(1, 15));
    EXPECT_EQ(e[2 * k + 1], Rational(4, 15));
  }
  EXPECT_EQ(p.upsilon[0].sum(), Rational(1));

  const std::vector<Rational> d{1, 2, 5};
  const auto z = fixed_point_single_clique(d, Rational(0));
  EXPECT_EQ(z.gamma, (std::vector<Rational>{Rational(1, 8), Rational(1, 4), Rational(5, 8)}));
  EXPECT_EQ(z.upsilon[0].theta_of(0), Rational(0));

  CounterRng rng(3);
  for (int k = 0; k < 50; ++k) {
    std::vector<Rational> r;
    for (std::size_t i = 0, n = 2 + rng.below(8); i < n; ++i) r.emplace_back(1 + static_cast<long long>(rng.below(97)), 7);
    EXPECT_EQ(fixed_point_single_clique(r, Rational(1 + static_cast<long long>(rng.below(5)), 3)).upsilon[0].sum(),
              Rational(1));
  }
  EXPECT_THROW(fixed_point_single_clique(equal(1), Rational(1)), Error);
}

TEST(TwoClique, OneGateway) {
  const auto cover = maximal_cliques(harness::clique_chain_topology({4, 3}).build());
  const auto p = predict_fixed_point(cover, equal(6), Rational(1));
  EXPECT_EQ(p.kind, PredictionKind::TwoClique);
  EXPECT_EQ(p.gamma[3], Rational(1, 5));
  for (const auto& u : p.upsilon) {
    EXPECT_EQ(u.sum(), Rational(1));
    if (u.order.size() == 4) {
      for (NodeId v : u.order) EXPECT_EQ(u.theta_of(v), Rational(1, 20));
    }
  }
}

TEST(MultiClique, StarGetsHalf) {
  const auto cover = maximal_cliques(harness::star_topology(6, 0.0).build());
  const auto p = predict_fixed_point(cover, equal(6), Rational(1));
  for (const auto& g : p.gamma) EXPECT_EQ(g, Rational(2, 5));
}

TEST(MultiClique, ThreeCliqueChainIsSetValued) {
  const auto cover = maximal_cliques(harness::clique_chain_topology({4, 3, 4}).build());
  const auto p = predict_fixed_point(cover, equal(9), Rational(1));
  ASSERT_EQ(p.kind, PredictionKind::SetValued);
  ASSERT_EQ(p.ranges.size(), 1u);
  EXPECT_EQ(p.ranges[0].lo, Rational(1, 20));
  EXPECT_EQ(p.ranges[0].hi, Rational(3, 10));
  const std::size_t mid = middle_clique(cover);
  for (std::size_t c = 0; c < cover.size(); ++c) {
    if (c == mid) continue;
    for (NodeId v : p.upsilon[c].order) {
      EXPECT_EQ(p.upsilon[c].theta_of(v), Rational(1, 20));
      EXPECT_EQ(p.upsilon[c].gamma_of(v), Rational(1, 5));
    }
  }
  for (const Rational& th : {Rational(1, 20), Rational(1, 8), Rational(3, 10)}) {
    const auto q = p.at(th);
    EXPECT_EQ(q.gamma[4], Rational(2, 5) - Rational(2, 3) * th);
    EXPECT_EQ(q.upsilon[mid].sum(), Rational(1));
    EXPECT_EQ(q.upsilon[mid].theta_of(4), Rational(1, 10) - th / 6);
  }
}

TEST(MultiClique, TreeWithHeavierParents) {
  // 0 -> {1, 2}, 1 -> {3, 4}
  const std::vector<WeightedEdge> e{{0, 1, 0.0}, {0, 2, 0.0}, {1, 3, 0.0}, {1, 4, 0.0}};
  const auto cover = maximal_cliques(build_topology(5, e));
  const std::vector<Rational> d{9, 5, 4, 2, 1};
  const auto p = predict_fixed_point(cover, d, Rational(1));
  EXPECT_NE(p.kind, PredictionKind::SetValued);
  EXPECT_FALSE(p.tie_resolved);
  for (const auto& u : p.upsilon) EXPECT_EQ(u.sum(), Rational(1));
}

TEST(Fairness, SingleCliqueIsFair) {
  const auto cover = maximal_cliques(harness::clique_topology(3).build());
  const auto v = check_fairness(view_of(fixed_point_single_clique(equal(3), Rational(1))), cover,
                                as_double(equal(3)), 1.0);
  EXPECT_TRUE(v.partial);
  EXPECT_TRUE(v.global);
  EXPECT_TRUE(v.witnesses.empty());
}

TEST(Fairness, ChainEndpoints) {
  const auto cover = maximal_cliques(harness::clique_chain_topology({4, 3, 4}).build());
  const auto p = predict_fixed_point(cover, equal(9), Rational(1));
  const auto d = as_double(equal(9));
  // θ = 1/20 leaves node 4 with 11/30 ≥ 4/15; θ = 3/10 leaves it 1/5
  const auto low = check_fairness(view_of(p.at(Rational(1, 20))), cover, d, 1.0);
  EXPECT_TRUE(low.partial);
  EXPECT_TRUE(low.global);
  const auto high = check_fairness(view_of(p.at(Rational(3, 10))), cover, d, 1.0);
  EXPECT_TRUE(high.partial);
  EXPECT_FALSE(high.global);
  ASSERT_FALSE(high.witnesses.empty());
  EXPECT_NE(high.witnesses.front().find("node 4"), std::string::npos);
}

TEST(Coloring, Examples) {
  struct Case {
    harness::TopologySpec spec;
    std::size_t colors;
  };
  const Case cases[] = {{harness::line_topology(3, 0.0), 2},
                        {harness::clique_topology(3), 3},
                        {harness::star_topology(5, 0.0), 2}};
  for (const auto& c : cases) {
    const auto t = c.spec.build();
    const auto cover = maximal_cliques(t);
    const auto r = schedule_to_coloring(cover, equal(t.node_count()), Rational(1), t);
    EXPECT_TRUE(r.proper);
    EXPECT_EQ(r.colors, c.colors);
    ASSERT_TRUE(r.minimal.has_value());
    EXPECT_TRUE(*r.minimal);
  }
}

TEST(Coloring, ChromaticNumberMatchesBruteForce) {
  CounterRng rng(83);
  for (int k = 0; k < 60; ++k) {
    const auto t = oracle::random_connected(rng, 1 + rng.below(8), rng.uniform(0.1, 0.9));
    EXPECT_EQ(chromatic_number(t), oracle::chromatic_number(t));
  }
  const auto big = harness::line_topology(13, 0.0).build();
  EXPECT_FALSE(chromatic_number(big).has_value());
}

TEST(Prediction, SimulationAgreesOnGateway) {
  const auto topo = harness::clique_chain_topology({4, 3}).build();
  const auto cover = std::make_shared<const CliqueCover>(maximal_cliques(topo));
  SchedConfig cfg;
  cfg.beta = 0.5;
  cfg.delta = 1.0;
  cfg.demands.assign(6, 4.0);
  auto s = init_schedule(cover, cfg, InitMode::Random, 9);
  ASSERT_TRUE(s.run_frames().converged);
  const auto p = predict_fixed_point(*cover, equal(6), Rational(1), arrangement_of(s));
  EXPECT_LT(prediction_error(s, p), 1e-6);
}
