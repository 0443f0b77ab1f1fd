#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "pco/harness.hpp"

using namespace pco;
namespace h = pco::harness;
using h::json;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::InvalidConfig;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("pco_harness_" + name + "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST(HeadBounds, Line) {
  const double tau_max = 1e-4;
  for (std::size_t n : {3u, 5u, 9u}) {
    const auto b = h::head_bounds(h::line_topology(n, tau_max / static_cast<double>(n - 1)).build());
    EXPECT_NEAR(b.best, tau_max / 2.0, 1e-15);
    EXPECT_NEAR(b.worst, tau_max, 1e-15);
  }
}

TEST(HeadBounds, TwoNodesAndStar) {
  const auto pair = h::head_bounds(h::line_topology(2, 0.03).build());
  EXPECT_DOUBLE_EQ(pair.best, 0.03);
  EXPECT_DOUBLE_EQ(pair.worst, 0.03);
  const auto star = h::head_bounds(h::star_topology(6, 0.01).build());
  EXPECT_DOUBLE_EQ(star.eccentricity[0], 0.01);
  for (NodeId v = 1; v < 6; ++v) EXPECT_DOUBLE_EQ(star.eccentricity[v], 0.02);
}

TEST(Config, DottedAndNestedKeysAgree) {
  const auto flat = json::parse(R"({"kind": "sched", "topology.nodes": 3, "topology.edges": [[0,1],[1,2],[0,2]],
      "sched.beta": 0.25, "sched.delta": "1/2", "sched.demands": ["3/2", 2, 0.1], "seeds.base": 9, "seeds.trials": 4})");
  const auto nested = json::parse(R"({"kind": "sched", "topology": {"nodes": 3, "edges": [[0,1],[1,2],[0,2]]},
      "sched": {"beta": 0.25, "delta": "1/2", "demands": ["3/2", 2, 0.1]}, "seeds": {"base": 9, "trials": 4}})");
  for (const json* doc : {&flat, &nested}) {
    const auto s = h::apply_config({}, *doc);
    EXPECT_EQ(s.kind, h::Kind::Sched);
    EXPECT_EQ(s.topology->build().edges().size(), 3u);
    EXPECT_DOUBLE_EQ(s.beta, 0.25);
    EXPECT_EQ(s.delta, Rational(1, 2));
    EXPECT_EQ(s.demands, (std::vector<Rational>{Rational(3, 2), Rational(2), Rational(1, 10)}));
    EXPECT_EQ(s.base_seed, 9u);
    EXPECT_EQ(s.trials, 4u);
  }
}

TEST(Config, DecimalsBecomeShortRationals) {
  const auto s = h::apply_config({}, json::parse(R"({"sched": {"delta": 1e-05, "demands": [0.3, 2.5]}})"));
  EXPECT_EQ(s.delta, Rational(1, 100000));
  EXPECT_EQ(s.demands, (std::vector<Rational>{Rational(3, 10), Rational(5, 2)}));
}

TEST(Config, SyncKeysAndPresetOverride) {
  const auto doc = json::parse(R"({"preset": "line-accuracy", "sync": {"alpha": 0.1, "rho": 0.02, "max_periods": 50},
      "seeds": {"trials": 3}})");
  const auto s = h::apply_config({}, doc);
  EXPECT_EQ(s.kind, h::Kind::MonteCarloLine);
  EXPECT_DOUBLE_EQ(s.sync.alpha, 0.1);
  EXPECT_DOUBLE_EQ(*s.sync.rho, 0.02);
  EXPECT_DOUBLE_EQ(s.sync.max_periods, 50.0);
  EXPECT_EQ(s.trials, 3u);
  EXPECT_EQ(s.sizes.size(), 5u);
}

TEST(Config, RejectsBadValues) {
  EXPECT_EQ(code_of([] { h::apply_config({}, json::parse(R"({"kind": "nonsense"})")); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([] { h::apply_config({}, json::parse(R"({"sched.beta": "high"})")); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([] { h::apply_config({}, json::parse(R"({"sched.demands": ["1/0"]})")); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([] { h::apply_config({}, json::parse(R"({"seeds.trials": 0})")); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([] { h::apply_config({}, json::parse(R"({"preset": "nope"})")); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([] { h::apply_config({}, json::parse("[1, 2]")); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([] { h::load_config("/nonexistent/config.json"); }), ErrorCode::IoError);
}

TEST(Config, DemandCountMustMatch) {
  h::ExperimentSpec s;
  s.demands = {Rational(1), Rational(2)};
  EXPECT_EQ(code_of([&] { h::resolved_demands(s, 3); }), ErrorCode::ConfigError);
  s.demands = {Rational(4)};
  EXPECT_EQ(h::resolved_demands(s, 3), std::vector<Rational>(3, Rational(4)));
}

TEST(Output, EmptyRecordsGiveHeaderOnly) {
  EXPECT_EQ(h::records_csv({}, "delta_max"), "seed,converged,time,delta_max,head\n");
  h::ExperimentResult res;
  const auto dir = scratch("empty");
  const auto files = h::emit_results(res, dir);
  EXPECT_EQ(slurp(files.front()), "seed,converged,time,delta_max,head\n");
  std::filesystem::remove_all(dir);
}

TEST(Output, RerunsAreByteIdentical) {
  h::ExperimentSpec spec;
  spec.kind = h::Kind::SyncDelay;
  spec.topology = h::line_topology(4, 0.01);
  spec.sync.alpha = 0.2;
  spec.trials = 5;
  spec.base_seed = 4;
  const auto a = scratch("a"), b = scratch("b");
  const auto fa = h::emit_results(h::run_experiment(spec), a);
  const auto fb = h::emit_results(h::run_experiment(spec), b);
  ASSERT_EQ(fa.size(), fb.size());
  for (std::size_t k = 0; k < fa.size(); ++k) EXPECT_EQ(slurp(fa[k]), slurp(fb[k]));
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
}

TEST(Output, HistogramBinsCoverTheThetaRange) {
  auto spec = h::preset("histogram-f");
  spec.trials = 40;
  const auto res = h::run_experiment(spec);
  const auto& hist = res.summary.at("histogram");
  ASSERT_EQ(hist.size(), 25u);
  EXPECT_NEAR(hist.front().at("lo").get<double>(), 0.05, 1e-12);
  EXPECT_NEAR(hist.back().at("hi").get<double>(), 0.30, 1e-12);
  std::size_t total = 0;
  for (const auto& b : hist) total += b.at("count").get<std::size_t>();
  EXPECT_EQ(total + res.summary.at("outside_range").get<std::size_t>(), res.summary.at("converged").get<std::size_t>());
  EXPECT_EQ(res.summary.at("outside_range").get<std::size_t>(), 0u);
}

TEST(Aggregate, EmpiricalMeanRespectsHeadBound) {
  for (const auto& spec : {h::line_topology(5, 0.005), h::star_topology(5, 0.005)}) {
    const auto topo = std::make_shared<const Topology>(spec.build());
    SyncConfig cfg;
    cfg.alpha = 0.2;
    const auto recs = h::sync_trials(topo, cfg, 33, 40);
    const auto a = h::sync_aggregate(recs, *topo);
    EXPECT_GT(a.at("converged").get<std::size_t>(), 30u);
    EXPECT_LE(a.at("headed_mean").get<double>(), a.at("expected_bound").get<double>() + 1e-9);
    const auto ecc = h::head_bounds(*topo).eccentricity;
    for (const auto& r : recs) {
      if (r.converged && r.head) {
        EXPECT_LE(r.metric, ecc[*r.head] + 1e-9);
      }
    }
  }
}

TEST(Aggregate, Quantile) {
  EXPECT_DOUBLE_EQ(h::quantile({3, 1, 2, 4}, 0.5), 2.0);
  EXPECT_DOUBLE_EQ(h::quantile({3, 1, 2, 4}, 1.0), 4.0);
  EXPECT_TRUE(std::isnan(h::quantile({}, 0.5)));
}

TEST(Presets, KindsRoundTrip) {
  for (auto k : {h::Kind::Sync, h::Kind::SyncDelay, h::Kind::Sched, h::Kind::Spectral, h::Kind::MonteCarloLine,
                 h::Kind::MonteCarloStar, h::Kind::HistogramF}) {
    EXPECT_EQ(h::parse_kind(h::to_string(k)), k);
  }
  for (const char* name : {"line-accuracy", "star-accuracy", "histogram-f", "two-clique", "single-clique"}) {
    EXPECT_EQ(h::preset(name).preset, name);
  }
}

TEST(Presets, SingleCliqueRunMatchesPrediction) {
  auto spec = h::preset("single-clique");
  spec.trials = 5;
  const auto res = h::run_experiment(spec);
  EXPECT_TRUE(res.checks_passed);
  EXPECT_EQ(res.summary.at("matched_prediction").get<std::size_t>(), 5u);
}
