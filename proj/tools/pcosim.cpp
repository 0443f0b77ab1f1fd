#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "pco/harness.hpp"

namespace h = pco::harness;

namespace {

struct Options {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> trials;
  std::string out;
  std::string trace;  // sync: event log of the first trial
  std::string dump;   // sched: per-frame timers of the first trial
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "experiment config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--preset", o.preset, "line-accuracy | star-accuracy | histogram-f | two-clique | single-clique");
  cmd->add_option("--seed", o.seed, "base seed");
  cmd->add_option("--trials", o.trials, "number of trials");
  cmd->add_option("--out", o.out, "directory for records CSV and summary.json");
}

h::ExperimentSpec resolve(const Options& o) {
  h::ExperimentSpec s;
  if (!o.preset.empty()) s = h::preset(o.preset);
  if (!o.config.empty()) s = h::load_config(o.config, s);
  if (o.seed) s.base_seed = *o.seed;
  if (o.trials) {
    if (*o.trials == 0) throw pco::Error(pco::ErrorCode::ConfigError, "--trials must be at least 1");
    s.trials = *o.trials;
  }
  return s;
}

void require_kind(const h::ExperimentSpec& s, std::initializer_list<h::Kind> allowed, const char* cmd) {
  for (h::Kind k : allowed) {
    if (s.kind == k) return;
  }
  throw pco::Error(pco::ErrorCode::ConfigError,
                   std::string("kind '") + h::to_string(s.kind) + "' does not belong to '" + cmd + "'");
}

int finish(const h::ExperimentResult& res, const Options& o) {
  if (!o.out.empty()) h::emit_results(res, o.out);
  std::cout << h::summary_json(res).dump(2) << "\n";
  for (const auto& f : res.check_failures) std::cerr << "check failed: " << f << "\n";
  return res.checks_passed ? 0 : 3;
}

int cmd_sync(Options& o) {
  auto s = resolve(o);
  if (o.config.empty() && o.preset.empty()) throw pco::Error(pco::ErrorCode::ConfigError, "sync needs --config");
  require_kind(s, {h::Kind::Sync, h::Kind::SyncDelay}, "sync");
  if (!s.topology) throw pco::Error(pco::ErrorCode::ConfigError, "sync needs a topology");
  if (!o.trace.empty()) {
    const auto topo = std::make_shared<const pco::Topology>(s.topology->build());
    auto state = pco::init_sync(topo, s.sync, s.base_seed);
    state.enable_trace(true);
    state.run_until_fixed();
    h::write_file(o.trace, h::trace_jsonl(state.trace()));
  }
  return finish(h::run_experiment(s), o);
}

int cmd_sched(Options& o) {
  auto s = resolve(o);
  if (o.config.empty() && o.preset.empty()) throw pco::Error(pco::ErrorCode::ConfigError, "sched needs --config or --preset");
  require_kind(s, {h::Kind::Sched, h::Kind::HistogramF}, "sched");
  if (!s.topology) throw pco::Error(pco::ErrorCode::ConfigError, "sched needs a topology");
  if (!o.dump.empty()) {
    const pco::Topology topo = s.topology->build();
    const auto cover = std::make_shared<const pco::CliqueCover>(pco::maximal_cliques(topo));
    auto state = pco::init_schedule(cover, h::sched_config(s, topo.node_count()), s.init,
                                    pco::CounterRng::derive(s.base_seed, 0));
    state.enable_dump(true);
    state.run_frames();
    h::write_file(o.dump, h::schedule_jsonl(state.dump()));
  }
  return finish(h::run_experiment(s), o);
}

int cmd_spectral(Options& o) {
  auto s = resolve(o);
  if (o.config.empty()) throw pco::Error(pco::ErrorCode::ConfigError, "spectral needs --config");
  s.kind = h::Kind::Spectral;
  return finish(h::run_experiment(s), o);
}

int cmd_montecarlo(Options& o) {
  auto s = resolve(o);
  if (o.config.empty() && o.preset.empty()) {
    throw pco::Error(pco::ErrorCode::ConfigError, "montecarlo needs --config or --preset");
  }
  return finish(h::run_experiment(s), o);
}

nlohmann::json bounds_json(const pco::Topology& t) {
  const auto b = h::head_bounds(t);
  return {{"nodes", t.node_count()}, {"eccentricity", b.eccentricity}, {"best", b.best}, {"worst", b.worst}};
}

int cmd_bounds(Options& o) {
  auto s = resolve(o);
  nlohmann::json out;
  if (s.kind == h::Kind::MonteCarloLine || s.kind == h::Kind::MonteCarloStar) {
    out = nlohmann::json::array();
    for (std::size_t n : s.sizes) {
      const auto spec = s.kind == h::Kind::MonteCarloStar
                            ? h::star_topology(n, s.tau_max)
                            : h::line_topology(n, s.tau_max / static_cast<double>(n - 1));
      out.push_back(bounds_json(spec.build()));
    }
  } else {
    if (!s.topology) throw pco::Error(pco::ErrorCode::ConfigError, "bounds needs a topology");
    out = bounds_json(s.topology->build());
  }
  if (!o.out.empty()) {
    std::filesystem::create_directories(o.out);
    h::write_file(std::filesystem::path(o.out) / "bounds.json", out.dump(2) + "\n");
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pulse-coupled oscillator sync and scheduling experiments"};
  app.require_subcommand(1);
  Options o;
  auto* sync = app.add_subcommand("sync", "run delayed or undelayed synchronization trials");
  auto* sched = app.add_subcommand("sched", "run scheduling trials and compare to the predicted fixed point");
  auto* spectral = app.add_subcommand("spectral", "eigenvalues and fixed-point prediction of a clique system");
  auto* mc = app.add_subcommand("montecarlo", "run a seeded campaign from a preset or config");
  auto* bounds = app.add_subcommand("bounds", "best and worst case head eccentricities");
  for (auto* c : {sync, sched, spectral, mc, bounds}) add_common(c, o);
  sync->add_option("--trace", o.trace, "write the first trial's event trace as JSONL");
  sched->add_option("--dump", o.dump, "write the first trial's per-frame timers as JSONL");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  try {
    if (*sync) return cmd_sync(o);
    if (*sched) return cmd_sched(o);
    if (*spectral) return cmd_spectral(o);
    if (*mc) return cmd_montecarlo(o);
    return cmd_bounds(o);
  } catch (const pco::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == pco::ErrorCode::IoError ? 1 : 2;
  }
}
