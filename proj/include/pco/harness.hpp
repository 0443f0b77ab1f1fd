#pragma once

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pco/error.hpp"
#include "pco/rational.hpp"
#include "pco/rng.hpp"
#include "pco/sched.hpp"
#include "pco/spectral.hpp"
#include "pco/sync.hpp"
#include "pco/topology.hpp"

namespace pco::harness {

using json = nlohmann::json;

enum class Kind { Sync, SyncDelay, Sched, Spectral, MonteCarloLine, MonteCarloStar, HistogramF };

inline const char* to_string(Kind k) {
  switch (k) {
    case Kind::Sync: return "sync";
    case Kind::SyncDelay: return "sync-delay";
    case Kind::Sched: return "sched";
    case Kind::Spectral: return "spectral";
    case Kind::MonteCarloLine: return "montecarlo-line";
    case Kind::MonteCarloStar: return "montecarlo-star";
    case Kind::HistogramF: return "histogram-f";
  }
  return "?";
}

inline Kind parse_kind(const std::string& s) {
  for (Kind k : {Kind::Sync, Kind::SyncDelay, Kind::Sched, Kind::Spectral, Kind::MonteCarloLine,
                 Kind::MonteCarloStar, Kind::HistogramF}) {
    if (s == to_string(k)) return k;
  }
  throw Error(ErrorCode::ConfigError, "unknown kind '" + s + "'");
}

// ---------------------------------------------------------------------------
// Topology generators

struct TopologySpec {
  std::size_t nodes = 0;
  std::vector<WeightedEdge> edges;

  Topology build() const { return build_topology(nodes, edges); }
};

inline TopologySpec line_topology(std::size_t n, double hop_delay) {
  TopologySpec t{n, {}};
  for (NodeId i = 1; i < n; ++i) t.edges.push_back({i - 1, i, hop_delay});
  return t;
}

// Node 0 is the center.
inline TopologySpec star_topology(std::size_t n, double radius_delay) {
  TopologySpec t{n, {}};
  for (NodeId i = 1; i < n; ++i) t.edges.push_back({0, i, radius_delay});
  return t;
}

inline TopologySpec clique_topology(std::size_t n, double delay = 0.0) {
  TopologySpec t{n, {}};
  for (NodeId i = 0; i < n; ++i) {
    for (NodeId j = i + 1; j < n; ++j) t.edges.push_back({i, j, delay});
  }
  return t;
}

// Cliques of the given sizes where consecutive cliques share exactly one node.
inline TopologySpec clique_chain_topology(const std::vector<std::size_t>& sizes, double delay = 0.0) {
  TopologySpec t;
  NodeId first = 0;
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    if (sizes[k] < 2) throw Error(ErrorCode::ConfigError, "chain cliques need at least two nodes");
    for (NodeId a = 0; a < sizes[k]; ++a) {
      for (NodeId b = a + 1; b < sizes[k]; ++b) t.edges.push_back({first + a, first + b, delay});
    }
    t.nodes = first + sizes[k];
    first += sizes[k] - 1;
  }
  return t;
}

// Two cliques: `l1` locals, `s` shared nodes, `l2` locals, numbered in that order.
inline TopologySpec two_clique_topology(std::size_t l1, std::size_t s, std::size_t l2, double delay = 0.0) {
  TopologySpec t{l1 + s + l2, {}};
  auto connect = [&](NodeId lo, NodeId hi) {
    for (NodeId a = lo; a < hi; ++a) {
      for (NodeId b = a + 1; b < hi; ++b) t.edges.push_back({a, b, delay});
    }
  };
  connect(0, l1 + s);
  // second clique: shared block plus the l2 locals
  for (NodeId a = l1; a < l1 + s + l2; ++a) {
    for (NodeId b = std::max<NodeId>(a + 1, l1 + s); b < l1 + s + l2; ++b) t.edges.push_back({a, b, delay});
  }
  return t;
}

// ---------------------------------------------------------------------------
// Experiment spec and config ingestion

struct Expectation {
  std::optional<std::pair<double, double>> ratio;           // E{Δmax}/τ_max at the largest N
  std::optional<std::pair<double, double>> max_share;       // histogram-f endpoint fraction
  bool all_converged = false;
};

struct ExperimentSpec {
  Kind kind = Kind::Sync;
  std::string preset;
  std::optional<TopologySpec> topology;
  SyncConfig sync;
  double beta = 0.5;
  Rational delta = 1;
  std::vector<Rational> demands;  // empty: 1 per node; one entry: broadcast
  std::size_t max_frames = 20'000;
  InitMode init = InitMode::Random;
  std::uint64_t base_seed = 1;
  std::size_t trials = 1;
  std::vector<std::size_t> sizes;  // Monte Carlo presets
  double tau_max = 1e-4;
  Expectation expect;
};

inline std::vector<Rational> resolved_demands(const ExperimentSpec& s, std::size_t n) {
  if (s.demands.empty()) return std::vector<Rational>(n, Rational(1));
  if (s.demands.size() == 1) return std::vector<Rational>(n, s.demands.front());
  if (s.demands.size() != n) {
    throw Error(ErrorCode::ConfigError,
                std::to_string(s.demands.size()) + " demands for " + std::to_string(n) + " nodes");
  }
  return s.demands;
}

inline SchedConfig sched_config(const ExperimentSpec& s, std::size_t n) {
  SchedConfig c;
  c.beta = s.beta;
  c.delta = to_double(s.delta);
  for (const auto& d : resolved_demands(s, n)) c.demands.push_back(to_double(d));
  c.max_frames = s.max_frames;
  return c;
}

inline ExperimentSpec preset(const std::string& name) {
  ExperimentSpec s;
  s.preset = name;
  if (name == "line-accuracy" || name == "star-accuracy") {
    s.kind = name == "line-accuracy" ? Kind::MonteCarloLine : Kind::MonteCarloStar;
    s.sizes = {2, 4, 8, 16, 32};
    s.trials = 200;
    s.tau_max = 1e-4;
    s.sync.alpha = 0.3;
    s.sync.rho = 0.01;
    s.expect.ratio = name == "line-accuracy" ? std::pair(0.65, 0.85) : std::pair(1.18, 1.48);
    return s;
  }
  if (name == "histogram-f") {
    s.kind = Kind::HistogramF;
    s.topology = clique_chain_topology({4, 3, 4});
    s.demands = {Rational(4)};
    s.delta = 1;
    s.beta = 0.5;
    s.trials = 2000;
    s.expect.max_share = std::pair(0.33, 0.53);
    return s;
  }
  if (name == "two-clique") {
    s.kind = Kind::Sched;
    s.topology = two_clique_topology(5, 2, 2);
    s.demands = {Rational(4)};
    s.delta = 1;
    s.beta = 0.5;
    s.trials = 50;
    s.init = InitMode::RandomConsecutiveLocals;
    s.expect.all_converged = true;
    return s;
  }
  if (name == "single-clique") {
    s.kind = Kind::Sched;
    s.topology = clique_topology(3);
    s.demands = {Rational(4)};
    s.delta = 1;
    s.trials = 50;
    s.expect.all_converged = true;
    return s;
  }
  throw Error(ErrorCode::ConfigError, "unknown preset '" + name + "'");
}

namespace detail {

// Dotted keys may be written flat ("sync.alpha") or nested ({"sync": {"alpha": ...}}).
inline const json* lookup(const json& root, const std::string& dotted) {
  if (root.is_object() && root.contains(dotted)) return &root.at(dotted);
  const json* cur = &root;
  std::size_t from = 0;
  while (from <= dotted.size()) {
    const std::size_t dot = dotted.find('.', from);
    const std::string key = dotted.substr(from, dot == std::string::npos ? std::string::npos : dot - from);
    if (!cur->is_object() || !cur->contains(key)) return nullptr;
    cur = &cur->at(key);
    if (dot == std::string::npos) return cur;
    from = dot + 1;
  }
  return nullptr;
}

inline Rational rational_of(const json& v, const std::string& key) {
  try {
    if (v.is_string()) return parse_rational(v.get<std::string>());
    if (v.is_number_integer()) return Rational(v.get<long long>());
    if (v.is_number()) {
      // decimals go through their shortest text form so 0.1 stays 1/10
      char buf[400];
      const auto r = std::to_chars(buf, buf + sizeof buf, v.get<double>(), std::chars_format::fixed);
      if (r.ec != std::errc()) throw Error(ErrorCode::ConfigError, key + ": value out of range");
      return parse_rational(std::string(buf, r.ptr));
    }
  } catch (const std::invalid_argument& e) {
    throw Error(ErrorCode::ConfigError, key + ": " + e.what());
  }
  throw Error(ErrorCode::ConfigError, key + " must be a number or a \"p/q\" string");
}

template <class T>
T get_as(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, key + ": " + e.what());
  }
}

inline TopologySpec generator_topology(const json& g) {
  const std::string type = get_as<std::string>(g.at("type"), "topology.generator.type");
  const double tau = g.contains("tau") ? get_as<double>(g.at("tau"), "topology.generator.tau") : 0.0;
  auto count = [&](const char* key) { return get_as<std::size_t>(g.at(key), std::string("topology.generator.") + key); };
  if (type == "line") return line_topology(count("n"), tau);
  if (type == "star") return star_topology(count("n"), tau);
  if (type == "clique") return clique_topology(count("n"), tau);
  if (type == "chain") return clique_chain_topology(get_as<std::vector<std::size_t>>(g.at("sizes"), "sizes"), tau);
  if (type == "two-clique") return two_clique_topology(count("l1"), count("s"), count("l2"), tau);
  throw Error(ErrorCode::ConfigError, "unknown generator '" + type + "'");
}

inline TopologySpec topology_from(const json& root, const std::filesystem::path& base_dir);

inline TopologySpec topology_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open topology file " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, path.string() + ": " + e.what());
  }
  // the file carries bare `nodes` / `edges`
  json wrapped{{"topology", doc}};
  return topology_from(wrapped, path.parent_path());
}

inline TopologySpec topology_from(const json& root, const std::filesystem::path& base_dir) {
  if (const json* f = lookup(root, "topology.file")) {
    return topology_file(base_dir / get_as<std::string>(*f, "topology.file"));
  }
  if (const json* g = lookup(root, "topology.generator")) return generator_topology(*g);
  TopologySpec t;
  const json* nodes = lookup(root, "topology.nodes");
  if (!nodes) throw Error(ErrorCode::ConfigError, "topology.nodes missing");
  t.nodes = get_as<std::size_t>(*nodes, "topology.nodes");
  if (const json* edges = lookup(root, "topology.edges")) {
    for (const auto& e : *edges) {
      if (!e.is_array() || e.size() < 2 || e.size() > 3) {
        throw Error(ErrorCode::ConfigError, "topology.edges entries are [i, j] or [i, j, tau]");
      }
      t.edges.push_back({get_as<NodeId>(e[0], "edge node"), get_as<NodeId>(e[1], "edge node"),
                         e.size() == 3 ? get_as<double>(e[2], "edge delay") : 0.0});
    }
  }
  return t;
}

inline std::pair<double, double> band(const json& v, const std::string& key) {
  auto b = get_as<std::vector<double>>(v, key);
  if (b.size() != 2 || b[0] > b[1]) throw Error(ErrorCode::ConfigError, key + " must be [lo, hi]");
  return {b[0], b[1]};
}

}  // namespace detail

// Applies a config document on top of `base` (usually a preset or defaults).
inline ExperimentSpec apply_config(ExperimentSpec s, const json& root,
                                   const std::filesystem::path& base_dir = ".") {
  using detail::get_as;
  using detail::lookup;
  if (!root.is_object()) throw Error(ErrorCode::ConfigError, "config must be an object");
  if (const json* v = lookup(root, "preset")) s = apply_config(preset(get_as<std::string>(*v, "preset")), json::object());
  if (const json* v = lookup(root, "kind")) s.kind = parse_kind(get_as<std::string>(*v, "kind"));
  const bool has_topology = std::any_of(root.items().begin(), root.items().end(), [](const auto& kv) {
    return kv.key() == "topology" || kv.key().rfind("topology.", 0) == 0;
  });
  if (has_topology) s.topology = detail::topology_from(root, base_dir);
  if (const json* v = lookup(root, "sync.alpha")) s.sync.alpha = get_as<double>(*v, "sync.alpha");
  if (const json* v = lookup(root, "sync.rho")) s.sync.rho = get_as<double>(*v, "sync.rho");
  if (const json* v = lookup(root, "sync.max_periods")) s.sync.max_periods = get_as<double>(*v, "sync.max_periods");
  if (const json* v = lookup(root, "sched.beta")) s.beta = get_as<double>(*v, "sched.beta");
  if (const json* v = lookup(root, "sched.delta")) s.delta = detail::rational_of(*v, "sched.delta");
  if (const json* v = lookup(root, "sched.demands")) {
    s.demands.clear();
    if (v->is_array()) {
      for (const auto& d : *v) s.demands.push_back(detail::rational_of(d, "sched.demands"));
    } else {
      s.demands.push_back(detail::rational_of(*v, "sched.demands"));
    }
  }
  if (const json* v = lookup(root, "sched.max_frames")) s.max_frames = get_as<std::size_t>(*v, "sched.max_frames");
  if (const json* v = lookup(root, "sched.init")) {
    const auto mode = get_as<std::string>(*v, "sched.init");
    if (mode == "global-equal") s.init = InitMode::GlobalEqual;
    else if (mode == "random-rejection") s.init = InitMode::Random;
    else if (mode == "random-consecutive") s.init = InitMode::RandomConsecutiveLocals;
    else throw Error(ErrorCode::ConfigError, "unknown sched.init '" + mode + "'");
  }
  if (const json* v = lookup(root, "seeds.base")) s.base_seed = get_as<std::uint64_t>(*v, "seeds.base");
  if (const json* v = lookup(root, "seeds.trials")) s.trials = get_as<std::size_t>(*v, "seeds.trials");
  if (const json* v = lookup(root, "montecarlo.sizes")) s.sizes = get_as<std::vector<std::size_t>>(*v, "montecarlo.sizes");
  if (const json* v = lookup(root, "montecarlo.tau_max")) s.tau_max = get_as<double>(*v, "montecarlo.tau_max");
  if (const json* v = lookup(root, "expect.ratio")) s.expect.ratio = detail::band(*v, "expect.ratio");
  if (const json* v = lookup(root, "expect.max_share")) s.expect.max_share = detail::band(*v, "expect.max_share");
  if (const json* v = lookup(root, "expect.all_converged")) s.expect.all_converged = get_as<bool>(*v, "expect.all_converged");
  if (s.trials == 0) throw Error(ErrorCode::ConfigError, "seeds.trials must be at least 1");
  return s;
}

inline ExperimentSpec load_config(const std::filesystem::path& path, ExperimentSpec base = {}) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open config " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, path.string() + ": " + e.what());
  }
  return apply_config(std::move(base), doc, path.parent_path());
}

// ---------------------------------------------------------------------------
// Records and aggregation

struct RunRecord {
  std::uint64_t seed = 0;
  bool converged = false;
  double time = 0.0;
  double metric = 0.0;  // Δmax (sync), θ (histogram-f), prediction error (sched)
  std::optional<NodeId> head;
  std::optional<std::string> error;
  json payload = json::object();
};

struct Series {
  std::string label;
  std::size_t size = 0;
  double scale = 1.0;  // τ_max for accuracy sweeps
  std::vector<RunRecord> records;
  json aggregate = json::object();
};

struct ExperimentResult {
  ExperimentSpec spec;
  std::string metric_name = "delta_max";
  std::vector<Series> series;
  json summary = json::object();
  bool checks_passed = true;
  std::vector<std::string> check_failures;
};

struct HeadBounds {
  std::vector<double> eccentricity;  // max_j τ_{h→j} per candidate head
  double best = 0.0;
  double worst = 0.0;
};

inline HeadBounds head_bounds(const Topology& t) {
  HeadBounds b;
  for (const auto& row : all_path_delays(t)) b.eccentricity.push_back(*std::max_element(row.begin(), row.end()));
  b.best = *std::min_element(b.eccentricity.begin(), b.eccentricity.end());
  b.worst = *std::max_element(b.eccentricity.begin(), b.eccentricity.end());
  return b;
}

inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
  return v[std::min(v.size() - 1, k == 0 ? 0 : k - 1)];
}

inline json sync_aggregate(const std::vector<RunRecord>& records, const Topology& t) {
  const auto bounds = head_bounds(t);
  std::vector<double> deltas, times;
  std::map<NodeId, std::size_t> heads;
  std::size_t converged = 0, failed = 0, with_head = 0;
  double sum = 0.0, bound = 0.0;
  for (const auto& r : records) {
    if (r.error) ++failed;
    if (!r.converged) continue;
    ++converged;
    deltas.push_back(r.metric);
    times.push_back(r.time);
    if (r.head) {
      ++heads[*r.head];
      ++with_head;
      sum += r.metric;
    }
  }
  json head_freq = json::object();
  for (const auto& [h, k] : heads) {
    const double p = static_cast<double>(k) / static_cast<double>(with_head);
    head_freq[std::to_string(h)] = p;
    bound += p * bounds.eccentricity[h];
  }
  json a;
  a["trials"] = records.size();
  a["converged"] = converged;
  a["errors"] = failed;
  a["delta_max_mean"] = deltas.empty() ? 0.0 : std::accumulate(deltas.begin(), deltas.end(), 0.0) / static_cast<double>(deltas.size());
  a["delta_max_max"] = deltas.empty() ? 0.0 : *std::max_element(deltas.begin(), deltas.end());
  a["delta_max_q50"] = quantile(deltas, 0.5);
  a["delta_max_q90"] = quantile(deltas, 0.9);
  a["time_median"] = quantile(times, 0.5);
  a["head_frequency"] = head_freq;
  a["expected_bound"] = bound;  // Σ_h p̂_h · max_j τ_{h→j}
  a["headed_mean"] = with_head ? sum / static_cast<double>(with_head) : 0.0;
  a["best_case"] = bounds.best;
  a["worst_case"] = bounds.worst;
  return a;
}

// ---------------------------------------------------------------------------
// Trial runners

inline RunRecord sync_trial(std::shared_ptr<const Topology> t, const SyncConfig& cfg, std::uint64_t seed) {
  RunRecord r;
  r.seed = seed;
  try {
    auto state = init_sync(t, cfg, seed);
    const auto rec = state.run_until_fixed();
    r.converged = rec.converged;
    r.time = rec.time;
    r.metric = rec.delta.max_pair;
    if (!rec.heads.empty()) {
      // among tied heads keep the one with the smallest delay eccentricity
      const auto ecc = head_bounds(*t).eccentricity;
      r.head = *std::min_element(rec.heads.begin(), rec.heads.end(),
                                 [&](NodeId a, NodeId b) { return ecc[a] < ecc[b]; });
    }
  } catch (const Error& e) {
    r.error = e.what();
  }
  return r;
}

inline std::vector<RunRecord> sync_trials(std::shared_ptr<const Topology> t, const SyncConfig& cfg,
                                          std::uint64_t base, std::size_t trials) {
  std::vector<RunRecord> out;
  out.reserve(trials);
  for (std::size_t k = 0; k < trials; ++k) out.push_back(sync_trial(t, cfg, CounterRng::derive(base, k)));
  return out;
}

// θ in the middle clique of a chain: guard before the gateway whose predecessor is the other gateway.
inline std::optional<double> chain_theta(const SchedState& s, NodeId gate_a, NodeId gate_b, std::size_t middle) {
  const auto u = s.upsilon(middle);
  const std::size_t m = u.order.size();
  for (std::size_t k = 0; k < m; ++k) {
    const NodeId v = u.order[k], pre = u.order[(k + m - 1) % m];
    if ((v == gate_a && pre == gate_b) || (v == gate_b && pre == gate_a)) return u.theta(k);
  }
  return std::nullopt;
}

struct SchedTrial {
  RunRecord record;
  std::optional<FixedPointPrediction> prediction;
};

inline SchedTrial sched_trial(std::shared_ptr<const CliqueCover> cover, const SchedConfig& cfg,
                              std::span<const Rational> demands, const Rational& delta, InitMode init,
                              std::uint64_t seed) {
  SchedTrial out;
  RunRecord& r = out.record;
  r.seed = seed;
  try {
    auto state = init_schedule(cover, cfg, init, seed);
    const auto rec = state.run_frames();
    r.converged = rec.converged;
    r.time = static_cast<double>(rec.frames);
    r.payload["order_constant"] = rec.order_constant;
    r.payload["collision_free"] = rec.collision_free_always;
    r.payload["max_sum_error"] = rec.max_sum_error;
    json ups = json::array();
    for (const auto& u : rec.upsilon) ups.push_back({{"order", u.order}, {"entries", u.entries}});
    r.payload["upsilon"] = ups;
    try {
      auto p = predict_fixed_point(*cover, demands, delta, arrangement_of(state));
      if (p.at) {
        // evaluate the family at the simulated free parameter
        const auto part = demand_partition(*cover, demands, delta, TieBreak::LowestIndex);
        const auto pat = pco::detail::match_chain(*cover, part);
        const auto theta = pat ? chain_theta(state, pat->gate_a, pat->gate_b, pat->m) : std::nullopt;
        if (!theta) throw Error(ErrorCode::UnsupportedArrangement, "free parameter not identifiable");
        r.payload["theta"] = *theta;
        const Rational th(static_cast<long long>(std::llround(*theta * 1e12)), 1'000'000'000'000LL);
        auto range = p.ranges.front();
        p = p.at(th);
        p.ranges.push_back(range);
      }
      r.metric = prediction_error(state, p);
      r.payload["prediction"] = to_string(p.kind);
      out.prediction = std::move(p);
    } catch (const Error& e) {
      r.metric = std::nan("");
      r.payload["prediction"] = std::string("none: ") + e.what();
    }
  } catch (const Error& e) {
    r.error = e.what();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Experiments

inline void check_band(ExperimentResult& res, const std::string& what, double value,
                       const std::optional<std::pair<double, double>>& b) {
  if (!b) return;
  if (!(value >= b->first && value <= b->second)) {
    res.checks_passed = false;
    res.check_failures.push_back(what + " = " + std::to_string(value) + " outside [" +
                                 std::to_string(b->first) + ", " + std::to_string(b->second) + "]");
  }
}

inline ExperimentResult run_accuracy_sweep(const ExperimentSpec& spec) {
  ExperimentResult res;
  res.spec = spec;
  const bool star = spec.kind == Kind::MonteCarloStar;
  json curve = json::array();
  for (std::size_t n : spec.sizes) {
    if (n < 2) throw Error(ErrorCode::ConfigError, "accuracy sweeps need N ≥ 2");
    const auto topo = std::make_shared<const Topology>(
        (star ? star_topology(n, spec.tau_max) : line_topology(n, spec.tau_max / static_cast<double>(n - 1))).build());
    Series s;
    s.label = "N" + std::to_string(n);
    s.size = n;
    s.scale = spec.tau_max;
    s.records = sync_trials(topo, spec.sync, CounterRng::derive(spec.base_seed, n), spec.trials);
    s.aggregate = sync_aggregate(s.records, *topo);
    s.aggregate["ratio"] = s.aggregate["delta_max_mean"].get<double>() / spec.tau_max;
    curve.push_back({{"N", n}, {"ratio", s.aggregate["ratio"]}, {"converged", s.aggregate["converged"]}});
    res.series.push_back(std::move(s));
  }
  res.summary["curve"] = curve;
  if (!res.series.empty()) {
    const double last = res.series.back().aggregate["ratio"].get<double>();
    res.summary["saturation_ratio"] = last;
    check_band(res, "saturation ratio", last, spec.expect.ratio);
  }
  return res;
}

inline ExperimentResult run_sync(const ExperimentSpec& spec) {
  if (!spec.topology) throw Error(ErrorCode::ConfigError, "sync experiments need a topology");
  ExperimentResult res;
  res.spec = spec;
  const auto topo = std::make_shared<const Topology>(spec.topology->build());
  Series s;
  s.label = "sync";
  s.size = topo->node_count();
  s.records = sync_trials(topo, spec.sync, spec.base_seed, spec.trials);
  s.aggregate = sync_aggregate(s.records, *topo);
  res.summary = s.aggregate;
  res.summary["rho"] = resolve_rho(*topo, spec.sync);
  if (spec.expect.all_converged && s.aggregate["converged"].get<std::size_t>() != spec.trials) {
    res.checks_passed = false;
    res.check_failures.push_back("not every trial converged");
  }
  res.series.push_back(std::move(s));
  return res;
}

inline ExperimentResult run_sched(const ExperimentSpec& spec) {
  if (!spec.topology) throw Error(ErrorCode::ConfigError, "scheduling experiments need a topology");
  ExperimentResult res;
  res.spec = spec;
  res.metric_name = spec.kind == Kind::HistogramF ? "theta" : "prediction_error";
  const Topology topo = spec.topology->build();
  const auto cover = std::make_shared<const CliqueCover>(maximal_cliques(topo));
  const auto demands = resolved_demands(spec, topo.node_count());
  const auto cfg = sched_config(spec, topo.node_count());

  Series s;
  s.label = to_string(spec.kind);
  s.size = topo.node_count();
  std::size_t converged = 0, matched = 0, endpoint = 0, fair = 0;
  bool orders = true, collisions = true;
  double worst_sum = 0.0;
  std::optional<ParameterRange> range;
  std::vector<double> thetas;
  for (std::size_t k = 0; k < spec.trials; ++k) {
    auto trial = sched_trial(cover, cfg, demands, spec.delta, spec.init, CounterRng::derive(spec.base_seed, k));
    auto& r = trial.record;
    if (r.converged) ++converged;
    if (!r.error) {
      orders = orders && r.payload["order_constant"].get<bool>();
      collisions = collisions && r.payload["collision_free"].get<bool>();
      worst_sum = std::max(worst_sum, r.payload["max_sum_error"].get<double>());
    }
    if (r.converged && std::isfinite(r.metric) && r.metric <= 1e-6) ++matched;
    if (trial.prediction) {
      const auto verdict = check_fairness(view_of(*trial.prediction), *cover, cfg.demands, cfg.delta);
      if (verdict.global) ++fair;
      if (!trial.prediction->ranges.empty()) range = trial.prediction->ranges.front();
    }
    if (r.payload.contains("theta")) {
      const double th = r.payload["theta"].get<double>();
      thetas.push_back(th);
      if (range && std::abs(th - to_double(range->lo)) <= 1e-6) ++endpoint;
    }
    if (spec.kind == Kind::HistogramF) {
      const double err = r.metric;
      r.metric = r.payload.contains("theta") ? r.payload["theta"].get<double>() : std::nan("");
      r.payload["prediction_error"] = err;
    }
    s.records.push_back(std::move(r));
  }
  json a;
  a["trials"] = spec.trials;
  a["converged"] = converged;
  a["matched_prediction"] = matched;
  a["globally_fair_predictions"] = fair;
  a["order_constant"] = orders;
  a["collision_free"] = collisions;
  a["max_sum_error"] = worst_sum;
  if (range) {
    a["theta_range"] = {to_fraction_string(range->lo), to_fraction_string(range->hi)};
    const double lo = to_double(range->lo);
    a["max_share_fraction"] = static_cast<double>(endpoint) / static_cast<double>(spec.trials);
    if (!thetas.empty()) {
      a["theta_min"] = *std::min_element(thetas.begin(), thetas.end());
      a["theta_max"] = *std::max_element(thetas.begin(), thetas.end());
    }
    // 0.01-wide bins from the lower endpoint up to the upper one
    const double hi = to_double(range->hi);
    const std::size_t bins = static_cast<std::size_t>(std::llround((hi - lo) / 0.01));
    std::vector<std::size_t> counts(bins, 0);
    std::size_t outside = 0;
    for (double th : thetas) {
      const double pos = (th - lo) / 0.01;
      if (pos < -1e-4 || pos > static_cast<double>(bins) + 1e-4) {
        ++outside;
        continue;
      }
      counts[std::min(bins - 1, static_cast<std::size_t>(std::max(0.0, std::floor(pos + 1e-6))))]++;
    }
    json hist = json::array();
    for (std::size_t b = 0; b < bins; ++b) {
      hist.push_back({{"lo", lo + 0.01 * static_cast<double>(b)}, {"hi", lo + 0.01 * static_cast<double>(b + 1)},
                      {"count", counts[b]}});
    }
    a["histogram"] = hist;
    a["outside_range"] = outside;
    check_band(res, "max-share fraction", a["max_share_fraction"].get<double>(), spec.expect.max_share);
  }
  if (spec.expect.all_converged && converged != spec.trials) {
    res.checks_passed = false;
    res.check_failures.push_back("not every trial converged");
  }
  s.aggregate = a;
  res.summary = a;
  res.series.push_back(std::move(s));
  return res;
}

inline json spectral_report_json(const SpectralReport& r) {
  json j;
  j["n"] = r.n;
  j["beta"] = r.beta;
  json ev = json::array();
  for (const auto& p : r.eigen) ev.push_back({p.value.real(), p.value.imag()});
  j["eigenvalues"] = ev;
  json res = json::array();
  for (const auto& p : r.eigen) res.push_back(p.residual);
  j["residuals"] = res;
  j["lambda2"] = r.lambda2;
  if (r.lambda2_approx) {
    j["mu"] = r.mu;
    j["lambda2_approx"] = *r.lambda2_approx;
    j["lambda2_perturbation"] = *r.lambda2_perturbation;
    j["char_poly_max_residual"] = r.char_poly_max_residual;
    json roots = json::array();
    for (const auto& q : r.roots) {
      roots.push_back({{"k", q.k},
                       {"z", {q.z.real(), q.z.imag()}},
                       {"lambda", {q.lambda.real(), q.lambda.imag()}},
                       {"residual", std::abs(char_poly_eval(q.lambda, r.n, r.beta, r.mu))}});
    }
    j["perturbation_roots"] = roots;
  }
  return j;
}

inline json prediction_json(const FixedPointPrediction& p) {
  json j;
  j["kind"] = to_string(p.kind);
  json g = json::array();
  for (const auto& x : p.gamma) g.push_back(to_fraction_string(x));
  j["gamma"] = g;
  json ups = json::array();
  for (const auto& u : p.upsilon) {
    json e = json::array();
    for (const auto& x : u.entries) e.push_back(to_fraction_string(x));
    ups.push_back({{"order", u.order}, {"entries", e}});
  }
  j["upsilon"] = ups;
  if (!p.ranges.empty()) {
    json rs = json::array();
    for (const auto& r : p.ranges) {
      rs.push_back({{"name", r.name}, {"lo", to_fraction_string(r.lo)}, {"hi", to_fraction_string(r.hi)}});
    }
    j["ranges"] = rs;
  }
  if (p.tie_resolved) j["tie_resolved"] = true;
  return j;
}

inline ExperimentResult run_spectral(const ExperimentSpec& spec) {
  ExperimentResult res;
  res.spec = spec;
  std::vector<Rational> demands = spec.demands;
  if (spec.topology) {
    const Topology topo = spec.topology->build();
    const auto cover = maximal_cliques(topo);
    demands = resolved_demands(spec, topo.node_count());
    try {
      res.summary["prediction"] = prediction_json(predict_fixed_point(cover, demands, spec.delta));
    } catch (const Error& e) {
      res.summary["prediction"] = {{"error", e.what()}};
    }
    // the largest clique stands in for the spectral estimate
    const auto& biggest = *std::max_element(cover.cliques.begin(), cover.cliques.end(),
                                            [](const auto& a, const auto& b) { return a.size() < b.size(); });
    std::vector<Rational> sub;
    for (NodeId v : biggest) sub.push_back(demands[v]);
    demands = sub;
  }
  if (demands.size() < 2) throw Error(ErrorCode::ConfigError, "spectral analysis needs at least two demands");
  std::vector<double> d;
  for (const auto& x : demands) d.push_back(to_double(x));
  const auto report = eigenvalues(build_clique_system(d, to_double(spec.delta), spec.beta));
  res.summary["spectrum"] = spectral_report_json(report);
  res.summary["single_clique_prediction"] = prediction_json(fixed_point_single_clique(demands, spec.delta));
  return res;
}

inline ExperimentResult run_experiment(const ExperimentSpec& spec) {
  ExperimentResult res;
  switch (spec.kind) {
    case Kind::Sync:
    case Kind::SyncDelay: res = run_sync(spec); break;
    case Kind::MonteCarloLine:
    case Kind::MonteCarloStar: res = run_accuracy_sweep(spec); break;
    case Kind::Sched:
    case Kind::HistogramF: res = run_sched(spec); break;
    case Kind::Spectral: res = run_spectral(spec); break;
  }
  std::size_t errors = 0;
  for (const auto& s : res.series) {
    for (const auto& r : s.records) errors += r.error ? 1 : 0;
  }
  res.summary["kind"] = to_string(spec.kind);
  if (!spec.preset.empty()) res.summary["preset"] = spec.preset;
  res.summary["rng"] = std::string(CounterRng::kAlgorithm);
  res.summary["base_seed"] = spec.base_seed;
  res.summary["trial_errors"] = errors;
  if (errors) {
    res.checks_passed = false;
    res.check_failures.push_back(std::to_string(errors) + " trial(s) raised errors");
  }
  res.summary["checks_passed"] = res.checks_passed;
  if (!res.check_failures.empty()) res.summary["check_failures"] = res.check_failures;
  return res;
}

// ---------------------------------------------------------------------------
// Output

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string records_csv(const std::vector<RunRecord>& records, const std::string& metric) {
  std::string out = "seed,converged,time," + metric + ",head\n";
  for (const auto& r : records) {
    out += std::to_string(r.seed) + "," + (r.converged ? "1" : "0") + "," + format_double(r.time) + "," +
           format_double(r.metric) + "," + (r.head ? std::to_string(*r.head) : "") + "\n";
  }
  return out;
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

inline json summary_json(const ExperimentResult& res) {
  json j = res.summary;
  if (res.series.size() > 1) {
    json per = json::object();
    for (const auto& s : res.series) per[s.label] = s.aggregate;
    j["series"] = per;
  }
  return j;
}

// Writes records CSV(s) and summary.json into `dir`; returns the files written.
inline std::vector<std::filesystem::path> emit_results(const ExperimentResult& res, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> files;
  if (res.series.size() == 1) {
    files.push_back(dir / "records.csv");
    write_file(files.back(), records_csv(res.series.front().records, res.metric_name));
  } else if (res.series.empty()) {
    files.push_back(dir / "records.csv");
    write_file(files.back(), records_csv({}, res.metric_name));
  } else {
    for (const auto& s : res.series) {
      files.push_back(dir / ("records_" + s.label + ".csv"));
      write_file(files.back(), records_csv(s.records, res.metric_name));
    }
  }
  files.push_back(dir / "summary.json");
  write_file(files.back(), summary_json(res).dump(2) + "\n");
  return files;
}

inline std::string trace_jsonl(const std::vector<SyncEvent>& events) {
  std::string out;
  for (const auto& e : events) {
    json j{{"time", e.time}, {"type", to_string(e.kind)}, {"sender", e.sender}, {"receiver", e.receiver}, {"phase", e.phase}};
    out += j.dump() + "\n";
  }
  return out;
}

inline std::string schedule_jsonl(const std::vector<ScheduleSample>& samples) {
  std::string out;
  for (const auto& s : samples) {
    json j{{"frame", s.frame}, {"node", s.node}, {"start", s.start}, {"end", s.end}};
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace pco::harness
