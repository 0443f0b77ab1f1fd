#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "pco/error.hpp"
#include "pco/rng.hpp"
#include "pco/topology.hpp"

namespace pco {

struct SyncConfig {
  double alpha = 0.01;
  std::optional<double> rho;  // defaults to 2·max τ + 0.01 with delays, 0 otherwise
  double max_periods = 10'000;
  double eps_fix = 1e-10;
  double eps_time = 1e-12;
  int window = 3;  // rounds of unchanged Δ before declaring a fixed point
};

inline double apply_firing_update(double phase, double alpha, bool coupled) {
  if (!coupled) return phase;
  return std::min((1.0 + alpha) * phase, 1.0);
}

// (a - b) mod 1, in [0,1)
inline double cyclic_diff(double a, double b) {
  double d = std::fmod(a - b, 1.0);
  if (d < 0.0) d += 1.0;
  if (d >= 1.0) d = 0.0;
  return d;
}

inline double cyclic_distance(double a, double b) {
  const double d = cyclic_diff(a, b);
  return std::min(d, 1.0 - d);
}

struct RefractoryWindow {
  double lo = 0.0;  // exclusive
  double hi = 1.0;  // exclusive
};

// Admissible refractory interval (2·max τ, 1/2 + min τ) for a delayed topology.
inline RefractoryWindow refractory_window(const Topology& t) {
  RefractoryWindow w{2.0 * t.max_delay(), 0.5 + t.min_delay()};
  if (w.lo >= w.hi) {
    throw Error(ErrorCode::RefractoryWindowEmpty,
                "2·max τ = " + std::to_string(w.lo) + " ≥ 1/2 + min τ = " + std::to_string(w.hi));
  }
  return w;
}

inline double resolve_rho(const Topology& t, const SyncConfig& cfg) {
  if (!(cfg.alpha > 0.0)) throw Error(ErrorCode::InvalidConfig, "alpha must be positive");
  if (!t.has_delays()) {
    const double rho = cfg.rho.value_or(0.0);
    if (rho < 0.0 || rho >= 1.0) throw Error(ErrorCode::InvalidConfig, "rho must lie in [0,1)");
    return rho;
  }
  const auto w = refractory_window(t);
  if (!cfg.rho) {
    const double rho = w.lo + 0.01;
    return rho < w.hi ? rho : 0.5 * (w.lo + w.hi);
  }
  if (!(*cfg.rho > w.lo && *cfg.rho < w.hi)) {
    throw Error(ErrorCode::InvalidConfig, "rho = " + std::to_string(*cfg.rho) +
                                              " outside the admissible window (" +
                                              std::to_string(w.lo) + ", " + std::to_string(w.hi) + ")");
  }
  return *cfg.rho;
}

struct DeltaVector {
  std::vector<WeightedEdge> edges;   // same order as Topology::edges()
  std::vector<double> edge_delta;    // Δ_ab per edge
  double max_edge = 0.0;
  double max_pair = 0.0;             // max over all node pairs
};

inline DeltaVector measure_delta(const Topology& t, std::span<const double> phases) {
  DeltaVector d;
  d.edges = t.edges();
  d.edge_delta.reserve(d.edges.size());
  for (const auto& e : d.edges) {
    const double v = cyclic_distance(phases[e.a], phases[e.b]);
    d.edge_delta.push_back(v);
    d.max_edge = std::max(d.max_edge, v);
  }
  for (std::size_t i = 0; i < phases.size(); ++i) {
    for (std::size_t j = i + 1; j < phases.size(); ++j) {
      d.max_pair = std::max(d.max_pair, cyclic_distance(phases[i], phases[j]));
    }
  }
  return d;
}

// Every node h whose forward difference (Φ_h − Φ_j) mod 1 is the short way round to all j.
inline std::vector<NodeId> head_nodes(std::span<const double> phases, double eps = 1e-10) {
  std::vector<NodeId> heads;
  for (NodeId h = 0; h < phases.size(); ++h) {
    bool ok = true;
    for (NodeId j = 0; j < phases.size() && ok; ++j) {
      const double xi = cyclic_diff(phases[h], phases[j]);
      ok = xi <= 0.5 + eps || xi >= 1.0 - eps;
    }
    if (ok) heads.push_back(h);
  }
  return heads;
}

inline std::vector<NodeId> head_node(std::span<const double> phases, double eps = 1e-10) {
  auto heads = head_nodes(phases, eps);
  if (heads.empty()) throw Error(ErrorCode::NoHead, "no node precedes all others");
  return heads;
}

struct SyncEvent {
  enum class Kind { Fire, Deliver, Absorb };
  double time = 0.0;
  Kind kind = Kind::Fire;
  NodeId sender = 0;
  NodeId receiver = 0;
  double phase = 0.0;  // receiver phase after the event
};

inline const char* to_string(SyncEvent::Kind k) {
  switch (k) {
    case SyncEvent::Kind::Fire: return "fire";
    case SyncEvent::Kind::Deliver: return "deliver";
    case SyncEvent::Kind::Absorb: return "absorb";
  }
  return "?";
}

struct SyncRecord {
  bool converged = false;
  double time = 0.0;          // last instant a coupling update moved a phase
  double periods_run = 0.0;
  DeltaVector delta;
  std::vector<double> phases;
  std::vector<NodeId> heads;  // empty when no head exists
};

class SyncState {
 public:
  SyncState(std::shared_ptr<const Topology> topology, const SyncConfig& cfg,
            std::vector<double> phases)
      : topo_(std::move(topology)), cfg_(cfg), rho_(resolve_rho(*topo_, cfg)) {
    if (phases.size() != topo_->node_count()) {
      throw Error(ErrorCode::LengthMismatch, std::to_string(phases.size()) + " phases for " +
                                                 std::to_string(topo_->node_count()) + " nodes");
    }
    next_fire_.reserve(phases.size());
    for (double p : phases) {
      if (!(p >= 0.0 && p < 1.0)) {
        throw Error(ErrorCode::InvalidConfig, "initial phase " + std::to_string(p) + " outside [0,1)");
      }
      next_fire_.push_back(1.0 - p);
    }
  }

  const Topology& topology() const { return *topo_; }
  std::shared_ptr<const Topology> topology_ptr() const { return topo_; }
  const SyncConfig& config() const { return cfg_; }
  double rho() const { return rho_; }

  // Absolute simulation time in periods.
  double time() const { return base_ + t_; }
  double last_change_time() const { return last_change_; }

  double phase(NodeId i) const {
    const double p = 1.0 - (next_fire_[i] - t_);
    return p >= 1.0 ? 0.0 : std::max(p, 0.0);
  }

  std::vector<double> phases() const {
    std::vector<double> out(next_fire_.size());
    for (NodeId i = 0; i < out.size(); ++i) out[i] = phase(i);
    return out;
  }

  std::size_t pending_count() const { return pending_.size(); }

  void enable_trace(bool on) { trace_on_ = on; }
  const std::vector<SyncEvent>& trace() const { return trace_; }
  void clear_trace() { trace_.clear(); }

  double next_event_time() const {
    double t = *std::min_element(next_fire_.begin(), next_fire_.end());
    if (!pending_.empty()) t = std::min(t, pending_.front().time);
    return t;
  }

  // Processes the next timestamp (all events within eps_time of the earliest one).
  std::vector<SyncEvent> step() {
    const double now = next_event_time();
    t_ = std::max(t_, now);
    const double horizon = t_ + cfg_.eps_time;
    const std::size_t n = next_fire_.size();
    std::vector<char> updated(n, 0), fired(n, 0), absorbed(n, 0);
    std::vector<SyncEvent> events;
    std::size_t count = 0;

    auto storm_check = [&] {
      if (++count > n * n) {
        throw Error(ErrorCode::EventStorm,
                    std::to_string(count) + " events at t = " + std::to_string(time()));
      }
    };

    for (;;) {
      std::vector<Delivery> due;
      while (!pending_.empty() && pending_.front().time <= horizon) {
        std::pop_heap(pending_.begin(), pending_.end(), Later{});
        due.push_back(pending_.back());
        pending_.pop_back();
      }
      if (!due.empty()) {
        std::sort(due.begin(), due.end(), [](const Delivery& a, const Delivery& b) {
          return std::tie(a.receiver, a.sender, a.seq) < std::tie(b.receiver, b.sender, b.seq);
        });
        for (const auto& d : due) {
          storm_check();
          deliver(d, updated, fired, absorbed, events);
        }
        continue;
      }
      bool any = false;
      for (NodeId i = 0; i < n; ++i) {
        if (fired[i]) continue;
        if (absorbed[i] || next_fire_[i] <= horizon) {
          storm_check();
          fire(i, events);
          fired[i] = 1;
          any = true;
        }
      }
      if (!any) break;
    }
    if (trace_on_) trace_.insert(trace_.end(), events.begin(), events.end());
    return events;
  }

  // Processes every event strictly before `periods` from now, then moves the clock there.
  void run_for(double periods) {
    const double target_abs = time() + periods;
    while (base_ + next_event_time() < target_abs) step();
    t_ = target_abs - base_;
    rebase();
  }

  // Runs until Δ is unchanged for `window` whole periods or max_periods elapse.
  SyncRecord run_until_fixed() {
    const double start = time();
    auto prev = measure_delta(*topo_, phases()).edge_delta;
    int stable = 0;
    bool converged = false;
    while (time() - start < cfg_.max_periods) {
      run_for(1.0);
      auto cur = measure_delta(*topo_, phases()).edge_delta;
      double change = 0.0;
      for (std::size_t k = 0; k < cur.size(); ++k) change = std::max(change, std::abs(cur[k] - prev[k]));
      stable = change < cfg_.eps_fix ? stable + 1 : 0;
      prev = std::move(cur);
      if (stable >= cfg_.window) {
        converged = true;
        break;
      }
    }
    SyncRecord rec;
    rec.converged = converged;
    rec.time = last_change_;
    rec.periods_run = time() - start;
    rec.phases = phases();
    rec.delta = measure_delta(*topo_, rec.phases);
    rec.heads = head_nodes(rec.phases, cfg_.eps_fix);
    return rec;
  }

 private:
  struct Delivery {
    double time;
    NodeId sender;
    NodeId receiver;
    std::uint64_t seq;
  };
  struct Later {
    bool operator()(const Delivery& a, const Delivery& b) const {
      return std::tie(a.time, a.receiver, a.sender, a.seq) >
             std::tie(b.time, b.receiver, b.sender, b.seq);
    }
  };

  void fire(NodeId i, std::vector<SyncEvent>& events) {
    next_fire_[i] = t_ + 1.0;
    events.push_back({time(), SyncEvent::Kind::Fire, i, i, 0.0});
    for (NodeId j : topo_->neighbors(i)) {
      pending_.push_back({t_ + topo_->delay(i, j), i, j, seq_++});
      std::push_heap(pending_.begin(), pending_.end(), Later{});
    }
  }

  void deliver(const Delivery& d, std::vector<char>& updated, const std::vector<char>& fired,
               std::vector<char>& absorbed, std::vector<SyncEvent>& events) {
    const NodeId j = d.receiver;
    // Coincident pulses count once; a node that already fired sits at phase 0.
    if (updated[j] || fired[j] || absorbed[j]) return;
    const double raw = 1.0 - (next_fire_[j] - t_);
    const double before = std::clamp(raw, 0.0, 1.0);
    // a node at phase 1 is firing right now, so it is refractory too
    if (std::fmod(before, 1.0) <= rho_) return;
    const double after = apply_firing_update(before, cfg_.alpha, true);
    updated[j] = 1;
    if (after - before > cfg_.eps_fix) last_change_ = time();
    if (after >= 1.0) {
      absorbed[j] = 1;
      events.push_back({time(), SyncEvent::Kind::Absorb, d.sender, j, 1.0});
    } else {
      next_fire_[j] = t_ + (1.0 - after);
      events.push_back({time(), SyncEvent::Kind::Deliver, d.sender, j, after});
    }
  }

  // Shifts the internal clock back by whole periods; exact for values in [1, 4).
  void rebase() {
    while (t_ >= 1.0) {
      t_ -= 1.0;
      base_ += 1.0;
      for (double& f : next_fire_) f -= 1.0;
      for (auto& d : pending_) d.time -= 1.0;
    }
  }

  std::shared_ptr<const Topology> topo_;
  SyncConfig cfg_;
  double rho_ = 0.0;
  double t_ = 0.0;
  double base_ = 0.0;
  double last_change_ = 0.0;
  std::vector<double> next_fire_;
  std::vector<Delivery> pending_;  // min-heap under Later
  std::uint64_t seq_ = 0;
  bool trace_on_ = false;
  std::vector<SyncEvent> trace_;
};

inline SyncState init_sync(std::shared_ptr<const Topology> topology, const SyncConfig& cfg,
                           std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<double> phases(topology->node_count());
  for (double& p : phases) p = rng.uniform();
  return SyncState(std::move(topology), cfg, std::move(phases));
}

inline SyncState init_sync(std::shared_ptr<const Topology> topology, const SyncConfig& cfg,
                           std::vector<double> phases) {
  return SyncState(std::move(topology), cfg, std::move(phases));
}

// Attaches node n (the last node of `enlarged`) with the given phase to a synchronized state.
inline SyncState join_node(const SyncState& state, std::shared_ptr<const Topology> enlarged,
                           double phase) {
  const Topology& old = state.topology();
  const std::size_t n = old.node_count();
  if (enlarged->node_count() != n + 1) {
    throw Error(ErrorCode::InvalidConfig, "enlarged topology must add exactly one node");
  }
  for (NodeId i = 0; i < n; ++i) {
    for (NodeId j = 0; j < n; ++j) {
      if (old.adjacent(i, j) != enlarged->adjacent(i, j) || old.delay(i, j) != enlarged->delay(i, j)) {
        throw Error(ErrorCode::InvalidConfig, "enlarged topology changes existing edges");
      }
    }
  }
  if (enlarged->has_delays()) {
    throw Error(ErrorCode::InvalidConfig, "node join is modeled in the zero-delay regime");
  }
  auto phases = state.phases();
  if (measure_delta(old, phases).max_pair > state.config().eps_fix) {
    throw Error(ErrorCode::InvalidConfig, "join requires a synchronized network");
  }
  phases.push_back(phase);
  return SyncState(std::move(enlarged), state.config(), std::move(phases));
}

}  // namespace pco
