#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pco/error.hpp"
#include "pco/rng.hpp"
#include "pco/sync.hpp"
#include "pco/topology.hpp"

namespace pco {

struct SchedConfig {
  double beta = 0.5;
  double delta = 1.0;
  std::vector<double> demands;
  std::size_t max_frames = 20'000;
  double eps_fix = 1e-9;
  double eps_time = 1e-12;
  int window = 3;
};

enum class InitMode {
  GlobalEqual,
  Random,
  // Random, additionally rejecting draws where some clique's local nodes are not contiguous
  // in its firing order.
  RandomConsecutiveLocals,
};

inline std::pair<double, double> compute_target(double psi_pre, double demand, double delta) {
  const double denom = demand + 2.0 * delta;
  return {(demand + delta) / denom * psi_pre, delta / denom * psi_pre};
}

inline double convex_update(double current, double target, double beta) {
  return (1.0 - beta) * current + beta * target;
}

// True when `b` is a rotation of `a`.
inline bool same_cyclic_order(std::span<const NodeId> a, std::span<const NodeId> b) {
  if (a.size() != b.size()) return false;
  if (a.empty()) return true;
  auto it = std::find(b.begin(), b.end(), a.front());
  if (it == b.end()) return false;
  const std::size_t off = static_cast<std::size_t>(it - b.begin());
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k] != b[(off + k) % b.size()]) return false;
  }
  return true;
}

// Members of clique c sorted by descending phase (ties by ascending id).
inline std::vector<NodeId> descending_order(std::span<const NodeId> members,
                                            std::span<const double> start) {
  std::vector<NodeId> order(members.begin(), members.end());
  std::stable_sort(order.begin(), order.end(), [&](NodeId x, NodeId y) {
    return start[x] > start[y] || (start[x] == start[y] && x < y);
  });
  return order;
}

// Within every clique no member's start phase falls inside another member's slot.
inline bool collision_free(const CliqueCover& cover, std::span<const double> start,
                           std::span<const double> end, double tol = 1e-12) {
  for (const auto& members : cover.cliques) {
    for (NodeId i : members) {
      const double width = cyclic_diff(start[i], end[i]);
      for (NodeId k : members) {
        if (k == i) continue;
        const double d = cyclic_diff(start[i], start[k]);
        if (d < tol || 1.0 - d < tol || d + tol < width) return false;
      }
    }
  }
  return true;
}

// True when the nodes selected by `pred` form one contiguous run of the cyclic order.
template <class Pred>
bool block_contiguous(std::span<const NodeId> order, Pred pred) {
  const std::size_t m = order.size();
  std::size_t runs = 0;
  for (std::size_t k = 0; k < m; ++k) {
    if (pred(order[k]) && !pred(order[(k + m - 1) % m])) ++runs;
  }
  return runs <= 1;
}

inline bool locals_consecutive(const CliqueCover& cover, std::span<const NodeId> order) {
  return block_contiguous(order, [&](NodeId v) { return cover.is_local(v); });
}

struct UpsilonVector {
  std::vector<NodeId> order;    // firing order the entries refer to
  std::vector<double> entries;  // Θ_{π_1}, Γ_{π_1}, Θ_{π_2}, ...

  double sum() const {
    double s = 0.0;
    for (double v : entries) s += v;
    return s;
  }
  double theta(std::size_t k) const { return entries[2 * k]; }
  double gamma(std::size_t k) const { return entries[2 * k + 1]; }

  // Rotated so the lowest node id comes first; makes runs comparable.
  UpsilonVector canonical() const {
    UpsilonVector out;
    if (order.empty()) return out;
    const auto first = std::min_element(order.begin(), order.end()) - order.begin();
    const std::size_t m = order.size();
    for (std::size_t k = 0; k < m; ++k) {
      const std::size_t src = (static_cast<std::size_t>(first) + k) % m;
      out.order.push_back(order[src]);
      out.entries.push_back(entries[2 * src]);
      out.entries.push_back(entries[2 * src + 1]);
    }
    return out;
  }
};

struct ScheduleSample {
  std::size_t frame = 0;
  NodeId node = 0;
  double start = 0.0;
  double end = 0.0;
};

struct SchedRecord {
  bool converged = false;
  std::size_t frames = 0;       // frames until the schedule stopped moving
  std::size_t frames_run = 0;
  std::vector<UpsilonVector> upsilon;
  std::vector<double> start;
  std::vector<double> end;
  bool order_constant = true;
  bool collision_free_always = true;
  double max_sum_error = 0.0;   // worst |ΣΥ_c − 1| over all sampled frames
};

class SchedState {
 public:
  SchedState(std::shared_ptr<const CliqueCover> cover, SchedConfig cfg, std::vector<double> start,
             std::vector<double> end)
      : cover_(std::move(cover)), cfg_(std::move(cfg)) {
    const std::size_t n = cover_->node_count();
    validate(n);
    if (start.size() != n || end.size() != n) {
      throw Error(ErrorCode::LengthMismatch, "timer vectors must have one entry per node");
    }
    if (!collision_free(*cover_, start, end)) {
      throw Error(ErrorCode::InvalidConfig, "initial timers violate collision avoidance");
    }
    next_start_.resize(n);
    next_end_.resize(n);
    for (NodeId i = 0; i < n; ++i) {
      next_start_[i] = 1.0 - start[i];
      next_end_[i] = 1.0 - end[i];
    }
    armed_.assign(n, 0);
    updates_.assign(n, 0);
    for (std::size_t c = 0; c < cover_->size(); ++c) {
      orders_.push_back(descending_order(cover_->cliques[c], start));
    }
    pre_.assign(n, {});
    suc_.assign(n, {});
    for (NodeId i = 0; i < n; ++i) {
      for (std::size_t c : cover_->membership[i]) {
        const auto& o = orders_[c];
        const std::size_t k = std::find(o.begin(), o.end(), i) - o.begin();
        pre_[i].push_back(o[(k + o.size() - 1) % o.size()]);
        suc_[i].push_back(o[(k + 1) % o.size()]);
      }
    }
  }

  const CliqueCover& cover() const { return *cover_; }
  const SchedConfig& config() const { return cfg_; }
  double time() const { return base_ + t_; }
  std::size_t node_count() const { return next_start_.size(); }

  double start_phase(NodeId i) const { return phase_of(next_start_[i]); }
  double end_phase(NodeId i) const { return phase_of(next_end_[i]); }

  std::vector<double> start_phases() const {
    std::vector<double> out(node_count());
    for (NodeId i = 0; i < out.size(); ++i) out[i] = start_phase(i);
    return out;
  }
  std::vector<double> end_phases() const {
    std::vector<double> out(node_count());
    for (NodeId i = 0; i < out.size(); ++i) out[i] = end_phase(i);
    return out;
  }

  const std::vector<NodeId>& firing_order(std::size_t c) const { return orders_.at(c); }
  std::size_t update_count(NodeId i) const { return updates_[i]; }
  bool armed(NodeId i) const { return armed_[i] != 0; }

  // Cyclic neighbours of i in clique c's firing order.
  std::pair<NodeId, NodeId> pre_suc(NodeId i, std::size_t c) const {
    if (i >= node_count()) throw Error(ErrorCode::InvalidNode, std::to_string(i));
    const auto& cs = cover_->membership[i];
    const auto it = std::find(cs.begin(), cs.end(), c);
    if (it == cs.end()) {
      throw Error(ErrorCode::NotInClique,
                  "node " + std::to_string(i) + " not in clique " + std::to_string(c));
    }
    const std::size_t k = it - cs.begin();
    return {pre_[i][k], suc_[i][k]};
  }

  // Nodes transmitting immediately before and after i across all of its cliques.
  std::pair<NodeId, NodeId> global_pre_suc(NodeId i) const {
    return {pre_[i][global_pre_slot(i)], suc_[i][global_suc_slot(i)]};
  }

  // Convex-combination update of node i against the current end timer of Pre(i).
  void apply_update(NodeId i) {
    if (!armed_[i]) {
      throw Error(ErrorCode::MissingPreReference,
                  "node " + std::to_string(i) + " updated without a pending reference");
    }
    const NodeId p = pre_[i][global_pre_slot(i)];
    const auto [start_target, end_target] = compute_target(end_phase(p), cfg_.demands[i], cfg_.delta);
    const double s = convex_update(start_phase(i), start_target, cfg_.beta);
    const double e = convex_update(end_phase(i), end_target, cfg_.beta);
    next_start_[i] = t_ + (1.0 - s);
    next_end_[i] = t_ + (1.0 - e);
    armed_[i] = 0;
    ++updates_[i];
  }

  UpsilonVector upsilon(std::size_t c) const {
    UpsilonVector u;
    u.order = orders_.at(c);
    const std::size_t m = u.order.size();
    for (std::size_t k = 0; k < m; ++k) {
      const NodeId i = u.order[k];
      const NodeId p = u.order[(k + m - 1) % m];
      double theta = cyclic_diff(end_phase(p), start_phase(i));
      // the predecessor's end and our start may coincide after rounding
      if (theta > 1.0 - 1e-12) theta = 0.0;
      u.entries.push_back(theta);
      u.entries.push_back(cyclic_diff(start_phase(i), end_phase(i)));
    }
    return u;
  }

  std::vector<UpsilonVector> all_upsilon() const {
    std::vector<UpsilonVector> out;
    for (std::size_t c = 0; c < cover_->size(); ++c) out.push_back(upsilon(c));
    return out;
  }

  bool orders_unchanged() const {
    const auto start = start_phases();
    for (std::size_t c = 0; c < cover_->size(); ++c) {
      if (!same_cyclic_order(orders_[c], descending_order(cover_->cliques[c], start))) return false;
    }
    return true;
  }

  // Processes all timer expirations at the next timestamp.
  void step() {
    double now = std::min(*std::min_element(next_start_.begin(), next_start_.end()),
                          *std::min_element(next_end_.begin(), next_end_.end()));
    t_ = std::max(t_, now);
    const double horizon = t_ + cfg_.eps_time;
    const std::size_t n = node_count();
    for (NodeId j = 0; j < n; ++j) {
      if (next_end_[j] <= horizon) {
        next_end_[j] = t_ + 1.0;
        armed_[j] = 1;
      }
    }
    for (NodeId j = 0; j < n; ++j) {
      if (next_start_[j] > horizon) continue;
      next_start_[j] = t_ + 1.0;
      for (NodeId i = 0; i < n; ++i) {
        if (armed_[i] && std::find(suc_[i].begin(), suc_[i].end(), j) != suc_[i].end()) {
          apply_update(i);
        }
      }
    }
  }

  void run_for(double frames) {
    const double target = time() + frames;
    for (;;) {
      const double next = std::min(*std::min_element(next_start_.begin(), next_start_.end()),
                                   *std::min_element(next_end_.begin(), next_end_.end()));
      if (base_ + next >= target) break;
      step();
    }
    t_ = target - base_;
    rebase();
  }

  void enable_dump(bool on) { dump_on_ = on; }
  const std::vector<ScheduleSample>& dump() const { return dump_; }

  // Runs whole frames until every Υ_c stops moving or max_frames elapse.
  SchedRecord run_frames(std::optional<std::size_t> frames = std::nullopt) {
    SchedRecord rec;
    const std::size_t cap = frames.value_or(cfg_.max_frames);
    auto prev = all_upsilon();
    record_frame(rec, prev, 0);
    int stable = 0;
    std::size_t last_moving = 0;
    for (std::size_t f = 1; f <= cap; ++f) {
      run_for(1.0);
      auto cur = all_upsilon();
      record_frame(rec, cur, f);
      double change = 0.0;
      for (std::size_t c = 0; c < cur.size(); ++c) {
        for (std::size_t k = 0; k < cur[c].entries.size(); ++k) {
          change = std::max(change, std::abs(cur[c].entries[k] - prev[c].entries[k]));
        }
      }
      prev = std::move(cur);
      rec.frames_run = f;
      if (change < cfg_.eps_fix) {
        ++stable;
      } else {
        stable = 0;
        last_moving = f;
      }
      if (!frames && stable >= cfg_.window) {
        rec.converged = true;
        break;
      }
    }
    if (frames) rec.converged = stable >= cfg_.window;
    rec.frames = last_moving;
    rec.upsilon = std::move(prev);
    rec.start = start_phases();
    rec.end = end_phases();
    return rec;
  }

 private:
  void validate(std::size_t n) const {
    if (!(cfg_.beta > 0.0 && cfg_.beta < 1.0)) {
      throw Error(ErrorCode::InvalidConfig, "beta must lie strictly inside (0,1)");
    }
    if (!(cfg_.delta > 0.0)) throw Error(ErrorCode::InvalidConfig, "delta must be positive");
    if (cfg_.demands.size() != n) {
      throw Error(ErrorCode::LengthMismatch, std::to_string(cfg_.demands.size()) + " demands for " +
                                                 std::to_string(n) + " nodes");
    }
    for (double d : cfg_.demands) {
      if (!(d > 0.0)) throw Error(ErrorCode::InvalidConfig, "demands must be positive");
    }
    for (std::size_t c = 0; c < cover_->size(); ++c) {
      if (cover_->cliques[c].size() < 2) {
        throw Error(ErrorCode::DegenerateClique, "clique " + std::to_string(c) + " has one member");
      }
    }
  }

  double phase_of(double next_fire) const {
    const double p = 1.0 - (next_fire - t_);
    return p >= 1.0 ? 0.0 : std::max(p, 0.0);
  }

  std::size_t global_pre_slot(NodeId i) const {
    std::size_t best = 0;
    double best_gap = 2.0;
    for (std::size_t k = 0; k < pre_[i].size(); ++k) {
      const double gap = cyclic_diff(end_phase(pre_[i][k]), start_phase(i));
      if (gap < best_gap) {
        best_gap = gap;
        best = k;
      }
    }
    return best;
  }

  std::size_t global_suc_slot(NodeId i) const {
    std::size_t best = 0;
    double best_gap = 2.0;
    for (std::size_t k = 0; k < suc_[i].size(); ++k) {
      const double gap = cyclic_diff(end_phase(i), start_phase(suc_[i][k]));
      if (gap < best_gap) {
        best_gap = gap;
        best = k;
      }
    }
    return best;
  }

  void record_frame(SchedRecord& rec, const std::vector<UpsilonVector>& ups, std::size_t frame) {
    for (const auto& u : ups) rec.max_sum_error = std::max(rec.max_sum_error, std::abs(u.sum() - 1.0));
    const auto start = start_phases();
    const auto end = end_phases();
    if (!orders_unchanged()) rec.order_constant = false;
    if (!collision_free(*cover_, start, end)) rec.collision_free_always = false;
    if (dump_on_) {
      for (NodeId i = 0; i < node_count(); ++i) dump_.push_back({frame, i, start[i], end[i]});
    }
  }

  void rebase() {
    while (t_ >= 1.0) {
      t_ -= 1.0;
      base_ += 1.0;
      for (double& f : next_start_) f -= 1.0;
      for (double& f : next_end_) f -= 1.0;
    }
  }

  std::shared_ptr<const CliqueCover> cover_;
  SchedConfig cfg_;
  double t_ = 0.0;
  double base_ = 0.0;
  std::vector<double> next_start_;
  std::vector<double> next_end_;
  std::vector<char> armed_;
  std::vector<std::size_t> updates_;
  std::vector<std::vector<NodeId>> orders_;
  // per node, aligned with cover.membership[i]
  std::vector<std::vector<NodeId>> pre_;
  std::vector<std::vector<NodeId>> suc_;
  bool dump_on_ = false;
  std::vector<ScheduleSample> dump_;
};

namespace detail {

// Width bound for node i: distance to the next start among all of its clique peers.
inline double free_run(const CliqueCover& cover, NodeId i, std::span<const double> start) {
  double gap = 1.0;
  for (std::size_t c : cover.membership[i]) {
    for (NodeId k : cover.cliques[c]) {
      if (k != i) gap = std::min(gap, cyclic_diff(start[i], start[k]));
    }
  }
  return gap;
}

}  // namespace detail

inline SchedState init_schedule(std::shared_ptr<const CliqueCover> cover, const SchedConfig& cfg,
                                InitMode mode, std::uint64_t seed = 0) {
  const std::size_t n = cover->node_count();
  std::vector<double> start(n), end(n);
  if (mode == InitMode::GlobalEqual) {
    for (NodeId i = 0; i < n; ++i) {
      start[i] = static_cast<double>(i) / static_cast<double>(n);
      end[i] = cyclic_diff(start[i], 0.5 / static_cast<double>(n));
    }
    return SchedState(std::move(cover), cfg, std::move(start), std::move(end));
  }

  CounterRng rng(seed);
  constexpr int kMaxAttempts = 10'000;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    for (double& s : start) s = rng.uniform();
    bool distinct = true;
    for (const auto& members : cover->cliques) {
      for (std::size_t a = 0; a < members.size() && distinct; ++a) {
        for (std::size_t b = a + 1; b < members.size() && distinct; ++b) {
          distinct = cyclic_distance(start[members[a]], start[members[b]]) >= 1e-9;
        }
      }
    }
    if (!distinct) continue;
    if (mode == InitMode::RandomConsecutiveLocals) {
      bool ok = true;
      for (std::size_t c = 0; c < cover->size() && ok; ++c) {
        ok = locals_consecutive(*cover, descending_order(cover->cliques[c], start));
      }
      if (!ok) continue;
    }
    for (NodeId i = 0; i < n; ++i) {
      end[i] = cyclic_diff(start[i], rng.uniform() * detail::free_run(*cover, i, start));
    }
    if (!collision_free(*cover, start, end)) continue;
    return SchedState(std::move(cover), cfg, std::move(start), std::move(end));
  }
  throw Error(ErrorCode::InitRejectionExhausted,
              "no collision-free initialization after " + std::to_string(kMaxAttempts) + " draws");
}

}  // namespace pco
