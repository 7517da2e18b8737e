#pragma once

// System parameters, states, decision rules and the instantaneous
// assignment cascade shared by the exact analyzer and the simulator.
//
// Physicians are indexed from 0. In the two-physician experimental
// configuration physician 0 is the focal player and physician 1 the
// programmed partner.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace qlab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Parameters

struct SystemParams {
  int rooms = 4;                              // M
  int physicians = 2;                         // N
  double arrival_rate = 1.0 / 30.0;           // group arrivals per time unit
  std::vector<double> group_dist{0.0, 0.0, 1.0};  // P(K = k), k = 1..B
  double service_rate = 1.0 / 15.0;           // per physician

  int max_group_size() const { return static_cast<int>(group_dist.size()); }

  double mean_group_size() const {
    double m = 0.0;
    for (std::size_t k = 0; k < group_dist.size(); ++k) {
      m += static_cast<double>(k + 1) * group_dist[k];
    }
    return m;
  }

  // Offered patient load, lambda * E[K].
  double offered_load() const { return arrival_rate * mean_group_size(); }
};

// M=4 rooms, two physicians, groups of three at rate 1/30, service rate 1/15.
inline SystemParams experimental_params() { return SystemParams{}; }

inline SystemParams experimental_params(double arrival_rate, double service_rate) {
  SystemParams p;
  p.arrival_rate = arrival_rate;
  p.service_rate = service_rate;
  return p;
}

// Returns the first violated invariant, or nullopt when the parameters are valid.
inline std::optional<std::string> validate_params(const SystemParams& p) {
  if (p.rooms < 1) return "M >= 1 violated (rooms = " + std::to_string(p.rooms) + ")";
  if (p.physicians < 2) {
    return "N >= 2 violated (physicians = " + std::to_string(p.physicians) + ")";
  }
  if (!(p.arrival_rate > 0.0) || !std::isfinite(p.arrival_rate)) {
    std::ostringstream os;
    os << "lambda > 0 violated (lambda = " << p.arrival_rate << ")";
    return os.str();
  }
  if (!(p.service_rate > 0.0) || !std::isfinite(p.service_rate)) {
    std::ostringstream os;
    os << "mu > 0 violated (mu = " << p.service_rate << ")";
    return os.str();
  }
  if (p.group_dist.empty()) return "group_dist must not be empty";
  double sum = 0.0;
  for (std::size_t k = 0; k < p.group_dist.size(); ++k) {
    if (!(p.group_dist[k] >= 0.0) || !std::isfinite(p.group_dist[k])) {
      return "group_dist entry " + std::to_string(k + 1) + " is negative";
    }
    sum += p.group_dist[k];
  }
  if (std::abs(sum - 1.0) > 1e-12) {
    std::ostringstream os;
    os << "group_dist sums to " << sum;
    return os.str();
  }
  return std::nullopt;
}

inline void require_valid(const SystemParams& p) {
  if (auto err = validate_params(p)) throw Error("invalid parameters: " + *err);
}

// ---------------------------------------------------------------------------
// States

struct SystemState {
  int unassigned = 0;
  std::vector<int> caseloads;

  int occupancy() const {
    return unassigned + std::accumulate(caseloads.begin(), caseloads.end(), 0);
  }

  int active() const {
    return static_cast<int>(std::count_if(caseloads.begin(), caseloads.end(),
                                          [](int a) { return a >= 1; }));
  }

  // No physician sits at the terminal while patients remain unassigned.
  bool stable() const {
    return unassigned == 0 ||
           std::all_of(caseloads.begin(), caseloads.end(), [](int a) { return a >= 1; });
  }

  std::string to_string() const {
    std::string s = "(" + std::to_string(unassigned);
    for (int a : caseloads) s += "," + std::to_string(a);
    return s + ")";
  }

  friend auto operator<=>(const SystemState&, const SystemState&) = default;
  friend bool operator==(const SystemState&, const SystemState&) = default;
};

inline SystemState empty_state(int physicians) {
  return SystemState{0, std::vector<int>(static_cast<std::size_t>(physicians), 0)};
}

inline SystemState make_state(int unassigned, std::vector<int> caseloads) {
  return SystemState{unassigned, std::move(caseloads)};
}

// Presentation order used in tables: unassigned count, then occupancy, then
// number of active physicians, then caseloads lexicographically. For the
// experimental chain this reproduces the familiar nine-state listing.
struct DisplayOrder {
  bool operator()(const SystemState& a, const SystemState& b) const {
    auto key = [](const SystemState& s) {
      return std::make_tuple(s.unassigned, s.occupancy(), s.active());
    };
    if (key(a) != key(b)) return key(a) < key(b);
    return a.caseloads < b.caseloads;
  }
};

// Patients admitted from an arriving group; the rest are blocked for good.
inline int admit_count(const SystemState& state, int group_size, int capacity) {
  const int free_rooms = std::max(0, capacity - state.occupancy());
  return std::min(group_size, free_rooms);
}

// ---------------------------------------------------------------------------
// Decision rules

// d(U, A): how many patients an idle physician claims from the pool.
class DecisionRule {
 public:
  using ClaimFn = std::function<int(int unassigned, std::span<const int> caseloads)>;

  DecisionRule(std::string name, int max_batch, ClaimFn fn, bool external = false)
      : name_(std::move(name)), max_batch_(max_batch), fn_(std::move(fn)), external_(external) {
    if (max_batch_ < 1) throw Error("decision rule max_batch must be >= 1");
  }

  // Claim exactly one patient. max_batch only widens the set of states the
  // analyzer explores as alternatives; the rule itself never batches.
  static DecisionRule assign_one(int max_batch = 1) {
    return DecisionRule("assign-one", max_batch, [](int, std::span<const int>) { return 1; });
  }

  // Claim min(U, cap) patients.
  static DecisionRule batch(int cap = 2) {
    return DecisionRule("batch", cap, [cap](int u, std::span<const int>) {
      return std::min(u, cap);
    });
  }

  // Explicit table keyed by (U, caseloads); states missing from the table
  // fall back to `fallback` capped at U.
  static DecisionRule from_table(std::map<SystemState, int> table, int max_batch,
                                 int fallback = 1) {
    return DecisionRule("table", max_batch,
                        [table = std::move(table), fallback](int u, std::span<const int> a) {
                          SystemState key{u, std::vector<int>(a.begin(), a.end())};
                          auto it = table.find(key);
                          return it != table.end() ? it->second : std::min(u, fallback);
                        });
  }

  // Deterministic pseudo-random stationary rule: the claim is a hash of
  // (seed, U, A) mapped onto 1..min(U, max_batch).
  static DecisionRule random(std::uint64_t seed, int max_batch) {
    return DecisionRule("random", max_batch, [seed, max_batch](int u, std::span<const int> a) {
      std::uint64_t h = seed ^ 0x9e3779b97f4a7c15ULL;
      auto mix = [&h](std::uint64_t v) {
        h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
        h ^= h >> 31;
        h *= 0xbf58476d1ce4e5b9ULL;
        h ^= h >> 29;
      };
      mix(static_cast<std::uint64_t>(u));
      for (int x : a) mix(static_cast<std::uint64_t>(x) + 17);
      const int options = std::min(u, max_batch);
      return 1 + static_cast<int>(h % static_cast<std::uint64_t>(options));
    });
  }

  // Decided by an outside party at run time (the human player). Only the
  // resumable simulation engine knows how to wait for it.
  static DecisionRule external(int max_batch = 2) {
    return DecisionRule(
        "external", max_batch,
        [](int, std::span<const int>) -> int {
          throw Error("external decision rule cannot be evaluated directly");
        },
        true);
  }

  int claim(int unassigned, std::span<const int> caseloads) const {
    return fn_(unassigned, caseloads);
  }

  const std::string& name() const { return name_; }
  int max_batch() const { return max_batch_; }
  bool is_external() const { return external_; }

 private:
  std::string name_;
  int max_batch_;
  ClaimFn fn_;
  bool external_;
};

struct StrategyProfile {
  std::vector<DecisionRule> rules;
  std::vector<int> decision_order;  // who decides first at a shared epoch

  int physicians() const { return static_cast<int>(rules.size()); }
};

inline std::vector<int> ascending_order(int n) {
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  return order;
}

inline void validate_profile(const StrategyProfile& profile, int physicians) {
  if (profile.physicians() != physicians) {
    throw Error("strategy profile has " + std::to_string(profile.physicians()) +
                " rules for " + std::to_string(physicians) + " physicians");
  }
  std::vector<int> sorted = profile.decision_order;
  std::sort(sorted.begin(), sorted.end());
  if (sorted != ascending_order(physicians)) {
    throw Error("decision_order is not a permutation of the physician indices");
  }
}

// Every physician claims exactly one patient (the reference policy of the
// coupling argument).
inline StrategyProfile all_assign_one(int physicians, int max_batch = 1) {
  StrategyProfile p;
  for (int i = 0; i < physicians; ++i) p.rules.push_back(DecisionRule::assign_one(max_batch));
  p.decision_order = ascending_order(physicians);
  return p;
}

enum class Strategy { no_batch, batch };

inline const char* to_string(Strategy s) { return s == Strategy::batch ? "batch" : "no_batch"; }

// Experimental two-physician profile: the partner (index 1) always claims one
// and decides first; the focal physician (index 0) claims one or two.
inline StrategyProfile experimental_profile(Strategy focal) {
  StrategyProfile p;
  p.rules.push_back(focal == Strategy::batch ? DecisionRule::batch(2)
                                             : DecisionRule::assign_one(2));
  p.rules.push_back(DecisionRule::assign_one(1));
  p.decision_order = {1, 0};
  return p;
}

// Random admissible stationary profile: every physician gets an independent
// hashed rule with claims in 1..min(U, max_batch), and the decision order is
// a random permutation.
inline StrategyProfile random_profile(std::uint64_t seed, int physicians, int max_batch = 2) {
  std::mt19937_64 rng(seed);
  StrategyProfile p;
  for (int i = 0; i < physicians; ++i) p.rules.push_back(DecisionRule::random(rng(), max_batch));
  p.decision_order = ascending_order(physicians);
  std::shuffle(p.decision_order.begin(), p.decision_order.end(), rng);
  return p;
}

// Same as experimental_profile but the focal claim is left to a human.
inline StrategyProfile interactive_profile() {
  StrategyProfile p;
  p.rules.push_back(DecisionRule::external(2));
  p.rules.push_back(DecisionRule::assign_one(1));
  p.decision_order = {1, 0};
  return p;
}

// ---------------------------------------------------------------------------
// Assignment cascade

struct Claim {
  int physician;
  int count;
};

struct CascadeResult {
  SystemState state;
  std::vector<Claim> claims;
  // Set when an external rule must choose before the cascade can finish.
  std::optional<int> waiting_on;
};

inline void check_claim(const DecisionRule& rule, int physician, int unassigned, int claim) {
  const int hi = std::min(unassigned, rule.max_batch());
  if (claim < 1 || claim > hi) {
    throw Error("physician " + std::to_string(physician) + " claimed " + std::to_string(claim) +
                " with " + std::to_string(unassigned) + " unassigned (allowed 1.." +
                std::to_string(hi) + ")");
  }
}

// Runs claims in decision order until the state is stable or an external rule
// faces a genuine choice. An external rule with only one admissible claim is
// resolved automatically (non-idling).
inline CascadeResult run_cascade(SystemState state, const StrategyProfile& profile) {
  CascadeResult out{std::move(state), {}, std::nullopt};
  auto& s = out.state;
  // One pass suffices: a claim leaves the claimant busy for the rest of the pass.
  for (int i : profile.decision_order) {
    auto& a = s.caseloads[static_cast<std::size_t>(i)];
    if (a != 0 || s.unassigned < 1) continue;
    const auto& rule = profile.rules[static_cast<std::size_t>(i)];
    int c = 1;
    if (rule.is_external()) {
      if (std::min(s.unassigned, rule.max_batch()) > 1) {
        out.waiting_on = i;
        return out;
      }
    } else {
      c = rule.claim(s.unassigned, s.caseloads);
    }
    check_claim(rule, i, s.unassigned, c);
    s.unassigned -= c;
    a += c;
    out.claims.push_back({i, c});
  }
  return out;
}

inline SystemState apply_assignment_cascade(const SystemState& state,
                                            const StrategyProfile& profile) {
  auto r = run_cascade(state, profile);
  if (r.waiting_on) throw Error("cascade requires an external decision");
  return r.state;
}

// All stable states reachable from `state` when every idle physician may make
// any admissible claim (1..min(U, max_batch)), in decision order.
inline std::set<SystemState> cascade_outcomes(const SystemState& state,
                                              const StrategyProfile& profile) {
  std::set<SystemState> out;
  std::function<void(SystemState, std::size_t)> go = [&](SystemState s, std::size_t pos) {
    while (pos < profile.decision_order.size()) {
      const int i = profile.decision_order[pos];
      if (s.caseloads[static_cast<std::size_t>(i)] == 0 && s.unassigned >= 1) break;
      ++pos;
    }
    if (pos == profile.decision_order.size()) {
      out.insert(std::move(s));
      return;
    }
    const int i = profile.decision_order[pos];
    const int hi = std::min(s.unassigned, profile.rules[static_cast<std::size_t>(i)].max_batch());
    for (int c = 1; c <= hi; ++c) {
      SystemState next = s;
      next.unassigned -= c;
      next.caseloads[static_cast<std::size_t>(i)] += c;
      go(std::move(next), pos + 1);
    }
  };
  go(state, 0);
  return out;
}

// A decision point with a genuine choice: physician `physician` is idle and
// faces `state` (pre-claim) with more than one admissible claim.
struct DecisionPoint {
  int physician;
  SystemState state;
  int max_claim;
  friend auto operator<=>(const DecisionPoint&, const DecisionPoint&) = default;
  friend bool operator==(const DecisionPoint&, const DecisionPoint&) = default;
};

inline std::vector<DecisionPoint> cascade_decision_points(const SystemState& state,
                                                          const StrategyProfile& profile) {
  std::set<DecisionPoint> out;
  std::function<void(SystemState, std::size_t)> go = [&](SystemState s, std::size_t pos) {
    while (pos < profile.decision_order.size()) {
      const int i = profile.decision_order[pos];
      if (s.caseloads[static_cast<std::size_t>(i)] == 0 && s.unassigned >= 1) break;
      ++pos;
    }
    if (pos == profile.decision_order.size()) return;
    const int i = profile.decision_order[pos];
    const int hi = std::min(s.unassigned, profile.rules[static_cast<std::size_t>(i)].max_batch());
    if (hi > 1) out.insert(DecisionPoint{i, s, hi});
    for (int c = 1; c <= hi; ++c) {
      SystemState next = s;
      next.unassigned -= c;
      next.caseloads[static_cast<std::size_t>(i)] += c;
      go(std::move(next), pos + 1);
    }
  };
  go(state, 0);
  return {out.begin(), out.end()};
}

// Reward specifications for the Markov reward analysis.
struct RewardSpec {
  enum class Kind { personal_throughput, group_throughput, occupancy };
  Kind kind = Kind::personal_throughput;
  int focal = 0;

  static RewardSpec personal(int focal = 0) { return {Kind::personal_throughput, focal}; }
  static RewardSpec group() { return {Kind::group_throughput, 0}; }
  static RewardSpec occupancy() { return {Kind::occupancy, 0}; }

  // Reward rate in a state.
  double rate(const SystemState& s, double service_rate) const {
    switch (kind) {
      case Kind::personal_throughput:
        return s.caseloads.at(static_cast<std::size_t>(focal)) >= 1 ? service_rate : 0.0;
      case Kind::group_throughput:
        return service_rate * s.active();
      case Kind::occupancy:
        return static_cast<double>(s.occupancy());
    }
    return 0.0;
  }
};

inline const char* to_string(RewardSpec::Kind k) {
  switch (k) {
    case RewardSpec::Kind::personal_throughput: return "personal";
    case RewardSpec::Kind::group_throughput: return "group";
    case RewardSpec::Kind::occupancy: return "occupancy";
  }
  return "?";
}

inline void validate_reward(const RewardSpec& r, int physicians) {
  if (r.kind == RewardSpec::Kind::personal_throughput &&
      (r.focal < 0 || r.focal >= physicians)) {
    throw Error("personal reward focal index out of range");
  }
}

}  // namespace qlab
