#pragma once

// Event-driven simulation of the shared-pool model on explicit sample paths.
//
// A sample path fixes the arrival realization and a sequence of service
// requirements S_1, S_2, ... that are consumed in order of service
// initiation, never by patient identity. Two policies replayed on the same
// path are therefore coupled exactly as in the pathwise dominance argument.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "qlab/model.hpp"

namespace qlab {

// ---------------------------------------------------------------------------
// Random inputs

struct TimeDistribution {
  enum class Kind { exponential, deterministic, lognormal };
  Kind kind = Kind::exponential;
  double mean = 1.0;
  double cv = 1.0;  // coefficient of variation, lognormal only

  static TimeDistribution exponential(double mean) { return {Kind::exponential, mean, 1.0}; }
  static TimeDistribution deterministic(double mean) { return {Kind::deterministic, mean, 0.0}; }
  static TimeDistribution lognormal(double mean, double cv) { return {Kind::lognormal, mean, cv}; }

  template <class Rng>
  double sample(Rng& rng) const {
    switch (kind) {
      case Kind::exponential:
        return std::exponential_distribution<double>(1.0 / mean)(rng);
      case Kind::deterministic:
        return mean;
      case Kind::lognormal: {
        const double s2 = std::log1p(cv * cv);
        return std::lognormal_distribution<double>(std::log(mean) - 0.5 * s2, std::sqrt(s2))(rng);
      }
    }
    return mean;
  }

  friend bool operator==(const TimeDistribution&, const TimeDistribution&) = default;
};

inline const char* to_string(TimeDistribution::Kind k) {
  switch (k) {
    case TimeDistribution::Kind::exponential: return "exponential";
    case TimeDistribution::Kind::deterministic: return "deterministic";
    case TimeDistribution::Kind::lognormal: return "lognormal";
  }
  return "?";
}

struct GroupArrival {
  double time = 0.0;
  int size = 1;
  friend bool operator==(const GroupArrival&, const GroupArrival&) = default;
};

struct SamplePath {
  std::uint64_t seed = 0;
  double horizon = 0.0;
  TimeDistribution interarrival;
  TimeDistribution service;
  std::vector<GroupArrival> arrivals;
  std::vector<double> service_draws;  // S_k for the k-th service initiation

  // Only exponential inputs make the path a realization of the CTMC.
  bool markovian() const {
    return interarrival.kind == TimeDistribution::Kind::exponential &&
           service.kind == TimeDistribution::Kind::exponential;
  }

  friend bool operator==(const SamplePath&, const SamplePath&) = default;
};

struct PathOptions {
  std::optional<TimeDistribution> interarrival;  // default exponential(1/lambda)
  std::optional<TimeDistribution> service;       // default exponential(1/mu)
};

// splitmix64 step; used to derive independent run seeds from one master seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline SamplePath generate_sample_path(const SystemParams& params, std::uint64_t seed,
                                       double horizon, const PathOptions& options = {}) {
  require_valid(params);
  if (!(horizon > 0.0)) throw Error("horizon must be positive");
  SamplePath path;
  path.seed = seed;
  path.horizon = horizon;
  path.interarrival =
      options.interarrival.value_or(TimeDistribution::exponential(1.0 / params.arrival_rate));
  path.service = options.service.value_or(TimeDistribution::exponential(1.0 / params.service_rate));

  const auto lo = static_cast<std::uint32_t>(seed), hi = static_cast<std::uint32_t>(seed >> 32);
  std::seed_seq arrival_seq{lo, hi, 1u}, service_seq{lo, hi, 2u};
  std::mt19937_64 arrival_rng(arrival_seq), service_rng(service_seq);
  std::discrete_distribution<int> group(params.group_dist.begin(), params.group_dist.end());

  int patients = 0;
  double t = 0.0;
  for (;;) {
    t += path.interarrival.sample(arrival_rng);
    if (t > horizon) break;
    const int k = group(arrival_rng) + 1;
    path.arrivals.push_back({t, k});
    patients += k;
  }
  // Each admitted patient initiates service exactly once, so the number of
  // arriving patients bounds the number of initiations.
  path.service_draws.reserve(static_cast<std::size_t>(patients));
  for (int k = 0; k < patients; ++k) path.service_draws.push_back(path.service.sample(service_rng));
  return path;
}

// ---------------------------------------------------------------------------
// Trajectories

enum class EventKind { arrival, admission, blocked, assignment, service_start, completion };

inline const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::arrival: return "arrival";
    case EventKind::admission: return "admission";
    case EventKind::blocked: return "blocked";
    case EventKind::assignment: return "assignment";
    case EventKind::service_start: return "service_start";
    case EventKind::completion: return "completion";
  }
  return "?";
}

inline std::optional<EventKind> event_kind_from_string(const std::string& s) {
  for (auto k : {EventKind::arrival, EventKind::admission, EventKind::blocked,
                 EventKind::assignment, EventKind::service_start, EventKind::completion}) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

struct Event {
  double t = 0.0;
  EventKind kind = EventKind::arrival;
  std::optional<int> physician;
  std::optional<int> patient;
  friend bool operator==(const Event&, const Event&) = default;
};

struct Trajectory {
  std::vector<Event> events;
  SystemState end_state;
};

struct PatientRecord {
  int id = 0;
  double arrival = 0.0;
  bool admitted = false;
  int physician = -1;
  double assigned = std::numeric_limits<double>::quiet_NaN();
  double started = std::numeric_limits<double>::quiet_NaN();
  double completed = std::numeric_limits<double>::quiet_NaN();
  int draw_index = -1;  // which S_k this patient's service consumed
};

// Number in system and cumulative completions right after an event.
struct Checkpoint {
  double t = 0.0;
  int in_system = 0;
  int completed = 0;
};

struct RunSummary {
  std::vector<int> completions;  // per physician
  int arrived = 0;               // patients, admitted or not
  int admitted = 0;
  int blocked = 0;
  int initiations = 0;
  double occupancy_integral = 0.0;  // person-time of admitted patients
  SystemState end_state;

  int total_completions() const {
    int c = 0;
    for (int x : completions) c += x;
    return c;
  }
};

struct EngineOptions {
  bool record_events = true;
  bool record_checkpoints = false;
  bool track_state_time = false;
};

// Resumable event-driven engine. run_until() stops early when an external
// decision rule must choose; submit_claim() resolves it.
class Simulation {
 public:
  Simulation(SystemParams params, StrategyProfile profile, SamplePath path,
             EngineOptions options = {})
      : params_(std::move(params)),
        profile_(std::move(profile)),
        path_(std::move(path)),
        options_(options),
        physicians_(static_cast<std::size_t>(params_.physicians)) {
    require_valid(params_);
    validate_profile(profile_, params_.physicians);
    summary_.completions.assign(physicians_.size(), 0);
    summary_.end_state = empty_state(params_.physicians);
  }

  double clock() const { return clock_; }
  double horizon() const { return path_.horizon; }
  const SamplePath& path() const { return path_; }
  const SystemParams& params() const { return params_; }
  const StrategyProfile& profile() const { return profile_; }

  bool awaiting_decision() const { return pending_.has_value(); }
  std::optional<int> pending_physician() const { return pending_; }
  bool finished() const { return !pending_ && clock_ >= path_.horizon; }

  SystemState state() const {
    SystemState s{static_cast<int>(unassigned_.size()), {}};
    s.caseloads.reserve(physicians_.size());
    for (const auto& p : physicians_) s.caseloads.push_back(static_cast<int>(p.queue.size()));
    return s;
  }

  int max_claim() const {
    if (!pending_) return 0;
    const auto& rule = profile_.rules[static_cast<std::size_t>(*pending_)];
    return std::min(static_cast<int>(unassigned_.size()), rule.max_batch());
  }

  // Process every event with time <= min(t, horizon), unless a decision
  // becomes pending first. Returns true if the clock reached the target.
  bool run_until(double t) {
    const double target = std::min(t, path_.horizon);
    while (!pending_) {
      const auto next = next_event_time();
      if (!next || *next > target) break;
      process_next();
    }
    if (pending_) return false;
    if (target >= path_.horizon) {
      if (target > clock_) advance_clock(target);
    } else if (target > clock_) {
      clock_ = target;  // accrual waits for the next event so chunking cannot change sums
    }
    return true;
  }

  void run() { run_until(path_.horizon); }

  // Process exactly one event (arrival or completion) if one remains before
  // the horizon; otherwise advance to the horizon. Returns false when nothing
  // happened.
  bool step() {
    if (pending_) return false;
    const auto next = next_event_time();
    if (!next || *next > path_.horizon) {
      if (clock_ < path_.horizon) {
        advance_clock(path_.horizon);
        return true;
      }
      return false;
    }
    process_next();
    return true;
  }

  void submit_claim(int claim) {
    if (!pending_) throw Error("no decision is pending");
    const int i = *pending_;
    check_claim(profile_.rules[static_cast<std::size_t>(i)], i,
                static_cast<int>(unassigned_.size()), claim);
    pending_.reset();
    assign(i, claim);
    cascade();
    record_checkpoint();
  }

  // Past the horizon: no further arrivals, serve everyone still present so
  // that every admitted patient has a completion time. Summary counters stay
  // frozen at their horizon values.
  void drain() {
    if (pending_) throw Error("cannot drain with a pending decision");
    run_until(path_.horizon);
    draining_ = true;
    while (auto t = next_completion()) {
      if (pending_) throw Error("external decision during drain");
      complete(t->second, t->first);
    }
  }

  RunSummary summary() const {
    RunSummary out = summary_;
    if (!draining_) out.occupancy_integral += (clock_ - accrued_until_) * state().occupancy();
    return out;
  }
  Trajectory trajectory() const { return {events_, state()}; }
  const std::vector<Event>& events() const { return events_; }
  const std::vector<PatientRecord>& patients() const { return patients_; }
  const std::vector<Checkpoint>& checkpoints() const { return checkpoints_; }
  std::map<SystemState, double> state_time() const {
    auto out = state_time_;
    if (!draining_ && clock_ > accrued_until_) out[state()] += clock_ - accrued_until_;
    return out;
  }
  int draws_consumed() const { return next_draw_; }
  const std::deque<int>& unassigned_patients() const { return unassigned_; }
  const std::deque<int>& caseload(int i) const { return physicians_.at(static_cast<std::size_t>(i)).queue; }

 private:
  struct Physician {
    std::deque<int> queue;  // front is in service
    double busy_until = std::numeric_limits<double>::infinity();
  };

  std::optional<std::pair<double, int>> next_completion() const {
    std::optional<std::pair<double, int>> best;
    for (std::size_t i = 0; i < physicians_.size(); ++i) {
      const double t = physicians_[i].busy_until;
      if (std::isfinite(t) && (!best || t < best->first)) best = {t, static_cast<int>(i)};
    }
    return best;
  }

  std::optional<double> next_event_time() const {
    std::optional<double> t;
    if (auto c = next_completion()) t = c->first;
    if (next_arrival_ < path_.arrivals.size()) {
      const double a = path_.arrivals[next_arrival_].time;
      if (!t || a < *t) t = a;
    }
    return t;
  }

  // Completions before arrivals at equal times; completions by index.
  void process_next() {
    const auto c = next_completion();
    const bool has_arrival = next_arrival_ < path_.arrivals.size();
    if (c && (!has_arrival || c->first <= path_.arrivals[next_arrival_].time)) {
      complete(c->second, c->first);
    } else {
      arrive(path_.arrivals[next_arrival_++]);
    }
    if (!draining_) record_checkpoint();
  }

  void advance_clock(double t) {
    if (!draining_) {
      const double dt = t - accrued_until_;
      accrued_until_ = t;
      const SystemState s = state();
      summary_.occupancy_integral += dt * s.occupancy();
      if (options_.track_state_time && dt > 0.0) state_time_[s] += dt;
      summary_.end_state = s;
    }
    clock_ = t;
  }

  void log(double t, EventKind kind, std::optional<int> physician, std::optional<int> patient) {
    if (options_.record_events) events_.push_back({t, kind, physician, patient});
  }

  void record_checkpoint() {
    if (options_.record_checkpoints) {
      checkpoints_.push_back({clock_, state().occupancy(), summary_.total_completions()});
    }
    summary_.end_state = state();
  }

  void arrive(const GroupArrival& g) {
    advance_clock(g.time);
    log(clock_, EventKind::arrival, std::nullopt, std::nullopt);
    const int admitted = admit_count(state(), g.size, params_.rooms);
    for (int k = 0; k < g.size; ++k) {
      PatientRecord p;
      p.id = static_cast<int>(patients_.size());
      p.arrival = clock_;
      p.admitted = k < admitted;
      patients_.push_back(p);
      ++summary_.arrived;
      if (p.admitted) {
        ++summary_.admitted;
        unassigned_.push_back(p.id);
        log(clock_, EventKind::admission, std::nullopt, p.id);
      } else {
        ++summary_.blocked;
        log(clock_, EventKind::blocked, std::nullopt, p.id);
      }
    }
    cascade();
  }

  void complete(int i, double t) {
    advance_clock(t);
    auto& ph = physicians_[static_cast<std::size_t>(i)];
    const int id = ph.queue.front();
    ph.queue.pop_front();
    patients_[static_cast<std::size_t>(id)].completed = clock_;
    if (!draining_) ++summary_.completions[static_cast<std::size_t>(i)];
    log(clock_, EventKind::completion, i, id);
    ph.busy_until = std::numeric_limits<double>::infinity();
    if (!ph.queue.empty()) {
      start_service(i);
    } else {
      cascade();
    }
  }

  void start_service(int i) {
    auto& ph = physicians_[static_cast<std::size_t>(i)];
    if (next_draw_ >= static_cast<int>(path_.service_draws.size())) {
      throw Error("sample path ran out of service draws");
    }
    const int id = ph.queue.front();
    auto& rec = patients_[static_cast<std::size_t>(id)];
    rec.started = clock_;
    rec.draw_index = next_draw_;
    ph.busy_until = clock_ + path_.service_draws[static_cast<std::size_t>(next_draw_++)];
    if (!draining_) ++summary_.initiations;
    log(clock_, EventKind::service_start, i, id);
  }

  // Claimed patients are taken earliest-admitted first and treated in that order.
  void assign(int i, int count) {
    auto& ph = physicians_[static_cast<std::size_t>(i)];
    const bool was_idle = ph.queue.empty();
    for (int k = 0; k < count; ++k) {
      const int id = unassigned_.front();
      unassigned_.pop_front();
      ph.queue.push_back(id);
      auto& rec = patients_[static_cast<std::size_t>(id)];
      rec.physician = i;
      rec.assigned = clock_;
      log(clock_, EventKind::assignment, i, id);
    }
    if (was_idle) start_service(i);
  }

  void cascade() {
    for (int i : profile_.decision_order) {
      const auto& ph = physicians_[static_cast<std::size_t>(i)];
      if (!ph.queue.empty() || unassigned_.empty()) continue;
      const auto& rule = profile_.rules[static_cast<std::size_t>(i)];
      const int u = static_cast<int>(unassigned_.size());
      int c = 1;
      if (rule.is_external()) {
        if (std::min(u, rule.max_batch()) > 1) {
          pending_ = i;
          return;
        }
      } else {
        const auto s = state();
        c = rule.claim(u, s.caseloads);
      }
      check_claim(rule, i, u, c);
      assign(i, c);
    }
  }

  SystemParams params_;
  StrategyProfile profile_;
  SamplePath path_;
  EngineOptions options_;
  std::vector<Physician> physicians_;
  std::deque<int> unassigned_;
  std::size_t next_arrival_ = 0;
  int next_draw_ = 0;
  double clock_ = 0.0;
  double accrued_until_ = 0.0;
  bool draining_ = false;
  std::optional<int> pending_;
  RunSummary summary_;
  std::vector<Event> events_;
  std::vector<PatientRecord> patients_;
  std::vector<Checkpoint> checkpoints_;
  std::map<SystemState, double> state_time_;
};

struct SimulationResult {
  Trajectory trajectory;
  RunSummary summary;
  std::vector<PatientRecord> patients;
  std::vector<Checkpoint> checkpoints;
  int draws_consumed = 0;
};

inline SimulationResult simulate(const SamplePath& path, const SystemParams& params,
                                 const StrategyProfile& profile, EngineOptions options = {}) {
  Simulation sim(params, profile, path, options);
  sim.run();
  if (sim.awaiting_decision()) throw Error("simulate() cannot drive an external decision rule");
  return {sim.trajectory(), sim.summary(), sim.patients(), sim.checkpoints(), sim.draws_consumed()};
}

// ---------------------------------------------------------------------------
// Coupling

struct CouplingCheckpoint {
  double t = 0.0;
  int n_star = 0, n_alt = 0;
  int c_star = 0, c_alt = 0;
};

struct CouplingReport {
  std::vector<CouplingCheckpoint> checkpoints;
  bool dominance_holds = true;       // both orderings below
  bool completions_dominate = true;  // C_star >= C_alt everywhere
  bool occupancy_dominates = true;   // N_star <= N_alt everywhere
  int admitted_star = 0, admitted_alt = 0;
  std::optional<std::pair<double, std::string>> first_violation;
};

// Replays the always-assign-one reference and `alt_profile` on the same
// arrivals and the same initiation-indexed service draws, then checks
// N_star(t) <= N_alt(t) and C_star(t) >= C_alt(t) at every event time.
inline CouplingReport couple(const SamplePath& path, const SystemParams& params,
                             const StrategyProfile& alt_profile) {
  EngineOptions opt;
  opt.record_events = false;
  opt.record_checkpoints = true;
  StrategyProfile reference = all_assign_one(params.physicians);
  reference.decision_order = alt_profile.decision_order;
  const auto star = simulate(path, params, reference, opt);
  const auto alt = simulate(path, params, alt_profile, opt);

  std::vector<double> times;
  for (const auto& c : star.checkpoints) times.push_back(c.t);
  for (const auto& c : alt.checkpoints) times.push_back(c.t);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());

  CouplingReport report;
  report.admitted_star = star.summary.admitted;
  report.admitted_alt = alt.summary.admitted;
  std::size_t i = 0, j = 0;
  CouplingCheckpoint cur;
  for (double t : times) {
    while (i < star.checkpoints.size() && star.checkpoints[i].t <= t) {
      cur.n_star = star.checkpoints[i].in_system;
      cur.c_star = star.checkpoints[i].completed;
      ++i;
    }
    while (j < alt.checkpoints.size() && alt.checkpoints[j].t <= t) {
      cur.n_alt = alt.checkpoints[j].in_system;
      cur.c_alt = alt.checkpoints[j].completed;
      ++j;
    }
    cur.t = t;
    report.checkpoints.push_back(cur);
    report.completions_dominate = report.completions_dominate && cur.c_star >= cur.c_alt;
    report.occupancy_dominates = report.occupancy_dominates && cur.n_star <= cur.n_alt;
    if (report.dominance_holds && (cur.n_star > cur.n_alt || cur.c_star < cur.c_alt)) {
      report.dominance_holds = false;
      report.first_violation = {
          t, "N*=" + std::to_string(cur.n_star) + " N=" + std::to_string(cur.n_alt) +
                 " C*=" + std::to_string(cur.c_star) + " C=" + std::to_string(cur.c_alt)};
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Batch classification of assignment logs

struct BatchLabel {
  int patient = -1;
  int physician = -1;
  double t = 0.0;
  bool batched = false;
  int batch_size = 1;
};

struct Assignment {
  int physician = 0;
  double t = 0.0;
  int patient = -1;
};

// Consecutive assignments by the same physician no more than `window` apart
// form one chain; every member of a chain of length b is labeled with b.
inline std::vector<BatchLabel> classify_batches(std::vector<Assignment> assignments,
                                                double window) {
  std::stable_sort(assignments.begin(), assignments.end(), [](const auto& a, const auto& b) {
    return a.physician != b.physician ? a.physician < b.physician : a.t < b.t;
  });
  std::vector<BatchLabel> out;
  std::size_t start = 0;
  for (std::size_t k = 0; k <= assignments.size(); ++k) {
    const bool breaks = k == assignments.size() ||
                        (k > start && (assignments[k].physician != assignments[k - 1].physician ||
                                       assignments[k].t - assignments[k - 1].t > window));
    if (!breaks) continue;
    const int size = static_cast<int>(k - start);
    for (std::size_t m = start; m < k; ++m) {
      out.push_back({assignments[m].patient, assignments[m].physician, assignments[m].t,
                     size >= 2, size});
    }
    start = k;
  }
  return out;
}

inline std::vector<BatchLabel> classify_batches(const Trajectory& trajectory, double window) {
  std::vector<Assignment> a;
  for (const auto& e : trajectory.events) {
    if (e.kind == EventKind::assignment && e.physician) {
      a.push_back({*e.physician, e.t, e.patient.value_or(-1)});
    }
  }
  return classify_batches(std::move(a), window);
}

// ---------------------------------------------------------------------------
// Monte Carlo estimation

struct Estimate {
  double mean = 0.0;
  double std_error = 0.0;
  int n = 0;

  std::pair<double, double> ci(double z) const { return {mean - z * std_error, mean + z * std_error}; }
  bool within(double value, double k_se) const {
    return std::abs(mean - value) <= k_se * std_error;
  }
};

inline Estimate estimate_from(const std::vector<double>& xs) {
  Estimate e;
  e.n = static_cast<int>(xs.size());
  if (xs.empty()) return e;
  double sum = 0.0;
  for (double x : xs) sum += x;
  e.mean = sum / e.n;
  if (e.n > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - e.mean) * (x - e.mean);
    e.std_error = std::sqrt(ss / (e.n - 1) / e.n);
  }
  return e;
}

struct MonteCarloMetrics {
  Estimate system_throughput;
  Estimate mean_sojourn;
  Estimate blocking_rate;
  Estimate mean_occupancy;
  std::vector<std::pair<SystemState, Estimate>> state_occupancy;
  int runs = 0;
  double horizon = 0.0;
  double warmup = 0.0;
  bool markovian = true;

  const Estimate& occupancy_of(const SystemState& s) const {
    for (const auto& [state, e] : state_occupancy) {
      if (state == s) return e;
    }
    static const Estimate zero{};
    return zero;
  }
};

struct EstimateOptions {
  double warmup = 0.0;  // discarded prefix of every run
  PathOptions path;
  unsigned threads = 0;  // 0 = hardware concurrency
};

// Each run is one batch: a path of length warmup + horizon, measured over the
// last `horizon` time units. Sojourn times are those of patients admitted in
// the measurement window, followed to completion.
inline MonteCarloMetrics estimate_metrics(const SystemParams& params, const StrategyProfile& profile,
                                          int n_runs, double horizon, std::uint64_t seed,
                                          const EstimateOptions& options = {}) {
  if (n_runs < 2) throw Error("estimate_metrics needs at least two runs");
  struct RunResult {
    double throughput = 0, sojourn = 0, blocking = 0, occupancy = 0;
    std::map<SystemState, double> state_time;
    bool markovian = true;
  };
  std::vector<RunResult> results(static_cast<std::size_t>(n_runs));
  const double warm = options.warmup;

  auto run_one = [&](int r) {
    const auto path = generate_sample_path(params, derive_seed(seed, static_cast<std::uint64_t>(r)),
                                           warm + horizon, options.path);
    EngineOptions eo;
    eo.record_events = false;
    eo.track_state_time = true;
    Simulation sim(params, profile, path, eo);
    sim.run_until(warm);
    const RunSummary before = sim.summary();
    const auto time_before = sim.state_time();
    sim.run();
    const RunSummary after = sim.summary();
    RunResult out;
    out.markovian = path.markovian();
    out.throughput = (after.total_completions() - before.total_completions()) / horizon;
    const int arrived = after.arrived - before.arrived;
    out.blocking = arrived > 0 ? static_cast<double>(after.blocked - before.blocked) / arrived : 0.0;
    out.occupancy = (after.occupancy_integral - before.occupancy_integral) / horizon;
    for (const auto& [s, t] : sim.state_time()) {
      auto it = time_before.find(s);
      out.state_time[s] = (t - (it == time_before.end() ? 0.0 : it->second)) / horizon;
    }
    sim.drain();
    double total = 0.0;
    int count = 0;
    for (const auto& p : sim.patients()) {
      if (p.admitted && p.arrival >= warm) {
        total += p.completed - p.arrival;
        ++count;
      }
    }
    out.sojourn = count > 0 ? total / count : 0.0;
    results[static_cast<std::size_t>(r)] = std::move(out);
  };

  unsigned threads = options.threads ? options.threads : std::thread::hardware_concurrency();
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n_runs)));
  {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        for (int r = static_cast<int>(w); r < n_runs; r += static_cast<int>(threads)) run_one(r);
      });
    }
  }

  // Deterministic reduction in run order.
  MonteCarloMetrics m;
  m.runs = n_runs;
  m.horizon = horizon;
  m.warmup = warm;
  std::vector<double> thr, soj, blk, occ;
  std::set<SystemState> seen;
  for (const auto& r : results) {
    thr.push_back(r.throughput);
    soj.push_back(r.sojourn);
    blk.push_back(r.blocking);
    occ.push_back(r.occupancy);
    m.markovian = m.markovian && r.markovian;
    for (const auto& [s, f] : r.state_time) seen.insert(s);
  }
  m.system_throughput = estimate_from(thr);
  m.mean_sojourn = estimate_from(soj);
  m.blocking_rate = estimate_from(blk);
  m.mean_occupancy = estimate_from(occ);
  std::vector<SystemState> ordered(seen.begin(), seen.end());
  std::sort(ordered.begin(), ordered.end(), DisplayOrder{});
  for (const auto& s : ordered) {
    std::vector<double> xs;
    for (const auto& r : results) {
      auto it = r.state_time.find(s);
      xs.push_back(it == r.state_time.end() ? 0.0 : it->second);
    }
    m.state_occupancy.emplace_back(s, estimate_from(xs));
  }
  return m;
}

}  // namespace qlab
