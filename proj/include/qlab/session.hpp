#pragma once

// Interactive and committed-strategy shift sessions. The focal physician is
// index 0 and is played by a person (live) or by a committed rule; index 1
// is the programmed partner, who always claims one patient and decides first.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <vector>

#include "qlab/calibration.hpp"
#include "qlab/des.hpp"
#include "qlab/serialize.hpp"

namespace qlab {

class SessionError : public Error {
 public:
  enum class Code { not_found, invalid, conflict, busy };
  SessionError(Code code, const std::string& what) : Error(what), code_(code) {}
  Code code() const { return code_; }
  int http_status() const {
    switch (code_) {
      case Code::not_found: return 404;
      case Code::invalid: return 400;
      case Code::conflict:
      case Code::busy: return 409;
    }
    return 500;
  }

 private:
  Code code_;
};

enum class SessionMode { live, committed };
enum class SessionStatus { running, awaiting_decision, finished, awaiting_commit };
enum class CommittedStrategy { assign_one, assign_two };

inline const char* to_string(SessionMode m) { return m == SessionMode::live ? "live" : "committed"; }
inline const char* to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::running: return "running";
    case SessionStatus::awaiting_decision: return "awaiting_decision";
    case SessionStatus::finished: return "finished";
    case SessionStatus::awaiting_commit: return "awaiting_commit";
  }
  return "?";
}
inline const char* to_string(CommittedStrategy s) {
  return s == CommittedStrategy::assign_one ? "assign_one" : "assign_two";
}

inline std::optional<SessionMode> session_mode_from_string(const std::string& s) {
  if (s == "live") return SessionMode::live;
  if (s == "committed") return SessionMode::committed;
  return std::nullopt;
}
inline std::optional<CommittedStrategy> committed_strategy_from_string(const std::string& s) {
  if (s == "assign_one") return CommittedStrategy::assign_one;
  if (s == "assign_two") return CommittedStrategy::assign_two;
  return std::nullopt;
}

inline Strategy to_strategy(CommittedStrategy s) {
  return s == CommittedStrategy::assign_two ? Strategy::batch : Strategy::no_batch;
}

// Model time units per wall-clock second when a client paces a live shift.
inline constexpr double kUnitsPerSecond = 5.0;

struct DecisionRecord {
  double t = 0.0;
  SystemState state;  // before the claim
  int available = 0;
  int claim = 0;
  std::size_t event_index = 0;  // position in the event log
};

struct Payoff {
  TreatmentKind kind = TreatmentKind::GT;
  std::string unit;
  double raw_metric = 0.0;
  double terminal_credit = 0.0;
  double metric = 0.0;
  double threshold = 0.0;
  Micros per_unit = 0;
  Micros bonus = 0;
  Micros base_fee = 0;
  Micros total = 0;
  SystemState end_state;

  friend bool operator==(const Payoff&, const Payoff&) = default;
};

inline Payoff compute_payoff(const TreatmentSpec& t, const RunSummary& s) {
  Payoff p;
  p.kind = t.kind;
  p.unit = t.unit();
  p.end_state = s.end_state;
  p.terminal_credit = table_value(t.terminal_table, s.end_state);
  p.metric = realized_metric(t, s, t.terminal_table);
  p.raw_metric = p.metric - p.terminal_credit;
  p.threshold = t.threshold;
  p.per_unit = t.per_unit;
  p.bonus = realized_bonus(t, p.metric);
  p.base_fee = t.base_fee;
  p.total = p.base_fee + p.bonus;
  return p;
}

inline json payoff_json(const Payoff& p) {
  return json{{"treatment", to_string(p.kind)},
              {"unit", p.unit},
              {"raw_metric", p.raw_metric},
              {"terminal_credit", p.terminal_credit},
              {"metric", p.metric},
              {"threshold", p.threshold},
              {"per_unit", to_dollars(p.per_unit)},
              {"bonus", format_dollars(p.bonus)},
              {"base_fee", format_dollars(p.base_fee)},
              {"total", format_dollars(p.total)},
              {"base_fee_micros", p.base_fee},
              {"per_unit_micros", p.per_unit},
              {"bonus_micros", p.bonus},
              {"total_micros", p.total},
              {"end_state", p.end_state}};
}

struct AdvanceRequest {
  enum class Kind { step, to_next_decision, by_units, by_wall_seconds };
  Kind kind = Kind::to_next_decision;
  double amount = 0.0;
};

class Session {
 public:
  Session(std::string id, TreatmentSpec treatment, SessionMode mode, SamplePath path, SystemParams params,
          std::optional<std::string> path_id = std::nullopt)
      : id_(std::move(id)),
        treatment_(std::move(treatment)),
        mode_(mode),
        path_(std::move(path)),
        params_(std::move(params)),
        path_id_(std::move(path_id)) {
    validate_treatment(treatment_);
    if (path_.horizon != treatment_.horizon) throw SessionError(SessionError::Code::invalid, "path horizon does not match the treatment");
    if (mode_ == SessionMode::live) sim_.emplace(params_, interactive_profile(), path_);
  }

  const std::string& id() const { return id_; }
  SessionMode mode() const { return mode_; }
  const TreatmentSpec& treatment() const { return treatment_; }
  const SamplePath& path() const { return path_; }
  const std::optional<std::string>& path_id() const { return path_id_; }
  const std::vector<DecisionRecord>& decisions() const { return decisions_; }
  std::optional<CommittedStrategy> committed_strategy() const { return committed_; }

  SessionStatus status() const {
    if (!sim_) return SessionStatus::awaiting_commit;
    if (sim_->awaiting_decision()) return SessionStatus::awaiting_decision;
    if (sim_->finished()) return SessionStatus::finished;
    return SessionStatus::running;
  }

  double clock() const { return sim_ ? sim_->clock() : 0.0; }
  SystemState state() const { return sim_ ? sim_->state() : empty_state(params_.physicians); }

  void commit(CommittedStrategy s) {
    if (mode_ != SessionMode::committed) conflict("commit is only available in committed mode");
    if (sim_) conflict("strategy already committed");
    committed_ = s;
    sim_.emplace(params_, experimental_profile(to_strategy(s)), path_);
    sim_->run();
  }

  void advance(const AdvanceRequest& r) {
    if (!sim_) conflict("commit a strategy first");
    if (status() == SessionStatus::finished) conflict("session finished");
    if (status() == SessionStatus::awaiting_decision) conflict("a decision is pending");
    switch (r.kind) {
      case AdvanceRequest::Kind::step:
        sim_->step();
        break;
      case AdvanceRequest::Kind::to_next_decision:
        sim_->run();
        break;
      case AdvanceRequest::Kind::by_units:
      case AdvanceRequest::Kind::by_wall_seconds: {
        if (!(r.amount >= 0.0)) invalid("advance amount must be nonnegative");
        const double units = r.kind == AdvanceRequest::Kind::by_units ? r.amount : r.amount * kUnitsPerSecond;
        sim_->run_until(sim_->clock() + units);
        break;
      }
    }
  }

  void submit_decision(int claim) {
    if (!sim_ || !sim_->awaiting_decision()) conflict("no decision is pending");
    const int available = sim_->state().unassigned;
    if (claim < 1 || claim > 2) invalid("claim must be 1 or 2");
    if (claim > available) invalid("claim exceeds the unassigned patients available");
    decisions_.push_back({sim_->clock(), sim_->state(), available, claim, sim_->events().size()});
    sim_->submit_claim(claim);
  }

  Payoff payoff() const {
    if (status() != SessionStatus::finished) conflict("session not finished");
    return compute_payoff(treatment_, sim_->summary());
  }

  // What a participant may see: nothing derived from future arrivals or
  // undrawn service times. Treatment progress is elapsed / (elapsed + 1/mu),
  // the memoryless expectation, not the realized draw.
  json view() const {
    const auto st = status();
    json j{{"id", id_},
           {"mode", to_string(mode_)},
           {"status", to_string(st)},
           {"clock", clock()},
           {"horizon", path_.horizon},
           {"state", state()},
           {"units_per_second", kUnitsPerSecond},
           {"decisions", decisions_.size()}};
    j["treatment"] = json{{"kind", to_string(treatment_.kind)},
                          {"description", treatment_.description()},
                          {"unit", treatment_.unit()}};
    j["nudge_text"] = treatment_.kind == TreatmentKind::GT_NUDGE ? json(treatment_.nudge_text) : json(nullptr);
    j["committed_strategy"] = committed_ ? json(to_string(*committed_)) : json(nullptr);

    json cards = json::array();
    json physicians = json::array();
    json completions = json::array();
    if (sim_) {
      const double now = sim_->clock();
      for (int id : sim_->unassigned_patients()) {
        cards.push_back(json{{"id", id}, {"time_in_system", now - sim_->patients()[static_cast<std::size_t>(id)].arrival}});
      }
      for (int i = 0; i < params_.physicians; ++i) {
        const auto& q = sim_->caseload(i);
        json p{{"index", i}, {"role", i == 0 ? "you" : "partner"}, {"caseload", q.size()}};
        if (q.empty()) {
          p["status"] = "idle";
          p["progress"] = nullptr;
          p["patients"] = json::array();
        } else {
          const auto& head = sim_->patients()[static_cast<std::size_t>(q.front())];
          const double elapsed = now - head.started;
          p["status"] = "treating";
          p["progress"] = elapsed / (elapsed + 1.0 / params_.service_rate);
          p["patients"] = json(std::vector<int>(q.begin(), q.end()));
        }
        physicians.push_back(p);
      }
      completions = sim_->summary().completions;
    } else {
      for (int i = 0; i < params_.physicians; ++i) {
        physicians.push_back(json{{"index", i}, {"role", i == 0 ? "you" : "partner"}, {"caseload", 0},
                                  {"status", "idle"}, {"progress", nullptr}, {"patients", json::array()}});
        completions.push_back(0);
      }
    }
    j["unassigned"] = cards;
    j["physicians"] = physicians;
    j["completions"] = completions;
    if (st == SessionStatus::awaiting_decision) {
      j["pending_decision"] = json{{"available", sim_->state().unassigned}, {"max_claim", sim_->max_claim()}};
    } else {
      j["pending_decision"] = nullptr;
    }
    return j;
  }

  // JSON-lines: a header, events interleaved with decision records, and the
  // payoff once finished. The path is included only after the shift ends.
  std::string log() const {
    std::string out;
    json header{{"record", "header"},
                {"id", id_},
                {"mode", to_string(mode_)},
                {"treatment", treatment_},
                {"params", params_}};
    header["path_id"] = path_id_ ? json(*path_id_) : json(nullptr);
    const bool done = status() == SessionStatus::finished;
    header["path"] = done ? json(path_) : json(nullptr);
    out += header.dump() + "\n";
    if (committed_) out += json{{"record", "commit"}, {"strategy", to_string(*committed_)}}.dump() + "\n";
    if (sim_) {
      const auto& ev = sim_->events();
      std::size_t d = 0;
      for (std::size_t k = 0; k <= ev.size(); ++k) {
        while (d < decisions_.size() && decisions_[d].event_index == k) {
          const auto& r = decisions_[d++];
          out += json{{"record", "decision"}, {"t", r.t}, {"state", r.state}, {"available", r.available}, {"claim", r.claim}}
                     .dump() +
                 "\n";
        }
        if (k < ev.size()) out += json(ev[k]).dump() + "\n";
      }
    }
    if (done) {
      json p = payoff_json(payoff());
      p["record"] = "payoff";
      out += p.dump() + "\n";
    }
    return out;
  }

 private:
  [[noreturn]] static void conflict(const std::string& m) { throw SessionError(SessionError::Code::conflict, m); }
  [[noreturn]] static void invalid(const std::string& m) { throw SessionError(SessionError::Code::invalid, m); }

  std::string id_;
  TreatmentSpec treatment_;
  SessionMode mode_;
  SamplePath path_;
  SystemParams params_;
  std::optional<std::string> path_id_;
  std::optional<Simulation> sim_;
  std::optional<CommittedStrategy> committed_;
  std::vector<DecisionRecord> decisions_;
};

struct ReplayResult {
  Payoff payoff;
  std::optional<Payoff> logged_payoff;
  std::string log;  // regenerated
};

// Rebuilds a finished session from its log by re-applying the commit or
// every recorded decision on the logged path.
inline ReplayResult replay(const std::string& log_text) {
  std::istringstream in(log_text);
  std::string line;
  std::optional<json> header;
  std::optional<CommittedStrategy> commit;
  std::vector<int> claims;
  std::optional<Payoff> logged;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    const std::string rec = j.value("record", "");
    if (rec == "header") {
      header = j;
    } else if (rec == "commit") {
      commit = committed_strategy_from_string(j.at("strategy").get<std::string>());
    } else if (rec == "decision") {
      claims.push_back(j.at("claim").get<int>());
    } else if (rec == "payoff") {
      Payoff p;
      p.total = j.at("total_micros").get<Micros>();
      p.bonus = j.at("bonus_micros").get<Micros>();
      p.metric = j.at("metric").get<double>();
      logged = p;
    }
  }
  if (!header) throw Error("log has no header");
  if (header->at("path").is_null()) throw Error("log is not from a finished session");
  const auto mode = session_mode_from_string(header->at("mode").get<std::string>());
  if (!mode) throw Error("bad mode in log");
  Session s(header->at("id").get<std::string>(), header->at("treatment").get<TreatmentSpec>(), *mode,
            header->at("path").get<SamplePath>(), header->at("params").get<SystemParams>(),
            header->at("path_id").is_null() ? std::nullopt
                                            : std::optional<std::string>(header->at("path_id").get<std::string>()));
  if (*mode == SessionMode::committed) {
    if (!commit) throw Error("committed log has no commit record");
    s.commit(*commit);
  } else {
    std::size_t next = 0;
    while (s.status() != SessionStatus::finished) {
      if (s.status() == SessionStatus::awaiting_decision) {
        if (next >= claims.size()) throw Error("log has fewer decisions than the replay needs");
        s.submit_decision(claims[next++]);
      } else {
        s.advance({AdvanceRequest::Kind::to_next_decision, 0.0});
      }
    }
    if (next != claims.size()) throw Error("log has more decisions than the replay used");
  }
  return {s.payoff(), logged, s.log()};
}

// ---------------------------------------------------------------------------
// Store

struct SessionSettings {
  SystemParams params = experimental_params();
  std::map<TreatmentKind, TreatmentSpec> treatments;
  std::map<std::string, std::uint64_t> paths;  // named fixed paths -> seed
  std::optional<std::filesystem::path> log_dir;

  static SessionSettings standard(std::string nudge_text = {}) {
    SessionSettings s;
    for (auto k : {TreatmentKind::IT, TreatmentKind::GT, TreatmentKind::GT_ST}) s.treatments[k] = standard_treatment(k);
    if (!nudge_text.empty()) s.treatments[TreatmentKind::GT_NUDGE] = standard_treatment(TreatmentKind::GT_NUDGE, nudge_text);
    return s;
  }
};

struct CreateRequest {
  TreatmentKind kind = TreatmentKind::GT;
  SessionMode mode = SessionMode::live;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> path_id;
  std::optional<CommittedStrategy> strategy;
};

class SessionStore {
 public:
  explicit SessionStore(SessionSettings settings) : settings_(std::move(settings)) {}

  const SessionSettings& settings() const { return settings_; }

  json create(const CreateRequest& req) {
    auto it = settings_.treatments.find(req.kind);
    if (it == settings_.treatments.end()) {
      throw SessionError(SessionError::Code::invalid, std::string("treatment ") + to_string(req.kind) + " is not configured");
    }
    if (req.seed && req.path_id) throw SessionError(SessionError::Code::invalid, "give either seed or path_id, not both");
    if (req.strategy && req.mode != SessionMode::committed) {
      throw SessionError(SessionError::Code::invalid, "strategy is only accepted in committed mode");
    }
    std::uint64_t seed = 0;
    if (req.path_id) {
      auto p = settings_.paths.find(*req.path_id);
      if (p == settings_.paths.end()) throw SessionError(SessionError::Code::invalid, "unknown path id '" + *req.path_id + "'");
      seed = p->second;
    } else if (req.seed) {
      seed = *req.seed;
    } else {
      seed = fresh_seed();
    }
    auto path = generate_sample_path(settings_.params, seed, it->second.horizon);
    auto entry = std::make_shared<Entry>(Session(new_id(), it->second, req.mode, std::move(path), settings_.params, req.path_id));
    if (req.strategy) entry->session.commit(*req.strategy);
    json view = entry->session.view();
    {
      std::lock_guard lk(map_mutex_);
      sessions_[entry->session.id()] = entry;
    }
    persist(*entry);
    return view;
  }

  json view(const std::string& id) const {
    auto e = find(id);
    std::shared_lock lk(e->mutex);
    return e->session.view();
  }

  std::string log(const std::string& id) const {
    auto e = find(id);
    std::shared_lock lk(e->mutex);
    return e->session.log();
  }

  Payoff payoff(const std::string& id) const {
    auto e = find(id);
    std::shared_lock lk(e->mutex);
    return e->session.payoff();
  }

  json advance(const std::string& id, const AdvanceRequest& r) {
    return mutate(id, [&](Session& s) { s.advance(r); });
  }
  json decide(const std::string& id, int claim) {
    return mutate(id, [&](Session& s) { s.submit_decision(claim); });
  }
  json commit(const std::string& id, CommittedStrategy strategy) {
    return mutate(id, [&](Session& s) { s.commit(strategy); });
  }

  std::size_t size() const {
    std::lock_guard lk(map_mutex_);
    return sessions_.size();
  }

 private:
  struct Entry {
    explicit Entry(Session s) : session(std::move(s)) {}
    mutable std::shared_mutex mutex;
    Session session;
  };

  std::shared_ptr<Entry> find(const std::string& id) const {
    std::lock_guard lk(map_mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw SessionError(SessionError::Code::not_found, "unknown session '" + id + "'");
    return it->second;
  }

  // One in-flight mutation per session; a concurrent one is refused.
  template <class F>
  json mutate(const std::string& id, F&& f) {
    auto e = find(id);
    std::unique_lock lk(e->mutex, std::try_to_lock);
    if (!lk.owns_lock()) throw SessionError(SessionError::Code::busy, "session is busy");
    f(e->session);
    persist(*e);
    return e->session.view();
  }

  void persist(const Entry& e) const {
    if (!settings_.log_dir) return;
    std::filesystem::create_directories(*settings_.log_dir);
    const auto final_path = *settings_.log_dir / (e.session.id() + ".jsonl");
    auto tmp = final_path;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out << e.session.log();
    }
    std::filesystem::rename(tmp, final_path);
  }

  std::string new_id() {
    std::lock_guard lk(id_mutex_);
    char buf[40];
    std::snprintf(buf, sizeof buf, "s%016llx%04x", static_cast<unsigned long long>(id_rng_()),
                  static_cast<unsigned>(++counter_ & 0xffff));
    return buf;
  }

  std::uint64_t fresh_seed() {
    std::lock_guard lk(id_mutex_);
    return id_rng_();
  }

  SessionSettings settings_;
  mutable std::mutex map_mutex_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::mutex id_mutex_;
  std::mt19937_64 id_rng_{std::random_device{}()};
  unsigned counter_ = 0;
};

}  // namespace qlab
