#pragma once

// JSON encodings (nlohmann::json) for the library's value types.
// States are {"u": U, "a": [A1, ..., AN]}; physicians are 0-based.

#include <cmath>
#include <sstream>
#include <string>

#include "json.hpp"

#include "qlab/calibration.hpp"
#include "qlab/ctmc.hpp"
#include "qlab/des.hpp"
#include "qlab/model.hpp"

namespace qlab {

using nlohmann::json;

inline void to_json(json& j, const SystemState& s) { j = json{{"u", s.unassigned}, {"a", s.caseloads}}; }
inline void from_json(const json& j, SystemState& s) {
  j.at("u").get_to(s.unassigned);
  j.at("a").get_to(s.caseloads);
}

inline void to_json(json& j, const SystemParams& p) {
  j = json{{"rooms", p.rooms},
           {"physicians", p.physicians},
           {"arrival_rate", p.arrival_rate},
           {"group_dist", p.group_dist},
           {"service_rate", p.service_rate}};
}
inline void from_json(const json& j, SystemParams& p) {
  p = SystemParams{};
  if (j.contains("rooms")) j.at("rooms").get_to(p.rooms);
  if (j.contains("physicians")) j.at("physicians").get_to(p.physicians);
  if (j.contains("arrival_rate")) j.at("arrival_rate").get_to(p.arrival_rate);
  if (j.contains("group_dist")) j.at("group_dist").get_to(p.group_dist);
  if (j.contains("service_rate")) j.at("service_rate").get_to(p.service_rate);
}

inline void to_json(json& j, const TimeDistribution& d) {
  j = json{{"kind", to_string(d.kind)}, {"mean", d.mean}};
  if (d.kind == TimeDistribution::Kind::lognormal) j["cv"] = d.cv;
}
inline void from_json(const json& j, TimeDistribution& d) {
  const auto kind = j.at("kind").get<std::string>();
  const double mean = j.at("mean").get<double>();
  if (!(mean > 0.0)) throw Error("distribution mean must be positive");
  if (kind == "exponential") {
    d = TimeDistribution::exponential(mean);
  } else if (kind == "deterministic") {
    d = TimeDistribution::deterministic(mean);
  } else if (kind == "lognormal") {
    d = TimeDistribution::lognormal(mean, j.value("cv", 1.0));
  } else {
    throw Error("unknown distribution kind '" + kind + "'");
  }
}

inline void to_json(json& j, const GroupArrival& a) { j = json{{"t", a.time}, {"size", a.size}}; }
inline void from_json(const json& j, GroupArrival& a) {
  j.at("t").get_to(a.time);
  j.at("size").get_to(a.size);
}

inline void to_json(json& j, const SamplePath& p) {
  j = json{{"seed", p.seed},         {"horizon", p.horizon},   {"interarrival", p.interarrival},
           {"service", p.service},   {"arrivals", p.arrivals}, {"service_draws", p.service_draws}};
}
inline void from_json(const json& j, SamplePath& p) {
  j.at("seed").get_to(p.seed);
  j.at("horizon").get_to(p.horizon);
  j.at("interarrival").get_to(p.interarrival);
  j.at("service").get_to(p.service);
  j.at("arrivals").get_to(p.arrivals);
  j.at("service_draws").get_to(p.service_draws);
}

// Enough to regenerate the path bit for bit.
inline json path_metadata(const SamplePath& p, const SystemParams& params) {
  return json{{"seed", p.seed},
              {"horizon", p.horizon},
              {"params", params},
              {"interarrival", p.interarrival},
              {"service", p.service}};
}

inline SamplePath path_from_metadata(const json& j) {
  PathOptions o;
  o.interarrival = j.at("interarrival").get<TimeDistribution>();
  o.service = j.at("service").get<TimeDistribution>();
  return generate_sample_path(j.at("params").get<SystemParams>(), j.at("seed").get<std::uint64_t>(),
                              j.at("horizon").get<double>(), o);
}

inline void to_json(json& j, const Event& e) {
  j = json{{"t", e.t},
           {"kind", to_string(e.kind)},
           {"physician", e.physician ? json(*e.physician) : json(nullptr)},
           {"patient", e.patient ? json(*e.patient) : json(nullptr)}};
}
inline void from_json(const json& j, Event& e) {
  j.at("t").get_to(e.t);
  const auto k = event_kind_from_string(j.at("kind").get<std::string>());
  if (!k) throw Error("unknown event kind");
  e.kind = *k;
  e.physician = j.at("physician").is_null() ? std::nullopt : std::optional<int>(j.at("physician").get<int>());
  e.patient = j.at("patient").is_null() ? std::nullopt : std::optional<int>(j.at("patient").get<int>());
}

// One event per line.
inline std::string events_to_jsonl(const std::vector<Event>& events) {
  std::string out;
  for (const auto& e : events) {
    out += json(e).dump();
    out += '\n';
  }
  return out;
}

inline std::vector<Event> events_from_jsonl(const std::string& text) {
  std::vector<Event> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(json::parse(line).get<Event>());
  }
  return out;
}

inline void to_json(json& j, const RunSummary& s) {
  j = json{{"completions", s.completions},
           {"arrived", s.arrived},
           {"admitted", s.admitted},
           {"blocked", s.blocked},
           {"initiations", s.initiations},
           {"occupancy_integral", s.occupancy_integral},
           {"end_state", s.end_state}};
}
inline void from_json(const json& j, RunSummary& s) {
  j.at("completions").get_to(s.completions);
  j.at("arrived").get_to(s.arrived);
  j.at("admitted").get_to(s.admitted);
  j.at("blocked").get_to(s.blocked);
  j.at("initiations").get_to(s.initiations);
  j.at("occupancy_integral").get_to(s.occupancy_integral);
  j.at("end_state").get_to(s.end_state);
}

inline void to_json(json& j, const CouplingCheckpoint& c) {
  j = json{{"t", c.t}, {"n_star", c.n_star}, {"n_alt", c.n_alt}, {"c_star", c.c_star}, {"c_alt", c.c_alt}};
}
inline void from_json(const json& j, CouplingCheckpoint& c) {
  j.at("t").get_to(c.t);
  j.at("n_star").get_to(c.n_star);
  j.at("n_alt").get_to(c.n_alt);
  j.at("c_star").get_to(c.c_star);
  j.at("c_alt").get_to(c.c_alt);
}

inline void to_json(json& j, const CouplingReport& r) {
  j = json{{"dominance_holds", r.dominance_holds},
           {"completions_dominate", r.completions_dominate},
           {"occupancy_dominates", r.occupancy_dominates},
           {"admitted_star", r.admitted_star},
           {"admitted_alt", r.admitted_alt},
           {"checkpoints", r.checkpoints}};
  j["first_violation"] = r.first_violation
                             ? json{{"t", r.first_violation->first}, {"detail", r.first_violation->second}}
                             : json(nullptr);
}
inline void from_json(const json& j, CouplingReport& r) {
  j.at("dominance_holds").get_to(r.dominance_holds);
  j.at("completions_dominate").get_to(r.completions_dominate);
  j.at("occupancy_dominates").get_to(r.occupancy_dominates);
  j.at("admitted_star").get_to(r.admitted_star);
  j.at("admitted_alt").get_to(r.admitted_alt);
  j.at("checkpoints").get_to(r.checkpoints);
  r.first_violation.reset();
  if (!j.at("first_violation").is_null()) {
    r.first_violation = {j["first_violation"].at("t").get<double>(),
                         j["first_violation"].at("detail").get<std::string>()};
  }
}

inline void to_json(json& j, const BatchLabel& b) {
  j = json{{"patient", b.patient},
           {"physician", b.physician},
           {"t", b.t},
           {"batched", b.batched},
           {"batch_size", b.batch_size}};
}
inline void from_json(const json& j, BatchLabel& b) {
  j.at("patient").get_to(b.patient);
  j.at("physician").get_to(b.physician);
  j.at("t").get_to(b.t);
  j.at("batched").get_to(b.batched);
  j.at("batch_size").get_to(b.batch_size);
}

inline void to_json(json& j, const Estimate& e) {
  j = json{{"mean", e.mean}, {"std_error", e.std_error}, {"n", e.n}};
}
inline void from_json(const json& j, Estimate& e) {
  j.at("mean").get_to(e.mean);
  j.at("std_error").get_to(e.std_error);
  j.at("n").get_to(e.n);
}

inline void to_json(json& j, const MonteCarloMetrics& m) {
  json occ = json::array();
  for (const auto& [s, e] : m.state_occupancy) occ.push_back(json{{"state", s}, {"estimate", e}});
  j = json{{"system_throughput", m.system_throughput},
           {"mean_sojourn", m.mean_sojourn},
           {"blocking_rate", m.blocking_rate},
           {"mean_occupancy", m.mean_occupancy},
           {"state_occupancy", occ},
           {"runs", m.runs},
           {"horizon", m.horizon},
           {"warmup", m.warmup},
           {"markovian", m.markovian}};
}

inline void to_json(json& j, const MetricsReport& m) {
  j = json{{"system_throughput", m.system_throughput},
           {"individual_throughput", m.individual_throughput},
           {"mean_occupancy", m.mean_occupancy},
           {"mean_sojourn", m.mean_sojourn},
           {"blocking_rate", m.blocking_rate}};
}
inline void from_json(const json& j, MetricsReport& m) {
  j.at("system_throughput").get_to(m.system_throughput);
  j.at("individual_throughput").get_to(m.individual_throughput);
  j.at("mean_occupancy").get_to(m.mean_occupancy);
  j.at("mean_sojourn").get_to(m.mean_sojourn);
  j.at("blocking_rate").get_to(m.blocking_rate);
}

inline void to_json(json& j, const StateDistribution& d) {
  j = json::array();
  for (std::size_t i = 0; i < d.states.size(); ++i) {
    j.push_back(json{{"state", d.states[i]}, {"p", d.probabilities[i]}});
  }
}
inline void from_json(const json& j, StateDistribution& d) {
  d.states.clear();
  d.probabilities.clear();
  for (const auto& e : j) {
    d.states.push_back(e.at("state").get<SystemState>());
    d.probabilities.push_back(e.at("p").get<double>());
  }
}

inline void to_json(json& j, const PoissonSolution& s) {
  json h = json::array();
  for (std::size_t i = 0; i < s.states.size(); ++i) h.push_back(json{{"state", s.states[i]}, {"h", s.relative_values[i]}});
  j = json{{"gain", s.gain}, {"reference", s.reference}, {"relative_values", h}};
}
inline void from_json(const json& j, PoissonSolution& s) {
  j.at("gain").get_to(s.gain);
  j.at("reference").get_to(s.reference);
  s.states.clear();
  s.relative_values.clear();
  for (const auto& e : j.at("relative_values")) {
    s.states.push_back(e.at("state").get<SystemState>());
    s.relative_values.push_back(e.at("h").get<double>());
  }
}

inline void to_json(json& j, const Generator& g) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < g.rates.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < g.rates.cols(); ++c) row.push_back(g.rates(r, c));
    rows.push_back(row);
  }
  j = json{{"params", g.params}, {"states", g.states}, {"rates", rows}};
}

inline void to_json(json& j, const DeltaValues& d) {
  j = json{{"d1_batch", d.d1_batch},
           {"d2_batch", d.d2_batch},
           {"d1_no_batch", d.d1_no_batch},
           {"d2_no_batch", d.d2_no_batch}};
}
inline void from_json(const json& j, DeltaValues& d) {
  j.at("d1_batch").get_to(d.d1_batch);
  j.at("d2_batch").get_to(d.d2_batch);
  j.at("d1_no_batch").get_to(d.d1_no_batch);
  j.at("d2_no_batch").get_to(d.d2_no_batch);
}

inline void to_json(json& j, const DeltaCheckReport& r) {
  j = json{{"pass", r.pass},
           {"lambda", r.lambda},
           {"mu", r.mu},
           {"tol", r.tol},
           {"closed_form", r.deltas.closed_form},
           {"numeric", r.deltas.numeric},
           {"abs_diff", r.deltas.abs_diff},
           {"gain_batch", r.gain_batch},
           {"gain_no_batch", r.gain_no_batch},
           {"failures", r.failures}};
}

inline void to_json(json& j, const TerminalTable& t) {
  j = json::array();
  for (const auto& [s, v] : t) j.push_back(json{{"state", s}, {"credit", v}});
}
inline void from_json(const json& j, TerminalTable& t) {
  t.clear();
  for (const auto& e : j) t[e.at("state").get<SystemState>()] = e.at("credit").get<double>();
}

inline void to_json(json& j, const TreatmentSpec& t) {
  j = json{{"kind", to_string(t.kind)},
           {"base_fee_micros", t.base_fee},
           {"threshold", t.threshold},
           {"per_unit_micros", t.per_unit},
           {"horizon", t.horizon},
           {"terminal_table", t.terminal_table}};
  j["nudge_text"] = t.nudge_text.empty() ? json(nullptr) : json(t.nudge_text);
}

// Missing fields fall back to the standard scheme of that kind.
inline void from_json(const json& j, TreatmentSpec& t) {
  const auto kind = treatment_kind_from_string(j.at("kind").get<std::string>());
  if (!kind) throw Error("unknown treatment kind");
  t = standard_treatment(*kind);
  if (j.contains("base_fee_micros")) j.at("base_fee_micros").get_to(t.base_fee);
  if (j.contains("base_fee")) t.base_fee = to_micros(j.at("base_fee").get<double>());
  if (j.contains("threshold")) j.at("threshold").get_to(t.threshold);
  if (j.contains("per_unit_micros")) j.at("per_unit_micros").get_to(t.per_unit);
  if (j.contains("per_unit")) t.per_unit = to_micros(j.at("per_unit").get<double>());
  if (j.contains("horizon")) j.at("horizon").get_to(t.horizon);
  if (j.contains("nudge_text") && !j.at("nudge_text").is_null()) j.at("nudge_text").get_to(t.nudge_text);
  if (j.contains("terminal_table")) j.at("terminal_table").get_to(t.terminal_table);
}

inline json nullable(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

inline void to_json(json& j, const CalibrationReport& r) {
  j = json{{"kind", to_string(r.kind)},
           {"convention", to_string(r.convention)},
           {"optimal", to_string(r.optimal)},
           {"threshold", r.threshold},
           {"per_unit", r.per_unit},
           {"expected_metric_opt", r.expected_metric_opt},
           {"expected_metric_subopt", r.expected_metric_subopt},
           {"bonus_opt", r.bonus_opt},
           {"bonus_subopt", r.bonus_subopt},
           {"incentive_strength", nullable(r.incentive_strength)},
           {"expected_earnings_opt", r.expected_earnings_opt},
           {"warnings", r.warnings}};
  j["below_threshold_probability_opt"] =
      r.below_threshold_probability_opt ? json(*r.below_threshold_probability_opt) : json(nullptr);
  j["below_threshold_probability_subopt"] =
      r.below_threshold_probability_subopt ? json(*r.below_threshold_probability_subopt) : json(nullptr);
}

inline void to_json(json& j, const SelectedPath& p) {
  json realized = json::object(), expected = json::object();
  for (const auto& [k, v] : p.realized_strengths) realized[to_string(k)] = v;
  for (const auto& [k, v] : p.expected_strengths) expected[to_string(k)] = v;
  j = json{{"seed", p.seed}, {"realized_strengths", realized}, {"expected_strengths", expected}, {"path", p.path}};
}

}  // namespace qlab
