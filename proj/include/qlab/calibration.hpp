#pragma once

// Treatment payoff schemes, incentive-strength calibration, terminal
// adjustment tables and sample-path selection for the two-physician shift.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "qlab/ctmc.hpp"
#include "qlab/des.hpp"

namespace qlab {

// ---------------------------------------------------------------------------
// Money: integer micro-dollars, shown rounded to cents.

using Micros = std::int64_t;

inline Micros to_micros(double dollars) { return std::llround(dollars * 1e6); }
inline double to_dollars(Micros m) { return static_cast<double>(m) / 1e6; }

inline std::int64_t to_cents(Micros m) {
  // half away from zero
  return m >= 0 ? (m + 5000) / 10000 : -((-m + 5000) / 10000);
}

inline std::string format_dollars(Micros m) {
  const std::int64_t c = to_cents(m);
  const std::int64_t a = c < 0 ? -c : c;
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s$%lld.%02lld", c < 0 ? "-" : "",
                static_cast<long long>(a / 100), static_cast<long long>(a % 100));
  return buf;
}

// ---------------------------------------------------------------------------
// Treatments

enum class TreatmentKind { IT, GT, GT_NUDGE, GT_ST };

inline const char* to_string(TreatmentKind k) {
  switch (k) {
    case TreatmentKind::IT: return "IT";
    case TreatmentKind::GT: return "GT";
    case TreatmentKind::GT_NUDGE: return "GT_NUDGE";
    case TreatmentKind::GT_ST: return "GT_ST";
  }
  return "?";
}

inline std::optional<TreatmentKind> treatment_kind_from_string(std::string s) {
  for (auto& ch : s) {
    if (ch == '-') ch = '_';
    ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  }
  for (auto k : {TreatmentKind::IT, TreatmentKind::GT, TreatmentKind::GT_NUDGE, TreatmentKind::GT_ST}) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

using TerminalTable = std::map<SystemState, double>;

// Relative values h(s) of the experimental chain under `profile`, zero at the
// empty state.
inline TerminalTable terminal_adjustment_table(const RewardSpec& reward, const StrategyProfile& profile,
                                               const SystemParams& params = experimental_params()) {
  const auto g = build_generator(params, profile);
  const auto sol = solve_poisson(g, reward, empty_state(params.physicians));
  TerminalTable t;
  for (std::size_t i = 0; i < g.size(); ++i) t[g.states[i]] = sol.relative_values[i];
  return t;
}

inline double table_value(const TerminalTable& t, const SystemState& s) {
  auto it = t.find(s);
  if (it == t.end()) throw Error("no terminal credit for state " + s.to_string());
  return it->second;
}

inline RewardSpec treatment_reward(TreatmentKind k) {
  switch (k) {
    case TreatmentKind::IT: return RewardSpec::personal(0);
    case TreatmentKind::GT:
    case TreatmentKind::GT_NUDGE: return RewardSpec::group();
    case TreatmentKind::GT_ST: return RewardSpec::occupancy();
  }
  return RewardSpec::group();
}

// Payoff-maximizing focal strategy under each treatment.
inline Strategy optimal_strategy(TreatmentKind k) {
  return k == TreatmentKind::IT ? Strategy::batch : Strategy::no_batch;
}

inline Strategy other(Strategy s) { return s == Strategy::batch ? Strategy::no_batch : Strategy::batch; }

struct TreatmentSpec {
  TreatmentKind kind = TreatmentKind::GT;
  Micros base_fee = 2'000'000;
  double threshold = 0.0;  // patients, or target time units for GT_ST
  Micros per_unit = 0;     // per patient above, or per time unit below, the threshold
  double horizon = 600.0;
  std::string nudge_text;  // GT_NUDGE only; displayed verbatim
  TerminalTable terminal_table;

  bool lower_is_better() const { return kind == TreatmentKind::GT_ST; }
  RewardSpec reward() const { return treatment_reward(kind); }

  std::string unit() const { return lower_is_better() ? "time units" : "patients"; }

  std::string description() const {
    char buf[256];
    const std::string rate = format_dollars(per_unit);
    switch (kind) {
      case TreatmentKind::IT:
        std::snprintf(buf, sizeof buf, "%s per patient you treat beyond %g patients", rate.c_str(), threshold);
        break;
      case TreatmentKind::GT:
      case TreatmentKind::GT_NUDGE:
        std::snprintf(buf, sizeof buf, "%s per patient treated by you or your partner beyond %g patients",
                      rate.c_str(), threshold);
        break;
      case TreatmentKind::GT_ST:
        std::snprintf(buf, sizeof buf, "$%.3f per time unit that total patient time falls below %g",
                      to_dollars(per_unit), threshold);
        break;
    }
    return "Base fee " + format_dollars(base_fee) + " plus " + buf + ".";
  }
};

// Table shown to participants: each treatment's reward under its optimal profile.
inline TerminalTable treatment_table(TreatmentKind k, const SystemParams& params = experimental_params()) {
  return terminal_adjustment_table(treatment_reward(k), experimental_profile(optimal_strategy(k)), params);
}

inline void validate_treatment(const TreatmentSpec& t) {
  if (!(t.per_unit > 0)) throw Error("per_unit must be positive");
  if (!(t.horizon > 0.0)) throw Error("horizon must be positive");
  if (t.base_fee < 0) throw Error("base fee must be nonnegative");
  if (t.kind == TreatmentKind::GT_NUDGE && t.nudge_text.empty()) {
    throw Error("GT_NUDGE requires nudge_text");
  }
  if (t.kind != TreatmentKind::GT_NUDGE && !t.nudge_text.empty()) {
    throw Error("nudge_text is only allowed for GT_NUDGE");
  }
}

// The four schemes run in the experiment. GT_NUDGE needs its sentence supplied.
inline TreatmentSpec standard_treatment(TreatmentKind k, std::string nudge_text = {}) {
  TreatmentSpec t;
  t.kind = k;
  switch (k) {
    case TreatmentKind::IT:
      t.threshold = 6;
      t.per_unit = to_micros(0.24);
      break;
    case TreatmentKind::GT:
    case TreatmentKind::GT_NUDGE:
      t.threshold = 36;
      t.per_unit = to_micros(0.60);
      break;
    case TreatmentKind::GT_ST:
      t.threshold = 1200;
      t.per_unit = to_micros(0.014);
      break;
  }
  if (k == TreatmentKind::GT_NUDGE) t.nudge_text = std::move(nudge_text);
  t.terminal_table = treatment_table(k);
  return t;
}

// ---------------------------------------------------------------------------
// Expected performance

// own_policy credits the end state with the relative values of the strategy
// actually played; treatment_table always uses the treatment's table.
enum class TableConvention { own_policy, treatment_table };

inline const char* to_string(TableConvention c) {
  return c == TableConvention::own_policy ? "own_policy" : "treatment_table";
}

inline double expected_metric(const TreatmentSpec& t, Strategy s,
                              TableConvention conv = TableConvention::own_policy,
                              const SystemParams& params = experimental_params()) {
  if (t.horizon == 0.0) return 0.0;
  const auto profile = experimental_profile(s);
  const auto g = build_generator(params, profile);
  const auto start = empty_state(params.physicians);
  const double cumulative = expected_cumulative_reward(g, t.reward(), start, t.horizon);
  const TerminalTable own = conv == TableConvention::own_policy
                                ? terminal_adjustment_table(t.reward(), profile, params)
                                : TerminalTable{};
  const TerminalTable& table = conv == TableConvention::own_policy ? own : t.terminal_table;
  const auto dist = transient_distribution(g, start, t.horizon);
  double credit = 0.0;
  for (std::size_t i = 0; i < dist.states.size(); ++i) {
    credit += dist.probabilities[i] * table_value(table, dist.states[i]);
  }
  return cumulative + credit;
}

// Linear in the metric; realized payoffs clip at zero instead.
inline double bonus_for_metric(const TreatmentSpec& t, double metric) {
  const double excess = t.lower_is_better() ? t.threshold - metric : metric - t.threshold;
  return to_dollars(t.per_unit) * excess;
}

inline double expected_bonus(const TreatmentSpec& t, Strategy s,
                             TableConvention conv = TableConvention::own_policy,
                             const SystemParams& params = experimental_params()) {
  return bonus_for_metric(t, expected_metric(t, s, conv, params));
}

struct CalibrationReport {
  TreatmentKind kind = TreatmentKind::GT;
  TableConvention convention = TableConvention::own_policy;
  Strategy optimal = Strategy::no_batch;
  double threshold = 0.0;
  double per_unit = 0.0;  // dollars
  double expected_metric_opt = 0.0;
  double expected_metric_subopt = 0.0;
  double bonus_opt = 0.0;
  double bonus_subopt = 0.0;
  double incentive_strength = 0.0;  // percent
  double expected_earnings_opt = 0.0;
  std::optional<double> below_threshold_probability_opt;  // clipping check, if run
  std::optional<double> below_threshold_probability_subopt;
  std::vector<std::string> warnings;
};

inline CalibrationReport calibration_report(const TreatmentSpec& t,
                                            TableConvention conv = TableConvention::own_policy,
                                            const SystemParams& params = experimental_params()) {
  CalibrationReport r;
  r.kind = t.kind;
  r.convention = conv;
  r.optimal = optimal_strategy(t.kind);
  r.threshold = t.threshold;
  r.per_unit = to_dollars(t.per_unit);
  r.expected_metric_opt = expected_metric(t, r.optimal, conv, params);
  r.expected_metric_subopt = expected_metric(t, other(r.optimal), conv, params);
  r.bonus_opt = bonus_for_metric(t, r.expected_metric_opt);
  r.bonus_subopt = bonus_for_metric(t, r.expected_metric_subopt);
  if (r.bonus_subopt > 0.0) {
    r.incentive_strength = (r.bonus_opt - r.bonus_subopt) / r.bonus_subopt * 100.0;
  } else {
    r.incentive_strength = std::numeric_limits<double>::quiet_NaN();
    r.warnings.push_back("suboptimal expected bonus is not positive; incentive strength undefined");
  }
  r.expected_earnings_opt = to_dollars(t.base_fee) + r.bonus_opt;
  return r;
}

inline double incentive_strength(const TreatmentSpec& t,
                                 TableConvention conv = TableConvention::own_policy,
                                 const SystemParams& params = experimental_params()) {
  const auto r = calibration_report(t, conv, params);
  if (std::isnan(r.incentive_strength)) throw Error(r.warnings.front());
  return r.incentive_strength;
}

// ---------------------------------------------------------------------------
// Realized performance on one shift

inline double realized_metric(const TreatmentSpec& t, const RunSummary& s, const TerminalTable& table,
                              int focal = 0) {
  const double credit = table_value(table, s.end_state);
  switch (t.kind) {
    case TreatmentKind::IT:
      return s.completions.at(static_cast<std::size_t>(focal)) + credit;
    case TreatmentKind::GT:
    case TreatmentKind::GT_NUDGE:
      return s.total_completions() + credit;
    case TreatmentKind::GT_ST:
      return s.occupancy_integral + credit;
  }
  return 0.0;
}

inline Micros realized_bonus(const TreatmentSpec& t, double metric) {
  const double excess = t.lower_is_better() ? t.threshold - metric : metric - t.threshold;
  return std::llround(static_cast<double>(t.per_unit) * std::max(0.0, excess));
}

// Monte Carlo estimate of P(metric on the wrong side of the threshold), i.e.
// how often the realized bonus is clipped to zero. Uses the treatment table.
inline double clipping_probability(const TreatmentSpec& t, Strategy s, int runs, std::uint64_t seed,
                                   const SystemParams& params = experimental_params()) {
  if (runs < 1) throw Error("runs must be positive");
  const auto profile = experimental_profile(s);
  EngineOptions eo;
  eo.record_events = false;
  int clipped = 0;
  for (int r = 0; r < runs; ++r) {
    const auto path = generate_sample_path(params, derive_seed(seed, static_cast<std::uint64_t>(r)), t.horizon);
    const auto res = simulate(path, params, profile, eo);
    const double m = realized_metric(t, res.summary, t.terminal_table);
    if (t.lower_is_better() ? m > t.threshold : m < t.threshold) ++clipped;
  }
  return static_cast<double>(clipped) / runs;
}

// Adds the clipping probabilities to a report and warns above 1%.
inline void check_linearity(CalibrationReport& r, const TreatmentSpec& t, int runs, std::uint64_t seed,
                            const SystemParams& params = experimental_params()) {
  r.below_threshold_probability_opt = clipping_probability(t, r.optimal, runs, seed, params);
  r.below_threshold_probability_subopt = clipping_probability(t, other(r.optimal), runs, seed, params);
  for (auto [p, name] : {std::pair{*r.below_threshold_probability_opt, "optimal"},
                         std::pair{*r.below_threshold_probability_subopt, "suboptimal"}}) {
    if (p > 0.01) {
      char buf[160];
      std::snprintf(buf, sizeof buf,
                    "linear bonus approximation questionable: %s strategy misses the threshold with "
                    "probability %.3f",
                    name, p);
      r.warnings.emplace_back(buf);
    }
  }
}

// ---------------------------------------------------------------------------
// Calibration search

struct CalibrateOptions {
  Micros base_fee = 2'000'000;
  double strength_tolerance_pp = 0.5;
  double earnings_tolerance = 0.05;
  std::optional<double> threshold_step;  // default 1 patient, or 100 time units
  TableConvention convention = TableConvention::own_policy;
  int per_unit_decimals = 4;
};

// Picks the grid threshold whose implied strength is closest to the target
// (strength does not depend on the rate), then the rate that hits the target
// optimal earnings. Thresholds stay on the paying side of both strategies'
// expected metrics.
inline TreatmentSpec calibrate(double target_strength, double target_earnings, TreatmentKind kind,
                               const CalibrateOptions& opt = {},
                               const SystemParams& params = experimental_params()) {
  TreatmentSpec t;
  t.kind = kind;
  t.base_fee = opt.base_fee;
  t.terminal_table = treatment_table(kind, params);
  t.per_unit = 1;
  const Strategy best = optimal_strategy(kind);
  const double m_opt = expected_metric(t, best, opt.convention, params);
  const double m_sub = expected_metric(t, other(best), opt.convention, params);
  const double gap = std::abs(m_opt - m_sub);
  const double step = opt.threshold_step.value_or(t.lower_is_better() ? 100.0 : 1.0);

  std::optional<double> chosen;
  double best_err = std::numeric_limits<double>::infinity();
  if (t.lower_is_better()) {
    for (double th = std::ceil(m_sub / step) * step; th <= m_sub + 1e3 * step; th += step) {
      if (th <= m_sub) continue;
      const double err = std::abs(gap / (th - m_sub) * 100.0 - target_strength);
      if (err < best_err) best_err = err, chosen = th;
    }
  } else {
    for (double th = step; th < m_sub; th += step) {
      const double err = std::abs(gap / (m_sub - th) * 100.0 - target_strength);
      if (err < best_err) best_err = err, chosen = th;
    }
  }
  if (!chosen || best_err > opt.strength_tolerance_pp) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "infeasible: closest grid threshold misses strength %.2f%% by %.2fpp",
                  target_strength, best_err);
    throw Error(buf);
  }
  t.threshold = *chosen;
  const double margin = std::abs(m_opt - t.threshold);
  const double scale = std::pow(10.0, opt.per_unit_decimals);
  const double rate = std::round((target_earnings - to_dollars(opt.base_fee)) / margin * scale) / scale;
  if (!(rate > 0.0)) throw Error("infeasible: target earnings do not exceed the base fee");
  t.per_unit = to_micros(rate);
  const double earnings = to_dollars(t.base_fee) + bonus_for_metric(t, m_opt);
  if (std::abs(earnings - target_earnings) > opt.earnings_tolerance) {
    throw Error("infeasible: rate rounding misses target earnings");
  }
  return t;
}

// ---------------------------------------------------------------------------
// Sample-path selection

struct StrategyTables {
  TerminalTable batch;
  TerminalTable no_batch;
  const TerminalTable& of(Strategy s) const { return s == Strategy::batch ? batch : no_batch; }
};

inline StrategyTables own_tables(TreatmentKind k, const SystemParams& params = experimental_params()) {
  return {terminal_adjustment_table(treatment_reward(k), experimental_profile(Strategy::batch), params),
          terminal_adjustment_table(treatment_reward(k), experimental_profile(Strategy::no_batch), params)};
}

inline double strength_from_bonuses(Micros b_opt, Micros b_sub) {
  if (b_sub <= 0) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(b_opt - b_sub) / static_cast<double>(b_sub) * 100.0;
}

// Realized strengths on one path: both strategies replayed on it, each
// credited with its own relative values at the end state. NaN where the
// suboptimal realized bonus is zero.
inline std::vector<double> realized_strengths(const std::vector<TreatmentSpec>& treatments,
                                              const SamplePath& path,
                                              const std::vector<StrategyTables>& tables,
                                              const SystemParams& params = experimental_params()) {
  EngineOptions eo;
  eo.record_events = false;
  const auto b_run = simulate(path, params, experimental_profile(Strategy::batch), eo);
  const auto nb_run = simulate(path, params, experimental_profile(Strategy::no_batch), eo);
  std::vector<double> out;
  for (std::size_t k = 0; k < treatments.size(); ++k) {
    const auto& t = treatments[k];
    const Strategy best = optimal_strategy(t.kind);
    const auto& opt_run = best == Strategy::batch ? b_run : nb_run;
    const auto& sub_run = best == Strategy::batch ? nb_run : b_run;
    out.push_back(strength_from_bonuses(
        realized_bonus(t, realized_metric(t, opt_run.summary, tables[k].of(best))),
        realized_bonus(t, realized_metric(t, sub_run.summary, tables[k].of(other(best))))));
  }
  return out;
}

inline double realized_strength(const TreatmentSpec& t, const SamplePath& path, const StrategyTables& tables,
                                const SystemParams& params = experimental_params()) {
  return realized_strengths({t}, path, {tables}, params).front();
}

struct SelectedPath {
  std::uint64_t seed = 0;
  SamplePath path;
  std::vector<std::pair<TreatmentKind, double>> realized_strengths;
  std::vector<std::pair<TreatmentKind, double>> expected_strengths;
};

struct SelectionOptions {
  unsigned threads = 0;
  double horizon = 600.0;
};

// Candidate i uses seed derive_seed(seed, i). Every treatment is evaluated on
// the same path; a path qualifies when all realized strengths are within
// tolerance_pp of the expected ones.
inline std::vector<SelectedPath> select_sample_paths(const std::vector<TreatmentSpec>& treatments,
                                                     int n_candidates, double tolerance_pp, std::uint64_t seed,
                                                     const SelectionOptions& options = {},
                                                     const SystemParams& params = experimental_params()) {
  if (n_candidates < 1) throw Error("n_candidates must be at least 1");
  if (treatments.empty()) throw Error("no treatments given");
  std::vector<double> expected;
  std::vector<StrategyTables> tables;
  for (const auto& t : treatments) {
    expected.push_back(incentive_strength(t, TableConvention::own_policy, params));
    tables.push_back(own_tables(t.kind, params));
  }

  std::vector<std::optional<SelectedPath>> found(static_cast<std::size_t>(n_candidates));
  auto evaluate = [&](int i) {
    const std::uint64_t s = derive_seed(seed, static_cast<std::uint64_t>(i));
    auto path = generate_sample_path(params, s, options.horizon);
    SelectedPath sp;
    sp.seed = s;
    const auto realized = realized_strengths(treatments, path, tables, params);
    for (std::size_t k = 0; k < treatments.size(); ++k) {
      const double r = realized[k];
      if (std::isnan(r) || std::abs(r - expected[k]) > tolerance_pp) return;
      sp.realized_strengths.emplace_back(treatments[k].kind, r);
      sp.expected_strengths.emplace_back(treatments[k].kind, expected[k]);
    }
    sp.path = std::move(path);
    found[static_cast<std::size_t>(i)] = std::move(sp);
  };

  unsigned threads = options.threads ? options.threads : std::thread::hardware_concurrency();
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n_candidates)));
  {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        for (int i = static_cast<int>(w); i < n_candidates; i += static_cast<int>(threads)) evaluate(i);
      });
    }
  }
  std::vector<SelectedPath> out;
  for (auto& f : found) {
    if (f) out.push_back(std::move(*f));
  }
  return out;
}

}  // namespace qlab
