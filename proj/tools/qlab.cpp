// qlab: command-line front end.
//
// Exit codes: 0 success, 1 a checked property was violated, 2 usage or
// configuration error.

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "qlab/calibration.hpp"
#include "qlab/ctmc.hpp"
#include "qlab/des.hpp"
#include "qlab/serialize.hpp"
#include "qlab/service.hpp"

#include "CLI11.hpp"

using namespace qlab;

namespace {

struct UsageError : Error {
  using Error::Error;
};

// Options shared by every subcommand.
struct Common {
  std::uint64_t seed = 0;
  std::string out;
  std::string format = "json";
  std::string config;
};

// Model settings; the config file seeds them and flags override.
struct RunConfig {
  SystemParams params = experimental_params();
  std::string policy = "batch";
  std::string reward = "personal";
  double horizon = 600.0;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--seed", c.seed, "Master seed (default QLAB_SEED or 0)");
  app->add_option("--out", c.out, "Write output here instead of stdout (relative to QLAB_OUT_DIR if set)");
  app->add_option("--format", c.format, "Output format")->check(CLI::IsMember({"json", "table"}));
  app->add_option("--config", c.config, "JSON config file");
}

void add_model(CLI::App* app, std::string& preset, std::optional<double>& lambda, std::optional<double>& mu,
               std::optional<int>& rooms) {
  app->add_option("--preset", preset, "Named parameter preset")->check(CLI::IsMember({"experimental"}));
  app->add_option("--lambda", lambda, "Group arrival rate");
  app->add_option("--mu", mu, "Service rate per physician");
  app->add_option("--rooms", rooms, "Room capacity M");
}

json read_json_file(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw UsageError("cannot read " + file);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config_text(ss.str(), file);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
}

RunConfig load_run_config(const Common& c, std::optional<double> lambda, std::optional<double> mu,
                          std::optional<int> rooms) {
  RunConfig r;
  if (!c.config.empty()) {
    const auto j = read_json_file(c.config);
    try {
      if (j.contains("params")) r.params = j.at("params").get<SystemParams>();
      if (j.contains("policy")) r.policy = j.at("policy").get<std::string>();
      if (j.contains("reward")) r.reward = j.at("reward").get<std::string>();
      if (j.contains("horizon")) r.horizon = j.at("horizon").get<double>();
    } catch (const json::exception& e) {
      throw UsageError(c.config + ": " + e.what());
    }
  }
  if (lambda) r.params.arrival_rate = *lambda;
  if (mu) r.params.service_rate = *mu;
  if (rooms) r.params.rooms = *rooms;
  if (auto err = validate_params(r.params)) throw UsageError(*err);
  return r;
}

StrategyProfile expand_policy(const std::string& policy, const SystemParams& params) {
  StrategyProfile p;
  if (policy == "batch" || policy == "B") {
    p = params.physicians == 2 ? experimental_profile(Strategy::batch) : StrategyProfile{};
  } else if (policy == "assign-one" || policy == "no-batch" || policy == "NB") {
    p = params.physicians == 2 ? experimental_profile(Strategy::no_batch) : all_assign_one(params.physicians, 2);
  } else {
    throw UsageError("unknown policy '" + policy + "' (batch | assign-one)");
  }
  if (p.rules.empty()) {
    for (int i = 0; i < params.physicians; ++i) p.rules.push_back(DecisionRule::batch(2));
    p.decision_order = ascending_order(params.physicians);
  }
  std::cerr << "policy " << policy << " expands to:";
  for (std::size_t i = 0; i < p.rules.size(); ++i) {
    std::cerr << " physician " << i << "=" << p.rules[i].name() << "(max " << p.rules[i].max_batch() << ")";
  }
  std::cerr << " order";
  for (int i : p.decision_order) std::cerr << " " << i;
  std::cerr << "\n";
  return p;
}

RewardSpec parse_reward(const std::string& r) {
  if (r == "personal") return RewardSpec::personal(0);
  if (r == "group") return RewardSpec::group();
  if (r == "occupancy") return RewardSpec::occupancy();
  throw UsageError("unknown reward '" + r + "' (personal | group | occupancy)");
}

TimeDistribution parse_service(const std::string& s, double mean) {
  if (s == "exponential") return TimeDistribution::exponential(mean);
  if (s == "deterministic") return TimeDistribution::deterministic(mean);
  if (s == "lognormal") return TimeDistribution::lognormal(mean, 0.5);
  throw UsageError("unknown service distribution '" + s + "'");
}

TreatmentKind parse_treatment(const std::string& s) {
  if (auto k = treatment_kind_from_string(s)) return *k;
  throw UsageError("unknown treatment '" + s + "'");
}

void emit(const Common& c, const std::string& text) {
  if (c.out.empty()) {
    std::cout << text;
    std::cout.flush();
    return;
  }
  std::filesystem::path target = c.out;
  if (const char* dir = std::getenv("QLAB_OUT_DIR"); dir && *dir && target.is_relative()) target = std::filesystem::path(dir) / target;
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  auto tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw UsageError("cannot write " + tmp.string());
    out << text;
  }
  std::filesystem::rename(tmp, target);
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

std::string fixed(double x, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << x;
  return os.str();
}

std::string metrics_table(const MetricsReport& m) {
  std::ostringstream os;
  os << "throughput        " << fixed(m.system_throughput, 8) << "\n"
     << "mean occupancy    " << fixed(m.mean_occupancy, 8) << "\n"
     << "mean sojourn      " << fixed(m.mean_sojourn, 8) << "\n"
     << "blocking rate     " << fixed(m.blocking_rate, 8) << "\n";
  for (std::size_t i = 0; i < m.individual_throughput.size(); ++i) {
    os << "throughput[" << i << "]     " << fixed(m.individual_throughput[i], 8) << "\n";
  }
  return os.str();
}

// Terminal credits in three columns: waiting, focal, partner, then credit.
std::string terminal_table_text(const TerminalTable& t, const std::string& unit) {
  std::ostringstream os;
  os << std::left << std::setw(10) << "waiting" << std::setw(6) << "you" << std::setw(9) << "partner" << unit
     << " added\n";
  std::vector<std::pair<SystemState, double>> rows(t.begin(), t.end());
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return DisplayOrder{}(a.first, b.first); });
  for (const auto& [s, credit] : rows) {
    if (s.occupancy() == 0) continue;
    os << std::left << std::setw(10) << s.unassigned << std::setw(6) << s.caseloads[0] << std::setw(9)
       << s.caseloads[1] << fixed(credit, 3) << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------

int cmd_solve(const Common& c, const RunConfig& rc) {
  const auto profile = expand_policy(rc.policy, rc.params);
  const auto reward = parse_reward(rc.reward);
  const auto g = build_generator(rc.params, profile);
  const auto pi = steady_state<Quad>(g);
  const auto h = solve_poisson<Quad>(g, reward);
  const auto m = metrics(g, pi);
  if (c.format == "json") {
    json states = json::array();
    for (const auto& s : g.states) states.push_back(s);
    json rel = json::array();
    for (std::size_t i = 0; i < h.states.size(); ++i) {
      rel.push_back(json{{"state", h.states[i]}, {"h", static_cast<double>(h.relative_values[i])}});
    }
    emit(c, dump(json{{"params", rc.params},
                      {"policy", rc.policy},
                      {"reward", rc.reward},
                      {"states", states},
                      {"generator", g},
                      {"stationary", pi},
                      {"gain", static_cast<double>(h.gain)},
                      {"relative_values", rel},
                      {"metrics", m}}));
    return 0;
  }
  std::ostringstream os;
  os << "states (" << g.size() << "): ";
  for (const auto& s : g.states) os << s.to_string() << " ";
  os << "\n\ngenerator Q (row = from, column = to)\n" << std::setw(10) << "";
  for (const auto& s : g.states) os << std::setw(10) << s.to_string();
  os << "\n";
  for (std::size_t r = 0; r < g.size(); ++r) {
    os << std::setw(10) << g.states[r].to_string();
    for (std::size_t col = 0; col < g.size(); ++col) {
      const double q = g.rates(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(col));
      os << std::setw(10) << (q == 0.0 ? std::string("0") : fixed(q, 5));
    }
    os << "\n";
  }
  os << "\nstate        pi            h (" << rc.reward << ")\n";
  for (std::size_t i = 0; i < g.size(); ++i) {
    os << std::left << std::setw(13) << g.states[i].to_string() << std::setw(14) << fixed(pi.probabilities[i], 9)
       << fixed(static_cast<double>(h.h(g.states[i])), 9) << std::right << "\n";
  }
  os << "\ngain " << fixed(static_cast<double>(h.gain), 10) << "\n\n" << metrics_table(m);
  emit(c, os.str());
  return 0;
}

struct VerifyOptions {
  int grid = 20;
  std::optional<double> lambda, mu;
  double tol = 1e-8;
  int seeds = 0;
  std::string profile = "batch";
  std::string service = "exponential";
  std::string check = "both";
  double horizon = 600.0;
};

int cmd_verify(const Common& c, const VerifyOptions& v) {
  if (v.grid < 1) throw UsageError("--grid must be positive");
  if (v.seeds < 0) throw UsageError("--seeds must be non-negative");
  if (v.lambda.has_value() != v.mu.has_value()) throw UsageError("give --lambda and --mu together");
  if (v.lambda && (!(*v.lambda > 0.0) || !(*v.mu > 0.0))) throw UsageError("--lambda and --mu must be positive");

  std::vector<std::pair<double, double>> pairs =
      v.lambda ? std::vector<std::pair<double, double>>{{*v.lambda, *v.mu}} : log_spaced_pairs(v.grid);
  json out;
  bool ok = true;
  json grid = json::array();
  int delta_failures = 0;
  for (const auto& [l, m] : pairs) {
    auto r = verify_batching_deltas(l, m, 1e-10);
    // Relative comparison on the nonzero deltas.
    const auto& cf = r.deltas.closed_form;
    const auto& nu = r.deltas.numeric;
    auto rel = [](double a, double b) { return std::abs(a - b) / std::max(std::abs(a), 1e-300); };
    const double worst = std::max({rel(cf.d1_batch, nu.d1_batch), rel(cf.d1_no_batch, nu.d1_no_batch),
                                   rel(cf.d2_no_batch, nu.d2_no_batch)});
    const bool pass = worst <= v.tol && std::abs(nu.d2_batch) <= 1e-10 && r.gain_batch > r.gain_no_batch;
    if (!pass) ++delta_failures;
    grid.push_back(json{{"lambda", l}, {"mu", m}, {"max_rel_err", worst}, {"d2_batch", nu.d2_batch},
                        {"gain_batch", r.gain_batch}, {"gain_no_batch", r.gain_no_batch}, {"pass", pass}});
  }
  ok = ok && delta_failures == 0;
  out["deltas"] = json{{"pairs", grid.size()}, {"failures", delta_failures}, {"grid", grid}};

  if (v.seeds > 0) {
    const auto params = experimental_params();
    PathOptions po;
    po.service = parse_service(v.service, 1.0 / params.service_rate);
    int occ_fail = 0, comp_fail = 0;
    json first = nullptr;
    for (int i = 0; i < v.seeds; ++i) {
      const auto seed = derive_seed(c.seed, static_cast<std::uint64_t>(i));
      const auto path = generate_sample_path(params, seed, v.horizon, po);
      StrategyProfile alt;
      if (v.profile == "batch") {
        alt = experimental_profile(Strategy::batch);
      } else if (v.profile == "random") {
        alt = random_profile(derive_seed(seed, 0xA17), params.physicians);
      } else {
        throw UsageError("--profile must be batch or random");
      }
      const auto r = couple(path, params, alt);
      if (!r.occupancy_dominates) ++occ_fail;
      if (!r.completions_dominate) ++comp_fail;
      if (first.is_null() && r.first_violation) {
        first = json{{"seed", seed}, {"t", r.first_violation->first}, {"detail", r.first_violation->second}};
      }
    }
    const bool check_occ = v.check != "completions";
    const bool check_comp = v.check != "occupancy";
    if ((check_occ && occ_fail > 0) || (check_comp && comp_fail > 0)) ok = false;
    out["coupling"] = json{{"seeds", v.seeds},           {"profile", v.profile},
                           {"service", v.service},       {"checked", v.check},
                           {"occupancy_violations", occ_fail}, {"completion_violations", comp_fail},
                           {"first_violation", first}};
  }
  out["pass"] = ok;

  if (c.format == "json") {
    emit(c, dump(out));
  } else {
    std::ostringstream os;
    os << "batching deltas: " << out["deltas"]["pairs"] << " pairs, " << delta_failures << " failures\n";
    if (out.contains("coupling")) {
      const auto& k = out["coupling"];
      os << "coupling (" << v.profile << ", " << v.service << ", " << v.seeds << " seeds): "
         << "completion ordering violated on " << k["completion_violations"] << ", occupancy ordering violated on "
         << k["occupancy_violations"] << "\n";
    }
    os << (ok ? "PASS" : "FAIL") << "\n";
    emit(c, os.str());
  }
  return ok ? 0 : 1;
}

int cmd_simulate(const Common& c, const RunConfig& rc, int runs, const std::string& service, double warmup,
                 bool events) {
  const auto profile = expand_policy(rc.policy, rc.params);
  PathOptions po;
  po.service = parse_service(service, 1.0 / rc.params.service_rate);
  if (runs < 1) throw UsageError("--runs must be positive");
  if (runs == 1) {
    const auto path = generate_sample_path(rc.params, c.seed, rc.horizon, po);
    const auto r = simulate(path, rc.params, profile);
    if (events) {
      emit(c, events_to_jsonl(r.trajectory.events));
      return 0;
    }
    json out{{"path", path_metadata(path, rc.params)}, {"policy", rc.policy}, {"summary", r.summary}};
    emit(c, c.format == "json" ? dump(out)
                               : "completions " + std::to_string(r.summary.total_completions()) + "\nblocked " +
                                     std::to_string(r.summary.blocked) + "\nend state " +
                                     r.summary.end_state.to_string() + "\n");
    return 0;
  }
  EstimateOptions eo;
  eo.warmup = warmup;
  eo.path = po;
  const auto m = estimate_metrics(rc.params, profile, runs, rc.horizon, c.seed, eo);
  emit(c, dump(json{{"policy", rc.policy}, {"estimate", m}}));
  return 0;
}

int cmd_couple(const Common& c, const std::string& profile_name, const std::string& service, double horizon) {
  const auto params = experimental_params();
  PathOptions po;
  po.service = parse_service(service, 1.0 / params.service_rate);
  const auto path = generate_sample_path(params, c.seed, horizon, po);
  StrategyProfile alt;
  if (profile_name == "batch") {
    alt = experimental_profile(Strategy::batch);
  } else if (profile_name == "random") {
    alt = random_profile(derive_seed(c.seed, 0xA17), params.physicians);
  } else {
    throw UsageError("--profile must be batch or random");
  }
  const auto r = couple(path, params, alt);
  if (c.format == "json") {
    emit(c, dump(json{{"seed", c.seed}, {"profile", profile_name}, {"report", r}}));
  } else {
    std::ostringstream os;
    os << "completion ordering " << (r.completions_dominate ? "holds" : "violated") << "\noccupancy ordering "
       << (r.occupancy_dominates ? "holds" : "violated") << "\nadmitted " << r.admitted_star << " vs "
       << r.admitted_alt << "\n";
    if (r.first_violation) os << "first violation t=" << r.first_violation->first << " " << r.first_violation->second << "\n";
    emit(c, os.str());
  }
  return 0;
}

struct CalibrateCli {
  std::string treatment = "GT";
  std::string convention = "own";
  std::optional<double> target_strength, target_earnings;
  std::optional<double> threshold, per_unit;
  int clip_runs = 0;
};

int cmd_calibrate(const Common& c, const CalibrateCli& o) {
  const auto kind = parse_treatment(o.treatment);
  TableConvention conv;
  if (o.convention == "own") {
    conv = TableConvention::own_policy;
  } else if (o.convention == "table") {
    conv = TableConvention::treatment_table;
  } else {
    throw UsageError("--convention must be own or table");
  }
  if (kind == TreatmentKind::GT_NUDGE) throw UsageError("GT-Nudge pays exactly like GT; calibrate GT");
  TreatmentSpec t = standard_treatment(kind);
  if (o.target_strength || o.target_earnings) {
    if (!o.target_strength || !o.target_earnings) throw UsageError("give --target-strength and --target-earnings together");
    CalibrateOptions co;
    co.convention = conv;
    try {
      t = calibrate(*o.target_strength, *o.target_earnings, kind, co);
    } catch (const Error& e) {
      emit(c, dump(json{{"error", e.what()}}));
      return 1;
    }
  }
  if (o.threshold) t.threshold = *o.threshold;
  if (o.per_unit) t.per_unit = to_micros(*o.per_unit);
  auto r = calibration_report(t, conv);
  if (o.clip_runs > 0) {
    r.below_threshold_probability_opt = clipping_probability(t, r.optimal, o.clip_runs, c.seed);
    r.below_threshold_probability_subopt = clipping_probability(t, other(r.optimal), o.clip_runs, c.seed);
  }
  if (c.format == "json") {
    emit(c, dump(json{{"treatment", t},
                      {"report", r},
                      {"incentive_strength_display", fixed(r.incentive_strength, 2) + "%"},
                      {"expected_earnings_display", "$" + fixed(r.expected_earnings_opt, 2)}}));
  } else {
    std::ostringstream os;
    os << to_string(kind) << ": threshold " << t.threshold << " " << t.unit() << ", " << format_dollars(t.per_unit)
       << " per unit\n"
       << "optimal strategy   " << to_string(r.optimal) << "\n"
       << "incentive strength " << fixed(r.incentive_strength, 2) << "%\n"
       << "expected earnings  $" << fixed(r.expected_earnings_opt, 4) << "\n";
    for (const auto& w : r.warnings) os << "warning: " << w << "\n";
    os << "\n" << terminal_table_text(t.terminal_table, t.unit());
    emit(c, os.str());
  }
  return 0;
}

int cmd_select(const Common& c, double tolerance, int n, unsigned threads) {
  if (n < 1) throw UsageError("--n must be positive");
  if (!(tolerance >= 0.0)) throw UsageError("--tolerance must be non-negative");
  std::vector<TreatmentSpec> ts;
  for (auto k : {TreatmentKind::IT, TreatmentKind::GT, TreatmentKind::GT_ST}) ts.push_back(standard_treatment(k));
  SelectionOptions so;
  so.threads = threads;
  const auto sel = select_sample_paths(ts, n, tolerance, c.seed, so);
  if (c.format == "json") {
    json paths = json::array();
    for (const auto& p : sel) {
      json realized = json::object(), expected = json::object();
      for (const auto& [k, v] : p.realized_strengths) realized[to_string(k)] = v;
      for (const auto& [k, v] : p.expected_strengths) expected[to_string(k)] = v;
      paths.push_back(json{{"seed", p.seed},
                           {"metadata", path_metadata(p.path, experimental_params())},
                           {"realized_strengths", realized},
                           {"expected_strengths", expected}});
    }
    emit(c, dump(json{{"master_seed", c.seed}, {"candidates", n}, {"tolerance_pp", tolerance},
                      {"qualifying", sel.size()}, {"paths", paths}}));
  } else {
    std::ostringstream os;
    os << sel.size() << " of " << n << " candidates within " << tolerance << "pp\n";
    for (const auto& p : sel) {
      os << "seed " << p.seed;
      for (const auto& [k, v] : p.realized_strengths) os << "  " << to_string(k) << " " << fixed(v, 2) << "%";
      os << "\n";
    }
    emit(c, os.str());
  }
  return 0;
}

std::vector<double> parse_times(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("--times: '" + item + "' is not a number");
    }
  }
  return out;
}

int cmd_classify(const Common& c, double window, const std::string& times, const std::string& log) {
  if (!(window >= 0.0)) throw UsageError("--window must be non-negative");
  std::vector<BatchLabel> labels;
  if (!log.empty()) {
    std::ifstream in(log);
    if (!in) throw UsageError("cannot read " + log);
    std::stringstream ss;
    ss << in.rdbuf();
    Trajectory t;
    t.events = events_from_jsonl(ss.str());
    labels = classify_batches(t, window);
  } else {
    if (times.empty()) throw UsageError("give --times or --log");
    std::vector<Assignment> as;
    int k = 0;
    for (double t : parse_times(times)) as.push_back({0, t, k++});
    labels = classify_batches(as, window);
  }
  if (c.format == "json") {
    std::string text;
    for (const auto& l : labels) text += json(l).dump() + "\n";
    emit(c, text);
  } else {
    std::ostringstream os;
    for (const auto& l : labels) {
      os << "patient " << l.patient << " physician " << l.physician << " t=" << l.t << " "
         << (l.batched ? "batch of " + std::to_string(l.batch_size) : std::string("single")) << "\n";
    }
    emit(c, os.str());
  }
  return 0;
}

SessionServer* g_server = nullptr;

int cmd_serve(const Common& c, std::optional<int> port, const std::string& host, const std::string& log_dir,
              const std::string& static_dir) {
  ServiceConfig cfg;
  if (!c.config.empty()) {
    try {
      cfg = load_service_config(c.config);
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
  }
  try {
    apply_env_overrides(cfg);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  if (port) cfg.port = *port;
  if (!host.empty()) cfg.host = host;
  if (!log_dir.empty()) cfg.settings.log_dir = log_dir;
  if (!static_dir.empty()) cfg.static_dir = static_dir;
  SessionServer server(cfg);
  g_server = &server;
  std::signal(SIGINT, [](int) { if (g_server) g_server->stop(); });
  std::signal(SIGTERM, [](int) { if (g_server) g_server->stop(); });
  std::cerr << "listening on " << cfg.host << ":" << cfg.port << "\n";
  if (!server.listen()) {
    std::cerr << "cannot listen on " << cfg.host << ":" << cfg.port << "\n";
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qlab: shared-pool self-assignment queueing lab"};
  app.require_subcommand(1);
  Common common;
  if (const char* s = std::getenv("QLAB_SEED"); s && *s) {
    try {
      common.seed = std::stoull(s);
    } catch (const std::exception&) {
      std::cerr << "QLAB_SEED is not an unsigned integer\n";
      return 2;
    }
  }

  std::string preset = "experimental", policy, reward;
  std::optional<double> lambda, mu, horizon;
  std::optional<int> rooms;

  auto* solve = app.add_subcommand("solve", "Exact CTMC analysis of a policy");
  add_common(solve, common);
  add_model(solve, preset, lambda, mu, rooms);
  solve->add_option("--policy", policy, "batch | assign-one");
  solve->add_option("--reward", reward, "personal | group | occupancy");

  VerifyOptions vo;
  auto* verify = app.add_subcommand("verify", "Check the batching deltas, gain ordering and pathwise coupling");
  add_common(verify, common);
  verify->add_option("--grid", vo.grid, "Number of log-spaced (lambda, mu) pairs");
  verify->add_option("--lambda", vo.lambda, "Check a single pair (with --mu)");
  verify->add_option("--mu", vo.mu, "Check a single pair (with --lambda)");
  verify->add_option("--tol", vo.tol, "Relative tolerance on the deltas");
  verify->add_option("--seeds", vo.seeds, "Coupled sample paths (0 skips coupling)");
  verify->add_option("--profile", vo.profile, "Alternative profile")->check(CLI::IsMember({"batch", "random"}));
  verify->add_option("--service", vo.service, "Service distribution")
      ->check(CLI::IsMember({"exponential", "deterministic", "lognormal"}));
  verify->add_option("--check", vo.check, "Orderings that must hold")
      ->check(CLI::IsMember({"both", "completions", "occupancy"}));
  verify->add_option("--horizon", vo.horizon, "Path length");

  int runs = 1;
  std::string service = "exponential";
  double warmup = 0.0;
  bool events = false;
  auto* sim = app.add_subcommand("simulate", "Simulate one path, or estimate metrics over many");
  add_common(sim, common);
  add_model(sim, preset, lambda, mu, rooms);
  sim->add_option("--policy", policy, "batch | assign-one");
  sim->add_option("--horizon", horizon, "Time units per run");
  sim->add_option("--runs", runs, "Independent runs (more than one gives estimates)");
  sim->add_option("--service", service, "exponential | deterministic | lognormal");
  sim->add_option("--warmup", warmup, "Discarded prefix per run");
  sim->add_flag("--events", events, "Emit the event log as JSON lines");

  std::string couple_profile = "batch";
  double couple_horizon = 600.0;
  auto* cpl = app.add_subcommand("couple", "Couple assign-one against another profile on one path");
  add_common(cpl, common);
  cpl->add_option("--profile", couple_profile, "batch | random");
  cpl->add_option("--service", service, "exponential | deterministic | lognormal");
  cpl->add_option("--horizon", couple_horizon, "Path length");

  CalibrateCli co;
  auto* cal = app.add_subcommand("calibrate", "Incentive strength and earnings of a treatment");
  add_common(cal, common);
  cal->add_option("--treatment", co.treatment, "IT | GT | GT-ST");
  cal->add_option("--convention", co.convention, "own | table");
  cal->add_option("--target-strength", co.target_strength, "Search for this strength (percent)");
  cal->add_option("--target-earnings", co.target_earnings, "and these expected earnings (dollars)");
  cal->add_option("--threshold", co.threshold, "Override the threshold");
  cal->add_option("--per-unit", co.per_unit, "Override the rate (dollars)");
  cal->add_option("--clip-runs", co.clip_runs, "Monte Carlo runs for the below-threshold probability");

  double tolerance = 2.0;
  int n = 10000;
  unsigned threads = 0;
  auto* sel = app.add_subcommand("select-paths", "Find sample paths whose realized strengths match");
  add_common(sel, common);
  sel->add_option("--tolerance", tolerance, "Percentage points");
  sel->add_option("--n", n, "Candidates");
  sel->add_option("--threads", threads, "Worker threads (0 = hardware)");

  double window = 5.0;
  std::string times, log;
  auto* cls = app.add_subcommand("classify", "Label assignments as batched or single");
  add_common(cls, common);
  cls->add_option("--window", window, "Batch window");
  cls->add_option("--times", times, "Comma-separated assignment times of one physician");
  cls->add_option("--log", log, "Event log (JSON lines) instead of --times");

  std::optional<int> port;
  std::string host, log_dir, static_dir;
  auto* serve = app.add_subcommand("serve", "Run the session HTTP API");
  add_common(serve, common);
  serve->add_option("--port", port, "Port (overrides config and QLAB_PORT)");
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--log-dir", log_dir, "Session log directory");
  serve->add_option("--static", static_dir, "Serve static files from this directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    auto run_config = [&]() {
      auto rc = load_run_config(common, lambda, mu, rooms);
      if (!policy.empty()) rc.policy = policy;
      if (!reward.empty()) rc.reward = reward;
      if (horizon) rc.horizon = *horizon;
      return rc;
    };
    if (*solve) return cmd_solve(common, run_config());
    if (*verify) return cmd_verify(common, vo);
    if (*sim) return cmd_simulate(common, run_config(), runs, service, warmup, events);
    if (*cpl) return cmd_couple(common, couple_profile, service, couple_horizon);
    if (*cal) return cmd_calibrate(common, co);
    if (*sel) return cmd_select(common, tolerance, n, threads);
    if (*cls) return cmd_classify(common, window, times, log);
    if (*serve) return cmd_serve(common, port, host, log_dir, static_dir);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
