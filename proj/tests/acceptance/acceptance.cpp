// Acceptance run: one PASS/FAIL line per criterion, details indented below.
// Exit status is nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "qlab/calibration.hpp"
#include "qlab/ctmc.hpp"
#include "qlab/des.hpp"
#include "qlab/serialize.hpp"

using namespace qlab;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> details;

  void note(const std::string& s) { details.push_back(s); }
  void fail(const std::string& s) {
    pass = false;
    details.push_back(s);
  }
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

const std::vector<SystemState>& table_states() {
  static const std::vector<SystemState> s{make_state(0, {0, 1}), make_state(0, {1, 0}), make_state(0, {2, 0}),
                                          make_state(0, {1, 1}), make_state(0, {2, 1}), make_state(1, {1, 1}),
                                          make_state(1, {2, 1}), make_state(2, {1, 1})};
  return s;
}

void compare_table(Outcome& o, const char* name, const TerminalTable& t, const std::vector<double>& expected,
                   double tol) {
  int bad = 0;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& s = table_states()[i];
    const double v = table_value(t, s);
    const bool ok = std::abs(v - expected[i]) <= tol;
    if (!ok) ++bad;
    o.details.push_back(fmt("%s %-8s computed %9.4f expected %6.3f diff %+8.4f %s", name, s.to_string().c_str(), v,
                            expected[i], v - expected[i], ok ? "ok" : "OUT OF TOLERANCE"));
  }
  if (bad) {
    o.pass = false;
    o.details.push_back(fmt("%s: %d of %zu entries outside +/-%.3f", name, bad, expected.size(), tol));
  }
}

// 1. Closed-form deltas against numeric relative values.
Outcome criterion1() {
  Outcome o;
  double worst = 0.0, worst_d2 = 0.0;
  for (const auto& [l, m] : log_spaced_pairs(20)) {
    const auto c = closed_form_deltas(l, m);
    const auto n = numeric_deltas(l, m);
    auto rel = [](double a, double b) { return std::abs(a - b) / std::abs(a); };
    const double r = std::max({rel(c.d1_batch, n.d1_batch), rel(c.d1_no_batch, n.d1_no_batch),
                               rel(c.d2_no_batch, n.d2_no_batch)});
    worst = std::max(worst, r);
    worst_d2 = std::max({worst_d2, std::abs(n.d2_batch), std::abs(c.d2_batch)});
    if (!(r <= 1e-8)) o.fail(fmt("lambda=%.4g mu=%.4g relative error %.3e", l, m, r));
    if (!(std::abs(n.d2_batch) <= 1e-10)) o.fail(fmt("lambda=%.4g mu=%.4g second batch delta %.3e", l, m, n.d2_batch));
  }
  o.note(fmt("20 pairs, worst relative error %.3e, worst |second batch delta| %.3e", worst, worst_d2));
  return o;
}

// 2. IT table.
Outcome criterion2() {
  Outcome o;
  const auto t = terminal_adjustment_table(RewardSpec::personal(0), experimental_profile(Strategy::batch),
                                           experimental_params());
  compare_table(o, "IT", t, {0.038, 0.705, 1.174, 0.720, 1.181, 0.999, 1.294, 1.294}, 0.005);
  return o;
}

// 3. GT and GT-ST tables under the no-batch profile.
Outcome criterion3() {
  Outcome o;
  const auto nb = experimental_profile(Strategy::no_batch);
  const auto gt = terminal_adjustment_table(RewardSpec::group(), nb, experimental_params());
  compare_table(o, "GT", gt, {0.82, 0.82, 1.36, 1.55, 2.05, 2.13, 2.56, 2.60}, 0.02);
  const auto st = terminal_adjustment_table(RewardSpec::occupancy(), nb, experimental_params());
  compare_table(o, "GT-ST", st, {2.59, 2.59, 5.99, 4.63, 7.80, 7.26, 10.58, 10.58}, 0.02);
  return o;
}

// 4. Incentive strengths and optimal earnings at the standard thresholds and
// rates.
Outcome criterion4() {
  Outcome o;
  struct Row {
    TreatmentKind k;
    double strength;
    double earnings;
  };
  for (const Row& r : {Row{TreatmentKind::IT, 14.8, 4.37}, Row{TreatmentKind::GT, 15.2, 4.65},
                       Row{TreatmentKind::GT_ST, 15.4, 4.22}}) {
    const auto rep = calibration_report(standard_treatment(r.k));
    const bool s_ok = std::abs(rep.incentive_strength - r.strength) <= 0.3;
    const bool e_ok = std::abs(rep.expected_earnings_opt - r.earnings) <= 0.02;
    const std::string line = fmt("%-5s strength %7.4f%% (target %.1f%%) %s; earnings $%.4f (target $%.2f) %s",
                                 to_string(r.k), rep.incentive_strength, r.strength, s_ok ? "ok" : "OUT OF TOLERANCE",
                                 rep.expected_earnings_opt, r.earnings, e_ok ? "ok" : "OUT OF TOLERANCE");
    if (s_ok && e_ok) {
      o.note(line);
    } else {
      o.fail(line);
    }
  }
  return o;
}

// 5. Pathwise coupling of assign-one against other profiles.
Outcome criterion5() {
  Outcome o;
  const auto params = experimental_params();
  StrategyProfile both_batch;
  both_batch.rules = {DecisionRule::batch(2), DecisionRule::batch(2)};
  both_batch.decision_order = {1, 0};
  std::vector<StrategyProfile> randoms;
  for (int k = 0; k < 100; ++k) randoms.push_back(random_profile(derive_seed(0xC0FFEE, static_cast<std::uint64_t>(k)), 2));

  const std::vector<std::pair<const char*, TimeDistribution>> services{
      {"exponential", TimeDistribution::exponential(15)},
      {"deterministic", TimeDistribution::deterministic(15)},
      {"lognormal", TimeDistribution::lognormal(15, 0.5)}};
  for (const auto& [name, dist] : services) {
    PathOptions po;
    po.service = dist;
    int occ_b = 0, comp_b = 0, occ_r = 0, comp_r = 0, paths_r = 0;
    for (std::uint64_t i = 0; i < 1000; ++i) {
      const auto path = generate_sample_path(params, derive_seed(0, i), 600, po);
      const auto b = couple(path, params, both_batch);
      occ_b += !b.occupancy_dominates;
      comp_b += !b.completions_dominate;
      bool any_occ = false;
      for (const auto& p : randoms) {
        const auto r = couple(path, params, p);
        occ_r += !r.occupancy_dominates;
        comp_r += !r.completions_dominate;
        any_occ = any_occ || !r.occupancy_dominates;
      }
      paths_r += any_occ;
    }
    const std::string a = fmt("%-13s both-batch: N ordering violated on %d/1000 paths, C ordering on %d/1000", name,
                              occ_b, comp_b);
    const std::string b = fmt("%-13s 100 random profiles: N ordering violated in %d/100000 couplings (%d paths), C "
                              "ordering in %d/100000",
                              name, occ_r, paths_r, comp_r);
    if (occ_b || comp_b) {
      o.fail(a);
    } else {
      o.note(a);
    }
    if (occ_r || comp_r) {
      o.fail(b);
    } else {
      o.note(b);
    }
  }
  return o;
}

// 6. Monte Carlo against the exact chain.
Outcome criterion6() {
  Outcome o;
  const auto params = experimental_params();
  for (auto s : {Strategy::batch, Strategy::no_batch}) {
    const auto profile = experimental_profile(s);
    const auto g = build_generator(params, profile);
    const auto pi = steady_state<Quad>(g);
    const auto exact = metrics(g, pi);
    EstimateOptions eo;
    eo.warmup = 500;
    const auto mc = estimate_metrics(params, profile, 1000, 1e4, 0, eo);
    auto check = [&](const std::string& what, const Estimate& e, double x) {
      // Zero spread only happens for states no run visits; then the estimate
      // must match exactly.
      const double z = e.std_error > 0.0 ? (e.mean - x) / e.std_error : (e.mean == x ? 0.0 : INFINITY);
      const std::string line =
          fmt("%-8s %-22s exact %.6f estimate %.6f se %.2e z %+.2f", to_string(s), what.c_str(), x, e.mean, e.std_error, z);
      if (std::abs(z) <= 3.0) {
        o.note(line);
      } else {
        o.fail(line + " OUTSIDE 3 SE");
      }
    };
    check("throughput", mc.system_throughput, exact.system_throughput);
    check("mean sojourn", mc.mean_sojourn, exact.mean_sojourn);
    check("blocking rate", mc.blocking_rate, exact.blocking_rate);
    for (std::size_t i = 0; i < g.size(); ++i) {
      check("occupancy " + g.states[i].to_string(), mc.occupancy_of(g.states[i]), pi.probabilities[i]);
    }
  }
  return o;
}

// 7. Gain and system-metric ordering over a grid.
Outcome criterion7() {
  Outcome o;
  int cells = 0;
  for (const auto& [l, m] : log_spaced_grid(10)) {
    ++cells;
    const auto params = experimental_params(l, m);
    const auto gb = build_generator(params, experimental_profile(Strategy::batch));
    const auto gn = build_generator(params, experimental_profile(Strategy::no_batch));
    const auto hb = solve_poisson<Quad>(gb, RewardSpec::personal(0));
    const auto hn = solve_poisson<Quad>(gn, RewardSpec::personal(0));
    const auto mb = metrics(gb, steady_state<Quad>(gb));
    const auto mn = metrics(gn, steady_state<Quad>(gn));
    if (!(hb.gain > hn.gain)) o.fail(fmt("lambda=%.4g mu=%.4g personal gain not larger under batching", l, m));
    if (!(mn.system_throughput >= mb.system_throughput)) o.fail(fmt("lambda=%.4g mu=%.4g throughput ordering", l, m));
    if (!(mn.mean_sojourn <= mb.mean_sojourn)) o.fail(fmt("lambda=%.4g mu=%.4g sojourn ordering", l, m));
  }
  o.note(fmt("%d grid cells checked", cells));
  return o;
}

// 8. Sample-path selection and independent replay of the realized strengths.
Outcome criterion8() {
  Outcome o;
  std::vector<TreatmentSpec> ts;
  for (auto k : {TreatmentKind::IT, TreatmentKind::GT, TreatmentKind::GT_ST}) ts.push_back(standard_treatment(k));
  const auto sel = select_sample_paths(ts, 10000, 2.0, 0);
  for (const auto& p : sel) {
    std::string line = fmt("seed %llu:", static_cast<unsigned long long>(p.seed));
    // Replay from metadata alone, one run per strategy, bonuses from scratch.
    const auto path = path_from_metadata(json::parse(path_metadata(p.path, experimental_params()).dump()));
    const auto rb = simulate(path, experimental_params(), experimental_profile(Strategy::batch));
    const auto rn = simulate(path, experimental_params(), experimental_profile(Strategy::no_batch));
    for (std::size_t i = 0; i < ts.size(); ++i) {
      const auto tables = own_tables(ts[i].kind);
      const auto opt = optimal_strategy(ts[i].kind);
      const auto b_b = realized_bonus(ts[i], realized_metric(ts[i], rb.summary, tables.batch));
      const auto b_n = realized_bonus(ts[i], realized_metric(ts[i], rn.summary, tables.no_batch));
      const double replayed =
          opt == Strategy::batch ? strength_from_bonuses(b_b, b_n) : strength_from_bonuses(b_n, b_b);
      const double stored = p.realized_strengths[i].second;
      line += fmt(" %s %.4f%%", to_string(ts[i].kind), stored);
      if (replayed != stored) o.fail(fmt("seed %llu %s: stored %.17g replayed %.17g",
                                         static_cast<unsigned long long>(p.seed), to_string(ts[i].kind), stored,
                                         replayed));
    }
    o.note(line);
  }
  const std::string count = fmt("%zu qualifying paths among 10000 candidates (master seed 0), need at least 2", sel.size());
  if (sel.size() >= 2) {
    o.note(count);
  } else {
    o.fail(count);
  }
  return o;
}

// 9. Batch classifier.
Outcome criterion9() {
  Outcome o;
  auto sizes = [](std::vector<Assignment> a, double w) {
    std::vector<int> out;
    for (const auto& l : classify_batches(std::move(a), w)) out.push_back(l.batch_size);
    return out;
  };
  struct Case {
    const char* name;
    std::vector<Assignment> a;
    std::vector<int> expected;
  };
  const std::vector<Case> cases{
      {"0,2,4 minutes", {{0, 0, 0}, {0, 2, 1}, {0, 4, 2}}, {3, 3, 3}},
      {"chain longer than window", {{0, 0, 0}, {0, 4, 1}, {0, 8, 2}}, {3, 3, 3}},
      {"gap breaks chain", {{0, 0, 0}, {0, 6, 1}}, {1, 1}},
      {"gap equal to window", {{0, 0, 0}, {0, 5, 1}}, {2, 2}},
      {"physicians kept apart", {{0, 0, 0}, {1, 1, 1}}, {1, 1}},
      {"two chains", {{0, 0, 0}, {0, 1, 1}, {0, 20, 2}, {0, 22, 3}, {0, 24, 4}}, {2, 2, 3, 3, 3}},
      {"unsorted input", {{0, 4, 2}, {0, 0, 0}, {0, 2, 1}}, {3, 3, 3}},
  };
  for (const auto& c : cases) {
    const auto got = sizes(c.a, 5.0);
    if (got == c.expected) {
      o.note(std::string(c.name) + ": ok");
    } else {
      o.fail(std::string(c.name) + ": wrong batch sizes");
    }
  }
  return o;
}

// 10. Blocking table.
Outcome criterion10() {
  Outcome o;
  const std::vector<SystemState> by_occupancy{make_state(0, {0, 0}), make_state(0, {1, 0}), make_state(0, {1, 1}),
                                              make_state(1, {1, 1}), make_state(2, {1, 1})};
  const std::vector<int> expected{3, 3, 2, 1, 0};
  for (std::size_t n = 0; n < by_occupancy.size(); ++n) {
    const int got = admit_count(by_occupancy[n], 3, 4);
    const std::string line = fmt("%zu in system -> %d admitted (expected %d)", n, got, expected[n]);
    if (got == expected[n]) {
      o.note(line);
    } else {
      o.fail(line);
    }
  }
  return o;
}

}  // namespace

int main() {
  using Clock = std::chrono::steady_clock;
  struct Entry {
    int id;
    const char* title;
    Outcome (*run)();
  };
  const std::vector<Entry> entries{
      {1, "closed-form batching deltas", criterion1},
      {2, "IT terminal table", criterion2},
      {3, "GT and GT-ST terminal tables", criterion3},
      {4, "incentive strengths and earnings", criterion4},
      {5, "pathwise coupling dominance", criterion5},
      {6, "CTMC vs simulation", criterion6},
      {7, "gain and metric ordering grid", criterion7},
      {8, "sample-path selection", criterion8},
      {9, "batch classifier", criterion9},
      {10, "blocking table", criterion10},
  };
  int failures = 0;
  for (const auto& e : entries) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = e.run();
    } catch (const std::exception& ex) {
      o.fail(std::string("exception: ") + ex.what());
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    std::cout << "criterion " << e.id << " " << (o.pass ? "PASS" : "FAIL") << "  " << e.title
              << fmt("  (%.2fs)", secs) << "\n";
    for (const auto& d : o.details) std::cout << "    " << d << "\n";
    std::cout.flush();
    failures += !o.pass;
  }
  std::cout << (10 - failures) << " of 10 criteria pass\n";
  return failures == 0 ? 0 : 1;
}
