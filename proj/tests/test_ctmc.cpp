#include <gtest/gtest.h>

#include <unsupported/Eigen/MatrixFunctions>

#include <random>

#include "qlab/ctmc.hpp"

using namespace qlab;

namespace {

const double kLambda = 1.0 / 30.0;
const double kMu = 1.0 / 15.0;

SystemState st(int u, int a1, int a2) { return make_state(u, {a1, a2}); }

struct Entry {
  SystemState from, to;
  double rate;
};

// Off-diagonal entries of the experimental generators, transcribed row by row.
std::vector<Entry> reference_entries(bool batch, double l, double m) {
  std::vector<Entry> e{
      {st(0, 0, 0), batch ? st(0, 2, 1) : st(1, 1, 1), l},
      {st(0, 0, 1), st(0, 0, 0), m},
      {st(0, 0, 1), batch ? st(1, 2, 1) : st(2, 1, 1), l},
      {st(0, 1, 0), st(0, 0, 0), m},
      {st(0, 1, 0), st(2, 1, 1), l},
      {st(0, 2, 0), st(0, 1, 0), m},
      {st(0, 2, 0), st(1, 2, 1), l},
      {st(0, 1, 1), st(0, 0, 1), m},
      {st(0, 1, 1), st(0, 1, 0), m},
      {st(0, 1, 1), st(2, 1, 1), l},
      {st(0, 2, 1), st(0, 2, 0), m},
      {st(0, 2, 1), st(0, 1, 1), m},
      {st(0, 2, 1), st(1, 2, 1), l},
      {st(1, 1, 1), st(0, 1, 1), 2 * m},
      {st(1, 1, 1), st(2, 1, 1), l},
      {st(1, 2, 1), st(0, 2, 1), m},
      {st(1, 2, 1), st(1, 1, 1), m},
  };
  if (batch) {
    e.push_back({st(2, 1, 1), st(0, 2, 1), m});
    e.push_back({st(2, 1, 1), st(1, 1, 1), m});
  } else {
    e.push_back({st(2, 1, 1), st(1, 1, 1), 2 * m});
  }
  return e;
}

Eigen::MatrixXd reference_matrix(const Generator& g, bool batch, double l, double m) {
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(9, 9);
  for (const auto& e : reference_entries(batch, l, m)) {
    const auto i = static_cast<Eigen::Index>(g.index_of(e.from));
    const auto j = static_cast<Eigen::Index>(g.index_of(e.to));
    q(i, j) += e.rate;
    q(i, i) -= e.rate;
  }
  return q;
}

Generator experimental(Strategy s, double l = kLambda, double m = kMu) {
  return build_generator(experimental_params(l, m), experimental_profile(s));
}

double rel_err(double a, double b) { return std::abs(a - b) / std::abs(b); }

}  // namespace

TEST(BuildGenerator, BatchPolicyMatchesReferenceMatrix) {
  const auto g = experimental(Strategy::batch);
  ASSERT_EQ(g.size(), 9u);
  EXPECT_EQ(g.states.front(), st(0, 0, 0));
  EXPECT_EQ(g.states.back(), st(2, 1, 1));
  EXPECT_LT((g.rates - reference_matrix(g, true, kLambda, kMu)).cwiseAbs().maxCoeff(), 1e-15);
  // Row (0,0,0): a single off-diagonal entry, lambda into (0,2,1).
  EXPECT_DOUBLE_EQ(g.rate(st(0, 0, 0), st(0, 2, 1)), kLambda);
  EXPECT_DOUBLE_EQ(g.rate(st(0, 0, 0), st(0, 0, 0)), -kLambda);
}

TEST(BuildGenerator, NoBatchPolicyMatchesReferenceMatrix) {
  const auto g = experimental(Strategy::no_batch);
  ASSERT_EQ(g.size(), 9u);
  EXPECT_LT((g.rates - reference_matrix(g, false, kLambda, kMu)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_DOUBLE_EQ(g.rate(st(2, 1, 1), st(1, 1, 1)), 2 * kMu);
  // The states with two focal patients are transient under no-batch.
  EXPECT_FALSE(is_irreducible(g));
  EXPECT_TRUE(is_unichain(g));
  EXPECT_TRUE(is_irreducible(experimental(Strategy::batch)));
}

TEST(BuildGenerator, RowsSumToZeroAcrossConfigurations) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 60; ++trial) {
    SystemParams p;
    p.physicians = 2 + static_cast<int>(rng() % 3);
    p.rooms = 1 + static_cast<int>(rng() % 7);
    p.group_dist = {0.3, 0.3, 0.4};
    p.arrival_rate = 0.1 + static_cast<double>(rng() % 100) / 50.0;
    p.service_rate = 0.1 + static_cast<double>(rng() % 100) / 50.0;
    StrategyProfile prof;
    for (int i = 0; i < p.physicians; ++i) prof.rules.push_back(DecisionRule::random(rng(), 3));
    prof.decision_order = ascending_order(p.physicians);
    const auto g = build_generator(p, prof);
    EXPECT_LT(g.max_row_sum_error(), 1e-12);
    for (Eigen::Index i = 0; i < g.rates.rows(); ++i) {
      for (Eigen::Index j = 0; j < g.rates.cols(); ++j) {
        if (i != j) {
          EXPECT_GE(g.rates(i, j), 0.0);
        }
      }
      EXPECT_TRUE(g.states[static_cast<std::size_t>(i)].stable());
      EXPECT_LE(g.states[static_cast<std::size_t>(i)].occupancy(), p.rooms);
    }
  }
}

TEST(BuildGenerator, StateBoundIsEnforced) {
  GeneratorOptions opt;
  opt.max_states = 5;
  EXPECT_THROW(build_generator(experimental_params(), experimental_profile(Strategy::batch), opt),
               Error);
}

TEST(SteadyState, EmptySystemLimit) {
  const auto g = build_generator(experimental_params(1e-9, 1.0), experimental_profile(Strategy::batch));
  const auto pi = steady_state(g);
  EXPECT_NEAR(pi.probability(st(0, 0, 0)), 1.0, 1e-6);
}

TEST(SteadyState, BalanceResidual) {
  for (auto s : {Strategy::batch, Strategy::no_batch}) {
    const auto g = experimental(s);
    const auto pi = steady_state(g);
    double sum = 0.0;
    for (double p : pi.probabilities) {
      EXPECT_GE(p, 0.0);
      sum += p;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    EXPECT_LE(balance_residual(g, pi), 1e-10);
  }
  // Transient states carry no stationary mass.
  const auto pi = steady_state(experimental(Strategy::no_batch));
  EXPECT_NEAR(pi.probability(st(0, 2, 1)), 0.0, 1e-14);
}

TEST(SolvePoisson, DeltaOneUnderBatching) {
  const auto sol = solve_poisson(experimental(Strategy::batch), RewardSpec::personal(0));
  // Closed form at mu = 2 lambda evaluates to 2872/15795.
  EXPECT_NEAR(sol.h(st(0, 2, 1)) - sol.h(st(1, 1, 1)), 2872.0 / 15795.0, 1e-9);
  EXPECT_NEAR(sol.h(st(0, 2, 1)) - sol.h(st(1, 1, 1)), 0.1818, 1e-3);
  EXPECT_NEAR(sol.h(st(1, 2, 1)) - sol.h(st(2, 1, 1)), 0.0, 1e-10);
  EXPECT_EQ(sol.h(st(0, 0, 0)), 0.0);
}

TEST(SolvePoisson, ConstantRewardHasFlatRelativeValues) {
  const auto g = experimental(Strategy::no_batch);
  const std::vector<double> reward(g.size(), 2.5);
  const auto sol = solve_poisson(g, reward, st(0, 0, 0));
  EXPECT_NEAR(sol.gain, 2.5, 1e-12);
  for (double h : sol.relative_values) EXPECT_NEAR(h, 0.0, 1e-9);
}

TEST(SolvePoisson, ResidualAndReferenceNormalization) {
  for (auto s : {Strategy::batch, Strategy::no_batch}) {
    const auto g = experimental(s);
    for (auto r : {RewardSpec::personal(0), RewardSpec::group(), RewardSpec::occupancy()}) {
      const auto rho = reward_vector(g, r);
      const auto sol = solve_poisson(g, rho, st(1, 1, 1));
      EXPECT_EQ(sol.h(st(1, 1, 1)), 0.0);
      EXPECT_LE(poisson_residual(g, rho, sol), 1e-9);
    }
  }
}

TEST(SolvePoisson, GainEqualsStationaryReward) {
  const auto g = experimental(Strategy::batch);
  const auto pi = steady_state(g);
  for (auto r : {RewardSpec::personal(0), RewardSpec::group(), RewardSpec::occupancy()}) {
    const auto rho = reward_vector(g, r);
    EXPECT_NEAR(solve_poisson(g, rho, st(0, 0, 0)).gain, pi.expectation(rho), 1e-12);
  }
}

TEST(SolvePoisson, UnknownReferenceThrows) {
  EXPECT_THROW(solve_poisson(experimental(Strategy::batch), RewardSpec::group(), st(3, 1, 0)),
               Error);
}

TEST(Transient, ZeroHorizonIsPointMass) {
  const auto g = experimental(Strategy::no_batch);
  const auto d = transient_distribution(g, st(0, 1, 1), 0.0);
  EXPECT_EQ(d.probability(st(0, 1, 1)), 1.0);
  EXPECT_EQ(d.probability(st(0, 0, 0)), 0.0);
}

TEST(Transient, ConvergesToStationarity) {
  for (auto s : {Strategy::batch, Strategy::no_batch}) {
    const auto g = experimental(s);
    const auto d = transient_distribution(g, st(0, 0, 0), 1e6);
    const auto pi = steady_state(g);
    for (std::size_t i = 0; i < g.size(); ++i) {
      EXPECT_NEAR(d.probabilities[i], pi.probabilities[i], 1e-8) << g.states[i].to_string();
    }
  }
}

// Independent route: dense matrix exponential.
TEST(Transient, MatchesMatrixExponential) {
  for (auto s : {Strategy::batch, Strategy::no_batch}) {
    const auto g = experimental(s);
    for (double t : {1.0, 17.5, 600.0}) {
      const Eigen::MatrixXd p = (g.rates * t).exp();
      const auto d = transient_distribution(g, st(0, 0, 0), t);
      for (std::size_t j = 0; j < g.size(); ++j) {
        EXPECT_NEAR(d.probabilities[j], p(0, static_cast<Eigen::Index>(j)), 1e-11);
      }
    }
  }
}

TEST(Transient, ChapmanKolmogorov) {
  const auto g = experimental(Strategy::batch);
  const double tol = 1e-12;
  const double t = 300.0;
  const auto full = transient_distribution(g, st(0, 0, 0), t, {tol});
  const auto half = transient_distribution(g, st(0, 0, 0), t / 2, {tol});
  std::vector<double> composed(g.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto row = transient_distribution(g, g.states[i], t / 2, {tol});
    for (std::size_t j = 0; j < g.size(); ++j) composed[j] += half.probabilities[i] * row.probabilities[j];
  }
  for (std::size_t j = 0; j < g.size(); ++j) EXPECT_NEAR(full.probabilities[j], composed[j], 10 * tol);
}

TEST(CumulativeReward, ZeroHorizon) {
  EXPECT_EQ(expected_cumulative_reward(experimental(Strategy::batch), RewardSpec::group(),
                                       st(0, 0, 0), 0.0),
            0.0);
}

// Oracle: integral of exp(Qt) via the augmented-matrix exponential
// exp([[Q, rho], [0, 0]] T), whose top-right block is int_0^T exp(Qt) rho dt.
TEST(CumulativeReward, MatchesAugmentedExponential) {
  for (auto s : {Strategy::batch, Strategy::no_batch}) {
    const auto g = experimental(s);
    for (auto r : {RewardSpec::personal(0), RewardSpec::group(), RewardSpec::occupancy()}) {
      const auto rho = reward_vector(g, r);
      const auto n = static_cast<Eigen::Index>(g.size());
      Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(n + 1, n + 1);
      aug.topLeftCorner(n, n) = g.rates;
      for (Eigen::Index i = 0; i < n; ++i) aug(i, n) = rho[static_cast<std::size_t>(i)];
      const Eigen::MatrixXd e = (aug * 600.0).exp();
      const double oracle = e(0, n);
      const double got = expected_cumulative_reward(g, rho, st(0, 0, 0), 600.0);
      EXPECT_NEAR(got, oracle, 1e-8 * std::max(1.0, std::abs(oracle)));
    }
  }
}

TEST(CumulativeReward, NoBatchYieldsMoreGroupThroughputOverAShift) {
  const double nb =
      expected_cumulative_reward(experimental(Strategy::no_batch), RewardSpec::group(), st(0, 0, 0), 600);
  const double b =
      expected_cumulative_reward(experimental(Strategy::batch), RewardSpec::group(), st(0, 0, 0), 600);
  EXPECT_GT(nb, b);
}

TEST(Metrics, LittlesLawAndOfferedLoad) {
  for (auto s : {Strategy::batch, Strategy::no_batch}) {
    const auto params = experimental_params();
    const auto m = metrics(params, experimental_profile(s));
    EXPECT_NEAR(m.mean_sojourn, m.mean_occupancy / m.system_throughput, 1e-9);
    EXPECT_LE(m.system_throughput, params.offered_load());
    double sum = 0.0;
    for (double x : m.individual_throughput) sum += x;
    EXPECT_NEAR(sum, m.system_throughput, 1e-12);
    EXPECT_NEAR(m.blocking_rate, 1.0 - m.system_throughput / params.offered_load(), 1e-15);
  }
}

TEST(Metrics, NoBatchDominatesBatch) {
  const auto nb = metrics(experimental_params(), experimental_profile(Strategy::no_batch));
  const auto b = metrics(experimental_params(), experimental_profile(Strategy::batch));
  EXPECT_GE(nb.system_throughput, b.system_throughput);
  EXPECT_LE(nb.mean_sojourn, b.mean_sojourn);
}

TEST(Metrics, LightTrafficLimit) {
  const auto p = experimental_params(1e-7, 1.0);
  const auto m = metrics(p, experimental_profile(Strategy::no_batch));
  EXPECT_NEAR(m.system_throughput / p.offered_load(), 1.0, 1e-5);
  EXPECT_NEAR(m.blocking_rate, 0.0, 1e-5);
}

TEST(ClosedForm, ExactRationalValuesAtLambdaOneMuTwo) {
  // Direct polynomial evaluation by hand: 8*359 / (9*1755) and 16*359 / (25*1029).
  const auto d = closed_form_deltas(1.0, 2.0);
  EXPECT_NEAR(d.d1_batch, 2872.0 / 15795.0, 1e-15);
  EXPECT_NEAR(d.d1_no_batch, 5744.0 / 25725.0, 1e-15);
  EXPECT_NEAR(d.d2_no_batch, 2872.0 / 25725.0, 1e-15);
  EXPECT_EQ(d.d2_batch, 0.0);
  EXPECT_NEAR(d.d1_batch, 0.18182, 1e-5);
  EXPECT_NEAR(d.d1_no_batch, 0.22329, 1e-5);
  EXPECT_NEAR(d.d2_no_batch, 0.11164, 1e-5);
}

TEST(ClosedForm, NumericDeltasMatchOnRandomLogUniformPairs) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> e(-2.0, 2.0);
  for (int i = 0; i < 20; ++i) {
    const double l = std::pow(10.0, e(rng)), m = std::pow(10.0, e(rng));
    const auto c = closed_form_deltas(l, m);
    const auto n = numeric_deltas(l, m);
    EXPECT_LE(rel_err(n.d1_batch, c.d1_batch), 1e-8) << l << " " << m;
    EXPECT_LE(rel_err(n.d1_no_batch, c.d1_no_batch), 1e-8) << l << " " << m;
    EXPECT_LE(rel_err(n.d2_no_batch, c.d2_no_batch), 1e-8) << l << " " << m;
    EXPECT_LE(std::abs(n.d2_batch), 1e-10);
  }
}

TEST(ClosedForm, ExtremeCorners) {
  for (auto [l, m] : {std::pair{1e2, 1e-2}, std::pair{1e-2, 1e2}, std::pair{1e2, 1e2},
                      std::pair{1e-2, 1e-2}}) {
    const auto c = closed_form_deltas(l, m);
    const auto n = numeric_deltas(l, m);
    EXPECT_LE(rel_err(n.d1_batch, c.d1_batch), 1e-8) << l << " " << m;
    EXPECT_LE(rel_err(n.d1_no_batch, c.d1_no_batch), 1e-8) << l << " " << m;
    EXPECT_LE(rel_err(n.d2_no_batch, c.d2_no_batch), 1e-8) << l << " " << m;
  }
}

TEST(VerifyBatchingDeltas, PassesAtExperimentalAndHeavyLoad) {
  const auto a = verify_batching_deltas(kLambda, kMu, 1e-9);
  EXPECT_TRUE(a.pass);
  for (auto& f : a.failures) ADD_FAILURE() << f;
  EXPECT_GT(a.gain_batch, a.gain_no_batch);
  const auto b = verify_batching_deltas(10.0, 0.1, 1e-9);
  EXPECT_TRUE(b.pass);
  for (auto& f : b.failures) ADD_FAILURE() << f;
}

TEST(VerifyBatchingDeltas, ReportsViolatedComparisons) {
  // A negative tolerance cannot be met; every comparison must be listed.
  const auto r = verify_batching_deltas(kLambda, kMu, -1.0);
  EXPECT_FALSE(r.pass);
  EXPECT_GE(r.failures.size(), 4u);
}

// All-assign-one weakly dominates every deterministic stationary profile in
// the enumerable family (both physicians may claim up to two).
TEST(PolicyDominance, AssignOneDominatesEnumerableFamily) {
  StrategyProfile caps;
  caps.rules = {DecisionRule::assign_one(2), DecisionRule::assign_one(2)};
  caps.decision_order = {1, 0};
  for (double l : {1.0 / 60, 1.0 / 30, 1.0 / 10}) {
    for (double m : {1.0 / 30, 1.0 / 15, 1.0 / 5}) {
      const auto params = experimental_params(l, m);
      const auto points = decision_points(params, caps);
      ASSERT_LE(points.size(), 16u);
      const auto star = metrics(params, all_assign_one(2));
      for (std::uint32_t mask = 0; mask < (1u << points.size()); ++mask) {
        std::map<SystemState, int> tables[2];
        for (std::size_t k = 0; k < points.size(); ++k) {
          tables[points[k].physician][points[k].state] = (mask >> k) & 1u ? 2 : 1;
        }
        StrategyProfile p;
        p.rules = {DecisionRule::from_table(tables[0], 2), DecisionRule::from_table(tables[1], 2)};
        p.decision_order = {1, 0};
        const auto alt = metrics(params, p);
        ASSERT_GE(star.system_throughput, alt.system_throughput - 1e-12) << mask;
        ASSERT_LE(star.mean_sojourn, alt.mean_sojourn + 1e-9) << mask;
      }
    }
  }
}
