#pragma once

// Exact analysis of the collapsed-state CTMC: generator construction,
// stationary distribution, Poisson equations (gain and relative values),
// transient distributions by uniformization and finite-horizon rewards.
//
// Solvers are templated on the working precision. double is the default;
// Quad (113-bit significand) is used where differences of nearly equal
// relative values matter, e.g. the heavy-load corners of the closed-form
// comparison where h(s) ~ 1e-4 and the differences ~ 1e-12.

#include <Eigen/Dense>
#include <boost/multiprecision/cpp_bin_float.hpp>
#include <boost/multiprecision/eigen.hpp>

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qlab/model.hpp"

namespace qlab {

using Quad = boost::multiprecision::number<
    boost::multiprecision::cpp_bin_float<113, boost::multiprecision::digit_base_2, void,
                                         std::int16_t, -16382, 16383>,
    boost::multiprecision::et_off>;

struct Generator {
  SystemParams params;
  std::vector<SystemState> states;  // in DisplayOrder
  Eigen::MatrixXd rates;            // Q, rows sum to zero

  std::size_t size() const { return states.size(); }

  std::optional<std::size_t> find(const SystemState& s) const {
    for (std::size_t i = 0; i < states.size(); ++i) {
      if (states[i] == s) return i;
    }
    return std::nullopt;
  }

  std::size_t index_of(const SystemState& s) const {
    if (auto i = find(s)) return *i;
    throw Error("state " + s.to_string() + " is not in the generator's state space");
  }

  double rate(const SystemState& from, const SystemState& to) const {
    return rates(static_cast<Eigen::Index>(index_of(from)),
                 static_cast<Eigen::Index>(index_of(to)));
  }

  // Largest absolute row sum.
  double max_row_sum_error() const { return rates.rowwise().sum().cwiseAbs().maxCoeff(); }
};

struct GeneratorOptions {
  std::size_t max_states = 1'000'000;
  // Also enumerate states reached only through claims the profile does not
  // make. These rows stay in the chain (as transient states when the profile
  // never enters them) so relative values exist for every post-decision state.
  bool include_alternatives = true;
};

namespace detail {

template <class Visit>
void for_each_transition(const SystemParams& params, const StrategyProfile& profile,
                         const SystemState& s, Visit&& visit) {
  // Arrivals: one transition per admitted-group outcome.
  for (int k = 1; k <= params.max_group_size(); ++k) {
    const double p = params.group_dist[static_cast<std::size_t>(k - 1)];
    if (p <= 0.0) continue;
    const int admitted = admit_count(s, k, params.rooms);
    if (admitted == 0) continue;
    SystemState pre = s;
    pre.unassigned += admitted;
    visit(pre, params.arrival_rate * p);
  }
  // Completions: rate mu per active physician.
  for (std::size_t i = 0; i < s.caseloads.size(); ++i) {
    if (s.caseloads[i] < 1) continue;
    SystemState pre = s;
    pre.caseloads[i] -= 1;
    visit(pre, params.service_rate);
  }
  (void)profile;
}

// Q in working precision with the diagonal recomputed from the off-diagonal
// entries, so rows sum to zero exactly in Real rather than in double.
template <class Real>
Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic> rates_as(const Generator& g) {
  const auto n = static_cast<Eigen::Index>(g.size());
  Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic> q(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Real total(0);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      q(i, j) = static_cast<Real>(g.rates(i, j));
      total += q(i, j);
    }
    q(i, i) = -total;
  }
  return q;
}

}  // namespace detail

inline Generator build_generator(const SystemParams& params, const StrategyProfile& profile,
                                 const GeneratorOptions& options = {}) {
  require_valid(params);
  validate_profile(profile, params.physicians);

  std::map<SystemState, std::size_t> index;
  std::vector<SystemState> order;
  std::vector<std::map<std::size_t, double>> out_rates;
  std::deque<std::size_t> frontier;

  auto intern = [&](const SystemState& s) {
    auto [it, inserted] = index.emplace(s, order.size());
    if (inserted) {
      if (order.size() >= options.max_states) {
        throw Error("reachable state count exceeds bound of " +
                    std::to_string(options.max_states));
      }
      order.push_back(s);
      out_rates.emplace_back();
      frontier.push_back(it->second);
    }
    return it->second;
  };

  intern(empty_state(params.physicians));
  while (!frontier.empty()) {
    const std::size_t from = frontier.front();
    frontier.pop_front();
    const SystemState s = order[from];
    detail::for_each_transition(params, profile, s, [&](const SystemState& pre, double rate) {
      const SystemState dest = apply_assignment_cascade(pre, profile);
      const std::size_t to = intern(dest);
      if (to != from) out_rates[from][to] += rate;
      if (options.include_alternatives) {
        for (const auto& alt : cascade_outcomes(pre, profile)) intern(alt);
      }
    });
  }

  // Re-index in display order.
  std::vector<std::size_t> perm(order.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
    return DisplayOrder{}(order[a], order[b]);
  });
  std::vector<std::size_t> position(order.size());
  for (std::size_t i = 0; i < perm.size(); ++i) position[perm[i]] = i;

  Generator g;
  g.params = params;
  g.states.reserve(order.size());
  for (std::size_t i : perm) g.states.push_back(order[i]);
  const auto n = static_cast<Eigen::Index>(order.size());
  g.rates = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t from = 0; from < order.size(); ++from) {
    const auto r = static_cast<Eigen::Index>(position[from]);
    double total = 0.0;
    for (const auto& [to, rate] : out_rates[from]) {
      g.rates(r, static_cast<Eigen::Index>(position[to])) += rate;
      total += rate;
    }
    g.rates(r, r) = -total;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Structure

// Strongly connected components of the transition graph (Tarjan).
inline std::vector<int> communicating_classes(const Generator& g, int* count = nullptr) {
  const int n = static_cast<int>(g.size());
  std::vector<int> comp(static_cast<std::size_t>(n), -1), low(static_cast<std::size_t>(n)),
      disc(static_cast<std::size_t>(n), -1);
  std::vector<int> stack;
  std::vector<bool> on_stack(static_cast<std::size_t>(n), false);
  int time = 0, classes = 0;
  std::function<void(int)> visit = [&](int v) {
    disc[v] = low[v] = time++;
    stack.push_back(v);
    on_stack[v] = true;
    for (int w = 0; w < n; ++w) {
      if (w == v || g.rates(v, w) <= 0.0) continue;
      if (disc[w] < 0) {
        visit(w);
        low[v] = std::min(low[v], low[w]);
      } else if (on_stack[w]) {
        low[v] = std::min(low[v], disc[w]);
      }
    }
    if (low[v] == disc[v]) {
      int w;
      do {
        w = stack.back();
        stack.pop_back();
        on_stack[w] = false;
        comp[w] = classes;
      } while (w != v);
      ++classes;
    }
  };
  for (int v = 0; v < n; ++v) {
    if (disc[v] < 0) visit(v);
  }
  if (count) *count = classes;
  return comp;
}

// Number of closed (recurrent) communicating classes.
inline int closed_class_count(const Generator& g) {
  int classes = 0;
  const auto comp = communicating_classes(g, &classes);
  std::vector<bool> leaks(static_cast<std::size_t>(classes), false);
  const auto n = static_cast<Eigen::Index>(g.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i != j && g.rates(i, j) > 0.0 && comp[i] != comp[j]) leaks[comp[i]] = true;
    }
  }
  return static_cast<int>(std::count(leaks.begin(), leaks.end(), false));
}

inline bool is_irreducible(const Generator& g) {
  int classes = 0;
  communicating_classes(g, &classes);
  return classes == 1;
}

// A single recurrent class (possibly with transient states) is what the
// stationary and Poisson solves need.
inline bool is_unichain(const Generator& g) { return closed_class_count(g) == 1; }

inline void require_unichain(const Generator& g) {
  if (!is_unichain(g)) {
    throw Error("generator has " + std::to_string(closed_class_count(g)) +
                " recurrent classes; stationary quantities are not unique");
  }
}

// ---------------------------------------------------------------------------
// Distributions

struct StateDistribution {
  std::vector<SystemState> states;
  std::vector<double> probabilities;

  double probability(const SystemState& s) const {
    for (std::size_t i = 0; i < states.size(); ++i) {
      if (states[i] == s) return probabilities[i];
    }
    throw Error("state " + s.to_string() + " not in distribution");
  }

  double expectation(const std::vector<double>& f) const {
    double e = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) e += probabilities[i] * f[i];
    return e;
  }
};

using SteadyState = StateDistribution;

template <class Real = double>
StateDistribution steady_state(const Generator& g) {
  require_unichain(g);
  using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Real, Eigen::Dynamic, 1>;
  const auto n = static_cast<Eigen::Index>(g.size());
  Mat a = detail::rates_as<Real>(g).transpose();
  a.row(n - 1).setOnes();
  Vec b = Vec::Zero(n);
  b(n - 1) = Real(1);
  Eigen::FullPivLU<Mat> lu(a);
  if (!lu.isInvertible()) throw Error("stationary system is singular");
  Vec pi = lu.solve(b);
  StateDistribution out{g.states, std::vector<double>(g.size())};
  for (Eigen::Index i = 0; i < n; ++i) {
    // Clamp round-off negatives on transient states.
    out.probabilities[static_cast<std::size_t>(i)] =
        std::max(0.0, static_cast<double>(pi(i)));
  }
  return out;
}

// ||pi Q||_inf
inline double balance_residual(const Generator& g, const StateDistribution& d) {
  Eigen::RowVectorXd pi(static_cast<Eigen::Index>(d.probabilities.size()));
  for (std::size_t i = 0; i < d.probabilities.size(); ++i) {
    pi(static_cast<Eigen::Index>(i)) = d.probabilities[i];
  }
  return (pi * g.rates).cwiseAbs().maxCoeff();
}

// ---------------------------------------------------------------------------
// Poisson equations: g = rho(s) + sum_s' Q(s,s') h(s'), h(reference) = 0.

template <class Real = double>
struct BasicPoissonSolution {
  std::vector<SystemState> states;
  Real gain{};
  std::vector<Real> relative_values;
  SystemState reference;

  Real h(const SystemState& s) const {
    for (std::size_t i = 0; i < states.size(); ++i) {
      if (states[i] == s) return relative_values[i];
    }
    throw Error("state " + s.to_string() + " not in Poisson solution");
  }

  // h(a) - h(b) evaluated in working precision.
  Real difference(const SystemState& a, const SystemState& b) const { return h(a) - h(b); }
};

using PoissonSolution = BasicPoissonSolution<double>;

inline std::vector<double> reward_vector(const Generator& g, const RewardSpec& reward) {
  validate_reward(reward, g.params.physicians);
  std::vector<double> r(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) r[i] = reward.rate(g.states[i], g.params.service_rate);
  return r;
}

template <class Real = double>
BasicPoissonSolution<Real> solve_poisson(const Generator& g, const std::vector<double>& reward,
                                         const SystemState& reference) {
  require_unichain(g);
  if (reward.size() != g.size()) throw Error("reward vector size mismatch");
  using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Real, Eigen::Dynamic, 1>;
  const auto n = static_cast<Eigen::Index>(g.size());
  const auto ref = static_cast<Eigen::Index>(g.index_of(reference));

  // Unknowns x = (g, h_0..h_{n-1}).
  const Mat q = detail::rates_as<Real>(g);
  Mat a = Mat::Zero(n + 1, n + 1);
  Vec b = Vec::Zero(n + 1);
  for (Eigen::Index s = 0; s < n; ++s) {
    a(s, 0) = Real(1);
    for (Eigen::Index t = 0; t < n; ++t) a(s, 1 + t) = -q(s, t);
    b(s) = static_cast<Real>(reward[static_cast<std::size_t>(s)]);
  }
  a(n, 1 + ref) = Real(1);
  Eigen::FullPivLU<Mat> lu(a);
  if (!lu.isInvertible()) throw Error("Poisson system is singular");
  Vec x = lu.solve(b);

  BasicPoissonSolution<Real> out;
  out.states = g.states;
  out.gain = x(0);
  out.relative_values.resize(g.size());
  for (Eigen::Index i = 0; i < n; ++i) out.relative_values[static_cast<std::size_t>(i)] = x(1 + i);
  out.relative_values[static_cast<std::size_t>(ref)] = Real(0);
  out.reference = reference;
  return out;
}

template <class Real = double>
BasicPoissonSolution<Real> solve_poisson(const Generator& g, const RewardSpec& reward,
                                         const SystemState& reference) {
  return solve_poisson<Real>(g, reward_vector(g, reward), reference);
}

template <class Real = double>
BasicPoissonSolution<Real> solve_poisson(const Generator& g, const RewardSpec& reward) {
  return solve_poisson<Real>(g, reward, empty_state(g.params.physicians));
}

// max_s |g - rho(s) - sum_s' Q(s,s') h(s')|
template <class Real>
double poisson_residual(const Generator& g, const std::vector<double>& reward,
                        const BasicPoissonSolution<Real>& sol) {
  double worst = 0.0;
  for (std::size_t s = 0; s < g.size(); ++s) {
    Real acc = sol.gain - static_cast<Real>(reward[s]);
    for (std::size_t t = 0; t < g.size(); ++t) {
      acc -= static_cast<Real>(g.rates(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t))) *
             sol.relative_values[t];
    }
    using std::abs;
    worst = std::max(worst, static_cast<double>(abs(acc)));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Transient analysis by uniformization

struct UniformizationOptions {
  double tol = 1e-12;          // Poisson tail mass left out
  double rate_factor = 1.05;   // uniformization rate over max |Q(s,s)|
};

inline StateDistribution transient_distribution(const Generator& g, const SystemState& start,
                                                double horizon,
                                                const UniformizationOptions& opt = {}) {
  if (!(horizon >= 0.0)) throw Error("horizon must be nonnegative");
  if (!(opt.tol > 0.0)) throw Error("tolerance must be positive");
  const auto n = static_cast<Eigen::Index>(g.size());
  Eigen::RowVectorXd p = Eigen::RowVectorXd::Zero(n);
  p(static_cast<Eigen::Index>(g.index_of(start))) = 1.0;
  StateDistribution out{g.states, std::vector<double>(g.size(), 0.0)};
  const double qmax = g.rates.diagonal().cwiseAbs().maxCoeff();
  if (horizon == 0.0 || qmax == 0.0) {
    for (Eigen::Index i = 0; i < n; ++i) out.probabilities[static_cast<std::size_t>(i)] = p(i);
    return out;
  }
  const double rate = qmax * opt.rate_factor;
  const Eigen::MatrixXd step = Eigen::MatrixXd::Identity(n, n) + g.rates / rate;
  const double lt = rate * horizon;

  // Poisson(k; lt) weights in log space so large lt neither under- nor
  // overflows; stop once the accumulated mass is within tol of one past the mode.
  Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(n);
  double mass = 0.0;
  const double log_lt = std::log(lt);
  for (long k = 0;; ++k) {
    const double w = std::exp(static_cast<double>(k) * log_lt - lt - std::lgamma(k + 1.0));
    acc += w * p;
    mass += w;
    if (static_cast<double>(k) > lt && 1.0 - mass < opt.tol) break;
    if (k > 10 + static_cast<long>(lt + 50.0 * std::sqrt(lt) + 50.0)) break;
    p = p * step;
  }
  for (Eigen::Index i = 0; i < n; ++i) out.probabilities[static_cast<std::size_t>(i)] = acc(i);
  return out;
}

// E[ integral_0^T rho(X_t) dt | X_0 = start ] = gT + h(start) - E[h(X_T)].
inline double expected_cumulative_reward(const Generator& g, const std::vector<double>& reward,
                                         const SystemState& start, double horizon,
                                         const UniformizationOptions& opt = {}) {
  if (horizon == 0.0) return 0.0;
  const auto sol = solve_poisson<double>(g, reward, empty_state(g.params.physicians));
  const auto dist = transient_distribution(g, start, horizon, opt);
  return sol.gain * horizon + sol.h(start) - dist.expectation(sol.relative_values);
}

inline double expected_cumulative_reward(const Generator& g, const RewardSpec& reward,
                                         const SystemState& start, double horizon,
                                         const UniformizationOptions& opt = {}) {
  return expected_cumulative_reward(g, reward_vector(g, reward), start, horizon, opt);
}

// ---------------------------------------------------------------------------
// System metrics

struct MetricsReport {
  double system_throughput = 0.0;           // Lambda
  std::vector<double> individual_throughput;
  double mean_occupancy = 0.0;              // E[N]
  double mean_sojourn = 0.0;                // E[W] per admitted patient
  double blocking_rate = 0.0;
};

inline MetricsReport metrics(const Generator& g, const StateDistribution& pi) {
  MetricsReport m;
  const double mu = g.params.service_rate;
  m.individual_throughput.assign(static_cast<std::size_t>(g.params.physicians), 0.0);
  for (std::size_t s = 0; s < g.size(); ++s) {
    const auto& st = g.states[s];
    const double p = pi.probabilities[s];
    m.system_throughput += p * mu * st.active();
    m.mean_occupancy += p * st.occupancy();
    for (std::size_t i = 0; i < st.caseloads.size(); ++i) {
      if (st.caseloads[i] >= 1) m.individual_throughput[i] += p * mu;
    }
  }
  m.mean_sojourn = m.mean_occupancy / m.system_throughput;
  m.blocking_rate = 1.0 - m.system_throughput / g.params.offered_load();
  return m;
}

inline MetricsReport metrics(const SystemParams& params, const StrategyProfile& profile) {
  const auto g = build_generator(params, profile);
  return metrics(g, steady_state(g));
}

// ---------------------------------------------------------------------------
// Closed-form relative-value differences for the experimental chain and the
// check that the numeric Poisson solutions reproduce them.

struct DeltaValues {
  double d1_batch = 0.0;     // h_B(0,2,1) - h_B(1,1,1)
  double d2_batch = 0.0;     // h_B(1,2,1) - h_B(2,1,1)
  double d1_no_batch = 0.0;  // h_NB(0,2,1) - h_NB(1,1,1)
  double d2_no_batch = 0.0;  // h_NB(1,2,1) - h_NB(2,1,1)
};

struct DeltaReport {
  DeltaValues closed_form;
  DeltaValues numeric;
  DeltaValues abs_diff;
};

inline DeltaValues closed_form_deltas(double lambda, double mu) {
  const double l = lambda, m = mu;
  const double l2 = l * l, l3 = l2 * l, l4 = l3 * l, l5 = l4 * l;
  const double m2 = m * m, m3 = m2 * m, m4 = m3 * m, m5 = m4 * m;
  const double common = l4 + 7 * l3 * m + 18 * l2 * m2 + 18 * l * m3 + 8 * m4;
  const double den_b = (l + m) * (l + m) *
                       (l5 + 9 * l4 * m + 32 * l3 * m2 + 53 * l2 * m3 + 42 * l * m4 + 16 * m5);
  const double den_nb = (l + 2 * m) * (l + 2 * m) *
                        (l5 + 8 * l4 * m + 25 * l3 * m2 + 34 * l2 * m3 + 24 * l * m4 + 8 * m5);
  DeltaValues d;
  d.d1_batch = m3 * common / den_b;
  d.d2_batch = 0.0;
  d.d1_no_batch = 2 * m3 * common / den_nb;
  d.d2_no_batch = m3 * common / den_nb;
  return d;
}

// Decision-relevant differences from numeric Poisson solutions of the two
// pure experimental policies under personal-throughput reward.
inline DeltaValues numeric_deltas(double lambda, double mu) {
  const auto params = experimental_params(lambda, mu);
  const auto s021 = make_state(0, {2, 1}), s111 = make_state(1, {1, 1});
  const auto s121 = make_state(1, {2, 1}), s211 = make_state(2, {1, 1});
  DeltaValues d;
  {
    const auto g = build_generator(params, experimental_profile(Strategy::batch));
    const auto sol = solve_poisson<Quad>(g, RewardSpec::personal(0));
    d.d1_batch = static_cast<double>(sol.difference(s021, s111));
    d.d2_batch = static_cast<double>(sol.difference(s121, s211));
  }
  {
    const auto g = build_generator(params, experimental_profile(Strategy::no_batch));
    const auto sol = solve_poisson<Quad>(g, RewardSpec::personal(0));
    d.d1_no_batch = static_cast<double>(sol.difference(s021, s111));
    d.d2_no_batch = static_cast<double>(sol.difference(s121, s211));
  }
  return d;
}

struct DeltaCheckReport {
  bool pass = true;
  double lambda = 0.0, mu = 0.0, tol = 0.0;
  DeltaReport deltas;
  double gain_batch = 0.0, gain_no_batch = 0.0;
  std::vector<std::string> failures;
};

inline DeltaCheckReport verify_batching_deltas(double lambda, double mu, double tol) {
  if (!(lambda > 0.0) || !(mu > 0.0)) throw Error("lambda and mu must be positive");
  DeltaCheckReport r;
  r.lambda = lambda;
  r.mu = mu;
  r.tol = tol;
  r.deltas.closed_form = closed_form_deltas(lambda, mu);
  r.deltas.numeric = numeric_deltas(lambda, mu);
  const auto& c = r.deltas.closed_form;
  const auto& n = r.deltas.numeric;
  r.deltas.abs_diff = {std::abs(c.d1_batch - n.d1_batch), std::abs(c.d2_batch - n.d2_batch),
                       std::abs(c.d1_no_batch - n.d1_no_batch),
                       std::abs(c.d2_no_batch - n.d2_no_batch)};
  auto fail = [&r](std::string what) {
    r.pass = false;
    r.failures.push_back(std::move(what));
  };
  auto compare = [&](const char* name, double diff) {
    if (!(diff <= tol)) {
      std::ostringstream os;
      os << name << ": |numeric - closed form| = " << diff << " > " << tol;
      fail(os.str());
    }
  };
  compare("delta1_B", r.deltas.abs_diff.d1_batch);
  compare("delta2_B", r.deltas.abs_diff.d2_batch);
  compare("delta1_NB", r.deltas.abs_diff.d1_no_batch);
  compare("delta2_NB", r.deltas.abs_diff.d2_no_batch);
  if (!(n.d1_batch > 0.0)) fail("delta1_B must be positive");
  if (!(n.d1_no_batch > 0.0)) fail("delta1_NB must be positive");
  if (!(n.d2_no_batch > 0.0)) fail("delta2_NB must be positive");
  if (!(std::abs(n.d2_batch) <= tol)) fail("delta2_B must vanish");

  const auto params = experimental_params(lambda, mu);
  const auto gb = build_generator(params, experimental_profile(Strategy::batch));
  const auto gnb = build_generator(params, experimental_profile(Strategy::no_batch));
  r.gain_batch = static_cast<double>(solve_poisson<Quad>(gb, RewardSpec::personal(0)).gain);
  r.gain_no_batch =
      static_cast<double>(solve_poisson<Quad>(gnb, RewardSpec::personal(0)).gain);
  if (!(r.gain_batch > r.gain_no_batch)) fail("personal gain under batching must exceed no-batch");
  return r;
}

}  // namespace qlab

namespace qlab {

// n (lambda, mu) pairs on a log scale: lambda rises from 10^-2.5 to 10^-0.5
// while mu falls over the same range, so load spans four decades.
inline std::vector<std::pair<double, double>> log_spaced_pairs(int n) {
  std::vector<std::pair<double, double>> out;
  for (int i = 0; i < n; ++i) {
    const double x = n > 1 ? static_cast<double>(i) / (n - 1) : 0.0;
    out.emplace_back(std::pow(10.0, -2.5 + 2.0 * x), std::pow(10.0, -0.5 - 2.0 * x));
  }
  return out;
}

// n x n product grid over the same range.
inline std::vector<std::pair<double, double>> log_spaced_grid(int n) {
  std::vector<std::pair<double, double>> out;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double x = n > 1 ? static_cast<double>(i) / (n - 1) : 0.0;
      const double y = n > 1 ? static_cast<double>(j) / (n - 1) : 0.0;
      out.emplace_back(std::pow(10.0, -2.5 + 2.0 * x), std::pow(10.0, -2.5 + 2.0 * y));
    }
  }
  return out;
}

// Every genuine decision point (more than one admissible claim) in the
// closure of states reachable under any admissible claims. Used to
// enumerate the finite family of stationary deterministic profiles.
inline std::vector<DecisionPoint> decision_points(const SystemParams& params,
                                                  const StrategyProfile& profile) {
  const auto g = build_generator(params, profile);
  std::set<DecisionPoint> out;
  for (const auto& s : g.states) {
    detail::for_each_transition(params, profile, s, [&](const SystemState& pre, double) {
      for (auto& d : cascade_decision_points(pre, profile)) out.insert(std::move(d));
    });
  }
  return {out.begin(), out.end()};
}

}  // namespace qlab
