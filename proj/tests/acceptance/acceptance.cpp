// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bandit.hpp"
#include "clearing_fixtures.hpp"
#include "fcas/clearing.hpp"
#include "fcas/experiment.hpp"
#include "micro_mdp.hpp"

using namespace fcas;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = true;
  std::string detail;
};

bool rel_close(double a, double b, double rel) { return std::abs(a - b) <= rel * std::max(std::abs(b), 1e-300); }

// 1. Merit order against the exhaustive oracle.
Verdict clearing_oracle() {
  const auto t0 = Clock::now();
  MarketRules rules;
  std::mt19937_64 rng(1001);
  int loose_n = 0, loose_bad = 0, coupled_n = 0, coupled_bad = 0;
  double worst_price = 0.0, worst_cap = 0.0, worst_ratio = 1.0;
  for (int i = 0; i < 1200; ++i) {
    const auto inst = testing::random_instance(rng, true);
    const auto r = clear_joint(inst.books, inst.snapshot, {}, rules);
    const auto o = oracle_clear_exact(inst.books, inst.snapshot, {}, rules);
    bool ok = true;
    for (MarketId m : kMarkets) {
      const double dp = std::abs(r.markets[m].clearing_price - o.markets[m].clearing_price);
      worst_price = std::max(worst_price, dp);
      ok &= dp <= 1e-9;
      for (const auto& b : inst.books) {
        const double dc = std::abs(r.enabled(m, b.bidder_id) - o.enabled(m, b.bidder_id));
        worst_cap = std::max(worst_cap, dc);
        ok &= dc <= 1e-9;
      }
    }
    ++loose_n;
    loose_bad += !ok;
  }
  for (int i = 0; i < 1200; ++i) {
    const auto inst = testing::random_instance(rng, false);
    const auto r = clear_joint(inst.books, inst.snapshot, {}, rules);
    const auto o = oracle_clear_exact(inst.books, inst.snapshot, {}, rules);
    const double cr = r.total_cost(inst.snapshot.demand), co = o.total_cost(inst.snapshot.demand);
    const bool ok = cr <= 1.05 * co + 1e-9;
    if (co > 0) worst_ratio = std::max(worst_ratio, cr / co);
    ++coupled_n;
    coupled_bad += !ok;
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << loose_n << " uncoupled instances, " << loose_bad << " mismatches (max |dp| " << worst_price << ", max |dc| "
    << worst_cap << "); " << coupled_n << " coupled, " << coupled_bad << " over 5% (worst ratio " << worst_ratio
    << "); " << secs << " s";
  return {loose_bad == 0 && coupled_bad == 0 && secs < 60.0, d.str()};
}

// 2. BESS offer of 10, 30, 50 MW in one market at a time.
Verdict price_maker_sweep() {
  MarketRules rules;
  EnvConfig env;
  const std::vector<double> caps = {10, 30, 50};
  int bad_seeds = 0;
  long sweeps = 0;
  double strict = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    SynthConfig sc;
    sc.intervals = kEpisodeLength;
    const auto h = synth_generate(sc, rules, seed);
    const auto scenario = make_scenario(h, 0, rules);
    bool ok = true;
    for (std::size_t t = 0; t < scenario.size(); ++t) {
      const auto rows = price_sweep(scenario.intervals[t], scenario.supply[t], env, caps, kMarkets);
      for (std::size_t g = 0; g < rows.size(); g += caps.size()) {
        ++sweeps;
        for (MarketId m : kMarkets) {
          for (std::size_t i = 1; i < caps.size(); ++i) ok &= rows[g + i].price[m] <= rows[g + i - 1].price[m];
        }
        const MarketId bid = rows[g].bid_market;
        strict += rows[g + 2].price[bid] < rows[g].price[bid];
      }
    }
    bad_seeds += !ok;
  }
  std::ostringstream d;
  d << "20 seeds x 288 intervals x 4 markets; seeds with a price increase: " << bad_seeds
    << "; own-market price strictly lower at 50 than 10 MW in " << strict << "/" << sweeps << " sweeps";
  return {bad_seeds == 0, d.str()};
}

// 3. Recorded price -> supply variation -> re-clear.
Verdict supply_round_trip() {
  MarketRules rules;
  SynthConfig sc;
  sc.intervals = 1000;
  const auto h = synth_generate(sc, rules, 33);
  int bad = 0;
  double worst = 0.0;
  for (const auto& rec : h.intervals) {
    const auto cp = *rec.snapshot.observed_clearing_price;
    auto s = estimate_supply_variation(rec.rivals, cp, rec.snapshot.demand, rules);
    const auto first = clear_joint(rec.rivals, rec.snapshot, s, rules);
    s = estimate_supply_variation(rec.rivals, first.prices(), rec.snapshot.demand, rules);
    const auto second = clear_joint(rec.rivals, rec.snapshot, s, rules);
    bool ok = true;
    for (MarketId m : kMarkets) {
      const double e = std::max(std::abs(first.markets[m].clearing_price - cp[m]),
                                std::abs(second.markets[m].clearing_price - cp[m]));
      worst = std::max(worst, e);
      ok &= e <= 1e-9;
    }
    bad += !ok;
  }
  std::ostringstream d;
  d << h.size() << " cycles, " << bad << " mismatches, max |dp| " << worst;
  return {bad == 0, d.str()};
}

// 4. alpha = C / (2 N (SoC_max - SoC_min)); N full cycles cost C.
Verdict degradation() {
  BessParams p;
  const double alpha = degradation_coefficient(p);
  const double expected = 12500.0 / 3.0;
  const bool alpha_ok = rel_close(alpha, expected, 1e-12);
  const auto n = static_cast<long>(p.max_cycles);
  ShapingConfig off;
  off.enabled = false;

  // Through soc_step: charge from SoC_min to SoC_max and back at full power
  // with nothing enabled, then price the SoC path.
  double total = 0.0;
  BessState s;
  s.soc = p.soc_min;
  FrSignal idle;
  ActionVector charge, discharge;
  charge.charge = p.max_charge;
  discharge.discharge = p.max_discharge;
  std::vector<double> path;
  for (int dir = 0; dir < 2; ++dir) {
    for (int step = 0; step < 10000; ++step) {
      const bool up = dir == 0;
      if (up ? s.soc >= p.soc_max : s.soc <= p.soc_min) break;
      const BessState next = soc_step(s, up ? charge : discharge, idle, PerMarket<double>{}, p);
      path.push_back(std::abs(next.soc - s.soc));
      s = next;
    }
  }
  double one_cycle = 0.0;
  for (double dsoc : path) one_cycle += alpha * dsoc;
  for (long i = 0; i < n; ++i) total += one_cycle;
  BessState lo, hi;
  lo.soc = p.soc_min;
  hi.soc = p.soc_max;
  double via_reward = 0.0;
  for (long i = 0; i < n; ++i) {
    via_reward -= reward(lo, hi, ClearingResult{}, "b", 0, alpha, p, off, false).degradation;
    via_reward -= reward(hi, lo, ClearingResult{}, "b", 0, alpha, p, off, false).degradation;
  }
  const bool cycle_ok = rel_close(via_reward, p.cell_cost_total, 1e-9) && rel_close(total, p.cell_cost_total, 1e-9);
  std::ostringstream d;
  d.precision(15);
  d << "alpha " << alpha << " (expected " << expected << "); " << n << " cycles cost " << via_reward
    << " by reward, " << total << " by SoC path (C = " << p.cell_cost_total << ")";
  return {alpha_ok && cycle_ok, d.str()};
}

// 5. Random raw actions through the environment; executed actions and SoC
// checked independently of is_feasible.
Verdict clipping_safety() {
  MarketRules rules;
  SynthConfig sc;
  sc.intervals = kEpisodeLength * 3;
  const auto h = synth_generate(sc, rules, 5);
  std::vector<Scenario> days;
  for (std::size_t start : feasible_windows(h)) days.push_back(make_scenario(h, start, rules));
  EnvConfig cfg;
  const BessParams& p = cfg.params;
  BessEnv env(cfg, std::make_shared<const std::vector<Scenario>>(std::move(days)), FeatureScaler::fit(h, p));
  std::mt19937_64 rng(55);
  std::normal_distribution<double> raw(0.0, 2.0);
  const long n = 100000;
  long steps = 0, violations = 0, at_min = 0, at_max = 0;
  const double tol = 1e-9;
  for (std::uint64_t ep = 0; steps < n; ++ep) {
    env.reset(ep);
    while (!env.done() && steps < n) {
      const double soc = env.state().soc;
      Eigen::VectorXd a(env.action_dim());
      for (Eigen::Index i = 0; i < a.size(); ++i) a[i] = raw(rng);
      env.step(a);
      ++steps;
      const auto& o = env.outcomes().back();
      const ActionVector& c = o.action;
      bool ok = c.charge >= 0 && c.discharge >= 0 && c.charge <= p.max_charge && c.discharge <= p.max_discharge;
      ok &= c.charge == 0.0 || c.discharge == 0.0;
      for (MarketId m : kMarkets) {
        ok &= c.bands[m][0] >= 0.0;
        for (std::size_t k = 1; k < kBands; ++k) ok &= c.bands[m][k] >= c.bands[m][k - 1];
        ok &= o.clearing.enabled(m, cfg.bidder_id) <= c.bands[m][kBands - 1] + tol;
      }
      ok &= c.bands[MarketId::RegulationLower][kBands - 1] + c.bands[MarketId::ContingencyLower][kBands - 1] +
                c.charge <= p.max_charge + tol;
      ok &= c.bands[MarketId::RegulationRaise][kBands - 1] + c.bands[MarketId::ContingencyRaise][kBands - 1] +
                c.discharge <= p.max_discharge + tol;
      if (soc >= p.soc_max) {
        ++at_max;
        ok &= c.charge == 0.0 && c.bands[MarketId::RegulationLower][kBands - 1] == 0.0 &&
              c.bands[MarketId::ContingencyLower][kBands - 1] == 0.0;
      }
      if (soc <= p.soc_min) {
        ++at_min;
        ok &= c.discharge == 0.0 && c.bands[MarketId::RegulationRaise][kBands - 1] == 0.0 &&
              c.bands[MarketId::ContingencyRaise][kBands - 1] == 0.0;
      }
      ok &= env.state().soc >= p.soc_min - tol && env.state().soc <= p.soc_max + tol;
      violations += !ok;
    }
  }
  std::ostringstream d;
  d << steps << " fuzzed steps (" << at_min << " at SoC_min, " << at_max << " at SoC_max), " << violations
    << " violations";
  return {violations == 0, d.str()};
}

// 6. Shaped and unshaped value iteration pick the same actions.
Verdict pbrs_invariance() {
  ShapingConfig shaping;
  testing::MicroMdp mdp(shaping);
  const auto plain = mdp.greedy_policy(false);
  const auto shaped = mdp.greedy_policy(true);
  std::ostringstream d;
  d << plain.size() << " reachable states, " << mdp.actions.size() << " actions, policies "
    << (plain == shaped ? "identical" : "differ");
  return {!plain.empty() && plain == shaped, d.str()};
}

double rel_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / scale;
}

template <class F>
Eigen::VectorXd central_difference(Eigen::VectorXd x, F f, double h = 1e-6) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f(x);
    x[i] = orig - h;
    const double down = f(x);
    x[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// 7. Analytic loss gradients against central differences.
Verdict gradient_checks() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  int checks = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed);
    GaussianPolicy policy(3, 2, 2, 5, -0.3);
    policy.mean_net().init(rng, 1.0);
    Mlp value(3, {5, 4}, 1);
    value.init(rng, 1.0);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> jitter(-0.1, 0.1);
    const int n = 9;
    Minibatch b;
    b.states.resize(3, n);
    b.actions.resize(2, n);
    b.old_log_probs.resize(n);
    b.advantages.resize(n);
    b.cvar_weights.resize(n);
    b.value_targets.resize(n);
    for (int i = 0; i < n; ++i) {
      b.states.col(i) << g(rng), g(rng), g(rng);
      const auto s = policy.sample(Eigen::VectorXd(b.states.col(i)), rng);
      b.actions.col(i) = s.action;
      b.old_log_probs[i] = s.log_prob + jitter(rng);
      b.advantages[i] = g(rng);
      b.cvar_weights[i] = i % 3 == 0 ? 0.0 : std::abs(g(rng));
      b.value_targets[i] = g(rng);
    }
    const LossCoefficients cases[] = {
        {0.2, 0.0, 0.0, true, false}, {0.2, 0.05, 0.0, false, false}, {0.2, 0.0, 2.0, false, false},
        {0.2, 0.0, 2.0, false, true}, {0.2, 0.01, 1.5, true, false},  {0.2, 0.01, 1.5, true, true},
    };
    for (const auto& c : cases) {
      Eigen::VectorXd grad;
      policy_loss(policy, b, c, &grad);
      auto f = [&](const Eigen::VectorXd& p) {
        GaussianPolicy q = policy;
        q.set_parameters(p);
        return policy_loss(q, b, c, nullptr).total();
      };
      worst = std::max(worst, rel_error(grad, central_difference(policy.parameters(), f)));
      ++checks;
    }
    Eigen::VectorXd gv;
    value_loss(value, b, &gv);
    auto fv = [&](const Eigen::VectorXd& p) {
      Mlp q = value;
      q.set_parameters(p);
      return value_loss(q, b, nullptr);
    };
    worst = std::max(worst, rel_error(gv, central_difference(value.parameters(), fv)));
    ++checks;
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << checks << " gradient checks, max rel error " << worst << ", " << secs << " s";
  return {worst < 1e-4 && secs < 10.0, d.str()};
}

// 8. CVaR of losses.
Verdict cvar_results() {
  std::vector<double> l(10);
  std::iota(l.begin(), l.end(), 1.0);
  const double c09 = cvar(l, 0.9).cvar;
  const double c0 = cvar(l, 1e-12).cvar;
  bool ok = rel_close(c09, 10.0, 1e-12) && rel_close(c0, 5.5, 1e-9);
  std::mt19937_64 rng(88);
  std::normal_distribution<double> g(3.0, 7.0);
  std::uniform_real_distribution<double> k(0.05, 30.0);
  int bad = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x(3 + trial % 50);
    for (double& v : x) v = g(rng);
    const double shift = g(rng), scale = k(rng);
    for (double alpha : {0.5, 0.9, 0.95}) {
      std::vector<double> xs = x, xk = x;
      for (double& v : xs) v += shift;
      for (double& v : xk) v *= scale;
      const double base = cvar(x, alpha).cvar;
      const double tol = 1e-9 * (1.0 + std::abs(base) + std::abs(shift));
      bad += std::abs(cvar(xs, alpha).cvar - (base + shift)) > tol;
      bad += std::abs(cvar(xk, alpha).cvar - scale * base) > 1e-9 * (1.0 + std::abs(scale * base));
    }
  }
  ok &= bad == 0;
  std::ostringstream d;
  d.precision(15);
  d << "CVaR_0.9{1..10} = " << c09 << ", CVaR_(alpha->0) = " << c0 << ", equivariance failures " << bad << "/600";
  return {ok, d.str()};
}

double p_safe(const GaussianPolicy& policy) {
  double p = 0.0;
  for (double s : {-1.0, 1.0}) {
    const auto o = policy.forward(Eigen::VectorXd::Constant(1, s));
    p += 0.5 * 0.5 * std::erfc(o.mean[0] / (o.std[0] * std::sqrt(2.0)));
  }
  return p;
}

// 9. Equal-mean bandit: CVaR picks the low-variance arm, plain PPO does not.
Verdict bandit() {
  const auto t0 = Clock::now();
  int cvar_safe = 0, plain_safe = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    for (bool constrained : {true, false}) {
      TrainingConfig c;
      c.batch_size = 256;
      c.minibatch_size = 64;
      c.epochs = 4;
      c.hidden_layers = 1;
      c.hidden_width = 8;
      c.iterations = 100;
      c.discount = 0.0;
      c.reward_tolerance = 0.0;
      c.cvar_enabled = constrained;
      c.seed = seed;
      Trainer tr(c, 1, 1);
      testing::TwoArmBandit env;
      tr.train(env);
      const bool safe = p_safe(tr.policy()) > 0.9;
      (constrained ? cvar_safe : plain_safe) += safe;
    }
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << "P(safe) > 0.9: CVaR " << cvar_safe << "/20, lambda=0 " << plain_safe << "/20; " << secs << " s";
  return {cvar_safe >= 18 && plain_safe <= 12 && secs < 600.0, d.str()};
}

// Shared by 10 to 12: a 30-day synthetic market per seed, CVaR and lambda=0
// policies trained on the first 25 days.
struct SeedRun {
  RunConfig config;
  MarketData data;
  GaussianPolicy cvar_policy, plain_policy;
  double baseline = 0.0, cvar_profit = 0.0, plain_profit = 0.0;
  double cvar_iqr = 0.0, plain_iqr = 0.0;
};

RunConfig experiment_config(std::uint64_t seed) {
  RunConfig c;
  c.seed = seed;
  c.env.forecast_noise = 0.1;
  auto& t = c.training;
  t.seed = seed;
  t.hidden_width = 64;
  t.iterations = 30;
  t.reward_scale = 1e-5;
  t.calibrate_beta = true;
  t.calibrate_mu = true;
  t.initial_log_std = -1.5;
  t.lambda_lr = 0.1;
  return c;
}

std::vector<TraceRow> joined(const std::vector<EpisodeResult>& results) {
  std::vector<TraceRow> all;
  for (const auto& r : results) all.insert(all.end(), r.trace.begin(), r.trace.end());
  return all;
}

std::vector<SeedRun>& seed_runs() {
  static std::vector<SeedRun> runs = [] {
    std::vector<SeedRun> out;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      SeedRun r;
      r.config = experiment_config(seed);
      r.data = prepare_market(r.config);
      const auto da = solve_baseline(r.config, r.data);
      r.baseline = mean_totals(backtest_baseline(da, r.config, r.data, RebidMode::None, seed)).overall();
      for (bool constrained : {true, false}) {
        auto c = r.config;
        c.training.cvar_enabled = constrained;
        auto env = make_environment(c, r.data, r.data.train_scenarios, AdvisorMode::Off);
        Trainer tr(c.training, env->state_dim(), env->action_dim());
        tr.train(*env);
        const auto res = backtest_policy(tr.policy(), c, r.data, AdvisorMode::Off, seed);
        (constrained ? r.cvar_policy : r.plain_policy) = tr.policy();
        (constrained ? r.cvar_profit : r.plain_profit) = mean_totals(res).overall();
        (constrained ? r.cvar_iqr : r.plain_iqr) = mean_band_iqr(joined(res));
      }
      std::fprintf(stderr, "  seed %d: baseline %.1f, CVaR %.1f, lambda=0 %.1f; IQR %.4f vs %.4f\n",
                   static_cast<int>(seed), r.baseline, r.cvar_profit, r.plain_profit, r.cvar_iqr, r.plain_iqr);
      out.push_back(std::move(r));
    }
    return out;
  }();
  return runs;
}

// 10. Trained CVaR policy against the day-ahead baseline.
Verdict drl_vs_baseline() {
  int wins = 0;
  std::ostringstream d;
  for (const auto& r : seed_runs()) {
    wins += r.cvar_profit > r.baseline;
    d << " " << static_cast<long>(r.cvar_profit) << ">" << static_cast<long>(r.baseline) << "?";
  }
  std::ostringstream out;
  out << "DRL above baseline in " << wins << "/5 seeds (mean profit DRL>baseline:" << d.str() << ")";
  return {wins >= 4, out.str()};
}

// 11. Band-capacity IQR, CVaR against lambda = 0.
Verdict iqr_narrowing() {
  int narrower = 0;
  std::ostringstream d;
  d.precision(4);
  for (const auto& r : seed_runs()) {
    narrower += r.cvar_iqr <= r.plain_iqr;
    d << " " << r.cvar_iqr << "/" << r.plain_iqr;
  }
  std::ostringstream out;
  out << "CVaR IQR <= lambda=0 IQR in " << narrower << "/5 seeds (CVaR/plain MW:" << d.str() << ")";
  return {narrower >= 4, out.str()};
}

// Held-out day 0 with both regulation markets scaled over intervals 120-179.
MarketData spiked(const SeedRun& r) {
  MarketData d = r.data;
  const std::array<MarketId, 2> regulation = {MarketId::RegulationLower, MarketId::RegulationRaise};
  inject_price_spike(d.test, regulation, 120, 60, 5.0, r.config.env.rules);
  d.test_scenarios =
      std::make_shared<const std::vector<Scenario>>(std::vector<Scenario>{make_scenario(d.test, 0, r.config.env.rules)});
  return d;
}

bool same_trace(const std::vector<TraceRow>& a, const std::vector<TraceRow>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a[i];
    const auto& y = b[i];
    if (x.t != y.t || x.soc != y.soc || x.reward != y.reward || x.action.charge != y.action.charge ||
        x.action.discharge != y.action.discharge || x.price.values != y.price.values ||
        x.enabled.values != y.enabled.values || x.action.bands.values != y.action.bands.values)
      return false;
  }
  return true;
}

// 12. Zero stub is a no-op; any band move happens only where the gate held,
// the spike produces contingency-to-regulation shifts, and the advisor does
// not lose money on the spike day.
Verdict advisor_gate() {
  int identical = 0, sound = 0, not_worse = 0, shifted_total = 0, spike_shifts = 0;
  std::ostringstream d;
  for (const auto& r : seed_runs()) {
    const auto data = spiked(r);
    const auto seed = r.config.seed;
    const auto off = backtest_policy(r.cvar_policy, r.config, data, AdvisorMode::Off, seed);

    auto zero_cfg = r.config;
    zero_cfg.advisor_stub = "zero";
    const auto zero = backtest_policy(r.cvar_policy, zero_cfg, data, AdvisorMode::Stub, seed);
    identical += same_trace(off[0].trace, zero[0].trace) && off[0].totals.overall() == zero[0].totals.overall();

    auto env = make_environment(r.config, data, data.test_scenarios, AdvisorMode::Stub);
    auto& hybrid = dynamic_cast<HybridEnv&>(*env);
    Eigen::VectorXd s = hybrid.reset_to(0, seed);
    for (bool done = false; !done;) {
      const auto step = hybrid.step(greedy_action(r.cvar_policy, s));
      s = step.state;
      done = step.done;
    }
    bool ok = true;
    int shifted = 0, to_regulation = 0;
    for (const auto& log : hybrid.log()) {
      double reg = 0.0, con = 0.0;
      for (MarketId m : kMarkets) {
        for (std::size_t k = 0; k < kBands; ++k) {
          const double dm = log.executed.bands[m][k] - log.base.bands[m][k];
          (is_regulation(m) ? reg : con) += dm;
          if (std::abs(dm) > 1e-12) ok &= log.gate && log.applied;
        }
      }
      if (std::abs(reg) < 1e-12 && std::abs(con) < 1e-12) continue;
      ++shifted;
      if (reg > 0.0 && con < 0.0 && log.t >= 120 && log.t < 180) ++to_regulation;
    }
    sound += ok && to_regulation > 0;
    spike_shifts += to_regulation;
    shifted_total += shifted;
    const double with = stream_totals(hybrid.base_env().outcomes()).overall();
    const double without = off[0].totals.overall();
    not_worse += with >= without;
    d << " " << static_cast<long>(with) << "/" << static_cast<long>(without) << "(" << shifted << ")";
  }
  std::ostringstream out;
  out << "zero stub identical " << identical << "/5; moves only under the gate with contingency to regulation in the spike "
      << sound << "/5 (" << shifted_total << " shifted steps, " << spike_shifts << " into regulation in the spike); profit with >= without in " << not_worse
      << "/5 (with/without(shifts):" << d.str() << ")";
  return {identical == 5 && sound == 5 && shifted_total > 0 && not_worse >= 4, out.str()};
}

class RandomBytes : public AdvisorBackend {
 public:
  explicit RandomBytes(std::uint64_t seed) : rng_(seed) {}
  BackendReply complete(const AdvisorQuery&) override {
    std::uniform_int_distribution<int> byte(0, 255), len(0, 512);
    std::string s(static_cast<std::size_t>(len(rng_)), '\0');
    for (char& c : s) c = static_cast<char>(byte(rng_));
    return {s, nullptr};
  }
  std::string name() const override { return "random"; }

 private:
  std::mt19937_64 rng_;
};

// 13. Random-byte backend replies.
Verdict parser_fuzz() {
  RandomBytes backend(1313);
  AdvisorConfig config;
  AdvisorQuery q;
  q.report.in_distribution = false;
  q.report.z.fill(0.0);
  q.report.z[2] = 4.0;
  q.report.max_abs_z = 4.0;
  for (auto& ladder : q.base.bands) ladder.fill(10.0);
  q.prompt = build_prompt(q.report, Eigen::VectorXd::Zero(kStateDim), q.state, ForecastRow{}, q.base, q.params, "");
  int applied = 0, crashes = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    try {
      applied += propose_adjustment(q, backend, config).applied;
    } catch (...) {
      ++crashes;
    }
  }
  std::ostringstream d;
  d << n << " replies, " << applied << " applied, " << crashes << " exceptions";
  return {applied == 0 && crashes == 0, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
      {"clearing oracle equivalence", clearing_oracle},
      {"price-maker monotonicity", price_maker_sweep},
      {"supply round trip", supply_round_trip},
      {"degradation coefficient", degradation},
      {"clipping and SoC safety", clipping_safety},
      {"shaping policy invariance", pbrs_invariance},
      {"gradient checks", gradient_checks},
      {"CVaR unit results", cvar_results},
      {"risk-sensitive bandit", bandit},
      {"DRL above baseline", drl_vs_baseline},
      {"band IQR narrowing", iqr_narrowing},
      {"advisor safety and gate", advisor_gate},
      {"parser fuzz", parser_fuzz},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s %2d %s: %s\n", v.pass ? "PASS" : "FAIL", id, criteria[i].first, v.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
