#include "fcas/experiment.hpp"

#include <fstream>

#include "fcas/advisor_remote.hpp"
#include "fcas/errors.hpp"

namespace fcas {

namespace {

std::shared_ptr<const std::vector<Scenario>> scenarios_of(const MarketHistory& h, const MarketRules& rules) {
  std::vector<Scenario> out;
  for (std::size_t start : feasible_windows(h)) out.push_back(make_scenario(h, start, rules));
  return std::make_shared<const std::vector<Scenario>>(std::move(out));
}

}  // namespace

MarketData split_market(const MarketHistory& history, const RunConfig& config) {
  auto [train, test] = split_days(history, config.train_days);
  MarketData d;
  d.train = std::move(train);
  d.test = std::move(test);
  d.train_scenarios = scenarios_of(d.train, config.env.rules);
  d.test_scenarios = scenarios_of(d.test, config.env.rules);
  if (d.train_scenarios->empty()) throw DataError("no complete training day in the history");
  if (d.test_scenarios->empty()) throw DataError("no complete held-out day in the history");
  d.scaler = FeatureScaler::fit(d.train, config.env.params);
  // Forecast rows as observed on the training days.
  std::vector<ForecastTable> observed;
  for (std::size_t i = 0; i < d.train_scenarios->size(); ++i) {
    const auto& sc = (*d.train_scenarios)[i];
    observed.push_back(config.env.forecast_noise > 0.0
                           ? noisy_forecasts(sc, config.env.forecast_noise, config.seed * 1000003u + i)
                           : perfect_forecasts(sc));
  }
  d.stats = FeatureStats::fit(observed, d.scaler, config.env.params);
  return d;
}

MarketData prepare_market(const RunConfig& config) {
  MarketHistory history;
  if (config.paths.history.empty()) {
    history = synth_generate(config.synth, config.env.rules, config.seed);
  } else {
    if (config.paths.bids.empty()) throw DataError("paths.history is set but paths.bids is not");
    history = load_history(config.paths.history, config.paths.bids, config.env.rules);
  }
  return split_market(history, config);
}

void attach_fr_trace(RunConfig& config) {
  if (config.paths.fr_trace.empty()) return;
  std::ifstream in(config.paths.fr_trace);
  if (!in) throw DataError("cannot open FR trace " + config.paths.fr_trace);
  auto trace = read_fr_trace(in);
  if (trace.empty()) throw DataError("FR trace " + config.paths.fr_trace + " is empty");
  config.env.fr_recorded = std::make_shared<const std::vector<FrSignal>>(std::move(trace));
}

AdvisorMode parse_advisor_mode(std::string_view s) {
  if (s == "off") return AdvisorMode::Off;
  if (s == "stub") return AdvisorMode::Stub;
  if (s == "remote") return AdvisorMode::Remote;
  throw InvalidInput("advisor mode must be off, stub or remote");
}

std::shared_ptr<AdvisorBackend> make_backend(AdvisorMode mode, const RunConfig& config) {
  switch (mode) {
    case AdvisorMode::Off:
      return nullptr;
    case AdvisorMode::Stub:
      if (config.advisor_stub == "zero") return std::make_shared<ZeroDeltaBackend>();
      return std::make_shared<RuleBackend>(config.rule_shift_fraction);
    case AdvisorMode::Remote: {
      auto settings = RemoteSettings::from_environment();
      settings.timeout_seconds = config.advisor.timeout_seconds;
      return std::make_shared<RemoteBackend>(std::move(settings));
    }
  }
  return nullptr;
}

std::unique_ptr<Environment> make_environment(const RunConfig& config, const MarketData& data,
                                              std::shared_ptr<const std::vector<Scenario>> pool, AdvisorMode mode,
                                              std::ostream* transcript) {
  BessEnv env(config.env, std::move(pool), data.scaler);
  if (mode == AdvisorMode::Off) return std::make_unique<BessEnv>(std::move(env));
  auto hybrid = std::make_unique<HybridEnv>(std::move(env), data.stats, make_backend(mode, config), config.advisor);
  hybrid->set_transcript(transcript);
  return hybrid;
}

std::vector<EpisodeResult> backtest_policy(const GaussianPolicy& policy, const RunConfig& config,
                                           const MarketData& data, AdvisorMode mode, std::uint64_t seed,
                                           std::ostream* transcript) {
  auto env = make_environment(config, data, data.test_scenarios, mode, transcript);
  auto* hybrid = dynamic_cast<HybridEnv*>(env.get());
  BessEnv& base = hybrid ? hybrid->base_env() : static_cast<BessEnv&>(*env);
  std::vector<EpisodeResult> out;
  for (std::size_t i = 0; i < data.test_scenarios->size(); ++i) {
    Eigen::VectorXd s = hybrid ? hybrid->reset_to(i, seed + i) : base.reset_to(i, seed + i);
    bool done = false;
    while (!done) {
      const auto step = env->step(greedy_action(policy, s));
      s = step.state;
      done = step.done;
    }
    EpisodeResult r;
    r.totals = stream_totals(base.outcomes());
    r.trace = base.trace();
    if (hybrid) r.advised = hybrid->stats().applied;
    out.push_back(std::move(r));
  }
  return out;
}

DayAheadSolution solve_baseline(const RunConfig& config, const MarketData& data) {
  const auto& all = *data.train_scenarios;
  const std::size_t n = std::min(config.baseline_scenarios, all.size());
  std::vector<Scenario> chosen(all.end() - static_cast<long>(n), all.end());
  return solve_day_ahead(ScenarioSet::uniform(std::move(chosen)), config.env.params, config.env.rules,
                         config.env.price_template, config.baseline);
}

std::vector<EpisodeResult> backtest_baseline(const DayAheadSolution& da, const RunConfig& config,
                                             const MarketData& data, RebidMode mode, std::uint64_t seed) {
  BessEnv env(config.env, data.test_scenarios, data.scaler);
  std::vector<EpisodeResult> out;
  for (std::size_t i = 0; i < data.test_scenarios->size(); ++i) {
    env.reset_to(i, seed + i);
    run_baseline_episode(env, da, config.baseline, mode, config.env.rules.bilevel_iteration_limit);
    EpisodeResult r;
    r.totals = stream_totals(env.outcomes());
    r.trace = env.trace();
    out.push_back(std::move(r));
  }
  return out;
}

StreamTotals mean_totals(std::span<const EpisodeResult> results) {
  StreamTotals s;
  for (const auto& r : results) s += r.totals;
  return results.empty() ? s : s.scaled(1.0 / static_cast<double>(results.size()));
}

ClearingResult replay_interval(const IntervalRecord& record, const MarketRules& rules) {
  SupplyVariation supply;
  if (record.snapshot.observed_clearing_price)
    supply = estimate_supply_variation(record.rivals, *record.snapshot.observed_clearing_price,
                                       record.snapshot.demand, rules);
  return clear_joint(record.rivals, record.snapshot, supply, rules);
}

std::vector<SweepRow> price_sweep(const IntervalRecord& record, const SupplyVariation& supply,
                                  const EnvConfig& env, std::span<const double> capacities,
                                  std::span<const MarketId> markets) {
  std::vector<SweepRow> rows;
  for (MarketId m : markets) {
    for (double cap : capacities) {
      if (!(cap >= 0.0)) throw InvalidInput("sweep capacity must be non-negative");
      BidderBook me;
      me.bidder_id = env.bidder_id;
      me.max_charge = env.params.max_charge;
      me.max_discharge = env.params.max_discharge;
      const double limit = is_lower(m) ? me.max_charge : me.max_discharge;
      if (cap > limit) throw InvalidInput("sweep capacity exceeds the BESS power limit");
      for (MarketId k : kMarkets)
        me.ladders[k] = single_step_ladder(env.price_template[k], 0, k == m ? cap : 0.0);
      std::vector<BidderBook> books = record.rivals;
      books.push_back(std::move(me));
      const auto res = clear_joint(books, record.snapshot, supply, env.rules);
      rows.push_back({record.snapshot.t, m, cap, res.prices()});
    }
  }
  return rows;
}

}  // namespace fcas
