#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "env_fixtures.hpp"
#include "fcas/baseline.hpp"
#include "fcas/errors.hpp"

using namespace fcas;

namespace {

bool near(double a, double b, double tol = 1e-9) { return std::abs(a - b) <= tol; }

PerMarket<BandArray> template_prices(const MarketRules& rules = {}) {
  PerMarket<BandArray> p;
  for (auto& b : p) b = geometric_prices(1.0, rules.price_cap);
  return p;
}

// Rival offering `capacity` at one price in one market, large headroom.
BidderBook flat_rival(const std::string& id, MarketId m, double price, double capacity) {
  BidderBook b;
  b.bidder_id = id;
  b.max_charge = b.max_discharge = 1e6;
  for (std::size_t k = 0; k < kBands; ++k) {
    b.ladders[m].prices[k] = price * (1.0 + 0.01 * static_cast<double>(k));
    b.ladders[m].capacities[k] = capacity;
  }
  for (MarketId o : kMarkets) {
    if (o == m) continue;
    b.ladders[o].prices = b.ladders[m].prices;
  }
  return b;
}

Scenario scenario_of(std::vector<std::vector<BidderBook>> rivals, std::vector<PerMarket<double>> demand,
                     std::vector<double> energy) {
  Scenario s;
  for (std::size_t t = 0; t < rivals.size(); ++t) {
    IntervalRecord rec;
    rec.snapshot.t = static_cast<long>(t);
    rec.snapshot.demand = demand[t];
    rec.snapshot.energy_price = energy[t];
    rec.rivals = rivals[t];
    rec.has_bids = true;
    s.intervals.push_back(rec);
    s.supply.emplace_back();
  }
  return s;
}

// Independent evaluation: joint clearing of the full BESS book, the
// environment's SoC step and base reward, plus the oversupply slack.
struct Oracle {
  const Scenario& scenario;
  const PerMarket<BandArray>& prices;
  BessParams params;
  MarketRules rules;
  double penalty;

  struct Cleared {
    ClearingResult clearing;
    double slack = 0.0;
  };

  Cleared clear(std::size_t t, const IntervalBid& bid) const {
    const auto& rec = scenario.intervals[t];
    std::vector<BidderBook> books = rec.rivals;
    BidderBook me;
    me.bidder_id = "bess";
    me.max_charge = params.max_charge;
    me.max_discharge = params.max_discharge;
    me.energy_charge = bid.charge;
    me.energy_discharge = bid.discharge;
    for (MarketId m : kMarkets) me.ladders[m] = single_step_ladder(prices[m], bid.band[m], bid.capacity[m]);
    books.push_back(me);
    Cleared c{clear_joint(books, rec.snapshot, scenario.supply[t], rules), 0.0};
    for (MarketId m : kMarkets) {
      c.slack += c.clearing.markets[m].shortfall;
      if (bid.capacity[m] > 0.0 && prices[m][bid.band[m]] <= c.clearing.markets[m].clearing_price + 1e-9)
        c.slack += bid.capacity[m] - c.clearing.enabled(m, "bess");
    }
    return c;
  }

  double value(const std::vector<const Cleared*>& cleared, const std::vector<IntervalBid>& bids) const {
    BessState st;
    double total = 0.0;
    const double alpha = degradation_coefficient(params);
    for (std::size_t t = 0; t < bids.size(); ++t) {
      const ActionVector a = bid_action(bids[t], prices);
      PerMarket<double> en;
      for (MarketId m : kMarkets) en[m] = cleared[t]->clearing.enabled(m, "bess");
      const BessState next = soc_step(st, a, FrSignal{}, en, params);
      const std::size_t tn = std::min(t + 1, bids.size() - 1);
      ShapingConfig off;
      off.enabled = false;
      total += reward(st, next, cleared[t]->clearing, "bess", scenario.intervals[tn].snapshot.energy_price, alpha,
                      params, off, false)
                   .base() -
               penalty * cleared[t]->slack;
      st = next;
    }
    return total;
  }
};

std::vector<IntervalBid> interval_options(const DecisionGrid& grid, const BessParams& params) {
  std::vector<std::pair<std::size_t, double>> market;
  market.emplace_back(0, 0.0);
  const auto caps = grid.capacities(params.max_charge);
  for (auto b : grid.bands) {
    for (std::size_t l = 1; l < caps.size(); ++l) market.emplace_back(b, caps[l]);
  }
  const auto energy = grid.energy_setpoints(params.max_charge);
  std::vector<std::pair<double, double>> dispatch = {{0.0, 0.0}};
  for (std::size_t l = 1; l < energy.size(); ++l) {
    dispatch.emplace_back(energy[l], 0.0);
    dispatch.emplace_back(0.0, energy[l]);
  }
  std::vector<IntervalBid> out;
  for (const auto& lr : market)
    for (const auto& rr : market)
      for (const auto& lc : market)
        for (const auto& rc : market)
          for (const auto& [pc, pd] : dispatch) {
            IntervalBid b;
            const std::pair<std::size_t, double> sel[] = {lr, rr, lc, rc};
            for (MarketId m : kMarkets) {
              b.band[m] = sel[static_cast<int>(m)].first;
              b.capacity[m] = sel[static_cast<int>(m)].second;
            }
            b.charge = pc;
            b.discharge = pd;
            const double lower = b.capacity[MarketId::RegulationLower] + b.capacity[MarketId::ContingencyLower] + pc;
            const double raise = b.capacity[MarketId::RegulationRaise] + b.capacity[MarketId::ContingencyRaise] + pd;
            if (lower <= params.max_charge + 1e-9 && raise <= params.max_discharge + 1e-9) out.push_back(b);
          }
  return out;
}

}  // namespace

TEST_CASE("day-ahead: scarce high-priced market gets the full headroom") {
  const auto prices = template_prices();
  const PerMarket<double> demand{{0.0, 200.0, 0.0, 0.0}};
  const auto s = scenario_of({{flat_rival("r", MarketId::RegulationRaise, 400.0, 500.0)}}, {demand}, {50.0});
  BessParams params;
  BaselineConfig cfg;
  const auto set = ScenarioSet::uniform({s});
  const auto da = solve_day_ahead(set, params, {}, prices, cfg);
  CHECK(da.intervals[0].capacity[MarketId::RegulationRaise] == params.max_discharge);
  CHECK(da.intervals[0].discharge == 0.0);
  CHECK(prices[MarketId::RegulationRaise][da.intervals[0].band[MarketId::RegulationRaise]] <= 400.0);

  // Exhaustive grid search over the raise side of the same instance.
  Oracle oracle{s, prices, params, {}, cfg.penalty_multiplier * MarketRules{}.price_cap};
  double best = -1e300;
  const auto caps = cfg.grid.capacities(params.max_discharge);
  for (auto band : cfg.grid.bands) {
    for (double rr : caps) {
      for (double rc : caps) {
        for (double pd : caps) {
          if (rr + rc + pd > params.max_discharge) continue;
          IntervalBid b;
          b.band[MarketId::RegulationRaise] = band;
          b.capacity[MarketId::RegulationRaise] = rr;
          b.capacity[MarketId::ContingencyRaise] = rc;
          b.discharge = pd;
          const auto c = oracle.clear(0, b);
          best = std::max(best, oracle.value({&c}, {b}));
        }
      }
    }
  }
  CHECK(near(da.expected_objective, best, 1e-6));
}

TEST_CASE("day-ahead: zero demand and a flat energy price give the all-zero schedule") {
  // Below alpha / E_max per MWh even selling the initial charge loses to degradation.
  const double price = 0.7 * degradation_coefficient({}) / BessParams{}.energy_capacity;
  const auto s = testing::flat_scenario(12, {}, price);
  const auto da = solve_day_ahead(ScenarioSet::uniform({s}), {}, {}, template_prices(), {});
  for (const auto& b : da.intervals) CHECK(b == IntervalBid{});
  CHECK(da.expected_objective == 0.0);
}

TEST_CASE("day-ahead: heuristic within 5% of the enumeration optimum on tiny instances") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto prices = template_prices();
  BessParams params;
  int exact = 0;
  for (int trial = 0; trial < 200; ++trial) {
    CAPTURE(trial);
    const std::size_t horizon = 1 + trial % 2;
    std::vector<std::vector<BidderBook>> rivals(horizon);
    std::vector<PerMarket<double>> demand(horizon);
    std::vector<double> energy(horizon);
    for (std::size_t t = 0; t < horizon; ++t) {
      for (MarketId m : kMarkets) {
        demand[t][m] = 10.0 + 70.0 * u(rng);
        const double cheap = 1.0 + 300.0 * u(rng);
        rivals[t].push_back(flat_rival("c" + std::string(market_code(m)), m, cheap, demand[t][m] * u(rng)));
        rivals[t].push_back(flat_rival("x" + std::string(market_code(m)), m, cheap + 2000.0 * u(rng),
                                       demand[t][m] * 1.5));
      }
      energy[t] = 20.0 + 280.0 * u(rng);
    }
    const auto s = scenario_of(rivals, demand, energy);
    BaselineConfig cfg;
    std::size_t b1 = rng() % kBands, b2 = rng() % kBands;
    if (b1 == b2) b2 = (b1 + 3) % kBands;
    cfg.grid.bands = {std::min(b1, b2), std::max(b1, b2)};
    cfg.grid.quantum = 20.0 + 15.0 * static_cast<double>(trial % 3);
    cfg.grid.levels = 1;
    cfg.grid.energy_levels = 1;
    if (trial % 5 == 4) cfg.penalize_oversupply = false;

    const auto set = ScenarioSet::uniform({s});
    const auto da = solve_day_ahead(set, params, {}, prices, cfg);
    const double penalty = cfg.penalty_multiplier * MarketRules{}.price_cap;
    // Rivals cover demand, so only oversupply can be penalized.
    Oracle oracle{s, prices, params, {}, cfg.penalize_oversupply ? penalty : 0.0};

    const auto options = interval_options(cfg.grid, params);
    std::vector<std::vector<Oracle::Cleared>> cleared(horizon);
    for (std::size_t t = 0; t < horizon; ++t) {
      for (const auto& b : options) cleared[t].push_back(oracle.clear(t, b));
    }
    double best = -1e300;
    if (horizon == 1) {
      for (std::size_t i = 0; i < options.size(); ++i)
        best = std::max(best, oracle.value({&cleared[0][i]}, {options[i]}));
    } else {
      for (std::size_t i = 0; i < options.size(); ++i)
        for (std::size_t j = 0; j < options.size(); ++j)
          best = std::max(best, oracle.value({&cleared[0][i], &cleared[1][j]}, {options[i], options[j]}));
    }
    std::vector<const Oracle::Cleared*> mine;
    for (std::size_t t = 0; t < horizon; ++t) {
      const auto it = std::find(options.begin(), options.end(), da.intervals[t]);
      REQUIRE(it != options.end());
      mine.push_back(&cleared[t][static_cast<std::size_t>(it - options.begin())]);
    }
    const double heuristic = oracle.value(mine, da.intervals);
    CHECK(near(heuristic, da.expected_objective, 1e-6 * (1.0 + std::abs(heuristic))));
    CHECK(heuristic >= -1e-9);
    CHECK(heuristic >= 0.95 * best - 1e-6);
    if (heuristic >= best - 1e-6) ++exact;
  }
  MESSAGE("heuristic matched the optimum on " << exact << " of 200 instances");
}

TEST_CASE("day-ahead: objective equals the environment's base reward without stochastic utilization") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::vector<BidderBook>> rivals(24);
  std::vector<PerMarket<double>> demand(24);
  std::vector<double> energy(24);
  for (std::size_t t = 0; t < 24; ++t) {
    for (MarketId m : kMarkets) {
      demand[t][m] = 20.0 + 60.0 * u(rng);
      rivals[t].push_back(flat_rival("a" + std::string(market_code(m)), m, 5.0 + 100.0 * u(rng), 2.0 * demand[t][m]));
    }
    energy[t] = 30.0 + 200.0 * u(rng);
  }
  const auto s = scenario_of(rivals, demand, energy);
  BaselineConfig cfg;
  cfg.penalty_multiplier = 0.0;
  cfg.max_passes = 2;
  const auto da = solve_day_ahead(ScenarioSet::uniform({s}), {}, {}, template_prices(), cfg);
  EnvConfig ec;
  ec.fr.volatility = 0.0;
  ec.shaping.enabled = false;
  auto env = testing::make_env(s, ec);
  env.reset_to(0, 1);
  const double replay = run_baseline_episode(env, da, cfg, RebidMode::None);
  CHECK(near(replay, da.expected_objective, 1e-6 * (1.0 + std::abs(replay))));
  CHECK(da.expected_objective > 0.0);
}

TEST_CASE("day-ahead: emitted schedules are bid-legal") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::vector<BidderBook>> rivals(6);
  std::vector<PerMarket<double>> demand(6);
  std::vector<double> energy(6);
  for (std::size_t t = 0; t < 6; ++t) {
    for (MarketId m : kMarkets) {
      demand[t][m] = 100.0 * u(rng);
      rivals[t].push_back(flat_rival("a" + std::string(market_code(m)), m, 500.0 * u(rng), 200.0));
    }
    energy[t] = 300.0 * u(rng);
  }
  const auto s = scenario_of(rivals, demand, energy);
  const auto da = solve_day_ahead(ScenarioSet::uniform({s, s}), {}, {}, template_prices(), {});
  BessState mid;
  for (std::size_t t = 0; t < da.size(); ++t) {
    const auto a = da.action(t);
    CHECK(is_feasible(a, mid, {}));
    for (MarketId m : kMarkets) CHECK(validate_ladder(BandLadder{da.prices[m], a.bands[m]}, {}).empty());
  }
  CHECK(da.expected_objective >= 0.0);
}

TEST_CASE("day-ahead: oversupply penalty is the only difference between slack modes") {
  const auto prices = template_prices();
  const PerMarket<double> demand{{30.0, 0.0, 0.0, 0.0}};
  const auto s = scenario_of({{flat_rival("r", MarketId::RegulationLower, 5000.0, 100.0)}}, {demand}, {0.0});
  DayAheadSolution da;
  da.prices = prices;
  IntervalBid bid;
  bid.band[MarketId::RegulationLower] = 5;
  bid.capacity[MarketId::RegulationLower] = 50.0;
  da.intervals = {bid};
  const auto set = ScenarioSet::uniform({s});
  BaselineConfig sym, free;
  free.penalize_oversupply = false;
  const double a = day_ahead_objective(da, set, {}, {}, sym);
  const double b = day_ahead_objective(da, set, {}, {}, free);
  CHECK(near(b - a, sym.penalty_multiplier * 15000.0 * 20.0, 1e-6));
}

TEST_CASE("day-ahead: rejected inputs") {
  const auto s = testing::flat_scenario(4, {}, 60.0);
  BaselineConfig cfg;
  cfg.grid.bands.clear();
  CHECK_THROWS_AS(solve_day_ahead(ScenarioSet::uniform({s}), {}, {}, template_prices(), cfg), InvalidInput);
  CHECK_THROWS_AS(solve_day_ahead(ScenarioSet{}, {}, {}, template_prices(), {}), InvalidInput);
  ScenarioSet uneven = ScenarioSet::uniform({s, testing::flat_scenario(5, {}, 60.0)});
  CHECK_THROWS_AS(solve_day_ahead(uneven, {}, {}, template_prices(), {}), InvalidInput);
  ScenarioSet weighted{{s, s}, {0.3, 0.3}};
  CHECK_THROWS_AS(weighted.validate(), InvalidInput);
}

TEST_CASE("day-ahead: CSV output replays through the bid reader") {
  const auto prices = template_prices();
  const PerMarket<double> demand{{0.0, 200.0, 0.0, 0.0}};
  const auto s = scenario_of({{flat_rival("r", MarketId::RegulationRaise, 400.0, 500.0)}}, {demand}, {50.0});
  const auto da = solve_day_ahead(ScenarioSet::uniform({s}), {}, {}, prices, {});
  std::stringstream io;
  write_day_ahead_csv(io, da, {});
  const auto back = read_bid_csv(io, {});
  REQUIRE(back.size() == 1);
  const auto& book = back.at(0).at(0);
  CHECK(book.bidder_id == "bess");
  const auto a = da.action(0);
  for (MarketId m : kMarkets) CHECK(book.ladders[m].capacities == a.bands[m]);
  CHECK(book.energy_discharge == da.intervals[0].discharge);
}

namespace {

// Price-taker instance: a deep rival sets each price; the BESS sits below it.
struct PriceTaker {
  PerMarket<BandArray> prices = template_prices();
  Scenario scenario;
  ForecastRow forecast;

  PriceTaker() {
    const PerMarket<double> demand{{500.0, 500.0, 0.0, 0.0}};
    scenario = scenario_of({{flat_rival("lr", MarketId::RegulationLower, 300.0, 5000.0),
                             flat_rival("rr", MarketId::RegulationRaise, 250.0, 5000.0)}},
                           {demand}, {80.0});
    forecast.energy_price = 80.0;
    forecast.demand = demand;
    forecast.price = {{300.0, 250.0, 0.0, 0.0}};
  }
};

}  // namespace

TEST_CASE("real-time: forecast matching the day-ahead scenario needs no adjustment") {
  PriceTaker pt;
  const auto da = solve_day_ahead(ScenarioSet::uniform({pt.scenario}), {}, {}, pt.prices, {});
  CHECK(da.intervals[0].capacity[MarketId::RegulationLower] == 50.0);
  CHECK(da.intervals[0].capacity[MarketId::RegulationRaise] == 50.0);
  const auto adj = solve_real_time(da, 0, pt.forecast, BessState{}, {}, {}, {});
  CHECK(adj.is_zero());
  CHECK(adj.diagnostic.empty());
  CHECK(near(adj.objective, da.expected_objective, 1e-6));
}

TEST_CASE("real-time: forecast price below the offer moves capacity out of that market") {
  PriceTaker pt;
  DayAheadSolution da;
  da.prices = pt.prices;
  IntervalBid bid;
  bid.band[MarketId::RegulationRaise] = 5;  // about 209
  bid.capacity[MarketId::RegulationRaise] = 50.0;
  bid.band[MarketId::ContingencyRaise] = 0;
  da.intervals = {bid};
  ForecastRow f = pt.forecast;
  f.price[MarketId::RegulationRaise] = 60.0;
  f.price[MarketId::ContingencyRaise] = 90.0;
  f.demand[MarketId::ContingencyRaise] = 100.0;
  const auto adj = solve_real_time(da, 0, f, BessState{}, {}, {}, {});
  const auto next = adj.apply(bid);
  CHECK(next.capacity[MarketId::RegulationRaise] == 0.0);
  CHECK(next.capacity[MarketId::ContingencyRaise] == 50.0);
  CHECK(adj.delta_capacity[MarketId::RegulationRaise] == -50.0);

  // No profitable destination: the capacity is still withdrawn.
  f.price[MarketId::ContingencyRaise] = 0.0;
  const auto idle = solve_real_time(da, 0, f, BessState{}, {}, {}, {}).apply(bid);
  CHECK(idle.capacity[MarketId::RegulationRaise] == 0.0);
}

TEST_CASE("real-time: empty battery cannot add raise capacity") {
  PriceTaker pt;
  DayAheadSolution da;
  da.prices = pt.prices;
  da.intervals = {IntervalBid{}};
  BessState st;
  st.soc = BessParams{}.soc_min;
  const auto next = solve_real_time(da, 0, pt.forecast, st, {}, {}, {}).apply(da.intervals[0]);
  CHECK(next.capacity[MarketId::RegulationRaise] == 0.0);
  CHECK(next.capacity[MarketId::ContingencyRaise] == 0.0);
  CHECK(next.discharge == 0.0);
  CHECK(next.capacity[MarketId::RegulationLower] == 50.0);
}

TEST_CASE("real-time: infeasible state gives a zero adjustment with a diagnostic") {
  PriceTaker pt;
  DayAheadSolution da;
  da.prices = pt.prices;
  da.intervals = {IntervalBid{}};
  BessState st;
  st.soc = 0.95;
  const auto adj = solve_real_time(da, 0, pt.forecast, st, {}, {}, {});
  CHECK(adj.is_zero());
  CHECK(adj.diagnostic.find("outside") != std::string::npos);
}

TEST_CASE("bilevel: price-taker converges within two iterations") {
  PriceTaker pt;
  BessParams small;
  small.max_charge = small.max_discharge = 10.0;
  DayAheadSolution da;
  da.prices = pt.prices;
  da.intervals = {IntervalBid{}};
  const auto& rec = pt.scenario.intervals[0];
  const auto r = bilevel_iterate(rec.rivals, da, 0, rec.snapshot, {}, {}, small, {}, {}, 10);
  CHECK(r.converged);
  CHECK(r.iterations <= 2);
  CHECK(r.adjustment.apply(da.intervals[0]).capacity[MarketId::RegulationLower] == 10.0);

  const auto again = bilevel_iterate(rec.rivals, da, 0, rec.snapshot, {}, {}, small, {}, {}, 10);
  CHECK(again.iterations == r.iterations);
  CHECK(again.adjustment.delta_capacity == r.adjustment.delta_capacity);
}

TEST_CASE("bilevel: limit one runs a single pass") {
  PriceTaker pt;
  DayAheadSolution da;
  da.prices = pt.prices;
  da.intervals = {IntervalBid{}};
  const auto& rec = pt.scenario.intervals[0];
  const auto r = bilevel_iterate(rec.rivals, da, 0, rec.snapshot, {}, {}, {}, {}, {}, 1);
  CHECK(r.iterations == 1);
  CHECK_THROWS_AS(bilevel_iterate(rec.rivals, da, 0, rec.snapshot, {}, {}, {}, {}, {}, 0), InvalidInput);
}

TEST_CASE("bilevel: price flip oscillates until the limit") {
  // The BESS offers at the floor price. Without it the rival prices the
  // market high and bidding pays; with it the BESS covers demand, the price
  // collapses to the floor and utilization costs exceed revenue.
  const auto prices = template_prices();
  const PerMarket<double> demand{{0.0, 40.0, 0.0, 0.0}};
  const auto s = scenario_of({{flat_rival("r", MarketId::RegulationRaise, 500.0, 100.0)}}, {demand}, {0.0});
  DayAheadSolution da;
  da.prices = prices;
  da.intervals = {IntervalBid{}};
  const auto& rec = s.intervals[0];
  const auto r = bilevel_iterate(rec.rivals, da, 0, rec.snapshot, {}, {}, {}, {}, {}, 7);
  CHECK_FALSE(r.converged);
  CHECK(r.iterations == 7);
}
