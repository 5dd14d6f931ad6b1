#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "fcas/bess.hpp"
#include "fcas/bid_csv.hpp"
#include "fcas/clearing.hpp"
#include "fcas/data.hpp"
#include "fcas/env.hpp"

namespace fcas {

struct ScenarioSet {
  std::vector<Scenario> scenarios;
  std::vector<double> probabilities;  // empty means uniform

  static ScenarioSet uniform(std::vector<Scenario> scenarios);
  void validate() const;  // throws InvalidInput
  double probability(std::size_t i) const;
};

// Discretized decision space shared by the day-ahead and real-time solves.
struct DecisionGrid {
  std::vector<std::size_t> bands = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};  // allowed price bands (0-based)
  double quantum = 5.0;  // MW
  int levels = -1;       // capacity levels above zero; -1: up to the power limit
  int energy_levels = -1;

  void validate() const;
  std::vector<double> capacities(double limit) const;
  std::vector<double> energy_setpoints(double limit) const;
};

struct BaselineConfig {
  DecisionGrid grid;
  double penalty_multiplier = 10.0;  // slack penalty M = multiplier * price_cap
  bool penalize_oversupply = true;   // false: only unmet demand is penalized
  int max_passes = 4;
  std::size_t pair_move_limit = 256;  // joint same-side moves when the pair grid is this small
  FrSignal expected_fr;
  ArbitrageSign arbitrage_sign = ArbitrageSign::CashFlow;
};

struct IntervalBid {
  PerMarket<std::size_t> band{};  // price band of each single-step ladder
  PerMarket<double> capacity{};   // MW offered from that band upward
  double charge = 0.0;
  double discharge = 0.0;
  bool operator==(const IntervalBid&) const = default;
};

struct DayAheadSolution {
  std::vector<IntervalBid> intervals;
  PerMarket<BandArray> prices;  // fixed bidding prices per market
  double expected_objective = 0.0;
  int passes = 0;

  std::size_t size() const { return intervals.size(); }
  ActionVector action(std::size_t t) const;
  BidsByInterval to_bids(const std::string& bidder_id, const BessParams& params) const;
};

ActionVector bid_action(const IntervalBid& bid, const PerMarket<BandArray>& prices);

struct RealTimeAdjustment {
  PerMarket<double> delta_capacity{};
  double delta_charge = 0.0;
  double delta_discharge = 0.0;
  double objective = 0.0;
  std::string diagnostic;  // non-empty when the state forced a zero adjustment

  bool is_zero() const;
  IntervalBid apply(const IntervalBid& base) const;
};

// Expected profit of a scenario set under a fixed schedule (base reward minus
// slack penalties), the objective the day-ahead solve maximizes.
double day_ahead_objective(const DayAheadSolution& solution, const ScenarioSet& scenarios, const BessParams& params,
                           const MarketRules& rules, const BaselineConfig& config);

// Coordinate ascent from the all-zero schedule; throws InvalidInput on an
// empty grid or mismatched scenario horizons.
DayAheadSolution solve_day_ahead(const ScenarioSet& scenarios, const BessParams& params, const MarketRules& rules,
                                 const PerMarket<BandArray>& prices, const BaselineConfig& config);

// Exhaustive search for one interval at the forecast clearing prices. A band
// earns the forecast price when priced at or below it; enabled capacity is
// capped at forecast demand. Ties keep the least idle capacity, then the day-
// ahead quantities.
RealTimeAdjustment solve_real_time(const DayAheadSolution& da, std::size_t t, const ForecastRow& forecast,
                                   const BessState& state, const BessParams& params, const MarketRules& rules,
                                   const BaselineConfig& config);

struct BilevelResult {
  ClearingResult clearing;
  RealTimeAdjustment adjustment;
  int iterations = 0;
  bool converged = false;
};

// Leader (market clearing) and follower (real-time re-bid) alternation for
// one interval until the follower's adjustment moves by less than a quantum.
BilevelResult bilevel_iterate(std::span<const BidderBook> rivals, const DayAheadSolution& da, std::size_t t,
                              const MarketSnapshot& snapshot, const SupplyVariation& supply, const BessState& state,
                              const BessParams& params, const MarketRules& rules, const BaselineConfig& config,
                              int limit, const std::string& bidder_id = "bess");

enum class RebidMode {
  None,      // day-ahead schedule as submitted
  Forecast,  // real-time re-bid against the environment's forecast
  Bilevel,   // leader/follower loop against the interval's rival books
};

// Plays the schedule through the environment from its current reset state.
// Returns the summed base reward.
double run_baseline_episode(BessEnv& env, const DayAheadSolution& da, const BaselineConfig& config,
                            RebidMode mode = RebidMode::None, int bilevel_limit = 5);

void write_day_ahead_csv(std::ostream& out, const DayAheadSolution& da, const BessParams& params,
                         const std::string& bidder_id = "bess");

}  // namespace fcas
