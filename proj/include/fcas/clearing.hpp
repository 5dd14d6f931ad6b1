#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fcas/market.hpp"

namespace fcas {

struct MarketClearing {
  double clearing_price = 0.0;            // currency/MW
  std::map<std::string, double> enabled;  // bidder_id -> MW, every bidder listed
  double shortfall = 0.0;                 // MW of residual demand left unmet
  std::optional<std::string> marginal_bidder;

  double total_enabled() const;
};

struct ClearingResult {
  long t = 0;
  PerMarket<MarketClearing> markets;

  double enabled(MarketId m, const std::string& bidder_id) const;
  double revenue(MarketId m, const std::string& bidder_id) const;  // cp * ec
  PerMarket<double> prices() const;
  // Objective of the clearing model: sum over markets of cp * demand.
  double total_cost(const PerMarket<double>& demand) const;
};

// Signed net capacity from the rest of the market, s = s+ - s-.
struct SupplyVariation {
  PerMarket<double> value{};

  double positive(MarketId m) const;
  double negative(MarketId m) const;
};

// Merit-order clearing of all four markets in the fixed order lr, rr, lc, rc.
// Each bidder's charge-side headroom is shared by lr and lc, discharge-side by
// rr and rc, both net of its energy-market position. Unmet residual demand is
// recorded as shortfall and prices the market at the cap. A negative residual
// demand (supply > demand) clears nothing at price 0.
ClearingResult clear_joint(std::span<const BidderBook> books, const MarketSnapshot& snapshot,
                           const SupplyVariation& supply, const MarketRules& rules);

// For each market the enabled capacity of a bidder is the capacity of its
// highest band priced at or below the clearing price; s = d - sum of those.
SupplyVariation estimate_supply_variation(std::span<const BidderBook> books,
                                          const PerMarket<double>& clearing_price,
                                          const PerMarket<double>& demand, const MarketRules& rules);

// Exhaustive search over band selections for tiny instances (<= 4 bidders,
// <= 3 capacity steps per ladder). Minimizes sum cp*d subject to the joint
// headroom coupling; ties go to the cheaper, then larger, selection. Enabled
// capacity within the chosen selection is filled in merit order, with an
// exact flow solve when the greedy fill cannot honor the coupling. Sides with
// no feasible selection fall back to sequential merit-order clearing.
ClearingResult oracle_clear_exact(std::span<const BidderBook> books, const MarketSnapshot& snapshot,
                                  const SupplyVariation& supply, const MarketRules& rules);

nlohmann::json to_json(const ClearingResult& result);

}  // namespace fcas
