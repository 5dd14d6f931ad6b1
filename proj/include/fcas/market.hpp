#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fcas {

inline constexpr std::size_t kBands = 10;
inline constexpr std::size_t kMarketCount = 4;
inline constexpr double kTolerance = 1e-9;

enum class MarketId { RegulationLower = 0, RegulationRaise = 1, ContingencyLower = 2, ContingencyRaise = 3 };

// Clearing order used by the engine: lr, rr, lc, rc.
inline constexpr std::array<MarketId, kMarketCount> kMarkets = {
    MarketId::RegulationLower, MarketId::RegulationRaise, MarketId::ContingencyLower,
    MarketId::ContingencyRaise};

std::string_view market_code(MarketId m);  // "lr", "rr", "lc", "rc"
MarketId parse_market(std::string_view code);  // throws InvalidInput

// Lower services absorb power and share the charge-side headroom.
inline constexpr bool is_lower(MarketId m) {
  return m == MarketId::RegulationLower || m == MarketId::ContingencyLower;
}
inline constexpr bool is_regulation(MarketId m) {
  return m == MarketId::RegulationLower || m == MarketId::RegulationRaise;
}

// Fixed-size container indexed by every market.
template <class T>
struct PerMarket {
  std::array<T, kMarketCount> values{};

  T& operator[](MarketId m) { return values[static_cast<std::size_t>(m)]; }
  const T& operator[](MarketId m) const { return values[static_cast<std::size_t>(m)]; }

  auto begin() { return values.begin(); }
  auto end() { return values.end(); }
  auto begin() const { return values.begin(); }
  auto end() const { return values.end(); }

  bool operator==(const PerMarket&) const = default;
};

struct MarketRules {
  double price_cap = 15000.0;       // currency/MW
  double interval_hours = 5.0 / 60.0;
  std::size_t bands_per_bid = kBands;
  int bilevel_iteration_limit = 10;

  void validate() const;  // throws InvalidInput
};

using BandArray = std::array<double, kBands>;

// Ten monotone (price, capacity) bands. Capacities are cumulative: selecting
// band k makes up to capacities[k] MW available at prices[k].
struct BandLadder {
  BandArray prices{};
  BandArray capacities{};

  bool operator==(const BandLadder&) const = default;
};

enum class ViolationKind { PriceOrder, CapacityOrder, CapExceeded, Negative };

struct LadderViolation {
  std::size_t band;  // 1-based
  ViolationKind kind;

  bool operator==(const LadderViolation&) const = default;
};

std::string_view violation_name(ViolationKind kind);

std::vector<LadderViolation> validate_ladder(const BandLadder& ladder, const MarketRules& rules);

struct OfferStep {
  double price;
  double capacity;  // cumulative MW available at prices >= price

  bool operator==(const OfferStep&) const = default;
};

// Monotone offer curve, one step per band. Throws InvalidInput on an invalid ladder.
std::vector<OfferStep> offer_curve(const BandLadder& ladder, const MarketRules& rules);

// MW available from a curve at a given price: the capacity of the highest step
// whose price is <= price (0 below the first step).
double available_at(const std::vector<OfferStep>& curve, double price);

// Number of steps that add capacity over the previous step.
std::size_t effective_step_count(const std::vector<OfferStep>& curve);

struct BidderBook {
  std::string bidder_id;
  PerMarket<BandLadder> ladders;
  double max_charge = 0.0;     // MW, shared by lr + lc + energy charge
  double max_discharge = 0.0;  // MW, shared by rr + rc + energy discharge
  double energy_charge = 0.0;
  double energy_discharge = 0.0;

  double charge_headroom() const { return max_charge - energy_charge; }
  double discharge_headroom() const { return max_discharge - energy_discharge; }

  // Throws InvalidInput on a broken book (power limits, any invalid ladder).
  void validate(const MarketRules& rules) const;
};

struct MarketSnapshot {
  long t = 0;
  PerMarket<double> demand{};
  double energy_price = 0.0;  // currency/MWh
  std::optional<PerMarket<double>> observed_clearing_price;

  void validate(long horizon) const;
};

// Ladder with zero capacity below `band` (0-based) and `capacity` from there on.
BandLadder single_step_ladder(const BandArray& prices, std::size_t band, double capacity);

// Geometric price template from floor to cap over ten bands.
BandArray geometric_prices(double floor, double cap);

}  // namespace fcas
