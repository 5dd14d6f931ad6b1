#include "fcas/market.hpp"

#include <algorithm>
#include <cmath>

#include "fcas/errors.hpp"

namespace fcas {

std::string_view market_code(MarketId m) {
  switch (m) {
    case MarketId::RegulationLower: return "lr";
    case MarketId::RegulationRaise: return "rr";
    case MarketId::ContingencyLower: return "lc";
    case MarketId::ContingencyRaise: return "rc";
  }
  return "??";
}

MarketId parse_market(std::string_view code) {
  for (MarketId m : kMarkets) {
    if (market_code(m) == code) return m;
  }
  throw InvalidInput("unknown market '" + std::string(code) + "' (expected lr, rr, lc or rc)");
}

void MarketRules::validate() const {
  if (!(price_cap > 0.0)) throw InvalidInput("price_cap must be positive");
  if (!(interval_hours > 0.0)) throw InvalidInput("interval_hours must be positive");
  if (bands_per_bid != kBands) throw InvalidInput("bands_per_bid must be 10");
  if (bilevel_iteration_limit < 1) throw InvalidInput("bilevel_iteration_limit must be >= 1");
}

std::string_view violation_name(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::PriceOrder: return "price-order";
    case ViolationKind::CapacityOrder: return "capacity-order";
    case ViolationKind::CapExceeded: return "cap-exceeded";
    case ViolationKind::Negative: return "negative";
  }
  return "?";
}

std::vector<LadderViolation> validate_ladder(const BandLadder& ladder, const MarketRules& rules) {
  std::vector<LadderViolation> out;
  for (std::size_t k = 0; k < kBands; ++k) {
    const double p = ladder.prices[k];
    const double c = ladder.capacities[k];
    if (!std::isfinite(p) || !std::isfinite(c) || p < 0.0 || c < 0.0) {
      out.push_back({k + 1, ViolationKind::Negative});
    }
    if (p > rules.price_cap) out.push_back({k + 1, ViolationKind::CapExceeded});
    if (k > 0) {
      if (p < ladder.prices[k - 1]) out.push_back({k + 1, ViolationKind::PriceOrder});
      if (c < ladder.capacities[k - 1]) out.push_back({k + 1, ViolationKind::CapacityOrder});
    }
  }
  return out;
}

std::vector<OfferStep> offer_curve(const BandLadder& ladder, const MarketRules& rules) {
  const auto violations = validate_ladder(ladder, rules);
  if (!violations.empty()) {
    const auto& v = violations.front();
    throw InvalidInput("invalid ladder: " + std::string(violation_name(v.kind)) + " at band " +
                       std::to_string(v.band));
  }
  std::vector<OfferStep> curve;
  curve.reserve(kBands);
  for (std::size_t k = 0; k < kBands; ++k) curve.push_back({ladder.prices[k], ladder.capacities[k]});
  return curve;
}

double available_at(const std::vector<OfferStep>& curve, double price) {
  double cap = 0.0;
  for (const auto& step : curve) {
    if (step.price <= price) cap = step.capacity;
  }
  return cap;
}

std::size_t effective_step_count(const std::vector<OfferStep>& curve) {
  std::size_t n = 0;
  double prev = 0.0;
  for (const auto& step : curve) {
    if (step.capacity > prev + kTolerance) ++n;
    prev = std::max(prev, step.capacity);
  }
  return n;
}

void BidderBook::validate(const MarketRules& rules) const {
  if (!(max_charge >= 0.0) || !(max_discharge >= 0.0))
    throw InvalidInput("bidder " + bidder_id + ": negative power limit");
  if (energy_charge < 0.0 || energy_charge > max_charge + kTolerance)
    throw InvalidInput("bidder " + bidder_id + ": energy_charge outside [0, max_charge]");
  if (energy_discharge < 0.0 || energy_discharge > max_discharge + kTolerance)
    throw InvalidInput("bidder " + bidder_id + ": energy_discharge outside [0, max_discharge]");
  if (energy_charge > 0.0 && energy_discharge > 0.0)
    throw InvalidInput("bidder " + bidder_id + ": simultaneous charge and discharge");
  for (MarketId m : kMarkets) {
    const auto violations = validate_ladder(ladders[m], rules);
    if (!violations.empty()) {
      throw InvalidInput("bidder " + bidder_id + " market " + std::string(market_code(m)) + ": " +
                         std::string(violation_name(violations.front().kind)) + " at band " +
                         std::to_string(violations.front().band));
    }
  }
}

void MarketSnapshot::validate(long horizon) const {
  if (t < 0 || t >= horizon) throw InvalidInput("snapshot timestamp outside episode horizon");
  for (MarketId m : kMarkets) {
    if (!(demand[m] >= 0.0)) throw InvalidInput("negative demand in market " + std::string(market_code(m)));
  }
}

BandLadder single_step_ladder(const BandArray& prices, std::size_t band, double capacity) {
  BandLadder ladder;
  ladder.prices = prices;
  for (std::size_t k = 0; k < kBands; ++k) ladder.capacities[k] = k >= band ? capacity : 0.0;
  return ladder;
}

BandArray geometric_prices(double floor, double cap) {
  if (!(floor > 0.0) || !(cap >= floor)) throw InvalidInput("geometric price template needs 0 < floor <= cap");
  BandArray prices{};
  const double ratio = std::pow(cap / floor, 1.0 / static_cast<double>(kBands - 1));
  double p = floor;
  for (std::size_t k = 0; k < kBands; ++k) {
    prices[k] = k + 1 == kBands ? cap : p;
    p *= ratio;
  }
  return prices;
}

}  // namespace fcas
