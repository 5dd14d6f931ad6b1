#pragma once

#include <random>
#include <string>
#include <vector>

#include "fcas/clearing.hpp"

namespace fcas::testing {

// Random small instance: up to `max_bidders` bidders, ladders with at most
// `max_steps` capacity steps on a coarse price grid. With `loose` the joint
// headroom never binds.
struct Instance {
  std::vector<BidderBook> books;
  MarketSnapshot snapshot;
};

inline BandLadder random_ladder(std::mt19937_64& rng, std::size_t max_steps) {
  std::uniform_int_distribution<int> steps_d(0, static_cast<int>(max_steps));
  std::uniform_int_distribution<int> price_d(1, 20);
  std::uniform_int_distribution<int> cap_d(1, 12);
  const int steps = steps_d(rng);
  std::vector<int> step_bands;
  std::vector<int> all(kBands);
  for (int k = 0; k < static_cast<int>(kBands); ++k) all[k] = k;
  std::shuffle(all.begin(), all.end(), rng);
  step_bands.assign(all.begin(), all.begin() + steps);
  std::sort(step_bands.begin(), step_bands.end());

  std::vector<double> prices;
  for (std::size_t k = 0; k < kBands; ++k) prices.push_back(5.0 * price_d(rng));
  std::sort(prices.begin(), prices.end());
  BandLadder l;
  double cap = 0.0;
  std::size_t next = 0;
  for (std::size_t k = 0; k < kBands; ++k) {
    if (next < step_bands.size() && static_cast<int>(k) == step_bands[next]) {
      cap += cap_d(rng);
      ++next;
    }
    l.prices[k] = prices[k];
    l.capacities[k] = cap;
  }
  return l;
}

inline Instance random_instance(std::mt19937_64& rng, bool loose, std::size_t max_bidders = 4,
                                std::size_t max_steps = 3) {
  std::uniform_int_distribution<int> nb_d(1, static_cast<int>(max_bidders));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Instance inst;
  const int nb = nb_d(rng);
  for (int n = 0; n < nb; ++n) {
    BidderBook b;
    b.bidder_id = std::string(1, static_cast<char>('a' + (n * 7) % 26)) + std::to_string(n);
    for (MarketId m : kMarkets) b.ladders[m] = random_ladder(rng, max_steps);
    if (loose) {
      b.max_charge = b.max_discharge = 1000.0;
    } else {
      b.max_charge = std::floor(u(rng) * 40.0);
      b.max_discharge = std::floor(u(rng) * 40.0);
      if (u(rng) < 0.3) b.energy_charge = std::floor(u(rng) * b.max_charge);
    }
    inst.books.push_back(b);
  }
  for (MarketId m : kMarkets) inst.snapshot.demand[m] = std::floor(u(rng) * 40.0);
  return inst;
}

}  // namespace fcas::testing
