#pragma once

#include <algorithm>
#include <compare>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <vector>

#include "env_fixtures.hpp"

namespace fcas::testing {

// Deterministic 3-interval MDP: one BESS, one rival per market, rising energy
// prices. Actions are a small grid of dispatch and regulation capacities.
struct MicroMdp {
  std::vector<ActionVector> actions;
  std::unique_ptr<BessEnv> env;

  explicit MicroMdp(ShapingConfig shaping) {
    PerMarket<double> demand{};
    demand[MarketId::RegulationRaise] = 20;
    demand[MarketId::RegulationLower] = 15;
    BidderBook rival;
    rival.bidder_id = "rival";
    rival.max_charge = rival.max_discharge = 1000;
    for (MarketId m : kMarkets) {
      BandArray prices{};
      for (std::size_t k = 0; k < kBands; ++k) prices[k] = 30.0 + 10.0 * static_cast<double>(k);
      rival.ladders[m] = single_step_ladder(prices, 0, 100);
    }
    Scenario s = flat_scenario(3, demand, 0, {rival});
    const double energy[] = {20, 90, 300};
    for (std::size_t t = 0; t < 3; ++t) s.intervals[t].snapshot.energy_price = energy[t];
    EnvConfig cfg;
    cfg.shaping = shaping;
    env = std::make_unique<BessEnv>(make_env(s, cfg));
    env->reset(1);

    for (double pc : {0.0, 25.0, 50.0}) {
      for (double pd : {0.0, 25.0, 50.0}) {
        if (pc > 0 && pd > 0) continue;
        for (double rr : {0.0, 15.0}) {
          for (double lr : {0.0, 10.0}) {
            ActionVector a;
            a.charge = pc;
            a.discharge = pd;
            a.bands[MarketId::RegulationRaise].fill(rr);
            a.bands[MarketId::RegulationLower].fill(lr);
            actions.push_back(a);
          }
        }
      }
    }
  }

  struct Key {
    long t;
    double soc, charged;
    auto operator<=>(const Key&) const = default;
  };

  // Backward induction over the reachable tree; returns the argmax action
  // set (within 1e-7) at every reachable non-terminal state.
  std::map<Key, std::set<std::size_t>> greedy_policy(bool shaped) const {
    std::map<Key, std::set<std::size_t>> policy;
    const double gamma = env->config().shaping.discount;
    std::function<double(const BessState&)> value = [&](const BessState& s) -> double {
      if (s.t >= 3) return 0.0;
      std::vector<double> q(actions.size());
      for (std::size_t i = 0; i < actions.size(); ++i) {
        const auto o = env->preview_from(s, actions[i]);
        const double r = shaped ? o.reward.total() : o.reward.base();
        q[i] = r + gamma * value(o.next);
      }
      const double best = *std::max_element(q.begin(), q.end());
      auto& set = policy[{s.t, s.soc, s.charged_energy}];
      set.clear();
      for (std::size_t i = 0; i < q.size(); ++i) {
        if (q[i] >= best - 1e-7) set.insert(i);
      }
      return best;
    };
    value(env->state());
    return policy;
  }
};

}  // namespace fcas::testing
