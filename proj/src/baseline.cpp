#include "fcas/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "fcas/errors.hpp"

namespace fcas {

namespace {

constexpr double kEps = 1e-9;

bool charge_side(MarketId m) { return is_lower(m); }

double side_limit(MarketId m, const BessParams& p) { return charge_side(m) ? p.max_charge : p.max_discharge; }

std::vector<double> grid_levels(double quantum, int levels, double limit) {
  std::vector<double> out = {0.0};
  for (int k = 1;; ++k) {
    if (levels >= 0 && k > levels) break;
    const double c = quantum * k;
    if (c > limit + kEps) break;
    out.push_back(std::min(c, limit));
  }
  return out;
}

// Discrete schedule: band index into grid.bands and capacity level per market.
struct IndexBid {
  PerMarket<int> band{};
  PerMarket<int> level{};
  int charge = 0;
  int discharge = 0;
};

struct MarketOutcome {
  double price = 0.0;
  double enabled = 0.0;
  double slack = 0.0;  // penalized MW
};

// Single-market clearing of the BESS offer against one scenario's rivals.
// The BESS's own offers respect its joint caps by construction, so markets
// clear independently for it.
class ClearingCache {
 public:
  ClearingCache(const ScenarioSet& set, const BessParams& params, const MarketRules& rules,
                const PerMarket<BandArray>& prices, const BaselineConfig& config,
                const PerMarket<std::vector<double>>& caps)
      : set_(set), params_(params), rules_(rules), prices_(prices), config_(config), caps_(caps) {
    horizon_ = set.scenarios.front().size();
    for (MarketId m : kMarkets) {
      offset_[m] = slots_;
      slots_ += config.grid.bands.size() * caps[m].size();
    }
    store_.resize(set.scenarios.size() * horizon_ * slots_);
  }

  const MarketOutcome& get(std::size_t w, std::size_t t, MarketId m, int band, int level) {
    if (level == 0) band = 0;
    const std::size_t idx = (w * horizon_ + t) * slots_ + offset_[m] +
                            static_cast<std::size_t>(band) * caps_[m].size() + static_cast<std::size_t>(level);
    auto& slot = store_[idx];
    if (!slot) slot = compute(w, t, m, band, level);
    return *slot;
  }

 private:
  MarketOutcome compute(std::size_t w, std::size_t t, MarketId m, int band, int level) const {
    const Scenario& s = set_.scenarios[w];
    const auto& rec = s.intervals[t];
    MarketSnapshot snap = rec.snapshot;
    for (MarketId o : kMarkets) {
      if (o != m) snap.demand[o] = 0.0;
    }
    const double cap = caps_[m][static_cast<std::size_t>(level)];
    const std::size_t b = config_.grid.bands[static_cast<std::size_t>(band)];
    std::vector<BidderBook> books = rec.rivals;
    if (cap > 0.0) {
      BidderBook me;
      me.bidder_id = kSelf;
      me.max_charge = params_.max_charge;
      me.max_discharge = params_.max_discharge;
      me.ladders[m] = single_step_ladder(prices_[m], b, cap);
      books.push_back(std::move(me));
    }
    const auto res = clear_joint(books, snap, s.supply[t], rules_);
    MarketOutcome out;
    out.price = res.markets[m].clearing_price;
    out.enabled = cap > 0.0 ? res.enabled(m, kSelf) : 0.0;
    out.slack = res.markets[m].shortfall;
    if (config_.penalize_oversupply && cap > 0.0 && prices_[m][b] <= out.price + kEps)
      out.slack += std::max(0.0, cap - out.enabled);
    return out;
  }

  static constexpr const char* kSelf = "<baseline>";
  const ScenarioSet& set_;
  const BessParams& params_;
  const MarketRules& rules_;
  const PerMarket<BandArray>& prices_;
  const BaselineConfig& config_;
  const PerMarket<std::vector<double>>& caps_;
  std::size_t horizon_ = 0, slots_ = 0;
  PerMarket<std::size_t> offset_{};
  std::vector<std::optional<MarketOutcome>> store_;
};

// Scenario-wise simulation of a discrete schedule with the environment's
// clip gating, SoC dynamics and base reward.
class Evaluator {
 public:
  Evaluator(const ScenarioSet& set, const BessParams& params, const MarketRules& rules,
            const PerMarket<BandArray>& prices, const BaselineConfig& config)
      : set_(set), params_(params), config_(config), alpha_(degradation_coefficient(params)) {
    for (MarketId m : kMarkets) caps_[m] = config.grid.capacities(side_limit(m, params));
    charge_levels_ = config.grid.energy_setpoints(params.max_charge);
    discharge_levels_ = config.grid.energy_setpoints(params.max_discharge);
    penalty_ = config.penalty_multiplier * rules.price_cap;
    cache_.emplace(set, params, rules, prices, config, caps_);
  }

  const PerMarket<std::vector<double>>& caps() const { return caps_; }
  const std::vector<double>& charge_levels() const { return charge_levels_; }
  const std::vector<double>& discharge_levels() const { return discharge_levels_; }

  bool feasible(const IndexBid& b) const {
    const double lower = cap(b, MarketId::RegulationLower) + cap(b, MarketId::ContingencyLower) +
                         charge_levels_[static_cast<std::size_t>(b.charge)];
    const double raise = cap(b, MarketId::RegulationRaise) + cap(b, MarketId::ContingencyRaise) +
                         discharge_levels_[static_cast<std::size_t>(b.discharge)];
    if (b.charge > 0 && b.discharge > 0) return false;
    return lower <= params_.max_charge + kEps && raise <= params_.max_discharge + kEps;
  }

  double cap(const IndexBid& b, MarketId m) const { return caps_[m][static_cast<std::size_t>(b.level[m])]; }

  // Value of interval t in scenario w; advances `state`.
  double step(std::size_t w, std::size_t t, const IndexBid& b, BessState& state) {
    const bool full = state.soc >= params_.soc_max;
    const bool empty = state.soc <= params_.soc_min;
    double value = 0.0;
    PerMarket<double> enabled{};
    for (MarketId m : kMarkets) {
      const bool blocked = charge_side(m) ? full : empty;
      const auto& o = cache_->get(w, t, m, b.band[m], blocked ? 0 : b.level[m]);
      enabled[m] = o.enabled;
      value += o.price * o.enabled - penalty_ * o.slack;
    }
    scratch_.charge = full ? 0.0 : charge_levels_[static_cast<std::size_t>(b.charge)];
    scratch_.discharge = empty ? 0.0 : discharge_levels_[static_cast<std::size_t>(b.discharge)];
    const BessState next = soc_step(state, scratch_, config_.expected_fr, enabled, params_);
    const Scenario& s = set_.scenarios[w];
    const std::size_t tn = std::min(t + 1, s.size() - 1);
    const double dsoc = next.soc - state.soc;
    const double stored = s.intervals[tn].snapshot.energy_price * dsoc * params_.energy_capacity;
    value += config_.arbitrage_sign == ArbitrageSign::CashFlow ? -stored : stored;
    value -= alpha_ * std::abs(dsoc);
    state = next;
    return value;
  }

  IntervalBid to_bid(const IndexBid& b) const {
    IntervalBid out;
    for (MarketId m : kMarkets) {
      out.band[m] = b.level[m] == 0 ? 0 : config_.grid.bands[static_cast<std::size_t>(b.band[m])];
      out.capacity[m] = cap(b, m);
    }
    out.charge = charge_levels_[static_cast<std::size_t>(b.charge)];
    out.discharge = discharge_levels_[static_cast<std::size_t>(b.discharge)];
    return out;
  }

  // Nearest grid indices for an arbitrary bid; throws if off-grid.
  IndexBid from_bid(const IntervalBid& bid) const {
    IndexBid out;
    auto find_level = [](const std::vector<double>& levels, double v) {
      for (std::size_t i = 0; i < levels.size(); ++i) {
        if (std::abs(levels[i] - v) <= 1e-6) return static_cast<int>(i);
      }
      throw InvalidInput("bid quantity is not on the decision grid");
    };
    for (MarketId m : kMarkets) {
      out.level[m] = find_level(caps_[m], bid.capacity[m]);
      if (out.level[m] == 0) continue;
      const auto& bands = config_.grid.bands;
      const auto it = std::find(bands.begin(), bands.end(), bid.band[m]);
      if (it == bands.end()) throw InvalidInput("bid band is not on the decision grid");
      out.band[m] = static_cast<int>(it - bands.begin());
    }
    out.charge = find_level(charge_levels_, bid.charge);
    out.discharge = find_level(discharge_levels_, bid.discharge);
    return out;
  }

 private:
  const ScenarioSet& set_;
  const BessParams& params_;
  const BaselineConfig& config_;
  double alpha_;
  double penalty_ = 0.0;
  PerMarket<std::vector<double>> caps_;
  std::vector<double> charge_levels_, discharge_levels_;
  std::optional<ClearingCache> cache_;
  ActionVector scratch_;
};

void check_inputs(const ScenarioSet& set, const BessParams& params, const MarketRules& rules,
                  const PerMarket<BandArray>& prices, const BaselineConfig& config) {
  set.validate();
  params.validate();
  rules.validate();
  config.grid.validate();
  for (MarketId m : kMarkets) {
    if (!validate_ladder(BandLadder{prices[m], {}}, rules).empty())
      throw InvalidInput("invalid bidding price template for market " + std::string(market_code(m)));
  }
  if (!(config.penalty_multiplier >= 0.0)) throw InvalidInput("penalty multiplier must be non-negative");
  if (config.max_passes < 1) throw InvalidInput("max_passes must be at least 1");
}

double schedule_value(Evaluator& ev, const ScenarioSet& set, const std::vector<IndexBid>& schedule) {
  double total = 0.0;
  for (std::size_t w = 0; w < set.scenarios.size(); ++w) {
    BessState st;
    double v = 0.0;
    for (std::size_t t = 0; t < schedule.size(); ++t) v += ev.step(w, t, schedule[t], st);
    total += set.probability(w) * v;
  }
  return total;
}

}  // namespace

ScenarioSet ScenarioSet::uniform(std::vector<Scenario> scenarios) { return {std::move(scenarios), {}}; }

void ScenarioSet::validate() const {
  if (scenarios.empty()) throw InvalidInput("scenario set is empty");
  const std::size_t horizon = scenarios.front().size();
  if (horizon == 0) throw InvalidInput("scenarios have no intervals");
  for (const auto& s : scenarios) {
    if (s.size() != horizon || s.supply.size() != horizon) throw InvalidInput("scenarios must share one horizon");
  }
  if (!probabilities.empty()) {
    if (probabilities.size() != scenarios.size()) throw InvalidInput("one probability per scenario required");
    double sum = 0.0;
    for (double p : probabilities) {
      if (!(p >= 0.0)) throw InvalidInput("scenario probabilities must be non-negative");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw InvalidInput("scenario probabilities must sum to 1");
  }
}

double ScenarioSet::probability(std::size_t i) const {
  return probabilities.empty() ? 1.0 / static_cast<double>(scenarios.size()) : probabilities[i];
}

void DecisionGrid::validate() const {
  if (bands.empty()) throw InvalidInput("decision grid has no price bands");
  for (auto b : bands) {
    if (b >= kBands) throw InvalidInput("decision grid band out of range");
  }
  if (!(quantum > 0.0)) throw InvalidInput("capacity quantum must be positive");
  if (levels == 0 && energy_levels == 0) throw InvalidInput("decision grid is empty");
}

std::vector<double> DecisionGrid::capacities(double limit) const { return grid_levels(quantum, levels, limit); }

std::vector<double> DecisionGrid::energy_setpoints(double limit) const {
  return grid_levels(quantum, energy_levels, limit);
}

ActionVector bid_action(const IntervalBid& bid, const PerMarket<BandArray>& prices) {
  ActionVector a;
  a.charge = bid.charge;
  a.discharge = bid.discharge;
  for (MarketId m : kMarkets) a.bands[m] = single_step_ladder(prices[m], bid.band[m], bid.capacity[m]).capacities;
  return a;
}

ActionVector DayAheadSolution::action(std::size_t t) const { return bid_action(intervals.at(t), prices); }

BidsByInterval DayAheadSolution::to_bids(const std::string& bidder_id, const BessParams& params) const {
  BidsByInterval out;
  for (std::size_t t = 0; t < intervals.size(); ++t) {
    const auto& bid = intervals[t];
    BidderBook book;
    book.bidder_id = bidder_id;
    book.max_charge = params.max_charge;
    book.max_discharge = params.max_discharge;
    book.energy_charge = bid.charge;
    book.energy_discharge = bid.discharge;
    for (MarketId m : kMarkets) book.ladders[m] = single_step_ladder(prices[m], bid.band[m], bid.capacity[m]);
    out[static_cast<long>(t)].push_back(std::move(book));
  }
  return out;
}

bool RealTimeAdjustment::is_zero() const {
  for (double d : delta_capacity) {
    if (d != 0.0) return false;
  }
  return delta_charge == 0.0 && delta_discharge == 0.0;
}

IntervalBid RealTimeAdjustment::apply(const IntervalBid& base) const {
  IntervalBid out = base;
  for (MarketId m : kMarkets) out.capacity[m] = std::max(0.0, base.capacity[m] + delta_capacity[m]);
  out.charge = std::max(0.0, base.charge + delta_charge);
  out.discharge = std::max(0.0, base.discharge + delta_discharge);
  return out;
}

double day_ahead_objective(const DayAheadSolution& solution, const ScenarioSet& scenarios, const BessParams& params,
                           const MarketRules& rules, const BaselineConfig& config) {
  check_inputs(scenarios, params, rules, solution.prices, config);
  if (solution.size() != scenarios.scenarios.front().size()) throw InvalidInput("schedule and scenario horizons differ");
  Evaluator ev(scenarios, params, rules, solution.prices, config);
  std::vector<IndexBid> schedule;
  for (const auto& bid : solution.intervals) {
    auto ib = ev.from_bid(bid);
    if (!ev.feasible(ib)) throw InvalidInput("schedule violates the joint power caps");
    schedule.push_back(ib);
  }
  return schedule_value(ev, scenarios, schedule);
}

DayAheadSolution solve_day_ahead(const ScenarioSet& scenarios, const BessParams& params, const MarketRules& rules,
                                 const PerMarket<BandArray>& prices, const BaselineConfig& config) {
  check_inputs(scenarios, params, rules, prices, config);
  Evaluator ev(scenarios, params, rules, prices, config);
  const std::size_t horizon = scenarios.scenarios.front().size();
  const std::size_t n_scen = scenarios.scenarios.size();
  const int n_bands = static_cast<int>(config.grid.bands.size());

  std::vector<IndexBid> schedule(horizon);
  // states[w][t]: state entering interval t; prefix[w][t]: value of intervals before t.
  std::vector<std::vector<BessState>> states(n_scen, std::vector<BessState>(horizon + 1));
  std::vector<std::vector<double>> prefix(n_scen, std::vector<double>(horizon + 1, 0.0));
  auto refresh = [&](std::size_t from) {
    for (std::size_t w = 0; w < n_scen; ++w) {
      BessState st = states[w][from];
      for (std::size_t t = from; t < horizon; ++t) {
        prefix[w][t + 1] = prefix[w][t] + ev.step(w, t, schedule[t], st);
        states[w][t + 1] = st;
      }
    }
  };
  auto total_value = [&]() {
    double v = 0.0;
    for (std::size_t w = 0; w < n_scen; ++w) v += scenarios.probability(w) * prefix[w][horizon];
    return v;
  };
  auto candidate_value = [&](std::size_t t, const IndexBid& cand) {
    double v = 0.0;
    for (std::size_t w = 0; w < n_scen; ++w) {
      BessState st = states[w][t];
      double acc = prefix[w][t] + ev.step(w, t, cand, st);
      for (std::size_t u = t + 1; u < horizon; ++u) acc += ev.step(w, u, schedule[u], st);
      v += scenarios.probability(w) * acc;
    }
    return v;
  };

  refresh(0);
  double best = total_value();
  int passes = 0;

  // Options for one market: level 0, or any (band, level >= 1).
  auto market_options = [&](MarketId m) {
    std::vector<std::pair<int, int>> opts = {{0, 0}};
    for (int b = 0; b < n_bands; ++b) {
      for (int l = 1; l < static_cast<int>(ev.caps()[m].size()); ++l) opts.emplace_back(b, l);
    }
    return opts;
  };
  PerMarket<std::vector<std::pair<int, int>>> options;
  for (MarketId m : kMarkets) options[m] = market_options(m);
  const std::pair<MarketId, MarketId> sides[] = {{MarketId::RegulationLower, MarketId::ContingencyLower},
                                                 {MarketId::RegulationRaise, MarketId::ContingencyRaise}};

  for (passes = 1; passes <= config.max_passes; ++passes) {
    bool improved = false;
    for (std::size_t t = 0; t < horizon; ++t) {
      auto try_candidate = [&](const IndexBid& cand) {
        if (!ev.feasible(cand)) return;
        const double v = candidate_value(t, cand);
        if (v > best + kEps * (1.0 + std::abs(best))) {
          schedule[t] = cand;
          refresh(t);
          best = total_value();
          improved = true;
        }
      };
      for (MarketId m : kMarkets) {
        for (const auto& [b, l] : options[m]) {
          IndexBid cand = schedule[t];
          cand.band[m] = b;
          cand.level[m] = l;
          try_candidate(cand);
        }
      }
      for (const auto& [m1, m2] : sides) {
        if (options[m1].size() * options[m2].size() > config.pair_move_limit) continue;
        for (const auto& [b1, l1] : options[m1]) {
          for (const auto& [b2, l2] : options[m2]) {
            IndexBid cand = schedule[t];
            cand.band[m1] = b1;
            cand.level[m1] = l1;
            cand.band[m2] = b2;
            cand.level[m2] = l2;
            try_candidate(cand);
          }
        }
      }
      for (int c = 0; c < static_cast<int>(ev.charge_levels().size()); ++c) {
        IndexBid cand = schedule[t];
        cand.charge = c;
        cand.discharge = 0;
        try_candidate(cand);
      }
      for (int d = 1; d < static_cast<int>(ev.discharge_levels().size()); ++d) {
        IndexBid cand = schedule[t];
        cand.charge = 0;
        cand.discharge = d;
        try_candidate(cand);
      }
    }
    if (!improved) break;
  }

  DayAheadSolution sol;
  sol.prices = prices;
  sol.expected_objective = best;
  sol.passes = std::min(passes, config.max_passes);
  for (const auto& b : schedule) sol.intervals.push_back(ev.to_bid(b));
  return sol;
}

RealTimeAdjustment solve_real_time(const DayAheadSolution& da, std::size_t t, const ForecastRow& forecast,
                                   const BessState& state, const BessParams& params, const MarketRules& rules,
                                   const BaselineConfig& config) {
  params.validate();
  rules.validate();
  config.grid.validate();
  if (t >= da.size()) throw InvalidInput("interval outside the day-ahead schedule");
  RealTimeAdjustment zero;
  if (!std::isfinite(state.soc) || state.soc < params.soc_min - kEps || state.soc > params.soc_max + kEps) {
    zero.diagnostic = "state of charge " + std::to_string(state.soc) + " outside [" +
                      std::to_string(params.soc_min) + ", " + std::to_string(params.soc_max) + "]";
    return zero;
  }
  const IntervalBid& base = da.intervals[t];
  const bool full = state.soc >= params.soc_max;
  const bool empty = state.soc <= params.soc_min;
  const double alpha = degradation_coefficient(params);
  const auto& u = config.expected_fr.utilization;

  // Per side: enumerate (regulation, contingency, energy) levels within the cap.
  struct SideOption {
    double reg = 0.0, con = 0.0, energy = 0.0;
    double revenue = 0.0;
    double flow = 0.0;  // MW into (charge side) or out of the battery
    double idle = 0.0;
    double deviation = 0.0;
  };
  auto enumerate_side = [&](MarketId reg, MarketId con, bool lower) {
    std::vector<SideOption> out;
    const double limit = lower ? params.max_charge : params.max_discharge;
    const bool blocked = lower ? full : empty;
    const auto caps = config.grid.capacities(limit);
    const auto energy = config.grid.energy_setpoints(limit);
    auto earns = [&](MarketId m) { return da.prices[m][base.band[m]] <= forecast.price[m] + kEps; };
    for (double cr : caps) {
      for (double cc : caps) {
        for (double e : energy) {
          if (cr + cc + e > limit + kEps) continue;
          if (blocked && (cr > 0.0 || cc > 0.0 || e > 0.0)) continue;
          SideOption o{cr, cc, e};
          const double en_r = earns(reg) ? std::min(cr, std::max(forecast.demand[reg], 0.0)) : 0.0;
          const double en_c = earns(con) ? std::min(cc, std::max(forecast.demand[con], 0.0)) : 0.0;
          o.revenue = forecast.price[reg] * en_r + forecast.price[con] * en_c;
          o.flow = e + u[reg] * en_r + u[con] * en_c;
          o.idle = (cr - en_r) + (cc - en_c);
          const double base_e = lower ? base.charge : base.discharge;
          o.deviation = std::abs(cr - base.capacity[reg]) + std::abs(cc - base.capacity[con]) + std::abs(e - base_e);
          out.push_back(o);
        }
      }
    }
    return out;
  };
  const auto lower = enumerate_side(MarketId::RegulationLower, MarketId::ContingencyLower, true);
  const auto raise = enumerate_side(MarketId::RegulationRaise, MarketId::ContingencyRaise, false);

  const SideOption* best_l = nullptr;
  const SideOption* best_r = nullptr;
  double best_obj = -std::numeric_limits<double>::infinity(), best_idle = 0.0, best_dev = 0.0;
  for (const auto& l : lower) {
    for (const auto& r : raise) {
      if (l.energy > 0.0 && r.energy > 0.0) continue;
      const double delta = (l.flow * params.eta_charge - r.flow / params.eta_discharge) * params.interval_hours /
                           params.energy_capacity;
      const double next = std::clamp(state.soc + delta, params.soc_min, params.soc_max);
      const double dsoc = next - state.soc;
      const double stored = forecast.energy_price * dsoc * params.energy_capacity;
      const double obj = l.revenue + r.revenue +
                         (config.arbitrage_sign == ArbitrageSign::CashFlow ? -stored : stored) -
                         alpha * std::abs(dsoc);
      const double idle = l.idle + r.idle;
      const double dev = l.deviation + r.deviation;
      const double tol = kEps * (1.0 + std::abs(best_obj));
      bool better = obj > best_obj + tol;
      if (!better && std::abs(obj - best_obj) <= tol) {
        better = idle < best_idle - kEps || (std::abs(idle - best_idle) <= kEps && dev < best_dev - kEps);
      }
      if (!best_l || better) {
        best_l = &l;
        best_r = &r;
        best_obj = obj;
        best_idle = idle;
        best_dev = dev;
      }
    }
  }

  RealTimeAdjustment adj;
  adj.objective = best_obj;
  adj.delta_capacity[MarketId::RegulationLower] = best_l->reg - base.capacity[MarketId::RegulationLower];
  adj.delta_capacity[MarketId::ContingencyLower] = best_l->con - base.capacity[MarketId::ContingencyLower];
  adj.delta_capacity[MarketId::RegulationRaise] = best_r->reg - base.capacity[MarketId::RegulationRaise];
  adj.delta_capacity[MarketId::ContingencyRaise] = best_r->con - base.capacity[MarketId::ContingencyRaise];
  adj.delta_charge = best_l->energy - base.charge;
  adj.delta_discharge = best_r->energy - base.discharge;
  for (double& d : adj.delta_capacity) {
    if (std::abs(d) < kEps) d = 0.0;
  }
  if (std::abs(adj.delta_charge) < kEps) adj.delta_charge = 0.0;
  if (std::abs(adj.delta_discharge) < kEps) adj.delta_discharge = 0.0;
  return adj;
}

BilevelResult bilevel_iterate(std::span<const BidderBook> rivals, const DayAheadSolution& da, std::size_t t,
                              const MarketSnapshot& snapshot, const SupplyVariation& supply, const BessState& state,
                              const BessParams& params, const MarketRules& rules, const BaselineConfig& config,
                              int limit, const std::string& bidder_id) {
  if (limit < 1) throw InvalidInput("bilevel iteration limit must be at least 1");
  if (t >= da.size()) throw InvalidInput("interval outside the day-ahead schedule");
  BilevelResult result;
  RealTimeAdjustment previous;
  IntervalBid current = da.intervals[t];
  for (int k = 1; k <= limit; ++k) {
    std::vector<BidderBook> books(rivals.begin(), rivals.end());
    BidderBook me;
    me.bidder_id = bidder_id;
    me.max_charge = params.max_charge;
    me.max_discharge = params.max_discharge;
    const ActionVector a = clip_action(bid_action(current, da.prices), state, params);
    me.energy_charge = a.charge;
    me.energy_discharge = a.discharge;
    for (MarketId m : kMarkets) me.ladders[m] = {da.prices[m], a.bands[m]};
    books.push_back(std::move(me));
    result.clearing = clear_joint(books, snapshot, supply, rules);

    ForecastRow seen{snapshot.energy_price, result.clearing.prices(), snapshot.demand};
    result.adjustment = solve_real_time(da, t, seen, state, params, rules, config);
    result.iterations = k;

    double moved = std::max(std::abs(result.adjustment.delta_charge - previous.delta_charge),
                            std::abs(result.adjustment.delta_discharge - previous.delta_discharge));
    for (MarketId m : kMarkets)
      moved = std::max(moved, std::abs(result.adjustment.delta_capacity[m] - previous.delta_capacity[m]));
    previous = result.adjustment;
    current = result.adjustment.apply(da.intervals[t]);
    if (moved < config.grid.quantum) {
      result.converged = true;
      break;
    }
  }
  return result;
}

double run_baseline_episode(BessEnv& env, const DayAheadSolution& da, const BaselineConfig& config, RebidMode mode,
                            int bilevel_limit) {
  if (static_cast<long>(da.size()) != env.horizon()) throw InvalidInput("schedule and episode lengths differ");
  if (!(da.prices == env.config().price_template))
    throw InvalidInput("schedule prices differ from the environment's price template");
  double profit = 0.0;
  while (!env.done()) {
    const auto t = static_cast<std::size_t>(env.state().t);
    IntervalBid bid = da.intervals[t];
    if (mode == RebidMode::Forecast) {
      const auto adj = solve_real_time(da, t, env.forecast_row(), env.state(), env.config().params,
                                       env.config().rules, config);
      bid = adj.apply(bid);
    } else if (mode == RebidMode::Bilevel) {
      const auto& record = env.scenario().intervals[t];
      const auto result = bilevel_iterate(record.rivals, da, t, record.snapshot, env.scenario().supply[t], env.state(),
                                          env.config().params, env.config().rules, config, bilevel_limit,
                                          env.config().bidder_id);
      bid = result.adjustment.apply(bid);
    }
    const auto outcome = env.preview(bid_action(bid, da.prices));
    profit += outcome.reward.base();
    env.commit(outcome);
  }
  return profit;
}

void write_day_ahead_csv(std::ostream& out, const DayAheadSolution& da, const BessParams& params,
                         const std::string& bidder_id) {
  write_bid_csv(out, da.to_bids(bidder_id, params), true);
}

}  // namespace fcas
