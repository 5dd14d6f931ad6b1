#include "fcas/clearing.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "fcas/errors.hpp"

namespace fcas {

double MarketClearing::total_enabled() const {
  double s = 0.0;
  for (const auto& [id, mw] : enabled) s += mw;
  return s;
}

double ClearingResult::enabled(MarketId m, const std::string& bidder_id) const {
  const auto& e = markets[m].enabled;
  const auto it = e.find(bidder_id);
  return it == e.end() ? 0.0 : it->second;
}

double ClearingResult::revenue(MarketId m, const std::string& bidder_id) const {
  return markets[m].clearing_price * enabled(m, bidder_id);
}

PerMarket<double> ClearingResult::prices() const {
  PerMarket<double> p;
  for (MarketId m : kMarkets) p[m] = markets[m].clearing_price;
  return p;
}

double ClearingResult::total_cost(const PerMarket<double>& demand) const {
  double c = 0.0;
  for (MarketId m : kMarkets) c += markets[m].clearing_price * demand[m];
  return c;
}

double SupplyVariation::positive(MarketId m) const { return std::max(value[m], 0.0); }
double SupplyVariation::negative(MarketId m) const { return std::max(-value[m], 0.0); }

namespace {

struct Increment {
  double price;
  std::size_t rank;  // position of the bidder in id order
  std::size_t band;
  double amount;
};

// Bidder indices sorted by id; ties in price resolve in this order.
std::vector<std::size_t> id_order(std::span<const BidderBook> books) {
  std::vector<std::size_t> order(books.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return books[a].bidder_id < books[b].bidder_id; });
  return order;
}

void validate_inputs(std::span<const BidderBook> books, const MarketSnapshot& snapshot, const MarketRules& rules) {
  rules.validate();
  for (const auto& b : books) b.validate(rules);
  for (MarketId m : kMarkets) {
    if (!(snapshot.demand[m] >= 0.0)) throw InvalidInput("demand must be non-negative");
  }
}

std::vector<Increment> sorted_increments(std::span<const BidderBook> books, const std::vector<std::size_t>& order,
                                         MarketId m, const std::vector<std::size_t>* allowed_band) {
  std::vector<Increment> incs;
  incs.reserve(books.size() * kBands);
  for (std::size_t r = 0; r < order.size(); ++r) {
    const std::size_t n = order[r];
    const auto& ladder = books[n].ladders[m];
    const std::size_t top = allowed_band ? (*allowed_band)[n] : kBands;
    double prev = 0.0;
    for (std::size_t k = 0; k < kBands && k < top; ++k) {
      const double inc = ladder.capacities[k] - prev;
      if (inc > 0.0) incs.push_back({ladder.prices[k], r, k, inc});
      prev = std::max(prev, ladder.capacities[k]);
    }
  }
  std::stable_sort(incs.begin(), incs.end(), [](const Increment& a, const Increment& b) {
    if (a.price != b.price) return a.price < b.price;
    if (a.rank != b.rank) return a.rank < b.rank;
    return a.band < b.band;
  });
  return incs;
}

// Merit-order fill of one market. `allowed_band[n]` caps the bands a bidder may
// offer (kBands = all); headroom is consumed in place. `limit(n)`, when set,
// caps what bidder n may still take.
MarketClearing fill_market(std::span<const BidderBook> books, const std::vector<std::size_t>& order,
                           MarketId m, double residual, std::vector<double>& headroom,
                           const std::vector<std::size_t>* allowed_band, const MarketRules& rules,
                           const std::function<double(std::size_t, const std::vector<double>&)>& limit = {}) {
  MarketClearing out;
  for (const auto& b : books) out.enabled[b.bidder_id] = 0.0;
  if (residual < -kTolerance || residual <= kTolerance) return out;

  const auto incs = sorted_increments(books, order, m, allowed_band);
  std::vector<double> taken(books.size(), 0.0);
  double remaining = residual;
  for (const auto& inc : incs) {
    if (remaining <= kTolerance) break;
    const std::size_t n = order[inc.rank];
    double avail = headroom[n] - taken[n];
    if (limit) avail = std::min(avail, limit(n, taken));
    if (avail <= kTolerance) continue;
    const double take = std::min({inc.amount, avail, remaining});
    taken[n] += take;
    remaining -= take;
    out.clearing_price = std::max(out.clearing_price, inc.price);
    out.marginal_bidder = books[n].bidder_id;
  }
  for (std::size_t n = 0; n < books.size(); ++n) {
    out.enabled[books[n].bidder_id] = taken[n];
    headroom[n] -= taken[n];
  }
  if (remaining > kTolerance) {
    out.shortfall = remaining;
    out.clearing_price = rules.price_cap;
  }
  return out;
}

void init_headroom(std::span<const BidderBook> books, std::vector<double>& charge, std::vector<double>& discharge) {
  charge.resize(books.size());
  discharge.resize(books.size());
  for (std::size_t n = 0; n < books.size(); ++n) {
    charge[n] = std::max(books[n].charge_headroom(), 0.0);
    discharge[n] = std::max(books[n].discharge_headroom(), 0.0);
  }
}

std::vector<double> band_prices(std::span<const BidderBook> books, MarketId m) {
  std::vector<double> out;
  for (const auto& b : books) {
    double prev = 0.0;
    for (std::size_t k = 0; k < kBands; ++k) {
      if (b.ladders[m].capacities[k] > prev) out.push_back(b.ladders[m].prices[k]);
      prev = std::max(prev, b.ladders[m].capacities[k]);
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// Capacity of the bands priced at or below p.
double offered_at(const BandLadder& ladder, double p) {
  double c = 0.0;
  for (std::size_t k = 0; k < kBands && ladder.prices[k] <= p; ++k) c = std::max(c, ladder.capacities[k]);
  return c;
}

// Exact clearing of the two markets sharing one side's headroom, used when
// the sequential fill is beaten. A uniform price pair (p0, p1) is feasible iff
// sum min(a, h) >= D0, sum min(b, h) >= D1 and sum min(a + b, h) >= D0 + D1,
// with a, b each bidder's capacity offered at or below the price.
void co_clear_side(std::span<const BidderBook> books, const std::vector<std::size_t>& order, MarketId m0,
                   MarketId m1, const MarketSnapshot& snapshot, const SupplyVariation& supply,
                   const std::vector<double>& headroom, const MarketRules& rules, ClearingResult& result) {
  const double d0 = snapshot.demand[m0] - supply.value[m0];
  const double d1 = snapshot.demand[m1] - supply.value[m1];
  if (d0 <= kTolerance || d1 <= kTolerance) return;
  const double seq_cost = result.markets[m0].clearing_price * snapshot.demand[m0] +
                          result.markets[m1].clearing_price * snapshot.demand[m1];
  const auto p0s = band_prices(books, m0), p1s = band_prices(books, m1);
  const std::size_t n = books.size();
  std::vector<std::vector<double>> a(p0s.size(), std::vector<double>(n)), b(p1s.size(), std::vector<double>(n));
  for (std::size_t i = 0; i < p0s.size(); ++i)
    for (std::size_t j = 0; j < n; ++j) a[i][j] = offered_at(books[j].ladders[m0], p0s[i]);
  for (std::size_t i = 0; i < p1s.size(); ++i)
    for (std::size_t j = 0; j < n; ++j) b[i][j] = offered_at(books[j].ladders[m1], p1s[i]);

  std::optional<std::pair<std::size_t, std::size_t>> best;
  double best_cost = seq_cost - kTolerance * std::max(1.0, seq_cost);
  for (std::size_t i = 0; i < p0s.size(); ++i) {
    double s0 = 0.0;
    for (std::size_t j = 0; j < n; ++j) s0 += std::min(a[i][j], headroom[j]);
    if (s0 < d0 - kTolerance) continue;
    for (std::size_t k = 0; k < p1s.size(); ++k) {
      const double cost = p0s[i] * snapshot.demand[m0] + p1s[k] * snapshot.demand[m1];
      if (!(cost < best_cost)) continue;
      double s1 = 0.0, both = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        s1 += std::min(b[k][j], headroom[j]);
        both += std::min(a[i][j] + b[k][j], headroom[j]);
      }
      if (s1 < d1 - kTolerance || both < d0 + d1 - kTolerance) continue;
      best = {i, k};
      best_cost = cost;
    }
  }
  if (!best) return;

  const auto& bk = b[best->second];
  std::vector<std::size_t> allowed0(n), allowed1(n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < kBands; ++k) {
      allowed0[j] += books[j].ladders[m0].prices[k] <= p0s[best->first];
      allowed1[j] += books[j].ladders[m1].prices[k] <= p1s[best->second];
    }
  }
  // m0 takes from a bidder only what m1 can spare: what m1 could still
  // collect must stay at or above d1.
  auto head = headroom;
  auto limit = [&](std::size_t j, const std::vector<double>& taken) {
    double spare = -d1;
    for (std::size_t q = 0; q < n; ++q) spare += std::min(bk[q], head[q] - taken[q]);
    return std::max(0.0, head[j] - taken[j] - bk[j]) + std::max(0.0, spare);
  };
  auto r0 = fill_market(books, order, m0, d0, head, &allowed0, rules, limit);
  auto r1 = fill_market(books, order, m1, d1, head, &allowed1, rules);
  if (r0.shortfall > 0.0 || r1.shortfall > 0.0) return;
  result.markets[m0] = std::move(r0);
  result.markets[m1] = std::move(r1);
}

}  // namespace

ClearingResult clear_joint(std::span<const BidderBook> books, const MarketSnapshot& snapshot,
                           const SupplyVariation& supply, const MarketRules& rules) {
  validate_inputs(books, snapshot, rules);
  const auto order = id_order(books);
  std::vector<double> charge, discharge;
  init_headroom(books, charge, discharge);

  ClearingResult result;
  result.t = snapshot.t;
  for (MarketId m : kMarkets) {
    auto& head = is_lower(m) ? charge : discharge;
    result.markets[m] =
        fill_market(books, order, m, snapshot.demand[m] - supply.value[m], head, nullptr, rules);
  }
  std::vector<double> charge0, discharge0;
  init_headroom(books, charge0, discharge0);
  co_clear_side(books, order, MarketId::RegulationLower, MarketId::ContingencyLower, snapshot, supply, charge0, rules,
                result);
  co_clear_side(books, order, MarketId::RegulationRaise, MarketId::ContingencyRaise, snapshot, supply, discharge0,
                rules, result);
  return result;
}

SupplyVariation estimate_supply_variation(std::span<const BidderBook> books,
                                          const PerMarket<double>& clearing_price,
                                          const PerMarket<double>& demand, const MarketRules& rules) {
  rules.validate();
  for (const auto& b : books) b.validate(rules);
  SupplyVariation s;
  for (MarketId m : kMarkets) {
    const double cp = clearing_price[m];
    if (!(cp >= 0.0 && cp <= rules.price_cap)) throw InvalidInput("clearing price outside [0, price_cap]");
    double supplied = 0.0;
    for (const auto& b : books) {
      const auto& ladder = b.ladders[m];
      double cap = 0.0;
      // Closed lower bracket: a band priced exactly at cp is selected.
      for (std::size_t k = 0; k < kBands; ++k) {
        if (ladder.prices[k] <= cp) cap = ladder.capacities[k];
      }
      supplied += cap;
    }
    s.value[m] = demand[m] - supplied;
  }
  return s;
}

namespace {

// One selectable option per distinct capacity step (the cheapest band reaching it).
struct Option {
  std::size_t band;  // 0-based band index; kBands = "no band selected"
  double price;
  double capacity;
};

std::vector<Option> options_for(const BandLadder& ladder) {
  std::vector<Option> opts = {{kBands, 0.0, 0.0}};
  double prev = 0.0;
  for (std::size_t k = 0; k < kBands; ++k) {
    if (ladder.capacities[k] > prev + kTolerance) {
      opts.push_back({k, ladder.prices[k], ladder.capacities[k]});
      prev = ladder.capacities[k];
    }
  }
  return opts;
}

// Max flow on a 2-market / N-bidder network. Returns per-market per-bidder
// flows or nothing if the residual demands cannot both be met.
std::optional<std::array<std::vector<double>, 2>> flow_assign(const std::array<double, 2>& residual,
                                                               const std::array<std::vector<double>, 2>& cap,
                                                               const std::vector<double>& head) {
  const std::size_t n = head.size();
  // Nodes: 0 source, 1..2 markets, 3..3+n-1 bidders, 3+n sink.
  const std::size_t nodes = 4 + n;
  const std::size_t sink = 3 + n;
  std::vector<std::vector<double>> c(nodes, std::vector<double>(nodes, 0.0));
  for (std::size_t j = 0; j < 2; ++j) {
    c[0][1 + j] = std::max(residual[j], 0.0);
    for (std::size_t b = 0; b < n; ++b) c[1 + j][3 + b] = cap[j][b];
  }
  for (std::size_t b = 0; b < n; ++b) c[3 + b][sink] = std::max(head[b], 0.0);
  auto residual_cap = c;
  double total = 0.0;
  while (true) {
    std::vector<long> parent(nodes, -1);
    parent[0] = 0;
    std::vector<std::size_t> queue = {0};
    for (std::size_t qi = 0; qi < queue.size() && parent[sink] < 0; ++qi) {
      const std::size_t u = queue[qi];
      for (std::size_t v = 0; v < nodes; ++v) {
        if (parent[v] < 0 && residual_cap[u][v] > 1e-12) {
          parent[v] = static_cast<long>(u);
          queue.push_back(v);
        }
      }
    }
    if (parent[sink] < 0) break;
    double bottleneck = std::numeric_limits<double>::infinity();
    for (std::size_t v = sink; v != 0; v = static_cast<std::size_t>(parent[v])) {
      bottleneck = std::min(bottleneck, residual_cap[static_cast<std::size_t>(parent[v])][v]);
    }
    for (std::size_t v = sink; v != 0; v = static_cast<std::size_t>(parent[v])) {
      const auto u = static_cast<std::size_t>(parent[v]);
      residual_cap[u][v] -= bottleneck;
      residual_cap[v][u] += bottleneck;
    }
    total += bottleneck;
  }
  if (total + kTolerance < std::max(residual[0], 0.0) + std::max(residual[1], 0.0)) return std::nullopt;
  std::array<std::vector<double>, 2> flows{std::vector<double>(n), std::vector<double>(n)};
  for (std::size_t j = 0; j < 2; ++j) {
    for (std::size_t b = 0; b < n; ++b) flows[j][b] = c[1 + j][3 + b] - residual_cap[1 + j][3 + b];
  }
  return flows;
}

struct SideChoice {
  double cost = std::numeric_limits<double>::infinity();
  double cp_sum = std::numeric_limits<double>::infinity();
  double capacity = -1.0;
  std::vector<std::size_t> pick;  // option index per (market j, bidder n) -> j*n_bidders + n
};

}  // namespace

ClearingResult oracle_clear_exact(std::span<const BidderBook> books, const MarketSnapshot& snapshot,
                                  const SupplyVariation& supply, const MarketRules& rules) {
  validate_inputs(books, snapshot, rules);
  if (books.size() > 4) throw InvalidInput("oracle_clear_exact: more than 4 bidders");
  for (const auto& b : books) {
    for (MarketId m : kMarkets) {
      if (effective_step_count(offer_curve(b.ladders[m], rules)) > 3)
        throw InvalidInput("oracle_clear_exact: ladder with more than 3 capacity steps");
    }
  }
  const std::size_t nb = books.size();
  const auto order = id_order(books);
  std::vector<double> charge, discharge;
  init_headroom(books, charge, discharge);

  ClearingResult result;
  result.t = snapshot.t;

  const std::array<std::array<MarketId, 2>, 2> sides = {
      {{MarketId::RegulationLower, MarketId::ContingencyLower}, {MarketId::RegulationRaise, MarketId::ContingencyRaise}}};

  for (std::size_t side = 0; side < 2; ++side) {
    const auto& pair = sides[side];
    const auto& head = side == 0 ? charge : discharge;
    std::array<double, 2> residual{};
    std::array<bool, 2> needed{};
    std::array<std::vector<std::vector<Option>>, 2> opts;
    for (std::size_t j = 0; j < 2; ++j) {
      const MarketId m = pair[j];
      residual[j] = snapshot.demand[m] - supply.value[m];
      needed[j] = residual[j] > kTolerance;
      opts[j].resize(nb);
      for (std::size_t n = 0; n < nb; ++n) {
        opts[j][n] = needed[j] ? options_for(books[n].ladders[m]) : std::vector<Option>{{kBands, 0.0, 0.0}};
      }
    }

    // Odometer over (market, bidder) option indices.
    const std::size_t slots = 2 * nb;
    std::vector<std::size_t> idx(slots, 0);
    SideChoice best;
    while (true) {
      std::array<double, 2> cp{0.0, 0.0};
      std::array<std::vector<double>, 2> bc{std::vector<double>(nb), std::vector<double>(nb)};
      double cap_total = 0.0;
      for (std::size_t j = 0; j < 2; ++j) {
        for (std::size_t n = 0; n < nb; ++n) {
          const auto& o = opts[j][n][idx[j * nb + n]];
          bc[j][n] = o.capacity;
          cap_total += o.capacity;
          if (o.band < kBands) cp[j] = std::max(cp[j], o.price);
        }
      }
      // Cut conditions of the 2-market transportation problem.
      double s0 = 0.0, s1 = 0.0, s01 = 0.0;
      for (std::size_t n = 0; n < nb; ++n) {
        s0 += std::min(bc[0][n], head[n]);
        s1 += std::min(bc[1][n], head[n]);
        s01 += std::min(bc[0][n] + bc[1][n], head[n]);
      }
      const double r0 = needed[0] ? residual[0] : 0.0;
      const double r1 = needed[1] ? residual[1] : 0.0;
      const bool feasible = r0 <= s0 + kTolerance && r1 <= s1 + kTolerance && r0 + r1 <= s01 + kTolerance;
      if (feasible) {
        const double cost = cp[0] * snapshot.demand[pair[0]] + cp[1] * snapshot.demand[pair[1]];
        const double cp_sum = cp[0] + cp[1];
        bool better = cost < best.cost - kTolerance;
        if (!better && std::abs(cost - best.cost) <= kTolerance) {
          better = cp_sum < best.cp_sum - kTolerance ||
                   (std::abs(cp_sum - best.cp_sum) <= kTolerance && cap_total > best.capacity + kTolerance);
        }
        if (better) {
          best.cost = cost;
          best.cp_sum = cp_sum;
          best.capacity = cap_total;
          best.pick = idx;
        }
      }
      std::size_t s = 0;
      while (s < slots) {
        const std::size_t j = s / nb, n = s % nb;
        if (++idx[s] < opts[j][n].size()) break;
        idx[s] = 0;
        ++s;
      }
      if (s == slots) break;
    }

    std::vector<double> side_head = head;
    if (best.pick.empty()) {
      // No selection meets both residuals: sequential merit order with shortfall.
      for (std::size_t j = 0; j < 2; ++j) {
        result.markets[pair[j]] = fill_market(books, order, pair[j], residual[j], side_head, nullptr, rules);
      }
      continue;
    }

    std::array<std::vector<std::size_t>, 2> allowed{std::vector<std::size_t>(nb), std::vector<std::size_t>(nb)};
    std::array<std::vector<double>, 2> bc{std::vector<double>(nb), std::vector<double>(nb)};
    for (std::size_t j = 0; j < 2; ++j) {
      for (std::size_t n = 0; n < nb; ++n) {
        const auto& o = opts[j][n][best.pick[j * nb + n]];
        allowed[j][n] = o.band < kBands ? o.band + 1 : 0;
        bc[j][n] = o.capacity;
      }
    }
    std::array<MarketClearing, 2> filled;
    bool ok = true;
    for (std::size_t j = 0; j < 2; ++j) {
      filled[j] = fill_market(books, order, pair[j], residual[j], side_head, &allowed[j], rules);
      ok = ok && filled[j].shortfall <= kTolerance;
    }
    if (!ok) {
      const auto flows = flow_assign({needed[0] ? residual[0] : 0.0, needed[1] ? residual[1] : 0.0}, bc, head);
      for (std::size_t j = 0; j < 2; ++j) {
        MarketClearing mc;
        mc.clearing_price = 0.0;
        for (std::size_t n = 0; n < nb; ++n) {
          const double ec = flows ? (*flows)[j][n] : 0.0;
          mc.enabled[books[n].bidder_id] = ec;
          if (ec > kTolerance) {
            const auto& o = opts[j][n][best.pick[j * nb + n]];
            if (o.price >= mc.clearing_price) {
              mc.clearing_price = o.price;
              mc.marginal_bidder = books[n].bidder_id;
            }
          }
        }
        filled[j] = std::move(mc);
      }
    }
    // Every selected band sets a floor on the clearing price (cp >= BP).
    for (std::size_t j = 0; j < 2; ++j) {
      if (!needed[j]) {
        result.markets[pair[j]] = std::move(filled[j]);
        continue;
      }
      for (std::size_t n = 0; n < nb; ++n) {
        const auto& o = opts[j][n][best.pick[j * nb + n]];
        if (o.band < kBands) filled[j].clearing_price = std::max(filled[j].clearing_price, o.price);
      }
      result.markets[pair[j]] = std::move(filled[j]);
    }
  }
  return result;
}

nlohmann::json to_json(const ClearingResult& result) {
  nlohmann::json markets = nlohmann::json::object();
  for (MarketId m : kMarkets) {
    const auto& mc = result.markets[m];
    nlohmann::json enabled = nlohmann::json::object();
    for (const auto& [id, mw] : mc.enabled) enabled[id] = mw;
    markets[std::string(market_code(m))] = {{"cp", mc.clearing_price}, {"enabled", enabled}, {"shortfall", mc.shortfall}};
  }
  return {{"t", result.t}, {"markets", markets}};
}

}  // namespace fcas
