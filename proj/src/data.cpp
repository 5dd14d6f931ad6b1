#include "fcas/data.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "fcas/bid_csv.hpp"
#include "fcas/csv.hpp"
#include "fcas/errors.hpp"

namespace fcas {

std::vector<std::string> snapshot_csv_header() {
  return {"t", "energy_price", "d_lr", "d_rr", "d_lc", "d_rc", "cp_lr", "cp_rr", "cp_lc", "cp_rc"};
}

namespace {

std::string list_timestamps(const std::vector<long>& ts) {
  std::string s;
  const std::size_t shown = std::min<std::size_t>(ts.size(), 20);
  for (std::size_t i = 0; i < shown; ++i) s += (i ? "," : "") + std::to_string(ts[i]);
  if (ts.size() > shown) s += ",... (" + std::to_string(ts.size()) + " total)";
  return s;
}

}  // namespace

MarketHistory load_history(std::istream& snapshots, std::istream* bids, const MarketRules& rules) {
  const auto table = csv::read(snapshots, snapshot_csv_header());
  if (table.header.size() != snapshot_csv_header().size()) throw DataError("unexpected snapshot columns");

  MarketHistory h;
  h.intervals.reserve(table.rows.size());
  std::vector<long> missing;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& f = table.rows[r];
    const long row = table.row_numbers[r];
    IntervalRecord rec;
    rec.snapshot.t = csv::parse_long(f[0], row);
    rec.snapshot.energy_price = csv::parse_double(f[1], row);
    PerMarket<double> cp;
    for (std::size_t i = 0; i < kMarketCount; ++i) {
      const MarketId m = static_cast<MarketId>(i);
      rec.snapshot.demand[m] = csv::parse_double(f[2 + i], row);
      cp[m] = csv::parse_double(f[6 + i], row);
      if (rec.snapshot.demand[m] < 0.0) throw DataError("negative demand", row);
      if (cp[m] < 0.0 || cp[m] > rules.price_cap) throw DataError("clearing price outside [0, price_cap]", row);
    }
    rec.snapshot.observed_clearing_price = cp;
    if (!h.intervals.empty()) {
      const long prev = h.intervals.back().snapshot.t;
      if (rec.snapshot.t == prev) throw DataError("duplicate timestamp " + std::to_string(prev), row);
      if (rec.snapshot.t < prev) throw DataError("timestamp " + std::to_string(rec.snapshot.t) + " out of order", row);
      for (long g = prev + 1; g < rec.snapshot.t; ++g) missing.push_back(g);
    }
    h.intervals.push_back(std::move(rec));
  }
  if (!missing.empty()) throw DataError("gap in snapshot history, missing intervals " + list_timestamps(missing));

  if (bids && !h.intervals.empty()) {
    auto by_t = read_bid_csv(*bids, rules);
    const long t0 = h.intervals.front().snapshot.t;
    for (auto& [t, books] : by_t) {
      const long i = t - t0;
      if (i < 0 || i >= static_cast<long>(h.intervals.size()))
        throw DataError("bid records for interval " + std::to_string(t) + " outside snapshot range");
      h.intervals[static_cast<std::size_t>(i)].rivals = std::move(books);
      h.intervals[static_cast<std::size_t>(i)].has_bids = true;
    }
  }
  return h;
}

MarketHistory load_history(const std::string& snapshot_path, const std::string& bids_path, const MarketRules& rules) {
  std::ifstream snaps(snapshot_path);
  if (!snaps) throw DataError("cannot open " + snapshot_path);
  if (bids_path.empty()) return load_history(snaps, nullptr, rules);
  std::ifstream bids(bids_path);
  if (!bids) throw DataError("cannot open " + bids_path);
  return load_history(snaps, &bids, rules);
}

void write_snapshots(std::ostream& out, const MarketHistory& history) {
  out << csv::join(snapshot_csv_header()) << '\n';
  for (const auto& rec : history.intervals) {
    const auto& s = rec.snapshot;
    std::vector<std::string> f = {std::to_string(s.t), csv::format_double(s.energy_price)};
    for (MarketId m : kMarkets) f.push_back(csv::format_double(s.demand[m]));
    for (MarketId m : kMarkets) {
      f.push_back(csv::format_double(s.observed_clearing_price ? (*s.observed_clearing_price)[m] : 0.0));
    }
    out << csv::join(f) << '\n';
  }
}

void write_rival_bids(std::ostream& out, const MarketHistory& history) {
  BidsByInterval bids;
  for (const auto& rec : history.intervals) {
    if (rec.has_bids) bids[rec.snapshot.t] = rec.rivals;
  }
  write_bid_csv(out, bids);
}

SynthConfig::SynthConfig() {
  auto& lr = markets[MarketId::RegulationLower];
  auto& rr = markets[MarketId::RegulationRaise];
  auto& lc = markets[MarketId::ContingencyLower];
  auto& rc = markets[MarketId::ContingencyRaise];
  lr.price_mean = 12.0;
  lr.demand_mean = 60.0;
  rr.price_mean = 15.0;
  rr.demand_mean = 60.0;
  rr.spike_rate = 0.004;
  lc.price_mean = 4.0;
  lc.price_volatility = 0.4;
  lc.demand_mean = 100.0;
  rc.price_mean = 6.0;
  rc.price_volatility = 0.6;
  rc.demand_mean = 120.0;
}

void SynthConfig::validate(const MarketRules& rules) const {
  if (intervals < 0) throw InvalidInput("synth: negative interval count");
  if (rival_count < 1) throw InvalidInput("synth: need at least one rival");
  if (!(rival_capacity_share > 0.0)) throw InvalidInput("synth: rival capacity share must be positive");
  if (!(price_floor > 0.0)) throw InvalidInput("synth: price floor must be positive");
  auto check = [&](double mean, double vol, double kappa, double amp, double rate, double mult) {
    if (!(mean >= price_floor && mean <= rules.price_cap)) throw InvalidInput("synth: price mean outside [floor, cap]");
    if (!(vol >= 0.0)) throw InvalidInput("synth: negative volatility");
    if (!(kappa >= 0.0 && kappa <= 1.0)) throw InvalidInput("synth: mean reversion outside [0, 1]");
    if (!(amp >= 0.0 && amp < 1.0)) throw InvalidInput("synth: daily amplitude outside [0, 1)");
    if (!(rate >= 0.0 && rate <= 1.0)) throw InvalidInput("synth: spike rate outside [0, 1]");
    if (!(mult >= 1.0)) throw InvalidInput("synth: spike multiplier below 1");
  };
  check(energy_mean, energy_volatility, energy_mean_reversion, energy_daily_amplitude, energy_spike_rate,
        energy_spike_multiplier);
  for (const auto& m : markets) {
    check(m.price_mean, m.price_volatility, m.mean_reversion, m.daily_amplitude, m.spike_rate, m.spike_multiplier);
    if (!(m.demand_mean > 0.0) || !(m.demand_volatility >= 0.0)) throw InvalidInput("synth: bad demand parameters");
  }
}

namespace {

// Mean-reverting deviation around a diurnal level with one-interval spikes.
class PriceProcess {
 public:
  PriceProcess(double mean, double vol, double kappa, double amp, double rate, double mult)
      : mean_(mean), vol_(vol), kappa_(kappa), amp_(amp), rate_(rate), mult_(mult) {}

  double next(long t, std::mt19937_64& rng, double floor, double cap) {
    const double tau = static_cast<double>(t % kEpisodeLength) / static_cast<double>(kEpisodeLength);
    const double level = mean_ * (1.0 + amp_ * std::cos(2.0 * std::numbers::pi * (tau - 19.0 / 24.0)));
    const double noise = normal_(rng);
    const double u = uniform_(rng);
    double p = std::max(level + dev_, floor);
    dev_ += -kappa_ * dev_ + vol_ * noise;
    if (u < rate_) p *= mult_;
    return std::min(p, cap);
  }

 private:
  double mean_, vol_, kappa_, amp_, rate_, mult_;
  double dev_ = 0.0;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

constexpr std::array<double, kBands> kRivalPriceFactors = {0.05, 0.2, 0.4, 0.7, 1.0, 1.25, 1.6, 2.5, 5.0, 20.0};
constexpr std::size_t kAnchorBand = 4;

BandLadder rival_ladder(double cp, double capacity, bool anchor, std::mt19937_64& rng, const MarketRules& rules) {
  std::normal_distribution<double> jitter(0.0, 0.15);
  std::uniform_real_distribution<double> weight(0.5, 1.5);
  BandLadder l;
  std::array<double, kBands> w{};
  double wsum = 0.0;
  for (std::size_t k = 0; k < kBands; ++k) {
    double f = kRivalPriceFactors[k];
    if (!anchor) f *= std::exp(jitter(rng));
    l.prices[k] = std::min(cp * f, rules.price_cap);
    w[k] = weight(rng);
    wsum += w[k];
  }
  std::sort(l.prices.begin(), l.prices.end());
  if (anchor) l.prices[kAnchorBand] = cp;
  double cum = 0.0;
  for (std::size_t k = 0; k < kBands; ++k) {
    cum += capacity * w[k] / wsum;
    l.capacities[k] = cum;
  }
  return l;
}

}  // namespace

MarketHistory synth_generate(const SynthConfig& config, const MarketRules& rules, std::uint64_t seed) {
  config.validate(rules);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  PriceProcess energy(config.energy_mean, config.energy_volatility, config.energy_mean_reversion,
                      config.energy_daily_amplitude, config.energy_spike_rate, config.energy_spike_multiplier);
  std::vector<PriceProcess> prices;
  PerMarket<double> demand_dev{};
  for (const auto& m : config.markets) {
    prices.emplace_back(m.price_mean, m.price_volatility, m.mean_reversion, m.daily_amplitude, m.spike_rate,
                        m.spike_multiplier);
  }

  MarketHistory h;
  h.intervals.reserve(static_cast<std::size_t>(config.intervals));
  for (long t = 0; t < config.intervals; ++t) {
    IntervalRecord rec;
    rec.snapshot.t = t;
    rec.snapshot.energy_price = energy.next(t, rng, config.price_floor, rules.price_cap);
    PerMarket<double> cp;
    for (MarketId m : kMarkets) {
      const auto& mc = config.markets[m];
      cp[m] = prices[static_cast<std::size_t>(m)].next(t, rng, config.price_floor, rules.price_cap);
      rec.snapshot.demand[m] = std::max(mc.demand_mean + demand_dev[m], 0.0);
      demand_dev[m] += -0.05 * demand_dev[m] + mc.demand_volatility * 0.3 * normal(rng);
    }
    rec.snapshot.observed_clearing_price = cp;
    for (int i = 0; i < config.rival_count; ++i) {
      BidderBook b;
      b.bidder_id = "rival" + std::to_string(i);
      b.max_charge = b.max_discharge = 1.0e6;
      for (MarketId m : kMarkets) {
        b.ladders[m] = rival_ladder(cp[m], config.rival_capacity_share * config.markets[m].demand_mean, i == 0, rng,
                                    rules);
      }
      rec.rivals.push_back(std::move(b));
    }
    rec.has_bids = true;
    h.intervals.push_back(std::move(rec));
  }
  return h;
}

std::vector<std::size_t> feasible_windows(const MarketHistory& history) {
  std::vector<std::size_t> out;
  const std::size_t len = static_cast<std::size_t>(kEpisodeLength);
  for (std::size_t start = 0; start + len <= history.size(); start += len) {
    bool ok = true;
    for (std::size_t i = start; i < start + len && ok; ++i) {
      ok = history.intervals[i].has_bids && history.intervals[i].snapshot.observed_clearing_price.has_value();
    }
    if (ok) out.push_back(start);
  }
  return out;
}

Scenario make_scenario(const MarketHistory& history, std::size_t start, const MarketRules& rules) {
  const std::size_t len = static_cast<std::size_t>(kEpisodeLength);
  if (start + len > history.size()) throw InvalidInput("scenario window exceeds history");
  Scenario s;
  s.start = start;
  s.intervals.assign(history.intervals.begin() + static_cast<long>(start),
                     history.intervals.begin() + static_cast<long>(start + len));
  s.supply.reserve(len);
  for (const auto& rec : s.intervals) {
    if (!rec.has_bids || !rec.snapshot.observed_clearing_price)
      throw InvalidInput("scenario interval " + std::to_string(rec.snapshot.t) + " lacks bids or prices");
    s.supply.push_back(estimate_supply_variation(rec.rivals, *rec.snapshot.observed_clearing_price,
                                                 rec.snapshot.demand, rules));
  }
  return s;
}

Scenario sample_scenario(const MarketHistory& history, std::uint64_t seed, const MarketRules& rules) {
  if (history.size() < static_cast<std::size_t>(kEpisodeLength)) throw InvalidInput("history shorter than 288 intervals");
  const auto windows = feasible_windows(history);
  if (windows.empty()) throw InvalidInput("no feasible 24 h window in history");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, windows.size() - 1);
  return make_scenario(history, windows[pick(rng)], rules);
}

void inject_price_spike(MarketHistory& history, std::span<const MarketId> markets, std::size_t first,
                        std::size_t count, double multiplier, const MarketRules& rules, double demand_multiplier) {
  if (!(multiplier > 0.0) || !std::isfinite(multiplier)) throw InvalidInput("spike multiplier must be positive");
  if (!(demand_multiplier > 0.0) || !std::isfinite(demand_multiplier))
    throw InvalidInput("demand multiplier must be positive");
  if (first + count > history.size()) throw InvalidInput("spike window exceeds history");
  for (std::size_t i = first; i < first + count; ++i) {
    auto& rec = history.intervals[i];
    for (MarketId m : markets) {
      rec.snapshot.demand[m] *= demand_multiplier;
      for (auto& book : rec.rivals)
        for (double& p : book.ladders[m].prices) p = std::min(p * multiplier, rules.price_cap);
      if (rec.snapshot.observed_clearing_price) {
        double& cp = (*rec.snapshot.observed_clearing_price)[m];
        cp = std::min(cp * multiplier, rules.price_cap);
      }
    }
  }
}

std::pair<MarketHistory, MarketHistory> split_days(const MarketHistory& history, std::size_t train_days) {
  const std::size_t cut = std::min(history.size(), train_days * static_cast<std::size_t>(kEpisodeLength));
  MarketHistory a, b;
  a.intervals.assign(history.intervals.begin(), history.intervals.begin() + static_cast<long>(cut));
  b.intervals.assign(history.intervals.begin() + static_cast<long>(cut), history.intervals.end());
  return {std::move(a), std::move(b)};
}

ForecastModel fit_forecaster(const std::vector<double>& series, int order) {
  if (order < 0) throw InvalidInput("forecaster order must be >= 0");
  ForecastModel model;
  model.order = order;
  if (order == 0) return model;

  const long n = static_cast<long>(series.size()) - 1;  // number of differences
  const long rows = n - order;
  if (rows < order + 2) {
    model.order = 0;
    model.persistence_fallback = true;
    return model;
  }
  std::vector<double> d(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) d[static_cast<std::size_t>(i)] = series[static_cast<std::size_t>(i + 1)] - series[static_cast<std::size_t>(i)];

  Eigen::MatrixXd x(rows, order + 1);
  Eigen::VectorXd y(rows);
  for (long r = 0; r < rows; ++r) {
    const long t = r + order;
    y[r] = d[static_cast<std::size_t>(t)];
    x(r, 0) = 1.0;
    for (int j = 1; j <= order; ++j) x(r, j) = d[static_cast<std::size_t>(t - j)];
  }
  const Eigen::MatrixXd xtx = x.transpose() * x;
  const Eigen::VectorXd xty = x.transpose() * y;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(xtx);
  lu.setThreshold(1e-10);
  if (!lu.isInvertible()) {
    model.order = 0;
    model.persistence_fallback = true;
    return model;
  }
  const Eigen::VectorXd beta = lu.solve(xty);
  if (!beta.allFinite()) {
    model.order = 0;
    model.persistence_fallback = true;
    return model;
  }
  model.intercept = beta[0];
  model.coefficients.assign(beta.data() + 1, beta.data() + 1 + order);
  const Eigen::VectorXd resid = y - x * beta;
  model.noise_scale = std::sqrt(resid.squaredNorm() / static_cast<double>(std::max<long>(rows - order - 1, 1)));
  return model;
}

std::vector<double> forecast(const ForecastModel& model, const std::vector<double>& window, int horizon) {
  if (window.empty()) throw InvalidInput("forecast needs a non-empty window");
  const std::size_t p = static_cast<std::size_t>(model.order);
  if (window.size() < p + 1) throw InvalidInput("forecast window shorter than order + 1");
  std::vector<double> diffs;
  for (std::size_t i = window.size() - p; i < window.size(); ++i) diffs.push_back(window[i] - window[i - 1]);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(std::max(horizon, 0)));
  double level = window.back();
  for (int h = 0; h < horizon; ++h) {
    double next = model.intercept;
    for (std::size_t j = 0; j < p; ++j) next += model.coefficients[j] * diffs[diffs.size() - 1 - j];
    level += next;
    out.push_back(level);
    if (p > 0) {
      diffs.erase(diffs.begin());
      diffs.push_back(next);
    }
  }
  return out;
}

namespace {

ForecastRow actual_row(const IntervalRecord& rec) {
  ForecastRow r;
  r.energy_price = rec.snapshot.energy_price;
  r.demand = rec.snapshot.demand;
  if (rec.snapshot.observed_clearing_price) r.price = *rec.snapshot.observed_clearing_price;
  return r;
}

std::array<double, 9> row_values(const ForecastRow& r) {
  return {r.energy_price,
          r.price[MarketId::RegulationLower], r.price[MarketId::RegulationRaise],
          r.price[MarketId::ContingencyLower], r.price[MarketId::ContingencyRaise],
          r.demand[MarketId::RegulationLower], r.demand[MarketId::RegulationRaise],
          r.demand[MarketId::ContingencyLower], r.demand[MarketId::ContingencyRaise]};
}

ForecastRow from_values(const std::array<double, 9>& v) {
  ForecastRow r;
  r.energy_price = v[0];
  for (std::size_t i = 0; i < kMarketCount; ++i) {
    r.price[static_cast<MarketId>(i)] = v[1 + i];
    r.demand[static_cast<MarketId>(i)] = v[5 + i];
  }
  return r;
}

}  // namespace

ForecastTable perfect_forecasts(const Scenario& scenario) {
  ForecastTable t;
  t.reserve(scenario.size());
  for (const auto& rec : scenario.intervals) t.push_back(actual_row(rec));
  return t;
}

ForecastTable noisy_forecasts(const Scenario& scenario, double relative_noise, std::uint64_t seed) {
  if (!(relative_noise >= 0.0)) throw InvalidInput("forecast noise must be non-negative");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  ForecastTable t;
  t.reserve(scenario.size());
  for (const auto& rec : scenario.intervals) {
    auto v = row_values(actual_row(rec));
    for (double& x : v) x *= std::exp(relative_noise * normal(rng) - 0.5 * relative_noise * relative_noise);
    t.push_back(from_values(v));
  }
  return t;
}

ForecasterSet fit_forecasters(const MarketHistory& history, int order, int window) {
  ForecasterSet set;
  set.window = std::max(window, order + 1);
  for (std::size_t f = 0; f < 9; ++f) {
    std::vector<double> series;
    series.reserve(history.size());
    for (const auto& rec : history.intervals) series.push_back(row_values(actual_row(rec))[f]);
    set.models[f] = fit_forecaster(series, order);
  }
  return set;
}

ForecastTable ar_forecasts(const MarketHistory& history, const Scenario& scenario, const ForecasterSet& set) {
  ForecastTable out;
  out.reserve(scenario.size());
  for (std::size_t i = 0; i < scenario.size(); ++i) {
    const std::size_t idx = scenario.start + i;
    std::array<double, 9> v{};
    for (std::size_t f = 0; f < 9; ++f) {
      const auto& model = set.models[f];
      const std::size_t need = std::max<std::size_t>(static_cast<std::size_t>(set.window), static_cast<std::size_t>(model.order) + 1);
      if (idx < need) {
        v[f] = row_values(actual_row(scenario.intervals[i]))[f];
        continue;
      }
      std::vector<double> w;
      w.reserve(need);
      for (std::size_t j = idx - need; j < idx; ++j) w.push_back(row_values(actual_row(history.intervals[j]))[f]);
      v[f] = std::max(forecast(model, w, 1).front(), 0.0);
    }
    out.push_back(from_values(v));
  }
  return out;
}

std::vector<FrSignal> fr_trace(const FrConfig& config, std::uint64_t seed, std::size_t length) {
  if (!(config.epsilon > 0.0 && config.epsilon < 0.5)) throw InvalidInput("FR epsilon must lie in (0, 0.5)");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<FrSignal> out;
  out.reserve(length);
  FrSignal x;
  for (auto& v : x.utilization) v = std::clamp(config.initial, config.epsilon, 1.0 - config.epsilon);
  for (std::size_t t = 0; t < length; ++t) {
    out.push_back(x);
    for (auto& v : x.utilization) {
      v = std::clamp(v + config.mean_reversion * (0.5 - v) + config.volatility * normal(rng), config.epsilon,
                     1.0 - config.epsilon);
    }
  }
  return out;
}

FrSignal fr_signal(const FrConfig& config, std::uint64_t seed, std::size_t t) {
  return fr_trace(config, seed, t + 1).back();
}

std::vector<FrSignal> read_fr_trace(std::istream& in) {
  const auto table = csv::read(in, {"t", "s_lr", "s_rr", "s_lc", "s_rc"});
  std::vector<FrSignal> out;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& f = table.rows[r];
    const long row = table.row_numbers[r];
    if (csv::parse_long(f[0], row) != static_cast<long>(out.size()))
      throw DataError("FR trace timestamps must run 0, 1, 2, ...", row);
    FrSignal s;
    for (std::size_t i = 0; i < kMarketCount; ++i) {
      const double v = csv::parse_double(f[1 + i], row);
      if (!(v > 0.0 && v < 1.0)) throw DataError("FR utilization outside (0, 1)", row);
      s.utilization[static_cast<MarketId>(i)] = v;
    }
    out.push_back(s);
  }
  return out;
}

void write_fr_trace(std::ostream& out, const std::vector<FrSignal>& trace) {
  out << "t,s_lr,s_rr,s_lc,s_rc\n";
  for (std::size_t t = 0; t < trace.size(); ++t) {
    std::vector<std::string> f = {std::to_string(t)};
    for (double v : trace[t].utilization) f.push_back(csv::format_double(v));
    out << csv::join(f) << '\n';
  }
}

}  // namespace fcas
