#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "fcas/bess.hpp"
#include "fcas/clearing.hpp"
#include "fcas/market.hpp"

namespace fcas {

inline constexpr long kEpisodeLength = 288;  // 24 h at 5 min

struct IntervalRecord {
  MarketSnapshot snapshot;          // observed_clearing_price set for recorded data
  std::vector<BidderBook> rivals;   // sorted by bidder_id
  bool has_bids = false;
};

// Contiguous interval history; timestamps are snapshot.t.
struct MarketHistory {
  std::vector<IntervalRecord> intervals;

  std::size_t size() const { return intervals.size(); }
  bool empty() const { return intervals.empty(); }
};

// Snapshot format: `t,energy_price,d_lr,d_rr,d_lc,d_rc,cp_lr,cp_rr,cp_lc,cp_rc`.
std::vector<std::string> snapshot_csv_header();

// Reads snapshots and, if `bids_path` is non-empty, rival bid records. Rows
// must be strictly increasing and contiguous in t; duplicates and gaps raise
// DataError naming the offending timestamps.
MarketHistory load_history(std::istream& snapshots, std::istream* bids, const MarketRules& rules);
MarketHistory load_history(const std::string& snapshot_path, const std::string& bids_path,
                           const MarketRules& rules);

void write_snapshots(std::ostream& out, const MarketHistory& history);
void write_rival_bids(std::ostream& out, const MarketHistory& history);

struct SynthMarketConfig {
  double price_mean = 10.0;        // currency/MW
  double price_volatility = 1.0;   // per-interval noise sd
  double mean_reversion = 0.05;
  double daily_amplitude = 0.2;    // fraction of mean, sinusoidal over 24 h
  double spike_rate = 0.002;       // per-interval probability
  double spike_multiplier = 8.0;
  double demand_mean = 80.0;       // MW
  double demand_volatility = 5.0;
};

struct SynthConfig {
  long intervals = kEpisodeLength * 30;
  PerMarket<SynthMarketConfig> markets;
  double energy_mean = 80.0;        // currency/MWh
  double energy_volatility = 4.0;
  double energy_mean_reversion = 0.05;
  double energy_daily_amplitude = 0.35;
  double energy_spike_rate = 0.002;
  double energy_spike_multiplier = 5.0;
  double price_floor = 0.5;
  int rival_count = 4;
  double rival_capacity_share = 0.5;  // each rival's band-10 capacity as a fraction of mean demand

  SynthConfig();
  void validate(const MarketRules& rules) const;  // throws InvalidInput
};

// Deterministic in seed. Rival ladders are built around each interval's
// clearing price: rival 0 offers a positive increment exactly at cp, so the
// recorded prices are consistent with the books.
MarketHistory synth_generate(const SynthConfig& config, const MarketRules& rules, std::uint64_t seed);

struct Scenario {
  std::size_t start = 0;  // index into the source history
  std::vector<IntervalRecord> intervals;
  std::vector<SupplyVariation> supply;

  std::size_t size() const { return intervals.size(); }
};

// Aligned 24 h windows (start a multiple of 288) whose intervals all carry
// rival bids and observed prices.
std::vector<std::size_t> feasible_windows(const MarketHistory& history);

Scenario make_scenario(const MarketHistory& history, std::size_t start, const MarketRules& rules);

// Uniform over feasible windows; throws InvalidInput if none exist.
Scenario sample_scenario(const MarketHistory& history, std::uint64_t seed, const MarketRules& rules);

// Scales rival ladder prices and recorded clearing prices of `markets` over
// intervals [first, first + count) by `multiplier` (capped at the price cap)
// and their demand by `demand_multiplier`.
void inject_price_spike(MarketHistory& history, std::span<const MarketId> markets, std::size_t first,
                        std::size_t count, double multiplier, const MarketRules& rules,
                        double demand_multiplier = 1.0);

// Splits a history at a day boundary.
std::pair<MarketHistory, MarketHistory> split_days(const MarketHistory& history, std::size_t train_days);

// ARIMA(p,1,0): least squares AR(p) with intercept on first differences.
struct ForecastModel {
  int order = 0;
  std::vector<double> coefficients;
  double intercept = 0.0;
  double noise_scale = 0.0;  // residual sd of the differenced fit
  bool persistence_fallback = false;
};

ForecastModel fit_forecaster(const std::vector<double>& series, int order);

// Iterated one-step forecasts from the end of `window` (length >= order + 1
// unless the model is a persistence forecast).
std::vector<double> forecast(const ForecastModel& model, const std::vector<double>& window, int horizon);

// Predicted features per interval: energy price, four clearing prices, four demands.
struct ForecastRow {
  double energy_price = 0.0;
  PerMarket<double> price{};
  PerMarket<double> demand{};
};
using ForecastTable = std::vector<ForecastRow>;

ForecastTable perfect_forecasts(const Scenario& scenario);
// Multiplicative log-normal error with sd `relative_noise`, deterministic in seed.
ForecastTable noisy_forecasts(const Scenario& scenario, double relative_noise, std::uint64_t seed);

// One model per feature (energy, cp x4, d x4).
struct ForecasterSet {
  std::array<ForecastModel, 9> models;
  int window = 48;
};
ForecasterSet fit_forecasters(const MarketHistory& history, int order, int window = 48);
// One-step-ahead forecasts for scenario intervals, conditioning on the
// recorded history before each interval; output clamped to be non-negative.
ForecastTable ar_forecasts(const MarketHistory& history, const Scenario& scenario, const ForecasterSet& set);

struct FrConfig {
  double mean_reversion = 0.1;  // kappa
  double volatility = 0.05;     // sigma
  double epsilon = 0.01;
  double initial = 0.5;
};

std::vector<FrSignal> fr_trace(const FrConfig& config, std::uint64_t seed, std::size_t length);
FrSignal fr_signal(const FrConfig& config, std::uint64_t seed, std::size_t t);

// FR-trace format: `t,s_lr,s_rr,s_lc,s_rc`.
std::vector<FrSignal> read_fr_trace(std::istream& in);
void write_fr_trace(std::ostream& out, const std::vector<FrSignal>& trace);

}  // namespace fcas
