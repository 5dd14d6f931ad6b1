#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "fcas/env.hpp"

namespace fcas {

// Quartiles by linear interpolation between order statistics; whiskers
// are the extreme values inside 1.5 IQR of the box.
struct BoxStats {
  std::size_t n = 0;
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
  std::vector<double> outliers;
};

double quantile(std::vector<double> values, double p);  // throws InvalidInput when empty
BoxStats box_stats(std::vector<double> values);
double interquartile_range(std::vector<double> values);

// Revenue streams of one or more episodes.
struct StreamTotals {
  double energy = 0.0;
  PerMarket<double> fcas{};
  double degradation = 0.0;
  double overall() const;

  StreamTotals& operator+=(const StreamTotals& other);
  StreamTotals scaled(double factor) const;
};

StreamTotals stream_totals(std::span<const StepOutcome> outcomes);

// `energy,reg-lower,reg-raise,con-lower,con-raise,degradation,overall`
std::vector<std::string> backtest_header();
void write_backtest_table(std::ostream& out, std::span<const StreamTotals> rows);

// Band capacity per market across all intervals of the traces:
// `market,band,n,min,q1,median,q3,max,outliers` (outliers `;`-separated).
void write_band_distribution(std::ostream& out, std::span<const TraceRow> rows);

// Clearing prices per 5-minute slot of the day across all traces:
// `slot,lr_max,lr_mean,lr_min,...`. 288 rows when any data is present.
struct PriceProfileRow {
  long slot = 0;
  PerMarket<double> max{}, mean{}, min{};
};
std::vector<PriceProfileRow> price_profile(std::span<const TraceRow> rows);
void write_price_profile(std::ostream& out, std::span<const PriceProfileRow> profile);

// Readers for the env's trace formats; `#` lines are skipped.
std::vector<TraceRow> read_trace(std::istream& in);
std::vector<TraceRow> read_bid_trace(std::istream& in);  // fills t and action bands only

// Mean over markets and bands of the per-band IQR of offered capacity.
double mean_band_iqr(std::span<const TraceRow> rows);

}  // namespace fcas
