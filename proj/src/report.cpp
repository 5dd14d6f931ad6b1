#include "fcas/report.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "fcas/csv.hpp"
#include "fcas/errors.hpp"

namespace fcas {

double quantile(std::vector<double> v, double p) {
  if (v.empty()) throw InvalidInput("quantile of an empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidInput("quantile level outside [0, 1]");
  std::sort(v.begin(), v.end());
  const double h = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

BoxStats box_stats(std::vector<double> v) {
  BoxStats b;
  b.n = v.size();
  if (v.empty()) return b;
  std::sort(v.begin(), v.end());
  b.q1 = quantile(v, 0.25);
  b.median = quantile(v, 0.5);
  b.q3 = quantile(v, 0.75);
  const double iqr = b.q3 - b.q1;
  const double lo = b.q1 - 1.5 * iqr, hi = b.q3 + 1.5 * iqr;
  b.min = std::numeric_limits<double>::infinity();
  b.max = -std::numeric_limits<double>::infinity();
  for (double x : v) {
    if (x < lo || x > hi) {
      b.outliers.push_back(x);
    } else {
      b.min = std::min(b.min, x);
      b.max = std::max(b.max, x);
    }
  }
  return b;
}

double interquartile_range(std::vector<double> v) { return quantile(v, 0.75) - quantile(v, 0.25); }

double StreamTotals::overall() const {
  double s = energy + degradation;
  for (double f : fcas) s += f;
  return s;
}

StreamTotals& StreamTotals::operator+=(const StreamTotals& o) {
  energy += o.energy;
  degradation += o.degradation;
  for (MarketId m : kMarkets) fcas[m] += o.fcas[m];
  return *this;
}

StreamTotals StreamTotals::scaled(double factor) const {
  StreamTotals s = *this;
  s.energy *= factor;
  s.degradation *= factor;
  for (double& f : s.fcas) f *= factor;
  return s;
}

StreamTotals stream_totals(std::span<const StepOutcome> outcomes) {
  StreamTotals s;
  for (const auto& o : outcomes) {
    s.energy += o.reward.energy;
    s.degradation += o.reward.degradation;
    for (MarketId m : kMarkets) s.fcas[m] += o.reward.fcas_revenue[m];
  }
  return s;
}

std::vector<std::string> backtest_header() {
  return {"energy", "reg-lower", "reg-raise", "con-lower", "con-raise", "degradation", "overall"};
}

void write_backtest_table(std::ostream& out, std::span<const StreamTotals> rows) {
  out << csv::join(backtest_header()) << '\n';
  for (const auto& r : rows) {
    out << csv::join({csv::format_double(r.energy), csv::format_double(r.fcas[MarketId::RegulationLower]),
                      csv::format_double(r.fcas[MarketId::RegulationRaise]),
                      csv::format_double(r.fcas[MarketId::ContingencyLower]),
                      csv::format_double(r.fcas[MarketId::ContingencyRaise]), csv::format_double(r.degradation),
                      csv::format_double(r.overall())})
        << '\n';
  }
}

void write_band_distribution(std::ostream& out, std::span<const TraceRow> rows) {
  out << "market,band,n,min,q1,median,q3,max,outliers\n";
  if (rows.empty()) return;
  for (MarketId m : kMarkets) {
    for (std::size_t k = 0; k < kBands; ++k) {
      std::vector<double> v;
      v.reserve(rows.size());
      for (const auto& r : rows) v.push_back(r.action.bands[m][k]);
      const auto b = box_stats(std::move(v));
      std::string outliers;
      for (std::size_t i = 0; i < b.outliers.size(); ++i) {
        if (i) outliers += ';';
        outliers += csv::format_double(b.outliers[i]);
      }
      out << csv::join({std::string(market_code(m)), std::to_string(k + 1), std::to_string(b.n),
                        csv::format_double(b.min), csv::format_double(b.q1), csv::format_double(b.median),
                        csv::format_double(b.q3), csv::format_double(b.max), outliers})
          << '\n';
    }
  }
}

std::vector<PriceProfileRow> price_profile(std::span<const TraceRow> rows) {
  std::vector<PriceProfileRow> out;
  if (rows.empty()) return out;
  const auto slots = static_cast<std::size_t>(kEpisodeLength);
  out.resize(slots);
  std::vector<std::size_t> count(slots, 0);
  for (std::size_t s = 0; s < slots; ++s) {
    out[s].slot = static_cast<long>(s);
    for (MarketId m : kMarkets) {
      out[s].max[m] = -std::numeric_limits<double>::infinity();
      out[s].min[m] = std::numeric_limits<double>::infinity();
    }
  }
  for (const auto& r : rows) {
    const auto s = static_cast<std::size_t>(((r.t % kEpisodeLength) + kEpisodeLength) % kEpisodeLength);
    ++count[s];
    for (MarketId m : kMarkets) {
      out[s].max[m] = std::max(out[s].max[m], r.price[m]);
      out[s].min[m] = std::min(out[s].min[m], r.price[m]);
      out[s].mean[m] += r.price[m];
    }
  }
  for (std::size_t s = 0; s < slots; ++s) {
    for (MarketId m : kMarkets) {
      if (count[s] == 0) {
        out[s].max[m] = out[s].min[m] = out[s].mean[m] = std::numeric_limits<double>::quiet_NaN();
      } else {
        out[s].mean[m] /= static_cast<double>(count[s]);
      }
    }
  }
  return out;
}

void write_price_profile(std::ostream& out, std::span<const PriceProfileRow> profile) {
  std::vector<std::string> header = {"slot"};
  for (MarketId m : kMarkets) {
    const std::string c(market_code(m));
    header.insert(header.end(), {c + "_max", c + "_mean", c + "_min"});
  }
  out << csv::join(header) << '\n';
  for (const auto& r : profile) {
    std::vector<std::string> f = {std::to_string(r.slot)};
    for (MarketId m : kMarkets) {
      for (double v : {r.max[m], r.mean[m], r.min[m]}) f.push_back(std::isnan(v) ? "" : csv::format_double(v));
    }
    out << csv::join(f) << '\n';
  }
}

std::vector<TraceRow> read_trace(std::istream& in) {
  const auto table = csv::read(in, {"t", "soc", "pc", "pd", "cp_lr", "cp_rr", "cp_lc", "cp_rc", "ec_lr", "ec_rr",
                                    "ec_lc", "ec_rc", "reward"});
  std::vector<TraceRow> out;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& f = table.rows[i];
    const long row = table.row_numbers[i];
    if (f.size() != 13) throw DataError("trace row needs 13 fields", row);
    TraceRow r;
    r.t = csv::parse_long(f[0], row);
    r.soc = csv::parse_double(f[1], row);
    r.action.charge = csv::parse_double(f[2], row);
    r.action.discharge = csv::parse_double(f[3], row);
    for (std::size_t j = 0; j < kMarketCount; ++j) {
      r.price.values[j] = csv::parse_double(f[4 + j], row);
      r.enabled.values[j] = csv::parse_double(f[8 + j], row);
    }
    r.reward = csv::parse_double(f[12], row);
    out.push_back(r);
  }
  return out;
}

std::vector<TraceRow> read_bid_trace(std::istream& in) {
  std::vector<std::string> header = {"t", "market"};
  for (std::size_t k = 1; k <= kBands; ++k) header.push_back("bc" + std::to_string(k));
  const auto table = csv::read(in, header);
  std::vector<TraceRow> out;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& f = table.rows[i];
    const long row = table.row_numbers[i];
    if (f.size() != 2 + kBands) throw DataError("bid trace row needs 12 fields", row);
    const long t = csv::parse_long(f[0], row);
    MarketId m;
    try {
      m = parse_market(f[1]);
    } catch (const InvalidInput& e) {
      throw DataError(e.what(), row);
    }
    if (out.empty() || out.back().t != t || static_cast<std::size_t>(m) == 0) {
      TraceRow r;
      r.t = t;
      out.push_back(r);
    }
    for (std::size_t k = 0; k < kBands; ++k) out.back().action.bands[m][k] = csv::parse_double(f[2 + k], row);
  }
  return out;
}

double mean_band_iqr(std::span<const TraceRow> rows) {
  if (rows.empty()) throw InvalidInput("band IQR of an empty trace");
  double sum = 0.0;
  for (MarketId m : kMarkets) {
    for (std::size_t k = 0; k < kBands; ++k) {
      std::vector<double> v;
      v.reserve(rows.size());
      for (const auto& r : rows) v.push_back(r.action.bands[m][k]);
      sum += interquartile_range(std::move(v));
    }
  }
  return sum / static_cast<double>(kMarketCount * kBands);
}

}  // namespace fcas
