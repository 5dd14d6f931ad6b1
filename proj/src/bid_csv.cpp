#include "fcas/bid_csv.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>

#include "fcas/csv.hpp"
#include "fcas/errors.hpp"

namespace fcas {

std::vector<std::string> bid_csv_header(bool with_energy) {
  std::vector<std::string> h = {"t", "bidder_id", "market"};
  for (std::size_t k = 1; k <= kBands; ++k) h.push_back("bp" + std::to_string(k));
  for (std::size_t k = 1; k <= kBands; ++k) h.push_back("bc" + std::to_string(k));
  h.push_back("pc_max");
  h.push_back("pd_max");
  if (with_energy) {
    h.push_back("pc");
    h.push_back("pd");
  }
  return h;
}

BidsByInterval read_bid_csv(std::istream& in, const MarketRules& rules) {
  const auto table = csv::read(in, bid_csv_header());
  const bool with_energy = table.header.size() == bid_csv_header(true).size();
  if (!with_energy && table.header.size() != bid_csv_header().size()) {
    throw DataError("unexpected bid file columns");
  }

  // (t, bidder) -> book, plus which markets were seen.
  std::map<std::pair<long, std::string>, std::pair<BidderBook, std::array<bool, kMarketCount>>> staged;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& f = table.rows[r];
    const long row = table.row_numbers[r];
    const long t = csv::parse_long(f[0], row);
    MarketId m;
    try {
      m = parse_market(f[2]);
    } catch (const InvalidInput& e) {
      throw DataError(e.what(), row);
    }
    auto& [book, seen] = staged[{t, f[1]}];
    if (seen[static_cast<std::size_t>(m)]) throw DataError("duplicate bid row for " + f[1], row);
    seen[static_cast<std::size_t>(m)] = true;
    book.bidder_id = f[1];
    for (std::size_t k = 0; k < kBands; ++k) {
      book.ladders[m].prices[k] = csv::parse_double(f[3 + k], row);
      book.ladders[m].capacities[k] = csv::parse_double(f[3 + kBands + k], row);
    }
    const double pc_max = csv::parse_double(f[3 + 2 * kBands], row);
    const double pd_max = csv::parse_double(f[4 + 2 * kBands], row);
    const bool first = std::count(seen.begin(), seen.end(), true) == 1;
    if (!first && (pc_max != book.max_charge || pd_max != book.max_discharge)) {
      throw DataError("inconsistent power limits for " + f[1], row);
    }
    book.max_charge = pc_max;
    book.max_discharge = pd_max;
    if (with_energy) {
      book.energy_charge = csv::parse_double(f[5 + 2 * kBands], row);
      book.energy_discharge = csv::parse_double(f[6 + 2 * kBands], row);
    }
    try {
      const auto v = validate_ladder(book.ladders[m], rules);
      if (!v.empty()) {
        throw DataError("invalid ladder: " + std::string(violation_name(v.front().kind)) + " at band " +
                            std::to_string(v.front().band),
                        row);
      }
      book.validate(rules);
    } catch (const InvalidInput& e) {
      throw DataError(e.what(), row);
    }
  }

  BidsByInterval out;
  for (auto& [key, entry] : staged) out[key.first].push_back(std::move(entry.first));
  return out;
}

BidsByInterval read_bid_csv_file(const std::string& path, const MarketRules& rules) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return read_bid_csv(in, rules);
}

void write_bid_csv(std::ostream& out, const BidsByInterval& bids, bool with_energy) {
  out << csv::join(bid_csv_header(with_energy)) << '\n';
  for (const auto& [t, books] : bids) {
    for (const auto& book : books) {
      for (MarketId m : kMarkets) {
        std::vector<std::string> f = {std::to_string(t), book.bidder_id, std::string(market_code(m))};
        for (double p : book.ladders[m].prices) f.push_back(csv::format_double(p));
        for (double c : book.ladders[m].capacities) f.push_back(csv::format_double(c));
        f.push_back(csv::format_double(book.max_charge));
        f.push_back(csv::format_double(book.max_discharge));
        if (with_energy) {
          f.push_back(csv::format_double(book.energy_charge));
          f.push_back(csv::format_double(book.energy_discharge));
        }
        out << csv::join(f) << '\n';
      }
    }
  }
}

}  // namespace fcas
