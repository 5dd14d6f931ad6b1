#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "fcas/market.hpp"

namespace fcas {

// Bid records: `t,bidder_id,market,bp1..bp10,bc1..bc10,pc_max,pd_max`, one row
// per bidder/market/interval. Optional trailing `pc,pd` columns carry the
// bidder's energy-market position (written for replayable BESS solutions).
using BidsByInterval = std::map<long, std::vector<BidderBook>>;

std::vector<std::string> bid_csv_header(bool with_energy = false);

// Groups rows by interval then bidder (bidders sorted by id). Markets missing
// for a bidder get an all-zero ladder. Every book is validated.
BidsByInterval read_bid_csv(std::istream& in, const MarketRules& rules);
BidsByInterval read_bid_csv_file(const std::string& path, const MarketRules& rules);

void write_bid_csv(std::ostream& out, const BidsByInterval& bids, bool with_energy = false);

}  // namespace fcas
