#include "fcas/env.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "fcas/csv.hpp"
#include "fcas/errors.hpp"

namespace fcas {

namespace {

std::array<double, kStateDim - 1> market_features(const ForecastRow& r) {
  return {r.energy_price,
          r.price[MarketId::RegulationLower],  r.price[MarketId::RegulationRaise],
          r.price[MarketId::ContingencyLower], r.price[MarketId::ContingencyRaise],
          r.demand[MarketId::RegulationLower], r.demand[MarketId::RegulationRaise],
          r.demand[MarketId::ContingencyLower], r.demand[MarketId::ContingencyRaise]};
}

}  // namespace

FeatureScaler FeatureScaler::fit(const MarketHistory& training, const BessParams& params) {
  FeatureScaler s;
  s.min.fill(std::numeric_limits<double>::infinity());
  s.max.fill(-std::numeric_limits<double>::infinity());
  s.min[0] = params.soc_min;
  s.max[0] = params.soc_max;
  for (const auto& rec : training.intervals) {
    ForecastRow row;
    row.energy_price = rec.snapshot.energy_price;
    row.demand = rec.snapshot.demand;
    if (rec.snapshot.observed_clearing_price) row.price = *rec.snapshot.observed_clearing_price;
    const auto f = market_features(row);
    for (std::size_t i = 0; i < f.size(); ++i) {
      s.min[i + 1] = std::min(s.min[i + 1], f[i]);
      s.max[i + 1] = std::max(s.max[i + 1], f[i]);
    }
  }
  for (std::size_t i = 1; i < kStateDim; ++i) {
    if (!std::isfinite(s.min[i])) s.min[i] = s.max[i] = 0.0;
  }
  return s;
}

double FeatureScaler::scale(std::size_t i, double v) const {
  const double range = max[i] - min[i];
  if (!(range > 0.0)) return 0.0;
  return 2.0 * (v - min[i]) / range - 1.0;
}

Eigen::VectorXd observe(const BessState& state, const ForecastRow& forecast, const FeatureScaler& scaler) {
  Eigen::VectorXd v(kStateDim);
  v[0] = scaler.scale(0, state.soc);
  const auto f = market_features(forecast);
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (!std::isfinite(f[i])) throw InvalidInput("non-finite forecast feature");
    v[static_cast<long>(i) + 1] = scaler.scale(i + 1, f[i]);
  }
  return v;
}

ActionVector ActionMapping::to_mw(const Eigen::Ref<const Eigen::VectorXd>& raw) const {
  if (raw.size() != ActionVector::kFlatSize) throw InvalidInput("raw action must have 42 entries");
  ActionVector a = ActionVector::from_flat(raw);
  for (MarketId m : kMarkets) {
    for (double& c : a.bands[m]) c = band_offset + band_scale * c;
  }
  a.charge = power_offset + power_scale * a.charge;
  a.discharge = power_offset + power_scale * a.discharge;
  return a;
}

Eigen::VectorXd ActionMapping::to_raw(const ActionVector& mw) const {
  ActionVector a = mw;
  for (MarketId m : kMarkets) {
    for (double& c : a.bands[m]) c = (c - band_offset) / band_scale;
  }
  a.charge = (a.charge - power_offset) / power_scale;
  a.discharge = (a.discharge - power_offset) / power_scale;
  return a.to_flat();
}

EnvConfig::EnvConfig() { set_price_cap(rules.price_cap); }

void EnvConfig::set_price_cap(double cap) {
  rules.price_cap = cap;
  for (auto& p : price_template) p = geometric_prices(1.0, cap);
}

BessEnv::BessEnv(EnvConfig config, std::shared_ptr<const std::vector<Scenario>> scenarios, FeatureScaler scaler,
                 std::shared_ptr<const std::vector<ForecastTable>> forecasts)
    : config_(std::move(config)),
      scenarios_(std::move(scenarios)),
      forecasts_(std::move(forecasts)),
      scaler_(scaler),
      alpha_(degradation_coefficient(config_.params)) {
  config_.params.validate();
  config_.rules.validate();
  if (!scenarios_ || scenarios_->empty()) throw InvalidInput("environment needs at least one scenario");
  if (forecasts_ && forecasts_->size() != scenarios_->size())
    throw InvalidInput("forecast tables must align with scenarios");
  for (MarketId m : kMarkets) {
    BandLadder probe{config_.price_template[m], {}};
    const auto v = validate_ladder(probe, config_.rules);
    if (!v.empty()) throw InvalidInput("invalid price template for market " + std::string(market_code(m)));
  }
  if (!(config_.shaping.energy_threshold >= 0.0 &&
        config_.shaping.energy_threshold <= config_.params.energy_capacity))
    throw InvalidInput("shaping threshold outside [0, energy_capacity]");
}

long BessEnv::horizon() const { return static_cast<long>(scenario().size()); }

const Scenario& BessEnv::scenario() const { return (*scenarios_)[scenario_index_]; }

Eigen::VectorXd BessEnv::reset(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, scenarios_->size() - 1);
  const std::size_t idx = pick(rng);
  return reset_to(idx, rng());
}

Eigen::VectorXd BessEnv::reset_to(std::size_t scenario_index, std::uint64_t seed) {
  if (scenario_index >= scenarios_->size()) throw InvalidInput("scenario index out of range");
  scenario_index_ = scenario_index;
  std::mt19937_64 rng(seed);
  const std::uint64_t fr_seed = rng();
  const std::uint64_t noise_seed = rng();
  if (config_.fr_recorded && !config_.fr_recorded->empty()) {
    const auto& rec = *config_.fr_recorded;
    fr_.resize(scenario().size());
    for (std::size_t t = 0; t < fr_.size(); ++t) fr_[t] = rec[(scenario().start + t) % rec.size()];
  } else {
    fr_ = fr_trace(config_.fr, fr_seed, scenario().size());
  }
  if (!forecasts_) {
    noisy_ = config_.forecast_noise > 0.0 ? noisy_forecasts(scenario(), config_.forecast_noise, noise_seed)
                                            : perfect_forecasts(scenario());
  }
  state_ = BessState{};
  state_.soc = std::clamp(0.5, config_.params.soc_min, config_.params.soc_max);
  started_ = true;
  trace_.clear();
  outcomes_.clear();
  return observation();
}

const ForecastRow& BessEnv::forecast_row() const {
  const auto& table = forecasts_ ? (*forecasts_)[scenario_index_] : noisy_;
  const long t = std::min(state_.t, horizon() - 1);
  return table[static_cast<std::size_t>(t)];
}

const FrSignal& BessEnv::fr_now() const { return fr_[static_cast<std::size_t>(std::min(state_.t, horizon() - 1))]; }

Eigen::VectorXd BessEnv::observation() const { return observe(state_, forecast_row(), scaler_); }

StepOutcome BessEnv::preview(const ActionVector& mw_action) const { return preview_from(state_, mw_action); }

StepOutcome BessEnv::preview_from(const BessState& state, const ActionVector& mw_action) const {
  if (!started_) throw StateError("environment not reset");
  if (state.t >= horizon()) throw StateError("episode finished");
  const auto t = static_cast<std::size_t>(state.t);
  const auto& rec = scenario().intervals[t];
  StepOutcome out;
  out.action = clip_action(mw_action, state, config_.params);

  BidderBook book;
  book.bidder_id = config_.bidder_id;
  book.max_charge = config_.params.max_charge;
  book.max_discharge = config_.params.max_discharge;
  book.energy_charge = out.action.charge;
  book.energy_discharge = out.action.discharge;
  for (MarketId m : kMarkets) book.ladders[m] = {config_.price_template[m], out.action.bands[m]};
  std::vector<BidderBook> books = rec.rivals;
  books.push_back(std::move(book));
  out.clearing = clear_joint(books, rec.snapshot, scenario().supply[t], config_.rules);

  PerMarket<double> enabled;
  for (MarketId m : kMarkets) enabled[m] = out.clearing.enabled(m, config_.bidder_id);
  out.next = soc_step(state, out.action, fr_[t], enabled, config_.params);
  const std::size_t next_t = std::min(t + 1, scenario().size() - 1);
  const double p_next = scenario().intervals[next_t].snapshot.energy_price;
  const bool terminal = t + 1 == scenario().size();
  out.reward = reward(state, out.next, out.clearing, config_.bidder_id, p_next, alpha_, config_.params,
                      config_.shaping, terminal, config_.arbitrage_sign);
  return out;
}

Environment::Step BessEnv::commit(const StepOutcome& outcome) {
  if (done()) throw StateError("episode finished");
  TraceRow row;
  row.t = state_.t;
  row.soc = state_.soc;
  row.action = outcome.action;
  row.price = outcome.clearing.prices();
  for (MarketId m : kMarkets) row.enabled[m] = outcome.clearing.enabled(m, config_.bidder_id);
  row.reward = outcome.reward.total();
  trace_.push_back(row);
  outcomes_.push_back(outcome);
  state_ = outcome.next;
  return {observation(), outcome.reward.total(), done()};
}

Environment::Step BessEnv::step(const Eigen::VectorXd& raw_action) {
  if (!started_) throw StateError("environment not reset");
  if (done()) throw StateError("stepping a finished episode");
  return commit(preview(config_.mapping.to_mw(raw_action)));
}

void write_trace(std::ostream& out, const std::vector<TraceRow>& trace) {
  out << "t,soc,pc,pd,cp_lr,cp_rr,cp_lc,cp_rc,ec_lr,ec_rr,ec_lc,ec_rc,reward\n";
  for (const auto& r : trace) {
    std::vector<std::string> f = {std::to_string(r.t), csv::format_double(r.soc), csv::format_double(r.action.charge),
                                  csv::format_double(r.action.discharge)};
    for (MarketId m : kMarkets) f.push_back(csv::format_double(r.price[m]));
    for (MarketId m : kMarkets) f.push_back(csv::format_double(r.enabled[m]));
    f.push_back(csv::format_double(r.reward));
    out << csv::join(f) << '\n';
  }
}

void write_bid_trace(std::ostream& out, const std::vector<TraceRow>& trace) {
  out << "t,market,bc1,bc2,bc3,bc4,bc5,bc6,bc7,bc8,bc9,bc10\n";
  for (const auto& r : trace) {
    for (MarketId m : kMarkets) {
      std::vector<std::string> f = {std::to_string(r.t), std::string(market_code(m))};
      for (double c : r.action.bands[m]) f.push_back(csv::format_double(c));
      out << csv::join(f) << '\n';
    }
  }
}

}  // namespace fcas
