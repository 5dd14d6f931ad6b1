#include "fcas/bess.hpp"

#include <algorithm>
#include <cmath>

#include "fcas/errors.hpp"

namespace fcas {

void BessParams::validate() const {
  if (!(0.0 <= soc_min && soc_min < soc_max && soc_max <= 1.0)) throw InvalidInput("need 0 <= soc_min < soc_max <= 1");
  if (!(eta_charge > 0.0 && eta_charge <= 1.0) || !(eta_discharge > 0.0 && eta_discharge <= 1.0))
    throw InvalidInput("efficiencies must lie in (0, 1]");
  if (!(energy_capacity > 0.0) || !(max_charge > 0.0) || !(max_discharge > 0.0) || !(interval_hours > 0.0))
    throw InvalidInput("capacities and interval must be positive");
  if (!(cell_cost_total >= 0.0)) throw InvalidInput("cell cost must be non-negative");
}

Eigen::VectorXd ActionVector::to_flat() const {
  Eigen::VectorXd v(kFlatSize);
  int i = 0;
  for (MarketId m : kMarkets) {
    for (double c : bands[m]) v[i++] = c;
  }
  v[i++] = charge;
  v[i] = discharge;
  return v;
}

ActionVector ActionVector::from_flat(const Eigen::Ref<const Eigen::VectorXd>& flat) {
  if (flat.size() != kFlatSize) throw InvalidInput("action vector must have 42 entries");
  ActionVector a;
  int i = 0;
  for (MarketId m : kMarkets) {
    for (auto& c : a.bands[m]) c = flat[i++];
  }
  a.charge = flat[i++];
  a.discharge = flat[i];
  return a;
}

double degradation_coefficient(const BessParams& params) {
  const double range = params.soc_max - params.soc_min;
  if (!(params.max_cycles > 0.0)) throw InvalidInput("max_cycles must be positive");
  if (!(range > 0.0)) throw InvalidInput("SoC range must be positive");
  return params.cell_cost_total / (2.0 * params.max_cycles * range);
}

namespace {

double finite_or_zero(double v) { return std::isfinite(v) ? v : 0.0; }

// Band 1 into [0, limit], then each band into [previous band, limit].
void clip_ladder(BandArray& ladder, double limit) {
  limit = std::max(limit, 0.0);
  ladder[0] = std::clamp(finite_or_zero(ladder[0]), 0.0, limit);
  for (std::size_t k = 0; k + 1 < kBands; ++k) {
    ladder[k + 1] = std::clamp(finite_or_zero(ladder[k + 1]), ladder[k], limit);
  }
}

}  // namespace

ActionVector clip_action(const ActionVector& raw, const BessState& state, const BessParams& params) {
  ActionVector a = raw;
  a.charge = std::clamp(finite_or_zero(a.charge), 0.0, params.max_charge);
  a.discharge = std::clamp(finite_or_zero(a.discharge), 0.0, params.max_discharge);
  if (a.charge > 0.0 && a.discharge > 0.0) {
    if (a.charge >= a.discharge) {
      a.discharge = 0.0;
    } else {
      a.charge = 0.0;
    }
  }

  auto& lr = a.bands[MarketId::RegulationLower];
  auto& lc = a.bands[MarketId::ContingencyLower];
  auto& rr = a.bands[MarketId::RegulationRaise];
  auto& rc = a.bands[MarketId::ContingencyRaise];
  clip_ladder(lr, params.max_charge - a.charge);
  clip_ladder(lc, params.max_charge - a.charge - lr[kBands - 1]);
  clip_ladder(rr, params.max_discharge - a.discharge);
  clip_ladder(rc, params.max_discharge - a.discharge - rr[kBands - 1]);

  if (state.soc >= params.soc_max) {
    a.charge = 0.0;
    lr.fill(0.0);
    lc.fill(0.0);
  }
  if (state.soc <= params.soc_min) {
    a.discharge = 0.0;
    rr.fill(0.0);
    rc.fill(0.0);
  }
  return a;
}

bool is_feasible(const ActionVector& a, const BessState& state, const BessParams& params, double tol) {
  if (a.charge < -tol || a.discharge < -tol) return false;
  if (a.charge > params.max_charge + tol || a.discharge > params.max_discharge + tol) return false;
  if (a.charge > tol && a.discharge > tol) return false;
  for (MarketId m : kMarkets) {
    const auto& b = a.bands[m];
    if (b[0] < -tol) return false;
    for (std::size_t k = 0; k + 1 < kBands; ++k) {
      if (b[k + 1] < b[k] - tol) return false;
    }
  }
  const double lower = a.bands[MarketId::RegulationLower][kBands - 1] + a.bands[MarketId::ContingencyLower][kBands - 1];
  const double raise = a.bands[MarketId::RegulationRaise][kBands - 1] + a.bands[MarketId::ContingencyRaise][kBands - 1];
  if (lower + a.charge > params.max_charge + tol) return false;
  if (raise + a.discharge > params.max_discharge + tol) return false;
  if (state.soc >= params.soc_max && (a.charge > tol || lower > tol)) return false;
  if (state.soc <= params.soc_min && (a.discharge > tol || raise > tol)) return false;
  return true;
}

BessState soc_step(const BessState& state, const ActionVector& action, const FrSignal& fr,
                   const PerMarket<double>& enabled, const BessParams& params) {
  const auto& s = fr.utilization;
  const double charge_mw = action.charge + s[MarketId::RegulationLower] * enabled[MarketId::RegulationLower] +
                           s[MarketId::ContingencyLower] * enabled[MarketId::ContingencyLower];
  const double discharge_mw = action.discharge + s[MarketId::RegulationRaise] * enabled[MarketId::RegulationRaise] +
                              s[MarketId::ContingencyRaise] * enabled[MarketId::ContingencyRaise];
  const double delta =
      (charge_mw * params.eta_charge - discharge_mw / params.eta_discharge) * params.interval_hours /
      params.energy_capacity;
  BessState next = state;
  next.soc = std::clamp(state.soc + delta, params.soc_min, params.soc_max);
  next.charged_energy = state.charged_energy + action.charge * params.eta_charge * params.interval_hours;
  next.t = state.t + 1;
  return next;
}

double shaping_potential(const BessState& state, const ShapingConfig& shaping) {
  return std::min(state.charged_energy - shaping.energy_threshold, 0.0);
}

double RewardBreakdown::base() const {
  double r = energy + degradation;
  for (double v : fcas_revenue) r += v;
  return r;
}

RewardBreakdown reward(const BessState& state, const BessState& next, const ClearingResult& clearing,
                       const std::string& bidder_id, double energy_price_next, double alpha,
                       const BessParams& params, const ShapingConfig& shaping, bool terminal, ArbitrageSign sign) {
  RewardBreakdown r;
  for (MarketId m : kMarkets) r.fcas_revenue[m] = clearing.revenue(m, bidder_id);
  const double dsoc = next.soc - state.soc;
  const double stored_value = energy_price_next * dsoc * params.energy_capacity;
  r.energy = sign == ArbitrageSign::CashFlow ? -stored_value : stored_value;
  r.degradation = -alpha * std::abs(dsoc);
  if (shaping.enabled) {
    const double phi_next = terminal && shaping.zero_terminal_potential ? 0.0 : shaping_potential(next, shaping);
    r.shaping = shaping.discount * phi_next - shaping_potential(state, shaping);
  }
  return r;
}

}  // namespace fcas
