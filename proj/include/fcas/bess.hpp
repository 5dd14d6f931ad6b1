#pragma once

#include <Eigen/Core>

#include "fcas/clearing.hpp"
#include "fcas/market.hpp"

namespace fcas {

struct BessParams {
  double energy_capacity = 100.0;  // MWh
  double soc_min = 0.2;
  double soc_max = 0.8;
  double max_charge = 50.0;     // MW
  double max_discharge = 50.0;  // MW
  double eta_charge = 0.95;
  double eta_discharge = 0.95;
  double cell_cost_total = 100.0e6 * 0.5;  // 100 MWh at 0.5 currency/Wh
  double max_cycles = 1.0e4;
  double interval_hours = 5.0 / 60.0;

  void validate() const;  // throws InvalidInput
};

struct BessState {
  double soc = 0.5;
  double charged_energy = 0.0;  // MWh charged from the energy market this episode
  long t = 0;
};

// Energy-market dispatch plus one cumulative capacity ladder per FCAS market.
struct ActionVector {
  double charge = 0.0;
  double discharge = 0.0;
  PerMarket<BandArray> bands{};

  static constexpr int kFlatSize = static_cast<int>(kMarketCount * kBands + 2);

  // Layout: lr[0..9], rr[0..9], lc[0..9], rc[0..9], charge, discharge.
  Eigen::VectorXd to_flat() const;
  static ActionVector from_flat(const Eigen::Ref<const Eigen::VectorXd>& flat);

  bool operator==(const ActionVector&) const = default;
};

struct ShapingConfig {
  double energy_threshold = 40.0;  // MWh
  double discount = 0.99;
  bool enabled = true;
  // Terminal states carry zero potential, which keeps the optimal policy unchanged.
  bool zero_terminal_potential = true;
};

// Per-market FR utilization in (0, 1).
struct FrSignal {
  PerMarket<double> utilization{{0.5, 0.5, 0.5, 0.5}};
  bool operator==(const FrSignal&) const = default;
};

// alpha = C_BESS / [2 N (SoC_max - SoC_min)], currency per unit SoC.
double degradation_coefficient(const BessParams& params);

// Projects a raw action onto the bid-legal set at the given state.
ActionVector clip_action(const ActionVector& raw, const BessState& state, const BessParams& params);

// Feasibility check mirroring the clip invariants.
bool is_feasible(const ActionVector& a, const BessState& state, const BessParams& params, double tol = 1e-9);

// `enabled` is the BESS capacity enabled in each market this interval.
BessState soc_step(const BessState& state, const ActionVector& action, const FrSignal& fr,
                   const PerMarket<double>& enabled, const BessParams& params);

double shaping_potential(const BessState& state, const ShapingConfig& shaping);

// Sign convention of the energy arbitrage term p * dSoC * E_max.
enum class ArbitrageSign {
  CashFlow,   // charging pays the energy price, discharging earns it
  AsPrinted,  // + p * (SoC_{t+1} - SoC_t) * E_max
};

struct RewardBreakdown {
  PerMarket<double> fcas_revenue{};
  double energy = 0.0;
  double degradation = 0.0;  // <= 0
  double shaping = 0.0;
  double base() const;
  double total() const { return base() + shaping; }
};

RewardBreakdown reward(const BessState& state, const BessState& next, const ClearingResult& clearing,
                       const std::string& bidder_id, double energy_price_next, double alpha,
                       const BessParams& params, const ShapingConfig& shaping, bool terminal,
                       ArbitrageSign sign = ArbitrageSign::CashFlow);

}  // namespace fcas
