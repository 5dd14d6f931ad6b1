#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <random>
#include <vector>

#include "fcas/bess.hpp"
#include "fcas/clearing.hpp"
#include "fcas/data.hpp"

namespace fcas {

// Episodic environment over flat real-valued states and actions.
class Environment {
 public:
  struct Step {
    Eigen::VectorXd state;
    double reward = 0.0;
    bool done = false;
  };

  virtual ~Environment() = default;
  virtual int state_dim() const = 0;
  virtual int action_dim() const = 0;
  virtual Eigen::VectorXd reset(std::uint64_t seed) = 0;
  virtual Step step(const Eigen::VectorXd& action) = 0;
  // Action actually executed by the last step when it differs from the one
  // passed in (hybrid decisions); stored in place of the proposed action.
  virtual std::optional<Eigen::VectorXd> executed_action() const { return std::nullopt; }
};

using EnvFactory = std::function<std::unique_ptr<Environment>()>;

inline constexpr int kStateDim = 10;

// Affine map of each state feature from [min, max] to [-1, 1]. Layout:
// SoC, energy price, cp lr/rr/lc/rc, demand lr/rr/lc/rc.
struct FeatureScaler {
  std::array<double, kStateDim> min{};
  std::array<double, kStateDim> max{};

  static FeatureScaler fit(const MarketHistory& training, const BessParams& params);
  double scale(std::size_t i, double v) const;  // zero-range features map to 0
};

Eigen::VectorXd observe(const BessState& state, const ForecastRow& forecast, const FeatureScaler& scaler);

// Raw policy output to MW: value = offset + scale * raw.
struct ActionMapping {
  double band_offset = 25.0;
  double band_scale = 25.0;
  double power_offset = 0.0;
  double power_scale = 25.0;

  ActionVector to_mw(const Eigen::Ref<const Eigen::VectorXd>& raw) const;
  Eigen::VectorXd to_raw(const ActionVector& mw) const;
};

struct EnvConfig {
  BessParams params;
  MarketRules rules;
  ShapingConfig shaping;
  FrConfig fr;
  ActionMapping mapping;
  ArbitrageSign arbitrage_sign = ArbitrageSign::CashFlow;
  PerMarket<BandArray> price_template;  // default: geometric from 1 to price_cap
  double forecast_noise = 0.0;          // relative error of observed forecasts
  // Recorded FR utilization indexed by history interval (wrapping); replaces
  // the simulated signal when set.
  std::shared_ptr<const std::vector<FrSignal>> fr_recorded;
  std::string bidder_id = "bess";

  EnvConfig();
  void set_price_cap(double cap);  // also rebuilds the default template
};

struct StepOutcome {
  ActionVector action;  // clipped
  ClearingResult clearing;
  BessState next;
  RewardBreakdown reward;
};

struct TraceRow {
  long t = 0;
  double soc = 0.0;
  ActionVector action;
  PerMarket<double> price{};
  PerMarket<double> enabled{};
  double reward = 0.0;
};

// One BESS bidding against recorded rival books over 288-interval scenarios.
class BessEnv : public Environment {
 public:
  BessEnv(EnvConfig config, std::shared_ptr<const std::vector<Scenario>> scenarios, FeatureScaler scaler,
          std::shared_ptr<const std::vector<ForecastTable>> forecasts = nullptr);

  int state_dim() const override { return kStateDim; }
  int action_dim() const override { return ActionVector::kFlatSize; }
  Eigen::VectorXd reset(std::uint64_t seed) override;
  Eigen::VectorXd reset_to(std::size_t scenario_index, std::uint64_t seed);
  Step step(const Eigen::VectorXd& raw_action) override;

  // Evaluates an MW action at the current state without advancing.
  StepOutcome preview(const ActionVector& mw_action) const;
  StepOutcome preview_from(const BessState& state, const ActionVector& mw_action) const;
  // Applies a previewed outcome; returns the next observation.
  Step commit(const StepOutcome& outcome);

  const BessState& state() const { return state_; }
  bool done() const { return state_.t >= horizon(); }
  long horizon() const;
  const EnvConfig& config() const { return config_; }
  const Scenario& scenario() const;
  std::size_t scenario_index() const { return scenario_index_; }
  const ForecastRow& forecast_row() const;  // forecast for the current interval
  const FrSignal& fr_now() const;
  Eigen::VectorXd observation() const;
  const FeatureScaler& scaler() const { return scaler_; }
  double alpha() const { return alpha_; }
  const std::vector<TraceRow>& trace() const { return trace_; }
  const std::vector<StepOutcome>& outcomes() const { return outcomes_; }

 private:
  EnvConfig config_;
  std::shared_ptr<const std::vector<Scenario>> scenarios_;
  std::shared_ptr<const std::vector<ForecastTable>> forecasts_;
  FeatureScaler scaler_;
  double alpha_;
  std::size_t scenario_index_ = 0;
  ForecastTable noisy_;
  std::vector<FrSignal> fr_;
  BessState state_;
  bool started_ = false;
  std::vector<TraceRow> trace_;
  std::vector<StepOutcome> outcomes_;
};

// `t,soc,pc,pd,cp_lr,cp_rr,cp_lc,cp_rc,ec_lr,ec_rr,ec_lc,ec_rc,reward`
void write_trace(std::ostream& out, const std::vector<TraceRow>& trace);
// `t,market,bc1..bc10`, one row per interval and market.
void write_bid_trace(std::ostream& out, const std::vector<TraceRow>& trace);

}  // namespace fcas
