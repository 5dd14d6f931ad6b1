#pragma once

#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include "fcas/advisor.hpp"
#include "fcas/baseline.hpp"
#include "fcas/config.hpp"
#include "fcas/ppo.hpp"
#include "fcas/report.hpp"

namespace fcas {

// Training and held-out days of one run, with the statistics fitted on the
// training days only.
struct MarketData {
  MarketHistory train;
  MarketHistory test;
  std::shared_ptr<const std::vector<Scenario>> train_scenarios;
  std::shared_ptr<const std::vector<Scenario>> test_scenarios;
  FeatureScaler scaler;
  FeatureStats stats;
};

// Loads the recorded history named in the config or generates the synthetic
// market from the run seed, then splits it.
MarketData prepare_market(const RunConfig& config);
// Reads paths.fr_trace into config.env.fr_recorded when set.
void attach_fr_trace(RunConfig& config);
MarketData split_market(const MarketHistory& history, const RunConfig& config);

enum class AdvisorMode { Off, Stub, Remote };
AdvisorMode parse_advisor_mode(std::string_view s);  // throws InvalidInput

std::shared_ptr<AdvisorBackend> make_backend(AdvisorMode mode, const RunConfig& config);

// Plain environment when the advisor is off, otherwise the hybrid wrapper.
std::unique_ptr<Environment> make_environment(const RunConfig& config, const MarketData& data,
                                              std::shared_ptr<const std::vector<Scenario>> pool, AdvisorMode mode,
                                              std::ostream* transcript = nullptr);

struct EpisodeResult {
  StreamTotals totals;
  std::vector<TraceRow> trace;
  int advised = 0;  // intervals where the hybrid action was executed
};

// Greedy (mean) policy on every held-out day; day i uses seed + i.
std::vector<EpisodeResult> backtest_policy(const GaussianPolicy& policy, const RunConfig& config,
                                           const MarketData& data, AdvisorMode mode, std::uint64_t seed,
                                           std::ostream* transcript = nullptr);

// Day-ahead schedule solved on the last `baseline_scenarios` training days.
DayAheadSolution solve_baseline(const RunConfig& config, const MarketData& data);
std::vector<EpisodeResult> backtest_baseline(const DayAheadSolution& da, const RunConfig& config,
                                             const MarketData& data, RebidMode mode, std::uint64_t seed);

StreamTotals mean_totals(std::span<const EpisodeResult> results);

// Rivals only, supply variation recovered from the observed prices when the
// record has them (zero otherwise).
ClearingResult replay_interval(const IntervalRecord& record, const MarketRules& rules);

struct SweepRow {
  long t = 0;
  MarketId bid_market = MarketId::RegulationLower;
  double capacity = 0.0;  // MW offered at the lowest template band
  PerMarket<double> price{};
};

// The BESS offers each capacity in one market at a time (no energy
// position) against the recorded rivals of `record`.
std::vector<SweepRow> price_sweep(const IntervalRecord& record, const SupplyVariation& supply,
                                  const EnvConfig& env, std::span<const double> capacities,
                                  std::span<const MarketId> markets);

}  // namespace fcas
