#pragma once

#include <Eigen/Core>
#include <array>
#include <deque>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fcas/env.hpp"
#include "fcas/ppo.hpp"

namespace fcas {

// Backend could not produce an answer (transport failure, HTTP error, timeout).
class AdvisorUnavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Per-feature mean and population standard deviation of scaled observations.
struct FeatureStats {
  std::array<double, kStateDim> mean{};
  std::array<double, kStateDim> sd{};

  // Recorded values of the training history.
  static FeatureStats fit(const MarketHistory& training, const FeatureScaler& scaler, const BessParams& params);
  // Forecast rows as the agent observes them.
  static FeatureStats fit(std::span<const ForecastTable> observed, const FeatureScaler& scaler, const BessParams& params);
};

struct OodReport {
  bool in_distribution = true;
  std::array<double, kStateDim> z{};  // z[0] (SoC) is not tested and stays 0
  double max_abs_z = 0.0;
  std::string notes;
  std::vector<std::string> warnings;
};

// Market features 1..9 are z-scored; a zero-variance feature scores 0.
OodReport detect_ood(const Eigen::VectorXd& state, const FeatureStats& stats, double threshold);

// True iff the state is uncommon and the hybrid stream's last-h sum is at
// least the base stream's. Windows shorter than h use what is there.
bool gate_hybrid(bool in_distribution, std::span<const double> hybrid_returns, std::span<const double> base_returns,
                 int h);

struct PromptBundle {
  std::string observation;
  std::string action_schema;
  std::string reward;
  std::string context;

  std::size_t length() const;
  void validate(std::size_t max_chars) const;  // throws InvalidInput
};

enum class BackendKind { Stub, Remote };

struct AdvisorConfig {
  int horizon = 6;  // rolling window, intervals
  double ood_threshold = 3.0;
  BackendKind backend = BackendKind::Stub;
  double timeout_seconds = 30.0;
  double max_delta_fraction = 0.5;  // of the side's power limit, per coordinate
  std::size_t max_prompt_chars = 16000;

  void validate() const;  // throws InvalidInput
};

struct HybridDecision {
  ActionVector delta;  // already projected
  std::string rationale;
  bool applied = false;
  std::string failure;  // empty unless parsing, projection or the backend failed
};

// Everything a backend may look at for one decision.
struct AdvisorQuery {
  PromptBundle prompt;
  OodReport report;
  ActionVector base;  // clipped base action
  BessState state;
  BessParams params;
};

struct BackendReply {
  std::string text;
  nlohmann::json request;  // wire request, null for local backends
};

class AdvisorBackend {
 public:
  virtual ~AdvisorBackend() = default;
  virtual BackendReply complete(const AdvisorQuery& query) = 0;
  virtual std::string name() const = 0;
};

// Always answers with an all-zero delta.
class ZeroDeltaBackend : public AdvisorBackend {
 public:
  BackendReply complete(const AdvisorQuery& query) override;
  std::string name() const override { return "zero"; }
};

// Finds the market with the most positive price z-score and moves
// `shift_fraction` of the other service class's ladder, side by side, into
// that market's class. No positive price z: zero delta.
class RuleBackend : public AdvisorBackend {
 public:
  explicit RuleBackend(double shift_fraction = 0.5);
  BackendReply complete(const AdvisorQuery& query) override;
  std::string name() const override { return "rule"; }

 private:
  double shift_fraction_;
};

struct Advice {
  PerMarket<BandArray> delta{};
  std::string rationale;
};

// Accepts exactly {"delta": {"lr": [10 numbers], "rr": ..., "lc": ..., "rc": ...},
// "rationale": "..."} (rationale optional). On failure returns nullopt and
// fills `error`.
std::optional<Advice> parse_advice(std::string_view text, std::string* error = nullptr);
std::string advice_json(const Advice& advice);

// Shrinks `delta` until base + delta is clip-feasible and every coordinate is
// within fraction x side power limit; all-zero when no such scaling exists.
ActionVector project_delta(const ActionVector& base, const ActionVector& delta, const BessState& state,
                           const BessParams& params, double fraction);

PromptBundle build_prompt(const OodReport& report, const Eigen::VectorXd& observation, const BessState& state,
                          const ForecastRow& forecast, const ActionVector& base, const BessParams& params,
                          const std::string& feedback);

HybridDecision propose_adjustment(const AdvisorQuery& query, AdvisorBackend& backend, const AdvisorConfig& config,
                                  BackendReply* reply = nullptr);

struct EpisodeStats {
  int steps = 0;
  int gated = 0;
  int applied = 0;
  PerMarket<double> shifted{};  // summed band-10 delta, MW
};

struct Feedback {
  double verdict = 0.0;  // hybrid minus base return
  std::string text;
};

Feedback evaluate_feedback(std::span<const double> base_rewards, std::span<const double> hybrid_rewards,
                           const EpisodeStats& stats);

struct ExperienceTuple {
  Eigen::VectorXd state;
  Eigen::VectorXd action;  // raw policy space
  double reward = 0.0;     // buffer units
  bool hybrid = false;
};

// Replaces the buffer's tuples at hybrid steps, re-evaluates their
// log-probabilities under `policy` and recomputes trajectory returns.
void inject_experience(RolloutBuffer& buffer, std::span<const ExperienceTuple> tuples, const GaussianPolicy& policy);

struct HybridStepLog {
  long episode = 0;
  long t = 0;
  bool in_distribution = true;
  double max_abs_z = 0.0;
  bool gate = false;
  bool applied = false;
  ActionVector base;
  ActionVector executed;
  double base_reward = 0.0;
  double hybrid_reward = 0.0;
  std::string failure;
};

// Environment wrapper running the detect / gate / advise / evaluate loop.
// The base action's counterfactual outcome is previewed from the executed
// branch's state each step.
class HybridEnv : public Environment {
 public:
  HybridEnv(BessEnv env, FeatureStats stats, std::shared_ptr<AdvisorBackend> backend, AdvisorConfig config);

  int state_dim() const override { return env_.state_dim(); }
  int action_dim() const override { return env_.action_dim(); }
  Eigen::VectorXd reset(std::uint64_t seed) override;
  Eigen::VectorXd reset_to(std::size_t scenario_index, std::uint64_t seed);
  Step step(const Eigen::VectorXd& raw_action) override;
  std::optional<Eigen::VectorXd> executed_action() const override { return executed_; }

  void set_transcript(std::ostream* out) { transcript_ = out; }
  BessEnv& base_env() { return env_; }
  const BessEnv& base_env() const { return env_; }
  const std::vector<HybridStepLog>& log() const { return log_; }
  const EpisodeStats& stats() const { return stats_; }
  const std::string& feedback() const { return feedback_; }
  const std::vector<double>& base_rewards() const { return base_rewards_; }
  const std::vector<double>& hybrid_rewards() const { return hybrid_rewards_; }

 private:
  void begin_episode();

  BessEnv env_;
  FeatureStats feature_stats_;
  std::shared_ptr<AdvisorBackend> backend_;
  AdvisorConfig config_;
  std::ostream* transcript_ = nullptr;
  long episode_ = -1;
  std::vector<double> base_rewards_;
  std::vector<double> hybrid_rewards_;
  EpisodeStats stats_;
  std::string feedback_;
  std::vector<HybridStepLog> log_;
  std::optional<Eigen::VectorXd> executed_;
};

}  // namespace fcas
