#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <iosfwd>
#include <json.hpp>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fcas/env.hpp"
#include "fcas/nn.hpp"

namespace fcas {

struct TrainingConfig {
  int batch_size = 2880;
  int minibatch_size = 72;
  double actor_lr = 0.001;
  double critic_lr = 0.001;
  double discount = 0.99;
  double entropy_coeff = 0.01;
  double clip = 0.2;
  double gae = 0.95;
  int hidden_layers = 2;
  int hidden_width = 256;
  double cvar_confidence = 0.9;
  double reward_tolerance = 12500.0;  // beta, currency
  int epochs = 10;
  std::uint64_t seed = 1;

  int iterations = 20;
  double lambda_lr = 0.01;
  double mu_lr = 0.01;
  double initial_lambda = 1.0;
  double initial_mu = 0.0;
  bool cvar_enabled = true;    // false freezes lambda at 0
  bool calibrate_beta = false; // recompute beta from the first batch
  bool calibrate_mu = false;   // start mu at the first batch's lower-tail VaR
  bool clip_cvar_term = true;  // see LossCoefficients::clip_cvar
  bool normalize_advantages = true;
  double reward_scale = 1.0;   // applied to rewards, values and the Lagrangian
  double initial_log_std = 0.0;
  double max_grad_norm = 0.0;  // 0 disables clipping

  void validate() const;  // throws InvalidInput
};

nlohmann::json to_json(const TrainingConfig& c);
TrainingConfig training_config_from_json(const nlohmann::json& j);

// Diagonal Gaussian with a state-independent log standard deviation.
class GaussianPolicy {
 public:
  GaussianPolicy() = default;
  GaussianPolicy(int state_dim, int action_dim, int hidden_layers, int hidden_width, double initial_log_std);

  void init(std::mt19937_64& rng);

  struct Output {
    Eigen::VectorXd mean;
    Eigen::VectorXd std;
  };
  Output forward(const Eigen::VectorXd& state) const;

  struct Sample {
    Eigen::VectorXd action;
    double log_prob = 0.0;
  };
  Sample sample(const Eigen::VectorXd& state, std::mt19937_64& rng) const;
  Sample sample(const Eigen::VectorXd& state, std::uint64_t seed) const;
  double log_prob(const Eigen::VectorXd& state, const Eigen::VectorXd& action) const;
  double entropy() const;  // nats, same for every state

  Mlp& mean_net() { return mean_; }
  const Mlp& mean_net() const { return mean_; }
  Eigen::VectorXd& log_std() { return log_std_; }
  const Eigen::VectorXd& log_std() const { return log_std_; }
  int state_dim() const { return mean_.inputs(); }
  int action_dim() const { return mean_.outputs(); }

  // Mean-network parameters followed by log_std.
  Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::VectorXd& flat);

 private:
  Mlp mean_;
  Eigen::VectorXd log_std_;
};

double gaussian_log_density(const Eigen::VectorXd& x, const Eigen::VectorXd& mean, const Eigen::VectorXd& log_std);

// Per-step rollout storage; trajectories are contiguous runs ending in done
// or truncation.
struct RolloutBuffer {
  std::vector<Eigen::VectorXd> states;
  std::vector<Eigen::VectorXd> actions;
  std::vector<double> log_probs;
  std::vector<double> rewards;     // scaled
  std::vector<double> values;
  std::vector<bool> dones;         // true: terminal step
  std::vector<double> end_values;  // bootstrap value after a truncated last step, else 0
  std::vector<int> trajectory;     // trajectory index per step

  std::vector<double> returns;     // per trajectory, undiscounted, scaled
  std::vector<bool> complete;      // per trajectory

  std::size_t size() const { return states.size(); }
  void clear();
  void validate() const;  // throws InvalidInput on broken invariants
};

struct GaeResult {
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;  // discounted, bootstrapped: value targets
};
GaeResult compute_gae(const RolloutBuffer& buffer, double gamma, double nu, bool normalize);

struct CvarResult {
  double cvar = 0.0;
  double var = 0.0;  // argmin threshold of the Rockafellar-Uryasev form
};
// Upper-tail CVaR of losses at confidence alpha.
CvarResult cvar(std::span<const double> losses, double alpha);

struct LagrangianState {
  double lambda = 1.0;
  double mu = 0.0;
};

struct LagrangianGradients {
  double d_lambda = 0.0;
  double d_mu = 0.0;
};
// Returns and beta share whatever unit the caller uses.
LagrangianGradients lagrangian_gradients(const LagrangianState& lag, std::span<const double> returns, double beta,
                                         double alpha);
LagrangianState update_lagrangian(const LagrangianState& lag, std::span<const double> returns, double beta,
                                  const TrainingConfig& config);

// Average of the lower-tail VaR and CVaR of returns at confidence alpha.
double calibrate_beta(std::span<const double> returns, double alpha);

struct Minibatch {
  Eigen::MatrixXd states;   // state_dim x n
  Eigen::MatrixXd actions;  // action_dim x n
  Eigen::VectorXd old_log_probs;
  Eigen::VectorXd advantages;
  Eigen::VectorXd cvar_weights;  // (mu - R)^+ of each step's trajectory
  Eigen::VectorXd value_targets;
};

struct LossCoefficients {
  double clip = 0.2;
  double entropy = 0.01;
  double cvar = 0.0;  // lambda / (1 - alpha)
  bool surrogate = true;
  // CVaR term through the importance ratio, pessimistically clipped:
  // coeff * mean(w max(rho, clip(rho))). Same gradient as the log-prob form
  // at rho = 1.
  bool clip_cvar = false;
};

struct PolicyLoss {
  double surrogate = 0.0;  // -mean(min(rho A, clip(rho) A))
  double entropy = 0.0;    // -delta H
  double cvar = 0.0;       // coeff * mean(w log pi), or the clipped ratio form
  double total() const { return surrogate + entropy + cvar; }
};

// Loss value and, if `grad` is given, its gradient w.r.t. policy parameters.
PolicyLoss policy_loss(const GaussianPolicy& policy, const Minibatch& batch, const LossCoefficients& coeff,
                       Eigen::VectorXd* grad);
double value_loss(const Mlp& value, const Minibatch& batch, Eigen::VectorXd* grad);

// Fisher-Yates permutation used for minibatch order.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng);

struct IterationMetrics {
  int iter = 0;
  double mean_return = 0.0;  // currency
  double cvar = 0.0;         // empirical CVaR_alpha(-R), currency
  double entropy = 0.0;
  double lambda = 0.0;
  double mu = 0.0;           // currency
};

class Trainer {
 public:
  Trainer(TrainingConfig config, int state_dim, int action_dim);

  RolloutBuffer collect(Environment& env);
  // Lagrangian then policy/value updates on a collected batch.
  IterationMetrics update(RolloutBuffer& buffer);
  IterationMetrics iterate(Environment& env);
  std::vector<IterationMetrics> train(Environment& env, std::ostream* metrics_csv = nullptr);

  const TrainingConfig& config() const { return config_; }
  const GaussianPolicy& policy() const { return policy_; }
  GaussianPolicy& policy() { return policy_; }
  const Mlp& value() const { return value_; }
  Mlp& value() { return value_; }
  const LagrangianState& lagrangian() const { return lag_; }
  void set_lagrangian(const LagrangianState& l) { lag_ = l; }
  double beta() const { return beta_; }  // scaled units
  std::mt19937_64& rng() { return rng_; }
  int iteration() const { return iteration_; }

  nlohmann::json checkpoint() const;
  // Throws InvalidInput describing every shape difference on mismatch.
  void restore(const nlohmann::json& checkpoint);

 private:
  void update_networks(const RolloutBuffer& buffer, const GaeResult& gae);

  TrainingConfig config_;
  GaussianPolicy policy_;
  Mlp value_;
  Adam policy_opt_, value_opt_;
  LagrangianState lag_;
  double beta_;
  bool beta_ready_;
  bool mu_ready_;
  std::mt19937_64 rng_;
  int iteration_ = 0;
};

void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const IterationMetrics& m);

// Deterministic action (policy mean) for evaluation.
Eigen::VectorXd greedy_action(const GaussianPolicy& policy, const Eigen::VectorXd& state);

// Policy rebuilt from a checkpoint written by Trainer::checkpoint().
GaussianPolicy policy_from_checkpoint(const nlohmann::json& checkpoint);

}  // namespace fcas
