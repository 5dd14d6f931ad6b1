#include "fcas/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "fcas/csv.hpp"
#include "fcas/errors.hpp"

namespace fcas {

namespace {

constexpr double kLogTwoPi = 1.8378770664093453;  // ln(2 pi)

bool open_unit(double x) { return x > 0.0 && x < 1.0; }

std::vector<int> hidden_sizes(const TrainingConfig& c) { return std::vector<int>(c.hidden_layers, c.hidden_width); }

void require_finite(const Eigen::VectorXd& v, const char* what) {
  if (!v.allFinite()) throw InvalidInput(std::string("non-finite ") + what);
}

void clip_norm(Eigen::VectorXd& g, double max_norm) {
  if (max_norm <= 0.0) return;
  const double n = g.norm();
  if (n > max_norm) g *= max_norm / n;
}

nlohmann::json tensor_json(const std::string& name, const Eigen::MatrixXd& m) {
  std::vector<double> data(m.data(), m.data() + m.size());
  return {{"name", name}, {"shape", {m.rows(), m.cols()}}, {"data", data}};
}

std::vector<std::pair<std::string, Eigen::MatrixXd*>> named_tensors(GaussianPolicy& policy, Mlp& value) {
  std::vector<std::pair<std::string, Eigen::MatrixXd*>> out;
  auto add_net = [&out](const std::string& prefix, Mlp& net) {
    for (std::size_t l = 0; l < net.weights().size(); ++l) {
      out.emplace_back(prefix + ".W" + std::to_string(l), &net.weights()[l]);
    }
  };
  add_net("policy", policy.mean_net());
  add_net("value", value);
  return out;
}

// Biases and log_std are vectors; handled separately from the weight matrices.
std::vector<std::pair<std::string, Eigen::VectorXd*>> named_vectors(GaussianPolicy& policy, Mlp& value) {
  std::vector<std::pair<std::string, Eigen::VectorXd*>> out;
  auto add_net = [&out](const std::string& prefix, Mlp& net) {
    for (std::size_t l = 0; l < net.biases().size(); ++l) {
      out.emplace_back(prefix + ".b" + std::to_string(l), &net.biases()[l]);
    }
  };
  add_net("policy", policy.mean_net());
  out.emplace_back("policy.log_std", &policy.log_std());
  add_net("value", value);
  return out;
}

// Loads tensors by name, collecting every mismatch before throwing.
void load_tensors(const nlohmann::json& tensors, GaussianPolicy& policy, Mlp* value) {
  std::map<std::string, const nlohmann::json*> by_name;
  for (const auto& t : tensors) by_name[t.at("name").get<std::string>()] = &t;
  Mlp dummy;
  Mlp& v = value ? *value : dummy;
  std::vector<std::string> problems;
  auto fetch = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols, double* dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      problems.push_back(name + ": missing");
      return;
    }
    const auto& shape = it->second->at("shape");
    const auto r = shape.at(0).get<Eigen::Index>();
    const auto c = shape.at(1).get<Eigen::Index>();
    const auto& data = it->second->at("data");
    if (r != rows || c != cols || static_cast<Eigen::Index>(data.size()) != rows * cols) {
      std::ostringstream msg;
      msg << name << ": expected " << rows << "x" << cols << ", found " << r << "x" << c;
      problems.push_back(msg.str());
      return;
    }
    for (Eigen::Index i = 0; i < rows * cols; ++i) dst[i] = data[static_cast<std::size_t>(i)].get<double>();
  };
  for (auto& [name, m] : named_tensors(policy, v)) {
    if (!value && name.starts_with("value")) continue;
    fetch(name, m->rows(), m->cols(), m->data());
  }
  for (auto& [name, vec] : named_vectors(policy, v)) {
    if (!value && name.starts_with("value")) continue;
    fetch(name, vec->size(), 1, vec->data());
  }
  if (!problems.empty()) {
    std::string msg = "checkpoint shape mismatch:";
    for (const auto& p : problems) msg += " " + p + ";";
    throw InvalidInput(msg);
  }
}

}  // namespace

void TrainingConfig::validate() const {
  if (batch_size <= 0 || minibatch_size <= 0) throw InvalidInput("batch sizes must be positive");
  if (minibatch_size > batch_size) throw InvalidInput("minibatch_size exceeds batch_size");
  if (!(actor_lr > 0.0) || !(critic_lr > 0.0)) throw InvalidInput("learning rates must be positive");
  if (!open_unit(discount) && discount != 0.0) throw InvalidInput("discount must lie in [0, 1)");
  if (!open_unit(gae) && gae != 0.0 && gae != 1.0) throw InvalidInput("gae must lie in [0, 1]");
  if (!open_unit(clip)) throw InvalidInput("clip must lie in (0, 1)");
  if (!open_unit(cvar_confidence)) throw InvalidInput("cvar_confidence must lie in (0, 1)");
  if (!(entropy_coeff >= 0.0)) throw InvalidInput("entropy_coeff must be non-negative");
  if (hidden_layers < 0 || hidden_width <= 0) throw InvalidInput("hidden layer sizes must be positive");
  if (epochs <= 0 || iterations < 0) throw InvalidInput("epochs must be positive");
  if (!(lambda_lr >= 0.0) || !(mu_lr >= 0.0)) throw InvalidInput("multiplier learning rates must be non-negative");
  if (!(initial_lambda >= 0.0)) throw InvalidInput("initial_lambda must be non-negative");
  if (!(reward_scale > 0.0)) throw InvalidInput("reward_scale must be positive");
  if (!std::isfinite(reward_tolerance) || !std::isfinite(initial_mu) || !std::isfinite(initial_log_std))
    throw InvalidInput("non-finite training parameter");
  if (!(max_grad_norm >= 0.0)) throw InvalidInput("max_grad_norm must be non-negative");
}

nlohmann::json to_json(const TrainingConfig& c) {
  return {{"batch_size", c.batch_size},
          {"minibatch_size", c.minibatch_size},
          {"actor_lr", c.actor_lr},
          {"critic_lr", c.critic_lr},
          {"discount", c.discount},
          {"entropy_coeff", c.entropy_coeff},
          {"clip", c.clip},
          {"gae", c.gae},
          {"hidden_layers", c.hidden_layers},
          {"hidden_width", c.hidden_width},
          {"activation", "tanh"},
          {"optimizer", "adam"},
          {"cvar_confidence", c.cvar_confidence},
          {"reward_tolerance", c.reward_tolerance},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"iterations", c.iterations},
          {"lambda_lr", c.lambda_lr},
          {"mu_lr", c.mu_lr},
          {"initial_lambda", c.initial_lambda},
          {"initial_mu", c.initial_mu},
          {"cvar_enabled", c.cvar_enabled},
          {"calibrate_beta", c.calibrate_beta},
          {"calibrate_mu", c.calibrate_mu},
          {"clip_cvar_term", c.clip_cvar_term},
          {"normalize_advantages", c.normalize_advantages},
          {"reward_scale", c.reward_scale},
          {"initial_log_std", c.initial_log_std},
          {"max_grad_norm", c.max_grad_norm}};
}

TrainingConfig training_config_from_json(const nlohmann::json& j) {
  TrainingConfig c;
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  get("batch_size", c.batch_size);
  get("minibatch_size", c.minibatch_size);
  get("actor_lr", c.actor_lr);
  get("critic_lr", c.critic_lr);
  get("discount", c.discount);
  get("entropy_coeff", c.entropy_coeff);
  get("clip", c.clip);
  get("gae", c.gae);
  get("hidden_layers", c.hidden_layers);
  get("hidden_width", c.hidden_width);
  get("cvar_confidence", c.cvar_confidence);
  get("reward_tolerance", c.reward_tolerance);
  get("epochs", c.epochs);
  get("seed", c.seed);
  get("iterations", c.iterations);
  get("lambda_lr", c.lambda_lr);
  get("mu_lr", c.mu_lr);
  get("initial_lambda", c.initial_lambda);
  get("initial_mu", c.initial_mu);
  get("cvar_enabled", c.cvar_enabled);
  get("calibrate_beta", c.calibrate_beta);
  get("calibrate_mu", c.calibrate_mu);
  get("clip_cvar_term", c.clip_cvar_term);
  get("normalize_advantages", c.normalize_advantages);
  get("reward_scale", c.reward_scale);
  get("initial_log_std", c.initial_log_std);
  get("max_grad_norm", c.max_grad_norm);
  return c;
}

GaussianPolicy::GaussianPolicy(int state_dim, int action_dim, int hidden_layers, int hidden_width,
                               double initial_log_std)
    : mean_(state_dim, std::vector<int>(hidden_layers, hidden_width), action_dim),
      log_std_(Eigen::VectorXd::Constant(action_dim, initial_log_std)) {}

void GaussianPolicy::init(std::mt19937_64& rng) { mean_.init(rng, 0.01); }

GaussianPolicy::Output GaussianPolicy::forward(const Eigen::VectorXd& state) const {
  if (state.size() != state_dim()) throw InvalidInput("state width mismatch");
  require_finite(state, "state");
  return {mean_.forward(state).col(0), log_std_.array().exp().matrix()};
}

GaussianPolicy::Sample GaussianPolicy::sample(const Eigen::VectorXd& state, std::mt19937_64& rng) const {
  const auto out = forward(state);
  std::normal_distribution<double> n01(0.0, 1.0);
  Sample s;
  s.action.resize(action_dim());
  for (Eigen::Index d = 0; d < s.action.size(); ++d) s.action[d] = out.mean[d] + out.std[d] * n01(rng);
  s.log_prob = gaussian_log_density(s.action, out.mean, log_std_);
  return s;
}

GaussianPolicy::Sample GaussianPolicy::sample(const Eigen::VectorXd& state, std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  return sample(state, rng);
}

double GaussianPolicy::log_prob(const Eigen::VectorXd& state, const Eigen::VectorXd& action) const {
  if (action.size() != action_dim()) throw InvalidInput("action width mismatch");
  return gaussian_log_density(action, forward(state).mean, log_std_);
}

double GaussianPolicy::entropy() const {
  return static_cast<double>(log_std_.size()) * 0.5 * (kLogTwoPi + 1.0) + log_std_.sum();
}

Eigen::VectorXd GaussianPolicy::parameters() const {
  const Eigen::VectorXd net = mean_.parameters();
  Eigen::VectorXd flat(net.size() + log_std_.size());
  flat << net, log_std_;
  return flat;
}

void GaussianPolicy::set_parameters(const Eigen::VectorXd& flat) {
  const Eigen::Index n = mean_.parameter_count();
  if (flat.size() != n + log_std_.size()) throw InvalidInput("policy parameter size mismatch");
  mean_.set_parameters(flat.head(n));
  log_std_ = flat.tail(log_std_.size());
}

double gaussian_log_density(const Eigen::VectorXd& x, const Eigen::VectorXd& mean, const Eigen::VectorXd& log_std) {
  double lp = 0.0;
  for (Eigen::Index d = 0; d < x.size(); ++d) {
    const double z = (x[d] - mean[d]) * std::exp(-log_std[d]);
    lp += -0.5 * z * z - log_std[d] - 0.5 * kLogTwoPi;
  }
  return lp;
}

void RolloutBuffer::clear() { *this = RolloutBuffer{}; }

void RolloutBuffer::validate() const {
  const std::size_t n = states.size();
  if (actions.size() != n || log_probs.size() != n || rewards.size() != n || values.size() != n ||
      dones.size() != n || end_values.size() != n || trajectory.size() != n)
    throw InvalidInput("rollout buffer columns differ in length");
  if (returns.size() != complete.size()) throw InvalidInput("rollout trajectory columns differ in length");
  for (std::size_t i = 0; i < n; ++i) {
    const bool last = i + 1 == n || trajectory[i + 1] != trajectory[i];
    if (dones[i] && !last) throw InvalidInput("done flag inside a trajectory");
    if (trajectory[i] < 0 || static_cast<std::size_t>(trajectory[i]) >= returns.size())
      throw InvalidInput("trajectory index out of range");
    if (last && complete[static_cast<std::size_t>(trajectory[i])] != dones[i])
      throw InvalidInput("trajectory completeness disagrees with done flag");
  }
}

GaeResult compute_gae(const RolloutBuffer& buffer, double gamma, double nu, bool normalize) {
  const auto n = static_cast<Eigen::Index>(buffer.size());
  GaeResult out{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
  double adv = 0.0, ret = 0.0;
  for (Eigen::Index i = n; i-- > 0;) {
    const auto k = static_cast<std::size_t>(i);
    const bool last = i + 1 == n || buffer.trajectory[k + 1] != buffer.trajectory[k];
    double next_value;
    if (last) {
      next_value = buffer.dones[k] ? 0.0 : buffer.end_values[k];
      adv = 0.0;
      ret = next_value;
    } else {
      next_value = buffer.values[k + 1];
    }
    const double delta = buffer.rewards[k] + gamma * next_value - buffer.values[k];
    adv = delta + gamma * nu * adv;
    ret = buffer.rewards[k] + gamma * ret;
    out.advantages[i] = adv;
    out.returns[i] = ret;
  }
  if (normalize && n > 1) {
    const double mean = out.advantages.mean();
    const double sd = std::sqrt((out.advantages.array() - mean).square().mean());
    out.advantages = (out.advantages.array() - mean) / (sd + 1e-8);
  }
  return out;
}

CvarResult cvar(std::span<const double> losses, double alpha) {
  if (losses.empty()) throw InvalidInput("cvar needs at least one sample");
  if (!open_unit(alpha)) throw InvalidInput("cvar confidence must lie in (0, 1)");
  std::vector<double> sorted(losses.begin(), losses.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  auto k = static_cast<std::size_t>(std::ceil(alpha * n - 1e-9));
  k = std::clamp<std::size_t>(k, 1, sorted.size());
  const double var = sorted[k - 1];
  double tail = 0.0;
  for (double l : sorted) tail += std::max(0.0, l - var);
  return {var + tail / (n * (1.0 - alpha)), var};
}

LagrangianGradients lagrangian_gradients(const LagrangianState& lag, std::span<const double> returns, double beta,
                                         double alpha) {
  if (returns.empty()) throw InvalidInput("Lagrangian update needs at least one complete trajectory");
  double shortfall = 0.0, below = 0.0;
  for (double r : returns) {
    shortfall += std::max(0.0, lag.mu - r);
    if (r <= lag.mu) below += 1.0;
  }
  const double n = static_cast<double>(returns.size());
  LagrangianGradients g;
  g.d_lambda = beta - lag.mu + shortfall / n / (1.0 - alpha);
  g.d_mu = lag.lambda * (below / n) / (1.0 - alpha) - lag.lambda;
  return g;
}

LagrangianState update_lagrangian(const LagrangianState& lag, std::span<const double> returns, double beta,
                                  const TrainingConfig& config) {
  const auto g = lagrangian_gradients(lag, returns, beta, config.cvar_confidence);
  LagrangianState next;
  next.lambda = std::max(0.0, lag.lambda + config.lambda_lr * g.d_lambda);
  next.mu = lag.mu - config.mu_lr * g.d_mu;
  return next;
}

double calibrate_beta(std::span<const double> returns, double alpha) {
  std::vector<double> losses(returns.size());
  std::transform(returns.begin(), returns.end(), losses.begin(), [](double r) { return -r; });
  const auto c = cvar(losses, alpha);
  return -(c.cvar + c.var) / 2.0;
}

PolicyLoss policy_loss(const GaussianPolicy& policy, const Minibatch& batch, const LossCoefficients& coeff,
                       Eigen::VectorXd* grad) {
  const Eigen::Index b = batch.states.cols();
  if (b == 0) throw InvalidInput("empty minibatch");
  Mlp::Cache cache;
  const Eigen::MatrixXd mean = policy.mean_net().forward(batch.states, cache);
  const Eigen::VectorXd& log_std = policy.log_std();
  const Eigen::ArrayXd inv_var = (-2.0 * log_std.array()).exp();
  const double inv_b = 1.0 / static_cast<double>(b);

  PolicyLoss loss;
  Eigen::VectorXd dlogp = Eigen::VectorXd::Zero(b);
  for (Eigen::Index i = 0; i < b; ++i) {
    const double lp = gaussian_log_density(batch.actions.col(i), mean.col(i), log_std);
    if (coeff.surrogate) {
      const double a = batch.advantages[i];
      const double ratio = std::exp(lp - batch.old_log_probs[i]);
      const double clipped = std::clamp(ratio, 1.0 - coeff.clip, 1.0 + coeff.clip);
      const bool unclipped = ratio * a <= clipped * a;
      loss.surrogate -= inv_b * std::min(ratio * a, clipped * a);
      if (unclipped || clipped == ratio) dlogp[i] -= inv_b * ratio * a;
    }
    if (coeff.cvar != 0.0 && coeff.clip_cvar) {
      const double ratio = std::exp(lp - batch.old_log_probs[i]);
      const double w = coeff.cvar * inv_b * batch.cvar_weights[i];
      if (ratio >= 1.0 - coeff.clip) {
        loss.cvar += w * ratio;
        dlogp[i] += w * ratio;
      } else {
        loss.cvar += w * (1.0 - coeff.clip);
      }
    } else if (coeff.cvar != 0.0) {
      loss.cvar += coeff.cvar * inv_b * batch.cvar_weights[i] * lp;
      dlogp[i] += coeff.cvar * inv_b * batch.cvar_weights[i];
    }
  }
  loss.entropy = -coeff.entropy * policy.entropy();

  if (grad) {
    const Eigen::MatrixXd diff = batch.actions - mean;
    // d logp / d mean = (a - m) / sigma^2; d logp / d log_std = (a - m)^2 / sigma^2 - 1.
    Eigen::MatrixXd dmean = diff.array().colwise() * inv_var;
    dmean = dmean.array().rowwise() * dlogp.transpose().array();
    Eigen::VectorXd net_grad = Eigen::VectorXd::Zero(policy.mean_net().parameter_count());
    policy.mean_net().backward(cache, dmean, net_grad);
    Eigen::VectorXd dls = Eigen::VectorXd::Constant(log_std.size(), -coeff.entropy);
    const Eigen::MatrixXd z2 = ((diff.array().square()).colwise() * inv_var) - 1.0;
    dls += z2 * dlogp;
    grad->resize(net_grad.size() + dls.size());
    *grad << net_grad, dls;
  }
  return loss;
}

double value_loss(const Mlp& value, const Minibatch& batch, Eigen::VectorXd* grad) {
  const Eigen::Index b = batch.states.cols();
  if (b == 0) throw InvalidInput("empty minibatch");
  Mlp::Cache cache;
  const Eigen::MatrixXd v = value.forward(batch.states, cache);
  const Eigen::RowVectorXd err = v.row(0) - batch.value_targets.transpose();
  const double inv_b = 1.0 / static_cast<double>(b);
  if (grad) {
    *grad = Eigen::VectorXd::Zero(value.parameter_count());
    value.backward(cache, err * inv_b, *grad);
  }
  return 0.5 * inv_b * err.squaredNorm();
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(idx[i - 1], idx[pick(rng)]);
  }
  return idx;
}

Trainer::Trainer(TrainingConfig config, int state_dim, int action_dim)
    : config_(std::move(config)),
      lag_{config_.initial_lambda, config_.initial_mu * config_.reward_scale},
      beta_(config_.reward_tolerance * config_.reward_scale),
      beta_ready_(!config_.calibrate_beta),
      mu_ready_(!config_.calibrate_mu),
      rng_(config_.seed) {
  config_.validate();
  if (!config_.cvar_enabled) lag_.lambda = 0.0;
  policy_ = GaussianPolicy(state_dim, action_dim, config_.hidden_layers, config_.hidden_width,
                           config_.initial_log_std);
  value_ = Mlp(state_dim, hidden_sizes(config_), 1);
  policy_.init(rng_);
  value_.init(rng_, 1.0);
  policy_opt_ = Adam(policy_.parameters().size(), config_.actor_lr);
  value_opt_ = Adam(value_.parameter_count(), config_.critic_lr);
}

RolloutBuffer Trainer::collect(Environment& env) {
  if (env.state_dim() != policy_.state_dim() || env.action_dim() != policy_.action_dim())
    throw InvalidInput("environment dimensions differ from the policy");
  RolloutBuffer buf;
  Eigen::VectorXd s;
  bool need_reset = true;
  int traj = -1;
  double ret = 0.0;
  for (int step = 0; step < config_.batch_size; ++step) {
    if (need_reset) {
      s = env.reset(rng_());
      need_reset = false;
      ++traj;
      ret = 0.0;
    }
    auto sample = policy_.sample(s, rng_);
    const double v = value_.forward(s)(0, 0);
    const auto result = env.step(sample.action);
    if (auto executed = env.executed_action()) {
      sample.action = *executed;
      sample.log_prob = policy_.log_prob(s, sample.action);
    }
    if (!std::isfinite(result.reward)) throw NumericError("non-finite reward at rollout step " + std::to_string(step));
    const double r = result.reward * config_.reward_scale;
    ret += r;
    buf.states.push_back(s);
    buf.actions.push_back(sample.action);
    buf.log_probs.push_back(sample.log_prob);
    buf.rewards.push_back(r);
    buf.values.push_back(v);
    buf.dones.push_back(result.done);
    buf.trajectory.push_back(traj);
    buf.end_values.push_back(0.0);
    const bool full = step + 1 == config_.batch_size;
    if (result.done || full) {
      if (!result.done) buf.end_values.back() = value_.forward(result.state)(0, 0);
      buf.returns.push_back(ret);
      buf.complete.push_back(result.done);
      need_reset = true;
    } else {
      s = result.state;
    }
  }
  return buf;
}

IterationMetrics Trainer::update(RolloutBuffer& buffer) {
  buffer.validate();
  if (buffer.size() == 0) throw InvalidInput("empty rollout buffer");
  std::vector<double> returns;
  for (std::size_t j = 0; j < buffer.returns.size(); ++j) {
    if (buffer.complete[j]) returns.push_back(buffer.returns[j]);
  }
  if (!returns.empty()) {
    if (!beta_ready_) {
      beta_ = calibrate_beta(returns, config_.cvar_confidence);
      beta_ready_ = true;
    }
    if (!mu_ready_) {
      std::vector<double> losses(returns.size());
      std::transform(returns.begin(), returns.end(), losses.begin(), [](double r) { return -r; });
      lag_.mu = -cvar(losses, config_.cvar_confidence).var;
      mu_ready_ = true;
    }
    if (config_.cvar_enabled) lag_ = update_lagrangian(lag_, returns, beta_, config_);
  }
  const GaeResult gae = compute_gae(buffer, config_.discount, config_.gae, config_.normalize_advantages);
  update_networks(buffer, gae);

  IterationMetrics m;
  m.iter = ++iteration_;
  const double scale = config_.reward_scale;
  if (!returns.empty()) {
    std::vector<double> losses(returns.size());
    std::transform(returns.begin(), returns.end(), losses.begin(), [scale](double r) { return -r / scale; });
    m.mean_return = -std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
    m.cvar = cvar(losses, config_.cvar_confidence).cvar;
  }
  m.entropy = policy_.entropy();
  m.lambda = lag_.lambda;
  m.mu = lag_.mu / scale;
  return m;
}

void Trainer::update_networks(const RolloutBuffer& buffer, const GaeResult& gae) {
  const std::size_t n = buffer.size();
  const auto sd = policy_.state_dim();
  const auto ad = policy_.action_dim();
  LossCoefficients coeff;
  coeff.clip = config_.clip;
  coeff.entropy = config_.entropy_coeff;
  coeff.cvar = lag_.lambda / (1.0 - config_.cvar_confidence);
  coeff.clip_cvar = config_.clip_cvar_term;

  std::vector<double> weight(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = static_cast<std::size_t>(buffer.trajectory[i]);
    if (buffer.complete[j]) weight[i] = std::max(0.0, lag_.mu - buffer.returns[j]);
  }

  const auto mb_size = static_cast<std::size_t>(config_.minibatch_size);
  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    const auto order = shuffled_indices(n, rng_);
    for (std::size_t start = 0; start < n; start += mb_size) {
      const std::size_t count = std::min(mb_size, n - start);
      Minibatch mb;
      mb.states.resize(sd, static_cast<Eigen::Index>(count));
      mb.actions.resize(ad, static_cast<Eigen::Index>(count));
      mb.old_log_probs.resize(static_cast<Eigen::Index>(count));
      mb.advantages.resize(static_cast<Eigen::Index>(count));
      mb.cvar_weights.resize(static_cast<Eigen::Index>(count));
      mb.value_targets.resize(static_cast<Eigen::Index>(count));
      for (std::size_t c = 0; c < count; ++c) {
        const std::size_t i = order[start + c];
        const auto col = static_cast<Eigen::Index>(c);
        mb.states.col(col) = buffer.states[i];
        mb.actions.col(col) = buffer.actions[i];
        mb.old_log_probs[col] = buffer.log_probs[i];
        mb.advantages[col] = gae.advantages[static_cast<Eigen::Index>(i)];
        mb.cvar_weights[col] = weight[i];
        mb.value_targets[col] = gae.returns[static_cast<Eigen::Index>(i)];
      }

      Eigen::VectorXd g;
      const PolicyLoss pl = policy_loss(policy_, mb, coeff, &g);
      if (!std::isfinite(pl.total()) || !g.allFinite()) {
        std::ostringstream msg;
        msg << "non-finite policy loss (iteration " << iteration_ + 1 << ", epoch " << epoch << ", offset " << start
            << "): surrogate=" << pl.surrogate << " entropy=" << pl.entropy << " cvar=" << pl.cvar
            << " lambda=" << lag_.lambda << " mu=" << lag_.mu << " max|adv|=" << mb.advantages.cwiseAbs().maxCoeff();
        throw NumericError(msg.str());
      }
      clip_norm(g, config_.max_grad_norm);
      Eigen::VectorXd p = policy_.parameters();
      policy_opt_.step(p, g);
      policy_.set_parameters(p);

      Eigen::VectorXd gv;
      const double vl = value_loss(value_, mb, &gv);
      if (!std::isfinite(vl) || !gv.allFinite()) {
        std::ostringstream msg;
        msg << "non-finite value loss (iteration " << iteration_ + 1 << ", epoch " << epoch << ", offset " << start
            << "): loss=" << vl << " max|target|=" << mb.value_targets.cwiseAbs().maxCoeff();
        throw NumericError(msg.str());
      }
      clip_norm(gv, config_.max_grad_norm);
      Eigen::VectorXd pv = value_.parameters();
      value_opt_.step(pv, gv);
      value_.set_parameters(pv);
    }
  }
}

IterationMetrics Trainer::iterate(Environment& env) {
  RolloutBuffer buf = collect(env);
  return update(buf);
}

std::vector<IterationMetrics> Trainer::train(Environment& env, std::ostream* metrics_csv) {
  std::vector<IterationMetrics> log;
  if (metrics_csv) write_metrics_header(*metrics_csv);
  for (int i = 0; i < config_.iterations; ++i) {
    log.push_back(iterate(env));
    if (metrics_csv) write_metrics_row(*metrics_csv, log.back());
  }
  return log;
}

nlohmann::json Trainer::checkpoint() const {
  nlohmann::json j;
  j["version"] = 1;
  j["config"] = to_json(config_);
  j["state_dim"] = policy_.state_dim();
  j["action_dim"] = policy_.action_dim();
  j["iteration"] = iteration_;
  j["lambda"] = lag_.lambda;
  j["mu"] = lag_.mu;
  j["beta"] = beta_;
  j["beta_ready"] = beta_ready_;
  j["mu_ready"] = mu_ready_;
  std::ostringstream rng_state;
  rng_state << rng_;
  j["rng"] = rng_state.str();
  nlohmann::json tensors = nlohmann::json::array();
  auto& self = const_cast<Trainer&>(*this);
  for (auto& [name, m] : named_tensors(self.policy_, self.value_)) tensors.push_back(tensor_json(name, *m));
  for (auto& [name, v] : named_vectors(self.policy_, self.value_)) tensors.push_back(tensor_json(name, *v));
  j["tensors"] = std::move(tensors);
  return j;
}

void Trainer::restore(const nlohmann::json& checkpoint) {
  if (checkpoint.value("version", 0) != 1) throw InvalidInput("unsupported checkpoint version");
  load_tensors(checkpoint.at("tensors"), policy_, &value_);
  iteration_ = checkpoint.value("iteration", 0);
  lag_.lambda = checkpoint.at("lambda").get<double>();
  lag_.mu = checkpoint.at("mu").get<double>();
  beta_ = checkpoint.value("beta", beta_);
  beta_ready_ = checkpoint.value("beta_ready", true);
  mu_ready_ = checkpoint.value("mu_ready", true);
  if (checkpoint.contains("rng")) {
    std::istringstream in(checkpoint.at("rng").get<std::string>());
    in >> rng_;
    if (!in) throw InvalidInput("malformed RNG state in checkpoint");
  }
  policy_opt_ = Adam(policy_.parameters().size(), config_.actor_lr);
  value_opt_ = Adam(value_.parameter_count(), config_.critic_lr);
}

void write_metrics_header(std::ostream& out) { out << "iter,mean_return,cvar,entropy,lambda,mu\n"; }

void write_metrics_row(std::ostream& out, const IterationMetrics& m) {
  out << csv::join({std::to_string(m.iter), csv::format_double(m.mean_return), csv::format_double(m.cvar),
                    csv::format_double(m.entropy), csv::format_double(m.lambda), csv::format_double(m.mu)})
      << '\n';
}

Eigen::VectorXd greedy_action(const GaussianPolicy& policy, const Eigen::VectorXd& state) {
  return policy.forward(state).mean;
}

GaussianPolicy policy_from_checkpoint(const nlohmann::json& checkpoint) {
  if (checkpoint.value("version", 0) != 1) throw InvalidInput("unsupported checkpoint version");
  const auto config = training_config_from_json(checkpoint.at("config"));
  GaussianPolicy policy(checkpoint.at("state_dim").get<int>(), checkpoint.at("action_dim").get<int>(),
                        config.hidden_layers, config.hidden_width, config.initial_log_std);
  load_tensors(checkpoint.at("tensors"), policy, nullptr);
  return policy;
}

}  // namespace fcas
