#include "fcas/advisor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

#include "fcas/errors.hpp"

namespace fcas {

namespace {

constexpr std::array<const char*, kStateDim> kFeatureNames = {
    "soc", "energy price", "cp lr", "cp rr", "cp lc", "cp rc", "demand lr", "demand rr", "demand lc", "demand rc"};

std::string fmt(double v, int precision = 2) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(precision);
  s << v;
  return s.str();
}

double side_limit(MarketId m, const BessParams& p) { return is_lower(m) ? p.max_charge : p.max_discharge; }

double tail_sum(std::span<const double> v, int h) {
  const std::size_t n = std::min(v.size(), static_cast<std::size_t>(h));
  return std::accumulate(v.end() - static_cast<long>(n), v.end(), 0.0);
}

bool all_zero(const ActionVector& a) {
  if (a.charge != 0.0 || a.discharge != 0.0) return false;
  for (const auto& ladder : a.bands)
    for (double c : ladder)
      if (c != 0.0) return false;
  return true;
}

ActionVector add(const ActionVector& a, const ActionVector& b, double scale = 1.0) {
  ActionVector r = a;
  r.charge += scale * b.charge;
  r.discharge += scale * b.discharge;
  for (MarketId m : kMarkets)
    for (std::size_t k = 0; k < kBands; ++k) r.bands[m][k] += scale * b.bands[m][k];
  return r;
}

ActionVector subtract(const ActionVector& a, const ActionVector& b) { return add(a, b, -1.0); }

nlohmann::json action_json(const ActionVector& a) {
  nlohmann::json j;
  j["charge"] = a.charge;
  j["discharge"] = a.discharge;
  for (MarketId m : kMarkets) j[std::string(market_code(m))] = a.bands[m];
  return j;
}

}  // namespace

FeatureStats FeatureStats::fit(const MarketHistory& training, const FeatureScaler& scaler, const BessParams& params) {
  ForecastTable rows;
  for (const auto& rec : training.intervals) {
    if (!rec.snapshot.observed_clearing_price) continue;
    rows.push_back({rec.snapshot.energy_price, *rec.snapshot.observed_clearing_price, rec.snapshot.demand});
  }
  return fit(std::span<const ForecastTable>(&rows, 1), scaler, params);
}

FeatureStats FeatureStats::fit(std::span<const ForecastTable> observed, const FeatureScaler& scaler,
                               const BessParams& params) {
  FeatureStats s;
  std::array<double, kStateDim> sum{}, sq{};
  std::size_t n = 0;
  BessState mid;
  mid.soc = 0.5 * (params.soc_min + params.soc_max);
  for (const auto& table : observed) {
    for (const auto& row : table) {
      const Eigen::VectorXd v = observe(mid, row, scaler);
      for (std::size_t i = 0; i < kStateDim; ++i) sum[i] += v[static_cast<long>(i)];
      ++n;
    }
  }
  if (n == 0) throw InvalidInput("no training intervals with observed prices");
  for (std::size_t i = 0; i < kStateDim; ++i) s.mean[i] = sum[i] / static_cast<double>(n);
  for (const auto& table : observed) {
    for (const auto& row : table) {
      const Eigen::VectorXd v = observe(mid, row, scaler);
      for (std::size_t i = 0; i < kStateDim; ++i) {
        const double d = v[static_cast<long>(i)] - s.mean[i];
        sq[i] += d * d;
      }
    }
  }
  for (std::size_t i = 0; i < kStateDim; ++i) s.sd[i] = std::sqrt(sq[i] / static_cast<double>(n));
  return s;
}

OodReport detect_ood(const Eigen::VectorXd& state, const FeatureStats& stats, double threshold) {
  if (state.size() != kStateDim) throw InvalidInput("state must have " + std::to_string(kStateDim) + " features");
  if (!(threshold > 0.0)) throw InvalidInput("ood threshold must be positive");
  OodReport r;
  for (std::size_t i = 1; i < kStateDim; ++i) {
    if (!(stats.sd[i] > 0.0)) {
      r.warnings.push_back(std::string(kFeatureNames[i]) + " has zero variance in training; z set to 0");
      continue;
    }
    r.z[i] = (state[static_cast<long>(i)] - stats.mean[i]) / stats.sd[i];
    r.max_abs_z = std::max(r.max_abs_z, std::abs(r.z[i]));
  }
  r.in_distribution = r.max_abs_z <= threshold;

  std::ostringstream notes;
  for (std::size_t i = 1; i <= 5; ++i) {
    if (std::abs(r.z[i]) <= threshold) continue;
    const char* dir = r.z[i] > 0 ? "above" : "below";
    if (i == 1) {
      notes << "energy price " << dir << " training range (z=" << fmt(r.z[i]) << "); ";
    } else {
      const auto m = kMarkets[i - 2];
      notes << market_code(m) << " price " << dir << " training range (z=" << fmt(r.z[i]) << "), capacity there is "
            << (r.z[i] > 0 ? "more" : "less") << " profitable; ";
    }
  }
  for (std::size_t i = 6; i < kStateDim; ++i) {
    if (std::abs(r.z[i]) <= threshold) continue;
    notes << market_code(kMarkets[i - 6]) << " demand " << (r.z[i] > 0 ? "above" : "below") << " training range (z="
          << fmt(r.z[i]) << "); ";
  }
  r.notes = notes.str();
  if (r.notes.empty()) r.notes = "all market features within the training range";
  return r;
}

bool gate_hybrid(bool in_distribution, std::span<const double> hybrid_returns, std::span<const double> base_returns,
                 int h) {
  if (in_distribution) return false;
  return tail_sum(hybrid_returns, h) >= tail_sum(base_returns, h);
}

std::size_t PromptBundle::length() const {
  return observation.size() + action_schema.size() + reward.size() + context.size();
}

void PromptBundle::validate(std::size_t max_chars) const {
  if (observation.empty() || action_schema.empty() || reward.empty() || context.empty())
    throw InvalidInput("prompt sections must be non-empty");
  if (length() > max_chars)
    throw InvalidInput("prompt has " + std::to_string(length()) + " characters, limit " + std::to_string(max_chars));
}

void AdvisorConfig::validate() const {
  if (horizon < 1) throw InvalidInput("advisor horizon must be at least 1");
  if (!(ood_threshold > 0.0)) throw InvalidInput("ood threshold must be positive");
  if (!(timeout_seconds > 0.0)) throw InvalidInput("advisor timeout must be positive");
  if (!(max_delta_fraction > 0.0 && max_delta_fraction <= 1.0))
    throw InvalidInput("max_delta_fraction must be in (0, 1]");
  if (max_prompt_chars == 0) throw InvalidInput("max_prompt_chars must be positive");
}

BackendReply ZeroDeltaBackend::complete(const AdvisorQuery&) {
  return {advice_json(Advice{{}, "no adjustment"}), nullptr};
}

RuleBackend::RuleBackend(double shift_fraction) : shift_fraction_(shift_fraction) {
  if (!(shift_fraction > 0.0 && shift_fraction <= 1.0)) throw InvalidInput("shift fraction must be in (0, 1]");
}

BackendReply RuleBackend::complete(const AdvisorQuery& q) {
  std::size_t best = 0;
  double best_z = 0.0;
  for (std::size_t i = 0; i < kMarketCount; ++i) {
    if (q.report.z[i + 2] > best_z) {
      best_z = q.report.z[i + 2];
      best = i;
    }
  }
  Advice advice;
  if (best_z <= 0.0) {
    advice.rationale = "no market price above its training mean";
    return {advice_json(advice), nullptr};
  }
  const MarketId target = kMarkets[best];
  const bool to_regulation = is_regulation(target);
  for (MarketId m : kMarkets) {
    if (is_regulation(m) == to_regulation) continue;
    // Same-side partner in the receiving class.
    const MarketId partner = is_lower(m) ? (to_regulation ? MarketId::RegulationLower : MarketId::ContingencyLower)
                                         : (to_regulation ? MarketId::RegulationRaise : MarketId::ContingencyRaise);
    for (std::size_t k = 0; k < kBands; ++k) {
      const double moved = shift_fraction_ * q.base.bands[m][k];
      advice.delta[m][k] = -moved;
      advice.delta[partner][k] = moved;
    }
  }
  advice.rationale = std::string(market_code(target)) + " price z=" + fmt(best_z) + ", shifting " +
                     fmt(100.0 * shift_fraction_, 0) + "% of " + (to_regulation ? "contingency" : "regulation") +
                     " capacity into " + (to_regulation ? "regulation" : "contingency");
  return {advice_json(advice), nullptr};
}

std::string advice_json(const Advice& a) {
  nlohmann::json j;
  nlohmann::json d = nlohmann::json::object();
  for (MarketId m : kMarkets) d[std::string(market_code(m))] = a.delta[m];
  j["delta"] = d;
  j["rationale"] = a.rationale;
  return j.dump();
}

std::optional<Advice> parse_advice(std::string_view text, std::string* error) {
  auto fail = [&](std::string why) -> std::optional<Advice> {
    if (error) *error = std::move(why);
    return std::nullopt;
  };
  const auto j = nlohmann::json::parse(text.begin(), text.end(), nullptr, false);
  if (j.is_discarded()) return fail("answer is not valid JSON");
  if (!j.is_object()) return fail("answer is not a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key != "delta" && key != "rationale") return fail("unexpected key '" + key + "'");
  }
  if (!j.contains("delta") || !j["delta"].is_object()) return fail("missing delta object");
  Advice out;
  if (j.contains("rationale")) {
    if (!j["rationale"].is_string()) return fail("rationale is not a string");
    out.rationale = j["rationale"].get<std::string>();
  }
  const auto& d = j["delta"];
  if (d.size() != kMarketCount) return fail("delta must have exactly the keys lr, rr, lc, rc");
  for (MarketId m : kMarkets) {
    const std::string code(market_code(m));
    if (!d.contains(code)) return fail("delta missing market " + code);
    const auto& arr = d[code];
    if (!arr.is_array() || arr.size() != kBands) return fail("delta." + code + " must be an array of 10 numbers");
    for (std::size_t k = 0; k < kBands; ++k) {
      if (!arr[k].is_number()) return fail("delta." + code + "[" + std::to_string(k) + "] is not a number");
      const double v = arr[k].get<double>();
      if (!std::isfinite(v)) return fail("delta." + code + " holds a non-finite value");
      out.delta[m][k] = v;
    }
  }
  return out;
}

ActionVector project_delta(const ActionVector& base, const ActionVector& delta, const BessState& state,
                           const BessParams& params, double fraction) {
  ActionVector d = delta;
  const auto bound = [&](double v, double limit) { return std::clamp(std::isfinite(v) ? v : 0.0, -limit, limit); };
  d.charge = bound(d.charge, fraction * params.max_charge);
  d.discharge = bound(d.discharge, fraction * params.max_discharge);
  for (MarketId m : kMarkets)
    for (double& c : d.bands[m]) c = bound(c, fraction * side_limit(m, params));

  const auto within = [&](const ActionVector& x) {
    constexpr double tol = 1e-9;
    if (std::abs(x.charge) > fraction * params.max_charge + tol) return false;
    if (std::abs(x.discharge) > fraction * params.max_discharge + tol) return false;
    for (MarketId m : kMarkets)
      for (double c : x.bands[m])
        if (std::abs(c) > fraction * side_limit(m, params) + tol) return false;
    return true;
  };

  double scale = 1.0;
  for (int i = 0; i < 30; ++i, scale *= 0.5) {
    const ActionVector target = clip_action(add(base, d, scale), state, params);
    const ActionVector projected = subtract(target, base);
    const ActionVector rebuilt = add(base, projected);
    if (within(projected) && is_feasible(rebuilt, state, params)) return projected;
  }
  return ActionVector{};
}

PromptBundle build_prompt(const OodReport& report, const Eigen::VectorXd& observation, const BessState& state,
                          const ForecastRow& forecast, const ActionVector& base, const BessParams& params,
                          const std::string& feedback) {
  PromptBundle p;
  std::ostringstream o;
  o << "Interval " << state.t << ", state of charge " << fmt(state.soc, 3) << " (limits " << fmt(params.soc_min, 2)
    << ".." << fmt(params.soc_max, 2) << ").\n";
  o << "Forecast energy price " << fmt(forecast.energy_price) << " per MWh.\n";
  for (MarketId m : kMarkets) {
    const std::size_t i = 2 + static_cast<std::size_t>(m);
    o << market_code(m) << ": forecast price " << fmt(forecast.price[m]) << " (z=" << fmt(report.z[i])
      << "), demand " << fmt(forecast.demand[m]) << " MW (z=" << fmt(report.z[i + 4]) << "), offered ladder [";
    for (std::size_t k = 0; k < kBands; ++k) o << (k ? ", " : "") << fmt(base.bands[m][k], 1);
    o << "] MW\n";
  }
  o << "Energy setpoint: charge " << fmt(base.charge, 1) << " MW, discharge " << fmt(base.discharge, 1) << " MW.\n";
  o << "Scaled observation:";
  for (long i = 0; i < observation.size(); ++i) o << ' ' << fmt(observation[i], 3);
  o << "\nDetector: " << (report.in_distribution ? "common" : "uncommon") << " state, max |z| "
    << fmt(report.max_abs_z) << ". " << report.notes;
  p.observation = o.str();

  p.action_schema =
      "Answer with one JSON object and nothing else: {\"delta\": {\"lr\": [10 numbers], \"rr\": [10 numbers], "
      "\"lc\": [10 numbers], \"rc\": [10 numbers]}, \"rationale\": \"short text\"}. Each array is the MW change "
      "to the cumulative capacity of bands 1..10 in that market.";

  std::ostringstream r;
  r << (feedback.empty() ? "No evaluation of earlier adjustments yet." : feedback);
  p.reward = r.str();

  std::ostringstream c;
  c << "You advise a " << fmt(params.energy_capacity, 0) << " MWh battery bidding 5-minute capacity into four "
    << "frequency control markets (regulation lower/raise, contingency lower/raise) and the energy market. "
    << "Goal: raise profit in uncommon market conditions by shifting capacity between markets. Lower services "
    << "share " << fmt(params.max_charge, 0) << " MW of charge headroom, raise services share "
    << fmt(params.max_discharge, 0) << " MW of discharge headroom, ladders are non-decreasing, and bidding "
    << "prices are fixed.";
  p.context = c.str();
  return p;
}

HybridDecision propose_adjustment(const AdvisorQuery& query, AdvisorBackend& backend, const AdvisorConfig& config,
                                  BackendReply* reply_out) {
  HybridDecision d;
  BackendReply reply;
  try {
    query.prompt.validate(config.max_prompt_chars);
    reply = backend.complete(query);
  } catch (const std::exception& e) {
    d.failure = std::string("backend: ") + e.what();
    if (reply_out) *reply_out = reply;
    return d;
  }
  if (reply_out) *reply_out = reply;
  std::string error;
  const auto advice = parse_advice(reply.text, &error);
  if (!advice) {
    d.failure = "parse: " + error;
    return d;
  }
  d.rationale = advice->rationale;
  ActionVector raw;
  raw.bands = advice->delta;
  d.delta = project_delta(query.base, raw, query.state, query.params, config.max_delta_fraction);
  d.applied = !all_zero(d.delta);
  return d;
}

Feedback evaluate_feedback(std::span<const double> base_rewards, std::span<const double> hybrid_rewards,
                           const EpisodeStats& stats) {
  if (base_rewards.size() != hybrid_rewards.size()) throw InvalidInput("reward streams differ in length");
  Feedback f;
  if (base_rewards.empty()) {
    f.text = "insufficient data: no evaluated intervals";
    return f;
  }
  f.verdict = std::accumulate(hybrid_rewards.begin(), hybrid_rewards.end(), 0.0) -
              std::accumulate(base_rewards.begin(), base_rewards.end(), 0.0);
  std::ostringstream s;
  s << "Over " << base_rewards.size() << " intervals the advised actions earned " << fmt(f.verdict)
    << (f.verdict >= 0 ? " more" : " less") << " than the policy alone (" << stats.gated << " gated, "
    << stats.applied << " applied).";
  std::size_t best = 0;
  for (std::size_t i = 1; i < kMarketCount; ++i)
    if (std::abs(stats.shifted.values[i]) > std::abs(stats.shifted.values[best])) best = i;
  if (stats.shifted.values[best] != 0.0) {
    s << " Largest shift: " << fmt(stats.shifted.values[best], 1) << " MW "
      << (stats.shifted.values[best] > 0 ? "into " : "out of ") << market_code(kMarkets[best]) << '.';
  } else {
    s << " No capacity was shifted.";
  }
  f.text = s.str();
  return f;
}

void inject_experience(RolloutBuffer& buffer, std::span<const ExperienceTuple> tuples, const GaussianPolicy& policy) {
  if (tuples.size() != buffer.size())
    throw InvalidInput("experience has " + std::to_string(tuples.size()) + " tuples for a buffer of " +
                       std::to_string(buffer.size()));
  bool changed = false;
  for (std::size_t i = 0; i < tuples.size(); ++i) {
    if (!tuples[i].hybrid) continue;
    buffer.states[i] = tuples[i].state;
    buffer.actions[i] = tuples[i].action;
    buffer.rewards[i] = tuples[i].reward;
    buffer.log_probs[i] = policy.log_prob(tuples[i].state, tuples[i].action);
    changed = true;
  }
  if (changed) {
    std::fill(buffer.returns.begin(), buffer.returns.end(), 0.0);
    for (std::size_t i = 0; i < buffer.size(); ++i)
      buffer.returns[static_cast<std::size_t>(buffer.trajectory[i])] += buffer.rewards[i];
  }
  buffer.validate();
}

HybridEnv::HybridEnv(BessEnv env, FeatureStats stats, std::shared_ptr<AdvisorBackend> backend, AdvisorConfig config)
    : env_(std::move(env)), feature_stats_(stats), backend_(std::move(backend)), config_(config) {
  if (!backend_) throw InvalidInput("hybrid environment needs a backend");
  config_.validate();
}

void HybridEnv::begin_episode() {
  if (!base_rewards_.empty()) feedback_ = evaluate_feedback(base_rewards_, hybrid_rewards_, stats_).text;
  ++episode_;
  base_rewards_.clear();
  hybrid_rewards_.clear();
  stats_ = {};
  log_.clear();
  executed_.reset();
}

Eigen::VectorXd HybridEnv::reset(std::uint64_t seed) {
  begin_episode();
  return env_.reset(seed);
}

Eigen::VectorXd HybridEnv::reset_to(std::size_t scenario_index, std::uint64_t seed) {
  begin_episode();
  return env_.reset_to(scenario_index, seed);
}

Environment::Step HybridEnv::step(const Eigen::VectorXd& raw_action) {
  executed_.reset();
  const Eigen::VectorXd obs = env_.observation();
  const BessState state = env_.state();
  const StepOutcome base = env_.preview(env_.config().mapping.to_mw(raw_action));
  const OodReport report = detect_ood(obs, feature_stats_, config_.ood_threshold);

  HybridStepLog entry;
  entry.episode = episode_;
  entry.t = state.t;
  entry.in_distribution = report.in_distribution;
  entry.max_abs_z = report.max_abs_z;
  entry.gate = gate_hybrid(report.in_distribution, hybrid_rewards_, base_rewards_, config_.horizon);
  entry.base = base.action;
  entry.executed = base.action;
  entry.base_reward = base.reward.base();
  entry.hybrid_reward = entry.base_reward;

  std::optional<StepOutcome> hybrid;
  nlohmann::json record;
  if (entry.gate) {
    ++stats_.gated;
    AdvisorQuery q{build_prompt(report, obs, state, env_.forecast_row(), base.action, env_.config().params, feedback_),
                   report, base.action, state, env_.config().params};
    BackendReply reply;
    const HybridDecision decision = propose_adjustment(q, *backend_, config_, &reply);
    entry.failure = decision.failure;
    if (decision.applied) {
      hybrid = env_.preview(add(base.action, decision.delta));
      if (hybrid->action == base.action) hybrid.reset();
    }
    if (transcript_) {
      record["prompt"] = {{"observation", q.prompt.observation},
                          {"action_schema", q.prompt.action_schema},
                          {"reward", q.prompt.reward},
                          {"context", q.prompt.context}};
      record["backend"] = backend_->name();
      record["request"] = reply.request;
      record["response"] = reply.text;
      record["rationale"] = decision.rationale;
      record["delta"] = action_json(decision.delta);
    }
  }

  Step out;
  if (hybrid) {
    ++stats_.applied;
    entry.applied = true;
    entry.executed = hybrid->action;
    entry.hybrid_reward = hybrid->reward.base();
    for (MarketId m : kMarkets) stats_.shifted[m] += hybrid->action.bands[m][kBands - 1] - base.action.bands[m][kBands - 1];
    executed_ = env_.config().mapping.to_raw(hybrid->action);
    out = env_.commit(*hybrid);
  } else {
    out = env_.commit(base);
  }
  ++stats_.steps;
  base_rewards_.push_back(entry.base_reward);
  hybrid_rewards_.push_back(entry.hybrid_reward);

  if (transcript_ && entry.gate) {
    record["episode"] = entry.episode;
    record["t"] = entry.t;
    record["max_abs_z"] = entry.max_abs_z;
    record["applied"] = entry.applied;
    record["failure"] = entry.failure;
    record["base_reward"] = entry.base_reward;
    record["hybrid_reward"] = entry.hybrid_reward;
    *transcript_ << record.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
  }
  log_.push_back(std::move(entry));
  return out;
}

}  // namespace fcas
