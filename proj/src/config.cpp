#include "fcas/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "fcas/csv.hpp"
#include "fcas/errors.hpp"

namespace fcas {

namespace {

struct Field {
  std::string key;  // section.name
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(out))
    throw InvalidInput("config " + key + ": '" + v + "' is not a number");
  return out;
}

long long to_integer(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw InvalidInput("config " + key + ": '" + v + "' is not an integer");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw InvalidInput("config " + key + ": '" + v + "' is not a boolean");
}

template <class Ref>
Field real(std::string key, Ref ref) {
  return {key, [ref](const RunConfig& c) { return csv::format_double(ref(const_cast<RunConfig&>(c))); },
          [ref, key](RunConfig& c, const std::string& v) { ref(c) = to_double(key, v); }};
}

template <class Ref>
Field integer(std::string key, Ref ref) {
  return {key, [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); },
          [ref, key](RunConfig& c, const std::string& v) {
            auto& target = ref(c);
            const long long n = to_integer(key, v);
            using T = std::remove_reference_t<decltype(target)>;
            if (std::is_unsigned_v<T> && n < 0) throw InvalidInput("config " + key + " must be non-negative");
            target = static_cast<T>(n);
          }};
}

template <class Ref>
Field boolean(std::string key, Ref ref) {
  return {key, [ref](const RunConfig& c) { return std::string(ref(const_cast<RunConfig&>(c)) ? "true" : "false"); },
          [ref, key](RunConfig& c, const std::string& v) { ref(c) = to_bool(key, v); }};
}

template <class Ref>
Field text(std::string key, Ref ref) {
  return {key, [ref](const RunConfig& c) { return ref(const_cast<RunConfig&>(c)); },
          [ref](RunConfig& c, const std::string& v) { ref(c) = v; }};
}

#define FCAS_REF(expr) [](RunConfig & c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f = {
        integer("run.seed", FCAS_REF(seed)),
        integer("run.train_days", FCAS_REF(train_days)),
        text("paths.history", FCAS_REF(paths.history)),
        text("paths.bids", FCAS_REF(paths.bids)),
        text("paths.fr_trace", FCAS_REF(paths.fr_trace)),
        text("paths.checkpoint", FCAS_REF(paths.checkpoint)),
        text("paths.out", FCAS_REF(paths.out)),

        integer("training.batch_size", FCAS_REF(training.batch_size)),
        integer("training.minibatch_size", FCAS_REF(training.minibatch_size)),
        real("training.actor_lr", FCAS_REF(training.actor_lr)),
        real("training.critic_lr", FCAS_REF(training.critic_lr)),
        real("training.discount", FCAS_REF(training.discount)),
        real("training.entropy_coeff", FCAS_REF(training.entropy_coeff)),
        real("training.clip", FCAS_REF(training.clip)),
        real("training.gae", FCAS_REF(training.gae)),
        integer("training.hidden_layers", FCAS_REF(training.hidden_layers)),
        integer("training.hidden_width", FCAS_REF(training.hidden_width)),
        real("training.cvar_confidence", FCAS_REF(training.cvar_confidence)),
        real("training.reward_tolerance", FCAS_REF(training.reward_tolerance)),
        integer("training.epochs", FCAS_REF(training.epochs)),
        integer("training.iterations", FCAS_REF(training.iterations)),
        real("training.lambda_lr", FCAS_REF(training.lambda_lr)),
        real("training.mu_lr", FCAS_REF(training.mu_lr)),
        real("training.initial_lambda", FCAS_REF(training.initial_lambda)),
        real("training.initial_mu", FCAS_REF(training.initial_mu)),
        boolean("training.cvar_enabled", FCAS_REF(training.cvar_enabled)),
        boolean("training.calibrate_beta", FCAS_REF(training.calibrate_beta)),
        boolean("training.calibrate_mu", FCAS_REF(training.calibrate_mu)),
        boolean("training.clip_cvar_term", FCAS_REF(training.clip_cvar_term)),
        boolean("training.normalize_advantages", FCAS_REF(training.normalize_advantages)),
        real("training.reward_scale", FCAS_REF(training.reward_scale)),
        real("training.initial_log_std", FCAS_REF(training.initial_log_std)),
        real("training.max_grad_norm", FCAS_REF(training.max_grad_norm)),

        real("bess.energy_capacity", FCAS_REF(env.params.energy_capacity)),
        real("bess.soc_min", FCAS_REF(env.params.soc_min)),
        real("bess.soc_max", FCAS_REF(env.params.soc_max)),
        real("bess.max_charge", FCAS_REF(env.params.max_charge)),
        real("bess.max_discharge", FCAS_REF(env.params.max_discharge)),
        real("bess.eta_charge", FCAS_REF(env.params.eta_charge)),
        real("bess.eta_discharge", FCAS_REF(env.params.eta_discharge)),
        real("bess.cell_cost_total", FCAS_REF(env.params.cell_cost_total)),
        real("bess.max_cycles", FCAS_REF(env.params.max_cycles)),

        real("market.price_cap", FCAS_REF(env.rules.price_cap)),
        integer("market.bilevel_iteration_limit", FCAS_REF(env.rules.bilevel_iteration_limit)),

        real("env.forecast_noise", FCAS_REF(env.forecast_noise)),
        boolean("env.shaping", FCAS_REF(env.shaping.enabled)),
        real("env.energy_threshold", FCAS_REF(env.shaping.energy_threshold)),
        real("env.fr_mean_reversion", FCAS_REF(env.fr.mean_reversion)),
        real("env.fr_volatility", FCAS_REF(env.fr.volatility)),
        text("env.bidder_id", FCAS_REF(env.bidder_id)),

        integer("advisor.horizon", FCAS_REF(advisor.horizon)),
        real("advisor.ood_threshold", FCAS_REF(advisor.ood_threshold)),
        real("advisor.timeout", FCAS_REF(advisor.timeout_seconds)),
        real("advisor.max_delta_fraction", FCAS_REF(advisor.max_delta_fraction)),
        integer("advisor.max_prompt_chars", FCAS_REF(advisor.max_prompt_chars)),
        text("advisor.stub", FCAS_REF(advisor_stub)),
        real("advisor.rule_shift_fraction", FCAS_REF(rule_shift_fraction)),

        real("baseline.quantum", FCAS_REF(baseline.grid.quantum)),
        real("baseline.penalty_multiplier", FCAS_REF(baseline.penalty_multiplier)),
        boolean("baseline.penalize_oversupply", FCAS_REF(baseline.penalize_oversupply)),
        integer("baseline.max_passes", FCAS_REF(baseline.max_passes)),
        integer("baseline.scenarios", FCAS_REF(baseline_scenarios)),

        integer("synth.intervals", FCAS_REF(synth.intervals)),
        integer("synth.rival_count", FCAS_REF(synth.rival_count)),
        real("synth.rival_capacity_share", FCAS_REF(synth.rival_capacity_share)),
        real("synth.energy_mean", FCAS_REF(synth.energy_mean)),
        real("synth.energy_volatility", FCAS_REF(synth.energy_volatility)),
    };
    for (MarketId m : kMarkets) {
      const std::string p = "synth." + std::string(market_code(m)) + "_";
      const auto idx = static_cast<std::size_t>(m);
      auto ref = [idx](auto member) {
        return [idx, member](RunConfig& c) -> double& { return c.synth.markets.values[idx].*member; };
      };
      f.push_back(real(p + "price_mean", ref(&SynthMarketConfig::price_mean)));
      f.push_back(real(p + "price_volatility", ref(&SynthMarketConfig::price_volatility)));
      f.push_back(real(p + "spike_rate", ref(&SynthMarketConfig::spike_rate)));
      f.push_back(real(p + "demand_mean", ref(&SynthMarketConfig::demand_mean)));
    }
    return f;
  }();
  return table;
}

#undef FCAS_REF

std::string arbitrage_name(ArbitrageSign s) { return s == ArbitrageSign::CashFlow ? "cash_flow" : "as_printed"; }

}  // namespace

void RunConfig::validate() const {
  training.validate();
  env.params.validate();
  env.rules.validate();
  advisor.validate();
  baseline.grid.validate();
  synth.validate(env.rules);
  if (!(env.forecast_noise >= 0.0)) throw InvalidInput("env.forecast_noise must be non-negative");
  if (!(rule_shift_fraction > 0.0 && rule_shift_fraction <= 1.0))
    throw InvalidInput("advisor.rule_shift_fraction must be in (0, 1]");
  if (advisor_stub != "rule" && advisor_stub != "zero") throw InvalidInput("advisor.stub must be rule or zero");
  if (baseline_scenarios == 0) throw InvalidInput("baseline.scenarios must be positive");
  if (baseline.max_passes < 1) throw InvalidInput("baseline.max_passes must be positive");
}

RunConfig parse_config(std::istream& in) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw InvalidInput("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  std::map<std::string, const Field*> index;
  for (const auto& f : fields()) index[f.key] = &f;

  RunConfig c;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw InvalidInput("config key '" + section + "' outside a section");
    const bool known = std::any_of(index.begin(), index.end(),
                                   [&](const auto& kv) { return kv.first.rfind(section + ".", 0) == 0; });
    if (!known) throw InvalidInput("unknown config section [" + section + "]");
    for (const auto& [name, value] : body) {
      const std::string key = section + "." + name;
      if (key == "env.arbitrage_sign") {
        const auto v = value.data();
        if (v == "cash_flow") {
          c.env.arbitrage_sign = ArbitrageSign::CashFlow;
        } else if (v == "as_printed") {
          c.env.arbitrage_sign = ArbitrageSign::AsPrinted;
        } else {
          throw InvalidInput("config env.arbitrage_sign: expected cash_flow or as_printed");
        }
        continue;
      }
      if (key == "advisor.backend") {
        const auto v = value.data();
        if (v == "stub") {
          c.advisor.backend = BackendKind::Stub;
        } else if (v == "remote") {
          c.advisor.backend = BackendKind::Remote;
        } else {
          throw InvalidInput("config advisor.backend: expected stub or remote");
        }
        continue;
      }
      const auto it = index.find(key);
      if (it == index.end()) throw InvalidInput("unknown config key '" + key + "'");
      it->second->set(c, value.data());
    }
  }
  c.env.set_price_cap(c.env.rules.price_cap);
  c.env.params.interval_hours = c.env.rules.interval_hours;
  c.baseline.arbitrage_sign = c.env.arbitrage_sign;
  c.training.seed = c.seed;
  c.validate();
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path);
  return parse_config(in);
}

void write_config(std::ostream& out, const RunConfig& config) {
  std::string section;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string s = f.key.substr(0, dot);
    if (s != section) {
      if (!section.empty()) out << '\n';
      out << '[' << s << "]\n";
      section = s;
      if (s == "env") out << "arbitrage_sign = " << arbitrage_name(config.env.arbitrage_sign) << '\n';
      if (s == "advisor") out << "backend = " << (config.advisor.backend == BackendKind::Stub ? "stub" : "remote") << '\n';
    }
    out << f.key.substr(dot + 1) << " = " << f.get(config) << '\n';
  }
}

std::string config_echo(const RunConfig& config) {
  std::ostringstream s;
  s << "# env.arbitrage_sign = " << arbitrage_name(config.env.arbitrage_sign) << '\n';
  s << "# advisor.backend = " << (config.advisor.backend == BackendKind::Stub ? "stub" : "remote") << '\n';
  for (const auto& f : fields()) s << "# " << f.key << " = " << f.get(config) << '\n';
  return s.str();
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys = {"env.arbitrage_sign", "advisor.backend"};
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

}  // namespace fcas
