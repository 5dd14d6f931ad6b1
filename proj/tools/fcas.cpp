#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "fcas/bid_csv.hpp"
#include "fcas/csv.hpp"
#include "fcas/errors.hpp"
#include "fcas/experiment.hpp"

namespace fs = std::filesystem;
using namespace fcas;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::string advisor = "off";
};

std::string g_advisor = "off";

RunConfig load(const Common& c) {
  g_advisor = c.advisor;
  RunConfig config;
  if (!c.config_path.empty()) {
    if (!fs::exists(c.config_path)) throw DataError("config file not found: " + c.config_path);
    config = load_config(c.config_path);
  }
  if (c.seed) {
    config.seed = *c.seed;
    config.training.seed = *c.seed;
  }
  if (c.out) config.paths.out = *c.out;
  for (const std::string* p : {&config.paths.history, &config.paths.bids, &config.paths.fr_trace})
    if (!p->empty() && !fs::exists(*p)) throw DataError("input file not found: " + *p);
  config.validate();
  return config;
}

std::ofstream open_output(const RunConfig& config, const std::string& name, const std::string& extra = {}) {
  fs::create_directories(config.paths.out);
  const auto path = fs::path(config.paths.out) / name;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << config_echo(config) << "# cli.advisor = " << g_advisor << '\n' << extra;
  return out;
}

// JSONL, so the config echo goes in a leading record instead of `#` lines.
std::ofstream open_transcript(const RunConfig& config) {
  fs::create_directories(config.paths.out);
  const auto path = fs::path(config.paths.out) / "advisor_transcript.jsonl";
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << nlohmann::json{{"config_echo", config_echo(config)}, {"seed", config.seed}, {"advisor", g_advisor}}.dump() << '\n';
  return out;
}

std::vector<MarketId> parse_markets(const std::vector<std::string>& codes) {
  if (codes.empty()) return {kMarkets.begin(), kMarkets.end()};
  std::vector<MarketId> out;
  for (const auto& c : codes) out.push_back(parse_market(c));
  return out;
}

MarketHistory load_full_history(const RunConfig& config) {
  if (config.paths.history.empty()) return synth_generate(config.synth, config.env.rules, config.seed);
  return load_history(config.paths.history, config.paths.bids, config.env.rules);
}

int cmd_synth(const Common& c) {
  const auto config = load(c);
  const auto history = synth_generate(config.synth, config.env.rules, config.seed);
  auto snaps = open_output(config, "snapshots.csv");
  write_snapshots(snaps, history);
  auto bids = open_output(config, "bids.csv");
  write_rival_bids(bids, history);
  auto fr = open_output(config, "fr_trace.csv");
  write_fr_trace(fr, fr_trace(config.env.fr, config.seed, history.size()));
  std::cout << "wrote " << history.size() << " intervals to " << config.paths.out << '\n';
  return 0;
}

struct ClearArgs {
  long from = 0;
  std::optional<long> to;
  std::vector<std::string> markets;
  std::vector<double> sweep;
};

int cmd_clear(const Common& c, const ClearArgs& a) {
  const auto config = load(c);
  const auto markets = parse_markets(a.markets);
  const auto history = load_full_history(config);
  const long n = static_cast<long>(history.size());
  const long to = std::min(a.to.value_or(n), n);
  if (a.from < 0 || to < 0) throw InvalidInput("interval range must be non-negative");

  auto out = open_output(config, "clearing.csv");
  out << "t,market,clearing_price,demand,enabled,shortfall,marginal\n";
  std::ofstream sweep;
  if (!a.sweep.empty()) {
    sweep = open_output(config, "sweep.csv");
    sweep << "t,bid_market,capacity,cp_lr,cp_rr,cp_lc,cp_rc\n";
  }
  for (long t = a.from; t < to; ++t) {
    const auto& rec = history.intervals[static_cast<std::size_t>(t)];
    if (!rec.has_bids) throw DataError("interval " + std::to_string(rec.snapshot.t) + " has no rival bids");
    const auto res = replay_interval(rec, config.env.rules);
    for (MarketId m : markets) {
      const auto& mc = res.markets[m];
      out << csv::join({std::to_string(rec.snapshot.t), std::string(market_code(m)),
                        csv::format_double(mc.clearing_price), csv::format_double(rec.snapshot.demand[m]),
                        csv::format_double(mc.total_enabled()), csv::format_double(mc.shortfall),
                        mc.marginal_bidder.value_or("")})
          << '\n';
    }
    if (!a.sweep.empty()) {
      SupplyVariation supply;
      if (rec.snapshot.observed_clearing_price)
        supply = estimate_supply_variation(rec.rivals, *rec.snapshot.observed_clearing_price, rec.snapshot.demand,
                                           config.env.rules);
      for (const auto& row : price_sweep(rec, supply, config.env, a.sweep, markets)) {
        std::vector<std::string> f = {std::to_string(row.t), std::string(market_code(row.bid_market)),
                                      csv::format_double(row.capacity)};
        for (MarketId m : kMarkets) f.push_back(csv::format_double(row.price[m]));
        sweep << csv::join(f) << '\n';
      }
    }
  }
  return 0;
}

int cmd_train(const Common& c) {
  auto config = load(c);
  attach_fr_trace(config);
  const auto mode = parse_advisor_mode(c.advisor);
  const auto data = prepare_market(config);
  std::ofstream transcript;
  if (mode != AdvisorMode::Off) transcript = open_transcript(config);
  auto env = make_environment(config, data, data.train_scenarios, mode, mode == AdvisorMode::Off ? nullptr : &transcript);

  Trainer trainer(config.training, env->state_dim(), env->action_dim());
  auto metrics = open_output(config, "metrics.csv");
  const auto rows = trainer.train(*env, &metrics);
  for (const auto& m : rows)
    if (!std::isfinite(m.mean_return)) throw NumericError("non-finite return at iteration " + std::to_string(m.iter));

  auto ck = trainer.checkpoint();
  ck["config_echo"] = config_echo(config);
  ck["seed"] = config.seed;
  const std::string path =
      config.paths.checkpoint.empty() ? (fs::path(config.paths.out) / "checkpoint.json").string() : config.paths.checkpoint;
  if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path);
  f << ck.dump(1) << '\n';
  std::cout << "trained " << rows.size() << " iterations; checkpoint " << path << '\n';
  return 0;
}

GaussianPolicy load_policy(const RunConfig& config, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("checkpoint not found: " + path);
  nlohmann::json ck;
  try {
    ck = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint " + path + " is not valid JSON: " + e.what());
  }
  Trainer probe(config.training, kStateDim, ActionVector::kFlatSize);
  try {
    probe.restore(ck);
  } catch (const std::exception& e) {
    throw DataError("checkpoint " + path + " does not match the config: " + e.what());
  }
  return probe.policy();
}

struct BacktestArgs {
  std::string checkpoint;
  bool baseline = false;
  std::string rebid = "none";
};

void write_results(const RunConfig& config, const std::string& prefix, const std::vector<EpisodeResult>& results) {
  std::vector<StreamTotals> rows;
  std::vector<TraceRow> trace;
  for (const auto& r : results) {
    rows.push_back(r.totals);
    trace.insert(trace.end(), r.trace.begin(), r.trace.end());
  }
  rows.push_back(mean_totals(results));
  auto table = open_output(config, prefix + "backtest.csv",
                           "# rows: one per held-out day, last row is the mean\n");
  write_backtest_table(table, rows);
  auto tr = open_output(config, prefix + "trace.csv");
  write_trace(tr, trace);
  auto bids = open_output(config, prefix + "bids.csv");
  write_bid_trace(bids, trace);
  const auto& m = rows.back();
  std::cout << "mean overall profit " << csv::format_double(m.overall()) << " over " << results.size()
            << " days\n";
}

int cmd_backtest(const Common& c, const BacktestArgs& a) {
  auto config = load(c);
  if (!a.checkpoint.empty()) config.paths.checkpoint = a.checkpoint;
  if (a.baseline && !a.checkpoint.empty())
    throw InvalidInput("give either --checkpoint or --baseline, not both");
  if (!a.baseline && config.paths.checkpoint.empty()) throw InvalidInput("backtest needs --checkpoint or --baseline");
  attach_fr_trace(config);
  const auto mode = parse_advisor_mode(c.advisor);
  const auto data = prepare_market(config);

  if (a.baseline) {
    if (mode != AdvisorMode::Off) throw InvalidInput("the advisor applies to policy backtests only");
    RebidMode rebid;
    if (a.rebid == "none") rebid = RebidMode::None;
    else if (a.rebid == "forecast") rebid = RebidMode::Forecast;
    else if (a.rebid == "bilevel") rebid = RebidMode::Bilevel;
    else throw InvalidInput("--rebid must be none, forecast or bilevel");
    const auto da = solve_baseline(config, data);
    write_results(config, "baseline_", backtest_baseline(da, config, data, rebid, config.seed));
    return 0;
  }
  const auto policy = load_policy(config, config.paths.checkpoint);
  std::ofstream transcript;
  if (mode != AdvisorMode::Off) transcript = open_transcript(config);
  write_results(config, "policy_",
                backtest_policy(policy, config, data, mode, config.seed,
                                mode == AdvisorMode::Off ? nullptr : &transcript));
  return 0;
}

struct ReportArgs {
  std::string trace;
  std::string bids;
};

int cmd_report(const Common& c, const ReportArgs& a) {
  const auto config = load(c);
  std::ifstream tin(a.trace);
  if (!tin) throw DataError("trace not found: " + a.trace);
  const auto trace = read_trace(tin);
  std::vector<TraceRow> bids;
  if (!a.bids.empty()) {
    std::ifstream bin(a.bids);
    if (!bin) throw DataError("bid trace not found: " + a.bids);
    bids = read_bid_trace(bin);
  }
  auto dist = open_output(config, "band_distribution.csv");
  write_band_distribution(dist, bids);
  auto prof = open_output(config, "price_profile.csv");
  write_price_profile(prof, price_profile(trace));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Battery bidding lab for joint energy and FCAS markets"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub, bool advisor) {
    sub->add_option("--config", common.config_path, "INI configuration file");
    sub->add_option("--seed", common.seed, "Run seed (overrides run.seed)");
    sub->add_option("--out", common.out, "Output directory (overrides paths.out)");
    if (advisor)
      sub->add_option("--advisor", common.advisor, "Advisor backend")
          ->check(CLI::IsMember({"off", "stub", "remote"}));
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic market history");
  add_common(synth, false);

  ClearArgs clear_args;
  auto* clear = app.add_subcommand("clear", "Replay rival bids through the clearing engine");
  add_common(clear, false);
  clear->add_option("--from", clear_args.from, "First interval index");
  clear->add_option("--to", clear_args.to, "One past the last interval index");
  clear->add_option("--market", clear_args.markets, "Markets to report (lr, rr, lc, rc)")->delimiter(',');
  clear->add_option("--sweep", clear_args.sweep, "BESS capacities in MW, e.g. 10,30,50")->delimiter(',');

  auto* train = app.add_subcommand("train", "Train the CVaR-constrained policy");
  add_common(train, true);

  BacktestArgs bt_args;
  auto* backtest = app.add_subcommand("backtest", "Evaluate a checkpoint or the baseline on held-out days");
  add_common(backtest, true);
  backtest->add_option("--checkpoint", bt_args.checkpoint, "Checkpoint written by train");
  backtest->add_flag("--baseline", bt_args.baseline, "Evaluate the optimization baseline");
  backtest->add_option("--rebid", bt_args.rebid, "Baseline real-time mode")
      ->check(CLI::IsMember({"none", "forecast", "bilevel"}));

  ReportArgs report_args;
  auto* report = app.add_subcommand("report", "Box-plot and price-profile CSVs from a backtest trace");
  add_common(report, false);
  report->add_option("--trace", report_args.trace, "Trace CSV")->required();
  report->add_option("--bids", report_args.bids, "Bid trace CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(common);
    if (*clear) return cmd_clear(common, clear_args);
    if (*train) return cmd_train(common);
    if (*backtest) return cmd_backtest(common, bt_args);
    if (*report) return cmd_report(common, report_args);
  } catch (const InvalidInput& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
