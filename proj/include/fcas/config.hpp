#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "fcas/advisor.hpp"
#include "fcas/baseline.hpp"
#include "fcas/data.hpp"
#include "fcas/env.hpp"
#include "fcas/ppo.hpp"

namespace fcas {

struct RunPaths {
  std::string history;   // snapshot CSV; empty: generate synthetic data
  std::string bids;      // rival bid CSV paired with `history`
  std::string fr_trace;  // empty: simulate FR utilization
  std::string checkpoint;
  std::string out = "out";
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::size_t train_days = 25;  // leading days used for training, the rest held out
  RunPaths paths;
  TrainingConfig training;
  EnvConfig env;
  AdvisorConfig advisor;
  std::string advisor_stub = "rule";  // "rule" or "zero"
  double rule_shift_fraction = 0.5;
  BaselineConfig baseline;
  std::size_t baseline_scenarios = 5;  // training days fed to the day-ahead solve
  SynthConfig synth;

  // Values not covered by the key table live at their defaults.
  void validate() const;  // throws InvalidInput
};

// Flat `[section]` / `key = value` text. Unknown sections or keys and
// unparsable values throw InvalidInput naming the key.
RunConfig parse_config(std::istream& in);
RunConfig load_config(const std::string& path);
void write_config(std::ostream& out, const RunConfig& config);

// `# key = value` lines for the header of every output file.
std::string config_echo(const RunConfig& config);

std::vector<std::string> config_keys();

}  // namespace fcas
