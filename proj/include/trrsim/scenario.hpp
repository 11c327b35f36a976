#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "trrsim/attacks.hpp"
#include "trrsim/sim.hpp"

namespace trrsim {

// scenario values:
//   idle          no attacker, the clock just runs for `duration`
//   hammer        one L1PT on a vulnerable row, hammered with `pattern`
//   memory_spray | cattmew | pthammer   m victims, `duration` each
//   fuzz          `budget` random patterns over the arena
struct AttackSection {
  std::string scenario = "idle";
  std::size_t m = 50;
  std::string pattern = "double";
  Nanos duration = 10 * kMilli;
  std::uint64_t seed = 1;
  unsigned distance = 2;     // single: aggressors at r-distance and r+distance
  unsigned aggressors = 10;  // many: rows r-1, r+1, r+3, ...
  std::size_t budget = 200;  // fuzz trials
};

struct OutputSection {
  std::string metrics;  // empty: no file
  std::string format = "csv";
};

struct ScenarioConfig {
  SimConfig sim;
  AttackSection attack;
  OutputSection output;

  // Throws ConfigError citing the violated constraint.
  void validate() const;
};

// Sectioned key=value text. Unknown sections or keys are errors. Durations
// are integer nanoseconds; a ns/us/ms/s suffix is accepted.
ScenarioConfig parse_scenario_config(std::istream& in);
ScenarioConfig parse_scenario_config_text(const std::string& text);
ScenarioConfig load_scenario_config(const std::string& path);
std::string render_scenario_config(const ScenarioConfig& cfg);

extern const std::vector<std::string> kMetricColumns;

struct RunReport {
  std::string scenario;
  std::string defense;
  std::uint64_t flips_total = 0;
  std::uint64_t flips_in_pt_rows = 0;
  std::uint64_t corrupted_ptes = 0;
  std::uint64_t rsvd_faults = 0;
  std::uint64_t refreshes = 0;
  std::uint64_t leak_events = 0;
  std::uint64_t armed_ptes = 0;
  std::uint64_t iterations = 0;
  Nanos sim_ns = 0;
  Nanos max_unrefreshed_hammer_ns = 0;
  std::vector<Sample> samples;
  double wall_time = 0;  // seconds; never written to metrics files

  // Counter consistency checks; throws InvariantError.
  void check() const;
};

RunReport run_scenario(const ScenarioConfig& cfg);

std::string render_metrics(const RunReport& report, const std::string& format);
// Writes render_metrics() to `path`. Throws std::runtime_error naming the path.
void emit_metrics(const RunReport& report, const std::string& path, const std::string& format);

}  // namespace trrsim
