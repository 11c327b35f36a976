#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "trrsim/gf2.hpp"
#include "trrsim/mapping_probe.hpp"
#include "trrsim/scenario.hpp"

using namespace trrsim;

namespace {

enum Exit { kOk = 0, kViolated = 1, kConfig = 2, kInternal = 3 };

void print_report(const RunReport& r) {
  std::cout << "scenario " << r.scenario << "\n"
            << "defense " << r.defense << "\n"
            << "flips_total " << r.flips_total << "\n"
            << "flips_in_pt_rows " << r.flips_in_pt_rows << "\n"
            << "corrupted_ptes " << r.corrupted_ptes << "\n"
            << "rsvd_faults " << r.rsvd_faults << "\n"
            << "refreshes " << r.refreshes << "\n"
            << "leak_events " << r.leak_events << "\n"
            << "armed_ptes " << r.armed_ptes << "\n"
            << "iterations " << r.iterations << "\n"
            << "sim_ns " << r.sim_ns << "\n"
            << "max_unrefreshed_hammer_ns " << r.max_unrefreshed_hammer_ns << "\n"
            << "wall_time_s " << r.wall_time << "\n";
}

int execute(ScenarioConfig cfg, const std::string& metrics, const std::string& format) {
  if (!metrics.empty()) cfg.output.metrics = metrics;
  if (!format.empty()) cfg.output.format = format;
  cfg.validate();
  const RunReport r = run_scenario(cfg);
  if (!cfg.output.metrics.empty()) emit_metrics(r, cfg.output.metrics, cfg.output.format);
  print_report(r);
  if (cfg.sim.defense == DefenseMode::SoftTrr && r.flips_in_pt_rows > 0) {
    std::cerr << "security property violated: " << r.flips_in_pt_rows << " flips in page-table rows\n";
    return kViolated;
  }
  return kOk;
}

std::string hex_list(const std::vector<std::uint64_t>& v) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < v.size(); ++i) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "0x%llx", static_cast<unsigned long long>(v[i]));
    os << (i ? ", " : "") << buf;
  }
  os << ']';
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trrsim: rowhammer page-table defense simulator"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string metrics, format;
  app.add_option("--metrics", metrics, "metrics output file");
  app.add_option("--format", format, "metrics format")->check(CLI::IsMember({"csv", "json"}));

  std::string config_path;
  auto* run = app.add_subcommand("run", "run a scenario config file");
  run->add_option("config", config_path, "scenario config")->required();

  std::string attack_name, defense = "softtrr", base_config;
  std::size_t m = 50;
  std::uint64_t seed = 1;
  std::string duration;
  auto* attack = app.add_subcommand("attack", "run one attack scenario");
  attack->add_option("name", attack_name, "memory_spray|cattmew|pthammer|hammer|idle")->required();
  attack->add_option("--defense", defense, "none|softtrr|chiptrr");
  attack->add_option("--m", m, "victim count");
  attack->add_option("--seed", seed, "seed");
  attack->add_option("--duration", duration, "duration per victim (ns, or with ns/us/ms/s)");
  attack->add_option("--config", base_config, "base config file");

  std::size_t budget = 200;
  std::string fuzz_defense = "softtrr";
  std::uint64_t fuzz_seed = 1;
  auto* fuzz = app.add_subcommand("fuzz", "random hammer patterns over a page-table arena");
  fuzz->add_option("--budget", budget, "number of patterns");
  fuzz->add_option("--defense", fuzz_defense, "none|softtrr|chiptrr");
  fuzz->add_option("--seed", fuzz_seed, "seed");

  std::size_t samples = 10000;
  std::uint64_t probe_seed = 1;
  double noise = 0;
  std::string probe_config;
  auto* probe = app.add_subcommand("probe-mapping", "recover bank XOR functions from timing");
  probe->add_option("--samples", samples, "measurement budget");
  probe->add_option("--seed", probe_seed, "seed");
  probe->add_option("--noise", noise, "timing noise sigma (ns)");
  probe->add_option("--config", probe_config, "config file providing the [dram] section");

  std::string show_path;
  auto* show = app.add_subcommand("show-config", "print the effective config");
  show->add_option("config", show_path, "scenario config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*run) return execute(load_scenario_config(config_path), metrics, format);

    if (*attack) {
      ScenarioConfig cfg = base_config.empty() ? ScenarioConfig{} : load_scenario_config(base_config);
      cfg.sim.defense = parse_defense(defense);
      cfg.attack.scenario = attack_name;
      cfg.attack.m = m;
      cfg.attack.seed = seed;
      if (!duration.empty()) {
        cfg.attack.duration = parse_scenario_config_text("[attack]\nduration=" + duration + "\n").attack.duration;
      } else if (base_config.empty() && attack_name != "hammer" && attack_name != "idle") {
        cfg.attack.duration = 10 * kSecond;
      }
      return execute(cfg, metrics, format);
    }

    if (*fuzz) {
      ScenarioConfig cfg;
      cfg.sim.defense = parse_defense(fuzz_defense);
      cfg.attack.scenario = "fuzz";
      cfg.attack.budget = budget;
      cfg.attack.seed = fuzz_seed;
      return execute(cfg, metrics, format);
    }

    if (*probe) {
      const ScenarioConfig cfg = probe_config.empty() ? ScenarioConfig{} : load_scenario_config(probe_config);
      Dram dram(cfg.sim.dram);
      Clock clock;
      ProbeOptions po;
      po.seed = probe_seed;
      po.noise_sigma = noise;
      MappingProbe p(dram, clock, po);
      const unsigned top = cfg.sim.dram.row_shift + cfg.sim.dram.row_bits - 1;
      const ProbeResult r = p.recover_bank_functions(samples, {6, top});
      std::cout << hex_list(r.masks) << "\n";
      std::cerr << "samples " << r.samples << " clusters " << r.clusters << " complete "
                << (r.complete ? "true" : "false") << " matches_config "
                << (gf2::same_span(r.masks, cfg.sim.dram.bank_fns) ? "true" : "false") << "\n";
      return kOk;
    }

    if (*show) {
      const ScenarioConfig cfg = show_path.empty() ? ScenarioConfig{} : load_scenario_config(show_path);
      std::cout << render_scenario_config(cfg);
      return kOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const ScenarioError& e) {
    std::cerr << "scenario error: " << e.what() << "\n";
    return kConfig;
  } catch (const InvariantError& e) {
    std::cerr << "internal invariant violated: " << e.what() << "\n";
    return kInternal;
  } catch (const ContractError& e) {
    std::cerr << "internal invariant violated: " << e.what() << "\n";
    return kInternal;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInternal;
  }
  return kOk;
}
