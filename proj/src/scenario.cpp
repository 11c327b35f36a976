#include "trrsim/scenario.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "json.hpp"

namespace trrsim {

const std::vector<std::string> kMetricColumns = {"sim_ns",    "rsvd_faults",   "refreshes",
                                                 "leak_events", "pt_nodes",    "adj_nodes",
                                                 "ring_capacity", "flips_pt",  "flips_other"};

namespace {

namespace pt = boost::property_tree;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::uint64_t to_u64(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  try {
    std::size_t used = 0;
    if (v.empty() || v[0] == '-') throw std::invalid_argument("sign");
    const std::uint64_t x = std::stoull(v, &used, 0);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key + " must be a non-negative integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key + " must be a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + " must be true or false, got '" + v + "'");
}

Nanos to_duration(const std::string& key, const std::string& raw) {
  std::string v = trim(raw);
  static const std::array<std::pair<const char*, Nanos>, 4> units = {
      {{"ns", 1}, {"us", kMicro}, {"ms", kMilli}, {"s", kSecond}}};
  for (const auto& [suffix, scale] : units) {
    const std::string sfx = suffix;
    if (v.size() > sfx.size() && v.compare(v.size() - sfx.size(), sfx.size(), sfx) == 0) {
      const std::uint64_t n = to_u64(key, v.substr(0, v.size() - sfx.size()));
      if (scale > 1 && n > std::numeric_limits<Nanos>::max() / scale) throw ConfigError(key + " overflows");
      return n * scale;
    }
  }
  return to_u64(key, v);
}

unsigned to_unsigned(const std::string& key, const std::string& raw) {
  const std::uint64_t x = to_u64(key, raw);
  if (x > std::numeric_limits<unsigned>::max()) throw ConfigError(key + " is too large");
  return static_cast<unsigned>(x);
}

std::vector<std::uint64_t> to_masks(const std::string& key, const std::string& raw) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_u64(key, item));
  if (out.empty()) throw ConfigError(key + " needs at least one mask");
  return out;
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << v;
  return os.str();
}

using Setter = std::function<void(ScenarioConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, std::map<std::string, Setter>>& setters() {
  static const std::map<std::string, std::map<std::string, Setter>> table = [] {
    std::map<std::string, std::map<std::string, Setter>> t;
    auto& d = t["dram"];
    d["bank_fns"] = [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.sim.dram.bank_fns = to_masks(k, v); };
    d["column_bits"] = [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.sim.dram.column_bits = to_unsigned(k, v); };
    d["row_shift"] = [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.sim.dram.row_shift = to_unsigned(k, v); };
    d["row_bits"] = [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.sim.dram.row_bits = to_unsigned(k, v); };
    d["t_rc"] = [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.sim.dram.t_rc = to_duration(k, v); };
    d["refresh_period"] = [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.sim.dram.refresh_period = to_duration(k, v); };
    d["max_distance"] = [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.sim.dram.max_distance = to_unsigned(k, v); };
    d["weight_decay"] = [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.sim.dram.weight_decay = to_double(k, v); };
    d["hc_first"] = [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.sim.dram.hc_first = to_u64(k, v); };
    d["hc_spread"] = [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.sim.dram.hc_spread = to_double(k, v); };
    d["latency_hit"] = [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.sim.dram.latency_hit = to_duration(k, v); };
    d["latency_closed"] = [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.sim.dram.latency_closed = to_duration(k, v); };
    d["latency_conflict"] = [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.sim.dram.latency_conflict = to_duration(k, v); };
    d["fault_service_time"] = [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.sim.dram.fault_service_time = to_duration(k, v); };
    d["vuln_seed"] = [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.sim.dram.vuln_seed = to_u64(k, v); };
    d["flip_density"] = [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.sim.dram.flip_density = to_double(k, v); };
    d["max_cells_per_row"] = [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.sim.dram.max_cells_per_row = to_unsigned(k, v); };
    // Derived geometry may be given in place of the bit widths.
    d["rows_per_bank"] = [](ScenarioConfig& c, const std::string& k, const std::string& v) {
      const std::uint64_t n = to_u64(k, v);
      if (n == 0 || (n & (n - 1))) throw ConfigError(k + " must be a power of two");
      c.sim.dram.row_bits = static_cast<unsigned>(std::countr_zero(n));
    };
    d["row_size"] = [](ScenarioConfig& c, const std::string& k, const std::string& v) {
      const std::uint64_t n = to_u64(k, v);
      if (n == 0 || (n & (n - 1))) throw ConfigError(k + " must be a power of two");
      c.sim.dram.column_bits = static_cast<unsigned>(std::countr_zero(n));
    };

    auto& s = t["sim"];
    s["sample_interval"] = [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.sim.sample_interval = to_duration(k, v); };
    s["fast_forward"] = [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.sim.fast_forward = to_bool(k, v); };
    s["reserved_low_pages"] = [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.sim.reserved_low_pages = to_u64(k, v); };

    auto& f = t["defense"];
    f["mode"] = [](ScenarioConfig& c, const std::string&, const std::string& v) { c.sim.defense = parse_defense(trim(v)); };
    f["timer_inr"] = [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.sim.softtrr.timer_inr = to_duration(k, v); };
    f["count_limit"] = [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.sim.softtrr.count_limit = to_unsigned(k, v); };
    f["max_distance"] = [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.sim.softtrr.max_distance = to_unsigned(k, v); };
    f["ring_capacity"] = [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.sim.softtrr.ring_capacity = to_u64(k, v); };
    f["chiptrr_k"] = [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.sim.chiptrr.k = to_unsigned(k, v); };
    f["chiptrr_threshold"] = [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.sim.chiptrr.trr_threshold = to_u64(k, v); };

    auto& a = t["attack"];
    a["scenario"] = [](ScenarioConfig& c, const std::string&, const std::string& v) { c.attack.scenario = trim(v); };
    a["m"] = [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.attack.m = to_u64(k, v); };
    a["pattern"] = [](ScenarioConfig& c, const std::string&, const std::string& v) { c.attack.pattern = trim(v); };
    a["duration"] = [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.attack.duration = to_duration(k, v); };
    a["seed"] = [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.attack.seed = to_u64(k, v); };
    a["distance"] = [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.attack.distance = to_unsigned(k, v); };
    a["aggressors"] = [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.attack.aggressors = to_unsigned(k, v); };
    a["budget"] = [](ScenarioConfig& c, const std::string& k, const std::string& v) { c.attack.budget = to_u64(k, v); };

    auto& o = t["output"];
    o["metrics"] = [](ScenarioConfig& c, const std::string&, const std::string& v) { c.output.metrics = trim(v); };
    o["format"] = [](ScenarioConfig& c, const std::string&, const std::string& v) { c.output.format = trim(v); };
    return t;
  }();
  return table;
}

const std::set<std::string> kScenarios = {"idle", "hammer", "memory_spray", "cattmew", "pthammer", "fuzz"};

}  // namespace

void ScenarioConfig::validate() const {
  sim.dram.validate();
  if (sim.defense == DefenseMode::SoftTrr) sim.softtrr.validate(sim.dram);
  if (sim.defense == DefenseMode::ChipTrr && sim.chiptrr.k > 0 && sim.chiptrr.trr_threshold == 0)
    throw ConfigError("defense.chiptrr_threshold must be positive when chiptrr_k > 0");
  if (!kScenarios.count(attack.scenario))
    throw ConfigError("attack.scenario must be one of idle|hammer|memory_spray|cattmew|pthammer|fuzz, got '" +
                      attack.scenario + "'");
  parse_pattern(attack.pattern);
  if (attack.distance == 0) throw ConfigError("attack.distance must be at least 1");
  if (attack.distance > sim.dram.rows_per_bank() / 4) throw ConfigError("attack.distance exceeds the bank size");
  if (attack.aggressors < 3) throw ConfigError("attack.aggressors must be at least 3 for a many-sided pattern");
  if (2ULL * attack.aggressors + 72 > sim.dram.rows_per_bank())
    throw ConfigError("attack.aggressors does not fit in one bank");
  if (output.format != "csv" && output.format != "json")
    throw ConfigError("output.format must be csv or json, got '" + output.format + "'");
}

ScenarioConfig parse_scenario_config(std::istream& in) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  ScenarioConfig cfg;
  const auto& table = setters();
  for (const auto& [section, body] : tree) {
    auto sec = table.find(section);
    if (sec == table.end()) {
      if (!body.data().empty()) throw ConfigError("key '" + section + "' must be inside a section");
      throw ConfigError("unknown section [" + section + "]");
    }
    for (const auto& [key, node] : body) {
      auto it = sec->second.find(key);
      if (it == sec->second.end()) throw ConfigError("unknown key " + section + "." + key);
      it->second(cfg, section + "." + key, node.data());
    }
  }
  cfg.validate();
  return cfg;
}

ScenarioConfig parse_scenario_config_text(const std::string& text) {
  std::istringstream in(text);
  return parse_scenario_config(in);
}

ScenarioConfig load_scenario_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_scenario_config(in);
}

std::string render_scenario_config(const ScenarioConfig& c) {
  std::ostringstream os;
  const DramConfig& d = c.sim.dram;
  os << "[dram]\nbank_fns = ";
  for (std::size_t i = 0; i < d.bank_fns.size(); ++i) os << (i ? "," : "") << hex(d.bank_fns[i]);
  os << "\ncolumn_bits = " << d.column_bits << "\nrow_shift = " << d.row_shift << "\nrow_bits = " << d.row_bits
     << "\nt_rc = " << d.t_rc << "\nrefresh_period = " << d.refresh_period << "\nmax_distance = " << d.max_distance
     << "\nweight_decay = " << d.weight_decay << "\nhc_first = " << d.hc_first << "\nhc_spread = " << d.hc_spread
     << "\nlatency_hit = " << d.latency_hit << "\nlatency_closed = " << d.latency_closed
     << "\nlatency_conflict = " << d.latency_conflict << "\nfault_service_time = " << d.fault_service_time
     << "\nvuln_seed = " << d.vuln_seed << "\nflip_density = " << d.flip_density
     << "\nmax_cells_per_row = " << d.max_cells_per_row << "\n\n";
  os << "[sim]\nsample_interval = " << c.sim.sample_interval << "\nfast_forward = "
     << (c.sim.fast_forward ? "true" : "false") << "\nreserved_low_pages = " << c.sim.reserved_low_pages << "\n\n";
  os << "[defense]\nmode = " << defense_name(c.sim.defense) << "\ntimer_inr = " << c.sim.softtrr.timer_inr
     << "\ncount_limit = " << c.sim.softtrr.count_limit << "\nmax_distance = " << c.sim.softtrr.max_distance
     << "\nring_capacity = " << c.sim.softtrr.ring_capacity << "\nchiptrr_k = " << c.sim.chiptrr.k
     << "\nchiptrr_threshold = " << c.sim.chiptrr.trr_threshold << "\n\n";
  os << "[attack]\nscenario = " << c.attack.scenario << "\nm = " << c.attack.m << "\npattern = " << c.attack.pattern
     << "\nduration = " << c.attack.duration << "\nseed = " << c.attack.seed << "\ndistance = " << c.attack.distance
     << "\naggressors = " << c.attack.aggressors << "\nbudget = " << c.attack.budget << "\n\n";
  os << "[output]\n";
  if (!c.output.metrics.empty()) os << "metrics = " << c.output.metrics << "\n";
  os << "format = " << c.output.format << "\n";
  return os.str();
}

void RunReport::check() const {
  if (flips_in_pt_rows > flips_total) throw InvariantError("flips_in_pt_rows exceeds flips_total");
  const Sample* prev = nullptr;
  for (const Sample& s : samples) {
    if (prev) {
      if (s.sim_ns <= prev->sim_ns) throw InvariantError("samples out of time order");
      if (s.rsvd_faults < prev->rsvd_faults || s.refreshes < prev->refreshes || s.leak_events < prev->leak_events ||
          s.flips_pt < prev->flips_pt || s.flips_other < prev->flips_other)
        throw InvariantError("a counter decreased between samples");
    }
    prev = &s;
  }
  if (prev && (prev->rsvd_faults > rsvd_faults || prev->flips_pt > flips_in_pt_rows))
    throw InvariantError("summary counters behind the time series");
}

namespace {

// One L1PT placed on a vulnerable row and hammered with the configured
// pattern. Returns the number of its entries that changed.
std::uint64_t run_targeted(Simulation& sim, const AttackSection& a, std::uint64_t& iterations) {
  const PatternKind kind = parse_pattern(a.pattern);
  sim.load_defense();
  Attacker at(sim);
  const std::uint32_t reach = std::max({8U, a.distance + 1, 2 * a.aggressors});
  const VictimSlot v = find_vulnerable_rows(sim.dram(), 1, a.seed, std::max(64U, reach), reach, 12).front();
  const VirtAddr region = at.spray_tables(1).front();
  at.place_table(region, v.ppn);

  const std::uint32_t r = v.row.row;
  HammerPattern pat;
  pat.kind = kind;
  pat.bank = v.row.bank;
  pat.duration = a.duration;
  switch (kind) {
    case PatternKind::Double: pat.rows = {r - 1, r + 1}; break;
    case PatternKind::Single: pat.rows = {r - a.distance, r + a.distance}; break;
    case PatternKind::OneLocation: pat.rows = {r + 1}; break;
    case PatternKind::Many:
      for (unsigned i = 0; i < a.aggressors; ++i) pat.rows.push_back(r - 1 + 2 * i);
      break;
  }
  std::vector<VirtAddr> vas;
  for (std::uint32_t row : pat.rows) vas.push_back(at.page_in_row({pat.bank, row}, 0));
  if (sim.softtrr()) sim.run_until(sim.next_defense_timer());

  auto entries = [&] {
    std::array<std::uint64_t, 512> e{};
    for (unsigned i = 0; i < 512; ++i)
      e[i] = sim.dram().read_u64(page_base(v.ppn) + 8ULL * i) & ~PageTableEntry::kRsrv51;
    return e;
  };
  const auto before = entries();
  iterations = run_hammer(sim, at, pat, vas).iterations;
  const auto after = entries();
  std::uint64_t bad = 0;
  for (unsigned i = 0; i < 512; ++i) bad += before[i] != after[i];
  return bad;
}

}  // namespace

RunReport run_scenario(const ScenarioConfig& cfg) {
  cfg.validate();
  const auto wall0 = std::chrono::steady_clock::now();
  RunReport rep;
  rep.scenario = cfg.attack.scenario;
  rep.defense = defense_name(cfg.sim.defense);

  if (cfg.attack.duration == 0) {
    // Nothing is simulated: no setup, no defense load.
  } else if (cfg.attack.scenario == "fuzz") {
    FuzzOptions fo;
    fo.budget = cfg.attack.budget;
    fo.seed = cfg.attack.seed;
    const FuzzReport fr = fuzz_patterns(cfg.sim, fo);
    rep.flips_total = fr.flips_total;
    rep.flips_in_pt_rows = fr.flips_pt;
    rep.rsvd_faults = fr.rsvd_faults;
    rep.refreshes = fr.refreshes;
    rep.iterations = fr.trials;
    rep.max_unrefreshed_hammer_ns = fr.max_unrefreshed_hammer_ns;
  } else {
    Simulation sim(cfg.sim);
    const std::string& s = cfg.attack.scenario;
    if (s == "idle") {
      sim.load_defense();
      sim.run_until(sim.now() + cfg.attack.duration);
    } else if (s == "hammer") {
      rep.corrupted_ptes = run_targeted(sim, cfg.attack, rep.iterations);
    } else {
      ScenarioOptions so;
      so.m = cfg.attack.m;
      so.seed = cfg.attack.seed;
      so.duration_per_victim = cfg.attack.duration;
      const AttackReport ar = run_attack(sim, parse_scenario(s), so);
      rep.corrupted_ptes = ar.corrupted_ptes;
      rep.iterations = ar.iterations;
    }
    rep.flips_total = sim.flip_log().size();
    rep.flips_in_pt_rows = sim.flips_pt();
    if (SoftTrr* d = sim.softtrr()) {
      rep.rsvd_faults = d->counters().rsvd_faults;
      rep.refreshes = d->counters().refreshes;
      rep.leak_events = d->counters().leak_events;
      rep.armed_ptes = d->counters().armed_ptes;
    }
    rep.sim_ns = sim.now();
    rep.max_unrefreshed_hammer_ns = sim.max_unrefreshed_hammer_ns();
    rep.samples = sim.samples();
  }
  rep.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  rep.check();
  return rep;
}

namespace {

std::vector<std::pair<std::string, std::string>> summary_fields(const RunReport& r) {
  return {{"scenario", r.scenario},
          {"defense", r.defense},
          {"flips_total", std::to_string(r.flips_total)},
          {"flips_in_pt_rows", std::to_string(r.flips_in_pt_rows)},
          {"corrupted_ptes", std::to_string(r.corrupted_ptes)},
          {"rsvd_faults", std::to_string(r.rsvd_faults)},
          {"refreshes", std::to_string(r.refreshes)},
          {"leak_events", std::to_string(r.leak_events)},
          {"armed_ptes", std::to_string(r.armed_ptes)},
          {"iterations", std::to_string(r.iterations)},
          {"sim_ns", std::to_string(r.sim_ns)},
          {"max_unrefreshed_hammer_ns", std::to_string(r.max_unrefreshed_hammer_ns)}};
}

std::array<std::uint64_t, 9> row_values(const Sample& s) {
  return {s.sim_ns,   s.rsvd_faults, s.refreshes,     s.leak_events, s.pt_nodes,
          s.adj_nodes, s.ring_capacity, s.flips_pt, s.flips_other};
}

}  // namespace

std::string render_metrics(const RunReport& report, const std::string& format) {
  if (format == "csv") {
    std::ostringstream os;
    for (std::size_t i = 0; i < kMetricColumns.size(); ++i) os << (i ? "," : "") << kMetricColumns[i];
    os << '\n';
    for (const Sample& s : report.samples) {
      const auto v = row_values(s);
      for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
      os << '\n';
    }
    os << "# summary";
    for (const auto& [k, v] : summary_fields(report)) os << ' ' << k << '=' << v;
    os << '\n';
    return os.str();
  }
  if (format == "json") {
    nlohmann::ordered_json j;
    j["columns"] = kMetricColumns;
    auto rows = nlohmann::ordered_json::array();
    for (const Sample& s : report.samples) rows.push_back(row_values(s));
    j["samples"] = std::move(rows);
    nlohmann::ordered_json sum = nlohmann::ordered_json::object();
    for (const auto& [k, v] : summary_fields(report)) {
      if (k == "scenario" || k == "defense")
        sum[k] = v;
      else
        sum[k] = std::stoull(v);
    }
    j["summary"] = std::move(sum);
    return j.dump(2) + "\n";
  }
  throw ConfigError("output.format must be csv or json, got '" + format + "'");
}

void emit_metrics(const RunReport& report, const std::string& path, const std::string& format) {
  const std::string text = render_metrics(report, format);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open metrics file '" + path + "' for writing");
  out << text;
  out.flush();
  if (!out) throw std::runtime_error("error writing metrics file '" + path + "'");
}

}  // namespace trrsim
