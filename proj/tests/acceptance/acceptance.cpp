// Acceptance suite: one PASS/FAIL line per criterion. Exit status is 0 only
// when every criterion passes.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mappings.hpp"
#include "oracles.hpp"
#include "trrsim/attacks.hpp"
#include "trrsim/gf2.hpp"
#include "trrsim/mapping_probe.hpp"
#include "trrsim/scenario.hpp"
#include "workload.hpp"

using namespace trrsim;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// 1. Undefended double-sided flip and its exact time.
Verdict undefended_flip() {
  const auto t0 = std::chrono::steady_clock::now();
  SimConfig c;
  c.dram.weight_decay = 1.0;
  c.sample_interval = 0;
  Simulation sim(c);
  std::vector<ActivationRecord> log;
  sim.dram().set_activation_log(&log);
  Attacker a(sim);
  const VictimSlot v = find_vulnerable_rows(sim.dram(), 1, 1, 64, 8, 12).front();
  a.place_table(a.spray_tables(1).front(), v.ppn);
  const std::vector<VirtAddr> vas = {a.page_in_row({v.row.bank, v.row.row - 1}, 0),
                                     a.page_in_row({v.row.bank, v.row.row + 1}, 0)};
  HammerPattern p;
  p.kind = PatternKind::Double;
  p.bank = v.row.bank;
  p.rows = {v.row.row - 1, v.row.row + 1};
  p.duration = 2500 * kMicro;
  const Nanos start = sim.now();
  const HammerReport rep = run_hammer(sim, a, p, vas);
  sim.dram().set_activation_log(nullptr);

  std::optional<FlipEvent> pt_flip;
  for (const FlipEvent& f : rep.flips)
    if (page_of(f.pa) == v.ppn) {
      pt_flip = f;
      break;
    }
  if (!pt_flip) return {false, "no flip in the page-table row within 2.5 ms"};
  const oracle::Replay ref = oracle::replay(sim.dram(), log);
  auto it = ref.first_cross.find(v.row);
  const bool exact = it != ref.first_cross.end() && it->second == pt_flip->time;
  const Nanos after = pt_flip->time - start;
  const double wall = seconds_since(t0);
  return {exact && after <= 2500 * kMicro && wall < 5.0,
          fmt("flip after %.3f ms, oracle %s, wall %.2f s", after / 1e6,
              exact ? "agrees" : "disagrees", wall)};
}

// 2. The three page-table attacks, m = 50, 10 s per victim.
Verdict attack_table() {
  std::string detail;
  bool pass = true;
  for (const char* s : {"memory_spray", "cattmew", "pthammer"}) {
    const auto t0 = std::chrono::steady_clock::now();
    ScenarioConfig cfg;
    cfg.attack.scenario = s;
    cfg.attack.m = 50;
    cfg.attack.duration = 10 * kSecond;
    cfg.sim.sample_interval = 0;
    const RunReport none = run_scenario(cfg);
    cfg.sim.defense = DefenseMode::SoftTrr;
    cfg.sim.softtrr = DefenseParams{};
    const RunReport soft = run_scenario(cfg);
    const double wall = seconds_since(t0);
    const bool ok = none.flips_in_pt_rows >= 1 && soft.flips_in_pt_rows == 0 && wall < 60.0;
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += fmt("%s none=%llu softtrr=%llu (%.1f s)", s, (unsigned long long)none.flips_in_pt_rows,
                  (unsigned long long)soft.flips_in_pt_rows, wall);
  }
  return {pass, detail};
}

// 3. The unrefreshed hammer window never exceeds the threshold.
Verdict threshold_bound() {
  SimConfig c;
  c.defense = DefenseMode::SoftTrr;
  c.sample_interval = 0;
  FuzzOptions o;
  o.seed = 2024;
  const Nanos bound = c.softtrr.threshold() + c.dram.fault_service_time;
  std::mt19937_64 seeds(o.seed);
  std::size_t violations = 0;
  Nanos worst = 0;
  const std::size_t traces = 500;
  for (std::size_t i = 0; i < traces; ++i) {
    const FuzzTrial t = run_fuzz_trial(c, o, sample_pattern(seeds(), o), i);
    worst = std::max(worst, t.max_unrefreshed_hammer_ns);
    if (t.max_unrefreshed_hammer_ns > bound) ++violations;
  }
  return {violations == 0, fmt("%zu traces, worst %llu ns, bound %llu ns, %zu violations", traces,
                               (unsigned long long)worst, (unsigned long long)bound, violations)};
}

// 4. ChipTRR stops double-sided hammering but not many-sided.
Verdict chiptrr_bypass() {
  SimConfig c;
  c.defense = DefenseMode::ChipTrr;
  c.chiptrr = {4, 4000};
  c.sample_interval = 0;
  FuzzOptions o;
  o.seed = 7;

  // Double-sided against every arena row pair for two refresh windows.
  HammerPattern dbl;
  dbl.kind = PatternKind::Double;
  dbl.bank = o.bank;
  dbl.rows = {o.first_row + 40, o.first_row + 42};
  dbl.duration = 2 * c.dram.refresh_period;
  const FuzzTrial d = run_fuzz_trial(c, o, dbl);

  o.budget = 200;
  o.stop_at_first_many = true;
  const FuzzReport f = fuzz_patterns(c, o);
  if (!f.first_many_sided)
    return {false, fmt("double-sided flips=%llu, no many-sided flip in %zu trials",
                       (unsigned long long)d.flips_total, f.trials)};
  const HammerPattern& found = f.flipping.back().pattern;
  SimConfig s = c;
  s.defense = DefenseMode::SoftTrr;
  const FuzzTrial soft = run_fuzz_trial(s, o, found);
  return {d.flips_total == 0 && soft.flips_pt == 0,
          fmt("double-sided flips=%llu; trial %zu found n=%zu (%llu flips); softtrr on it: %llu PT flips",
              (unsigned long long)d.flips_total, *f.first_many_sided, found.rows.size(),
              (unsigned long long)f.flipping.back().flips_total, (unsigned long long)soft.flips_pt)};
}

// 5. Two-row-distant aggressors against a 1-row and a 6-row defense.
Verdict distance_regression() {
  auto run = [](unsigned distance) {
    ScenarioConfig cfg;
    cfg.sim.dram.weight_decay = 0.7;
    cfg.sim.defense = DefenseMode::SoftTrr;
    cfg.sim.softtrr.max_distance = distance;
    cfg.sim.sample_interval = 0;
    cfg.attack.scenario = "hammer";
    cfg.attack.pattern = "single";
    cfg.attack.distance = 2;
    cfg.attack.duration = 60 * kMilli;
    return run_scenario(cfg);
  };
  const RunReport narrow = run(1), wide = run(6);
  return {narrow.flips_in_pt_rows >= 1 && wide.flips_in_pt_rows == 0,
          fmt("max_distance=1: %llu PT flips; max_distance=6: %llu PT flips",
              (unsigned long long)narrow.flips_in_pt_rows, (unsigned long long)wide.flips_in_pt_rows)};
}

// 6. Incremental bookkeeping against a from-scratch rescan.
Verdict bookkeeping() {
  Simulation sim(workload::small_config());
  sim.load_defense();
  workload::RandomKernel w(sim, 6);
  std::size_t checks = 0;
  for (int i = 1; i <= 10000; ++i) {
    w.step();
    if (i % 100 == 0) {
      ++checks;
      const auto ref = oracle::rescan(sim.dram(), sim.kernel(), sim.softtrr()->params().max_distance);
      const std::string diff = oracle::compare(*sim.softtrr(), ref);
      if (!diff.empty()) return {false, fmt("event %d: %s", i, diff.c_str())};
    }
  }
  return {true, fmt("%zu events, %zu spot checks, %zu page moves, %llu RSVD faults", w.events(), checks, w.moves(),
                    (unsigned long long)sim.softtrr()->counters().rsvd_faults)};
}

// 7. One 4x ring growth when 80% full, nothing lost.
Verdict ring_growth() {
  SimConfig c;
  c.defense = DefenseMode::SoftTrr;
  c.sample_interval = 0;
  Simulation sim(c);
  Attacker a(sim);
  // Two tables on neighboring rows make every page they map adjacent.
  const auto regions = a.spray_tables(2, 1);
  a.place_table(regions[0], frame_in_row(sim.dram(), {0, 100}, 0));
  a.place_table(regions[1], frame_in_row(sim.dram(), {0, 101}, 0));
  sim.load_defense();
  std::vector<std::uint64_t> grows;
  sim.softtrr()->set_event_sink([&](const DefenseEvent& e) {
    if (e.kind == DefenseEventKind::Grow) grows.push_back(e.value);
  });
  const std::size_t per_region = 450;
  for (VirtAddr r : regions)
    for (std::size_t i = 1; i <= per_region; ++i) a.load(r + i * kPageSize);
  const PteRing& ring = sim.softtrr()->ring();
  const std::size_t queued = ring.size();
  const ArmStats s = sim.softtrr()->on_timer(sim.now());
  const bool pass = grows.size() == 1 && grows[0] == 4096 && ring.growths() == 1 && queued == 2 * per_region &&
                    s.from_ring == queued && s.stale == 0 && ring.pushed() == ring.popped();
  return {pass, fmt("%zu queued, %zu growth(s) to %llu, %zu armed from the ring, %zu lost", queued, grows.size(),
                    (unsigned long long)(grows.empty() ? 0 : grows[0]), s.from_ring, queued - s.from_ring)};
}

// 8. Bank function recovery over random mappings.
Verdict mapping_recovery() {
  std::size_t ok_lo = 0, ok_hi = 0;
  std::mt19937_64 rng(88);
  for (int i = 0; i < 100; ++i) {
    const DramConfig cfg = mappings::random_mapping(rng);
    for (std::size_t budget : {std::size_t{10000}, std::size_t{100000}}) {
      Dram dram(cfg);
      Clock clock;
      MappingProbe p(dram, clock, {.seed = static_cast<std::uint64_t>(1000 + i)});
      const ProbeResult r = p.recover_bank_functions(budget, {6, 22});
      if (gf2::same_span(r.masks, cfg.bank_fns)) ++(budget == 10000 ? ok_lo : ok_hi);
    }
  }
  return {ok_lo >= 95 && ok_hi == 100, fmt("10^4 samples: %zu/100, 10^5 samples: %zu/100", ok_lo, ok_hi)};
}

// 9. Overhead isolation, standing in for the hardware measurements.
Verdict overhead_isolation() {
  SimConfig c;
  c.defense = DefenseMode::SoftTrr;
  Simulation sim(c);
  Attacker a(sim);
  a.place_table(a.spray_tables(1).front(), frame_in_row(sim.dram(), {0, 200}, 0));
  // A busy process whose pages all sit far from every page table.
  const Pid pid = sim.kernel().spawn_process({});
  const VirtAddr base = sim.kernel().mmap(pid, {.length = 64 * kPageSize, .populate = true});
  sim.load_defense();
  const auto ref = oracle::rescan(sim.dram(), sim.kernel(), c.softtrr.max_distance);
  std::vector<VirtAddr> far;
  for (unsigned i = 0; i < 64; ++i) {
    const VirtAddr va = base + i * kPageSize;
    if (!ref.adj.count(sim.kernel().leaf_of(pid, va)->entry.ppn)) far.push_back(va);
  }
  TranslationContext& ctx = sim.kernel().process(pid).ctx;
  std::size_t next = 0;
  sim.run_loop(sim.now() + 100 * kMilli, [&] {
    const VirtAddr va = far[next++ % far.size()];
    sim.mmu().data_cache_flush(sim.mmu().translate(ctx, va, AccessKind::Read, true).pa);
    sim.mmu().access_memory(ctx, va, AccessKind::Read, true);
  });
  const std::uint64_t benign = sim.softtrr()->counters().rsvd_faults;

  // The same loop on an adjacent page is traced once per timer interval.
  const VirtAddr near = a.page_in_row({0, 201}, 0);
  sim.softtrr()->on_timer(sim.now());
  const std::uint64_t before = sim.softtrr()->counters().rsvd_faults;
  sim.run_loop(sim.now() + 100 * kMilli, [&] {
    a.clflush(near);
    a.load(near);
  });
  const std::uint64_t traced = sim.softtrr()->counters().rsvd_faults - before;
  return {benign == 0 && !far.empty() && traced >= 99,
          fmt("%zu non-adjacent pages over 100 ms: %llu RSVD faults; one adjacent page: %llu faults",
              far.size(), (unsigned long long)benign, (unsigned long long)traced)};
}

// 10. Same config, same bytes.
Verdict determinism() {
  const std::string dir = (std::filesystem::temp_directory_path() / "trrsim_acceptance").string();
  std::filesystem::create_directories(dir);
  auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
  };
  const std::vector<std::string> configs = {
      "[defense]\nmode = softtrr\n[attack]\nscenario = pthammer\nm = 5\nduration = 2s\nseed = 3\n",
      "[defense]\nmode = none\n[attack]\nscenario = memory_spray\nm = 4\nduration = 100ms\n",
      "[defense]\nmode = softtrr\n[attack]\nscenario = fuzz\nbudget = 10\nseed = 5\n[output]\nformat = json\n",
      "[defense]\nmode = chiptrr\n[attack]\nscenario = hammer\npattern = many\nduration = 30ms\n"};
  std::size_t identical = 0;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const ScenarioConfig cfg = parse_scenario_config_text(configs[i]);
    const std::string a = dir + "/run" + std::to_string(i) + "a", b = dir + "/run" + std::to_string(i) + "b";
    emit_metrics(run_scenario(cfg), a, cfg.output.format);
    emit_metrics(run_scenario(cfg), b, cfg.output.format);
    const std::string x = slurp(a), y = slurp(b);
    if (x == y && !x.empty()) ++identical;
  }
  std::filesystem::remove_all(dir);
  return {identical == configs.size(), fmt("%zu/%zu configs byte-identical across runs", identical, configs.size())};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"undefended double-sided flip", undefended_flip},
      {"attack table at m=50", attack_table},
      {"unrefreshed window within threshold", threshold_bound},
      {"in-DRAM TRR bypass", chiptrr_bypass},
      {"row distance regression", distance_regression},
      {"bookkeeping equals rescan", bookkeeping},
      {"ring buffer growth", ring_growth},
      {"bank mapping recovery", mapping_recovery},
      {"non-reproduced results and overhead isolation", overhead_isolation},
      {"byte-identical metrics", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << "  criterion " << (i + 1) << ": " << criteria[i].first << " -- "
              << v.detail << " [" << fmt("%.1f", seconds_since(t0)) << " s]" << std::endl;
    if (i + 1 == 9)
      std::cout << "      not reproduced (hardware/kernel measurements): SPEC CPU overhead 0.83%, Phoronix "
                   "overhead 0.22-0.24%, LAMP memory footprint under 600 KiB, 28 ms module load cost, "
                   "Linux Test Project robustness"
                << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed ? 1 : 0;
}
