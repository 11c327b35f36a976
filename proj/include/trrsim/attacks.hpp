#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "trrsim/sim.hpp"

namespace trrsim {

enum class PatternKind { Double, Single, OneLocation, Many };
enum class AccessOrder { Sequential, Reverse, Shuffled };

const char* pattern_name(PatternKind k);
PatternKind parse_pattern(const std::string& s);
const char* order_name(AccessOrder o);

struct HammerPattern {
  PatternKind kind = PatternKind::Double;
  std::uint32_t bank = 0;
  std::vector<std::uint32_t> rows;  // aggressor rows, all in `bank`
  AccessOrder order = AccessOrder::Sequential;
  std::uint64_t order_seed = 0;     // permutation for Shuffled
  Nanos duration = 10 * kMilli;
  std::uint64_t activation_budget = 0;  // 0: unlimited

  // Throws ConfigError when the rows do not fit the kind.
  void validate() const;
  std::string describe() const;
};

struct AttackCosts {
  Nanos flush = 20;  // clflush or invlpg
};

// A user process that can place its pages (or its L1PTs) at chosen frames.
class Attacker {
 public:
  explicit Attacker(Simulation& sim, AttackCosts costs = {});

  Pid pid() const { return pid_; }
  TranslationContext& ctx();

  // Maps a user page backed by frame `target` and returns its address.
  VirtAddr page_at(Ppn target);
  VirtAddr page_in_row(RowId row, unsigned slot = 0);
  // Creates `count` L1PTs, one per 2 MiB region, each mapping `touch` pages.
  // Returns the region base addresses.
  std::vector<VirtAddr> spray_tables(std::size_t count, unsigned touch = 4);
  Ppn table_of(VirtAddr region) ;
  void place_table(VirtAddr region, Ppn target);

  void clflush(VirtAddr va);
  void invlpg(VirtAddr va);
  // Kernel-assisted flush of the cache line holding the L1PTE of `va`.
  void flush_leaf_pte(VirtAddr va);
  void load(VirtAddr va);

  Ppn frame_of(VirtAddr va);

 private:
  Simulation& sim_;
  AttackCosts costs_;
  Pid pid_ = 0;
  VirtAddr next_page_ = 0;
  VirtAddr next_region_ = 0;
  std::map<Ppn, VirtAddr> placed_;
};

Ppn frame_in_row(const Dram& dram, RowId row, unsigned slot);

struct HammerReport {
  std::vector<FlipEvent> flips;
  std::uint64_t flips_pt = 0;
  std::uint64_t activations = 0;
  std::uint64_t iterations = 0;
  Nanos elapsed = 0;
  std::optional<Nanos> first_flip;
};

HammerReport run_hammer(Simulation& sim, Attacker& attacker, const HammerPattern& pattern,
                        const std::vector<VirtAddr>& aggressor_vas);
// Convenience overload: maps attacker pages into the aggressor rows first.
HammerReport run_hammer(Simulation& sim, Attacker& attacker, const HammerPattern& pattern);

struct VictimSlot {
  RowId row;
  unsigned slot = 0;  // page within the row that holds a flippable cell
  Ppn ppn = 0;
};

// Rows whose seeded cells would flip a zero bit inside page `slot`, at an
// offset past the first `skip_bytes` of the page. Rows in `avoid` and rows
// closer than `separation` to a chosen one (same bank) are skipped.
std::vector<VictimSlot> find_vulnerable_rows(const Dram& dram, std::size_t count, std::uint64_t seed,
                                             std::uint32_t min_row, std::uint32_t margin,
                                             std::uint32_t separation, std::uint64_t skip_bytes = 512);

enum class ScenarioKind { MemorySpray, Cattmew, PtHammer };
const char* scenario_name(ScenarioKind k);
ScenarioKind parse_scenario(const std::string& s);

struct ScenarioOptions {
  std::size_t m = 50;
  std::uint64_t seed = 1;
  Nanos duration_per_victim = 10 * kSecond;
  AttackCosts costs;
  std::uint32_t min_row = 64;
};

struct AttackReport {
  std::string scenario;
  std::string defense;
  std::size_t m = 0;
  std::size_t victims = 0;
  std::uint64_t flips_total = 0;
  std::uint64_t flips_pt = 0;
  std::uint64_t corrupted_ptes = 0;
  std::size_t corrupted_victims = 0;
  std::uint64_t rsvd_faults = 0;
  std::uint64_t refreshes = 0;
  std::uint64_t iterations = 0;
  Nanos elapsed = 0;
  Nanos max_unrefreshed_hammer_ns = 0;
};

AttackReport run_memory_spray(Simulation& sim, const ScenarioOptions& opt);
AttackReport run_cattmew(Simulation& sim, const ScenarioOptions& opt);
AttackReport run_pthammer(Simulation& sim, const ScenarioOptions& opt);
AttackReport run_attack(Simulation& sim, ScenarioKind kind, const ScenarioOptions& opt);

// A window of rows where every row carries one attacker page (slot 0) and
// one L1PT (slot 1).
struct FuzzArena {
  std::uint32_t bank = 0;
  std::uint32_t first_row = 0;
  std::uint32_t rows = 0;
  std::map<std::uint32_t, VirtAddr> page_by_row;
};

FuzzArena build_fuzz_arena(Simulation& sim, Attacker& attacker, std::uint32_t bank, std::uint32_t first_row,
                           std::uint32_t rows);

struct FuzzOptions {
  std::size_t budget = 200;
  std::uint64_t seed = 1;
  unsigned min_n = 2;
  unsigned max_n = 32;
  unsigned max_spacing = 4;
  Nanos min_duration = 8 * kMilli;
  Nanos max_duration = 32 * kMilli;
  std::uint32_t bank = 0;
  std::uint32_t first_row = 128;
  std::uint32_t arena_rows = 160;
  bool stop_at_first_many = false;  // stop once a flipping n >= 10 pattern is found
};

struct FuzzTrial {
  std::size_t index = 0;
  HammerPattern pattern;
  std::uint64_t flips_total = 0;
  std::uint64_t flips_pt = 0;
  std::uint64_t rsvd_faults = 0;
  std::uint64_t refreshes = 0;
  Nanos max_unrefreshed_hammer_ns = 0;
};

struct FuzzReport {
  std::string defense;
  std::size_t trials = 0;
  std::vector<FuzzTrial> flipping;  // trials with at least one flip
  std::uint64_t flips_total = 0;
  std::uint64_t flips_pt = 0;
  std::uint64_t rsvd_faults = 0;
  std::uint64_t refreshes = 0;
  std::optional<std::size_t> first_many_sided;  // index of first flipping n >= 10 trial
  Nanos max_unrefreshed_hammer_ns = 0;
};

HammerPattern sample_pattern(std::uint64_t seed, const FuzzOptions& opt);
// Runs one pattern in a fresh simulation built from `config` over the arena.
FuzzTrial run_fuzz_trial(const SimConfig& config, const FuzzOptions& opt, const HammerPattern& pattern,
                         std::size_t index = 0);
FuzzReport fuzz_patterns(const SimConfig& config, const FuzzOptions& opt);

}  // namespace trrsim
