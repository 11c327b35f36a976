#include "trrsim/attacks.hpp"

#include <algorithm>
#include <array>
#include <random>
#include <set>
#include <sstream>

namespace trrsim {

const char* pattern_name(PatternKind k) {
  switch (k) {
    case PatternKind::Double: return "double";
    case PatternKind::Single: return "single";
    case PatternKind::OneLocation: return "one_location";
    case PatternKind::Many: return "many";
  }
  return "?";
}

PatternKind parse_pattern(const std::string& s) {
  if (s == "double") return PatternKind::Double;
  if (s == "single") return PatternKind::Single;
  if (s == "one_location") return PatternKind::OneLocation;
  if (s == "many") return PatternKind::Many;
  throw ConfigError("attack.pattern must be one of double|single|one_location|many, got '" + s + "'");
}

const char* order_name(AccessOrder o) {
  switch (o) {
    case AccessOrder::Sequential: return "sequential";
    case AccessOrder::Reverse: return "reverse";
    case AccessOrder::Shuffled: return "shuffled";
  }
  return "?";
}

const char* scenario_name(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::MemorySpray: return "memory_spray";
    case ScenarioKind::Cattmew: return "cattmew";
    case ScenarioKind::PtHammer: return "pthammer";
  }
  return "?";
}

ScenarioKind parse_scenario(const std::string& s) {
  if (s == "memory_spray") return ScenarioKind::MemorySpray;
  if (s == "cattmew") return ScenarioKind::Cattmew;
  if (s == "pthammer") return ScenarioKind::PtHammer;
  throw ConfigError("attack.scenario must be one of memory_spray|cattmew|pthammer, got '" + s + "'");
}

void HammerPattern::validate() const {
  std::set<std::uint32_t> distinct(rows.begin(), rows.end());
  if (distinct.size() != rows.size()) throw ConfigError("pattern: aggressor rows must be distinct");
  switch (kind) {
    case PatternKind::Double:
      if (rows.size() != 2 || (rows[0] > rows[1] ? rows[0] - rows[1] : rows[1] - rows[0]) != 2)
        throw ConfigError("pattern: double-sided needs two aggressors sandwiching one victim row");
      break;
    case PatternKind::Single:
      if (rows.size() != 2) throw ConfigError("pattern: single-sided uses exactly two aggressor rows");
      break;
    case PatternKind::OneLocation:
      if (rows.size() != 1) throw ConfigError("pattern: one_location uses a single aggressor row");
      break;
    case PatternKind::Many:
      if (rows.size() <= 2) throw ConfigError("pattern: many-sided needs more than two aggressor rows");
      break;
  }
}

std::string HammerPattern::describe() const {
  std::ostringstream os;
  os << pattern_name(kind) << " n=" << rows.size() << " bank=" << bank << " rows=";
  for (std::size_t i = 0; i < rows.size(); ++i) os << (i ? "," : "") << rows[i];
  os << " order=" << order_name(order) << " duration_ns=" << duration;
  return os.str();
}

Ppn frame_in_row(const Dram& dram, RowId row, unsigned slot) {
  const std::uint64_t step = std::min<std::uint64_t>(dram.config().row_size(), kPageSize);
  const std::uint64_t col = std::uint64_t{slot} * step;
  if (col >= dram.config().row_size()) throw ScenarioError("row has no such page slot");
  return page_of(dram.to_physical({row.bank, row.row, static_cast<std::uint32_t>(col)}));
}

namespace {
constexpr VirtAddr kHammerBase = 0x4000000000ULL;
constexpr std::uint64_t kHammerLength = 1ULL << 32;
constexpr VirtAddr kSprayBase = 0x6000000000ULL;
}  // namespace

Attacker::Attacker(Simulation& sim, AttackCosts costs) : sim_(sim), costs_(costs) {
  VmaSpec pages;
  pages.start = kHammerBase;
  pages.length = kHammerLength;
  pid_ = sim_.kernel().spawn_process({pages});
  next_page_ = kHammerBase;
  next_region_ = kSprayBase;
}

TranslationContext& Attacker::ctx() { return sim_.kernel().process(pid_).ctx; }

VirtAddr Attacker::page_at(Ppn target) {
  if (auto it = placed_.find(target); it != placed_.end() && frame_of(it->second) == target) return it->second;
  if (next_page_ >= kHammerBase + kHammerLength) throw ScenarioError("attacker page window exhausted");
  const VirtAddr va = next_page_;
  next_page_ += kPageSize;
  Kernel& k = sim_.kernel();
  const Ppn src = k.demand_page(ctx(), va);
  if (src != target) k.place_page_exact(target, PageRole::User, src);
  placed_[target] = va;
  return va;
}

VirtAddr Attacker::page_in_row(RowId row, unsigned slot) { return page_at(frame_in_row(sim_.dram(), row, slot)); }

std::vector<VirtAddr> Attacker::spray_tables(std::size_t count, unsigned touch) {
  std::vector<VirtAddr> regions;
  if (count == 0) return regions;
  VmaSpec spec;
  spec.start = next_region_;
  spec.length = count * kHugeSize;
  const VirtAddr base = sim_.kernel().mmap(pid_, spec);
  next_region_ = base + spec.length + kHugeSize;
  for (std::size_t i = 0; i < count; ++i) {
    const VirtAddr region = base + i * kHugeSize;
    for (unsigned j = 0; j < std::max(1u, touch); ++j) sim_.kernel().demand_page(ctx(), region + j * kPageSize);
    regions.push_back(region);
  }
  return regions;
}

Ppn Attacker::table_of(VirtAddr region) {
  auto leaf = sim_.kernel().leaf_of(pid_, region);
  if (!leaf || leaf->pte.level != 1) throw ScenarioError("region has no L1PT");
  return leaf->table_ppn;
}

void Attacker::place_table(VirtAddr region, Ppn target) {
  sim_.kernel().place_page_exact(target, PageRole::L1pt, table_of(region));
}

Ppn Attacker::frame_of(VirtAddr va) {
  auto leaf = sim_.kernel().leaf_of(pid_, va);
  if (!leaf || !leaf->entry.present) throw ScenarioError("attacker address not mapped");
  return leaf->entry.ppn + (leaf->pte.level == 2 ? (va & (kHugeSize - 1)) >> kPageShift : 0);
}

void Attacker::clflush(VirtAddr va) {
  sim_.mmu().data_cache_flush(page_base(frame_of(va)) + (va & (kPageSize - 1)));
  sim_.clock().now += costs_.flush;
}

void Attacker::invlpg(VirtAddr va) {
  sim_.mmu().tlb_flush(ctx(), va);
  sim_.clock().now += costs_.flush;
}

void Attacker::flush_leaf_pte(VirtAddr va) {
  auto leaf = sim_.kernel().leaf_of(pid_, va);
  if (!leaf) throw ScenarioError("attacker address has no leaf entry");
  sim_.mmu().pte_cache_flush(leaf->pte.pa);
  sim_.clock().now += costs_.flush;
}

void Attacker::load(VirtAddr va) {
  AccessResult r = sim_.mmu().access_memory(ctx(), va, AccessKind::Read, true);
  if (!r.ok) throw ScenarioError("attacker load faulted without resolution");
}

namespace {

std::vector<std::size_t> access_order(const HammerPattern& p) {
  std::vector<std::size_t> idx(p.rows.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  if (p.order == AccessOrder::Reverse) std::reverse(idx.begin(), idx.end());
  if (p.order == AccessOrder::Shuffled) {
    std::mt19937_64 rng(p.order_seed);
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
  }
  return idx;
}

HammerReport hammer_loop(Simulation& sim, Nanos duration, std::uint64_t budget,
                         const std::function<void()>& body) {
  HammerReport rep;
  const std::size_t flips0 = sim.flip_log().size();
  const std::uint64_t pt0 = sim.flips_pt();
  const std::uint64_t act0 = sim.dram().activations();
  const Nanos t0 = sim.now();
  std::function<bool()> stop;
  if (budget) stop = [&] { return sim.dram().activations() - act0 >= budget; };
  rep.iterations = sim.run_loop(t0 + duration, body, stop);
  rep.flips.assign(sim.flip_log().begin() + static_cast<std::ptrdiff_t>(flips0), sim.flip_log().end());
  rep.flips_pt = sim.flips_pt() - pt0;
  rep.activations = sim.dram().activations() - act0;
  rep.elapsed = sim.now() - t0;
  if (!rep.flips.empty()) rep.first_flip = rep.flips.front().time;
  return rep;
}

}  // namespace

HammerReport run_hammer(Simulation& sim, Attacker& attacker, const HammerPattern& pattern,
                        const std::vector<VirtAddr>& vas) {
  pattern.validate();
  if (vas.size() != pattern.rows.size()) throw ConfigError("pattern: one address per aggressor row");
  const std::vector<std::size_t> order = access_order(pattern);
  return hammer_loop(sim, pattern.duration, pattern.activation_budget, [&] {
    for (std::size_t i : order) {
      attacker.clflush(vas[i]);
      attacker.load(vas[i]);
    }
  });
}

HammerReport run_hammer(Simulation& sim, Attacker& attacker, const HammerPattern& pattern) {
  pattern.validate();
  std::vector<VirtAddr> vas;
  for (std::uint32_t r : pattern.rows) vas.push_back(attacker.page_in_row({pattern.bank, r}, 0));
  return run_hammer(sim, attacker, pattern, vas);
}

std::vector<VictimSlot> find_vulnerable_rows(const Dram& dram, std::size_t count, std::uint64_t seed,
                                             std::uint32_t min_row, std::uint32_t margin,
                                             std::uint32_t separation, std::uint64_t skip_bytes) {
  std::vector<VictimSlot> out;
  if (count == 0) return out;
  const DramConfig& c = dram.config();
  std::vector<RowId> candidates;
  for (std::uint32_t b = 0; b < c.banks(); ++b)
    for (std::uint32_t r = min_row; r + margin < c.rows_per_bank(); ++r) candidates.push_back({b, r});
  std::mt19937_64 rng(seed);
  for (std::size_t i = candidates.size(); i > 1; --i) std::swap(candidates[i - 1], candidates[rng() % i]);

  const std::uint64_t slot_bytes = std::min<std::uint64_t>(c.row_size(), kPageSize);
  for (RowId row : candidates) {
    bool close = false;
    for (const VictimSlot& v : out)
      if (v.row.bank == row.bank && (v.row.row > row.row ? v.row.row - row.row : row.row - v.row.row) < separation)
        close = true;
    if (close) continue;
    for (const FlippableCell& cell : dram.row_state(row).flippable_cells) {
      if (!cell.to_one || cell.offset % slot_bytes < skip_bytes) continue;
      const unsigned slot = static_cast<unsigned>(cell.offset / slot_bytes);
      out.push_back({row, slot, frame_in_row(dram, row, slot)});
      break;
    }
    if (out.size() == count) return out;
  }
  throw ScenarioError("not enough vulnerable rows: found " + std::to_string(out.size()) + " of " +
                      std::to_string(count));
}

namespace {

using Shadow = std::array<std::uint64_t, 512>;

Shadow snapshot_table(Dram& dram, Ppn ppn) {
  Shadow s{};
  for (unsigned i = 0; i < 512; ++i) s[i] = dram.read_u64(page_base(ppn) + 8ULL * i) & ~PageTableEntry::kRsrv51;
  return s;
}

struct Placement {
  VictimSlot victim;
  Ppn table = 0;
  Shadow shadow{};
  std::vector<VirtAddr> aggressors;
};

// Lets the freshly placed pages be picked up by the defense timer.
void settle(Simulation& sim) {
  if (sim.softtrr()) sim.run_until(sim.next_defense_timer());
}

AttackReport finish(Simulation& sim, const char* name, const ScenarioOptions& opt, std::vector<Placement>& places,
                    std::uint64_t flips0, std::uint64_t pt0, Nanos t0, std::uint64_t iterations) {
  AttackReport rep;
  rep.scenario = name;
  rep.defense = defense_name(sim.config().defense);
  rep.m = opt.m;
  rep.victims = places.size();
  rep.flips_total = sim.flip_log().size() - flips0;
  rep.flips_pt = sim.flips_pt() - pt0;
  for (Placement& p : places) {
    const Shadow now = snapshot_table(sim.dram(), p.table);
    std::uint64_t bad = 0;
    for (unsigned i = 0; i < 512; ++i) bad += now[i] != p.shadow[i];
    rep.corrupted_ptes += bad;
    if (bad) ++rep.corrupted_victims;
  }
  if (SoftTrr* d = sim.softtrr()) {
    rep.rsvd_faults = d->counters().rsvd_faults;
    rep.refreshes = d->counters().refreshes;
  }
  rep.iterations = iterations;
  rep.elapsed = sim.now() - t0;
  rep.max_unrefreshed_hammer_ns = sim.max_unrefreshed_hammer_ns();
  return rep;
}

}  // namespace

AttackReport run_memory_spray(Simulation& sim, const ScenarioOptions& opt) {
  sim.load_defense();
  Attacker a(sim, opt.costs);
  std::vector<Placement> places;
  if (opt.m > 0) {
    const auto victims = find_vulnerable_rows(sim.dram(), opt.m, opt.seed, opt.min_row, 8, 12);
    const auto regions = a.spray_tables(opt.m);
    for (std::size_t i = 0; i < opt.m; ++i) {
      Placement p;
      p.victim = victims[i];
      a.place_table(regions[i], p.victim.ppn);
      p.table = p.victim.ppn;
      const RowId r = p.victim.row;
      for (std::uint32_t row : {r.row - 1, r.row + 1, r.row + 3}) p.aggressors.push_back(a.page_in_row({r.bank, row}, 0));
      places.push_back(std::move(p));
    }
  }
  settle(sim);
  for (Placement& p : places) p.shadow = snapshot_table(sim.dram(), p.table);

  const std::uint64_t flips0 = sim.flip_log().size(), pt0 = sim.flips_pt();
  const Nanos t0 = sim.now();
  std::uint64_t iterations = 0;
  for (Placement& p : places) {
    HammerPattern pat;
    pat.kind = PatternKind::Many;
    pat.bank = p.victim.row.bank;
    pat.rows = {p.victim.row.row - 1, p.victim.row.row + 1, p.victim.row.row + 3};
    pat.duration = opt.duration_per_victim;
    iterations += run_hammer(sim, a, pat, p.aggressors).iterations;
  }
  return finish(sim, "memory_spray", opt, places, flips0, pt0, t0, iterations);
}

AttackReport run_cattmew(Simulation& sim, const ScenarioOptions& opt) {
  sim.load_defense();
  Attacker a(sim, opt.costs);
  Kernel& k = sim.kernel();
  std::vector<Placement> places;
  if (opt.m > 0) {
    const auto victims = find_vulnerable_rows(sim.dram(), opt.m, opt.seed, opt.min_row, 8, 12);
    const auto regions = a.spray_tables(opt.m);
    VmaSpec buf;
    buf.length = 2 * opt.m * kPageSize;
    buf.populate = true;
    buf.device = true;
    const VirtAddr base = k.mmap(a.pid(), buf);
    for (std::size_t i = 0; i < opt.m; ++i) {
      Placement p;
      p.victim = victims[i];
      a.place_table(regions[i], p.victim.ppn);
      p.table = p.victim.ppn;
      const RowId r = p.victim.row;
      std::size_t j = 0;
      for (std::uint32_t row : {r.row - 1, r.row + 1}) {
        const VirtAddr va = base + (2 * i + j++) * kPageSize;
        k.place_page_exact(frame_in_row(sim.dram(), {r.bank, row}, 0), PageRole::User, a.frame_of(va));
        p.aggressors.push_back(va);
      }
      places.push_back(std::move(p));
    }
  }
  settle(sim);
  for (Placement& p : places) p.shadow = snapshot_table(sim.dram(), p.table);

  const std::uint64_t flips0 = sim.flip_log().size(), pt0 = sim.flips_pt();
  const Nanos t0 = sim.now();
  std::uint64_t iterations = 0;
  for (Placement& p : places) {
    HammerPattern pat;
    pat.kind = PatternKind::Double;
    pat.bank = p.victim.row.bank;
    pat.rows = {p.victim.row.row - 1, p.victim.row.row + 1};
    pat.duration = opt.duration_per_victim;
    iterations += run_hammer(sim, a, pat, p.aggressors).iterations;
  }
  return finish(sim, "cattmew", opt, places, flips0, pt0, t0, iterations);
}

AttackReport run_pthammer(Simulation& sim, const ScenarioOptions& opt) {
  sim.load_defense();
  Attacker a(sim, opt.costs);
  std::vector<Placement> places;
  if (opt.m > 0) {
    const auto victims = find_vulnerable_rows(sim.dram(), opt.m, opt.seed, opt.min_row, 8, 12);
    const auto regions = a.spray_tables(3 * opt.m, 1);
    for (std::size_t i = 0; i < opt.m; ++i) {
      Placement p;
      p.victim = victims[i];
      const RowId r = p.victim.row;
      a.place_table(regions[3 * i], p.victim.ppn);
      a.place_table(regions[3 * i + 1], frame_in_row(sim.dram(), {r.bank, r.row - 1}, 0));
      a.place_table(regions[3 * i + 2], frame_in_row(sim.dram(), {r.bank, r.row + 1}, 0));
      p.table = p.victim.ppn;
      p.aggressors = {regions[3 * i + 1], regions[3 * i + 2]};
      places.push_back(std::move(p));
    }
  }
  settle(sim);
  for (Placement& p : places) p.shadow = snapshot_table(sim.dram(), p.table);

  const std::uint64_t flips0 = sim.flip_log().size(), pt0 = sim.flips_pt();
  const Nanos t0 = sim.now();
  std::uint64_t iterations = 0;
  for (Placement& p : places) {
    const std::vector<VirtAddr> vas = p.aggressors;
    // Each load walks the page table; only the flushed L1PTE misses in the
    // cache, so the walk activates the aggressor L1PT row.
    HammerReport rep = hammer_loop(sim, opt.duration_per_victim, 0, [&] {
      for (VirtAddr va : vas) {
        a.invlpg(va);
        a.flush_leaf_pte(va);
        a.load(va);
      }
    });
    iterations += rep.iterations;
  }
  return finish(sim, "pthammer", opt, places, flips0, pt0, t0, iterations);
}

AttackReport run_attack(Simulation& sim, ScenarioKind kind, const ScenarioOptions& opt) {
  switch (kind) {
    case ScenarioKind::MemorySpray: return run_memory_spray(sim, opt);
    case ScenarioKind::Cattmew: return run_cattmew(sim, opt);
    case ScenarioKind::PtHammer: return run_pthammer(sim, opt);
  }
  throw ConfigError("unknown scenario");
}

FuzzArena build_fuzz_arena(Simulation& sim, Attacker& attacker, std::uint32_t bank, std::uint32_t first_row,
                           std::uint32_t rows) {
  if (sim.dram().config().row_size() < 2 * kPageSize)
    throw ScenarioError("fuzz arena needs rows of at least two pages");
  if (first_row + rows > sim.dram().config().rows_per_bank() || bank >= sim.dram().config().banks())
    throw ScenarioError("fuzz arena outside the DRAM geometry");
  FuzzArena arena{bank, first_row, rows, {}};
  const auto regions = attacker.spray_tables(rows, 1);
  for (std::uint32_t i = 0; i < rows; ++i) {
    const RowId r{bank, first_row + i};
    attacker.place_table(regions[i], frame_in_row(sim.dram(), r, 1));
    arena.page_by_row[r.row] = attacker.page_in_row(r, 0);
  }
  return arena;
}

HammerPattern sample_pattern(std::uint64_t seed, const FuzzOptions& opt) {
  std::mt19937_64 rng(seed);
  auto uniform = [&](std::uint64_t lo, std::uint64_t hi) { return lo + rng() % (hi - lo + 1); };
  HammerPattern p;
  p.bank = opt.bank;
  const unsigned n = static_cast<unsigned>(uniform(opt.min_n, opt.max_n));
  unsigned spacing = static_cast<unsigned>(uniform(1, std::max(1u, opt.max_spacing)));
  while (spacing > 1 && (n - 1) * spacing + 1 > opt.arena_rows) --spacing;
  const std::uint32_t span = (n - 1) * spacing + 1;
  if (span > opt.arena_rows) throw ConfigError("fuzz: arena too small for the pattern size");
  const std::uint32_t start = opt.first_row + static_cast<std::uint32_t>(uniform(0, opt.arena_rows - span));
  for (unsigned i = 0; i < n; ++i) p.rows.push_back(start + i * spacing);
  if (n == 1)
    p.kind = PatternKind::OneLocation;
  else if (n == 2)
    p.kind = spacing == 2 ? PatternKind::Double : PatternKind::Single;
  else
    p.kind = PatternKind::Many;
  p.order = static_cast<AccessOrder>(uniform(0, 2));
  p.order_seed = rng();
  p.duration = uniform(opt.min_duration / kMicro, opt.max_duration / kMicro) * kMicro;
  return p;
}

FuzzTrial run_fuzz_trial(const SimConfig& config, const FuzzOptions& opt, const HammerPattern& pattern,
                         std::size_t index) {
  Simulation sim(config);
  Attacker a(sim);
  FuzzArena arena = build_fuzz_arena(sim, a, opt.bank, opt.first_row, opt.arena_rows);
  sim.load_defense();
  std::vector<VirtAddr> vas;
  for (std::uint32_t r : pattern.rows) {
    auto it = arena.page_by_row.find(r);
    if (it == arena.page_by_row.end()) throw ConfigError("fuzz: pattern row outside the arena");
    vas.push_back(it->second);
  }
  HammerReport rep = run_hammer(sim, a, pattern, vas);
  FuzzTrial t;
  t.index = index;
  t.pattern = pattern;
  t.flips_total = rep.flips.size();
  t.flips_pt = rep.flips_pt;
  if (SoftTrr* d = sim.softtrr()) {
    t.rsvd_faults = d->counters().rsvd_faults;
    t.refreshes = d->counters().refreshes;
  }
  t.max_unrefreshed_hammer_ns = sim.max_unrefreshed_hammer_ns();
  return t;
}

FuzzReport fuzz_patterns(const SimConfig& config, const FuzzOptions& opt) {
  FuzzReport rep;
  rep.defense = defense_name(config.defense);
  std::mt19937_64 seeds(opt.seed);
  for (std::size_t i = 0; i < opt.budget; ++i) {
    const HammerPattern p = sample_pattern(seeds(), opt);
    FuzzTrial t = run_fuzz_trial(config, opt, p, i);
    ++rep.trials;
    rep.flips_total += t.flips_total;
    rep.flips_pt += t.flips_pt;
    rep.rsvd_faults += t.rsvd_faults;
    rep.refreshes += t.refreshes;
    rep.max_unrefreshed_hammer_ns = std::max(rep.max_unrefreshed_hammer_ns, t.max_unrefreshed_hammer_ns);
    if (t.flips_total > 0) {
      const bool many = p.rows.size() >= 10;
      if (many && !rep.first_many_sided) rep.first_many_sided = i;
      rep.flipping.push_back(std::move(t));
      if (many && opt.stop_at_first_many) break;
    }
  }
  return rep;
}

}  // namespace trrsim
