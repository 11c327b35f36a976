#include "doctest.h"
#include "oracles.hpp"
#include "trrsim/attacks.hpp"
#include "trrsim/sim.hpp"

using namespace trrsim;

namespace {

struct Outcome {
  std::vector<FlipEvent> flips;
  std::uint64_t activations = 0;
  Nanos now = 0;
  DefenseCounters counters;
  std::vector<Sample> samples;
  std::vector<ActivationRecord> log;
  std::uint64_t bulk = 0;
};

Outcome hammer(bool ff, DefenseMode mode, Nanos duration, bool keep_log = false) {
  SimConfig c;
  c.fast_forward = ff;
  c.defense = mode;
  c.dram.flip_density = 0.5;
  Simulation sim(c);
  Outcome o;
  if (keep_log) sim.dram().set_activation_log(&o.log);
  Attacker a(sim);
  const VirtAddr region = a.spray_tables(1).front();
  a.place_table(region, frame_in_row(sim.dram(), {0, 301}, 0));
  sim.load_defense();
  HammerPattern p;
  p.kind = PatternKind::Double;
  p.rows = {300, 302};
  p.duration = duration;
  run_hammer(sim, a, p);
  o.flips = sim.flip_log();
  o.activations = sim.dram().activations();
  o.now = sim.now();
  if (sim.softtrr()) o.counters = sim.softtrr()->counters();
  o.samples = sim.samples();
  o.bulk = sim.bulk_iterations();
  sim.dram().set_activation_log(nullptr);
  return o;
}

void same(const Outcome& a, const Outcome& b) {
  REQUIRE(a.flips.size() == b.flips.size());
  for (std::size_t i = 0; i < a.flips.size(); ++i) {
    CHECK(a.flips[i].time == b.flips[i].time);
    CHECK(a.flips[i].pa == b.flips[i].pa);
    CHECK(a.flips[i].bit == b.flips[i].bit);
  }
  CHECK(a.activations == b.activations);
  CHECK(a.now == b.now);
  CHECK(a.counters.rsvd_faults == b.counters.rsvd_faults);
  CHECK(a.counters.refreshes == b.counters.refreshes);
  CHECK(a.samples == b.samples);
}

}  // namespace

TEST_CASE("fast-forward reproduces the step-by-step run") {
  SUBCASE("undefended") {
    const Outcome slow = hammer(false, DefenseMode::None, 70 * kMilli);
    const Outcome fast = hammer(true, DefenseMode::None, 70 * kMilli);
    CHECK(fast.bulk > 0);
    CHECK_FALSE(slow.flips.empty());
    same(slow, fast);
  }
  SUBCASE("softtrr") {
    const Outcome slow = hammer(false, DefenseMode::SoftTrr, 20 * kMilli);
    const Outcome fast = hammer(true, DefenseMode::SoftTrr, 20 * kMilli);
    CHECK(fast.counters.rsvd_faults > 0);
    same(slow, fast);
  }
}

TEST_CASE("flip times match a replay of the full activation log") {
  const Outcome o = hammer(true, DefenseMode::None, 30 * kMilli, true);
  REQUIRE_FALSE(o.flips.empty());
  SimConfig c;
  c.dram.flip_density = 0.5;
  Dram reference(c.dram);  // same seeded thresholds
  const oracle::Replay ref = oracle::replay(reference, o.log);
  for (const FlipEvent& f : o.flips) {
    REQUIRE(ref.first_cross.count(f.row));
    CHECK(ref.first_cross.at(f.row) == f.time);
  }
}

TEST_CASE("events fire in time order at iteration boundaries") {
  SimConfig c;
  c.defense = DefenseMode::SoftTrr;
  Simulation sim(c);
  sim.load_defense();
  sim.run_until(10 * kMilli);
  REQUIRE(sim.samples().size() == 10);
  for (std::size_t i = 0; i < 10; ++i) CHECK(sim.samples()[i].sim_ns == (i + 1) * kMilli);
  CHECK(sim.next_defense_timer() == 11 * kMilli);
}

TEST_CASE("a loop body that does not advance time is an error") {
  Simulation sim(SimConfig{});
  CHECK_THROWS_AS(sim.run_loop(1000, [] {}), InvariantError);
}

TEST_CASE("auto refresh bounds the undefended hammer span") {
  SimConfig c;
  c.sample_interval = 0;
  Simulation sim(c);
  Attacker a(sim);
  HammerPattern p;
  p.kind = PatternKind::Double;
  p.rows = {400, 402};
  p.duration = 200 * kMilli;
  run_hammer(sim, a, p);
  CHECK(sim.dram().hammer_span({0, 401}) < c.dram.refresh_period);
  CHECK(sim.dram().hammer_span({0, 401}) > c.dram.refresh_period - 100 * kMicro);
}
