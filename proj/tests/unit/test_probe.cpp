#include "doctest.h"
#include "mappings.hpp"
#include "trrsim/gf2.hpp"
#include "trrsim/mapping_probe.hpp"

using namespace trrsim;

TEST_CASE("pair measurement separates same-bank rows from the rest") {
  Dram dram(DramConfig{});
  Clock clock;
  MappingProbe p(dram, clock);
  const PhysAddr a = dram.to_physical({3, 10, 0});
  CHECK(p.measure_pair(a, dram.to_physical({3, 11, 0})).conflict);
  CHECK_FALSE(p.measure_pair(a, dram.to_physical({4, 11, 0})).conflict);
  CHECK_FALSE(p.measure_pair(a, a + 64).conflict);
  CHECK(p.samples_taken() == 3);
  CHECK(clock.now > 0);
}

TEST_CASE("default mapping is recovered up to span") {
  Dram dram(DramConfig{});
  Clock clock;
  MappingProbe p(dram, clock);
  const ProbeResult r = p.recover_bank_functions(10000, {6, 25});
  CHECK(r.complete);
  CHECK(gf2::same_span(r.masks, dram.config().bank_fns));
  CHECK(r.samples <= 10000);
}

TEST_CASE("random mappings are recovered") {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 10; ++i) {
    const DramConfig c = mappings::random_mapping(rng);
    Dram dram(c);
    Clock clock;
    MappingProbe p(dram, clock, {.seed = static_cast<std::uint64_t>(i)});
    const ProbeResult r = p.recover_bank_functions(20000, {6, 23});
    INFO("mapping " << i);
    CHECK(gf2::same_span(r.masks, c.bank_fns));
  }
}

TEST_CASE("moderate timing noise is tolerated") {
  Dram dram(DramConfig{});
  Clock clock;
  MappingProbe p(dram, clock, {.seed = 4, .noise_sigma = 4.0});
  CHECK(gf2::same_span(p.recover_bank_functions(20000, {6, 25}).masks, dram.config().bank_fns));
}

TEST_CASE("a starved budget reports an incomplete result") {
  Dram dram(DramConfig{});
  Clock clock;
  MappingProbe p(dram, clock);
  const ProbeResult r = p.recover_bank_functions(20, {6, 25});
  CHECK_FALSE(r.complete);
  CHECK(r.samples <= 20);
}
