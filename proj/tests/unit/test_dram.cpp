#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "trrsim/dram.hpp"

using namespace trrsim;

namespace {

// A row in bank 0 carrying a 0->1 cell, far enough from the edges.
RowId row_with_to_one_cell(const Dram& dram) {
  for (std::uint32_t r = 16; r + 16 < dram.config().rows_per_bank(); ++r)
    for (const FlippableCell& c : dram.row_state({0, r}).flippable_cells)
      if (c.to_one) return {0, r};
  FAIL("no vulnerable row");
  return {};
}

}  // namespace

TEST_CASE("address mapping is a bijection") {
  Dram dram(DramConfig{});
  std::mt19937_64 rng(11);
  for (int i = 0; i < 20000; ++i) {
    const PhysAddr pa = rng() % dram.config().total_bytes();
    const DramAddress a = dram.map_address(pa);
    CHECK(dram.to_physical(a) == pa);
  }
  CHECK_THROWS_AS(dram.map_address(dram.config().total_bytes()), AddressError);
}

TEST_CASE("invalid geometries are rejected") {
  DramConfig c;
  c.bank_fns = {0x12000, 0x24000, 0x36000};  // dependent
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = DramConfig{};
  c.row_shift = 17;  // bank count no longer matches
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = DramConfig{};
  c.bank_fns = {0x10000, 0x20000, 0x40000};  // no bank bits in between
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = DramConfig{};
  c.weight_decay = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("a 4 KiB page sits in one row, a 2 MiB page spans many") {
  Dram dram(DramConfig{});
  CHECK(dram.footprint(0x123000, kPageSize).size() == 1);
  const auto rows = dram.footprint(0x200000, kHugeSize);
  // 2 MiB / 8 KiB rows = 256 (bank, row) pairs
  CHECK(rows.size() == kHugeSize / dram.config().row_size());
}

TEST_CASE("row buffer latency classes") {
  DramConfig c;
  Dram dram(c);
  const PhysAddr a = dram.to_physical({2, 10, 0});
  const PhysAddr b = dram.to_physical({2, 11, 0});
  CHECK(dram.access(a, 0).cls == LatencyClass::Closed);
  CHECK(dram.access(a + 64, 1000).cls == LatencyClass::Hit);
  const AccessOutcome o = dram.access(b, 2000);
  CHECK(o.cls == LatencyClass::Conflict);
  CHECK(o.latency == c.latency_conflict);
  // back to back activations in one bank wait for t_rc
  const AccessOutcome o2 = dram.access(a, 2000);
  CHECK(o2.latency == c.t_rc + c.latency_conflict);
}

TEST_CASE("disturbance matches a counter replay of the activation log") {
  DramConfig c;
  c.weight_decay = 0.7;
  Dram dram(c);
  std::vector<ActivationRecord> log;
  dram.set_activation_log(&log);
  std::mt19937_64 rng(5);
  Nanos t = 0;
  for (int i = 0; i < 30000; ++i) {
    const std::uint32_t bank = rng() % 2;
    const std::uint32_t row = 100 + rng() % 24;
    dram.activate({bank, row, 0}, t);
    t += 50;
  }
  const oracle::Replay ref = oracle::replay(dram, log);
  for (std::uint32_t bank = 0; bank < 2; ++bank) {
    for (std::uint32_t row = 90; row < 134; ++row) {
      const double got = static_cast<double>(dram.row_state({bank, row}).disturbance) / kUnit;
      auto it = ref.disturbance.find({bank, row});
      const double want = it == ref.disturbance.end() ? 0.0 : it->second;
      // fixed point rounding is at most half a unit step per activation
      CHECK(got == doctest::Approx(want).epsilon(1e-4));
    }
  }
}

TEST_CASE("double-sided flip happens exactly when the replayed count crosses") {
  DramConfig c;
  c.weight_decay = 1.0;
  Dram dram(c);
  const RowId v = row_with_to_one_cell(dram);
  std::vector<ActivationRecord> log;
  dram.set_activation_log(&log);
  std::vector<FlipEvent> flips;
  dram.set_flip_callback([&](const FlipEvent& e) { flips.push_back(e); });
  Nanos t = 0;
  while (flips.empty() && t < 10 * kMilli) {
    dram.activate({v.bank, v.row - 1, 0}, t);
    t += c.t_rc;
    dram.activate({v.bank, v.row + 1, 0}, t);
    t += c.t_rc;
  }
  REQUIRE_FALSE(flips.empty());
  CHECK(flips.front().row == v);
  const oracle::Replay ref = oracle::replay(dram, log);
  REQUIRE(ref.first_cross.count(v));
  CHECK(flips.front().time == ref.first_cross.at(v));
  // two aggressor activations per round, hc_first of them in total
  CHECK(flips.front().time == (c.hc_first - 1) * c.t_rc);
}

TEST_CASE("refresh recharges rows") {
  Dram dram(DramConfig{});
  for (int i = 0; i < 100; ++i) dram.activate({0, 50u + (i & 1) * 2, 0}, 50ULL * i);
  CHECK(dram.row_state({0, 51}).disturbance == 100 * kUnit);
  dram.refresh_row(0, 51, 10000);
  CHECK(dram.row_state({0, 51}).disturbance == 0);
  CHECK(dram.row_state({0, 51}).last_recharge == 10000);
  CHECK(dram.row_state({0, 53}).disturbance > 0);
  dram.auto_refresh_tick(20000);
  CHECK(dram.row_state({0, 53}).disturbance == 0);
}

TEST_CASE("hammer span only counts user activations") {
  Dram dram(DramConfig{});
  for (int i = 0; i < 10; ++i) dram.activate({0, 20u + (i & 1) * 2, 0}, 1000ULL * i, Origin::Kernel);
  CHECK(dram.hammer_span({0, 21}) == 0);
  for (int i = 0; i < 10; ++i) dram.activate({0, 20u + (i & 1) * 2, 0}, 20000 + 1000ULL * i, Origin::User);
  CHECK(dram.hammer_span({0, 21}) == 9000);
  dram.refresh_row(0, 21, 40000);
  CHECK(dram.hammer_span({0, 21}) == 9000);
}
