#include "doctest.h"
#include "oracles.hpp"
#include "trrsim/attacks.hpp"
#include "trrsim/sim.hpp"
#include "workload.hpp"

using namespace trrsim;

TEST_CASE("count_limit below two is rejected") {
  DefenseParams p;
  p.count_limit = 1;
  CHECK_THROWS_WITH_AS(p.validate(DramConfig{}), "defense.count_limit must be no less than 2", ConfigError);
  SimConfig c;
  c.defense = DefenseMode::SoftTrr;
  c.softtrr.count_limit = 1;
  CHECK_THROWS_AS(Simulation{c}, ConfigError);
}

TEST_CASE("threshold must stay below the time to flip") {
  DefenseParams p;
  p.timer_inr = 1 * kMilli;
  p.count_limit = 2000;
  CHECK_THROWS_AS(p.validate(DramConfig{}), ConfigError);
}

TEST_CASE("ring grows once, 4x, when crossing 80 percent") {
  PteRing ring(1024);
  for (std::size_t i = 0; i < 819; ++i) ring.push({{8 * i, 1}, i << 12, 1, i});
  CHECK(ring.growths() == 0);
  ring.push({{8 * 819, 1}, 819ULL << 12, 1, 819});
  CHECK(ring.growths() == 1);
  CHECK(ring.capacity() == 4096);
  for (std::size_t i = 820; i < 2000; ++i) ring.push({{8 * i, 1}, i << 12, 1, i});
  CHECK(ring.growths() == 1);
  for (std::size_t i = 0; i < 2000; ++i) {
    auto e = ring.pop();
    REQUIRE(e);
    CHECK(e->ppn == i);
  }
  CHECK_FALSE(ring.pop());
  CHECK(ring.pushed() == ring.popped());
}

TEST_CASE("incremental structures agree with a full rescan") {
  for (std::uint64_t seed : {1, 2, 3}) {
    Simulation sim(workload::small_config());
    sim.load_defense();
    workload::RandomKernel w(sim, seed);
    for (int i = 1; i <= 2000; ++i) {
      w.step();
      if (i % 50 == 0) {
        const auto ref = oracle::rescan(sim.dram(), sim.kernel(), sim.softtrr()->params().max_distance);
        const std::string diff = oracle::compare(*sim.softtrr(), ref);
        INFO("seed " << seed << " event " << i);
        REQUIRE(diff.empty());
      }
    }
    CHECK(w.moves() > 0);
  }
}

TEST_CASE("initial collection matches a rescan of a pre-existing system") {
  Simulation sim(workload::small_config());
  workload::RandomKernel w(sim, 9);
  for (int i = 0; i < 500; ++i) w.step();
  sim.load_defense();
  const auto ref = oracle::rescan(sim.dram(), sim.kernel(), 6);
  CHECK(oracle::compare(*sim.softtrr(), ref).empty());
}

namespace {

// One user page in the row just above a lone L1PT of another process.
struct Neighbors {
  Simulation sim{workload::small_config()};
  Attacker attacker{sim};
  RowId pt_row{1, 60};
  VirtAddr page = 0;
  Ppn table = 0;

  Neighbors() {
    const VirtAddr region = attacker.spray_tables(1).front();
    table = frame_in_row(sim.dram(), pt_row, 0);
    attacker.place_table(region, table);
    page = attacker.page_in_row({pt_row.bank, pt_row.row + 1}, 0);
    sim.load_defense();
  }
};

}  // namespace

TEST_CASE("an adjacent page is armed and its accesses are counted") {
  Neighbors n;
  SoftTrr& d = *n.sim.softtrr();
  CHECK(d.protected_row(n.pt_row));
  CHECK(d.adj_members().count(n.attacker.frame_of(n.page)));
  CHECK(d.counters().armed_ptes > 0);
  auto leaf = n.sim.kernel().leaf_of(n.attacker.pid(), n.page);
  CHECK(leaf->entry.rsrv51);

  n.attacker.load(n.page);
  CHECK(d.counters().rsvd_faults == 1);
  CHECK(d.counters().refreshes == 0);
  CHECK_FALSE(n.sim.kernel().leaf_of(n.attacker.pid(), n.page)->entry.rsrv51);
  // further accesses are free until the timer rearms
  n.attacker.clflush(n.page);
  n.attacker.load(n.page);
  CHECK(d.counters().rsvd_faults == 1);

  d.on_timer(n.sim.now());
  const Nanos before = n.sim.now();
  n.attacker.clflush(n.page);
  n.attacker.load(n.page);
  CHECK(d.counters().rsvd_faults == 2);
  CHECK(d.counters().refreshes == 1);
  CHECK(n.sim.dram().row_state(n.pt_row).last_recharge >= before);
}

TEST_CASE("refreshes are issued in ascending row order") {
  Neighbors n;
  SoftTrr& d = *n.sim.softtrr();
  std::vector<std::uint64_t> order;
  d.set_event_sink([&](const DefenseEvent& e) {
    if (e.kind == DefenseEventKind::Refresh) order.push_back(e.value);
  });
  d.refresh_pt_rows({{3, 9}, {1, 60}, {0, 70}, {1, 60}});
  CHECK(order == std::vector<std::uint64_t>{70, (1ULL << 32) | 60, (3ULL << 32) | 9});
}

TEST_CASE("pages far from every page table are never armed") {
  Neighbors n;
  const VirtAddr far = n.attacker.page_in_row({n.pt_row.bank, n.pt_row.row + 40}, 0);
  n.sim.softtrr()->on_timer(n.sim.now());
  CHECK_FALSE(n.sim.kernel().leaf_of(n.attacker.pid(), far)->entry.rsrv51);
  const std::uint64_t faults = n.sim.softtrr()->counters().rsvd_faults;
  for (int i = 0; i < 50; ++i) {
    n.attacker.clflush(far);
    n.attacker.load(far);
  }
  CHECK(n.sim.softtrr()->counters().rsvd_faults == faults);
}

TEST_CASE("footprint reflects structure sizes") {
  Neighbors n;
  const Footprint f = n.sim.softtrr()->footprint();
  CHECK(f.pt_nodes == n.sim.kernel().l1pt_pages().size());
  CHECK(f.ring_capacity == 1024);
  CHECK(f.bytes == (f.pt_nodes + f.adj_nodes + f.row_nodes) * 64 + 1024 * 24);
}
