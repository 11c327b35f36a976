#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "trrsim/common.hpp"
#include "trrsim/dram.hpp"
#include "trrsim/os_kernel.hpp"
#include "trrsim/vm_mmu.hpp"

namespace trrsim {

struct DefenseParams {
  Nanos timer_inr = 1 * kMilli;
  unsigned count_limit = 2;
  unsigned max_distance = 6;
  std::size_t ring_capacity = 1024;
  std::uint64_t tree_node_bytes = 64;
  std::uint64_t ring_entry_bytes = 24;

  Nanos threshold() const { return timer_inr * (count_limit - 1); }
  // Throws ConfigError naming the violated constraint.
  void validate(const DramConfig& dram) const;
};

struct BankRecord {
  std::uint32_t bank = 0;
  std::uint32_t pt_count = 0;
  std::uint32_t leak_count = 0;
  bool operator==(const BankRecord&) const = default;
};

// row index -> records sorted by bank
using PtRowMap = std::map<std::uint32_t, std::vector<BankRecord>>;

struct RingEntry {
  PteRef pte;
  VirtAddr va = 0;
  Pid pid = 0;
  Ppn ppn = 0;
};

// Circular PTE buffer that grows by allocating a 4x larger ring once the
// active one reaches 80% occupancy. Older rings drain first.
class PteRing {
 public:
  explicit PteRing(std::size_t capacity = 1024);

  void push(const RingEntry& e);
  std::optional<RingEntry> pop();
  std::size_t size() const;
  bool empty() const { return size() == 0; }
  std::size_t capacity() const { return rings_.back().cap; }
  std::size_t allocated() const;
  std::size_t rings() const { return rings_.size(); }
  std::uint64_t growths() const { return growths_; }
  std::uint64_t pushed() const { return pushed_; }
  std::uint64_t popped() const { return popped_; }

 private:
  struct Ring {
    std::size_t cap = 0;
    std::vector<RingEntry> slots;  // cap + 1 slots: head == tail means empty
    std::size_t head = 0;
    std::size_t tail = 0;
    std::size_t size() const { return (tail + slots.size() - head) % slots.size(); }
  };
  static Ring make(std::size_t cap);

  std::vector<Ring> rings_;
  std::uint64_t growths_ = 0;
  std::uint64_t pushed_ = 0;
  std::uint64_t popped_ = 0;
};

struct CollectStats {
  std::size_t pt_pages = 0;
  std::size_t adj_pages = 0;
  std::size_t row_nodes = 0;
};

struct ArmStats {
  std::size_t from_ring = 0;
  std::size_t from_adj = 0;
  std::size_t stale = 0;
};

struct RefreshStats {
  std::size_t rows = 0;
};

struct Footprint {
  std::size_t pt_nodes = 0;
  std::size_t adj_nodes = 0;
  std::size_t row_nodes = 0;
  std::size_t ring_capacity = 0;
  std::uint64_t bytes = 0;
};

enum class DefenseEventKind { Fault, Arm, Refresh, Grow };

struct DefenseEvent {
  DefenseEventKind kind = DefenseEventKind::Fault;
  Nanos time = 0;
  std::uint64_t value = 0;  // ppn for faults/arms, packed (bank,row) for refreshes, capacity for growth
};

struct DefenseCounters {
  std::uint64_t rsvd_faults = 0;
  std::uint64_t refreshes = 0;
  std::uint64_t leak_events = 0;
  std::uint64_t armed_ptes = 0;
  std::uint64_t anomalies = 0;
};

class SoftTrr {
 public:
  SoftTrr(Dram& dram, Mmu& mmu, Kernel& kernel, Clock& clock, DefenseParams params);
  ~SoftTrr();
  SoftTrr(const SoftTrr&) = delete;
  SoftTrr& operator=(const SoftTrr&) = delete;

  // Installs the kernel hooks, collects existing page tables and arms.
  void load();

  CollectStats collect_initial();
  void on_pte_alloc(Ppn ppn);
  void on_free_pages(Ppn ppn);
  void on_unmap_page(Ppn ppn);
  ArmStats on_timer(Nanos now);
  // Returns nullopt for faults that are not ours.
  std::optional<bool> on_rsvd_fault(const Fault& fault, TranslationContext& ctx);
  RefreshStats refresh_pt_rows(const std::vector<RowId>& rows);
  void on_new_user_page(Ppn ppn, PteRef leaf, Pid pid, VirtAddr va);

  Footprint footprint() const;

  const DefenseParams& params() const { return params_; }
  const std::set<Ppn>& pt_set() const { return pt_; }
  const PtRowMap& pt_rows() const { return rows_; }
  const std::map<Ppn, bool>& adj_set() const { return adj_; }  // value: awaiting arming
  std::set<Ppn> adj_members() const;
  const PteRing& ring() const { return ring_; }
  const DefenseCounters& counters() const { return counters_; }
  bool protected_row(RowId row) const;
  std::vector<RowId> protected_rows() const;
  // Adjacency test against the current PT rows.
  bool is_adjacent(Ppn head) const;

  void set_event_sink(std::function<void(const DefenseEvent&)> sink) { sink_ = std::move(sink); }

 private:
  std::vector<RowId> page_rows(Ppn head) const;
  std::vector<RowId> pt_rows_of(Ppn l1pt) const;
  // Rows of the page and of the L1PTs mapping it.
  std::vector<RowId> adjacency_rows(Ppn head) const;
  std::vector<RowId> neighbors(RowId r) const;
  BankRecord* record(RowId r);
  const BankRecord* record(RowId r) const;
  std::vector<RowId> leak_targets(Ppn head, std::optional<Ppn> leaf_table) const;
  std::vector<Ppn> pages_in_row(RowId r) const;
  Ppn head_of(Ppn ppn) const;
  void reevaluate(const std::set<Ppn>& candidates);
  std::set<Ppn> candidates_near_pt(Ppn l1pt) const;
  bool arm(const RingEntry& e);
  void emit(DefenseEventKind kind, std::uint64_t value);

  struct Guard {
    explicit Guard(bool& f);
    ~Guard() { flag = false; }
    bool& flag;
  };

  Dram& dram_;
  Mmu& mmu_;
  Kernel& kernel_;
  Clock& clock_;
  DefenseParams params_;
  bool loaded_ = false;
  bool busy_ = false;

  std::set<Ppn> pt_;
  std::map<RowId, std::set<Ppn>> pt_by_row_;
  PtRowMap rows_;
  std::map<Ppn, bool> adj_;
  PteRing ring_;
  DefenseCounters counters_;
  std::function<void(const DefenseEvent&)> sink_;
};

}  // namespace trrsim
