#pragma once

#include <cstdint>
#include <optional>
#include <unordered_map>
#include <unordered_set>

#include "trrsim/common.hpp"
#include "trrsim/dram.hpp"

namespace trrsim {

// Simulated time shared by every component of one simulation.
struct Clock {
  Nanos now = 0;
};

enum class AccessKind { Read, Write, Fetch };

// x86-64 PTE layout: P=bit0, RW=bit1, US=bit2, PS=bit7, frame in bits 12..50,
// and reserved bit 51 used for access tracing.
struct PageTableEntry {
  bool present = false;
  bool writable = false;
  bool user = false;
  bool huge = false;
  bool rsrv51 = false;
  Ppn ppn = 0;

  static constexpr std::uint64_t kPresent = 1ULL << 0;
  static constexpr std::uint64_t kWritable = 1ULL << 1;
  static constexpr std::uint64_t kUser = 1ULL << 2;
  static constexpr std::uint64_t kHuge = 1ULL << 7;
  static constexpr std::uint64_t kRsrv51 = 1ULL << 51;
  static constexpr std::uint64_t kFrameMask = ((1ULL << 51) - 1) & ~0xfffULL;

  std::uint64_t encode() const;
  static PageTableEntry decode(std::uint64_t raw);
};

// Page-fault error code bits (P, W/R, U/S, RSVD, I/D, PK, SGX).
struct FaultErrorCode {
  bool p = false;
  bool wr = false;
  bool us = false;
  bool rsvd = false;
  bool id = false;
  bool pk = false;   // never set by this simulator
  bool sgx = false;  // never set by this simulator

  std::uint32_t bits() const;
  bool operator==(const FaultErrorCode&) const = default;
};

struct Fault {
  FaultErrorCode code;
  VirtAddr va = 0;
};

// Reference to a page-table entry in physical memory. `level` is 1..4.
struct PteRef {
  PhysAddr pa = 0;
  int level = 1;
  bool operator==(const PteRef&) const = default;
};

struct TlbEntry {
  Ppn ppn = 0;  // frame of the 4 KiB page, or head frame of a 2 MiB page
  int level = 1;
  bool writable = false;
  bool user = false;
};

struct TranslationContext {
  Pid pid = 0;
  Ppn root_ppn = 0;
  std::unordered_map<std::uint64_t, TlbEntry> tlb_4k;  // key: va >> 12
  std::unordered_map<std::uint64_t, TlbEntry> tlb_2m;  // key: va >> 21
};

struct LeafInfo {
  PteRef pte;
  PageTableEntry entry;
  Ppn table_ppn = 0;  // page holding the leaf entry
};

struct Translation {
  bool ok = false;
  PhysAddr pa = 0;
  Fault fault;
  int table_reads = 0;      // PTE loads issued (cached or not)
  int table_activations = 0;
};

struct AccessResult {
  bool ok = false;
  std::uint8_t value = 0;
  PhysAddr pa = 0;
  std::optional<Fault> fault;  // set when the access aborted
  int faults_handled = 0;
};

class FaultHandler {
 public:
  virtual ~FaultHandler() = default;
  // Returns true when the fault was resolved and the access may retry.
  virtual bool handle_fault(const Fault& fault, TranslationContext& ctx) = 0;
};

struct MmuConfig {
  Nanos cache_hit_latency = 2;
};

bool canonical_user_va(VirtAddr va);

class Mmu {
 public:
  Mmu(Dram& dram, Clock& clock, MmuConfig config = {});

  Translation translate(TranslationContext& ctx, VirtAddr va, AccessKind access, bool user);
  AccessResult access_memory(TranslationContext& ctx, VirtAddr va, AccessKind access, bool user,
                             std::uint8_t write_value = 0);

  void set_rsrv(PteRef pte);
  void clear_rsrv(PteRef pte);
  bool rsrv_set(PteRef pte) const;

  void tlb_flush(TranslationContext& ctx, VirtAddr va);
  void tlb_flush_all(TranslationContext& ctx);
  void pte_cache_flush(PhysAddr pa) { pte_cache_.erase(line_of(pa)); }
  void data_cache_flush(PhysAddr pa) { data_cache_.erase(line_of(pa)); }
  bool pte_cached(PhysAddr pa) const { return pte_cache_.count(line_of(pa)) != 0; }
  bool data_cached(PhysAddr pa) const { return data_cache_.count(line_of(pa)) != 0; }
  // Marks a line resident without touching DRAM (kernel bookkeeping writes).
  void data_cache_fill(PhysAddr pa) { data_cache_.insert(line_of(pa)); }
  void pte_cache_fill(PhysAddr pa) { pte_cache_.insert(line_of(pa)); }

  // Kernel-side walk over backing memory; no DRAM activity, no TLB change.
  std::optional<LeafInfo> lookup_leaf(const TranslationContext& ctx, VirtAddr va) const;

  void set_fault_handler(FaultHandler* h) { handler_ = h; }
  Dram& dram() { return dram_; }
  Clock& clock() { return clock_; }

  std::uint64_t faults_dispatched() const { return faults_dispatched_; }

 private:
  PageTableEntry read_pte(PhysAddr pa, Translation& t);

  Dram& dram_;
  Clock& clock_;
  MmuConfig config_;
  FaultHandler* handler_ = nullptr;
  std::unordered_set<PhysAddr> pte_cache_;
  std::unordered_set<PhysAddr> data_cache_;
  std::uint64_t faults_dispatched_ = 0;
};

}  // namespace trrsim
