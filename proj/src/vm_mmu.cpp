#include "trrsim/vm_mmu.hpp"

namespace trrsim {

std::uint64_t PageTableEntry::encode() const {
  std::uint64_t raw = (ppn << kPageShift) & kFrameMask;
  if (present) raw |= kPresent;
  if (writable) raw |= kWritable;
  if (user) raw |= kUser;
  if (huge) raw |= kHuge;
  if (rsrv51) raw |= kRsrv51;
  return raw;
}

PageTableEntry PageTableEntry::decode(std::uint64_t raw) {
  PageTableEntry e;
  e.present = raw & kPresent;
  e.writable = raw & kWritable;
  e.user = raw & kUser;
  e.huge = raw & kHuge;
  e.rsrv51 = raw & kRsrv51;
  e.ppn = (raw & kFrameMask) >> kPageShift;
  return e;
}

std::uint32_t FaultErrorCode::bits() const {
  return (p ? 1u : 0u) | (wr ? 2u : 0u) | (us ? 4u : 0u) | (rsvd ? 8u : 0u) | (id ? 16u : 0u) |
         (pk ? 32u : 0u) | (sgx ? 0x8000u : 0u);
}

bool canonical_user_va(VirtAddr va) { return va < (1ULL << 47); }

namespace {

unsigned table_index(VirtAddr va, int level) {
  return static_cast<unsigned>((va >> (kPageShift + 9 * (level - 1))) & 511);
}

FaultErrorCode code_for(AccessKind access, bool user) {
  FaultErrorCode c;
  c.wr = access == AccessKind::Write;
  c.us = user;
  c.id = access == AccessKind::Fetch;
  return c;
}

}  // namespace

Mmu::Mmu(Dram& dram, Clock& clock, MmuConfig config) : dram_(dram), clock_(clock), config_(config) {}

PageTableEntry Mmu::read_pte(PhysAddr pa, Translation& t) {
  ++t.table_reads;
  const PhysAddr line = line_of(pa);
  if (pte_cache_.count(line)) {
    clock_.now += config_.cache_hit_latency;
  } else {
    AccessOutcome o = dram_.access(pa, clock_.now, Origin::User);
    if (o.cls != LatencyClass::Hit) ++t.table_activations;
    clock_.now += o.latency;
    pte_cache_.insert(line);
  }
  return PageTableEntry::decode(dram_.read_u64(pa));
}

Translation Mmu::translate(TranslationContext& ctx, VirtAddr va, AccessKind access, bool user) {
  if (!canonical_user_va(va)) throw AddressError("virtual address not canonical for 4-level paging");
  Translation t;
  t.fault.va = va;

  auto permitted = [&](bool writable, bool user_ok) {
    if (access == AccessKind::Write && !writable) return false;
    if (user && !user_ok) return false;
    return true;
  };
  auto permission_fault = [&] {
    t.fault.code = code_for(access, user);
    t.fault.code.p = true;
  };

  const TlbEntry* hit = nullptr;
  PhysAddr offset = 0;
  if (auto it = ctx.tlb_4k.find(va >> kPageShift); it != ctx.tlb_4k.end()) {
    hit = &it->second;
    offset = va & (kPageSize - 1);
  } else if (auto it2 = ctx.tlb_2m.find(va >> kHugeShift); it2 != ctx.tlb_2m.end()) {
    hit = &it2->second;
    offset = va & (kHugeSize - 1);
  }
  if (hit) {
    if (!permitted(hit->writable, hit->user)) {
      permission_fault();
      return t;
    }
    t.ok = true;
    t.pa = page_base(hit->ppn) + offset;
    return t;
  }

  Ppn table = ctx.root_ppn;
  bool writable = true;
  bool user_ok = true;
  for (int level = 4; level >= 1; --level) {
    const PhysAddr pte_pa = page_base(table) + 8ULL * table_index(va, level);
    PageTableEntry e = read_pte(pte_pa, t);
    if (!e.present) {
      t.fault.code = code_for(access, user);
      return t;
    }
    writable = writable && e.writable;
    user_ok = user_ok && e.user;
    const bool leaf = level == 1 || (level == 2 && e.huge);
    if (!leaf) {
      table = e.ppn;
      continue;
    }
    if (e.rsrv51) {
      t.fault.code = code_for(access, user);
      t.fault.code.p = true;
      t.fault.code.rsvd = true;
      return t;
    }
    if (!permitted(writable, user_ok)) {
      permission_fault();
      return t;
    }
    TlbEntry entry{e.ppn, level, writable, user_ok};
    if (level == 1) {
      ctx.tlb_4k[va >> kPageShift] = entry;
      t.pa = page_base(e.ppn) + (va & (kPageSize - 1));
    } else {
      ctx.tlb_2m[va >> kHugeShift] = entry;
      t.pa = page_base(e.ppn) + (va & (kHugeSize - 1));
    }
    t.ok = true;
    return t;
  }
  return t;  // unreachable: level 1 is always a leaf
}

AccessResult Mmu::access_memory(TranslationContext& ctx, VirtAddr va, AccessKind access, bool user,
                                std::uint8_t write_value) {
  AccessResult r;
  Translation t = translate(ctx, va, access, user);
  if (!t.ok) {
    ++faults_dispatched_;
    ++r.faults_handled;
    clock_.now += dram_.config().fault_service_time;
    const bool resolved = handler_ && handler_->handle_fault(t.fault, ctx);
    if (!resolved) {
      r.fault = t.fault;
      return r;
    }
    t = translate(ctx, va, access, user);
    if (!t.ok) {
      r.fault = t.fault;
      return r;
    }
  }
  r.pa = t.pa;
  if (data_cache_.count(line_of(t.pa))) {
    clock_.now += config_.cache_hit_latency;
  } else {
    AccessOutcome o = dram_.access(t.pa, clock_.now, Origin::User);
    clock_.now += o.latency;
    data_cache_.insert(line_of(t.pa));
  }
  if (access == AccessKind::Write) dram_.write_byte(t.pa, write_value);
  r.value = dram_.read_byte(t.pa);
  r.ok = true;
  return r;
}

void Mmu::set_rsrv(PteRef pte) {
  PageTableEntry e = PageTableEntry::decode(dram_.read_u64(pte.pa));
  const bool leaf = pte.level == 1 || (pte.level == 2 && e.huge);
  if (!leaf) throw ContractError("rsrv bit may only be armed on a leaf entry");
  dram_.write_u64(pte.pa, dram_.read_u64(pte.pa) | PageTableEntry::kRsrv51);
}

void Mmu::clear_rsrv(PteRef pte) {
  PageTableEntry e = PageTableEntry::decode(dram_.read_u64(pte.pa));
  const bool leaf = pte.level == 1 || (pte.level == 2 && e.huge);
  if (!leaf) throw ContractError("rsrv bit may only be cleared on a leaf entry");
  dram_.write_u64(pte.pa, dram_.read_u64(pte.pa) & ~PageTableEntry::kRsrv51);
}

bool Mmu::rsrv_set(PteRef pte) const {
  return (dram_.read_u64(pte.pa) & PageTableEntry::kRsrv51) != 0;
}

void Mmu::tlb_flush(TranslationContext& ctx, VirtAddr va) {
  ctx.tlb_4k.erase(va >> kPageShift);
  ctx.tlb_2m.erase(va >> kHugeShift);
}

void Mmu::tlb_flush_all(TranslationContext& ctx) {
  ctx.tlb_4k.clear();
  ctx.tlb_2m.clear();
}

std::optional<LeafInfo> Mmu::lookup_leaf(const TranslationContext& ctx, VirtAddr va) const {
  if (!canonical_user_va(va)) return std::nullopt;
  Ppn table = ctx.root_ppn;
  for (int level = 4; level >= 1; --level) {
    const PhysAddr pte_pa = page_base(table) + 8ULL * table_index(va, level);
    PageTableEntry e = PageTableEntry::decode(dram_.read_u64(pte_pa));
    const bool leaf = level == 1 || (level == 2 && e.huge);
    if (leaf) return LeafInfo{{pte_pa, level}, e, table};
    if (!e.present) return std::nullopt;
    table = e.ppn;
  }
  return std::nullopt;
}

}  // namespace trrsim
