#include "trrsim/os_kernel.hpp"

#include <algorithm>
#include <array>

namespace trrsim {

const char* role_name(PageRole role) {
  switch (role) {
    case PageRole::Free: return "free";
    case PageRole::Reserved: return "reserved";
    case PageRole::UpperTable: return "upper_table";
    case PageRole::L1pt: return "l1pt";
    case PageRole::User: return "user";
    case PageRole::Device: return "device";
  }
  return "?";
}

namespace {

constexpr std::uint64_t kTableEntryFlags =
    PageTableEntry::kPresent | PageTableEntry::kWritable | PageTableEntry::kUser;
constexpr VirtAddr kMmapBase = 0x10000000ULL;

unsigned table_index(VirtAddr va, int level) {
  return static_cast<unsigned>((va >> (kPageShift + 9 * (level - 1))) & 511);
}

VirtAddr align_down(VirtAddr v, std::uint64_t a) { return v & ~(a - 1); }

}  // namespace

Kernel::Kernel(Dram& dram, Mmu& mmu, Clock& clock, std::uint64_t reserved_low_pages)
    : dram_(dram), mmu_(mmu), clock_(clock) {
  const std::uint64_t pages = dram_.config().total_pages();
  frames_.resize(pages);
  for (Ppn p = 0; p < pages; ++p) {
    if (p < reserved_low_pages)
      frames_[p].role = PageRole::Reserved;
    else
      free_.insert(p);
  }
  mmu_.set_fault_handler(this);
}

Ppn Kernel::alloc_frame(PageRole role) {
  if (free_.empty()) throw OutOfMemory("no free physical pages");
  Ppn p = *free_.begin();
  return alloc_frame_at(p, role);
}

Ppn Kernel::alloc_frame_at(Ppn ppn, PageRole role) {
  if (!free_.erase(ppn)) throw ContractError("frame is not free");
  frames_[ppn] = FrameInfo{};
  frames_[ppn].role = role;
  alloc_log_.push_back({true, role, ppn});
  return ppn;
}

Ppn Kernel::alloc_huge_block() {
  for (Ppn head = 0; head + kPagesPerHuge <= frames_.size(); head += kPagesPerHuge) {
    bool ok = true;
    for (Ppn p = head; p < head + kPagesPerHuge && ok; ++p) ok = free_.count(p) != 0;
    if (ok) return head;
  }
  throw OutOfMemory("no free 2 MiB block");
}

void Kernel::release_frame(Ppn ppn) {
  alloc_log_.push_back({false, frames_[ppn].role, ppn});
  frames_[ppn] = FrameInfo{};
  rmap_.erase(ppn);
  free_.insert(ppn);
}

void Kernel::zero_frame(Ppn ppn) {
  static const std::array<std::uint8_t, kPageSize> zeros{};
  dram_.write_page(ppn, zeros);
}

Process& Kernel::process(Pid pid) {
  auto it = processes_.find(pid);
  if (it == processes_.end()) throw ContractError("unknown pid");
  return it->second;
}

const std::vector<Mapping>& Kernel::rmap(Ppn ppn) const {
  static const std::vector<Mapping> empty;
  auto it = rmap_.find(ppn);
  return it == rmap_.end() ? empty : it->second;
}

const VmaSpec* Kernel::find_vma(Pid pid, VirtAddr va) const {
  auto it = processes_.find(pid);
  if (it == processes_.end()) return nullptr;
  for (const VmaSpec& v : it->second.vmas)
    if (va >= v.start && va < v.start + v.length) return &v;
  return nullptr;
}

std::optional<LeafInfo> Kernel::leaf_of(Pid pid, VirtAddr va) {
  return mmu_.lookup_leaf(process(pid).ctx, va);
}

Pid Kernel::spawn_process(const std::vector<VmaSpec>& layout) {
  Pid pid = next_pid_++;
  Process p;
  p.pid = pid;
  p.ctx.pid = pid;
  p.ctx.root_ppn = alloc_frame(PageRole::UpperTable);
  zero_frame(p.ctx.root_ppn);
  processes_.emplace(pid, std::move(p));
  for (const VmaSpec& spec : layout) mmap(pid, spec);
  return pid;
}

VirtAddr Kernel::mmap(Pid pid, VmaSpec spec) {
  Process& p = process(pid);
  const std::uint64_t align = spec.huge ? kHugeSize : kPageSize;
  if (spec.length == 0 || spec.length % align) throw ContractError("VMA length must be a positive multiple of the page size");
  if (spec.start == 0) {
    VirtAddr end = kMmapBase;
    for (const VmaSpec& v : p.vmas) end = std::max(end, v.start + v.length);
    spec.start = align_down(end + kHugeSize - 1, kHugeSize);
  }
  if (spec.start % align) throw ContractError("VMA start misaligned");
  if (!canonical_user_va(spec.start) || !canonical_user_va(spec.start + spec.length - 1))
    throw AddressError("VMA outside the canonical user range");
  for (const VmaSpec& v : p.vmas)
    if (spec.start < v.start + v.length && v.start < spec.start + spec.length)
      throw ContractError("VMAs overlap");
  p.vmas.push_back(spec);
  if (spec.populate)
    for (VirtAddr va = spec.start; va < spec.start + spec.length; va += align) demand_page(p.ctx, va);
  return spec.start;
}

Ppn Kernel::ensure_table(Process& p, VirtAddr va, int level) {
  Ppn table = p.ctx.root_ppn;
  for (int lvl = 4; lvl > level; --lvl) {
    const PhysAddr pte_pa = page_base(table) + 8ULL * table_index(va, lvl);
    PageTableEntry e = PageTableEntry::decode(dram_.read_u64(pte_pa));
    if (e.present) {
      if (e.huge) throw ContractError("range already mapped by a huge page");
      table = e.ppn;
      continue;
    }
    const bool l1 = lvl - 1 == 1;
    Ppn fresh = alloc_frame(l1 ? PageRole::L1pt : PageRole::UpperTable);
    zero_frame(fresh);
    dram_.write_u64(pte_pa, (page_base(fresh) & PageTableEntry::kFrameMask) | kTableEntryFlags);
    if (l1) {
      FrameInfo& f = frames_[fresh];
      f.pt_pid = p.pid;
      f.pt_va_base = align_down(va, kHugeSize);
      f.pt_parent_entry = pte_pa;
      if (hooks_.on_pte_alloc) hooks_.on_pte_alloc(fresh);
    }
    table = fresh;
  }
  return table;
}

Ppn Kernel::ensure_l1pt(Process& p, VirtAddr va) { return ensure_table(p, va, 1); }

void Kernel::map_leaf(Process& p, VirtAddr va, Ppn ppn, const VmaSpec& vma) {
  PageTableEntry e;
  e.present = true;
  e.writable = vma.writable;
  e.user = vma.user;
  e.ppn = ppn;
  PteRef leaf;
  if (vma.huge) {
    e.huge = true;
    Ppn l2 = ensure_table(p, va, 2);
    leaf = {page_base(l2) + 8ULL * table_index(va, 2), 2};
  } else {
    Ppn l1 = ensure_l1pt(p, va);
    leaf = {page_base(l1) + 8ULL * table_index(va, 1), 1};
    ++frames_[l1].present_entries;
  }
  dram_.write_u64(leaf.pa, e.encode());
  mmu_.tlb_flush(p.ctx, va);
  rmap_[ppn].push_back({p.pid, va, leaf});
}

Ppn Kernel::demand_page(TranslationContext& ctx, VirtAddr va) {
  Process& p = process(ctx.pid);
  const VmaSpec* vma = find_vma(ctx.pid, va);
  if (!vma) throw SegmentationError("address outside any VMA");
  const VmaSpec spec = *vma;
  const VirtAddr base = align_down(va, spec.huge ? kHugeSize : kPageSize);
  if (auto leaf = mmu_.lookup_leaf(p.ctx, base); leaf && leaf->entry.present) return leaf->entry.ppn;

  const PageRole role = spec.device ? PageRole::Device : PageRole::User;
  Ppn ppn;
  if (spec.huge) {
    ppn = alloc_huge_block();
    for (Ppn f = ppn; f < ppn + kPagesPerHuge; ++f) {
      alloc_frame_at(f, role);
      frames_[f].huge = true;
      frames_[f].huge_head = ppn;
      zero_frame(f);
    }
  } else {
    ppn = alloc_frame(role);
    zero_frame(ppn);
  }
  map_leaf(p, base, ppn, spec);
  if (hooks_.on_new_user_page) hooks_.on_new_user_page(ppn, rmap_[ppn].back().leaf, p.pid, base);
  return ppn;
}

void Kernel::map_shared_page(Pid pid, VirtAddr va, Ppn ppn) {
  Process& p = process(pid);
  const VmaSpec* vma = find_vma(pid, va);
  if (!vma) throw SegmentationError("address outside any VMA");
  if (vma->huge) throw ContractError("shared huge mappings are not supported");
  const FrameInfo& f = frames_.at(ppn);
  if ((f.role != PageRole::User && f.role != PageRole::Device) || f.huge)
    throw ContractError("only 4 KiB user frames can be shared");
  const VirtAddr base = align_down(va, kPageSize);
  if (auto leaf = mmu_.lookup_leaf(p.ctx, base); leaf && leaf->entry.present)
    throw ContractError("virtual page already mapped");
  const VmaSpec spec = *vma;
  map_leaf(p, base, ppn, spec);
  if (hooks_.on_new_user_page) hooks_.on_new_user_page(ppn, rmap_[ppn].back().leaf, pid, base);
}

void Kernel::unmap_one(Process& p, VirtAddr va) {
  auto leaf = mmu_.lookup_leaf(p.ctx, va);
  if (!leaf || !leaf->entry.present) return;
  const Ppn ppn = leaf->entry.ppn;
  dram_.write_u64(leaf->pte.pa, 0);
  if (leaf->pte.level == 1) --frames_[leaf->table_ppn].present_entries;
  mmu_.tlb_flush(p.ctx, va);
  auto& maps = rmap_[ppn];
  std::erase_if(maps, [&](const Mapping& m) { return m.pid == p.pid && m.va == align_down(va, leaf->pte.level == 2 ? kHugeSize : kPageSize); });
  if (!maps.empty()) {
    if (hooks_.on_unmap_page) hooks_.on_unmap_page(ppn);
    return;
  }
  if (hooks_.on_free_pages) hooks_.on_free_pages(ppn);
  if (frames_[ppn].huge) {
    for (Ppn f = ppn; f < ppn + kPagesPerHuge; ++f) release_frame(f);
  } else {
    release_frame(ppn);
  }
}

void Kernel::maybe_free_l1pt(Process& p, VirtAddr va) {
  const VirtAddr region = align_down(va, kHugeSize);
  for (const VmaSpec& v : p.vmas)
    if (region < v.start + v.length && v.start < region + kHugeSize) return;
  Ppn table = p.ctx.root_ppn;
  for (int lvl = 4; lvl > 2; --lvl) {
    PageTableEntry e = PageTableEntry::decode(dram_.read_u64(page_base(table) + 8ULL * table_index(region, lvl)));
    if (!e.present) return;
    table = e.ppn;
  }
  const PhysAddr l2e = page_base(table) + 8ULL * table_index(region, 2);
  PageTableEntry e = PageTableEntry::decode(dram_.read_u64(l2e));
  if (!e.present || e.huge) return;
  if (frames_[e.ppn].present_entries != 0) throw InvariantError("L1PT of an unmapped region still has entries");
  dram_.write_u64(l2e, 0);
  mmu_.tlb_flush_all(p.ctx);
  if (hooks_.on_free_pages) hooks_.on_free_pages(e.ppn);
  release_frame(e.ppn);
}

void Kernel::munmap(Pid pid, VirtAddr start) {
  Process& p = process(pid);
  auto it = std::find_if(p.vmas.begin(), p.vmas.end(), [&](const VmaSpec& v) { return v.start == start; });
  if (it == p.vmas.end()) throw ContractError("no VMA starts at this address");
  const VmaSpec spec = *it;
  const std::uint64_t step = spec.huge ? kHugeSize : kPageSize;
  for (VirtAddr va = spec.start; va < spec.start + spec.length; va += step) unmap_one(p, va);
  p.vmas.erase(it);
  for (VirtAddr r = align_down(spec.start, kHugeSize); r < spec.start + spec.length; r += kHugeSize)
    maybe_free_l1pt(p, r);
}

void Kernel::free_upper_tables(Process& p) {
  auto drop = [&](Ppn ppn) {
    if (hooks_.on_free_pages) hooks_.on_free_pages(ppn);
    release_frame(ppn);
  };
  const Ppn l4 = p.ctx.root_ppn;
  for (unsigned i = 0; i < 512; ++i) {
    PageTableEntry e4 = PageTableEntry::decode(dram_.read_u64(page_base(l4) + 8ULL * i));
    if (!e4.present) continue;
    for (unsigned j = 0; j < 512; ++j) {
      PageTableEntry e3 = PageTableEntry::decode(dram_.read_u64(page_base(e4.ppn) + 8ULL * j));
      if (!e3.present) continue;
      for (unsigned k = 0; k < 512; ++k) {
        PageTableEntry e2 = PageTableEntry::decode(dram_.read_u64(page_base(e3.ppn) + 8ULL * k));
        if (!e2.present || e2.huge) continue;
        if (frames_[e2.ppn].present_entries != 0) throw InvariantError("exiting process still maps pages");
        drop(e2.ppn);
      }
      drop(e3.ppn);
    }
    drop(e4.ppn);
  }
  drop(l4);
}

void Kernel::exit_process(Pid pid) {
  Process& p = process(pid);
  std::vector<VirtAddr> starts;
  for (const VmaSpec& v : p.vmas) starts.push_back(v.start);
  for (VirtAddr s : starts) munmap(pid, s);
  free_upper_tables(p);
  processes_.erase(pid);
}

void Kernel::free_pages(Ppn ppn) {
  if (ppn >= frames_.size()) throw AddressError("frame out of range");
  FrameInfo& f = frames_[ppn];
  switch (f.role) {
    case PageRole::Free: throw ContractError("double free of a physical page");
    case PageRole::Reserved:
    case PageRole::UpperTable: throw ContractError("page is pinned");
    case PageRole::L1pt: {
      if (f.present_entries != 0) throw ContractError("L1PT still maps pages");
      dram_.write_u64(f.pt_parent_entry, 0);
      mmu_.tlb_flush_all(process(f.pt_pid).ctx);
      if (hooks_.on_free_pages) hooks_.on_free_pages(ppn);
      release_frame(ppn);
      return;
    }
    case PageRole::User:
    case PageRole::Device: {
      if (f.huge && f.huge_head != ppn) throw ContractError("free a huge page through its head frame");
      std::vector<Mapping> maps = rmap(ppn);
      if (maps.empty()) {
        if (hooks_.on_free_pages) hooks_.on_free_pages(ppn);
        if (f.huge)
          for (Ppn x = ppn; x < ppn + kPagesPerHuge; ++x) release_frame(x);
        else
          release_frame(ppn);
        return;
      }
      for (const Mapping& m : maps) unmap_one(process(m.pid), m.va);
      return;
    }
  }
}

VirtAddr Kernel::direct_map(PhysAddr pa) const {
  if (pa >= dram_.config().total_bytes()) throw AddressError("physical address out of range");
  return kDirectMapBase + pa;
}

PhysAddr Kernel::direct_map_inverse(VirtAddr kva) const {
  if (kva < kDirectMapBase || kva - kDirectMapBase >= dram_.config().total_bytes())
    throw AddressError("not a direct-map address");
  return kva - kDirectMapBase;
}

std::uint8_t Kernel::kernel_read(VirtAddr kva) {
  const PhysAddr pa = direct_map_inverse(kva);
  if (mmu_.data_cached(pa)) {
    clock_.now += 2;
  } else {
    AccessOutcome o = dram_.access(pa, clock_.now, Origin::Kernel);
    clock_.now += o.latency;
    mmu_.data_cache_fill(pa);
  }
  return dram_.read_byte(pa);
}

bool Kernel::handle_fault(const Fault& fault, TranslationContext& ctx) {
  for (auto& h : hooks_.page_fault_chain)
    if (auto r = h(fault, ctx)) return *r;
  if (fault.code.p) return false;
  const VmaSpec* vma = find_vma(ctx.pid, fault.va);
  if (!vma) return false;
  if (fault.code.wr && !vma->writable) return false;
  demand_page(ctx, fault.va);
  return true;
}

std::vector<Ppn> Kernel::l1pt_pages() const {
  std::vector<Ppn> out;
  for (Ppn p = 0; p < frames_.size(); ++p)
    if (frames_[p].role == PageRole::L1pt) out.push_back(p);
  return out;
}

std::vector<Ppn> Kernel::pages_mapped_by(Ppn l1pt) const {
  std::vector<Ppn> out;
  if (frames_.at(l1pt).role != PageRole::L1pt) return out;
  for (unsigned i = 0; i < 512; ++i) {
    PageTableEntry e = PageTableEntry::decode(dram_.read_u64(page_base(l1pt) + 8ULL * i));
    if (!e.present || e.ppn >= frames_.size()) continue;
    if (user_accessible(e.ppn)) out.push_back(e.ppn);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

bool Kernel::user_accessible(Ppn ppn) const {
  if (ppn >= frames_.size()) return false;
  const FrameInfo& f = frames_[ppn];
  if (f.role != PageRole::User && f.role != PageRole::Device) return false;
  const Ppn head = f.huge ? f.huge_head : ppn;
  const auto& maps = rmap(head);
  if (maps.empty()) return false;
  return PageTableEntry::decode(dram_.read_u64(maps.front().leaf.pa)).user;
}

void Kernel::relocate_occupant(Ppn target) {
  const FrameInfo& f = frames_[target];
  if (free_.empty()) throw OutOfMemory("no frame to relocate the occupant to");
  Ppn dest = *free_.begin();
  place_page_exact(dest, f.role == PageRole::Device ? PageRole::User : f.role, target);
}

void Kernel::place_page_exact(Ppn target, PageRole role, Ppn source) {
  if (target >= frames_.size() || source >= frames_.size()) throw AddressError("frame out of range");
  if (target == source) return;
  const FrameInfo src = frames_[source];
  const bool src_user = src.role == PageRole::User || src.role == PageRole::Device;
  if (role == PageRole::L1pt ? src.role != PageRole::L1pt : !(role == PageRole::User && src_user))
    throw ContractError("source frame does not serve the requested role");
  if (src.huge) throw ContractError("huge pages cannot be placed");
  {
    const FrameInfo& t = frames_[target];
    if (t.role != PageRole::Free) {
      const bool movable = t.role == PageRole::L1pt ||
                           ((t.role == PageRole::User || t.role == PageRole::Device) && !t.huge);
      if (!movable) throw ContractError("target frame is pinned");
      relocate_occupant(target);
    }
  }

  std::array<std::uint8_t, kPageSize> buf{};
  dram_.read_page(source, buf);
  alloc_frame_at(target, src.role);
  dram_.write_page(target, buf);
  for (PhysAddr off = 0; off < kPageSize; off += kLineSize) {
    mmu_.data_cache_flush(page_base(source) + off);
    mmu_.data_cache_flush(page_base(target) + off);
  }

  if (src.role == PageRole::L1pt) {
    FrameInfo& t = frames_[target];
    t = src;
    PageTableEntry parent = PageTableEntry::decode(dram_.read_u64(src.pt_parent_entry));
    parent.ppn = target;
    dram_.write_u64(src.pt_parent_entry, parent.encode());
    for (unsigned i = 0; i < 512; ++i) {
      PageTableEntry e = PageTableEntry::decode(dram_.read_u64(page_base(target) + 8ULL * i));
      if (!e.present) continue;
      auto it = rmap_.find(e.ppn);
      if (it == rmap_.end()) continue;
      for (Mapping& m : it->second)
        if (m.leaf.pa == page_base(source) + 8ULL * i) m.leaf.pa = page_base(target) + 8ULL * i;
    }
    for (PhysAddr off = 0; off < kPageSize; off += kLineSize) mmu_.pte_cache_flush(page_base(source) + off);
    mmu_.tlb_flush_all(process(src.pt_pid).ctx);
    if (hooks_.on_pte_alloc) hooks_.on_pte_alloc(target);
    frames_[source].present_entries = 0;
    if (hooks_.on_free_pages) hooks_.on_free_pages(source);
    release_frame(source);
    return;
  }

  std::vector<Mapping> maps = rmap(source);
  for (const Mapping& m : maps) {
    PageTableEntry e = PageTableEntry::decode(dram_.read_u64(m.leaf.pa));
    e.ppn = target;
    dram_.write_u64(m.leaf.pa, e.encode());
    mmu_.tlb_flush(process(m.pid).ctx, m.va);
  }
  rmap_[target] = maps;
  rmap_.erase(source);
  if (hooks_.on_free_pages) hooks_.on_free_pages(source);
  release_frame(source);
  if (hooks_.on_new_user_page)
    for (const Mapping& m : maps) hooks_.on_new_user_page(target, m.leaf, m.pid, m.va);
}

}  // namespace trrsim
