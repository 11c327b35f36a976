#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <unordered_map>
#include <vector>

#include "trrsim/common.hpp"
#include "trrsim/dram.hpp"
#include "trrsim/vm_mmu.hpp"

namespace trrsim {

enum class PageRole : std::uint8_t { Free, Reserved, UpperTable, L1pt, User, Device };

const char* role_name(PageRole role);

struct FrameInfo {
  PageRole role = PageRole::Free;
  bool huge = false;        // part of a 2 MiB user page
  Ppn huge_head = 0;
  // L1PT bookkeeping.
  Pid pt_pid = 0;
  VirtAddr pt_va_base = 0;  // 2 MiB region translated by this table
  PhysAddr pt_parent_entry = 0;
  std::uint32_t present_entries = 0;
};

struct VmaSpec {
  VirtAddr start = 0;
  std::uint64_t length = 0;
  bool writable = true;
  bool user = true;
  bool populate = false;  // map every page at creation
  bool huge = false;      // back with 2 MiB pages
  bool device = false;    // kernel-owned, user-accessible buffer
};

struct Mapping {
  Pid pid = 0;
  VirtAddr va = 0;  // page (or huge page) aligned
  PteRef leaf;
  bool operator==(const Mapping&) const = default;
};

struct Process {
  Pid pid = 0;
  TranslationContext ctx;
  std::vector<VmaSpec> vmas;
};

// Callbacks the defense attaches to. Page-fault handlers run in order; the
// first one returning a value decides; the default handler runs last.
struct KernelHooks {
  std::function<void(Ppn)> on_pte_alloc;
  std::function<void(Ppn)> on_free_pages;
  std::function<void(Ppn, PteRef, Pid, VirtAddr)> on_new_user_page;
  // One mapping of a still-mapped frame went away.
  std::function<void(Ppn)> on_unmap_page;
  std::vector<std::function<std::optional<bool>(const Fault&, TranslationContext&)>> page_fault_chain;
};

struct AllocEvent {
  bool alloc = true;
  PageRole role = PageRole::Free;
  Ppn ppn = 0;
};

class Kernel : public FaultHandler {
 public:
  static constexpr VirtAddr kDirectMapBase = 0xffff888000000000ULL;

  Kernel(Dram& dram, Mmu& mmu, Clock& clock, std::uint64_t reserved_low_pages = 1);

  Pid spawn_process(const std::vector<VmaSpec>& layout);
  VirtAddr mmap(Pid pid, VmaSpec spec);
  void munmap(Pid pid, VirtAddr start);
  void exit_process(Pid pid);
  // Maps an existing frame at `va` (inside a VMA of `pid`).
  void map_shared_page(Pid pid, VirtAddr va, Ppn ppn);

  Ppn demand_page(TranslationContext& ctx, VirtAddr va);
  void free_pages(Ppn ppn);

  VirtAddr direct_map(PhysAddr pa) const;
  PhysAddr direct_map_inverse(VirtAddr kva) const;
  std::uint8_t kernel_read(VirtAddr kva);

  // Moves the page currently serving `role` at `source` onto `target`,
  // rewriting every referencing entry.
  void place_page_exact(Ppn target, PageRole role, Ppn source);

  bool handle_fault(const Fault& fault, TranslationContext& ctx) override;

  KernelHooks& hooks() { return hooks_; }
  const FrameInfo& frame(Ppn ppn) const { return frames_.at(ppn); }
  const std::vector<Mapping>& rmap(Ppn ppn) const;
  Process& process(Pid pid);
  const std::map<Pid, Process>& processes() const { return processes_; }
  std::vector<Ppn> l1pt_pages() const;
  // User-accessible frames (head frame for huge pages) mapped by an L1PT.
  std::vector<Ppn> pages_mapped_by(Ppn l1pt) const;
  bool user_accessible(Ppn ppn) const;
  std::uint64_t free_page_count() const { return free_.size(); }
  bool is_free(Ppn ppn) const { return free_.count(ppn) != 0; }
  const std::vector<AllocEvent>& alloc_log() const { return alloc_log_; }
  const VmaSpec* find_vma(Pid pid, VirtAddr va) const;
  std::optional<LeafInfo> leaf_of(Pid pid, VirtAddr va);

 private:
  Ppn alloc_frame(PageRole role);
  Ppn alloc_frame_at(Ppn ppn, PageRole role);
  Ppn alloc_huge_block();
  void release_frame(Ppn ppn);
  void zero_frame(Ppn ppn);
  Ppn ensure_table(Process& p, VirtAddr va, int level);
  Ppn ensure_l1pt(Process& p, VirtAddr va);
  void map_leaf(Process& p, VirtAddr va, Ppn ppn, const VmaSpec& vma);
  void unmap_one(Process& p, VirtAddr va);
  void maybe_free_l1pt(Process& p, VirtAddr va);
  void free_upper_tables(Process& p);
  void relocate_occupant(Ppn target);

  Dram& dram_;
  Mmu& mmu_;
  Clock& clock_;
  KernelHooks hooks_;
  std::vector<FrameInfo> frames_;
  std::set<Ppn> free_;
  std::unordered_map<Ppn, std::vector<Mapping>> rmap_;
  std::map<Pid, Process> processes_;
  Pid next_pid_ = 1;
  std::vector<AllocEvent> alloc_log_;
};

}  // namespace trrsim
