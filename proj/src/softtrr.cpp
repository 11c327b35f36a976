#include "trrsim/softtrr.hpp"

#include <algorithm>
#include <string>

namespace trrsim {

void DefenseParams::validate(const DramConfig& dram) const {
  if (count_limit < 2) throw ConfigError("defense.count_limit must be no less than 2");
  if (timer_inr <= 0) throw ConfigError("defense.timer_inr must be positive");
  if (max_distance < 1) throw ConfigError("defense.max_distance must be at least 1");
  if (ring_capacity < 1) throw ConfigError("defense.ring_capacity must be at least 1");
  if (threshold() > dram.t_rc * static_cast<Nanos>(dram.hc_first))
    throw ConfigError("defense threshold timer_inr * (count_limit - 1) = " + std::to_string(threshold()) +
                      " ns exceeds t_rc * hc_first = " +
                      std::to_string(dram.t_rc * static_cast<Nanos>(dram.hc_first)) + " ns");
}

PteRing::Ring PteRing::make(std::size_t cap) {
  Ring r;
  r.cap = cap;
  r.slots.resize(cap + 1);
  return r;
}

PteRing::PteRing(std::size_t capacity) { rings_.push_back(make(capacity)); }

void PteRing::push(const RingEntry& e) {
  Ring* r = &rings_.back();
  if (r->size() == r->cap) {
    // Only reachable with a ring too small to ever hit 80% before filling.
    rings_.push_back(make(r->cap * 4));
    ++growths_;
    r = &rings_.back();
  }
  r->slots[r->tail] = e;
  r->tail = (r->tail + 1) % r->slots.size();
  ++pushed_;
  if (r->size() * 5 >= r->cap * 4) {
    rings_.push_back(make(r->cap * 4));
    ++growths_;
  }
}

std::optional<RingEntry> PteRing::pop() {
  while (rings_.size() > 1 && rings_.front().size() == 0) rings_.erase(rings_.begin());
  Ring& r = rings_.front();
  if (r.size() == 0) return std::nullopt;
  RingEntry e = r.slots[r.head];
  r.head = (r.head + 1) % r.slots.size();
  ++popped_;
  if (rings_.size() > 1 && r.size() == 0) rings_.erase(rings_.begin());
  return e;
}

std::size_t PteRing::size() const {
  std::size_t n = 0;
  for (const Ring& r : rings_) n += r.size();
  return n;
}

std::size_t PteRing::allocated() const {
  std::size_t n = 0;
  for (const Ring& r : rings_) n += r.cap;
  return n;
}

SoftTrr::Guard::Guard(bool& f) : flag(f) {
  if (flag) throw InvariantError("defense entry point re-entered");
  flag = true;
}

SoftTrr::SoftTrr(Dram& dram, Mmu& mmu, Kernel& kernel, Clock& clock, DefenseParams params)
    : dram_(dram), mmu_(mmu), kernel_(kernel), clock_(clock), params_(params), ring_(params.ring_capacity) {
  params_.validate(dram_.config());
}

SoftTrr::~SoftTrr() {
  if (!loaded_) return;
  KernelHooks& h = kernel_.hooks();
  h.on_pte_alloc = nullptr;
  h.on_free_pages = nullptr;
  h.on_new_user_page = nullptr;
  h.on_unmap_page = nullptr;
  h.page_fault_chain.clear();
}

void SoftTrr::load() {
  if (loaded_) return;
  KernelHooks& h = kernel_.hooks();
  h.on_pte_alloc = [this](Ppn p) { on_pte_alloc(p); };
  h.on_free_pages = [this](Ppn p) { on_free_pages(p); };
  h.on_new_user_page = [this](Ppn p, PteRef l, Pid pid, VirtAddr va) { on_new_user_page(p, l, pid, va); };
  h.on_unmap_page = [this](Ppn p) { on_unmap_page(p); };
  h.page_fault_chain.insert(h.page_fault_chain.begin(),
                            [this](const Fault& f, TranslationContext& ctx) { return on_rsvd_fault(f, ctx); });
  loaded_ = true;
  collect_initial();
  on_timer(clock_.now);
}

void SoftTrr::emit(DefenseEventKind kind, std::uint64_t value) {
  if (sink_) sink_({kind, clock_.now, value});
}

Ppn SoftTrr::head_of(Ppn ppn) const {
  const FrameInfo& f = kernel_.frame(ppn);
  return f.huge ? f.huge_head : ppn;
}

std::vector<RowId> SoftTrr::page_rows(Ppn head) const {
  const bool huge = kernel_.frame(head).huge;
  return dram_.footprint(page_base(head), huge ? kHugeSize : kPageSize);
}

std::vector<RowId> SoftTrr::pt_rows_of(Ppn l1pt) const { return dram_.footprint(page_base(l1pt), kPageSize); }

std::vector<RowId> SoftTrr::adjacency_rows(Ppn head) const {
  std::vector<RowId> rows = page_rows(head);
  for (const Mapping& m : kernel_.rmap(head)) {
    if (m.leaf.level != 1) continue;
    for (RowId r : pt_rows_of(page_of(m.leaf.pa))) rows.push_back(r);
  }
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  return rows;
}

std::vector<RowId> SoftTrr::neighbors(RowId r) const {
  std::vector<RowId> out;
  const std::int64_t rows = static_cast<std::int64_t>(dram_.config().rows_per_bank());
  for (std::int64_t d = -static_cast<std::int64_t>(params_.max_distance); d <= params_.max_distance; ++d) {
    const std::int64_t n = static_cast<std::int64_t>(r.row) + d;
    if (d == 0 || n < 0 || n >= rows) continue;
    out.push_back({r.bank, static_cast<std::uint32_t>(n)});
  }
  return out;
}

const BankRecord* SoftTrr::record(RowId r) const {
  auto it = rows_.find(r.row);
  if (it == rows_.end()) return nullptr;
  for (const BankRecord& b : it->second)
    if (b.bank == r.bank) return &b;
  return nullptr;
}

BankRecord* SoftTrr::record(RowId r) { return const_cast<BankRecord*>(std::as_const(*this).record(r)); }

bool SoftTrr::protected_row(RowId row) const {
  const BankRecord* b = record(row);
  return b && b->pt_count > 0;
}

std::vector<RowId> SoftTrr::protected_rows() const {
  std::vector<RowId> out;
  for (const auto& [row, recs] : rows_)
    for (const BankRecord& b : recs) out.push_back({b.bank, row});
  std::sort(out.begin(), out.end());
  return out;
}

bool SoftTrr::is_adjacent(Ppn head) const {
  if (!kernel_.user_accessible(head)) return false;
  for (RowId r : adjacency_rows(head))
    for (RowId n : neighbors(r))
      if (protected_row(n)) return true;
  return false;
}

std::vector<RowId> SoftTrr::leak_targets(Ppn head, std::optional<Ppn> leaf_table) const {
  std::vector<RowId> rows = page_rows(head);
  if (leaf_table)
    for (RowId r : pt_rows_of(*leaf_table)) rows.push_back(r);
  std::vector<RowId> out;
  for (RowId r : rows)
    for (RowId n : neighbors(r))
      if (protected_row(n)) out.push_back(n);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<Ppn> SoftTrr::pages_in_row(RowId r) const {
  std::vector<Ppn> out;
  const std::uint64_t step = std::min<std::uint64_t>(dram_.config().row_size(), kPageSize);
  for (std::uint64_t col = 0; col < dram_.config().row_size(); col += step) {
    const PhysAddr pa = dram_.to_physical({r.bank, r.row, static_cast<std::uint32_t>(col)});
    out.push_back(page_of(pa));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::set<Ppn> SoftTrr::candidates_near_pt(Ppn l1pt) const {
  std::set<Ppn> c;
  for (RowId r : pt_rows_of(l1pt)) {
    for (RowId n : neighbors(r)) {
      for (Ppn p : pages_in_row(n))
        if (kernel_.user_accessible(p)) c.insert(head_of(p));
      if (auto it = pt_by_row_.find(n); it != pt_by_row_.end())
        for (Ppn y : it->second)
          for (Ppn p : kernel_.pages_mapped_by(y)) c.insert(head_of(p));
    }
  }
  for (Ppn p : kernel_.pages_mapped_by(l1pt)) c.insert(head_of(p));
  return c;
}

// A page-table change can move the leaf entries of adjacent pages, which
// invalidates their queued references, so every survivor is re-armed.
void SoftTrr::reevaluate(const std::set<Ppn>& candidates) {
  for (Ppn p : candidates) {
    if (is_adjacent(p))
      adj_[p] = true;
    else
      adj_.erase(p);
  }
}

CollectStats SoftTrr::collect_initial() {
  Guard g(busy_);
  // Every live L1PT, in frame order (equivalently pid order, since each table
  // belongs to exactly one process).
  for (Ppn pt : kernel_.l1pt_pages()) {
    if (!pt_.insert(pt).second) continue;
    for (RowId r : pt_rows_of(pt)) {
      pt_by_row_[r].insert(pt);
      auto& recs = rows_[r.row];
      auto it = std::find_if(recs.begin(), recs.end(), [&](const BankRecord& b) { return b.bank == r.bank; });
      if (it == recs.end()) {
        recs.push_back({r.bank, 1, 0});
        std::sort(recs.begin(), recs.end(), [](const BankRecord& a, const BankRecord& b) { return a.bank < b.bank; });
      } else {
        ++it->pt_count;
      }
    }
  }
  for (const auto& [pid, proc] : kernel_.processes()) {
    for (const VmaSpec& v : proc.vmas) {
      const std::uint64_t step = v.huge ? kHugeSize : kPageSize;
      for (VirtAddr va = v.start; va < v.start + v.length; va += step) {
        auto leaf = kernel_.leaf_of(pid, va);
        if (!leaf || !leaf->entry.present) continue;
        const Ppn head = head_of(leaf->entry.ppn);
        if (!adj_.count(head) && is_adjacent(head)) adj_.emplace(head, true);
      }
    }
  }
  return {pt_.size(), adj_.size(), rows_.size()};
}

void SoftTrr::on_pte_alloc(Ppn ppn) {
  Guard g(busy_);
  if (!pt_.insert(ppn).second) return;
  for (RowId r : pt_rows_of(ppn)) {
    pt_by_row_[r].insert(ppn);
    auto& recs = rows_[r.row];
    auto it = std::find_if(recs.begin(), recs.end(), [&](const BankRecord& b) { return b.bank == r.bank; });
    if (it == recs.end()) {
      recs.push_back({r.bank, 1, 0});
      std::sort(recs.begin(), recs.end(), [](const BankRecord& a, const BankRecord& b) { return a.bank < b.bank; });
    } else {
      ++it->pt_count;
    }
  }
  reevaluate(candidates_near_pt(ppn));
}

void SoftTrr::on_free_pages(Ppn ppn) {
  Guard g(busy_);
  if (pt_.erase(ppn)) {
    for (RowId r : pt_rows_of(ppn)) {
      if (auto it = pt_by_row_.find(r); it != pt_by_row_.end()) {
        it->second.erase(ppn);
        if (it->second.empty()) pt_by_row_.erase(it);
      }
      auto node = rows_.find(r.row);
      if (node == rows_.end()) continue;
      auto& recs = node->second;
      for (BankRecord& b : recs)
        if (b.bank == r.bank && b.pt_count > 0) --b.pt_count;
      std::erase_if(recs, [](const BankRecord& b) { return b.pt_count == 0; });
      if (recs.empty()) rows_.erase(node);
    }
    reevaluate(candidates_near_pt(ppn));
    return;
  }
  adj_.erase(head_of(ppn));
}

void SoftTrr::on_unmap_page(Ppn ppn) {
  Guard g(busy_);
  const Ppn head = head_of(ppn);
  if (!is_adjacent(head)) adj_.erase(head);
}

void SoftTrr::on_new_user_page(Ppn ppn, PteRef leaf, Pid pid, VirtAddr va) {
  Guard g(busy_);
  const Ppn head = head_of(ppn);
  if (!is_adjacent(head)) return;
  auto it = adj_.find(head);
  if (it == adj_.end()) adj_.emplace(head, false);
  const std::size_t grown = ring_.growths();
  ring_.push({leaf, va, pid, head});
  if (ring_.growths() != grown) emit(DefenseEventKind::Grow, ring_.capacity());
}

bool SoftTrr::arm(const RingEntry& e) {
  const auto& procs = kernel_.processes();
  if (!procs.count(e.pid)) return false;
  auto leaf = kernel_.leaf_of(e.pid, e.va);
  if (!leaf || !leaf->entry.present || leaf->pte != e.pte || head_of(leaf->entry.ppn) != e.ppn) return false;
  if (!adj_.count(e.ppn)) return false;
  mmu_.set_rsrv(leaf->pte);
  mmu_.tlb_flush(kernel_.process(e.pid).ctx, e.va);
  ++counters_.armed_ptes;
  emit(DefenseEventKind::Arm, e.ppn);
  return true;
}

ArmStats SoftTrr::on_timer(Nanos now) {
  Guard g(busy_);
  (void)now;
  ArmStats s;
  while (auto e = ring_.pop()) {
    if (arm(*e))
      ++s.from_ring;
    else
      ++s.stale;
  }
  for (auto& [ppn, pending] : adj_) {
    if (!pending) continue;
    pending = false;
    for (const Mapping& m : kernel_.rmap(ppn)) {
      if (arm({m.leaf, m.va, m.pid, ppn}))
        ++s.from_adj;
      else
        ++s.stale;
    }
  }
  return s;
}

std::optional<bool> SoftTrr::on_rsvd_fault(const Fault& fault, TranslationContext& ctx) {
  if (!fault.code.rsvd) return std::nullopt;
  Guard g(busy_);
  auto leaf = mmu_.lookup_leaf(ctx, fault.va);
  if (!leaf || !leaf->entry.present || !leaf->entry.rsrv51) {
    ++counters_.anomalies;
    return std::nullopt;
  }
  ++counters_.rsvd_faults;
  mmu_.clear_rsrv(leaf->pte);
  mmu_.tlb_flush(ctx, fault.va);

  const Ppn head = head_of(leaf->entry.ppn);
  emit(DefenseEventKind::Fault, head);
  std::optional<Ppn> table;
  if (leaf->pte.level == 1) table = leaf->table_ppn;
  const std::vector<RowId> targets = leak_targets(head, table);
  if (targets.empty() || !adj_.count(head)) {
    // The page lost adjacency since it was armed; nothing to account.
    ++counters_.anomalies;
    return true;
  }

  std::vector<RowId> crossing;
  for (RowId r : targets) {
    BankRecord* b = record(r);
    ++b->leak_count;
    ++counters_.leak_events;
    if (b->leak_count >= params_.count_limit) crossing.push_back(r);
  }
  const std::uint64_t span = leaf->pte.level == 2 ? kHugeSize : kPageSize;
  const std::size_t grown = ring_.growths();
  ring_.push({leaf->pte, fault.va & ~(span - 1), ctx.pid, head});
  if (ring_.growths() != grown) emit(DefenseEventKind::Grow, ring_.capacity());

  if (!crossing.empty()) {
    refresh_pt_rows(crossing);
    // The access being resumed activates its rows after the refresh, so it
    // opens the next window with one tracked leak.
    for (RowId r : crossing) record(r)->leak_count = 1;
  }
  return true;
}

RefreshStats SoftTrr::refresh_pt_rows(const std::vector<RowId>& rows) {
  std::vector<RowId> order = rows;
  std::sort(order.begin(), order.end());
  order.erase(std::unique(order.begin(), order.end()), order.end());
  RefreshStats s;
  for (RowId r : order) {
    const PhysAddr pa = dram_.to_physical({r.bank, r.row, 0});
    const VirtAddr kva = kernel_.direct_map(pa);
    mmu_.data_cache_flush(pa);
    kernel_.kernel_read(kva);
    if (BankRecord* b = record(r)) b->leak_count = 0;
    ++counters_.refreshes;
    ++s.rows;
    emit(DefenseEventKind::Refresh, (std::uint64_t{r.bank} << 32) | r.row);
  }
  return s;
}

std::set<Ppn> SoftTrr::adj_members() const {
  std::set<Ppn> s;
  for (const auto& [p, pending] : adj_) {
    (void)pending;
    s.insert(p);
  }
  return s;
}

Footprint SoftTrr::footprint() const {
  Footprint f;
  f.pt_nodes = pt_.size();
  f.adj_nodes = adj_.size();
  f.row_nodes = rows_.size();
  f.ring_capacity = ring_.capacity();
  f.bytes = (f.pt_nodes + f.adj_nodes + f.row_nodes) * params_.tree_node_bytes +
            ring_.allocated() * params_.ring_entry_bytes;
  return f;
}

}  // namespace trrsim
