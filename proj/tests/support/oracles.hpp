#pragma once

// Reference computations used by the tests. They deliberately avoid the
// simulator's own bookkeeping and recompute everything from first
// principles: the raw activation log, the page tables in memory and the
// kernel's frame table.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "trrsim/dram.hpp"
#include "trrsim/os_kernel.hpp"
#include "trrsim/softtrr.hpp"

namespace oracle {

using namespace trrsim;

// Counter replay of an activation log. An activation recharges the row it
// opens and the row it closes, and disturbs every row within max_distance
// of it by decay^(d-1) activations' worth. `refresh_all` lists instants at
// which every row was recharged.
struct Replay {
  std::map<RowId, double> disturbance;
  // First time each row's accumulated disturbance reached its threshold.
  std::map<RowId, Nanos> first_cross;
};

inline Replay replay(const Dram& dram, const std::vector<ActivationRecord>& log,
                     const std::vector<Nanos>& refresh_all = {}) {
  const DramConfig& c = dram.config();
  Replay out;
  std::map<std::uint32_t, std::uint32_t> open;
  std::size_t next_refresh = 0;
  std::map<RowId, bool> crossed;
  for (const ActivationRecord& a : log) {
    while (next_refresh < refresh_all.size() && refresh_all[next_refresh] <= a.time) {
      out.disturbance.clear();
      crossed.clear();
      ++next_refresh;
    }
    if (auto it = open.find(a.row.bank); it != open.end()) {
      out.disturbance.erase({a.row.bank, it->second});
      crossed.erase({a.row.bank, it->second});
    }
    out.disturbance.erase(a.row);
    crossed.erase(a.row);
    open[a.row.bank] = a.row.row;
    for (unsigned d = 1; d <= c.max_distance; ++d) {
      const double w = std::pow(c.weight_decay, static_cast<double>(d) - 1.0);
      for (long v : {static_cast<long>(a.row.row) - static_cast<long>(d), static_cast<long>(a.row.row) + static_cast<long>(d)}) {
        if (v < 0 || v >= static_cast<long>(c.rows_per_bank())) continue;
        const RowId id{a.row.bank, static_cast<std::uint32_t>(v)};
        double& x = out.disturbance[id];
        x += w;
        const double hc = static_cast<double>(dram.row_state(id).hc);
        if (x >= hc - 1e-9 && !crossed[id]) {
          crossed[id] = true;
          out.first_cross.emplace(id, a.time);
        }
      }
    }
  }
  return out;
}

// What the defense's three structures must contain, rebuilt by walking the
// kernel state.
struct Rescan {
  std::set<Ppn> pt;
  std::map<RowId, std::uint32_t> pt_rows;  // row -> number of L1PT pages on it
  std::set<Ppn> adj;
};

inline Rescan rescan(const Dram& dram, Kernel& kernel, unsigned max_distance) {
  Rescan r;
  for (Ppn p = 0; p < dram.config().total_pages(); ++p)
    if (kernel.frame(p).role == PageRole::L1pt) r.pt.insert(p);
  for (Ppn p : r.pt)
    for (RowId row : dram.footprint(page_base(p), kPageSize)) ++r.pt_rows[row];

  auto near_pt = [&](RowId row) {
    for (unsigned d = 1; d <= max_distance; ++d) {
      if (row.row >= d && r.pt_rows.count({row.bank, row.row - d})) return true;
      if (r.pt_rows.count({row.bank, row.row + d})) return true;
    }
    return false;
  };

  // Every user-visible page, through the page tables of each process.
  std::map<Ppn, std::vector<std::optional<Ppn>>> tables_of;  // head -> leaf tables (L1 only)
  std::set<Ppn> user_heads;
  for (const auto& [pid, proc] : kernel.processes()) {
    for (const VmaSpec& v : proc.vmas) {
      const std::uint64_t step = v.huge ? kHugeSize : kPageSize;
      for (VirtAddr va = v.start; va < v.start + v.length; va += step) {
        auto leaf = kernel.leaf_of(pid, va);
        if (!leaf || !leaf->entry.present) continue;
        const FrameInfo& f = kernel.frame(leaf->entry.ppn);
        if (f.role != PageRole::User && f.role != PageRole::Device) continue;
        const Ppn head = f.huge ? f.huge_head : leaf->entry.ppn;
        if (leaf->pte.level == 1) tables_of[head].push_back(leaf->table_ppn);
        else tables_of[head].push_back(std::nullopt);
        if (leaf->entry.user) user_heads.insert(head);
      }
    }
  }
  for (const auto& [head, tables] : tables_of) {
    if (!user_heads.count(head)) continue;
    const bool huge = kernel.frame(head).huge;
    std::vector<RowId> rows = dram.footprint(page_base(head), huge ? kHugeSize : kPageSize);
    for (const auto& t : tables)
      if (t)
        for (RowId row : dram.footprint(page_base(*t), kPageSize)) rows.push_back(row);
    for (RowId row : rows)
      if (near_pt(row)) {
        r.adj.insert(head);
        break;
      }
  }
  return r;
}

inline std::map<RowId, std::uint32_t> flatten(const PtRowMap& m) {
  std::map<RowId, std::uint32_t> out;
  for (const auto& [row, recs] : m)
    for (const BankRecord& b : recs) out[{b.bank, row}] = b.pt_count;
  return out;
}

// Empty when the defense agrees with the rescan, otherwise a description.
inline std::string compare(const SoftTrr& d, const Rescan& r) {
  std::string err;
  if (d.pt_set() != r.pt) err += "PtSet differs (" + std::to_string(d.pt_set().size()) + " vs " +
                                 std::to_string(r.pt.size()) + "); ";
  if (flatten(d.pt_rows()) != r.pt_rows) err += "PtRows differs; ";
  // A record lives only while a table is on its row, and a crossing of the
  // limit is always followed by a refresh.
  for (const auto& [row, recs] : d.pt_rows())
    for (const BankRecord& b : recs) {
      if (b.pt_count == 0) err += "record with pt_count 0 at row " + std::to_string(row) + "; ";
      if (b.leak_count >= d.params().count_limit) err += "leak_count at the limit on row " + std::to_string(row) + "; ";
    }
  const std::set<Ppn> adj = d.adj_members();
  if (adj != r.adj) {
    err += "AdjSet differs (" + std::to_string(adj.size()) + " vs " + std::to_string(r.adj.size()) + ")";
    for (Ppn p : adj)
      if (!r.adj.count(p)) { err += " extra " + std::to_string(p); break; }
    for (Ppn p : r.adj)
      if (!adj.count(p)) { err += " missing " + std::to_string(p); break; }
  }
  return err;
}

}  // namespace oracle
