#include "trrsim/dram.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <string>

#include "trrsim/gf2.hpp"

namespace trrsim {

std::uint64_t DramConfig::bank_bits_mask() const {
  if (row_shift <= column_bits) return 0;
  return ((1ULL << row_shift) - 1) & ~((1ULL << column_bits) - 1);
}

void DramConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("dram: " + what); };
  if (bank_fns.size() > 16) fail("at most 16 bank functions");
  if (column_bits < 6) fail("column_bits >= 6 (a row holds at least one cache line)");
  if (row_bits == 0) fail("row_bits >= 1");
  if (row_shift + row_bits > 40) fail("row_shift + row_bits <= 40");
  if (row_shift < column_bits) fail("row_shift >= column_bits");
  if (row_shift - column_bits != bank_fns.size())
    fail("row_shift - column_bits must equal the number of bank functions so that "
         "row_size * rows_per_bank * banks = total memory");
  const std::uint64_t addr_mask = total_bytes() - 1;
  std::vector<std::uint64_t> restricted;
  for (std::uint64_t fn : bank_fns) {
    if (fn == 0) fail("bank function masks must be nonzero");
    if (fn & ~addr_mask) fail("bank function mask exceeds the physical address width");
    restricted.push_back(fn & bank_bits_mask());
  }
  if (gf2::rank(bank_fns) != bank_fns.size()) fail("bank functions must be linearly independent over GF(2)");
  if (gf2::rank(restricted) != bank_fns.size())
    fail("bank functions restricted to the bank bits must be invertible (mapping not reversible)");
  if (t_rc == 0) fail("t_rc > 0");
  if (refresh_period == 0) fail("refresh_period > 0");
  if (max_distance < 1) fail("max_distance >= 1");
  if (!(weight_decay > 0.0 && weight_decay <= 1.0)) fail("weight_decay in (0, 1]");
  if (hc_first == 0) fail("hc_first > 0");
  if (hc_spread < 0.0) fail("hc_spread >= 0");
  if (!(latency_hit < latency_closed && latency_closed < latency_conflict))
    fail("latency_hit < latency_closed < latency_conflict");
  if (!(flip_density >= 0.0 && flip_density <= 1.0)) fail("flip_density in [0, 1]");
}

namespace {

double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace

Dram::Dram(DramConfig config) : config_(std::move(config)) {
  config_.validate();
  weights_.assign(config_.max_distance + 1, 0);
  for (unsigned d = 1; d <= config_.max_distance; ++d)
    weights_[d] = static_cast<std::uint64_t>(
        std::llround(std::pow(config_.weight_decay, static_cast<double>(d - 1)) * kUnit));
  rows_.resize(config_.banks() * config_.rows_per_bank());
  open_row_.assign(config_.banks(), -1);
  bank_ready_.assign(config_.banks(), 0);
  pages_.resize(config_.total_pages());
  seed_vulnerability(config_.vuln_seed, config_.flip_density);
}

DramAddress Dram::map_address(PhysAddr pa) const {
  if (pa >= config_.total_bytes()) throw AddressError("physical address out of range");
  DramAddress a;
  for (std::size_t i = 0; i < config_.bank_fns.size(); ++i)
    a.bank |= static_cast<std::uint32_t>(gf2::parity(pa & config_.bank_fns[i])) << i;
  a.row = static_cast<std::uint32_t>((pa >> config_.row_shift) & (config_.rows_per_bank() - 1));
  a.column = static_cast<std::uint32_t>(pa & (config_.row_size() - 1));
  return a;
}

PhysAddr Dram::to_physical(DramAddress addr) const {
  if (addr.bank >= config_.banks() || addr.row >= config_.rows_per_bank() ||
      addr.column >= config_.row_size())
    throw AddressError("DRAM address out of range");
  PhysAddr base = (PhysAddr{addr.row} << config_.row_shift) | addr.column;
  std::uint64_t target = addr.bank;
  for (std::size_t i = 0; i < config_.bank_fns.size(); ++i)
    target ^= static_cast<std::uint64_t>(gf2::parity(base & config_.bank_fns[i])) << i;
  auto x = gf2::solve_parities(config_.bank_fns, target, config_.bank_bits_mask());
  if (!x) throw ConfigError("dram: mapping not reversible");
  return base | *x;
}

std::vector<RowId> Dram::footprint(PhysAddr pa, std::uint64_t length) const {
  if (length == 0 || !std::has_single_bit(length) || (pa & (length - 1)))
    throw AddressError("footprint needs an aligned power-of-two range");
  if (pa + length > config_.total_bytes()) throw AddressError("footprint out of range");
  std::uint64_t span_bits = length - 1;
  std::uint64_t relevant = 0;
  for (std::uint64_t fn : config_.bank_fns) relevant |= fn;
  relevant |= (config_.rows_per_bank() - 1) << config_.row_shift;
  relevant &= span_bits;
  if (std::popcount(relevant) > 20) throw AddressError("footprint range too large");
  std::set<RowId> seen;
  // Enumerates every subset of the relevant bits.
  std::uint64_t sub = 0;
  do {
    DramAddress a = map_address(pa | sub);
    seen.insert({a.bank, a.row});
    sub = (sub - relevant) & relevant;
  } while (sub != 0);
  return {seen.begin(), seen.end()};
}

bool Dram::is_open(RowId id) const {
  return open_row_.at(id.bank) == static_cast<std::int64_t>(id.row);
}

void Dram::recharge(RowState& r, Nanos now) {
  if (r.hammered) {
    r.max_hammer_span = std::max(r.max_hammer_span, r.hammer_last - r.hammer_first);
    r.hammered = false;
  }
  r.disturbance = 0;
  r.flipped_in_window = false;
  r.last_recharge = now;
}

void Dram::disturb(RowId victim, std::uint64_t amount, Nanos now, Origin origin,
                   std::vector<FlipEvent>& out) {
  RowState& r = rows_[index(victim)];
  r.disturbance += amount;
  if (origin == Origin::User) {
    if (!r.hammered) {
      r.hammered = true;
      r.hammer_first = now;
    }
    r.hammer_last = now;
  }
  if (r.flipped_in_window || r.disturbance < (r.hc << kDisturbShift)) return;
  r.flipped_in_window = true;
  for (const FlippableCell& c : r.flippable_cells) {
    PhysAddr pa = to_physical({victim.bank, victim.row, c.offset});
    std::uint8_t byte = read_byte(pa);
    bool set = (byte >> c.bit) & 1;
    if (set == c.to_one) continue;
    byte ^= static_cast<std::uint8_t>(1u << c.bit);
    write_byte(pa, byte);
    FlipEvent ev{now, victim, pa, c.bit, c.to_one};
    ++flips_;
    out.push_back(ev);
    if (on_flip_) on_flip_(ev);
  }
}

AccessOutcome Dram::activate(DramAddress addr, Nanos now, Origin origin) {
  if (addr.bank >= config_.banks() || addr.row >= config_.rows_per_bank() ||
      addr.column >= config_.row_size())
    throw AddressError("DRAM address out of range");
  AccessOutcome out;
  const std::int64_t open = open_row_[addr.bank];
  if (open == static_cast<std::int64_t>(addr.row)) {
    out.latency = config_.latency_hit;
    out.cls = LatencyClass::Hit;
    return out;
  }
  const Nanos start = std::max(now, bank_ready_[addr.bank]);
  out.cls = open < 0 ? LatencyClass::Closed : LatencyClass::Conflict;
  if (open >= 0) recharge(rows_[index({addr.bank, static_cast<std::uint32_t>(open)})], start);
  const RowId id{addr.bank, addr.row};
  recharge(rows_[index(id)], start);
  open_row_[addr.bank] = addr.row;
  bank_ready_[addr.bank] = start + config_.t_rc;
  ++activations_;
  if (log_) log_->push_back({start, id, origin});
  if (capture_) capture_->push_back({start, id, origin});

  const std::int64_t rows = static_cast<std::int64_t>(config_.rows_per_bank());
  for (unsigned d = 1; d <= config_.max_distance; ++d) {
    for (std::int64_t v : {std::int64_t{addr.row} - d, std::int64_t{addr.row} + d}) {
      if (v < 0 || v >= rows) continue;
      disturb({addr.bank, static_cast<std::uint32_t>(v)}, weights_[d], start, origin, out.flipped);
    }
  }
  if (listener_) listener_->on_activation(id, start);
  out.latency = (start - now) +
                (out.cls == LatencyClass::Closed ? config_.latency_closed : config_.latency_conflict);
  return out;
}

std::vector<RowId> Dram::auto_refresh_tick(Nanos now) {
  std::vector<RowId> out;
  out.reserve(rows_.size());
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    recharge(rows_[i], now);
    out.push_back(row_at(i));
  }
  return out;
}

void Dram::refresh_row(std::uint32_t bank, std::uint32_t row, Nanos now) {
  if (bank >= config_.banks() || row >= config_.rows_per_bank())
    throw AddressError("refresh_row out of range");
  recharge(rows_[index({bank, row})], now);
}

void Dram::seed_vulnerability(std::uint64_t seed, double flip_density) {
  if (!(flip_density >= 0.0 && flip_density <= 1.0))
    throw ConfigError("dram: flip_density in [0, 1]");
  std::mt19937_64 rng(seed);
  const std::uint64_t max_cells = std::max(1u, config_.max_cells_per_row);
  for (RowState& r : rows_) {
    r.flippable_cells.clear();
    double u = unit_uniform(rng);
    double jitter = unit_uniform(rng);
    r.hc = static_cast<std::uint64_t>(
        std::floor(static_cast<double>(config_.hc_first) * (1.0 + config_.hc_spread * jitter)));
    if (u >= flip_density) continue;
    std::uint64_t n = 1 + rng() % max_cells;
    for (std::uint64_t i = 0; i < n; ++i) {
      FlippableCell c;
      c.offset = static_cast<std::uint32_t>(rng() % config_.row_size());
      c.bit = static_cast<std::uint8_t>(rng() % 8);
      c.to_one = (rng() & 1) != 0;
      r.flippable_cells.push_back(c);
    }
  }
}

Nanos Dram::hammer_span(RowId id) const {
  const RowState& r = rows_[index(id)];
  Nanos open = r.hammered ? r.hammer_last - r.hammer_first : 0;
  return std::max(r.max_hammer_span, open);
}

RowId Dram::row_at(std::size_t i) const {
  return {static_cast<std::uint32_t>(i / config_.rows_per_bank()),
          static_cast<std::uint32_t>(i % config_.rows_per_bank())};
}

const Dram::Page* Dram::page_ptr(Ppn ppn) const {
  if (ppn >= pages_.size()) throw AddressError("physical page out of range");
  return pages_[ppn].get();
}

Dram::Page& Dram::page_ref(Ppn ppn) {
  if (ppn >= pages_.size()) throw AddressError("physical page out of range");
  if (!pages_[ppn]) pages_[ppn] = std::make_unique<Page>(Page{});
  return *pages_[ppn];
}

std::uint8_t Dram::read_byte(PhysAddr pa) const {
  const Page* p = page_ptr(page_of(pa));
  return p ? (*p)[pa & (kPageSize - 1)] : 0;
}

void Dram::write_byte(PhysAddr pa, std::uint8_t v) { page_ref(page_of(pa))[pa & (kPageSize - 1)] = v; }

std::uint64_t Dram::read_u64(PhysAddr pa) const {
  if (pa & 7) throw AddressError("unaligned 64-bit read");
  const Page* p = page_ptr(page_of(pa));
  if (!p) return 0;
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | (*p)[(pa & (kPageSize - 1)) + i];
  return v;
}

void Dram::write_u64(PhysAddr pa, std::uint64_t v) {
  if (pa & 7) throw AddressError("unaligned 64-bit write");
  Page& p = page_ref(page_of(pa));
  for (int i = 0; i < 8; ++i) p[(pa & (kPageSize - 1)) + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

void Dram::read_page(Ppn ppn, std::span<std::uint8_t> out) const {
  if (out.size() != kPageSize) throw ContractError("read_page needs a page-sized buffer");
  const Page* p = page_ptr(ppn);
  if (p)
    std::copy(p->begin(), p->end(), out.begin());
  else
    std::fill(out.begin(), out.end(), 0);
}

void Dram::write_page(Ppn ppn, std::span<const std::uint8_t> in) {
  if (in.size() != kPageSize) throw ContractError("write_page needs a page-sized buffer");
  Page& p = page_ref(ppn);
  std::copy(in.begin(), in.end(), p.begin());
}

std::vector<std::pair<RowId, std::uint64_t>> Dram::iteration_gains(
    std::span<const ActivationRecord> iteration, bool user_only) const {
  std::set<RowId> activated;
  for (const auto& rec : iteration) activated.insert(rec.row);
  std::map<RowId, std::uint64_t> gains;
  const std::int64_t rows = static_cast<std::int64_t>(config_.rows_per_bank());
  for (const auto& rec : iteration) {
    if (user_only && rec.origin != Origin::User) continue;
    for (unsigned d = 1; d <= config_.max_distance; ++d) {
      for (std::int64_t v : {std::int64_t{rec.row.row} - d, std::int64_t{rec.row.row} + d}) {
        if (v < 0 || v >= rows) continue;
        RowId id{rec.row.bank, static_cast<std::uint32_t>(v)};
        if (activated.count(id)) continue;
        gains[id] += weights_[d];
      }
    }
  }
  return {gains.begin(), gains.end()};
}

std::uint64_t Dram::max_repeat(std::span<const ActivationRecord> iteration) const {
  std::uint64_t k = UINT64_MAX;
  for (const auto& [id, gain] : iteration_gains(iteration, false)) {
    const RowState& r = rows_[index(id)];
    if (r.flipped_in_window || r.flippable_cells.empty() || gain == 0) continue;
    std::uint64_t limit = r.hc << kDisturbShift;
    if (r.disturbance + 1 >= limit) return 0;
    k = std::min(k, (limit - 1 - r.disturbance) / gain);
  }
  return k;
}

void Dram::fast_forward(std::span<const ActivationRecord> iteration, std::uint64_t k, Nanos dt) {
  if (k == 0 || iteration.empty()) return;
  const Nanos shift = k * dt;
  std::set<RowId> activated;
  std::set<std::uint32_t> banks;
  for (const auto& rec : iteration) {
    activated.insert(rec.row);
    banks.insert(rec.row.bank);
  }
  for (RowId id : activated) {
    RowState& r = rows_[index(id)];
    r.last_recharge += shift;
    if (r.hammered) {
      r.hammer_first += shift;
      r.hammer_last += shift;
    }
  }
  for (const auto& [id, gain] : iteration_gains(iteration, false))
    rows_[index(id)].disturbance += k * gain;
  for (const auto& [id, gain] : iteration_gains(iteration, true)) {
    RowState& r = rows_[index(id)];
    if (r.hammered) r.hammer_last += shift;
  }
  for (std::uint32_t b : banks) bank_ready_[b] += shift;
  activations_ += k * iteration.size();
  if (log_) {
    for (std::uint64_t i = 1; i <= k; ++i)
      for (const auto& rec : iteration) log_->push_back({rec.time + i * dt, rec.row, rec.origin});
  }
}

}  // namespace trrsim
