#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "trrsim/common.hpp"

namespace trrsim {

// Geometry, XOR bank mapping, timing and disturbance parameters.
//
// Physical address layout: the low `column_bits` select the byte within a
// row, bits [row_shift, row_shift + row_bits) select the row, and the bits in
// between are bank bits. Bank bit i is parity(pa & bank_fns[i]). The mapping
// is a bijection iff the masks restricted to the bank bits are invertible.
struct DramConfig {
  std::vector<std::uint64_t> bank_fns{0x12000, 0x24000, 0x48000};
  unsigned column_bits = 13;
  unsigned row_shift = 16;
  unsigned row_bits = 10;

  Nanos t_rc = 50;
  Nanos refresh_period = 64 * kMilli;
  unsigned max_distance = 6;
  double weight_decay = 0.5;
  std::uint64_t hc_first = 20000;
  // Per-row threshold is hc_first * (1 + U[0, hc_spread)).
  double hc_spread = 0.0;

  Nanos latency_hit = 10;
  Nanos latency_closed = 25;
  Nanos latency_conflict = 60;
  Nanos fault_service_time = 1 * kMicro;

  std::uint64_t vuln_seed = 1;
  double flip_density = 0.05;
  unsigned max_cells_per_row = 4;

  std::uint64_t banks() const { return 1ULL << bank_fns.size(); }
  std::uint64_t rows_per_bank() const { return 1ULL << row_bits; }
  std::uint64_t row_size() const { return 1ULL << column_bits; }
  std::uint64_t total_bytes() const { return 1ULL << (row_shift + row_bits); }
  std::uint64_t total_pages() const { return total_bytes() >> kPageShift; }
  std::uint64_t bank_bits_mask() const;

  // Throws ConfigError naming the violated constraint.
  void validate() const;
};

struct DramAddress {
  std::uint32_t bank = 0;
  std::uint32_t row = 0;
  std::uint32_t column = 0;
  bool operator==(const DramAddress&) const = default;
};

struct RowId {
  std::uint32_t bank = 0;
  std::uint32_t row = 0;
  auto operator<=>(const RowId&) const = default;
};

enum class LatencyClass { Hit, Closed, Conflict };

// Who issued an activation. Only user-originated activations count as
// hammering for the unrefreshed-span metric; all of them disturb.
enum class Origin : std::uint8_t { User, Kernel };

struct FlippableCell {
  std::uint32_t offset = 0;  // byte within the row
  std::uint8_t bit = 0;
  bool to_one = true;        // 0->1 when true, 1->0 otherwise
  bool operator==(const FlippableCell&) const = default;
};

struct FlipEvent {
  Nanos time = 0;
  RowId row;
  PhysAddr pa = 0;
  std::uint8_t bit = 0;
  bool to_one = true;
};

// Disturbance is kept in fixed point (1 activation = kUnit) so that
// accumulation is exact and order independent.
inline constexpr std::uint64_t kDisturbShift = 16;
inline constexpr std::uint64_t kUnit = 1ULL << kDisturbShift;

struct RowState {
  std::uint64_t disturbance = 0;
  Nanos last_recharge = 0;
  std::vector<FlippableCell> flippable_cells;
  std::uint64_t hc = 0;
  bool flipped_in_window = false;
  // Span of user-originated disturbance since the last recharge.
  bool hammered = false;
  Nanos hammer_first = 0;
  Nanos hammer_last = 0;
  Nanos max_hammer_span = 0;
};

struct AccessOutcome {
  Nanos latency = 0;
  LatencyClass cls = LatencyClass::Hit;
  std::vector<FlipEvent> flipped;
};

struct ActivationRecord {
  Nanos time = 0;
  RowId row;
  Origin origin = Origin::User;
  bool operator==(const ActivationRecord&) const = default;
};

class ActivationListener {
 public:
  virtual ~ActivationListener() = default;
  virtual void on_activation(RowId row, Nanos now) = 0;
};

class Dram {
 public:
  explicit Dram(DramConfig config);

  const DramConfig& config() const { return config_; }

  DramAddress map_address(PhysAddr pa) const;
  // Inverse of map_address.
  PhysAddr to_physical(DramAddress addr) const;
  // Distinct (bank, row) pairs touched by [pa, pa + length).
  std::vector<RowId> footprint(PhysAddr pa, std::uint64_t length) const;

  AccessOutcome activate(DramAddress addr, Nanos now, Origin origin = Origin::User);
  AccessOutcome access(PhysAddr pa, Nanos now, Origin origin = Origin::User) {
    return activate(map_address(pa), now, origin);
  }

  std::vector<RowId> auto_refresh_tick(Nanos now);
  void refresh_row(std::uint32_t bank, std::uint32_t row, Nanos now);
  void seed_vulnerability(std::uint64_t seed, double flip_density);

  const RowState& row_state(RowId id) const { return rows_[index(id)]; }
  RowState& mutable_row_state(RowId id) { return rows_[index(id)]; }
  bool is_open(RowId id) const;
  // Weight of an activation d rows away, in fixed point.
  std::uint64_t weight(unsigned distance) const { return weights_[distance]; }
  std::uint64_t hc_units(RowId id) const { return rows_[index(id)].hc << kDisturbShift; }

  // Longest user-disturbance span for a row, including the open window.
  Nanos hammer_span(RowId id) const;

  std::uint8_t read_byte(PhysAddr pa) const;
  void write_byte(PhysAddr pa, std::uint8_t v);
  std::uint64_t read_u64(PhysAddr pa) const;
  void write_u64(PhysAddr pa, std::uint64_t v);
  void read_page(Ppn ppn, std::span<std::uint8_t> out) const;
  void write_page(Ppn ppn, std::span<const std::uint8_t> in);

  void set_listener(ActivationListener* l) { listener_ = l; }
  void set_flip_callback(std::function<void(const FlipEvent&)> cb) { on_flip_ = std::move(cb); }
  // Every activation is appended to `log` while set.
  void set_activation_log(std::vector<ActivationRecord>* log) { log_ = log; }
  void set_capture(std::vector<ActivationRecord>* capture) { capture_ = capture; }

  // Replays `k` more copies of a steady-state iteration (captured activations
  // with absolute times, period `dt`) in bulk. The caller guarantees the
  // iteration is periodic and that no capped row reaches its threshold.
  void fast_forward(std::span<const ActivationRecord> iteration, std::uint64_t k, Nanos dt);
  // Largest k for which fast_forward cannot cross a flip threshold.
  std::uint64_t max_repeat(std::span<const ActivationRecord> iteration) const;

  std::uint64_t activations() const { return activations_; }
  std::uint64_t flips() const { return flips_; }
  std::uint64_t rows_total() const { return rows_.size(); }
  RowId row_at(std::size_t index) const;

 private:
  std::size_t index(RowId id) const { return std::size_t{id.bank} * config_.rows_per_bank() + id.row; }
  void recharge(RowState& r, Nanos now);
  void disturb(RowId victim, std::uint64_t amount, Nanos now, Origin origin, std::vector<FlipEvent>& out);
  // Neighbor rows and their fixed-point gain from one iteration.
  std::vector<std::pair<RowId, std::uint64_t>> iteration_gains(
      std::span<const ActivationRecord> iteration, bool user_only) const;

  using Page = std::array<std::uint8_t, kPageSize>;
  const Page* page_ptr(Ppn ppn) const;
  Page& page_ref(Ppn ppn);

  DramConfig config_;
  std::vector<std::uint64_t> weights_;
  std::vector<RowState> rows_;
  std::vector<std::int64_t> open_row_;  // -1 when the bank is idle
  std::vector<Nanos> bank_ready_;
  std::vector<std::unique_ptr<Page>> pages_;

  ActivationListener* listener_ = nullptr;
  std::function<void(const FlipEvent&)> on_flip_;
  std::vector<ActivationRecord>* log_ = nullptr;
  std::vector<ActivationRecord>* capture_ = nullptr;
  std::uint64_t activations_ = 0;
  std::uint64_t flips_ = 0;
};

}  // namespace trrsim
