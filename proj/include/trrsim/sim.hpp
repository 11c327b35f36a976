#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "trrsim/chiptrr.hpp"
#include "trrsim/dram.hpp"
#include "trrsim/os_kernel.hpp"
#include "trrsim/softtrr.hpp"
#include "trrsim/vm_mmu.hpp"

namespace trrsim {

enum class DefenseMode { None, SoftTrr, ChipTrr };

const char* defense_name(DefenseMode mode);
DefenseMode parse_defense(const std::string& s);

struct SimConfig {
  DramConfig dram;
  MmuConfig mmu;
  DefenseMode defense = DefenseMode::None;
  DefenseParams softtrr;
  ChipTrrParams chiptrr;
  Nanos sample_interval = 1 * kMilli;  // 0 disables sampling
  bool fast_forward = true;
  std::uint64_t reserved_low_pages = 1;
};

// One row of the metrics time series.
struct Sample {
  Nanos sim_ns = 0;
  std::uint64_t rsvd_faults = 0;
  std::uint64_t refreshes = 0;
  std::uint64_t leak_events = 0;
  std::uint64_t pt_nodes = 0;
  std::uint64_t adj_nodes = 0;
  std::uint64_t ring_capacity = 0;
  std::uint64_t flips_pt = 0;
  std::uint64_t flips_other = 0;
  bool operator==(const Sample&) const = default;
};

// Owns every component of one simulation and drives the periodic events:
// DRAM auto refresh, the defense timer and metric sampling. Events fire at
// iteration boundaries, i.e. whenever advance_events() is called.
class Simulation {
 public:
  explicit Simulation(SimConfig config);
  ~Simulation();
  Simulation(const Simulation&) = delete;
  Simulation& operator=(const Simulation&) = delete;

  const SimConfig& config() const { return config_; }
  Clock& clock() { return clock_; }
  Nanos now() const { return clock_.now; }
  Dram& dram() { return *dram_; }
  Mmu& mmu() { return *mmu_; }
  Kernel& kernel() { return *kernel_; }
  SoftTrr* softtrr() { return softtrr_.get(); }
  ChipTrr* chiptrr() { return chiptrr_.get(); }

  // Activates the configured defense at the current time. SoftTRR collects
  // existing page tables and arms immediately; its timer then runs every
  // timer_inr from now.
  void load_defense();
  bool defense_loaded() const { return loaded_; }

  // Fires all events due at or before now. Returns the number fired.
  std::size_t advance_events();
  // Idles until `t`, firing events on the way.
  void run_until(Nanos t);
  Nanos next_event_time() const;
  Nanos next_defense_timer() const { return next_timer_; }
  std::uint64_t events_fired() const { return events_fired_; }

  // Runs `body` repeatedly until the clock reaches `end` (or `stop` returns
  // true). Steady-state iterations are replayed in bulk. Returns the number
  // of iterations executed.
  std::uint64_t run_loop(Nanos end, const std::function<void()>& body,
                         const std::function<bool()>& stop = nullptr);
  std::uint64_t bulk_iterations() const { return bulk_iterations_; }

  std::uint64_t flips_pt() const { return flips_pt_; }
  std::uint64_t flips_other() const { return flips_other_; }
  const std::vector<FlipEvent>& flip_log() const { return flip_log_; }
  const std::vector<Sample>& samples() const { return samples_; }
  Sample snapshot() const;

  // Longest window of user-caused disturbance without a recharge, over the
  // rows currently holding L1PT pages.
  Nanos max_unrefreshed_hammer_ns() const;
  std::vector<RowId> l1pt_rows() const;

 private:
  void on_flip(const FlipEvent& ev);

  SimConfig config_;
  Clock clock_;
  std::unique_ptr<Dram> dram_;
  std::unique_ptr<Mmu> mmu_;
  std::unique_ptr<Kernel> kernel_;
  std::unique_ptr<SoftTrr> softtrr_;
  std::unique_ptr<ChipTrr> chiptrr_;
  bool loaded_ = false;

  Nanos next_refresh_ = 0;
  Nanos next_timer_ = 0;
  Nanos next_sample_ = 0;
  std::uint64_t events_fired_ = 0;
  std::uint64_t bulk_iterations_ = 0;

  std::uint64_t flips_pt_ = 0;
  std::uint64_t flips_other_ = 0;
  std::vector<FlipEvent> flip_log_;
  std::vector<Sample> samples_;
};

}  // namespace trrsim
