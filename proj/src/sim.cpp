#include "trrsim/sim.hpp"

#include <algorithm>
#include <limits>

namespace trrsim {

const char* defense_name(DefenseMode mode) {
  switch (mode) {
    case DefenseMode::None: return "none";
    case DefenseMode::SoftTrr: return "softtrr";
    case DefenseMode::ChipTrr: return "chiptrr";
  }
  return "?";
}

DefenseMode parse_defense(const std::string& s) {
  if (s == "none") return DefenseMode::None;
  if (s == "softtrr") return DefenseMode::SoftTrr;
  if (s == "chiptrr") return DefenseMode::ChipTrr;
  throw ConfigError("defense.mode must be one of none|softtrr|chiptrr, got '" + s + "'");
}

namespace {
constexpr Nanos kNever = std::numeric_limits<Nanos>::max();
}

Simulation::Simulation(SimConfig config) : config_(std::move(config)) {
  if (config_.defense == DefenseMode::SoftTrr) config_.softtrr.validate(config_.dram);
  dram_ = std::make_unique<Dram>(config_.dram);
  mmu_ = std::make_unique<Mmu>(*dram_, clock_, config_.mmu);
  kernel_ = std::make_unique<Kernel>(*dram_, *mmu_, clock_, config_.reserved_low_pages);
  dram_->set_flip_callback([this](const FlipEvent& ev) { on_flip(ev); });
  next_refresh_ = config_.dram.refresh_period;
  next_timer_ = kNever;
  next_sample_ = config_.sample_interval ? config_.sample_interval : kNever;
}

Simulation::~Simulation() {
  dram_->set_listener(nullptr);
  softtrr_.reset();
}

void Simulation::load_defense() {
  if (loaded_) return;
  loaded_ = true;
  switch (config_.defense) {
    case DefenseMode::None: break;
    case DefenseMode::SoftTrr:
      softtrr_ = std::make_unique<SoftTrr>(*dram_, *mmu_, *kernel_, clock_, config_.softtrr);
      softtrr_->load();
      next_timer_ = clock_.now + config_.softtrr.timer_inr;
      break;
    case DefenseMode::ChipTrr:
      chiptrr_ = std::make_unique<ChipTrr>(*dram_, config_.chiptrr);
      dram_->set_listener(chiptrr_.get());
      break;
  }
}

void Simulation::on_flip(const FlipEvent& ev) {
  flip_log_.push_back(ev);
  if (kernel_->frame(page_of(ev.pa)).role == PageRole::L1pt)
    ++flips_pt_;
  else
    ++flips_other_;
}

Nanos Simulation::next_event_time() const { return std::min({next_refresh_, next_timer_, next_sample_}); }

std::size_t Simulation::advance_events() {
  std::size_t fired = 0;
  for (;;) {
    const Nanos t = next_event_time();
    if (t > clock_.now) break;
    ++fired;
    if (t == next_refresh_) {
      dram_->auto_refresh_tick(t);
      if (chiptrr_) chiptrr_->reset_on_refresh_window();
      next_refresh_ += config_.dram.refresh_period;
    } else if (t == next_timer_) {
      softtrr_->on_timer(t);
      next_timer_ += config_.softtrr.timer_inr;
    } else {
      Sample s = snapshot();
      s.sim_ns = t;
      samples_.push_back(s);
      next_sample_ += config_.sample_interval;
    }
  }
  events_fired_ += fired;
  return fired;
}

void Simulation::run_until(Nanos t) {
  advance_events();
  while (next_event_time() <= t) {
    clock_.now = std::max(clock_.now, next_event_time());
    advance_events();
  }
  clock_.now = std::max(clock_.now, t);
  advance_events();
}

Sample Simulation::snapshot() const {
  Sample s;
  s.sim_ns = clock_.now;
  if (softtrr_) {
    const DefenseCounters& c = softtrr_->counters();
    s.rsvd_faults = c.rsvd_faults;
    s.refreshes = c.refreshes;
    s.leak_events = c.leak_events;
    const Footprint f = softtrr_->footprint();
    s.pt_nodes = f.pt_nodes;
    s.adj_nodes = f.adj_nodes;
    s.ring_capacity = f.ring_capacity;
  }
  s.flips_pt = flips_pt_;
  s.flips_other = flips_other_;
  return s;
}

std::uint64_t Simulation::run_loop(Nanos end, const std::function<void()>& body,
                                   const std::function<bool()>& stop) {
  std::vector<ActivationRecord> prev, cur;
  Nanos prev_dt = 0;
  bool prev_clean = false;
  std::uint64_t iterations = 0;
  const bool ff_allowed = config_.fast_forward && !chiptrr_;

  while (clock_.now < end) {
    if (advance_events()) prev_clean = false;
    if (clock_.now >= end) break;

    const Nanos t0 = clock_.now;
    const std::uint64_t faults0 = mmu_->faults_dispatched();
    const std::uint64_t flips0 = dram_->flips();
    const std::size_t allocs0 = kernel_->alloc_log().size();
    cur.clear();
    dram_->set_capture(&cur);
    body();
    dram_->set_capture(nullptr);
    ++iterations;
    const Nanos dt = clock_.now - t0;
    if (dt == 0) throw InvariantError("loop body did not advance simulated time");
    if (stop && stop()) break;

    const bool clean = ff_allowed && mmu_->faults_dispatched() == faults0 && dram_->flips() == flips0 &&
                       kernel_->alloc_log().size() == allocs0 && !cur.empty();
    bool periodic = clean && prev_clean && dt == prev_dt && cur.size() == prev.size();
    for (std::size_t i = 0; periodic && i < cur.size(); ++i)
      periodic = cur[i].row == prev[i].row && cur[i].origin == prev[i].origin && cur[i].time - prev[i].time == dt;

    if (periodic) {
      const Nanos now = clock_.now;
      const Nanos limit = std::min(next_event_time(), end);
      std::uint64_t k = limit > now ? (limit - 1 - now) / dt : 0;
      k = std::min(k, dram_->max_repeat(cur));
      if (k > 0) {
        dram_->fast_forward(cur, k, dt);
        clock_.now += k * dt;
        iterations += k;
        bulk_iterations_ += k;
        // Shift the captured trace so the next comparison stays aligned.
        for (ActivationRecord& r : cur) r.time += k * dt;
      }
    }
    std::swap(prev, cur);
    prev_dt = dt;
    prev_clean = clean;
  }
  return iterations;
}

std::vector<RowId> Simulation::l1pt_rows() const {
  std::vector<RowId> rows;
  for (Ppn p : kernel_->l1pt_pages())
    for (RowId r : dram_->footprint(page_base(p), kPageSize)) rows.push_back(r);
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  return rows;
}

Nanos Simulation::max_unrefreshed_hammer_ns() const {
  Nanos m = 0;
  for (RowId r : l1pt_rows()) m = std::max(m, dram_->hammer_span(r));
  return m;
}

}  // namespace trrsim
