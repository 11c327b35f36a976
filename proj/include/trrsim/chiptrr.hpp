#pragma once

#include <cstdint>
#include <vector>

#include "trrsim/dram.hpp"

namespace trrsim {

struct ChipTrrParams {
  unsigned k = 4;
  std::uint64_t trr_threshold = 4000;
};

struct TrackerEntry {
  std::uint32_t row = 0;
  std::uint64_t count = 0;
};

// Per-bank frequent-items tracker living inside the DRAM device. When a
// tracked row reaches the threshold its neighbors are recharged.
class ChipTrr : public ActivationListener {
 public:
  ChipTrr(Dram& dram, ChipTrrParams params);

  void on_activation(RowId row, Nanos now) override;
  // Returns the refreshed neighbor rows, empty when nothing triggered.
  std::vector<RowId> observe_activation(std::uint32_t bank, std::uint32_t row, Nanos now);
  void reset_on_refresh_window();

  const std::vector<TrackerEntry>& table(std::uint32_t bank) const { return tables_.at(bank); }
  const ChipTrrParams& params() const { return params_; }
  std::uint64_t triggers() const { return triggers_; }

 private:
  Dram& dram_;
  ChipTrrParams params_;
  std::vector<std::vector<TrackerEntry>> tables_;
  std::uint64_t triggers_ = 0;
};

}  // namespace trrsim
