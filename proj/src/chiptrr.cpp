#include "trrsim/chiptrr.hpp"

#include <algorithm>

namespace trrsim {

ChipTrr::ChipTrr(Dram& dram, ChipTrrParams params)
    : dram_(dram), params_(params), tables_(dram.config().banks()) {
  if (params_.k > 0 && params_.trr_threshold == 0) throw ConfigError("chiptrr.threshold must be positive");
}

void ChipTrr::on_activation(RowId row, Nanos now) { observe_activation(row.bank, row.row, now); }

std::vector<RowId> ChipTrr::observe_activation(std::uint32_t bank, std::uint32_t row, Nanos now) {
  std::vector<RowId> refreshed;
  if (params_.k == 0) return refreshed;
  auto& t = tables_.at(bank);
  auto it = std::find_if(t.begin(), t.end(), [&](const TrackerEntry& e) { return e.row == row; });
  if (it == t.end()) {
    if (t.size() < params_.k) {
      t.push_back({row, 1});
      it = t.end() - 1;
    } else {
      for (TrackerEntry& e : t) --e.count;
      std::erase_if(t, [](const TrackerEntry& e) { return e.count == 0; });
      return refreshed;
    }
  } else {
    ++it->count;
  }
  if (it->count < params_.trr_threshold) return refreshed;

  t.erase(it);
  ++triggers_;
  const std::int64_t rows = static_cast<std::int64_t>(dram_.config().rows_per_bank());
  const std::int64_t d_max = dram_.config().max_distance;
  for (std::int64_t d = -d_max; d <= d_max; ++d) {
    const std::int64_t v = std::int64_t{row} + d;
    if (d == 0 || v < 0 || v >= rows) continue;
    dram_.refresh_row(bank, static_cast<std::uint32_t>(v), now);
    refreshed.push_back({bank, static_cast<std::uint32_t>(v)});
  }
  return refreshed;
}

void ChipTrr::reset_on_refresh_window() {
  for (auto& t : tables_) t.clear();
}

}  // namespace trrsim
