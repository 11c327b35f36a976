#include "trrsim/mapping_probe.hpp"

#include <algorithm>
#include <bit>
#include <functional>
#include <set>

#include "trrsim/gf2.hpp"

namespace trrsim {

MappingProbe::MappingProbe(Dram& dram, Clock& clock, ProbeOptions options)
    : dram_(dram), clock_(clock), options_(options), rng_(options.seed) {}

double MappingProbe::conflict_cutoff() const {
  const DramConfig& c = dram_.config();
  return (static_cast<double>(c.latency_closed) + static_cast<double>(c.latency_conflict)) / 2.0;
}

LatencySample MappingProbe::measure_pair(PhysAddr pa_a, PhysAddr pa_b) {
  LatencySample s{pa_a, pa_b, 0, false};
  Nanos last = 0;
  for (PhysAddr pa : {pa_a, pa_b, pa_a, pa_b}) {
    AccessOutcome o = dram_.access(pa, clock_.now);
    clock_.now += o.latency;
    last = o.latency;
  }
  s.latency = static_cast<double>(last);
  if (options_.noise_sigma > 0) s.latency += std::normal_distribution<double>(0.0, options_.noise_sigma)(rng_);
  s.conflict = s.latency >= conflict_cutoff();
  ++samples_;
  return s;
}

ProbeResult MappingProbe::recover_bank_functions(std::size_t sample_budget, BitRange bits) {
  ProbeResult res;
  if (bits.hi < bits.lo || bits.hi >= 64) throw ConfigError("probe: invalid bit range");
  const std::uint64_t total = dram_.config().total_bytes();
  // Clustering costs about one comparison per existing cluster, so the pool
  // is sized for the worst case of sixteen banks.
  const std::size_t pool = std::max<std::size_t>(2, sample_budget / 9);
  std::vector<PhysAddr> addrs(pool);
  for (PhysAddr& a : addrs) a = (rng_() % total) & ~(kLineSize - 1);

  std::vector<std::vector<PhysAddr>> clusters;
  std::size_t used = 0;
  for (PhysAddr a : addrs) {
    bool placed = false;
    for (auto& c : clusters) {
      if (used == sample_budget) break;
      ++used;
      if (measure_pair(c.front(), a).conflict) {
        c.push_back(a);
        placed = true;
        break;
      }
    }
    if (used == sample_budget && !placed) {
      if (clusters.empty()) clusters.push_back({a});
      res.complete = false;
      break;
    }
    if (!placed) clusters.push_back({a});
    ++res.addresses;
  }
  res.samples = used;
  res.clusters = clusters.size();
  if (clusters.size() < 2) return res;

  std::vector<std::uint64_t> kept;
  const unsigned width = bits.hi - bits.lo + 1;
  const unsigned max_bits = std::min(options_.max_mask_bits, width);
  // Enumerate masks over the range with 1..max_bits set bits.
  std::function<void(unsigned, std::uint64_t)> visit = [&](unsigned next, std::uint64_t mask) {
    if (mask) {
      bool constant = true;
      bool seen0 = false, seen1 = false;
      for (const auto& c : clusters) {
        const bool p = gf2::parity(c.front() & mask);
        for (PhysAddr a : c)
          if (gf2::parity(a & mask) != p) {
            constant = false;
            break;
          }
        if (!constant) break;
        (p ? seen1 : seen0) = true;
      }
      if (constant && seen0 && seen1) kept.push_back(mask);
    }
    if (static_cast<unsigned>(std::popcount(mask)) == max_bits) return;
    for (unsigned b = next; b <= bits.hi; ++b) visit(b + 1, mask | (1ULL << b));
  };
  visit(bits.lo, 0);
  res.masks = gf2::reduced_basis(kept);
  // Too few distinct banks leave spurious masks in the span; the observed
  // banks must then cover fewer classes than the basis implies.
  std::set<std::uint64_t> classes;
  for (const auto& c : clusters) {
    std::uint64_t sig = 0;
    for (std::size_t i = 0; i < res.masks.size(); ++i) sig |= std::uint64_t(gf2::parity(c.front() & res.masks[i])) << i;
    classes.insert(sig);
  }
  if (res.masks.size() >= 20 || classes.size() != (std::size_t{1} << res.masks.size())) res.complete = false;
  return res;
}

}  // namespace trrsim
