#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "trrsim/dram.hpp"
#include "trrsim/vm_mmu.hpp"

namespace trrsim {

struct LatencySample {
  PhysAddr pa_a = 0;
  PhysAddr pa_b = 0;
  double latency = 0;
  bool conflict = false;
};

struct ProbeOptions {
  std::uint64_t seed = 1;
  double noise_sigma = 0.0;  // Gaussian timing noise, ns
  unsigned max_mask_bits = 4;
};

struct BitRange {
  unsigned lo = 6;
  unsigned hi = 22;  // inclusive
};

struct ProbeResult {
  std::vector<std::uint64_t> masks;  // reduced GF(2) basis
  bool complete = true;
  std::size_t samples = 0;
  std::size_t addresses = 0;
  std::size_t clusters = 0;
};

// Recovers the bank XOR functions from row-buffer conflict timing alone.
class MappingProbe {
 public:
  MappingProbe(Dram& dram, Clock& clock, ProbeOptions options = {});

  LatencySample measure_pair(PhysAddr pa_a, PhysAddr pa_b);
  double conflict_cutoff() const;
  ProbeResult recover_bank_functions(std::size_t sample_budget, BitRange bits = {});
  std::size_t samples_taken() const { return samples_; }

 private:
  Dram& dram_;
  Clock& clock_;
  ProbeOptions options_;
  std::mt19937_64 rng_;
  std::size_t samples_ = 0;
};

}  // namespace trrsim
