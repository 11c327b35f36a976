#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace trrsim {

using Nanos = std::uint64_t;
using PhysAddr = std::uint64_t;
using VirtAddr = std::uint64_t;
using Ppn = std::uint64_t;
using Pid = std::uint32_t;

inline constexpr std::uint64_t kPageShift = 12;
inline constexpr std::uint64_t kPageSize = 1ULL << kPageShift;
inline constexpr std::uint64_t kHugeShift = 21;
inline constexpr std::uint64_t kHugeSize = 1ULL << kHugeShift;
inline constexpr std::uint64_t kPagesPerHuge = kHugeSize / kPageSize;
inline constexpr std::uint64_t kLineSize = 64;

inline constexpr Nanos kMicro = 1000;
inline constexpr Nanos kMilli = 1000 * kMicro;
inline constexpr Nanos kSecond = 1000 * kMilli;

constexpr PhysAddr page_base(Ppn ppn) { return ppn << kPageShift; }
constexpr Ppn page_of(PhysAddr pa) { return pa >> kPageShift; }
constexpr PhysAddr line_of(PhysAddr pa) { return pa & ~(kLineSize - 1); }

// Invalid physical or virtual address.
class AddressError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Rejected configuration; carries the violated constraint.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Caller broke an operation precondition (double free, non-leaf arm, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A scenario cannot be set up (e.g. not enough vulnerable rows).
class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Internal consistency check failed.
class InvariantError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class OutOfMemory : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Segmentation error: access outside any VMA.
class SegmentationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace trrsim
