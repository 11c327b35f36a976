#include "trrsim/gf2.hpp"

#include <algorithm>
#include <bit>

namespace trrsim::gf2 {

std::vector<std::uint64_t> reduced_basis(std::span<const std::uint64_t> vectors) {
  std::vector<std::uint64_t> basis;
  for (std::uint64_t v : vectors) {
    for (std::uint64_t b : basis) {
      std::uint64_t lead = std::bit_floor(b);
      if (v & lead) v ^= b;
    }
    if (v == 0) continue;
    std::uint64_t lead = std::bit_floor(v);
    for (std::uint64_t& b : basis)
      if (b & lead) b ^= v;
    basis.push_back(v);
  }
  std::sort(basis.begin(), basis.end(), std::greater<>());
  return basis;
}

std::size_t rank(std::span<const std::uint64_t> vectors) {
  return reduced_basis(vectors).size();
}

bool same_span(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b) {
  return reduced_basis(a) == reduced_basis(b);
}

bool in_span(std::span<const std::uint64_t> basis, std::uint64_t v) {
  std::vector<std::uint64_t> all(basis.begin(), basis.end());
  std::size_t before = rank(all);
  all.push_back(v);
  return rank(all) == before;
}

std::optional<std::uint64_t> solve_parities(std::span<const std::uint64_t> masks,
                                            std::uint64_t target,
                                            std::uint64_t free_bits) {
  struct Row {
    std::uint64_t coeffs;
    int rhs;
  };
  std::vector<Row> rows;
  rows.reserve(masks.size());
  for (std::size_t i = 0; i < masks.size(); ++i)
    rows.push_back({masks[i] & free_bits, static_cast<int>((target >> i) & 1)});

  std::vector<std::uint64_t> pivots;
  std::size_t next = 0;
  for (int bit = 63; bit >= 0 && next < rows.size(); --bit) {
    std::uint64_t m = 1ULL << bit;
    if (!(free_bits & m)) continue;
    std::size_t sel = next;
    while (sel < rows.size() && !(rows[sel].coeffs & m)) ++sel;
    if (sel == rows.size()) continue;
    std::swap(rows[sel], rows[next]);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (r != next && (rows[r].coeffs & m)) {
        rows[r].coeffs ^= rows[next].coeffs;
        rows[r].rhs ^= rows[next].rhs;
      }
    }
    pivots.push_back(m);
    ++next;
  }
  for (std::size_t r = next; r < rows.size(); ++r)
    if (rows[r].rhs) return std::nullopt;
  // Non-pivot free bits are left at zero.
  std::uint64_t x = 0;
  for (std::size_t r = 0; r < next; ++r)
    if (rows[r].rhs) x |= pivots[r];
  return x;
}

}  // namespace trrsim::gf2
