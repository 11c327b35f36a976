#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace trrsim::gf2 {

inline int parity(std::uint64_t x) { return __builtin_parityll(x); }

// Reduced row-echelon basis of the span of `vectors`, sorted descending by
// leading bit. Two sets span the same space iff their reduced bases match.
std::vector<std::uint64_t> reduced_basis(std::span<const std::uint64_t> vectors);

std::size_t rank(std::span<const std::uint64_t> vectors);

bool same_span(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b);

bool in_span(std::span<const std::uint64_t> basis, std::uint64_t v);

// Finds x with parity(masks[i] & x) == bit i of `target` for every i, using
// only the bits in `free_bits`. Returns nullopt when no such x exists.
std::optional<std::uint64_t> solve_parities(std::span<const std::uint64_t> masks,
                                            std::uint64_t target,
                                            std::uint64_t free_bits);

}  // namespace trrsim::gf2
