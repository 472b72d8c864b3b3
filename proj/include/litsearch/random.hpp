#pragma once

#include <cstdint>
#include <random>

namespace litsearch {

/// Independent generator for (seed, purpose tag) pairs.
inline std::mt19937_64 seeded_stream(std::uint64_t seed, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32), 0x9e3779b9u};
  return std::mt19937_64(seq);
}

}  // namespace litsearch
