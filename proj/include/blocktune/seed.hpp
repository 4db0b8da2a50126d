#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace blocktune {

using Rng = std::mt19937_64;

// Deterministic child seed for a (base, tag...) path.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  std::vector<std::uint32_t> words;
  words.reserve(2 + 2 * tags.size());
  auto push = [&words](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(base);
  for (auto t : tags) push(t);
  std::seed_seq seq(words.begin(), words.end());
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

}  // namespace blocktune
