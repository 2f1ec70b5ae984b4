#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fairmarket {

using Rng = std::mt19937_64;

/// Stream tags keep sub-streams for different purposes disjoint.
enum class StreamTag : std::uint64_t {
  weather = 1,
  household = 2,
  episode = 3,
  policy = 4,
  init = 5,
  shuffle = 6,
  evaluation = 7,
};

/// Derives an independent generator from the master seed and a path of
/// indices, so any single (episode, agent) stream is replayable on its own.
inline Rng derive_stream(std::uint64_t master, StreamTag tag,
                         std::initializer_list<std::uint64_t> path = {}) {
  std::seed_seq::result_type words[2 + 2 * 8] = {};
  std::size_t n = 0;
  auto push = [&](std::uint64_t v) {
    words[n++] = static_cast<std::seed_seq::result_type>(v & 0xffffffffu);
    words[n++] = static_cast<std::seed_seq::result_type>(v >> 32);
  };
  push(master);
  push(static_cast<std::uint64_t>(tag));
  for (auto v : path) {
    if (n + 2 > std::size(words)) break;
    push(v);
  }
  std::seed_seq seq(words, words + n);
  return Rng(seq);
}

}  // namespace fairmarket
