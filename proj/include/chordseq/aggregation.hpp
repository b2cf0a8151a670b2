#pragma once

// Multi-scale aggregation of one-hot chord windows. A sequence at scale n
// holds 8/n count vectors; each is the sum of the two vectors it covers at
// scale n/2, so every vector at scale n sums to n.

#include <cstddef>
#include <span>
#include <vector>

#include "chordseq/chord.hpp"
#include "chordseq/corpus.hpp"
#include "chordseq/errors.hpp"

namespace chordseq {

inline constexpr std::array<int, 3> kScales{1, 2, 4};

struct ScaleSequence {
  int scale = 1;
  std::size_t width = 0;      // alphabet size
  std::vector<int> counts;    // steps() x width, row-major

  std::size_t steps() const { return width == 0 ? 0 : counts.size() / width; }

  std::span<const int> vector(std::size_t i) const { return {counts.data() + i * width, width}; }
  std::span<int> vector(std::size_t i) { return {counts.data() + i * width, width}; }

  friend bool operator==(const ScaleSequence&, const ScaleSequence&) = default;
};

inline ScaleSequence one_hot_window(std::span<const ChordSymbol> window, const Alphabet& a) {
  ScaleSequence s;
  s.scale = 1;
  s.width = a.size();
  s.counts.assign(window.size() * a.size(), 0);
  for (std::size_t i = 0; i < window.size(); ++i) {
    s.counts[i * a.size() + static_cast<std::size_t>(a.index(window[i]))] = 1;
  }
  return s;
}

inline ScaleSequence aggregate(const ScaleSequence& s) {
  if (s.steps() % 2 != 0) throw OddLength(std::to_string(s.steps()) + " vectors at scale " + std::to_string(s.scale));
  ScaleSequence out;
  out.scale = s.scale * 2;
  out.width = s.width;
  out.counts.assign(s.counts.size() / 2, 0);
  for (std::size_t i = 0; i < out.steps(); ++i) {
    const auto lhs = s.vector(2 * i);
    const auto rhs = s.vector(2 * i + 1);
    auto dst = out.vector(i);
    for (std::size_t k = 0; k < s.width; ++k) dst[k] = lhs[k] + rhs[k];
  }
  return out;
}

// Aggregates a scale-1 sequence up to `scale` (1, 2 or 4).
inline ScaleSequence aggregate_to(ScaleSequence s, int scale) {
  while (s.scale < scale) s = aggregate(s);
  return s;
}

// Window at the requested scale, as a dense vector of doubles ready to feed a
// network (step-major).
inline std::vector<double> scaled_features(std::span<const ChordSymbol> window, const Alphabet& a, int scale) {
  const ScaleSequence s = aggregate_to(one_hot_window(window, a), scale);
  return {s.counts.begin(), s.counts.end()};
}

}  // namespace chordseq
