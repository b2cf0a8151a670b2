#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "chordseq/corpus.hpp"
#include "chordseq/errors.hpp"

namespace chordseq {

// One probability row over the alphabet per output step.
class PredictionDistribution {
public:
  PredictionDistribution() = default;
  PredictionDistribution(std::size_t steps, std::size_t alphabet_size)
      : steps_(steps), width_(alphabet_size), probs_(steps * alphabet_size, 0.0) {}

  std::size_t steps() const { return steps_; }
  std::size_t alphabet_size() const { return width_; }

  std::span<double> row(std::size_t k) { return {probs_.data() + k * width_, width_}; }
  std::span<const double> row(std::size_t k) const { return {probs_.data() + k * width_, width_}; }

  double& at(std::size_t k, std::size_t c) { return probs_[k * width_ + c]; }
  double at(std::size_t k, std::size_t c) const { return probs_[k * width_ + c]; }

  // Lowest index among the maximal entries.
  std::size_t argmax(std::size_t k) const {
    const auto r = row(k);
    std::size_t best = 0;
    for (std::size_t c = 1; c < r.size(); ++c) {
      if (r[c] > r[best]) best = c;
    }
    return best;
  }

  bool is_valid(double tol = 1e-9) const {
    for (std::size_t k = 0; k < steps_; ++k) {
      double sum = 0.0;
      for (double p : row(k)) {
        if (!(p >= 0.0)) return false;
        sum += p;
      }
      if (std::abs(sum - 1.0) > tol) return false;
    }
    return true;
  }

  friend bool operator==(const PredictionDistribution&, const PredictionDistribution&) = default;

private:
  std::size_t steps_ = 0;
  std::size_t width_ = 0;
  std::vector<double> probs_;
};

// What a predictor sees: the 8 input chords plus how many of the leading ones
// are song-start padding rather than genuine no-chords.
struct InputWindow {
  ChordWindow chords{};
  int leading_pad = 0;
};

inline InputWindow input_of(const WindowPair& w) { return {w.input, w.leading_pad}; }

}  // namespace chordseq
