#pragma once

// Chord symbols, the three hierarchical chord alphabets and the reductions
// between them.

#include <algorithm>
#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "chordseq/errors.hpp"

namespace chordseq {

using PitchClass = int;

// Order matters: it is the tie-break order for subset reduction and the
// order of qualities inside each alphabet.
enum class Quality : std::uint8_t {
  Maj,
  Min,
  Dim,
  Aug,
  Maj6,
  Min6,
  Maj7,
  Min7,
  MinMaj7,
  Dom7,
  Dim7,
  HDim7,
  Sus2,
  Sus4,
};

inline constexpr std::size_t kQualityCount = 14;

enum class TriadFamily : std::uint8_t { MajorThird, MinorThird, Other };

// Interval sets are 12-bit masks relative to the root (bit 0 = root).
using IntervalMask = std::uint16_t;

constexpr IntervalMask intervals_mask(std::initializer_list<int> semitones) {
  IntervalMask m = 0;
  for (int s : semitones) m = static_cast<IntervalMask>(m | (1u << (s % 12)));
  return m;
}

struct QualityInfo {
  Quality quality;
  std::string_view name;
  IntervalMask intervals;
  TriadFamily family;
  std::optional<Quality> triad;  // standard triad this quality reduces to
};

inline constexpr std::array<QualityInfo, kQualityCount> kQualityTable{{
    {Quality::Maj, "maj", intervals_mask({0, 4, 7}), TriadFamily::MajorThird, Quality::Maj},
    {Quality::Min, "min", intervals_mask({0, 3, 7}), TriadFamily::MinorThird, Quality::Min},
    {Quality::Dim, "dim", intervals_mask({0, 3, 6}), TriadFamily::MinorThird, Quality::Dim},
    {Quality::Aug, "aug", intervals_mask({0, 4, 8}), TriadFamily::MajorThird, Quality::Aug},
    {Quality::Maj6, "maj6", intervals_mask({0, 4, 7, 9}), TriadFamily::MajorThird, Quality::Maj},
    {Quality::Min6, "min6", intervals_mask({0, 3, 7, 9}), TriadFamily::MinorThird, Quality::Min},
    {Quality::Maj7, "maj7", intervals_mask({0, 4, 7, 11}), TriadFamily::MajorThird, Quality::Maj},
    {Quality::Min7, "min7", intervals_mask({0, 3, 7, 10}), TriadFamily::MinorThird, Quality::Min},
    {Quality::MinMaj7, "minmaj7", intervals_mask({0, 3, 7, 11}), TriadFamily::MinorThird, Quality::Min},
    {Quality::Dom7, "7", intervals_mask({0, 4, 7, 10}), TriadFamily::MajorThird, Quality::Maj},
    {Quality::Dim7, "dim7", intervals_mask({0, 3, 6, 9}), TriadFamily::MinorThird, Quality::Dim},
    {Quality::HDim7, "hdim7", intervals_mask({0, 3, 6, 10}), TriadFamily::MinorThird, Quality::Dim},
    {Quality::Sus2, "sus2", intervals_mask({0, 2, 7}), TriadFamily::Other, std::nullopt},
    {Quality::Sus4, "sus4", intervals_mask({0, 5, 7}), TriadFamily::Other, std::nullopt},
}};

constexpr const QualityInfo& quality_info(Quality q) {
  return kQualityTable[static_cast<std::size_t>(q)];
}

class ChordSymbol {
public:
  // Default-constructed symbol is no-chord.
  constexpr ChordSymbol() = default;
  constexpr ChordSymbol(PitchClass root, Quality quality)
      : root_(static_cast<std::int8_t>(((root % 12) + 12) % 12)), quality_(quality), nochord_(false) {}

  static constexpr ChordSymbol no_chord() { return ChordSymbol{}; }

  constexpr bool is_nochord() const { return nochord_; }
  constexpr PitchClass root() const { return root_; }
  constexpr Quality quality() const { return quality_; }

  friend constexpr bool operator==(const ChordSymbol& a, const ChordSymbol& b) {
    if (a.nochord_ || b.nochord_) return a.nochord_ == b.nochord_;
    return a.root_ == b.root_ && a.quality_ == b.quality_;
  }

  std::size_t hash() const {
    if (nochord_) return 0x9e3779b97f4a7c15ull;
    return static_cast<std::size_t>(root_) * 31u + static_cast<std::size_t>(quality_) + 1u;
  }

private:
  std::int8_t root_ = 0;
  Quality quality_ = Quality::Maj;
  bool nochord_ = true;
};

struct ChordSymbolHash {
  std::size_t operator()(const ChordSymbol& c) const { return c.hash(); }
};

// ---------------------------------------------------------------------------
// Pitch-class vectors

using PitchClassVector = std::array<std::uint8_t, 12>;

inline PitchClassVector pitch_class_vector(const ChordSymbol& c) {
  PitchClassVector v{};
  if (c.is_nochord()) return v;
  const IntervalMask mask = quality_info(c.quality()).intervals;
  for (int i = 0; i < 12; ++i) {
    if (mask & (1u << i)) v[static_cast<std::size_t>((c.root() + i) % 12)] = 1;
  }
  return v;
}

// ---------------------------------------------------------------------------
// Rendering and parsing

inline constexpr std::array<std::string_view, 12> kSharpNames{
    "C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"};

inline std::string render_chord(const ChordSymbol& c) {
  if (c.is_nochord()) return "N";
  std::string out(kSharpNames[static_cast<std::size_t>(c.root())]);
  out += ':';
  out += quality_info(c.quality()).name;
  return out;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto ws = [](char ch) { return ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n'; };
  while (!s.empty() && ws(s.front())) s.remove_prefix(1);
  while (!s.empty() && ws(s.back())) s.remove_suffix(1);
  return s;
}

// Shorthands accepted after the colon. Canonical names and their aliases map
// straight to an interval set; extended chords are resolved by the subset rule.
inline const std::unordered_map<std::string_view, IntervalMask>& shorthand_table() {
  static const std::unordered_map<std::string_view, IntervalMask> table = [] {
    std::unordered_map<std::string_view, IntervalMask> t;
    for (const auto& info : kQualityTable) t.emplace(info.name, info.intervals);
    const auto alias = [&t](std::string_view name, Quality q) { t.emplace(name, quality_info(q).intervals); };
    alias("", Quality::Maj);
    alias("M", Quality::Maj);
    alias("m", Quality::Min);
    alias("M7", Quality::Maj7);
    alias("m7", Quality::Min7);
    alias("dom7", Quality::Dom7);
    alias("m7b5", Quality::HDim7);
    alias("min7b5", Quality::HDim7);
    alias("hdim", Quality::HDim7);
    alias("o", Quality::Dim);
    alias("o7", Quality::Dim7);
    alias("+", Quality::Aug);
    alias("sus", Quality::Sus4);
    alias("6", Quality::Maj6);
    alias("m6", Quality::Min6);
    alias("mM7", Quality::MinMaj7);
    alias("mmaj7", Quality::MinMaj7);
    // extension-bearing shorthands (Harte-style)
    t.emplace("9", intervals_mask({0, 4, 7, 10, 2}));
    t.emplace("maj9", intervals_mask({0, 4, 7, 11, 2}));
    t.emplace("min9", intervals_mask({0, 3, 7, 10, 2}));
    t.emplace("minmaj9", intervals_mask({0, 3, 7, 11, 2}));
    t.emplace("11", intervals_mask({0, 4, 7, 10, 2, 5}));
    t.emplace("maj11", intervals_mask({0, 4, 7, 11, 2, 5}));
    t.emplace("min11", intervals_mask({0, 3, 7, 10, 2, 5}));
    t.emplace("13", intervals_mask({0, 4, 7, 10, 2, 5, 9}));
    t.emplace("maj13", intervals_mask({0, 4, 7, 11, 2, 5, 9}));
    t.emplace("min13", intervals_mask({0, 3, 7, 10, 2, 5, 9}));
    t.emplace("69", intervals_mask({0, 4, 7, 9, 2}));
    t.emplace("min69", intervals_mask({0, 3, 7, 9, 2}));
    t.emplace("7sus4", intervals_mask({0, 5, 7, 10}));
    t.emplace("aug7", intervals_mask({0, 4, 8, 10}));
    t.emplace("augmaj7", intervals_mask({0, 4, 8, 11}));
    t.emplace("1", intervals_mask({0}));
    t.emplace("5", intervals_mask({0, 7}));
    return t;
  }();
  return table;
}

inline std::optional<int> degree_semitone(std::string_view degree) {
  int shift = 0;
  while (!degree.empty() && (degree.front() == 'b' || degree.front() == '#')) {
    shift += degree.front() == '#' ? 1 : -1;
    degree.remove_prefix(1);
  }
  if (degree.empty() || degree.size() > 2) return std::nullopt;
  int number = 0;
  for (char ch : degree) {
    if (ch < '0' || ch > '9') return std::nullopt;
    number = number * 10 + (ch - '0');
  }
  static constexpr std::array<int, 14> base{-1, 0, 2, 4, 5, 7, 9, 11, 0, 2, 4, 5, 7, 9};
  if (number < 1 || number > 13) return std::nullopt;
  return ((base[static_cast<std::size_t>(number)] + shift) % 12 + 12) % 12;
}

// Largest A3 interval set contained in `mask`; ties resolve to the earlier
// quality in declaration order.
inline std::optional<Quality> best_subset_quality(IntervalMask mask) {
  std::optional<Quality> best;
  int best_size = 0;
  for (const auto& info : kQualityTable) {
    if ((info.intervals & mask) != info.intervals) continue;
    const int size = std::popcount(static_cast<unsigned>(info.intervals));
    if (size > best_size) {
      best = info.quality;
      best_size = size;
    }
  }
  return best;
}

inline std::optional<PitchClass> parse_root(std::string_view& s) {
  static constexpr std::array<int, 7> letters{9, 11, 0, 2, 4, 5, 7};  // A..G
  if (s.empty() || s.front() < 'A' || s.front() > 'G') return std::nullopt;
  int pc = letters[static_cast<std::size_t>(s.front() - 'A')];
  s.remove_prefix(1);
  while (!s.empty() && (s.front() == '#' || s.front() == 'b')) {
    pc += s.front() == '#' ? 1 : -1;
    s.remove_prefix(1);
  }
  return ((pc % 12) + 12) % 12;
}

}  // namespace detail

// Quality string (the part after the colon, bass already stripped) to an
// interval set. Throws UnknownQuality.
inline IntervalMask parse_quality_intervals(std::string_view quality) {
  std::string_view shorthand = quality;
  std::string_view degrees;
  if (const auto open = quality.find('('); open != std::string_view::npos) {
    if (quality.back() != ')') throw UnknownQuality(std::string(quality));
    shorthand = quality.substr(0, open);
    degrees = quality.substr(open + 1, quality.size() - open - 2);
  }
  IntervalMask mask = 0;
  if (shorthand.empty() && !degrees.empty()) {
    mask = 0;  // fully explicit "(1,3,5)" form
  } else {
    const auto& table = detail::shorthand_table();
    const auto it = table.find(shorthand);
    if (it == table.end()) throw UnknownQuality(std::string(quality));
    mask = it->second;
  }
  while (!degrees.empty()) {
    const auto comma = degrees.find(',');
    std::string_view item = detail::trim(degrees.substr(0, comma));
    degrees = comma == std::string_view::npos ? std::string_view{} : degrees.substr(comma + 1);
    const bool remove = !item.empty() && item.front() == '*';
    if (remove) item.remove_prefix(1);
    const auto semitone = detail::degree_semitone(item);
    if (!semitone) throw UnknownQuality(std::string(quality));
    const auto bit = static_cast<IntervalMask>(1u << *semitone);
    mask = remove ? static_cast<IntervalMask>(mask & ~bit) : static_cast<IntervalMask>(mask | bit);
  }
  return mask;
}

inline ChordSymbol parse_chord(std::string_view label) {
  std::string_view s = detail::trim(label);
  if (s.empty()) throw MalformedLabel("empty label");
  if (s == "N" || s == "NC" || s == "N.C.") return ChordSymbol::no_chord();

  std::string_view rest = s;
  const auto root = detail::parse_root(rest);
  if (!root) throw MalformedLabel(std::string(s));

  std::string_view quality;
  if (rest.empty()) {
    quality = "maj";
  } else if (rest.front() == '/') {
    quality = "maj";
  } else if (rest.front() == ':') {
    quality = rest.substr(1);
    if (const auto slash = quality.find('/'); slash != std::string_view::npos) quality = quality.substr(0, slash);
    if (quality.empty()) throw MalformedLabel(std::string(s));
  } else {
    throw MalformedLabel(std::string(s));
  }

  for (const auto& info : kQualityTable) {
    if (info.name == quality) return ChordSymbol(*root, info.quality);
  }
  const IntervalMask mask = parse_quality_intervals(quality);
  for (const auto& info : kQualityTable) {
    if (info.intervals == mask) return ChordSymbol(*root, info.quality);
  }
  const auto best = detail::best_subset_quality(mask);
  if (!best) return ChordSymbol::no_chord();
  return ChordSymbol(*root, *best);
}

// ---------------------------------------------------------------------------
// Alphabets

enum class AlphabetLevel : std::uint8_t { A1, A2, A3 };

inline std::string_view alphabet_name(AlphabetLevel level) {
  switch (level) {
    case AlphabetLevel::A1: return "A1";
    case AlphabetLevel::A2: return "A2";
    case AlphabetLevel::A3: return "A3";
  }
  return "?";
}

inline AlphabetLevel parse_alphabet_level(std::string_view name) {
  if (name == "A1") return AlphabetLevel::A1;
  if (name == "A2") return AlphabetLevel::A2;
  if (name == "A3") return AlphabetLevel::A3;
  throw InvalidConfig("unknown alphabet '" + std::string(name) + "'");
}

class Alphabet {
public:
  explicit Alphabet(AlphabetLevel level) : level_(level) {
    switch (level) {
      case AlphabetLevel::A1:
        qualities_ = {Quality::Maj, Quality::Min};
        break;
      case AlphabetLevel::A2:
        qualities_ = {Quality::Maj, Quality::Min, Quality::Dim, Quality::Aug,
                      Quality::Maj7, Quality::Min7, Quality::Dom7};
        break;
      case AlphabetLevel::A3:
        for (const auto& info : kQualityTable) qualities_.push_back(info.quality);
        break;
    }
    quality_slot_.fill(-1);
    for (std::size_t i = 0; i < qualities_.size(); ++i) {
      quality_slot_[static_cast<std::size_t>(qualities_[i])] = static_cast<int>(i);
    }
    symbols_.push_back(ChordSymbol::no_chord());
    for (Quality q : qualities_) {
      for (int root = 0; root < 12; ++root) symbols_.emplace_back(root, q);
    }
  }

  static const Alphabet& get(AlphabetLevel level) {
    static const Alphabet a1(AlphabetLevel::A1);
    static const Alphabet a2(AlphabetLevel::A2);
    static const Alphabet a3(AlphabetLevel::A3);
    switch (level) {
      case AlphabetLevel::A1: return a1;
      case AlphabetLevel::A2: return a2;
      default: return a3;
    }
  }

  AlphabetLevel level() const { return level_; }
  std::string_view name() const { return alphabet_name(level_); }
  std::size_t size() const { return symbols_.size(); }
  const std::vector<ChordSymbol>& symbols() const { return symbols_; }
  const std::vector<Quality>& qualities() const { return qualities_; }

  bool has_quality(Quality q) const { return quality_slot_[static_cast<std::size_t>(q)] >= 0; }

  bool contains(const ChordSymbol& c) const { return c.is_nochord() || has_quality(c.quality()); }

  // No-chord is index 0; then one block of 12 roots per quality.
  int index(const ChordSymbol& c) const {
    if (c.is_nochord()) return 0;
    const int slot = quality_slot_[static_cast<std::size_t>(c.quality())];
    if (slot < 0) throw NotInAlphabet(render_chord(c) + " not in " + std::string(name()));
    return 1 + slot * 12 + c.root();
  }

  const ChordSymbol& symbol_at(std::size_t i) const { return symbols_.at(i); }

  friend bool operator==(const Alphabet& a, const Alphabet& b) { return a.level_ == b.level_; }

private:
  AlphabetLevel level_;
  std::vector<Quality> qualities_;
  std::array<int, kQualityCount> quality_slot_{};
  std::vector<ChordSymbol> symbols_;
};

inline const Alphabet& alphabet(AlphabetLevel level) { return Alphabet::get(level); }

// Walks the quality up its ancestry until it lands in `a`: own quality, then
// its standard triad, then the major/minor triad sharing its third. Qualities
// without a third (sus) become no-chord.
inline ChordSymbol reduce_chord(const ChordSymbol& c, const Alphabet& a) {
  if (c.is_nochord() || a.has_quality(c.quality())) return c;
  const auto& info = quality_info(c.quality());
  if (info.triad && a.has_quality(*info.triad)) return ChordSymbol(c.root(), *info.triad);
  switch (info.family) {
    case TriadFamily::MajorThird:
      if (a.has_quality(Quality::Maj)) return ChordSymbol(c.root(), Quality::Maj);
      break;
    case TriadFamily::MinorThird:
      if (a.has_quality(Quality::Min)) return ChordSymbol(c.root(), Quality::Min);
      break;
    case TriadFamily::Other:
      break;
  }
  return ChordSymbol::no_chord();
}

inline int alphabet_index(const ChordSymbol& c, const Alphabet& a) { return a.index(c); }

}  // namespace chordseq

template <>
struct std::hash<chordseq::ChordSymbol> {
  std::size_t operator()(const chordseq::ChordSymbol& c) const noexcept { return c.hash(); }
};
