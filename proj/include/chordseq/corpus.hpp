#pragma once

// Beat-aligned chord tracks: xlab ingestion, windowing into 8-in/8-out pairs,
// song-level cross-validation splits and synthetic Markov corpora.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chordseq/chord.hpp"
#include "chordseq/errors.hpp"
#include "chordseq/random.hpp"

namespace chordseq {

inline constexpr std::size_t kWindowLength = 8;
inline constexpr std::size_t kMinTrackLength = kWindowLength + 1;

using ChordWindow = std::array<ChordSymbol, kWindowLength>;

struct BeatTrack {
  std::string song_id;
  std::vector<ChordSymbol> chords;
  std::vector<int> bar_position;  // 1-based beat position inside its bar

  std::size_t size() const { return chords.size(); }

  // Largest bar position seen; used as the bar length when extrapolating
  // positions into the padding before the first beat.
  int bar_length() const {
    int m = 1;
    for (int p : bar_position) m = std::max(m, p);
    return m;
  }
};

struct WindowPair {
  ChordWindow input{};
  ChordWindow target{};
  int downbeat_position = 1;  // bar position of the first input beat
  int leading_pad = 0;        // number of padded no-chords at the start of input
  std::string song_id;
};

inline void validate_track(const BeatTrack& t) {
  if (t.chords.empty() || t.chords.size() != t.bar_position.size()) {
    throw MalformedXlab(t.song_id + ": chords and bar positions must be non-empty and aligned");
  }
  for (int p : t.bar_position) {
    if (p < 1) throw MalformedXlab(t.song_id + ": bar positions must be >= 1");
  }
}

// ---------------------------------------------------------------------------
// xlab ingestion
//
// One row per beat: `start_time end_time beat_in_bar chord_label [extra...]`.
// Blank lines and lines starting with '#' are ignored.

inline BeatTrack parse_xlab(std::istream& in, std::string song_id) {
  BeatTrack track;
  track.song_id = std::move(song_id);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = detail::trim(line);
    if (body.empty() || body.front() == '#') continue;
    std::istringstream row{std::string(body)};
    std::string start, end, beat, label;
    if (!(row >> start >> end >> beat >> label)) {
      throw MalformedXlab(track.song_id + ":" + std::to_string(line_no) + ": expected 4 columns");
    }
    int position = 0;
    try {
      std::size_t used = 0;
      position = std::stoi(beat, &used);
      if (used != beat.size()) throw std::invalid_argument(beat);
    } catch (const std::exception&) {
      throw MalformedXlab(track.song_id + ":" + std::to_string(line_no) + ": bad beat column '" + beat + "'");
    }
    if (position < 1) {
      throw MalformedXlab(track.song_id + ":" + std::to_string(line_no) + ": beat position must be >= 1");
    }
    try {
      track.chords.push_back(parse_chord(label));
    } catch (const Error& e) {
      throw MalformedXlab(track.song_id + ":" + std::to_string(line_no) + ": " + e.what());
    }
    track.bar_position.push_back(position);
  }
  if (track.chords.empty()) throw MalformedXlab(track.song_id + ": no beats");
  return track;
}

inline BeatTrack ingest_xlab(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open " + path.string());
  return parse_xlab(in, path.stem().string());
}

struct IngestResult {
  std::vector<BeatTrack> tracks;          // sorted by song_id
  std::vector<std::string> skipped;       // one human-readable reason per file
};

inline IngestResult ingest_directory(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoFailure("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir, ec)) {
    if (entry.is_regular_file() && entry.path().extension() == ".xlab") files.push_back(entry.path());
  }
  if (ec) throw IoFailure(dir.string() + ": " + ec.message());
  std::sort(files.begin(), files.end());

  IngestResult result;
  for (const auto& f : files) {
    try {
      BeatTrack t = ingest_xlab(f);
      if (t.size() < kMinTrackLength) {
        result.skipped.push_back(f.filename().string() + ": track shorter than " +
                                 std::to_string(kMinTrackLength) + " beats");
        continue;
      }
      result.tracks.push_back(std::move(t));
    } catch (const Error& e) {
      result.skipped.push_back(f.filename().string() + ": " + e.what());
    }
  }
  std::stable_sort(result.tracks.begin(), result.tracks.end(),
                   [](const BeatTrack& a, const BeatTrack& b) { return a.song_id < b.song_id; });
  return result;
}

// ---------------------------------------------------------------------------
// Windowing
//
// The track is left-padded with 7 no-chords. The first pair has input
// [N x7, c1] and target c2..c9; pairs advance one beat at a time until the
// target is the last 8 chords, giving L - 8 pairs for a track of length L.

inline std::vector<WindowPair> make_windows(const BeatTrack& t, const Alphabet& a) {
  if (t.size() < kMinTrackLength) {
    throw TrackTooShort(t.song_id + ": " + std::to_string(t.size()) + " beats, need at least " +
                        std::to_string(kMinTrackLength));
  }
  constexpr std::ptrdiff_t pad = kWindowLength - 1;
  const auto length = static_cast<std::ptrdiff_t>(t.size());
  const int bar_len = t.bar_length();

  std::vector<ChordSymbol> padded(static_cast<std::size_t>(pad), ChordSymbol::no_chord());
  padded.reserve(t.size() + static_cast<std::size_t>(pad));
  for (const auto& c : t.chords) padded.push_back(reduce_chord(c, a));

  std::vector<WindowPair> out;
  out.reserve(t.size() - kWindowLength);
  for (std::ptrdiff_t s = 0; s + 2 * static_cast<std::ptrdiff_t>(kWindowLength) <= length + pad; ++s) {
    WindowPair w;
    for (std::size_t k = 0; k < kWindowLength; ++k) {
      w.input[k] = padded[static_cast<std::size_t>(s) + k];
      w.target[k] = padded[static_cast<std::size_t>(s) + kWindowLength + k];
    }
    const std::ptrdiff_t first_beat = s - pad;
    w.leading_pad = static_cast<int>(std::max<std::ptrdiff_t>(0, -first_beat));
    if (first_beat >= 0) {
      w.downbeat_position = t.bar_position[static_cast<std::size_t>(first_beat)];
    } else {
      const long long shifted = (t.bar_position[0] - 1) + first_beat;
      w.downbeat_position = static_cast<int>(((shifted % bar_len) + bar_len) % bar_len) + 1;
    }
    w.song_id = t.song_id;
    out.push_back(std::move(w));
  }
  return out;
}

// Windows of every track selected by `indices`; tracks too short to window
// are skipped.
inline std::vector<WindowPair> windows_for(const std::vector<BeatTrack>& tracks,
                                           const std::vector<std::size_t>& indices, const Alphabet& a) {
  std::vector<WindowPair> out;
  for (std::size_t i : indices) {
    if (tracks[i].size() < kMinTrackLength) continue;
    auto w = make_windows(tracks[i], a);
    std::move(w.begin(), w.end(), std::back_inserter(out));
  }
  return out;
}

inline std::vector<WindowPair> windows_for(const std::vector<BeatTrack>& tracks, const Alphabet& a) {
  std::vector<std::size_t> all(tracks.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return windows_for(tracks, all, a);
}

// ---------------------------------------------------------------------------
// Cross-validation splits

struct SplitSpec {
  std::uint64_t seed = 0;
  double train_fraction = 0.6;
  double validation_fraction = 0.2;
  double test_fraction = 0.2;
  int fold_count = 5;
};

struct FoldSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

// Indices refer to `tracks`. Songs are ordered by song_id before shuffling so
// the result does not depend on the order the caller enumerated them in.
inline std::vector<FoldSplit> split_songs(const std::vector<BeatTrack>& tracks, const SplitSpec& spec) {
  if (tracks.size() < 5) throw TooFewSongs(std::to_string(tracks.size()) + " songs, need at least 5");
  const double total = spec.train_fraction + spec.validation_fraction + spec.test_fraction;
  if (std::abs(total - 1.0) > 1e-9 || spec.fold_count < 1) throw InvalidConfig("split fractions must sum to 1");

  std::vector<std::size_t> order(tracks.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return tracks[a].song_id < tracks[b].song_id; });

  const auto n = static_cast<double>(tracks.size());
  const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * n));
  const auto n_val = static_cast<std::size_t>(std::llround(spec.validation_fraction * n));

  std::vector<FoldSplit> folds;
  for (int f = 0; f < spec.fold_count; ++f) {
    std::vector<std::size_t> perm = order;
    Rng rng(spec.seed, Stream::Split, static_cast<std::uint64_t>(f));
    rng.shuffle(std::span<std::size_t>(perm));
    FoldSplit fold;
    fold.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
    fold.validation.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                           perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    fold.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), perm.end());
    folds.push_back(std::move(fold));
  }
  return folds;
}

// ---------------------------------------------------------------------------
// Synthetic corpora: a first-order Markov chain over `states`, resampled only
// at multiples of the harmonic rhythm. Songs start on a downbeat.

struct SynthSpec {
  int song_count = 10;
  int min_length = 32;
  int max_length = 32;
  int bar_length = 4;
  int harmonic_rhythm = 4;
  std::vector<ChordSymbol> states;
  std::vector<std::vector<double>> transitions;
  std::vector<double> initial;  // empty means uniform
  std::uint64_t seed = 0;
};

inline void validate(const SynthSpec& spec) {
  const auto fail = [](const std::string& why) { throw InvalidSpec(why); };
  if (spec.song_count < 1) fail("song_count must be >= 1");
  if (spec.min_length < 1 || spec.max_length < spec.min_length) fail("length range is empty");
  if (spec.bar_length < 1 || spec.harmonic_rhythm < 1) fail("bar_length and harmonic_rhythm must be >= 1");
  if (spec.states.empty()) fail("no states");
  if (spec.transitions.size() != spec.states.size()) fail("transition table must have one row per state");
  const auto check_row = [&](const std::vector<double>& row, const std::string& what) {
    if (row.size() != spec.states.size()) fail(what + " has wrong width");
    double sum = 0.0;
    for (double p : row) {
      if (!(p >= 0.0)) fail(what + " has a negative entry");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) fail(what + " does not sum to 1");
  };
  for (std::size_t i = 0; i < spec.transitions.size(); ++i) {
    check_row(spec.transitions[i], "transition row " + std::to_string(i));
  }
  if (!spec.initial.empty()) check_row(spec.initial, "initial distribution");
}

inline std::vector<BeatTrack> synth_corpus(const SynthSpec& spec) {
  validate(spec);
  Rng rng(spec.seed, Stream::Synth);
  std::vector<double> initial = spec.initial;
  if (initial.empty()) initial.assign(spec.states.size(), 1.0 / static_cast<double>(spec.states.size()));

  std::vector<BeatTrack> tracks;
  tracks.reserve(static_cast<std::size_t>(spec.song_count));
  const int width = std::max<int>(4, static_cast<int>(std::to_string(spec.song_count).size()));
  for (int s = 0; s < spec.song_count; ++s) {
    BeatTrack t;
    std::string num = std::to_string(s);
    t.song_id = "synth_" + std::string(static_cast<std::size_t>(std::max<int>(0, width - static_cast<int>(num.size()))), '0') + num;
    const int length = spec.min_length +
                       static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_length - spec.min_length + 1)));
    std::size_t state = rng.categorical(initial);
    for (int beat = 0; beat < length; ++beat) {
      if (beat > 0 && beat % spec.harmonic_rhythm == 0) state = rng.categorical(spec.transitions[state]);
      t.chords.push_back(spec.states[state]);
      t.bar_position.push_back(beat % spec.bar_length + 1);
    }
    tracks.push_back(std::move(t));
  }
  return tracks;
}

inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  SynthSpec spec;
  try {
    spec.song_count = j.value("songs", spec.song_count);
    spec.min_length = j.value("min_length", spec.min_length);
    spec.max_length = j.value("max_length", spec.min_length);
    spec.bar_length = j.value("bar_length", spec.bar_length);
    spec.harmonic_rhythm = j.value("harmonic_rhythm", spec.harmonic_rhythm);
    spec.seed = j.value("seed", spec.seed);
    for (const auto& label : j.at("states")) spec.states.push_back(parse_chord(label.get<std::string>()));
    spec.transitions = j.at("transitions").get<std::vector<std::vector<double>>>();
    if (j.contains("initial")) spec.initial = j.at("initial").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidSpec(e.what());
  } catch (const Error& e) {
    throw InvalidSpec(e.what());
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Corpus interchange: JSON Lines, one {song_id, chords, bar_position} per track.

inline nlohmann::json track_to_json(const BeatTrack& t) {
  nlohmann::json labels = nlohmann::json::array();
  for (const auto& c : t.chords) labels.push_back(render_chord(c));
  return {{"song_id", t.song_id}, {"chords", labels}, {"bar_position", t.bar_position}};
}

inline BeatTrack track_from_json(const nlohmann::json& j) {
  BeatTrack t;
  try {
    t.song_id = j.at("song_id").get<std::string>();
    for (const auto& label : j.at("chords")) t.chords.push_back(parse_chord(label.get<std::string>()));
    t.bar_position = j.at("bar_position").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw MalformedXlab(std::string("corpus record: ") + e.what());
  }
  validate_track(t);
  return t;
}

inline void write_corpus(std::ostream& out, const std::vector<BeatTrack>& tracks) {
  for (const auto& t : tracks) out << track_to_json(t).dump() << '\n';
}

inline std::vector<BeatTrack> read_corpus(std::istream& in) {
  std::vector<BeatTrack> tracks;
  std::string line;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw MalformedXlab(std::string("corpus line: ") + e.what());
    }
    tracks.push_back(track_from_json(j));
  }
  return tracks;
}

inline void save_corpus(const std::filesystem::path& path, const std::vector<BeatTrack>& tracks) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot write " + path.string());
  write_corpus(out, tracks);
}

inline std::vector<BeatTrack> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open " + path.string());
  return read_corpus(in);
}

}  // namespace chordseq
