#pragma once

// The pipeline stages behind the command-line tool. Each command writes its
// fully resolved configuration next to its outputs.

#include <cstddef>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "chordseq/config.hpp"
#include "chordseq/corpus.hpp"
#include "chordseq/errors.hpp"
#include "chordseq/evaluation.hpp"
#include "chordseq/predictors.hpp"

namespace chordseq {

namespace fs = std::filesystem;

inline constexpr const char* kCorpusFile = "corpus.jsonl";
inline constexpr const char* kConfigFile = "config.txt";

namespace detail {

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoFailure("cannot create " + dir.string() + ": " + ec.message());
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot write " + path.string());
  out << text;
  if (!out) throw IoFailure("write failed: " + path.string());
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline void write_config(const fs::path& dir, const KeyValues& kv) {
  std::ostringstream s;
  write_key_values(s, kv);
  write_text(dir / kConfigFile, s.str());
}

// Runs task(i) for i in [0, n) on up to `jobs` threads. Results must be
// written to per-index slots; the first failure (by index) is rethrown.
inline void run_indexed(std::size_t n, int jobs, const std::function<void(std::size_t)>& task) {
  std::vector<std::exception_ptr> errors(n);
  const auto guarded = [&](std::size_t i) {
    try {
      task(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) guarded(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) guarded(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// ingest

struct IngestSummary {
  std::size_t tracks = 0;
  std::vector<std::string> skipped;
};

inline IngestSummary cmd_ingest(const fs::path& input_dir, const fs::path& out_dir, std::ostream& log) {
  IngestResult r = ingest_directory(input_dir);
  for (const auto& s : r.skipped) log << "skip " << s << '\n';
  if (r.tracks.empty()) throw IoFailure("no usable xlab tracks in " + input_dir.string());
  detail::ensure_dir(out_dir);
  save_corpus(out_dir / kCorpusFile, r.tracks);
  detail::write_config(out_dir, {{"command", "ingest"}, {"input", input_dir.string()}});
  log << "ingested " << r.tracks.size() << " tracks, skipped " << r.skipped.size() << '\n';
  return {r.tracks.size(), std::move(r.skipped)};
}

// ---------------------------------------------------------------------------
// synth

inline std::size_t cmd_synth(const fs::path& spec_file, const fs::path& out_dir, std::ostream& log,
                             std::optional<std::uint64_t> seed = std::nullopt) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_text(spec_file));
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidSpec(spec_file.string() + ": " + e.what());
  }
  if (seed) j["seed"] = *seed;
  const SynthSpec spec = synth_spec_from_json(j);
  const auto tracks = synth_corpus(spec);
  detail::ensure_dir(out_dir);
  save_corpus(out_dir / kCorpusFile, tracks);
  detail::write_text(out_dir / "synth_spec.json", j.dump(2) + "\n");
  detail::write_config(out_dir, {{"command", "synth"}, {"spec", spec_file.string()}, {"seed", std::to_string(spec.seed)}});
  log << "synthesised " << tracks.size() << " tracks\n";
  return tracks.size();
}

// ---------------------------------------------------------------------------
// train

inline std::string model_file_name(PredictorKind kind, AlphabetLevel level, int fold) {
  return std::string(kind_name(kind)) + "_" + std::string(alphabet_name(level)) + "_fold" + std::to_string(fold) +
         ".json";
}

struct TrainedFold {
  std::unique_ptr<Predictor> predictor;
  TrainingCurve curve;
};

inline TrainedFold train_fold(PredictorKind kind, const std::vector<BeatTrack>& tracks, const FoldSplit& split,
                              const TrainConfig& cfg, int fold) {
  const Alphabet& a = alphabet(cfg.alphabet);
  const auto run = static_cast<std::uint64_t>(fold);
  switch (kind) {
    case PredictorKind::Random: return {std::make_unique<RandomPredictor>(cfg.alphabet), {}};
    case PredictorKind::Repeat: return {std::make_unique<RepeatPredictor>(cfg.alphabet), {}};
    case PredictorKind::NGram: {
      // no early stopping to feed, so the validation songs are training data
      auto songs = split.train;
      songs.insert(songs.end(), split.validation.begin(), split.validation.end());
      return {std::make_unique<NGramPredictor>(train_ngram(tracks, songs, a, kNGramOrder)), {}};
    }
    case PredictorKind::MlpEd: {
      auto t = train_mlp_ed(training_data(tracks, split, a), cfg, run);
      return {std::make_unique<MlpEdPredictor>(std::move(t.predictor)), std::move(t.curve)};
    }
    case PredictorKind::MsEd: {
      auto t = train_ms_ed(training_data(tracks, split, a), cfg, run);
      return {std::make_unique<MsEdPredictor>(std::move(t.predictor)), std::move(t.curve)};
    }
  }
  throw InvalidConfig("unsupported model kind");
}

inline std::vector<FoldSplit> folds_for(const std::vector<BeatTrack>& tracks, const TrainConfig& cfg) {
  SplitSpec spec;
  spec.seed = cfg.seed;
  spec.fold_count = cfg.folds;
  return split_songs(tracks, spec);
}

inline std::vector<fs::path> cmd_train(const fs::path& corpus_file, PredictorKind kind, const TrainConfig& cfg,
                                       const fs::path& out_dir, int jobs, std::ostream& log) {
  cfg.validate();
  const auto tracks = load_corpus(corpus_file);
  const auto splits = folds_for(tracks, cfg);
  detail::ensure_dir(out_dir);

  KeyValues resolved = cfg.to_key_values();
  resolved["command"] = "train";
  resolved["corpus"] = corpus_file.string();
  resolved["kind"] = std::string(kind_name(kind));
  detail::write_config(out_dir, resolved);

  std::vector<TrainedFold> trained(splits.size());
  detail::run_indexed(splits.size(), jobs, [&](std::size_t f) {
    trained[f] = train_fold(kind, tracks, splits[f], cfg, static_cast<int>(f));
  });

  std::vector<fs::path> files;
  std::ostringstream curve;
  curve << "fold,stage,epoch,train_loss,validation_loss\n";
  curve.precision(17);
  for (std::size_t f = 0; f < trained.size(); ++f) {
    const auto& p = *trained[f].predictor;
    const fs::path path = out_dir / model_file_name(kind, cfg.alphabet, static_cast<int>(f));
    detail::write_text(path, model_file_json(p, cfg, static_cast<int>(f)).dump() + "\n");
    files.push_back(path);
    log << "fold " << f << ": " << kind_name(kind) << " on " << alphabet_name(cfg.alphabet) << ", "
        << p.parameter_count() << " parameters, " << trained[f].curve.size() << " epochs -> " << path.filename().string()
        << '\n';
    for (const auto& e : trained[f].curve) {
      curve << f << ',' << e.stage << ',' << e.epoch << ',' << e.train_loss << ',' << e.validation_loss << '\n';
    }
  }
  detail::write_text(out_dir / "training_curve.csv", curve.str());
  return files;
}

// ---------------------------------------------------------------------------
// eval

inline ModelFile load_model_file(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidConfig(path.string() + ": " + e.what());
  }
  return model_file_from_json(j);
}

struct EvalOutput {
  std::vector<EvalReport> folds;
  std::vector<EvalReport> aggregates;  // one per model kind, in first-seen order
};

// All model headers are loaded and checked for a common alphabet before the
// corpus is read or anything is evaluated.
inline EvalOutput cmd_eval(const std::vector<fs::path>& model_files, const fs::path& corpus_file,
                           std::optional<AlphabetLevel> expected, const fs::path& out_dir, int jobs,
                           std::ostream& log) {
  if (model_files.empty()) throw InvalidConfig("no model files given");
  std::vector<ModelFile> models;
  for (const auto& f : model_files) models.push_back(load_model_file(f));
  const AlphabetLevel level = expected.value_or(models.front().config.alphabet);
  for (std::size_t i = 0; i < models.size(); ++i) {
    if (models[i].config.alphabet != level) {
      throw AlphabetMismatch(model_files[i].string() + " uses " + std::string(alphabet_name(models[i].config.alphabet)) +
                             ", expected " + std::string(alphabet_name(level)));
    }
  }

  const auto tracks = load_corpus(corpus_file);
  const Alphabet& a = alphabet(level);
  EvalOutput out;
  out.folds.resize(models.size());
  detail::run_indexed(models.size(), jobs, [&](std::size_t i) {
    const auto& m = models[i];
    const auto splits = folds_for(tracks, m.config);
    if (m.fold < 0 || static_cast<std::size_t>(m.fold) >= splits.size()) {
      throw InvalidConfig(model_files[i].string() + ": fold out of range");
    }
    const auto test = windows_for(tracks, splits[static_cast<std::size_t>(m.fold)].test, a);
    out.folds[i] = evaluate(*m.predictor, test, m.fold);
  });

  std::vector<std::string> kinds;
  for (const auto& r : out.folds) {
    if (std::find(kinds.begin(), kinds.end(), r.model) == kinds.end()) kinds.push_back(r.model);
  }
  for (const auto& k : kinds) {
    std::vector<EvalReport> group;
    for (const auto& r : out.folds) {
      if (r.model == k) group.push_back(r);
    }
    out.aggregates.push_back(aggregate_reports(group));
  }

  detail::ensure_dir(out_dir);
  KeyValues resolved{{"command", "eval"}, {"corpus", corpus_file.string()}, {"alphabet", std::string(a.name())}};
  for (std::size_t i = 0; i < model_files.size(); ++i) resolved["model." + std::to_string(i)] = model_files[i].string();
  detail::write_config(out_dir, resolved);

  const auto stem = [](const EvalReport& r) {
    return "report_" + r.model + "_" + r.alphabet + "_" + (r.fold ? "fold" + std::to_string(*r.fold) : "mean");
  };
  for (const auto& r : out.folds) detail::write_text(out_dir / (stem(r) + ".json"), to_json(r).dump(2) + "\n");
  for (const auto& r : out.aggregates) detail::write_text(out_dir / (stem(r) + ".json"), to_json(r).dump(2) + "\n");

  std::ostringstream metrics;
  write_metrics_csv(metrics, out.folds);
  write_metrics_csv(metrics, out.aggregates, false);
  detail::write_text(out_dir / "metrics.csv", metrics.str());
  std::ostringstream downbeat;
  for (std::size_t i = 0; i < out.aggregates.size(); ++i) write_downbeat_csv(downbeat, out.aggregates[i], i == 0);
  detail::write_text(out_dir / "downbeat.csv", downbeat.str());

  for (const auto& r : out.aggregates) {
    log << r.model << " " << r.alphabet << ": accuracy " << r.accuracy << ", perplexity ";
    if (r.perplexity) log << *r.perplexity;
    else log << "undefined";
    log << ", mean rank " << r.mean_rank << '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// predict

struct PredictOutput {
  std::vector<ChordSymbol> argmax;
  PredictionDistribution distribution;
};

inline PredictOutput cmd_predict(const fs::path& model_file, const std::vector<std::string>& labels,
                                 std::optional<AlphabetLevel> expected, bool verbose, std::ostream& out) {
  if (labels.size() != kWindowLength) {
    throw InvalidConfig("expected " + std::to_string(kWindowLength) + " chord labels, got " +
                        std::to_string(labels.size()));
  }
  InputWindow w;
  for (std::size_t k = 0; k < kWindowLength; ++k) w.chords[k] = parse_chord(labels[k]);
  const ModelFile m = load_model_file(model_file);
  const Alphabet& a = m.predictor->alphabet();
  if (expected && *expected != a.level()) {
    throw AlphabetMismatch("model uses " + std::string(a.name()) + ", expected " +
                           std::string(alphabet_name(*expected)));
  }
  for (auto& c : w.chords) c = reduce_chord(c, a);

  PredictOutput r{{}, m.predictor->predict(w)};
  for (std::size_t k = 0; k < kWindowLength; ++k) {
    r.argmax.push_back(a.symbol_at(r.distribution.argmax(k)));
    out << (k ? " " : "") << render_chord(r.argmax.back());
  }
  out << '\n';
  if (verbose) {
    out << "step";
    for (const auto& c : a.symbols()) out << ',' << render_chord(c);
    out << '\n';
    for (std::size_t k = 0; k < kWindowLength; ++k) {
      out << k + 1;
      for (double p : r.distribution.row(k)) out << ',' << p;
      out << '\n';
    }
  }
  return r;
}

}  // namespace chordseq
