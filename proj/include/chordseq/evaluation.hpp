#pragma once

// Metrics over aligned (prediction, target) sets and the report format that
// carries them: accuracy, perplexity, rank of the target, Euclidean distances
// between pitch-class vectors and accuracy broken down by downbeat position.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chordseq/chord.hpp"
#include "chordseq/corpus.hpp"
#include "chordseq/distribution.hpp"
#include "chordseq/errors.hpp"
#include "chordseq/predictors.hpp"

namespace chordseq {

// Pairwise summation in index order: deterministic and accurate.
inline double pairwise_sum(std::span<const double> xs) {
  if (xs.size() <= 8) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s;
  }
  const std::size_t half = xs.size() / 2;
  return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

inline double pairwise_mean(std::span<const double> xs) {
  return xs.empty() ? 0.0 : pairwise_sum(xs) / static_cast<double>(xs.size());
}

namespace detail {

inline void check_aligned(std::span<const PredictionDistribution> preds, std::span<const ChordWindow> targets,
                          const Alphabet& a) {
  if (preds.size() != targets.size()) {
    throw Misaligned(std::to_string(preds.size()) + " predictions for " + std::to_string(targets.size()) + " targets");
  }
  for (const auto& p : preds) {
    if (p.steps() != kWindowLength || p.alphabet_size() != a.size()) {
      throw Misaligned("prediction shape does not match the alphabet");
    }
  }
}

// Calls f(prediction, step, target index) for every evaluated position.
template <class F>
void for_each_position(std::span<const PredictionDistribution> preds, std::span<const ChordWindow> targets,
                       const Alphabet& a, F&& f) {
  check_aligned(preds, targets, a);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (std::size_t k = 0; k < kWindowLength; ++k) {
      f(preds[i], k, static_cast<std::size_t>(a.index(targets[i][k])));
    }
  }
}

inline double euclidean(const std::array<double, 12>& x, const PitchClassVector& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < 12; ++i) {
    const double d = x[i] - static_cast<double>(y[i]);
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace detail

// Percentage of positions whose argmax (lowest index on ties) is the target.
inline double accuracy(std::span<const PredictionDistribution> preds, std::span<const ChordWindow> targets,
                       const Alphabet& a) {
  std::vector<double> hits;
  detail::for_each_position(preds, targets, a, [&](const PredictionDistribution& p, std::size_t k, std::size_t t) {
    hits.push_back(p.argmax(k) == t ? 1.0 : 0.0);
  });
  return 100.0 * pairwise_mean(hits);
}

inline double perplexity(std::span<const PredictionDistribution> preds, std::span<const ChordWindow> targets,
                         const Alphabet& a) {
  std::vector<double> nll;
  detail::for_each_position(preds, targets, a, [&](const PredictionDistribution& p, std::size_t k, std::size_t t) {
    const double prob = p.at(k, t);
    if (!(prob > 0.0)) throw ZeroProbability("target " + render_chord(a.symbol_at(t)) + " has probability 0");
    nll.push_back(-std::log(prob));
  });
  return std::exp(pairwise_mean(nll));
}

// Rank 1 + number of chords strictly more probable than the target.
inline double mean_rank(std::span<const PredictionDistribution> preds, std::span<const ChordWindow> targets,
                        const Alphabet& a) {
  std::vector<double> ranks;
  detail::for_each_position(preds, targets, a, [&](const PredictionDistribution& p, std::size_t k, std::size_t t) {
    const double pt = p.at(k, t);
    std::size_t above = 0;
    for (double q : p.row(k)) above += q > pt ? 1 : 0;
    ranks.push_back(static_cast<double>(1 + above));
  });
  return pairwise_mean(ranks);
}

struct MusicalDistances {
  double probabilistic = 0.0;
  double binary = 0.0;
};

inline MusicalDistances musical_distances(std::span<const PredictionDistribution> preds,
                                          std::span<const ChordWindow> targets, const Alphabet& a) {
  std::vector<PitchClassVector> pcv;
  pcv.reserve(a.size());
  for (const auto& c : a.symbols()) pcv.push_back(pitch_class_vector(c));
  std::vector<double> prob, bin;
  detail::for_each_position(preds, targets, a, [&](const PredictionDistribution& p, std::size_t k, std::size_t t) {
    std::array<double, 12> expected{};
    const auto row = p.row(k);
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (row[c] == 0.0) continue;
      for (std::size_t i = 0; i < 12; ++i) expected[i] += row[c] * pcv[c][i];
    }
    prob.push_back(detail::euclidean(expected, pcv[t]));
    std::array<double, 12> top{};
    const auto& best = pcv[p.argmax(k)];
    for (std::size_t i = 0; i < 12; ++i) top[i] = best[i];
    bin.push_back(detail::euclidean(top, pcv[t]));
  });
  return {pairwise_mean(prob), pairwise_mean(bin)};
}

// Cell (d, k): accuracy over windows whose first input beat has bar position
// d, at output position k. Cells without windows are undefined (null).
struct DownbeatMatrix {
  int bar_positions = 0;
  std::vector<std::optional<double>> accuracy;  // bar_positions x 8, row-major
  std::vector<long long> count;

  std::optional<double> cell(int downbeat, int position) const {
    return accuracy[static_cast<std::size_t>((downbeat - 1) * static_cast<int>(kWindowLength) + position - 1)];
  }
  long long cell_count(int downbeat, int position) const {
    return count[static_cast<std::size_t>((downbeat - 1) * static_cast<int>(kWindowLength) + position - 1)];
  }
  friend bool operator==(const DownbeatMatrix&, const DownbeatMatrix&) = default;
};

inline DownbeatMatrix downbeat_analysis(std::span<const PredictionDistribution> preds,
                                        std::span<const WindowPair> windows, const Alphabet& a) {
  if (preds.size() != windows.size()) throw Misaligned("predictions and windows differ in number");
  DownbeatMatrix m;
  for (const auto& w : windows) {
    if (w.downbeat_position < 1) throw Misaligned("window without downbeat position");
    m.bar_positions = std::max(m.bar_positions, w.downbeat_position);
  }
  const std::size_t cells = static_cast<std::size_t>(m.bar_positions) * kWindowLength;
  std::vector<long long> hits(cells, 0);
  m.count.assign(cells, 0);
  m.accuracy.assign(cells, std::nullopt);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].steps() != kWindowLength || preds[i].alphabet_size() != a.size()) throw Misaligned("prediction shape");
    for (std::size_t k = 0; k < kWindowLength; ++k) {
      const std::size_t cell = static_cast<std::size_t>(windows[i].downbeat_position - 1) * kWindowLength + k;
      ++m.count[cell];
      if (preds[i].argmax(k) == static_cast<std::size_t>(a.index(windows[i].target[k]))) ++hits[cell];
    }
  }
  for (std::size_t c = 0; c < cells; ++c) {
    if (m.count[c] > 0) m.accuracy[c] = 100.0 * static_cast<double>(hits[c]) / static_cast<double>(m.count[c]);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Reports

struct EvalReport {
  std::string model;
  std::string alphabet;
  std::optional<int> fold;  // empty for the cross-fold aggregate
  std::size_t windows = 0;
  double accuracy = 0.0;
  std::optional<double> perplexity;  // empty when some target has probability 0
  double mean_rank = 0.0;
  double dist_probabilistic = 0.0;
  double dist_binary = 0.0;
  DownbeatMatrix downbeat;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

inline EvalReport evaluate(const Predictor& p, std::span<const WindowPair> test, std::optional<int> fold = std::nullopt) {
  if (test.empty()) throw EmptyDataset("no test windows");
  const Alphabet& a = p.alphabet();
  std::vector<InputWindow> inputs;
  std::vector<ChordWindow> targets;
  inputs.reserve(test.size());
  targets.reserve(test.size());
  for (const auto& w : test) {
    inputs.push_back(input_of(w));
    targets.push_back(w.target);
  }
  std::vector<PredictionDistribution> preds;
  preds.reserve(test.size());
  for (std::size_t start = 0; start < inputs.size(); start += kEvalBatch) {
    const std::size_t n = std::min(kEvalBatch, inputs.size() - start);
    auto chunk = p.predict_batch(std::span<const InputWindow>(inputs.data() + start, n));
    std::move(chunk.begin(), chunk.end(), std::back_inserter(preds));
  }

  EvalReport r;
  r.model = std::string(kind_name(p.kind()));
  r.alphabet = std::string(a.name());
  r.fold = fold;
  r.windows = test.size();
  r.accuracy = accuracy(preds, targets, a);
  try {
    r.perplexity = perplexity(preds, targets, a);
  } catch (const ZeroProbability&) {
    r.perplexity = std::nullopt;
  }
  r.mean_rank = mean_rank(preds, targets, a);
  const auto d = musical_distances(preds, targets, a);
  r.dist_probabilistic = d.probabilistic;
  r.dist_binary = d.binary;
  r.downbeat = downbeat_analysis(preds, test, a);
  return r;
}

// Unweighted mean over folds. A downbeat cell is averaged over the folds
// where it is defined; counts are summed.
inline EvalReport aggregate_reports(std::span<const EvalReport> reports) {
  if (reports.empty()) throw EmptyDataset("no reports to aggregate");
  EvalReport out;
  out.model = reports.front().model;
  out.alphabet = reports.front().alphabet;
  std::vector<double> acc, rank, dp, db, ppl;
  bool ppl_defined = true;
  int bars = 0;
  for (const auto& r : reports) {
    out.windows += r.windows;
    acc.push_back(r.accuracy);
    rank.push_back(r.mean_rank);
    dp.push_back(r.dist_probabilistic);
    db.push_back(r.dist_binary);
    if (r.perplexity) ppl.push_back(*r.perplexity);
    else ppl_defined = false;
    bars = std::max(bars, r.downbeat.bar_positions);
  }
  out.accuracy = pairwise_mean(acc);
  out.mean_rank = pairwise_mean(rank);
  out.dist_probabilistic = pairwise_mean(dp);
  out.dist_binary = pairwise_mean(db);
  if (ppl_defined) out.perplexity = pairwise_mean(ppl);

  out.downbeat.bar_positions = bars;
  const std::size_t cells = static_cast<std::size_t>(bars) * kWindowLength;
  out.downbeat.count.assign(cells, 0);
  out.downbeat.accuracy.assign(cells, std::nullopt);
  for (std::size_t c = 0; c < cells; ++c) {
    std::vector<double> vals;
    for (const auto& r : reports) {
      if (c >= r.downbeat.accuracy.size()) continue;
      out.downbeat.count[c] += r.downbeat.count[c];
      if (r.downbeat.accuracy[c]) vals.push_back(*r.downbeat.accuracy[c]);
    }
    if (!vals.empty()) out.downbeat.accuracy[c] = pairwise_mean(vals);
  }
  return out;
}

inline nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (int d = 1; d <= r.downbeat.bar_positions; ++d) {
    nlohmann::json acc = nlohmann::json::array();
    nlohmann::json cnt = nlohmann::json::array();
    for (int k = 1; k <= static_cast<int>(kWindowLength); ++k) {
      acc.push_back(optional_json(r.downbeat.cell(d, k)));
      cnt.push_back(r.downbeat.cell_count(d, k));
    }
    cells.push_back({{"downbeat", d}, {"accuracy", acc}, {"count", cnt}});
  }
  return {{"model", r.model},
          {"alphabet", r.alphabet},
          {"fold", r.fold ? nlohmann::json(*r.fold) : nlohmann::json()},
          {"windows", r.windows},
          {"accuracy", r.accuracy},
          {"perplexity", optional_json(r.perplexity)},
          {"mean_rank", r.mean_rank},
          {"dist_probabilistic", r.dist_probabilistic},
          {"dist_binary", r.dist_binary},
          {"downbeat_matrix", cells}};
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  const auto opt = [](const nlohmann::json& v) { return v.is_null() ? std::optional<double>() : v.get<double>(); };
  EvalReport r;
  r.model = j.at("model").get<std::string>();
  r.alphabet = j.at("alphabet").get<std::string>();
  if (!j.at("fold").is_null()) r.fold = j.at("fold").get<int>();
  r.windows = j.at("windows").get<std::size_t>();
  r.accuracy = j.at("accuracy").get<double>();
  r.perplexity = opt(j.at("perplexity"));
  r.mean_rank = j.at("mean_rank").get<double>();
  r.dist_probabilistic = j.at("dist_probabilistic").get<double>();
  r.dist_binary = j.at("dist_binary").get<double>();
  const auto& rows = j.at("downbeat_matrix");
  r.downbeat.bar_positions = static_cast<int>(rows.size());
  for (const auto& row : rows) {
    for (const auto& v : row.at("accuracy")) r.downbeat.accuracy.push_back(opt(v));
    for (const auto& v : row.at("count")) r.downbeat.count.push_back(v.get<long long>());
  }
  return r;
}

namespace detail {
inline std::string csv_number(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}
}  // namespace detail

// columns: model,alphabet,fold,metric,value
inline void write_metrics_csv(std::ostream& out, std::span<const EvalReport> reports, bool header = true) {
  if (header) out << "model,alphabet,fold,metric,value\n";
  for (const auto& r : reports) {
    const std::string fold = r.fold ? std::to_string(*r.fold) : "mean";
    const auto row = [&](const char* metric, const std::string& value) {
      out << r.model << ',' << r.alphabet << ',' << fold << ',' << metric << ',' << value << '\n';
    };
    row("accuracy", detail::csv_number(r.accuracy));
    row("perplexity", r.perplexity ? detail::csv_number(*r.perplexity) : "");
    row("mean_rank", detail::csv_number(r.mean_rank));
    row("dist_probabilistic", detail::csv_number(r.dist_probabilistic));
    row("dist_binary", detail::csv_number(r.dist_binary));
  }
}

// columns: model,alphabet,downbeat,position,accuracy,count
inline void write_downbeat_csv(std::ostream& out, const EvalReport& r, bool header = true) {
  if (header) out << "model,alphabet,downbeat,position,accuracy,count\n";
  for (int d = 1; d <= r.downbeat.bar_positions; ++d) {
    for (int k = 1; k <= static_cast<int>(kWindowLength); ++k) {
      const auto acc = r.downbeat.cell(d, k);
      out << r.model << ',' << r.alphabet << ',' << d << ',' << k << ','
          << (acc ? detail::csv_number(*acc) : "") << ',' << r.downbeat.cell_count(d, k) << '\n';
    }
  }
}

}  // namespace chordseq
