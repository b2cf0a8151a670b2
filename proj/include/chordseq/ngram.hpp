#pragma once

// Interpolated Kneser-Ney n-gram model over a closed integer vocabulary and a
// beam-search decoder that turns it into per-step chord distributions.
//
// Counting follows the usual KN conventions: the highest order keeps raw
// counts, lower orders keep continuation counts (number of distinct left
// extensions), except n-grams that begin with the start symbol, which keep
// raw counts because nothing can precede them.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chordseq/chord.hpp"
#include "chordseq/corpus.hpp"
#include "chordseq/distribution.hpp"
#include "chordseq/errors.hpp"

namespace chordseq {

using Token = int;
inline constexpr Token kStartToken = -1;

class KneserNeyModel {
public:
  using Context = std::vector<Token>;

  struct ContextStats {
    long long total = 0;      // sum of adjusted counts of the successors
    long long distinct = 0;   // successors with a positive adjusted count
    std::map<Token, long long> successors;
  };

  KneserNeyModel() = default;
  KneserNeyModel(int order, int vocab_size) : order_(order), vocab_(vocab_size) {
    if (order < 1 || vocab_size < 1) throw InvalidConfig("n-gram order and vocabulary size must be positive");
  }

  // Each sequence is implicitly preceded by one start symbol.
  void train(const std::vector<std::vector<Token>>& sequences) {
    std::vector<std::map<std::vector<Token>, long long>> raw(static_cast<std::size_t>(order_) + 1);
    bool any = false;
    for (const auto& seq : sequences) {
      std::vector<Token> s;
      s.reserve(seq.size() + 1);
      s.push_back(kStartToken);
      for (Token t : seq) {
        if (t < 0 || t >= vocab_) throw NotInAlphabet("token " + std::to_string(t) + " outside vocabulary");
        s.push_back(t);
      }
      for (std::size_t end = 1; end < s.size(); ++end) {
        any = true;
        for (int n = 1; n <= order_ && static_cast<std::size_t>(n) <= end + 1; ++n) {
          const std::size_t begin = end + 1 - static_cast<std::size_t>(n);
          ++raw[static_cast<std::size_t>(n)][std::vector<Token>(s.begin() + static_cast<std::ptrdiff_t>(begin),
                                                                 s.begin() + static_cast<std::ptrdiff_t>(end) + 1)];
        }
      }
    }
    if (!any) throw EmptyDataset("n-gram training corpus has no events");

    // adjusted[n][ngram]
    adjusted_.assign(static_cast<std::size_t>(order_) + 1, {});
    adjusted_[static_cast<std::size_t>(order_)] = raw[static_cast<std::size_t>(order_)];
    for (int n = 1; n < order_; ++n) {
      auto& adj = adjusted_[static_cast<std::size_t>(n)];
      for (const auto& [gram, count] : raw[static_cast<std::size_t>(n)]) {
        if (gram.front() == kStartToken) adj[gram] = count;
      }
      for (const auto& [gram, count] : raw[static_cast<std::size_t>(n) + 1]) {
        std::vector<Token> suffix(gram.begin() + 1, gram.end());
        if (suffix.front() == kStartToken) continue;
        ++adj[suffix];
      }
    }
    rebuild();
  }

  int order() const { return order_; }
  int vocab_size() const { return vocab_; }
  const std::vector<double>& discounts() const { return discounts_; }  // index = order

  // Smoothed distribution over the vocabulary. Only the last order-1 tokens
  // of `context` are used; shorter contexts start interpolation lower.
  std::vector<double> distribution(std::span<const Token> context) const {
    const std::size_t max_ctx = static_cast<std::size_t>(order_) - 1;
    if (context.size() > max_ctx) context = context.subspan(context.size() - max_ctx);
    std::vector<double> p = unigram_;
    for (std::size_t len = 1; len <= context.size(); ++len) {
      const std::size_t n = len + 1;
      const Context key(context.end() - static_cast<std::ptrdiff_t>(len), context.end());
      const auto& table = contexts_[n];
      const auto it = table.find(key);
      if (it == table.end() || it->second.total == 0) continue;
      const auto& st = it->second;
      const double d = discounts_[n];
      const double total = static_cast<double>(st.total);
      const double backoff = d * static_cast<double>(st.distinct) / total;
      for (auto& v : p) v *= backoff;
      for (const auto& [w, c] : st.successors) p[static_cast<std::size_t>(w)] += std::max(static_cast<double>(c) - d, 0.0) / total;
    }
    return p;
  }

  double probability(std::span<const Token> context, Token word) const {
    return distribution(context).at(static_cast<std::size_t>(word));
  }

  const std::map<Context, ContextStats>& contexts(int n) const { return contexts_.at(static_cast<std::size_t>(n)); }
  const std::map<std::vector<Token>, long long>& adjusted_counts(int n) const {
    return adjusted_.at(static_cast<std::size_t>(n));
  }

  // Dump keyed by rendered context; `name` renders a token (including the
  // start symbol).
  nlohmann::json to_json(const std::function<std::string(Token)>& name) const {
    nlohmann::json tables = nlohmann::json::object();
    for (int n = 1; n <= order_; ++n) {
      nlohmann::json table = nlohmann::json::object();
      for (const auto& [ctx, st] : contexts_[static_cast<std::size_t>(n)]) {
        std::string key;
        for (std::size_t i = 0; i < ctx.size(); ++i) key += (i ? "|" : "") + name(ctx[i]);
        nlohmann::json succ = nlohmann::json::object();
        for (const auto& [w, c] : st.successors) succ[name(w)] = c;
        table[key] = std::move(succ);
      }
      tables[std::to_string(n)] = std::move(table);
    }
    return {{"order", order_}, {"vocab_size", vocab_}, {"discounts", discounts_}, {"counts", std::move(tables)}};
  }

  static KneserNeyModel from_json(const nlohmann::json& j, const std::function<Token(const std::string&)>& parse) {
    try {
      KneserNeyModel m(j.at("order").get<int>(), j.at("vocab_size").get<int>());
      m.adjusted_.assign(static_cast<std::size_t>(m.order_) + 1, {});
      for (int n = 1; n <= m.order_; ++n) {
        for (const auto& [key, succ] : j.at("counts").at(std::to_string(n)).items()) {
          Context ctx;
          if (!key.empty()) {
            std::size_t pos = 0;
            while (true) {
              const auto bar = key.find('|', pos);
              ctx.push_back(parse(key.substr(pos, bar == std::string::npos ? std::string::npos : bar - pos)));
              if (bar == std::string::npos) break;
              pos = bar + 1;
            }
          }
          for (const auto& [word, count] : succ.items()) {
            std::vector<Token> gram = ctx;
            gram.push_back(parse(word));
            m.adjusted_[static_cast<std::size_t>(n)][gram] = count.get<long long>();
          }
        }
      }
      m.rebuild();
      return m;
    } catch (const nlohmann::json::exception& e) {
      throw InvalidConfig(std::string("n-gram model document: ") + e.what());
    }
  }

private:
  void rebuild() {
    const auto orders = static_cast<std::size_t>(order_) + 1;
    contexts_.assign(orders, {});
    discounts_.assign(orders, 0.5);
    for (std::size_t n = 1; n < orders; ++n) {
      long long n1 = 0, n2 = 0;
      for (const auto& [gram, count] : adjusted_[n]) {
        if (count == 1) ++n1;
        if (count == 2) ++n2;
        auto& st = contexts_[n][Context(gram.begin(), gram.end() - 1)];
        st.total += count;
        if (count > 0) ++st.distinct;
        st.successors[gram.back()] = count;
      }
      if (n1 > 0 && n2 > 0) discounts_[n] = static_cast<double>(n1) / static_cast<double>(n1 + 2 * n2);
    }
    // Unigram level interpolates with the uniform distribution.
    unigram_.assign(static_cast<std::size_t>(vocab_), 1.0 / static_cast<double>(vocab_));
    const auto it = contexts_[1].find(Context{});
    if (it != contexts_[1].end() && it->second.total > 0) {
      const auto& st = it->second;
      const double d = discounts_[1];
      const double total = static_cast<double>(st.total);
      const double backoff = d * static_cast<double>(st.distinct) / total;
      for (auto& v : unigram_) v *= backoff;
      for (const auto& [w, c] : st.successors) unigram_[static_cast<std::size_t>(w)] += std::max(static_cast<double>(c) - d, 0.0) / total;
    }
  }

  int order_ = 9;
  int vocab_ = 0;
  std::vector<std::map<std::vector<Token>, long long>> adjusted_;
  std::vector<std::map<Context, ContextStats>> contexts_;
  std::vector<double> discounts_;
  std::vector<double> unigram_;
};

// ---------------------------------------------------------------------------
// Beam search

struct BeamState {
  std::vector<Token> history;  // conditioning context followed by predicted tokens
  double log_probability = 0.0;
};

struct BeamStepTrace {
  double min_kept = 0.0;
  double max_dropped = -std::numeric_limits<double>::infinity();
  std::size_t kept = 0;
  std::size_t candidates = 0;
};

struct BeamResult {
  std::vector<std::vector<double>> marginals;  // one row per step
  std::vector<BeamStepTrace> trace;
};

// At each step every state is extended by every token, the best `width`
// candidates are kept (ties: lexicographically smaller history first), their
// probabilities renormalised, and the step marginal is the summed mass of the
// kept states ending in each token.
inline BeamResult beam_search(const KneserNeyModel& model, const std::vector<Token>& context, std::size_t steps,
                              std::size_t width = 100) {
  if (width == 0) throw InvalidConfig("beam width must be positive");
  const auto vocab = static_cast<std::size_t>(model.vocab_size());
  std::vector<BeamState> beam{{context, 0.0}};
  BeamResult result;
  for (std::size_t step = 0; step < steps; ++step) {
    std::vector<BeamState> candidates;
    candidates.reserve(beam.size() * vocab);
    for (const auto& state : beam) {
      const auto dist = model.distribution(state.history);
      for (std::size_t w = 0; w < vocab; ++w) {
        BeamState next{state.history, state.log_probability + std::log(dist[w])};
        next.history.push_back(static_cast<Token>(w));
        candidates.push_back(std::move(next));
      }
    }
    const auto better = [](const BeamState& a, const BeamState& b) {
      if (a.log_probability != b.log_probability) return a.log_probability > b.log_probability;
      return a.history < b.history;
    };
    std::sort(candidates.begin(), candidates.end(), better);
    BeamStepTrace trace;
    trace.candidates = candidates.size();
    if (candidates.size() > width) {
      trace.max_dropped = candidates[width].log_probability;
      candidates.resize(width);
    }
    trace.kept = candidates.size();
    trace.min_kept = candidates.back().log_probability;
    result.trace.push_back(trace);

    double top = candidates.front().log_probability;
    double mass = 0.0;
    for (const auto& s : candidates) mass += std::exp(s.log_probability - top);
    const double log_norm = top + std::log(mass);
    std::vector<double> marginal(vocab, 0.0);
    for (auto& s : candidates) {
      s.log_probability = std::min(0.0, s.log_probability - log_norm);
      marginal[static_cast<std::size_t>(s.history.back())] += std::exp(s.log_probability);
    }
    result.marginals.push_back(std::move(marginal));
    beam = std::move(candidates);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Chord-level wrappers

inline constexpr int kNGramOrder = 9;
inline constexpr std::size_t kBeamWidth = 100;

struct NGramModel {
  AlphabetLevel level = AlphabetLevel::A1;
  KneserNeyModel lm;
};

// Context for a window: padded no-chords collapse to one start symbol.
inline std::vector<Token> ngram_context(const InputWindow& w, const Alphabet& a) {
  std::vector<Token> ctx;
  const auto pad = static_cast<std::size_t>(std::clamp(w.leading_pad, 0, static_cast<int>(kWindowLength)));
  if (pad > 0) ctx.push_back(kStartToken);
  for (std::size_t i = pad; i < kWindowLength; ++i) ctx.push_back(a.index(w.chords[i]));
  return ctx;
}

inline NGramModel train_ngram(const std::vector<BeatTrack>& tracks, const std::vector<std::size_t>& indices,
                              const Alphabet& a, int order = kNGramOrder) {
  std::vector<std::vector<Token>> sequences;
  for (std::size_t i : indices) {
    std::vector<Token> seq;
    seq.reserve(tracks[i].size());
    for (const auto& c : tracks[i].chords) seq.push_back(a.index(reduce_chord(c, a)));
    sequences.push_back(std::move(seq));
  }
  if (sequences.empty()) throw EmptyDataset("no training songs for the n-gram model");
  NGramModel m{a.level(), KneserNeyModel(order, static_cast<int>(a.size()))};
  m.lm.train(sequences);
  return m;
}

inline PredictionDistribution beam_predict(const NGramModel& m, const InputWindow& w,
                                           std::size_t width = kBeamWidth) {
  const Alphabet& a = alphabet(m.level);
  const auto beam = beam_search(m.lm, ngram_context(w, a), kWindowLength, width);
  PredictionDistribution out(kWindowLength, a.size());
  for (std::size_t k = 0; k < kWindowLength; ++k) {
    std::copy(beam.marginals[k].begin(), beam.marginals[k].end(), out.row(k).begin());
  }
  return out;
}

inline std::string ngram_token_name(const Alphabet& a, Token t) {
  return t == kStartToken ? std::string("<s>") : render_chord(a.symbol_at(static_cast<std::size_t>(t)));
}

inline Token ngram_token_parse(const Alphabet& a, const std::string& s) {
  return s == "<s>" ? kStartToken : a.index(parse_chord(s));
}

}  // namespace chordseq
