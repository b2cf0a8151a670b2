#pragma once

// Every model behind one interface: random and repeat baselines, the 9-gram,
// the MLP encoder-decoder and the two-stage multi-scale encoder-decoder.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "chordseq/aggregation.hpp"
#include "chordseq/chord.hpp"
#include "chordseq/config.hpp"
#include "chordseq/corpus.hpp"
#include "chordseq/distribution.hpp"
#include "chordseq/errors.hpp"
#include "chordseq/ngram.hpp"
#include "chordseq/nn.hpp"
#include "chordseq/random.hpp"

namespace chordseq {

enum class PredictorKind { Random, Repeat, MlpEd, MsEd, NGram };

inline std::string_view kind_name(PredictorKind k) {
  switch (k) {
    case PredictorKind::Random: return "random";
    case PredictorKind::Repeat: return "repeat";
    case PredictorKind::MlpEd: return "mlp-ed";
    case PredictorKind::MsEd: return "ms-ed";
    case PredictorKind::NGram: return "ngram";
  }
  return "?";
}

inline PredictorKind parse_kind(std::string_view s) {
  for (auto k : {PredictorKind::Random, PredictorKind::Repeat, PredictorKind::MlpEd, PredictorKind::MsEd,
                 PredictorKind::NGram}) {
    if (kind_name(k) == s) return k;
  }
  throw InvalidConfig("unknown model kind '" + std::string(s) + "'");
}

class Predictor {
public:
  explicit Predictor(AlphabetLevel level) : level_(level) {}
  virtual ~Predictor() = default;

  virtual PredictorKind kind() const = 0;
  virtual PredictionDistribution predict(const InputWindow& w) const = 0;

  virtual std::vector<PredictionDistribution> predict_batch(std::span<const InputWindow> windows) const {
    std::vector<PredictionDistribution> out;
    out.reserve(windows.size());
    for (const auto& w : windows) out.push_back(predict(w));
    return out;
  }

  virtual std::size_t parameter_count() const { return 0; }
  virtual nlohmann::json model_json() const { return nullptr; }

  const Alphabet& alphabet() const { return chordseq::alphabet(level_); }

protected:
  void check_input(const InputWindow& w) const {
    for (const auto& c : w.chords) {
      if (!alphabet().contains(c)) {
        throw NotInAlphabet(render_chord(c) + " not in " + std::string(alphabet().name()));
      }
    }
  }

private:
  AlphabetLevel level_;
};

class RandomPredictor final : public Predictor {
public:
  using Predictor::Predictor;
  PredictorKind kind() const override { return PredictorKind::Random; }
  PredictionDistribution predict(const InputWindow& w) const override {
    check_input(w);
    PredictionDistribution d(kWindowLength, alphabet().size());
    const double p = 1.0 / static_cast<double>(alphabet().size());
    for (std::size_t k = 0; k < kWindowLength; ++k) std::fill(d.row(k).begin(), d.row(k).end(), p);
    return d;
  }
};

class RepeatPredictor final : public Predictor {
public:
  using Predictor::Predictor;
  PredictorKind kind() const override { return PredictorKind::Repeat; }
  PredictionDistribution predict(const InputWindow& w) const override {
    check_input(w);
    PredictionDistribution d(kWindowLength, alphabet().size());
    const auto last = static_cast<std::size_t>(alphabet().index(w.chords.back()));
    for (std::size_t k = 0; k < kWindowLength; ++k) d.at(k, last) = 1.0;
    return d;
  }
};

class NGramPredictor final : public Predictor {
public:
  explicit NGramPredictor(NGramModel model) : Predictor(model.level), model_(std::move(model)) {}
  PredictorKind kind() const override { return PredictorKind::NGram; }
  PredictionDistribution predict(const InputWindow& w) const override {
    check_input(w);
    return beam_predict(model_, w);
  }
  const NGramModel& model() const { return model_; }
  nlohmann::json model_json() const override {
    const Alphabet& a = alphabet();
    return model_.lm.to_json([&a](Token t) { return ngram_token_name(a, t); });
  }

private:
  NGramModel model_;
};

// ---------------------------------------------------------------------------
// Encoder-decoder building blocks

struct EncoderDecoder {
  nn::DenseNet encoder;
  nn::DenseNet decoder;

  std::size_t parameter_count() const { return encoder.parameter_count() + decoder.parameter_count(); }

  nlohmann::json to_json() const { return {{"encoder", nn::to_json(encoder)}, {"decoder", nn::to_json(decoder)}}; }
  static EncoderDecoder from_json(const nlohmann::json& j) {
    return {nn::dense_net_from_json(j.at("encoder")), nn::dense_net_from_json(j.at("decoder"))};
  }
  friend bool operator==(const EncoderDecoder&, const EncoderDecoder&) = default;
};

// input -> hidden -> hidden -> bottleneck (relu, relu, linear)
inline nn::DenseNet make_encoder(int input, const TrainConfig& cfg, Rng& rng) {
  using nn::Activation;
  return nn::DenseNet(input,
                      {{cfg.hidden_units, Activation::Relu},
                       {cfg.hidden_units, Activation::Relu},
                       {cfg.bottleneck, Activation::Linear}},
                      cfg.dropout, rng);
}

// code -> hidden -> hidden -> output (relu, relu, linear)
inline nn::DenseNet make_decoder(int code, int output, const TrainConfig& cfg, Rng& rng) {
  using nn::Activation;
  return nn::DenseNet(code,
                      {{cfg.hidden_units, Activation::Relu},
                       {cfg.hidden_units, Activation::Relu},
                       {output, Activation::Linear}},
                      cfg.dropout, rng);
}

inline EncoderDecoder make_encoder_decoder(int input, int output, const TrainConfig& cfg, Rng& rng) {
  EncoderDecoder ed;
  ed.encoder = make_encoder(input, cfg, rng);
  ed.decoder = make_decoder(cfg.bottleneck, output, cfg, rng);
  return ed;
}

inline int scale_width(const Alphabet& a, int scale) {
  return static_cast<int>(kWindowLength / static_cast<std::size_t>(scale) * a.size());
}

// Columns are the selected windows at the given aggregation scale.
inline nn::Matrix window_features(std::span<const ChordWindow> windows, std::span<const std::size_t> idx,
                                  const Alphabet& a, int scale) {
  nn::Matrix m(scale_width(a, scale), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) {
    const auto f = scaled_features(windows[idx[j]], a, scale);
    for (std::size_t r = 0; r < f.size(); ++r) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = f[r];
  }
  return m;
}

inline nn::Matrix window_features(std::span<const ChordWindow> windows, const Alphabet& a, int scale) {
  std::vector<std::size_t> idx(windows.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return window_features(windows, idx, a, scale);
}

inline PredictionDistribution distribution_from_logits(const nn::Matrix& logits, Eigen::Index col, std::size_t width) {
  const nn::Matrix probs = nn::grouped_softmax(logits.col(col), static_cast<Eigen::Index>(width));
  PredictionDistribution d(kWindowLength, width);
  for (std::size_t k = 0; k < kWindowLength; ++k) {
    for (std::size_t c = 0; c < width; ++c) d.at(k, c) = probs(static_cast<Eigen::Index>(k * width + c), 0);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Training data and loop

struct WindowSet {
  std::vector<ChordWindow> inputs;
  std::vector<ChordWindow> targets;

  WindowSet() = default;
  explicit WindowSet(const std::vector<WindowPair>& pairs) {
    inputs.reserve(pairs.size());
    targets.reserve(pairs.size());
    for (const auto& p : pairs) {
      inputs.push_back(p.input);
      targets.push_back(p.target);
    }
  }
  std::size_t size() const { return inputs.size(); }
  bool empty() const { return inputs.empty(); }
};

struct TrainingData {
  WindowSet train;
  WindowSet validation;
};

inline TrainingData training_data(const std::vector<BeatTrack>& tracks, const FoldSplit& fold, const Alphabet& a) {
  return {WindowSet(windows_for(tracks, fold.train, a)), WindowSet(windows_for(tracks, fold.validation, a))};
}

struct EpochRecord {
  std::string stage;
  int epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
};

using TrainingCurve = std::vector<EpochRecord>;

// Minibatch loop with early stopping. `step(model, batch)` performs one
// optimiser update and returns the batch loss; `validate(model)` returns the
// mean validation loss. The model is left at its best validation epoch.
template <class Model, class StepFn, class ValidateFn>
void fit(Model& model, std::size_t train_size, const TrainConfig& cfg, Rng& shuffle_rng, const std::string& stage,
         TrainingCurve& curve, StepFn&& step, ValidateFn&& validate) {
  if (train_size == 0) throw EmptyDataset(stage + ": no training windows");
  std::vector<std::size_t> order(train_size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Model best = model;
  double best_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < train_size; start += batch) {
      const std::size_t n = std::min(batch, train_size - start);
      loss_sum += step(model, std::span<const std::size_t>(order.data() + start, n)) * static_cast<double>(n);
    }
    const double val = validate(model);
    curve.push_back({stage, epoch, loss_sum / static_cast<double>(train_size), val});
    if (val < best_loss) {
      best_loss = val;
      best = model;
      since_best = 0;
    } else if (++since_best > cfg.patience) {
      break;
    }
  }
  model = std::move(best);
}

inline constexpr std::size_t kEvalBatch = 512;

// Mean loss over a whole set, evaluated in fixed-size chunks in index order.
template <class LossFn>
double mean_over(std::size_t n, LossFn&& chunk_loss) {
  double sum = 0.0;
  for (std::size_t start = 0; start < n; start += kEvalBatch) {
    const std::size_t m = std::min(kEvalBatch, n - start);
    sum += chunk_loss(start, m) * static_cast<double>(m);
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

inline std::vector<std::size_t> index_range(std::size_t start, std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), start);
  return idx;
}

// Per-component random streams. A run is identified by the config seed and a
// run index (the fold); each trained component gets its own sub-stream.
enum class Component : std::uint64_t { Mlp = 0, Scale2 = 1, Scale4 = 2, Final = 3 };

inline std::uint64_t stream_index(std::uint64_t run, Component c) { return run * 16 + static_cast<std::uint64_t>(c); }

// ---------------------------------------------------------------------------
// MLP encoder-decoder

class MlpEdPredictor final : public Predictor {
public:
  MlpEdPredictor(AlphabetLevel level, EncoderDecoder ed) : Predictor(level), ed_(std::move(ed)) {}

  static MlpEdPredictor create(const TrainConfig& cfg, std::uint64_t run = 0) {
    const Alphabet& a = chordseq::alphabet(cfg.alphabet);
    Rng init(cfg.seed, Stream::Init, stream_index(run, Component::Mlp));
    const int width = scale_width(a, 1);
    return MlpEdPredictor(cfg.alphabet, make_encoder_decoder(width, width, cfg, init));
  }

  PredictorKind kind() const override { return PredictorKind::MlpEd; }
  std::size_t parameter_count() const override { return ed_.parameter_count(); }

  PredictionDistribution predict(const InputWindow& w) const override {
    return predict_batch(std::span<const InputWindow>(&w, 1)).front();
  }

  std::vector<PredictionDistribution> predict_batch(std::span<const InputWindow> windows) const override {
    std::vector<ChordWindow> inputs;
    for (const auto& w : windows) {
      check_input(w);
      inputs.push_back(w.chords);
    }
    const nn::Matrix logits = this->logits(window_features(inputs, alphabet(), 1));
    std::vector<PredictionDistribution> out;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) out.push_back(distribution_from_logits(logits, j, alphabet().size()));
    return out;
  }

  nn::Matrix logits(const nn::Matrix& features) const {
    return nn::forward(ed_.decoder, nn::forward(ed_.encoder, features, nn::Mode::Eval, nullptr), nn::Mode::Eval, nullptr);
  }

  const EncoderDecoder& network() const { return ed_; }
  EncoderDecoder& network() { return ed_; }

  nlohmann::json model_json() const override { return ed_.to_json(); }

private:
  EncoderDecoder ed_;
};

struct MlpEdTraining {
  MlpEdPredictor predictor;
  TrainingCurve curve;
};

inline MlpEdTraining train_mlp_ed(const TrainingData& data, const TrainConfig& cfg, std::uint64_t run = 0) {
  cfg.validate();
  if (data.train.empty() || data.validation.empty()) throw EmptyDataset("mlp-ed needs training and validation windows");
  const Alphabet& a = chordseq::alphabet(cfg.alphabet);
  MlpEdPredictor model = MlpEdPredictor::create(cfg, run);
  Rng dropout(cfg.seed, Stream::Dropout, stream_index(run, Component::Mlp));
  Rng shuffle(cfg.seed, Stream::Shuffle, stream_index(run, Component::Mlp));
  nn::AdamState adam_enc(model.network().encoder, cfg.learning_rate);
  nn::AdamState adam_dec(model.network().decoder, cfg.learning_rate);
  const nn::LossSpec loss{nn::LossKind::GroupedCrossEntropy, static_cast<Eigen::Index>(a.size())};

  TrainingCurve curve;
  fit(
      model, data.train.size(), cfg, shuffle, "mlp-ed", curve,
      [&](MlpEdPredictor& m, std::span<const std::size_t> batch) {
        auto& ed = m.network();
        const nn::Matrix x = window_features(data.train.inputs, batch, a, 1);
        const nn::Matrix t = window_features(data.train.targets, batch, a, 1);
        nn::ForwardCache ce, cd;
        const nn::Matrix z = nn::forward(ed.encoder, x, nn::Mode::Train, &dropout, &ce);
        const nn::Matrix y = nn::forward(ed.decoder, z, nn::Mode::Train, &dropout, &cd);
        const auto l = nn::loss_and_grad(loss, y, t);
        const auto gd = nn::backward(ed.decoder, cd, l.gradient);
        const auto ge = nn::backward(ed.encoder, ce, gd.input);
        nn::adam_step(ed.decoder, gd, adam_dec);
        nn::adam_step(ed.encoder, ge, adam_enc);
        return l.loss;
      },
      [&](const MlpEdPredictor& m) {
        return mean_over(data.validation.size(), [&](std::size_t start, std::size_t n) {
          const auto idx = index_range(start, n);
          const nn::Matrix x = window_features(data.validation.inputs, idx, a, 1);
          const nn::Matrix t = window_features(data.validation.targets, idx, a, 1);
          return nn::loss_and_grad(loss, m.logits(x), t).loss;
        });
      });
  return {std::move(model), std::move(curve)};
}

// ---------------------------------------------------------------------------
// Multi-scale encoder-decoder
//
// Stage 1 trains one encoder-decoder per aggregated scale (2 and 4) to
// regress aggregated target counts under MSE. Stage 2 freezes those encoders,
// concatenates their codes after the code of a fresh scale-1 encoder, and
// trains that encoder together with the final decoder under grouped
// cross-entropy against the one-hot targets.

struct MsEdNetworks {
  EncoderDecoder scale2;
  EncoderDecoder scale4;
  nn::DenseNet encoder1;
  nn::DenseNet decoder;  // input: [z1; z2; z4]

  std::size_t parameter_count() const {
    return scale2.parameter_count() + scale4.parameter_count() + encoder1.parameter_count() + decoder.parameter_count();
  }

  nlohmann::json to_json() const {
    return {{"scale2", scale2.to_json()},
            {"scale4", scale4.to_json()},
            {"encoder1", nn::to_json(encoder1)},
            {"decoder", nn::to_json(decoder)}};
  }

  static MsEdNetworks from_json(const nlohmann::json& j) {
    return {EncoderDecoder::from_json(j.at("scale2")), EncoderDecoder::from_json(j.at("scale4")),
            nn::dense_net_from_json(j.at("encoder1")), nn::dense_net_from_json(j.at("decoder"))};
  }
};

inline nn::Matrix concat_codes(const nn::Matrix& z1, const nn::Matrix& z2, const nn::Matrix& z4) {
  nn::Matrix c(z1.rows() + z2.rows() + z4.rows(), z1.cols());
  c << z1, z2, z4;
  return c;
}

class MsEdPredictor final : public Predictor {
public:
  MsEdPredictor(AlphabetLevel level, MsEdNetworks nets) : Predictor(level), nets_(std::move(nets)) {}

  static MsEdPredictor create(const TrainConfig& cfg, std::uint64_t run = 0) {
    const Alphabet& a = chordseq::alphabet(cfg.alphabet);
    Rng init2(cfg.seed, Stream::Init, stream_index(run, Component::Scale2));
    Rng init4(cfg.seed, Stream::Init, stream_index(run, Component::Scale4));
    Rng init1(cfg.seed, Stream::Init, stream_index(run, Component::Final));
    MsEdNetworks nets;
    nets.scale2 = make_encoder_decoder(scale_width(a, 2), scale_width(a, 2), cfg, init2);
    nets.scale4 = make_encoder_decoder(scale_width(a, 4), scale_width(a, 4), cfg, init4);
    nets.encoder1 = make_encoder(scale_width(a, 1), cfg, init1);
    nets.decoder = make_decoder(3 * cfg.bottleneck, scale_width(a, 1), cfg, init1);
    return MsEdPredictor(cfg.alphabet, std::move(nets));
  }

  PredictorKind kind() const override { return PredictorKind::MsEd; }
  std::size_t parameter_count() const override { return nets_.parameter_count(); }

  PredictionDistribution predict(const InputWindow& w) const override {
    return predict_batch(std::span<const InputWindow>(&w, 1)).front();
  }

  std::vector<PredictionDistribution> predict_batch(std::span<const InputWindow> windows) const override {
    std::vector<ChordWindow> inputs;
    for (const auto& w : windows) {
      check_input(w);
      inputs.push_back(w.chords);
    }
    const nn::Matrix logits = this->logits(inputs);
    std::vector<PredictionDistribution> out;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) out.push_back(distribution_from_logits(logits, j, alphabet().size()));
    return out;
  }

  nn::Matrix frozen_codes(std::span<const ChordWindow> inputs, std::span<const std::size_t> idx, int scale) const {
    const auto& ed = scale == 2 ? nets_.scale2 : nets_.scale4;
    return nn::forward(ed.encoder, window_features(inputs, idx, alphabet(), scale), nn::Mode::Eval, nullptr);
  }

  nn::Matrix logits(std::span<const ChordWindow> inputs) const {
    const auto idx = index_range(0, inputs.size());
    const nn::Matrix z1 =
        nn::forward(nets_.encoder1, window_features(inputs, idx, alphabet(), 1), nn::Mode::Eval, nullptr);
    return nn::forward(nets_.decoder, concat_codes(z1, frozen_codes(inputs, idx, 2), frozen_codes(inputs, idx, 4)),
                       nn::Mode::Eval, nullptr);
  }

  const MsEdNetworks& networks() const { return nets_; }
  MsEdNetworks& networks() { return nets_; }

  nlohmann::json model_json() const override { return nets_.to_json(); }

private:
  MsEdNetworks nets_;
};

// Stage 1: one aggregated encoder-decoder trained on MSE between decoder
// output and the aggregated target counts.
inline TrainingCurve pretrain_aggregated(EncoderDecoder& ed, int scale, const TrainingData& data,
                                         const TrainConfig& cfg, std::uint64_t stream) {
  if (scale != 2 && scale != 4) throw InvalidConfig("aggregated pre-training runs at scale 2 or 4");
  if (data.train.empty() || data.validation.empty()) throw EmptyDataset("pre-training needs training and validation windows");
  const Alphabet& a = chordseq::alphabet(cfg.alphabet);
  Rng dropout(cfg.seed, Stream::Dropout, stream);
  Rng shuffle(cfg.seed, Stream::Shuffle, stream);
  nn::AdamState adam_enc(ed.encoder, cfg.learning_rate);
  nn::AdamState adam_dec(ed.decoder, cfg.learning_rate);
  const nn::LossSpec loss{nn::LossKind::Mse, 1};
  const auto eval_loss = [&](const EncoderDecoder& m, const WindowSet& set, std::span<const std::size_t> idx) {
    const nn::Matrix x = window_features(set.inputs, idx, a, scale);
    const nn::Matrix t = window_features(set.targets, idx, a, scale);
    const nn::Matrix y = nn::forward(m.decoder, nn::forward(m.encoder, x, nn::Mode::Eval, nullptr), nn::Mode::Eval, nullptr);
    return nn::loss_and_grad(loss, y, t).loss;
  };

  TrainingCurve curve;
  fit(
      ed, data.train.size(), cfg, shuffle, "scale" + std::to_string(scale), curve,
      [&](EncoderDecoder& m, std::span<const std::size_t> batch) {
        const nn::Matrix x = window_features(data.train.inputs, batch, a, scale);
        const nn::Matrix t = window_features(data.train.targets, batch, a, scale);
        nn::ForwardCache ce, cd;
        const nn::Matrix z = nn::forward(m.encoder, x, nn::Mode::Train, &dropout, &ce);
        const nn::Matrix y = nn::forward(m.decoder, z, nn::Mode::Train, &dropout, &cd);
        const auto l = nn::loss_and_grad(loss, y, t);
        const auto gd = nn::backward(m.decoder, cd, l.gradient);
        const auto ge = nn::backward(m.encoder, ce, gd.input);
        nn::adam_step(m.decoder, gd, adam_dec);
        nn::adam_step(m.encoder, ge, adam_enc);
        return l.loss;
      },
      [&](const EncoderDecoder& m) {
        return mean_over(data.validation.size(), [&](std::size_t start, std::size_t n) {
          return eval_loss(m, data.validation, index_range(start, n));
        });
      });
  return curve;
}

struct MsEdTraining {
  MsEdPredictor predictor;
  TrainingCurve curve;
};

// Stage 2 only: trains encoder1 and the final decoder on top of the frozen
// aggregated encoders already present in `model`.
inline TrainingCurve train_ms_ed_final(MsEdPredictor& model, const TrainingData& data, const TrainConfig& cfg,
                                       std::uint64_t run = 0) {
  if (data.train.empty() || data.validation.empty()) throw EmptyDataset("ms-ed needs training and validation windows");
  const Alphabet& a = chordseq::alphabet(cfg.alphabet);
  const auto stream = stream_index(run, Component::Final);
  Rng dropout(cfg.seed, Stream::Dropout, stream);
  Rng shuffle(cfg.seed, Stream::Shuffle, stream);

  // Frozen encoders run in eval mode, so their codes are fixed per window.
  const auto all_train = index_range(0, data.train.size());
  const auto all_val = index_range(0, data.validation.size());
  const nn::Matrix z2_train = model.frozen_codes(data.train.inputs, all_train, 2);
  const nn::Matrix z4_train = model.frozen_codes(data.train.inputs, all_train, 4);
  const nn::Matrix z2_val = model.frozen_codes(data.validation.inputs, all_val, 2);
  const nn::Matrix z4_val = model.frozen_codes(data.validation.inputs, all_val, 4);
  const auto gather = [](const nn::Matrix& z, std::span<const std::size_t> idx) {
    nn::Matrix out(z.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = z.col(static_cast<Eigen::Index>(idx[j]));
    return out;
  };

  nn::AdamState adam_enc(model.networks().encoder1, cfg.learning_rate);
  nn::AdamState adam_dec(model.networks().decoder, cfg.learning_rate);
  const nn::LossSpec loss{nn::LossKind::GroupedCrossEntropy, static_cast<Eigen::Index>(a.size())};
  const Eigen::Index code = model.networks().encoder1.output_size();

  TrainingCurve curve;
  fit(
      model, data.train.size(), cfg, shuffle, "ms-ed", curve,
      [&](MsEdPredictor& m, std::span<const std::size_t> batch) {
        auto& nets = m.networks();
        const nn::Matrix x = window_features(data.train.inputs, batch, a, 1);
        const nn::Matrix t = window_features(data.train.targets, batch, a, 1);
        nn::ForwardCache ce, cd;
        const nn::Matrix z1 = nn::forward(nets.encoder1, x, nn::Mode::Train, &dropout, &ce);
        const nn::Matrix y = nn::forward(nets.decoder, concat_codes(z1, gather(z2_train, batch), gather(z4_train, batch)),
                                         nn::Mode::Train, &dropout, &cd);
        const auto l = nn::loss_and_grad(loss, y, t);
        const auto gd = nn::backward(nets.decoder, cd, l.gradient);
        const auto ge = nn::backward(nets.encoder1, ce, gd.input.topRows(code));
        nn::adam_step(nets.decoder, gd, adam_dec);
        nn::adam_step(nets.encoder1, ge, adam_enc);
        return l.loss;
      },
      [&](const MsEdPredictor& m) {
        const auto& nets = m.networks();
        return mean_over(data.validation.size(), [&](std::size_t start, std::size_t n) {
          const auto idx = index_range(start, n);
          const nn::Matrix x = window_features(data.validation.inputs, idx, a, 1);
          const nn::Matrix t = window_features(data.validation.targets, idx, a, 1);
          const nn::Matrix z1 = nn::forward(nets.encoder1, x, nn::Mode::Eval, nullptr);
          const nn::Matrix y = nn::forward(nets.decoder, concat_codes(z1, gather(z2_val, idx), gather(z4_val, idx)),
                                           nn::Mode::Eval, nullptr);
          return nn::loss_and_grad(loss, y, t).loss;
        });
      });
  return curve;
}

inline MsEdTraining train_ms_ed(const TrainingData& data, const TrainConfig& cfg, std::uint64_t run = 0) {
  cfg.validate();
  MsEdPredictor model = MsEdPredictor::create(cfg, run);
  TrainingCurve curve =
      pretrain_aggregated(model.networks().scale2, 2, data, cfg, stream_index(run, Component::Scale2));
  const TrainingCurve c4 =
      pretrain_aggregated(model.networks().scale4, 4, data, cfg, stream_index(run, Component::Scale4));
  curve.insert(curve.end(), c4.begin(), c4.end());
  const TrainingCurve c1 = train_ms_ed_final(model, data, cfg, run);
  curve.insert(curve.end(), c1.begin(), c1.end());
  return {std::move(model), std::move(curve)};
}

// ---------------------------------------------------------------------------
// Model files: {kind, alphabet, config, fold, parameter_count, model}

struct ModelFile {
  std::unique_ptr<Predictor> predictor;
  TrainConfig config;
  int fold = 0;
};

inline nlohmann::json model_file_json(const Predictor& p, const TrainConfig& cfg, int fold) {
  return {{"kind", kind_name(p.kind())},
          {"alphabet", p.alphabet().name()},
          {"config", cfg.to_json()},
          {"fold", fold},
          {"parameter_count", p.parameter_count()},
          {"model", p.model_json()}};
}

inline ModelFile model_file_from_json(const nlohmann::json& j) {
  try {
    ModelFile f;
    f.config = TrainConfig::from_json(j.at("config"));
    f.fold = j.at("fold").get<int>();
    const auto level = parse_alphabet_level(j.at("alphabet").get<std::string>());
    if (level != f.config.alphabet) throw AlphabetMismatch("model header and config disagree on the alphabet");
    const Alphabet& a = alphabet(level);
    switch (parse_kind(j.at("kind").get<std::string>())) {
      case PredictorKind::Random: f.predictor = std::make_unique<RandomPredictor>(level); break;
      case PredictorKind::Repeat: f.predictor = std::make_unique<RepeatPredictor>(level); break;
      case PredictorKind::MlpEd:
        f.predictor = std::make_unique<MlpEdPredictor>(level, EncoderDecoder::from_json(j.at("model")));
        break;
      case PredictorKind::MsEd:
        f.predictor = std::make_unique<MsEdPredictor>(level, MsEdNetworks::from_json(j.at("model")));
        break;
      case PredictorKind::NGram:
        f.predictor = std::make_unique<NGramPredictor>(NGramModel{
            level, KneserNeyModel::from_json(j.at("model"), [&a](const std::string& s) { return ngram_token_parse(a, s); })});
        break;
    }
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig(std::string("malformed model file: ") + e.what());
  }
}

}  // namespace chordseq
