// chordseq: ingest | synth | train | eval | predict

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "chordseq/commands.hpp"

namespace {

using namespace chordseq;

struct Shared {
  std::string alphabet;
  std::optional<std::uint64_t> seed;
  std::optional<int> folds;
  int jobs = 1;
  std::string config;
  std::string out = ".";
  int verbosity = 0;
};

void add_shared(CLI::App* cmd, Shared& s) {
  cmd->add_option("--alphabet", s.alphabet, "chord alphabet")->check(CLI::IsMember({"A1", "A2", "A3"}));
  cmd->add_option("--seed", s.seed, "run seed");
  cmd->add_option("--folds", s.folds, "number of cross-validation folds")->check(CLI::PositiveNumber);
  cmd->add_option("--jobs", s.jobs, "folds run concurrently")->check(CLI::PositiveNumber);
  cmd->add_option("--config", s.config, "key = value config file");
  cmd->add_option("--out", s.out, "output directory");
  cmd->add_flag("-v,--verbose", s.verbosity, "more output");
}

TrainConfig resolve_config(const Shared& s) {
  TrainConfig cfg;
  if (!s.config.empty()) cfg.apply(load_key_values(s.config));
  if (!s.alphabet.empty()) cfg.alphabet = parse_alphabet_level(s.alphabet);
  if (s.seed) cfg.seed = *s.seed;
  if (s.folds) cfg.folds = *s.folds;
  cfg.validate();
  return cfg;
}

std::optional<AlphabetLevel> alphabet_flag(const Shared& s) {
  if (s.alphabet.empty()) return std::nullopt;
  return parse_alphabet_level(s.alphabet);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Beat-aligned chord sequence prediction"};
  app.require_subcommand(1);
  Shared s;

  std::string input, kind;
  std::vector<std::string> models, labels;
  std::string corpus;

  auto* ingest = app.add_subcommand("ingest", "read a directory of .xlab files into a corpus");
  ingest->add_option("input", input, "directory of .xlab files")->required();
  add_shared(ingest, s);

  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus from a JSON spec");
  synth->add_option("spec", input, "synthesis spec (JSON)")->required();
  add_shared(synth, s);

  auto* train = app.add_subcommand("train", "train one model per fold");
  train->add_option("corpus", corpus, "corpus file")->required();
  train->add_option("--kind", kind, "model kind")
      ->required()
      ->check(CLI::IsMember({"random", "repeat", "ngram", "mlp-ed", "ms-ed"}));
  add_shared(train, s);

  auto* eval = app.add_subcommand("eval", "evaluate model files on their test folds");
  eval->add_option("corpus", corpus, "corpus file")->required();
  eval->add_option("models", models, "model files")->required();
  add_shared(eval, s);

  auto* predict = app.add_subcommand("predict", "predict the next 8 beats from 8 chord labels");
  predict->add_option("model", input, "model file")->required();
  predict->add_option("labels", labels, "8 chord labels")->required();
  add_shared(predict, s);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  std::ostream& log = std::cerr;
  try {
    if (*ingest) {
      cmd_ingest(input, s.out, log);
    } else if (*synth) {
      cmd_synth(input, s.out, log, s.seed);
    } else if (*train) {
      cmd_train(corpus, parse_kind(kind), resolve_config(s), s.out, s.jobs, log);
    } else if (*eval) {
      std::vector<std::filesystem::path> paths(models.begin(), models.end());
      cmd_eval(paths, corpus, alphabet_flag(s), s.out, s.jobs, log);
    } else if (*predict) {
      cmd_predict(input, labels, alphabet_flag(s), s.verbosity > 0, std::cout);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.family());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
