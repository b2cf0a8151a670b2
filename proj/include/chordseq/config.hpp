#pragma once

// Flat `key = value` configuration files and the training configuration they
// carry.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "chordseq/chord.hpp"
#include "chordseq/errors.hpp"

namespace chordseq {

using KeyValues = std::map<std::string, std::string>;

inline KeyValues parse_key_values(std::istream& in) {
  KeyValues kv;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = detail::trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) {
      throw InvalidConfig("line " + std::to_string(line_no) + ": expected key = value");
    }
    const auto key = detail::trim(body.substr(0, eq));
    const auto value = detail::trim(body.substr(eq + 1));
    if (key.empty()) throw InvalidConfig("line " + std::to_string(line_no) + ": empty key");
    kv[std::string(key)] = std::string(value);
  }
  return kv;
}

inline KeyValues load_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open config " + path.string());
  return parse_key_values(in);
}

struct TrainConfig {
  AlphabetLevel alphabet = AlphabetLevel::A1;
  std::uint64_t seed = 0;
  double learning_rate = 1e-4;
  int batch_size = 128;
  int max_epochs = 200;
  int patience = 15;
  double dropout = 0.5;
  int hidden_units = 500;
  int bottleneck = 50;
  int folds = 5;

  void validate() const {
    if (!(learning_rate > 0.0)) throw InvalidConfig("learning_rate must be positive");
    if (batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
    if (max_epochs < 1) throw InvalidConfig("max_epochs must be >= 1");
    if (patience < 0) throw InvalidConfig("patience must be >= 0");
    if (dropout < 0.0 || dropout >= 1.0) throw InvalidConfig("dropout must be in [0, 1)");
    if (hidden_units < 1 || bottleneck < 1) throw InvalidConfig("layer sizes must be positive");
    if (folds < 1) throw InvalidConfig("folds must be >= 1");
  }

  // Unknown keys are rejected so typos do not silently fall back to defaults.
  void apply(const KeyValues& kv) {
    for (const auto& [key, value] : kv) {
      try {
        if (key == "alphabet") alphabet = parse_alphabet_level(value);
        else if (key == "seed") seed = std::stoull(value);
        else if (key == "learning_rate") learning_rate = std::stod(value);
        else if (key == "batch_size") batch_size = std::stoi(value);
        else if (key == "max_epochs") max_epochs = std::stoi(value);
        else if (key == "patience") patience = std::stoi(value);
        else if (key == "dropout") dropout = std::stod(value);
        else if (key == "hidden_units") hidden_units = std::stoi(value);
        else if (key == "bottleneck") bottleneck = std::stoi(value);
        else if (key == "folds") folds = std::stoi(value);
        else throw InvalidConfig("unknown key '" + key + "'");
      } catch (const std::logic_error&) {
        throw InvalidConfig("bad value for '" + key + "': " + value);
      }
    }
    validate();
  }

  KeyValues to_key_values() const {
    std::ostringstream lr, dr;
    lr.precision(17);
    dr.precision(17);
    lr << learning_rate;
    dr << dropout;
    return {{"alphabet", std::string(alphabet_name(alphabet))},
            {"seed", std::to_string(seed)},
            {"learning_rate", lr.str()},
            {"batch_size", std::to_string(batch_size)},
            {"max_epochs", std::to_string(max_epochs)},
            {"patience", std::to_string(patience)},
            {"dropout", dr.str()},
            {"hidden_units", std::to_string(hidden_units)},
            {"bottleneck", std::to_string(bottleneck)},
            {"folds", std::to_string(folds)}};
  }

  nlohmann::json to_json() const { return nlohmann::json(to_key_values()); }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.apply(j.get<KeyValues>());
    return c;
  }
};

inline void write_key_values(std::ostream& out, const KeyValues& kv) {
  for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
}

}  // namespace chordseq
