// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "dualvc/model.hpp"
#include "dualvc/synthdata.hpp"
#include "dualvc/training.hpp"
#include "json.hpp"

namespace dualvc {

// JSON (de)serialization of configuration objects. Missing keys keep their
// defaults; unknown keys raise ConfigError.

nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const SynthCorpusConfig& c);

ModelConfig model_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);
SynthCorpusConfig corpus_config_from_json(const nlohmann::json& j);

/// A run configuration file: {"model": ..., "train": ..., "corpus": ...},
/// every section optional.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SynthCorpusConfig corpus;
};

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace dualvc
