#pragma once

#include <filesystem>
#include <set>
#include <string>

#include "json.hpp"
#include "prdlab/encoders.hpp"
#include "prdlab/training.hpp"

namespace prdlab {

inline constexpr int kCheckpointVersion = 1;

// Flat dotted keys: encoder.*, loss.*, train.*. Nested objects are accepted
// and flattened first.
nlohmann::json config_to_json(const TrainConfig& config);

// Overlays the recognised keys of `json` on `config`. Keys under one of
// `passthrough_prefixes` are ignored; any other unknown key is an error.
void apply_config(TrainConfig& config, const nlohmann::json& json,
                  const std::set<std::string>& passthrough_prefixes = {"data.", "eval.", "run."});

nlohmann::json flatten_config(const nlohmann::json& json);

nlohmann::json metrics_to_json(const MetricsRow& row);

// Encoder weights only ("prdlab.encoders").
nlohmann::json model_to_json(const Model& model);
// Accepts encoder and training checkpoints.
Model model_from_json(const nlohmann::json& json);

// Weights plus optimizer buffers and counters ("prdlab.training").
nlohmann::json state_to_json(const TrainingState& state);
TrainingState state_from_json(const nlohmann::json& json);

void write_json(const std::filesystem::path& path, const nlohmann::json& json);
nlohmann::json read_json(const std::filesystem::path& path);

void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);
void save_state(const std::filesystem::path& path, const TrainingState& state);
TrainingState load_state(const std::filesystem::path& path);

}  // namespace prdlab
