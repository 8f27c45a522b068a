#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "disent/model.hpp"

namespace disent {

// Checkpoint directory layout:
//   manifest.json      schema, layer hyperparameters, code shape, per-blob
//                      parameter shapes and a content hash
//   encoder_<m>.pt, decoder.pt, classifiers.pt, critic.pt
// Evaluation classifiers use the same layout with only classifiers.pt.

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AttributeSchema& schema);
AttributeSchema schema_from_json(const nlohmann::json& j);

/// Writes every submodule blob plus the manifest; returns the content hash.
std::string save_model(const DisentangleModel& model, const std::filesystem::path& dir);
/// Rebuilds the model from the manifest and validates every parameter shape.
DisentangleModel load_model(const std::filesystem::path& dir);

struct ClassifierCheckpoint {
    ClassifierBank bank{nullptr};
    AttributeSchema schema;
    ModelConfig config;
    std::string hash;
};

std::string save_classifier_bank(const ClassifierBank& bank, const AttributeSchema& schema,
                                 const ModelConfig& config, const std::filesystem::path& dir);
ClassifierCheckpoint load_classifier_bank(const std::filesystem::path& dir);

nlohmann::json read_manifest(const std::filesystem::path& dir);
std::string checkpoint_hash(const std::filesystem::path& dir);

}  // namespace disent
