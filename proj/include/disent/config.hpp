#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "disent/data.hpp"
#include "disent/metrics.hpp"
#include "disent/model.hpp"
#include "disent/training.hpp"

namespace disent {

struct HoldoutConfig {
    std::string attribute;
    std::vector<int64_t> values;
};

struct DataConfig {
    std::string source = "synthetic";  // synthetic | manifest
    int64_t image_size = 32;
    std::vector<std::string> attributes;  // empty = every attribute in the source schema
    SyntheticConfig synthetic;
    // A second synthetic draw used as the test split unless a holdout is set.
    uint64_t test_seed = 1007;
    int64_t test_count_per_combination = 3;
    std::string manifest;
    std::string test_manifest;
    std::optional<HoldoutConfig> holdout;
};

struct EvaluationConfig {
    ClusterTendencyOptions hopkins;
    std::string cluster_by;     // empty = first attribute
    std::string score_within;   // empty = second attribute
    std::string transfer_attribute;  // empty = last attribute
    std::string transfer_source = "donor";  // donor | mean_code
    uint64_t eval_classifier_seed = 1;
};

struct RunConfig {
    DataConfig data;
    ModelConfig model;
    TrainConfig train;  // loss_weights, optimizer and schedule sections
    EvaluationConfig evaluation;
};

/// Parses YAML text. Every problem (unknown key, bad type, violated
/// invariant) is collected; a non-empty list means the config is unusable.
struct ConfigParse {
    RunConfig config;
    std::vector<std::string> errors;
    bool ok() const { return errors.empty(); }
};

/// Overrides are `section.key=value` (nested keys use more dots); the value
/// is read as YAML, so `data.attributes=[shape, hue]` works. Overrides win
/// over the file.
ConfigParse parse_run_config(const std::string& yaml_text, const std::vector<std::string>& overrides = {});
ConfigParse parse_run_config_file(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Throws ConfigError carrying every problem. An empty path yields defaults.
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

std::string to_yaml(const RunConfig& config);
void write_resolved_config(const RunConfig& config, const std::filesystem::path& path);

/// Train and test splits described by the data section, restricted to the
/// configured attributes.
struct DataSplits {
    Dataset train;
    Dataset test;
};
DataSplits load_data(const DataConfig& config);

}  // namespace disent
