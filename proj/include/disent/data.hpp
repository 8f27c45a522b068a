#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace disent {

/// One named attribute and the human-readable names of its classes.
/// `values[k]` is the label string mapped to class index k.
struct Attribute {
    std::string name;
    int64_t class_count = 0;
    std::vector<std::string> values;

    bool operator==(const Attribute&) const = default;
};

/// Ordered attribute list. Index 0 of the latent bundle is reserved for the
/// unspecified-variation code, so schema position i corresponds to latent
/// index m = i + 1.
class AttributeSchema {
public:
    AttributeSchema() = default;
    explicit AttributeSchema(std::vector<Attribute> attributes);

    int64_t size() const noexcept { return static_cast<int64_t>(attributes_.size()); }
    bool empty() const noexcept { return attributes_.empty(); }
    const Attribute& at(int64_t i) const { return attributes_.at(static_cast<size_t>(i)); }
    const std::vector<Attribute>& attributes() const noexcept { return attributes_; }
    std::vector<int64_t> class_counts() const;

    /// Position of `name` in the schema, or nullopt.
    std::optional<int64_t> find(const std::string& name) const;
    /// Position of `name`; throws ContractError naming the attribute.
    int64_t index_of(const std::string& name) const;

    /// Throws ConfigError unless M >= 1, every class_count >= 2 and names are unique.
    void validate() const;

    bool operator==(const AttributeSchema&) const = default;

private:
    std::vector<Attribute> attributes_;
};

/// A single image with one label per schema attribute.
struct LabeledImage {
    torch::Tensor pixels;  // (3, H, W) float32 in [-1, 1]
    std::vector<int64_t> labels;
};

/// Immutable collection of labeled images stored as two dense tensors.
class Dataset {
public:
    Dataset() = default;
    Dataset(AttributeSchema schema, torch::Tensor images, torch::Tensor labels, std::string provenance);

    const AttributeSchema& schema() const noexcept { return schema_; }
    /// (N, 3, H, W) float32 in [-1, 1].
    const torch::Tensor& images() const noexcept { return images_; }
    /// (N, M) int64.
    const torch::Tensor& labels() const noexcept { return labels_; }
    const std::string& provenance() const noexcept { return provenance_; }

    int64_t size() const noexcept { return images_.defined() ? images_.size(0) : 0; }
    bool empty() const noexcept { return size() == 0; }
    int64_t image_size() const { return images_.size(2); }

    LabeledImage item(int64_t i) const;
    /// Per-attribute label counts; result[m][k] = number of items with class k.
    std::vector<std::vector<int64_t>> label_marginals() const;

    /// Items at the given positions, in order.
    Dataset subset(const std::vector<int64_t>& indices) const;
    /// Restrict the schema (and label columns) to the named attributes.
    Dataset select_attributes(const std::vector<std::string>& names) const;
    /// Indices of items whose label for schema position `attribute` equals `value`.
    std::vector<int64_t> indices_with_label(int64_t attribute, int64_t value) const;

private:
    AttributeSchema schema_;
    torch::Tensor images_;
    torch::Tensor labels_;
    std::string provenance_;
};

struct SyntheticConfig {
    int64_t image_size = 32;
    int64_t shape_classes = 3;
    int64_t hue_classes = 6;
    int64_t brightness_classes = 3;
    int64_t jitter = 3;  // max |offset| in pixels along each axis
    int64_t count_per_combination = 10;
    uint64_t seed = 7;

    void validate() const;
};

/// Renders shape x hue x brightness x count images. Items are ordered by
/// (shape, hue, brightness, repetition); the schema is [shape, hue, brightness].
Dataset generate_synthetic(const SyntheticConfig& config);

/// 8-bit pixel to [-1, 1] and back.
inline float normalize_pixel(uint8_t v) { return 2.0f * static_cast<float>(v) / 255.0f - 1.0f; }
uint8_t denormalize_pixel(float v);

/// Reads a `filepath,attr1,...` manifest. Paths are relative to the manifest
/// directory. When a `<manifest>.schema.json` sidecar exists its label
/// mapping is reused; otherwise labels are mapped in sorted order and the
/// sidecar is written. `schema_override` forces a mapping (e.g. the train
/// split's mapping for a test manifest).
Dataset load_manifest(const std::filesystem::path& manifest_path, int64_t image_size,
                      const std::optional<AttributeSchema>& schema_override = std::nullopt);

/// Writes PNGs under `dir/images/`, `dir/manifest.csv` and the schema sidecar.
/// Returns the manifest path.
std::filesystem::path export_manifest(const Dataset& dataset, const std::filesystem::path& dir);

std::filesystem::path schema_sidecar_path(const std::filesystem::path& manifest_path);
void write_schema_sidecar(const AttributeSchema& schema, const std::filesystem::path& path);
AttributeSchema read_schema_sidecar(const std::filesystem::path& path);

struct Split {
    Dataset train;
    Dataset test;
};

/// Test receives exactly the items whose `attribute` label is in `held_values`.
Split holdout_split(const Dataset& dataset, const std::string& attribute, const std::set<int64_t>& held_values);

}  // namespace disent
