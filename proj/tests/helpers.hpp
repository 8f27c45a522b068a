#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include <torch/torch.h>

#include "disent/data.hpp"
#include "disent/model.hpp"

namespace disent::testing {

/// 8x8 images, widths 4: small enough for finite differences.
inline ModelConfig tiny_config() {
    ModelConfig c;
    c.image_size = 8;
    c.encoder_widths = {4, 4, 4};
    c.classifier_width = 4;
    c.critic_width = 4;
    c.critic_max_width = 8;
    c.decoder_blocks = 1;
    return c;
}

inline ModelConfig small_config(int64_t size = 32) {
    ModelConfig c;
    c.image_size = size;
    c.encoder_widths = {4, 8, 8};
    c.classifier_width = 8;
    c.critic_width = 8;
    c.critic_max_width = 32;
    c.decoder_blocks = 1;
    return c;
}

inline AttributeSchema schema_of(std::vector<int64_t> counts) {
    std::vector<Attribute> attrs;
    for (size_t i = 0; i < counts.size(); ++i) {
        Attribute a{"a" + std::to_string(i + 1), counts[i], {}};
        for (int64_t k = 0; k < counts[i]; ++k) a.values.push_back("v" + std::to_string(k));
        attrs.push_back(a);
    }
    return AttributeSchema(attrs);
}

inline torch::Tensor random_images(int64_t b, int64_t size, torch::ScalarType dtype = torch::kFloat32) {
    return torch::rand({b, 3, size, size}, torch::TensorOptions().dtype(dtype)) * 2 - 1;
}

inline torch::Tensor random_labels(int64_t b, const AttributeSchema& schema) {
    auto labels = torch::zeros({b, schema.size()}, torch::kInt64);
    for (int64_t m = 0; m < schema.size(); ++m) {
        labels.select(1, m).copy_(torch::randint(schema.at(m).class_count, {b}, torch::kInt64));
    }
    return labels;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("disent-" + tag + "-" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

private:
    std::filesystem::path path_;
};

}  // namespace disent::testing
