#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <torch/torch.h>

namespace disent {

// Images cross this boundary as (3, H, W) float tensors in [-1, 1].

/// Decodes any format OpenCV understands, resizes to size x size, returns RGB in [-1, 1].
/// Throws IngestionError if the file is missing or undecodable.
torch::Tensor read_image(const std::filesystem::path& path, int64_t size);
void write_png(const torch::Tensor& image, const std::filesystem::path& path);

std::vector<uint8_t> encode_png(const torch::Tensor& image);
torch::Tensor decode_png(const std::vector<uint8_t>& bytes);

std::string base64_encode(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> base64_decode(std::string_view text);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file_hex(const std::filesystem::path& path);

}  // namespace disent
