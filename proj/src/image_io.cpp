#include "disent/image_io.hpp"

#include <fstream>
#include <iterator>

#include <openssl/evp.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "disent/data.hpp"
#include "disent/errors.hpp"

namespace disent {

namespace {

torch::Tensor mat_to_tensor(const cv::Mat& bgr) {
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    const int64_t h = rgb.rows, w = rgb.cols;
    auto out = torch::empty({3, h, w}, torch::kFloat32);
    auto acc = out.accessor<float, 3>();
    for (int64_t y = 0; y < h; ++y) {
        const auto* row = rgb.ptr<cv::Vec3b>(static_cast<int>(y));
        for (int64_t x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) acc[c][y][x] = normalize_pixel(row[x][c]);
        }
    }
    return out;
}

cv::Mat tensor_to_mat(const torch::Tensor& image) {
    if (image.dim() != 3 || image.size(0) != 3) throw ShapeError("image must be (3, H, W)");
    auto img = image.detach().to(torch::kCPU, torch::kFloat32).contiguous();
    auto acc = img.accessor<float, 3>();
    const int h = static_cast<int>(img.size(1)), w = static_cast<int>(img.size(2));
    cv::Mat bgr(h, w, CV_8UC3);
    for (int y = 0; y < h; ++y) {
        auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) row[x][2 - c] = denormalize_pixel(acc[c][y][x]);
        }
    }
    return bgr;
}

cv::Mat to_bgr(const cv::Mat& raw) {
    cv::Mat bgr;
    if (raw.channels() == 1) {
        cv::cvtColor(raw, bgr, cv::COLOR_GRAY2BGR);
    } else if (raw.channels() == 4) {
        cv::cvtColor(raw, bgr, cv::COLOR_BGRA2BGR);
    } else {
        bgr = raw;
    }
    return bgr;
}

}  // namespace

torch::Tensor read_image(const std::filesystem::path& path, int64_t size) {
    if (!std::filesystem::exists(path)) throw IngestionError("missing image file " + path.string());
    cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (raw.empty()) throw IngestionError("cannot decode image " + path.string());
    if (raw.depth() != CV_8U) raw.convertTo(raw, CV_8U, raw.depth() == CV_16U ? 1.0 / 257.0 : 1.0);
    cv::Mat bgr = to_bgr(raw);
    if (bgr.rows != size || bgr.cols != size) {
        cv::Mat resized;
        cv::resize(bgr, resized, cv::Size(static_cast<int>(size), static_cast<int>(size)), 0, 0, cv::INTER_AREA);
        bgr = resized;
    }
    return mat_to_tensor(bgr);
}

void write_png(const torch::Tensor& image, const std::filesystem::path& path) {
    const auto bytes = encode_png(image);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IngestionError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<uint8_t> encode_png(const torch::Tensor& image) {
    std::vector<uint8_t> buf;
    if (!cv::imencode(".png", tensor_to_mat(image), buf)) throw IngestionError("PNG encoding failed");
    return buf;
}

torch::Tensor decode_png(const std::vector<uint8_t>& bytes) {
    cv::Mat raw = cv::imdecode(bytes, cv::IMREAD_UNCHANGED);
    if (raw.empty()) throw IngestionError("cannot decode PNG bytes");
    return mat_to_tensor(to_bgr(raw));
}

std::string base64_encode(const std::vector<uint8_t>& bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<size_t>(n));
    return out;
}

std::vector<uint8_t> base64_decode(std::string_view text) {
    if (text.size() % 4 != 0) throw ContractError("base64 input length is not a multiple of 4");
    std::vector<uint8_t> out(3 * text.size() / 4);
    const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                  static_cast<int>(text.size()));
    if (n < 0) throw ContractError("invalid base64 input");
    // EVP_DecodeBlock keeps the zero bytes produced by '=' padding.
    size_t pad = 0;
    if (!text.empty() && text.back() == '=') ++pad;
    if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
    out.resize(static_cast<size_t>(n) - pad);
    return out;
}

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(kHex[digest[i] >> 4]);
        out.push_back(kHex[digest[i] & 0xF]);
    }
    return out;
}

std::string sha256_file_hex(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot read " + path.string());
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return sha256_hex(content);
}

}  // namespace disent
