#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "disent/data.hpp"

namespace disent {

/// Layer hyperparameters. Defaults reproduce the reference architecture; at
/// 128x128 the bottleneck is (128, 32, 32) and the decoder runs at 128*(M+1).
struct ModelConfig {
    int64_t image_size = 32;
    std::array<int64_t, 3> encoder_widths{32, 64, 128};  // enc-1..enc-3; [2] is the code depth
    int64_t classifier_width = 64;                       // block-1; block-2 always matches the code depth
    int64_t critic_width = 64;
    int64_t critic_max_width = 2048;
    int64_t critic_layers = 0;  // 0 = log2(image_size) - 1, leaving a 2x2 patch map
    int64_t decoder_blocks = 6;
    double leaky_slope = 0.01;
    double norm_eps = 1e-5;

    int64_t code_channels() const { return encoder_widths[2]; }
    int64_t code_size() const { return image_size / 4; }
    int64_t resolved_critic_layers() const;
    /// Throws ConfigError listing every problem.
    void validate() const;
};

/// enc-1..enc-3: reflect-pad 3, 7x7 conv, then two stride-2 3x3 convs; IN + ReLU after each.
class EncoderImpl : public torch::nn::Module {
public:
    explicit EncoderImpl(const ModelConfig& config);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Sequential layers_{nullptr};
};
TORCH_MODULE(Encoder);

/// Residual 3x3 conv blocks at the concatenated code depth, two nearest-resize
/// + conv upsampling blocks, and a 7x7 conv to RGB with tanh.
class DecoderImpl : public torch::nn::Module {
public:
    DecoderImpl(const ModelConfig& config, int64_t code_count);
    torch::Tensor forward(const torch::Tensor& z);
    int64_t input_channels() const noexcept { return in_channels_; }

private:
    int64_t in_channels_;
    torch::nn::ModuleList blocks_{nullptr};
    torch::nn::Sequential up1_{nullptr}, up2_{nullptr}, out_{nullptr};
};
TORCH_MODULE(Decoder);

/// block-1 and block-2 are 4x4 stride-2 convs with LeakyReLU; the dense head
/// reads block-2 output, which has exactly the encoder code shape, so latent
/// codes can be fed straight to the head.
class AttributeClassifierImpl : public torch::nn::Module {
public:
    AttributeClassifierImpl(const ModelConfig& config, int64_t class_count);
    torch::Tensor features(const torch::Tensor& x);
    torch::Tensor head(const torch::Tensor& z);
    torch::Tensor forward(const torch::Tensor& x) { return head(features(x)); }
    int64_t class_count() const noexcept { return class_count_; }

private:
    int64_t class_count_;
    std::vector<int64_t> code_shape_;
    torch::nn::Sequential block1_{nullptr}, block2_{nullptr};
    torch::nn::Linear logits_{nullptr};
};
TORCH_MODULE(AttributeClassifier);

/// One classifier per schema attribute. `at(m)` takes the 1-based attribute index.
class ClassifierBankImpl : public torch::nn::Module {
public:
    ClassifierBankImpl(const ModelConfig& config, const std::vector<int64_t>& class_counts);
    AttributeClassifier at(int64_t m) const;
    int64_t size() const noexcept { return static_cast<int64_t>(classifiers_->size()); }

private:
    torch::nn::ModuleList classifiers_{nullptr};
};
TORCH_MODULE(ClassifierBank);

/// Strided 4x4 conv + LeakyReLU stack doubling width, then a 3x3 conv to one
/// channel of unbounded patch scores.
class PatchCriticImpl : public torch::nn::Module {
public:
    explicit PatchCriticImpl(const ModelConfig& config);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Sequential layers_{nullptr};
};
TORCH_MODULE(PatchCritic);

/// The M+1 codes of a batch. codes[0] is the unspecified-variation code;
/// `encoder[m]` records which encoder produced codes[m].
struct LatentBundle {
    std::vector<torch::Tensor> codes;
    std::vector<int64_t> encoder;

    int64_t batch_size() const { return codes.at(0).size(0); }
    int64_t attribute_count() const { return static_cast<int64_t>(codes.size()) - 1; }
    void check_consistent() const;
};

class DisentangleModelImpl : public torch::nn::Module {
public:
    DisentangleModelImpl(AttributeSchema schema, ModelConfig config);

    const AttributeSchema& schema() const noexcept { return schema_; }
    const ModelConfig& config() const noexcept { return config_; }
    int64_t attribute_count() const noexcept { return schema_.size(); }

    Encoder encoder(int64_t m) const;
    Decoder decoder() const { return decoder_; }
    ClassifierBank classifiers() const { return classifiers_; }
    PatchCritic critic() const { return critic_; }

    /// Encoders and decoder (the variables of L_G).
    std::vector<torch::Tensor> generator_parameters() const;
    std::vector<torch::Tensor> classifier_parameters() const { return classifiers_->parameters(); }
    std::vector<torch::Tensor> critic_parameters() const { return critic_->parameters(); }

private:
    AttributeSchema schema_;
    ModelConfig config_;
    torch::nn::ModuleList encoders_{nullptr};
    Decoder decoder_{nullptr};
    ClassifierBank classifiers_{nullptr};
    PatchCritic critic_{nullptr};
};
TORCH_MODULE(DisentangleModel);

/// Image batches are (b, 3, H, W) in [-1, 1].
LatentBundle encode_all(const DisentangleModel& model, const torch::Tensor& x);
torch::Tensor decode(const DisentangleModel& model, const LatentBundle& bundle);

/// Class-logit variants used by the losses; m is 1-based.
torch::Tensor image_logits(const ClassifierBank& bank, const torch::Tensor& x, int64_t m);
torch::Tensor latent_logits(const ClassifierBank& bank, const torch::Tensor& z, int64_t m);

/// Softmax posteriors (b, |m|).
torch::Tensor classify_image(const ClassifierBank& bank, const torch::Tensor& x, int64_t m);
torch::Tensor classify_latent(const ClassifierBank& bank, const torch::Tensor& z, int64_t m);

/// (b, 1, h, w) patch scores.
torch::Tensor critic_score(const DisentangleModel& model, const torch::Tensor& x);

/// Sets requires_grad(false) on a parameter set for its lifetime.
class FreezeGuard {
public:
    explicit FreezeGuard(std::vector<torch::Tensor> params);
    ~FreezeGuard();
    FreezeGuard(const FreezeGuard&) = delete;
    FreezeGuard& operator=(const FreezeGuard&) = delete;

private:
    std::vector<torch::Tensor> params_;
    std::vector<bool> previous_;
};

int64_t parameter_count(const torch::nn::Module& module);

}  // namespace disent
