#include "disent/model.hpp"

#include <bit>
#include <string>

#include "disent/errors.hpp"

namespace disent {

namespace nn = torch::nn;

namespace {

nn::InstanceNorm2d instance_norm(int64_t channels, double eps) {
    return nn::InstanceNorm2d(nn::InstanceNorm2dOptions(channels).affine(true).eps(eps));
}

std::string shape_str(const torch::Tensor& t) {
    std::string s = "(";
    for (int64_t i = 0; i < t.dim(); ++i) s += (i ? ", " : "") + std::to_string(t.size(i));
    return s + ")";
}

}  // namespace

int64_t ModelConfig::resolved_critic_layers() const {
    if (critic_layers > 0) return critic_layers;
    return static_cast<int64_t>(std::bit_width(static_cast<uint64_t>(image_size))) - 2;
}

void ModelConfig::validate() const {
    std::vector<std::string> problems;
    if (image_size < 8 || image_size % 4 != 0) problems.push_back("image_size must be a multiple of 4 and >= 8");
    for (auto w : encoder_widths) {
        if (w < 1) problems.push_back("encoder widths must be positive");
    }
    if (classifier_width < 1) problems.push_back("classifier_width must be positive");
    if (critic_width < 1 || critic_max_width < critic_width) {
        problems.push_back("critic widths must satisfy 1 <= critic_width <= critic_max_width");
    }
    if (decoder_blocks < 0) problems.push_back("decoder_blocks must be >= 0");
    if (leaky_slope < 0) problems.push_back("leaky_slope must be >= 0");
    if (norm_eps <= 0) problems.push_back("norm_eps must be > 0");
    if (image_size >= 8 && (image_size >> resolved_critic_layers()) < 1) {
        problems.push_back("critic_layers too deep for image_size");
    }
    if (!problems.empty()) {
        std::string msg = "invalid model config:";
        for (const auto& p : problems) msg += "\n  " + p;
        throw ConfigError(msg);
    }
}

// ---------------------------------------------------------------------------

EncoderImpl::EncoderImpl(const ModelConfig& c) {
    const auto [w1, w2, w3] = c.encoder_widths;
    layers_ = register_module(
        "layers",
        nn::Sequential(nn::ReflectionPad2d(3), nn::Conv2d(nn::Conv2dOptions(3, w1, 7)), instance_norm(w1, c.norm_eps),
                       nn::ReLU(), nn::Conv2d(nn::Conv2dOptions(w1, w2, 3).stride(2).padding(1)),
                       instance_norm(w2, c.norm_eps), nn::ReLU(),
                       nn::Conv2d(nn::Conv2dOptions(w2, w3, 3).stride(2).padding(1)), instance_norm(w3, c.norm_eps),
                       nn::ReLU()));
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& x) { return layers_->forward(x); }

DecoderImpl::DecoderImpl(const ModelConfig& c, int64_t code_count) : in_channels_(c.code_channels() * code_count) {
    const auto [w1, w2, w3] = c.encoder_widths;
    (void)w3;
    blocks_ = register_module("blocks", nn::ModuleList());
    for (int64_t i = 0; i < c.decoder_blocks; ++i) {
        blocks_->push_back(nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in_channels_, in_channels_, 3).padding(1)),
                                          instance_norm(in_channels_, c.norm_eps), nn::ReLU()));
    }
    auto up = [&](int64_t in, int64_t out) {
        return nn::Sequential(
            nn::Upsample(nn::UpsampleOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest)),
            nn::ReflectionPad2d(1), nn::Conv2d(nn::Conv2dOptions(in, out, 3)), instance_norm(out, c.norm_eps),
            nn::ReLU());
    };
    up1_ = register_module("up1", up(in_channels_, w2));
    up2_ = register_module("up2", up(w2, w1));
    out_ = register_module("out", nn::Sequential(nn::ReflectionPad2d(3), nn::Conv2d(nn::Conv2dOptions(w1, 3, 7)),
                                                 nn::Tanh()));
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& z) {
    if (z.dim() != 4 || z.size(1) != in_channels_) {
        throw ShapeError("decoder expects " + std::to_string(in_channels_) + " input channels, got " + shape_str(z));
    }
    auto h = z;
    for (const auto& block : *blocks_) h = h + block->as<nn::Sequential>()->forward(h);
    return out_->forward(up2_->forward(up1_->forward(h)));
}

AttributeClassifierImpl::AttributeClassifierImpl(const ModelConfig& c, int64_t class_count)
    : class_count_(class_count), code_shape_{c.code_channels(), c.code_size(), c.code_size()} {
    const auto lrelu = nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(c.leaky_slope));
    block1_ = register_module("block1", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(3, c.classifier_width, 4)
                                                                      .stride(2)
                                                                      .padding(1)),
                                                       lrelu));
    block2_ = register_module(
        "block2", nn::Sequential(
                      nn::Conv2d(nn::Conv2dOptions(c.classifier_width, c.code_channels(), 4).stride(2).padding(1)),
                      nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(c.leaky_slope))));
    logits_ = register_module("logits",
                              nn::Linear(c.code_channels() * c.code_size() * c.code_size(), class_count));
}

torch::Tensor AttributeClassifierImpl::features(const torch::Tensor& x) {
    return block2_->forward(block1_->forward(x));
}

torch::Tensor AttributeClassifierImpl::head(const torch::Tensor& z) {
    if (z.dim() != 4 || z.size(1) != code_shape_[0] || z.size(2) != code_shape_[1] || z.size(3) != code_shape_[2]) {
        throw ShapeError("classifier head expects (b, " + std::to_string(code_shape_[0]) + ", " +
                         std::to_string(code_shape_[1]) + ", " + std::to_string(code_shape_[2]) + "), got " +
                         shape_str(z));
    }
    return logits_->forward(z.flatten(1));
}

ClassifierBankImpl::ClassifierBankImpl(const ModelConfig& c, const std::vector<int64_t>& class_counts) {
    classifiers_ = register_module("classifiers", nn::ModuleList());
    for (auto k : class_counts) classifiers_->push_back(AttributeClassifier(c, k));
}

AttributeClassifier ClassifierBankImpl::at(int64_t m) const {
    if (m < 1 || m > size()) {
        throw ContractError("classifier index " + std::to_string(m) + " outside [1, " + std::to_string(size()) +
                            "]; index 0 (unspecified variation) has no classifier");
    }
    return AttributeClassifier(classifiers_->ptr<AttributeClassifierImpl>(static_cast<size_t>(m - 1)));
}

PatchCriticImpl::PatchCriticImpl(const ModelConfig& c) {
    layers_ = register_module("layers", nn::Sequential());
    int64_t in = 3, width = c.critic_width;
    for (int64_t i = 0; i < c.resolved_critic_layers(); ++i) {
        layers_->push_back(nn::Conv2d(nn::Conv2dOptions(in, width, 4).stride(2).padding(1)));
        layers_->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(c.leaky_slope)));
        in = width;
        width = std::min(width * 2, c.critic_max_width);
    }
    layers_->push_back(nn::Conv2d(nn::Conv2dOptions(in, 1, 3).padding(1)));
}

torch::Tensor PatchCriticImpl::forward(const torch::Tensor& x) { return layers_->forward(x); }

// ---------------------------------------------------------------------------

void LatentBundle::check_consistent() const {
    if (codes.empty()) throw ShapeError("latent bundle is empty");
    const auto& ref = codes[0];
    for (const auto& z : codes) {
        if (z.dim() != 4 || z.size(0) != ref.size(0) || z.size(2) != ref.size(2) || z.size(3) != ref.size(3)) {
            throw ShapeError("latent codes disagree in batch or spatial size: " + shape_str(ref) + " vs " +
                             shape_str(z));
        }
    }
}

DisentangleModelImpl::DisentangleModelImpl(AttributeSchema schema, ModelConfig config)
    : schema_(std::move(schema)), config_(config) {
    schema_.validate();
    config_.validate();
    const int64_t M = schema_.size();
    encoders_ = register_module("encoders", nn::ModuleList());
    for (int64_t m = 0; m <= M; ++m) encoders_->push_back(Encoder(config_));
    decoder_ = register_module("decoder", Decoder(config_, M + 1));
    classifiers_ = register_module("classifiers", ClassifierBank(config_, schema_.class_counts()));
    critic_ = register_module("critic", PatchCritic(config_));

    // Latent injection: enc-3 output must have the block-2 output shape.
    torch::NoGradGuard no_grad;
    auto probe = torch::zeros({1, 3, config_.image_size, config_.image_size});
    auto z = encoder(0)->forward(probe);
    auto f = classifiers_->at(1)->features(probe);
    if (z.sizes() != f.sizes()) {
        throw ShapeError("encoder output " + shape_str(z) + " differs from classifier block-2 output " +
                         shape_str(f));
    }
}

Encoder DisentangleModelImpl::encoder(int64_t m) const {
    if (m < 0 || m > attribute_count()) throw ContractError("encoder index " + std::to_string(m) + " out of range");
    return Encoder(encoders_->ptr<EncoderImpl>(static_cast<size_t>(m)));
}

std::vector<torch::Tensor> DisentangleModelImpl::generator_parameters() const {
    auto params = encoders_->parameters();
    auto dec = decoder_->parameters();
    params.insert(params.end(), dec.begin(), dec.end());
    return params;
}

// ---------------------------------------------------------------------------

LatentBundle encode_all(const DisentangleModel& model, const torch::Tensor& x) {
    if (x.dim() != 4 || x.size(1) != 3) throw ShapeError("image batch must be (b, 3, H, W), got " + shape_str(x));
    if (x.size(2) % 4 != 0 || x.size(3) % 4 != 0) {
        throw ShapeError("image height and width must be divisible by 4, got " + shape_str(x));
    }
    LatentBundle bundle;
    for (int64_t m = 0; m <= model->attribute_count(); ++m) {
        bundle.codes.push_back(model->encoder(m)->forward(x));
        bundle.encoder.push_back(m);
    }
    return bundle;
}

torch::Tensor decode(const DisentangleModel& model, const LatentBundle& bundle) {
    bundle.check_consistent();
    return model->decoder()->forward(torch::cat(bundle.codes, 1));
}

torch::Tensor image_logits(const ClassifierBank& bank, const torch::Tensor& x, int64_t m) {
    return bank->at(m)->forward(x);
}

torch::Tensor latent_logits(const ClassifierBank& bank, const torch::Tensor& z, int64_t m) {
    return bank->at(m)->head(z);
}

torch::Tensor classify_image(const ClassifierBank& bank, const torch::Tensor& x, int64_t m) {
    return torch::softmax(image_logits(bank, x, m), 1);
}

torch::Tensor classify_latent(const ClassifierBank& bank, const torch::Tensor& z, int64_t m) {
    return torch::softmax(latent_logits(bank, z, m), 1);
}

torch::Tensor critic_score(const DisentangleModel& model, const torch::Tensor& x) {
    if (x.dim() != 4 || x.size(1) != 3) throw ShapeError("image batch must be (b, 3, H, W), got " + shape_str(x));
    return model->critic()->forward(x);
}

FreezeGuard::FreezeGuard(std::vector<torch::Tensor> params) : params_(std::move(params)) {
    previous_.reserve(params_.size());
    for (auto& p : params_) {
        previous_.push_back(p.requires_grad());
        p.set_requires_grad(false);
    }
}

FreezeGuard::~FreezeGuard() {
    for (size_t i = 0; i < params_.size(); ++i) params_[i].set_requires_grad(previous_[i]);
}

int64_t parameter_count(const torch::nn::Module& module) {
    int64_t n = 0;
    for (const auto& p : module.parameters()) n += p.numel();
    return n;
}

}  // namespace disent
