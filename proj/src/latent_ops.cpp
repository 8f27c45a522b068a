#include "disent/latent_ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "disent/errors.hpp"

namespace disent {

namespace {

torch::Tensor as_batch(const torch::Tensor& image, torch::ScalarType dtype) {
    auto x = image.dim() == 3 ? image.unsqueeze(0) : image;
    if (x.dim() != 4 || x.size(0) != 1) throw ShapeError("expected a single image (3, H, W) or (1, 3, H, W)");
    return x.to(dtype);
}

torch::ScalarType model_dtype(const DisentangleModel& model) {
    return model->parameters().front().scalar_type();
}

void check_attribute(const DisentangleModel& model, int64_t m) {
    if (m < 1 || m > model->attribute_count()) {
        throw ContractError("attribute index " + std::to_string(m) + " outside [1, " +
                            std::to_string(model->attribute_count()) + "]");
    }
}

torch::Tensor encode_one(const DisentangleModel& model, const torch::Tensor& image, int64_t m) {
    return model->encoder(m)->forward(as_batch(image, model_dtype(model)));
}

// Byte order over code contents gives permutation-independent summation order.
bool code_less(const torch::Tensor& a, const torch::Tensor& b) {
    auto ca = a.contiguous(), cb = b.contiguous();
    return std::memcmp(ca.data_ptr(), cb.data_ptr(), static_cast<size_t>(ca.nbytes())) < 0;
}

}  // namespace

torch::Tensor decode_with_code(const DisentangleModel& model, const torch::Tensor& base, int64_t attribute,
                               const torch::Tensor& code) {
    check_attribute(model, attribute);
    torch::NoGradGuard no_grad;
    auto bundle = encode_all(model, as_batch(base, model_dtype(model)));
    if (code.sizes() != bundle.codes[static_cast<size_t>(attribute)].sizes()) {
        throw ShapeError("replacement code shape differs from the encoder output shape");
    }
    bundle.codes[static_cast<size_t>(attribute)] = code.to(model_dtype(model));
    return decode(model, bundle)[0];
}

torch::Tensor swap(const DisentangleModel& model, const SwapRequest& request) {
    if (request.attributes.empty()) throw ContractError("swap needs at least one attribute");
    for (auto m : request.attributes) {
        check_attribute(model, m);
        if (!request.donors.count(m)) throw ContractError("no donor image for attribute " + std::to_string(m));
    }
    torch::NoGradGuard no_grad;
    auto bundle = encode_all(model, as_batch(request.source, model_dtype(model)));
    for (auto m : request.attributes) {
        bundle.codes[static_cast<size_t>(m)] = encode_one(model, request.donors.at(m), m);
    }
    return decode(model, bundle)[0];
}

torch::Tensor mix(const DisentangleModel& model, const MixRequest& request) {
    check_attribute(model, request.attribute);
    if (request.components.empty()) throw ContractError("mix needs at least one component");
    double sum = 0.0;
    for (const auto& c : request.components) {
        if (!std::isfinite(c.weight)) throw ContractError("mix weights must be finite");
        if (request.convex && c.weight < 0.0) {
            throw ContractError("convex mix weights must be non-negative (got " + std::to_string(c.weight) + ")");
        }
        sum += c.weight;
    }
    if (std::fabs(sum - 1.0) > 1e-6) {
        throw ContractError("mix weights must sum to 1 within 1e-6 (sum is " + std::to_string(sum) + ")");
    }
    torch::NoGradGuard no_grad;
    std::vector<std::pair<double, torch::Tensor>> terms;
    for (const auto& c : request.components) {
        if (c.weight == 0.0) continue;
        terms.emplace_back(c.weight, encode_one(model, c.image, request.attribute));
    }
    std::sort(terms.begin(), terms.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first < b.first;
        return code_less(a.second, b.second);
    });
    torch::Tensor code = terms.front().second * terms.front().first;
    for (size_t i = 1; i < terms.size(); ++i) code = code + terms[i].second * terms[i].first;
    const auto& base = request.base ? *request.base : request.components.back().image;
    return decode_with_code(model, base, request.attribute, code);
}

std::vector<torch::Tensor> interpolate(const DisentangleModel& model, int64_t attribute, const torch::Tensor& image_i,
                                       const torch::Tensor& image_j, int64_t steps,
                                       const std::optional<torch::Tensor>& base) {
    check_attribute(model, attribute);
    if (steps < 2) throw ContractError("interpolation needs at least 2 steps (got " + std::to_string(steps) + ")");
    torch::NoGradGuard no_grad;
    const auto zi = encode_one(model, image_i, attribute);
    const auto zj = encode_one(model, image_j, attribute);
    auto bundle = encode_all(model, as_batch(base ? *base : image_j, model_dtype(model)));
    std::vector<torch::Tensor> frames;
    for (int64_t k = 0; k < steps; ++k) {
        const double alpha = static_cast<double>(k) / static_cast<double>(steps - 1);
        bundle.codes[static_cast<size_t>(attribute)] = zi * alpha + zj * (1.0 - alpha);
        frames.push_back(decode(model, bundle)[0]);
    }
    return frames;
}

torch::Tensor mean_code(const DisentangleModel& model, const Dataset& dataset, int64_t attribute,
                        std::optional<int64_t> label, int64_t batch) {
    check_attribute(model, attribute);
    std::vector<int64_t> idx;
    if (label) {
        idx = dataset.indices_with_label(attribute - 1, *label);
    } else {
        idx.resize(static_cast<size_t>(dataset.size()));
        for (int64_t i = 0; i < dataset.size(); ++i) idx[static_cast<size_t>(i)] = i;
    }
    if (idx.empty()) throw ContractError("mean code over an empty selection");
    torch::NoGradGuard no_grad;
    const auto dtype = model_dtype(model);
    auto encoder = model->encoder(attribute);
    torch::Tensor sum;
    for (size_t start = 0; start < idx.size(); start += static_cast<size_t>(batch)) {
        const auto end = std::min(idx.size(), start + static_cast<size_t>(batch));
        auto sel = torch::tensor(std::vector<int64_t>(idx.begin() + static_cast<std::ptrdiff_t>(start),
                                                      idx.begin() + static_cast<std::ptrdiff_t>(end)),
                                 torch::kInt64);
        auto part = encoder->forward(dataset.images().index_select(0, sel).to(dtype)).sum(0, /*keepdim=*/true);
        sum = sum.defined() ? sum + part : part;
    }
    return sum / static_cast<double>(idx.size());
}

}  // namespace disent
