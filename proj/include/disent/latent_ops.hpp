#pragma once

#include <map>
#include <optional>
#include <set>
#include <vector>

#include <torch/torch.h>

#include "disent/data.hpp"
#include "disent/model.hpp"

namespace disent {

// Label-free manipulations over a trained model. Images are single (3, H, W)
// tensors or (1, 3, H, W) batches; outputs are (3, H, W). Attribute indices
// are 1-based latent indices; z_0 is never replaced.

struct SwapRequest {
    torch::Tensor source;
    std::map<int64_t, torch::Tensor> donors;  // attribute index -> donor image
    std::set<int64_t> attributes;             // nonempty subset of [1, M]
};

struct MixComponent {
    torch::Tensor image;
    double weight = 0.0;
};

struct MixRequest {
    int64_t attribute = 1;
    std::vector<MixComponent> components;
    /// Supplies z_0 and every non-mixed code; defaults to the last component.
    std::optional<torch::Tensor> base;
    /// Convex mode requires non-negative weights; exploratory mode allows signed ones.
    bool convex = true;
};

torch::Tensor swap(const DisentangleModel& model, const SwapRequest& request);
torch::Tensor mix(const DisentangleModel& model, const MixRequest& request);

/// `steps` frames with alpha_k = k / (steps - 1); frame k decodes
/// alpha_k z_m(image_i) + (1 - alpha_k) z_m(image_j). Frame 0 is the pure
/// image_j code and the last frame the pure image_i code. Other codes come
/// from `base` (default image_j).
std::vector<torch::Tensor> interpolate(const DisentangleModel& model, int64_t attribute, const torch::Tensor& image_i,
                                       const torch::Tensor& image_j, int64_t steps,
                                       const std::optional<torch::Tensor>& base = std::nullopt);

/// Elementwise mean of E_m over the dataset, optionally restricted to items
/// whose label for attribute m equals `label`. Returns (1, C, h, w).
torch::Tensor mean_code(const DisentangleModel& model, const Dataset& dataset, int64_t attribute,
                        std::optional<int64_t> label = std::nullopt, int64_t batch = 64);

/// Decodes `base` with code m replaced by `code` (1, C, h, w).
torch::Tensor decode_with_code(const DisentangleModel& model, const torch::Tensor& base, int64_t attribute,
                               const torch::Tensor& code);

inline constexpr int64_t kDefaultInterpolationSteps = 8;

}  // namespace disent
