#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "disent/model.hpp"

namespace disent {

/// Weights of the composite objective. lambda_rec and lambda_gp default to 10.
struct LossWeights {
    double lambda_rec = 10.0;
    double lambda_gp = 10.0;
    double lambda_cls_x = 1.0;
    double lambda_dis = 1.0;
    double lambda_cls_synth = 1.0;
    double lambda_adv = 1.0;

    void validate() const;
};

enum class AdversarialMode { WassersteinGP, CrossEntropy };

// All losses are in nats and reduce with a plain mean over the batch, so they
// are invariant to batch permutation.

/// Mean absolute error between x and its reconstruction.
torch::Tensor rec_loss(const torch::Tensor& x, const torch::Tensor& x_hat);

/// Per-sample cross-entropy from the uniform distribution to softmax(logits):
/// -(1/K) sum_i log p_i. Minimum ln K, attained only at the uniform posterior.
torch::Tensor uniform_cross_entropy(const torch::Tensor& logits);

/// Mean over m = 1..M of the NLL of labels[:, m-1] under the head of C_m fed with z_m.
torch::Tensor latent_cls_loss(const ClassifierBank& bank, const LatentBundle& bundle, const torch::Tensor& labels);

/// For every encoder m = 0..M, the uniform cross-entropy of C_m' on z_m
/// averaged over m' != m (all M attributes for m = 0), then averaged over
/// the encoders that have at least one such m'.
torch::Tensor disentangle_loss(const ClassifierBank& bank, const LatentBundle& bundle);

/// Mean over m of the NLL of expected_labels[:, m-1] under C_m(x_synth).
torch::Tensor synth_cls_loss(const ClassifierBank& bank, const torch::Tensor& x_synth,
                             const torch::Tensor& expected_labels);

/// Classifier objective on real labeled images (L_C).
torch::Tensor real_cls_loss(const ClassifierBank& bank, const torch::Tensor& x, const torch::Tensor& labels);

/// A critic maps an image batch to a score map (b, ...); c(x) is its per-sample mean.
using CriticFn = std::function<torch::Tensor(const torch::Tensor&)>;
torch::Tensor critic_values(const CriticFn& critic, const torch::Tensor& x);

/// Per-sample interpolation weights eps ~ U(0, 1), shaped (b, 1, 1, 1).
torch::Tensor sample_interpolation_weights(int64_t batch, std::optional<at::Generator> gen,
                                           torch::ScalarType dtype = torch::kFloat32);

/// E[(||grad c(x_hat)||_2 - 1)^2] with x_hat = eps x_real + (1 - eps) x_synth.
/// The result keeps its graph (create_graph) so it can be differentiated.
torch::Tensor gradient_penalty(const CriticFn& critic, const torch::Tensor& x_real, const torch::Tensor& x_synth,
                               const torch::Tensor& eps);

struct AdversarialLosses {
    torch::Tensor critic_loss;     // -(E c(real) - E c(synth)) + lambda_gp * gp
    torch::Tensor generator_loss;  // -E c(synth)
    torch::Tensor gp;
    torch::Tensor gap;  // E c(real) - E c(synth)
};

AdversarialLosses wgan_gp_losses(const CriticFn& critic, const torch::Tensor& x_real, const torch::Tensor& x_synth,
                                 const torch::Tensor& eps, double lambda_gp);

/// Saturating cross-entropy form: critic minimises -[log s(c(x)) + log(1 - s(c(x~)))],
/// generator minimises log(1 - s(c(x~))). gp and gap are zero tensors.
AdversarialLosses cross_entropy_gan_losses(const CriticFn& critic, const torch::Tensor& x_real,
                                           const torch::Tensor& x_synth);

/// Throws CapabilityError if double backward through the critic ops fails.
void check_second_order_support();

/// Scalar values of every term for one step plus the grouped totals.
struct LossReport {
    std::map<std::string, double> terms;
    double generator_total = 0.0;   // L_G
    double critic_total = 0.0;      // L_D
    double classifier_total = 0.0;  // L_C

    double term(const std::string& name) const;
    /// One JSON object per line: {"step", "term", "value"}; totals use terms L_G, L_D, L_C.
    std::string to_log_lines(int64_t step) const;
};

// Term names used throughout reports and logs.
inline constexpr const char* kTermRec = "rec";
inline constexpr const char* kTermClsX = "cls_x";
inline constexpr const char* kTermDis = "dis";
inline constexpr const char* kTermClsSynth = "cls_synth";
inline constexpr const char* kTermAdv = "adv";
inline constexpr const char* kTermCritic = "critic";
inline constexpr const char* kTermGp = "gp";
inline constexpr const char* kTermGap = "gap";
inline constexpr const char* kTermClsReal = "cls_real";

/// Weighted grouping of the terms. Missing terms count as zero. Throws
/// DivergenceError naming the first non-finite term.
LossReport full_objective(const std::map<std::string, double>& terms, const LossWeights& weights);

}  // namespace disent
