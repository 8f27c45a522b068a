#include "disent/losses.hpp"

#include <cmath>
#include <sstream>

#include "disent/errors.hpp"

namespace disent {

namespace F = torch::nn::functional;

void LossWeights::validate() const {
    const std::pair<const char*, double> all[] = {{"lambda_rec", lambda_rec}, {"lambda_gp", lambda_gp},
                                                  {"lambda_cls_x", lambda_cls_x}, {"lambda_dis", lambda_dis},
                                                  {"lambda_cls_synth", lambda_cls_synth}, {"lambda_adv", lambda_adv}};
    std::string problems;
    for (const auto& [name, v] : all) {
        if (!(v >= 0.0) || !std::isfinite(v)) problems += std::string("\n  ") + name + " must be >= 0";
    }
    if (!problems.empty()) throw ConfigError("invalid loss weights:" + problems);
}

namespace {

void check_labels(const torch::Tensor& labels, int64_t batch, int64_t M) {
    if (labels.dim() != 2 || labels.size(0) != batch || labels.size(1) != M) {
        throw ShapeError("label matrix must be (" + std::to_string(batch) + ", " + std::to_string(M) + ")");
    }
}

}  // namespace

torch::Tensor rec_loss(const torch::Tensor& x, const torch::Tensor& x_hat) {
    if (x.sizes() != x_hat.sizes()) throw ShapeError("reconstruction shape differs from input shape");
    return (x - x_hat).abs().mean();
}

torch::Tensor uniform_cross_entropy(const torch::Tensor& logits) {
    return -torch::log_softmax(logits, 1).mean(1);
}

torch::Tensor latent_cls_loss(const ClassifierBank& bank, const LatentBundle& bundle, const torch::Tensor& labels) {
    const int64_t M = bundle.attribute_count();
    if (M != bank->size()) throw ShapeError("bundle has " + std::to_string(M) + " attribute codes, bank has " +
                                            std::to_string(bank->size()) + " classifiers");
    check_labels(labels, bundle.batch_size(), M);
    torch::Tensor total;
    for (int64_t m = 1; m <= M; ++m) {
        auto term = F::cross_entropy(latent_logits(bank, bundle.codes[m], m), labels.select(1, m - 1));
        total = total.defined() ? total + term : term;
    }
    return total / static_cast<double>(M);
}

torch::Tensor disentangle_loss(const ClassifierBank& bank, const LatentBundle& bundle) {
    const int64_t M = bundle.attribute_count();
    if (M != bank->size()) throw ShapeError("bundle/classifier attribute count mismatch");
    torch::Tensor total;
    int64_t encoders_counted = 0;
    for (int64_t m = 0; m <= M; ++m) {
        torch::Tensor per_encoder;
        int64_t others = 0;
        for (int64_t other = 1; other <= M; ++other) {
            if (other == m) continue;
            auto ce = uniform_cross_entropy(latent_logits(bank, bundle.codes[m], other)).mean();
            per_encoder = per_encoder.defined() ? per_encoder + ce : ce;
            ++others;
        }
        if (others == 0) continue;  // M = 1: encoder 1 has no other attribute
        per_encoder = per_encoder / static_cast<double>(others);
        total = total.defined() ? total + per_encoder : per_encoder;
        ++encoders_counted;
    }
    return total / static_cast<double>(encoders_counted);
}

torch::Tensor synth_cls_loss(const ClassifierBank& bank, const torch::Tensor& x_synth,
                             const torch::Tensor& expected_labels) {
    return real_cls_loss(bank, x_synth, expected_labels);
}

torch::Tensor real_cls_loss(const ClassifierBank& bank, const torch::Tensor& x, const torch::Tensor& labels) {
    const int64_t M = bank->size();
    check_labels(labels, x.size(0), M);
    torch::Tensor total;
    for (int64_t m = 1; m <= M; ++m) {
        auto term = F::cross_entropy(image_logits(bank, x, m), labels.select(1, m - 1));
        total = total.defined() ? total + term : term;
    }
    return total / static_cast<double>(M);
}

torch::Tensor critic_values(const CriticFn& critic, const torch::Tensor& x) {
    return critic(x).flatten(1).mean(1);
}

torch::Tensor sample_interpolation_weights(int64_t batch, std::optional<at::Generator> gen, torch::ScalarType dtype) {
    return torch::rand({batch, 1, 1, 1}, gen, torch::TensorOptions().dtype(dtype));
}

torch::Tensor gradient_penalty(const CriticFn& critic, const torch::Tensor& x_real, const torch::Tensor& x_synth,
                               const torch::Tensor& eps) {
    if (x_real.sizes() != x_synth.sizes()) throw ShapeError("real and synthesized batches differ in shape");
    auto x_hat = (eps * x_real.detach() + (1.0 - eps) * x_synth.detach()).requires_grad_(true);
    auto scores = critic_values(critic, x_hat);
    auto grads = torch::autograd::grad({scores.sum()}, {x_hat}, /*grad_outputs=*/{}, /*retain_graph=*/true,
                                       /*create_graph=*/true, /*allow_unused=*/true);
    auto g = grads[0].defined() ? grads[0] : torch::zeros_like(x_hat);
    auto norms = g.flatten(1).norm(2, 1);
    return (norms - 1.0).pow(2).mean();
}

AdversarialLosses wgan_gp_losses(const CriticFn& critic, const torch::Tensor& x_real, const torch::Tensor& x_synth,
                                 const torch::Tensor& eps, double lambda_gp) {
    if (x_real.size(0) != x_synth.size(0)) throw ShapeError("real and synthesized batch sizes differ");
    AdversarialLosses out;
    auto c_real = critic_values(critic, x_real);
    auto c_synth = critic_values(critic, x_synth);
    out.gap = c_real.mean() - c_synth.mean();
    out.gp = gradient_penalty(critic, x_real, x_synth, eps);
    out.critic_loss = -out.gap + lambda_gp * out.gp;
    out.generator_loss = -c_synth.mean();
    return out;
}

AdversarialLosses cross_entropy_gan_losses(const CriticFn& critic, const torch::Tensor& x_real,
                                           const torch::Tensor& x_synth) {
    if (x_real.size(0) != x_synth.size(0)) throw ShapeError("real and synthesized batch sizes differ");
    AdversarialLosses out;
    auto c_real = critic_values(critic, x_real);
    auto c_synth = critic_values(critic, x_synth);
    out.critic_loss = -(F::logsigmoid(c_real).mean() + F::logsigmoid(-c_synth).mean());
    out.generator_loss = F::logsigmoid(-c_synth).mean();
    out.gp = torch::zeros({}, c_real.options());
    out.gap = torch::zeros({}, c_real.options());
    return out;
}

void check_second_order_support() {
    try {
        torch::nn::Conv2d conv(torch::nn::Conv2dOptions(3, 2, 4).stride(2).padding(1));
        CriticFn critic = [&](const torch::Tensor& x) { return torch::leaky_relu(conv->forward(x), 0.01); };
        auto real = torch::rand({2, 3, 8, 8});
        auto synth = torch::rand({2, 3, 8, 8});
        auto gp = gradient_penalty(critic, real, synth, torch::full({2, 1, 1, 1}, 0.5));
        auto g = torch::autograd::grad({gp}, {conv->weight});
        if (!g[0].defined() || !torch::isfinite(g[0]).all().item<bool>()) {
            throw CapabilityError("substrate returned no finite second-order gradient");
        }
    } catch (const c10::Error& e) {
        throw CapabilityError(std::string("gradient penalty needs second-order gradients: ") +
                              e.what_without_backtrace());
    }
}

double LossReport::term(const std::string& name) const {
    auto it = terms.find(name);
    return it == terms.end() ? 0.0 : it->second;
}

std::string LossReport::to_log_lines(int64_t step) const {
    std::ostringstream out;
    auto line = [&](const std::string& name, double v) {
        out << nlohmann::json{{"step", step}, {"term", name}, {"value", v}}.dump() << "\n";
    };
    for (const auto& [name, v] : terms) line(name, v);
    line("L_G", generator_total);
    line("L_D", critic_total);
    line("L_C", classifier_total);
    return out.str();
}

LossReport full_objective(const std::map<std::string, double>& terms, const LossWeights& weights) {
    for (const auto& [name, v] : terms) {
        if (!std::isfinite(v)) throw DivergenceError(name, "loss term '" + name + "' is not finite");
    }
    LossReport report;
    report.terms = terms;
    report.generator_total = weights.lambda_adv * report.term(kTermAdv) + weights.lambda_dis * report.term(kTermDis) +
                             weights.lambda_cls_x * report.term(kTermClsX) +
                             weights.lambda_cls_synth * report.term(kTermClsSynth) +
                             weights.lambda_rec * report.term(kTermRec);
    report.critic_total = report.term(kTermCritic);
    report.classifier_total = report.term(kTermClsReal);
    return report;
}

}  // namespace disent
