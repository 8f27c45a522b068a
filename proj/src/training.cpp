#include "disent/training.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "disent/checkpoint.hpp"
#include "disent/errors.hpp"

namespace disent {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    std::vector<std::string> problems;
    if (batch_size < 2) {
        problems.push_back("batch_size must be >= 2: shuffling codes across a batch of 1 is the identity (got " +
                           std::to_string(batch_size) + ")");
    }
    if (steps < 0) problems.push_back("steps must be >= 0");
    if (critic_steps_per_gen < 0) problems.push_back("critic_steps_per_gen must be >= 0");
    if (optimizer.name != "adam") problems.push_back("optimizer.name must be 'adam' (got '" + optimizer.name + "')");
    if (!(optimizer.learning_rate > 0)) problems.push_back("optimizer.learning_rate must be > 0");
    if (optimizer.beta1 < 0 || optimizer.beta1 >= 1 || optimizer.beta2 < 0 || optimizer.beta2 >= 1) {
        problems.push_back("optimizer betas must lie in [0, 1)");
    }
    if (pretrain.steps < 0) problems.push_back("pretrain.steps must be >= 0");
    if (pretrain.batch_size < 1) problems.push_back("pretrain.batch_size must be >= 1");
    if (pretrain.eval_every < 1) problems.push_back("pretrain.eval_every must be >= 1");
    if (!(pretrain.learning_rate > 0)) problems.push_back("pretrain.learning_rate must be > 0");
    if (checkpoint_every < 0) problems.push_back("checkpoint_every must be >= 0");
    if (log_every < 0) problems.push_back("log_every must be >= 0");
    try {
        weights.validate();
    } catch (const ConfigError& e) {
        problems.emplace_back(e.what());
    }
    if (!problems.empty()) {
        std::string msg = "invalid training config:";
        for (const auto& p : problems) msg += "\n  " + p;
        throw ConfigError(msg);
    }
}

std::string to_string(ClassifierMode mode) {
    return mode == ClassifierMode::PretrainFrozen ? "pretrain_frozen" : "joint";
}
std::string to_string(AdversarialMode mode) {
    return mode == AdversarialMode::WassersteinGP ? "wgan_gp" : "cross_entropy";
}
std::string to_string(ShuffleMode mode) {
    return mode == ShuffleMode::Permutation ? "permutation" : "with_replacement";
}

json to_json(const TrainConfig& c) {
    return {{"batch_size", c.batch_size},
            {"steps", c.steps},
            {"critic_steps_per_gen", c.critic_steps_per_gen},
            {"optimizer",
             {{"name", c.optimizer.name},
              {"learning_rate", c.optimizer.learning_rate},
              {"beta1", c.optimizer.beta1},
              {"beta2", c.optimizer.beta2}}},
            {"loss_weights",
             {{"lambda_rec", c.weights.lambda_rec},
              {"lambda_gp", c.weights.lambda_gp},
              {"lambda_cls_x", c.weights.lambda_cls_x},
              {"lambda_dis", c.weights.lambda_dis},
              {"lambda_cls_synth", c.weights.lambda_cls_synth},
              {"lambda_adv", c.weights.lambda_adv}}},
            {"classifier_mode", to_string(c.classifier_mode)},
            {"adversarial", to_string(c.adversarial)},
            {"shuffle_mode", to_string(c.shuffle_mode)},
            {"pretrain",
             {{"steps", c.pretrain.steps},
              {"target_accuracy", c.pretrain.target_accuracy},
              {"eval_every", c.pretrain.eval_every},
              {"batch_size", c.pretrain.batch_size},
              {"learning_rate", c.pretrain.learning_rate}}},
            {"seed", c.seed},
            {"checkpoint_every", c.checkpoint_every},
            {"log_every", c.log_every}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    c.batch_size = j.at("batch_size");
    c.steps = j.at("steps");
    c.critic_steps_per_gen = j.at("critic_steps_per_gen");
    const auto& o = j.at("optimizer");
    c.optimizer = {o.at("name"), o.at("learning_rate"), o.at("beta1"), o.at("beta2")};
    const auto& w = j.at("loss_weights");
    c.weights = {w.at("lambda_rec"), w.at("lambda_gp"),        w.at("lambda_cls_x"),
                 w.at("lambda_dis"), w.at("lambda_cls_synth"), w.at("lambda_adv")};
    c.classifier_mode = j.at("classifier_mode") == "joint" ? ClassifierMode::Joint : ClassifierMode::PretrainFrozen;
    c.adversarial = j.at("adversarial") == "cross_entropy" ? AdversarialMode::CrossEntropy
                                                           : AdversarialMode::WassersteinGP;
    c.shuffle_mode =
        j.at("shuffle_mode") == "with_replacement" ? ShuffleMode::WithReplacement : ShuffleMode::Permutation;
    const auto& p = j.at("pretrain");
    c.pretrain = {p.at("steps"), p.at("target_accuracy"), p.at("eval_every"), p.at("batch_size"),
                  p.at("learning_rate")};
    c.seed = j.at("seed");
    c.checkpoint_every = j.at("checkpoint_every");
    c.log_every = j.at("log_every");
    return c;
}

// ---------------------------------------------------------------------------
// Shuffling
// ---------------------------------------------------------------------------

ShuffleSpec sample_shuffle(int64_t batch, int64_t attributes, std::mt19937_64& rng, ShuffleMode mode) {
    if (batch < 2) throw ContractError("shuffle needs a batch of at least 2 (got " + std::to_string(batch) + ")");
    if (attributes < 1) throw ContractError("shuffle needs at least one attribute");
    ShuffleSpec spec;
    for (int64_t m = 0; m < attributes; ++m) {
        std::vector<int64_t> r(static_cast<size_t>(batch));
        if (mode == ShuffleMode::Permutation) {
            std::iota(r.begin(), r.end(), 0);
            // Fisher-Yates with modulo draws; std::shuffle's sequence is library-specific.
            for (int64_t i = batch - 1; i > 0; --i) {
                const auto j = static_cast<int64_t>(rng() % static_cast<uint64_t>(i + 1));
                std::swap(r[static_cast<size_t>(i)], r[static_cast<size_t>(j)]);
            }
        } else {
            for (auto& v : r) v = static_cast<int64_t>(rng() % static_cast<uint64_t>(batch));
        }
        spec.permutations.push_back(torch::tensor(r, torch::kInt64));
    }
    return spec;
}

ShuffleSpec identity_shuffle(int64_t batch, int64_t attributes) {
    ShuffleSpec spec;
    for (int64_t m = 0; m < attributes; ++m) spec.permutations.push_back(torch::arange(batch, torch::kInt64));
    return spec;
}

void bind_labels(ShuffleSpec& spec, const torch::Tensor& labels) {
    if (labels.dim() != 2 || labels.size(0) != spec.batch_size() || labels.size(1) != spec.attribute_count()) {
        throw ShapeError("labels must be (b, M) matching the shuffle spec");
    }
    std::vector<torch::Tensor> cols;
    for (int64_t m = 0; m < spec.attribute_count(); ++m) {
        cols.push_back(labels.select(1, m).index_select(0, spec.permutations[static_cast<size_t>(m)]));
    }
    spec.induced_labels = torch::stack(cols, 1);
}

SynthesizedBatch synthesize_shuffled(const DisentangleModel& model, const LatentBundle& bundle,
                                     const ShuffleSpec& spec) {
    bundle.check_consistent();
    if (spec.attribute_count() != bundle.attribute_count() || spec.batch_size() != bundle.batch_size()) {
        throw ShapeError("shuffle spec (b=" + std::to_string(spec.batch_size()) + ", M=" +
                         std::to_string(spec.attribute_count()) + ") does not match the latent bundle (b=" +
                         std::to_string(bundle.batch_size()) + ", M=" + std::to_string(bundle.attribute_count()) +
                         ")");
    }
    LatentBundle shuffled;
    shuffled.codes.push_back(bundle.codes[0]);
    shuffled.encoder.push_back(0);
    for (int64_t m = 1; m <= bundle.attribute_count(); ++m) {
        shuffled.codes.push_back(bundle.codes[m].index_select(0, spec.permutations[static_cast<size_t>(m - 1)]));
        shuffled.encoder.push_back(m);
    }
    return {decode(model, shuffled), spec.induced_labels};
}

// ---------------------------------------------------------------------------
// Classifier pretraining
// ---------------------------------------------------------------------------

std::vector<int64_t> sample_batch_indices(int64_t dataset_size, int64_t batch, std::mt19937_64& rng) {
    if (dataset_size < batch) {
        throw ContractError("dataset of " + std::to_string(dataset_size) + " items is smaller than batch " +
                            std::to_string(batch));
    }
    std::vector<int64_t> idx(static_cast<size_t>(dataset_size));
    std::iota(idx.begin(), idx.end(), 0);
    for (int64_t i = 0; i < batch; ++i) {
        const auto j = i + static_cast<int64_t>(rng() % static_cast<uint64_t>(dataset_size - i));
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    idx.resize(static_cast<size_t>(batch));
    return idx;
}

std::vector<double> classifier_accuracy(const ClassifierBank& bank, const Dataset& dataset, int64_t batch) {
    torch::NoGradGuard no_grad;
    const int64_t M = bank->size();
    std::vector<int64_t> correct(static_cast<size_t>(M), 0);
    const auto dtype = bank->parameters().front().scalar_type();
    for (int64_t start = 0; start < dataset.size(); start += batch) {
        const int64_t len = std::min(batch, dataset.size() - start);
        auto x = dataset.images().narrow(0, start, len).to(dtype);
        auto y = dataset.labels().narrow(0, start, len);
        for (int64_t m = 1; m <= M; ++m) {
            auto pred = image_logits(bank, x, m).argmax(1);
            correct[static_cast<size_t>(m - 1)] += pred.eq(y.select(1, m - 1)).sum().item<int64_t>();
        }
    }
    std::vector<double> acc;
    for (auto c : correct) acc.push_back(dataset.empty() ? 0.0 : static_cast<double>(c) / dataset.size());
    return acc;
}

PretrainReport pretrain_classifiers(ClassifierBank& bank, const Dataset& train, const PretrainConfig& config,
                                    std::mt19937_64& rng) {
    PretrainReport report;
    if (config.steps == 0) {
        report.train_accuracy = classifier_accuracy(bank, train);
        return report;
    }
    torch::optim::Adam opt(bank->parameters(), torch::optim::AdamOptions(config.learning_rate));
    const auto dtype = bank->parameters().front().scalar_type();
    const int64_t b = std::min(config.batch_size, train.size());
    for (int64_t s = 1; s <= config.steps; ++s) {
        auto idx = torch::tensor(sample_batch_indices(train.size(), b, rng), torch::kInt64);
        auto x = train.images().index_select(0, idx).to(dtype);
        auto y = train.labels().index_select(0, idx);
        auto loss = real_cls_loss(bank, x, y);
        report.final_loss = loss.item<double>();
        if (!std::isfinite(report.final_loss)) throw DivergenceError(kTermClsReal, "classifier pretraining diverged");
        opt.zero_grad();
        loss.backward();
        opt.step();
        report.steps_run = s;
        if (s % config.eval_every == 0 || s == config.steps) {
            report.train_accuracy = classifier_accuracy(bank, train);
            if (std::all_of(report.train_accuracy.begin(), report.train_accuracy.end(),
                            [&](double a) { return a >= config.target_accuracy; })) {
                break;
            }
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

namespace {

std::unique_ptr<torch::optim::Adam> make_adam(const std::vector<torch::Tensor>& params, const OptimizerConfig& c) {
    return std::make_unique<torch::optim::Adam>(
        params, torch::optim::AdamOptions(c.learning_rate).betas(std::make_tuple(c.beta1, c.beta2)));
}

void check_finite(const char* term, const torch::Tensor& value) {
    if (!std::isfinite(value.item<double>())) {
        throw DivergenceError(term, std::string("loss term '") + term + "' is not finite");
    }
}

}  // namespace

Trainer::Trainer(DisentangleModel model, TrainConfig config)
    : model_(std::move(model)), config_(std::move(config)), rng_(config_.seed),
      eps_gen_(at::detail::createCPUGenerator(config_.seed + 1)) {
    config_.validate();
    if (config_.adversarial == AdversarialMode::WassersteinGP) check_second_order_support();
    gen_opt_ = make_adam(model_->generator_parameters(), config_.optimizer);
    critic_opt_ = make_adam(model_->critic_parameters(), config_.optimizer);
    cls_opt_ = make_adam(model_->classifier_parameters(), config_.optimizer);
}

void Trainer::notify(UpdateKind kind) const {
    if (observer_) observer_(kind);
}

CriticFn Trainer::critic_fn() const {
    auto critic = model_->critic();
    return [critic](const torch::Tensor& x) mutable { return critic->forward(x); };
}

PretrainReport Trainer::pretrain_classifiers(const Dataset& train) {
    auto bank = model_->classifiers();
    auto report = disent::pretrain_classifiers(bank, train, config_.pretrain, rng_);
    classifiers_ready_ = true;
    return report;
}

void Trainer::adopt_classifiers(const ClassifierBank& bank) {
    auto dst = model_->classifiers()->named_parameters();
    const auto src = bank->named_parameters();
    if (dst.size() != src.size()) throw CheckpointError("classifier checkpoint does not match the model classifiers");
    torch::NoGradGuard no_grad;
    for (const auto& item : src) {
        auto* target = dst.find(item.key());
        if (target == nullptr || target->sizes() != item.value().sizes()) {
            throw CheckpointError("classifier parameter '" + item.key() + "' does not match the model");
        }
        target->copy_(item.value());
    }
    classifiers_ready_ = true;
}

void Trainer::set_total_steps(int64_t steps) {
    if (steps < 0) throw ConfigError("steps must be >= 0");
    config_.steps = steps;
}

LossReport Trainer::train_step(const torch::Tensor& x_in, const torch::Tensor& labels, const ShuffleSpec& spec_in) {
    if (config_.classifier_mode == ClassifierMode::PretrainFrozen && !classifiers_ready_) {
        throw ContractError("pretrain_frozen mode requires pretrained classifiers before train_step");
    }
    const auto dtype = model_->parameters().front().scalar_type();
    const auto x = x_in.to(dtype);
    ShuffleSpec spec = spec_in;
    if (!spec.induced_labels.defined()) bind_labels(spec, labels);
    const auto& w = config_.weights;
    const auto critic = critic_fn();
    std::map<std::string, double> terms;

    // Generator forward pass. Classifier and critic parameters are excluded
    // from this graph so L_G only reaches encoder/decoder parameters.
    torch::Tensor rec, cls_x, dis, cls_synth, x_synth;
    {
        FreezeGuard freeze_cls(model_->classifier_parameters());
        auto bundle = encode_all(model_, x);
        auto x_rec = decode(model_, bundle);
        auto synth = synthesize_shuffled(model_, bundle, spec);
        x_synth = synth.images;
        auto bank = model_->classifiers();
        rec = rec_loss(x, x_rec);
        cls_x = latent_cls_loss(bank, bundle, labels);
        dis = disentangle_loss(bank, bundle);
        cls_synth = synth_cls_loss(bank, x_synth, synth.expected_labels);
    }

    // Critic updates on the detached synthesized batch.
    const auto x_synth_fixed = x_synth.detach();
    for (int64_t k = 0; k < config_.critic_steps_per_gen; ++k) {
        AdversarialLosses adv;
        if (config_.adversarial == AdversarialMode::WassersteinGP) {
            auto eps = sample_interpolation_weights(x.size(0), eps_gen_, dtype);
            adv = wgan_gp_losses(critic, x, x_synth_fixed, eps, w.lambda_gp);
        } else {
            adv = cross_entropy_gan_losses(critic, x, x_synth_fixed);
        }
        check_finite(kTermCritic, adv.critic_loss);
        critic_opt_->zero_grad();
        adv.critic_loss.backward();
        critic_opt_->step();
        notify(UpdateKind::Critic);
        terms[kTermCritic] = adv.critic_loss.item<double>();
        terms[kTermGp] = adv.gp.item<double>();
        terms[kTermGap] = adv.gap.item<double>();
    }

    // Generator update against the updated (frozen) critic.
    {
        FreezeGuard freeze_critic(model_->critic_parameters());
        auto c_synth = critic_values(critic, x_synth);
        auto adv = config_.adversarial == AdversarialMode::WassersteinGP
                       ? -c_synth.mean()
                       : torch::nn::functional::logsigmoid(-c_synth).mean();
        const std::pair<const char*, torch::Tensor*> named[] = {
            {kTermRec, &rec}, {kTermClsX, &cls_x}, {kTermDis, &dis}, {kTermClsSynth, &cls_synth}, {kTermAdv, &adv}};
        for (const auto& [name, t] : named) {
            check_finite(name, *t);
            terms[name] = t->item<double>();
        }
        auto total = w.lambda_adv * adv + w.lambda_dis * dis + w.lambda_cls_x * cls_x +
                     w.lambda_cls_synth * cls_synth + w.lambda_rec * rec;
        gen_opt_->zero_grad();
        total.backward();
        gen_opt_->step();
        notify(UpdateKind::Generator);
    }

    if (config_.classifier_mode == ClassifierMode::Joint) {
        auto loss = real_cls_loss(model_->classifiers(), x, labels);
        check_finite(kTermClsReal, loss);
        cls_opt_->zero_grad();
        loss.backward();
        cls_opt_->step();
        notify(UpdateKind::Classifier);
        terms[kTermClsReal] = loss.item<double>();
    }

    ++step_;
    return full_objective(terms, w);
}

LossReport Trainer::train_step(const Dataset& train) {
    auto idx = torch::tensor(sample_batch_indices(train.size(), config_.batch_size, rng_), torch::kInt64);
    auto x = train.images().index_select(0, idx);
    auto labels = train.labels().index_select(0, idx);
    auto spec = sample_shuffle(config_.batch_size, model_->attribute_count(), rng_, config_.shuffle_mode);
    bind_labels(spec, labels);
    return train_step(x, labels, spec);
}

void Trainer::train(const Dataset& train, const fs::path& out_dir, const LogSink& sink) {
    if (!(train.schema() == model_->schema())) throw ContractError("training data schema differs from the model schema");
    fs::create_directories(out_dir);
    if (config_.steps > step_ && config_.classifier_mode == ClassifierMode::PretrainFrozen && !classifiers_ready_) {
        pretrain_classifiers(train);
    }
    std::ofstream log(out_dir / "loss_log.jsonl", std::ios::app);
    while (step_ < config_.steps) {
        auto report = train_step(train);
        if (config_.log_every > 0 && step_ % config_.log_every == 0) {
            log << report.to_log_lines(step_);
            log.flush();
        }
        if (sink) sink(step_, report);
        if (config_.checkpoint_every > 0 && step_ % config_.checkpoint_every == 0 && step_ < config_.steps) {
            save(out_dir / ("checkpoint-step-" + std::to_string(step_)));
        }
    }
    save(out_dir / "checkpoint");
}

void Trainer::save(const fs::path& dir) const {
    save_model(model_, dir);
    torch::save(*gen_opt_, (dir / "optim_generator.pt").string());
    torch::save(*critic_opt_, (dir / "optim_critic.pt").string());
    torch::save(*cls_opt_, (dir / "optim_classifiers.pt").string());
    torch::save(eps_gen_.get_state(), (dir / "eps_generator.pt").string());
    std::ostringstream rng_state;
    rng_state << rng_;
    json state = {{"step", step_},
                  {"classifiers_ready", classifiers_ready_},
                  {"rng", rng_state.str()},
                  {"train_config", to_json(config_)}};
    std::ofstream out(dir / "trainer_state.json");
    if (!out) throw CheckpointError("cannot write trainer state in " + dir.string());
    out << state.dump(2) << "\n";
}

Trainer Trainer::resume(const fs::path& dir) {
    std::ifstream in(dir / "trainer_state.json");
    if (!in) throw CheckpointError("no trainer state in " + dir.string());
    json state;
    try {
        in >> state;
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("malformed trainer state: ") + e.what());
    }
    Trainer t(load_model(dir), train_config_from_json(state.at("train_config")));
    torch::load(*t.gen_opt_, (dir / "optim_generator.pt").string());
    torch::load(*t.critic_opt_, (dir / "optim_critic.pt").string());
    torch::load(*t.cls_opt_, (dir / "optim_classifiers.pt").string());
    torch::Tensor gen_state;
    torch::load(gen_state, (dir / "eps_generator.pt").string());
    t.eps_gen_.set_state(gen_state);
    std::istringstream rng_state(state.at("rng").get<std::string>());
    rng_state >> t.rng_;
    t.step_ = state.at("step");
    t.classifiers_ready_ = state.at("classifiers_ready");
    return t;
}

}  // namespace disent
