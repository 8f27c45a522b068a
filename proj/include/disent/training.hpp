#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "disent/data.hpp"
#include "disent/losses.hpp"
#include "disent/model.hpp"

namespace disent {

enum class ClassifierMode { PretrainFrozen, Joint };
enum class ShuffleMode { Permutation, WithReplacement };

struct OptimizerConfig {
    std::string name = "adam";
    double learning_rate = 1e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
};

struct PretrainConfig {
    int64_t steps = 2000;
    double target_accuracy = 0.99;
    int64_t eval_every = 50;
    int64_t batch_size = 32;
    double learning_rate = 1e-3;
};

struct TrainConfig {
    int64_t batch_size = 16;
    int64_t steps = 1000;
    int64_t critic_steps_per_gen = 5;
    OptimizerConfig optimizer;
    LossWeights weights;
    ClassifierMode classifier_mode = ClassifierMode::PretrainFrozen;
    AdversarialMode adversarial = AdversarialMode::WassersteinGP;
    ShuffleMode shuffle_mode = ShuffleMode::Permutation;
    PretrainConfig pretrain;
    uint64_t seed = 0;
    int64_t checkpoint_every = 0;  // 0 = final checkpoint only
    int64_t log_every = 1;

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);
std::string to_string(ClassifierMode mode);
std::string to_string(AdversarialMode mode);
std::string to_string(ShuffleMode mode);

/// Per-attribute batch permutations r_1..r_M and the labels they induce:
/// induced_labels[i][m-1] = labels[r_m[i]][m-1].
struct ShuffleSpec {
    std::vector<torch::Tensor> permutations;  // M int64 tensors of length b
    torch::Tensor induced_labels;             // (b, M), set by bind_labels

    int64_t batch_size() const { return permutations.empty() ? 0 : permutations[0].size(0); }
    int64_t attribute_count() const { return static_cast<int64_t>(permutations.size()); }
};

ShuffleSpec sample_shuffle(int64_t batch, int64_t attributes, std::mt19937_64& rng,
                           ShuffleMode mode = ShuffleMode::Permutation);
ShuffleSpec identity_shuffle(int64_t batch, int64_t attributes);
void bind_labels(ShuffleSpec& spec, const torch::Tensor& labels);

struct SynthesizedBatch {
    torch::Tensor images;
    torch::Tensor expected_labels;
};

/// Keeps z_0, gathers code m by r_m and decodes.
SynthesizedBatch synthesize_shuffled(const DisentangleModel& model, const LatentBundle& bundle,
                                     const ShuffleSpec& spec);

/// Random batch indices drawn without replacement.
std::vector<int64_t> sample_batch_indices(int64_t dataset_size, int64_t batch, std::mt19937_64& rng);

/// Fraction of items whose argmax prediction matches the label, per attribute.
std::vector<double> classifier_accuracy(const ClassifierBank& bank, const Dataset& dataset, int64_t batch = 128);

struct PretrainReport {
    int64_t steps_run = 0;
    std::vector<double> train_accuracy;
    double final_loss = 0.0;
};

/// Cross-entropy training of every C_m on real images until each attribute
/// reaches target_accuracy (checked every eval_every steps) or the budget ends.
PretrainReport pretrain_classifiers(ClassifierBank& bank, const Dataset& train, const PretrainConfig& config,
                                    std::mt19937_64& rng);

enum class UpdateKind { Critic, Generator, Classifier };

class Trainer {
public:
    using UpdateObserver = std::function<void(UpdateKind)>;
    using LogSink = std::function<void(int64_t step, const LossReport&)>;

    Trainer(DisentangleModel model, TrainConfig config);

    const DisentangleModel& model() const noexcept { return model_; }
    const TrainConfig& config() const noexcept { return config_; }
    int64_t step() const noexcept { return step_; }
    bool classifiers_ready() const noexcept { return classifiers_ready_; }
    std::mt19937_64& rng() noexcept { return rng_; }

    PretrainReport pretrain_classifiers(const Dataset& train);
    /// Copies already-pretrained classifier parameters into the model.
    void adopt_classifiers(const ClassifierBank& bank);
    /// Moves the step target, e.g. to continue a resumed run further.
    void set_total_steps(int64_t steps);

    /// critic_steps_per_gen critic updates, one generator update and, in joint
    /// mode, one classifier update on the real batch.
    LossReport train_step(const torch::Tensor& x, const torch::Tensor& labels, const ShuffleSpec& spec);
    /// Samples a batch and a shuffle from `train`, then runs train_step.
    LossReport train_step(const Dataset& train);

    /// Runs until config.steps, logging to `out_dir/loss_log.jsonl` and
    /// checkpointing to `out_dir/checkpoint` (and step-k subdirectories when
    /// checkpoint_every > 0). Pretrains classifiers first if needed.
    void train(const Dataset& train, const std::filesystem::path& out_dir, const LogSink& sink = {});

    /// Model blobs plus optimizer, step, RNG and config state.
    void save(const std::filesystem::path& dir) const;
    static Trainer resume(const std::filesystem::path& dir);

    void set_update_observer(UpdateObserver observer) { observer_ = std::move(observer); }

private:
    void notify(UpdateKind kind) const;
    CriticFn critic_fn() const;

    DisentangleModel model_;
    TrainConfig config_;
    std::unique_ptr<torch::optim::Adam> gen_opt_, critic_opt_, cls_opt_;
    std::mt19937_64 rng_;
    at::Generator eps_gen_;
    int64_t step_ = 0;
    bool classifiers_ready_ = false;
    UpdateObserver observer_;
};

}  // namespace disent
