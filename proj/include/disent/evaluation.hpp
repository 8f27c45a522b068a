#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <torch/torch.h>

#include "disent/data.hpp"
#include "disent/metrics.hpp"
#include "disent/model.hpp"

namespace disent {

Eigen::MatrixXd to_eigen(const torch::Tensor& t);

/// Flattened E_m codes of every item with all schema labels attached.
EmbeddingSet collect_embeddings(const DisentangleModel& model, const Dataset& dataset, int64_t attribute,
                                int64_t batch = 64);

struct EmbeddingExport {
    EmbeddingSet set;
    std::filesystem::path embeddings;
    std::filesystem::path projection;
};

/// Writes `<dir>/embeddings.tsv` and its 2-D PCA projection `<dir>/pca.tsv`.
EmbeddingExport export_embeddings(const DisentangleModel& model, const Dataset& dataset, int64_t attribute,
                                  const std::filesystem::path& dir);

/// mean[m][k]: mean entropy of C_{k+1} posteriors on z_m codes, m = 0..M.
struct LatentEntropyReport {
    std::vector<std::string> attribute_names;
    std::vector<std::vector<double>> mean;
    std::vector<double> max_entropy;  // ln |m'|

    double at(int64_t code, int64_t classifier) const {
        return mean.at(static_cast<size_t>(code)).at(static_cast<size_t>(classifier - 1));
    }
    std::string to_table() const;
};

LatentEntropyReport latent_posterior_entropy(const DisentangleModel& model, const ClassifierBank& bank,
                                             const Dataset& dataset, int64_t batch = 64);

struct FeatureExtractor {
    std::string name;  // recorded next to every distance computed with it
    std::function<Eigen::MatrixXd(const torch::Tensor&)> extract;
};

/// Global-average-pooled block-2 activations of every classifier, concatenated.
FeatureExtractor classifier_features(const ClassifierBank& bank, const std::string& checkpoint_hash);

Eigen::MatrixXd extract_features(const FeatureExtractor& extractor, const torch::Tensor& images, int64_t batch = 128);

enum class TransferSource { Donor, MeanCode };

struct TransferProtocol {
    int64_t attribute = 1;  // 1-based latent index
    TransferSource source = TransferSource::Donor;
    uint64_t seed = 0;
    int64_t batch = 64;
};

/// Produces translated images for a batch of sources towards `target_class`.
/// `donors` holds one donor per source carrying that class.
using TransferFn = std::function<torch::Tensor(const torch::Tensor& sources, const torch::Tensor& donors,
                                               int64_t target_class)>;

/// Swap of code m from the donors, or of the class-mean code over `reference`.
TransferFn model_transfer(const DisentangleModel& model, const TransferProtocol& protocol,
                          const Dataset& reference);

struct TransferResult {
    std::string attribute;
    std::vector<double> per_class_accuracy;
    MeanStd target;                          // over target classes
    std::map<std::string, MeanStd> preserved;  // other attributes keep the source label
    torch::Tensor synthesized;               // (N * |m|, 3, H, W)
    int64_t evaluated = 0;
    std::string to_table() const;
};

/// Translates every test image to every class of the protocol attribute and
/// scores the outputs with the evaluation classifiers.
TransferResult transfer_accuracy(const Dataset& test, const ClassifierBank* eval, const TransferProtocol& protocol,
                                 const TransferFn& generate);

}  // namespace disent
