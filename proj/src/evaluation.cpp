#include "disent/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <random>
#include <sstream>

#include "disent/errors.hpp"
#include "disent/latent_ops.hpp"

namespace disent {

namespace {

torch::ScalarType dtype_of(const torch::nn::Module& module) { return module.parameters().front().scalar_type(); }

torch::Tensor slice_rows(const torch::Tensor& t, int64_t start, int64_t end) { return t.slice(0, start, end); }

void check_attribute(const DisentangleModel& model, int64_t m) {
    if (m < 1 || m > model->attribute_count()) {
        throw ContractError("attribute index " + std::to_string(m) + " outside [1, " +
                            std::to_string(model->attribute_count()) + "]");
    }
}

}  // namespace

Eigen::MatrixXd to_eigen(const torch::Tensor& t) {
    auto c = t.detach().to(torch::kCPU, torch::kFloat64).contiguous();
    if (c.dim() != 2) c = c.reshape({c.size(0), -1});
    // torch is row-major, Eigen column-major by default.
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> rows(
        c.data_ptr<double>(), c.size(0), c.size(1));
    return rows;
}

EmbeddingSet collect_embeddings(const DisentangleModel& model, const Dataset& dataset, int64_t attribute,
                                int64_t batch) {
    if (attribute < 0 || attribute > model->attribute_count()) {
        throw ContractError("code index " + std::to_string(attribute) + " outside [0, " +
                            std::to_string(model->attribute_count()) + "]");
    }
    if (dataset.empty()) throw ContractError("cannot embed an empty dataset");
    torch::NoGradGuard no_grad;
    auto encoder = model->encoder(attribute);
    const auto dtype = dtype_of(*model);
    std::vector<torch::Tensor> parts;
    for (int64_t s = 0; s < dataset.size(); s += batch) {
        const auto e = std::min(dataset.size(), s + batch);
        parts.push_back(encoder->forward(slice_rows(dataset.images(), s, e).to(dtype)).flatten(1));
    }
    EmbeddingSet set;
    set.points = to_eigen(torch::cat(parts));
    for (const auto& a : dataset.schema().attributes()) set.label_names.push_back(a.name);
    auto labels = dataset.labels().contiguous();
    const auto M = labels.size(1);
    const auto* p = labels.data_ptr<int64_t>();
    for (int64_t i = 0; i < dataset.size(); ++i) set.labels.emplace_back(p + i * M, p + (i + 1) * M);
    return set;
}

EmbeddingExport export_embeddings(const DisentangleModel& model, const Dataset& dataset, int64_t attribute,
                                  const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    EmbeddingExport out;
    out.set = collect_embeddings(model, dataset, attribute);
    out.embeddings = dir / "embeddings.tsv";
    out.projection = dir / "pca.tsv";
    write_embeddings(out.set, out.embeddings);
    EmbeddingSet projected;
    projected.label_names = out.set.label_names;
    projected.labels = out.set.labels;
    const auto dims = std::min<int64_t>(2, out.set.points.cols());
    projected.points = out.set.size() >= 2 ? pca_project(out.set.points, dims) : Eigen::MatrixXd::Zero(1, dims);
    write_embeddings(projected, out.projection);
    return out;
}

LatentEntropyReport latent_posterior_entropy(const DisentangleModel& model, const ClassifierBank& bank,
                                             const Dataset& dataset, int64_t batch) {
    if (dataset.empty()) throw ContractError("entropy over an empty dataset");
    const auto M = model->attribute_count();
    if (bank->size() != M) throw ContractError("classifier bank size differs from the model attribute count");
    torch::NoGradGuard no_grad;
    const auto dtype = dtype_of(*model);
    LatentEntropyReport report;
    for (const auto& a : model->schema().attributes()) {
        report.attribute_names.push_back(a.name);
        report.max_entropy.push_back(std::log(static_cast<double>(a.class_count)));
    }
    std::vector<std::vector<std::vector<torch::Tensor>>> parts(
        static_cast<size_t>(M + 1), std::vector<std::vector<torch::Tensor>>(static_cast<size_t>(M)));
    for (int64_t s = 0; s < dataset.size(); s += batch) {
        const auto e = std::min(dataset.size(), s + batch);
        auto bundle = encode_all(model, slice_rows(dataset.images(), s, e).to(dtype));
        for (int64_t m = 0; m <= M; ++m) {
            for (int64_t k = 1; k <= M; ++k) {
                parts[static_cast<size_t>(m)][static_cast<size_t>(k - 1)].push_back(
                    classify_latent(bank, bundle.codes[static_cast<size_t>(m)].to(dtype_of(*bank)), k));
            }
        }
    }
    for (int64_t m = 0; m <= M; ++m) {
        std::vector<double> row;
        for (int64_t k = 1; k <= M; ++k) {
            auto pmf = to_eigen(torch::cat(parts[static_cast<size_t>(m)][static_cast<size_t>(k - 1)]));
            row.push_back(posterior_entropy(pmf).mean);
        }
        report.mean.push_back(std::move(row));
    }
    return report;
}

std::string LatentEntropyReport::to_table() const {
    std::ostringstream out;
    out << "Mean posterior entropy (nats), rows = code, columns = classifier\n";
    out << std::left << std::setw(12) << "code";
    for (size_t k = 0; k < attribute_names.size(); ++k) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "C_%s (max %.3f)", attribute_names[k].c_str(), max_entropy[k]);
        out << " | " << std::setw(22) << buf;
    }
    out << "\n";
    for (size_t m = 0; m < mean.size(); ++m) {
        out << std::left << std::setw(12) << (m == 0 ? std::string("z_0") : "z_" + attribute_names[m - 1]);
        for (double v : mean[m]) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.4f", v);
            out << " | " << std::setw(22) << buf;
        }
        out << "\n";
    }
    return out.str();
}

FeatureExtractor classifier_features(const ClassifierBank& bank, const std::string& checkpoint_hash) {
    FeatureExtractor fx;
    fx.name = "classifier-block2-gap:" + checkpoint_hash;
    fx.extract = [bank](const torch::Tensor& images) {
        torch::NoGradGuard no_grad;
        const auto x = images.to(dtype_of(*bank));
        std::vector<torch::Tensor> feats;
        for (int64_t m = 1; m <= bank->size(); ++m) feats.push_back(bank->at(m)->features(x).mean({2, 3}));
        return to_eigen(torch::cat(feats, 1));
    };
    return fx;
}

Eigen::MatrixXd extract_features(const FeatureExtractor& extractor, const torch::Tensor& images, int64_t batch) {
    const auto n = images.size(0);
    if (n == 0) throw ContractError("no images to extract features from");
    std::vector<Eigen::MatrixXd> parts;
    int64_t rows = 0, cols = 0;
    for (int64_t s = 0; s < n; s += batch) {
        parts.push_back(extractor.extract(slice_rows(images, s, std::min(n, s + batch))));
        rows += parts.back().rows();
        cols = parts.back().cols();
    }
    Eigen::MatrixXd out(rows, cols);
    int64_t at = 0;
    for (const auto& p : parts) {
        out.middleRows(at, p.rows()) = p;
        at += p.rows();
    }
    return out;
}

TransferFn model_transfer(const DisentangleModel& model, const TransferProtocol& protocol, const Dataset& reference) {
    check_attribute(model, protocol.attribute);
    const auto m = protocol.attribute;
    const auto dtype = dtype_of(*model);
    if (protocol.source == TransferSource::Donor) {
        return [model, m, dtype](const torch::Tensor& sources, const torch::Tensor& donors, int64_t) {
            torch::NoGradGuard no_grad;
            auto bundle = encode_all(model, sources.to(dtype));
            bundle.codes[static_cast<size_t>(m)] = model->encoder(m)->forward(donors.to(dtype));
            return decode(model, bundle);
        };
    }
    const auto classes = model->schema().at(m - 1).class_count;
    std::vector<torch::Tensor> means;
    for (int64_t k = 0; k < classes; ++k) means.push_back(mean_code(model, reference, m, k));
    return [model, m, dtype, means](const torch::Tensor& sources, const torch::Tensor&, int64_t target) {
        torch::NoGradGuard no_grad;
        auto bundle = encode_all(model, sources.to(dtype));
        const auto& code = means.at(static_cast<size_t>(target));
        bundle.codes[static_cast<size_t>(m)] = code.expand({sources.size(0), -1, -1, -1});
        return decode(model, bundle);
    };
}

TransferResult transfer_accuracy(const Dataset& test, const ClassifierBank* eval, const TransferProtocol& protocol,
                                 const TransferFn& generate) {
    if (eval == nullptr || !*eval) throw ContractError("transfer accuracy needs an evaluation classifier checkpoint");
    const auto& schema = test.schema();
    const auto M = schema.size();
    const auto m = protocol.attribute;
    if (m < 1 || m > M) throw ContractError("transfer attribute index out of range");
    if ((*eval)->size() != M) throw ContractError("evaluation classifiers do not match the dataset schema");
    if (test.empty()) throw ContractError("transfer accuracy over an empty test set");
    const auto classes = schema.at(m - 1).class_count;

    std::mt19937_64 rng(protocol.seed);
    TransferResult result;
    result.attribute = schema.at(m - 1).name;
    std::vector<std::vector<double>> preserved(static_cast<size_t>(M));
    std::vector<torch::Tensor> synthesized;
    torch::NoGradGuard no_grad;
    const auto labels = test.labels();
    for (int64_t k = 0; k < classes; ++k) {
        const auto pool = test.indices_with_label(m - 1, k);
        if (pool.empty()) {
            throw ContractError("test set has no item with " + result.attribute + " class " + std::to_string(k));
        }
        int64_t hit = 0;
        std::vector<int64_t> kept(static_cast<size_t>(M), 0);
        for (int64_t s = 0; s < test.size(); s += protocol.batch) {
            const auto e = std::min(test.size(), s + protocol.batch);
            std::vector<int64_t> donor_idx;
            for (int64_t i = s; i < e; ++i) donor_idx.push_back(pool[rng() % pool.size()]);
            const auto donors = test.images().index_select(0, torch::tensor(donor_idx, torch::kInt64));
            auto out = generate(slice_rows(test.images(), s, e), donors, k).to(torch::kFloat32);
            synthesized.push_back(out);
            const auto x = out.to(dtype_of(**eval));
            const auto src = slice_rows(labels, s, e);
            for (int64_t a = 1; a <= M; ++a) {
                auto pred = image_logits(*eval, x, a).argmax(1);
                if (a == m) {
                    hit += pred.eq(k).sum().item<int64_t>();
                } else {
                    kept[static_cast<size_t>(a - 1)] += pred.eq(src.select(1, a - 1)).sum().item<int64_t>();
                }
            }
        }
        result.per_class_accuracy.push_back(static_cast<double>(hit) / static_cast<double>(test.size()));
        for (int64_t a = 1; a <= M; ++a) {
            if (a != m) {
                preserved[static_cast<size_t>(a - 1)].push_back(static_cast<double>(kept[static_cast<size_t>(a - 1)]) /
                                                               static_cast<double>(test.size()));
            }
        }
    }
    result.target = mean_std(result.per_class_accuracy);
    for (int64_t a = 1; a <= M; ++a) {
        if (a != m) result.preserved[schema.at(a - 1).name] = mean_std(preserved[static_cast<size_t>(a - 1)]);
    }
    result.synthesized = torch::cat(synthesized);
    result.evaluated = result.synthesized.size(0);
    return result;
}

std::string TransferResult::to_table() const {
    std::ostringstream out;
    char buf[96];
    out << "Transfer classification accuracy (" << attribute << ", " << evaluated << " synthesized images)\n";
    std::snprintf(buf, sizeof(buf), "%-16s | %.3f ± %.3f\n", ("target " + attribute).c_str(), target.mean, target.std);
    out << buf;
    for (const auto& [name, v] : preserved) {
        std::snprintf(buf, sizeof(buf), "%-16s | %.3f ± %.3f\n", ("keep " + name).c_str(), v.mean, v.std);
        out << buf;
    }
    return out.str();
}

}  // namespace disent
