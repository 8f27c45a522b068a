#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace disent {

// ---------------------------------------------------------------------------
// Hopkins statistic
// ---------------------------------------------------------------------------

/// One draw of H = sum(u) / (sum(u) + sum(w)). u are nearest-data distances of
/// `probe_count` points sampled uniformly in the data bounding box, w are
/// nearest-other-point distances of `probe_count` data points drawn without
/// replacement. About 0.5 for uniform data, near 1 for clustered data.
double hopkins(const Eigen::MatrixXd& points, int64_t probe_count, std::mt19937_64& rng);

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
    std::vector<double> samples;
};

MeanStd hopkins_repeated(const Eigen::MatrixXd& points, int64_t probe_count, int64_t repetitions,
                         std::mt19937_64& rng);

/// Mean and sample standard deviation.
MeanStd mean_std(std::vector<double> values);

// ---------------------------------------------------------------------------
// Posterior entropy
// ---------------------------------------------------------------------------

struct EntropyResult {
    std::vector<double> per_sample;  // nats
    double mean = 0.0;
};

/// Shannon entropy of each row of a PMF matrix with 0 log 0 = 0.
EntropyResult posterior_entropy(const Eigen::MatrixXd& pmf);

// ---------------------------------------------------------------------------
// Frechet distance
// ---------------------------------------------------------------------------

struct FrechetResult {
    double distance = 0.0;
    std::vector<std::string> warnings;
};

/// ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}) with 1/(N-1)
/// covariances; the trace of the square root comes from the eigenvalues of
/// the symmetric S_a^{1/2} S_b S_a^{1/2}.
FrechetResult frechet(const Eigen::MatrixXd& feats_a, const Eigen::MatrixXd& feats_b);
double frechet_distance(const Eigen::MatrixXd& feats_a, const Eigen::MatrixXd& feats_b);

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

/// Flattened codes with one or more label columns per point.
struct EmbeddingSet {
    Eigen::MatrixXd points;                    // (N, d)
    std::vector<std::string> label_names;      // L names
    std::vector<std::vector<int64_t>> labels;  // N rows of L labels

    int64_t size() const { return points.rows(); }
    int64_t label_column(const std::string& name) const;
    void validate() const;
};

/// Tab-separated: header `label:<name>... f0 f1 ...`, one point per line.
void write_embeddings(const EmbeddingSet& set, const std::filesystem::path& path);
EmbeddingSet read_embeddings(const std::filesystem::path& path);

/// Principal-component projection onto the top `dims` directions.
Eigen::MatrixXd pca_project(const Eigen::MatrixXd& points, int64_t dims);

// ---------------------------------------------------------------------------
// Cluster tendency table
// ---------------------------------------------------------------------------

struct ClusterTendencyOptions {
    double probe_fraction = 0.1;
    int64_t probe_count = 0;  // > 0 overrides probe_fraction
    int64_t repetitions = 20;
    int64_t projection_dims = 2;  // PCA within each cluster before scoring; 0 = raw space
    uint64_t seed = 0;
};

struct ClusterTendencyRow {
    int64_t cluster = 0;
    std::string cluster_name;
    int64_t count = 0;
    MeanStd pooled;     // Hopkins over all points of the cluster
    MeanStd per_label;  // mean of Hopkins computed within each score label
    int64_t labels_scored = 0;
};

struct ClusterTendencyReport {
    std::string cluster_by;
    std::string score_within;
    std::vector<ClusterTendencyRow> rows;
    std::vector<std::string> warnings;

    std::string to_table() const;
};

/// Partitions by `cluster_by` and scores each cluster's Hopkins tendency.
/// Clusters whose size does not exceed the probe count are skipped with a warning.
ClusterTendencyReport cluster_tendency_report(const EmbeddingSet& set, const std::string& cluster_by,
                                              const std::string& score_within,
                                              const ClusterTendencyOptions& options = {},
                                              const std::vector<std::string>& cluster_names = {});

}  // namespace disent
