#include "disent/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "disent/errors.hpp"

namespace disent {

namespace {

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double nearest_distance(const Eigen::MatrixXd& points, const Eigen::RowVectorXd& q, int64_t exclude) {
    double best = std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < points.rows(); ++j) {
        if (j == exclude) continue;
        best = std::min(best, (points.row(j) - q).squaredNorm());
    }
    return std::sqrt(best);
}

}  // namespace

double hopkins(const Eigen::MatrixXd& points, int64_t probe_count, std::mt19937_64& rng) {
    const int64_t n = points.rows(), d = points.cols();
    if (d < 1) throw ContractError("Hopkins statistic needs d >= 1");
    if (probe_count < 1 || probe_count >= n) {
        throw ContractError("Hopkins statistic needs N > probe_count >= 1 (N=" + std::to_string(n) +
                            ", probes=" + std::to_string(probe_count) + ")");
    }
    if (!points.allFinite()) throw ContractError("Hopkins statistic input contains non-finite values");
    const Eigen::RowVectorXd lo = points.colwise().minCoeff();
    const Eigen::RowVectorXd hi = points.colwise().maxCoeff();
    const Eigen::RowVectorXd range = hi - lo;
    if (range.maxCoeff() <= 0.0) throw UndefinedStatisticError("Hopkins statistic undefined: all points coincide");

    double sum_u = 0.0, sum_w = 0.0;
    Eigen::RowVectorXd probe(d);
    for (int64_t i = 0; i < probe_count; ++i) {
        for (int64_t k = 0; k < d; ++k) probe(k) = lo(k) + uniform01(rng) * range(k);
        sum_u += nearest_distance(points, probe, -1);
    }
    // Partial Fisher-Yates draw of distinct data points.
    std::vector<int64_t> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    for (int64_t i = 0; i < probe_count; ++i) {
        const auto j = i + static_cast<int64_t>(rng() % static_cast<uint64_t>(n - i));
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
        const auto p = idx[static_cast<size_t>(i)];
        sum_w += nearest_distance(points, points.row(p), p);
    }
    if (sum_u + sum_w <= 0.0) throw UndefinedStatisticError("Hopkins statistic undefined: zero distances");
    return sum_u / (sum_u + sum_w);
}

MeanStd mean_std(std::vector<double> values) {
    MeanStd out;
    out.samples = std::move(values);
    if (out.samples.empty()) return out;
    out.mean = std::accumulate(out.samples.begin(), out.samples.end(), 0.0) / out.samples.size();
    if (out.samples.size() > 1) {
        double ss = 0.0;
        for (double v : out.samples) ss += (v - out.mean) * (v - out.mean);
        out.std = std::sqrt(ss / static_cast<double>(out.samples.size() - 1));
    }
    return out;
}

MeanStd hopkins_repeated(const Eigen::MatrixXd& points, int64_t probe_count, int64_t repetitions,
                         std::mt19937_64& rng) {
    if (repetitions < 1) throw ContractError("Hopkins repetitions must be >= 1");
    std::vector<double> values;
    for (int64_t r = 0; r < repetitions; ++r) values.push_back(hopkins(points, probe_count, rng));
    return mean_std(std::move(values));
}

EntropyResult posterior_entropy(const Eigen::MatrixXd& pmf) {
    EntropyResult out;
    for (int64_t i = 0; i < pmf.rows(); ++i) {
        const double s = pmf.row(i).sum();
        if (!(s >= 1.0 - 1e-4 && s <= 1.0 + 1e-4)) {
            throw ContractError("row " + std::to_string(i) + " is not a PMF (sums to " + std::to_string(s) + ")");
        }
        double h = 0.0;
        for (int64_t k = 0; k < pmf.cols(); ++k) {
            const double p = pmf(i, k);
            if (p < -1e-5) throw ContractError("row " + std::to_string(i) + " has a negative probability");
            if (p > 0.0) h -= p * std::log(p);
        }
        out.per_sample.push_back(h);
    }
    if (!out.per_sample.empty()) {
        out.mean = std::accumulate(out.per_sample.begin(), out.per_sample.end(), 0.0) / out.per_sample.size();
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

Eigen::MatrixXd covariance(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& mean) {
    const Eigen::MatrixXd centered = x.rowwise() - mean;
    return (centered.adjoint() * centered) / static_cast<double>(x.rows() - 1);
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& s) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
    Eigen::VectorXd vals = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().adjoint();
}

}  // namespace

FrechetResult frechet(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.cols() != b.cols()) throw ContractError("feature sets differ in dimension");
    if (a.rows() < 2 || b.rows() < 2) throw ContractError("Frechet distance needs at least 2 samples per set");
    if (!a.allFinite() || !b.allFinite()) throw ContractError("feature sets contain non-finite values");
    FrechetResult out;
    const int64_t d = a.cols();
    if (a.rows() <= d || b.rows() <= d) {
        out.warnings.push_back("fewer samples than feature dimensions; covariance estimates are rank deficient");
    }
    const Eigen::RowVectorXd mu_a = a.colwise().mean(), mu_b = b.colwise().mean();
    const Eigen::MatrixXd sa = covariance(a, mu_a), sb = covariance(b, mu_b);
    const Eigen::MatrixXd root_a = psd_sqrt(sa);
    Eigen::MatrixXd inner = root_a * sb * root_a;
    inner = 0.5 * (inner + inner.adjoint());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(inner, Eigen::EigenvaluesOnly);
    const auto& vals = eig.eigenvalues();
    const double top = std::max(vals.maxCoeff(), 0.0);
    double trace_root = 0.0;
    for (int64_t i = 0; i < vals.size(); ++i) {
        double v = vals(i);
        if (v < 0.0) {
            if (v < -1e-8 * top) out.warnings.push_back("clamped a negative eigenvalue " + std::to_string(v));
            v = 0.0;
        }
        trace_root += std::sqrt(v);
    }
    out.distance = (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * trace_root;
    out.distance = std::max(out.distance, 0.0);
    return out;
}

double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return frechet(a, b).distance; }

// ---------------------------------------------------------------------------

int64_t EmbeddingSet::label_column(const std::string& name) const {
    for (size_t i = 0; i < label_names.size(); ++i) {
        if (label_names[i] == name) return static_cast<int64_t>(i);
    }
    throw ContractError("embedding set has no label column '" + name + "'");
}

void EmbeddingSet::validate() const {
    if (points.rows() < 1) throw ContractError("embedding set is empty");
    if (!points.allFinite()) throw ContractError("embedding set contains non-finite values");
    if (static_cast<int64_t>(labels.size()) != points.rows()) throw ContractError("label rows != point rows");
    for (const auto& row : labels) {
        if (row.size() != label_names.size()) throw ContractError("label row width != label column count");
    }
}

void write_embeddings(const EmbeddingSet& set, const std::filesystem::path& path) {
    set.validate();
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    bool first = true;
    for (const auto& n : set.label_names) {
        out << (first ? "" : "\t") << "label:" << n;
        first = false;
    }
    for (int64_t k = 0; k < set.points.cols(); ++k) out << (first ? "" : "\t") << "f" << k, first = false;
    out << "\n";
    char buf[32];
    for (int64_t i = 0; i < set.size(); ++i) {
        first = true;
        for (auto l : set.labels[static_cast<size_t>(i)]) {
            out << (first ? "" : "\t") << l;
            first = false;
        }
        for (int64_t k = 0; k < set.points.cols(); ++k) {
            std::snprintf(buf, sizeof(buf), "%.17g", set.points(i, k));
            out << (first ? "" : "\t") << buf;
            first = false;
        }
        out << "\n";
    }
}

EmbeddingSet read_embeddings(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read embeddings " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw Error("embedding file " + path.string() + " is empty");
    EmbeddingSet set;
    int64_t features = 0;
    {
        std::istringstream header(line);
        std::string col;
        while (std::getline(header, col, '\t')) {
            if (col.rfind("label:", 0) == 0) {
                set.label_names.push_back(col.substr(6));
            } else {
                ++features;
            }
        }
    }
    std::vector<std::vector<double>> rows;
    const size_t L = set.label_names.size();
    int64_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string field;
        std::vector<int64_t> labels;
        std::vector<double> feats;
        while (std::getline(ss, field, '\t')) {
            if (labels.size() < L) {
                labels.push_back(std::stoll(field));
            } else {
                feats.push_back(std::strtod(field.c_str(), nullptr));
            }
        }
        if (static_cast<int64_t>(feats.size()) != features) {
            throw Error("embedding line " + std::to_string(line_no) + " has " + std::to_string(feats.size()) +
                        " features, header declares " + std::to_string(features));
        }
        set.labels.push_back(std::move(labels));
        rows.push_back(std::move(feats));
    }
    set.points.resize(static_cast<int64_t>(rows.size()), features);
    for (size_t i = 0; i < rows.size(); ++i) {
        for (int64_t k = 0; k < features; ++k) set.points(static_cast<int64_t>(i), k) = rows[i][static_cast<size_t>(k)];
    }
    return set;
}

Eigen::MatrixXd pca_project(const Eigen::MatrixXd& points, int64_t dims) {
    const int64_t n = points.rows(), d = points.cols();
    if (dims < 1 || dims > d) throw ContractError("PCA target dimension must lie in [1, d]");
    if (n < 2) throw ContractError("PCA needs at least 2 points");
    const Eigen::MatrixXd centered = points.rowwise() - points.colwise().mean();
    Eigen::MatrixXd projected(n, dims);
    if (d > n) {
        // Gram-matrix route: eigenvectors of X X^T scaled by sqrt(lambda).
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(centered * centered.adjoint());
        for (int64_t k = 0; k < dims; ++k) {
            const int64_t col = n - 1 - k;
            const double lambda = std::max(eig.eigenvalues()(col), 0.0);
            projected.col(k) = eig.eigenvectors().col(col) * std::sqrt(lambda);
        }
    } else {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(centered.adjoint() * centered);
        for (int64_t k = 0; k < dims; ++k) projected.col(k) = centered * eig.eigenvectors().col(d - 1 - k);
    }
    // Deterministic sign: the largest-magnitude coordinate of each component is positive.
    for (int64_t k = 0; k < dims; ++k) {
        Eigen::Index at = 0;
        projected.col(k).cwiseAbs().maxCoeff(&at);
        if (projected(at, k) < 0) projected.col(k) *= -1.0;
    }
    return projected;
}

// ---------------------------------------------------------------------------

namespace {

int64_t probes_for(int64_t n, const ClusterTendencyOptions& o) {
    if (o.probe_count > 0) return o.probe_count;
    return std::max<int64_t>(1, static_cast<int64_t>(std::lround(o.probe_fraction * static_cast<double>(n))));
}

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& m, const std::vector<int64_t>& idx) {
    Eigen::MatrixXd out(static_cast<int64_t>(idx.size()), m.cols());
    for (size_t i = 0; i < idx.size(); ++i) out.row(static_cast<int64_t>(i)) = m.row(idx[i]);
    return out;
}

std::string fmt_ms(const MeanStd& v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f ± %.2f", v.mean, v.std);
    return buf;
}

}  // namespace

ClusterTendencyReport cluster_tendency_report(const EmbeddingSet& set, const std::string& cluster_by,
                                              const std::string& score_within, const ClusterTendencyOptions& options,
                                              const std::vector<std::string>& cluster_names) {
    set.validate();
    const auto ccol = set.label_column(cluster_by);
    const auto scol = set.label_column(score_within);
    ClusterTendencyReport report;
    report.cluster_by = cluster_by;
    report.score_within = score_within;

    std::map<int64_t, std::vector<int64_t>> clusters;
    for (int64_t i = 0; i < set.size(); ++i) clusters[set.labels[static_cast<size_t>(i)][static_cast<size_t>(ccol)]].push_back(i);

    std::mt19937_64 rng(options.seed);
    for (const auto& [cluster, members] : clusters) {
        const auto n = static_cast<int64_t>(members.size());
        const std::string name = cluster < static_cast<int64_t>(cluster_names.size())
                                     ? cluster_names[static_cast<size_t>(cluster)]
                                     : std::to_string(cluster);
        const auto probes = probes_for(n, options);
        if (n <= probes || n < 3) {
            report.warnings.push_back("cluster '" + name + "' has " + std::to_string(n) +
                                      " points, not more than the probe count " + std::to_string(probes) +
                                      "; skipped");
            continue;
        }
        Eigen::MatrixXd pts = rows_of(set.points, members);
        if (options.projection_dims > 0 && options.projection_dims < pts.cols()) {
            pts = pca_project(pts, options.projection_dims);
        }
        ClusterTendencyRow row;
        row.cluster = cluster;
        row.cluster_name = name;
        row.count = n;
        try {
            row.pooled = hopkins_repeated(pts, probes, options.repetitions, rng);
        } catch (const UndefinedStatisticError& e) {
            report.warnings.push_back("cluster '" + name + "': " + e.what());
            continue;
        }

        std::map<int64_t, std::vector<int64_t>> by_label;
        for (int64_t i = 0; i < n; ++i) {
            by_label[set.labels[static_cast<size_t>(members[static_cast<size_t>(i)])][static_cast<size_t>(scol)]]
                .push_back(i);
        }
        std::vector<double> label_means;
        for (const auto& [label, local] : by_label) {
            const auto ln = static_cast<int64_t>(local.size());
            const auto lp = probes_for(ln, options);
            if (ln <= lp || ln < 3) continue;
            try {
                label_means.push_back(hopkins_repeated(rows_of(pts, local), lp, options.repetitions, rng).mean);
            } catch (const UndefinedStatisticError&) {
            }
        }
        row.labels_scored = static_cast<int64_t>(label_means.size());
        row.per_label = mean_std(std::move(label_means));
        report.rows.push_back(std::move(row));
    }
    return report;
}

std::string ClusterTendencyReport::to_table() const {
    std::ostringstream out;
    out << "Mean Hopkins Statistic (per " << score_within << " label)\n";
    out << std::left << std::setw(16) << (cluster_by + " cluster") << " | " << std::setw(6) << "n"
        << " | " << std::setw(14) << "pooled"
        << " | per-" << score_within << "-label\n";
    for (const auto& r : rows) {
        out << std::left << std::setw(16) << r.cluster_name << " | " << std::setw(6) << r.count << " | "
            << std::setw(14) << fmt_ms(r.pooled) << " | " << fmt_ms(r.per_label) << "\n";
    }
    for (const auto& w : warnings) out << "warning: " << w << "\n";
    return out.str();
}

}  // namespace disent
