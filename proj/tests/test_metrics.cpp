#include <doctest.h>

#include <cmath>
#include <fstream>

#include "disent/errors.hpp"
#include "disent/metrics.hpp"
#include "helpers.hpp"

using namespace disent;
using disent::testing::TempDir;

namespace {

Eigen::MatrixXd uniform_box(int64_t n, int64_t d, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::MatrixXd x(n, d);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) x(i, j) = u(rng);
    return x;
}

Eigen::MatrixXd gaussian(int64_t n, int64_t d, double mean, double sigma, std::mt19937_64& rng) {
    std::normal_distribution<double> g(mean, sigma);
    Eigen::MatrixXd x(n, d);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) x(i, j) = g(rng);
    return x;
}

Eigen::MatrixXd pairwise(const Eigen::MatrixXd& x) {
    Eigen::MatrixXd d(x.rows(), x.rows());
    for (int64_t i = 0; i < x.rows(); ++i)
        for (int64_t j = 0; j < x.rows(); ++j) d(i, j) = (x.row(i) - x.row(j)).norm();
    return d;
}

Eigen::MatrixXd random_rotation(int64_t d, std::mt19937_64& rng) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian(d, d, 0, 1, rng));
    return qr.householderQ();
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("Hopkins on uniform data is near one half") {
    std::mt19937_64 data_rng(1), rng(2);
    const auto x = uniform_box(500, 2, data_rng);
    const auto h = hopkins_repeated(x, 50, 20, rng);
    CHECK(h.samples.size() == 20);
    CHECK(std::abs(h.mean - 0.5) < 0.1);
    for (double s : h.samples) {
        CHECK(s >= 0.0);
        CHECK(s <= 1.0);
    }
}

TEST_CASE("Hopkins on two tight blobs is near one") {
    std::mt19937_64 data_rng(3), rng(4);
    Eigen::MatrixXd x(400, 3);
    x.topRows(200) = gaussian(200, 3, 0.0, 1e-3, data_rng);
    x.bottomRows(200) = gaussian(200, 3, 1.0, 1e-3, data_rng);
    CHECK(hopkins_repeated(x, 40, 10, rng).mean > 0.9);
}

TEST_CASE("Hopkins is invariant to translation and isotropic scaling") {
    std::mt19937_64 data_rng(5);
    const auto x = uniform_box(100, 3, data_rng);
    Eigen::MatrixXd y = (x * 7.5).rowwise() + Eigen::RowVector3d(3, -2, 100);
    std::mt19937_64 r1(9), r2(9);
    CHECK(hopkins(x, 10, r1) == doctest::Approx(hopkins(y, 10, r2)).epsilon(1e-9));
}

TEST_CASE("Hopkins preconditions") {
    std::mt19937_64 rng(0);
    Eigen::MatrixXd same = Eigen::MatrixXd::Ones(10, 2);
    CHECK_THROWS_AS(hopkins(same, 3, rng), UndefinedStatisticError);
    const auto x = uniform_box(10, 2, rng);
    CHECK_THROWS_AS(hopkins(x, 10, rng), ContractError);
    CHECK_THROWS_AS(hopkins(x, 0, rng), ContractError);
    CHECK_THROWS_AS(hopkins_repeated(x, 3, 0, rng), ContractError);
}

TEST_CASE("mean and sample standard deviation") {
    const auto ms = mean_std({1.0, 2.0, 3.0, 4.0});
    CHECK(ms.mean == doctest::Approx(2.5));
    CHECK(ms.std == doctest::Approx(std::sqrt(5.0 / 3.0)));
    CHECK(mean_std({2.0}).std == 0.0);
}

TEST_CASE("posterior entropy closed forms") {
    Eigen::MatrixXd p(3, 4);
    p << 1, 0, 0, 0, 0.25, 0.25, 0.25, 0.25, 0.5, 0.5, 0, 0;
    const auto e = posterior_entropy(p);
    CHECK(e.per_sample[0] == 0.0);
    CHECK(e.per_sample[1] == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    CHECK(e.per_sample[2] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(e.mean == doctest::Approx((std::log(4.0) + std::log(2.0)) / 3));
    const Eigen::MatrixXd u = Eigen::MatrixXd::Constant(1, 147, 1.0 / 147);
    CHECK(posterior_entropy(u).mean == doctest::Approx(4.990).epsilon(1e-3));
}

TEST_CASE("posterior entropy grows along a majorization chain") {
    Eigen::RowVectorXd onehot = Eigen::RowVectorXd::Zero(6);
    onehot(2) = 1;
    const Eigen::RowVectorXd uniform = Eigen::RowVectorXd::Constant(6, 1.0 / 6);
    double previous = -1;
    for (int k = 0; k <= 20; ++k) {
        const double t = k / 20.0;
        Eigen::MatrixXd row = (1 - t) * onehot + t * uniform;
        const double h = posterior_entropy(row).mean;
        CHECK(h >= previous - 1e-15);
        CHECK(h <= std::log(6.0) + 1e-12);
        previous = h;
    }
}

TEST_CASE("posterior entropy rejects non-PMF rows") {
    Eigen::MatrixXd p(1, 3);
    p << 0.5, 0.5, 0.1;
    CHECK_THROWS_AS(posterior_entropy(p), ContractError);
}

TEST_CASE("Frechet distance is zero on identical sets and symmetric") {
    std::mt19937_64 rng(6);
    const auto a = gaussian(200, 5, 0, 1, rng);
    const auto b = gaussian(300, 5, 0.5, 2, rng);
    CHECK(std::abs(frechet_distance(a, a)) < 1e-6);
    CHECK(frechet_distance(a, b) == doctest::Approx(frechet_distance(b, a)).epsilon(1e-8));
}

TEST_CASE("Frechet distance matches the one-dimensional closed form") {
    Eigen::MatrixXd a(4, 1), b(3, 1);
    a << 1, 2, 3, 4;
    b << 0, 5, 10;
    const double va = 5.0 / 3.0, vb = 25.0;
    const double expected = std::pow(2.5 - 5.0, 2) + va + vb - 2 * std::sqrt(va * vb);
    CHECK(frechet_distance(a, b) == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("Frechet distance between shifted Gaussians is the squared shift") {
    std::mt19937_64 rng(7);
    const int64_t n = 100000, d = 8;
    const auto a = gaussian(n, d, 0, 1, rng);
    Eigen::MatrixXd b = gaussian(n, d, 0, 1, rng);
    Eigen::RowVectorXd mu(d);
    for (int64_t j = 0; j < d; ++j) mu(j) = 0.5 + 0.25 * j;
    b.rowwise() += mu;
    const double expected = mu.squaredNorm();
    CHECK(std::abs(frechet_distance(a, b) - expected) / expected < 0.05);
}

TEST_CASE("Frechet distance is invariant under a shared rotation") {
    std::mt19937_64 rng(8);
    const auto a = gaussian(100, 4, 0, 1, rng);
    const auto b = gaussian(120, 4, 1, 0.5, rng);
    const auto q = random_rotation(4, rng);
    CHECK(std::abs(frechet_distance(a, b) - frechet_distance(a * q, b * q)) < 1e-6);
}

TEST_CASE("Frechet distance warns when samples are fewer than dimensions") {
    std::mt19937_64 rng(9);
    const auto r = frechet(gaussian(5, 10, 0, 1, rng), gaussian(5, 10, 0, 1, rng));
    CHECK_FALSE(r.warnings.empty());
    CHECK(r.distance >= 0.0);
    Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(3, 2);
    bad(0, 0) = std::nan("");
    CHECK_THROWS_AS(frechet(bad, bad), ContractError);
}

TEST_CASE("PCA of planar data preserves pairwise distances") {
    std::mt19937_64 rng(10);
    const auto plane = gaussian(40, 2, 0, 1, rng);
    Eigen::MatrixXd basis = random_rotation(6, rng).leftCols(2).transpose();  // (2, 6) orthonormal rows
    Eigen::MatrixXd x = plane * basis;
    x.rowwise() += Eigen::RowVectorXd::LinSpaced(6, -3, 3);
    const auto y = pca_project(x, 2);
    CHECK(y.rows() == 40);
    CHECK(y.cols() == 2);
    CHECK((pairwise(x) - pairwise(y)).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("PCA works when dimensions exceed points") {
    std::mt19937_64 rng(11);
    const auto plane = gaussian(10, 2, 0, 1, rng);
    Eigen::MatrixXd basis = random_rotation(50, rng).leftCols(2).transpose();
    const Eigen::MatrixXd x = plane * basis;
    CHECK((pairwise(x) - pairwise(pca_project(x, 2))).cwiseAbs().maxCoeff() < 1e-6);
    CHECK_THROWS_AS(pca_project(x, 51), ContractError);
}

TEST_CASE("embeddings round-trip through the columnar file") {
    TempDir tmp("emb");
    std::mt19937_64 rng(12);
    EmbeddingSet set;
    set.points = gaussian(5, 3, 0, 1, rng);
    set.label_names = {"shape", "hue"};
    set.labels = {{0, 1}, {2, 5}, {1, 0}, {0, 0}, {2, 3}};
    write_embeddings(set, tmp / "e.tsv");
    const auto back = read_embeddings(tmp / "e.tsv");
    CHECK(back.label_names == set.label_names);
    CHECK(back.labels == set.labels);
    CHECK(back.points == set.points);
    std::ifstream in(tmp / "e.tsv");
    std::string header;
    std::getline(in, header);
    CHECK(header.rfind("label:shape\tlabel:hue\tf0", 0) == 0);
}

TEST_CASE("cluster tendency: scattered score labels give Hopkins near one half") {
    std::mt19937_64 rng(13);
    EmbeddingSet set;
    set.label_names = {"cluster", "score"};
    set.points.resize(600, 2);
    for (int c = 0; c < 3; ++c) {
        const auto block = uniform_box(200, 2, rng);
        for (int i = 0; i < 200; ++i) {
            set.points.row(c * 200 + i) = block.row(i) + Eigen::RowVector2d(10.0 * c, 0);
            set.labels.push_back({c, static_cast<int64_t>(rng() % 4)});
        }
    }
    ClusterTendencyOptions opt;
    opt.seed = 1;
    const auto report = cluster_tendency_report(set, "cluster", "score", opt);
    REQUIRE(report.rows.size() == 3);
    for (const auto& row : report.rows) {
        CHECK(std::abs(row.pooled.mean - 0.5) < 0.1);
        CHECK(std::abs(row.per_label.mean - 0.5) < 0.1);
        CHECK(row.labels_scored == 4);
    }
    CHECK(report.to_table().find("Mean Hopkins Statistic (per score label)") != std::string::npos);
}

TEST_CASE("cluster tendency: score sub-clusters give Hopkins above 0.75") {
    std::mt19937_64 rng(14);
    std::normal_distribution<double> g(0, 0.02);
    EmbeddingSet set;
    set.label_names = {"cluster", "score"};
    set.points.resize(480, 5);
    int64_t i = 0;
    for (int c = 0; c < 2; ++c) {
        for (int s = 0; s < 4; ++s) {
            Eigen::RowVectorXd centre = uniform_box(1, 5, rng).row(0) * 4;
            for (int k = 0; k < 60; ++k, ++i) {
                for (int j = 0; j < 5; ++j) set.points(i, j) = centre(j) + g(rng) + 20.0 * c;
                set.labels.push_back({c, s});
            }
        }
    }
    ClusterTendencyOptions opt;
    opt.seed = 2;
    const auto report = cluster_tendency_report(set, "cluster", "score", opt, {"left", "right"});
    REQUIRE(report.rows.size() == 2);
    CHECK(report.rows[0].cluster_name == "left");
    for (const auto& row : report.rows) CHECK(row.pooled.mean > 0.75);
}

TEST_CASE("cluster tendency skips clusters that are too small") {
    EmbeddingSet set;
    set.label_names = {"cluster", "score"};
    set.points = Eigen::MatrixXd::Random(3, 2);
    set.labels = {{0, 0}, {0, 1}, {0, 0}};
    ClusterTendencyOptions opt;
    opt.probe_count = 5;
    const auto report = cluster_tendency_report(set, "cluster", "score", opt);
    CHECK(report.rows.empty());
    CHECK(report.warnings.size() == 1);
    CHECK_THROWS_AS(cluster_tendency_report(set, "cluster", "missing", opt), ContractError);
}

}  // TEST_SUITE
