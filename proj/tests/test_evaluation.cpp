#include <doctest.h>

#include "disent/errors.hpp"
#include "disent/evaluation.hpp"
#include "disent/latent_ops.hpp"
#include "disent/training.hpp"
#include "helpers.hpp"

using namespace disent;
using namespace disent::testing;

namespace {

Dataset small_synthetic() {
    SyntheticConfig sc;
    sc.count_per_combination = 1;
    return generate_synthetic(sc).select_attributes({"shape", "hue"});
}

// Classifiers that fit the small synthetic set perfectly.
ClassifierBank fitted_bank(const Dataset& ds) {
    torch::manual_seed(40);
    ClassifierBank bank(small_config(), ds.schema().class_counts());
    PretrainConfig pc;
    pc.steps = 3000;
    pc.target_accuracy = 1.0;
    pc.eval_every = 25;
    pc.batch_size = 18;
    std::mt19937_64 rng(1);
    pretrain_classifiers(bank, ds, pc, rng);
    return bank;
}

}  // namespace

TEST_SUITE("evaluation") {

TEST_CASE("to_eigen keeps row-major order") {
    const auto t = torch::arange(6, torch::kFloat32).reshape({2, 3});
    const auto m = to_eigen(t);
    CHECK(m.rows() == 2);
    CHECK(m(0, 2) == 2.0);
    CHECK(m(1, 0) == 3.0);
    CHECK(to_eigen(torch::zeros({4, 2, 3, 3})).cols() == 18);
}

TEST_CASE("embeddings flatten 8x8x128 codes to 8192 columns") {
    ModelConfig c;
    c.decoder_blocks = 1;
    SyntheticConfig sc;
    sc.count_per_combination = 1;
    sc.brightness_classes = 1;
    const auto ds = generate_synthetic(sc).subset({0, 1, 2, 3, 4});
    DisentangleModel model(ds.schema(), c);
    const auto set = collect_embeddings(model, ds, 1);
    CHECK(set.points.rows() == 5);
    CHECK(set.points.cols() == 8192);
    CHECK(set.label_names == std::vector<std::string>{"shape", "hue"});
    CHECK_THROWS_AS(collect_embeddings(model, ds, 3), ContractError);
}

TEST_CASE("export writes embeddings and projection whose labels round-trip") {
    TempDir tmp("export");
    const auto ds = small_synthetic();
    DisentangleModel model(ds.schema(), small_config());
    const auto out = export_embeddings(model, ds, 2, tmp / "emb");
    const auto emb = read_embeddings(out.embeddings);
    const auto pca = read_embeddings(out.projection);
    CHECK(emb.labels == out.set.labels);
    CHECK(pca.labels == out.set.labels);
    CHECK(pca.points.cols() == 2);
    CHECK(emb.points.rows() == ds.size());
    CHECK((emb.points - out.set.points).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("latent entropy report at uniform heads is ln K everywhere") {
    const auto schema = schema_of({3, 6});
    DisentangleModel model(schema, tiny_config());
    {
        torch::NoGradGuard ng;
        for (int64_t m = 1; m <= 2; ++m)
            for (auto& kv : model->classifiers()->at(m)->named_parameters())
                if (kv.key().rfind("logits.", 0) == 0) kv.value().zero_();
    }
    Dataset ds(schema, random_images(7, 8), random_labels(7, schema), "r");
    const auto r = latent_posterior_entropy(model, model->classifiers(), ds, 3);
    REQUIRE(r.mean.size() == 3);
    for (int64_t code = 0; code <= 2; ++code) {
        CHECK(r.at(code, 1) == doctest::Approx(std::log(3.0)).epsilon(1e-6));
        CHECK(r.at(code, 2) == doctest::Approx(std::log(6.0)).epsilon(1e-6));
    }
    CHECK(r.to_table().find("z_a2") != std::string::npos);
}

TEST_CASE("classifier features are stamped and deterministic") {
    const auto schema = schema_of({3, 6});
    ClassifierBank bank(small_config(), schema.class_counts());
    const auto fx = classifier_features(bank, "abc");
    CHECK(fx.name == "classifier-block2-gap:abc");
    const auto x = random_images(5, 32);
    const auto f = extract_features(fx, x, 2);
    CHECK(f.rows() == 5);
    CHECK(f.cols() == 16);
    CHECK((f - extract_features(fx, x, 5)).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("transfer accuracy needs evaluation classifiers") {
    const auto ds = small_synthetic();
    TransferFn copy = [](const torch::Tensor&, const torch::Tensor& donors, int64_t) { return donors; };
    CHECK_THROWS_AS(transfer_accuracy(ds, nullptr, {2, TransferSource::Donor, 0, 16}, copy), ContractError);
}

TEST_CASE("transfer accuracy bounds with an oracle and a constant generator") {
    const auto ds = small_synthetic();
    const auto bank = fitted_bank(ds);
    const auto own = classifier_accuracy(bank, ds);
    REQUIRE(own[1] == 1.0);

    SUBCASE("copying the donor reproduces the classifier's own accuracy") {
        TransferFn copy = [](const torch::Tensor&, const torch::Tensor& donors, int64_t) { return donors; };
        const auto r = transfer_accuracy(ds, &bank, {2, TransferSource::Donor, 3, 16}, copy);
        CHECK(r.target.mean == doctest::Approx(own[1]));
        CHECK(r.per_class_accuracy.size() == 6);
        CHECK(r.evaluated == 6 * ds.size());
        CHECK(r.preserved.count("shape") == 1);
        CHECK(r.to_table().find("target hue") != std::string::npos);
    }
    SUBCASE("an output that ignores the target class scores chance on average") {
        torch::manual_seed(5);
        const auto noise = random_images(ds.size(), 32);
        TransferFn fixed = [&](const torch::Tensor& sources, const torch::Tensor&, int64_t) {
            return noise.narrow(0, 0, sources.size(0));
        };
        const auto r = transfer_accuracy(ds, &bank, {2, TransferSource::Donor, 3, ds.size()}, fixed);
        CHECK(r.target.mean == doctest::Approx(1.0 / 6.0).epsilon(1e-9));
    }
}

TEST_CASE("model transfer by donor matches swap, by mean code matches decode_with_code") {
    const auto ds = small_synthetic();
    DisentangleModel model(ds.schema(), small_config());
    const auto x = ds.images().narrow(0, 0, 2);
    const auto d = ds.images().narrow(0, 2, 2);
    const auto by_donor = model_transfer(model, {2, TransferSource::Donor, 0, 16}, ds)(x, d, 0);
    CHECK(torch::allclose(by_donor[1], swap(model, {x[1], {{2, d[1]}}, {2}}), 0, 1e-5));
    const auto by_mean = model_transfer(model, {2, TransferSource::MeanCode, 0, 16}, ds)(x, d, 4);
    CHECK(torch::allclose(by_mean[0], decode_with_code(model, x[0], 2, mean_code(model, ds, 2, 4)), 0, 1e-5));
}

}  // TEST_SUITE
