#include <doctest.h>

#include <fstream>

#include "disent/checkpoint.hpp"
#include "disent/errors.hpp"
#include "disent/training.hpp"
#include "helpers.hpp"

using namespace disent;
using namespace disent::testing;

namespace {

std::vector<torch::Tensor> snapshot(const std::vector<torch::Tensor>& params) {
    std::vector<torch::Tensor> out;
    for (const auto& p : params) out.push_back(p.detach().clone());
    return out;
}

bool same(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b) {
    for (size_t i = 0; i < a.size(); ++i) {
        if (!torch::equal(a[i], b[i])) return false;
    }
    return true;
}

TrainConfig quick_config() {
    TrainConfig c;
    c.batch_size = 4;
    c.steps = 3;
    c.critic_steps_per_gen = 2;
    c.seed = 9;
    c.pretrain.steps = 5;
    c.pretrain.batch_size = 4;
    return c;
}

Dataset tiny_dataset(int64_t n = 12) {
    torch::manual_seed(21);
    const auto schema = schema_of({2, 3});
    return Dataset(schema, random_images(n, 8), random_labels(n, schema), "random");
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("sample_shuffle draws M bijections deterministically") {
    std::mt19937_64 a(5), b(5);
    const auto s = sample_shuffle(16, 3, a);
    const auto t = sample_shuffle(16, 3, b);
    CHECK(s.attribute_count() == 3);
    CHECK(s.batch_size() == 16);
    for (int m = 0; m < 3; ++m) {
        CHECK(torch::equal(std::get<0>(s.permutations[m].sort()), torch::arange(16, torch::kInt64)));
        CHECK(torch::equal(s.permutations[m], t.permutations[m]));
    }
    CHECK(a() == b());
}

TEST_CASE("sample_shuffle refuses a batch of one") {
    std::mt19937_64 rng(0);
    CHECK_THROWS_AS(sample_shuffle(1, 2, rng), ContractError);
    CHECK_NOTHROW(sample_shuffle(2, 2, rng));
}

TEST_CASE("with-replacement shuffles stay in range") {
    std::mt19937_64 rng(3);
    const auto s = sample_shuffle(8, 2, rng, ShuffleMode::WithReplacement);
    for (const auto& r : s.permutations) {
        CHECK(r.min().item<int64_t>() >= 0);
        CHECK(r.max().item<int64_t>() < 8);
    }
}

TEST_CASE("induced labels follow the permutations exhaustively") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        const auto labels = torch::randint(5, {6, 3}, torch::kInt64);
        auto spec = sample_shuffle(6, 3, rng);
        bind_labels(spec, labels);
        for (int64_t i = 0; i < 6; ++i) {
            for (int64_t m = 0; m < 3; ++m) {
                const auto r = spec.permutations[m][i].item<int64_t>();
                REQUIRE(spec.induced_labels[i][m].item<int64_t>() == labels[r][m].item<int64_t>());
            }
        }
    }
}

TEST_CASE("identity shuffle reproduces the reconstruction bitwise") {
    torch::NoGradGuard ng;
    DisentangleModel model(schema_of({2, 3}), tiny_config());
    const auto x = random_images(4, 8);
    const auto bundle = encode_all(model, x);
    auto spec = identity_shuffle(4, 2);
    bind_labels(spec, random_labels(4, model->schema()));
    CHECK(torch::equal(synthesize_shuffled(model, bundle, spec).images, decode(model, bundle)));
}

TEST_CASE("two-sample swap of one attribute") {
    torch::NoGradGuard ng;
    DisentangleModel model(schema_of({2, 3}), tiny_config());
    const auto labels = torch::tensor({{0, 1}, {1, 2}}, torch::kInt64);
    ShuffleSpec spec;
    spec.permutations = {torch::tensor({1, 0}, torch::kInt64), torch::tensor({0, 1}, torch::kInt64)};
    bind_labels(spec, labels);
    CHECK(torch::equal(spec.induced_labels, torch::tensor({{1, 1}, {0, 2}}, torch::kInt64)));
    const auto bundle = encode_all(model, random_images(2, 8));
    CHECK(synthesize_shuffled(model, bundle, spec).images.sizes() == torch::IntArrayRef({2, 3, 8, 8}));
}

TEST_CASE("shuffling by a permutation then gathering by its inverse restores the reconstruction") {
    torch::NoGradGuard ng;
    DisentangleModel model(schema_of({2, 3}), tiny_config());
    model->to(torch::kFloat64);
    const auto x = random_images(5, 8, torch::kFloat64);
    auto bundle = encode_all(model, x);
    const auto sigma = torch::randperm(5, torch::kInt64);
    const auto inverse = torch::argsort(sigma);
    // Permuting every code, z_0 included, by sigma permutes the decoded batch by sigma.
    LatentBundle permuted = bundle;
    permuted.codes[0] = bundle.codes[0].index_select(0, sigma);
    ShuffleSpec spec;
    spec.permutations = {sigma, sigma};
    bind_labels(spec, torch::zeros({5, 2}, torch::kInt64));
    const auto y = synthesize_shuffled(model, permuted, spec).images;
    CHECK(torch::allclose(y.index_select(0, inverse), decode(model, bundle), 0, 1e-12));
    spec.permutations.pop_back();
    CHECK_THROWS_AS(synthesize_shuffled(model, bundle, spec), ShapeError);
}

TEST_CASE("batch index sampling is without replacement") {
    std::mt19937_64 rng(1);
    auto idx = sample_batch_indices(10, 10, rng);
    std::sort(idx.begin(), idx.end());
    for (int64_t i = 0; i < 10; ++i) CHECK(idx[i] == i);
    CHECK_THROWS_AS(sample_batch_indices(3, 4, rng), ContractError);
}

TEST_CASE("zero-step pretraining leaves classifiers unchanged") {
    DisentangleModel model(schema_of({2, 3}), tiny_config());
    auto bank = model->classifiers();
    const auto before = snapshot(bank->parameters());
    PretrainConfig pc;
    pc.steps = 0;
    std::mt19937_64 rng(0);
    const auto report = pretrain_classifiers(bank, tiny_dataset(), pc, rng);
    CHECK(report.steps_run == 0);
    CHECK(same(before, bank->parameters()));
}

TEST_CASE("fresh classifiers sit near chance") {
    torch::manual_seed(8);
    SyntheticConfig sc;
    sc.count_per_combination = 4;
    const auto ds = generate_synthetic(sc);
    DisentangleModel model(ds.schema(), small_config());
    const auto acc = classifier_accuracy(model->classifiers(), ds);
    CHECK(acc[0] < 0.7);  // chance 1/3
    CHECK(acc[1] < 0.5);  // chance 1/6
}

TEST_CASE("shape classifier learns the synthetic shapes") {
    torch::manual_seed(8);
    SyntheticConfig sc;
    sc.count_per_combination = 4;
    const auto ds = generate_synthetic(sc).select_attributes({"shape"});
    DisentangleModel model(ds.schema(), small_config());
    auto bank = model->classifiers();
    PretrainConfig pc;
    pc.steps = 2000;
    pc.eval_every = 25;
    std::mt19937_64 rng(0);
    const auto report = pretrain_classifiers(bank, ds, pc, rng);
    CHECK(report.train_accuracy[0] >= 0.99);
    CHECK(report.steps_run <= 2000);
}

TEST_CASE("frozen mode requires pretrained classifiers") {
    DisentangleModel model(schema_of({2, 3}), tiny_config());
    Trainer trainer(model, quick_config());
    const auto ds = tiny_dataset();
    CHECK_THROWS_AS(trainer.train_step(ds), ContractError);
}

TEST_CASE("update census and frozen classifiers") {
    DisentangleModel model(schema_of({2, 3}), tiny_config());
    auto cfg = quick_config();
    cfg.critic_steps_per_gen = 5;
    Trainer trainer(model, cfg);
    const auto ds = tiny_dataset();
    trainer.pretrain_classifiers(ds);
    const auto cls = snapshot(model->classifier_parameters());

    std::vector<UpdateKind> seen;
    std::vector<bool> critic_changed;
    auto critic_before = snapshot(model->critic_parameters());
    trainer.set_update_observer([&](UpdateKind k) {
        seen.push_back(k);
        if (k == UpdateKind::Critic) {
            critic_changed.push_back(!same(critic_before, model->critic_parameters()));
            critic_before = snapshot(model->critic_parameters());
        }
    });
    const auto gen_before = snapshot(model->generator_parameters());
    trainer.train_step(ds);
    REQUIRE(seen.size() == 6);
    for (int i = 0; i < 5; ++i) CHECK(seen[i] == UpdateKind::Critic);
    CHECK(seen[5] == UpdateKind::Generator);
    for (bool c : critic_changed) CHECK(c);
    CHECK_FALSE(same(gen_before, model->generator_parameters()));
    // The generator update leaves the critic alone.
    CHECK(same(critic_before, model->critic_parameters()));

    trainer.set_update_observer({});
    for (int i = 0; i < 99; ++i) trainer.train_step(ds);
    CHECK(same(cls, model->classifier_parameters()));
    CHECK(trainer.step() == 100);
}

TEST_CASE("joint mode adds one classifier update") {
    DisentangleModel model(schema_of({2, 3}), tiny_config());
    auto cfg = quick_config();
    cfg.classifier_mode = ClassifierMode::Joint;
    Trainer trainer(model, cfg);
    std::vector<UpdateKind> seen;
    trainer.set_update_observer([&](UpdateKind k) { seen.push_back(k); });
    const auto cls = snapshot(model->classifier_parameters());
    const auto report = trainer.train_step(tiny_dataset());
    REQUIRE(seen.size() == 4);
    CHECK(seen.back() == UpdateKind::Classifier);
    CHECK_FALSE(same(cls, model->classifier_parameters()));
    CHECK(report.terms.count(kTermClsReal) == 1);
}

TEST_CASE("supervised autoencoding overfits one batch") {
    torch::manual_seed(12);
    DisentangleModel model(schema_of({2, 3}), tiny_config());
    auto cfg = quick_config();
    cfg.weights.lambda_adv = 0;
    cfg.weights.lambda_gp = 0;
    cfg.critic_steps_per_gen = 0;
    cfg.optimizer.learning_rate = 1e-3;
    Trainer trainer(model, cfg);
    const auto ds = tiny_dataset(4);
    trainer.pretrain_classifiers(ds);
    auto spec = identity_shuffle(4, 2);
    // Adam on an L1 loss jitters step to step; the trend is checked every 10 steps.
    std::vector<double> checkpoints;
    for (int s = 0; s <= 50; ++s) {
        const auto r = trainer.train_step(ds.images(), ds.labels(), spec);
        if (s % 10 == 0) checkpoints.push_back(r.term(kTermRec));
    }
    for (size_t k = 1; k < checkpoints.size(); ++k) CHECK(checkpoints[k] < checkpoints[k - 1]);
}

TEST_CASE("loss report totals match weighted sums") {
    DisentangleModel model(schema_of({2, 3}), tiny_config());
    Trainer trainer(model, quick_config());
    const auto ds = tiny_dataset();
    trainer.pretrain_classifiers(ds);
    const auto r = trainer.train_step(ds);
    const auto& t = r.terms;
    const double lg = t.at(kTermAdv) + t.at(kTermDis) + t.at(kTermClsX) + t.at(kTermClsSynth) + 10 * t.at(kTermRec);
    CHECK(r.generator_total == doctest::Approx(lg).epsilon(1e-6));
    CHECK(r.critic_total == doctest::Approx(t.at(kTermCritic)).epsilon(1e-6));
}

TEST_CASE("zero steps writes the initialization checkpoint") {
    TempDir tmp("zero");
    DisentangleModel model(schema_of({2, 3}), tiny_config());
    auto cfg = quick_config();
    cfg.steps = 0;
    Trainer trainer(model, cfg);
    const auto before = snapshot(model->parameters());
    trainer.train(tiny_dataset(), tmp.path());
    CHECK(std::filesystem::exists(tmp / "checkpoint" / "manifest.json"));
    const auto back = load_model(tmp / "checkpoint");
    CHECK(same(before, back->parameters()));
}

TEST_CASE("resume continues the uninterrupted trajectory") {
    TempDir tmp("resume");
    const auto ds = tiny_dataset();
    auto cfg = quick_config();
    cfg.steps = 4;

    torch::manual_seed(30);
    DisentangleModel a(schema_of({2, 3}), tiny_config());
    Trainer full(a, cfg);
    std::vector<double> straight;
    full.train(ds, tmp / "full", [&](int64_t, const LossReport& r) { straight.push_back(r.generator_total); });

    torch::manual_seed(30);
    DisentangleModel b(schema_of({2, 3}), tiny_config());
    auto half_cfg = cfg;
    half_cfg.steps = 2;
    Trainer first(b, half_cfg);
    std::vector<double> resumed;
    first.train(ds, tmp / "half", [&](int64_t, const LossReport& r) { resumed.push_back(r.generator_total); });
    auto second = Trainer::resume(tmp / "half" / "checkpoint");
    CHECK(second.step() == 2);
    second.set_total_steps(4);
    second.train(ds, tmp / "half", [&](int64_t, const LossReport& r) { resumed.push_back(r.generator_total); });

    REQUIRE(resumed.size() == straight.size());
    for (size_t i = 0; i < straight.size(); ++i) CHECK(resumed[i] == doctest::Approx(straight[i]).epsilon(1e-6));
    std::ifstream log(tmp / "half" / "loss_log.jsonl");
    std::string line;
    int64_t last = 0;
    while (std::getline(log, line)) last = nlohmann::json::parse(line).at("step");
    CHECK(last == 4);
}

TEST_CASE("divergence names the offending term") {
    DisentangleModel model(schema_of({2, 3}), tiny_config());
    Trainer trainer(model, quick_config());
    const auto ds = tiny_dataset();
    trainer.pretrain_classifiers(ds);
    auto x = ds.images().narrow(0, 0, 4).clone();
    x[0][0][0][0] = std::numeric_limits<float>::quiet_NaN();
    auto spec = identity_shuffle(4, 2);
    try {
        trainer.train_step(x, ds.labels().narrow(0, 0, 4), spec);
        FAIL("expected divergence");
    } catch (const DivergenceError& e) {
        CHECK_FALSE(e.term().empty());
    }
}

TEST_CASE("train config validation") {
    TrainConfig c;
    c.batch_size = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.optimizer.beta1 = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    CHECK(train_config_from_json(to_json(c)).batch_size == 16);
}

}  // TEST_SUITE
