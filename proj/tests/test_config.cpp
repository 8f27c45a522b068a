#include <doctest.h>

#include <fstream>

#include "disent/config.hpp"
#include "disent/errors.hpp"
#include "helpers.hpp"

using namespace disent;
using disent::testing::TempDir;

namespace {

bool mentions(const std::vector<std::string>& errors, const std::string& needle) {
    for (const auto& e : errors)
        if (e.find(needle) != std::string::npos) return true;
    return false;
}

}  // namespace

TEST_SUITE("config") {

TEST_CASE("empty config resolves to the defaults") {
    const auto p = parse_run_config("");
    REQUIRE(p.ok());
    const auto& c = p.config;
    CHECK(c.train.weights.lambda_rec == 10.0);
    CHECK(c.train.weights.lambda_gp == 10.0);
    CHECK(c.train.weights.lambda_dis == 1.0);
    CHECK(c.train.batch_size == 16);
    CHECK(c.train.critic_steps_per_gen == 5);
    CHECK(c.train.optimizer.learning_rate == 1e-4);
    CHECK(c.train.optimizer.beta1 == 0.5);
    CHECK(c.train.optimizer.beta2 == 0.999);
    CHECK(c.train.classifier_mode == ClassifierMode::PretrainFrozen);
    CHECK(c.model.encoder_widths[2] == 128);
    CHECK(c.data.source == "synthetic");
    CHECK(to_yaml(c).find("lambda_rec: 10") != std::string::npos);
    CHECK(load_run_config("").train.batch_size == 16);
}

TEST_CASE("problems are collected, not stopped at the first") {
    const auto p = parse_run_config("loss_weights:\n  lambda_dis: -1\nschedule:\n  batch_size: 1\n");
    CHECK_FALSE(p.ok());
    CHECK(mentions(p.errors, "lambda_dis"));
    CHECK(mentions(p.errors, "shuffling"));
    for (const auto& e : p.errors) CHECK(e.back() != ':');
}

TEST_CASE("unknown keys, bad types and bad choices are errors") {
    auto p = parse_run_config("model:\n  widths: [1, 2]\n");
    CHECK(mentions(p.errors, "model.widths: unknown key"));
    p = parse_run_config("schedule:\n  steps: many\n");
    CHECK(mentions(p.errors, "schedule.steps"));
    p = parse_run_config("schedule:\n  classifier_mode: sometimes\n");
    CHECK(mentions(p.errors, "pretrain_frozen"));
    p = parse_run_config("bogus: 1\n");
    CHECK(mentions(p.errors, "bogus"));
    p = parse_run_config("model:\n  encoder_widths: [4, 4]\n");
    CHECK_FALSE(p.ok());
}

TEST_CASE("overrides win over the file and parse as YAML") {
    const auto p = parse_run_config("schedule:\n  steps: 10\n",
                                    {"schedule.steps=20", "data.attributes=[shape, hue]", "loss_weights.lambda_dis=0"});
    REQUIRE(p.ok());
    CHECK(p.config.train.steps == 20);
    CHECK(p.config.data.attributes == std::vector<std::string>{"shape", "hue"});
    CHECK(p.config.train.weights.lambda_dis == 0.0);
    CHECK_FALSE(parse_run_config("", {"nonsense"}).ok());
    CHECK_FALSE(parse_run_config("", {"schedule.nope=1"}).ok());
}

TEST_CASE("resolved YAML parses back to the same config") {
    TempDir tmp("cfg");
    auto c = parse_run_config("", {"schedule.steps=7", "data.holdout={attribute: shape, values: [1]}",
                                   "evaluation.hopkins.repetitions=5"});
    REQUIRE(c.ok());
    write_resolved_config(c.config, tmp / "r.yaml");
    const auto back = load_run_config(tmp / "r.yaml");
    CHECK(back.train.steps == 7);
    REQUIRE(back.data.holdout.has_value());
    CHECK(back.data.holdout->attribute == "shape");
    CHECK(back.evaluation.hopkins.repetitions == 5);
    CHECK(to_yaml(back) == to_yaml(c.config));
}

TEST_CASE("the shipped reference config is valid") {
    const auto c = load_run_config(std::filesystem::path(DISENT_SOURCE_DIR) / "configs" / "reference.yaml");
    CHECK(c.model.norm_eps == 1e-5);
    CHECK(c.train.optimizer.learning_rate == 1e-4);
    CHECK(c.data.attributes == std::vector<std::string>{"shape", "hue"});
    CHECK(to_yaml(c).find("target_accuracy: 0.99\n") != std::string::npos);
}

TEST_CASE("load_run_config throws with every problem") {
    TempDir tmp("cfgbad");
    std::ofstream(tmp / "bad.yaml") << "schedule:\n  batch_size: 1\n  steps: -3\n";
    try {
        load_run_config(tmp / "bad.yaml");
        FAIL("expected a config error");
    } catch (const ConfigError& e) {
        const std::string what = e.what();
        CHECK(what.find("batch_size") != std::string::npos);
        CHECK(what.find("steps") != std::string::npos);
    }
    CHECK_THROWS_AS(load_run_config(tmp / "missing.yaml"), ConfigError);
}

TEST_CASE("synthetic data splits use a separate test draw") {
    DataConfig d;
    d.synthetic.count_per_combination = 2;
    d.attributes = {"shape", "hue"};
    const auto s = load_data(d);
    CHECK(s.train.size() == 3 * 6 * 3 * 2);
    CHECK(s.test.size() == 3 * 6 * 3 * 3);
    CHECK(s.train.schema().size() == 2);
    CHECK(s.test.schema() == s.train.schema());
}

TEST_CASE("holdout splits replace the separate test draw") {
    DataConfig d;
    d.holdout = HoldoutConfig{"shape", {1}};
    const auto s = load_data(d);
    CHECK(s.test.size() == 180);
    CHECK(s.train.size() == 360);
}

TEST_CASE("unknown attribute selections are config errors") {
    DataConfig d;
    d.synthetic.count_per_combination = 1;
    d.attributes = {"colour"};
    CHECK_THROWS_AS(load_data(d), ConfigError);
}

TEST_CASE("manifest data with a test manifest shares the train mapping") {
    TempDir tmp("cfgman");
    SyntheticConfig sc;
    sc.count_per_combination = 1;
    const auto ds = generate_synthetic(sc);
    export_manifest(ds, tmp / "train");
    export_manifest(ds.subset({0, 1, 2}), tmp / "test");
    DataConfig d;
    d.source = "manifest";
    d.manifest = (tmp / "train" / "manifest.csv").string();
    d.test_manifest = (tmp / "test" / "manifest.csv").string();
    const auto s = load_data(d);
    CHECK(s.train.size() == ds.size());
    CHECK(s.test.size() == 3);
    CHECK(s.test.schema() == s.train.schema());
}

}  // TEST_SUITE
