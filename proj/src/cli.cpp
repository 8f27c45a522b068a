#include "disent/cli.hpp"

#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include "disent/checkpoint.hpp"
#include "disent/config.hpp"
#include "disent/errors.hpp"
#include "disent/evaluation.hpp"
#include "disent/image_io.hpp"
#include "disent/latent_ops.hpp"
#include "disent/service.hpp"
#include "disent/training.hpp"

namespace disent {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
    std::string config;
    std::vector<std::string> sets;
    std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool needs_out = true) {
    cmd->add_option("-c,--config", c.config, "YAML run config (defaults apply for missing keys)");
    cmd->add_option("--set", c.sets, "Override a config key, e.g. --set schedule.steps=100")->allow_extra_args(false);
    auto* out = cmd->add_option("-o,--out", c.out, "Output directory");
    if (needs_out) out->required();
}

/// The run config for a command. With no --config, a checkpoint's run
/// directory snapshot is reused so evaluation sees the training data setup.
RunConfig resolve_config(const Common& c, const std::string& checkpoint = {}) {
    fs::path path = c.config;
    if (path.empty() && !checkpoint.empty()) {
        const auto snapshot = fs::path(checkpoint).parent_path() / "resolved_config.yaml";
        if (fs::exists(snapshot)) path = snapshot;
    }
    return load_run_config(path, c.sets);
}

void write_json(const json& j, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

void finish(const fs::path& out_dir, const RunConfig& config, const std::string& command, json result) {
    fs::create_directories(out_dir);
    write_resolved_config(config, out_dir / "resolved_config.yaml");
    result["command"] = command;
    write_json(result, out_dir / "result.json");
}

json to_json(const MeanStd& v) { return {{"mean", v.mean}, {"std", v.std}}; }

Dataset pick_split(const DataSplits& splits, const std::string& name) {
    if (name == "train") return splits.train;
    if (name == "test") {
        if (splits.test.empty()) throw ConfigError("the config defines no test split");
        return splits.test;
    }
    throw ConfigError("split must be 'train' or 'test' (got '" + name + "')");
}

/// Restricts `data` to the model's attributes so label columns line up.
Dataset align(const Dataset& data, const DisentangleModel& model) {
    if (data.schema() == model->schema()) return data;
    std::vector<std::string> names;
    for (const auto& a : model->schema().attributes()) names.push_back(a.name);
    Dataset out;
    try {
        out = data.select_attributes(names);
    } catch (const ContractError& e) {
        throw ContractError(std::string("data does not carry the model's attributes: ") + e.what());
    }
    for (int64_t i = 0; i < out.schema().size(); ++i) {
        if (out.schema().at(i).class_count != model->schema().at(i).class_count) {
            throw ContractError("attribute '" + out.schema().at(i).name + "' has a different class count than the model");
        }
    }
    return out;
}

int64_t latent_index(const AttributeSchema& schema, const std::string& name) {
    if (name == "0" || name == "z0" || name == "z_0") return 0;
    auto pos = schema.find(name);
    if (!pos) throw ConfigError("unknown attribute '" + name + "'");
    return *pos + 1;
}

// ---------------------------------------------------------------------------

int cmd_synth_data(const Common& c, std::ostream& out) {
    auto cfg = resolve_config(c);
    if (cfg.data.source != "synthetic") throw ConfigError("synth-data needs data.source: synthetic");
    const auto splits = load_data(cfg.data);
    const fs::path dir = c.out;
    json result{{"train", {{"manifest", export_manifest(splits.train, dir / "train").string()},
                           {"count", splits.train.size()}}}};
    if (!splits.test.empty()) {
        result["test"] = {{"manifest", export_manifest(splits.test, dir / "test").string()},
                          {"count", splits.test.size()}};
    }
    json attrs = json::array();
    for (const auto& a : splits.train.schema().attributes()) {
        attrs.push_back({{"name", a.name}, {"class_count", a.class_count}});
    }
    result["schema"] = attrs;
    result["provenance"] = splits.train.provenance();
    finish(dir, cfg, "synth-data", result);
    out << "wrote " << splits.train.size() << " train / " << splits.test.size() << " test images to " << dir.string()
        << "\n";
    return kExitOk;
}

int cmd_pretrain(const Common& c, const std::string& role, std::ostream& out) {
    auto cfg = resolve_config(c);
    if (role != "model" && role != "eval") throw ConfigError("--role must be 'model' or 'eval'");
    const auto splits = load_data(cfg.data);
    const uint64_t seed = role == "eval" ? cfg.evaluation.eval_classifier_seed : cfg.train.seed;
    torch::manual_seed(seed);
    ClassifierBank bank(cfg.model, splits.train.schema().class_counts());
    std::mt19937_64 rng(seed);
    const auto report = pretrain_classifiers(bank, splits.train, cfg.train.pretrain, rng);
    const fs::path dir = c.out;
    const auto hash = save_classifier_bank(bank, splits.train.schema(), cfg.model, dir / "classifiers");
    json result{{"role", role}, {"steps", report.steps_run}, {"train_accuracy", report.train_accuracy},
                {"checkpoint", (dir / "classifiers").string()}, {"hash", hash}};
    out << "pretrained " << role << " classifiers for " << report.steps_run << " steps\n";
    for (int64_t m = 0; m < splits.train.schema().size(); ++m) {
        out << "  " << splits.train.schema().at(m).name << " train accuracy " << report.train_accuracy[m] << "\n";
    }
    if (!splits.test.empty()) {
        const auto acc = classifier_accuracy(bank, splits.test);
        result["test_accuracy"] = acc;
        for (int64_t m = 0; m < splits.test.schema().size(); ++m) {
            out << "  " << splits.test.schema().at(m).name << " test accuracy " << acc[m] << "\n";
        }
    }
    finish(dir, cfg, "pretrain", result);
    return kExitOk;
}

int cmd_train(const Common& c, std::optional<int64_t> steps, const std::string& resume, const std::string& classifiers,
              bool quiet, std::ostream& out) {
    auto cfg = resolve_config(c, resume);
    if (steps) cfg.train.steps = *steps;
    const auto splits = load_data(cfg.data);
    const fs::path dir = c.out;
    std::optional<Trainer> trainer;
    if (!resume.empty()) {
        trainer.emplace(Trainer::resume(resume));
        trainer->set_total_steps(cfg.train.steps);
    } else {
        cfg.train.validate();
        torch::manual_seed(cfg.train.seed);
        DisentangleModel model(splits.train.schema(), cfg.model);
        trainer.emplace(model, cfg.train);
        if (!classifiers.empty()) {
            auto ck = load_classifier_bank(classifiers);
            if (!(ck.schema == splits.train.schema())) {
                throw ContractError("classifier checkpoint schema differs from the training data schema");
            }
            trainer->adopt_classifiers(ck.bank);
        }
    }
    const auto train = align(splits.train, trainer->model());
    const auto start = std::chrono::steady_clock::now();
    const int64_t every = std::max<int64_t>(1, cfg.train.steps / 20);
    LossReport last;
    trainer->train(train, dir, [&](int64_t step, const LossReport& report) {
        last = report;
        if (!quiet && (step % every == 0 || step == cfg.train.steps)) {
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            out << "step " << step << "/" << cfg.train.steps << "  L_G " << report.generator_total << "  L_D "
                << report.critic_total << "  rec " << report.term(kTermRec) << "  dis " << report.term(kTermDis)
                << "  (" << secs << " s)\n";
            out.flush();
        }
    });
    const auto ck = dir / "checkpoint";
    json result{{"steps", trainer->step()}, {"checkpoint", ck.string()}, {"hash", checkpoint_hash(ck)},
                {"final_terms", last.terms}};
    finish(dir, cfg, "train", result);
    out << "checkpoint " << ck.string() << " at step " << trainer->step() << "\n";
    return kExitOk;
}

struct EvalArgs {
    std::string checkpoint;
    std::string metric = "all";
    std::string embeddings;
    std::string eval_classifiers;
    std::string split = "test";
    std::string cluster_by;
    std::string score_within;
    std::string code;
};

int cmd_eval(const Common& c, const EvalArgs& a, std::ostream& out) {
    static const std::set<std::string> metrics{"entropy", "hopkins", "transfer", "fid", "all"};
    if (!metrics.count(a.metric)) throw ConfigError("--metric must be one of entropy, hopkins, transfer, fid, all");
    auto cfg = resolve_config(c, a.checkpoint);
    const fs::path dir = c.out;
    json result{{"metric", a.metric}};
    std::vector<std::string> warnings;

    // Hopkins straight from an exported embedding file needs no model.
    if (!a.embeddings.empty()) {
        if (a.metric != "hopkins") throw ConfigError("--embeddings only applies to --metric hopkins");
        const auto set = read_embeddings(a.embeddings);
        const auto cluster_by = !a.cluster_by.empty() ? a.cluster_by
                                : !cfg.evaluation.cluster_by.empty() ? cfg.evaluation.cluster_by
                                                                     : set.label_names.at(0);
        const auto score_within = !a.score_within.empty() ? a.score_within
                                  : !cfg.evaluation.score_within.empty() ? cfg.evaluation.score_within
                                                                         : set.label_names.at(std::min<size_t>(1, set.label_names.size() - 1));
        const auto report = cluster_tendency_report(set, cluster_by, score_within, cfg.evaluation.hopkins);
        out << report.to_table();
        json rows = json::array();
        for (const auto& r : report.rows) {
            rows.push_back({{"cluster", r.cluster}, {"name", r.cluster_name}, {"count", r.count},
                            {"pooled", to_json(r.pooled)}, {"per_label", to_json(r.per_label)},
                            {"labels_scored", r.labels_scored}});
        }
        result["hopkins"] = {{"cluster_by", cluster_by}, {"score_within", score_within}, {"rows", rows},
                             {"warnings", report.warnings}};
        finish(dir, cfg, "eval", result);
        return kExitOk;
    }

    if (a.checkpoint.empty()) throw ConfigError("eval needs --checkpoint (or --embeddings for hopkins)");
    auto model = load_model(a.checkpoint);
    model->eval();
    const auto splits = load_data(cfg.data);
    const auto data = align(pick_split(splits, a.split), model);
    const auto& schema = model->schema();
    result["checkpoint_hash"] = checkpoint_hash(a.checkpoint);
    result["split"] = a.split;
    result["count"] = data.size();
    const bool all = a.metric == "all";

    if (all || a.metric == "entropy") {
        const auto report = latent_posterior_entropy(model, model->classifiers(), data);
        out << report.to_table();
        json rows = json::object();
        for (size_t m = 0; m < report.mean.size(); ++m) {
            json row = json::object();
            for (size_t k = 0; k < report.attribute_names.size(); ++k) row[report.attribute_names[k]] = report.mean[m][k];
            rows[m == 0 ? "z_0" : "z_" + report.attribute_names[m - 1]] = row;
        }
        result["entropy"] = {{"mean", rows}, {"max", report.max_entropy}};
    }

    if (all || a.metric == "hopkins") {
        if (schema.size() < 2 && a.score_within.empty()) {
            warnings.push_back("hopkins needs two attributes; skipped");
        } else {
            const auto cluster_by = !a.cluster_by.empty() ? a.cluster_by
                                    : !cfg.evaluation.cluster_by.empty() ? cfg.evaluation.cluster_by
                                                                         : schema.at(0).name;
            const auto score_within = !a.score_within.empty() ? a.score_within
                                      : !cfg.evaluation.score_within.empty() ? cfg.evaluation.score_within
                                                                             : schema.at(1).name;
            const auto code = latent_index(schema, a.code.empty() ? cluster_by : a.code);
            latent_index(schema, score_within);
            const auto exported = export_embeddings(model, data, code, dir / "embeddings");
            std::vector<std::string> names = schema.at(schema.index_of(cluster_by)).values;
            const auto report = cluster_tendency_report(exported.set, cluster_by, score_within, cfg.evaluation.hopkins, names);
            out << report.to_table();
            json rows = json::array();
            for (const auto& r : report.rows) {
                rows.push_back({{"cluster", r.cluster}, {"name", r.cluster_name}, {"count", r.count},
                                {"pooled", to_json(r.pooled)}, {"per_label", to_json(r.per_label)},
                                {"labels_scored", r.labels_scored}});
            }
            result["hopkins"] = {{"code", code}, {"cluster_by", cluster_by}, {"score_within", score_within},
                                 {"rows", rows}, {"warnings", report.warnings},
                                 {"embeddings", exported.embeddings.string()}};
        }
    }

    if (all || a.metric == "transfer" || a.metric == "fid") {
        if (a.eval_classifiers.empty()) {
            if (!all) throw ContractError("--metric " + a.metric + " needs --eval-classifiers (a pretrain --role eval checkpoint)");
            warnings.push_back("no --eval-classifiers given; transfer and fid skipped");
        } else {
            const auto eval = load_classifier_bank(a.eval_classifiers);
            if (!(eval.schema == schema)) throw ContractError("evaluation classifier schema differs from the model schema");
            TransferProtocol protocol;
            protocol.attribute = cfg.evaluation.transfer_attribute.empty()
                                     ? schema.size()
                                     : latent_index(schema, cfg.evaluation.transfer_attribute);
            if (protocol.attribute == 0) throw ConfigError("evaluation.transfer_attribute cannot be z_0");
            protocol.source = cfg.evaluation.transfer_source == "mean_code" ? TransferSource::MeanCode : TransferSource::Donor;
            protocol.seed = cfg.train.seed;
            const auto reference = splits.train.empty() ? data : align(splits.train, model);
            const auto transfer = transfer_accuracy(data, &eval.bank, protocol, model_transfer(model, protocol, reference));
            if (all || a.metric == "transfer") {
                out << transfer.to_table();
                json kept = json::object();
                for (const auto& [name, v] : transfer.preserved) kept[name] = to_json(v);
                result["transfer"] = {{"attribute", transfer.attribute}, {"source", cfg.evaluation.transfer_source},
                                      {"per_class", transfer.per_class_accuracy}, {"target", to_json(transfer.target)},
                                      {"preserved", kept}, {"evaluated", transfer.evaluated},
                                      {"eval_classifier_hash", eval.hash}};
            }
            if (all || a.metric == "fid") {
                const auto fx = classifier_features(eval.bank, eval.hash);
                const auto real = extract_features(fx, data.images());
                const auto fake = extract_features(fx, transfer.synthesized);
                const auto fid = frechet(real, fake);
                out << "FID (" << fx.name << "): " << fid.distance << "\n";
                result["fid"] = {{"distance", fid.distance}, {"extractor", fx.name}, {"warnings", fid.warnings}};
            }
        }
    }
    for (const auto& w : warnings) out << "warning: " << w << "\n";
    result["warnings"] = warnings;
    finish(dir, cfg, "eval", result);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// Job files

YAML::Node load_job(const fs::path& path) {
    YAML::Node root;
    try {
        root = YAML::LoadFile(path.string());
    } catch (const YAML::Exception& e) {
        throw ConfigError("cannot parse job file " + path.string() + ": " + e.msg);
    }
    if (!root["requests"] || !root["requests"].IsSequence()) {
        throw ConfigError("job file " + path.string() + " needs a 'requests' list");
    }
    return root["requests"];
}

std::string job_string(const YAML::Node& n, const std::string& key, size_t i) {
    if (!n[key]) throw ConfigError("request " + std::to_string(i) + ": missing '" + key + "'");
    try {
        return n[key].as<std::string>();
    } catch (const YAML::Exception&) {
        throw ConfigError("request " + std::to_string(i) + ": '" + key + "' must be a string");
    }
}

int64_t job_attribute(const AttributeSchema& schema, const std::string& name, size_t i) {
    auto pos = schema.find(name);
    if (!pos) throw ConfigError("request " + std::to_string(i) + ": unknown attribute '" + name + "'");
    return *pos + 1;
}

struct JobContext {
    DisentangleModel model{nullptr};
    fs::path job_dir;
    fs::path out_dir;
    int64_t size = 0;

    torch::Tensor image(const std::string& p) const {
        fs::path path = p;
        if (path.is_relative()) path = job_dir / path;
        return read_image(path, size);
    }
    std::string save(const torch::Tensor& img, const std::string& name) const {
        write_png(img.to(torch::kFloat32), out_dir / name);
        return name;
    }
};

std::string output_name(const YAML::Node& r, const std::string& fallback) {
    return r["output"] ? r["output"].as<std::string>() : fallback;
}

/// Validates every request before running any, so a bad attribute fails fast.
int cmd_job(const std::string& kind, const Common& c, const std::string& checkpoint, const std::string& job_path,
            std::ostream& out) {
    const auto requests = load_job(job_path);
    JobContext ctx;
    ctx.model = load_model(checkpoint);
    ctx.model->eval();
    const auto& schema = ctx.model->schema();
    for (size_t i = 0; i < requests.size(); ++i) {
        const auto r = requests[i];
        if (kind == "transfer") {
            if (!r["donors"] || !r["donors"].IsMap()) throw ConfigError("request " + std::to_string(i) + ": 'donors' must be a mapping");
            for (const auto& kv : r["donors"]) job_attribute(schema, kv.first.as<std::string>(), i);
            if (r["attributes"]) {
                for (const auto& n : r["attributes"]) job_attribute(schema, n.as<std::string>(), i);
            }
        } else {
            job_attribute(schema, job_string(r, "attribute", i), i);
        }
    }
    ctx.job_dir = fs::path(job_path).parent_path();
    ctx.out_dir = c.out;
    ctx.size = ctx.model->config().image_size;
    fs::create_directories(ctx.out_dir);

    json results = json::array();
    for (size_t i = 0; i < requests.size(); ++i) {
        const auto r = requests[i];
        const auto tag = kind + "_" + std::to_string(i);
        if (kind == "transfer") {
            SwapRequest req;
            req.source = ctx.image(job_string(r, "source", i));
            std::vector<std::string> names;
            if (r["attributes"]) {
                names = r["attributes"].as<std::vector<std::string>>();
            } else {
                for (const auto& kv : r["donors"]) names.push_back(kv.first.as<std::string>());
            }
            for (const auto& n : names) {
                const auto m = job_attribute(schema, n, i);
                if (!r["donors"][n]) throw ConfigError("request " + std::to_string(i) + ": no donor for '" + n + "'");
                req.attributes.insert(m);
                req.donors[m] = ctx.image(r["donors"][n].as<std::string>());
            }
            const auto file = ctx.save(swap(ctx.model, req), output_name(r, tag + ".png"));
            results.push_back({{"index", i}, {"output", file}, {"attributes", names}});
        } else if (kind == "mix") {
            MixRequest req;
            req.attribute = job_attribute(schema, job_string(r, "attribute", i), i);
            if (!r["components"] || !r["components"].IsSequence()) {
                throw ConfigError("request " + std::to_string(i) + ": 'components' must be a list");
            }
            std::vector<double> weights;
            for (const auto& comp : r["components"]) {
                req.components.push_back({ctx.image(comp["image"].as<std::string>()), comp["weight"].as<double>()});
                weights.push_back(req.components.back().weight);
            }
            if (r["base"]) req.base = ctx.image(r["base"].as<std::string>());
            if (r["convex"]) req.convex = r["convex"].as<bool>();
            const auto file = ctx.save(mix(ctx.model, req), output_name(r, tag + ".png"));
            results.push_back({{"index", i}, {"output", file}, {"weights", weights}, {"convex", req.convex}});
        } else {
            const auto m = job_attribute(schema, job_string(r, "attribute", i), i);
            const auto steps = r["steps"] ? r["steps"].as<int64_t>() : kDefaultInterpolationSteps;
            std::optional<torch::Tensor> base;
            if (r["base"]) base = ctx.image(r["base"].as<std::string>());
            const auto frames = interpolate(ctx.model, m, ctx.image(job_string(r, "image_i", i)),
                                            ctx.image(job_string(r, "image_j", i)), steps, base);
            const auto prefix = r["output_prefix"] ? r["output_prefix"].as<std::string>() : tag;
            json files = json::array();
            for (size_t k = 0; k < frames.size(); ++k) {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "_%02zu.png", k);
                files.push_back(ctx.save(frames[k], prefix + buf));
            }
            results.push_back({{"index", i}, {"outputs", files}, {"steps", steps}});
        }
    }
    auto cfg = resolve_config(c, checkpoint);
    finish(ctx.out_dir, cfg, kind,
           {{"checkpoint_hash", checkpoint_hash(checkpoint)}, {"job", job_path}, {"results", results}});
    out << "wrote " << results.size() << " " << kind << " result(s) to " << ctx.out_dir.string() << "\n";
    return kExitOk;
}

int cmd_export(const Common& c, const std::string& checkpoint, const std::string& attribute, const std::string& split,
               std::ostream& out) {
    auto cfg = resolve_config(c, checkpoint);
    auto model = load_model(checkpoint);
    model->eval();
    const auto data = align(pick_split(load_data(cfg.data), split), model);
    const auto code = latent_index(model->schema(), attribute);
    const auto exported = export_embeddings(model, data, code, c.out);
    finish(c.out, cfg, "export-embeddings",
           {{"code", code}, {"count", exported.set.size()}, {"dims", exported.set.points.cols()},
            {"embeddings", exported.embeddings.string()}, {"projection", exported.projection.string()}});
    out << "exported " << exported.set.size() << " x " << exported.set.points.cols() << " embeddings to "
        << exported.embeddings.string() << "\n";
    return kExitOk;
}

std::atomic<Service*> g_service{nullptr};

void on_signal(int) {
    if (auto* s = g_service.load()) s->stop();
}

int cmd_serve(const Common& c, const std::string& checkpoint, const std::string& catalog, const std::string& host,
              int port, std::ostream& out) {
    auto cfg = resolve_config(c, checkpoint);
    Service service;
    const auto bound = service.start(host, port);
    out << "listening on http://" << host << ":" << bound << "\n";
    out.flush();
    Dataset data;
    if (catalog == "train" || catalog == "test") {
        data = pick_split(load_data(cfg.data), catalog);
    } else {
        data = load_manifest(catalog, cfg.data.image_size);
    }
    service.load(fs::path(checkpoint), data);
    out << "model loaded; catalog has " << data.size() << " samples\n";
    out.flush();
    g_service = &service;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    service.wait();
    g_service = nullptr;
    return kExitOk;
}

int cmd_validate(const std::string& path, const std::vector<std::string>& sets, std::ostream& out, std::ostream& err) {
    const auto parsed = path.empty() ? parse_run_config("", sets) : parse_run_config_file(path, sets);
    if (!parsed.ok()) {
        err << "config has " << parsed.errors.size() << " error(s):\n";
        for (const auto& e : parsed.errors) err << "  " << e << "\n";
        return kExitConfig;
    }
    out << to_yaml(parsed.config);
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Disentangled attribute representation learning"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "disent 0.1.0");

    Common common;
    bool quiet = false;

    auto* synth = app.add_subcommand("synth-data", "Generate the synthetic dataset as PNG + manifest");
    add_common(synth, common);

    std::string role = "model";
    auto* pretrain = app.add_subcommand("pretrain", "Pretrain attribute classifiers on real images");
    add_common(pretrain, common);
    pretrain->add_option("--role", role, "model: training classifiers, eval: held-out evaluation classifiers")
        ->check(CLI::IsMember({"model", "eval"}));

    std::optional<int64_t> steps;
    std::string resume, classifiers;
    auto* train = app.add_subcommand("train", "Train a model (pretrains classifiers unless given)");
    add_common(train, common);
    train->add_option("--steps", steps, "Generator steps (overrides schedule.steps)");
    train->add_option("--resume", resume, "Checkpoint directory written by a previous train run");
    train->add_option("--classifiers", classifiers, "Pretrained classifier checkpoint to adopt");
    train->add_flag("-q,--quiet", quiet, "No progress lines");

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "Compute evaluation metrics");
    add_common(eval, common);
    eval->add_option("--checkpoint", eval_args.checkpoint, "Model checkpoint directory");
    eval->add_option("--metric", eval_args.metric, "entropy | hopkins | transfer | fid | all");
    eval->add_option("--embeddings", eval_args.embeddings, "Score an exported embedding file (hopkins only)");
    eval->add_option("--eval-classifiers", eval_args.eval_classifiers, "Evaluation classifier checkpoint");
    eval->add_option("--split", eval_args.split, "train | test")->check(CLI::IsMember({"train", "test"}));
    eval->add_option("--cluster-by", eval_args.cluster_by, "Hopkins partition attribute");
    eval->add_option("--score-within", eval_args.score_within, "Hopkins scoring attribute");
    eval->add_option("--code", eval_args.code, "Latent code to embed (attribute name or 0)");

    std::string checkpoint, job;
    auto add_job = [&](const std::string& name, const std::string& help) {
        auto* cmd = app.add_subcommand(name, help);
        add_common(cmd, common);
        cmd->add_option("--checkpoint", checkpoint, "Model checkpoint directory")->required();
        cmd->add_option("job", job, "YAML job file with a 'requests' list")->required();
        return cmd;
    };
    auto* transfer = add_job("transfer", "Swap attribute codes between images");
    auto* mixc = add_job("mix", "Decode convex combinations of one attribute's codes");
    auto* interp = add_job("interpolate", "Decode linear interpolations of one attribute's code");

    std::string attribute, split = "test";
    auto* exportc = app.add_subcommand("export-embeddings", "Write flattened codes and a 2-D PCA projection");
    add_common(exportc, common);
    exportc->add_option("--checkpoint", checkpoint, "Model checkpoint directory")->required();
    exportc->add_option("--attribute", attribute, "Code to export (attribute name or 0)")->required();
    exportc->add_option("--split", split, "train | test")->check(CLI::IsMember({"train", "test"}));

    std::string catalog = "test", host = "127.0.0.1";
    int port = 8080;
    auto* serve = app.add_subcommand("serve", "HTTP inference service over a checkpoint");
    add_common(serve, common, false);
    serve->add_option("--checkpoint", checkpoint, "Model checkpoint directory")->required();
    serve->add_option("--catalog-split", catalog, "train | test | path to a manifest.csv");
    serve->add_option("--host", host, "Bind address");
    serve->add_option("--port", port, "Port (0 picks a free one)");

    std::string config_path;
    std::vector<std::string> validate_sets;
    auto* validate = app.add_subcommand("validate-config", "Resolve a config file and report every problem");
    validate->add_option("path", config_path, "YAML config (omit for defaults)");
    validate->add_option("--set", validate_sets, "Override a config key");

    std::vector<std::string> argv_store{"disent"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& s : argv_store) argv.push_back(s.data());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::CallForVersion&) {
        out << app.version() << "\n";
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        for (auto* sub : app.get_subcommands()) err << sub->help();
        return kExitConfig;
    }

    try {
        if (*synth) return cmd_synth_data(common, out);
        if (*pretrain) return cmd_pretrain(common, role, out);
        if (*train) return cmd_train(common, steps, resume, classifiers, quiet, out);
        if (*eval) return cmd_eval(common, eval_args, out);
        if (*transfer) return cmd_job("transfer", common, checkpoint, job, out);
        if (*mixc) return cmd_job("mix", common, checkpoint, job, out);
        if (*interp) return cmd_job("interpolate", common, checkpoint, job, out);
        if (*exportc) return cmd_export(common, checkpoint, attribute, split, out);
        if (*serve) return cmd_serve(common, checkpoint, catalog, host, port, out);
        if (*validate) return cmd_validate(config_path, validate_sets, out, err);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const YAML::Exception& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitConfig;
}

}  // namespace disent
