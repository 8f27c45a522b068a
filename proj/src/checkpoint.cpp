#include "disent/checkpoint.hpp"

#include <fstream>
#include <map>

#include "disent/errors.hpp"
#include "disent/image_io.hpp"

namespace disent {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kFormat = "disent-checkpoint/1";

json parameter_shapes(const torch::nn::Module& module) {
    json shapes = json::object();
    for (const auto& item : module.named_parameters()) shapes[item.key()] = item.value().sizes().vec();
    return shapes;
}

void check_shapes(const torch::nn::Module& module, const json& expected, const std::string& blob) {
    const auto actual = parameter_shapes(module);
    if (actual.size() != expected.size()) {
        throw CheckpointError(blob + ": manifest lists " + std::to_string(expected.size()) + " parameters, module has " +
                              std::to_string(actual.size()));
    }
    for (const auto& [name, shape] : actual.items()) {
        if (!expected.contains(name)) throw CheckpointError(blob + ": parameter '" + name + "' missing from manifest");
        if (expected.at(name) != shape) {
            throw CheckpointError(blob + ": parameter '" + name + "' has shape " + shape.dump() + ", manifest says " +
                                  expected.at(name).dump());
        }
    }
}

template <typename Holder>
void save_blob(const Holder& module, const fs::path& dir, const std::string& name, json& blobs) {
    const auto file = name + ".pt";
    torch::save(module, (dir / file).string());
    blobs[name] = {{"file", file}, {"parameters", parameter_shapes(*module)}};
}

template <typename Holder>
void load_blob(Holder& module, const fs::path& dir, const std::string& name, const json& blobs) {
    if (!blobs.contains(name)) throw CheckpointError("manifest has no blob '" + name + "'");
    const auto& entry = blobs.at(name);
    check_shapes(*module, entry.at("parameters"), name);
    const auto path = dir / entry.at("file").get<std::string>();
    if (!fs::exists(path)) throw CheckpointError("missing checkpoint blob " + path.string());
    try {
        torch::load(module, path.string());
    } catch (const c10::Error& e) {
        throw CheckpointError("cannot load " + path.string() + ": " + e.what_without_backtrace());
    }
    check_shapes(*module, entry.at("parameters"), name);
}

std::string content_hash(const fs::path& dir, const json& blobs) {
    std::map<std::string, std::string> sorted;
    for (const auto& [name, entry] : blobs.items()) {
        sorted[name] = sha256_file_hex(dir / entry.at("file").get<std::string>());
    }
    std::string joined;
    for (const auto& [name, h] : sorted) joined += name + ":" + h + "\n";
    return sha256_hex(joined);
}

void write_json(const json& j, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw CheckpointError("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

}  // namespace

json to_json(const ModelConfig& c) {
    return {{"image_size", c.image_size},
            {"encoder_widths", c.encoder_widths},
            {"classifier_width", c.classifier_width},
            {"critic_width", c.critic_width},
            {"critic_max_width", c.critic_max_width},
            {"critic_layers", c.critic_layers},
            {"decoder_blocks", c.decoder_blocks},
            {"leaky_slope", c.leaky_slope},
            {"norm_eps", c.norm_eps}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    c.image_size = j.at("image_size").get<int64_t>();
    c.encoder_widths = j.at("encoder_widths").get<std::array<int64_t, 3>>();
    c.classifier_width = j.at("classifier_width").get<int64_t>();
    c.critic_width = j.at("critic_width").get<int64_t>();
    c.critic_max_width = j.at("critic_max_width").get<int64_t>();
    c.critic_layers = j.at("critic_layers").get<int64_t>();
    c.decoder_blocks = j.at("decoder_blocks").get<int64_t>();
    c.leaky_slope = j.at("leaky_slope").get<double>();
    c.norm_eps = j.at("norm_eps").get<double>();
    return c;
}

json to_json(const AttributeSchema& schema) {
    json arr = json::array();
    for (const auto& a : schema.attributes()) {
        arr.push_back({{"name", a.name}, {"class_count", a.class_count}, {"values", a.values}});
    }
    return arr;
}

AttributeSchema schema_from_json(const json& j) {
    std::vector<Attribute> attrs;
    for (const auto& a : j) {
        Attribute attr{a.at("name").get<std::string>(), a.at("class_count").get<int64_t>(),
                       a.at("values").get<std::vector<std::string>>()};
        attrs.push_back(std::move(attr));
    }
    return AttributeSchema(std::move(attrs));
}

std::string save_model(const DisentangleModel& model, const fs::path& dir) {
    fs::create_directories(dir);
    json blobs = json::object();
    for (int64_t m = 0; m <= model->attribute_count(); ++m) {
        save_blob(model->encoder(m), dir, "encoder_" + std::to_string(m), blobs);
    }
    save_blob(model->decoder(), dir, "decoder", blobs);
    save_blob(model->classifiers(), dir, "classifiers", blobs);
    save_blob(model->critic(), dir, "critic", blobs);

    const auto& c = model->config();
    json manifest = {{"format", kFormat},
                     {"kind", "model"},
                     {"schema", to_json(model->schema())},
                     {"model", to_json(c)},
                     {"code_shape", {c.code_channels(), c.code_size(), c.code_size()}},
                     {"blobs", blobs}};
    manifest["hash"] = content_hash(dir, blobs);
    write_json(manifest, dir / "manifest.json");
    return manifest["hash"];
}

json read_manifest(const fs::path& dir) {
    const auto path = dir / "manifest.json";
    std::ifstream in(path);
    if (!in) throw CheckpointError("no checkpoint manifest at " + path.string());
    try {
        json j;
        in >> j;
        if (j.value("format", "") != kFormat) throw CheckpointError("unsupported checkpoint format in " + path.string());
        return j;
    } catch (const json::exception& e) {
        throw CheckpointError("malformed manifest " + path.string() + ": " + e.what());
    }
}

DisentangleModel load_model(const fs::path& dir) {
    const auto manifest = read_manifest(dir);
    if (manifest.value("kind", "") != "model") throw CheckpointError(dir.string() + " is not a model checkpoint");
    try {
        auto schema = schema_from_json(manifest.at("schema"));
        auto config = model_config_from_json(manifest.at("model"));
        DisentangleModel model(schema, config);
        const std::vector<int64_t> code_shape{config.code_channels(), config.code_size(), config.code_size()};
        if (manifest.at("code_shape").get<std::vector<int64_t>>() != code_shape) {
            throw CheckpointError("manifest code shape disagrees with the layer hyperparameters");
        }
        const auto& blobs = manifest.at("blobs");
        for (int64_t m = 0; m <= model->attribute_count(); ++m) {
            auto enc = model->encoder(m);
            load_blob(enc, dir, "encoder_" + std::to_string(m), blobs);
        }
        auto dec = model->decoder();
        load_blob(dec, dir, "decoder", blobs);
        auto cls = model->classifiers();
        load_blob(cls, dir, "classifiers", blobs);
        auto critic = model->critic();
        load_blob(critic, dir, "critic", blobs);
        return model;
    } catch (const json::exception& e) {
        throw CheckpointError("malformed manifest in " + dir.string() + ": " + e.what());
    }
}

std::string save_classifier_bank(const ClassifierBank& bank, const AttributeSchema& schema, const ModelConfig& config,
                                 const fs::path& dir) {
    fs::create_directories(dir);
    json blobs = json::object();
    save_blob(bank, dir, "classifiers", blobs);
    json manifest = {{"format", kFormat},
                     {"kind", "classifiers"},
                     {"schema", to_json(schema)},
                     {"model", to_json(config)},
                     {"code_shape", {config.code_channels(), config.code_size(), config.code_size()}},
                     {"blobs", blobs}};
    manifest["hash"] = content_hash(dir, blobs);
    write_json(manifest, dir / "manifest.json");
    return manifest["hash"];
}

ClassifierCheckpoint load_classifier_bank(const fs::path& dir) {
    const auto manifest = read_manifest(dir);
    ClassifierCheckpoint out;
    try {
        out.schema = schema_from_json(manifest.at("schema"));
        out.config = model_config_from_json(manifest.at("model"));
        out.bank = ClassifierBank(out.config, out.schema.class_counts());
        load_blob(out.bank, dir, "classifiers", manifest.at("blobs"));
        out.hash = manifest.at("hash").get<std::string>();
    } catch (const json::exception& e) {
        throw CheckpointError("malformed manifest in " + dir.string() + ": " + e.what());
    }
    return out;
}

std::string checkpoint_hash(const fs::path& dir) { return read_manifest(dir).at("hash").get<std::string>(); }

}  // namespace disent
