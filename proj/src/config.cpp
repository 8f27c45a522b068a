#include "disent/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "disent/errors.hpp"

namespace disent {

namespace {

using Field = std::function<void(const YAML::Node&)>;

class Reader {
public:
    explicit Reader(std::vector<std::string>& errors) : errors_(errors) {}

    /// Walks a mapping, dispatching known keys and reporting unknown ones.
    void section(const YAML::Node& node, const std::string& path, const std::map<std::string, Field>& fields) {
        if (!node || node.IsNull()) return;
        if (!node.IsMap()) {
            errors_.push_back(path + ": expected a mapping");
            return;
        }
        for (const auto& kv : node) {
            const auto key = kv.first.as<std::string>();
            auto it = fields.find(key);
            if (it == fields.end()) {
                errors_.push_back((path.empty() ? "" : path + ".") + key + ": unknown key");
                continue;
            }
            it->second(kv.second);
        }
    }

    template <class T>
    Field scalar(const std::string& path, T& out) {
        return [this, path, &out](const YAML::Node& n) {
            try {
                if (n.IsNull()) throw YAML::Exception(YAML::Mark::null_mark(), "null");
                out = n.as<T>();
            } catch (const YAML::Exception&) {
                errors_.push_back(path + ": expected " + type_name<T>());
            }
        };
    }

    template <class T>
    Field list(const std::string& path, std::vector<T>& out) {
        return [this, path, &out](const YAML::Node& n) {
            try {
                if (!n.IsSequence()) throw YAML::Exception(YAML::Mark::null_mark(), "not a list");
                out = n.as<std::vector<T>>();
            } catch (const YAML::Exception&) {
                errors_.push_back(path + ": expected a list of " + type_name<T>());
            }
        };
    }

    Field choice(const std::string& path, std::string& out, std::set<std::string> allowed) {
        return [this, path, &out, allowed](const YAML::Node& n) {
            std::string v;
            try {
                v = n.as<std::string>();
            } catch (const YAML::Exception&) {
                errors_.push_back(path + ": expected a string");
                return;
            }
            if (!allowed.count(v)) {
                std::string opts;
                for (const auto& a : allowed) opts += (opts.empty() ? "" : ", ") + a;
                errors_.push_back(path + ": '" + v + "' is not one of " + opts);
                return;
            }
            out = v;
        };
    }

    void error(std::string msg) { errors_.push_back(std::move(msg)); }

private:
    template <class T>
    static std::string type_name() {
        if constexpr (std::is_same_v<T, std::string>) return "a string";
        else if constexpr (std::is_floating_point_v<T>) return "a number";
        else if constexpr (std::is_unsigned_v<T>) return "a non-negative integer";
        else return "an integer";
    }

    std::vector<std::string>& errors_;
};

void split_message(const ConfigError& e, std::vector<std::string>& errors) {
    // Component validators emit "header:\n  problem\n  problem".
    std::istringstream in(e.what());
    std::string line;
    bool any = false;
    std::getline(in, line);
    std::string header = line;
    while (std::getline(in, line)) {
        auto first = line.find_first_not_of(' ');
        if (first == std::string::npos || line.back() == ':') continue;
        errors.push_back(line.substr(first));
        any = true;
    }
    if (!any) errors.push_back(header);
}

template <class Fn>
void collect(Fn&& fn, std::vector<std::string>& errors) {
    try {
        fn();
    } catch (const ConfigError& e) {
        split_message(e, errors);
    }
}

void set_path(YAML::Node node, const std::vector<std::string>& keys, size_t i, const YAML::Node& value) {
    if (i + 1 == keys.size()) {
        node[keys[i]] = value;
        return;
    }
    YAML::Node child = node[keys[i]];
    if (!child || !child.IsMap()) {
        node[keys[i]] = YAML::Node(YAML::NodeType::Map);
        child = node[keys[i]];
    }
    set_path(child, keys, i + 1, value);
}

void apply_overrides(YAML::Node& root, const std::vector<std::string>& overrides, std::vector<std::string>& errors) {
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos || eq == 0) {
            errors.push_back("override '" + o + "' must look like section.key=value");
            continue;
        }
        std::vector<std::string> keys;
        std::istringstream ks(o.substr(0, eq));
        std::string k;
        while (std::getline(ks, k, '.')) keys.push_back(k);
        YAML::Node value;
        try {
            value = YAML::Load(o.substr(eq + 1));
        } catch (const YAML::Exception& e) {
            errors.push_back("override '" + o + "': " + e.msg);
            continue;
        }
        if (!root || !root.IsMap()) root = YAML::Node(YAML::NodeType::Map);
        set_path(root, keys, 0, value);
    }
}

const std::map<std::string, ClassifierMode> kClassifierModes{{"pretrain_frozen", ClassifierMode::PretrainFrozen},
                                                             {"joint", ClassifierMode::Joint}};
const std::map<std::string, AdversarialMode> kAdversarialModes{{"wgan_gp", AdversarialMode::WassersteinGP},
                                                               {"cross_entropy", AdversarialMode::CrossEntropy}};
const std::map<std::string, ShuffleMode> kShuffleModes{{"permutation", ShuffleMode::Permutation},
                                                       {"with_replacement", ShuffleMode::WithReplacement}};

template <class E>
std::string key_of(const std::map<std::string, E>& table, E value) {
    for (const auto& [k, v] : table) {
        if (v == value) return k;
    }
    return "?";
}

template <class E>
std::set<std::string> keys_of(const std::map<std::string, E>& table) {
    std::set<std::string> out;
    for (const auto& [k, v] : table) out.insert(k);
    return out;
}

ConfigParse parse_node(YAML::Node root, const std::vector<std::string>& overrides) {
    ConfigParse result;
    auto& errors = result.errors;
    apply_overrides(root, overrides, errors);
    auto& c = result.config;
    Reader r(errors);

    if (root && !root.IsNull() && !root.IsMap()) {
        errors.push_back("top level: expected a mapping of sections");
        return result;
    }

    auto& d = c.data;
    auto& syn = d.synthetic;
    std::vector<int64_t> holdout_values;
    std::string holdout_attribute;
    bool has_holdout = false;
    auto& m = c.model;
    std::vector<int64_t> widths(m.encoder_widths.begin(), m.encoder_widths.end());
    auto& t = c.train;
    auto& w = t.weights;
    auto& o = t.optimizer;
    auto& p = t.pretrain;
    auto& e = c.evaluation;
    auto& h = e.hopkins;
    std::string classifier_mode = key_of(kClassifierModes, t.classifier_mode);
    std::string adversarial = key_of(kAdversarialModes, t.adversarial);
    std::string shuffle = key_of(kShuffleModes, t.shuffle_mode);

    r.section(root, "", {
        {"data", [&](const YAML::Node& n) {
             r.section(n, "data", {
                 {"source", r.choice("data.source", d.source, {"synthetic", "manifest"})},
                 {"image_size", r.scalar("data.image_size", d.image_size)},
                 {"attributes", r.list("data.attributes", d.attributes)},
                 {"manifest", r.scalar("data.manifest", d.manifest)},
                 {"test_manifest", r.scalar("data.test_manifest", d.test_manifest)},
                 {"test_seed", r.scalar("data.test_seed", d.test_seed)},
                 {"test_count_per_combination", r.scalar("data.test_count_per_combination",
                                                         d.test_count_per_combination)},
                 {"synthetic", [&](const YAML::Node& s) {
                      r.section(s, "data.synthetic", {
                          {"shape_classes", r.scalar("data.synthetic.shape_classes", syn.shape_classes)},
                          {"hue_classes", r.scalar("data.synthetic.hue_classes", syn.hue_classes)},
                          {"brightness_classes", r.scalar("data.synthetic.brightness_classes", syn.brightness_classes)},
                          {"jitter", r.scalar("data.synthetic.jitter", syn.jitter)},
                          {"count_per_combination",
                           r.scalar("data.synthetic.count_per_combination", syn.count_per_combination)},
                          {"seed", r.scalar("data.synthetic.seed", syn.seed)},
                      });
                  }},
                 {"holdout", [&](const YAML::Node& s) {
                      if (s.IsNull()) return;
                      has_holdout = true;
                      r.section(s, "data.holdout", {
                          {"attribute", r.scalar("data.holdout.attribute", holdout_attribute)},
                          {"values", r.list("data.holdout.values", holdout_values)},
                      });
                  }},
             });
         }},
        {"model", [&](const YAML::Node& n) {
             r.section(n, "model", {
                 {"encoder_widths", r.list("model.encoder_widths", widths)},
                 {"classifier_width", r.scalar("model.classifier_width", m.classifier_width)},
                 {"critic_width", r.scalar("model.critic_width", m.critic_width)},
                 {"critic_max_width", r.scalar("model.critic_max_width", m.critic_max_width)},
                 {"critic_layers", r.scalar("model.critic_layers", m.critic_layers)},
                 {"decoder_blocks", r.scalar("model.decoder_blocks", m.decoder_blocks)},
                 {"leaky_slope", r.scalar("model.leaky_slope", m.leaky_slope)},
                 {"norm_eps", r.scalar("model.norm_eps", m.norm_eps)},
             });
         }},
        {"loss_weights", [&](const YAML::Node& n) {
             r.section(n, "loss_weights", {
                 {"lambda_rec", r.scalar("loss_weights.lambda_rec", w.lambda_rec)},
                 {"lambda_gp", r.scalar("loss_weights.lambda_gp", w.lambda_gp)},
                 {"lambda_cls_x", r.scalar("loss_weights.lambda_cls_x", w.lambda_cls_x)},
                 {"lambda_dis", r.scalar("loss_weights.lambda_dis", w.lambda_dis)},
                 {"lambda_cls_synth", r.scalar("loss_weights.lambda_cls_synth", w.lambda_cls_synth)},
                 {"lambda_adv", r.scalar("loss_weights.lambda_adv", w.lambda_adv)},
             });
         }},
        {"optimizer", [&](const YAML::Node& n) {
             r.section(n, "optimizer", {
                 {"name", r.choice("optimizer.name", o.name, {"adam"})},
                 {"learning_rate", r.scalar("optimizer.learning_rate", o.learning_rate)},
                 {"beta1", r.scalar("optimizer.beta1", o.beta1)},
                 {"beta2", r.scalar("optimizer.beta2", o.beta2)},
             });
         }},
        {"schedule", [&](const YAML::Node& n) {
             r.section(n, "schedule", {
                 {"batch_size", r.scalar("schedule.batch_size", t.batch_size)},
                 {"steps", r.scalar("schedule.steps", t.steps)},
                 {"critic_steps_per_gen", r.scalar("schedule.critic_steps_per_gen", t.critic_steps_per_gen)},
                 {"classifier_mode", r.choice("schedule.classifier_mode", classifier_mode, keys_of(kClassifierModes))},
                 {"adversarial", r.choice("schedule.adversarial", adversarial, keys_of(kAdversarialModes))},
                 {"shuffle", r.choice("schedule.shuffle", shuffle, keys_of(kShuffleModes))},
                 {"seed", r.scalar("schedule.seed", t.seed)},
                 {"checkpoint_every", r.scalar("schedule.checkpoint_every", t.checkpoint_every)},
                 {"log_every", r.scalar("schedule.log_every", t.log_every)},
                 {"pretrain", [&](const YAML::Node& s) {
                      r.section(s, "schedule.pretrain", {
                          {"steps", r.scalar("schedule.pretrain.steps", p.steps)},
                          {"target_accuracy", r.scalar("schedule.pretrain.target_accuracy", p.target_accuracy)},
                          {"eval_every", r.scalar("schedule.pretrain.eval_every", p.eval_every)},
                          {"batch_size", r.scalar("schedule.pretrain.batch_size", p.batch_size)},
                          {"learning_rate", r.scalar("schedule.pretrain.learning_rate", p.learning_rate)},
                      });
                  }},
             });
         }},
        {"evaluation", [&](const YAML::Node& n) {
             r.section(n, "evaluation", {
                 {"cluster_by", r.scalar("evaluation.cluster_by", e.cluster_by)},
                 {"score_within", r.scalar("evaluation.score_within", e.score_within)},
                 {"transfer_attribute", r.scalar("evaluation.transfer_attribute", e.transfer_attribute)},
                 {"transfer_source", r.choice("evaluation.transfer_source", e.transfer_source, {"donor", "mean_code"})},
                 {"eval_classifier_seed", r.scalar("evaluation.eval_classifier_seed", e.eval_classifier_seed)},
                 {"hopkins", [&](const YAML::Node& s) {
                      r.section(s, "evaluation.hopkins", {
                          {"probe_fraction", r.scalar("evaluation.hopkins.probe_fraction", h.probe_fraction)},
                          {"probe_count", r.scalar("evaluation.hopkins.probe_count", h.probe_count)},
                          {"repetitions", r.scalar("evaluation.hopkins.repetitions", h.repetitions)},
                          {"projection_dims", r.scalar("evaluation.hopkins.projection_dims", h.projection_dims)},
                          {"seed", r.scalar("evaluation.hopkins.seed", h.seed)},
                      });
                  }},
             });
         }},
    });

    // Resolve derived fields and enums.
    if (widths.size() != 3) {
        errors.push_back("model.encoder_widths: expected exactly 3 widths");
    } else {
        std::copy(widths.begin(), widths.end(), m.encoder_widths.begin());
    }
    syn.image_size = d.image_size;
    m.image_size = d.image_size;
    if (kClassifierModes.count(classifier_mode)) t.classifier_mode = kClassifierModes.at(classifier_mode);
    if (kAdversarialModes.count(adversarial)) t.adversarial = kAdversarialModes.at(adversarial);
    if (kShuffleModes.count(shuffle)) t.shuffle_mode = kShuffleModes.at(shuffle);
    if (has_holdout) {
        d.holdout = HoldoutConfig{holdout_attribute, holdout_values};
        if (holdout_attribute.empty()) errors.push_back("data.holdout.attribute: required");
        if (holdout_values.empty()) errors.push_back("data.holdout.values: must be a nonempty list");
    }

    // Invariants.
    if (d.source == "synthetic") {
        collect([&] { syn.validate(); }, errors);
        if (d.test_count_per_combination < 1) errors.push_back("data.test_count_per_combination must be >= 1");
    } else if (d.manifest.empty()) {
        errors.push_back("data.manifest: required when data.source is manifest");
    }
    if (d.image_size < 8 || d.image_size % 4 != 0) {
        if (d.source != "synthetic") errors.push_back("data.image_size must be a multiple of 4 and >= 8");
    }
    collect([&] { m.validate(); }, errors);
    collect([&] { t.validate(); }, errors);
    if (!(p.target_accuracy > 0.0 && p.target_accuracy <= 1.0)) {
        errors.push_back("schedule.pretrain.target_accuracy must lie in (0, 1]");
    }
    if (!(h.probe_fraction > 0.0 && h.probe_fraction < 1.0)) {
        errors.push_back("evaluation.hopkins.probe_fraction must lie in (0, 1)");
    }
    if (h.probe_count < 0) errors.push_back("evaluation.hopkins.probe_count must be >= 0");
    if (h.repetitions < 1) errors.push_back("evaluation.hopkins.repetitions must be >= 1");
    if (h.projection_dims < 0) errors.push_back("evaluation.hopkins.projection_dims must be >= 0");
    return result;
}

}  // namespace

ConfigParse parse_run_config(const std::string& yaml_text, const std::vector<std::string>& overrides) {
    YAML::Node root;
    try {
        root = YAML::Load(yaml_text);
    } catch (const YAML::Exception& e) {
        ConfigParse bad;
        bad.errors.push_back("YAML syntax error at line " + std::to_string(e.mark.line + 1) + ": " + e.msg);
        return bad;
    }
    return parse_node(root, overrides);
}

ConfigParse parse_run_config_file(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) {
        ConfigParse bad;
        bad.errors.push_back("cannot read config file " + path.string());
        return bad;
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str(), overrides);
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    auto parsed = path.empty() ? parse_run_config("", overrides) : parse_run_config_file(path, overrides);
    if (!parsed.ok()) {
        std::string msg = "invalid config" + (path.empty() ? std::string() : " " + path.string()) + ":";
        for (const auto& e : parsed.errors) msg += "\n  " + e;
        throw ConfigError(msg);
    }
    return parsed.config;
}

std::string to_yaml(const RunConfig& c) {
    YAML::Emitter out;
    out.SetDoublePrecision(15);
    const auto& d = c.data;
    out << YAML::BeginMap;
    out << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "source" << YAML::Value << d.source;
    out << YAML::Key << "image_size" << YAML::Value << d.image_size;
    out << YAML::Key << "attributes" << YAML::Value << YAML::Flow << d.attributes;
    out << YAML::Key << "synthetic" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "shape_classes" << YAML::Value << d.synthetic.shape_classes;
    out << YAML::Key << "hue_classes" << YAML::Value << d.synthetic.hue_classes;
    out << YAML::Key << "brightness_classes" << YAML::Value << d.synthetic.brightness_classes;
    out << YAML::Key << "jitter" << YAML::Value << d.synthetic.jitter;
    out << YAML::Key << "count_per_combination" << YAML::Value << d.synthetic.count_per_combination;
    out << YAML::Key << "seed" << YAML::Value << d.synthetic.seed;
    out << YAML::EndMap;
    out << YAML::Key << "test_seed" << YAML::Value << d.test_seed;
    out << YAML::Key << "test_count_per_combination" << YAML::Value << d.test_count_per_combination;
    out << YAML::Key << "manifest" << YAML::Value << d.manifest;
    out << YAML::Key << "test_manifest" << YAML::Value << d.test_manifest;
    if (d.holdout) {
        out << YAML::Key << "holdout" << YAML::Value << YAML::BeginMap;
        out << YAML::Key << "attribute" << YAML::Value << d.holdout->attribute;
        out << YAML::Key << "values" << YAML::Value << YAML::Flow << d.holdout->values;
        out << YAML::EndMap;
    }
    out << YAML::EndMap;

    const auto& m = c.model;
    out << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "encoder_widths" << YAML::Value << YAML::Flow
        << std::vector<int64_t>(m.encoder_widths.begin(), m.encoder_widths.end());
    out << YAML::Key << "classifier_width" << YAML::Value << m.classifier_width;
    out << YAML::Key << "critic_width" << YAML::Value << m.critic_width;
    out << YAML::Key << "critic_max_width" << YAML::Value << m.critic_max_width;
    out << YAML::Key << "critic_layers" << YAML::Value << m.critic_layers;
    out << YAML::Key << "decoder_blocks" << YAML::Value << m.decoder_blocks;
    out << YAML::Key << "leaky_slope" << YAML::Value << m.leaky_slope;
    out << YAML::Key << "norm_eps" << YAML::Value << m.norm_eps;
    out << YAML::EndMap;

    const auto& w = c.train.weights;
    out << YAML::Key << "loss_weights" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "lambda_rec" << YAML::Value << w.lambda_rec;
    out << YAML::Key << "lambda_gp" << YAML::Value << w.lambda_gp;
    out << YAML::Key << "lambda_cls_x" << YAML::Value << w.lambda_cls_x;
    out << YAML::Key << "lambda_dis" << YAML::Value << w.lambda_dis;
    out << YAML::Key << "lambda_cls_synth" << YAML::Value << w.lambda_cls_synth;
    out << YAML::Key << "lambda_adv" << YAML::Value << w.lambda_adv;
    out << YAML::EndMap;

    const auto& o = c.train.optimizer;
    out << YAML::Key << "optimizer" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "name" << YAML::Value << o.name;
    out << YAML::Key << "learning_rate" << YAML::Value << o.learning_rate;
    out << YAML::Key << "beta1" << YAML::Value << o.beta1;
    out << YAML::Key << "beta2" << YAML::Value << o.beta2;
    out << YAML::EndMap;

    const auto& t = c.train;
    out << YAML::Key << "schedule" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "batch_size" << YAML::Value << t.batch_size;
    out << YAML::Key << "steps" << YAML::Value << t.steps;
    out << YAML::Key << "critic_steps_per_gen" << YAML::Value << t.critic_steps_per_gen;
    out << YAML::Key << "classifier_mode" << YAML::Value << key_of(kClassifierModes, t.classifier_mode);
    out << YAML::Key << "adversarial" << YAML::Value << key_of(kAdversarialModes, t.adversarial);
    out << YAML::Key << "shuffle" << YAML::Value << key_of(kShuffleModes, t.shuffle_mode);
    out << YAML::Key << "seed" << YAML::Value << t.seed;
    out << YAML::Key << "checkpoint_every" << YAML::Value << t.checkpoint_every;
    out << YAML::Key << "log_every" << YAML::Value << t.log_every;
    out << YAML::Key << "pretrain" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "steps" << YAML::Value << t.pretrain.steps;
    out << YAML::Key << "target_accuracy" << YAML::Value << t.pretrain.target_accuracy;
    out << YAML::Key << "eval_every" << YAML::Value << t.pretrain.eval_every;
    out << YAML::Key << "batch_size" << YAML::Value << t.pretrain.batch_size;
    out << YAML::Key << "learning_rate" << YAML::Value << t.pretrain.learning_rate;
    out << YAML::EndMap;
    out << YAML::EndMap;

    const auto& e = c.evaluation;
    out << YAML::Key << "evaluation" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "cluster_by" << YAML::Value << e.cluster_by;
    out << YAML::Key << "score_within" << YAML::Value << e.score_within;
    out << YAML::Key << "transfer_attribute" << YAML::Value << e.transfer_attribute;
    out << YAML::Key << "transfer_source" << YAML::Value << e.transfer_source;
    out << YAML::Key << "eval_classifier_seed" << YAML::Value << e.eval_classifier_seed;
    out << YAML::Key << "hopkins" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "probe_fraction" << YAML::Value << e.hopkins.probe_fraction;
    out << YAML::Key << "probe_count" << YAML::Value << e.hopkins.probe_count;
    out << YAML::Key << "repetitions" << YAML::Value << e.hopkins.repetitions;
    out << YAML::Key << "projection_dims" << YAML::Value << e.hopkins.projection_dims;
    out << YAML::Key << "seed" << YAML::Value << e.hopkins.seed;
    out << YAML::EndMap;
    out << YAML::EndMap;
    out << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

void write_resolved_config(const RunConfig& config, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << to_yaml(config);
}

DataSplits load_data(const DataConfig& config) {
    Dataset full;
    std::optional<Dataset> test;
    if (config.source == "synthetic") {
        auto syn = config.synthetic;
        syn.image_size = config.image_size;
        full = generate_synthetic(syn);
        if (!config.holdout) {
            syn.seed = config.test_seed;
            syn.count_per_combination = config.test_count_per_combination;
            test = generate_synthetic(syn);
        }
    } else {
        full = load_manifest(config.manifest, config.image_size);
        if (!config.test_manifest.empty()) {
            test = load_manifest(config.test_manifest, config.image_size, full.schema());
        }
    }
    DataSplits out;
    if (config.holdout) {
        std::set<int64_t> held(config.holdout->values.begin(), config.holdout->values.end());
        auto split = holdout_split(full, config.holdout->attribute, held);
        out.train = std::move(split.train);
        out.test = std::move(split.test);
    } else {
        out.train = std::move(full);
        if (test) out.test = std::move(*test);
    }
    if (!config.attributes.empty()) {
        try {
            out.train = out.train.select_attributes(config.attributes);
            if (out.test.schema().size() > 0) out.test = out.test.select_attributes(config.attributes);
        } catch (const ContractError& e) {
            throw ConfigError(std::string("data.attributes: ") + e.what());
        }
    }
    return out;
}

}  // namespace disent
