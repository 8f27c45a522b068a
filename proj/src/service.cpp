#include "disent/service.hpp"

#include <chrono>
#include <cmath>

#include <httplib.h>

#include "disent/checkpoint.hpp"
#include "disent/errors.hpp"
#include "disent/image_io.hpp"
#include "disent/latent_ops.hpp"

namespace disent {

using nlohmann::json;

namespace {

constexpr int64_t kDefaultPageSize = 50;
constexpr int64_t kMaxSteps = 32;

/// A request problem mapped to an HTTP status.
struct HttpError {
    int status;
    std::string message;
    std::string field;
};

ServiceResponse error_response(const HttpError& e) {
    json err{{"status", e.status}, {"message", e.message}};
    if (!e.field.empty()) err["field"] = e.field;
    return {e.status, json{{"error", err}}};
}

int64_t require_int(const json& body, const std::string& key) {
    if (!body.contains(key)) throw HttpError{422, "missing field '" + key + "'", key};
    const auto& v = body.at(key);
    if (!v.is_number_integer()) throw HttpError{422, "field '" + key + "' must be an integer", key};
    return v.get<int64_t>();
}

std::string require_string(const json& body, const std::string& key) {
    if (!body.contains(key)) throw HttpError{422, "missing field '" + key + "'", key};
    const auto& v = body.at(key);
    if (!v.is_string()) throw HttpError{422, "field '" + key + "' must be a string", key};
    return v.get<std::string>();
}

void reject_unknown(const json& body, std::initializer_list<const char*> allowed) {
    for (const auto& [key, value] : body.items()) {
        bool ok = false;
        for (const auto* a : allowed) ok = ok || key == a;
        if (!ok) throw HttpError{422, "unknown field '" + key + "'", key};
    }
}

int64_t parse_query_int(const std::map<std::string, std::string>& query, const std::string& key, int64_t fallback) {
    auto it = query.find(key);
    if (it == query.end()) return fallback;
    const auto& s = it->second;
    size_t used = 0;
    int64_t v = 0;
    try {
        v = std::stoll(s, &used);
    } catch (const std::exception&) {
        throw HttpError{400, "query parameter '" + key + "' must be a non-negative integer", key};
    }
    if (used != s.size() || v < 0) {
        throw HttpError{400, "query parameter '" + key + "' must be a non-negative integer", key};
    }
    return v;
}

std::string png_base64(const torch::Tensor& image) { return base64_encode(encode_png(image)); }

}  // namespace

Service::Service() = default;

Service::~Service() { stop(); }

void Service::load(DisentangleModel model, std::string checkpoint_hash, Dataset catalog) {
    std::vector<std::string> names;
    for (const auto& a : model->schema().attributes()) names.push_back(a.name);
    if (!(catalog.schema() == model->schema())) catalog = catalog.select_attributes(names);
    if (catalog.size() > 0 && catalog.image_size() != model->config().image_size) {
        throw ContractError("catalog image size " + std::to_string(catalog.image_size()) +
                            " differs from the model image size " + std::to_string(model->config().image_size));
    }
    model->eval();
    {
        std::lock_guard lock(model_mutex_);
        model_ = std::move(model);
        hash_ = std::move(checkpoint_hash);
        catalog_ = std::move(catalog);
    }
    loaded_ = true;
}

void Service::load(const std::filesystem::path& checkpoint, Dataset catalog) {
    auto model = load_model(checkpoint);
    load(std::move(model), checkpoint_hash(checkpoint), std::move(catalog));
}

std::map<std::string, int64_t> Service::request_counts() const {
    std::lock_guard lock(count_mutex_);
    return counts_;
}

ServiceResponse Service::handle(const std::string& method, const std::string& path,
                                const std::map<std::string, std::string>& query, const std::string& body) {
    {
        std::lock_guard lock(count_mutex_);
        ++counts_[method + " " + path];
    }
    try {
        if (method == "GET" && path == "/api/spec") return get_spec();
        const bool known = (method == "GET" && (path == "/api/schema" || path == "/api/samples")) ||
                           (method == "POST" && (path == "/api/transfer" || path == "/api/mix" ||
                                                 path == "/api/interpolate"));
        if (!known) throw HttpError{404, "no route for " + method + " " + path, ""};
        if (!loaded_) throw HttpError{503, "model is still loading", ""};
        if (path == "/api/schema") return get_schema();
        if (path == "/api/samples") return get_samples(query);

        json parsed;
        try {
            parsed = json::parse(body);
        } catch (const json::parse_error& e) {
            throw HttpError{400, std::string("malformed JSON body: ") + e.what(), ""};
        }
        if (!parsed.is_object()) throw HttpError{400, "request body must be a JSON object", ""};
        if (path == "/api/transfer") return post_transfer(parsed);
        if (path == "/api/mix") return post_mix(parsed);
        return post_interpolate(parsed);
    } catch (const HttpError& e) {
        return error_response(e);
    } catch (const ContractError& e) {
        return error_response({422, e.what(), ""});
    } catch (const std::exception& e) {
        return error_response({500, e.what(), ""});
    }
}

torch::Tensor Service::catalog_image(int64_t id) const {
    if (id < 0 || id >= catalog_.size()) {
        throw HttpError{404, "unknown sample id " + std::to_string(id), ""};
    }
    return catalog_.images()[id];
}

json Service::predictions(const torch::Tensor& image) {
    json out = json::object();
    const auto bank = model_->classifiers();
    const auto dtype = model_->parameters().front().scalar_type();
    const auto x = image.unsqueeze(0).to(dtype);
    for (int64_t m = 1; m <= model_->attribute_count(); ++m) {
        auto pmf = classify_image(bank, x, m)[0].to(torch::kFloat64).contiguous();
        out[model_->schema().at(m - 1).name] =
            std::vector<double>(pmf.data_ptr<double>(), pmf.data_ptr<double>() + pmf.numel());
    }
    return out;
}

ServiceResponse Service::get_schema() const {
    const auto& cfg = model_->config();
    json attrs = json::array();
    for (const auto& a : model_->schema().attributes()) {
        attrs.push_back({{"name", a.name}, {"class_count", a.class_count}, {"values", a.values}});
    }
    return {200,
            {{"attributes", attrs},
             {"image_size", cfg.image_size},
             {"checkpoint_hash", hash_},
             {"code_shape", {cfg.code_channels(), cfg.code_size(), cfg.code_size()}},
             {"catalog_size", catalog_.size()}}};
}

ServiceResponse Service::get_samples(const std::map<std::string, std::string>& query) const {
    const auto limit = parse_query_int(query, "limit", kDefaultPageSize);
    const auto offset = parse_query_int(query, "offset", 0);
    const auto total = catalog_.size();
    json samples = json::array();
    const auto& schema = catalog_.schema();
    for (int64_t i = offset; i < std::min(total, offset + limit); ++i) {
        const auto row = catalog_.labels()[i];
        json labels = json::object(), indices = json::object();
        for (int64_t a = 0; a < schema.size(); ++a) {
            const auto k = row[a].item<int64_t>();
            const auto& attr = schema.at(a);
            labels[attr.name] = static_cast<size_t>(k) < attr.values.size() ? attr.values[static_cast<size_t>(k)]
                                                                             : std::to_string(k);
            indices[attr.name] = k;
        }
        samples.push_back(
            {{"id", i}, {"labels", labels}, {"label_indices", indices}, {"thumbnail", png_base64(catalog_.images()[i])}});
    }
    return {200, {{"total", total}, {"offset", offset}, {"limit", limit}, {"samples", samples}}};
}

ServiceResponse Service::post_transfer(const json& body) {
    reject_unknown(body, {"source_id", "donors", "attributes"});
    const auto source_id = require_int(body, "source_id");
    if (!body.contains("attributes") || !body["attributes"].is_array()) {
        throw HttpError{422, "field 'attributes' must be a list of attribute names", "attributes"};
    }
    if (body["attributes"].empty()) throw HttpError{422, "attribute set must be nonempty", "attributes"};
    if (!body.contains("donors") || !body["donors"].is_object()) {
        throw HttpError{422, "field 'donors' must map attribute names to sample ids", "donors"};
    }
    const auto& schema = model_->schema();
    SwapRequest req;
    req.source = catalog_image(source_id);
    for (const auto& a : body["attributes"]) {
        if (!a.is_string()) throw HttpError{422, "attribute names must be strings", "attributes"};
        const auto name = a.get<std::string>();
        auto pos = schema.find(name);
        if (!pos) throw HttpError{422, "unknown attribute '" + name + "'", "attributes"};
        const auto m = *pos + 1;
        if (req.attributes.count(m)) throw HttpError{422, "attribute '" + name + "' listed twice", "attributes"};
        if (!body["donors"].contains(name)) throw HttpError{422, "no donor for attribute '" + name + "'", "donors"};
        const auto& d = body["donors"][name];
        if (!d.is_number_integer()) throw HttpError{422, "donor id for '" + name + "' must be an integer", "donors"};
        req.attributes.insert(m);
        req.donors[m] = catalog_image(d.get<int64_t>());
    }
    for (const auto& [name, id] : body["donors"].items()) {
        if (!schema.find(name)) throw HttpError{422, "unknown attribute '" + name + "' in donors", "donors"};
    }
    std::lock_guard lock(model_mutex_);
    auto out = swap(model_, req).to(torch::kFloat32);
    return {200, {{"image", png_base64(out)}, {"predicted", predictions(out)}}};
}

ServiceResponse Service::post_mix(const json& body) {
    reject_unknown(body, {"attribute", "components", "base_id"});
    const auto name = require_string(body, "attribute");
    auto pos = model_->schema().find(name);
    if (!pos) throw HttpError{422, "unknown attribute '" + name + "'", "attribute"};
    if (!body.contains("components") || !body["components"].is_array() || body["components"].empty()) {
        throw HttpError{422, "field 'components' must be a nonempty list", "components"};
    }
    MixRequest req;
    req.attribute = *pos + 1;
    double sum = 0.0;
    for (const auto& c : body["components"]) {
        if (!c.is_object()) throw HttpError{422, "each component must be an object", "components"};
        reject_unknown(c, {"id", "weight"});
        const auto id = require_int(c, "id");
        if (!c.contains("weight") || !c["weight"].is_number()) {
            throw HttpError{422, "component weight must be a number", "components"};
        }
        const auto w = c["weight"].get<double>();
        if (!std::isfinite(w) || w < 0.0) {
            throw HttpError{422, "component weights must be non-negative", "components"};
        }
        sum += w;
        req.components.push_back({catalog_image(id), w});
    }
    if (std::fabs(sum - 1.0) > 1e-6) {
        throw HttpError{422, "component weights must sum to 1 within 1e-6 (sum is " + std::to_string(sum) + ")",
                        "components"};
    }
    if (body.contains("base_id")) req.base = catalog_image(require_int(body, "base_id"));
    std::lock_guard lock(model_mutex_);
    auto out = mix(model_, req).to(torch::kFloat32);
    return {200, {{"image", png_base64(out)}, {"predicted", predictions(out)}}};
}

ServiceResponse Service::post_interpolate(const json& body) {
    reject_unknown(body, {"attribute", "id_i", "id_j", "steps", "base_id"});
    const auto name = require_string(body, "attribute");
    auto pos = model_->schema().find(name);
    if (!pos) throw HttpError{422, "unknown attribute '" + name + "'", "attribute"};
    int64_t steps = kDefaultInterpolationSteps;
    if (body.contains("steps")) steps = require_int(body, "steps");
    if (steps < 2 || steps > kMaxSteps) {
        throw HttpError{422, "steps must lie in [2, " + std::to_string(kMaxSteps) + "] (got " + std::to_string(steps) + ")",
                        "steps"};
    }
    const auto xi = catalog_image(require_int(body, "id_i"));
    const auto xj = catalog_image(require_int(body, "id_j"));
    std::optional<torch::Tensor> base;
    if (body.contains("base_id")) base = catalog_image(require_int(body, "base_id"));
    std::lock_guard lock(model_mutex_);
    const auto frames = interpolate(model_, *pos + 1, xi, xj, steps, base);
    json images = json::array(), alphas = json::array();
    for (int64_t k = 0; k < steps; ++k) {
        images.push_back(png_base64(frames[static_cast<size_t>(k)].to(torch::kFloat32)));
        alphas.push_back(static_cast<double>(k) / static_cast<double>(steps - 1));
    }
    return {200, {{"images", images}, {"alphas", alphas}}};
}

ServiceResponse Service::get_spec() const {
    json schemas = json::object();
    for (const auto& [name, text] : published_schemas()) schemas[name] = json::parse(text);
    json endpoints = json::array({
        {{"method", "GET"}, {"path", "/api/schema"}, {"response", "schema_response"}},
        {{"method", "GET"}, {"path", "/api/samples"}, {"query", {"limit", "offset"}}, {"response", "samples_response"}},
        {{"method", "POST"}, {"path", "/api/transfer"}, {"request", "transfer_request"}, {"response", "image_response"}},
        {{"method", "POST"}, {"path", "/api/mix"}, {"request", "mix_request"}, {"response", "image_response"}},
        {{"method", "POST"},
         {"path", "/api/interpolate"},
         {"request", "interpolate_request"},
         {"response", "interpolate_response"}},
    });
    return {200, {{"endpoints", endpoints}, {"schemas", schemas}, {"error", "error"}}};
}

int Service::start(const std::string& host, int port) {
    if (server_) throw ContractError("service already started");
    server_ = std::make_unique<httplib::Server>();
    auto route = [this](const httplib::Request& req, httplib::Response& res) {
        std::map<std::string, std::string> query;
        for (const auto& [k, v] : req.params) query[k] = v;
        auto out = handle(req.method, req.path, query, req.body);
        res.status = out.status;
        res.set_content(out.body.dump(), "application/json");
    };
    server_->Get(R"(/api/.*)", route);
    server_->Post(R"(/api/.*)", route);
    int bound = port;
    if (port == 0) {
        bound = server_->bind_to_any_port(host);
    } else if (!server_->bind_to_port(host, port)) {
        bound = -1;
    }
    if (bound < 0) {
        server_.reset();
        throw Error("cannot bind " + host + ":" + std::to_string(port));
    }
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return bound;
}

void Service::wait() {
    while (server_ && server_->is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(200));
}

void Service::stop() {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
    server_.reset();
}

}  // namespace disent
