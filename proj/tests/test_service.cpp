#include <doctest.h>

#include <regex>

#include <httplib.h>

#include "disent/checkpoint.hpp"
#include "disent/image_io.hpp"
#include "disent/latent_ops.hpp"
#include "disent/service.hpp"
#include "helpers.hpp"

using namespace disent;
using namespace disent::testing;
using json = nlohmann::json;

namespace {

// Enough of draft-07 for the published schemas; the python tests run the full validator.
void conform(const json& v, const json& s, const std::string& at, std::vector<std::string>& errs) {
    if (s.contains("type")) {
        const auto t = s["type"].get<std::string>();
        const bool ok = (t == "object" && v.is_object()) || (t == "array" && v.is_array()) ||
                        (t == "string" && v.is_string()) || (t == "integer" && v.is_number_integer()) ||
                        (t == "number" && v.is_number()) || (t == "boolean" && v.is_boolean());
        if (!ok) {
            errs.push_back(at + ": expected " + t);
            return;
        }
    }
    if (v.is_number()) {
        if (s.contains("minimum") && v.get<double>() < s["minimum"].get<double>()) errs.push_back(at + ": < minimum");
        if (s.contains("maximum") && v.get<double>() > s["maximum"].get<double>()) errs.push_back(at + ": > maximum");
    }
    if (v.is_string() && s.contains("pattern") &&
        !std::regex_search(v.get<std::string>(), std::regex(s["pattern"].get<std::string>()))) {
        errs.push_back(at + ": pattern mismatch");
    }
    if (v.is_array()) {
        if (s.contains("minItems") && v.size() < s["minItems"].get<size_t>()) errs.push_back(at + ": too few items");
        if (s.contains("maxItems") && v.size() > s["maxItems"].get<size_t>()) errs.push_back(at + ": too many items");
        if (s.contains("items"))
            for (size_t i = 0; i < v.size(); ++i) conform(v[i], s["items"], at + "[" + std::to_string(i) + "]", errs);
    }
    if (v.is_object()) {
        if (s.contains("required"))
            for (const auto& r : s["required"])
                if (!v.contains(r.get<std::string>())) errs.push_back(at + ": missing " + r.get<std::string>());
        const json props = s.value("properties", json::object());
        for (const auto& [k, child] : v.items()) {
            if (props.contains(k)) {
                conform(child, props[k], at + "." + k, errs);
            } else if (s.contains("additionalProperties")) {
                const auto& ap = s["additionalProperties"];
                if (ap.is_boolean() && !ap.get<bool>()) errs.push_back(at + ": unexpected " + k);
                if (ap.is_object()) conform(child, ap, at + "." + k, errs);
            }
        }
    }
}

void check_conforms(const json& body, const std::string& schema_name) {
    const auto& schemas = published_schemas();
    REQUIRE(schemas.count(schema_name) == 1);
    std::vector<std::string> errs;
    conform(body, json::parse(schemas.at(schema_name)), "$", errs);
    INFO(schema_name << ": " << body.dump().substr(0, 300));
    CHECK(errs.empty());
    for (const auto& e : errs) MESSAGE(e);
}

struct Loaded {
    Service service;
    DisentangleModel model{nullptr};
    Dataset catalog;

    Loaded() {
        torch::manual_seed(3);
        SyntheticConfig sc;
        sc.image_size = 32;
        sc.count_per_combination = 1;
        sc.jitter = 1;
        catalog = generate_synthetic(sc).select_attributes({"shape", "hue"});
        auto cfg = small_config(32);
        model = DisentangleModel(catalog.schema(), cfg);
        model->eval();
        service.load(model, std::string(64, 'a'), catalog);
    }

    ServiceResponse post(const std::string& path, const json& body) { return service.handle("POST", path, {}, body.dump()); }
    ServiceResponse get(const std::string& path, std::map<std::string, std::string> q = {}) {
        return service.handle("GET", path, q, "");
    }
};

}  // namespace

TEST_SUITE("service") {

TEST_CASE("every endpoint is 503 before the model loads, except the spec") {
    Service s;
    for (const auto& [method, path] : std::vector<std::pair<std::string, std::string>>{
             {"GET", "/api/schema"}, {"GET", "/api/samples"}, {"POST", "/api/transfer"}, {"POST", "/api/mix"},
             {"POST", "/api/interpolate"}}) {
        const auto r = s.handle(method, path, {}, "{}");
        CHECK(r.status == 503);
        check_conforms(r.body, "error");
    }
    CHECK(s.handle("GET", "/api/spec", {}, "").status == 200);
    CHECK(s.handle("GET", "/api/nothing", {}, "").status == 404);
}

TEST_CASE("spec lists every endpoint and schema") {
    Service s;
    const auto r = s.handle("GET", "/api/spec", {}, "");
    CHECK(r.body["endpoints"].size() == 5);
    for (const auto& name : {"error", "schema_response", "samples_response", "transfer_request", "image_response",
                             "mix_request", "interpolate_request", "interpolate_response"}) {
        CHECK(r.body["schemas"].contains(name));
    }
}

TEST_CASE("schema endpoint describes the model") {
    Loaded l;
    const auto r = l.get("/api/schema");
    CHECK(r.status == 200);
    check_conforms(r.body, "schema_response");
    CHECK(r.body["attributes"][0]["name"] == "shape");
    CHECK(r.body["attributes"][1]["class_count"] == 6);
    CHECK(r.body["image_size"] == 32);
    CHECK(r.body["catalog_size"] == 18 * 3);
}

TEST_CASE("samples paginate and thumbnails decode at the image size") {
    Loaded l;
    auto r = l.get("/api/samples");
    CHECK(r.status == 200);
    check_conforms(r.body, "samples_response");
    CHECK(r.body["samples"].size() == 50);
    r = l.get("/api/samples", {{"limit", "0"}});
    CHECK(r.body["samples"].empty());
    r = l.get("/api/samples", {{"limit", "1000"}});
    CHECK(r.body["samples"].size() == 54);
    r = l.get("/api/samples", {{"limit", "10"}, {"offset", "50"}});
    CHECK(r.body["samples"].size() == 4);
    CHECK(r.body["samples"][0]["id"] == 50);
    const auto png = base64_decode(r.body["samples"][0]["thumbnail"].get<std::string>());
    const auto img = decode_png(png);
    CHECK(img.sizes() == torch::IntArrayRef({3, 32, 32}));
    CHECK(l.get("/api/samples", {{"limit", "-1"}}).status == 400);
    CHECK(l.get("/api/samples", {{"offset", "x"}}).status == 400);
}

TEST_CASE("transfer returns an image and per-attribute posteriors") {
    Loaded l;
    const auto r = l.post("/api/transfer", {{"source_id", 0}, {"donors", {{"hue", 7}}}, {"attributes", {"hue"}}});
    REQUIRE(r.status == 200);
    check_conforms(r.body, "image_response");
    CHECK(r.body["predicted"]["hue"].size() == 6);
    double sum = 0;
    for (const auto& p : r.body["predicted"]["shape"]) sum += p.get<double>();
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    const auto expected = swap(l.model, {l.catalog.images()[0], {{2, l.catalog.images()[7]}}, {2}});
    CHECK(r.body["image"] == base64_encode(encode_png(expected)));
}

TEST_CASE("transfer validation") {
    Loaded l;
    CHECK(l.service.handle("POST", "/api/transfer", {}, "{not json").status == 400);
    CHECK(l.post("/api/transfer", {{"source_id", 0}, {"donors", {{"hue", 1}}}, {"attributes", json::array()}}).status ==
          422);
    auto r = l.post("/api/transfer", {{"source_id", 0}, {"donors", {{"colour", 1}}}, {"attributes", {"colour"}}});
    CHECK(r.status == 422);
    CHECK(r.body["error"]["field"] == "attributes");
    r = l.post("/api/transfer", {{"source_id", 0}, {"donors", {{"hue", 1}}}, {"attributes", {"hue"}}, {"extra", 1}});
    CHECK(r.status == 422);
    CHECK(r.body["error"]["field"] == "extra");
    CHECK(l.post("/api/transfer", {{"source_id", 999}, {"donors", {{"hue", 1}}}, {"attributes", {"hue"}}}).status ==
          404);
    check_conforms(r.body, "error");
}

TEST_CASE("mix with a single unit weight equals the transfer of that component") {
    Loaded l;
    const auto mixed = l.post("/api/mix", {{"attribute", "hue"}, {"components", {{{"id", 9}, {"weight", 1.0}}}}, {"base_id", 2}});
    REQUIRE(mixed.status == 200);
    check_conforms(mixed.body, "image_response");
    const auto moved = l.post("/api/transfer", {{"source_id", 2}, {"donors", {{"hue", 9}}}, {"attributes", {"hue"}}});
    CHECK(mixed.body["image"] == moved.body["image"]);
}

TEST_CASE("mix weights must be non-negative and sum to one") {
    Loaded l;
    auto comps = json::array({{{"id", 1}, {"weight", 0.5}}, {{"id", 2}, {"weight", 0.5}}, {{"id", 3}, {"weight", 0.1}}});
    CHECK(l.post("/api/mix", {{"attribute", "hue"}, {"components", comps}}).status == 422);
    comps = json::array({{{"id", 1}, {"weight", 1.5}}, {{"id", 2}, {"weight", -0.5}}});
    CHECK(l.post("/api/mix", {{"attribute", "hue"}, {"components", comps}}).status == 422);
    const double third = 1.0 / 3.0;
    comps = json::array({{{"id", 1}, {"weight", third}}, {{"id", 2}, {"weight", third}}, {{"id", 3}, {"weight", third}}});
    CHECK(l.post("/api/mix", {{"attribute", "shape"}, {"components", comps}}).status == 200);
    CHECK(l.post("/api/mix", {{"attribute", "shape"}, {"components", json::array()}}).status == 422);
}

TEST_CASE("interpolate returns steps frames with endpoint alphas") {
    Loaded l;
    auto r = l.post("/api/interpolate", {{"attribute", "hue"}, {"id_i", 3}, {"id_j", 4}, {"steps", 2}});
    REQUIRE(r.status == 200);
    check_conforms(r.body, "interpolate_response");
    CHECK(r.body["images"].size() == 2);
    CHECK(r.body["alphas"] == json::array({0.0, 1.0}));
    r = l.post("/api/interpolate", {{"attribute", "hue"}, {"id_i", 3}, {"id_j", 4}});
    CHECK(r.body["images"].size() == 8);
    // Same hue label at both ends is allowed.
    CHECK(l.post("/api/interpolate", {{"attribute", "hue"}, {"id_i", 0}, {"id_j", 3}}).status == 200);
    r = l.post("/api/interpolate", {{"attribute", "hue"}, {"id_i", 3}, {"id_j", 4}, {"steps", 33}});
    CHECK(r.status == 422);
    CHECK(r.body["error"]["field"] == "steps");
    CHECK(l.post("/api/interpolate", {{"attribute", "hue"}, {"id_i", 3}, {"id_j", 4}, {"steps", 1}}).status == 422);
}

TEST_CASE("request counters track each route") {
    Loaded l;
    l.get("/api/schema");
    l.get("/api/schema");
    l.get("/api/samples");
    const auto c = l.service.request_counts();
    CHECK(c.at("GET /api/schema") == 2);
    CHECK(c.at("GET /api/samples") == 1);
}

TEST_CASE("loading from a checkpoint directory stamps its hash") {
    TempDir tmp("svc");
    Loaded l;
    const auto hash = save_model(l.model, tmp / "ck");
    Service s;
    s.load(tmp / "ck", l.catalog);
    CHECK(s.handle("GET", "/api/schema", {}, "").body["checkpoint_hash"] == hash);
}

TEST_CASE("HTTP round trip on an ephemeral port") {
    Loaded l;
    const int port = l.service.start("127.0.0.1", 0);
    REQUIRE(port > 0);
    httplib::Client client("127.0.0.1", port);
    auto res = client.Get("/api/schema");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(json::parse(res->body)["image_size"] == 32);
    res = client.Get("/api/samples?limit=2&offset=1");
    REQUIRE(res);
    CHECK(json::parse(res->body)["samples"][0]["id"] == 1);
    res = client.Post("/api/mix", R"({"attribute":"hue","components":[{"id":1,"weight":0.7}]})", "application/json");
    REQUIRE(res);
    CHECK(res->status == 422);
    res = client.Get("/api/unknown");
    REQUIRE(res);
    CHECK(res->status == 404);
    l.service.stop();
}

}  // TEST_SUITE
