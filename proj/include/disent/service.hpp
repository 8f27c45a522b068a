#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "disent/data.hpp"
#include "disent/model.hpp"

namespace httplib {
class Server;
}

namespace disent {

/// name -> JSON schema text for every request/response body.
const std::map<std::string, std::string>& published_schemas();

struct ServiceResponse {
    int status = 200;
    nlohmann::json body;
};

/// Inference over a read-only model and a fixed sample catalog. Handlers are
/// independent of the HTTP layer so they can be driven directly in tests.
class Service {
public:
    Service();
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Installs the model and catalog; until then every model endpoint is 503.
    void load(DisentangleModel model, std::string checkpoint_hash, Dataset catalog);
    void load(const std::filesystem::path& checkpoint, Dataset catalog);
    bool loaded() const noexcept { return loaded_.load(); }

    ServiceResponse handle(const std::string& method, const std::string& path,
                           const std::map<std::string, std::string>& query, const std::string& body);

    std::map<std::string, int64_t> request_counts() const;

    /// Binds and serves on a background thread; returns the bound port
    /// (pass 0 for an ephemeral one).
    int start(const std::string& host, int port);
    /// Blocks until stop() is called from another thread or a signal handler.
    void wait();
    void stop();

private:
    ServiceResponse get_schema() const;
    ServiceResponse get_samples(const std::map<std::string, std::string>& query) const;
    ServiceResponse post_transfer(const nlohmann::json& body);
    ServiceResponse post_mix(const nlohmann::json& body);
    ServiceResponse post_interpolate(const nlohmann::json& body);
    ServiceResponse get_spec() const;

    torch::Tensor catalog_image(int64_t id) const;
    nlohmann::json predictions(const torch::Tensor& image);

    DisentangleModel model_{nullptr};
    std::string hash_;
    Dataset catalog_;
    std::atomic<bool> loaded_{false};
    mutable std::mutex model_mutex_;  // serializes substrate calls
    mutable std::mutex count_mutex_;
    std::map<std::string, int64_t> counts_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
};

}  // namespace disent
